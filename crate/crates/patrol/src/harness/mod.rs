//! Evaluation harness: greedy episode rollouts for every policy, the four
//! benchmark metrics, GP regression for field-reconstruction error, and
//! benchmark aggregation with CSV artifacts.

pub mod config;

use std::sync::Arc;

use rayon::prelude::*;

use crate::agent::{censor, greedy_argmax};
use crate::baselines::{Planner, PlannerState, COVERAGE_THRESHOLD};
use crate::env::{EnvConfig, PatrolEnv};
use crate::error::{Error, Result};
use crate::info_field::{sample_covariance, rbf, uncertainty_channel, KernelConfig, SampleSet};
use crate::linalg;
use crate::nav_map::{NavMap, Position};
use crate::neural::{forward, NoiseDraw, QNetworkParams};

/// Steps of the initial transient excluded from the dynamic I statistic
/// (the distance budget of a static mission).
pub const DYNAMIC_TRANSIENT_STEPS: usize = 67;
/// GP estimation horizon for temporal regression.
pub const GP_HORIZON: usize = 67;

/// A policy under evaluation. DRL runs fully greedy: zeroed noise, no ε.
pub enum Policy {
    Drl {
        params: QNetworkParams,
        censoring: bool,
    },
    Classical(Planner),
}

/// Everything needed to recompute every metric offline.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub policy: String,
    pub seed: u64,
    pub dynamic: bool,
    pub cell_size: f64,
    /// Agent positions; length == steps + 1.
    pub positions: Vec<Position>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Remaining information I_t; length == steps + 1.
    pub i_series: Vec<f64>,
    /// Final per-water-cell posterior std, in water_cells order.
    pub final_sigma: Vec<f64>,
    /// One flag per ground-truth peak; see metric_peak_detection.
    pub peak_detected: Vec<bool>,
    pub eligible_peaks: usize,
    pub samples: SampleSet,
    pub sample_values: Vec<f64>,
    /// Ground truth over water cells at episode end.
    pub truth: Vec<f64>,
    pub kernel: KernelConfig,
}

/// Full greedy rollout of `policy` on a fresh environment.
pub fn run_episode(
    policy: &Policy,
    base_cfg: &EnvConfig,
    policy_name: &str,
    seed: u64,
) -> Result<EpisodeRecord> {
    let mut cfg = base_cfg.clone();
    cfg.seed = seed;
    let map = Arc::clone(&cfg.map);

    if let Policy::Drl { params, .. } = policy {
        if params.config.in_height != map.height || params.config.in_width != map.width {
            return Err(Error::Shape(format!(
                "checkpoint expects {}x{} input, map is {}x{}",
                params.config.in_height, params.config.in_width, map.height, map.width
            )));
        }
    }

    let (mut env, mut state) = PatrolEnv::reset(cfg.clone())?;
    let mut planner = match policy {
        Policy::Classical(kind) => Some(PlannerState::new(*kind, cfg.d_meas, seed.wrapping_add(1))),
        Policy::Drl { .. } => None,
    };
    let zero_noise = match policy {
        Policy::Drl { params, .. } => Some(NoiseDraw::zeros(&params.layout)),
        Policy::Classical(_) => None,
    };

    let n_peaks = env.ground_truth().num_peaks();
    let mut peak_detected = vec![false; n_peaks];
    let mut peak_eligible = vec![false; n_peaks];
    let note_peaks = |env: &PatrolEnv, det: &mut Vec<bool>, elig: &mut Vec<bool>| {
        let sigma = &env.covariance().sigma;
        for (k, p) in env.ground_truth().peak_locations().iter().enumerate() {
            let Some(cell) = env.cfg.map.cell_at(p) else {
                continue;
            };
            let Some(ord) = env.cfg.map.water_ordinal(cell) else {
                continue;
            };
            elig[k] = true;
            if sigma[ord] < COVERAGE_THRESHOLD {
                det[k] = true;
            }
        }
    };

    let mut record = EpisodeRecord {
        policy: policy_name.to_string(),
        seed,
        dynamic: cfg.dynamic,
        cell_size: map.cell_size,
        positions: vec![env.position()],
        actions: Vec::new(),
        rewards: Vec::new(),
        i_series: vec![env.information_remaining()],
        final_sigma: Vec::new(),
        peak_detected: Vec::new(),
        eligible_peaks: 0,
        samples: SampleSet::new(),
        sample_values: Vec::new(),
        truth: Vec::new(),
        kernel: cfg.kernel,
    };

    if cfg.dynamic {
        note_peaks(&env, &mut peak_detected, &mut peak_eligible);
    }

    while !env.is_done() {
        let action = match policy {
            Policy::Drl { params, censoring } => {
                let q = forward(params, &state, zero_noise.as_ref().unwrap());
                let mask = env.action_mask();
                let q = if *censoring { censor(&q, &mask)? } else { q };
                greedy_argmax(&q)
            }
            Policy::Classical(_) => {
                let raster = uncertainty_channel(env.covariance());
                planner
                    .as_mut()
                    .unwrap()
                    .step(&map, &env.position(), &raster)
            }
        };
        let result = env.step(action)?;
        record.actions.push(action);
        record.rewards.push(result.reward);
        record.positions.push(result.info.position);
        record.i_series.push(result.info.i_t);
        state = result.state;
        if cfg.dynamic {
            note_peaks(&env, &mut peak_detected, &mut peak_eligible);
        }
    }

    record.final_sigma = env.covariance().sigma.clone();
    if !cfg.dynamic {
        // Static fields: sigma is non-increasing, so the final map decides.
        note_peaks(&env, &mut peak_detected, &mut peak_eligible);
    }
    record.eligible_peaks = peak_eligible.iter().filter(|&&e| e).count();
    record.peak_detected = peak_detected
        .iter()
        .zip(&peak_eligible)
        .filter(|(_, &e)| e)
        .map(|(&d, _)| d)
        .collect();

    let (samples, values) = env.samples();
    record.samples = samples.clone();
    record.sample_values = values.to_vec();
    record.truth = map
        .water_cells()
        .iter()
        .map(|&c| env.ground_truth().evaluate(&map.cell_center(c)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(record)
}

/// Static missions: final remaining information I_T. Dynamic missions:
/// mean I_t over the steps after the initial 67-step transient.
pub fn metric_information(record: &EpisodeRecord, dynamic: bool) -> Result<f64> {
    if !dynamic {
        return Ok(*record.i_series.last().expect("non-empty series"));
    }
    if record.i_series.len() <= DYNAMIC_TRANSIENT_STEPS + 1 {
        return Err(Error::Shape(format!(
            "dynamic record has {} steps, needs more than {}",
            record.i_series.len() - 1,
            DYNAMIC_TRANSIENT_STEPS
        )));
    }
    let tail = &record.i_series[DYNAMIC_TRANSIENT_STEPS + 1..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Covered area in km²: water cells whose final sigma is below threshold.
pub fn metric_coverage(record: &EpisodeRecord) -> f64 {
    let covered = record
        .final_sigma
        .iter()
        .filter(|&&s| s < COVERAGE_THRESHOLD)
        .count();
    covered as f64 * record.cell_size * record.cell_size
}

/// Fraction of eligible peaks whose location was covered.
pub fn metric_peak_detection(record: &EpisodeRecord) -> Result<f64> {
    if record.eligible_peaks == 0 {
        return Err(Error::Config("no peak lies on a navigable cell".into()));
    }
    let detected = record.peak_detected.iter().filter(|&&d| d).count();
    Ok(detected as f64 / record.eligible_peaks as f64)
}

/// GP posterior mean over water cells. Temporal mode keeps only the most
/// recent `horizon` samples and ages the sample covariance diagonal.
pub fn gp_regress(
    map: &Arc<NavMap>,
    samples: &SampleSet,
    values: &[f64],
    kernel: &KernelConfig,
    temporal: bool,
    horizon: usize,
    t: u32,
) -> Result<Vec<f64>> {
    assert_eq!(samples.len(), values.len());
    if samples.is_empty() {
        return Err(Error::Config("GP regression needs at least one sample".into()));
    }
    let (samples, values) = if temporal && samples.len() > horizon {
        (
            samples.truncated_to_recent(horizon),
            values[values.len() - horizon..].to_vec(),
        )
    } else {
        (samples.clone(), values.to_vec())
    };
    let mut kernel = *kernel;
    if !temporal {
        kernel.tau = 0.0;
    }
    let k_mm = sample_covariance(&samples, &kernel, t)?;
    let l = linalg::cholesky(&k_mm).ok_or(Error::SingularCovariance)?;
    let alpha = linalg::cholesky_solve(&l, &values);
    let mut pred = Vec::with_capacity(map.num_water_cells());
    for &cell in map.water_cells() {
        let center = map.cell_center(cell);
        let mean: f64 = samples
            .positions()
            .iter()
            .zip(&alpha)
            .map(|(p, a)| rbf(&center, p, kernel.lengthscale) * a)
            .sum();
        pred.push(mean);
    }
    Ok(pred)
}

/// Mean squared error over water cells.
pub fn metric_mse(predicted: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(predicted.len(), truth.len());
    predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / predicted.len() as f64
}

/// GP reconstruction error of a finished episode.
pub fn record_mse(record: &EpisodeRecord, map: &Arc<NavMap>) -> Result<f64> {
    let t = *record.samples.times().iter().max().unwrap_or(&0);
    let pred = gp_regress(
        map,
        &record.samples,
        &record.sample_values,
        &record.kernel,
        record.dynamic,
        GP_HORIZON,
        t,
    )?;
    Ok(metric_mse(&pred, &record.truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub algorithm: String,
    pub episodes: usize,
    pub i_mean: f64,
    pub i_std: f64,
    pub coverage_mean: f64,
    pub coverage_std: f64,
    pub xi_mean: f64,
    pub xi_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// Population mean and std (N divisor).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub struct BenchmarkResult {
    pub rows: Vec<MetricsRow>,
    pub records: Vec<EpisodeRecord>,
}

/// Runs `episodes` missions per policy from seeded starting points
/// (seed base_seed + episode index, shared across policies) and aggregates
/// the four metrics. Episodes run in parallel; output order is fixed.
pub fn run_benchmark(
    policies: &[(String, Policy)],
    env_cfg: &EnvConfig,
    episodes: usize,
    base_seed: u64,
) -> Result<BenchmarkResult> {
    let jobs: Vec<(usize, u64)> = (0..policies.len())
        .flat_map(|p| (0..episodes).map(move |e| (p, base_seed + e as u64)))
        .collect();
    let records: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let (name, policy) = &policies[p];
            run_episode(policy, env_cfg, name, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let map = &env_cfg.map;
    let mut rows = Vec::with_capacity(policies.len());
    for (p, (name, _)) in policies.iter().enumerate() {
        let slice = &records[p * episodes..(p + 1) * episodes];
        let mut info = Vec::new();
        let mut cov = Vec::new();
        let mut xi = Vec::new();
        let mut mse = Vec::new();
        for r in slice {
            info.push(metric_information(r, env_cfg.dynamic)?);
            cov.push(metric_coverage(r));
            xi.push(metric_peak_detection(r)?);
            mse.push(record_mse(r, map)?);
        }
        let (i_mean, i_std) = mean_std(&info);
        let (coverage_mean, coverage_std) = mean_std(&cov);
        let (xi_mean, xi_std) = mean_std(&xi);
        let (mse_mean, mse_std) = mean_std(&mse);
        rows.push(MetricsRow {
            algorithm: name.clone(),
            episodes,
            i_mean,
            i_std,
            coverage_mean,
            coverage_std,
            xi_mean,
            xi_std,
            mse_mean,
            mse_std,
        });
    }
    Ok(BenchmarkResult { rows, records })
}

pub fn summary_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(
        "algorithm,episodes,I_mean,I_std,A_mean,A_std,xi_mean,xi_std,mse_mean,mse_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.episodes,
            r.i_mean,
            r.i_std,
            r.coverage_mean,
            r.coverage_std,
            r.xi_mean,
            r.xi_std,
            r.mse_mean,
            r.mse_std
        ));
    }
    out
}

/// Per-step trace: step, I_t, reward, x, y, a. Step 0 is the initial state
/// and has no reward or action.
pub fn series_csv(record: &EpisodeRecord) -> String {
    let mut out = String::from("step,I_t,reward,x,y,a\n");
    out.push_str(&format!(
        "0,{},,{},{},\n",
        record.i_series[0], record.positions[0].x, record.positions[0].y
    ));
    for i in 0..record.actions.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i + 1,
            record.i_series[i + 1],
            record.rewards[i],
            record.positions[i + 1].x,
            record.positions[i + 1].y,
            record.actions[i]
        ));
    }
    out
}

/// Resolves a policy name: a classical planner keyword or a checkpoint path.
pub fn resolve_policy(name: &str) -> Result<Policy> {
    match name {
        "random" => Ok(Policy::Classical(Planner::Random)),
        "lawnmower" => Ok(Policy::Classical(Planner::LawnMower)),
        "nrrc" => Ok(Policy::Classical(Planner::Nrrc)),
        "igreedy" => Ok(Policy::Classical(Planner::IGreedy)),
        path => {
            let params = crate::neural::load_checkpoint(std::path::Path::new(path))?;
            Ok(Policy::Drl {
                params,
                censoring: true,
            })
        }
    }
}
