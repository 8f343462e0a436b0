//! The patrolling decision process: compass moves over the navigability
//! raster, one field sample per effective move, covariance reconditioning,
//! and the information-gain reward.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::ground_truth::GroundTruth;
use crate::info_field::{
    condition, information, uncertainty_channel, CovarianceState, IncrementalConditioner,
    KernelConfig, SampleSet,
};
use crate::nav_map::{
    is_segment_navigable, move_endpoint, valid_action_mask, ActionMask, NavMap, Position,
};

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub map: Arc<NavMap>,
    pub kernel: KernelConfig,
    /// Travel distance per move in km.
    pub d_meas: f64,
    /// Episode length in decision steps.
    pub step_budget: u32,
    /// Gains below this threshold earn the redundancy penalty.
    pub delta_i_min: f64,
    /// Redundancy penalty (negative).
    pub kappa: f64,
    /// Collision penalty (negative); only reachable without censoring.
    pub collision_penalty: f64,
    /// Time-varying field: peaks drift and sigma regenerates.
    pub dynamic: bool,
    /// Peak drift speed in cells per decision step.
    pub v_max_cells: f64,
    pub n_peaks: usize,
    /// Fixed start cell; None draws a random navigable cell on reset.
    pub start_cell: Option<usize>,
    pub seed: u64,
}

impl EnvConfig {
    /// Static-scenario defaults for a given map.
    pub fn static_default(map: Arc<NavMap>, seed: u64) -> Self {
        Self {
            map,
            kernel: KernelConfig::new(1.125, 0.0),
            d_meas: 0.675,
            step_budget: 67,
            delta_i_min: 0.01,
            kappa: -0.5,
            collision_penalty: -1.0,
            dynamic: false,
            v_max_cells: 0.0,
            n_peaks: 5,
            start_cell: None,
            seed,
        }
    }

    /// Dynamic-scenario defaults: longer episodes, forgetting enabled,
    /// 0.3 m/s peak drift at 300 s per decision step (0.4 cells at the
    /// default 0.225 km cell).
    pub fn dynamic_default(map: Arc<NavMap>, seed: u64) -> Self {
        let cell = map.cell_size;
        Self {
            kernel: KernelConfig::new(1.125, 0.03),
            step_budget: 168,
            dynamic: true,
            v_max_cells: 0.3 * 300.0 / 1000.0 / cell,
            ..Self::static_default(map, seed)
        }
    }
}

/// The three-channel image state: navigability, path trail, uncertainty.
/// Channels are H×W rasters in row-major order, all values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct StateImage {
    pub height: usize,
    pub width: usize,
    pub channels: [Vec<f64>; 3],
}

impl StateImage {
    pub fn len(&self) -> usize {
        3 * self.height * self.width
    }

    /// Flattens channel-major into a single vector (ch0, ch1, ch2).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for ch in &self.channels {
            out.extend_from_slice(ch);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub delta_i: f64,
    pub i_t: f64,
    pub collided: bool,
    pub position: Position,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: StateImage,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

enum Conditioner {
    /// Static kernel: O(n·m) Cholesky growth per sample.
    Incremental(IncrementalConditioner),
    /// Temporal kernel: full reconditioning at every step.
    Full,
}

pub struct PatrolEnv {
    pub cfg: EnvConfig,
    gt: GroundTruth,
    pos: Position,
    samples: SampleSet,
    sample_values: Vec<f64>,
    /// Visited cells in visit order; revisits append again.
    visit_order: Vec<usize>,
    conditioner: Conditioner,
    cov: CovarianceState,
    steps: u32,
    done: bool,
}

impl PatrolEnv {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let gt_seed = rng.random::<u64>();
        let gt = GroundTruth::generate(&cfg.map, gt_seed, cfg.n_peaks);

        let start_cell = match cfg.start_cell {
            Some(cell) => {
                if !cfg.map.is_water_cell(cell) {
                    return Err(Error::BadCell(cell));
                }
                cell
            }
            None => cfg.map.water_cells()[rng.random_range(0..cfg.map.num_water_cells())],
        };
        let pos = cfg.map.cell_center(start_cell);

        let mut samples = SampleSet::new();
        samples.push(pos, 0);
        let mut sample_values = Vec::new();
        sample_values.push(gt.evaluate(&pos)?);

        let (conditioner, cov) = if cfg.kernel.tau == 0.0 {
            let mut inc = IncrementalConditioner::new(&cfg.map, cfg.kernel);
            inc.add_sample(pos, 0)?;
            let cov = inc.state(0);
            (Conditioner::Incremental(inc), cov)
        } else {
            let cov = condition(&cfg.map, &cfg.kernel, &samples, 0)?;
            (Conditioner::Full, cov)
        };

        Ok(Self {
            visit_order: vec![start_cell],
            cfg,
            gt,
            pos,
            samples,
            sample_values,
            conditioner,
            cov,
            steps: 0,
            done: false,
        })
    }

    /// Builds a fresh episode and returns the initial state.
    pub fn reset(cfg: EnvConfig) -> Result<(Self, StateImage)> {
        let env = Self::new(cfg)?;
        let state = env.render_state();
        Ok((env, state))
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let i_before = information(&self.cov);
        let endpoint = move_endpoint(&self.pos, action, self.cfg.d_meas);
        let valid = is_segment_navigable(&self.cfg.map, &self.pos, &endpoint);

        self.steps += 1;
        let t = self.steps;
        let mut collided = false;

        if valid {
            self.pos = endpoint;
            let cell = self.cfg.map.cell_at(&self.pos).expect("navigable endpoint");
            self.visit_order.push(cell);
            self.sample_values.push(self.gt.evaluate(&self.pos)?);
            self.samples.push(self.pos, t);
            match &mut self.conditioner {
                Conditioner::Incremental(inc) => inc.add_sample(self.pos, t)?,
                Conditioner::Full => {}
            }
        } else {
            collided = true;
        }

        if self.cfg.dynamic {
            self.gt.advance_in_place(1, self.cfg.v_max_cells);
        }

        self.cov = match &self.conditioner {
            Conditioner::Incremental(inc) => inc.state(t),
            Conditioner::Full => condition(&self.cfg.map, &self.cfg.kernel, &self.samples, t)?,
        };
        let i_after = information(&self.cov);
        let delta_i = i_before - i_after;

        let reward = if collided {
            self.cfg.collision_penalty
        } else if delta_i >= self.cfg.delta_i_min {
            delta_i
        } else {
            self.cfg.kappa
        };

        self.done = self.steps >= self.cfg.step_budget;
        Ok(StepResult {
            state: self.render_state(),
            reward,
            done: self.done,
            info: StepInfo {
                delta_i,
                i_t: i_after,
                collided,
                position: self.pos,
            },
        })
    }

    /// ch0: navigability; ch1: path trail ramped by visit order (oldest
    /// small, current exactly 1); ch2: the uncertainty channel.
    pub fn render_state(&self) -> StateImage {
        let map = &self.cfg.map;
        let n = map.num_cells();

        let mut nav = vec![0.0; n];
        for &cell in map.water_cells() {
            nav[cell] = 1.0;
        }

        let mut trail = vec![0.0; n];
        let k = self.visit_order.len();
        for (i, &cell) in self.visit_order.iter().enumerate() {
            // Revisited cells take their latest visit value.
            trail[cell] = (i + 1) as f64 / k as f64;
        }

        let sigma = uncertainty_channel(&self.cov);

        StateImage {
            height: map.height,
            width: map.width,
            channels: [nav, trail, sigma],
        }
    }

    pub fn position(&self) -> Position {
        self.pos
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps
    }

    pub fn action_mask(&self) -> ActionMask {
        valid_action_mask(&self.cfg.map, &self.pos, self.cfg.d_meas)
    }

    pub fn covariance(&self) -> &CovarianceState {
        &self.cov
    }

    pub fn information_remaining(&self) -> f64 {
        information(&self.cov)
    }

    pub fn ground_truth(&self) -> &GroundTruth {
        &self.gt
    }

    pub fn samples(&self) -> (&SampleSet, &[f64]) {
        (&self.samples, &self.sample_values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info_field;

    fn open_map(w: usize, h: usize) -> Arc<NavMap> {
        Arc::new(NavMap::new(w, h, 0.225, vec![true; w * h]).unwrap())
    }

    fn static_cfg(seed: u64) -> EnvConfig {
        EnvConfig::static_default(open_map(10, 8), seed)
    }

    #[test]
    fn reset_initial_state_shape_and_trail() {
        // Large enough that the far end decorrelates from the start sample.
        let cfg = EnvConfig::static_default(open_map(30, 24), 1);
        let (env, state) = PatrolEnv::reset(cfg).unwrap();
        assert_eq!(state.height, 24);
        assert_eq!(state.width, 30);
        // ch1: exactly one nonzero pixel, valued 1.0.
        let nonzero: Vec<f64> = state.channels[1].iter().cloned().filter(|&v| v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]);
        // ch2: well below prior near the start sample, close to the prior
        // (1.0) at the far end of the map; residual correlation over the
        // 10x8 raster keeps the far corner slightly under 1.
        let start_cell = env.cfg.map.cell_at(&env.position()).unwrap();
        assert!(state.channels[2][start_cell] < 0.5);
        let far = state.channels[2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(far > 0.99 && far <= 1.0 + 1e-9, "far sigma {far}");
    }

    #[test]
    fn reset_is_deterministic_per_seed() {
        let (_, a) = PatrolEnv::reset(static_cfg(33)).unwrap();
        let (_, b) = PatrolEnv::reset(static_cfg(33)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn collision_penalized_and_position_fixed() {
        // Start boxed at the north-west corner cell; N and W moves collide.
        let map = open_map(10, 8);
        let mut cfg = EnvConfig::static_default(map, 5);
        cfg.start_cell = Some(0);
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        let before = env.position();
        let res = env.step(4).unwrap(); // N out of bounds
        assert!(res.info.collided);
        assert_eq!(res.reward, -1.0);
        assert_eq!(env.position(), before);
        assert_eq!(res.info.delta_i, 0.0);
    }

    #[test]
    fn revisit_earns_redundancy_penalty() {
        let map = open_map(16, 16);
        let mut cfg = EnvConfig::static_default(map, 5);
        cfg.start_cell = Some(8 * 16 + 8);
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        // Move east then immediately back west onto the just-sampled cell.
        let east = env.step(2).unwrap();
        assert!(east.reward > 0.0);
        let back = env.step(6).unwrap();
        assert!(back.info.delta_i < 0.01);
        assert_eq!(back.reward, -0.5);
    }

    #[test]
    fn first_move_reward_matches_info_field_oracle() {
        let map = open_map(16, 16);
        let mut cfg = EnvConfig::static_default(Arc::clone(&map), 9);
        cfg.start_cell = Some(8 * 16 + 8);
        let (mut env, _) = PatrolEnv::reset(cfg.clone()).unwrap();
        let res = env.step(2).unwrap();
        assert!(res.reward > 0.0);

        // Independent recomputation through full conditioning.
        let start = map.cell_center(8 * 16 + 8);
        let mut s = SampleSet::new();
        s.push(start, 0);
        let before = condition(&map, &cfg.kernel, &s, 0).unwrap();
        s.push(move_endpoint(&start, 2, cfg.d_meas), 1);
        let after = condition(&map, &cfg.kernel, &s, 1).unwrap();
        let expected = info_field::information_gain(&before, &after);
        assert!((res.reward - expected).abs() < 1e-8);
    }

    #[test]
    fn episode_length_is_exactly_step_budget() {
        let mut cfg = static_cfg(4);
        cfg.step_budget = 9;
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        let mut steps = 0;
        loop {
            let res = env.step(steps % 8).unwrap();
            steps += 1;
            if res.done {
                break;
            }
        }
        assert_eq!(steps, 9);
        assert!(matches!(env.step(0), Err(Error::EpisodeDone)));
    }

    #[test]
    fn static_information_non_increasing_and_gains_telescope() {
        let mut cfg = static_cfg(12);
        cfg.step_budget = 20;
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        let i0 = env.information_remaining();
        let mut prev = i0;
        let mut total_gain = 0.0;
        for k in 0..20 {
            let res = env.step((k * 3) % 8).unwrap();
            assert!(res.info.i_t <= prev + 1e-9);
            total_gain += res.info.delta_i;
            prev = res.info.i_t;
        }
        assert!((total_gain - (i0 - prev)).abs() < 1e-6);
    }

    #[test]
    fn position_always_navigable() {
        let map = Arc::new(
            NavMap::parse("cellsize 0.225\n1111110\n1100111\n1111111\n0111101\n1111111\n").unwrap(),
        );
        let mut cfg = EnvConfig::static_default(map, 77);
        cfg.step_budget = 40;
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        for k in 0..40 {
            let _ = env.step(k % 8).unwrap();
            assert!(env.cfg.map.is_navigable(&env.position()));
        }
    }

    #[test]
    fn dynamic_trapped_information_recovers() {
        // tau > 0 and every attempted move collides (1-cell lake): I_t must
        // be non-decreasing as the single start sample ages.
        let map = Arc::new(NavMap::parse("cellsize 1.0\n000\n010\n000\n").unwrap());
        let mut cfg = EnvConfig::dynamic_default(map, 8);
        cfg.d_meas = 1.0;
        cfg.step_budget = 30;
        cfg.n_peaks = 1;
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        let mut prev = env.information_remaining();
        for _ in 0..30 {
            let res = env.step(0).unwrap();
            assert!(res.info.collided);
            assert!(res.info.i_t >= prev - 1e-12);
            prev = res.info.i_t;
        }
    }

    #[test]
    fn trail_ramp_values() {
        let map = open_map(16, 16);
        let mut cfg = EnvConfig::static_default(map, 2);
        cfg.start_cell = Some(8 * 16 + 4);
        let (mut env, _) = PatrolEnv::reset(cfg).unwrap();
        // Three eastward moves: 4 visited cells, ramp 0.25, 0.5, 0.75, 1.0.
        for _ in 0..3 {
            env.step(2).unwrap();
        }
        let state = env.render_state();
        let mut values: Vec<f64> = state.channels[1]
            .iter()
            .cloned()
            .filter(|&v| v != 0.0)
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(values, vec![0.25, 0.5, 0.75, 1.0]);
        // ch2 matches the covariance channel exactly.
        assert_eq!(state.channels[2], uncertainty_channel(env.covariance()));
    }
}
