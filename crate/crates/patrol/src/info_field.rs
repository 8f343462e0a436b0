//! The multivariate-Gaussian information model: RBF correlation, covariance
//! conditioning on the sample set, trace information, entropy, and the
//! temporal forgetting term that lets uncertainty regenerate.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::linalg;
use crate::nav_map::{NavMap, Position};

/// RBF kernel and temporal-forgetting settings.
#[derive(Debug, Clone, Copy)]
pub struct KernelConfig {
    /// Lengthscale l in km.
    pub lengthscale: f64,
    /// Diagonal jitter added to the sample covariance.
    pub jitter: f64,
    /// Forgetting rate tau per squared step; 0 for the static case.
    pub tau: f64,
}

impl KernelConfig {
    pub fn new(lengthscale: f64, tau: f64) -> Self {
        Self {
            lengthscale,
            jitter: 1e-6,
            tau,
        }
    }
}

/// Sampled locations paired with their step of visit.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    positions: Vec<Position>,
    times: Vec<u32>,
}

impl SampleSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pos: Position, t: u32) {
        if let Some(&last) = self.times.last() {
            assert!(t >= last, "sample times must be non-decreasing");
        }
        self.positions.push(pos);
        self.times.push(t);
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Position] {
        &self.positions
    }

    pub fn times(&self) -> &[u32] {
        &self.times
    }

    /// Keeps only the most recent `horizon` samples.
    pub fn truncated_to_recent(&self, horizon: usize) -> SampleSet {
        let skip = self.len().saturating_sub(horizon);
        SampleSet {
            positions: self.positions[skip..].to_vec(),
            times: self.times[skip..].to_vec(),
        }
    }
}

/// Posterior standard deviation over the navigable cells, conditioned on a
/// sample set at a given step. Immutable value; `condition` builds new ones.
#[derive(Debug, Clone)]
pub struct CovarianceState {
    pub map: Arc<NavMap>,
    pub kernel: KernelConfig,
    pub samples: SampleSet,
    /// Per-water-cell posterior std, in `water_cells` order.
    pub sigma: Vec<f64>,
    pub current_time: u32,
}

/// RBF correlation exp(-d^2 / (2 l^2)). Always in (0, 1].
pub fn rbf(p: &Position, q: &Position, l: f64) -> f64 {
    let d2 = (p.x - q.x).powi(2) + (p.y - q.y).powi(2);
    (-d2 / (2.0 * l * l)).exp()
}

/// Sample-sample covariance: RBF(X_meas, X_meas) + [tau (t - t_meas)^2 + jitter] I.
pub fn sample_covariance(
    samples: &SampleSet,
    kernel: &KernelConfig,
    t: u32,
) -> Result<Array2<f64>> {
    let m = samples.len();
    if let Some(&latest) = samples.times().iter().max() {
        if t < latest {
            return Err(Error::FutureSample { t, t_meas: latest });
        }
    }
    let mut k = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            k[[i, j]] = rbf(
                &samples.positions()[i],
                &samples.positions()[j],
                kernel.lengthscale,
            );
        }
        let age = (t - samples.times()[i]) as f64;
        k[[i, i]] += kernel.tau * age * age + kernel.jitter;
    }
    Ok(k)
}

const SIGMA_OVERSHOOT_TOLERANCE: f64 = 1e-9;

/// Conditions the unit-variance field on the sample set: per-cell
/// sigma_i = sqrt(max(0, 1 - k_i' K^-1 k_i)). Empty samples give sigma = 1.
pub fn condition(
    map: &Arc<NavMap>,
    kernel: &KernelConfig,
    samples: &SampleSet,
    t: u32,
) -> Result<CovarianceState> {
    let n = map.num_water_cells();
    if samples.is_empty() {
        return Ok(CovarianceState {
            map: Arc::clone(map),
            kernel: *kernel,
            samples: samples.clone(),
            sigma: vec![1.0; n],
            current_time: t,
        });
    }
    for p in samples.positions() {
        if !map.is_navigable(p) {
            return Err(Error::NotNavigable(p.x, p.y));
        }
    }
    let k_mm = sample_covariance(samples, kernel, t)?;
    let l = linalg::cholesky(&k_mm).ok_or(Error::SingularCovariance)?;

    let mut sigma = Vec::with_capacity(n);
    let mut k_i = vec![0.0; samples.len()];
    for &cell in map.water_cells() {
        let center = map.cell_center(cell);
        for (slot, p) in k_i.iter_mut().zip(samples.positions()) {
            *slot = rbf(&center, p, kernel.lengthscale);
        }
        let var = 1.0 - linalg::quad_form(&l, &k_i);
        if var > 1.0 + SIGMA_OVERSHOOT_TOLERANCE {
            return Err(Error::SingularCovariance);
        }
        sigma.push(var.max(0.0).sqrt());
    }
    Ok(CovarianceState {
        map: Arc::clone(map),
        kernel: *kernel,
        samples: samples.clone(),
        sigma,
        current_time: t,
    })
}

/// Remaining information: trace of the conditioned covariance, sum of sigma^2.
pub fn information(state: &CovarianceState) -> f64 {
    state.sigma.iter().map(|s| s * s).sum()
}

/// Information gain between two states of the same field.
pub fn information_gain(before: &CovarianceState, after: &CovarianceState) -> f64 {
    information(before) - information(after)
}

/// Entropy of the conditioned field in nats:
/// 1/2 logdet(Sigma[X|X_meas] + jitter I) + n/2 log(2 pi e).
pub fn entropy(state: &CovarianceState) -> Result<f64> {
    let map = &state.map;
    let kernel = &state.kernel;
    let n = map.num_water_cells();
    let centers: Vec<Position> = map.water_cells().iter().map(|&c| map.cell_center(c)).collect();

    // Full conditional covariance over the water cells.
    let mut cov = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            cov[[i, j]] = rbf(&centers[i], &centers[j], kernel.lengthscale);
        }
    }
    if !state.samples.is_empty() {
        let k_mm = sample_covariance(&state.samples, kernel, state.current_time)?;
        let l = linalg::cholesky(&k_mm).ok_or(Error::SingularCovariance)?;
        let m = state.samples.len();
        // z_i = L^-1 k(cell_i, X_meas); conditional = prior - Z' Z.
        let mut z = Array2::<f64>::zeros((n, m));
        let mut k_i = vec![0.0; m];
        for i in 0..n {
            for (slot, p) in k_i.iter_mut().zip(state.samples.positions()) {
                *slot = rbf(&centers[i], p, kernel.lengthscale);
            }
            let zi = linalg::solve_lower(&l, &k_i);
            for (j, v) in zi.into_iter().enumerate() {
                z[[i, j]] = v;
            }
        }
        cov = cov - z.dot(&z.t());
    }
    for i in 0..n {
        cov[[i, i]] += kernel.jitter;
    }
    let l = linalg::cholesky(&cov).ok_or(Error::SingularCovariance)?;
    let dim = n as f64;
    Ok(0.5 * linalg::logdet_from_cholesky(&l)
        + 0.5 * dim * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln())
}

/// H×W raster with sigma at each water cell and 0 at land, row-major.
pub fn uncertainty_channel(state: &CovarianceState) -> Vec<f64> {
    let map = &state.map;
    let mut grid = vec![0.0; map.num_cells()];
    for (ord, &cell) in map.water_cells().iter().enumerate() {
        grid[cell] = state.sigma[ord];
    }
    grid
}

/// Incremental conditioning for the static case (tau = 0): grows the
/// Cholesky factor one sample at a time and keeps per-cell partial solves,
/// so each new sample costs O(n·m) instead of a full recompute. Produces
/// exactly the same sigma as [`condition`].
#[derive(Debug, Clone)]
pub struct IncrementalConditioner {
    map: Arc<NavMap>,
    kernel: KernelConfig,
    samples: SampleSet,
    /// Lower Cholesky factor rows of the sample covariance.
    chol_rows: Vec<Vec<f64>>,
    /// Per water cell: z_i = L^-1 k(cell_i, X_meas).
    z: Vec<Vec<f64>>,
    /// Per water cell posterior variance 1 - |z_i|^2.
    var: Vec<f64>,
}

impl IncrementalConditioner {
    pub fn new(map: &Arc<NavMap>, kernel: KernelConfig) -> Self {
        assert_eq!(kernel.tau, 0.0, "incremental path requires a static kernel");
        let n = map.num_water_cells();
        Self {
            map: Arc::clone(map),
            kernel,
            samples: SampleSet::new(),
            chol_rows: Vec::new(),
            z: vec![Vec::new(); n],
            var: vec![1.0; n],
        }
    }

    pub fn add_sample(&mut self, pos: Position, t: u32) -> Result<()> {
        if !self.map.is_navigable(&pos) {
            return Err(Error::NotNavigable(pos.x, pos.y));
        }
        let m = self.samples.len();
        // New covariance row against existing samples.
        let mut k_new = vec![0.0; m];
        for (slot, p) in k_new.iter_mut().zip(self.samples.positions()) {
            *slot = rbf(&pos, p, self.kernel.lengthscale);
        }
        // Forward-substitute against the existing factor rows.
        let mut l_row = vec![0.0; m];
        for i in 0..m {
            let mut s = k_new[i];
            for k in 0..i {
                s -= self.chol_rows[i][k] * l_row[k];
            }
            l_row[i] = s / self.chol_rows[i][i];
        }
        let pivot = 1.0 + self.kernel.jitter - linalg::dot(&l_row, &l_row);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::SingularCovariance);
        }
        l_row.push(pivot.sqrt());
        let l_mm = *l_row.last().unwrap();

        for (ord, &cell) in self.map.water_cells().iter().enumerate() {
            let center = self.map.cell_center(cell);
            let k_cell = rbf(&center, &pos, self.kernel.lengthscale);
            let zi = &mut self.z[ord];
            let z_new = (k_cell - linalg::dot(&l_row[..m], zi)) / l_mm;
            zi.push(z_new);
            self.var[ord] -= z_new * z_new;
        }
        self.chol_rows.push(l_row);
        self.samples.push(pos, t);
        Ok(())
    }

    pub fn state(&self, t: u32) -> CovarianceState {
        let sigma = self.var.iter().map(|&v| v.max(0.0).sqrt()).collect();
        CovarianceState {
            map: Arc::clone(&self.map),
            kernel: self.kernel,
            samples: self.samples.clone(),
            sigma,
            current_time: t,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.samples.len()
    }
}
