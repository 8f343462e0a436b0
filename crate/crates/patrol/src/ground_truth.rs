//! Randomized Shekel water-quality fields, static or with Brownian-drifting
//! peaks. Values are min-max normalized over the water cells.

use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nav_map::{NavMap, Position};

/// A multi-peak Shekel field f(x) = sum_k 1 / (c_k + |x - a_k|^2).
#[derive(Debug, Clone)]
pub struct GroundTruth {
    map: Arc<NavMap>,
    /// (center, sharpness c_k).
    peaks: Vec<(Position, f64)>,
    rng: ChaCha12Rng,
    norm_min: f64,
    norm_max: f64,
}

const SHARPNESS_RANGE: (f64, f64) = (0.15, 1.0);

impl GroundTruth {
    /// Draws peak centers uniformly over navigable cell centers and
    /// sharpness values in [0.15, 1.0]. Deterministic per seed.
    pub fn generate(map: &Arc<NavMap>, seed: u64, n_peaks: usize) -> Self {
        assert!(n_peaks >= 1);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let peaks = (0..n_peaks)
            .map(|_| {
                let cell = map.water_cells()[rng.random_range(0..map.num_water_cells())];
                let c: f64 = rng.random_range(SHARPNESS_RANGE.0..SHARPNESS_RANGE.1);
                (map.cell_center(cell), c)
            })
            .collect();
        let mut gt = Self {
            map: Arc::clone(map),
            peaks,
            rng,
            norm_min: 0.0,
            norm_max: 1.0,
        };
        gt.renormalize();
        gt
    }

    fn raw(&self, p: &Position) -> f64 {
        self.peaks
            .iter()
            .map(|(a, c)| {
                let d2 = (p.x - a.x).powi(2) + (p.y - a.y).powi(2);
                1.0 / (c + d2)
            })
            .sum()
    }

    fn renormalize(&mut self) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &cell in self.map.water_cells() {
            let v = self.raw(&self.map.cell_center(cell));
            lo = lo.min(v);
            hi = hi.max(v);
        }
        self.norm_min = lo;
        self.norm_max = if hi - lo > 1e-300 { hi } else { lo + 1.0 };
    }

    /// Normalized field value at a navigable position.
    pub fn evaluate(&self, p: &Position) -> Result<f64> {
        if !self.map.is_navigable(p) {
            return Err(Error::NotNavigable(p.x, p.y));
        }
        let v = (self.raw(p) - self.norm_min) / (self.norm_max - self.norm_min);
        Ok(v.clamp(0.0, 1.0))
    }

    /// Advances peak drift by `steps` Brownian steps. Each per-step
    /// displacement is an isotropic Gaussian with std 0.5 v_max, clipped to
    /// norm v_max (in km), reflected at the map bounding box.
    pub fn advance(mut self, steps: usize, v_max_cells: f64) -> Self {
        self.advance_in_place(steps, v_max_cells);
        self
    }

    /// In-place form of [`GroundTruth::advance`].
    pub fn advance_in_place(&mut self, steps: usize, v_max_cells: f64) {
        let v_max = v_max_cells * self.map.cell_size;
        let (w_km, h_km) = (
            self.map.width as f64 * self.map.cell_size,
            self.map.height as f64 * self.map.cell_size,
        );
        for _ in 0..steps {
            for (center, _) in self.peaks.iter_mut() {
                let mut dx: f64 = self.rng.sample::<f64, _>(StandardNormal) * 0.5 * v_max;
                let mut dy: f64 = self.rng.sample::<f64, _>(StandardNormal) * 0.5 * v_max;
                let norm = (dx * dx + dy * dy).sqrt();
                if norm > v_max && norm > 0.0 {
                    dx *= v_max / norm;
                    dy *= v_max / norm;
                }
                center.x = reflect(center.x + dx, w_km);
                center.y = reflect(center.y + dy, h_km);
            }
        }
        if steps > 0 && v_max > 0.0 {
            self.renormalize();
        }
    }

    /// Current peak centers. Peaks may sit over land after drifting.
    pub fn peak_locations(&self) -> Vec<Position> {
        self.peaks.iter().map(|(p, _)| *p).collect()
    }

    pub fn num_peaks(&self) -> usize {
        self.peaks.len()
    }
}

fn reflect(v: f64, max: f64) -> f64 {
    let mut x = v;
    loop {
        if x < 0.0 {
            x = -x;
        } else if x > max {
            x = 2.0 * max - x;
        } else {
            return x;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_map(w: usize, h: usize) -> Arc<NavMap> {
        Arc::new(NavMap::new(w, h, 0.225, vec![true; w * h]).unwrap())
    }

    #[test]
    fn generation_is_deterministic() {
        let map = open_map(8, 8);
        let a = GroundTruth::generate(&map, 99, 5);
        let b = GroundTruth::generate(&map, 99, 5);
        for &cell in map.water_cells() {
            let p = map.cell_center(cell);
            assert_eq!(a.evaluate(&p).unwrap(), b.evaluate(&p).unwrap());
        }
    }

    #[test]
    fn single_peak_max_at_center() {
        let map = open_map(8, 8);
        let gt = GroundTruth::generate(&map, 3, 1);
        let peak = gt.peak_locations()[0];
        assert!((gt.evaluate(&peak).unwrap() - 1.0).abs() < 1e-12);
        for &cell in map.water_cells() {
            assert!(gt.evaluate(&map.cell_center(cell)).unwrap() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn normalization_spans_unit_interval() {
        let map = open_map(10, 6);
        let gt = GroundTruth::generate(&map, 17, 4);
        let values: Vec<f64> = map
            .water_cells()
            .iter()
            .map(|&c| gt.evaluate(&map.cell_center(c)).unwrap())
            .collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - 0.0).abs() < 1e-12);
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_land() {
        let map = Arc::new(NavMap::parse("cellsize 1.0\n10\n11\n").unwrap());
        let gt = GroundTruth::generate(&map, 1, 2);
        let land = map.cell_center(1);
        assert!(gt.evaluate(&land).is_err());
    }

    #[test]
    fn midpoint_matches_formula_oracle() {
        let map = open_map(12, 12);
        let gt = GroundTruth::generate(&map, 5, 2);
        let peaks = gt.peak_locations();
        let mid = Position::new(
            (peaks[0].x + peaks[1].x) / 2.0,
            (peaks[0].y + peaks[1].y) / 2.0,
        );
        if map.is_navigable(&mid) {
            // Independent formula evaluation with the same normalization.
            let f = |p: &Position| -> f64 {
                gt.peaks
                    .iter()
                    .map(|(a, c)| 1.0 / (c + (p.x - a.x).powi(2) + (p.y - a.y).powi(2)))
                    .sum()
            };
            let expect = (f(&mid) - gt.norm_min) / (gt.norm_max - gt.norm_min);
            assert!((gt.evaluate(&mid).unwrap() - expect.clamp(0.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_speed_advance_is_identity() {
        let map = open_map(8, 8);
        let gt = GroundTruth::generate(&map, 7, 3);
        let before = gt.peak_locations();
        let gt = gt.advance(10, 0.0);
        assert_eq!(gt.peak_locations(), before);
    }

    #[test]
    fn per_step_displacement_is_clipped() {
        let map = open_map(8, 8);
        let v_max_cells = 0.4;
        let v_max = v_max_cells * map.cell_size;
        let mut gt = GroundTruth::generate(&map, 11, 3);
        for _ in 0..50 {
            let before = gt.peak_locations();
            gt = gt.advance(1, v_max_cells);
            for (a, b) in before.iter().zip(gt.peak_locations()) {
                assert!(a.dist(&b) <= v_max + 1e-12);
            }
        }
    }

    #[test]
    fn advance_composes_under_one_stream() {
        let map = open_map(8, 8);
        let split = GroundTruth::generate(&map, 23, 3).advance(3, 0.5).advance(4, 0.5);
        let joint = GroundTruth::generate(&map, 23, 3).advance(7, 0.5);
        for (a, b) in split.peak_locations().iter().zip(joint.peak_locations()) {
            assert!(a.dist(&b) < 1e-12);
        }
    }

    #[test]
    fn peak_count_preserved() {
        let map = open_map(6, 6);
        let gt = GroundTruth::generate(&map, 2, 5);
        assert_eq!(gt.peak_locations().len(), 5);
        let gt = gt.advance(5, 0.4);
        assert_eq!(gt.peak_locations().len(), 5);
    }
}
