//! Truncated Euler-Maruyama simulation of the stochastic chemostat and the
//! Monte Carlo machinery used to cross-check the Fokker-Planck solver.
//!
//! The update is
//!
//! ```text
//! S <- [S + f1(S,B) dt + sigma1(S) sqrt(dt) w1]+
//! B <- [B + f2(S,B) dt + sigma2(B) sqrt(dt) w2]+
//! ```
//!
//! with i.i.d. standard normal `w1, w2`. The positive-part truncation keeps
//! both coordinates nonnegative, and because `f2(., 0) = sigma2(0) = 0` an
//! exact zero of `B` is genuinely absorbing - washout is `B == 0.0`, no
//! epsilon threshold.
//!
//! Reproducibility: each path draws from its own ChaCha stream (seed =
//! ensemble seed, stream = path index), so ensembles are bit-identical for a
//! given seed regardless of how paths are scheduled across threads. Normal
//! variates come from the Marsaglia polar method, one pair per step.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::ChemostatParams;
use crate::par;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Product-Gaussian initial law, truncated to the nonnegative quadrant by
/// clamping negative samples to zero (consistent with the positive-part
/// dynamics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianInitialLaw {
    pub mean_s: f64,
    pub var_s: f64,
    pub mean_b: f64,
    pub var_b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Time step (h).
    pub dt: f64,
    /// Simulation horizon (h).
    pub t_end: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub initial: GaussianInitialLaw,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || self.t_end < 0.0 || self.n_paths == 0 {
            return Err(Error::domain(format!(
                "need dt > 0, t_end >= 0, n_paths >= 1 (dt={}, t_end={}, n_paths={})",
                self.dt, self.t_end, self.n_paths
            )));
        }
        if self.initial.var_s < 0.0 || self.initial.var_b < 0.0 {
            return Err(Error::domain("initial variances must be >= 0"));
        }
        Ok(())
    }
}

/// State of one path at one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathState {
    pub s: f64,
    pub b: f64,
}

impl PathState {
    /// Exact-zero biomass: the absorbed state.
    #[inline]
    pub fn washed_out(&self) -> bool {
        self.b == 0.0
    }
}

/// Ensemble of simulated paths sampled at the requested snapshot times.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub snapshot_times: Vec<f64>,
    /// `states[snapshot][path]`.
    pub states: Vec<Vec<PathState>>,
    /// Paths that overflowed to a non-finite state; they are excluded from
    /// all statistics.
    pub failed: Vec<bool>,
    pub n_failed: usize,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.failed.len()
    }

    fn snapshot_index(&self, t: f64) -> Result<usize> {
        self.snapshot_times
            .iter()
            .position(|&x| x == t)
            .ok_or_else(|| Error::domain(format!("no snapshot stored at t = {t}")))
    }

    /// Fraction of non-failed paths with `B = 0` at the stored snapshot `t`.
    pub fn washout_fraction(&self, t: f64) -> Result<f64> {
        let idx = self.snapshot_index(t)?;
        let mut washed = 0usize;
        let mut live = 0usize;
        for (state, &failed) in self.states[idx].iter().zip(&self.failed) {
            if failed {
                continue;
            }
            live += 1;
            if state.washed_out() {
                washed += 1;
            }
        }
        if live == 0 {
            return Err(Error::domain("all paths failed; empty ensemble"));
        }
        Ok(washed as f64 / live as f64)
    }

    /// Bin the snapshot at `t` onto grid nodes. Washed-out paths go to the
    /// washout row binned by `S`; live paths go to their nearest node cell,
    /// kept off the washout row (row `k2 = 1` covers live biomass below
    /// `3 h2 / 2`). Out-of-domain samples are clamped to the edge cells and
    /// counted.
    pub fn empirical_distribution(&self, t: f64, grid: &Grid) -> Result<GridHistogram> {
        let idx = self.snapshot_index(t)?;
        let mut counts = vec![0u64; grid.n_nodes()];
        let mut out_of_domain = 0usize;
        let mut live = 0u64;
        for (state, &failed) in self.states[idx].iter().zip(&self.failed) {
            if failed {
                continue;
            }
            live += 1;
            let ((k1, k2), outside) = grid.bin(state.s, state.b);
            if outside {
                out_of_domain += 1;
            }
            let k2 = if state.washed_out() { 0 } else { k2.max(1) };
            counts[grid.index(k1, k2)] += 1;
        }
        if live == 0 {
            return Err(Error::domain("all paths failed; empty ensemble"));
        }
        let mass = counts.iter().map(|&c| c as f64 / live as f64).collect();
        Ok(GridHistogram {
            grid: *grid,
            mass,
            out_of_domain,
            excluded_failed: self.n_failed,
        })
    }
}

/// Node-binned empirical mass distribution; layout matches
/// [`crate::fp::DistributionState`] (washout bin = row `k2 = 0`).
#[derive(Debug, Clone)]
pub struct GridHistogram {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub out_of_domain: usize,
    pub excluded_failed: usize,
}

impl GridHistogram {
    pub fn washout_mass(&self) -> f64 {
        self.mass[..=self.grid.n1].iter().sum()
    }
}

/// Total variation distance between two mass vectors of equal length.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Aggregate a node mass vector into macro cells of `factor x factor` fine
/// intervals (node `k` goes to macro cell `k / factor`, the far edge node
/// into the last cell). Used for coarse-grained comparisons between the
/// Monte Carlo histogram and the solved density.
pub fn coarsen_mass(mass: &[f64], grid: &Grid, factor: usize) -> Vec<f64> {
    let c1 = grid.n1.div_ceil(factor);
    let c2 = grid.n2.div_ceil(factor);
    let mut out = vec![0.0; c1 * c2];
    for (idx, &m) in mass.iter().enumerate() {
        let (k1, k2) = grid.unindex(idx);
        let i = (k1 / factor).min(c1 - 1);
        let j = (k2 / factor).min(c2 - 1);
        out[i + j * c1] += m;
    }
    out
}

/// Marsaglia polar method: one pair of independent standard normals.
#[inline]
fn normal_pair(rng: &mut impl RngCore) -> (f64, f64) {
    loop {
        let u: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        let v: f64 = rng.gen::<f64>() * 2.0 - 1.0;
        let q = u * u + v * v;
        if q > 0.0 && q < 1.0 {
            let factor = (-2.0 * q.ln() / q).sqrt();
            return (u * factor, v * factor);
        }
    }
}

/// Simulate the ensemble, sampling every path at the given snapshot times
/// (sorted, within `[0, t_end]`). Snapshot times are matched to the nearest
/// step boundary `round(t / dt)`.
pub fn simulate_ensemble(
    params: &ChemostatParams,
    cfg: &SimConfig,
    snapshot_times: &[f64],
) -> Result<PathEnsemble> {
    params.validate()?;
    cfg.validate()?;
    let n_steps = (cfg.t_end / cfg.dt).round() as u64;
    let mut snap_steps = Vec::with_capacity(snapshot_times.len());
    let mut prev = f64::NEG_INFINITY;
    for &t in snapshot_times {
        if t < 0.0 || t > cfg.t_end || t < prev {
            return Err(Error::domain(format!(
                "snapshot times must be sorted within [0, t_end], got {t}"
            )));
        }
        prev = t;
        snap_steps.push(((t / cfg.dt).round() as u64).min(n_steps));
    }

    let params = *params;
    let cfg_copy = *cfg;
    let snap_steps_ref = &snap_steps;
    struct PathResult {
        states: Vec<PathState>,
        failed: bool,
    }
    let results: Vec<PathResult> = par::map_indexed(cfg.n_paths, move |path| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg_copy.seed);
        rng.set_stream(path as u64);
        let (w_s, w_b) = normal_pair(&mut rng);
        let init = &cfg_copy.initial;
        let mut s = (init.mean_s + init.var_s.sqrt() * w_s).max(0.0);
        let mut b = (init.mean_b + init.var_b.sqrt() * w_b).max(0.0);
        let sqrt_dt = cfg_copy.dt.sqrt();
        let mut states = Vec::with_capacity(snap_steps_ref.len());
        let mut failed = false;
        let mut snap_cursor = 0;
        for step in 0..=n_steps {
            while snap_cursor < snap_steps_ref.len() && snap_steps_ref[snap_cursor] == step {
                states.push(PathState { s, b });
                snap_cursor += 1;
            }
            if step == n_steps {
                break;
            }
            if !failed {
                let (w1, w2) = normal_pair(&mut rng);
                let (f1, f2) = params.drift_unchecked(s, b);
                let (g1, g2) = params.diffusion_unchecked(s, b);
                let s_new = (s + f1 * cfg_copy.dt + g1 * sqrt_dt * w1).max(0.0);
                let b_new = (b + f2 * cfg_copy.dt + g2 * sqrt_dt * w2).max(0.0);
                if s_new.is_finite() && b_new.is_finite() {
                    s = s_new;
                    b = b_new;
                } else {
                    failed = true;
                }
            }
        }
        PathResult { states, failed }
    });

    let mut states: Vec<Vec<PathState>> =
        vec![Vec::with_capacity(cfg.n_paths); snapshot_times.len()];
    let mut failed = Vec::with_capacity(cfg.n_paths);
    let mut n_failed = 0;
    for r in results {
        for (snap, &st) in r.states.iter().enumerate() {
            states[snap].push(st);
        }
        if r.failed {
            n_failed += 1;
        }
        failed.push(r.failed);
    }
    Ok(PathEnsemble {
        snapshot_times: snapshot_times.to_vec(),
        states,
        failed,
        n_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseKind;
    use crate::phase;
    use crate::presets;
    use approx::assert_relative_eq;

    fn small_cfg(n_paths: usize, seed: u64) -> SimConfig {
        SimConfig {
            dt: 1e-3,
            t_end: 1.0,
            n_paths,
            seed,
            initial: GaussianInitialLaw {
                mean_s: 0.45,
                var_s: 1e-5,
                mean_b: 0.01,
                var_b: 1e-5,
            },
        }
    }

    #[test]
    fn zero_biomass_stays_zero() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let mut cfg = small_cfg(64, 9);
        cfg.initial.mean_b = 0.0;
        cfg.initial.var_b = 0.0;
        let e = simulate_ensemble(&p, &cfg, &[0.0, 0.5, 1.0]).unwrap();
        for snap in &e.states {
            assert!(snap.iter().all(|st| st.b == 0.0));
        }
        assert_eq!(e.washout_fraction(1.0).unwrap(), 1.0);
    }

    #[test]
    fn positivity_and_absorption_monotonicity() {
        let p = presets::monod_params(0.05, NoiseKind::SquareRoot);
        let cfg = SimConfig {
            dt: 5e-3,
            t_end: 8.0,
            n_paths: 256,
            seed: 11,
            initial: GaussianInitialLaw {
                mean_s: 0.45,
                var_s: 1e-5,
                mean_b: 1e-4,
                var_b: 1e-8,
            },
        };
        let times = [0.0, 2.0, 4.0, 8.0];
        let e = simulate_ensemble(&p, &cfg, &times).unwrap();
        for snap in &e.states {
            assert!(snap.iter().all(|st| st.s >= 0.0 && st.b >= 0.0));
        }
        for path in 0..e.n_paths() {
            let mut was_zero = false;
            for snap in &e.states {
                if was_zero {
                    assert_eq!(snap[path].b, 0.0, "absorption is permanent");
                }
                was_zero = was_zero || snap[path].b == 0.0;
            }
        }
        let mut prev = 0.0;
        for &t in &times {
            let w = e.washout_fraction(t).unwrap();
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn identical_seed_reproduces_bitwise() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let cfg = small_cfg(128, 77);
        let a = simulate_ensemble(&p, &cfg, &[0.5, 1.0]).unwrap();
        let b = simulate_ensemble(&p, &cfg, &[0.5, 1.0]).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            for (x, y) in sa.iter().zip(sb) {
                assert_eq!(x.s.to_bits(), y.s.to_bits());
                assert_eq!(x.b.to_bits(), y.b.to_bits());
            }
        }
        let c = simulate_ensemble(&p, &small_cfg(128, 78), &[0.5, 1.0]).unwrap();
        assert!(a.states[0].iter().zip(&c.states[0]).any(|(x, y)| x.s != y.s));
    }

    #[test]
    fn single_deterministic_step_arithmetic() {
        // one Euler step from (1.0, 0.03) with zero noise draws reduces to
        // S + f1 dt, B + f2 dt; checked against direct arithmetic
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let (f1, f2) = p.drift_unchecked(1.0, 0.03);
        let s1 = 1.0 + f1 * 0.1;
        let b1 = 0.03 + f2 * 0.1;
        assert_relative_eq!(s1, 0.9991428571428571, max_relative = 1e-15);
        assert_relative_eq!(b1, 0.03 + (3.0 / 7.0 - 0.4) * 0.03 * 0.1, max_relative = 1e-15);
    }

    #[test]
    fn noiseless_ensemble_tracks_rk4() {
        let p = presets::monod_params(0.0, NoiseKind::SquareRoot);
        let x0 = (0.45, 0.01);
        let reference = phase::integrate(&p, x0, 2.0, 1e-5).unwrap();
        let (rs, rb) = *reference.states.last().unwrap();
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let cfg = SimConfig {
                dt,
                t_end: 2.0,
                n_paths: 1,
                seed: 1,
                initial: GaussianInitialLaw {
                    mean_s: 0.45,
                    var_s: 0.0,
                    mean_b: 0.01,
                    var_b: 0.0,
                },
            };
            let e = simulate_ensemble(&p, &cfg, &[2.0]).unwrap();
            let st = e.states[0][0];
            errs.push(((st.s - rs).powi(2) + (st.b - rb).powi(2)).sqrt());
        }
        // explicit Euler converges at first order
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.4 && ratio < 2.6, "Euler order ratio {ratio}");
    }

    #[test]
    fn histogram_masses_sum_to_one() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let cfg = small_cfg(500, 3);
        let e = simulate_ensemble(&p, &cfg, &[1.0]).unwrap();
        let grid = presets::monod_grid();
        let h = e.empirical_distribution(1.0, &grid).unwrap();
        assert_relative_eq!(h.mass.iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert_eq!(h.out_of_domain, 0);
    }

    #[test]
    fn single_path_is_unit_mass() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let cfg = small_cfg(1, 5);
        let e = simulate_ensemble(&p, &cfg, &[1.0]).unwrap();
        let grid = presets::monod_grid();
        let h = e.empirical_distribution(1.0, &grid).unwrap();
        assert_eq!(h.mass.iter().filter(|&&m| m > 0.0).count(), 1);
        assert_eq!(h.mass.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn all_absorbed_paths_fill_washout_bin() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let mut cfg = small_cfg(64, 13);
        cfg.initial.mean_b = 0.0;
        cfg.initial.var_b = 0.0;
        let e = simulate_ensemble(&p, &cfg, &[1.0]).unwrap();
        let grid = presets::monod_grid();
        let h = e.empirical_distribution(1.0, &grid).unwrap();
        assert_relative_eq!(h.washout_mass(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn washout_fraction_zero_for_interior_start() {
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let cfg = small_cfg(256, 21);
        let e = simulate_ensemble(&p, &cfg, &[0.0]).unwrap();
        assert_eq!(e.washout_fraction(0.0).unwrap(), 0.0);
    }

    #[test]
    fn missing_snapshot_is_error() {
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let cfg = small_cfg(4, 2);
        let e = simulate_ensemble(&p, &cfg, &[0.5]).unwrap();
        assert!(e.washout_fraction(0.25).is_err());
    }

    #[test]
    fn coarsening_preserves_mass() {
        let grid = Grid::new(2.0, 0.06, 70, 70).unwrap();
        let mut mass = vec![0.0; grid.n_nodes()];
        mass[grid.index(3, 5)] = 0.25;
        mass[grid.index(70, 70)] = 0.75;
        let coarse = coarsen_mass(&mass, &grid, 7);
        assert_eq!(coarse.len(), 100);
        assert_relative_eq!(coarse.iter().sum::<f64>(), 1.0, max_relative = 1e-15);
        assert_eq!(coarse[0], 0.25); // node (3,5) -> macro (0,0)
        assert_eq!(coarse[99], 0.75); // far corner clamps into macro (9,9)
    }
}
