//! Time evolution of the discrete law by implicit Euler on the forward
//! equation `dp/dt = L_h^T p`: each step solves `(I - delta L_h^T) p_new = p_old`.
//!
//! The mass vector lives over all grid nodes; the washout row `b = 0`
//! carries the singular component `q_t`, the other rows the interior density
//! `p_t`. Because `L_h` has zero row sums, the implicit step conserves total
//! mass exactly in exact arithmetic, and because `I - delta L_h^T` is an
//! M-matrix the step preserves nonnegativity; both properties are tracked
//! numerically in the per-step metadata.

use crate::error::{Error, Result};
use crate::generator::GeneratorMatrix;
use crate::grid::Grid;
use crate::linalg::{identity_minus_scaled, LinearSystem, Preconditioner, SolveMethod};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Negative masses no larger than this (in absolute value) are treated as
/// iterative-solve roundoff: clamped to zero and renormalized. Anything more
/// negative is a scheme failure.
pub const NEGATIVE_MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Implicit Euler time step (h).
    pub delta: f64,
    /// Relative residual target of the linear solves.
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
    pub method: SolveMethod,
}

impl SolverConfig {
    pub fn new(delta: f64) -> Self {
        SolverConfig {
            delta,
            rel_tol: 1e-12,
            max_iter: 2000,
            preconditioner: Preconditioner::Jacobi,
            method: SolveMethod::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::domain(format!("delta must be > 0, got {}", self.delta)));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::domain(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        Ok(())
    }
}

/// Per-step diagnostics kept alongside each state.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct StateMeta {
    /// True residual of the last linear solve.
    pub solve_residual: f64,
    pub solve_iterations: usize,
    /// Raw total-mass change of the last step, measured before any clamping.
    pub mass_drift: f64,
    /// Most negative mass entry produced by the last solve, before clamping.
    pub min_mass_pre_clamp: f64,
    /// Nodes clamped in the last step.
    pub clamped_nodes: usize,
    /// Total clamped mass accumulated since the initial condition.
    pub cumulative_clamped_mass: f64,
}

/// Probability mass vector over the grid at a fixed time.
#[derive(Debug, Clone)]
pub struct DistributionState {
    pub t: f64,
    pub grid: Grid,
    /// Node masses, flat-indexed; `sum = 1` up to solver roundoff.
    pub mass: Vec<f64>,
    pub meta: StateMeta,
}

impl DistributionState {
    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Mass on the washout row `b = 0`.
    pub fn washout_mass(&self) -> f64 {
        self.mass[..=self.grid.n1].iter().sum()
    }

    pub fn observables(&self) -> Observables {
        let mut washout = 0.0;
        let mut mean_s = 0.0;
        let mut mean_b = 0.0;
        for (idx, &m) in self.mass.iter().enumerate() {
            let (k1, k2) = self.grid.unindex(idx);
            let (s, b) = self.grid.coords(k1, k2);
            mean_s += m * s;
            mean_b += m * b;
            if k2 == 0 {
                washout += m;
            }
        }
        Observables {
            washout_prob: washout,
            mean_s,
            mean_b,
            interior_mass: 1.0 - washout,
        }
    }

    /// Convert node masses to density samples: interior nodes divide by
    /// their cell area, washout-row nodes by their cell width. Exact inverse
    /// of the weighting used by [`discretize_initial`].
    pub fn to_density(&self) -> DensityField {
        let grid = self.grid;
        let mut interior = vec![0.0; grid.n_nodes()];
        let mut washout = vec![0.0; grid.n1 + 1];
        for (idx, &m) in self.mass.iter().enumerate() {
            let (k1, k2) = grid.unindex(idx);
            let measure = grid.cell_measure(k1, k2);
            if k2 == 0 {
                washout[k1] = m / measure;
            } else {
                interior[idx] = m / measure;
            }
        }
        DensityField { grid, interior, washout }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observables {
    /// `P(B_t = 0)`: total mass on the washout row.
    pub washout_prob: f64,
    pub mean_s: f64,
    pub mean_b: f64,
    pub interior_mass: f64,
}

/// Sampled density fields: `interior[idx]` approximates `p_t(s, b)` off the
/// washout row (zero on it), `washout[k1]` approximates `q_t(s)`.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: Grid,
    pub interior: Vec<f64>,
    pub washout: Vec<f64>,
}

/// Discretize an initial law given by an interior density `rho(s, b)` and an
/// optional washout density `rho_v(s)`: node mass is the density times the
/// node's cell measure, then the whole vector is normalized to total mass 1.
pub fn discretize_initial(
    rho: &dyn Fn(f64, f64) -> f64,
    rho_v: Option<&dyn Fn(f64) -> f64>,
    grid: &Grid,
) -> Result<DistributionState> {
    let mut mass = vec![0.0; grid.n_nodes()];
    for idx in 0..grid.n_nodes() {
        let (k1, k2) = grid.unindex(idx);
        let (s, b) = grid.coords(k1, k2);
        let density = if k2 == 0 {
            rho_v.map(|f| f(s)).unwrap_or(0.0)
        } else {
            rho(s, b)
        };
        if density < 0.0 || !density.is_finite() {
            return Err(Error::domain(format!(
                "initial density must be finite and nonnegative, got {density} at ({s}, {b})"
            )));
        }
        mass[idx] = density * grid.cell_measure(k1, k2);
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain(
            "initial density evaluates to zero everywhere on the grid".to_string(),
        ));
    }
    for m in &mut mass {
        *m /= total;
    }
    Ok(DistributionState {
        t: 0.0,
        grid: *grid,
        mass,
        meta: StateMeta::default(),
    })
}

/// Reusable stepping context: caches the assembled system
/// `I - delta L_h^T` (and its factorization or preconditioner) per distinct
/// step size.
pub struct FpStepper<'a> {
    gen: &'a GeneratorMatrix,
    cfg: SolverConfig,
    systems: HashMap<u64, LinearSystem>,
}

impl<'a> FpStepper<'a> {
    pub fn new(gen: &'a GeneratorMatrix, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(FpStepper { gen, cfg, systems: HashMap::new() })
    }

    fn system(&mut self, delta: f64) -> Result<&LinearSystem> {
        let key = delta.to_bits();
        if !self.systems.contains_key(&key) {
            let a = identity_minus_scaled(self.gen.adjoint(), delta);
            let sys = LinearSystem::new(a, self.cfg.method, self.cfg.preconditioner)?;
            self.systems.insert(key, sys);
        }
        Ok(&self.systems[&key])
    }

    /// One implicit Euler step of size `delta`.
    pub fn step_by(&mut self, state: &DistributionState, delta: f64) -> Result<DistributionState> {
        if state.mass.len() != self.gen.n() {
            return Err(Error::domain(format!(
                "state has {} nodes but generator has {}",
                state.mass.len(),
                self.gen.n()
            )));
        }
        let (rel_tol, max_iter) = (self.cfg.rel_tol, self.cfg.max_iter);
        let sys = self.system(delta)?;
        let total_before: f64 = state.mass.iter().sum();
        // warm start from the current state
        let mut new_mass = state.mass.clone();
        let stats = sys.solve_into(&state.mass, &mut new_mass, rel_tol, max_iter)?;

        let total_raw: f64 = new_mass.iter().sum();
        let mut min_mass = f64::INFINITY;
        for &m in &new_mass {
            min_mass = min_mass.min(m);
        }
        if min_mass < -NEGATIVE_MASS_TOLERANCE {
            return Err(Error::NonFinite(format!(
                "implicit step produced mass {min_mass:.3e} below the clamping tolerance at t = {}",
                state.t
            )));
        }
        let mut clamped_nodes = 0;
        let mut clamped_mass = 0.0;
        if min_mass < 0.0 {
            for m in &mut new_mass {
                if *m < 0.0 {
                    clamped_mass -= *m;
                    *m = 0.0;
                    clamped_nodes += 1;
                }
            }
            let total_clamped: f64 = new_mass.iter().sum();
            if total_clamped > 0.0 {
                let scale = total_raw / total_clamped;
                for m in &mut new_mass {
                    *m *= scale;
                }
            }
        }
        Ok(DistributionState {
            t: state.t + delta,
            grid: state.grid,
            mass: new_mass,
            meta: StateMeta {
                solve_residual: stats.residual,
                solve_iterations: stats.iterations,
                mass_drift: total_raw - total_before,
                min_mass_pre_clamp: min_mass,
                clamped_nodes,
                cumulative_clamped_mass: state.meta.cumulative_clamped_mass + clamped_mass,
            },
        })
    }

    pub fn step(&mut self, state: &DistributionState) -> Result<DistributionState> {
        self.step_by(state, self.cfg.delta)
    }
}

/// Stationary mass vector of a generator: the normalized null vector of
/// `L_h^T`, computed by inverse iteration (each pass is one huge implicit
/// Euler step, so the absorbing/invariant structure is respected exactly).
/// Assumes a unique stationary law.
pub fn stationary_distribution(gen: &GeneratorMatrix) -> Result<Vec<f64>> {
    let n = gen.n();
    let mut max_diag = 0.0f64;
    for i in 0..n {
        max_diag = max_diag.max(gen.rates().get(i, i).abs());
    }
    if max_diag == 0.0 {
        // zero generator: everything is stationary; return uniform
        return Ok(vec![1.0 / n as f64; n]);
    }
    let delta = 1e8 / max_diag;
    let a = identity_minus_scaled(gen.adjoint(), delta);
    let sys = LinearSystem::new(a, SolveMethod::Auto, Preconditioner::Jacobi)?;
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = pi.clone();
    for _ in 0..200 {
        sys.solve_into(&pi.clone(), &mut next, 1e-13, 20_000)?;
        // normalize in L1 (entries may carry tiny negative roundoff)
        let total: f64 = next.iter().sum();
        if !(total.abs() > 0.0) || !total.is_finite() {
            return Err(Error::NonFinite("stationary iteration collapsed".to_string()));
        }
        for v in next.iter_mut() {
            *v /= total;
        }
        let change: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if change <= 1e-13 {
            break;
        }
    }
    let mut clamped = 0.0;
    for v in pi.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-10 {
                return Err(Error::NonFinite(format!(
                    "stationary vector has a significantly negative entry {v:.3e}"
                )));
            }
            clamped -= *v;
            *v = 0.0;
        }
    }
    if clamped > 0.0 {
        let total: f64 = pi.iter().sum();
        for v in pi.iter_mut() {
            *v /= total;
        }
    }
    // residual check: pi should be invariant under L^T
    let mut residual = vec![0.0; n];
    gen.apply_adjoint(&pi, &mut residual);
    let worst = residual.iter().fold(0.0f64, |m, &r| m.max(r.abs()));
    if worst > 1e-8 * max_diag {
        return Err(Error::NonFinite(format!(
            "stationary residual {worst:.3e} too large (max rate {max_diag:.3e})"
        )));
    }
    Ok(pi)
}

/// One implicit Euler step with a fresh context. Prefer [`FpStepper`] (or
/// [`solve_to`]) for repeated stepping: it reuses the factorization.
pub fn step_implicit_euler(
    state: &DistributionState,
    gen: &GeneratorMatrix,
    cfg: &SolverConfig,
) -> Result<DistributionState> {
    FpStepper::new(gen, *cfg)?.step(state)
}

/// March the law forward, returning one state per requested snapshot time.
/// Snapshot times must be sorted and nonnegative; times that are not
/// multiples of `delta` are reached by one shortened final sub-step rather
/// than interpolation. A snapshot at `t = 0` returns the initial state.
pub fn solve_to(
    state0: &DistributionState,
    gen: &GeneratorMatrix,
    cfg: &SolverConfig,
    snapshot_times: &[f64],
) -> Result<Vec<DistributionState>> {
    let mut stepper = FpStepper::new(gen, *cfg)?;
    let mut snapshots = Vec::with_capacity(snapshot_times.len());
    let mut current = state0.clone();
    let mut prev_t = 0.0;
    for (i, &target) in snapshot_times.iter().enumerate() {
        if target < prev_t {
            return Err(Error::domain(format!(
                "snapshot times must be sorted and >= 0, got {target} after {prev_t}"
            )));
        }
        prev_t = target;
        if target == 0.0 && i == 0 {
            snapshots.push(current.clone());
            continue;
        }
        current = advance_to(&mut stepper, current, target)?;
        snapshots.push(current.clone());
    }
    Ok(snapshots)
}

fn advance_to(
    stepper: &mut FpStepper,
    mut state: DistributionState,
    target: f64,
) -> Result<DistributionState> {
    let delta = stepper.cfg.delta;
    // tolerate roundoff when the target is an exact multiple of delta
    let eps = delta * 1e-9;
    while state.t + delta <= target + eps {
        state = stepper.step(&state)?;
    }
    let remainder = target - state.t;
    if remainder > eps {
        state = stepper.step_by(&state, remainder)?;
    }
    state.t = target;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generator_chemostat, CsrMatrix, GeneratorMatrix};
    use crate::model::NoiseKind;
    use crate::presets;
    use approx::assert_relative_eq;

    fn zero_generator(n: usize) -> GeneratorMatrix {
        let rows = (0..n).map(|i| vec![(i, 0.0)]).collect();
        GeneratorMatrix::from_rates(CsrMatrix::from_rows(rows))
    }

    fn gaussian_initial(grid: &Grid, ms: f64, mb: f64, var: f64) -> DistributionState {
        let rho = move |s: f64, b: f64| {
            (-((s - ms).powi(2) + (b - mb).powi(2)) / (2.0 * var)).exp()
        };
        discretize_initial(&rho, None, grid).unwrap()
    }

    #[test]
    fn zero_generator_is_identity_step() {
        let grid = Grid::new(1.0, 1.0, 5, 5).unwrap();
        let gen = zero_generator(grid.n_nodes());
        let state = gaussian_initial(&grid, 0.5, 0.5, 0.05);
        let next = step_implicit_euler(&state, &gen, &SolverConfig::new(0.5)).unwrap();
        for (a, b) in state.mass.iter().zip(&next.mass) {
            assert_relative_eq!(a, b, max_relative = 1e-13);
        }
        assert_eq!(next.t, 0.5);
    }

    #[test]
    fn dirac_initial_mass() {
        let grid = Grid::new(2.0, 1.0, 10, 10).unwrap();
        // washout Dirac at node s = 0.6
        let rho_v = |s: f64| if (s - 0.6).abs() < 1e-12 { 1.0 } else { 0.0 };
        let state = discretize_initial(&|_, _| 0.0, Some(&rho_v), &grid).unwrap();
        assert_eq!(state.mass[grid.index(3, 0)], 1.0);
        assert_eq!(state.total_mass(), 1.0);
        let obs = state.observables();
        assert_eq!(obs.washout_prob, 1.0);
        assert_relative_eq!(obs.mean_s, 0.6, max_relative = 1e-14);
    }

    #[test]
    fn uniform_density_gets_edge_weights() {
        let grid = Grid::new(1.0, 1.0, 4, 4).unwrap();
        let state = discretize_initial(&|_, _| 1.0, None, &grid).unwrap();
        // interior nodes carry h1*h2, edge nodes half of that
        let interior = state.mass[grid.index(2, 2)];
        assert_relative_eq!(state.mass[grid.index(0, 2)], interior / 2.0, max_relative = 1e-13);
        assert_relative_eq!(state.mass[grid.index(4, 4)], interior / 4.0, max_relative = 1e-13);
        assert_eq!(state.mass[grid.index(2, 0)], 0.0); // no washout density given
    }

    #[test]
    fn all_zero_initial_is_error() {
        let grid = Grid::new(1.0, 1.0, 4, 4).unwrap();
        assert!(discretize_initial(&|_, _| 0.0, None, &grid).is_err());
    }

    #[test]
    fn density_roundtrip_reproduces_rho() {
        let grid = Grid::new(2.0, 0.06, 14, 11).unwrap();
        let rho = |s: f64, b: f64| (s + 0.3) * (b + 0.01) + 0.2;
        let state = discretize_initial(&rho, None, &grid).unwrap();
        let density = state.to_density();
        // proportional to rho at every interior node (same constant)
        let ref_idx = grid.index(5, 5);
        let (rs, rb) = grid.coords(5, 5);
        let scale = density.interior[ref_idx] / rho(rs, rb);
        for k2 in 1..=grid.n2 {
            for k1 in 0..=grid.n1 {
                let (s, b) = grid.coords(k1, k2);
                assert_relative_eq!(
                    density.interior[grid.index(k1, k2)],
                    scale * rho(s, b),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn observables_of_initial_gaussian() {
        let grid = presets::monod_grid();
        let state = gaussian_initial(&grid, 0.45, 0.01, 1e-5);
        let obs = state.observables();
        assert!(obs.washout_prob < 1e-3);
        assert_relative_eq!(obs.mean_s, 0.45, epsilon = 1e-3);
        assert_relative_eq!(obs.mean_b, 0.01, epsilon = 1e-3);
        assert_relative_eq!(obs.interior_mass, 1.0 - obs.washout_prob, epsilon = 1e-12);
    }

    #[test]
    fn single_step_neighbor_mass_scales_with_rate() {
        // Dirac at an interior node: after one small step the neighbor mass
        // approximates delta * rate
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let grid = Grid::new(2.0, 0.06, 10, 10).unwrap();
        let gen = build_generator_chemostat(&p, &grid).unwrap();
        let center = grid.index(5, 5);
        let mut mass = vec![0.0; grid.n_nodes()];
        mass[center] = 1.0;
        let state = DistributionState { t: 0.0, grid, mass, meta: StateMeta::default() };
        let delta = 1e-4;
        let next = step_implicit_euler(&state, &gen, &SolverConfig::new(delta)).unwrap();
        for &target in &[center - 1, center + 1, center - 11, center + 11] {
            let rate = gen.rate(center, target);
            assert!(rate > 0.0);
            let expected = delta * rate;
            assert!(
                (next.mass[target] - expected).abs() < 20.0 * expected * delta.max(1e-6),
                "neighbor mass {} vs first-order estimate {}",
                next.mass[target],
                expected
            );
        }
    }

    #[test]
    fn stationary_vector_is_fixed_point() {
        // two-state chain: rates 1 <-> 2, stationary (2/3, 1/3)
        let rows = vec![vec![(0, -1.0), (1, 1.0)], vec![(0, 2.0), (1, -2.0)]];
        let gen = GeneratorMatrix::from_rates(CsrMatrix::from_rows(rows));
        let grid = Grid::new(1.0, 1.0, 2, 2).unwrap(); // placeholder; not used by step
        let state = DistributionState {
            t: 0.0,
            grid,
            mass: vec![2.0 / 3.0, 1.0 / 3.0],
            meta: StateMeta::default(),
        };
        let next = FpStepper::new(&gen, SolverConfig::new(0.7))
            .unwrap()
            .step(&state)
            .unwrap();
        assert_relative_eq!(next.mass[0], 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(next.mass[1], 1.0 / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn snapshots_with_incommensurate_times() {
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let grid = Grid::new(2.0, 0.06, 10, 10).unwrap();
        let gen = build_generator_chemostat(&p, &grid).unwrap();
        let state = gaussian_initial(&grid, 0.45, 0.01, 1e-4);
        let cfg = SolverConfig::new(0.1);
        let snaps = solve_to(&state, &gen, &cfg, &[0.0, 0.25, 0.5]).unwrap();
        assert_eq!(snaps.len(), 3);
        assert_eq!(snaps[0].t, 0.0);
        assert_eq!(snaps[1].t, 0.25);
        assert_eq!(snaps[2].t, 0.5);
        // mass conserved through the shortened sub-step
        for s in &snaps {
            assert!((s.total_mass() - 1.0).abs() < 1e-10);
        }
        // against a straight run at the finer commensurate step
        let fine = solve_to(&state, &gen, &SolverConfig::new(0.05), &[0.5]).unwrap();
        let coarse = &snaps[2];
        let mut diff = 0.0f64;
        for (a, b) in fine[0].mass.iter().zip(&coarse.mass) {
            diff = diff.max((a - b).abs());
        }
        assert!(diff < 0.05, "sub-stepped and fine solutions diverged: {diff}");
    }

    #[test]
    fn empty_snapshot_list() {
        let grid = Grid::new(1.0, 1.0, 4, 4).unwrap();
        let gen = zero_generator(grid.n_nodes());
        let state = gaussian_initial(&grid, 0.5, 0.5, 0.05);
        let snaps = solve_to(&state, &gen, &SolverConfig::new(0.1), &[]).unwrap();
        assert!(snaps.is_empty());
    }

    #[test]
    fn two_half_steps_match_one_full_step_to_second_order() {
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let grid = Grid::new(2.0, 0.06, 20, 20).unwrap();
        let gen = build_generator_chemostat(&p, &grid).unwrap();
        let state = gaussian_initial(&grid, 0.45, 0.01, 1e-4);
        let dist = |a: &DistributionState, b: &DistributionState| -> f64 {
            a.mass.iter().zip(&b.mass).map(|(x, y)| (x - y).abs()).sum()
        };
        let defect = |delta: f64| {
            let mut full = FpStepper::new(&gen, SolverConfig::new(delta)).unwrap();
            let one = full.step(&state).unwrap();
            let mut half = FpStepper::new(&gen, SolverConfig::new(delta / 2.0)).unwrap();
            let mid = half.step(&state).unwrap();
            let two = half.step(&mid).unwrap();
            dist(&one, &two)
        };
        let ratio = defect(0.2) / defect(0.1);
        assert!(ratio > 2.8 && ratio < 5.5, "local defect ratio {ratio} not second order");
    }
}
