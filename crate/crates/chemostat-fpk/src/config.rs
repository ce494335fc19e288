//! TOML experiment configuration: parsing, validation with key paths, and
//! defaults. Unknown keys are rejected. A parsed config revalidates every
//! module-level invariant before any computation starts, so downstream code
//! never sees an out-of-range parameter.

use crate::error::{Error, Result};
use crate::fp::SolverConfig;
use crate::grid::Grid;
use crate::linalg::{Preconditioner, SolveMethod};
use crate::model::{ChemostatParams, GrowthFunction, NoiseKind};
use crate::sde::{GaussianInitialLaw, SimConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelBlock,
    pub grid: GridBlock,
    pub time: TimeBlock,
    pub initial: InitialBlock,
    #[serde(default)]
    pub sde: SdeBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub compare: CompareBlock,
    #[serde(default)]
    pub phase: PhaseBlock,
    #[serde(default)]
    pub validate: ValidateBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub growth: GrowthFunction,
    pub k: f64,
    #[serde(rename = "D")]
    pub dilution: f64,
    pub s_in: f64,
    pub c1: f64,
    pub c2: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
}

fn default_noise() -> NoiseKind {
    NoiseKind::SquareRoot
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub s_max: f64,
    pub b_max: f64,
    pub n1: usize,
    pub n2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    /// Implicit Euler step (h).
    pub delta: f64,
    pub t_end: f64,
    /// Snapshot times; defaults to `[t_end]`.
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub mean_s: f64,
    pub var_s: f64,
    pub mean_b: f64,
    pub var_b: f64,
    /// Fraction of the initial mass placed on the washout boundary as a
    /// Gaussian density in `s` (the optional singular component of the
    /// initial law).
    #[serde(default)]
    pub washout_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SdeBlock {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl Default for SdeBlock {
    fn default() -> Self {
        SdeBlock { dt: 1e-3, n_paths: 100_000, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverBlock {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub preconditioner: Preconditioner,
    pub method: SolveMethod,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            rel_tol: 1e-12,
            max_iter: 2000,
            preconditioner: Preconditioner::Jacobi,
            method: SolveMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareBlock {
    /// Noise intensities of the model-comparison run (cases "a" and "b").
    pub noise_levels: Vec<f64>,
}

impl Default for CompareBlock {
    fn default() -> Self {
        CompareBlock { noise_levels: vec![0.005, 0.02] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseBlock {
    /// Initial points of the plotted trajectories.
    pub initial_points: Vec<[f64; 2]>,
    /// RK4 step for trajectories.
    pub dt: f64,
    /// Arc-length cap for the separatrix trace.
    pub separatrix_arc_length: f64,
    /// Polyline resolution of the separatrix.
    pub separatrix_step: f64,
}

impl Default for PhaseBlock {
    fn default() -> Self {
        PhaseBlock {
            initial_points: vec![[0.45, 0.01], [1.5, 0.68]],
            dt: 0.01,
            separatrix_arc_length: 6.0,
            separatrix_step: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateBlock {
    /// Macro-cell edge, in fine intervals, of the coarse total-variation
    /// comparison.
    pub coarsen: usize,
}

impl Default for ValidateBlock {
    fn default() -> Self {
        ValidateBlock { coarsen: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// Output directory; overridden by `--out`.
    pub dir: String,
    /// Emit a gnuplot script alongside the CSV files.
    pub gnuplot: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock { dir: "out".to_string(), gnuplot: false }
    }
}

impl ExperimentConfig {
    /// Parse and fully validate a TOML document.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::config("<config>", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        m.growth
            .validate()
            .map_err(|e| Error::config("model.growth", e.to_string()))?;
        require(m.k > 0.0, "model.k", "must be > 0")?;
        require(m.dilution > 0.0, "model.D", "must be > 0")?;
        require(m.s_in > 0.0, "model.s_in", "must be > 0")?;
        require(m.c1 >= 0.0, "model.c1", "must be >= 0")?;
        require(m.c2 >= 0.0, "model.c2", "must be >= 0")?;
        let g = &self.grid;
        require(g.s_max > 0.0, "grid.s_max", "must be > 0")?;
        require(g.b_max > 0.0, "grid.b_max", "must be > 0")?;
        require(g.n1 >= 2, "grid.n1", "needs at least 2 intervals")?;
        require(g.n2 >= 2, "grid.n2", "needs at least 2 intervals")?;
        let t = &self.time;
        require(t.delta > 0.0, "time.delta", "must be > 0")?;
        require(t.t_end >= 0.0, "time.t_end", "must be >= 0")?;
        let mut prev = 0.0;
        for &s in &t.snapshots {
            require(
                s >= 0.0 && s <= t.t_end,
                "time.snapshots",
                "must lie within [0, t_end]",
            )?;
            require(s >= prev, "time.snapshots", "must be sorted")?;
            prev = s;
        }
        let i = &self.initial;
        require(i.mean_s >= 0.0, "initial.mean_s", "must be >= 0")?;
        require(i.mean_b >= 0.0, "initial.mean_b", "must be >= 0")?;
        require(i.var_s >= 0.0, "initial.var_s", "must be >= 0")?;
        require(i.var_b >= 0.0, "initial.var_b", "must be >= 0")?;
        require(
            (0.0..=1.0).contains(&i.washout_fraction),
            "initial.washout_fraction",
            "must lie in [0, 1]",
        )?;
        require(self.sde.dt > 0.0, "sde.dt", "must be > 0")?;
        require(self.sde.n_paths >= 1, "sde.n_paths", "must be >= 1")?;
        require(
            self.solver.rel_tol > 0.0 && self.solver.rel_tol < 1.0,
            "solver.rel_tol",
            "must lie in (0, 1)",
        )?;
        require(self.solver.max_iter >= 1, "solver.max_iter", "must be >= 1")?;
        for &c in &self.compare.noise_levels {
            require(c >= 0.0, "compare.noise_levels", "must be >= 0")?;
        }
        require(self.validate.coarsen >= 1, "validate.coarsen", "must be >= 1")?;
        require(self.phase.dt > 0.0, "phase.dt", "must be > 0")?;
        require(
            self.phase.separatrix_step > 0.0
                && self.phase.separatrix_arc_length > self.phase.separatrix_step,
            "phase.separatrix_step",
            "need 0 < step < arc length bound",
        )?;
        Ok(())
    }

    pub fn params(&self) -> ChemostatParams {
        ChemostatParams {
            k: self.model.k,
            dilution: self.model.dilution,
            s_in: self.model.s_in,
            c1: self.model.c1,
            c2: self.model.c2,
            noise_kind: self.model.noise,
            growth: self.model.growth,
        }
    }

    pub fn make_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.s_max, self.grid.b_max, self.grid.n1, self.grid.n2)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            delta: self.time.delta,
            rel_tol: self.solver.rel_tol,
            max_iter: self.solver.max_iter,
            preconditioner: self.solver.preconditioner,
            method: self.solver.method,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sde.dt,
            t_end: self.time.t_end,
            n_paths: self.sde.n_paths,
            seed: self.sde.seed,
            initial: GaussianInitialLaw {
                mean_s: self.initial.mean_s,
                var_s: self.initial.var_s,
                mean_b: self.initial.mean_b,
                var_b: self.initial.var_b,
            },
        }
    }

    /// Snapshot times, defaulting to the final time.
    pub fn snapshot_times(&self) -> Vec<f64> {
        if self.time.snapshots.is_empty() {
            vec![self.time.t_end]
        } else {
            self.time.snapshots.clone()
        }
    }
}

fn require(cond: bool, path: &str, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::config(path, msg))
    }
}

/// The comparison experiment configuration (Monod growth, 71 x 71 grid).
pub fn monod_comparison_toml() -> &'static str {
    r#"# Monod chemostat, model-comparison experiment
[model]
growth = { kind = "monod", mu_max = 3.0, k_s = 6.0 }
k = 10.0
D = 0.4
s_in = 1.3
c1 = 0.005
c2 = 0.005
noise = "square-root"

[grid]
s_max = 2.0
b_max = 0.06
n1 = 70
n2 = 70

[time]
delta = 0.1
t_end = 20.0
snapshots = [1.0, 5.0, 10.0, 15.0, 20.0]

[initial]
mean_s = 0.45
var_s = 1e-5
mean_b = 0.01
var_b = 1e-5

[sde]
dt = 1e-3
n_paths = 100000
seed = 42
"#
}

/// The Haldane experiment configuration (301 x 301 grid, nine snapshots).
pub fn haldane_toml() -> &'static str {
    r#"# Haldane chemostat, washout-mass experiment
[model]
growth = { kind = "haldane", mu_bar = 5.0, k_s = 10.0, alpha = 0.03 }
k = 2.0
D = 0.1
s_in = 2.4
c1 = 0.01
c2 = 0.01
noise = "square-root"

[grid]
s_max = 3.0
b_max = 2.5
n1 = 300
n2 = 300

[time]
delta = 0.25
t_end = 80.0
snapshots = [0.0, 4.0, 24.0, 32.0, 44.0, 52.0, 68.0, 72.0, 80.0]

[initial]
mean_s = 1.5
var_s = 1e-5
mean_b = 0.68
var_b = 1e-5

[sde]
dt = 1e-3
n_paths = 100000
seed = 42
"#
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_configs_parse() {
        let cfg = ExperimentConfig::parse(monod_comparison_toml()).unwrap();
        assert_eq!(cfg.model.dilution, 0.4);
        assert_eq!(cfg.grid.n1, 70);
        let h = ExperimentConfig::parse(haldane_toml()).unwrap();
        assert_eq!(h.model.k, 2.0);
        assert_eq!(h.time.snapshots.len(), 9);
        assert_eq!(
            h.model.growth,
            GrowthFunction::Haldane { mu_bar: 5.0, k_s: 10.0, alpha: 0.03 }
        );
    }

    #[test]
    fn roundtrip_is_identity() {
        let cfg = ExperimentConfig::parse(monod_comparison_toml()).unwrap();
        let text = cfg.to_toml();
        let again = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn negative_dilution_names_the_key() {
        let text = monod_comparison_toml().replace("D = 0.4", "D = -0.4");
        let err = ExperimentConfig::parse(&text).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "model.D"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let text = format!("{}\nbogus_key = 1\n", monod_comparison_toml());
        assert!(ExperimentConfig::parse(&text).is_err());
        let text = monod_comparison_toml().replace("[sde]", "[sde]\nwarp = 9\n");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn missing_required_key_rejected() {
        let text = monod_comparison_toml().replace("s_in = 1.3\n", "");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn unsorted_snapshots_rejected() {
        let text = monod_comparison_toml()
            .replace("snapshots = [1.0, 5.0, 10.0, 15.0, 20.0]", "snapshots = [5.0, 1.0]");
        assert!(ExperimentConfig::parse(&text).is_err());
    }
}
