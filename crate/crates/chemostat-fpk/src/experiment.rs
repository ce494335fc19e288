//! Experiment kinds behind the CLI: plain Fokker-Planck and SDE runs, the
//! two-model comparison, the Haldane snapshot study, the deterministic phase
//! portrait, and the Fokker-Planck-versus-Monte-Carlo validation. Every kind
//! is deterministic given (config, seed): outputs are bit-identical across
//! reruns and thread counts.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fp::{discretize_initial, DistributionState, FpStepper, SolverConfig};
use crate::generator::build_generator_chemostat;
use crate::grid::Grid;
use crate::model::{ChemostatParams, NoiseKind};
use crate::output::{
    self, GridInfo, Manifest, OutputWriter, ToolInfo,
};
use crate::sde::{coarsen_mass, simulate_ensemble, total_variation};
use crate::phase;
use serde_json::json;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fp,
    Sde,
    CompareModels,
    HaldaneSnapshots,
    PhasePortrait,
    Validate,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Fp => "fp",
            ExperimentKind::Sde => "sde",
            ExperimentKind::CompareModels => "compare_models",
            ExperimentKind::HaldaneSnapshots => "haldane_snapshots",
            ExperimentKind::PhasePortrait => "phase_portrait",
            ExperimentKind::Validate => "validate",
        }
    }
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp" => Ok(ExperimentKind::Fp),
            "sde" => Ok(ExperimentKind::Sde),
            "compare_models" | "compare-models" => Ok(ExperimentKind::CompareModels),
            "haldane_snapshots" | "haldane-snapshots" => Ok(ExperimentKind::HaldaneSnapshots),
            "phase_portrait" | "phase-portrait" => Ok(ExperimentKind::PhasePortrait),
            "validate" => Ok(ExperimentKind::Validate),
            other => Err(Error::config(
                "kind",
                format!("unknown experiment kind `{other}`"),
            )),
        }
    }
}

/// Run one experiment, writing outputs into `out_dir`. Returns the manifest.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    out_dir: &Path,
) -> Result<Manifest> {
    cfg.validate()?;
    // fail on unwritable output before any computation
    let writer = OutputWriter::create(out_dir)?;
    let run = || -> Result<(OutputWriter, serde_json::Value)> {
        let mut writer = writer;
        let summary = match kind {
            ExperimentKind::Fp => run_fp(cfg, &mut writer)?,
            ExperimentKind::Sde => run_sde(cfg, &mut writer)?,
            ExperimentKind::CompareModels => run_compare(cfg, &mut writer)?,
            ExperimentKind::HaldaneSnapshots => run_haldane(cfg, &mut writer)?,
            ExperimentKind::PhasePortrait => run_phase(cfg, &mut writer)?,
            ExperimentKind::Validate => run_validate(cfg, &mut writer)?,
        };
        Ok((writer, summary))
    };
    match run() {
        Ok((writer, summary)) => {
            let grid = cfg.make_grid()?;
            writer.finish(Manifest {
                tool: ToolInfo::current(),
                kind: kind.name().to_string(),
                config_sha256: output::sha256_hex(&cfg.to_toml()),
                seed: cfg.sde.seed,
                grid: GridInfo {
                    s_max: grid.s_max,
                    b_max: grid.b_max,
                    n1: grid.n1,
                    n2: grid.n2,
                    h1: grid.h1(),
                    h2: grid.h2(),
                },
                summary,
                files: Vec::new(),
            })
        }
        Err(e) => Err(e),
    }
}

/// Gaussian product density of the configured initial law.
fn initial_state(cfg: &ExperimentConfig, grid: &Grid) -> Result<DistributionState> {
    let i = cfg.initial;
    let rho = move |s: f64, b: f64| {
        let zs = if i.var_s > 0.0 {
            (s - i.mean_s).powi(2) / (2.0 * i.var_s)
        } else if s == i.mean_s {
            0.0
        } else {
            return 0.0;
        };
        let zb = if i.var_b > 0.0 {
            (b - i.mean_b).powi(2) / (2.0 * i.var_b)
        } else if b == i.mean_b {
            0.0
        } else {
            return 0.0;
        };
        (1.0 - i.washout_fraction) * (-(zs + zb)).exp()
    };
    let rho_v = move |s: f64| {
        if i.washout_fraction == 0.0 {
            return 0.0;
        }
        let zs = if i.var_s > 0.0 {
            (s - i.mean_s).powi(2) / (2.0 * i.var_s)
        } else if s == i.mean_s {
            0.0
        } else {
            return 0.0;
        };
        i.washout_fraction * (-zs).exp()
    };
    if i.washout_fraction > 0.0 {
        discretize_initial(&rho, Some(&rho_v), grid)
    } else {
        discretize_initial(&rho, None, grid)
    }
}

struct FpRun {
    series: Vec<(f64, f64, f64, f64, f64)>,
    snapshots: Vec<DistributionState>,
    final_state: DistributionState,
}

/// March the law to `t_end`, recording the scalar series at every step and
/// full states at the snapshot times (assumed sorted).
fn march_fp(
    params: &ChemostatParams,
    grid: &Grid,
    solver: &SolverConfig,
    state0: DistributionState,
    t_end: f64,
    snapshot_times: &[f64],
) -> Result<FpRun> {
    let gen = build_generator_chemostat(params, grid)?;
    let mut stepper = FpStepper::new(&gen, *solver)?;
    let mut state = state0;
    let mut series = Vec::new();
    let mut snapshots = Vec::new();
    let mut snap_cursor = 0usize;
    let eps = solver.delta * 1e-9;

    let push_row = |series: &mut Vec<(f64, f64, f64, f64, f64)>, st: &DistributionState| {
        let obs = st.observables();
        series.push((st.t, obs.washout_prob, obs.mean_s, obs.mean_b, st.meta.mass_drift));
    };
    push_row(&mut series, &state);
    while snap_cursor < snapshot_times.len() && snapshot_times[snap_cursor] <= eps {
        snapshots.push(state.clone());
        snap_cursor += 1;
    }
    while t_end - state.t > eps {
        // shorten the step when a snapshot time falls inside it
        let mut next_t = (state.t + solver.delta).min(t_end);
        if snap_cursor < snapshot_times.len() {
            next_t = next_t.min(snapshot_times[snap_cursor]);
        }
        state = stepper.step_by(&state, next_t - state.t)?;
        state.t = next_t;
        push_row(&mut series, &state);
        while snap_cursor < snapshot_times.len()
            && snapshot_times[snap_cursor] - state.t <= eps
        {
            snapshots.push(state.clone());
            snap_cursor += 1;
        }
    }
    Ok(FpRun { series, snapshots, final_state: state })
}

fn snapshot_label(t: f64) -> String {
    if (t - t.round()).abs() < 1e-9 {
        format!("{:04}", t.round() as i64)
    } else {
        format!("{t}").replace('.', "p")
    }
}

fn write_density_snapshots(
    writer: &mut OutputWriter,
    snapshots: &[DistributionState],
) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for st in snapshots {
        let field = st.to_density();
        let label = snapshot_label(st.t);
        let p_name = format!("p_t{label}.csv");
        let q_name = format!("q_t{label}.csv");
        writer.write_file(&p_name, &output::interior_density_csv(&field))?;
        writer.write_file(&q_name, &output::washout_density_csv(&field))?;
        names.push(p_name);
        names.push(q_name);
    }
    Ok(names)
}

fn run_fp(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let grid = cfg.make_grid()?;
    let params = cfg.params();
    let state0 = initial_state(cfg, &grid)?;
    let run = march_fp(
        &params,
        &grid,
        &cfg.solver_config(),
        state0,
        cfg.time.t_end,
        &cfg.snapshot_times(),
    )?;
    writer.write_file("series.csv", &output::scalar_series_csv(&run.series))?;
    write_density_snapshots(writer, &run.snapshots)?;
    if cfg.output.gnuplot {
        writer.write_file(
            "plot.gp",
            &output::gnuplot_series_script(&["series.csv".to_string()]),
        )?;
    }
    let obs = run.final_state.observables();
    Ok(json!({
        "t_end": run.final_state.t,
        "washout_prob": obs.washout_prob,
        "mean_S": obs.mean_s,
        "mean_B": obs.mean_b,
        "min_mass_pre_clamp": run.final_state.meta.min_mass_pre_clamp,
        "cumulative_clamped_mass": run.final_state.meta.cumulative_clamped_mass,
    }))
}

fn run_sde(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let params = cfg.params();
    let sim = cfg.sim_config();
    let times = cfg.snapshot_times();
    let ensemble = simulate_ensemble(&params, &sim, &times)?;
    writer.write_file("ensemble.csv", &output::ensemble_csv(&ensemble))?;
    let mut rows = Vec::new();
    for &t in &times {
        rows.push((t, ensemble.washout_fraction(t)?, 0.0, 0.0, 0.0));
    }
    let mut csv = String::from("t,washout_fraction\n");
    for &(t, w, ..) in &rows {
        csv.push_str(&format!("{},{}\n", output::fmt_f64(t), output::fmt_f64(w)));
    }
    writer.write_file("washout_fraction.csv", &csv)?;
    Ok(json!({
        "n_paths": ensemble.n_paths(),
        "n_failed": ensemble.n_failed,
        "washout_fraction_final": ensemble.washout_fraction(*times.last().unwrap())?,
    }))
}

fn run_compare(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let grid = cfg.make_grid()?;
    let solver = cfg.solver_config();
    let mut summary = serde_json::Map::new();
    let mut files = Vec::new();
    for (model_no, kind) in [(1, NoiseKind::SquareRoot), (2, NoiseKind::Linear)] {
        for (level_idx, &c) in cfg.compare.noise_levels.iter().enumerate() {
            let case = format!(
                "{}{}",
                model_no,
                char::from(b'a' + u8::try_from(level_idx % 26).unwrap())
            );
            let mut params = cfg.params();
            params.noise_kind = kind;
            params.c1 = c;
            params.c2 = c;
            let state0 = initial_state(cfg, &grid)?;
            let run = march_fp(&params, &grid, &solver, state0, cfg.time.t_end, &[])?;
            let name = format!("washout_case_{case}.csv");
            writer.write_file(&name, &output::scalar_series_csv(&run.series))?;
            files.push(name);
            summary.insert(
                format!("washout_final_case_{case}"),
                json!(run.final_state.observables().washout_prob),
            );
        }
    }
    if cfg.output.gnuplot {
        writer.write_file("plot.gp", &output::gnuplot_series_script(&files))?;
    }
    Ok(serde_json::Value::Object(summary))
}

fn run_haldane(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let grid = cfg.make_grid()?;
    let params = cfg.params();
    let state0 = initial_state(cfg, &grid)?;
    let run = march_fp(
        &params,
        &grid,
        &cfg.solver_config(),
        state0,
        cfg.time.t_end,
        &cfg.snapshot_times(),
    )?;
    writer.write_file("series.csv", &output::scalar_series_csv(&run.series))?;
    write_density_snapshots(writer, &run.snapshots)?;
    // deterministic overlays: trajectory from the initial mean, separatrix
    let tr = phase::integrate(
        &params,
        (cfg.initial.mean_s, cfg.initial.mean_b),
        cfg.time.t_end,
        cfg.phase.dt,
    )?;
    writer.write_file("trajectory.csv", &output::trajectory_csv(&tr))?;
    let sep = phase::separatrix(
        &params,
        grid.s_max,
        grid.b_max,
        cfg.phase.separatrix_arc_length,
        cfg.phase.separatrix_step,
    )?;
    writer.write_file("separatrix.csv", &output::polyline_csv(&sep.points))?;
    let obs = run.final_state.observables();
    Ok(json!({
        "t_end": run.final_state.t,
        "washout_prob": obs.washout_prob,
        "snapshots": run.snapshots.len(),
    }))
}

fn run_phase(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let params = cfg.params();
    let grid = cfg.make_grid()?;
    let eqs = params.equilibria();
    writer.write_file("equilibria.csv", &output::equilibria_csv(&eqs))?;
    for (i, &[s, b]) in cfg.phase.initial_points.iter().enumerate() {
        let tr = phase::integrate(&params, (s, b), cfg.time.t_end, cfg.phase.dt)?;
        writer.write_file(&format!("trajectory_{i}.csv"), &output::trajectory_csv(&tr))?;
    }
    let has_saddle = eqs.iter().any(|e| e.is_saddle());
    if has_saddle {
        let sep = phase::separatrix(
            &params,
            grid.s_max,
            grid.b_max,
            cfg.phase.separatrix_arc_length,
            cfg.phase.separatrix_step,
        )?;
        writer.write_file("separatrix.csv", &output::polyline_csv(&sep.points))?;
    }
    Ok(json!({
        "equilibria": eqs.len(),
        "has_saddle": has_saddle,
        "trajectories": cfg.phase.initial_points.len(),
    }))
}

fn run_validate(cfg: &ExperimentConfig, writer: &mut OutputWriter) -> Result<serde_json::Value> {
    let grid = cfg.make_grid()?;
    let params = cfg.params();
    let times = cfg.snapshot_times();
    let state0 = initial_state(cfg, &grid)?;
    let run = march_fp(
        &params,
        &grid,
        &cfg.solver_config(),
        state0,
        cfg.time.t_end,
        &times,
    )?;
    let ensemble = simulate_ensemble(&params, &cfg.sim_config(), &times)?;
    let mut csv = String::from("t,tv_fine,tv_coarse,fp_washout,mc_washout\n");
    let mut last = (0.0, 0.0);
    for st in &run.snapshots {
        let hist = ensemble.empirical_distribution(st.t, &grid)?;
        let tv_fine = total_variation(&st.mass, &hist.mass);
        let tv_coarse = total_variation(
            &coarsen_mass(&st.mass, &grid, cfg.validate.coarsen),
            &coarsen_mass(&hist.mass, &grid, cfg.validate.coarsen),
        );
        let fp_w = st.washout_mass();
        let mc_w = ensemble.washout_fraction(st.t)?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            output::fmt_f64(st.t),
            output::fmt_f64(tv_fine),
            output::fmt_f64(tv_coarse),
            output::fmt_f64(fp_w),
            output::fmt_f64(mc_w)
        ));
        last = (tv_fine, tv_coarse);
    }
    writer.write_file("validation.csv", &csv)?;
    Ok(json!({
        "snapshots": run.snapshots.len(),
        "tv_fine_final": last.0,
        "tv_coarse_final": last.1,
        "coarsen": cfg.validate.coarsen,
    }))
}
