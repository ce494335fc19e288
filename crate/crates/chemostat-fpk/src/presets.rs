//! Canonical parameter sets used by the built-in experiments and throughout
//! the test suite: a Monod chemostat run at two noise levels for the
//! model-comparison study, and a Haldane (inhibitory) chemostat whose
//! deterministic system has two interior equilibria and an attractive
//! washout state.

use crate::grid::Grid;
use crate::model::{ChemostatParams, GrowthFunction, NoiseKind};

/// Monod model of the comparison experiment:
/// k = 10, D = 0.4, s_in = 1.3, mu_max = 3, k_s = 6.
pub fn monod_params(c: f64, noise_kind: NoiseKind) -> ChemostatParams {
    ChemostatParams {
        k: 10.0,
        dilution: 0.4,
        s_in: 1.3,
        c1: c,
        c2: c,
        noise_kind,
        growth: GrowthFunction::Monod {
            mu_max: 3.0,
            k_s: 6.0,
        },
    }
}

/// Grid of the comparison experiment: [0,2] x [0,0.06] with 70 intervals per
/// axis (71 x 71 nodes).
pub fn monod_grid() -> Grid {
    Grid::new(2.0, 0.06, 70, 70).expect("static grid")
}

/// Haldane model: k = 2, D = 0.1, s_in = 2.4, mu_bar = 5, k_s = 10,
/// alpha = 0.03, c1 = c2 = 0.01, square-root noise.
pub fn haldane_params() -> ChemostatParams {
    ChemostatParams {
        k: 2.0,
        dilution: 0.1,
        s_in: 2.4,
        c1: 0.01,
        c2: 0.01,
        noise_kind: NoiseKind::SquareRoot,
        growth: GrowthFunction::Haldane {
            mu_bar: 5.0,
            k_s: 10.0,
            alpha: 0.03,
        },
    }
}

/// Haldane grid: [0,3] x [0,2.5] with `n` intervals per axis (full run uses
/// n = 300, i.e. 301 x 301 nodes).
pub fn haldane_grid(n: usize) -> Grid {
    Grid::new(3.0, 2.5, n, n).expect("static grid")
}
