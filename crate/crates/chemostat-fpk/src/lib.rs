//! Stochastic chemostat toolbox: truncated Euler-Maruyama simulation of the
//! two-dimensional chemostat diffusion, upwind Markov-chain discretization of
//! its generator, and implicit-Euler evolution of the resulting forward
//! Kolmogorov equation, including the singular washout component carried by
//! the `b = 0` boundary row.
//!
//! The crate is organized around the pipeline
//!
//! ```text
//! model -> grid -> generator -> fp        (density evolution)
//!       \-> sde                           (Monte Carlo cross-check)
//!       \-> phase                         (deterministic trajectories, separatrix)
//! ```
//!
//! with `config`/`experiment`/`output` providing the reproducible-experiment
//! CLI layer on top.
//!
//! Data-parallel inner loops (path ensembles, generator assembly, sparse
//! matrix-vector products) run on rayon when the default `parallel` feature is
//! enabled and fall back to plain sequential loops without it. Results are
//! bit-identical either way: per-path RNG streams are derived from the seed
//! and path index, and no floating-point reduction order depends on the
//! thread count.

pub mod config;
pub mod error;
pub mod experiment;
pub mod fp;
pub mod generator;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod output;
pub mod phase;
pub mod presets;
pub mod sde;

pub use error::{Error, Result};
pub use model::{ChemostatParams, GrowthFunction, NoiseKind};

/// Iteration helpers that dispatch to rayon or to sequential loops depending
/// on the `parallel` feature. Only order-independent maps go through here;
/// reductions that are sensitive to floating-point association stay serial.
pub(crate) mod par {
    #[cfg(feature = "parallel")]
    pub fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    pub fn map_indexed<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
        (0..n).map(f).collect()
    }

    /// In-place elementwise fill: `out[i] = f(i)`.
    #[cfg(feature = "parallel")]
    pub fn fill_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(out: &mut [T], f: F) {
        use rayon::prelude::*;
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
    }

    #[cfg(not(feature = "parallel"))]
    pub fn fill_indexed<T, F: Fn(usize) -> T>(out: &mut [T], f: F) {
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }
}
