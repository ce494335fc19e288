//! Growth laws, chemostat parameters, drift/diffusion coefficient fields,
//! equilibrium analysis and the square-root-diffusion boundary classification.
//!
//! The deterministic model is
//!
//! ```text
//! ds/dt = -k mu(s) b + D (s_in - s)
//! db/dt = (mu(s) - D) b
//! ```
//!
//! and the stochastic version adds independent noises `sigma_1(s) dW1` on the
//! substrate and `sigma_2(b) dW2` on the biomass, with either square-root
//! (`c sqrt(x)`) or linear (`c x`) diffusion coefficients.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Specific growth law `mu(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GrowthFunction {
    /// Non-inhibitory saturating law `mu_max s / (k_s + s)`.
    Monod { mu_max: f64, k_s: f64 },
    /// Inhibitory law `mu_bar s / (k_s + s + s^2/alpha)` with a single
    /// interior maximum at `s = sqrt(k_s alpha)`.
    Haldane { mu_bar: f64, k_s: f64, alpha: f64 },
}

impl GrowthFunction {
    /// Check strict positivity of all parameters.
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            GrowthFunction::Monod { mu_max, k_s } => mu_max > 0.0 && k_s > 0.0,
            GrowthFunction::Haldane { mu_bar, k_s, alpha } => {
                mu_bar > 0.0 && k_s > 0.0 && alpha > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "growth parameters must be strictly positive: {self:?}"
            )))
        }
    }

    /// Growth rate `mu(s)` (1/h). Errors on negative `s`.
    pub fn rate(&self, s: f64) -> Result<f64> {
        if s < 0.0 {
            return Err(Error::domain(format!("negative substrate s = {s}")));
        }
        Ok(self.rate_unchecked(s))
    }

    /// `mu(s)` without the sign check; used in inner loops where `s >= 0`
    /// is maintained by construction.
    #[inline]
    pub fn rate_unchecked(&self, s: f64) -> f64 {
        match *self {
            GrowthFunction::Monod { mu_max, k_s } => mu_max * s / (k_s + s),
            GrowthFunction::Haldane { mu_bar, k_s, alpha } => {
                mu_bar * s / (k_s + s + s * s / alpha)
            }
        }
    }

    /// Analytic derivative `mu'(s)`, used by the Jacobian of the
    /// deterministic system.
    #[inline]
    pub fn rate_derivative(&self, s: f64) -> f64 {
        match *self {
            GrowthFunction::Monod { mu_max, k_s } => {
                let d = k_s + s;
                mu_max * k_s / (d * d)
            }
            GrowthFunction::Haldane { mu_bar, k_s, alpha } => {
                let d = k_s + s + s * s / alpha;
                mu_bar * (k_s - s * s / alpha) / (d * d)
            }
        }
    }
}

/// Diffusion coefficient structure of the stochastic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// `sigma_1 = c1 sqrt(s)`, `sigma_2 = c2 sqrt(b)`; the washout state
    /// `b = 0` is attainable and absorbing.
    SquareRoot,
    /// `sigma_1 = c1 s`, `sigma_2 = c2 b`; the comparison model, which never
    /// reaches `b = 0` from the interior.
    Linear,
}

/// Full parameter set of the stochastic chemostat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemostatParams {
    /// Stoichiometric coefficient (dimensionless).
    pub k: f64,
    /// Dilution rate (1/h).
    pub dilution: f64,
    /// Input substrate concentration (mg/l).
    pub s_in: f64,
    /// Substrate noise intensity.
    pub c1: f64,
    /// Biomass noise intensity.
    pub c2: f64,
    pub noise_kind: NoiseKind,
    pub growth: GrowthFunction,
}

impl ChemostatParams {
    pub fn validate(&self) -> Result<()> {
        self.growth.validate()?;
        if self.k <= 0.0 || self.dilution <= 0.0 || self.s_in <= 0.0 {
            return Err(Error::domain(format!(
                "k, D, s_in must be strictly positive (k={}, D={}, s_in={})",
                self.k, self.dilution, self.s_in
            )));
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(Error::domain(format!(
                "noise intensities must be nonnegative (c1={}, c2={})",
                self.c1, self.c2
            )));
        }
        Ok(())
    }

    /// Drift vector `(f1, f2)` at `(s, b)`, without sign checks.
    #[inline]
    pub fn drift_unchecked(&self, s: f64, b: f64) -> (f64, f64) {
        let mu = self.growth.rate_unchecked(s);
        (
            -self.k * mu * b + self.dilution * (self.s_in - s),
            (mu - self.dilution) * b,
        )
    }

    /// Squared diffusion coefficients `(sigma_1^2, sigma_2^2)` at `(s, b)`.
    #[inline]
    pub fn diffusion_sq_unchecked(&self, s: f64, b: f64) -> (f64, f64) {
        match self.noise_kind {
            NoiseKind::SquareRoot => (self.c1 * self.c1 * s, self.c2 * self.c2 * b),
            NoiseKind::Linear => {
                let s1 = self.c1 * s;
                let s2 = self.c2 * b;
                (s1 * s1, s2 * s2)
            }
        }
    }

    /// Diffusion coefficients `(sigma_1, sigma_2)` at `(s, b)`.
    #[inline]
    pub fn diffusion_unchecked(&self, s: f64, b: f64) -> (f64, f64) {
        match self.noise_kind {
            NoiseKind::SquareRoot => (self.c1 * s.sqrt(), self.c2 * b.sqrt()),
            NoiseKind::Linear => (self.c1 * s, self.c2 * b),
        }
    }

    /// Drift and squared diffusion `(f1, f2, sigma_1^2, sigma_2^2)` with
    /// domain checks on the state.
    pub fn drift_diffusion(&self, s: f64, b: f64) -> Result<(f64, f64, f64, f64)> {
        if s < 0.0 || b < 0.0 {
            return Err(Error::domain(format!(
                "state must be nonnegative, got (s, b) = ({s}, {b})"
            )));
        }
        let (f1, f2) = self.drift_unchecked(s, b);
        let (a1, a2) = self.diffusion_sq_unchecked(s, b);
        Ok((f1, f2, a1, a2))
    }

    /// All equilibria of the deterministic system: the washout point
    /// `(s_in, 0)` plus every admissible interior root of `mu(s) = D` with
    /// `b = (s_in - s)/k`. Roots outside `(0, s_in)` are discarded: they
    /// would carry nonpositive biomass.
    pub fn equilibria(&self) -> Vec<EquilibriumPoint> {
        let mut out = vec![self.classify_equilibrium(self.s_in, 0.0, EquilibriumKind::Washout)];
        for s in self.interior_equilibrium_roots() {
            let b = (self.s_in - s) / self.k;
            out.push(self.classify_equilibrium(s, b, EquilibriumKind::Interior));
        }
        out
    }

    /// Closed-form roots of `mu(s) = D` inside `(0, s_in)`, in increasing
    /// order.
    fn interior_equilibrium_roots(&self) -> Vec<f64> {
        let d = self.dilution;
        let mut roots = Vec::new();
        match self.growth {
            GrowthFunction::Monod { mu_max, k_s } => {
                // mu_max s = D (k_s + s)
                if d < mu_max {
                    roots.push(k_s * d / (mu_max - d));
                }
            }
            GrowthFunction::Haldane { mu_bar, k_s, alpha } => {
                // s^2/alpha + (1 - mu_bar/D) s + k_s = 0
                let a = 1.0 / alpha;
                let b = 1.0 - mu_bar / d;
                let c = k_s;
                let disc = b * b - 4.0 * a * c;
                if disc > 0.0 {
                    // stable quadratic formula
                    let q = -0.5 * (b + b.signum() * disc.sqrt());
                    let (r1, r2) = (q / a, c / q);
                    roots.push(r1.min(r2));
                    roots.push(r1.max(r2));
                } else if disc == 0.0 {
                    roots.push(-b / (2.0 * a));
                }
            }
        }
        roots.retain(|&s| s > 0.0 && s < self.s_in);
        roots
    }

    /// Jacobian of the deterministic drift at `(s, b)`, row-major
    /// `[df1/ds, df1/db, df2/ds, df2/db]`.
    pub fn jacobian(&self, s: f64, b: f64) -> [f64; 4] {
        let mu = self.growth.rate_unchecked(s);
        let dmu = self.growth.rate_derivative(s);
        [
            -self.k * dmu * b - self.dilution,
            -self.k * mu,
            dmu * b,
            mu - self.dilution,
        ]
    }

    fn classify_equilibrium(&self, s: f64, b: f64, kind: EquilibriumKind) -> EquilibriumPoint {
        let eig = eigenvalues_2x2(self.jacobian(s, b));
        let (stability, degenerate) = stability_from_eigenvalues(eig);
        EquilibriumPoint {
            s,
            b,
            kind,
            stability,
            degenerate,
            eigenvalues: eig,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquilibriumKind {
    Washout,
    Interior,
}

/// Linear stability tag from the eigenvalues of the drift Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    /// Both eigenvalue real parts strictly negative.
    Attractive,
    /// At least one real part nonnegative (saddle or source).
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPoint {
    pub s: f64,
    pub b: f64,
    pub kind: EquilibriumKind,
    pub stability: Stability,
    /// Set when an eigenvalue real part is exactly zero, i.e. linear
    /// analysis cannot decide.
    pub degenerate: bool,
    /// Eigenvalues as (re, im) pairs; im = 0 for real spectra.
    pub eigenvalues: [(f64, f64); 2],
}

impl EquilibriumPoint {
    /// True saddle: real eigenvalues of opposite sign.
    pub fn is_saddle(&self) -> bool {
        let [(r1, i1), (r2, i2)] = self.eigenvalues;
        i1 == 0.0 && i2 == 0.0 && r1 * r2 < 0.0
    }
}

/// Eigenvalues of a row-major 2x2 matrix as (re, im) pairs.
pub fn eigenvalues_2x2(m: [f64; 4]) -> [(f64, f64); 2] {
    let tr = m[0] + m[3];
    let det = m[0] * m[3] - m[1] * m[2];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        [((tr - sq) / 2.0, 0.0), ((tr + sq) / 2.0, 0.0)]
    } else {
        let im = (-disc).sqrt() / 2.0;
        [(tr / 2.0, -im), (tr / 2.0, im)]
    }
}

fn stability_from_eigenvalues(eig: [(f64, f64); 2]) -> (Stability, bool) {
    let degenerate = eig.iter().any(|&(re, _)| re == 0.0);
    if eig.iter().all(|&(re, _)| re < 0.0) {
        (Stability::Attractive, degenerate)
    } else {
        (Stability::Unstable, degenerate)
    }
}

/// Boundary behavior at 0 of the scalar square-root diffusion
/// `d xi = (a + b xi) dt + sigma sqrt(xi) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CirBoundary {
    /// `a >= sigma^2/2`: the origin is never reached.
    NeverReachesZero,
    /// `0 < a < sigma^2/2` and `b <= 0`: the origin is reached almost
    /// surely (and the process reflects).
    ReachesZeroAs,
    /// `0 < a < sigma^2/2` and `b > 0`: the origin is reached with a
    /// probability strictly between 0 and 1.
    ReachesZeroWithProb01,
    /// `a = 0`: the origin is absorbing.
    ZeroAbsorbing,
}

/// Classify the origin of the square-root diffusion with drift
/// `a + b xi` and noise coefficient `sigma`.
pub fn cir_boundary_class(a: f64, b: f64, sigma: f64) -> Result<CirBoundary> {
    if a < 0.0 || sigma <= 0.0 {
        return Err(Error::domain(format!(
            "require a >= 0 and sigma > 0, got a = {a}, sigma = {sigma}"
        )));
    }
    if a == 0.0 {
        return Ok(CirBoundary::ZeroAbsorbing);
    }
    let half_sigma_sq = 0.5 * sigma * sigma;
    if a >= half_sigma_sq {
        Ok(CirBoundary::NeverReachesZero)
    } else if b <= 0.0 {
        Ok(CirBoundary::ReachesZeroAs)
    } else {
        Ok(CirBoundary::ReachesZeroWithProb01)
    }
}
