//! Deterministic chemostat dynamics: fixed-step RK4 trajectories, linear
//! stability of equilibria, and the separatrix (basin boundary) of the
//! Haldane configuration, computed as the stable manifold of the interior
//! saddle.

use crate::error::{Error, Result};
use crate::model::{ChemostatParams, EquilibriumPoint, Stability};

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<(f64, f64)>,
    pub dt: f64,
    pub method: &'static str,
    /// Steps on which a tiny negative excursion was clamped back to zero.
    pub clamped_steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> (f64, f64) {
        *self.states.last().expect("trajectory never empty")
    }
}

#[inline]
fn rk4_step(p: &ChemostatParams, x: (f64, f64), dt: f64) -> (f64, f64) {
    let f = |(s, b): (f64, f64)| p.drift_unchecked(s.max(0.0), b.max(0.0));
    let k1 = f(x);
    let k2 = f((x.0 + 0.5 * dt * k1.0, x.1 + 0.5 * dt * k1.1));
    let k3 = f((x.0 + 0.5 * dt * k2.0, x.1 + 0.5 * dt * k2.1));
    let k4 = f((x.0 + dt * k3.0, x.1 + dt * k3.1));
    (
        x.0 + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        x.1 + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
    )
}

/// Classical RK4 integration of the deterministic system. The exact flow
/// preserves the nonnegative quadrant; roundoff-scale negative excursions
/// are clamped to zero and counted.
pub fn integrate(
    p: &ChemostatParams,
    x0: (f64, f64),
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x0.0 < 0.0 || x0.1 < 0.0 {
        return Err(Error::domain(format!("initial state must be nonnegative, got {x0:?}")));
    }
    if !(dt > 0.0) || t_end < 0.0 {
        return Err(Error::domain(format!("need dt > 0 and t_end >= 0, got dt={dt}, t_end={t_end}")));
    }
    let n_steps = (t_end / dt).round() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut x = x0;
    let mut clamped = 0;
    times.push(0.0);
    states.push(x);
    for i in 1..=n_steps {
        let mut next = rk4_step(p, x, dt);
        if !next.0.is_finite() || !next.1.is_finite() {
            return Err(Error::NonFinite(format!(
                "trajectory diverged at t = {} from {x:?}",
                i as f64 * dt
            )));
        }
        if next.0 < 0.0 || next.1 < 0.0 {
            next.0 = next.0.max(0.0);
            next.1 = next.1.max(0.0);
            clamped += 1;
        }
        x = next;
        times.push(i as f64 * dt);
        states.push(x);
    }
    Ok(Trajectory { times, states, dt, method: "rk4", clamped_steps: clamped })
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    pub eigenvalues: [(f64, f64); 2],
    pub stability: Stability,
    pub degenerate: bool,
}

/// Eigenvalues and stability tag of an equilibrium candidate. Errors if the
/// drift residual at the point exceeds `1e-8`.
pub fn stability(p: &ChemostatParams, s: f64, b: f64) -> Result<StabilityReport> {
    let (f1, f2) = p.drift_unchecked(s, b);
    let residual = f1.abs().max(f2.abs());
    if residual > 1e-8 {
        return Err(Error::domain(format!(
            "({s}, {b}) is not an equilibrium: |f| = {residual:.3e} > 1e-8"
        )));
    }
    let eig = crate::model::eigenvalues_2x2(p.jacobian(s, b));
    let degenerate = eig.iter().any(|&(re, _)| re == 0.0);
    let stability = if eig.iter().all(|&(re, _)| re < 0.0) {
        Stability::Attractive
    } else {
        Stability::Unstable
    };
    Ok(StabilityReport { eigenvalues: eig, stability, degenerate })
}

/// Stable manifold of the interior saddle, traced backward in time from two
/// seeds offset by `+-eps` along the stable eigenvector and returned as one
/// ordered polyline through the saddle, clipped to
/// `[0, s_max] x [0, b_max]`.
#[derive(Debug, Clone)]
pub struct Separatrix {
    pub points: Vec<(f64, f64)>,
    pub saddle: EquilibriumPoint,
}

impl Separatrix {
    /// Biomass values where the polyline crosses the vertical line at `s`
    /// (linear interpolation along segments).
    pub fn crossings_at_s(&self, s: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for w in self.points.windows(2) {
            let (s0, b0) = w[0];
            let (s1, b1) = w[1];
            if (s0 - s) * (s1 - s) <= 0.0 && s0 != s1 {
                let t = (s - s0) / (s1 - s0);
                if (0.0..=1.0).contains(&t) {
                    out.push(b0 + t * (b1 - b0));
                }
            }
        }
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        out
    }
}

/// Compute the separatrix. `arc_length_bound` caps the traced length of each
/// branch; `step` is the arc-length resolution of the polyline.
pub fn separatrix(
    p: &ChemostatParams,
    s_max: f64,
    b_max: f64,
    arc_length_bound: f64,
    step: f64,
) -> Result<Separatrix> {
    if !(step > 0.0) || !(arc_length_bound > step) {
        return Err(Error::domain(format!(
            "need 0 < step < arc_length_bound, got step={step}, bound={arc_length_bound}"
        )));
    }
    let saddle = p
        .equilibria()
        .into_iter()
        .find(|eq| eq.is_saddle())
        .ok_or_else(|| Error::domain("no saddle equilibrium; separatrix undefined".to_string()))?;

    // stable eigenvector of the Jacobian
    let jac = p.jacobian(saddle.s, saddle.b);
    let lambda = saddle
        .eigenvalues
        .iter()
        .map(|&(re, _)| re)
        .fold(f64::INFINITY, f64::min);
    let v = eigenvector_2x2(jac, lambda);

    let eps = 1e-6 * (1.0 + (saddle.s * saddle.s + saddle.b * saddle.b).sqrt());
    let trace = |dir: f64| -> Vec<(f64, f64)> {
        let mut x = (saddle.s + dir * eps * v.0, saddle.b + dir * eps * v.1);
        let mut pts = vec![x];
        let mut arc = 0.0;
        // unit-speed backward flow: the stable direction becomes repelling,
        // so the trace follows the manifold away from the saddle
        let f = |(s, b): (f64, f64)| {
            let (f1, f2) = p.drift_unchecked(s.max(0.0), b.max(0.0));
            let norm = (f1 * f1 + f2 * f2).sqrt();
            if norm > 0.0 {
                (-f1 / norm, -f2 / norm)
            } else {
                (0.0, 0.0)
            }
        };
        while arc < arc_length_bound {
            let k1 = f(x);
            if k1 == (0.0, 0.0) {
                break;
            }
            let k2 = f((x.0 + 0.5 * step * k1.0, x.1 + 0.5 * step * k1.1));
            let k3 = f((x.0 + 0.5 * step * k2.0, x.1 + 0.5 * step * k2.1));
            let k4 = f((x.0 + step * k3.0, x.1 + step * k3.1));
            let next = (
                x.0 + step / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                x.1 + step / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            );
            if !next.0.is_finite() || !next.1.is_finite() {
                break;
            }
            arc += ((next.0 - x.0).powi(2) + (next.1 - x.1).powi(2)).sqrt();
            if next.0 < 0.0 || next.0 > s_max || next.1 < 0.0 || next.1 > b_max {
                // clip the final segment to the box
                if let Some(clipped) = clip_segment(x, next, s_max, b_max) {
                    pts.push(clipped);
                }
                break;
            }
            pts.push(next);
            x = next;
        }
        pts
    };

    let plus = trace(1.0);
    let minus = trace(-1.0);
    let mut points = Vec::with_capacity(plus.len() + minus.len() + 1);
    points.extend(minus.into_iter().rev());
    points.push((saddle.s, saddle.b));
    points.extend(plus);
    Ok(Separatrix { points, saddle })
}

/// Eigenvector of a 2x2 row-major matrix for a (real) eigenvalue, normalized.
fn eigenvector_2x2(m: [f64; 4], lambda: f64) -> (f64, f64) {
    // rows of (M - lambda I) are both orthogonal complements of the
    // eigenvector; pick the numerically larger one
    let r1 = (m[0] - lambda, m[1]);
    let r2 = (m[2], m[3] - lambda);
    let (a, b) = if r1.0.abs() + r1.1.abs() >= r2.0.abs() + r2.1.abs() {
        r1
    } else {
        r2
    };
    let v = (-b, a);
    let norm = (v.0 * v.0 + v.1 * v.1).sqrt();
    (v.0 / norm, v.1 / norm)
}

fn clip_segment(
    inside: (f64, f64),
    outside: (f64, f64),
    s_max: f64,
    b_max: f64,
) -> Option<(f64, f64)> {
    let mut t_exit = 1.0f64;
    let ds = outside.0 - inside.0;
    let db = outside.1 - inside.1;
    for (start, delta, lo, hi) in [
        (inside.0, ds, 0.0, s_max),
        (inside.1, db, 0.0, b_max),
    ] {
        if delta > 0.0 {
            t_exit = t_exit.min((hi - start) / delta);
        } else if delta < 0.0 {
            t_exit = t_exit.min((lo - start) / delta);
        }
    }
    if t_exit <= 0.0 {
        None
    } else {
        Some((inside.0 + t_exit * ds, inside.1 + t_exit * db))
    }
}

/// Forward-integrate until the state stays within `1e-4` of an attractive
/// equilibrium for ten consecutive samples; returns that equilibrium, or
/// `None` if the horizon runs out first.
pub fn classify_basin(
    p: &ChemostatParams,
    x0: (f64, f64),
    t_max: f64,
    dt: f64,
) -> Result<Option<EquilibriumPoint>> {
    let attractors: Vec<EquilibriumPoint> = p
        .equilibria()
        .into_iter()
        .filter(|eq| eq.stability == Stability::Attractive)
        .collect();
    if attractors.is_empty() {
        return Ok(None);
    }
    let mut x = x0;
    let mut streak = vec![0usize; attractors.len()];
    let n_steps = (t_max / dt).round() as usize;
    for _ in 0..n_steps {
        x = rk4_step(p, x, dt);
        if !x.0.is_finite() || !x.1.is_finite() {
            return Err(Error::NonFinite(format!("classification diverged from {x0:?}")));
        }
        x.0 = x.0.max(0.0);
        x.1 = x.1.max(0.0);
        for (i, eq) in attractors.iter().enumerate() {
            let d = ((x.0 - eq.s).powi(2) + (x.1 - eq.b).powi(2)).sqrt();
            if d <= 1e-4 {
                streak[i] += 1;
                if streak[i] >= 10 {
                    return Ok(Some(*eq));
                }
            } else {
                streak[i] = 0;
            }
        }
    }
    Ok(None)
}
