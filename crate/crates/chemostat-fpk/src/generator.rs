//! Upwind finite-difference discretization of diffusion generators.
//!
//! The scheme turns the second-order operator
//! `L phi = sum_i f_i phi'_i + 1/2 sum_ij a_ij phi''_ij` into a matrix
//! `L_h(x, y)` over the grid nodes that is a Q-matrix: nonnegative
//! off-diagonal entries, nonpositive diagonal, zero row sums. `L_h` is then
//! literally the jump-rate matrix of a Markov chain on the grid, and the
//! forward equation of that chain is the discrete Fokker-Planck equation.
//!
//! Two assembly routines are provided: a general n-dimensional one
//! (`build_generator_general`) handling mixed second-order terms, and the
//! specialized 2-D chemostat one (`build_generator_chemostat`) whose boundary
//! rows encode the washout structure: the row `b = 0` has no vertical jumps
//! (it is invariant), the wall `s = 0` only jumps right, and the truncation
//! edges `s = s_max`, `b = b_max` are reflecting.

use crate::error::{Error, Result};
use crate::grid::{AxisGrid, Grid};
use crate::model::ChemostatParams;
use crate::par;

/// Row-compressed sparse matrix. Column indices are sorted within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from per-row entry lists (each sorted by column).
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entry lookup by binary search within the row.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `out = A x` (row-parallel gather).
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        // split borrows so the closure only captures the raw parts
        let (row_ptr, cols, vals) = (&self.row_ptr, &self.cols, &self.vals);
        par::fill_indexed(out, |i| {
            let mut acc = 0.0;
            for k in row_ptr[i]..row_ptr[i + 1] {
                acc += vals[k] * x[cols[k]];
            }
            acc
        });
    }

    /// Explicit transpose with sorted rows.
    pub fn transpose(&self) -> CsrMatrix {
        let n = self.n;
        let mut counts = vec![0usize; n + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut cols = vec![0usize; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        let mut next = counts;
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.cols[k];
                let pos = next[c];
                cols[pos] = i;
                vals[pos] = self.vals[k];
                next[c] += 1;
            }
        }
        CsrMatrix { n, row_ptr, cols, vals }
    }
}

/// Drift and covariance fields of an n-dimensional diffusion, evaluated
/// nodewise during assembly.
pub trait DiffusionField: Sync {
    fn dim(&self) -> usize;
    /// Drift vector at `x` into `out` (length `dim`).
    fn drift(&self, x: &[f64], out: &mut [f64]);
    /// Covariance `a = sigma sigma^T` at `x` into `out`, row-major
    /// `dim x dim`. Must be symmetric with nonnegative diagonal.
    fn covariance(&self, x: &[f64], out: &mut [f64]);
}

/// Closure-backed [`DiffusionField`].
pub struct FnDiffusion<FD, FC> {
    pub dim: usize,
    pub drift: FD,
    pub covariance: FC,
}

impl<FD, FC> DiffusionField for FnDiffusion<FD, FC>
where
    FD: Fn(&[f64], &mut [f64]) + Sync,
    FC: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, x: &[f64], out: &mut [f64]) {
        (self.drift)(x, out)
    }
    fn covariance(&self, x: &[f64], out: &mut [f64]) {
        (self.covariance)(x, out)
    }
}

/// Assembled jump-process generator: the rate matrix and its precomputed
/// transpose (the forward equation applies the adjoint).
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    forward: CsrMatrix,
    adjoint: CsrMatrix,
}

impl GeneratorMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self::from_rates(CsrMatrix::from_rows(rows))
    }

    /// Wrap an explicit rate matrix (rows sorted by column), precomputing
    /// its transpose.
    pub fn from_rates(forward: CsrMatrix) -> Self {
        let adjoint = forward.transpose();
        GeneratorMatrix { forward, adjoint }
    }

    pub fn n(&self) -> usize {
        self.forward.n
    }

    /// Rate matrix `L_h`, row = source node.
    pub fn rates(&self) -> &CsrMatrix {
        &self.forward
    }

    /// Transposed rate matrix `L_h^T`; `L_h^T p` is the right-hand side of
    /// the forward equation.
    pub fn adjoint(&self) -> &CsrMatrix {
        &self.adjoint
    }

    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.forward.get(from, to)
    }

    /// `out = L^T x`.
    pub fn apply_adjoint(&self, x: &[f64], out: &mut [f64]) {
        self.adjoint.mul_vec(x, out);
    }

    /// Q-matrix diagnostics: off-diagonal signs, diagonal signs, row sums
    /// within `1e-12 * (1 + |diag|)`.
    pub fn validate(&self) -> QMatrixReport {
        let mut report = QMatrixReport::default();
        for i in 0..self.forward.n {
            let (cols, vals) = self.forward.row(i);
            let mut diag = 0.0;
            let mut sum = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                sum += v;
                if c == i {
                    diag = v;
                    if v > 0.0 {
                        report.violations.push(QMatrixViolation::PositiveDiagonal {
                            row: i,
                            value: v,
                        });
                    }
                } else if v < 0.0 {
                    report.violations.push(QMatrixViolation::NegativeOffDiagonal {
                        row: i,
                        col: c,
                        value: v,
                    });
                }
            }
            let scale = 1.0 + diag.abs();
            report.max_scaled_row_sum = report.max_scaled_row_sum.max(sum.abs() / scale);
            if sum.abs() > 1e-12 * scale {
                report
                    .violations
                    .push(QMatrixViolation::RowSum { row: i, sum });
            }
        }
        report
    }

    /// Coordinate text dump, one `row col value` line per entry with
    /// 17-significant-digit decimals.
    pub fn dump_coordinate(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        for i in 0..self.forward.n {
            let (cols, vals) = self.forward.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {:.16e}", i, c, v)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct QMatrixReport {
    pub violations: Vec<QMatrixViolation>,
    /// max over rows of |row sum| / (1 + |diag|)
    pub max_scaled_row_sum: f64,
}

impl QMatrixReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QMatrixViolation {
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    PositiveDiagonal { row: usize, value: f64 },
    RowSum { row: usize, sum: f64 },
}

#[inline]
fn pos_part(x: f64) -> f64 {
    if x > 0.0 { x } else { 0.0 }
}

#[inline]
fn neg_part(x: f64) -> f64 {
    if x < 0.0 { -x } else { 0.0 }
}

/// General n-dimensional upwind assembly.
///
/// Interior rows follow the stencil: per axis, drift is one-sided by sign
/// (`f_i^+/h_i` up, `f_i^-/h_i` down), the pure second-order term is central
/// (`a_ii / 2h_i^2` both ways, reduced by `sum_{j != i} |a_ij| / 2 h_i h_j`),
/// and mixed terms put `a_ij^+ / 2 h_i h_j` on the same-sign diagonal
/// neighbors and `a_ij^- / 2 h_i h_j` on the opposite-sign ones. Boundary
/// rows are reflecting: the outward jump is dropped and the inward rate
/// becomes `|f_i|/h_i + a_ii/h_i^2`; mixed terms are only applied at nodes
/// interior to both axes involved.
///
/// Fails if diagonal dominance is violated (an axis-neighbor rate would be
/// negative), naming the offending node.
pub fn build_generator_general(
    field: &dyn DiffusionField,
    axes: &[AxisGrid],
) -> Result<GeneratorMatrix> {
    let dim = field.dim();
    if dim == 0 || axes.len() != dim {
        return Err(Error::domain(format!(
            "grid dimension {} does not match field dimension {}",
            axes.len(),
            dim
        )));
    }
    let h: Vec<f64> = axes.iter().map(|a| a.spacing()).collect();
    let nodes_per_axis: Vec<usize> = axes.iter().map(|a| a.nodes()).collect();
    let mut strides = vec![1usize; dim];
    for i in 1..dim {
        strides[i] = strides[i - 1] * nodes_per_axis[i - 1];
    }
    let n_total: usize = nodes_per_axis.iter().product();

    let build_row = |idx: usize| -> Result<Vec<(usize, f64)>> {
        let mut k = vec![0usize; dim];
        let mut rem = idx;
        for i in 0..dim {
            k[i] = rem % nodes_per_axis[i];
            rem /= nodes_per_axis[i];
        }
        let x: Vec<f64> = (0..dim).map(|i| axes[i].coord(k[i])).collect();
        let mut f = vec![0.0; dim];
        let mut a = vec![0.0; dim * dim];
        field.drift(&x, &mut f);
        field.covariance(&x, &mut a);

        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(1 + 2 * dim + 2 * dim * dim);
        let mut diag = 0.0;
        let mut push = |col: usize, rate: f64| {
            if rate != 0.0 {
                entries.push((col, rate));
            }
        };

        for i in 0..dim {
            let interior_i = k[i] > 0 && k[i] < nodes_per_axis[i] - 1;
            // cross-term reduction applies on fully interior nodes only
            let mut cross = 0.0;
            if interior_i {
                for j in 0..dim {
                    if j != i && k[j] > 0 && k[j] < nodes_per_axis[j] - 1 {
                        cross += a[i * dim + j].abs() / (2.0 * h[i] * h[j]);
                    }
                }
            }
            let aii = a[i * dim + i];
            if aii < 0.0 {
                return Err(Error::Assembly {
                    node: idx,
                    detail: format!("negative diffusion a[{i}][{i}] = {aii}"),
                });
            }
            let (up, down) = if interior_i {
                let base = aii / (2.0 * h[i] * h[i]) - cross;
                let up = pos_part(f[i]) / h[i] + base;
                let down = neg_part(f[i]) / h[i] + base;
                if up < 0.0 || down < 0.0 {
                    return Err(Error::Assembly {
                        node: idx,
                        detail: format!(
                            "axis {i} neighbor rate negative (up = {up:.3e}, down = {down:.3e}): \
                             |a_ij| too large against a_ii"
                        ),
                    });
                }
                (up, down)
            } else if k[i] == 0 {
                // reflecting low edge: no outward jump
                (f[i].abs() / h[i] + aii / (h[i] * h[i]), 0.0)
            } else {
                // reflecting high edge
                (0.0, f[i].abs() / h[i] + aii / (h[i] * h[i]))
            };
            if up > 0.0 {
                push(idx + strides[i], up);
                diag -= up;
            }
            if down > 0.0 {
                push(idx - strides[i], down);
                diag -= down;
            }
        }

        // mixed second-order terms: diagonal neighbors, only when interior
        // on both axes
        for i in 0..dim {
            for j in (i + 1)..dim {
                let interior = k[i] > 0
                    && k[i] < nodes_per_axis[i] - 1
                    && k[j] > 0
                    && k[j] < nodes_per_axis[j] - 1;
                if !interior {
                    continue;
                }
                let aij = a[i * dim + j];
                let aji = a[j * dim + i];
                if (aij - aji).abs() > 1e-12 * (1.0 + aij.abs()) {
                    return Err(Error::Assembly {
                        node: idx,
                        detail: format!("covariance not symmetric: a[{i}][{j}] = {aij}, a[{j}][{i}] = {aji}"),
                    });
                }
                let rate = aij.abs() / (2.0 * h[i] * h[j]);
                if rate == 0.0 {
                    continue;
                }
                if aij > 0.0 {
                    push(idx + strides[i] + strides[j], rate);
                    push(idx - strides[i] - strides[j], rate);
                } else {
                    push(idx + strides[i] - strides[j], rate);
                    push(idx - strides[i] + strides[j], rate);
                }
                diag -= 2.0 * rate;
            }
        }

        entries.push((idx, diag));
        entries.sort_unstable_by_key(|&(c, _)| c);
        Ok(entries)
    };

    let rows: Vec<Result<Vec<(usize, f64)>>> = par::map_indexed(n_total, build_row);
    let rows: Result<Vec<_>> = rows.into_iter().collect();
    Ok(GeneratorMatrix::from_rows(rows?))
}

/// Specialized 2-D chemostat assembly with the washout boundary structure.
///
/// Interior rows: diagonal `-|f1|/h1 - |f2|/h2 - sigma1^2/h1^2 - sigma2^2/h2^2`,
/// axis neighbors `f_i^{+-}/h_i + sigma_i^2/2h_i^2` (the diffusion is
/// diagonal, so there are no mixed terms). Boundary rows:
///
/// * `s = 0`: no left jump; `f1(0,b) = D s_in > 0` and `sigma1(0,b) = 0`
///   make the interior left-rate formula vanish identically, which is
///   checked at assembly time.
/// * `b = 0` (washout row): no vertical jumps, since
///   `f2(s,0) = sigma2(s,0) = 0`; the row evolves as the 1-D washout-mode
///   substrate chain.
/// * `s = s_max`, `b = b_max`: reflecting; the outward jump is set to zero
///   and the inward rate is `|f|/h + sigma^2/h^2`.
pub fn build_generator_chemostat(p: &ChemostatParams, grid: &Grid) -> Result<GeneratorMatrix> {
    p.validate()?;
    let (h1, h2) = (grid.h1(), grid.h2());
    let (n1, n2) = (grid.n1, grid.n2);
    let stride = n1 + 1;
    let grid = *grid;
    let p = *p;

    let build_row = |idx: usize| -> Result<Vec<(usize, f64)>> {
        let (k1, k2) = grid.unindex(idx);
        let (s, b) = grid.coords(k1, k2);
        let (f1, f2) = p.drift_unchecked(s, b);
        let (a1, a2) = p.diffusion_sq_unchecked(s, b);

        let (right, left) = if k1 == 0 {
            let left = neg_part(f1) / h1 + a1 / (2.0 * h1 * h1);
            if left != 0.0 {
                return Err(Error::Assembly {
                    node: idx,
                    detail: format!("s = 0 wall must have zero left rate, got {left:.3e}"),
                });
            }
            (pos_part(f1) / h1 + a1 / (2.0 * h1 * h1), 0.0)
        } else if k1 == n1 {
            (0.0, f1.abs() / h1 + a1 / (h1 * h1))
        } else {
            (
                pos_part(f1) / h1 + a1 / (2.0 * h1 * h1),
                neg_part(f1) / h1 + a1 / (2.0 * h1 * h1),
            )
        };

        let (up, down) = if k2 == 0 {
            let up = pos_part(f2) / h2 + a2 / (2.0 * h2 * h2);
            let down = neg_part(f2) / h2 + a2 / (2.0 * h2 * h2);
            if up != 0.0 || down != 0.0 {
                return Err(Error::Assembly {
                    node: idx,
                    detail: format!(
                        "washout row must have zero vertical rates, got up = {up:.3e}, down = {down:.3e}"
                    ),
                });
            }
            (0.0, 0.0)
        } else if k2 == n2 {
            (0.0, f2.abs() / h2 + a2 / (h2 * h2))
        } else {
            (
                pos_part(f2) / h2 + a2 / (2.0 * h2 * h2),
                neg_part(f2) / h2 + a2 / (2.0 * h2 * h2),
            )
        };

        let diag = -(right + left + up + down);
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(5);
        if down > 0.0 {
            entries.push((idx - stride, down));
        }
        if left > 0.0 {
            entries.push((idx - 1, left));
        }
        entries.push((idx, diag));
        if right > 0.0 {
            entries.push((idx + 1, right));
        }
        if up > 0.0 {
            entries.push((idx + stride, up));
        }
        Ok(entries)
    };

    let rows: Vec<Result<Vec<(usize, f64)>>> = par::map_indexed(grid.n_nodes(), build_row);
    let rows: Result<Vec<_>> = rows.into_iter().collect();
    Ok(GeneratorMatrix::from_rows(rows?))
}

/// Extract the washout-row block (`k2 = 0`) of a 2-D chemostat generator as
/// a standalone 1-D generator over the substrate axis. Fails if any row of
/// the block has a rate leaving the row (the washout row must be invariant).
pub fn washout_row_block(gen: &GeneratorMatrix, grid: &Grid) -> Result<GeneratorMatrix> {
    let n1 = grid.n1;
    let mut rows = Vec::with_capacity(n1 + 1);
    for k1 in 0..=n1 {
        let (cols, vals) = gen.rates().row(grid.index(k1, 0));
        let mut row = Vec::with_capacity(cols.len());
        for (&c, &v) in cols.iter().zip(vals) {
            if c > n1 {
                return Err(Error::Assembly {
                    node: grid.index(k1, 0),
                    detail: format!("washout row leaks to node {c} (rate {v:.3e})"),
                });
            }
            row.push((c, v));
        }
        rows.push(row);
    }
    Ok(GeneratorMatrix::from_rows(rows))
}

/// The 1-D washout-mode substrate generator (drift `D(s_in - s)`, diffusion
/// `sigma_1^2(s)`) assembled through the general scheme. Its rates coincide
/// entrywise with the `b = 0` row of the 2-D chemostat generator.
pub fn build_generator_washout_mode(
    p: &ChemostatParams,
    axis: AxisGrid,
) -> Result<GeneratorMatrix> {
    let p = *p;
    let field = FnDiffusion {
        dim: 1,
        drift: move |x: &[f64], out: &mut [f64]| {
            out[0] = p.dilution * (p.s_in - x[0]);
        },
        covariance: move |x: &[f64], out: &mut [f64]| {
            let (a1, _) = p.diffusion_sq_unchecked(x[0], 0.0);
            out[0] = a1;
        },
    };
    build_generator_general(&field, &[axis])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NoiseKind;
    use crate::presets;
    use approx::assert_relative_eq;

    #[test]
    fn zero_field_gives_zero_matrix() {
        let field = FnDiffusion {
            dim: 2,
            drift: |_: &[f64], out: &mut [f64]| out.fill(0.0),
            covariance: |_: &[f64], out: &mut [f64]| out.fill(0.0),
        };
        let axes = [AxisGrid::new(1.0, 4).unwrap(), AxisGrid::new(1.0, 4).unwrap()];
        let gen = build_generator_general(&field, &axes).unwrap();
        assert!(gen.rates().vals.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_cross_term_rates() {
        // a11 = a22 = 1, a12 = 0.3, f = 0: diagonal-neighbor entry a12/(2 h1 h2)
        let field = FnDiffusion {
            dim: 2,
            drift: |_: &[f64], out: &mut [f64]| out.fill(0.0),
            covariance: |_: &[f64], out: &mut [f64]| {
                out.copy_from_slice(&[1.0, 0.3, 0.3, 1.0]);
            },
        };
        let axes = [AxisGrid::new(1.0, 5).unwrap(), AxisGrid::new(1.0, 4).unwrap()];
        let (h1, h2) = (0.2, 0.25);
        let gen = build_generator_general(&field, &axes).unwrap();
        let idx = 2 + 2 * 6; // interior node (2,2)
        assert_relative_eq!(
            gen.rate(idx, idx + 1 + 6),
            0.3 / (2.0 * h1 * h2),
            max_relative = 1e-15
        );
        assert_relative_eq!(
            gen.rate(idx, idx - 1 - 6),
            0.3 / (2.0 * h1 * h2),
            max_relative = 1e-15
        );
        assert_eq!(gen.rate(idx, idx + 1 - 6), 0.0);
        // axis neighbor reduced by the cross term
        assert_relative_eq!(
            gen.rate(idx, idx + 1),
            1.0 / (2.0 * h1 * h1) - 0.3 / (2.0 * h1 * h2),
            max_relative = 1e-15
        );
        assert!(gen.validate().is_valid());
    }

    #[test]
    fn negative_cross_term_flips_diagonal_neighbors() {
        let field = FnDiffusion {
            dim: 2,
            drift: |_: &[f64], out: &mut [f64]| out.fill(0.0),
            covariance: |_: &[f64], out: &mut [f64]| {
                out.copy_from_slice(&[1.0, -0.4, -0.4, 1.0]);
            },
        };
        let axes = [AxisGrid::new(1.0, 4).unwrap(), AxisGrid::new(1.0, 4).unwrap()];
        let gen = build_generator_general(&field, &axes).unwrap();
        let idx = 2 + 2 * 5;
        let rate = 0.4 / (2.0 * 0.25 * 0.25);
        assert_relative_eq!(gen.rate(idx, idx + 1 - 5), rate, max_relative = 1e-15);
        assert_relative_eq!(gen.rate(idx, idx - 1 + 5), rate, max_relative = 1e-15);
        assert_eq!(gen.rate(idx, idx + 1 + 5), 0.0);
        assert!(gen.validate().is_valid());
    }

    #[test]
    fn dominance_violation_is_an_error() {
        // |a12| > sqrt(a11 a22) scale: axis rates go negative
        let field = FnDiffusion {
            dim: 2,
            drift: |_: &[f64], out: &mut [f64]| out.fill(0.0),
            covariance: |_: &[f64], out: &mut [f64]| {
                out.copy_from_slice(&[0.1, 0.9, 0.9, 0.1]);
            },
        };
        let axes = [AxisGrid::new(1.0, 4).unwrap(), AxisGrid::new(1.0, 4).unwrap()];
        match build_generator_general(&field, &axes) {
            Err(Error::Assembly { .. }) => {}
            other => panic!("expected assembly error, got {other:?}"),
        }
    }

    #[test]
    fn chemostat_rates_at_reference_node() {
        // node (1.0, 0.03) on the 71 x 71 comparison grid, c = 0.005
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let grid = presets::monod_grid();
        let gen = build_generator_chemostat(&p, &grid).unwrap();
        let idx = grid.index(35, 35);
        assert_eq!(grid.coords(35, 35), (1.0, 0.03));
        assert_relative_eq!(gen.rate(idx, idx - 1), 0.3153125, max_relative = 1e-10);
        assert_relative_eq!(gen.rate(idx, idx + 1), 0.0153125, max_relative = 1e-10);
    }

    #[test]
    fn washout_row_has_no_vertical_jumps() {
        for kind in [NoiseKind::SquareRoot, NoiseKind::Linear] {
            let p = presets::monod_params(0.02, kind);
            let grid = Grid::new(2.0, 0.06, 12, 9).unwrap();
            let gen = build_generator_chemostat(&p, &grid).unwrap();
            for k1 in 0..=12 {
                let idx = grid.index(k1, 0);
                let (cols, _) = gen.rates().row(idx);
                assert!(cols.iter().all(|&c| grid.unindex(c).1 == 0));
                // at most self + left + right
                assert!(cols.len() <= 3);
            }
        }
    }

    #[test]
    fn origin_corner_jumps_right_only() {
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let grid = presets::monod_grid();
        let gen = build_generator_chemostat(&p, &grid).unwrap();
        let (cols, _) = gen.rates().row(0);
        assert_eq!(cols.len(), 2); // self and right
        assert_relative_eq!(
            gen.rate(0, 1),
            0.52 / grid.h1(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn chemostat_equals_general_assembly() {
        for kind in [NoiseKind::SquareRoot, NoiseKind::Linear] {
            let p = presets::monod_params(0.02, kind);
            let grid = Grid::new(2.0, 0.06, 14, 11).unwrap();
            let spec_p = p;
            let field = FnDiffusion {
                dim: 2,
                drift: move |x: &[f64], out: &mut [f64]| {
                    let (f1, f2) = spec_p.drift_unchecked(x[0], x[1]);
                    out[0] = f1;
                    out[1] = f2;
                },
                covariance: move |x: &[f64], out: &mut [f64]| {
                    let (a1, a2) = spec_p.diffusion_sq_unchecked(x[0], x[1]);
                    out.copy_from_slice(&[a1, 0.0, 0.0, a2]);
                },
            };
            let g1 = build_generator_chemostat(&p, &grid).unwrap();
            let g2 = build_generator_general(&field, &grid.axes()).unwrap();
            for i in 0..grid.n_nodes() {
                let (c1, v1) = g1.rates().row(i);
                let (c2, v2) = g2.rates().row(i);
                assert_eq!(c1, c2, "structure differs at row {i}");
                for (a, b) in v1.iter().zip(v2) {
                    assert!((a - b).abs() <= 1e-14 * (1.0 + a.abs()), "row {i}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn consistency_on_smooth_test_function() {
        // L_h phi -> L phi at first order for phi = s^3 + 2 b^2 + s b
        let p = presets::monod_params(0.02, NoiseKind::SquareRoot);
        let phi = |s: f64, b: f64| s * s * s + 2.0 * b * b + s * b;
        let exact = |s: f64, b: f64| {
            let (f1, f2) = p.drift_unchecked(s, b);
            let (a1, a2) = p.diffusion_sq_unchecked(s, b);
            f1 * (3.0 * s * s + b) + f2 * (4.0 * b + s) + 0.5 * a1 * 6.0 * s + 0.5 * a2 * 4.0
        };
        let (s0, b0) = (1.0, 0.03);
        let mut errs = Vec::new();
        for n in [70usize, 140] {
            let grid = Grid::new(2.0, 0.06, n, n).unwrap();
            let gen = build_generator_chemostat(&p, &grid).unwrap();
            let idx = grid.index(n / 2, n / 2);
            assert_eq!(grid.coords(n / 2, n / 2), (s0, b0));
            let (cols, vals) = gen.rates().row(idx);
            let mut lh = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                let (k1, k2) = grid.unindex(c);
                let (s, b) = grid.coords(k1, k2);
                lh += v * phi(s, b);
            }
            errs.push((lh - exact(s0, b0)).abs());
        }
        assert!(errs[1] < errs[0]);
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.4 && ratio < 2.9, "first-order trend broken: {ratio}");
    }

    #[test]
    fn washout_mode_restriction_matches_row_zero() {
        let p = presets::monod_params(0.005, NoiseKind::SquareRoot);
        let grid = presets::monod_grid();
        let g2 = build_generator_chemostat(&p, &grid).unwrap();
        let g1 = build_generator_washout_mode(&p, grid.axes()[0]).unwrap();
        for k1 in 0..=grid.n1 {
            let (c2, v2) = g2.rates().row(grid.index(k1, 0));
            let (c1, v1) = g1.rates().row(k1);
            assert_eq!(c1.len(), c2.len());
            for ((&ca, &va), (&cb, &vb)) in c1.iter().zip(v1).zip(c2.iter().zip(v2)) {
                assert_eq!(ca, cb);
                assert!((va - vb).abs() <= 1e-14 * (1.0 + va.abs()));
            }
        }
    }

    #[test]
    fn validate_flags_hand_built_negative_entry() {
        let m = CsrMatrix::from_rows(vec![
            vec![(0, -1.0), (1, 1.0)],
            vec![(0, -0.5), (1, 0.5)],
        ]);
        let gen = GeneratorMatrix::from_rates(m);
        let report = gen.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            QMatrixViolation::NegativeOffDiagonal { row: 1, col: 0, .. }
        ));
    }

    #[test]
    fn transpose_roundtrip() {
        let m = CsrMatrix::from_rows(vec![
            vec![(0, 1.0), (2, 3.0)],
            vec![(1, -2.0)],
            vec![(0, 5.0), (2, 4.0)],
        ]);
        let tt = m.transpose().transpose();
        assert_eq!(m, tt);
        assert_eq!(m.transpose().get(2, 0), 3.0);
    }
}
