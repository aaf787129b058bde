//! Small dense kernels shared by the regression, calibration and variance
//! modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonally scaled, diagonally pivoted Cholesky factor of a symmetric
/// positive (semi)definite matrix.
///
/// The matrix is first equilibrated to unit diagonal so the pivot tolerance
/// is a pure conditioning threshold, independent of column scales. A
/// residual pivot below `dim * 1e4 * EPSILON` is reported as a rank error
/// naming the offending original column.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    lower: DMatrix<f64>,
    perm: Vec<usize>,
    scale: Vec<f64>,
}

impl SpdFactor {
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        let dim = a.nrows();
        assert_eq!(dim, a.ncols(), "SpdFactor requires a square matrix");
        let mut scale = Vec::with_capacity(dim);
        for i in 0..dim {
            let d = a[(i, i)];
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Rank {
                    context: context.to_string(),
                    column: i,
                    pivot: d,
                });
            }
            scale.push(1.0 / d.sqrt());
        }
        let mut work = DMatrix::from_fn(dim, dim, |i, j| {
            0.5 * (a[(i, j)] + a[(j, i)]) * scale[i] * scale[j]
        });
        let mut perm: Vec<usize> = (0..dim).collect();
        let tol = (dim.max(1) as f64) * 1e4 * f64::EPSILON;

        for k in 0..dim {
            // Largest remaining diagonal.
            let (piv, best) = (k..dim)
                .map(|i| (i, work[(i, i)]))
                .fold((k, f64::NEG_INFINITY), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
            if !(best > tol) {
                // Every remaining column is dependent; name the worst one.
                let (worst, worst_val) = (k..dim)
                    .map(|i| (i, work[(i, i)]))
                    .fold((k, f64::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
                return Err(Error::Rank {
                    context: context.to_string(),
                    column: perm[worst],
                    pivot: worst_val,
                });
            }
            if piv != k {
                work.swap_rows(k, piv);
                work.swap_columns(k, piv);
                perm.swap(k, piv);
            }
            let d = work[(k, k)].sqrt();
            work[(k, k)] = d;
            for i in (k + 1)..dim {
                work[(i, k)] /= d;
            }
            // Trailing block kept fully symmetric so later pivot swaps stay valid.
            for j in (k + 1)..dim {
                let ljk = work[(j, k)];
                for i in (k + 1)..dim {
                    let v = work[(i, k)] * ljk;
                    work[(i, j)] -= v;
                }
            }
            for j in (k + 1)..dim {
                work[(k, j)] = 0.0;
            }
        }
        // Keep only the lower triangle.
        for j in 0..dim {
            for i in 0..j {
                work[(i, j)] = 0.0;
            }
        }
        Ok(Self {
            lower: work,
            perm,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        // Permuted, scaled right-hand side.
        let mut z: Vec<f64> = self.perm.iter().map(|&p| b[p] * self.scale[p]).collect();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * z[k];
            }
            z[i] = s / self.lower[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in (i + 1)..n {
                s -= self.lower[(k, i)] * z[k];
            }
            z[i] = s / self.lower[(i, i)];
        }
        let mut out = DVector::zeros(n);
        for (pos, &p) in self.perm.iter().enumerate() {
            out[p] = z[pos] * self.scale[p];
        }
        out
    }
}

/// `Σ_j w_j x_j x_jᵀ` for row vectors `x_j`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let c = x.ncols();
    let mut out = DMatrix::zeros(c, c);
    for (j, &wj) in w.iter().enumerate() {
        for a in 0..c {
            let xa = wj * x[(j, a)];
            for b in a..c {
                out[(a, b)] += xa * x[(j, b)];
            }
        }
    }
    for a in 0..c {
        for b in 0..a {
            out[(a, b)] = out[(b, a)];
        }
    }
    out
}

/// `Σ_j w_j x_j v_j`.
pub fn weighted_cross(x: &DMatrix<f64>, w: &[f64], v: &[f64]) -> DVector<f64> {
    let c = x.ncols();
    let mut out = DVector::zeros(c);
    for j in 0..x.nrows() {
        let s = w[j] * v[j];
        for a in 0..c {
            out[a] += s * x[(j, a)];
        }
    }
    out
}

/// Weighted column totals `Σ_j w_j x_j`.
pub fn weighted_totals(x: &DMatrix<f64>, w: &[f64]) -> DVector<f64> {
    let ones = vec![1.0; w.len()];
    weighted_cross(x, w, &ones)
}

/// `bᵀ M b` with `M` symmetrised as `(M + Mᵀ)/2` first.
pub fn quad_form(m: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let sym = symmetrize(m);
    (b.transpose() * sym * b)[(0, 0)]
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Row `j` of `x` dotted with `b`.
#[inline]
pub fn row_dot(x: &DMatrix<f64>, j: usize, b: &DVector<f64>) -> f64 {
    (0..x.ncols()).map(|a| x[(j, a)] * b[a]).sum()
}

/// Pairwise (cascade) summation; error grows as O(log n) rather than O(n).
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub fn pairwise_mean(values: &[f64]) -> f64 {
    pairwise_sum(values) / values.len() as f64
}

/// Prepend a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let c = x.ncols();
    DMatrix::from_fn(n, c + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Select rows of `x` by index, in the given order.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}
