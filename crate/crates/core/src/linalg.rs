//! Small dense linear-algebra kernels used by the fitting code.
//!
//! Everything here works on `nalgebra` dynamic matrices. Problem sizes are
//! tiny (hidden and observation dimensions of at most a handful), so dense
//! storage and per-block factorizations are the right trade-off.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Ridge added to the diagonal when the block system is numerically singular.
pub const RIDGE: f64 = 1e-10;

const PSD_TOL: f64 = 1e-10;

/// Lower-triangular factor `L` with `L L' = A` for a symmetric positive
/// semidefinite `A`. Zero pivots are allowed (the corresponding column of `L`
/// is zero), so singular covariances such as `0·I` factor cleanly.
pub fn psd_factor(a: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::NotPsd { name, detail: format!("not square ({}x{})", n, a.ncols()) });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPsd { name, detail: "contains non-finite entries".into() });
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = PSD_TOL * scale;
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > tol {
                return Err(Error::NotPsd {
                    name,
                    detail: format!("asymmetric at ({i},{j})"),
                });
            }
        }
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return Err(Error::NotPsd { name, detail: format!("negative pivot {d:e} at index {j}") });
        }
        if d <= tol {
            // Rank-deficient direction: the remaining column must vanish too.
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::NotPsd {
                        name,
                        detail: format!("zero pivot at index {j} with non-zero coupling to {i}"),
                    });
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix.
pub fn sym_pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = max * (n.max(1) as f64) * 1e-13;
    let mut out = DMatrix::<f64>::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() <= cutoff || lambda == 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(k);
        out += (v * v.transpose()) / lambda;
    }
    out
}

/// Value of `b' Q b - 2 c' b`, the box-QP objective up to a constant.
fn quad_value(gram: &DMatrix<f64>, cross: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (b.transpose() * gram * b)[(0, 0)] - 2.0 * cross.dot(b)
}

/// Minimizes `‖y − A b‖²` subject to `|b_j| ≤ bound`, given `gram = A'A` and
/// `cross = A'y`.
///
/// Returns the minimum-norm unconstrained solution when it lies inside the
/// box. Otherwise runs projected coordinate descent from the better of the
/// clamped unconstrained solution and `warm`, so the returned point is never
/// worse than `warm`.
pub fn box_lstsq(
    gram: &DMatrix<f64>,
    pinv: &DMatrix<f64>,
    cross: &DVector<f64>,
    bound: f64,
    warm: Option<&DVector<f64>>,
) -> DVector<f64> {
    let free = pinv * cross;
    if free.iter().all(|v| v.abs() <= bound) {
        return free;
    }
    let mut best = free.map(|v| v.clamp(-bound, bound));
    if let Some(w) = warm {
        if w.iter().all(|v| v.abs() <= bound)
            && quad_value(gram, cross, w) < quad_value(gram, cross, &best)
        {
            best = w.clone();
        }
    }
    let n = best.len();
    for _ in 0..1000 {
        let mut max_step = 0.0f64;
        for j in 0..n {
            let qjj = gram[(j, j)];
            if qjj <= 0.0 {
                continue;
            }
            let mut r = cross[j];
            for k in 0..n {
                if k != j {
                    r -= gram[(j, k)] * best[k];
                }
            }
            let next = (r / qjj).clamp(-bound, bound);
            max_step = max_step.max((next - best[j]).abs());
            best[j] = next;
        }
        if max_step <= 1e-15 * (1.0 + bound) {
            break;
        }
    }
    best
}

/// Symmetric block-tridiagonal system with `n × n` blocks stored row-major
/// in flat buffers: diagonal block `t` at `diag[t·n²..]` and the block at
/// position `(t + 1, t)` at `lower[t·n²..]`. The upper blocks are the
/// transposes of the lower ones.
pub struct BlockTridiagonal {
    pub n: usize,
    pub diag: Vec<f64>,
    pub lower: Vec<f64>,
}

impl BlockTridiagonal {
    pub fn from_blocks(diag: &[DMatrix<f64>], lower: &[DMatrix<f64>]) -> Self {
        let n = diag.first().map_or(0, |d| d.nrows());
        let flat = |blocks: &[DMatrix<f64>]| -> Vec<f64> {
            blocks.iter().flat_map(|b| (0..n).flat_map(move |i| (0..n).map(move |j| b[(i, j)]))).collect()
        };
        Self { n, diag: flat(diag), lower: flat(lower) }
    }

    pub fn steps(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.diag.len() / (self.n * self.n)
        }
    }

    /// Block Cholesky `A = L L'` with diagonal factors `L_t` and sub-diagonal
    /// blocks `W_t = B_{t−1} L_{t−1}^{−T}`, then forward and back substitution.
    /// `None` when a pivot block is not positive definite.
    fn block_cholesky(&self, ridge: f64, rhs: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let nn = n * n;
        let steps = self.steps();
        let mut l = vec![0.0; steps * nn];
        let mut w = vec![0.0; steps * nn];
        let mut s = vec![0.0; nn];
        for t in 0..steps {
            s.copy_from_slice(&self.diag[t * nn..(t + 1) * nn]);
            for i in 0..n {
                s[i * n + i] += ridge;
            }
            if t > 0 {
                let lp = &l[(t - 1) * nn..t * nn];
                let b = &self.lower[(t - 1) * nn..t * nn];
                let wt = &mut w[t * nn..(t + 1) * nn];
                for r in 0..n {
                    for i in 0..n {
                        let mut v = b[r * n + i];
                        for k in 0..i {
                            v -= lp[i * n + k] * wt[r * n + k];
                        }
                        wt[r * n + i] = v / lp[i * n + i];
                    }
                }
                for i in 0..n {
                    for j in 0..=i {
                        let d: f64 = (0..n).map(|k| wt[i * n + k] * wt[j * n + k]).sum();
                        s[i * n + j] -= d;
                        if i != j {
                            s[j * n + i] -= d;
                        }
                    }
                }
            }
            let lt = &mut l[t * nn..(t + 1) * nn];
            for j in 0..n {
                let mut d = s[j * n + j];
                for k in 0..j {
                    d -= lt[j * n + k] * lt[j * n + k];
                }
                if !(d > 0.0) || !d.is_finite() {
                    return None;
                }
                let ljj = d.sqrt();
                lt[j * n + j] = ljj;
                for i in (j + 1)..n {
                    let mut v = s[i * n + j];
                    for k in 0..j {
                        v -= lt[i * n + k] * lt[j * n + k];
                    }
                    lt[i * n + j] = v / ljj;
                }
            }
        }
        let mut y = rhs.to_vec();
        for t in 0..steps {
            let lt = &l[t * nn..(t + 1) * nn];
            if t > 0 {
                let wt = &w[t * nn..(t + 1) * nn];
                for i in 0..n {
                    let d: f64 = (0..n).map(|k| wt[i * n + k] * y[(t - 1) * n + k]).sum();
                    y[t * n + i] -= d;
                }
            }
            for i in 0..n {
                let mut v = y[t * n + i];
                for k in 0..i {
                    v -= lt[i * n + k] * y[t * n + k];
                }
                y[t * n + i] = v / lt[i * n + i];
            }
        }
        let mut x = y;
        for t in (0..steps).rev() {
            let lt = &l[t * nn..(t + 1) * nn];
            if t + 1 < steps {
                let wn = &w[(t + 1) * nn..(t + 2) * nn];
                for i in 0..n {
                    let d: f64 = (0..n).map(|k| wn[k * n + i] * x[(t + 1) * n + k]).sum();
                    x[t * n + i] -= d;
                }
            }
            for i in (0..n).rev() {
                let mut v = x[t * n + i];
                for k in (i + 1)..n {
                    v -= lt[k * n + i] * x[t * n + k];
                }
                x[t * n + i] = v / lt[i * n + i];
            }
        }
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    fn dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let nn = n * n;
        let steps = self.steps();
        let mut m = DMatrix::zeros(steps * n, steps * n);
        for t in 0..steps {
            for i in 0..n {
                for j in 0..n {
                    m[(t * n + i, t * n + j)] = self.diag[t * nn + i * n + j];
                    if t + 1 < steps {
                        let v = self.lower[t * nn + i * n + j];
                        m[((t + 1) * n + i, t * n + j)] = v;
                        m[(t * n + j, (t + 1) * n + i)] = v;
                    }
                }
            }
        }
        m
    }

    /// Solves the system for a stacked right-hand side `(b_1, …, b_T)`. Uses
    /// the block Cholesky factorization; when a pivot block is not positive
    /// definite it is retried with [`RIDGE`] on the diagonal, and as a last
    /// resort the minimum-norm solution is taken from a dense pseudo-inverse.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        if let Some(x) = self.block_cholesky(0.0, rhs) {
            return x;
        }
        if let Some(x) = self.block_cholesky(RIDGE, rhs) {
            return x;
        }
        let sol = sym_pinv(&self.dense()) * DVector::from_column_slice(rhs);
        sol.iter().copied().collect()
    }
}
