//! Small dense helpers on flat row-major buffers, used in the marching inner
//! loops where per-term `DMatrix` allocation would dominate.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub(crate) fn complex_det(m: DMatrix<Complex64>) -> Complex64 {
    match m.nrows() {
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        _ => m.determinant(),
    }
}

pub(crate) fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    push_row_major(&mut v, m);
    v
}

/// `out += alpha · a · b` with `a: rows×inner`, `b: inner×cols`.
#[inline]
pub(crate) fn mul_acc(
    out: &mut [f64],
    a: &[f64],
    b: &[f64],
    rows: usize,
    inner: usize,
    cols: usize,
    alpha: f64,
) {
    for i in 0..rows {
        let arow = &a[i * inner..(i + 1) * inner];
        let orow = &mut out[i * cols..(i + 1) * cols];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let s = alpha * aik;
            let brow = &b[k * cols..(k + 1) * cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += s * bkj;
            }
        }
    }
}

/// Solver for `X · E = R` with a fixed square `E`, via LU of `Eᵀ`.
pub(crate) struct RightSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl RightSolver {
    /// `None` when `E` is numerically singular.
    pub(crate) fn new(e: &DMatrix<f64>) -> Option<Self> {
        let n = e.nrows();
        let sv = e.clone().singular_values();
        if sv.min() <= 1e-12 * sv.max().max(1e-300) {
            return None;
        }
        Some(Self { lu: e.transpose().lu(), n })
    }

    /// Solve in place: `x` holds `R` (rows × n, row-major) on entry.
    pub(crate) fn solve(&self, x: &mut [f64], rows: usize) {
        let n = self.n;
        if n == 1 {
            let e = self.lu.u()[(0, 0)] * self.lu.l()[(0, 0)];
            for v in x.iter_mut() {
                *v /= e;
            }
            return;
        }
        // (X E)ᵀ = Eᵀ Xᵀ = Rᵀ; columns of Xᵀ are the rows of X
        for r in 0..rows {
            let mut col = nalgebra::DVector::from_column_slice(&x[r * n..(r + 1) * n]);
            self.lu.solve_mut(&mut col);
            x[r * n..(r + 1) * n].copy_from_slice(col.as_slice());
        }
    }
}

/// Symmetric part `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}
