//! Piecewise-polynomial matrix kernels `F(θ)` on `[-h, 0]` and the constants
//! derived from them.
//!
//! On each piece `[a, b]` the kernel is `F(θ) = Σ_k A_k θ^k`. Outside
//! `[-h, 0]` the kernel is extended by zero. At interior breakpoints
//! [`KernelSpec::evaluate`] returns the mean of the one-sided limits, which is
//! the value composite trapezoid rules need when a breakpoint sits on a node.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;

/// One polynomial piece of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    /// `coeffs[k]` multiplies `θ^k`.
    pub coeffs: Vec<DMatrix<f64>>,
}

impl Piece {
    fn value(&self, theta: f64) -> DMatrix<f64> {
        // Horner in θ
        let mut acc = self.coeffs.last().unwrap().clone();
        for c in self.coeffs.iter().rev().skip(1) {
            acc *= theta;
            acc += c;
        }
        acc
    }

    fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    n: usize,
    h: f64,
    pieces: Vec<Piece>,
}

impl KernelSpec {
    pub fn new(n: usize, h: f64, pieces: Vec<Piece>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidKernel("state dimension n must be positive".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidKernel(format!("delay h must be positive, got {h}")));
        }
        if pieces.is_empty() {
            return Err(Error::InvalidKernel("at least one piece is required".into()));
        }
        let tol = 1e-12 * h.max(1.0);
        if (pieces[0].start + h).abs() > tol {
            return Err(Error::InvalidKernel(format!(
                "first piece must start at -h = {}, starts at {}",
                -h, pieces[0].start
            )));
        }
        if pieces.last().unwrap().end.abs() > tol {
            return Err(Error::InvalidKernel("last piece must end at 0".into()));
        }
        for (j, p) in pieces.iter().enumerate() {
            if !(p.end > p.start) {
                return Err(Error::InvalidKernel(format!("piece {j}: empty or reversed interval")));
            }
            if j > 0 && (pieces[j - 1].end - p.start).abs() > tol {
                return Err(Error::InvalidKernel(format!(
                    "piece {j} starts at {} but piece {} ends at {}",
                    p.start,
                    j - 1,
                    pieces[j - 1].end
                )));
            }
            if p.coeffs.is_empty() {
                return Err(Error::InvalidKernel(format!("piece {j}: no coefficient matrices")));
            }
            for (k, c) in p.coeffs.iter().enumerate() {
                if c.nrows() != n || c.ncols() != n {
                    return Err(Error::InvalidKernel(format!(
                        "piece {j}, power {k}: expected {n}x{n} matrix, got {}x{}",
                        c.nrows(),
                        c.ncols()
                    )));
                }
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "piece {j}, power {k}: non-finite coefficient"
                    )));
                }
            }
        }
        let mut pieces = pieces;
        // snap shared endpoints so lookups are exact
        pieces[0].start = -h;
        let last = pieces.len() - 1;
        pieces[last].end = 0.0;
        for j in 1..pieces.len() {
            pieces[j].start = pieces[j - 1].end;
        }
        Ok(Self { n, h, pieces })
    }

    /// Kernel constant in θ on the whole of `[-h, 0]`.
    pub fn constant(h: f64, matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        Self::new(n, h, vec![Piece { start: -h, end: 0.0, coeffs: vec![matrix] }])
    }

    pub fn zero(n: usize, h: f64) -> Result<Self> {
        Self::constant(h, DMatrix::zeros(n, n))
    }

    /// Scalar kernel `F(θ) = c0 + c1 θ` on `[-h, 0]`.
    pub fn scalar_affine(h: f64, c0: f64, c1: f64) -> Result<Self> {
        Self::new(
            1,
            h,
            vec![Piece {
                start: -h,
                end: 0.0,
                coeffs: vec![DMatrix::from_element(1, 1, c0), DMatrix::from_element(1, 1, c1)],
            }],
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn pieces_mut(&mut self) -> &mut [Piece] {
        &mut self.pieces
    }

    /// Interior breakpoints, strictly inside `(-h, 0)`.
    pub fn breakpoints(&self) -> Vec<f64> {
        self.pieces.iter().skip(1).map(|p| p.start).collect()
    }

    /// Times in `[−span, span]` where `K`, `U` and their derivatives may have
    /// kinks: integer combinations of `h` and the breakpoints with at most
    /// four terms.
    pub fn kink_times(&self, span: f64) -> Vec<f64> {
        let mut gens = vec![self.h];
        gens.extend(self.breakpoints().iter().map(|b| -b));
        let mut out = vec![0.0];
        for _ in 0..4 {
            let mut next = out.clone();
            for &t in &out {
                for &g in &gens {
                    next.extend([t + g, t - g].into_iter().filter(|x| x.abs() <= span + 1e-12));
                }
            }
            next.sort_by(|a, b| a.partial_cmp(b).unwrap());
            next.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
            out = next;
        }
        out
    }

    fn piece_index(&self, theta: f64) -> usize {
        self.pieces.partition_point(|p| p.end <= theta).min(self.pieces.len() - 1)
    }

    /// Limit of `F̃` from the left of `θ`.
    pub fn left_limit(&self, theta: f64) -> DMatrix<f64> {
        if theta <= -self.h || theta > 0.0 {
            return DMatrix::zeros(self.n, self.n);
        }
        // piece with start < θ ≤ end
        let j = self.pieces.partition_point(|p| p.end < theta).min(self.pieces.len() - 1);
        self.pieces[j].value(theta)
    }

    /// Limit of `F̃` from the right of `θ`.
    pub fn right_limit(&self, theta: f64) -> DMatrix<f64> {
        if theta < -self.h || theta >= 0.0 {
            return DMatrix::zeros(self.n, self.n);
        }
        self.pieces[self.piece_index(theta)].value(theta)
    }

    /// `F̃(θ)`: the kernel on `[-h, 0]`, zero elsewhere; mean of one-sided
    /// limits at interior breakpoints.
    pub fn evaluate(&self, theta: f64) -> DMatrix<f64> {
        if theta < -self.h || theta > 0.0 {
            return DMatrix::zeros(self.n, self.n);
        }
        if theta == -self.h {
            return self.right_limit(theta);
        }
        if theta == 0.0 {
            return self.left_limit(theta);
        }
        let j = self.piece_index(theta);
        if j > 0 && self.pieces[j].start == theta {
            return (self.left_limit(theta) + self.right_limit(theta)) * 0.5;
        }
        self.pieces[j].value(theta)
    }

    /// Exact `∫_a^b F̃(θ) θ^power dθ`.
    pub fn weighted_integral(&self, a: f64, b: f64, power: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n, self.n);
        let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
        for p in &self.pieces {
            let l = lo.max(p.start);
            let r = hi.min(p.end);
            if r <= l {
                continue;
            }
            for (k, c) in p.coeffs.iter().enumerate() {
                let e = (k + power + 1) as i32;
                let m = (r.powi(e) - l.powi(e)) / e as f64;
                out += c * (sign * m);
            }
        }
        out
    }

    /// Exact `∫_a^b F̃(θ) dθ`.
    pub fn integral(&self, a: f64, b: f64) -> DMatrix<f64> {
        self.weighted_integral(a, b, 0)
    }

    /// `∫F(θ)dθ` over `[-h, 0]`.
    pub fn moment0(&self) -> DMatrix<f64> {
        self.weighted_integral(-self.h, 0.0, 0)
    }

    /// `∫θF(θ)dθ` over `[-h, 0]`.
    pub fn moment1(&self) -> DMatrix<f64> {
        self.weighted_integral(-self.h, 0.0, 1)
    }

    /// Largest Frobenius norm of `F` over the piece endpoints and a few
    /// interior samples; a cheap bound used for root-search brackets.
    pub fn sup_norm_estimate(&self) -> f64 {
        let mut best = 0.0f64;
        for p in &self.pieces {
            for i in 0..=16 {
                let t = p.start + (p.end - p.start) * i as f64 / 16.0;
                best = best.max(p.value(t).norm());
            }
        }
        best
    }

    /// Characteristic matrix `H(s) = I − ∫ e^{sθ} F(θ) dθ`, in closed form per
    /// polynomial piece.
    pub fn char_matrix(&self, s: Complex64) -> DMatrix<Complex64> {
        let n = self.n;
        let mut out = DMatrix::<Complex64>::identity(n, n);
        for p in &self.pieces {
            let moments = exp_moments(s, p.start, p.end, p.degree());
            for (k, c) in p.coeffs.iter().enumerate() {
                let m = moments[k];
                for i in 0..n {
                    for j in 0..n {
                        out[(i, j)] -= m * c[(i, j)];
                    }
                }
            }
        }
        out
    }

    /// `det H(s)`.
    pub fn char_det(&self, s: Complex64) -> Complex64 {
        linalg::complex_det(self.char_matrix(s))
    }

    /// Minimum of `|det H(jω)|` over `samples` equidistant frequencies in
    /// `[0, ω_max]`, with its location. Conjugate symmetry of real kernels
    /// makes the negative half-axis redundant.
    pub fn imaginary_axis_margin(&self, omega_max: f64, samples: usize) -> Result<(f64, f64)> {
        if !(omega_max > 0.0) || samples < 2 {
            return Err(Error::InvalidArgument(
                "imaginary-axis scan needs omega_max > 0 and at least 2 samples".into(),
            ));
        }
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..samples {
            let w = omega_max * i as f64 / (samples - 1) as f64;
            let m = self.char_det(Complex64::new(0.0, w)).norm();
            if m < best.0 {
                best = (m, w);
            }
        }
        Ok(best)
    }

    /// `K₀ = (∫F − I)^{-1}`, `S`, `P` and the moments for weight `W`.
    pub fn derive_constants(&self, w: &DMatrix<f64>) -> Result<KernelConstants> {
        let n = self.n;
        if w.nrows() != n || w.ncols() != n {
            return Err(Error::InvalidWeight);
        }
        let wnorm = w.norm();
        if (w - w.transpose()).norm() > 1e-12 * wnorm.max(1.0) || w.clone().cholesky().is_none() {
            return Err(Error::InvalidWeight);
        }
        let moment0 = self.moment0();
        let moment1 = self.moment1();
        let a = &moment0 - DMatrix::identity(n, n);
        let sv = a.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(cond < SINGULAR_COND) || smax == 0.0 {
            return Err(Error::SingularAtZero { cond });
        }
        let k0 = a.try_inverse().ok_or(Error::SingularAtZero { cond })?;
        let s = &k0 * &moment1 * &k0;
        let raw_p = s.transpose() * w * &k0 - k0.transpose() * w * &s;
        let asymmetry_defect = (&raw_p + raw_p.transpose()).norm();
        let p = (&raw_p - raw_p.transpose()) * 0.5;
        Ok(KernelConstants {
            k0,
            moment0,
            moment1,
            s,
            p,
            w: w.clone(),
            p_defect: asymmetry_defect,
        })
    }

    /// Samples of `F` at `θ_m = −mΔ`, `m = 0..=h/Δ`, for trapezoid rules.
    pub fn node_samples(&self, step: f64) -> Result<NodeSamples> {
        let count = grid_count(self.h, step).ok_or_else(|| {
            Error::GridMismatch(format!("step {step} does not divide h = {}", self.h))
        })?;
        for b in self.breakpoints() {
            if grid_count(-b, step).is_none() {
                return Err(Error::GridMismatch(format!(
                    "kernel breakpoint {b} is not a multiple of step {step}"
                )));
            }
        }
        let n = self.n;
        let nn = n * n;
        let mut left = Vec::with_capacity((count + 1) * nn);
        let mut right = Vec::with_capacity((count + 1) * nn);
        for m in 0..=count {
            let theta = if m == count { -self.h } else { -(m as f64) * step };
            // inside the support the limits never vanish at the edges
            let l = if m == count { self.right_limit(theta) } else { self.left_limit(theta) };
            let r = if m == 0 { self.left_limit(theta) } else { self.right_limit(theta) };
            linalg::push_row_major(&mut left, &l);
            linalg::push_row_major(&mut right, &r);
        }
        let mid = left.iter().zip(&right).map(|(a, b)| 0.5 * (a + b)).collect();
        Ok(NodeSamples { n, step, count, left, right, mid })
    }
}

/// Condition number above which `∫F − I` is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Number of grid steps of size `step` in `length`, if it is (numerically) an
/// integer.
pub fn grid_count(length: f64, step: f64) -> Option<usize> {
    if !(step > 0.0) || !(length >= 0.0) {
        return None;
    }
    let q = length / step;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.max(1.0) {
        Some(r as usize)
    } else {
        None
    }
}

/// `∫_a^b θ^k e^{sθ} dθ` for `k = 0..=degree`.
///
/// A Taylor series in `s` is used when `|s|·max(|a|,|b|)` is small, the
/// integration-by-parts recursion otherwise.
fn exp_moments(s: Complex64, a: f64, b: f64, degree: usize) -> Vec<Complex64> {
    let scale = a.abs().max(b.abs());
    let mut out = vec![Complex64::new(0.0, 0.0); degree + 1];
    if s.norm() * scale <= 4.0 {
        for (k, slot) in out.iter_mut().enumerate() {
            let mut term_coef = Complex64::new(1.0, 0.0); // s^m / m!
            let mut sum = Complex64::new(0.0, 0.0);
            for m in 0..200usize {
                let e = (k + m + 1) as i32;
                let pm = (b.powi(e) - a.powi(e)) / e as f64;
                let term = term_coef * pm;
                sum += term;
                if m > 2 && term.norm() <= 1e-17 * sum.norm().max(1e-300) {
                    break;
                }
                term_coef *= s / (m as f64 + 1.0);
            }
            *slot = sum;
        }
    } else {
        let ea = (s * a).exp();
        let eb = (s * b).exp();
        out[0] = (eb - ea) / s;
        for k in 1..=degree {
            let ki = k as i32;
            out[k] = (eb * b.powi(ki) - ea * a.powi(ki)) / s - out[k - 1] * (k as f64) / s;
        }
    }
    out
}

/// Constants derived from the kernel and the weight matrix `W`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConstants {
    pub k0: DMatrix<f64>,
    pub moment0: DMatrix<f64>,
    pub moment1: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// Skew-symmetric `P = SᵀWK₀ − K₀ᵀWS` (explicitly antisymmetrised).
    pub p: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// `‖P + Pᵀ‖_F` before antisymmetrisation.
    pub p_defect: f64,
}

impl KernelConstants {
    /// `K₀ᵀ W K₀`, the slope of the symmetry fold.
    pub fn fold_slope(&self) -> DMatrix<f64> {
        self.k0.transpose() * &self.w * &self.k0
    }
}

/// Kernel values on the nodes `θ_m = −mΔ`, stored flat in row-major order.
///
/// `left[m]`/`right[m]` are the one-sided limits of `F` at `θ_m` taken from
/// inside the support (so `left[0] = F(0⁻)` and `right[count] = F(−h⁺)`);
/// `mid[m]` is their mean.
#[derive(Debug, Clone)]
pub struct NodeSamples {
    pub n: usize,
    pub step: f64,
    pub count: usize,
    left: Vec<f64>,
    right: Vec<f64>,
    mid: Vec<f64>,
}

impl NodeSamples {
    pub fn left(&self, m: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.left[m * nn..(m + 1) * nn]
    }

    pub fn right(&self, m: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.right[m * nn..(m + 1) * nn]
    }

    pub fn mid(&self, m: usize) -> &[f64] {
        let nn = self.n * self.n;
        &self.mid[m * nn..(m + 1) * nn]
    }

    /// Same samples for `Fᵀ`.
    pub fn transposed(&self) -> Self {
        let n = self.n;
        let tr = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for (blk_in, blk_out) in v.chunks(n * n).zip(out.chunks_mut(n * n)) {
                for i in 0..n {
                    for j in 0..n {
                        blk_out[j * n + i] = blk_in[i * n + j];
                    }
                }
            }
            out
        };
        Self {
            n,
            step: self.step,
            count: self.count,
            left: tr(&self.left),
            right: tr(&self.right),
            mid: tr(&self.mid),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn two_piece() -> KernelSpec {
        KernelSpec::new(
            1,
            1.0,
            vec![
                Piece { start: -1.0, end: -0.5, coeffs: vec![dmatrix![1.0]] },
                Piece { start: -0.5, end: 0.0, coeffs: vec![dmatrix![3.0], dmatrix![2.0]] },
            ],
        )
        .unwrap()
    }

    #[test]
    fn evaluate_zero_kernel_and_outside_support() {
        let k = KernelSpec::zero(2, 1.0).unwrap();
        assert_eq!(k.evaluate(-0.5), DMatrix::zeros(2, 2));
        let f = KernelSpec::scalar_affine(1.0, 1.0, -1.0).unwrap();
        assert_abs_diff_eq!(f.evaluate(-0.5)[(0, 0)], 1.5, epsilon = 1e-15);
        assert_eq!(f.evaluate(-2.0)[(0, 0)], 0.0);
        assert_eq!(f.evaluate(0.1)[(0, 0)], 0.0);
    }

    #[test]
    fn breakpoint_returns_mean_of_limits() {
        let k = two_piece();
        // left piece 1, right piece 3 + 2(-0.5) = 2
        assert_abs_diff_eq!(k.left_limit(-0.5)[(0, 0)], 1.0);
        assert_abs_diff_eq!(k.right_limit(-0.5)[(0, 0)], 2.0);
        assert_abs_diff_eq!(k.evaluate(-0.5)[(0, 0)], 1.5);
        assert_abs_diff_eq!(k.evaluate(0.0)[(0, 0)], 3.0);
        assert_abs_diff_eq!(k.evaluate(-1.0)[(0, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_partitions() {
        let gap = KernelSpec::new(
            1,
            1.0,
            vec![
                Piece { start: -1.0, end: -0.6, coeffs: vec![dmatrix![1.0]] },
                Piece { start: -0.5, end: 0.0, coeffs: vec![dmatrix![1.0]] },
            ],
        );
        assert!(matches!(gap, Err(Error::InvalidKernel(_))));
        let short = KernelSpec::new(
            1,
            1.0,
            vec![Piece { start: -0.9, end: 0.0, coeffs: vec![dmatrix![1.0]] }],
        );
        assert!(short.is_err());
        let wrong_dim = KernelSpec::new(
            2,
            1.0,
            vec![Piece { start: -1.0, end: 0.0, coeffs: vec![dmatrix![1.0]] }],
        );
        assert!(wrong_dim.is_err());
        assert!(KernelSpec::zero(1, 0.0).is_err());
        assert!(KernelSpec::constant(1.0, dmatrix![f64::NAN]).is_err());
    }

    #[test]
    fn constants_for_simple_kernels() {
        let w = DMatrix::identity(1, 1);
        let z = KernelSpec::zero(1, 1.0).unwrap().derive_constants(&w).unwrap();
        assert_abs_diff_eq!(z.k0[(0, 0)], -1.0);
        assert_abs_diff_eq!(z.s[(0, 0)], 0.0);
        assert_abs_diff_eq!(z.p[(0, 0)], 0.0);

        let half = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
        let c = half.derive_constants(&w).unwrap();
        assert_abs_diff_eq!(c.k0[(0, 0)], -2.0, epsilon = 1e-14);
        // S = K0 (−c h²/2) K0 = 4 · (−0.25)
        assert_abs_diff_eq!(c.s[(0, 0)], -1.0, epsilon = 1e-14);

        let one = KernelSpec::constant(1.0, dmatrix![1.0]).unwrap();
        assert!(matches!(one.derive_constants(&w), Err(Error::SingularAtZero { .. })));
    }

    #[test]
    fn weight_must_be_spd() {
        let k = KernelSpec::zero(2, 1.0).unwrap();
        assert_eq!(k.derive_constants(&dmatrix![1.0, 0.5; 0.0, 1.0]), Err(Error::InvalidWeight));
        assert_eq!(k.derive_constants(&dmatrix![1.0, 0.0; 0.0, -1.0]), Err(Error::InvalidWeight));
    }

    #[test]
    fn k0_inverts_moment_minus_identity() {
        let b = dmatrix![0.1, 0.3; -0.7, 0.2];
        let k = KernelSpec::new(
            2,
            1.5,
            vec![
                Piece { start: -1.5, end: -0.5, coeffs: vec![b.clone(), b.transpose()] },
                Piece { start: -0.5, end: 0.0, coeffs: vec![b.clone() * 2.0] },
            ],
        )
        .unwrap();
        let c = k.derive_constants(&dmatrix![2.0, 0.3; 0.3, 1.0]).unwrap();
        let prod = (&c.moment0 - DMatrix::identity(2, 2)) * &c.k0;
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((&c.p + c.p.transpose()).norm() == 0.0);
        assert!(c.p_defect < 1e-12);
    }

    #[test]
    fn char_matrix_constant_kernel_closed_form() {
        let c = 0.7;
        let k = KernelSpec::constant(1.0, dmatrix![c]).unwrap();
        for s in [
            Complex64::new(0.3, 2.0),
            Complex64::new(-3.0, 0.5),
            Complex64::new(10.0, -7.0),
        ] {
            let expected = 1.0 - c * (1.0 - (-s).exp()) / s;
            let got = k.char_matrix(s)[(0, 0)];
            assert!((got - expected).norm() < 1e-12 * expected.norm().max(1.0), "s = {s}");
        }
        // tiny s: the naive closed form cancels, expm1 does not
        let s = 1e-7f64;
        let expected = 1.0 + c * (-s).exp_m1() / s;
        assert!((k.char_matrix(Complex64::new(s, 0.0))[(0, 0)].re - expected).abs() < 1e-14);
        let at0 = k.char_matrix(Complex64::new(0.0, 0.0))[(0, 0)];
        assert_abs_diff_eq!(at0.re, 1.0 - c, epsilon = 1e-15);
    }

    #[test]
    fn char_matrix_polynomial_piece_against_quadrature() {
        let k = two_piece();
        let s = Complex64::new(0.4, 3.0);
        // composite Simpson on each piece with a fine grid
        let mut integral = Complex64::new(0.0, 0.0);
        for p in k.pieces() {
            let m = 2000;
            let dt = (p.end - p.start) / m as f64;
            for i in 0..=m {
                let t = p.start + dt * i as f64;
                let wgt = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                integral += (s * t).exp() * p.value(t)[(0, 0)] * wgt * dt / 3.0;
            }
        }
        let got = k.char_matrix(s)[(0, 0)];
        assert!((got - (1.0 - integral)).norm() < 1e-10);
    }

    #[test]
    fn margin_screens() {
        let z = KernelSpec::zero(1, 1.0).unwrap();
        let (m, _) = z.imaginary_axis_margin(10.0, 11).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-15);
        let one = KernelSpec::constant(1.0, dmatrix![1.0]).unwrap();
        let (m, w) = one.imaginary_axis_margin(50.0, 101).unwrap();
        assert!(m < 1e-12);
        assert_eq!(w, 0.0);
        assert!(z.imaginary_axis_margin(0.0, 10).is_err());
    }

    #[test]
    fn node_samples_respect_one_sided_conventions() {
        let k = two_piece();
        let ns = k.node_samples(0.25).unwrap();
        assert_eq!(ns.count, 4);
        assert_eq!(ns.left(0)[0], 3.0); // F(0-)
        assert_eq!(ns.right(4)[0], 1.0); // F(-h+)
        assert_eq!(ns.left(2)[0], 1.0);
        assert_eq!(ns.right(2)[0], 2.0);
        assert_eq!(ns.mid(2)[0], 1.5);
        assert!(matches!(k.node_samples(0.3), Err(Error::GridMismatch(_))));
        assert!(matches!(k.node_samples(1.0 / 3.0), Err(Error::GridMismatch(_))));
    }
}
