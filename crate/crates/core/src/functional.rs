//! The kernel `Q(ξ₁, ξ₂)`, the functionals `v₀`, `v₁`, the bilinear form `z`
//! and special initial functions `ψ(θ) = Σ (K(τᵢ + θ) − K₀) γᵢ`.
//!
//! ```text
//! Q(ξ₁,ξ₂) = −∫_{-h}^{ξ₂} U″(ξ₁−ξ₂+θ) F(θ) dθ
//!            + ∫_{ξ₁}^0 ∫_{-h}^{ξ₂} Fᵀ(θ₁) U″(ξ₁−θ₁−ξ₂+θ₂) F(θ₂) dθ₂ dθ₁
//! ```
//!
//! All quadratures here are trapezoid rules on the `Δ_U` nodes, with one-sided
//! limits wherever a jump sits on a node.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernel::KernelSpec;
use crate::lyapunov::LyapunovTable;
use crate::par::{self, Execution};
use crate::quad;

/// `Q` tabulated at `ξᵢ = −aΔ_U`, `a = 0..=N`.
#[derive(Debug, Clone)]
pub struct QKernel {
    n: usize,
    segments: usize,
    step: f64,
    w: DMatrix<f64>,
    /// row-major in `(a, b)`
    values: Vec<DMatrix<f64>>,
}

impl QKernel {
    pub fn new(table: &LyapunovTable, kernel: &KernelSpec) -> Result<Self> {
        Self::with_execution(table, kernel, Execution::default())
    }

    pub fn with_execution(table: &LyapunovTable, kernel: &KernelSpec, exec: Execution) -> Result<Self> {
        let n = kernel.n();
        let big_n = table.segments();
        let step = table.step();
        let samples = kernel.node_samples(step)?;
        let mat = |v: &[f64]| DMatrix::from_row_slice(n, n, v);
        let f_left: Vec<_> = (0..=big_n).map(|m| mat(samples.left(m))).collect();
        let f_right: Vec<_> = (0..=big_n).map(|m| mat(samples.right(m))).collect();
        let f_mid: Vec<_> = (0..=big_n).map(|m| mat(samples.mid(m))).collect();

        // U″ at node j ∈ [−2N, 0]: right value and left limit
        let upp = table.second_derivative();
        let off = 2 * big_n as isize;
        let upp_right = |j: isize| upp.value((j + off) as usize);
        let upp_left = |j: isize| upp.left_limit((j + off) as usize);

        // a_tab[e][b] = ∫_{-h}^{-bΔ} U″(eΔ + θ) F(θ) dθ for e ∈ [−N, N], b ≥ max(e, 0)
        let half = 0.5 * step;
        let a_tab: Vec<Vec<DMatrix<f64>>> = par::map_indexed(exec, 2 * big_n + 1, |ei| {
            let e = ei as isize - big_n as isize;
            let b0 = e.max(0) as usize;
            let mut col = vec![DMatrix::zeros(n, n); big_n + 1];
            let mut acc = DMatrix::zeros(n, n);
            for k in (b0..big_n).rev() {
                let ki = k as isize;
                acc += (upp_right(e - ki - 1) * &f_right[k + 1] + upp_left(e - ki) * &f_left[k]) * half;
                col[k] = acc.clone();
            }
            col
        });
        let a_at = |e: isize, b: usize| &a_tab[(e + big_n as isize) as usize][b];

        let ft_left: Vec<_> = f_left.iter().map(|m| m.transpose()).collect();
        let ft_right: Vec<_> = f_right.iter().map(|m| m.transpose()).collect();
        let ft_mid: Vec<_> = f_mid.iter().map(|m| m.transpose()).collect();
        let rows: Vec<Vec<DMatrix<f64>>> = par::map_indexed(exec, big_n + 1, |a| {
            (0..=big_n)
                .map(|b| {
                    let shift = b as isize - a as isize;
                    let mut q = -a_at(shift, b);
                    if a > 0 {
                        q += &ft_left[0] * a_at(shift, b) * half;
                        for l in 1..a {
                            q += &ft_mid[l] * a_at(shift + l as isize, b) * step;
                        }
                        q += &ft_right[a] * a_at(shift + a as isize, b) * half;
                    }
                    q
                })
                .collect()
        });
        Ok(Self {
            n,
            segments: big_n,
            step,
            w: table.constants().w.clone(),
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `Q(−aΔ, −bΔ)`.
    pub fn at(&self, a: usize, b: usize) -> &DMatrix<f64> {
        &self.values[a * (self.segments + 1) + b]
    }

    /// Bilinear interpolation of the table.
    pub fn eval(&self, xi1: f64, xi2: f64) -> Result<DMatrix<f64>> {
        let h = self.step * self.segments as f64;
        let locate = |xi: f64| -> Result<(usize, f64)> {
            if !(xi >= -h - 1e-12 && xi <= 1e-12) {
                return Err(Error::OutOfRange { arg: xi, lo: -h, hi: 0.0 });
            }
            let q = (-xi / self.step).clamp(0.0, self.segments as f64);
            let i = (q.floor() as usize).min(self.segments.saturating_sub(1));
            Ok((i, q - i as f64))
        };
        let (a, fa) = locate(xi1)?;
        let (b, fb) = locate(xi2)?;
        let a1 = (a + 1).min(self.segments);
        let b1 = (b + 1).min(self.segments);
        Ok(self.at(a, b) * ((1.0 - fa) * (1.0 - fb))
            + self.at(a1, b) * (fa * (1.0 - fb))
            + self.at(a, b1) * ((1.0 - fa) * fb)
            + self.at(a1, b1) * (fa * fb))
    }

    /// Trapezoid weights for `φ` on the `Δ_U` grid over `[−h, 0]`, indexed by
    /// `a` (`ξ = −aΔ`): right value plus left limit, one-sided at the ends.
    fn node_sums(&self, phi: &GridFunction) -> Result<Vec<DMatrix<f64>>> {
        self.check(phi)?;
        let last = self.segments;
        Ok((0..=last)
            .map(|a| {
                let i = last - a;
                let mut v = DMatrix::zeros(phi.shape().0, phi.shape().1);
                if i < last {
                    v += phi.value(i);
                }
                if i > 0 {
                    v += phi.left_limit(i);
                }
                v
            })
            .collect())
    }

    fn check(&self, phi: &GridFunction) -> Result<()> {
        let ok = phi.len() == self.segments + 1
            && (phi.step() - self.step).abs() <= 1e-9 * self.step
            && phi.shape().0 == self.n;
        if ok {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "expected {} nodes with step {} and {} rows, got {} nodes with step {} and {} rows",
                self.segments + 1,
                self.step,
                self.n,
                phi.len(),
                phi.step(),
                phi.shape().0
            )))
        }
    }

    /// `∫∫ φᵀ(ξ₁) Q(ξ₁,ξ₂) ψ(ξ₂)`. Functions are taken on `[−h, 0]` by node
    /// position, so a window `[t−h, t]` of a trajectory can be passed as is.
    pub fn double_integral(&self, phi: &GridFunction, psi: &GridFunction) -> Result<DMatrix<f64>> {
        let pa = self.node_sums(phi)?;
        let pb = self.node_sums(psi)?;
        let quarter = 0.25 * self.step * self.step;
        let qpsi: Vec<DMatrix<f64>> = (0..=self.segments)
            .map(|a| {
                let mut acc = DMatrix::zeros(self.n, pb[0].ncols());
                for (b, v) in pb.iter().enumerate() {
                    acc += self.at(a, b) * v;
                }
                acc
            })
            .collect();
        let mut out = DMatrix::zeros(pa[0].ncols(), pb[0].ncols());
        for (u, qv) in pa.iter().zip(&qpsi) {
            out += u.transpose() * qv;
        }
        Ok(out * quarter)
    }

    /// `∫ φᵀ W ψ` by the trapezoid rule.
    pub fn weight_integral(&self, phi: &GridFunction, psi: &GridFunction) -> Result<DMatrix<f64>> {
        self.check(phi)?;
        self.check(psi)?;
        let last = self.segments;
        let mut out = DMatrix::zeros(phi.shape().1, psi.shape().1);
        for i in 0..last {
            out += phi.value(i).transpose() * &self.w * psi.value(i);
            out += phi.left_limit(i + 1).transpose() * &self.w * psi.left_limit(i + 1);
        }
        Ok(out * (0.5 * self.step))
    }

    /// The bilinear form `z(φ, ψ)` for column functions.
    pub fn z(&self, phi: &GridFunction, psi: &GridFunction) -> Result<f64> {
        if phi.shape().1 != 1 || psi.shape().1 != 1 {
            return Err(Error::InvalidArgument("z takes n×1 functions".into()));
        }
        Ok((self.double_integral(phi, psi)? + self.weight_integral(phi, psi)?)[(0, 0)])
    }

    pub fn v0(&self, phi: &GridFunction) -> Result<f64> {
        if phi.shape().1 != 1 {
            return Err(Error::InvalidArgument("v0 takes an n×1 function".into()));
        }
        Ok(self.double_integral(phi, phi)?[(0, 0)])
    }

    pub fn v1(&self, phi: &GridFunction) -> Result<f64> {
        self.z(phi, phi)
    }
}

/// `Q(ξ₁, ξ₂)` straight from its definition, by Gauss–Legendre over a
/// piecewise-cubic reconstruction of `U″`. Independent of [`QKernel`] and
/// much slower.
pub fn q_eval(table: &LyapunovTable, kernel: &KernelSpec, xi1: f64, xi2: f64) -> Result<DMatrix<f64>> {
    let h = kernel.h();
    for xi in [xi1, xi2] {
        if !(xi >= -h - 1e-12 && xi <= 1e-12) {
            return Err(Error::OutOfRange { arg: xi, lo: -h, hi: 0.0 });
        }
    }
    let n = kernel.n();
    let du = table.step();
    let kinks = kernel.kink_times(2.0 * h);
    let upp = table.second_derivative();
    let upp = upp.cubic(&kinks);
    let u2 = |t: f64| upp.eval(t.min(0.0)).unwrap();
    let fbreaks = kernel.breakpoints();
    let breaks = |shift: f64| {
        let mut b = fbreaks.clone();
        b.extend(quad::lattice(-h, 0.0, du, -shift));
        b.extend(kinks.iter().map(|k| k - shift));
        b
    };
    let inner = |shift: f64| {
        quad::integrate(-h, xi2, &breaks(shift), du, n, n, |th| u2(shift + th) * kernel.evaluate(th))
    };
    let single = inner(xi1 - xi2);
    let mut outer_breaks = fbreaks.clone();
    outer_breaks.extend(quad::lattice(xi1, 0.0, du, xi1 - xi2));
    outer_breaks.extend(kinks.iter().map(|k| xi1 - xi2 - k));
    let double = quad::integrate(xi1, 0.0, &outer_breaks, du, n, n, |t1| {
        kernel.evaluate(t1).transpose() * inner(xi1 - t1 - xi2)
    });
    Ok(double - single)
}

/// `ψ(θ) = Σ (K(τᵢ + θ) − K₀) γᵢ` on `[−h, 0]`.
#[derive(Debug, Clone)]
pub struct SpecialFunction<'a> {
    k: &'a GridFunction,
    k0: DMatrix<f64>,
    h: f64,
    taus: Vec<f64>,
    gammas: Vec<DVector<f64>>,
}

/// `k` is `K` on `[0, T]` with `T ≥ h`, extended by `K₀`.
pub fn build_special<'a>(
    k: &'a GridFunction,
    h: f64,
    taus: Vec<f64>,
    gammas: Vec<DVector<f64>>,
) -> Result<SpecialFunction<'a>> {
    let k0 = k
        .extension()
        .cloned()
        .ok_or_else(|| Error::InvalidArgument("K must carry its extension K₀".into()))?;
    let n = k0.nrows();
    if taus.is_empty() || taus.len() != gammas.len() {
        return Err(Error::InvalidArgument("need r ≥ 1 points and as many vectors".into()));
    }
    if k.end() < h - 1e-12 {
        return Err(Error::InvalidArgument(format!("K covers [0, {}], need [0, {h}]", k.end())));
    }
    let tol = 1e-12 * h;
    for (i, &t) in taus.iter().enumerate() {
        if !(t > 0.0 && t <= h + tol) || (i > 0 && t <= taus[i - 1]) {
            return Err(Error::InvalidArgument("τ must be increasing in (0, h]".into()));
        }
    }
    if gammas.iter().any(|g| g.len() != n) {
        return Err(Error::InvalidArgument(format!("γ must have length {n}")));
    }
    Ok(SpecialFunction { k, k0, h, taus, gammas })
}

impl SpecialFunction<'_> {
    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn gammas(&self) -> &[DVector<f64>] {
        &self.gammas
    }

    /// `γ` stacked into one vector of length `nr`.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.k0.nrows();
        DVector::from_iterator(n * self.gammas.len(), self.gammas.iter().flat_map(|g| g.iter().cloned()))
    }

    /// `(ψ(θ⁻), ψ(θ⁺))`.
    pub fn limits(&self, theta: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let n = self.k0.nrows();
        let mut l = DVector::zeros(n);
        let mut r = DVector::zeros(n);
        for (t, g) in self.taus.iter().zip(&self.gammas) {
            let (kl, kr) = self.k.limits(t + theta)?;
            l += (kl - &self.k0) * g;
            r += (kr - &self.k0) * g;
        }
        Ok((l, r))
    }

    /// Right-continuous value.
    pub fn eval(&self, theta: f64) -> Result<DVector<f64>> {
        Ok(self.limits(theta)?.1)
    }

    /// Samples on `[−h, 0]` with `segments` steps; every `−τᵢ` must be a node.
    pub fn sample(&self, segments: usize) -> Result<GridFunction> {
        let step = self.h / segments as f64;
        for &t in &self.taus {
            let q = t / step;
            if (q - q.round()).abs() > 1e-7 {
                return Err(Error::GridMismatch(format!("τ = {t} is not a multiple of {step}")));
            }
        }
        let mut values = Vec::with_capacity(segments + 1);
        let mut lefts = Vec::new();
        for i in 0..=segments {
            let theta = if i == 0 { -self.h } else { -self.h + i as f64 * step };
            let (l, r) = self.limits(theta)?;
            if i > 0 && (&l - &r).amax() > 0.0 {
                lefts.push((i, DMatrix::from_column_slice(l.len(), 1, l.as_slice())));
            }
            values.push(DMatrix::from_column_slice(r.len(), 1, r.as_slice()));
        }
        let mut g = GridFunction::new(-self.h, step, values)?;
        for (i, m) in lefts {
            g.set_left_limit(i, m);
        }
        Ok(g)
    }
}

/// `ψ` on the equidistant points `τᵢ = ih/r` matching `φ` at every `−τᵢ`.
pub fn approximate_by_special<'a>(
    k: &'a GridFunction,
    h: f64,
    phi: &GridFunction,
    r: usize,
) -> Result<SpecialFunction<'a>> {
    if r == 0 {
        return Err(Error::InvalidArgument("r must be at least 1".into()));
    }
    let k0 = k
        .extension()
        .ok_or_else(|| Error::InvalidArgument("K must carry its extension K₀".into()))?;
    let taus: Vec<f64> = (1..=r).map(|i| i as f64 * h / r as f64).collect();
    let col = |t: f64| -> Result<DVector<f64>> { Ok(phi.eval(t)?.column(0).into_owned()) };
    let mut gammas = vec![DVector::zeros(k0.nrows()); r];
    for kk in (0..r).rev() {
        let mut g = col(-taus[kk])?;
        for i in kk + 1..r {
            g -= (k.eval(taus[i] - taus[kk])? - k0) * &gammas[i];
        }
        gammas[kk] = g;
    }
    build_special(k, h, taus, gammas)
}
