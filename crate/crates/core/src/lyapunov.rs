//! The delay Lyapunov matrix `U(τ)`.
//!
//! Samples are stored on `[0, 2h]`; negative arguments always go through the
//! symmetry property `U(−τ) = Uᵀ(τ) + P − τK₀ᵀWK₀`.
//!
//! Two constructions:
//! - [`lyapunov_direct`]: the improper integral `∫_0^∞ (K(t) − K₀)ᵀ W K(t+τ) dt`,
//!   only meaningful for stable systems;
//! - [`lyapunov_collocate`]: the dynamic property on `[0, h]` together with
//!   the negative-side identity `U(τ) = ∫Fᵀ(θ)U(τ−θ)dθ + WS − τWK₀` (`τ ≤ 0`),
//!   solved as a dense least-squares problem, then extended to `(h, 2h]` by
//!   marching the dynamic property. Works whether or not the system is stable.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundamental::fundamental_derivative;
use crate::grid::GridFunction;
use crate::kernel::{grid_count, KernelConstants, KernelSpec};
use crate::linalg;
use crate::march::{march, Marched};
use crate::quad;

/// Collocation systems with a larger condition estimate are rejected.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LyapunovMethod {
    Direct,
    Collocation,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `max|R_ii| / min|R_ii|` of the least-squares QR (collocation only).
    pub condition: Option<f64>,
    /// Largest residual of the collocated dynamic property.
    pub dynamic_residual: f64,
    /// Largest residual of the collocated negative-side identity.
    pub negative_residual: f64,
    /// Rough size of the truncated tail (direct method only).
    pub tail_estimate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTable {
    constants: KernelConstants,
    fold: DMatrix<f64>,
    h: f64,
    segments: usize,
    step: f64,
    values: Vec<DMatrix<f64>>,
    method: LyapunovMethod,
    report: SolveReport,
    kinks: Vec<isize>,
}

impl LyapunovTable {
    fn new(
        kernel: &KernelSpec,
        constants: &KernelConstants,
        segments: usize,
        values: Vec<DMatrix<f64>>,
        method: LyapunovMethod,
        report: SolveReport,
    ) -> Self {
        debug_assert_eq!(values.len(), 2 * segments + 1);
        let h = kernel.h();
        let step = h / segments as f64;
        let nn = 2 * segments as isize;
        let kinks = kernel
            .kink_times(2.0 * h)
            .into_iter()
            .filter_map(|t| {
                let q = t / step;
                let j = q.round();
                ((q - j).abs() < 1e-6 && j.abs() < nn as f64 && j != 0.0).then_some(j as isize)
            })
            .collect();
        Self {
            kinks,
            fold: constants.fold_slope(),
            constants: constants.clone(),
            h,
            segments,
            step,
            values,
            method,
            report,
        }
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.constants
    }

    pub fn n(&self) -> usize {
        self.constants.k0.nrows()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// `N`, the number of steps per delay.
    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn method(&self) -> LyapunovMethod {
        self.method
    }

    pub fn report(&self) -> &SolveReport {
        &self.report
    }

    /// Stored samples `U(kΔ)`, `k = 0..=2N`.
    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// `U(jΔ)` for `|j| ≤ 2N`.
    pub fn node(&self, j: isize) -> DMatrix<f64> {
        if j >= 0 {
            self.values[j as usize].clone()
        } else {
            let tau = j as f64 * self.step;
            self.values[(-j) as usize].transpose() + &self.constants.p + &self.fold * tau
        }
    }

    /// `U(τ)` for `τ ∈ [−2h, 2h]`, piecewise-linear between nodes.
    pub fn u_eval(&self, tau: f64) -> Result<DMatrix<f64>> {
        let lim = 2.0 * self.h;
        if !(tau.abs() <= lim * (1.0 + 1e-12)) {
            return Err(Error::OutOfRange { arg: tau, lo: -lim, hi: lim });
        }
        if tau < 0.0 {
            let pos = self.positive(-tau);
            return Ok(pos.transpose() + &self.constants.p + &self.fold * tau);
        }
        Ok(self.positive(tau))
    }

    fn positive(&self, tau: f64) -> DMatrix<f64> {
        let q = (tau / self.step).clamp(0.0, (2 * self.segments) as f64);
        let i = (q.floor() as usize).min(2 * self.segments - 1);
        let f = q - i as f64;
        if f == 0.0 {
            return self.values[i].clone();
        }
        &self.values[i] * (1.0 - f) + &self.values[i + 1] * f
    }

    /// `U′` on `[−2h, 2h]` by finite differences, never across `τ = 0`: the
    /// node at 0 carries `U′(0⁺)` with `U′(0⁻)` as its left limit.
    pub fn derivative(&self) -> GridFunction {
        let nn = 2 * self.segments as isize;
        let d = self.step;
        let u = |j: isize| self.node(j);
        let fwd = |j: isize| (u(j) * -3.0 + u(j + 1) * 4.0 - u(j + 2)) / (2.0 * d);
        let bwd = |j: isize| (u(j) * 3.0 - u(j - 1) * 4.0 + u(j - 2)) / (2.0 * d);
        let values = (-nn..=nn)
            .map(|j| {
                if j == -nn || j == 0 || self.kinks.contains(&j) {
                    fwd(j)
                } else if j == nn {
                    bwd(j)
                } else {
                    (u(j + 1) - u(j - 1)) / (2.0 * d)
                }
            })
            .collect();
        let mut g = GridFunction::new(-2.0 * self.h, d, values).expect("nonempty");
        g.set_left_limit(nn as usize, bwd(0));
        for &j in &self.kinks {
            g.set_left_limit((j + nn) as usize, bwd(j));
        }
        g
    }

    /// `U″` on `[−2h, 0]` by second differences, one-sided at the ends and
    /// at kinks of `U′` (where the left limit is kept as well). Left-side
    /// stencils never touch the kink node: the collocation error is only
    /// piecewise smooth there.
    pub fn second_derivative(&self) -> GridFunction {
        let nn = 2 * self.segments as isize;
        let d2 = self.step * self.step;
        let u = |j: isize| self.node(j);
        let bwd = |j: isize| (u(j) * 2.0 - u(j - 1) * 5.0 + u(j - 2) * 4.0 - u(j - 3)) / d2;
        let fwd = |j: isize| (u(j) * 2.0 - u(j + 1) * 5.0 + u(j + 2) * 4.0 - u(j + 3)) / d2;
        let left = |j: isize| if j - 5 >= -nn { bwd(j - 1) * 2.0 - bwd(j - 2) } else { bwd(j) };
        let inner: Vec<isize> = self.kinks.iter().cloned().filter(|&j| j < 0 && j > -nn).collect();
        let kink = |j: isize| j == 0 || inner.contains(&j);
        let values = (-nn..=0)
            .map(|j| {
                if j == 0 {
                    left(0)
                } else if j == -nn || inner.contains(&j) {
                    fwd(j)
                } else if kink(j + 1) && j - 3 >= -nn {
                    bwd(j)
                } else {
                    (u(j + 1) - u(j) * 2.0 + u(j - 1)) / d2
                }
            })
            .collect();
        let mut g = GridFunction::new(-2.0 * self.h, self.step, values).expect("nonempty");
        for j in inner {
            g.set_left_limit((j + nn) as usize, left(j));
        }
        g
    }

    /// Central second difference of `U` at `τ < 0`, with step `Δ_U`.
    pub fn u_second_derivative(&self, tau: f64) -> Result<DMatrix<f64>> {
        let d = self.step;
        let lo = -2.0 * self.h + d;
        let hi = -d;
        if !(tau >= lo - 1e-12 && tau <= hi + 1e-12) {
            return Err(Error::OutOfRange { arg: tau, lo, hi });
        }
        Ok((self.u_eval(tau + d)? - self.u_eval(tau)? * 2.0 + self.u_eval(tau - d)?) / (d * d))
    }

    /// `U` on `[−2h, 2h]` as a grid function.
    pub fn grid(&self) -> GridFunction {
        let nn = 2 * self.segments as isize;
        let values = (-nn..=nn).map(|j| self.node(j)).collect();
        GridFunction::new(-2.0 * self.h, self.step, values).expect("nonempty")
    }

    /// CSV with columns `tau, entry_11, …` over `[−2h, 2h]`.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let g = self.grid();
        let mut buf = Vec::new();
        g.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("ascii");
        let mut w = w;
        w.write_all(text.replacen("t,", "tau,", 1).as_bytes())
    }
}

/// `U(τ)`; see [`LyapunovTable::u_eval`].
pub fn u_eval(table: &LyapunovTable, tau: f64) -> Result<DMatrix<f64>> {
    table.u_eval(tau)
}

/// `U″(τ)` for `τ < 0`; see [`LyapunovTable::u_second_derivative`].
pub fn u_second_derivative(table: &LyapunovTable, tau: f64) -> Result<DMatrix<f64>> {
    table.u_second_derivative(tau)
}

fn segments_step(kernel: &KernelSpec, segments: usize) -> Result<f64> {
    if segments < 2 {
        return Err(Error::InvalidArgument(format!("N = {segments} is too small")));
    }
    Ok(kernel.h() / segments as f64)
}

/// Truncated `∫_0^T (K(t) − K₀)ᵀ W K(t + τ) dt` with `T = end(K) − 2h`.
pub fn lyapunov_direct(
    kernel: &KernelSpec,
    constants: &KernelConstants,
    k: &GridFunction,
    segments: usize,
) -> Result<LyapunovTable> {
    let h = kernel.h();
    let du = segments_step(kernel, segments)?;
    let dt = k.step();
    let ratio = grid_count(du, dt)
        .filter(|&r| r >= 1)
        .ok_or_else(|| Error::GridMismatch(format!("U step {du} is not a multiple of K step {dt}")))?;
    let total = k.len() - 1;
    let span2 = grid_count(2.0 * h, dt).ok_or_else(|| Error::GridMismatch("K step does not divide h".into()))?;
    if total < 2 * span2 + 2 {
        return Err(Error::InvalidArgument(format!(
            "K must cover at least [0, 4h] for the direct method, got [0, {}]",
            k.end()
        )));
    }
    let t_steps = total - span2;
    let horizon = t_steps as f64 * dt;
    let norms: Vec<f64> = k.values().iter().map(|m| m.norm()).collect();
    let window = grid_count(h, dt).unwrap_or(1);
    let sup = |i: usize| norms[i.saturating_sub(window)..=i].iter().cloned().fold(0.0, f64::max);
    let early = sup(t_steps / 2);
    let late = sup(t_steps);
    let shrink = if early == 0.0 { 0.0 } else { late / early };
    if shrink > 1e-3 {
        return Err(Error::NonDecayingTail { ratio: shrink });
    }
    let n = kernel.n();
    let nn = n * n;
    let k0 = &constants.k0;
    // (K(t) − K₀)ᵀ W, flattened
    let left: Vec<Vec<f64>> = k
        .values()
        .iter()
        .take(t_steps + 1)
        .map(|m| linalg::to_row_major(&((m - k0).transpose() * &constants.w)))
        .collect();
    let kv: Vec<Vec<f64>> = k.values().iter().map(linalg::to_row_major).collect();
    let mut values = Vec::with_capacity(2 * segments + 1);
    let mut acc = vec![0.0; nn];
    for j in 0..=2 * segments {
        let off = j * ratio;
        acc.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..=t_steps {
            let w = if i == 0 || i == t_steps { 0.5 * dt } else { dt };
            linalg::mul_acc(&mut acc, &left[i], &kv[i + off], n, n, n, w);
        }
        values.push(DMatrix::from_row_slice(n, n, &acc));
    }
    let rate = if late > 0.0 && early > 0.0 { -(late / early).ln() / (0.5 * horizon) } else { f64::INFINITY };
    let tail = (k.value(t_steps) - k0).norm() * constants.w.norm() * late / rate.max(1e-12);
    let report = SolveReport { tail_estimate: Some(tail), ..SolveReport::default() };
    Ok(LyapunovTable::new(kernel, constants, segments, values, LyapunovMethod::Direct, report))
}

/// Column layout of the collocation unknowns: packed upper triangle of the
/// symmetric part `M` of `U(0) = M + P/2`, then `U(kΔ)` for `k = 1..=N`.
struct Layout {
    n: usize,
    sym: usize,
}

impl Layout {
    fn full_col(&self, k: usize, a: usize, b: usize) -> usize {
        self.sym + (k - 1) * self.n * self.n + a * self.n + b
    }

    fn cols(&self, segments: usize) -> usize {
        self.sym + segments * self.n * self.n
    }
}

fn packed_index(n: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * (2 * n + 1 - a) / 2 + (b - a)
}

struct System<'a> {
    layout: Layout,
    a: DMatrix<f64>,
    b: Vec<f64>,
    constants: &'a KernelConstants,
    fold: DMatrix<f64>,
    step: f64,
}

impl System<'_> {
    /// Add `coef · L · U(j) · R` to equation block starting at row `row0`.
    fn add(&mut self, row0: usize, l: &DMatrix<f64>, r: &DMatrix<f64>, j: isize, coef: f64) {
        let n = self.layout.n;
        let mut add_unknown = |transposed: bool, col: &dyn Fn(usize, usize) -> usize| {
            for rr in 0..n {
                for cc in 0..n {
                    let row = row0 + rr * n + cc;
                    for a in 0..n {
                        let la = l[(rr, a)];
                        if la == 0.0 {
                            continue;
                        }
                        for b in 0..n {
                            let v = coef * la * r[(b, cc)];
                            if v == 0.0 {
                                continue;
                            }
                            let (x, y) = if transposed { (b, a) } else { (a, b) };
                            self.a[(row, col(x, y))] += v;
                        }
                    }
                }
            }
        };
        let layout = &self.layout;
        let constant = if j > 0 {
            let k = j as usize;
            add_unknown(false, &|x, y| layout.full_col(k, x, y));
            None
        } else if j == 0 {
            add_unknown(false, &|x, y| packed_index(layout.n, x, y));
            Some(&self.constants.p * 0.5)
        } else {
            let k = (-j) as usize;
            add_unknown(true, &|x, y| layout.full_col(k, x, y));
            Some(&self.constants.p + &self.fold * (j as f64 * self.step))
        };
        if let Some(c) = constant {
            let m = l * c * r * coef;
            for rr in 0..n {
                for cc in 0..n {
                    self.b[row0 + rr * n + cc] -= m[(rr, cc)];
                }
            }
        }
    }
}

/// Collocation construction; see the module docs.
pub fn lyapunov_collocate(
    kernel: &KernelSpec,
    constants: &KernelConstants,
    segments: usize,
) -> Result<LyapunovTable> {
    let du = segments_step(kernel, segments)?;
    let samples = kernel.node_samples(du)?;
    let n = kernel.n();
    let nn = n * n;
    let big_n = segments;
    let layout = Layout { n, sym: n * (n + 1) / 2 };
    let cols = layout.cols(big_n);
    let rows = 2 * (big_n + 1) * nn;
    let mut sys = System {
        a: DMatrix::zeros(rows, cols),
        b: vec![0.0; rows],
        layout,
        constants,
        fold: constants.fold_slope(),
        step: du,
    };
    let eye = DMatrix::<f64>::identity(n, n);
    let weights: Vec<(f64, DMatrix<f64>)> = (0..=big_n)
        .map(|m| {
            let (w, f) = if m == 0 {
                (0.5 * du, samples.left(0))
            } else if m == big_n {
                (0.5 * du, samples.right(m))
            } else {
                (du, samples.mid(m))
            };
            (w, DMatrix::from_row_slice(n, n, f))
        })
        .collect();
    let ws = &constants.w * &constants.s;
    let wk0 = &constants.w * &constants.k0;
    for k in 0..=big_n {
        // U(kΔ) − ∫U(kΔ + θ)F(θ)dθ = 0
        let row0 = k * nn;
        sys.add(row0, &eye, &eye, k as isize, 1.0);
        for (m, (w, f)) in weights.iter().enumerate() {
            sys.add(row0, &eye, f, k as isize - m as isize, -w);
        }
        // U(−kΔ) − ∫Fᵀ(θ)U(−kΔ − θ)dθ = WS + kΔ·WK₀
        let row0 = (big_n + 1 + k) * nn;
        sys.add(row0, &eye, &eye, -(k as isize), 1.0);
        for (m, (w, f)) in weights.iter().enumerate() {
            sys.add(row0, &f.transpose(), &eye, m as isize - k as isize, -w);
        }
        let rhs = &ws + &wk0 * (k as f64 * du);
        for rr in 0..n {
            for cc in 0..n {
                sys.b[row0 + rr * n + cc] += rhs[(rr, cc)];
            }
        }
    }
    let System { a, b, layout, .. } = sys;
    let b = nalgebra::DVector::from_vec(b);
    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..cols).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let head = qtb.rows(0, cols).into_owned();
    let x = r
        .solve_upper_triangular(&head)
        .ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let resid = &a * &x - &b;
    let block_max = |lo: usize| {
        (0..=big_n)
            .map(|k| resid.rows((lo + k) * nn, nn).norm())
            .fold(0.0, f64::max)
    };
    let report = SolveReport {
        condition: Some(cond),
        dynamic_residual: block_max(0),
        negative_residual: block_max(big_n + 1),
        tail_estimate: None,
    };
    let mut flat = Vec::with_capacity((2 * big_n + 1) * nn);
    let u0 = DMatrix::from_fn(n, n, |i, j| x[packed_index(n, i, j)]) + &constants.p * 0.5;
    linalg::push_row_major(&mut flat, &u0);
    for k in 1..=big_n {
        for a in 0..n {
            for bb in 0..n {
                flat.push(x[layout.full_col(k, a, bb)]);
            }
        }
    }
    let init = Marched { rows: n, cols: n, values: flat, left: BTreeMap::new() };
    let zero = vec![0.0; nn];
    let marched = march(&samples, n, init, 2 * big_n, |_| (zero.clone(), None))?;
    let values = marched.matrices();
    Ok(LyapunovTable::new(kernel, constants, big_n, values, LyapunovMethod::Collocation, report))
}

/// Residuals of the properties of `U` (all maxima of Frobenius norms).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyResiduals {
    /// `U(τ) − ∫U(τ+θ)F(θ)dθ`, `τ ∈ [0, h]`.
    pub dynamic: f64,
    /// `U(0) − Uᵀ(0) − P`.
    pub symmetry: f64,
    /// `U(τ) − ∫Fᵀ(θ)U(τ−θ)dθ − WS + W∫_0^τ K`, `τ ∈ [−h, h]`.
    pub alg_neg: f64,
    /// `U(τ) − ∫U(τ+θ)F(θ)dθ − ∫_{−τ}^0 (K − K₀)ᵀ W`, `τ ∈ [−h, h]`.
    pub alg: f64,
    /// `U′(τ) − ∫Fᵀ(θ)U′(τ−θ)dθ + WK(τ)`, `τ ∈ [−h, h]`.
    pub alg_neg_der: f64,
    /// `U″(τ) − ∫U″(τ+θ)F(θ)dθ + K′ᵀ(−τ)W`, `τ ∈ (−h, 0)`.
    pub second_derivative: f64,
    /// The relation between `U`, `U′` and `K` on a 5×5 sample of `[0, h]²`.
    pub fundamental_relation: f64,
}

impl PropertyResiduals {
    pub fn max(&self) -> f64 {
        [
            self.dynamic,
            self.symmetry,
            self.alg_neg,
            self.alg,
            self.alg_neg_der,
            self.second_derivative,
            self.fundamental_relation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

const SAMPLE_POINTS: usize = 40;

fn sample_points(lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    let d = (hi - lo) / SAMPLE_POINTS as f64;
    (0..SAMPLE_POINTS).map(move |s| lo + (s as f64 + 0.5) * d)
}

/// `∫_0^τ K` of the piecewise-linear interpolant of `K` (`K = K₀` for `τ < 0`).
fn k_integral(k: &GridFunction, k0: &DMatrix<f64>, cum: &[DMatrix<f64>], tau: f64) -> Result<DMatrix<f64>> {
    if tau <= 0.0 {
        return Ok(k0 * tau);
    }
    let q = tau / k.step();
    let i = (q.floor() as usize).min(k.len() - 2);
    let t_i = k.node(i);
    let kt = k.eval(tau)?;
    Ok(&cum[i] + (k.value(i) + kt) * (0.5 * (tau - t_i)))
}

/// Residuals of the identities satisfied by `U`. Single integrals are done
/// by Gauss–Legendre over piecewise-cubic reconstructions of `U`, `U′`, `U″`
/// and `K`, so they measure the error of the tables rather than that of the
/// collocation rule; the double integral of the `K` relation uses the
/// trapezoid rule on the `U` grid.
pub fn property_residuals(table: &LyapunovTable, kernel: &KernelSpec, k: &GridFunction) -> Result<PropertyResiduals> {
    let h = kernel.h();
    let n = kernel.n();
    let c = table.constants();
    let w = &c.w;
    let k0 = &c.k0;
    let du = table.step();
    if k.end() < h - 1e-12 {
        return Err(Error::InvalidArgument("K must cover [0, h]".into()));
    }
    let kinks = kernel.kink_times(k.end() + 2.0 * h);
    let kp = fundamental_derivative(kernel, k)?;
    let (ug, up, upp) = (table.grid(), table.derivative(), table.second_derivative());
    let (us, ups, upps) = (ug.cubic(&kinks), up.cubic(&kinks), upp.cubic(&kinks));
    let (ks, kps) = (k.cubic(&kinks), kp.cubic(&kinks));
    let cum = k.cumulative_integral();
    let fb = {
        let mut b = kernel.breakpoints();
        b.extend(quad::lattice(-h, 0.0, du, 0.0));
        b
    };
    // θ-breaks for an integrand g(τ + sign·θ) with g sampled on the U grid
    let breaks = |tau: f64, sign: f64| {
        let mut b = fb.clone();
        b.extend(quad::lattice(-h, 0.0, du, -sign * tau));
        b.extend(kinks.iter().map(|x| sign * (x - tau)));
        b
    };
    let u = |t: f64| us.eval(t).unwrap();
    let mut out = PropertyResiduals { symmetry: (table.node(0) - table.node(0).transpose() - &c.p).norm(), ..Default::default() };

    for tau in sample_points(-h, h) {
        let u_tau = u(tau);
        let dyn_int = quad::integrate(-h, 0.0, &breaks(tau, 1.0), du, n, n, |th| u(tau + th) * kernel.evaluate(th));
        let neg_int = quad::integrate(-h, 0.0, &breaks(tau, -1.0), du, n, n, |th| {
            kernel.evaluate(th).transpose() * u(tau - th)
        });
        let kint = k_integral(k, k0, &cum, tau)?;
        let r_neg = &u_tau - &neg_int - w * &c.s + w * &kint;
        out.alg_neg = out.alg_neg.max(r_neg.norm());
        let tail = if tau < 0.0 {
            -(k_integral(k, k0, &cum, -tau)? - k0 * (-tau)).transpose() * w
        } else {
            DMatrix::zeros(n, n)
        };
        out.alg = out.alg.max((&u_tau - &dyn_int - tail).norm());
        if tau >= 0.0 {
            out.dynamic = out.dynamic.max((&u_tau - &dyn_int).norm());
        }
        let der_int = quad::integrate(-h, 0.0, &breaks(tau, -1.0), du, n, n, |th| {
            kernel.evaluate(th).transpose() * ups.eval(tau - th).unwrap()
        });
        let k_tau = if tau < 0.0 { k0.clone() } else { ks.eval(tau)? };
        out.alg_neg_der = out.alg_neg_der.max((ups.eval(tau)? - der_int + w * k_tau).norm());
        if tau < 0.0 {
            let second_int = quad::integrate(-h, 0.0, &breaks(tau, 1.0), du, n, n, |th| {
                upps.eval(tau + th).unwrap() * kernel.evaluate(th)
            });
            let r = upps.eval(tau)? - second_int + kps.eval(-tau)?.transpose() * w;
            out.second_derivative = out.second_derivative.max(r.norm());
        }
    }
    out.fundamental_relation = fundamental_relation_residual(table, kernel, k, &up)?;
    Ok(out)
}

fn fundamental_relation_residual(
    table: &LyapunovTable,
    kernel: &KernelSpec,
    k: &GridFunction,
    up: &GridFunction,
) -> Result<f64> {
    let n = kernel.n();
    let big_n = table.segments();
    let du = table.step();
    let c = table.constants();
    let k0 = &c.k0;
    let samples = kernel.node_samples(du)?;
    let fl = |q: usize| DMatrix::from_row_slice(n, n, samples.left(big_n - q));
    let fr = |q: usize| DMatrix::from_row_slice(n, n, samples.right(big_n - q));
    // U′ at index a = j − 2N on the U′ grid (−2h..2h)
    let up_at = |j: isize| (up.left_limit((j + 2 * big_n as isize) as usize).clone(), up.value((j + 2 * big_n as isize) as usize).clone());
    let k_lim = |t: f64| -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if t < 0.0 {
            Ok((k0.clone(), k0.clone()))
        } else if t == 0.0 {
            Ok((k0.clone(), k.value(0).clone()))
        } else {
            k.limits(t)
        }
    };
    let picks: Vec<usize> = (1..=5).map(|i| ((i * big_n) as f64 / 5.0).round() as usize).collect();
    let mut worst = 0.0f64;
    for &i1 in &picks {
        for &i2 in &picks {
            let tau1 = i1 as f64 * du;
            let tau2 = i2 as f64 * du;
            let mut total = DMatrix::zeros(n, n);
            for e in 0..=big_n {
                // ξ = −h + eΔ
                let xi = -(table.h()) + e as f64 * du;
                let mut inner = DMatrix::zeros(n, n);
                for q in 0..=e {
                    // θ = −h + qΔ, argument −τ₁ − ξ + θ
                    let a = -(i1 as isize) - e as isize + q as isize;
                    let (ul, ur) = up_at(a);
                    let wq = if e == 0 { 0.0 } else { 0.5 * du };
                    if q == 0 {
                        inner += &ur * fr(q) * wq;
                    } else if q == e {
                        inner += &ul * fl(q) * wq;
                    } else {
                        inner += (&ul * fl(q) + &ur * fr(q)) * wq;
                    }
                }
                let (kl, kr) = k_lim(tau2 + xi)?;
                let (al, ar) = k_lim(tau1 + xi)?;
                let we = if e == 0 || e == big_n { 0.5 * du } else { du };
                let (g_l, g_r) = (
                    &inner * &kl + (&al - k0).transpose() * &c.w * &kl,
                    &inner * &kr + (&ar - k0).transpose() * &c.w * &kr,
                );
                let term = if e == 0 {
                    g_r
                } else if e == big_n {
                    g_l
                } else {
                    (g_l + g_r) * 0.5
                };
                total += term * we;
            }
            let lhs = table.u_eval(tau2 - tau1)?;
            worst = worst.max((lhs - total).norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental::fundamental_matrix;
    use nalgebra::dmatrix;

    #[test]
    fn packed_indices_are_a_bijection() {
        for n in 1..6 {
            let mut seen = vec![false; n * (n + 1) / 2];
            for a in 0..n {
                for b in a..n {
                    let i = packed_index(n, a, b);
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(i, packed_index(n, b, a));
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn zero_kernel_closed_form() {
        let k = KernelSpec::zero(2, 1.0).unwrap();
        let c = k.derive_constants(&DMatrix::identity(2, 2)).unwrap();
        let t = lyapunov_collocate(&k, &c, 20).unwrap();
        assert!(t.values().iter().all(|u| u.amax() < 1e-12));
        let neg = t.u_eval(-0.3).unwrap();
        assert!((neg + DMatrix::identity(2, 2) * 0.3).amax() < 1e-12);
        assert!(t.u_second_derivative(-0.5).unwrap().amax() < 1e-8);
    }

    #[test]
    fn collocation_matches_direct_for_stable_scalar() {
        let k = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
        let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
        let kk = fundamental_matrix(&k, &c, 22.0, 1e-3).unwrap();
        let direct = lyapunov_direct(&k, &c, &kk, 100).unwrap();
        let col = lyapunov_collocate(&k, &c, 100).unwrap();
        let gap = direct
            .values()
            .iter()
            .zip(col.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(gap < 1e-3, "gap {gap}");
        assert!((col.node(0) - col.node(0).transpose() - &c.p).norm() < 1e-8);
    }

    #[test]
    fn unstable_scalar_has_no_direct_table() {
        let k = KernelSpec::constant(1.0, dmatrix![1.5]).unwrap();
        let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
        let kk = fundamental_matrix(&k, &c, 12.0, 1e-2).unwrap();
        assert!(matches!(lyapunov_direct(&k, &c, &kk, 50), Err(Error::NonDecayingTail { .. })));
        let col = lyapunov_collocate(&k, &c, 50).unwrap();
        assert!(col.report().dynamic_residual < 1e-3);
    }
}
