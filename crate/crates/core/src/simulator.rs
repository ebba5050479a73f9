//! Initial-value problems and the simulation/root oracle.
//!
//! The IDE with initial function `φ` on `[−h, 0)` reduces to the renewal
//! equation `x(t) = g(t) + ∫_0^t F̃(θ − t) x(θ) dθ` with
//! `g(t) = ∫_{-h}^{-t} F(θ) φ(t + θ) dθ`, which is marched like `K`.
//!
//! Initial functions are [`GridFunction`]s on `[−h, 0]` whose last node holds
//! `φ(0⁻)`; jumps inside are recorded as left limits.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fundamental::fundamental_derivative;
use crate::grid::GridFunction;
use crate::kernel::{grid_count, KernelSpec, NodeSamples};
use crate::linalg::{self, mul_acc};
use crate::march::{march, Marched};
use crate::par::{self, Execution};

fn check_initial(kernel: &KernelSpec, phi: &GridFunction, step: f64) -> Result<usize> {
    let h = kernel.h();
    let m = grid_count(h, step)
        .ok_or_else(|| Error::GridMismatch(format!("step {step} does not divide h = {h}")))?;
    if (phi.step() - step).abs() > 1e-12 * step || phi.len() != m + 1 {
        return Err(Error::GridMismatch(format!(
            "initial function has step {} and {} nodes, expected step {step} on [-h, 0]",
            phi.step(),
            phi.len()
        )));
    }
    if phi.shape().0 != kernel.n() {
        return Err(Error::GridMismatch(format!(
            "initial function has {} rows, kernel dimension is {}",
            phi.shape().0,
            kernel.n()
        )));
    }
    Ok(m)
}

/// `g(t_i)` for `t_i = iΔ`, `i = 0..M` (zero from `h` on), as `n × m` row-major.
fn prehistory(samples: &NodeSamples, phi: &GridFunction, i: usize) -> Vec<f64> {
    let n = samples.n;
    let mc = phi.shape().1;
    let big_m = samples.count;
    let dt = samples.step;
    let mut g = vec![0.0; n * mc];
    if i >= big_m {
        return g;
    }
    for m in i..=big_m {
        let p = big_m + i - m;
        if m == big_m {
            mul_acc(&mut g, samples.right(m), &linalg::to_row_major(phi.value(p)), n, n, mc, 0.5 * dt);
        } else if m == i {
            let l = linalg::to_row_major(phi.left_limit(p));
            mul_acc(&mut g, samples.left(m), &l, n, n, mc, 0.5 * dt);
        } else if phi.has_jump(p) {
            let l = linalg::to_row_major(phi.left_limit(p));
            mul_acc(&mut g, samples.left(m), &l, n, n, mc, 0.5 * dt);
            let r = linalg::to_row_major(phi.value(p));
            mul_acc(&mut g, samples.right(m), &r, n, n, mc, 0.5 * dt);
        } else {
            mul_acc(&mut g, samples.mid(m), &linalg::to_row_major(phi.value(p)), n, n, mc, dt);
        }
    }
    g
}

fn transpose_flat(v: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = v[i * cols + j];
        }
    }
    out
}

/// Solution `x(t, φ)` on `[0, horizon]`. `φ` may be `n × m` (m columns are
/// solved at once).
pub fn solve_ide(kernel: &KernelSpec, phi: &GridFunction, horizon: f64, step: f64) -> Result<GridFunction> {
    check_initial(kernel, phi, step)?;
    let steps = grid_count(horizon, step).ok_or_else(|| {
        Error::GridMismatch(format!("step {step} does not divide horizon {horizon}"))
    })?;
    let samples = kernel.node_samples(step)?;
    let tr = samples.transposed();
    let n = kernel.n();
    let mc = phi.shape().1;
    // march xᵀ(t) = gᵀ + ∫ xᵀ(θ) F̃ᵀ(θ − t) dθ
    let init = Marched { rows: mc, cols: n, values: Vec::new(), left: BTreeMap::new() };
    let marched = march(&tr, mc, init, steps, |i| {
        (transpose_flat(&prehistory(&samples, phi, i), n, mc), None)
    })?;
    let values = marched
        .values
        .chunks(n * mc)
        .map(|c| DMatrix::from_row_slice(mc, n, c).transpose())
        .collect();
    GridFunction::new(0.0, step, values)
}

/// `φ` followed by `x(·, φ)` on `[−h, horizon]`, with the jump at `t = 0`
/// kept, so that `x_t` windows can be cut out of it.
pub fn trajectory(kernel: &KernelSpec, phi: &GridFunction, horizon: f64, step: f64) -> Result<GridFunction> {
    let x = solve_ide(kernel, phi, horizon, step)?;
    let m = phi.len() - 1;
    let mut values: Vec<DMatrix<f64>> = phi.values()[..m].to_vec();
    values.extend_from_slice(x.values());
    let mut out = GridFunction::new(-kernel.h(), step, values)?;
    for (i, l) in phi.jumps() {
        if i > 0 && i < m {
            out.set_left_limit(i, l.clone());
        }
    }
    out.set_left_limit(m, phi.left_limit(m).clone());
    Ok(out)
}

/// Largest deviation between `solve_ide` and the Cauchy formula
/// `x(t) = ∫_{-h}^0 d/dt ∫_{-h}^ξ K(t − ξ + θ) F(θ) dθ φ(ξ) dξ`
/// over the node times in `t_set`. `K` fixes the step.
pub fn cauchy_check(kernel: &KernelSpec, k: &GridFunction, phi: &GridFunction, t_set: &[f64]) -> Result<f64> {
    let step = k.step();
    let big_m = check_initial(kernel, phi, step)?;
    let kp = fundamental_derivative(kernel, k)?;
    let t_max = t_set.iter().cloned().fold(0.0, f64::max);
    let x = solve_ide(kernel, phi, k.end(), step)?;
    let samples = kernel.node_samples(step)?;
    let n = kernel.n();
    let nn = n * n;
    let mc = phi.shape().1;
    if t_max > k.end() + 1e-12 {
        return Err(Error::OutOfRange { arg: t_max, lo: 0.0, hi: k.end() });
    }
    let kv: Vec<Vec<f64>> = kp.values().iter().map(linalg::to_row_major).collect();
    let kl: Vec<Vec<f64>> = (0..kp.len()).map(|i| linalg::to_row_major(kp.left_limit(i))).collect();
    let mut worst = 0.0f64;
    for &t in t_set {
        let it = k.index_of(t).ok_or_else(|| {
            Error::GridMismatch(format!("t = {t} is not a node of the K grid"))
        })?;
        // the jump of K at 0 contributes F(ξ − t)φ(ξ), i.e. g(t)
        let mut total = prehistory(&samples, phi, it);
        let mut inner = vec![0.0; nn];
        for e in 0..=big_m {
            inner.iter_mut().for_each(|v| *v = 0.0);
            let qlo = e.saturating_sub(it);
            if qlo < e {
                for q in qlo..=e {
                    let ka = it + q - e;
                    let m = big_m - q;
                    if q == qlo {
                        mul_acc(&mut inner, &kv[ka], samples.right(m), n, n, n, 0.5 * step);
                    } else if q == e {
                        mul_acc(&mut inner, &kl[ka], samples.left(m), n, n, n, 0.5 * step);
                    } else {
                        mul_acc(&mut inner, &kl[ka], samples.left(m), n, n, n, 0.5 * step);
                        mul_acc(&mut inner, &kv[ka], samples.right(m), n, n, n, 0.5 * step);
                    }
                }
            }
            let w = if e == 0 || e == big_m { 0.5 * step } else { step };
            if e == big_m {
                let l = linalg::to_row_major(phi.left_limit(e));
                mul_acc(&mut total, &inner, &l, n, n, mc, w);
            } else if e > 0 && phi.has_jump(e) {
                let l = linalg::to_row_major(phi.left_limit(e));
                let r = linalg::to_row_major(phi.value(e));
                mul_acc(&mut total, &inner, &l, n, n, mc, 0.5 * w);
                mul_acc(&mut total, &inner, &r, n, n, mc, 0.5 * w);
            } else {
                mul_acc(&mut total, &inner, &linalg::to_row_major(phi.value(e)), n, n, mc, w);
            }
        }
        let formula = DMatrix::from_row_slice(n, mc, &total);
        worst = worst.max((x.value(it) - formula).norm());
    }
    Ok(worst)
}

/// `(∫_{-h}^0 ‖φ(θ)‖² dθ)^{1/2}` by the trapezoid rule, jumps included.
pub fn seminorm(phi: &GridFunction) -> f64 {
    let sq = |m: &DMatrix<f64>| m.norm_squared();
    let mut acc = 0.0;
    for i in 1..phi.len() {
        acc += 0.5 * phi.step() * (sq(phi.value(i - 1)) + sq(phi.left_limit(i)));
    }
    acc.sqrt()
}

/// Random piecewise-constant vector function on `[−h, 0]`: `pieces` equal
/// sub-intervals (breaks at the nearest nodes), entries uniform in `[−1, 1]`,
/// scaled to unit seminorm. Trial `trial` of base seed `seed` always gives the
/// same function.
pub fn random_initial(n: usize, h: f64, step: f64, pieces: usize, seed: u64, trial: u64) -> Result<GridFunction> {
    let m = grid_count(h, step)
        .ok_or_else(|| Error::GridMismatch(format!("step {step} does not divide h = {h}")))?;
    if pieces == 0 || pieces > m {
        return Err(Error::InvalidArgument(format!("cannot split {m} steps into {pieces} pieces")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let levels: Vec<DMatrix<f64>> = (0..pieces)
        .map(|_| DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..=1.0)))
        .collect();
    let breaks: Vec<usize> = (0..=pieces).map(|k| ((k * m) as f64 / pieces as f64).round() as usize).collect();
    let piece_of = |p: usize| breaks[1..].partition_point(|&b| b <= p).min(pieces - 1);
    let values = (0..=m).map(|p| levels[piece_of(p)].clone()).collect();
    let mut phi = GridFunction::new(-h, step, values)?;
    for k in 1..pieces {
        phi.set_left_limit(breaks[k], levels[k - 1].clone());
    }
    let norm = seminorm(&phi);
    if norm == 0.0 {
        return Ok(phi);
    }
    phi.map(|v| v / norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleLabel {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSettings {
    pub trials: usize,
    /// Simulation horizon in units of `h`.
    pub horizon: f64,
    pub step: f64,
    /// Slopes inside `(−band, band)` are treated as undecided.
    pub band: f64,
    pub seed: u64,
    pub omega_max: f64,
    pub omega_samples: usize,
    /// `|det H(jω)|` below this counts as a root on the imaginary axis.
    pub margin_tol: f64,
    pub execution: Execution,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            trials: 8,
            horizon: 20.0,
            step: 1e-3,
            band: 0.05,
            seed: 0,
            omega_max: 50.0,
            omega_samples: 2001,
            margin_tol: 1e-6,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub label: OracleLabel,
    /// Fitted growth rate per trial (`-inf` if the trajectory vanished).
    pub slopes: Vec<f64>,
    pub real_root: Option<f64>,
    pub margin: f64,
    pub margin_at: f64,
}

/// Least-squares slope of `log max_{s∈[t−h,t]} ‖x(s)‖` over `t ∈ [T/2, T]`.
pub fn decay_slope(x: &GridFunction, h: f64) -> f64 {
    let w = (h / x.step()).round().max(1.0) as usize;
    let norms: Vec<f64> = x.values().iter().map(|v| v.norm()).collect();
    let last = norms.len() - 1;
    let first = (last / 2).max(w);
    let mut window: VecDeque<usize> = VecDeque::new();
    let (mut sx, mut sy, mut sxx, mut sxy, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in first.saturating_sub(w)..=last {
        while window.back().is_some_and(|&j| norms[j] <= norms[i]) {
            window.pop_back();
        }
        window.push_back(i);
        while window.front().is_some_and(|&j| j + w < i) {
            window.pop_front();
        }
        if i < first {
            continue;
        }
        let v = norms[*window.front().unwrap()];
        if v > 0.0 && v.is_finite() {
            let t = x.node(i);
            let y = v.ln();
            sx += t;
            sy += y;
            sxx += t * t;
            sxy += t * y;
            cnt += 1.0;
        }
    }
    if cnt < 2.0 {
        return f64::NEG_INFINITY;
    }
    (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx)
}

/// Largest real root of `det H(s)` in `(0, s_max]`, found by a sign scan and
/// bisection. Roots of `det H` on the positive axis lie below `sup ‖F‖`.
pub fn positive_real_root(kernel: &KernelSpec, tol: f64) -> Option<f64> {
    let s_max = (1.1 * kernel.sup_norm_estimate() * kernel.h().max(1.0)).max(1.0);
    let f = |s: f64| kernel.char_det(Complex64::new(s, 0.0)).re;
    let samples = 4000;
    let mut hi = s_max;
    let mut fhi = f(hi);
    for k in (0..samples).rev() {
        let lo = s_max * k as f64 / samples as f64;
        let lo = if k == 0 { 1e-9 * s_max } else { lo };
        let flo = f(lo);
        if flo == 0.0 {
            return Some(lo);
        }
        if flo.signum() != fhi.signum() {
            let (mut a, mut b, mut fa) = (lo, hi, flo);
            while b - a > tol {
                let c = 0.5 * (a + b);
                let fc = f(c);
                if fc.signum() == fa.signum() {
                    a = c;
                    fa = fc;
                } else {
                    b = c;
                }
            }
            return Some(0.5 * (a + b));
        }
        hi = lo;
        fhi = flo;
    }
    None
}

/// Simulation-plus-roots label for a kernel. Independent of the Lyapunov
/// machinery; used to validate the criterion.
pub fn stability_oracle(kernel: &KernelSpec, settings: &OracleSettings) -> Result<OracleReport> {
    if settings.trials == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one trial".into()));
    }
    let h = kernel.h();
    let horizon = settings.horizon * h;
    let runs = par::map_indexed(settings.execution, settings.trials, |trial| {
        let phi = random_initial(kernel.n(), h, settings.step, 8, settings.seed, trial as u64)?;
        let x = solve_ide(kernel, &phi, horizon, settings.step)?;
        Ok(decay_slope(&x, h))
    });
    let slopes = runs.into_iter().collect::<Result<Vec<f64>>>()?;
    let real_root = positive_real_root(kernel, 1e-12);
    let (margin, margin_at) = kernel.imaginary_axis_margin(settings.omega_max, settings.omega_samples)?;
    let label = if real_root.is_some() || slopes.iter().any(|&s| s > settings.band) {
        OracleLabel::Unstable
    } else if slopes.iter().all(|&s| s < -settings.band) && margin > settings.margin_tol {
        OracleLabel::Stable
    } else {
        OracleLabel::Marginal
    };
    Ok(OracleReport { label, slopes, real_root, margin, margin_at })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fundamental::fundamental_matrix;
    use nalgebra::dmatrix;

    fn constant_phi(h: f64, step: f64, v: f64) -> GridFunction {
        let m = (h / step).round() as usize;
        GridFunction::new(-h, step, vec![dmatrix![v]; m + 1]).unwrap()
    }

    #[test]
    fn scalar_constant_initial_function() {
        let k = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
        let phi = constant_phi(1.0, 1e-3, 1.0);
        let x = solve_ide(&k, &phi, 1.0, 1e-3).unwrap();
        for i in (0..=1000).step_by(100) {
            let t = i as f64 * 1e-3;
            // x′ = c(x(t) − x(t − 1)) = c(x − 1), x(0) = c
            assert!((x.value(i)[(0, 0)] - (1.0 - 0.5 * (0.5 * t).exp())).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_kernel_kills_everything() {
        let k = KernelSpec::zero(1, 1.0).unwrap();
        let phi = constant_phi(1.0, 0.01, 3.0);
        let x = solve_ide(&k, &phi, 5.0, 0.01).unwrap();
        assert!(x.values().iter().all(|v| v[(0, 0)] == 0.0));
        assert_eq!(decay_slope(&x, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn seminorm_values() {
        assert!((seminorm(&constant_phi(1.0, 0.01, 1.0)) - 1.0).abs() < 1e-12);
        assert_eq!(seminorm(&constant_phi(1.0, 0.01, 0.0)), 0.0);
        let vals = (0..=1000).map(|i| dmatrix![-1.0 + i as f64 * 1e-3]).collect();
        let lin = GridFunction::new(-1.0, 1e-3, vals).unwrap();
        assert!((seminorm(&lin) - (1.0f64 / 3.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn random_initial_is_reproducible_and_normalised() {
        let a = random_initial(2, 1.0, 0.01, 8, 7, 3).unwrap();
        let b = random_initial(2, 1.0, 0.01, 8, 7, 3).unwrap();
        let c = random_initial(2, 1.0, 0.01, 8, 7, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((seminorm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.jumps().count(), 7);
    }

    #[test]
    fn cauchy_formula_on_scalar_instance() {
        let k = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
        let c = k.derive_constants(&DMatrix::identity(1, 1)).unwrap();
        let kk = fundamental_matrix(&k, &c, 4.0, 1e-3).unwrap();
        let phi = constant_phi(1.0, 1e-3, 1.0);
        let dev = cauchy_check(&k, &kk, &phi, &[0.5, 1.5, 3.0]).unwrap();
        assert!(dev < 1e-3, "deviation {dev}");
    }

    #[test]
    fn real_root_of_unstable_scalar() {
        let k = KernelSpec::constant(1.0, dmatrix![1.5]).unwrap();
        let s = positive_real_root(&k, 1e-12).unwrap();
        assert!((1.5 * (1.0 - (-s).exp()) - s).abs() < 1e-9);
        let stable = KernelSpec::constant(1.0, dmatrix![0.5]).unwrap();
        assert!(positive_real_root(&stable, 1e-12).is_none());
    }
}
