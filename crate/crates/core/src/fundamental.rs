//! The fundamental matrix `K(t)` and its weak derivative.
//!
//! `K` is marched from the Volterra form
//! `K(t) = K₀ ∫_{-h}^{-t} F̃ + ∫_0^t K(θ) F̃(θ − t) dθ`, whose prehistory term is
//! exact, and `K′` from `K′(t) = F̃(−t) + ∫_0^t K′(θ) F̃(θ − t) dθ`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::kernel::{grid_count, KernelConstants, KernelSpec};
use crate::linalg;
use crate::march::{march, Marched};
use crate::quad;

/// `K` on `[0, horizon]` with step `step`, extended by `K₀` for `t < 0`.
pub fn fundamental_matrix(
    kernel: &KernelSpec,
    constants: &KernelConstants,
    horizon: f64,
    step: f64,
) -> Result<GridFunction> {
    let h = kernel.h();
    if horizon < h - 1e-12 {
        return Err(Error::InvalidArgument(format!("horizon {horizon} shorter than h = {h}")));
    }
    let steps = grid_count(horizon, step).ok_or_else(|| {
        Error::GridMismatch(format!("step {step} does not divide horizon {horizon}"))
    })?;
    let samples = kernel.node_samples(step)?;
    let n = kernel.n();
    let init = Marched { rows: n, cols: n, values: Vec::new(), left: BTreeMap::new() };
    let k0 = &constants.k0;
    let marched = march(&samples, n, init, steps, |i| {
        let t = i as f64 * step;
        let f = if i >= samples.count { DMatrix::zeros(n, n) } else { k0 * kernel.integral(-h, -t) };
        (linalg::to_row_major(&f), None)
    })?;
    Ok(GridFunction::new(0.0, step, marched.matrices())?.with_extension(k0.clone()))
}

/// `K′` on the grid of `k`. Jumps of `F̃(−t)` show up as jumps of `K′`, which
/// are recorded as left limits.
pub fn fundamental_derivative(kernel: &KernelSpec, k: &GridFunction) -> Result<GridFunction> {
    let step = k.step();
    if k.start() != 0.0 {
        return Err(Error::GridMismatch("K must start at t = 0".into()));
    }
    let samples = kernel.node_samples(step)?;
    let n = kernel.n();
    let init = Marched { rows: n, cols: n, values: Vec::new(), left: BTreeMap::new() };
    let marched = march(&samples, n, init, k.len() - 1, |i| {
        let t = i as f64 * step;
        let right = kernel.left_limit(-t);
        let left = kernel.right_limit(-t);
        let jump = i > 0 && (&right - &left).amax() > 0.0;
        (linalg::to_row_major(&right), jump.then(|| linalg::to_row_major(&left)))
    })?;
    let mut out = GridFunction::new(0.0, step, marched.matrices())?;
    for (i, l) in marched.left {
        out.set_left_limit(i, DMatrix::from_row_slice(n, n, &l));
    }
    Ok(out)
}

/// `max_t ‖K(0) + ∫_0^t K′ − K(t)‖_F` over the grid.
pub fn reconstruction_error(k: &GridFunction, kp: &GridFunction) -> Result<f64> {
    if k.len() != kp.len() || k.step() != kp.step() {
        return Err(Error::GridMismatch("K and K′ grids differ".into()));
    }
    let cum = kp.cumulative_integral();
    Ok((0..k.len())
        .map(|i| (k.value(0) + &cum[i] - k.value(i)).norm())
        .fold(0.0, f64::max))
}

/// Residuals of the defining identities of `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResiduals {
    /// `max ‖K(t) − ∫F(θ)K(t+θ)dθ‖_F` over the grid.
    pub left_form: f64,
    /// `max ‖K(t) − ∫K(t+θ)F(θ)dθ‖_F` over the grid.
    pub right_form: f64,
    /// `‖K(0) − K₀ − I‖_F`.
    pub initial_jump: f64,
}

/// Residuals of both integral forms at up to 100 nodes of `K`. The integrals
/// are taken (Gauss–Legendre) over a piecewise-cubic reconstruction of `K`,
/// so they measure the error of the samples rather than the consistency of
/// the marching rule with itself.
pub fn identity_residuals(
    kernel: &KernelSpec,
    constants: &KernelConstants,
    k: &GridFunction,
) -> Result<IdentityResiduals> {
    let n = kernel.n();
    let step = k.step();
    let h = kernel.h();
    grid_count(h, step)
        .ok_or_else(|| Error::GridMismatch(format!("step {step} does not divide h = {h}")))?;
    let kinks = kernel.kink_times(k.end() + h);
    let smooth = k.cubic(&kinks);
    let mut breaks = kernel.breakpoints();
    breaks.extend(quad::lattice(-h, 0.0, step, 0.0));
    let last = k.len() - 1;
    let stride = (last / 100).max(1);
    let mut left_form = 0.0f64;
    let mut right_form = 0.0f64;
    for i in (0..=last).step_by(stride) {
        let t = k.node(i);
        let mut br = breaks.clone();
        br.extend(kinks.iter().map(|c| c - t));
        let kt = |th: f64| smooth.eval(t + th).unwrap();
        let l = quad::integrate(-h, 0.0, &br, step, n, n, |th| kernel.evaluate(th) * kt(th));
        let r = quad::integrate(-h, 0.0, &br, step, n, n, |th| kt(th) * kernel.evaluate(th));
        left_form = left_form.max((k.value(i) - l).norm());
        right_form = right_form.max((k.value(i) - r).norm());
    }
    let initial_jump = (k.value(0) - &constants.k0 - DMatrix::identity(n, n)).norm();
    Ok(IdentityResiduals { left_form, right_form, initial_jump })
}
