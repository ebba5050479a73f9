//! Trapezoid marching for Volterra equations of the form
//!
//! ```text
//! y(t_i) = f(t_i) + ∫_{max(0, t_i − h)}^{t_i} y(θ) F̃(θ − t_i) dθ
//! ```
//!
//! with `y` a `rows × n` matrix and the kernel multiplied on the right. The
//! unknown `y(t_i)` only enters through the end term `(Δ/2) y(t_i) F(0⁻)`,
//! so each step is one `n × n` solve. Jumps of `y` or `F` at nodes are handled
//! with one-sided limits: the ends of the integration range use the inward
//! limits, interior nodes the mean of the limit products.

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::NodeSamples;
use crate::linalg::{mul_acc, RightSolver};

/// Flat row-major samples of `y` plus left limits at jump nodes.
pub(crate) struct Marched {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub left: BTreeMap<usize, Vec<f64>>,
}

impl Marched {
    #[cfg(test)]
    pub(crate) fn at(&self, i: usize) -> &[f64] {
        let sz = self.rows * self.cols;
        &self.values[i * sz..(i + 1) * sz]
    }

    #[cfg(test)]
    pub(crate) fn len(&self) -> usize {
        self.values.len() / (self.rows * self.cols)
    }

    pub(crate) fn matrices(&self) -> Vec<DMatrix<f64>> {
        let sz = self.rows * self.cols;
        self.values
            .chunks(sz)
            .map(|c| DMatrix::from_row_slice(self.rows, self.cols, c))
            .collect()
    }
}

/// Forcing value at node `i`: right value and, if different, left value.
pub(crate) type Forcing = (Vec<f64>, Option<Vec<f64>>);

/// March nodes `init.len() ..= last`; nodes before that come from `init`.
pub(crate) fn march<Fc>(
    samples: &NodeSamples,
    rows: usize,
    init: Marched,
    last: usize,
    mut forcing: Fc,
) -> Result<Marched>
where
    Fc: FnMut(usize) -> Forcing,
{
    let n = samples.n;
    let sz = rows * n;
    let dt = samples.step;
    let span = samples.count;
    let end_weight = DMatrix::identity(n, n)
        - DMatrix::from_row_slice(n, n, samples.left(0)) * (0.5 * dt);
    let solver = RightSolver::new(&end_weight).ok_or(Error::StepTooCoarse { step: dt })?;

    let Marched { mut values, mut left, .. } = init;
    let start = values.len() / sz;
    values.reserve((last + 1).saturating_sub(start) * sz);
    let mut acc = vec![0.0; sz];
    let mut tmp = vec![0.0; sz];
    for i in start..=last {
        let (f_right, f_left) = forcing(i);
        let lo = i.saturating_sub(span);
        if lo == i {
            values.extend_from_slice(&f_right);
            if let Some(fl) = f_left {
                left.insert(i, fl);
            }
            continue;
        }
        acc.iter_mut().for_each(|v| *v = 0.0);
        for j in lo..i {
            let m = i - j;
            let yj = &values[j * sz..(j + 1) * sz];
            if j == lo {
                mul_acc(&mut acc, yj, samples.right(m), rows, n, n, 0.5 * dt);
            } else if let Some(yl) = left.get(&j) {
                mul_acc(&mut acc, yl, samples.left(m), rows, n, n, 0.5 * dt);
                mul_acc(&mut acc, yj, samples.right(m), rows, n, n, 0.5 * dt);
            } else {
                mul_acc(&mut acc, yj, samples.mid(m), rows, n, n, dt);
            }
        }
        // y⁻(I − Δ/2 F(0⁻)) = f⁻ + acc
        let f_minus = f_left.as_deref().unwrap_or(&f_right);
        for k in 0..sz {
            tmp[k] = f_minus[k] + acc[k];
        }
        solver.solve(&mut tmp, rows);
        match &f_left {
            Some(fl) => {
                let right: Vec<f64> =
                    (0..sz).map(|k| tmp[k] + f_right[k] - fl[k]).collect();
                left.insert(i, tmp.clone());
                values.extend_from_slice(&right);
            }
            None => values.extend_from_slice(&tmp),
        }
    }
    Ok(Marched { rows, cols: n, values, left })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use nalgebra::dmatrix;

    #[test]
    fn constant_kernel_against_exponential() {
        // y(t) = 1 + ∫_{max(0,t-1)}^t c y: on [0,1] this is y' = c y, y(0) = 1
        let c = 0.8;
        let k = KernelSpec::constant(1.0, dmatrix![c]).unwrap();
        let dt = 1e-3;
        let s = k.node_samples(dt).unwrap();
        let init = Marched { rows: 1, cols: 1, values: vec![], left: BTreeMap::new() };
        let y = march(&s, 1, init, 1000, |_| (vec![1.0], None)).unwrap();
        assert_eq!(y.len(), 1001);
        let err = (y.at(1000)[0] - c.exp()).abs();
        assert!(err < 1e-6, "err {err}");
    }

    #[test]
    fn coarse_step_is_rejected() {
        let k = KernelSpec::constant(1.0, dmatrix![4.0]).unwrap();
        let s = k.node_samples(0.5).unwrap();
        let init = Marched { rows: 1, cols: 1, values: vec![], left: BTreeMap::new() };
        let r = march(&s, 1, init, 4, |_| (vec![1.0], None));
        assert!(matches!(r, Err(Error::StepTooCoarse { .. })));
    }
}
