//! Gauss–Legendre quadrature on piecewise-smooth integrands.

use nalgebra::DMatrix;

// 4-point rule on [0, 1]
const GL_X: [f64; 4] = [
    0.5 - 0.5 * 0.861_136_311_594_052_6,
    0.5 - 0.5 * 0.339_981_043_584_856_3,
    0.5 + 0.5 * 0.339_981_043_584_856_3,
    0.5 + 0.5 * 0.861_136_311_594_052_6,
];
const GL_W: [f64; 4] = [
    0.5 * 0.347_854_845_137_453_9,
    0.5 * 0.652_145_154_862_546_1,
    0.5 * 0.652_145_154_862_546_1,
    0.5 * 0.347_854_845_137_453_9,
];

pub(crate) fn unit_rule() -> impl Iterator<Item = (f64, f64)> {
    GL_X.into_iter().zip(GL_W)
}

/// `∫_lo^hi f` with the interval split at `breaks` and into pieces no longer
/// than `max_len`, 4-point Gauss–Legendre on each piece. `f` is never
/// evaluated at a break, so one-sided behaviour there does not matter.
pub(crate) fn integrate<F>(lo: f64, hi: f64, breaks: &[f64], max_len: f64, rows: usize, cols: usize, f: F) -> DMatrix<f64>
where
    F: Fn(f64) -> DMatrix<f64>,
{
    let mut out = DMatrix::zeros(rows, cols);
    if hi <= lo {
        return out;
    }
    let mut pts: Vec<f64> = breaks.iter().cloned().filter(|&b| b > lo && b < hi).collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-13 * (1.0 + b.abs()));
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let pieces = ((b - a) / max_len).ceil().max(1.0) as usize;
        let len = (b - a) / pieces as f64;
        for p in 0..pieces {
            let s = a + p as f64 * len;
            for (x, wt) in unit_rule() {
                out += f(s + x * len) * (wt * len);
            }
        }
    }
    out
}

/// Points `offset + jΔ` inside `[lo, hi]`.
pub(crate) fn lattice(lo: f64, hi: f64, step: f64, offset: f64) -> Vec<f64> {
    let j0 = ((lo - offset) / step).floor() as i64;
    let j1 = ((hi - offset) / step).ceil() as i64;
    (j0..=j1).map(|j| offset + j as f64 * step).filter(|&t| t >= lo && t <= hi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubics_and_handles_jumps() {
        let r = integrate(-1.0, 2.0, &[], 10.0, 1, 1, |t| DMatrix::from_element(1, 1, t * t * t - t));
        assert!((r[(0, 0)] - (16.0 / 4.0 - 2.0 - (0.25 - 0.5))).abs() < 1e-13);
        let step = integrate(0.0, 1.0, &[0.3], 0.5, 1, 1, |t| {
            DMatrix::from_element(1, 1, if t < 0.3 { 1.0 } else { 2.0 })
        });
        assert!((step[(0, 0)] - 1.7).abs() < 1e-14);
        assert_eq!(lattice(0.0, 1.0, 0.25, 0.1), vec![0.1, 0.35, 0.6, 0.85]);
    }
}
