//! Matrix-valued functions sampled on a uniform grid.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A matrix-valued function sampled at `t0, t0 + Δ, …, t1`.
///
/// Node values are right limits. Where the function jumps exactly at a node
/// the left limit is stored separately; between nodes the function is
/// interpolated linearly from the right value of the lower node to the left
/// limit of the upper one, so jumps at nodes are represented exactly. An
/// optional constant extension covers `t < t0` (used for `K(t) = K₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    start: f64,
    step: f64,
    rows: usize,
    cols: usize,
    values: Vec<DMatrix<f64>>,
    left: BTreeMap<usize, DMatrix<f64>>,
    before: Option<DMatrix<f64>>,
}

impl GridFunction {
    pub fn new(start: f64, step: f64, values: Vec<DMatrix<f64>>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {step}")));
        }
        let first = values
            .first()
            .ok_or_else(|| Error::InvalidArgument("grid function needs samples".into()))?;
        let (rows, cols) = first.shape();
        if values.iter().any(|v| v.shape() != (rows, cols)) {
            return Err(Error::InvalidArgument("grid samples have inconsistent shapes".into()));
        }
        Ok(Self { start, step, rows, cols, values, left: BTreeMap::new(), before: None })
    }

    /// Constant value for `t < start`.
    pub fn with_extension(mut self, before: DMatrix<f64>) -> Self {
        self.before = Some(before);
        self
    }

    pub fn extension(&self) -> Option<&DMatrix<f64>> {
        self.before.as_ref()
    }

    /// Record a jump at node `i`: `m` is the left limit there.
    pub fn set_left_limit(&mut self, i: usize, m: DMatrix<f64>) {
        assert!(i < self.values.len() && m.shape() == (self.rows, self.cols));
        self.left.insert(i, m);
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &DMatrix<f64> {
        &self.values[i]
    }

    /// Left limit at node `i` (the extension at node 0 when present).
    pub fn left_limit(&self, i: usize) -> &DMatrix<f64> {
        if let Some(m) = self.left.get(&i) {
            return m;
        }
        if i == 0 {
            if let Some(b) = &self.before {
                return b;
            }
        }
        &self.values[i]
    }

    pub fn has_jump(&self, i: usize) -> bool {
        self.left.contains_key(&i)
    }

    pub fn jumps(&self) -> impl Iterator<Item = (usize, &DMatrix<f64>)> {
        self.left.iter().map(|(i, m)| (*i, m))
    }

    /// Node value for a trapezoid rule: mean of one-sided limits at interior
    /// jumps, the inward limit at the ends.
    pub fn quad_value(&self, i: usize) -> DMatrix<f64> {
        let last = self.values.len() - 1;
        match self.left.get(&i) {
            Some(l) if i == last => l.clone(),
            Some(l) if i > 0 => (l + &self.values[i]) * 0.5,
            _ => self.values[i].clone(),
        }
    }

    /// Index of `t` if it lies on a node.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let q = (t - self.start) / self.step;
        let r = q.round();
        if r >= 0.0 && (r as usize) < self.values.len() && (q - r).abs() <= 1e-7 {
            Some(r as usize)
        } else {
            None
        }
    }

    fn locate(&self, t: f64) -> Result<Located> {
        let last = self.values.len() - 1;
        let q = (t - self.start) / self.step;
        let r = q.round();
        if (q - r).abs() <= 1e-9 * r.abs().max(1.0) && r >= 0.0 && r <= last as f64 {
            return Ok(Located::Node(r as usize));
        }
        if q < 0.0 {
            return if self.before.is_some() {
                Ok(Located::Before)
            } else {
                Err(Error::OutOfRange { arg: t, lo: self.start, hi: self.end() })
            };
        }
        if q > last as f64 {
            return Err(Error::OutOfRange { arg: t, lo: self.start, hi: self.end() });
        }
        let i = (q.floor() as usize).min(last - 1);
        Ok(Located::Between(i, q - i as f64))
    }

    /// Value at `t` (right limit at jump nodes).
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(match self.locate(t)? {
            Located::Node(i) => self.values[i].clone(),
            Located::Before => self.before.clone().unwrap(),
            Located::Between(i, f) => self.values[i].clone() * (1.0 - f) + self.left_limit(i + 1) * f,
        })
    }

    /// `(left limit, right limit)` at `t`.
    pub fn limits(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok(match self.locate(t)? {
            Located::Node(i) => (self.left_limit(i).clone(), self.values[i].clone()),
            _ => {
                let v = self.eval(t)?;
                (v.clone(), v)
            }
        })
    }

    /// Keep every `factor`-th node. Jumps at dropped nodes are lost.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let last = self.values.len() - 1;
        if factor == 0 || last % factor != 0 {
            return Err(Error::GridMismatch(format!(
                "cannot subsample {} intervals by {factor}",
                last
            )));
        }
        let values = self.values.iter().step_by(factor).cloned().collect();
        let mut out = Self::new(self.start, self.step * factor as f64, values)?;
        out.before = self.before.clone();
        for (i, m) in &self.left {
            if i % factor == 0 {
                out.left.insert(i / factor, m.clone());
            }
        }
        Ok(out)
    }

    /// Nodes `i0..=i1` as a new function (jumps inside kept; the jump at `i0`
    /// is dropped since the window starts there). A window from node 0 keeps
    /// the extension.
    pub fn window(&self, i0: usize, i1: usize) -> Result<Self> {
        if i0 >= i1 || i1 >= self.values.len() {
            return Err(Error::InvalidArgument(format!("bad window {i0}..={i1}")));
        }
        let mut out = Self::new(self.node(i0), self.step, self.values[i0..=i1].to_vec())?;
        if i0 == 0 {
            out.before = self.before.clone();
        }
        for (i, m) in self.left.range(i0 + 1..=i1) {
            out.left.insert(i - i0, m.clone());
        }
        Ok(out)
    }

    /// Running trapezoid integral from `start` to every node.
    pub fn cumulative_integral(&self) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.values.len());
        let mut acc = DMatrix::zeros(self.rows, self.cols);
        out.push(acc.clone());
        for i in 1..self.values.len() {
            acc += (&self.values[i - 1] + self.left_limit(i)) * (0.5 * self.step);
            out.push(acc.clone());
        }
        out
    }

    /// Pointwise map; jumps are mapped too.
    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Result<Self> {
        let mut out = Self::new(self.start, self.step, self.values.iter().map(&f).collect())?;
        out.before = self.before.as_ref().map(&f);
        out.left = self.left.iter().map(|(i, m)| (*i, f(m))).collect();
        Ok(out)
    }

    /// CSV with columns `t, entry_11, entry_12, …` (row-major, 1-based).
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let mut header = String::from("t");
        for i in 0..self.rows {
            for j in 0..self.cols {
                header.push_str(&format!(",entry_{}{}", i + 1, j + 1));
            }
        }
        writeln!(w, "{header}")?;
        for (k, v) in self.values.iter().enumerate() {
            write!(w, "{:.12e}", self.node(k))?;
            for i in 0..self.rows {
                for j in 0..self.cols {
                    write!(w, ",{:.12e}", v[(i, j)])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Piecewise-cubic (4-point Lagrange) evaluation of a [`GridFunction`] whose
/// stencils never straddle a jump node or a listed kink.
pub struct Cubic<'a> {
    g: &'a GridFunction,
    barriers: Vec<usize>,
}

impl GridFunction {
    /// Cubic view; `kinks` are points where a derivative jumps.
    pub fn cubic(&self, kinks: &[f64]) -> Cubic<'_> {
        let mut barriers: Vec<usize> = self.left.keys().cloned().collect();
        for &t in kinks {
            let q = ((t - self.start) / self.step).round();
            if q > 0.0 && q < (self.values.len() - 1) as f64 {
                barriers.push(q as usize);
            }
        }
        barriers.sort_unstable();
        barriers.dedup();
        Cubic { g: self, barriers }
    }
}

impl Cubic<'_> {
    pub fn eval(&self, t: f64) -> Result<DMatrix<f64>> {
        let g = self.g;
        let last = g.values.len() - 1;
        let q = (t - g.start) / g.step;
        if q < -1e-9 {
            return match &g.before {
                Some(b) => Ok(b.clone()),
                None => Err(Error::OutOfRange { arg: t, lo: g.start, hi: g.end() }),
            };
        }
        if q > last as f64 + 1e-9 {
            return Err(Error::OutOfRange { arg: t, lo: g.start, hi: g.end() });
        }
        if last == 0 {
            return Ok(g.values[0].clone());
        }
        let i = (q.max(0.0).floor() as usize).min(last - 1);
        // smooth segment containing cell [i, i+1]
        let k = self.barriers.partition_point(|&b| b <= i);
        let seg_lo = if k == 0 { 0 } else { self.barriers[k - 1] };
        let seg_hi = self.barriers.get(k).cloned().unwrap_or(last);
        let width = (seg_hi - seg_lo).min(3);
        let mut lo = i.saturating_sub(1).max(seg_lo);
        if lo + width > seg_hi {
            lo = seg_hi - width;
        }
        let x = q - lo as f64;
        let mut out = DMatrix::zeros(g.rows, g.cols);
        for a in 0..=width {
            let mut w = 1.0;
            for b in 0..=width {
                if a != b {
                    w *= (x - b as f64) / (a as f64 - b as f64);
                }
            }
            let j = lo + a;
            let v = if a == width && j == seg_hi { g.left_limit(j) } else { &g.values[j] };
            out += v * w;
        }
        Ok(out)
    }
}

enum Located {
    Node(usize),
    Before,
    Between(usize, f64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn ramp() -> GridFunction {
        let vals = (0..=4).map(|i| dmatrix![i as f64]).collect();
        GridFunction::new(0.0, 0.5, vals).unwrap()
    }

    #[test]
    fn interpolates_and_bounds() {
        let g = ramp();
        assert_eq!(g.len(), 5);
        assert_abs_diff_eq!(g.end(), 2.0);
        assert_abs_diff_eq!(g.eval(0.75).unwrap()[(0, 0)], 1.5);
        assert!(matches!(g.eval(-0.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(g.eval(2.1), Err(Error::OutOfRange { .. })));
        let e = g.clone().with_extension(dmatrix![-7.0]);
        assert_eq!(e.eval(-3.0).unwrap()[(0, 0)], -7.0);
        assert_eq!(e.limits(0.0).unwrap().0[(0, 0)], -7.0);
    }

    #[test]
    fn jumps_at_nodes_are_exact() {
        let mut g = ramp();
        g.set_left_limit(2, dmatrix![10.0]);
        // approaching node 2 from below goes towards 10
        assert_abs_diff_eq!(g.eval(0.75).unwrap()[(0, 0)], 5.5);
        assert_abs_diff_eq!(g.eval(1.0).unwrap()[(0, 0)], 2.0);
        assert_abs_diff_eq!(g.quad_value(2)[(0, 0)], 6.0);
        let c = g.cumulative_integral();
        // ∫ over [0,1] of the two-segment ramp with left value 10 at t=1
        assert_abs_diff_eq!(c[2][(0, 0)], 0.25 * (0.0 + 1.0) + 0.25 * (1.0 + 10.0));
    }

    #[test]
    fn subsample_and_window() {
        let g = ramp();
        let s = g.subsample(2).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.value(1)[(0, 0)], 2.0);
        assert!(g.subsample(3).is_err());
        let w = g.window(1, 3).unwrap();
        assert_abs_diff_eq!(w.start(), 0.5);
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn cubic_view_is_exact_on_cubics_and_respects_jumps() {
        let f = |t: f64| t * t * t - 2.0 * t;
        let vals = (0..=10).map(|i| dmatrix![f(i as f64 * 0.1)]).collect();
        let mut g = GridFunction::new(0.0, 0.1, vals).unwrap();
        let c = g.cubic(&[]);
        for t in [0.0, 0.03, 0.55, 0.97, 1.0] {
            assert_abs_diff_eq!(c.eval(t).unwrap()[(0, 0)], f(t), epsilon = 1e-13);
        }
        g.set_left_limit(5, dmatrix![100.0]);
        let c = g.cubic(&[]);
        // stencil stops at the jump and uses its left limit
        assert!(c.eval(0.45).unwrap()[(0, 0)] > 10.0);
        assert_abs_diff_eq!(c.eval(0.55).unwrap()[(0, 0)], f(0.55), epsilon = 1e-13);
    }

    #[test]
    fn csv_layout() {
        let g = GridFunction::new(0.0, 1.0, vec![dmatrix![1.0, 2.0; 3.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,entry_11,entry_12,entry_21,entry_22\n"));
        assert_eq!(s.lines().count(), 2);
    }
}
