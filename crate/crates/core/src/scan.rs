//! Two-parameter sweeps: per-point stability verdicts, D-subdivision
//! boundaries and chart output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::criterion::{kr_matrix, stability_test, Outcome, RRecord, StabilityVerdict, Tolerances};
use crate::error::{Error, Result};
use crate::kernel::{grid_count, KernelSpec};
use crate::lyapunov::lyapunov_collocate;
use crate::par::{self, Execution};
use crate::simulator::{stability_oracle, OracleLabel, OracleSettings};

/// Coefficient entry `(row, col)` of `A_power` on piece `piece` set to
/// `offset + scale · p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injection {
    pub piece: usize,
    pub power: usize,
    pub row: usize,
    pub col: usize,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterAxis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub injections: Vec<Injection>,
}

impl ParameterAxis {
    pub fn value(&self, i: usize, resolution: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (resolution - 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterFamily {
    base: KernelSpec,
    axes: [ParameterAxis; 2],
    resolution: [usize; 2],
}

impl ParameterFamily {
    pub fn new(base: KernelSpec, axes: [ParameterAxis; 2], resolution: [usize; 2]) -> Result<Self> {
        for (a, &res) in axes.iter().zip(&resolution) {
            if res < 2 {
                return Err(Error::InvalidArgument(format!("axis {}: resolution must be at least 2", a.name)));
            }
            if !(a.lo.is_finite() && a.hi.is_finite() && a.hi > a.lo) {
                return Err(Error::InvalidArgument(format!("axis {}: need finite lo < hi", a.name)));
            }
            if a.injections.is_empty() {
                return Err(Error::InvalidArgument(format!("axis {}: no injections", a.name)));
            }
            for inj in &a.injections {
                let piece = base.pieces().get(inj.piece).ok_or_else(|| {
                    Error::InvalidArgument(format!("axis {}: no piece {}", a.name, inj.piece))
                })?;
                if inj.power >= piece.coeffs.len() {
                    return Err(Error::InvalidArgument(format!(
                        "axis {}: piece {} has no power {}",
                        a.name, inj.piece, inj.power
                    )));
                }
                if inj.row >= base.n() || inj.col >= base.n() {
                    return Err(Error::InvalidArgument(format!(
                        "axis {}: entry ({}, {}) outside {}x{}",
                        a.name,
                        inj.row,
                        inj.col,
                        base.n(),
                        base.n()
                    )));
                }
            }
        }
        Ok(Self { base, axes, resolution })
    }

    pub fn base(&self) -> &KernelSpec {
        &self.base
    }

    pub fn axes(&self) -> &[ParameterAxis; 2] {
        &self.axes
    }

    pub fn resolution(&self) -> [usize; 2] {
        self.resolution
    }

    pub fn with_resolution(mut self, resolution: [usize; 2]) -> Result<Self> {
        self.resolution = resolution;
        Self::new(self.base, self.axes, self.resolution)
    }

    pub fn kernel_at(&self, p1: f64, p2: f64) -> KernelSpec {
        let mut k = self.base.clone();
        for (axis, p) in self.axes.iter().zip([p1, p2]) {
            for inj in &axis.injections {
                k.pieces_mut()[inj.piece].coeffs[inj.power][(inj.row, inj.col)] = inj.offset + inj.scale * p;
            }
        }
        k
    }

    /// Grid points `(i1, i2, p1, p2)`, `i2` running fastest.
    pub fn points(&self) -> Vec<(usize, usize, f64, f64)> {
        let [n1, n2] = self.resolution;
        let mut out = Vec::with_capacity(n1 * n2);
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                out.push((i1, i2, self.axes[0].value(i1, n1), self.axes[1].value(i2, n2)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Numerics {
    /// Simulation step of the oracle.
    pub delta: f64,
    /// `N`: Lyapunov steps per delay.
    pub segments: usize,
    /// Oracle horizon in units of `h`.
    pub horizon: f64,
    pub tolerances: Tolerances,
    /// Stop at the first certifying `r` (otherwise every `r` is evaluated).
    pub latch: bool,
    pub oracle_trials: usize,
    pub seed: u64,
    pub omega_max: f64,
    pub omega_samples: usize,
    pub margin_tol: f64,
    pub band: f64,
    pub execution: Execution,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            delta: 5e-3,
            segments: 60,
            horizon: 20.0,
            tolerances: Tolerances::default(),
            latch: true,
            oracle_trials: 4,
            seed: 0,
            omega_max: 50.0,
            omega_samples: 2001,
            margin_tol: 1e-6,
            band: 0.05,
            execution: Execution::default(),
        }
    }
}

impl Numerics {
    pub fn validate(&self, h: f64) -> Result<()> {
        if grid_count(h, self.delta).is_none() {
            return Err(Error::GridMismatch(format!("delta {} does not divide h = {h}", self.delta)));
        }
        if self.segments < 20 {
            return Err(Error::InvalidArgument(format!("segments must be at least 20, got {}", self.segments)));
        }
        if self.horizon < 10.0 {
            return Err(Error::InvalidArgument(format!("horizon must be at least 10 h, got {}", self.horizon)));
        }
        if self.oracle_trials == 0 {
            return Err(Error::InvalidArgument("oracle_trials must be positive".into()));
        }
        Ok(())
    }

    /// Oracle settings; each point runs its trials sequentially since points
    /// are already spread over the pool.
    pub fn oracle_settings(&self) -> OracleSettings {
        OracleSettings {
            trials: self.oracle_trials,
            horizon: self.horizon,
            step: self.delta,
            band: self.band,
            seed: self.seed,
            omega_max: self.omega_max,
            omega_samples: self.omega_samples,
            margin_tol: self.margin_tol,
            execution: Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointRecord {
    pub index: [usize; 2],
    pub params: [f64; 2],
    pub outcome: Outcome,
    pub records: Vec<RRecord>,
    pub oracle: Option<OracleLabel>,
    pub seconds: f64,
}

impl PointRecord {
    /// `r` at which the point was excluded.
    pub fn exclusion_r(&self) -> Option<usize> {
        match self.outcome {
            Outcome::CertifiedUnstable { r, .. } => Some(r),
            _ => None,
        }
    }

    pub fn min_eigenvalue(&self, r: usize) -> Option<f64> {
        self.records.iter().find(|x| x.r == r).map(|x| x.min_eigenvalue)
    }

    /// Positive definite at `r` (and, with latching, at every earlier `r`).
    pub fn passes(&self, r: usize, tol: &Tolerances) -> bool {
        self.records.iter().find(|x| x.r == r).is_some_and(|x| x.min_eigenvalue > tol.pos * x.norm)
    }

    /// `|λ_min|` beyond `factor` times the dead band at the deciding `r`.
    pub fn is_clear(&self, factor: f64, tol: &Tolerances) -> bool {
        let rec = match &self.outcome {
            Outcome::CertifiedUnstable { r, .. } => self.records.iter().find(|x| x.r == *r),
            Outcome::ConsistentWithStability { .. } => self.records.iter().min_by(|a, b| {
                (a.min_eigenvalue / a.norm).total_cmp(&(b.min_eigenvalue / b.norm))
            }),
            Outcome::Inconclusive { .. } => None,
        };
        rec.is_some_and(|x| x.min_eigenvalue.abs() > factor * tol.pos.max(tol.neg) * x.norm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanMeta {
    pub axes: [String; 2],
    pub ranges: [[f64; 2]; 2],
    pub resolution: [usize; 2],
    pub schedule: Vec<usize>,
    pub numerics: Numerics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanResult {
    pub points: Vec<PointRecord>,
    pub boundary: Boundary,
    pub meta: ScanMeta,
}

/// Verdict for one kernel with the scan pipeline.
pub fn analyze_point(kernel: &KernelSpec, schedule: &[usize], numerics: &Numerics) -> (Outcome, Vec<RRecord>) {
    let inconclusive = |e: String| (Outcome::Inconclusive { reason: e }, Vec::new());
    let w = DMatrix::identity(kernel.n(), kernel.n());
    let constants = match kernel.derive_constants(&w) {
        Ok(c) => c,
        Err(e) => return inconclusive(e.to_string()),
    };
    match kernel.imaginary_axis_margin(numerics.omega_max, numerics.omega_samples) {
        Ok((m, at)) if m <= numerics.margin_tol => {
            return inconclusive(format!("root on the imaginary axis near ω = {at:.6}"))
        }
        Err(e) => return inconclusive(e.to_string()),
        _ => {}
    }
    let table = match lyapunov_collocate(kernel, &constants, numerics.segments) {
        Ok(t) => t,
        Err(e) => return inconclusive(e.to_string()),
    };
    if numerics.latch {
        return match stability_test(&table, schedule, numerics.tolerances) {
            Ok(StabilityVerdict { records, outcome }) => (outcome, records),
            Err(e) => inconclusive(e.to_string()),
        };
    }
    let mut records = Vec::new();
    let mut outcome = None;
    for &r in schedule {
        match stability_test(&table, &[r], numerics.tolerances) {
            Ok(v) => {
                records.extend(v.records);
                if outcome.is_none() && !matches!(v.outcome, Outcome::ConsistentWithStability { .. }) {
                    outcome = Some(v.outcome);
                }
            }
            Err(e) => return inconclusive(e.to_string()),
        }
    }
    let outcome = match outcome {
        Some(o) => o,
        None => Outcome::ConsistentWithStability { r_max: *schedule.last().unwrap() },
    };
    (outcome, records)
}

/// Sweeps the grid of `family`. Per-point failures end up in the record as
/// [`Outcome::Inconclusive`]; only invalid arguments abort.
pub fn scan_region(
    family: &ParameterFamily,
    schedule: &[usize],
    numerics: &Numerics,
    with_oracle: bool,
) -> Result<ScanResult> {
    numerics.validate(family.base.h())?;
    if schedule.is_empty() || schedule[0] < 2 || schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("bad r schedule {schedule:?}")));
    }
    let pts = family.points();
    let settings = numerics.oracle_settings();
    let points = par::map_indexed(numerics.execution, pts.len(), |idx| {
        let (i1, i2, p1, p2) = pts[idx];
        let start = Instant::now();
        let kernel = family.kernel_at(p1, p2);
        let (outcome, records) = analyze_point(&kernel, schedule, numerics);
        let oracle = with_oracle.then(|| match stability_oracle(&kernel, &settings) {
            Ok(r) => r.label,
            Err(_) => OracleLabel::Marginal,
        });
        PointRecord {
            index: [i1, i2],
            params: [p1, p2],
            outcome,
            records,
            oracle,
            seconds: start.elapsed().as_secs_f64(),
        }
    });
    let axes = family.axes();
    Ok(ScanResult {
        points,
        boundary: Boundary::default(),
        meta: ScanMeta {
            axes: [axes[0].name.clone(), axes[1].name.clone()],
            ranges: [[axes[0].lo, axes[0].hi], [axes[1].lo, axes[1].hi]],
            resolution: family.resolution,
            schedule: schedule.to_vec(),
            numerics: numerics.clone(),
        },
    })
}

/// Final verdicts with and without latching agree point by point.
pub fn exclusion_equivalence(latched: &ScanResult, independent: &ScanResult) -> usize {
    latched
        .points
        .iter()
        .zip(&independent.points)
        .filter(|(a, b)| a.outcome.label() != b.outcome.label())
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub p1: f64,
    pub p2: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Boundary {
    pub curves: Vec<Vec<BoundaryPoint>>,
    /// Newton seeds that did not converge.
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundarySettings {
    pub omega_max: f64,
    pub omega_samples: usize,
    /// Resolution of the grid used for the `s = 0` locus.
    pub static_resolution: usize,
    /// Newton seeds per axis (`n > 1`).
    pub seeds: usize,
    pub execution: Execution,
}

impl Default for BoundarySettings {
    fn default() -> Self {
        Self { omega_max: 30.0, omega_samples: 600, static_resolution: 100, seeds: 6, execution: Execution::default() }
    }
}

/// Curves in the parameter plane on which `det H(jω; p) = 0` for some
/// `ω ∈ [0, ω_max]`.
pub fn dsubdivision_boundary(family: &ParameterFamily, settings: &BoundarySettings) -> Result<Boundary> {
    if !(settings.omega_max > 0.0) || settings.omega_samples < 2 || settings.static_resolution < 2 {
        return Err(Error::InvalidArgument("bad boundary settings".into()));
    }
    let axes = family.axes();
    let span = [axes[0].hi - axes[0].lo, axes[1].hi - axes[1].lo];
    let inside = |p: [f64; 2]| {
        (0..2).all(|k| p[k] >= axes[k].lo - 1e-9 * span[k] && p[k] <= axes[k].hi + 1e-9 * span[k])
    };
    let mut curves = static_locus(family, settings.static_resolution);

    let det = |s: Complex64, p: [f64; 2]| family.kernel_at(p[0], p[1]).char_det(s);
    let n = family.base.n();
    let omegas: Vec<f64> =
        (1..=settings.omega_samples).map(|i| settings.omega_max * i as f64 / settings.omega_samples as f64).collect();
    let per_omega: Vec<(Vec<[f64; 2]>, usize)> = par::map_indexed(settings.execution, omegas.len(), |i| {
        let s = Complex64::new(0.0, omegas[i]);
        if n == 1 {
            // det H is affine in p
            let a0 = det(s, [0.0, 0.0]);
            let a1 = det(s, [1.0, 0.0]) - a0;
            let a2 = det(s, [0.0, 1.0]) - a0;
            let m = nalgebra::Matrix2::new(a1.re, a2.re, a1.im, a2.im);
            let sol = m.try_inverse().map(|inv| inv * nalgebra::Vector2::new(-a0.re, -a0.im));
            let pts = sol.map(|v| [v[0], v[1]]).filter(|p| inside(*p)).into_iter().collect();
            return (pts, 0);
        }
        let mut found: Vec<[f64; 2]> = Vec::new();
        let mut failures = 0;
        for a in 0..settings.seeds {
            for b in 0..settings.seeds {
                let seed = [axes[0].value(a, settings.seeds.max(2)), axes[1].value(b, settings.seeds.max(2))];
                match newton(|p| det(s, p), seed, span) {
                    Some(p) if inside(p) => {
                        let dup = found.iter().any(|q| ((q[0] - p[0]) / span[0]).hypot((q[1] - p[1]) / span[1]) < 1e-6);
                        if !dup {
                            found.push(p);
                        }
                    }
                    Some(_) => {}
                    None => failures += 1,
                }
            }
        }
        found.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
        (found, failures)
    });
    let failures = per_omega.iter().map(|x| x.1).sum();
    curves.extend(chain(&omegas, &per_omega.into_iter().map(|x| x.0).collect::<Vec<_>>(), span));
    Ok(Boundary { curves, failures })
}

fn newton(f: impl Fn([f64; 2]) -> Complex64, seed: [f64; 2], span: [f64; 2]) -> Option<[f64; 2]> {
    let mut p = seed;
    let f0 = f(p).norm().max(1e-300);
    for _ in 0..40 {
        let v = f(p);
        let hs = [1e-7 * span[0], 1e-7 * span[1]];
        let d1 = (f([p[0] + hs[0], p[1]]) - v) / hs[0];
        let d2 = (f([p[0], p[1] + hs[1]]) - v) / hs[1];
        let j = nalgebra::Matrix2::new(d1.re, d2.re, d1.im, d2.im);
        let step = j.try_inverse()? * nalgebra::Vector2::new(v.re, v.im);
        // damp long steps
        let len = (step[0] / span[0]).hypot(step[1] / span[1]);
        let damp = if len > 0.25 { 0.25 / len } else { 1.0 };
        p = [p[0] - damp * step[0], p[1] - damp * step[1]];
        if !(p[0].is_finite() && p[1].is_finite()) || len > 1e3 {
            return None;
        }
        if len < 1e-11 {
            let r = f(p).norm();
            return (r <= 1e-8 * f0.max(1.0)).then_some(p);
        }
    }
    None
}

/// Join per-ω solution sets into polylines by nearest continuation.
fn chain(omegas: &[f64], sets: &[Vec<[f64; 2]>], span: [f64; 2]) -> Vec<Vec<BoundaryPoint>> {
    let gap = 0.05;
    let mut done: Vec<Vec<BoundaryPoint>> = Vec::new();
    let mut open: Vec<Vec<BoundaryPoint>> = Vec::new();
    for (w, set) in omegas.iter().zip(sets) {
        let mut next_open = Vec::new();
        let mut used = vec![false; set.len()];
        for mut curve in open.drain(..) {
            let last = *curve.last().unwrap();
            let best = set
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, p)| (i, ((p[0] - last.p1) / span[0]).hypot((p[1] - last.p2) / span[1])))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((i, d)) if d < gap => {
                    used[i] = true;
                    curve.push(BoundaryPoint { p1: set[i][0], p2: set[i][1], omega: *w });
                    next_open.push(curve);
                }
                _ => done.push(curve),
            }
        }
        for (i, p) in set.iter().enumerate() {
            if !used[i] {
                next_open.push(vec![BoundaryPoint { p1: p[0], p2: p[1], omega: *w }]);
            }
        }
        open = next_open;
    }
    done.extend(open);
    done
}

/// Marching squares on `det H(0; p)`.
fn static_locus(family: &ParameterFamily, res: usize) -> Vec<Vec<BoundaryPoint>> {
    let axes = family.axes();
    let x = |i: usize| axes[0].value(i, res);
    let y = |j: usize| axes[1].value(j, res);
    let vals: Vec<f64> = (0..res * res)
        .map(|k| family.kernel_at(x(k / res), y(k % res)).char_det(Complex64::new(0.0, 0.0)).re)
        .collect();
    let v = |i: usize, j: usize| vals[i * res + j];
    // edge ids: (i, j, 0) joins (i,j)-(i+1,j); (i, j, 1) joins (i,j)-(i,j+1)
    let cross = |e: (usize, usize, usize)| -> Option<[f64; 2]> {
        let (i, j, d) = e;
        let (i2, j2) = if d == 0 { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (v(i, j), v(i2, j2));
        if (a > 0.0) == (b > 0.0) {
            return None;
        }
        let t = a / (a - b);
        Some([x(i) + t * (x(i2) - x(i)), y(j) + t * (y(j2) - y(j))])
    };
    let mut segments: Vec<((usize, usize, usize), (usize, usize, usize))> = Vec::new();
    for i in 0..res - 1 {
        for j in 0..res - 1 {
            let edges = [(i, j, 0), (i + 1, j, 1), (i, j + 1, 0), (i, j, 1)];
            let hits: Vec<_> = edges.iter().cloned().filter(|&e| cross(e).is_some()).collect();
            match hits.len() {
                2 => segments.push((hits[0], hits[1])),
                4 => {
                    segments.push((hits[0], hits[1]));
                    segments.push((hits[2], hits[3]));
                }
                _ => {}
            }
        }
    }
    // walk chains
    let mut used = vec![false; segments.len()];
    let mut out = Vec::new();
    for s in 0..segments.len() {
        if used[s] {
            continue;
        }
        used[s] = true;
        let mut chain_ids = std::collections::VecDeque::from([segments[s].0, segments[s].1]);
        for front in [false, true] {
            loop {
                let end = if front { *chain_ids.front().unwrap() } else { *chain_ids.back().unwrap() };
                let next = (0..segments.len()).find(|&k| !used[k] && (segments[k].0 == end || segments[k].1 == end));
                let Some(k) = next else { break };
                used[k] = true;
                let other = if segments[k].0 == end { segments[k].1 } else { segments[k].0 };
                if front {
                    chain_ids.push_front(other);
                } else {
                    chain_ids.push_back(other);
                }
            }
        }
        out.push(
            chain_ids
                .into_iter()
                .map(|e| {
                    let p = cross(e).unwrap();
                    BoundaryPoint { p1: p[0], p2: p[1], omega: 0.0 }
                })
                .collect(),
        );
    }
    out
}

fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

/// CSV with one row per grid point:
/// `i1,i2,p1,p2,verdict,exclusion_r,min_eig_r<r>...,oracle`.
pub fn write_points_csv<W: Write>(result: &ScanResult, mut w: W) -> io::Result<()> {
    let mut header = String::from("i1,i2,p1,p2,verdict,exclusion_r");
    for r in &result.meta.schedule {
        header.push_str(&format!(",min_eig_r{r}"));
    }
    header.push_str(",oracle\n");
    w.write_all(header.as_bytes())?;
    for p in &result.points {
        let mut line = format!(
            "{},{},{},{},{},{}",
            p.index[0],
            p.index[1],
            fmt(p.params[0]),
            fmt(p.params[1]),
            p.outcome.label(),
            p.exclusion_r().map(|r| r.to_string()).unwrap_or_default()
        );
        for r in &result.meta.schedule {
            line.push(',');
            if let Some(e) = p.min_eigenvalue(*r) {
                line.push_str(&fmt(e));
            }
        }
        line.push(',');
        if let Some(o) = p.oracle {
            line.push_str(match o {
                OracleLabel::Stable => "stable",
                OracleLabel::Unstable => "unstable",
                OracleLabel::Marginal => "marginal",
            });
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// CSV `curve,omega,p1,p2`.
pub fn write_boundary_csv<W: Write>(boundary: &Boundary, mut w: W) -> io::Result<()> {
    writeln!(w, "curve,omega,p1,p2")?;
    for (c, curve) in boundary.curves.iter().enumerate() {
        for p in curve {
            writeln!(w, "{c},{},{},{}", fmt(p.omega), fmt(p.p1), fmt(p.p2))?;
        }
    }
    Ok(())
}

/// SVG scatter of the points passing `r` (all `r` when `None`) with the
/// boundary curves on top.
pub fn render_svg(result: &ScanResult, r: Option<usize>) -> String {
    let (w, h, pad) = (480.0, 480.0, 48.0);
    let [[x0, x1], [y0, y1]] = result.meta.ranges;
    let sx = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let tol = &result.meta.numerics.tolerances;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"white\" stroke=\"black\"/>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    let title = match r {
        Some(r) => format!("r = {r}"),
        None => format!("r ≤ {}", result.meta.schedule.last().unwrap_or(&0)),
    };
    s.push_str(&format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n", w / 2.0, pad / 2.0));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        w / 2.0,
        h - pad / 4.0,
        result.meta.axes[0]
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 {} {})\">{}</text>\n",
        pad / 3.0,
        h / 2.0,
        pad / 3.0,
        h / 2.0,
        result.meta.axes[1]
    ));
    for (x, y, anchor) in [(x0, y0, "start"), (x1, y0, "end")] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\" font-size=\"10\">{x}</text>\n",
            sx(x),
            sy(y) + 14.0
        ));
    }
    for y in [y0, y1] {
        s.push_str(&format!("<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{y}</text>\n", pad - 4.0, sy(y)));
    }
    for p in &result.points {
        let fill = match (r, &p.outcome) {
            (_, Outcome::Inconclusive { .. }) => Some("orange"),
            (Some(r), _) if p.passes(r, tol) => Some("black"),
            (None, Outcome::ConsistentWithStability { .. }) => Some("black"),
            _ => None,
        };
        if let Some(fill) = fill {
            s.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{fill}\"/>\n",
                sx(p.params[0]),
                sy(p.params[1])
            ));
        }
    }
    for curve in &result.boundary.curves {
        if curve.len() < 2 {
            continue;
        }
        let pts: Vec<String> = curve.iter().map(|p| format!("{:.2},{:.2}", sx(p.p1), sy(p.p2))).collect();
        s.push_str(&format!("<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n", pts.join(" ")));
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartFormat {
    Csv,
    Svg,
}

/// Writes `<stem>.csv`, `<stem>_boundary.csv` and/or `<stem>.svg` plus one
/// `<stem>_r<r>.svg` per `r`. Returns the paths written.
pub fn emit_chart(result: &ScanResult, dir: &Path, stem: &str, formats: &[ChartFormat]) -> Result<Vec<PathBuf>> {
    if result.points.is_empty() {
        return Err(Error::InvalidArgument("empty scan result".into()));
    }
    let io_err = |p: &Path, e: io::Error| Error::InvalidArgument(format!("{}: {e}", p.display()));
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            ChartFormat::Csv => {
                let mut buf = Vec::new();
                write_points_csv(result, &mut buf).expect("in-memory write");
                put(format!("{stem}.csv"), buf)?;
                let mut buf = Vec::new();
                write_boundary_csv(&result.boundary, &mut buf).expect("in-memory write");
                put(format!("{stem}_boundary.csv"), buf)?;
            }
            ChartFormat::Svg => {
                put(format!("{stem}.svg"), render_svg(result, None).into_bytes())?;
                for &r in &result.meta.schedule {
                    put(format!("{stem}_r{r}.svg"), render_svg(result, Some(r)).into_bytes())?;
                }
            }
        }
    }
    Ok(written)
}

/// Share of points where the verdict agrees with the oracle, over points that
/// are clear (`|λ_min|` beyond `factor` dead bands) and have a decisive
/// oracle label. Returns `(agreeing, compared)`.
pub fn oracle_agreement(result: &ScanResult, factor: f64) -> (usize, usize) {
    let tol = &result.meta.numerics.tolerances;
    let mut agree = 0;
    let mut total = 0;
    for p in &result.points {
        let Some(o) = p.oracle else { continue };
        if o == OracleLabel::Marginal || !p.is_clear(factor, tol) {
            continue;
        }
        total += 1;
        let stable = matches!(p.outcome, Outcome::ConsistentWithStability { .. });
        if stable == (o == OracleLabel::Stable) {
            agree += 1;
        }
    }
    (agree, total)
}

/// Points passing `r` but not an earlier `r` of the schedule.
pub fn nesting_violations(result: &ScanResult) -> usize {
    let tol = &result.meta.numerics.tolerances;
    let sched = &result.meta.schedule;
    result
        .points
        .iter()
        .filter(|p| sched.windows(2).any(|w| p.passes(w[1], tol) && !p.passes(w[0], tol)))
        .count()
}

/// Points passing `r` but not some `d` of the schedule dividing `r`. `K_d` is
/// a principal submatrix of `K_r` then, so this must be zero for any table;
/// `r` without a common grid (2 and 3) carry no such relation.
pub fn divisor_nesting_violations(result: &ScanResult) -> usize {
    let tol = &result.meta.numerics.tolerances;
    let sched = &result.meta.schedule;
    result
        .points
        .iter()
        .filter(|p| {
            sched.iter().any(|&r| {
                p.passes(r, tol) && sched.iter().any(|&d| d < r && r % d == 0 && !p.passes(d, tol))
            })
        })
        .count()
}

/// `K_r` at a single parameter point, for debugging dumps.
pub fn kr_at(family: &ParameterFamily, p: [f64; 2], r: usize, segments: usize) -> Result<DMatrix<f64>> {
    let kernel = family.kernel_at(p[0], p[1]);
    let c = kernel.derive_constants(&DMatrix::identity(kernel.n(), kernel.n()))?;
    let t = lyapunov_collocate(&kernel, &c, segments)?;
    Ok(kr_matrix(&t, r)?.matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    pub(crate) fn example1(res: usize) -> ParameterFamily {
        let base = KernelSpec::scalar_affine(1.0, 0.0, 0.0).unwrap();
        let axis = |name: &str, power, scale| ParameterAxis {
            name: name.into(),
            lo: -6.0,
            hi: 6.0,
            injections: vec![Injection { piece: 0, power, row: 0, col: 0, offset: 0.0, scale }],
        };
        ParameterFamily::new(base, [axis("c1", 1, -1.0), axis("c2", 0, 1.0)], [res, res]).unwrap()
    }

    #[test]
    fn injections_are_validated_and_applied() {
        let fam = example1(3);
        let k = fam.kernel_at(2.0, 3.0);
        assert_eq!(k.evaluate(-0.5), dmatrix![3.0 + 2.0 * 0.5]);
        assert_eq!(fam.points().len(), 9);
        let mut axes = fam.axes().clone();
        axes[0].injections[0].power = 5;
        assert!(ParameterFamily::new(fam.base().clone(), axes, [3, 3]).is_err());
    }

    #[test]
    fn small_scan_writes_one_row_per_point() {
        let fam = example1(2);
        let num = Numerics { segments: 20, ..Numerics::default() };
        let res = scan_region(&fam, &[2, 3], &num, false).unwrap();
        assert_eq!(res.points.len(), 4);
        let mut buf = Vec::new();
        write_points_csv(&res, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
        let svg = render_svg(&res, None);
        assert!(svg.starts_with("<svg") && !svg.contains("polyline"));
    }

    #[test]
    fn static_locus_of_affine_family_is_a_line() {
        let fam = example1(5);
        let curves = static_locus(&fam, 40);
        assert_eq!(curves.len(), 1);
        for p in &curves[0] {
            assert!((1.0 - p.p2 - p.p1 / 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn newton_finds_simple_root() {
        let f = |p: [f64; 2]| Complex64::new(p[0] - 1.0, p[1] * p[1] - 4.0);
        let r = newton(f, [0.0, 1.0], [1.0, 1.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-9 && (r[1] - 2.0).abs() < 1e-9);
    }
}
