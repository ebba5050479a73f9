//! Experiment configuration files (TOML).
//!
//! ```toml
//! [kernel]
//! h = 1.0
//! matrix = 0.5                 # constant kernel; a number for n = 1
//! # or piecewise polynomials, coeffs[k] multiplying θ^k:
//! # [[kernel.pieces]]
//! # end = 0.0
//! # coeffs = [[[0.0, 1.0], [-1.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]
//!
//! [weight]        # optional, identity by default
//! matrix = 1.0
//!
//! [initial]       # `simulate` only
//! kind = "constant"             # or "random"
//! value = [1.0]
//!
//! [family]        # `scan` and `boundary`
//! resolution = [25, 25]
//! [[family.axis]]
//! name = "c1"
//! lo = -6.0
//! hi = 6.0
//! injections = [{ piece = 0, power = 1, row = 0, col = 0, scale = -1.0 }]
//!
//! [numerics]
//! delta = 1e-3
//! segments = 120        # steps per delay for the Lyapunov matrix
//!
//! [schedule]
//! r = [2, 3, 4, 5]              # or r_max = 6
//!
//! [output]
//! dir = "out"
//! ```

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::criterion::Tolerances;
use crate::kernel::{KernelSpec, Piece};
use crate::par::Execution;
use crate::scan::{BoundarySettings, ChartFormat, Injection, Numerics, ParameterAxis, ParameterFamily};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{}{}: {message}", .line.map(|l| format!("line {l}")).unwrap_or_else(|| "config".into()), .field.as_ref().map(|f| format!(", field `{f}`")).unwrap_or_default())]
pub struct ConfigError {
    pub message: String,
    pub field: Option<String>,
    pub line: Option<usize>,
}

/// A number or a list of rows.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MatrixValue {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixValue {
    fn to_matrix(&self) -> std::result::Result<DMatrix<f64>, String> {
        match self {
            MatrixValue::Scalar(v) => Ok(DMatrix::from_element(1, 1, *v)),
            MatrixValue::Rows(rows) => {
                let n = rows.len();
                if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
                    return Err("rows must be nonempty and of equal length".into());
                }
                Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSection {
    pub start: Option<f64>,
    pub end: Spanned<f64>,
    pub coeffs: Spanned<Vec<MatrixValue>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub h: Spanned<f64>,
    pub matrix: Option<Spanned<MatrixValue>>,
    pub pieces: Option<Vec<Spanned<PieceSection>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub matrix: Spanned<MatrixValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    Constant,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub kind: InitialKind,
    pub value: Option<Spanned<Vec<f64>>>,
    #[serde(default = "default_pieces")]
    pub pieces: usize,
    #[serde(default)]
    pub trial: u64,
}

fn default_pieces() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSection {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub injections: Vec<Injection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub resolution: Spanned<[usize; 2]>,
    pub axis: Spanned<Vec<AxisSection>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub delta: Option<Spanned<f64>>,
    pub segments: Option<Spanned<usize>>,
    pub horizon: Option<Spanned<f64>>,
    pub tol_pos: Option<f64>,
    pub tol_neg: Option<f64>,
    pub seed: Option<u64>,
    pub oracle_trials: Option<usize>,
    pub band: Option<f64>,
    pub margin_tol: Option<f64>,
    pub omega_max: Option<f64>,
    pub omega_samples: Option<usize>,
    pub latch: Option<bool>,
    pub execution: Option<Execution>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub r: Option<Spanned<Vec<usize>>>,
    pub r_max: Option<Spanned<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<String>,
    pub stem: Option<String>,
    pub formats: Option<Vec<ChartFormat>>,
    pub oracle: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kernel: Spanned<KernelSection>,
    weight: Option<WeightSection>,
    initial: Option<InitialSection>,
    family: Option<Spanned<FamilySection>>,
    numerics: Option<NumericsSection>,
    schedule: Option<ScheduleSection>,
    output: Option<OutputSection>,
    boundary: Option<BoundarySettings>,
}

/// Initial function description for `simulate`.
#[derive(Debug, Clone, PartialEq)]
pub enum Initial {
    Constant(DVector<f64>),
    Random { pieces: usize, trial: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub dir: String,
    pub stem: String,
    pub formats: Vec<ChartFormat>,
    pub oracle: bool,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub kernel: KernelSpec,
    pub weight: DMatrix<f64>,
    pub initial: Initial,
    pub family: Option<ParameterFamily>,
    pub numerics: Numerics,
    /// Whether `numerics.segments` was given explicitly.
    pub segments_set: bool,
    pub schedule: Vec<usize>,
    pub output: Output,
    pub boundary: BoundarySettings,
}

pub const DEFAULT_R_MAX: usize = 8;

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            let message = e
                .message()
                .trim()
                .replace("data did not match any variant of untagged enum MatrixValue", "expected a number or a list of rows");
            ConfigError { message, field: e.span().and_then(|s| field_at(text, s)), line }
        })?;
        let err = |span: Range<usize>, field: &str, message: String| ConfigError {
            message,
            field: Some(field.to_string()),
            line: Some(line_of(text, span.start)),
        };

        let ks = raw.kernel.get_ref();
        let h = *ks.h.get_ref();
        if !(h.is_finite() && h > 0.0) {
            return Err(err(ks.h.span(), "kernel.h", format!("must be positive, got {h}")));
        }
        let pieces = match (&ks.matrix, &ks.pieces) {
            (Some(m), None) => {
                let a = m.get_ref().to_matrix().map_err(|e| err(m.span(), "kernel.matrix", e))?;
                vec![Piece { start: -h, end: 0.0, coeffs: vec![a] }]
            }
            (None, Some(ps)) if !ps.is_empty() => {
                let mut out = Vec::new();
                let mut start = -h;
                for (j, p) in ps.iter().enumerate() {
                    let pr = p.get_ref();
                    let field = format!("kernel.pieces[{j}].coeffs");
                    if pr.coeffs.get_ref().is_empty() {
                        return Err(err(pr.coeffs.span(), &field, "needs at least one matrix".into()));
                    }
                    let coeffs = pr
                        .coeffs
                        .get_ref()
                        .iter()
                        .map(|c| c.to_matrix())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| err(pr.coeffs.span(), &field, e))?;
                    out.push(Piece { start: pr.start.unwrap_or(start), end: *pr.end.get_ref(), coeffs });
                    start = *pr.end.get_ref();
                }
                out
            }
            _ => {
                return Err(err(raw.kernel.span(), "kernel", "give exactly one of `matrix` or `pieces`".into()))
            }
        };
        let n = pieces[0].coeffs[0].nrows();
        let kernel = KernelSpec::new(n, h, pieces).map_err(|e| {
            let span = ks.pieces.as_ref().and_then(|p| p.first()).map_or(raw.kernel.span(), |p| p.span());
            err(span, "kernel", e.to_string())
        })?;

        let weight = match &raw.weight {
            None => DMatrix::identity(n, n),
            Some(w) => {
                let m = w.matrix.get_ref().to_matrix().map_err(|e| err(w.matrix.span(), "weight.matrix", e))?;
                if m.shape() != (n, n) {
                    return Err(err(w.matrix.span(), "weight.matrix", format!("must be {n}x{n}")));
                }
                if m.clone().cholesky().is_none() || (&m - m.transpose()).amax() > 0.0 {
                    return Err(err(w.matrix.span(), "weight.matrix", "must be symmetric positive definite".into()));
                }
                m
            }
        };

        let initial = match &raw.initial {
            None => Initial::Constant(DVector::from_element(n, 1.0)),
            Some(i) => match i.kind {
                InitialKind::Constant => match &i.value {
                    Some(v) if v.get_ref().len() == n => Initial::Constant(DVector::from_column_slice(v.get_ref())),
                    Some(v) => return Err(err(v.span(), "initial.value", format!("must have length {n}"))),
                    None => Initial::Constant(DVector::from_element(n, 1.0)),
                },
                InitialKind::Random => Initial::Random { pieces: i.pieces.max(1), trial: i.trial },
            },
        };

        let mut numerics = Numerics::default();
        let mut segments_set = false;
        if let Some(ns) = &raw.numerics {
            if let Some(d) = &ns.delta {
                let delta = *d.get_ref();
                if !(delta > 0.0) || crate::kernel::grid_count(h, delta).is_none() {
                    return Err(err(d.span(), "numerics.delta", format!("{delta} must be positive and divide h = {h}")));
                }
                numerics.delta = delta;
            }
            if let Some(s) = &ns.segments {
                if *s.get_ref() < 20 {
                    return Err(err(s.span(), "numerics.segments", "must be at least 20".into()));
                }
                numerics.segments = *s.get_ref();
                segments_set = true;
            }
            if let Some(t) = &ns.horizon {
                let horizon = *t.get_ref();
                if !(horizon >= 10.0) {
                    return Err(err(t.span(), "numerics.horizon", "must be at least 10 (units of h)".into()));
                }
                numerics.horizon = horizon;
            }
            let d = Tolerances::default();
            numerics.tolerances = Tolerances { pos: ns.tol_pos.unwrap_or(d.pos), neg: ns.tol_neg.unwrap_or(d.neg) };
            let def = Numerics::default();
            numerics.seed = ns.seed.unwrap_or(def.seed);
            numerics.oracle_trials = ns.oracle_trials.unwrap_or(def.oracle_trials);
            numerics.band = ns.band.unwrap_or(def.band);
            numerics.margin_tol = ns.margin_tol.unwrap_or(def.margin_tol);
            numerics.omega_max = ns.omega_max.unwrap_or(def.omega_max);
            numerics.omega_samples = ns.omega_samples.unwrap_or(def.omega_samples);
            numerics.latch = ns.latch.unwrap_or(def.latch);
            numerics.execution = ns.execution.unwrap_or(def.execution);
        }
        if crate::kernel::grid_count(h, numerics.delta).is_none() {
            return Err(err(ks.h.span(), "numerics.delta", format!("default delta {} does not divide h = {h}", numerics.delta)));
        }
        if numerics.oracle_trials == 0 {
            return Err(ConfigError { message: "must be positive".into(), field: Some("numerics.oracle_trials".into()), line: None });
        }

        let schedule = match &raw.schedule {
            None => (2..=DEFAULT_R_MAX).collect(),
            Some(s) => match (&s.r, &s.r_max) {
                (Some(r), None) => {
                    let v = r.get_ref().clone();
                    if v.is_empty() || v[0] < 2 || v.windows(2).any(|w| w[1] <= w[0]) {
                        return Err(err(r.span(), "schedule.r", "must be nonempty, increasing, starting at 2 or more".into()));
                    }
                    v
                }
                (None, Some(m)) => {
                    if *m.get_ref() < 2 {
                        return Err(err(m.span(), "schedule.r_max", "must be at least 2".into()));
                    }
                    (2..=*m.get_ref()).collect()
                }
                (None, None) => (2..=DEFAULT_R_MAX).collect(),
                (Some(r), Some(_)) => {
                    return Err(err(r.span(), "schedule", "give either `r` or `r_max`, not both".into()))
                }
            },
        };

        let family = match &raw.family {
            None => None,
            Some(f) => {
                let fs = f.get_ref();
                let axes = fs.axis.get_ref();
                if axes.len() != 2 {
                    return Err(err(fs.axis.span(), "family.axis", format!("need exactly 2 axes, got {}", axes.len())));
                }
                let to_axis = |a: &AxisSection| ParameterAxis {
                    name: a.name.clone(),
                    lo: a.lo,
                    hi: a.hi,
                    injections: a.injections.clone(),
                };
                let fam = ParameterFamily::new(kernel.clone(), [to_axis(&axes[0]), to_axis(&axes[1])], *fs.resolution.get_ref())
                    .map_err(|e| err(f.span(), "family", e.to_string()))?;
                Some(fam)
            }
        };

        let out = raw.output.clone();
        let output = Output {
            dir: out.as_ref().and_then(|o| o.dir.clone()).unwrap_or_else(|| "out".into()),
            stem: out.as_ref().and_then(|o| o.stem.clone()).unwrap_or_else(|| "run".into()),
            formats: out.as_ref().and_then(|o| o.formats.clone()).unwrap_or_else(|| vec![ChartFormat::Csv, ChartFormat::Svg]),
            oracle: out.as_ref().and_then(|o| o.oracle).unwrap_or(true),
        };

        Ok(Config {
            kernel,
            weight,
            initial,
            family,
            numerics,
            segments_set,
            schedule,
            output,
            boundary: raw.boundary.unwrap_or_default(),
        })
    }
}

/// 1-based line of byte offset `pos`.
pub fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// `section.key` for the line containing `span`, if the line is a key/value
/// pair; the section header alone otherwise.
fn field_at(text: &str, span: Range<usize>) -> Option<String> {
    let start = span.start.min(text.len());
    let line_start = text[..start].rfind('\n').map_or(0, |i| i + 1);
    let line_end = text[start..].find('\n').map_or(text.len(), |i| start + i);
    let line = text[line_start..line_end].trim();
    let section = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').to_string());
    let key = line.split_once('=').map(|(k, _)| k.trim().to_string()).filter(|k| !k.is_empty() && !k.starts_with('['));
    match (section, key) {
        (Some(s), Some(k)) => Some(format!("{s}.{k}")),
        (None, Some(k)) => Some(k),
        (Some(s), None) => Some(s),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_scalar_config() {
        let c = Config::parse("[kernel]\nh = 1.0\nmatrix = 0.5\n").unwrap();
        assert_eq!(c.kernel.n(), 1);
        assert_eq!(c.schedule, (2..=8).collect::<Vec<_>>());
        assert_eq!(c.weight, DMatrix::identity(1, 1));
    }

    #[test]
    fn type_errors_name_field_and_line() {
        let e = Config::parse("[kernel]\nh = 1.0\nmatrix = 0.5\n\n[numerics]\nsegments = \"many\"\n").unwrap_err();
        assert_eq!(e.line, Some(6));
        assert_eq!(e.field.as_deref(), Some("numerics.segments"));
    }

    #[test]
    fn semantic_errors_name_field_and_line() {
        let e = Config::parse("[kernel]\nh = -1.0\nmatrix = 0.5\n").unwrap_err();
        assert_eq!((e.line, e.field.as_deref()), (Some(2), Some("kernel.h")));
        let e = Config::parse("[kernel]\nh = 1.0\nmatrix = 0.5\n[schedule]\nr = [3, 2]\n").unwrap_err();
        assert_eq!((e.line, e.field.as_deref()), (Some(5), Some("schedule.r")));
        let e = Config::parse("[kernel]\nh = 1.0\nmatrix = 0.5\n[numerics]\ndelta = 0.3\n").unwrap_err();
        assert_eq!(e.field.as_deref(), Some("numerics.delta"));
        assert!(e.to_string().starts_with("line 5, field `numerics.delta`"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let e = Config::parse("[kernel]\nh = 1.0\nmatrx = 0.5\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.message.contains("matrx"), "{}", e.message);
    }
}
