use std::fs;
use std::path::PathBuf;

use ide_stability::config::{Config, Initial};
use ide_stability::criterion::{instability_witness, stability_test, Outcome};
use ide_stability::fundamental::{fundamental_matrix, identity_residuals};
use ide_stability::kernel::grid_count;
use ide_stability::lyapunov::{lyapunov_collocate, property_residuals};
use ide_stability::scan::{
    dsubdivision_boundary, emit_chart, nesting_violations, oracle_agreement, render_svg, scan_region,
    write_boundary_csv, ChartFormat, ScanMeta, ScanResult,
};
use ide_stability::simulator::{decay_slope, random_initial, seminorm, trajectory};
use ide_stability::{Error, GridFunction};
use nalgebra::DMatrix;
use serde_json::json;

use crate::manifest::{sha256_hex, Manifest, Overrides, Versions};
use crate::{Command, Common, Format, ScanArgs};

/// `N` used by `lyapunov` and `test` when the config does not set one.
const DEFAULT_SEGMENTS: usize = 120;

/// Residual level above which `lyapunov --strict` fails.
const RESIDUAL_LIMIT: f64 = 1e-2;

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) | Failure::Io(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidKernel(_) | Error::InvalidWeight | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

/// Result of a completed run; `flag` is set for issues that `--strict` turns
/// into a failure.
struct Done {
    flag: Option<String>,
}

struct Ctx {
    cfg: Config,
    dir: PathBuf,
    stem: String,
    formats: Vec<Format>,
    outputs: Vec<PathBuf>,
}

impl Ctx {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        let path = self.dir.join(format!("{}_{name}", self.stem));
        fs::create_dir_all(&self.dir)
            .and_then(|_| fs::write(&path, bytes))
            .map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
        if self.wants(Format::Json) {
            let s = serde_json::to_string_pretty(value).expect("json value") + "\n";
            self.write(name, s.as_bytes())?;
        }
        Ok(())
    }

    fn segments(&self) -> usize {
        if self.cfg.segments_set {
            self.cfg.numerics.segments
        } else {
            DEFAULT_SEGMENTS
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn csv_bytes(g: &GridFunction) -> Vec<u8> {
    let mut buf = Vec::new();
    g.write_csv(&mut buf).expect("in-memory write");
    buf
}

pub fn run(command: Command) -> u8 {
    let (name, common, scan) = match &command {
        Command::Fundamental(c) => ("fundamental", c, None),
        Command::Simulate(c) => ("simulate", c, None),
        Command::Lyapunov(c) => ("lyapunov", c, None),
        Command::Test(c) => ("test", c, None),
        Command::Scan(s) => ("scan", &s.common, Some(s)),
        Command::Boundary(s) => ("boundary", &s.common, Some(s)),
    };
    let bytes = match fs::read(&common.config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return 2;
        }
    };
    let text = match String::from_utf8(bytes.clone()) {
        Ok(t) => t,
        Err(_) => {
            eprintln!("error: {}: not valid UTF-8", common.config.display());
            return 2;
        }
    };
    let mut cfg = match Config::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return 2;
        }
    };
    if let Err(msg) = apply_overrides(&mut cfg, common, scan) {
        eprintln!("error: {msg}");
        return 2;
    }
    let formats = if !common.format.is_empty() {
        common.format.clone()
    } else if scan.is_some() {
        let mut f = vec![Format::Json];
        for c in &cfg.output.formats {
            f.push(match c {
                ChartFormat::Csv => Format::Csv,
                ChartFormat::Svg => Format::Svg,
            });
        }
        f
    } else {
        vec![Format::Csv, Format::Json]
    };
    let mut ctx = Ctx {
        dir: common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir)),
        stem: cfg.output.stem.clone(),
        cfg,
        formats,
        outputs: Vec::new(),
    };
    let seed = ctx.cfg.numerics.seed;
    let result = match &command {
        Command::Fundamental(_) => fundamental(&mut ctx),
        Command::Simulate(_) => simulate(&mut ctx),
        Command::Lyapunov(_) => lyapunov(&mut ctx),
        Command::Test(_) => test(&mut ctx),
        Command::Scan(s) => scan_cmd(&mut ctx, !s.no_oracle),
        Command::Boundary(_) => boundary(&mut ctx),
    };
    let (code, status, message) = match &result {
        Ok(Done { flag: None }) => (0, "ok", None),
        Ok(Done { flag: Some(m) }) if common.strict => (1, "flagged", Some(m.clone())),
        Ok(Done { flag: Some(m) }) => (0, "ok", Some(m.clone())),
        Err(f) => (f.code(), "error", Some(f.message().to_string())),
    };
    if let Some(m) = &message {
        eprintln!("{}: {m}", if code == 0 { "warning" } else { "error" });
    }
    if code == 2 {
        return 2;
    }
    let manifest = Manifest {
        subcommand: name.to_string(),
        config: common.config.clone(),
        config_sha256: sha256_hex(&bytes),
        seed,
        overrides: Overrides {
            delta: common.delta,
            segments: common.segments,
            r_max: common.r_max,
            seed: common.seed,
            grid_n: scan.and_then(|s| s.grid_n),
            no_oracle: scan.is_some_and(|s| s.no_oracle),
            strict: common.strict,
        },
        versions: Versions::current(),
        status: status.to_string(),
        message,
        outputs: ctx.outputs.clone(),
    };
    match manifest.write(&ctx.dir, &ctx.stem) {
        Ok(p) => log::info!("manifest {}", p.display()),
        Err(e) => {
            eprintln!("error: writing manifest to {}: {e}", ctx.dir.display());
            return 1;
        }
    }
    code
}

fn apply_overrides(cfg: &mut Config, common: &Common, scan: Option<&ScanArgs>) -> Result<(), String> {
    let h = cfg.kernel.h();
    let n = &mut cfg.numerics;
    if let Some(d) = common.delta {
        if !(d > 0.0) || grid_count(h, d).is_none() {
            return Err(format!("--delta {d} must be positive and divide h = {h}"));
        }
        n.delta = d;
    }
    if let Some(s) = common.segments {
        n.segments = s;
        cfg.segments_set = true;
    }
    if let Some(r) = common.r_max {
        if r < 2 {
            return Err(format!("--r-max {r} must be at least 2"));
        }
        cfg.schedule = (2..=r).collect();
    }
    if let Some(s) = common.seed {
        n.seed = s;
    }
    n.validate(h).map_err(|e| e.to_string())?;
    if let Some(g) = scan.and_then(|s| s.grid_n) {
        let fam = cfg.family.take().ok_or("--grid-n needs a [family] section")?;
        cfg.family = Some(fam.with_resolution([g, g]).map_err(|e| format!("--grid-n {g}: {e}"))?);
    }
    Ok(())
}

fn fundamental(ctx: &mut Ctx) -> Result<Done, Failure> {
    let cfg = &ctx.cfg;
    let kernel = &cfg.kernel;
    let h = kernel.h();
    let consts = kernel.derive_constants(&cfg.weight)?;
    let horizon = cfg.numerics.horizon * h;
    let k = fundamental_matrix(kernel, &consts, horizon, cfg.numerics.delta)?;
    let ids = identity_residuals(kernel, &consts, &k)?;
    let slope = decay_slope(&k, h);
    let at_h = k.eval(h)?;
    println!("K0 = {:?}", rows(&consts.k0));
    println!("K(h) = {:?}", rows(&at_h));
    println!("|K(T)| = {:.6e} at T = {horizon}, growth rate {slope:.6}", k.values().last().unwrap().norm());
    println!(
        "identity residuals: left {:.3e}, right {:.3e}, jump {:.3e}",
        ids.left_form, ids.right_form, ids.initial_jump
    );
    let summary = json!({
        "k0": rows(&consts.k0),
        "k_at_h": rows(&at_h),
        "horizon": horizon,
        "step": k.step(),
        "final_norm": k.values().last().unwrap().norm(),
        "growth_rate": slope,
        "identity_residuals": {
            "left_form": ids.left_form,
            "right_form": ids.right_form,
            "initial_jump": ids.initial_jump,
        },
    });
    if ctx.wants(Format::Csv) {
        ctx.write("fundamental.csv", &csv_bytes(&k))?;
    }
    ctx.write_json("fundamental.json", &summary)?;
    Ok(Done { flag: None })
}

fn simulate(ctx: &mut Ctx) -> Result<Done, Failure> {
    let cfg = &ctx.cfg;
    let kernel = &cfg.kernel;
    let h = kernel.h();
    let step = cfg.numerics.delta;
    let m = grid_count(h, step).expect("validated");
    let phi = match &cfg.initial {
        Initial::Constant(v) => {
            GridFunction::new(-h, step, vec![DMatrix::from_column_slice(v.len(), 1, v.as_slice()); m + 1])?
        }
        Initial::Random { pieces, trial } => random_initial(kernel.n(), h, step, *pieces, cfg.numerics.seed, *trial)?,
    };
    let horizon = cfg.numerics.horizon * h;
    let x = trajectory(kernel, &phi, horizon, step)?;
    let slope = decay_slope(&x, h);
    let last = x.values().last().unwrap().norm();
    println!("|phi|_h = {:.6e}", seminorm(&phi));
    println!("|x(T)| = {last:.6e} at T = {horizon}, growth rate {slope:.6}");
    let summary = json!({
        "initial_seminorm": seminorm(&phi),
        "horizon": horizon,
        "step": step,
        "final_norm": last,
        "growth_rate": slope,
    });
    if ctx.wants(Format::Csv) {
        ctx.write("simulate.csv", &csv_bytes(&x))?;
    }
    ctx.write_json("simulate.json", &summary)?;
    Ok(Done { flag: None })
}

fn lyapunov(ctx: &mut Ctx) -> Result<Done, Failure> {
    let segments = ctx.segments();
    let cfg = &ctx.cfg;
    let kernel = &cfg.kernel;
    let h = kernel.h();
    let consts = kernel.derive_constants(&cfg.weight)?;
    let table = lyapunov_collocate(kernel, &consts, segments)?;
    let k = fundamental_matrix(kernel, &consts, 2.0 * h, table.step() / 4.0)?;
    let res = property_residuals(&table, kernel, &k)?;
    println!("U(0) = {:?}", rows(&table.node(0)));
    println!("condition estimate {:.3e}", table.report().condition.unwrap_or(f64::NAN));
    println!("largest property residual {:.3e}", res.max());
    let summary = json!({
        "segments": segments,
        "u0": rows(&table.node(0)),
        "report": table.report(),
        "residuals": res,
    });
    if ctx.wants(Format::Csv) {
        let mut buf = Vec::new();
        table.write_csv(&mut buf).expect("in-memory write");
        ctx.write("lyapunov.csv", &buf)?;
    }
    ctx.write_json("lyapunov.json", &summary)?;
    let flag = (res.max() > RESIDUAL_LIMIT).then(|| format!("property residual {:.3e} above {RESIDUAL_LIMIT}", res.max()));
    Ok(Done { flag })
}

fn test(ctx: &mut Ctx) -> Result<Done, Failure> {
    let segments = ctx.segments();
    let cfg = &ctx.cfg;
    let kernel = &cfg.kernel;
    let h = kernel.h();
    let num = &cfg.numerics;
    let consts = kernel.derive_constants(&cfg.weight)?;
    let (margin, at) = kernel.imaginary_axis_margin(num.omega_max, num.omega_samples)?;
    let table = lyapunov_collocate(kernel, &consts, segments)?;
    let mut verdict = stability_test(&table, &cfg.schedule, num.tolerances)?;
    if margin <= num.margin_tol {
        verdict.outcome = Outcome::Inconclusive { reason: format!("root on the imaginary axis near ω = {at:.6}") };
    }
    let witness = match &verdict.outcome {
        Outcome::CertifiedUnstable { .. } => {
            let k = fundamental_matrix(kernel, &consts, 2.0 * h, table.step())?;
            match instability_witness(&table, kernel, &k, &verdict) {
                Ok(w) => Some(w),
                Err(e) => {
                    log::warn!("no witness function: {e}");
                    None
                }
            }
        }
        _ => None,
    };
    for rec in &verdict.records {
        println!("r = {:2}  min eigenvalue {:+.6e}", rec.r, rec.min_eigenvalue);
    }
    match &verdict.outcome {
        Outcome::ConsistentWithStability { r_max } => {
            println!("verdict: consistent with stability (K_r positive definite for r <= {r_max}; not a proof)")
        }
        Outcome::CertifiedUnstable { r, eigenvalue, .. } => {
            println!("verdict: unstable (K_{r} has eigenvalue {eigenvalue:.6e})")
        }
        Outcome::Inconclusive { reason } => println!("verdict: inconclusive ({reason})"),
    }
    if let Some(w) = &witness {
        println!("witness: gamma' K_r gamma = {:.6e}, v1(psi) = {:.6e}", w.quadratic, w.quadrature);
    }
    let summary = json!({
        "segments": segments,
        "schedule": cfg.schedule,
        "tolerances": num.tolerances,
        "imaginary_axis_margin": { "value": margin, "omega": at },
        "verdict": verdict,
        "witness": witness,
    });
    let flag = match &verdict.outcome {
        Outcome::Inconclusive { reason } => Some(format!("inconclusive: {reason}")),
        _ => None,
    };
    if ctx.wants(Format::Csv) {
        let mut s = String::from("r,min_eigenvalue,norm,asymmetry\n");
        for rec in &verdict.records {
            s.push_str(&format!("{},{:.12e},{:.12e},{:.12e}\n", rec.r, rec.min_eigenvalue, rec.norm, rec.asymmetry));
        }
        ctx.write("test.csv", s.as_bytes())?;
    }
    ctx.write_json("test.json", &summary)?;
    Ok(Done { flag })
}

fn chart_formats(ctx: &Ctx) -> Vec<ChartFormat> {
    let mut f = Vec::new();
    if ctx.wants(Format::Csv) {
        f.push(ChartFormat::Csv);
    }
    if ctx.wants(Format::Svg) {
        f.push(ChartFormat::Svg);
    }
    f
}

fn family(ctx: &Ctx) -> Result<&ide_stability::scan::ParameterFamily, Failure> {
    ctx.cfg.family.as_ref().ok_or_else(|| Failure::Config("config has no [family] section".into()))
}

fn scan_cmd(ctx: &mut Ctx, with_oracle: bool) -> Result<Done, Failure> {
    let with_oracle = with_oracle && ctx.cfg.output.oracle;
    let fam = family(ctx)?;
    let mut result = scan_region(fam, &ctx.cfg.schedule, &ctx.cfg.numerics, with_oracle)?;
    result.boundary = dsubdivision_boundary(fam, &ctx.cfg.boundary)?;
    let count = |label: &str| result.points.iter().filter(|p| p.outcome.label() == label).count();
    let (stable, unstable, inconclusive) = (count("stable"), count("unstable"), count("inconclusive"));
    println!("{} points: {stable} stable, {unstable} unstable, {inconclusive} inconclusive", result.points.len());
    let agreement = with_oracle.then(|| oracle_agreement(&result, 10.0));
    if let Some((a, t)) = agreement {
        println!("oracle agreement on clear points: {a}/{t}");
    }
    println!("{} boundary curves", result.boundary.curves.len());
    let summary = json!({
        "meta": result.meta,
        "counts": { "stable": stable, "unstable": unstable, "inconclusive": inconclusive },
        "oracle_agreement": agreement.map(|(a, t)| json!({ "agree": a, "compared": t })),
        "nesting_violations": nesting_violations(&result),
        "boundary_curves": result.boundary.curves.len(),
        "newton_failures": result.boundary.failures,
    });
    let formats = chart_formats(ctx);
    if !formats.is_empty() {
        let written = emit_chart(&result, &ctx.dir, &ctx.stem, &formats)?;
        ctx.outputs.extend(written);
    }
    ctx.write_json("scan.json", &summary)?;
    let flag = (inconclusive > 0).then(|| format!("{inconclusive} inconclusive points"));
    Ok(Done { flag })
}

fn boundary(ctx: &mut Ctx) -> Result<Done, Failure> {
    let fam = family(ctx)?;
    let b = dsubdivision_boundary(fam, &ctx.cfg.boundary)?;
    println!("{} boundary curves, {} Newton seeds without convergence", b.curves.len(), b.failures);
    let axes = fam.axes();
    let result = ScanResult {
        points: Vec::new(),
        boundary: b,
        meta: ScanMeta {
            axes: [axes[0].name.clone(), axes[1].name.clone()],
            ranges: [[axes[0].lo, axes[0].hi], [axes[1].lo, axes[1].hi]],
            resolution: fam.resolution(),
            schedule: Vec::new(),
            numerics: ctx.cfg.numerics.clone(),
        },
    };
    if ctx.wants(Format::Csv) {
        let mut buf = Vec::new();
        write_boundary_csv(&result.boundary, &mut buf).expect("in-memory write");
        ctx.write("boundary.csv", &buf)?;
    }
    if ctx.wants(Format::Svg) {
        ctx.write("boundary.svg", render_svg(&result, None).as_bytes())?;
    }
    ctx.write_json("boundary.json", &json!({ "curves": result.boundary.curves, "failures": result.boundary.failures }))?;
    Ok(Done { flag: None })
}
