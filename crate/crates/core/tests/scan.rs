use std::path::Path;

use ide_stability::config::Config;
use ide_stability::criterion::Outcome;
use ide_stability::scan::{
    dsubdivision_boundary, exclusion_equivalence, render_svg, scan_region, write_points_csv, BoundarySettings,
    Numerics, ScanResult,
};
use ide_stability::simulator::{stability_oracle, OracleLabel, OracleSettings};
use ide_stability::{Execution, KernelSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Config {
    Config::parse(&std::fs::read_to_string(configs().join(name)).unwrap()).unwrap()
}

/// Example 1 on a coarse grid with cheap numerics.
fn small(res: usize) -> (Config, Numerics) {
    let mut cfg = load("example1.toml");
    let fam = cfg.family.take().unwrap().with_resolution([res, res]).unwrap();
    cfg.family = Some(fam);
    let num = Numerics { segments: 24, oracle_trials: 2, delta: 2e-2, ..cfg.numerics.clone() };
    (cfg, num)
}

fn strip(r: &ScanResult) -> Vec<String> {
    r.points.iter().map(|p| format!("{:?} {:?} {:?} {:?} {:?}", p.index, p.params, p.outcome, p.records, p.oracle)).collect()
}

#[test]
fn every_shipped_config_parses() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = std::fs::read_to_string(&path).unwrap();
            Config::parse(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 6);
}

#[test]
fn latched_and_per_r_verdicts_agree() {
    let (cfg, num) = small(6);
    let fam = cfg.family.as_ref().unwrap();
    let latched = scan_region(fam, &cfg.schedule, &num, false).unwrap();
    let independent = scan_region(fam, &cfg.schedule, &Numerics { latch: false, ..num }, false).unwrap();
    assert_eq!(exclusion_equivalence(&latched, &independent), 0);
}

#[test]
fn sequential_and_parallel_scans_match() {
    let (cfg, num) = small(4);
    let fam = cfg.family.as_ref().unwrap();
    let a = scan_region(fam, &cfg.schedule, &Numerics { execution: Execution::Sequential, ..num.clone() }, true).unwrap();
    let b = scan_region(fam, &cfg.schedule, &Numerics { execution: Execution::Parallel, ..num }, true).unwrap();
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn origin_of_the_first_plane_is_stable() {
    let (cfg, num) = small(3);
    let fam = cfg.family.as_ref().unwrap();
    let res = scan_region(fam, &cfg.schedule, &num, true).unwrap();
    let at_zero = res.points.iter().find(|p| p.params == [0.0, 0.0]).expect("grid contains the origin");
    assert!(matches!(at_zero.outcome, Outcome::ConsistentWithStability { .. }), "{:?}", at_zero.outcome);
    assert_eq!(at_zero.oracle, Some(OracleLabel::Stable));
}

#[test]
fn csv_has_one_row_per_point() {
    let (cfg, num) = small(2);
    let fam = cfg.family.as_ref().unwrap();
    let res = scan_region(fam, &cfg.schedule, &num, false).unwrap();
    let mut buf = Vec::new();
    write_points_csv(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("i1,i2,p1,p2,verdict,exclusion_r"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4);
    let cols = header.split(',').count();
    assert!(rows.iter().all(|r| r.split(',').count() == cols));
}

#[test]
fn chart_without_boundary_has_no_polyline() {
    let (cfg, num) = small(2);
    let res = scan_region(cfg.family.as_ref().unwrap(), &cfg.schedule, &num, false).unwrap();
    assert!(res.boundary.curves.is_empty());
    let svg = render_svg(&res, None);
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    assert!(!svg.contains("<polyline"));
}

#[test]
fn boundary_points_are_roots_of_the_characteristic_function() {
    let cfg = load("example2.toml");
    let fam = cfg.family.as_ref().unwrap();
    let settings = BoundarySettings { omega_samples: 200, static_resolution: 60, ..cfg.boundary };
    let b = dsubdivision_boundary(fam, &settings).unwrap();
    assert!(!b.curves.is_empty());
    let mut checked = 0;
    for p in b.curves.iter().flatten() {
        let k = fam.kernel_at(p.p1, p.p2);
        let scale = 1.0 + k.moment0().norm().powi(k.n() as i32);
        let d = k.char_det(Complex64::new(0.0, p.omega)).norm();
        assert!(d < 1e-2 * scale, "det H({}i) = {d} at ({}, {})", p.omega, p.p1, p.p2);
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn oracle_labels_the_scalar_family() {
    let settings = OracleSettings { trials: 3, step: 1e-2, ..OracleSettings::default() };
    for (c, expect) in [
        (-5.0, OracleLabel::Stable),
        (-1.0, OracleLabel::Stable),
        (0.5, OracleLabel::Stable),
        (0.9, OracleLabel::Stable),
        (1.1, OracleLabel::Unstable),
        (1.5, OracleLabel::Unstable),
        (3.0, OracleLabel::Unstable),
    ] {
        let k = KernelSpec::constant(1.0, DMatrix::from_element(1, 1, c)).unwrap();
        assert_eq!(stability_oracle(&k, &settings).unwrap().label, expect, "c = {c}");
    }
}
