use std::path::Path;

use criterion::{criterion_group, criterion_main, Criterion};
use ide_stability::config::Config;
use ide_stability::scan::{scan_region, Numerics};
use ide_stability::Execution;

fn scan(c: &mut Criterion) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example1.toml");
    let cfg = Config::parse(&std::fs::read_to_string(path).unwrap()).unwrap();
    let fam = cfg.family.unwrap().with_resolution([6, 6]).unwrap();
    let num = Numerics { segments: 30, ..cfg.numerics };
    let mut group = c.benchmark_group("example1_6x6");
    group.sample_size(10);
    for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let num = Numerics { execution, ..num.clone() };
        group.bench_function(name, |b| b.iter(|| scan_region(&fam, &cfg.schedule, &num, false).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, scan);
criterion_main!(benches);
