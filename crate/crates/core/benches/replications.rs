use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lbsim::sweep::{replicate, run_sequential};
use lbsim::{PolicySpec, SimConfig};

fn replications(c: &mut Criterion) {
    let mut group = c.benchmark_group("replications");
    group.sample_size(10);
    for policy in [PolicySpec::Jsqd { d: 2, replacement: false }, PolicySpec::Jiq] {
        let base = SimConfig::new(200, 180.0, policy.clone(), 200.0, 1);
        let configs = replicate(&base, 8);
        let label = policy.label();
        group.bench_with_input(BenchmarkId::new("sequential", &label), &configs, |b, cfgs| {
            b.iter(|| run_sequential(cfgs))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("parallel", &label), &configs, |b, cfgs| {
            b.iter(|| lbsim::sweep::run_parallel(cfgs, None))
        });
    }
    group.finish();
}

criterion_group!(benches, replications);
criterion_main!(benches);
