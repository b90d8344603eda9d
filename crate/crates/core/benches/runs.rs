use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cdts::channel::{table1_raw, validate_scenario};
use cdts::controller::run;
use cdts::detect::DetectorConfig;
use cdts::parallel::{map_indexed, map_indexed_sequential};
use cdts::policy::{PolicyConfig, PolicyKind};

fn batch_of_runs(c: &mut Criterion) {
    let scenario = validate_scenario(&table1_raw()).unwrap();
    let detector = DetectorConfig::new(50, 0.1, 100).unwrap();
    let mut group = c.benchmark_group("table1_runs");
    group.sample_size(10);
    for kind in [PolicyKind::Ts, PolicyKind::Cots] {
        let policy = PolicyConfig::new(kind);
        let label = format!("{kind:?}");
        let n_runs = 32;
        group.bench_with_input(BenchmarkId::new("sequential", &label), &n_runs, |b, &n| {
            b.iter(|| {
                map_indexed_sequential(n, |k| run(&scenario, &policy, Some(&detector), k as u64).unwrap())
            })
        });
        group.bench_with_input(BenchmarkId::new("parallel", &label), &n_runs, |b, &n| {
            b.iter(|| map_indexed(n, |k| run(&scenario, &policy, Some(&detector), k as u64).unwrap()))
        });
    }
    group.finish();
}

fn single_slot_policies(c: &mut Criterion) {
    use cdts::policy::{cots_sample, ts_select, ArmStats, CotsFallback};
    use rand::SeedableRng;
    let scenario = validate_scenario(&table1_raw()).unwrap();
    let fresh = ArmStats::new(8);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    c.bench_function("ts_select_fresh", |b| {
        b.iter(|| ts_select(black_box(&fresh), scenario.rates(), &mut rng))
    });
    c.bench_function("cots_sample_fresh", |b| {
        b.iter(|| cots_sample(black_box(&fresh), 1000, CotsFallback::default(), &mut rng))
    });
}

criterion_group!(benches, batch_of_runs, single_slot_policies);
criterion_main!(benches);
