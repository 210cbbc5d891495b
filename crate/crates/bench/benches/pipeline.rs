use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use raterlens_core::agreement::{krippendorff_alpha, RatingTable};
use raterlens_core::cluster::{fit_density_clusters, ClusterParams, Points};
use raterlens_core::evalsweep::{average_precision, roc_auc};
use raterlens_core::rng::uniform;
use raterlens_core::simgen::{build_population, downsample_replication, generate_annotations};
use raterlens_core::wals::{fit_wals, matrix_from_records, WalsParams};
use raterlens_core::SimConfig;

fn alpha(c: &mut Criterion) {
    let mut group = c.benchmark_group("krippendorff_alpha");
    for units in [1_000u64, 25_000] {
        let mut table = RatingTable::new();
        for u in 0..units {
            for r in 0..5u64 {
                let v = i64::from(uniform(1, &[u, r]) < 0.3);
                table.insert(u.to_string(), r.to_string(), v).unwrap();
            }
        }
        group.bench_with_input(BenchmarkId::from_parameter(units), &table, |b, t| {
            b.iter(|| krippendorff_alpha(t).unwrap())
        });
    }
    group.finish();
}

fn wals(c: &mut Criterion) {
    let config = SimConfig {
        n_annotators: 200,
        n_items: 1000,
        replication: 200,
        ..SimConfig::default()
    };
    let (annotators, items) = build_population(&config).unwrap();
    let full = generate_annotations(&annotators, &items, 0);
    let mut group = c.benchmark_group("fit_wals");
    group.sample_size(20);
    for rep in [5usize, 50] {
        let records = downsample_replication(&full, rep, 0).unwrap();
        let (matrix, _) = matrix_from_records(&records).unwrap();
        let params = WalsParams {
            reg: 10.0,
            ..WalsParams::default()
        };
        group.bench_with_input(BenchmarkId::new("replication", rep), &matrix, |b, m| {
            b.iter(|| fit_wals(m, &params, 0).unwrap())
        });
    }
    group.finish();
}

fn hdbscan(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_density_clusters");
    group.sample_size(10);
    for n in [500u64, 2000] {
        let data: Vec<f64> = (0..n)
            .flat_map(|i| {
                let shift = if i % 2 == 0 { 0.0 } else { 6.0 };
                (0..3u64).map(move |k| shift + uniform(2, &[i, k]) * 2.0)
            })
            .collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| fit_density_clusters(Points::new(d, 3).unwrap(), &ClusterParams::default()).unwrap())
        });
    }
    group.finish();
}

fn ranking(c: &mut Criterion) {
    let n = 100_000u64;
    let truth: Vec<u8> = (0..n).map(|i| u8::from(uniform(3, &[i]) < 0.5)).collect();
    let scores: Vec<f64> = (0..n)
        .map(|i| f64::from(truth[i as usize]) * 0.3 + uniform(4, &[i]))
        .collect();
    c.bench_function("roc_auc_100k", |b| b.iter(|| roc_auc(&scores, &truth).unwrap()));
    c.bench_function("average_precision_100k", |b| {
        b.iter(|| average_precision(&scores, &truth).unwrap())
    });
}

criterion_group!(benches, alpha, wals, hdbscan, ranking);
criterion_main!(benches);
