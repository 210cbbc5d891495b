use std::collections::BTreeMap;

use raterlens_core::evalsweep::{self, ProxyKind};
use raterlens_core::io;
use raterlens_core::simgen::{build_population, downsample_replication, generate_annotations};
use raterlens_core::{PointKind, RunConfig};

const CONFIG: &str = r#"
seed = 21
[sim]
n_annotators = 40
n_items = 240
replication = 6
[wals]
reg = 10.0
[cluster]
min_cluster_size = 10
[sweep]
replication_sizes = [12, 6]
seeds = [3]
"#;

#[test]
fn simulated_records_survive_a_csv_round_trip() {
    let cfg = RunConfig::from_toml(CONFIG).unwrap();
    let sim = cfg.sim_config();
    let (annotators, items) = build_population(&sim).unwrap();
    let full = generate_annotations(&annotators, &items, sim.seed);
    let records = downsample_replication(&full, 6, sim.seed).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("annotations.csv");
    io::write_annotations(&path, &records).unwrap();
    assert_eq!(io::read_annotations(&path).unwrap(), records);

    let pop = dir.path().join("population.csv");
    io::write_population(&pop, &annotators, &items).unwrap();
    let truth = io::read_true_labels(&pop).unwrap();
    assert_eq!(truth.len(), 240);
    assert_eq!(truth.values().filter(|&&t| t == 1).count(), 120);
}

#[test]
fn pipeline_labels_every_item_and_embeddings_round_trip() {
    let cfg = RunConfig::from_toml(CONFIG).unwrap();
    let sim = cfg.sim_config();
    let (annotators, items) = build_population(&sim).unwrap();
    let records = downsample_replication(&generate_annotations(&annotators, &items, sim.seed), 6, sim.seed).unwrap();

    let outcome = evalsweep::run_pipeline(&records, &cfg.pipeline(), cfg.seed).unwrap();
    assert_eq!(outcome.labels.len(), 240);
    assert!(outcome.points.kinds.iter().all(|&k| k == PointKind::Item));
    assert!(outcome.labels.values().all(|p| (0.0..=1.0).contains(&p.score) && p.label <= 1));

    let scores = evalsweep::proxy_scores(&records, ProxyKind::Cluster, Some(&outcome.labels)).unwrap();
    let majority = evalsweep::proxy_scores(&records, ProxyKind::Majority, None).unwrap();
    assert_eq!(scores.keys().collect::<Vec<_>>(), majority.keys().collect::<Vec<_>>());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clusters.csv");
    io::write_clusters(&path, &outcome).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 241);
}

#[test]
fn sweep_is_a_pure_function_of_its_configs() {
    let cfg = RunConfig::from_toml(CONFIG).unwrap();
    let a = evalsweep::run_replication_sweep(&cfg.sim_config(), &cfg.sweep_config()).unwrap();
    let b = evalsweep::run_replication_sweep(&cfg.sim_config(), &cfg.sweep_config()).unwrap();
    assert_eq!(a, b);
    let order: Vec<(u64, u32, &str)> = a.rows.iter().map(|r| (r.seed, r.replication, r.proxy.as_str())).collect();
    assert_eq!(order, vec![(3, 12, "cluster"), (3, 12, "majority"), (3, 6, "cluster"), (3, 6, "majority")]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep_report.csv");
    io::write_sweep_report(&path, &a).unwrap();
    let back = io::read_sweep_report(&path).unwrap();
    let by_key: BTreeMap<(u32, String), f64> = back.iter().map(|r| ((r.replication, r.proxy.clone()), r.auc)).collect();
    for r in &a.rows {
        if let Some(auc) = r.auc {
            assert_eq!(by_key[&(r.replication, r.proxy.as_str().to_string())], auc);
        }
    }
}
