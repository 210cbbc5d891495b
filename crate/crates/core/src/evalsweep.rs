//! Proxy-versus-truth evaluation and the replication-size sweep.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{derive_binary_labels, fit_density_clusters, ClusterParams, ClusterResult, ClusterSpace, Points, ProxyLabel};
use crate::error::{Error, Result};
use crate::projection::{preprocess, project_2d, projected_set, EmbeddingSet, PointKind, PreprocessMode, ProjectionParams};
use crate::rng::{self, derive_seed};
use crate::simgen::{build_population, downsample_replication, generate_annotations, AnnotationRecord, SimConfig};
use crate::wals::{fit_wals, matrix_from_records, WalsParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyKind {
    Majority,
    Cluster,
}

impl ProxyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProxyKind::Majority => "majority",
            ProxyKind::Cluster => "cluster",
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProxyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(ProxyKind::Majority),
            "cluster" => Ok(ProxyKind::Cluster),
            other => Err(Error::InvalidConfig(format!("unknown proxy `{other}`"))),
        }
    }
}

/// Fraction of each item's annotations equal to 1.
pub fn majority_scores(records: &[AnnotationRecord]) -> Result<BTreeMap<u32, f64>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no annotation records".into()));
    }
    let mut acc: BTreeMap<u32, (u32, u32)> = BTreeMap::new();
    for r in records {
        let e = acc.entry(r.item_id).or_default();
        e.0 += u32::from(r.value);
        e.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(id, (ones, n))| (id, f64::from(ones) / f64::from(n)))
        .collect())
}

/// Ranking score per item for the requested proxy. The cluster proxy needs
/// the labels produced by `derive_binary_labels`.
pub fn proxy_scores(
    records: &[AnnotationRecord],
    kind: ProxyKind,
    cluster_labels: Option<&BTreeMap<u32, ProxyLabel>>,
) -> Result<BTreeMap<u32, f64>> {
    let majority = majority_scores(records)?;
    match kind {
        ProxyKind::Majority => Ok(majority),
        ProxyKind::Cluster => {
            let labels = cluster_labels
                .ok_or_else(|| Error::InvalidConfig("cluster proxy requires cluster labels".into()))?;
            majority
                .keys()
                .map(|id| {
                    labels
                        .get(id)
                        .map(|l| (*id, l.score))
                        .ok_or_else(|| Error::InputMismatch(format!("item {id} has no cluster label")))
                })
                .collect()
        }
    }
}

fn class_counts(truth: &[u8], scores: &[f64]) -> Result<(usize, usize)> {
    if truth.len() != scores.len() {
        return Err(Error::InputMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let pos = truth.iter().filter(|&&t| t == 1).count();
    Ok((pos, truth.len() - pos))
}

/// Indices sorted by descending score, ties in index order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Area under the ROC curve by midranks; tied pairs earn half credit.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(truth, scores)?;
    if pos == 0 || neg == 0 {
        return Err(Error::undefined("auc", "truth contains a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| truth[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveData {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

/// Cumulative (true positive, false positive) counts at each distinct
/// threshold, highest first.
fn threshold_counts(scores: &[f64], truth: &[u8]) -> Vec<(usize, usize)> {
    let order = descending(scores);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if truth[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(k + 1).is_none_or(|&next| scores[next] != scores[i]);
        if last_of_tie {
            out.push((tp, fp));
        }
    }
    out
}

/// ROC points (false positive rate, true positive rate) from (0, 0) through
/// every distinct threshold.
pub fn roc_curve(scores: &[f64], truth: &[u8]) -> Result<CurveData> {
    let area = roc_auc(scores, truth)?;
    let (pos, neg) = class_counts(truth, scores)?;
    let mut points = vec![(0.0, 0.0)];
    points.extend(
        threshold_counts(scores, truth)
            .into_iter()
            .map(|(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)),
    );
    Ok(CurveData {
        kind: CurveKind::Roc,
        points,
        area,
    })
}

/// Precision-recall points at every distinct threshold; the area is average
/// precision.
pub fn pr_curve(scores: &[f64], truth: &[u8]) -> Result<CurveData> {
    let (pos, _) = class_counts(truth, scores)?;
    if pos == 0 {
        return Err(Error::undefined("average_precision", "truth has no positives"));
    }
    let mut points = Vec::new();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in threshold_counts(scores, truth) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(CurveData {
        kind: CurveKind::Pr,
        points,
        area,
    })
}

pub fn average_precision(scores: &[f64], truth: &[u8]) -> Result<f64> {
    pr_curve(scores, truth).map(|c| c.area)
}

/// Everything after annotation records: factorization, preprocessing,
/// optional projection and clustering.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineParams {
    pub wals: WalsParams,
    pub preprocess: PreprocessMode,
    pub projection: ProjectionParams,
    pub cluster: ClusterParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    /// The points that were clustered, in cluster space.
    pub points: EmbeddingSet,
    pub result: ClusterResult,
    pub labels: BTreeMap<u32, ProxyLabel>,
}

/// Preprocess an embedding, optionally project it, cluster it and derive
/// proxy labels for its items.
pub fn cluster_embedding(
    embedding: &EmbeddingSet,
    records: &[AnnotationRecord],
    preprocess_mode: PreprocessMode,
    projection: &ProjectionParams,
    params: &ClusterParams,
) -> Result<ClusterOutcome> {
    let selected = if params.include_annotators {
        embedding.clone()
    } else {
        embedding.select(PointKind::Item)
    };
    let mut points = preprocess(&selected, preprocess_mode)?;
    if params.cluster_space == ClusterSpace::Projection {
        let xy = project_2d(&points, projection)?;
        points = projected_set(&points, &xy);
    }
    let result = fit_density_clusters(Points::new(&points.data, points.dim)?, params)?;
    let (item_labels, item_ids): (Vec<i32>, Vec<u32>) = points
        .kinds
        .iter()
        .zip(&points.ids)
        .zip(&result.labels)
        .filter(|((k, _), _)| **k == PointKind::Item)
        .map(|((_, id), l)| (*l, *id))
        .unzip();
    let labels = derive_binary_labels(&item_labels, &item_ids, records)?;
    Ok(ClusterOutcome { points, result, labels })
}

/// Fit the factor model on the records and cluster the result.
pub fn run_pipeline(records: &[AnnotationRecord], params: &PipelineParams, seed: u64) -> Result<ClusterOutcome> {
    let (matrix, index) = matrix_from_records(records)?;
    let model = fit_wals(&matrix, &params.wals, derive_seed(seed, "wals"))?;
    let embedding = EmbeddingSet::from_factors(&model, &index);
    let projection = ProjectionParams {
        seed: derive_seed(seed, "projection"),
        ..params.projection
    };
    cluster_embedding(&embedding, records, params.preprocess, &projection, &params.cluster)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub replication_sizes: Vec<u32>,
    pub proxies: Vec<ProxyKind>,
    /// Seeds as reported. Each is combined with `base_seed` before use.
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub base_seed: u64,
    #[serde(skip)]
    pub pipeline: PipelineParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            replication_sizes: vec![200, 100, 50, 20, 15, 10, 5],
            proxies: vec![ProxyKind::Majority, ProxyKind::Cluster],
            seeds: vec![0],
            base_seed: 0,
            pipeline: PipelineParams::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replication_sizes.is_empty() || self.proxies.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "sweep needs replication sizes, proxies and seeds".into(),
            ));
        }
        if self.replication_sizes.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidConfig(
                "replication sizes must be strictly decreasing".into(),
            ));
        }
        if self.replication_sizes.contains(&0) {
            return Err(Error::InvalidConfig("replication sizes must be positive".into()));
        }
        self.pipeline.wals.validate()?;
        self.pipeline.cluster.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub replication: u32,
    pub proxy: ProxyKind,
    pub auc: Option<f64>,
    pub average_precision: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// PR curve per (seed, replication, proxy) for successful cells.
    pub curves: BTreeMap<(u64, u32, ProxyKind), CurveData>,
}

impl SweepReport {
    pub fn row(&self, seed: u64, replication: u32, proxy: ProxyKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.replication == replication && r.proxy == proxy)
    }
}

type CellOutput = (SweepRow, Option<CurveData>);

fn evaluate(
    scores: &BTreeMap<u32, f64>,
    truth: &BTreeMap<u32, u8>,
) -> Result<(f64, CurveData)> {
    let (s, t): (Vec<f64>, Vec<u8>) = scores
        .iter()
        .map(|(id, s)| {
            truth
                .get(id)
                .map(|t| (*s, *t))
                .ok_or_else(|| Error::InputMismatch(format!("item {id} has no true label")))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok((roc_auc(&s, &t)?, pr_curve(&s, &t)?))
}

fn run_cell(
    full: &[AnnotationRecord],
    truth: &BTreeMap<u32, u8>,
    seed: u64,
    effective_seed: u64,
    replication: u32,
    sweep: &SweepConfig,
) -> Vec<CellOutput> {
    let failed = |proxy, reason: &Error| {
        (
            SweepRow {
                seed,
                replication,
                proxy,
                auc: None,
                average_precision: None,
                status: format!("failed: {reason}"),
            },
            None,
        )
    };
    let records = match downsample_replication(full, replication as usize, derive_seed(effective_seed, "sweep")) {
        Ok(r) => r,
        Err(e) => return sweep.proxies.iter().map(|&p| failed(p, &e)).collect(),
    };
    let clusters = sweep
        .proxies
        .contains(&ProxyKind::Cluster)
        .then(|| run_pipeline(&records, &sweep.pipeline, effective_seed));
    sweep
        .proxies
        .iter()
        .map(|&proxy| {
            let labels = match (&clusters, proxy) {
                (Some(Err(e)), ProxyKind::Cluster) => return failed(proxy, e),
                (Some(Ok(c)), _) => Some(&c.labels),
                _ => None,
            };
            match proxy_scores(&records, proxy, labels).and_then(|s| evaluate(&s, truth)) {
                Ok((auc, curve)) => (
                    SweepRow {
                        seed,
                        replication,
                        proxy,
                        auc: Some(auc),
                        average_precision: Some(curve.area),
                        status: "ok".into(),
                    },
                    Some(curve),
                ),
                Err(e) => failed(proxy, &e),
            }
        })
        .collect()
}

/// Run every (seed, replication, proxy) cell. Full data is generated once
/// per seed and downsampled to each replication size. A failing cell is
/// recorded and the sweep continues.
pub fn run_replication_sweep(sim: &SimConfig, sweep: &SweepConfig) -> Result<SweepReport> {
    sweep.validate()?;
    let per_seed: Vec<Vec<CellOutput>> = sweep
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<CellOutput>> {
            let effective = rng::key(sweep.base_seed, &[seed]);
            let config = SimConfig {
                seed: effective,
                replication: sim.n_annotators,
                ..sim.clone()
            };
            config.validate()?;
            let (annotators, items) = build_population(&config)?;
            let full = generate_annotations(&annotators, &items, effective);
            let truth: BTreeMap<u32, u8> = items.iter().map(|i| (i.id, i.true_label)).collect();
            Ok(sweep
                .replication_sizes
                .par_iter()
                .flat_map_iter(|&rep| run_cell(&full, &truth, seed, effective, rep, sweep))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut report = SweepReport::default();
    for (row, curve) in per_seed.into_iter().flatten() {
        if let Some(c) = curve {
            report.curves.insert((row.seed, row.replication, row.proxy), c);
        }
        report.rows.push(row);
    }
    report.rows.sort_by(|a, b| {
        a.seed
            .cmp(&b.seed)
            .then(b.replication.cmp(&a.replication))
            .then(a.proxy.as_str().cmp(b.proxy.as_str()))
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Fraction of (positive, negative) pairs ordered correctly, ties half.
    fn pair_auc(s: &[f64], t: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if t[i] == 1 && t[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[1.0, 0.0, 1.0], &[1, 0, 1]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[1, 0, 1, 0]).unwrap(), 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::Undefined { .. })));
        assert!(roc_auc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn auc_matches_pair_counting_and_trapezoid() {
        let mut r = rng::stream(5, &[]);
        for _ in 0..100 {
            let n = r.random_range(2..40);
            let s: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(0..6u8)) / 5.0).collect();
            let mut t: Vec<u8> = (0..n).map(|_| r.random_range(0..2u8)).collect();
            t[0] = 1;
            t[1] = 0;
            let auc = roc_auc(&s, &t).unwrap();
            assert!((auc - pair_auc(&s, &t)).abs() < 1e-12);
            let curve = roc_curve(&s, &t).unwrap();
            let trap: f64 = curve
                .points
                .windows(2)
                .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
                .sum();
            assert!((auc - trap).abs() < 1e-12);
            assert!(curve.points.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }

    #[test]
    fn auc_transform_properties() {
        let mut r = rng::stream(6, &[]);
        let s: Vec<f64> = (0..200).map(|_| r.random::<f64>()).collect();
        let t: Vec<u8> = (0..200).map(|i| u8::from(i % 3 == 0)).collect();
        let auc = roc_auc(&s, &t).unwrap();
        let cubed: Vec<f64> = s.iter().map(|x| x.powi(3) * 7.0 - 2.0).collect();
        assert!((roc_auc(&cubed, &t).unwrap() - auc).abs() < 1e-12);
        let flipped: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
        assert!((roc_auc(&flipped, &t).unwrap() - (1.0 - auc)).abs() < 1e-12);
    }

    #[test]
    fn pr_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[1, 1, 0]).unwrap(), 1.0);
        let ap = average_precision(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert!(matches!(average_precision(&[0.5, 0.4], &[0, 0]), Err(Error::Undefined { .. })));
        let c = pr_curve(&[0.9, 0.8, 0.3], &[1, 0, 1]).unwrap();
        assert_eq!(c.points, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
    }

    #[test]
    fn random_scores_give_prevalence() {
        let n = 500;
        let t: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        let prevalence = 0.2;
        let mut r = rng::stream(7, &[]);
        let aps: Vec<f64> = (0..200)
            .map(|_| {
                let s: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
                average_precision(&s, &t).unwrap()
            })
            .collect();
        let mean = aps.iter().sum::<f64>() / aps.len() as f64;
        let sd = (aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aps.len() - 1) as f64).sqrt();
        assert!((mean - prevalence).abs() < 3.0 * sd / (aps.len() as f64).sqrt() + 0.01, "{mean}");
        let perfect: Vec<f64> = t.iter().map(|&x| f64::from(x)).collect();
        assert!(average_precision(&perfect, &t).unwrap() >= prevalence);
    }

    fn rec(item_id: u32, annotator_id: u32, value: u8) -> AnnotationRecord {
        AnnotationRecord {
            item_id,
            annotator_id,
            value,
        }
    }

    #[test]
    fn proxy_score_examples() {
        let records: Vec<_> = [1, 1, 0, 0, 1].iter().enumerate().map(|(a, &v)| rec(7, a as u32, v)).collect();
        assert_eq!(proxy_scores(&records, ProxyKind::Majority, None).unwrap()[&7], 0.6);
        let labels = BTreeMap::from([(7, ProxyLabel { cluster: 0, label: 1, score: 0.9 })]);
        assert_eq!(proxy_scores(&records, ProxyKind::Cluster, Some(&labels)).unwrap()[&7], 0.9);
        assert!(proxy_scores(&[], ProxyKind::Majority, None).is_err());
        assert!(proxy_scores(&records, ProxyKind::Cluster, None).is_err());
    }

    fn small_sweep(sizes: Vec<u32>) -> (SimConfig, SweepConfig) {
        let sim = SimConfig {
            n_annotators: 40,
            n_items: 120,
            ..SimConfig::default()
        };
        let mut sweep = SweepConfig {
            replication_sizes: sizes,
            seeds: vec![3],
            ..SweepConfig::default()
        };
        sweep.pipeline.cluster.min_cluster_size = 10;
        (sim, sweep)
    }

    #[test]
    fn sweep_grid_shape_and_determinism() {
        let (sim, sweep) = small_sweep(vec![40, 5]);
        let a = run_replication_sweep(&sim, &sweep).unwrap();
        assert_eq!(a.rows.len(), 4);
        assert!(a.rows.iter().all(|r| r.status == "ok"), "{:?}", a.rows);
        assert_eq!(a.rows[0].replication, 40);
        assert_eq!(a.rows[0].proxy, ProxyKind::Cluster);
        assert_eq!(a.curves.len(), 4);
        assert_eq!(a, run_replication_sweep(&sim, &sweep).unwrap());
    }

    #[test]
    fn failing_cells_do_not_stop_the_sweep() {
        let (sim, sweep) = small_sweep(vec![50, 5]);
        let report = run_replication_sweep(&sim, &sweep).unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows[..2].iter().all(|r| r.status.starts_with("failed")));
        assert!(report.rows[2..].iter().all(|r| r.status == "ok"));
    }

    #[test]
    fn sweep_config_validation() {
        let bad = SweepConfig {
            replication_sizes: vec![5, 10],
            ..SweepConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SweepConfig::default().validate().is_ok());
    }
}
