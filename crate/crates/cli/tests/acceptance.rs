//! Acceptance checks. Prints one PASS/FAIL/SKIP line per criterion. Exits
//! non-zero on any failure only when RATERLENS_ACCEPTANCE_STRICT is set, so the
//! ordinary test run reports failures without aborting the workspace.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use raterlens_core::agreement::{self, IrrCoefficient, Prediction, PredictionPairs, RatingTable};
use raterlens_core::cluster::{self, ClusterParams, Points};
use raterlens_core::evalsweep::{self, ProxyKind};
use raterlens_core::ingest::{self, DatasetTag};
use raterlens_core::rng;
use raterlens_core::wals::{self, Entry, SparseRatingMatrix, WalsParams};
use raterlens_core::RunConfig;

struct Outcome {
    pass: Option<bool>,
    detail: String,
}

fn pass_if(ok: bool, detail: String) -> Outcome {
    Outcome { pass: Some(ok), detail }
}

fn c1_normalized_xrr() -> Outcome {
    let cases = [
        (0.184, 0.240, 0.202, 0.836),
        (0.207, 0.240, 0.268, 0.818),
        (0.186, 0.202, 0.268, 0.800),
        (0.351, 0.269, 0.400, 1.073),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (x, a, b, published) in cases {
        let got = agreement::normalize_xrr(x, a, b).unwrap_or(f64::NAN);
        worst = worst.max((got - published).abs());
        parts.push(format!("{got:.3}/{published}"));
    }
    pass_if(worst <= 0.003, format!("{} max |diff| {worst:.4} (tol 0.003)", parts.join(" ")))
}

/// Mean within-unit pairwise disagreement over mean pairwise disagreement of
/// all pairable values.
fn brute_alpha(units: &[Vec<i64>]) -> Option<f64> {
    let pairable: Vec<&Vec<i64>> = units.iter().filter(|u| u.len() >= 2).collect();
    let values: Vec<i64> = pairable.iter().flat_map(|u| u.iter().copied()).collect();
    let n = values.len() as f64;
    if n < 2.0 {
        return None;
    }
    let mut d_o = 0.0;
    for u in &pairable {
        let m = u.len() as f64;
        let mut dis = 0.0;
        for i in 0..u.len() {
            for j in 0..u.len() {
                if i != j && u[i] != u[j] {
                    dis += 1.0;
                }
            }
        }
        d_o += dis / (m - 1.0);
    }
    d_o /= n;
    let mut d_e = 0.0;
    for i in 0..values.len() {
        for j in 0..values.len() {
            if i != j && values[i] != values[j] {
                d_e += 1.0;
            }
        }
    }
    d_e /= n * (n - 1.0);
    (d_e > 0.0).then(|| 1.0 - d_o / d_e)
}

fn c2_alpha_oracle() -> Outcome {
    let mut r = rng::stream(2024, &[]);
    let (mut compared, mut worst, mut mismatched) = (0, 0.0f64, 0);
    for _ in 0..100 {
        let n_units = r.random_range(1..=8);
        let n_raters = r.random_range(2..=5);
        let mut table = RatingTable::new();
        let mut units = Vec::new();
        for u in 0..n_units {
            let mut vals = Vec::new();
            for k in 0..n_raters {
                if r.random_bool(0.8) {
                    let v = i64::from(r.random_bool(0.5));
                    table.insert(format!("u{u}"), format!("r{k}"), v).unwrap();
                    vals.push(v);
                }
            }
            units.push(vals);
        }
        match (agreement::krippendorff_alpha(&table), brute_alpha(&units)) {
            (Ok(a), Some(b)) => {
                compared += 1;
                worst = worst.max((a.value - b).abs());
            }
            (Err(_), None) => {}
            _ => mismatched += 1,
        }
    }
    pass_if(
        worst <= 1e-9 && mismatched == 0 && compared >= 50,
        format!("{compared} defined tables, max |diff| {worst:.2e}, {mismatched} definedness mismatches (tol 1e-9)"),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn desk_sweep() -> (RunConfig, evalsweep::SweepReport, f64) {
    let cfg = RunConfig::from_toml(include_str!("../../../configs/sweep_desk.toml")).expect("sweep config");
    let t = Instant::now();
    let report = evalsweep::run_replication_sweep(&cfg.sim_config(), &cfg.sweep_config()).expect("sweep");
    (cfg, report, t.elapsed().as_secs_f64())
}

fn c3_majority_trend(cfg: &RunConfig, report: &evalsweep::SweepReport, secs: f64) -> Outcome {
    let seeds = &cfg.sweep.seeds[..5];
    let mut medians = Vec::new();
    for &rep in &cfg.sweep.replication_sizes {
        let aucs: Vec<f64> = seeds
            .iter()
            .filter_map(|&s| report.row(s, rep, ProxyKind::Majority)?.auc)
            .collect();
        if aucs.len() != seeds.len() {
            return pass_if(false, format!("replication {rep}: only {} of 5 seeds succeeded", aucs.len()));
        }
        medians.push((rep, median(aucs)));
    }
    let rises: Vec<f64> = medians
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .filter(|&d| d > 0.0)
        .collect();
    let ok = rises.len() <= 1 && rises.iter().all(|&d| d <= 0.02);
    let shown: Vec<String> = medians.iter().map(|(r, m)| format!("{r}:{m:.4}")).collect();
    pass_if(
        ok && secs < 300.0,
        format!(
            "median AUC {}; {} inversion(s) {:?}; sweep {secs:.1}s",
            shown.join(" "),
            rises.len(),
            rises.iter().map(|d| format!("{d:.4}")).collect::<Vec<_>>()
        ),
    )
}

fn c4_cluster_beats_majority(cfg: &RunConfig, report: &evalsweep::SweepReport) -> Outcome {
    let rep = *cfg.sweep.replication_sizes.iter().min().unwrap();
    let (mut wins, mut strict, mut ties) = (0, 0, 0);
    let mut cells = Vec::new();
    for &s in &cfg.sweep.seeds {
        let ap = |p| report.row(s, rep, p).and_then(|r| r.average_precision);
        let (Some(c), Some(m)) = (ap(ProxyKind::Cluster), ap(ProxyKind::Majority)) else {
            cells.push(format!("{s}:failed"));
            continue;
        };
        if c >= m {
            wins += 1;
            if c > m {
                strict += 1;
            } else {
                ties += 1;
            }
        }
        cells.push(format!("{s}:{c:.3}/{m:.3}"));
    }
    pass_if(
        wins >= 8,
        format!(
            "replication {rep}: cluster AP >= majority AP in {wins}/10 seeds ({strict} strict, {ties} ties); cluster/majority {}",
            cells.join(" ")
        ),
    )
}

fn monotone(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0))
}

fn c5_wals() -> Outcome {
    let mut r = rng::stream(55, &[]);
    let mut fitted = 0;
    let mut non_monotone = 0;
    for case in 0..20u64 {
        let (ni, na) = (r.random_range(5..40), r.random_range(5..40));
        let mut entries = Vec::new();
        for i in 0..ni {
            for u in 0..na {
                if r.random_bool(0.4) {
                    entries.push(Entry::new(i, u, f64::from(u8::from(r.random_bool(0.5)))));
                }
            }
        }
        let Ok(m) = SparseRatingMatrix::new(ni, na, entries) else { continue };
        let params = WalsParams {
            dim: 1 + (case as usize % 5),
            reg: [1e-3, 0.1, 1.0, 10.0][case as usize % 4],
            iterations: 10,
            unobserved_weight: [0.0, 0.1][case as usize % 2],
        };
        if let Ok(model) = wals::fit_wals(&m, &params, case) {
            fitted += 1;
            if !monotone(&model.objective_trace) {
                non_monotone += 1;
            }
        }
    }

    let (recovered, dev_rmse, trace_ok) = rank3_recovery(0);
    fitted += 1;
    non_monotone += usize::from(!trace_ok);
    let rate = (0..40).filter(|&s| rank3_recovery(s).0).count();
    pass_if(
        non_monotone == 0 && recovered,
        format!(
            "{fitted} fits, {non_monotone} non-monotone traces; rank-3 50x50 instance 0 dev RMSE {dev_rmse:.2e} (< 0.05); {rate}/40 instances recover"
        ),
    )
}

/// Noiseless rank-3 50x50 matrix from Gaussian factors. A random 30% of cells
/// is observed for training; the rest is the dev set.
fn rank3_recovery(seed: u64) -> (bool, f64, bool) {
    let (n, d) = (50, 3);
    let mut r = rng::stream(rng::key(5, &[seed]), &[]);
    let u: Vec<f64> = (0..n * d).map(|_| r.sample(StandardNormal)).collect();
    let v: Vec<f64> = (0..n * d).map(|_| r.sample(StandardNormal)).collect();
    let (mut train, mut dev) = (Vec::new(), Vec::new());
    for i in 0..n {
        for a in 0..n {
            let x: f64 = (0..d).map(|k| u[i * d + k] * v[a * d + k]).sum();
            if r.random_bool(0.3) {
                train.push(Entry::new(i, a, x));
            } else {
                dev.push(Entry::new(i, a, x));
            }
        }
    }
    let train = SparseRatingMatrix::new(n, n, train).unwrap();
    let dev = SparseRatingMatrix::new(n, n, dev).unwrap();
    let params = WalsParams {
        dim: 3,
        reg: 1e-4,
        iterations: 20,
        unobserved_weight: 0.0,
    };
    let model = wals::fit_wals(&train, &params, seed).unwrap();
    let rmse = wals::rmse(&model, &dev, false).unwrap();
    (rmse < 0.05, rmse, monotone(&model.objective_trace))
}

fn adjusted_rand(a: &[i32], b: &[i32]) -> f64 {
    let mut table: BTreeMap<(i32, i32), f64> = BTreeMap::new();
    let mut ra: BTreeMap<i32, f64> = BTreeMap::new();
    let mut rb: BTreeMap<i32, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *ra.entry(x).or_default() += 1.0;
        *rb.entry(y).or_default() += 1.0;
    }
    let c2 = |x: f64| x * (x - 1.0) / 2.0;
    let index: f64 = table.values().map(|&x| c2(x)).sum();
    let sa: f64 = ra.values().map(|&x| c2(x)).sum();
    let sb: f64 = rb.values().map(|&x| c2(x)).sum();
    let expected = sa * sb / c2(a.len() as f64);
    let max = (sa + sb) / 2.0;
    if max == expected {
        1.0
    } else {
        (index - expected) / (max - expected)
    }
}

fn kruskal_weight(n: usize, w: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut edges: Vec<(f64, usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| (w(i, j), i, j))
        .collect();
    edges.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }
    let mut total = 0.0;
    for (wt, i, j) in edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        if a != b {
            parent[a] = b;
            total += wt;
        }
    }
    total
}

fn c6_clustering() -> Outcome {
    let mut r = rng::stream(66, &[]);
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (b, offset) in [0.0, 10.0].into_iter().enumerate() {
        for _ in 0..200 {
            let x: f64 = r.sample(StandardNormal);
            let y: f64 = r.sample(StandardNormal);
            data.extend([x + offset, y]);
            truth.push(b as i32);
        }
    }
    let res = cluster::fit_density_clusters(Points::new(&data, 2).unwrap(), &ClusterParams::default()).unwrap();
    let (kept_pred, kept_truth): (Vec<i32>, Vec<i32>) = res
        .labels
        .iter()
        .zip(&truth)
        .filter(|(l, _)| **l >= 0)
        .map(|(l, t)| (*l, *t))
        .unzip();
    let ari = adjusted_rand(&kept_pred, &kept_truth);
    let ari_all = adjusted_rand(&res.labels, &truth);
    let noise = res.noise_fraction();
    let blobs_ok = res.n_clusters() == 2 && ari == 1.0 && noise <= 0.02;

    let mut mst_bad = 0;
    for inst in 0..50u64 {
        let n = 2 + (inst as usize % 11);
        let dim = 1 + (inst as usize % 3);
        let pts: Vec<f64> = (0..n * dim).map(|_| r.random_range(-5.0..5.0)).collect();
        let k = 1 + (inst as usize % n.min(4));
        let dist = |i: usize, j: usize| -> f64 {
            (0..dim).map(|c| (pts[i * dim + c] - pts[j * dim + c]).powi(2)).sum::<f64>().sqrt()
        };
        // Core distance: k-th smallest distance with the point itself first.
        let core: Vec<f64> = (0..n)
            .map(|i| {
                let mut ds: Vec<f64> = (0..n).map(|j| dist(i, j)).collect();
                ds.sort_by(f64::total_cmp);
                ds[k - 1]
            })
            .collect();
        let reach = |i: usize, j: usize| dist(i, j).max(core[i]).max(core[j]);
        let expected = kruskal_weight(n, &reach);
        let points = Points::new(&pts, dim).unwrap();
        let got_core = cluster::core_distances(points, k);
        let edges = cluster::mutual_reachability_mst(points, &got_core);
        let got: f64 = edges.iter().map(|e| e.weight).sum();
        let core_ok = got_core.iter().zip(&core).all(|(a, b)| (a - b).abs() <= 1e-12);
        if !core_ok || edges.len() != n - 1 || (got - expected).abs() > 1e-9 * expected.max(1.0) {
            mst_bad += 1;
        }
    }
    pass_if(
        blobs_ok && mst_bad == 0,
        format!(
            "{} clusters, ARI {ari} on clustered points ({ari_all:.4} with noise as a label), noise {:.3}; MST mismatches {mst_bad}/50",
            res.n_clusters(),
            noise
        ),
    )
}

fn c7_delta_irr() -> Outcome {
    let mut r = rng::stream(77, &[]);
    let mut rows = Vec::new();
    for a in 0..12 {
        for c in 0..40 {
            let human = u8::from(c % 2 == 0);
            let model = if r.random_bool(0.7) { human } else { 1 - human };
            rows.push(Prediction {
                annotator_id: format!("a{a}"),
                comment_id: format!("c{c}"),
                human_label: human,
                model_label: model,
            });
        }
    }
    let soft = PredictionPairs::new(rows.clone()).unwrap();
    let fewshot = PredictionPairs::new(rows).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for coef in [IrrCoefficient::Alpha, IrrCoefficient::Kappa] {
        let rep = agreement::delta_irr(&soft, &fewshot, coef).unwrap();
        let zeros = rep.per_annotator.values().filter(|d| d.delta == 0.0).count();
        ok &= zeros == 12 && rep.excluded.is_empty() && rep.mean == Some(0.0);
        details.push(format!("{coef:?}: {zeros}/12 exactly 0"));
    }
    pass_if(ok, details.join(", "))
}

fn find_table<'a>(
    tables: &'a BTreeMap<(DatasetTag, String), RatingTable>,
    tag: DatasetTag,
    needle: &str,
) -> Option<&'a RatingTable> {
    tables
        .iter()
        .find(|((t, g), _)| *t == tag && g.to_lowercase().contains(needle))
        .map(|(_, t)| t)
}

fn c8_datasets() -> Outcome {
    let Some(path) = std::env::var_os("RATERLENS_DATA_CONFIG").map(PathBuf::from) else {
        return Outcome {
            pass: None,
            detail: "RATERLENS_DATA_CONFIG not set; public 2017/2022 files not available".into(),
        };
    };
    let run = || -> Result<Outcome, String> {
        let cfg = RunConfig::load(&path).map_err(|e| e.to_string())?;
        cfg.validate_ingest().map_err(|e| e.to_string())?;
        let mut checks = Vec::new();
        let mut ok = true;
        let first = ingest::ingest_all(&cfg.ingest, 0).map_err(|e| e.to_string())?;
        for (needle, published) in [("control", 0.240), ("lgbtq", 0.268), ("african", 0.202)] {
            let t = find_table(&first.tables, DatasetTag::D2022, needle).ok_or(format!("no 2022 {needle} group"))?;
            let a = agreement::krippendorff_alpha(t).map_err(|e| e.to_string())?.value;
            ok &= (a - published).abs() <= 0.005;
            checks.push(format!("2022-{needle} {a:.3}/{published}"));
        }
        let c = find_table(&first.tables, DatasetTag::D2022, "control").unwrap();
        let aa = find_table(&first.tables, DatasetTag::D2022, "african").unwrap();
        let x = agreement::xrr(c, aa).map_err(|e| e.to_string())?.value;
        ok &= (x - 0.184).abs() <= 0.005;
        checks.push(format!("xRR control/african {x:.3}/0.184"));

        let mut alphas = Vec::new();
        for seed in 0..5 {
            let out = ingest::ingest_all(&cfg.ingest, seed).map_err(|e| e.to_string())?;
            let t = out
                .tables
                .iter()
                .find(|((tag, _), _)| *tag == DatasetTag::D2017)
                .map(|(_, t)| t)
                .ok_or("no 2017 table")?;
            alphas.push(agreement::krippendorff_alpha(t).map_err(|e| e.to_string())?.value);
        }
        let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
        ok &= (mean - 0.136).abs() <= 0.02;
        checks.push(format!(
            "2017 mean {mean:.3}/0.136 over seeds [{}]",
            alphas.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(", ")
        ));
        let common = first.common.as_ref().map_or(0, |c| c.ids.len());
        ok &= common == 25_500;
        checks.push(format!("common ids {common}/25500"));
        Ok(pass_if(ok, checks.join("; ")))
    };
    run().unwrap_or_else(|e| pass_if(false, e))
}

const DETERMINISM_TOML: &str = r#"
seed = 9
[sim]
n_annotators = 60
n_items = 300
replication = 10
[wals]
reg = 10.0
[projection]
epochs = 60
[cluster]
min_cluster_size = 10
[sweep]
replication_sizes = [20, 10, 5]
seeds = [0, 1, 2]
"#;

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn c9_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, DETERMINISM_TOML).unwrap();
    let mut trees = Vec::new();
    for (name, threads) in [("t1", "1"), ("t8", "8"), ("t8_again", "8")] {
        let out = dir.path().join(name);
        for cmd in ["simulate", "fit", "sweep"] {
            let o = Command::new(env!("CARGO_BIN_EXE_raterlens"))
                .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads])
                .env("RUST_LOG", "error")
                .output()
                .unwrap();
            if !o.status.success() {
                return pass_if(false, format!("{cmd} --threads {threads} failed: {}", String::from_utf8_lossy(&o.stderr)));
            }
        }
        trees.push(files(&out));
    }
    let names: BTreeSet<&String> = trees[0].keys().collect();
    let differing: Vec<&String> = names
        .iter()
        .copied()
        .filter(|n| trees.iter().any(|t| t.get(*n) != trees[0].get(*n)))
        .collect();
    let same_names = trees.iter().all(|t| t.keys().collect::<BTreeSet<_>>() == names);
    pass_if(
        same_names && differing.is_empty() && names.contains(&"sweep_report.csv".to_string()),
        format!(
            "{} files from simulate, fit and sweep compared across threads 1/8 and a repeat run; {} differ",
            names.len(),
            differing.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((name, o, t.elapsed().as_secs_f64()));
    };
    timed("C1 normalized xRR reproduces published values", &mut c1_normalized_xrr);
    timed("C2 alpha matches pairwise oracle", &mut c2_alpha_oracle);
    let (cfg, report, secs) = desk_sweep();
    timed("C3 majority AUC falls with replication", &mut || c3_majority_trend(&cfg, &report, secs));
    timed("C4 cluster proxy AP >= majority AP at replication 5", &mut || {
        c4_cluster_beats_majority(&cfg, &report)
    });
    timed("C5 WALS monotone objective and rank-3 recovery", &mut c5_wals);
    timed("C6 two blobs and MST oracle", &mut c6_clustering);
    timed("C7 identical files give zero delta IRR", &mut c7_delta_irr);
    timed("C8 public dataset agreement values", &mut c8_datasets);
    timed("C9 byte-identical outputs across runs and threads", &mut c9_determinism);

    let mut failed = 0;
    for (name, o, secs) in &results {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("{tag} {name}: {} [{secs:.2}s]", o.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        if std::env::var_os("RATERLENS_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
