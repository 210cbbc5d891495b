use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use raterlens_core::agreement::{self, interpret_band, IrrCoefficient};
use raterlens_core::evalsweep::{self, ProxyKind};
use raterlens_core::ingest;
use raterlens_core::io::{self, AgreementRow, CsvOut};
use raterlens_core::projection::{self, EmbeddingSet, PointKind};
use raterlens_core::svg::{self, Series};
use raterlens_core::{simgen, wals, Error, Result, RunConfig};

use crate::{Command, Global};

const OUT_ENV: &str = "RATERLENS_OUT";

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn input(&self, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
        let p = given.clone().unwrap_or_else(|| self.path(default));
        require(&p)?;
        Ok(p)
    }
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("input {} does not exist", path.display())))
    }
}

fn setup(global: &Global) -> Result<Ctx> {
    let mut cfg = match &global.config {
        Some(p) => {
            require(p)?;
            RunConfig::load(p)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let out = global
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Some(n) = global.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    Ok(Ctx { cfg, out })
}

fn ensure_out(ctx: &Ctx) -> Result<()> {
    std::fs::create_dir_all(&ctx.out).map_err(|source| Error::Io {
        path: ctx.out.clone(),
        source,
    })
}

pub fn run(global: &Global, command: &Command) -> Result<()> {
    let ctx = setup(global)?;
    match command {
        Command::Simulate => {
            ensure_out(&ctx)?;
            simulate(&ctx)
        }
        Command::Fit { annotations, grid } => {
            let input = ctx.input(annotations, "annotations.csv")?;
            ensure_out(&ctx)?;
            fit(&ctx, &input, *grid)
        }
        Command::Project { embeddings } => {
            let input = ctx.input(embeddings, "embeddings.csv")?;
            ensure_out(&ctx)?;
            project(&ctx, &input)
        }
        Command::Cluster { embeddings, annotations } => {
            let emb = ctx.input(embeddings, "embeddings.csv")?;
            let ann = ctx.input(annotations, "annotations.csv")?;
            ensure_out(&ctx)?;
            cluster(&ctx, &emb, &ann)
        }
        Command::Sweep => {
            ensure_out(&ctx)?;
            sweep(&ctx)
        }
        Command::Irr { ratings } => {
            for r in ratings {
                require(r)?;
            }
            ensure_out(&ctx)?;
            irr(&ctx, ratings)
        }
        Command::Xrr { x, y } => {
            require(x)?;
            require(y)?;
            ensure_out(&ctx)?;
            xrr(&ctx, x, y)
        }
        Command::DeltaIrr {
            soft,
            fewshot,
            coefficient,
        } => {
            require(soft)?;
            require(fewshot)?;
            ensure_out(&ctx)?;
            delta_irr(&ctx, soft, fewshot, *coefficient)
        }
        Command::Ingest => {
            ctx.cfg.validate_ingest()?;
            ensure_out(&ctx)?;
            ingest(&ctx)
        }
        Command::Report => report(&ctx),
    }
}

fn written(path: &Path) {
    info!("wrote {}", path.display());
}

fn simulate(ctx: &Ctx) -> Result<()> {
    let sim = ctx.cfg.sim_config();
    let (annotators, items) = simgen::build_population(&sim)?;
    let full = simgen::generate_annotations(&annotators, &items, sim.seed);
    let records = simgen::downsample_replication(&full, sim.replication as usize, sim.seed)?;
    let p = ctx.path("annotations.csv");
    io::write_annotations(&p, &records)?;
    written(&p);
    let p = ctx.path("population.csv");
    io::write_population(&p, &annotators, &items)?;
    written(&p);
    Ok(())
}

fn fit(ctx: &Ctx, input: &Path, grid: bool) -> Result<()> {
    let records = io::read_annotations(input)?;
    let (matrix, index) = wals::matrix_from_records(&records)?;
    let (train, dev) = wals::split_train_dev(&matrix, ctx.cfg.wals.dev_fraction, ctx.cfg.stage_seed("split"))?;
    let seed = ctx.cfg.stage_seed("wals");
    let mut params = ctx.cfg.wals_params();
    if grid {
        let w = &ctx.cfg.wals;
        let search = wals::grid_search(
            &train,
            &dev,
            &w.grid_dims,
            &w.grid_regs,
            &w.grid_iterations,
            w.unobserved_weight,
            seed,
        )?;
        let p = ctx.path("grid_search.csv");
        io::write_grid(&p, &search)?;
        written(&p);
        info!(
            "grid best: dim {} reg {} iterations {} (dev score {})",
            search.best.dim, search.best.reg, search.best.iterations, search.best_score
        );
        params = search.best;
    }
    let model = wals::fit_wals(&train, &params, seed)?;
    let report = wals::error_report(&model, &train, &dev)?;
    let p = ctx.path("fit_report.csv");
    io::write_fit_report(&p, &report)?;
    written(&p);
    let p = ctx.path("objective_trace.csv");
    io::write_objective_trace(&p, &report.objective_trace)?;
    written(&p);

    // Embeddings come from a refit on every record so no item is left cold.
    let full = wals::fit_wals(&matrix, &params, seed)?;
    let p = ctx.path("embeddings.csv");
    io::write_embeddings(&p, &EmbeddingSet::from_factors(&full, &index))?;
    written(&p);
    Ok(())
}

fn project(ctx: &Ctx, input: &Path) -> Result<()> {
    let set = io::read_embeddings(input)?;
    let pre = projection::preprocess(&set, ctx.cfg.projection.preprocess)?;
    let xy = projection::project_2d(&pre, &ctx.cfg.projection_params())?;
    let p = ctx.path("projection.csv");
    io::write_projection(&p, &set, &xy)?;
    written(&p);
    let series = |kind: PointKind, color| Series {
        name: kind.as_str(),
        color,
        points: set
            .kinds
            .iter()
            .zip(&xy)
            .filter(|(k, _)| **k == kind)
            .map(|(_, p)| (p[0], p[1]))
            .collect(),
    };
    let p = ctx.path("projection.svg");
    svg::scatter(
        &p,
        "Item and annotator embeddings",
        &[series(PointKind::Item, "steelblue"), series(PointKind::Annotator, "darkorange")],
    )?;
    written(&p);
    Ok(())
}

fn cluster(ctx: &Ctx, embeddings: &Path, annotations: &Path) -> Result<()> {
    let set = io::read_embeddings(embeddings)?;
    let records = io::read_annotations(annotations)?;
    let outcome = evalsweep::cluster_embedding(
        &set,
        &records,
        ctx.cfg.projection.preprocess,
        &ctx.cfg.projection_params(),
        &ctx.cfg.cluster,
    )?;
    if let Some(w) = &outcome.result.warning {
        warn!("{w}");
    }
    info!(
        "{} clusters, noise fraction {:.3}",
        outcome.result.n_clusters(),
        outcome.result.noise_fraction()
    );
    let p = ctx.path("clusters.csv");
    io::write_clusters(&p, &outcome)?;
    written(&p);
    Ok(())
}

fn sweep(ctx: &Ctx) -> Result<()> {
    let sweep = ctx.cfg.sweep_config();
    let report = evalsweep::run_replication_sweep(&ctx.cfg.sim_config(), &sweep)?;
    for r in report.rows.iter().filter(|r| r.status != "ok") {
        warn!("seed {} replication {} {}: {}", r.seed, r.replication, r.proxy, r.status);
    }
    let p = ctx.path("sweep_report.csv");
    io::write_sweep_report(&p, &report)?;
    written(&p);
    for ((seed, rep, proxy), curve) in &report.curves {
        io::write_curve_points(&ctx.path(&format!("pr_points_{seed}_{rep}_{proxy}.csv")), curve)?;
    }
    info!("wrote {} precision-recall point files", report.curves.len());

    let (Some(&seed), Some(&rep)) = (sweep.seeds.first(), sweep.replication_sizes.iter().min()) else {
        return Ok(());
    };
    let series: Vec<Series> = sweep
        .proxies
        .iter()
        .filter_map(|&proxy| {
            let curve = report.curves.get(&(seed, rep, proxy))?;
            Some(Series {
                name: proxy.as_str(),
                color: match proxy {
                    ProxyKind::Majority => "darkorange",
                    ProxyKind::Cluster => "steelblue",
                },
                points: curve.points.clone(),
            })
        })
        .collect();
    if !series.is_empty() {
        let p = ctx.path("pr_curves.svg");
        svg::curves(
            &p,
            &format!("Precision-recall, replication {rep}, seed {seed}"),
            "recall",
            "precision",
            &series,
        )?;
        written(&p);
    }
    Ok(())
}

fn scope_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn agreement_row(metric: &str, scope: String, value: f64, n_units: usize) -> AgreementRow {
    AgreementRow {
        metric: metric.into(),
        scope,
        value,
        n_units,
        band: interpret_band(value).to_string(),
    }
}

fn upsert(ctx: &Ctx, rows: &[AgreementRow]) -> Result<()> {
    let p = ctx.path("agreement_report.csv");
    io::upsert_agreement_report(&p, rows)?;
    for r in rows {
        info!("{} {} = {} ({})", r.metric, r.scope, io::fmt_f64(r.value), r.band);
    }
    written(&p);
    Ok(())
}

fn irr(ctx: &Ctx, inputs: &[PathBuf]) -> Result<()> {
    let rows = inputs
        .iter()
        .map(|p| {
            let score = agreement::krippendorff_alpha(&io::read_ratings(p)?)?;
            Ok(agreement_row("alpha", scope_of(p), score.value, score.n_units))
        })
        .collect::<Result<Vec<_>>>()?;
    upsert(ctx, &rows)
}

fn xrr(ctx: &Ctx, x: &Path, y: &Path) -> Result<()> {
    let (tx, ty) = (io::read_ratings(x)?, io::read_ratings(y)?);
    let scope = format!("{}_vs_{}", scope_of(x), scope_of(y));
    let raw = agreement::xrr(&tx, &ty)?;
    let norm = agreement::normalized_xrr(&tx, &ty)?;
    upsert(
        ctx,
        &[
            agreement_row("xrr", scope.clone(), raw.value, raw.n_units),
            agreement_row("normalized_xrr", scope, norm.value, norm.n_units),
        ],
    )
}

fn delta_irr(ctx: &Ctx, soft: &Path, fewshot: &Path, coefficient: IrrCoefficient) -> Result<()> {
    let report = agreement::delta_irr(&io::read_predictions(soft)?, &io::read_predictions(fewshot)?, coefficient)?;
    let p = ctx.path("delta_irr.csv");
    let mut w = CsvOut::create(&p, &["annotator_id", "soft", "fewshot", "delta", "status"])?;
    let mut rows: Vec<(&str, [String; 3], String)> = report
        .per_annotator
        .iter()
        .map(|(id, d)| {
            (
                id.as_str(),
                [io::fmt_f64(d.soft), io::fmt_f64(d.fewshot), io::fmt_f64(d.delta)],
                "ok".to_string(),
            )
        })
        .collect();
    rows.extend(report.excluded.iter().map(|(id, why)| {
        (
            id.as_str(),
            ["NaN".into(), "NaN".into(), "NaN".into()],
            format!("excluded: {why}"),
        )
    }));
    rows.sort_by(|a, b| a.0.cmp(b.0));
    for (id, values, status) in rows {
        w.row([id, &values[0], &values[1], &values[2], &status])?;
    }
    w.finish()?;
    written(&p);
    if !report.excluded.is_empty() {
        warn!("{} annotators excluded", report.excluded.len());
    }
    let mean = report.mean.ok_or_else(|| Error::Undefined {
        metric: "delta_irr",
        reason: "no annotator has a defined coefficient in both files".into(),
    })?;
    let metric = match coefficient {
        IrrCoefficient::Alpha => "delta_irr",
        IrrCoefficient::Kappa => "delta_irr_kappa",
    };
    upsert(
        ctx,
        &[AgreementRow {
            metric: metric.into(),
            scope: "mean".into(),
            value: mean,
            n_units: report.per_annotator.len(),
            band: String::new(),
        }],
    )
}

fn ingest(ctx: &Ctx) -> Result<()> {
    let out = ingest::ingest_all(&ctx.cfg.ingest, ctx.cfg.seed)?;
    if let Some(common) = &out.common {
        info!("{} comment ids shared by intersected datasets", common.ids.len());
        let p = ctx.path("common_ids.csv");
        let mut w = CsvOut::create(&p, &["comment_id"])?;
        for id in &common.ids {
            w.row([id])?;
        }
        w.finish()?;
        written(&p);
    }
    for ((tag, group), table) in &out.tables {
        let p = ctx.path(&ingest::ratings_file_name(*tag, group));
        io::write_ratings(&p, table)?;
        info!("{tag}/{group}: {} units, {} ratings", table.n_units(), table.n_ratings());
        written(&p);
    }
    let p = ctx.path("rejects.csv");
    io::write_rejects(&p, &out.rejects)?;
    written(&p);
    let p = ctx.path("shortfall.csv");
    io::write_shortfall(&p, &out.shortfall)?;
    written(&p);
    Ok(())
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

fn report(ctx: &Ctx) -> Result<()> {
    // (source, metric, scope, value, n, band)
    let mut rows: Vec<[String; 6]> = Vec::new();
    let mut sources = 0;

    let p = ctx.path("agreement_report.csv");
    if p.is_file() {
        sources += 1;
        for r in io::read_agreement_report(&p)? {
            let band = if r.metric.starts_with("delta_irr") {
                String::new()
            } else {
                interpret_band(r.value).to_string()
            };
            rows.push([
                "agreement".into(),
                r.metric,
                r.scope,
                io::fmt_f64(r.value),
                r.n_units.to_string(),
                band,
            ]);
        }
    }

    let p = ctx.path("fit_report.csv");
    if p.is_file() {
        sources += 1;
        for (metric, value) in io::read_metric_table(&p)? {
            rows.push(["fit".into(), metric, String::new(), io::fmt_f64(value), String::new(), String::new()]);
        }
    }

    let p = ctx.path("sweep_report.csv");
    if p.is_file() {
        sources += 1;
        type Cells = BTreeMap<(std::cmp::Reverse<u32>, String), (Vec<f64>, Vec<f64>)>;
        let mut cells = Cells::new();
        for r in io::read_sweep_report(&p)? {
            if r.status == "ok" {
                let cell = cells.entry((std::cmp::Reverse(r.replication), r.proxy)).or_default();
                cell.0.push(r.auc);
                cell.1.push(r.average_precision);
            }
        }
        for ((rep, proxy), (auc, ap)) in cells {
            let n = auc.len().to_string();
            let scope = format!("{proxy}@{}", rep.0);
            rows.push(["sweep".into(), "median_auc".into(), scope.clone(), io::fmt_f64(median(auc)), n.clone(), String::new()]);
            rows.push(["sweep".into(), "median_average_precision".into(), scope, io::fmt_f64(median(ap)), n, String::new()]);
        }
    }

    if sources == 0 || rows.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no agreement, fit or sweep results in {}; run another subcommand first",
            ctx.out.display()
        )));
    }
    let p = ctx.path("summary.csv");
    let mut w = CsvOut::create(&p, &["source", "metric", "scope", "value", "n", "band"])?;
    for r in &rows {
        w.row(r)?;
    }
    w.finish()?;
    written(&p);
    Ok(())
}
