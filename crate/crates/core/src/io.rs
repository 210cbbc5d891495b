//! CSV readers and writers for every file the pipeline exchanges.
//!
//! Floats are written in Rust's shortest round-trip form so output is stable
//! across runs and platforms. Undefined values are written as `NaN`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use crate::agreement::{Prediction, PredictionPairs, RatingTable};
use crate::error::{Error, Result};
use crate::evalsweep::{CurveData, SweepReport};
use crate::ingest::{Reject, Shortfall, UnifiedAnnotation};
use crate::projection::{EmbeddingSet, PointKind};
use crate::simgen::{AnnotationRecord, AnnotatorProfile, ItemProfile};
use crate::wals::{FitReport, GridSearch};

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NaN".into(), fmt_f64)
}

pub struct CsvOut<'a> {
    path: &'a Path,
    inner: csv::Writer<File>,
}

impl<'a> CsvOut<'a> {
    pub fn create(path: &'a Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = Self {
            path,
            inner: csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(file),
        };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner
            .write_record(fields)
            .map_err(|e| Error::csv(self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(self.path, e))
    }
}

/// Path and header of an open CSV file.
pub struct CsvCtx {
    path: std::path::PathBuf,
    headers: csv::StringRecord,
}

impl CsvCtx {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn malformed(&self, line: u64, reason: impl std::fmt::Display) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            reason: format!("line {line}: {reason}"),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: u64, rec: &csv::StringRecord, col: usize) -> Result<T> {
        let raw = rec.get(col).unwrap_or("");
        raw.parse()
            .map_err(|_| self.malformed(line, format!("cannot parse `{raw}` in column {}", &self.headers[col])))
    }
}

/// Header-checked reader yielding records as string vectors.
pub struct CsvIn {
    ctx: CsvCtx,
    reader: csv::Reader<File>,
}

impl CsvIn {
    pub fn open(path: &Path, required: &[&str]) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
        for col in required {
            if !headers.iter().any(|h| h == *col) {
                return Err(Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: (*col).to_string(),
                });
            }
        }
        Ok(Self {
            ctx: CsvCtx {
                path: path.to_path_buf(),
                headers,
            },
            reader,
        })
    }

    /// Index of a column; only valid for columns checked at open.
    fn col(&self, name: &str) -> usize {
        self.ctx.column(name).unwrap_or(usize::MAX)
    }

    /// Visit each record with its 1-based line number.
    pub fn for_each(mut self, mut f: impl FnMut(&CsvCtx, u64, &csv::StringRecord) -> Result<()>) -> Result<()> {
        for (k, rec) in self.reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(&self.ctx.path, e))?;
            f(&self.ctx, k as u64 + 2, &rec)?;
        }
        Ok(())
    }
}

pub fn write_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    let mut w = CsvOut::create(path, &["item_id", "annotator_id", "value"])?;
    for r in records {
        w.row([r.item_id.to_string(), r.annotator_id.to_string(), r.value.to_string()])?;
    }
    w.finish()
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let input = CsvIn::open(path, &["item_id", "annotator_id", "value"])?;
    let (ci, ai, vi) = (
        input.col("item_id"),
        input.col("annotator_id"),
        input.col("value"),
    );
    let mut out = Vec::new();
    input.for_each(|cx, line, rec| {
        let value: u8 = cx.parse(line, rec, vi)?;
        if value > 1 {
            return Err(cx.malformed(line, format!("value {value} is not binary")));
        }
        out.push(AnnotationRecord {
            item_id: cx.parse(line, rec, ci)?,
            annotator_id: cx.parse(line, rec, ai)?,
            value,
        });
        Ok(())
    })?;
    if out.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no records", path.display())));
    }
    let mut sorted = out.clone();
    sorted.sort();
    if let Some(w) = sorted
        .windows(2)
        .find(|w| w[0].item_id == w[1].item_id && w[0].annotator_id == w[1].annotator_id)
    {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("duplicate record for item {} annotator {}", w[0].item_id, w[0].annotator_id),
        });
    }
    Ok(out)
}

pub fn write_population(path: &Path, annotators: &[AnnotatorProfile], items: &[ItemProfile]) -> Result<()> {
    let mut w = CsvOut::create(path, &["kind", "id", "class", "true_label"])?;
    for a in annotators {
        w.row(["annotator", &a.id.to_string(), a.skill_class.as_str(), ""])?;
    }
    for i in items {
        w.row([
            "item",
            &i.id.to_string(),
            i.difficulty.as_str(),
            &i.true_label.to_string(),
        ])?;
    }
    w.finish()
}

/// True labels of the items in a population file.
pub fn read_true_labels(path: &Path) -> Result<BTreeMap<u32, u8>> {
    let input = CsvIn::open(path, &["kind", "id", "true_label"])?;
    let (ki, ii, ti) = (
        input.col("kind"),
        input.col("id"),
        input.col("true_label"),
    );
    let mut out = BTreeMap::new();
    input.for_each(|cx, line, rec| {
        if rec.get(ki) == Some("item") {
            out.insert(cx.parse(line, rec, ii)?, cx.parse(line, rec, ti)?);
        }
        Ok(())
    })?;
    Ok(out)
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let mut header = vec!["kind".to_string(), "id".to_string()];
    header.extend((0..set.dim).map(|k| format!("f{k}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = CsvOut::create(path, &header)?;
    for i in 0..set.len() {
        let mut row = vec![set.kinds[i].as_str().to_string(), set.ids[i].to_string()];
        row.extend(set.row(i).iter().map(|v| fmt_f64(*v)));
        w.row(row)?;
    }
    w.finish()
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let input = CsvIn::open(path, &["kind", "id", "f0"])?;
    let feature_cols: Vec<usize> = (0..)
        .map_while(|k| input.ctx.column(&format!("f{k}")))
        .collect();
    let (ki, ii) = (input.col("kind"), input.col("id"));
    let (mut kinds, mut ids, mut data) = (Vec::new(), Vec::new(), Vec::new());
    input.for_each(|cx, line, rec| {
        let kind: PointKind = rec
            .get(ki)
            .unwrap_or("")
            .parse()
            .map_err(|e| cx.malformed(line, e))?;
        kinds.push(kind);
        ids.push(cx.parse(line, rec, ii)?);
        for &c in &feature_cols {
            data.push(cx.parse::<f64>(line, rec, c)?);
        }
        Ok(())
    })?;
    if kinds.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no rows", path.display())));
    }
    EmbeddingSet::new(kinds, ids, data, feature_cols.len())
}

pub fn write_fit_report(path: &Path, report: &FitReport) -> Result<()> {
    let mut w = CsvOut::create(path, &["metric", "value"])?;
    for (name, value) in report.metrics() {
        w.row([name.to_string(), fmt_opt(value)])?;
    }
    w.finish()
}

pub fn read_metric_table(path: &Path) -> Result<Vec<(String, f64)>> {
    let input = CsvIn::open(path, &["metric", "value"])?;
    let (mi, vi) = (input.col("metric"), input.col("value"));
    let mut out = Vec::new();
    input.for_each(|cx, line, rec| {
        out.push((rec.get(mi).unwrap_or("").to_string(), cx.parse(line, rec, vi)?));
        Ok(())
    })?;
    Ok(out)
}

pub fn write_objective_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut w = CsvOut::create(path, &["half_step", "objective"])?;
    for (k, v) in trace.iter().enumerate() {
        w.row([k.to_string(), fmt_f64(*v)])?;
    }
    w.finish()
}

pub fn write_grid(path: &Path, grid: &GridSearch) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &["dim", "reg", "iterations", "pos_dev", "neg_dev", "score", "status"],
    )?;
    for cell in &grid.table {
        let (pos, neg, status) = match &cell.outcome {
            Ok(r) => (r.pos_dev, r.neg_dev, "ok".to_string()),
            Err(e) => (None, None, format!("failed: {e}")),
        };
        w.row([
            cell.dim.to_string(),
            fmt_f64(cell.reg),
            cell.iterations.to_string(),
            fmt_opt(pos),
            fmt_opt(neg),
            fmt_opt(cell.dev_score()),
            status,
        ])?;
    }
    w.finish()
}

pub fn write_projection(path: &Path, set: &EmbeddingSet, points: &[[f64; 2]]) -> Result<()> {
    let mut w = CsvOut::create(path, &["kind", "id", "x", "y"])?;
    for (i, p) in points.iter().enumerate() {
        w.row([
            set.kinds[i].as_str().to_string(),
            set.ids[i].to_string(),
            fmt_f64(p[0]),
            fmt_f64(p[1]),
        ])?;
    }
    w.finish()
}

pub fn write_clusters(path: &Path, outcome: &crate::evalsweep::ClusterOutcome) -> Result<()> {
    let mut w = CsvOut::create(path, &["kind", "id", "cluster", "proxy_label", "proxy_score"])?;
    for (i, &label) in outcome.result.labels.iter().enumerate() {
        let kind = outcome.points.kinds[i];
        let id = outcome.points.ids[i];
        let (pl, ps) = match (kind, outcome.labels.get(&id)) {
            (PointKind::Item, Some(p)) => (p.label.to_string(), fmt_f64(p.score)),
            _ => (String::new(), String::new()),
        };
        w.row([kind.as_str().to_string(), id.to_string(), label.to_string(), pl, ps])?;
    }
    w.finish()
}

pub fn write_ratings(path: &Path, table: &RatingTable) -> Result<()> {
    let mut w = CsvOut::create(path, &["unit_id", "rater_id", "category"])?;
    for (unit, ratings) in table.units() {
        for (rater, c) in ratings {
            w.row([unit, rater.as_str(), &c.to_string()])?;
        }
    }
    w.finish()
}

pub fn read_ratings(path: &Path) -> Result<RatingTable> {
    let input = CsvIn::open(path, &["unit_id", "rater_id", "category"])?;
    let (ui, ri, ci) = (
        input.col("unit_id"),
        input.col("rater_id"),
        input.col("category"),
    );
    let mut table = RatingTable::new();
    input.for_each(|cx, line, rec| {
        let c: i64 = cx.parse(line, rec, ci)?;
        table.insert(rec.get(ui).unwrap_or(""), rec.get(ri).unwrap_or(""), c)
    })?;
    if table.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no ratings", path.display())));
    }
    Ok(table)
}

pub fn read_predictions(path: &Path) -> Result<PredictionPairs> {
    let cols = ["annotator_id", "comment_id", "human_label", "model_label"];
    let input = CsvIn::open(path, &cols)?;
    let idx: Vec<usize> = cols.iter().map(|c| input.col(c)).collect();
    let mut rows = Vec::new();
    input.for_each(|cx, line, rec| {
        rows.push(Prediction {
            annotator_id: rec.get(idx[0]).unwrap_or("").to_string(),
            comment_id: rec.get(idx[1]).unwrap_or("").to_string(),
            human_label: cx.parse(line, rec, idx[2])?,
            model_label: cx.parse(line, rec, idx[3])?,
        });
        Ok(())
    })?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no predictions", path.display())));
    }
    PredictionPairs::new(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgreementRow {
    pub metric: String,
    pub scope: String,
    pub value: f64,
    pub n_units: usize,
    pub band: String,
}

const AGREEMENT_HEADER: [&str; 5] = ["metric", "scope", "value", "n_units", "band"];

pub fn read_agreement_report(path: &Path) -> Result<Vec<AgreementRow>> {
    let input = CsvIn::open(path, &AGREEMENT_HEADER)?;
    let idx: Vec<usize> = AGREEMENT_HEADER.iter().map(|c| input.col(c)).collect();
    let mut out = Vec::new();
    input.for_each(|cx, line, rec| {
        out.push(AgreementRow {
            metric: rec.get(idx[0]).unwrap_or("").to_string(),
            scope: rec.get(idx[1]).unwrap_or("").to_string(),
            value: cx.parse(line, rec, idx[2])?,
            n_units: cx.parse(line, rec, idx[3])?,
            band: rec.get(idx[4]).unwrap_or("").to_string(),
        });
        Ok(())
    })?;
    Ok(out)
}

/// Replace rows with the same (metric, scope) in place and append new ones.
pub fn upsert_agreement_report(path: &Path, rows: &[AgreementRow]) -> Result<()> {
    let mut all = if path.is_file() {
        read_agreement_report(path)?
    } else {
        Vec::new()
    };
    for row in rows {
        match all.iter_mut().find(|r| r.metric == row.metric && r.scope == row.scope) {
            Some(existing) => *existing = row.clone(),
            None => all.push(row.clone()),
        }
    }
    let mut w = CsvOut::create(path, &AGREEMENT_HEADER)?;
    for r in &all {
        w.row([
            r.metric.clone(),
            r.scope.clone(),
            fmt_f64(r.value),
            r.n_units.to_string(),
            r.band.clone(),
        ])?;
    }
    w.finish()
}

pub fn write_sweep_report(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = CsvOut::create(
        path,
        &["seed", "replication", "proxy", "auc", "average_precision", "status"],
    )?;
    for r in &report.rows {
        w.row([
            r.seed.to_string(),
            r.replication.to_string(),
            r.proxy.as_str().to_string(),
            fmt_opt(r.auc),
            fmt_opt(r.average_precision),
            r.status.clone(),
        ])?;
    }
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsvRow {
    pub seed: u64,
    pub replication: u32,
    pub proxy: String,
    pub auc: f64,
    pub average_precision: f64,
    pub status: String,
}

pub fn read_sweep_report(path: &Path) -> Result<Vec<SweepCsvRow>> {
    let cols = ["seed", "replication", "proxy", "auc", "average_precision", "status"];
    let input = CsvIn::open(path, &cols)?;
    let idx: Vec<usize> = cols.iter().map(|c| input.col(c)).collect();
    let mut out = Vec::new();
    input.for_each(|cx, line, rec| {
        out.push(SweepCsvRow {
            seed: cx.parse(line, rec, idx[0])?,
            replication: cx.parse(line, rec, idx[1])?,
            proxy: rec.get(idx[2]).unwrap_or("").to_string(),
            auc: cx.parse(line, rec, idx[3])?,
            average_precision: cx.parse(line, rec, idx[4])?,
            status: rec.get(idx[5]).unwrap_or("").to_string(),
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn write_curve_points(path: &Path, curve: &CurveData) -> Result<()> {
    let header = match curve.kind {
        crate::evalsweep::CurveKind::Pr => ["recall", "precision"],
        crate::evalsweep::CurveKind::Roc => ["fpr", "tpr"],
    };
    let mut w = CsvOut::create(path, &header)?;
    for (x, y) in &curve.points {
        w.row([fmt_f64(*x), fmt_f64(*y)])?;
    }
    w.finish()
}

pub fn write_rejects(path: &Path, rejects: &[(String, Reject)]) -> Result<()> {
    let mut w = CsvOut::create(path, &["dataset", "line", "reason"])?;
    for (dataset, r) in rejects {
        w.row([dataset.clone(), r.line.to_string(), r.reason.clone()])?;
    }
    w.finish()
}

pub fn write_shortfall(path: &Path, shortfall: &[(String, Shortfall)]) -> Result<()> {
    let mut w = CsvOut::create(path, &["dataset", "comment_id", "available", "requested"])?;
    for (dataset, s) in shortfall {
        w.row([
            dataset.clone(),
            s.comment_id.clone(),
            s.available.to_string(),
            s.requested.to_string(),
        ])?;
    }
    w.finish()
}

pub fn write_unified(path: &Path, annotations: &[UnifiedAnnotation]) -> Result<()> {
    let mut table = RatingTable::new();
    for a in annotations {
        table.insert(a.comment_id.clone(), a.rater_id.clone(), i64::from(a.binary_value))?;
    }
    write_ratings(path, &table)
}
