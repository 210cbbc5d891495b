//! Weighted alternating least squares.
//!
//! The objective over an item × annotator matrix is
//!
//! ```text
//! J = Σ_obs w·(v − x_i·y_u)² + w0·Σ_unobs (x_i·y_u)² + λ(Σ‖x_i‖² + Σ‖y_u‖²)
//! ```
//!
//! Each half-step solves every row of one factor matrix exactly (a d × d
//! ridge system), so J never increases between half-steps. Rows are solved in
//! parallel into disjoint storage, which keeps results bitwise independent of
//! the thread count.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::simgen::AnnotationRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub item: usize,
    pub annotator: usize,
    pub value: f64,
    pub weight: f64,
}

impl Entry {
    pub fn new(item: usize, annotator: usize, value: f64) -> Self {
        Self {
            item,
            annotator,
            value,
            weight: 1.0,
        }
    }

    /// Binary class of the entry; values ≥ 0.5 count as positive.
    pub fn class(&self) -> u8 {
        u8::from(self.value >= 0.5)
    }
}

/// Sparse item × annotator matrix with per-entry weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatingMatrix {
    n_items: usize,
    n_annotators: usize,
    entries: Vec<Entry>,
}

impl SparseRatingMatrix {
    pub fn new(n_items: usize, n_annotators: usize, entries: Vec<Entry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.item >= n_items || e.annotator >= n_annotators {
                return Err(Error::IndexOutOfRange(format!(
                    "entry ({}, {}) outside {n_items} x {n_annotators}",
                    e.item, e.annotator
                )));
            }
            if !(e.weight >= 0.0 && e.weight.is_finite() && e.value.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "entry ({}, {}) has a non-finite value or negative weight",
                    e.item, e.annotator
                )));
            }
            if !seen.insert((e.item, e.annotator)) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate entry ({}, {})",
                    e.item, e.annotator
                )));
            }
        }
        Ok(Self {
            n_items,
            n_annotators,
            entries,
        })
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_annotators(&self) -> usize {
        self.n_annotators
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Rows (items) with no observed entries.
    pub fn cold_items(&self) -> Vec<usize> {
        cold(self.n_items, self.entries.iter().map(|e| e.item))
    }

    /// Columns (annotators) with no observed entries.
    pub fn cold_annotators(&self) -> Vec<usize> {
        cold(self.n_annotators, self.entries.iter().map(|e| e.annotator))
    }

    fn with_entries(&self, entries: Vec<Entry>) -> Self {
        Self {
            n_items: self.n_items,
            n_annotators: self.n_annotators,
            entries,
        }
    }
}

fn cold(n: usize, used: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut hit = vec![false; n];
    for i in used {
        hit[i] = true;
    }
    (0..n).filter(|&i| !hit[i]).collect()
}

/// Dense index spaces for item and annotator ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IdIndex {
    pub item_ids: Vec<u32>,
    pub annotator_ids: Vec<u32>,
}

/// Build a matrix from annotation records; ids are mapped to dense indices
/// in ascending order.
pub fn matrix_from_records(records: &[AnnotationRecord]) -> Result<(SparseRatingMatrix, IdIndex)> {
    let item_ids: Vec<u32> = records
        .iter()
        .map(|r| r.item_id)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let annotator_ids: Vec<u32> = records
        .iter()
        .map(|r| r.annotator_id)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let item_pos: BTreeMap<u32, usize> = item_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let ann_pos: BTreeMap<u32, usize> = annotator_ids
        .iter()
        .enumerate()
        .map(|(i, &id)| (id, i))
        .collect();
    let entries = records
        .iter()
        .map(|r| Entry::new(item_pos[&r.item_id], ann_pos[&r.annotator_id], f64::from(r.value)))
        .collect();
    let matrix = SparseRatingMatrix::new(item_ids.len(), annotator_ids.len(), entries)?;
    Ok((
        matrix,
        IdIndex {
            item_ids,
            annotator_ids,
        },
    ))
}

/// Stratified train/dev partition.
///
/// Within each value class, `round(dev_fraction · count)` entries (at least
/// one, at most `count − 1`) are moved to dev by a seeded shuffle.
pub fn split_train_dev(
    matrix: &SparseRatingMatrix,
    dev_fraction: f64,
    seed: u64,
) -> Result<(SparseRatingMatrix, SparseRatingMatrix)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "dev_fraction must lie strictly between 0 and 1, got {dev_fraction}"
        )));
    }
    if matrix.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty matrix".into()));
    }
    let seed = rng::derive_seed(seed, "split");
    let mut train = Vec::new();
    let mut dev = Vec::new();
    for class in [0u8, 1u8] {
        let mut idx: Vec<usize> = (0..matrix.entries.len())
            .filter(|&i| matrix.entries[i].class() == class)
            .collect();
        if idx.len() < 2 {
            return Err(Error::Stratification {
                class,
                count: idx.len(),
            });
        }
        idx.shuffle(&mut rng::stream(seed, &[u64::from(class)]));
        let n_dev = ((idx.len() as f64 * dev_fraction).round() as usize).clamp(1, idx.len() - 1);
        let (d, t) = idx.split_at(n_dev);
        dev.extend_from_slice(d);
        train.extend_from_slice(t);
    }
    train.sort_unstable();
    dev.sort_unstable();
    let pick = |ix: &[usize]| ix.iter().map(|&i| matrix.entries[i]).collect::<Vec<_>>();
    Ok((matrix.with_entries(pick(&train)), matrix.with_entries(pick(&dev))))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalsParams {
    pub dim: usize,
    pub reg: f64,
    pub iterations: usize,
    pub unobserved_weight: f64,
}

impl Default for WalsParams {
    fn default() -> Self {
        Self {
            dim: 3,
            reg: 0.1,
            iterations: 5,
            unobserved_weight: 0.0,
        }
    }
}

impl WalsParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be at least 1".into()));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::InvalidConfig("reg must be a finite value >= 0".into()));
        }
        if !(self.unobserved_weight >= 0.0 && self.unobserved_weight.is_finite()) {
            return Err(Error::InvalidConfig(
                "unobserved_weight must be a finite value >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Fitted item and annotator factors (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    pub item_factors: Vec<f64>,
    pub annotator_factors: Vec<f64>,
    pub n_items: usize,
    pub n_annotators: usize,
    pub params: WalsParams,
    /// J at initialisation followed by J after every half-step.
    pub objective_trace: Vec<f64>,
}

impl FactorModel {
    pub fn dim(&self) -> usize {
        self.params.dim
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.item_factors[i * d..(i + 1) * d]
    }

    pub fn annotator(&self, u: usize) -> &[f64] {
        let d = self.dim();
        &self.annotator_factors[u * d..(u + 1) * d]
    }

    /// Raw inner-product reconstruction.
    pub fn predict(&self, item: usize, annotator: usize) -> Result<f64> {
        if item >= self.n_items || annotator >= self.n_annotators {
            return Err(Error::IndexOutOfRange(format!(
                "({item}, {annotator}) outside {} x {}",
                self.n_items, self.n_annotators
            )));
        }
        Ok(dot(self.item(item), self.annotator(annotator)))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compressed adjacency: for each row, the (column, value, weight) triples.
struct Adjacency {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn build(n_rows: usize, triples: impl Iterator<Item = (usize, usize, f64, f64)>) -> Self {
        let mut rows: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n_rows];
        for (r, c, v, w) in triples {
            rows[r].push((c, v, w));
        }
        let mut offsets = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for mut row in rows {
            row.sort_by_key(|t| t.0);
            for (c, v, w) in row {
                cols.push(c);
                values.push(v);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        Self {
            offsets,
            cols,
            values,
            weights,
        }
    }

    fn row(&self, r: usize) -> std::ops::Range<usize> {
        self.offsets[r]..self.offsets[r + 1]
    }
}

/// Gram matrix `FᵀF` of a row-major n × d factor matrix.
fn gram(factors: &[f64], d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for row in factors.chunks_exact(d) {
        for a in 0..d {
            for b in 0..d {
                g[a * d + b] += row[a] * row[b];
            }
        }
    }
    g
}

/// In-place Cholesky solve of a symmetric d × d system. Returns false when
/// the matrix is not numerically positive definite.
fn cholesky_solve(a: &mut [f64], b: &mut [f64], d: usize) -> bool {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0f64, f64::max);
    let tol = 1e-13 * scale.max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag.is_nan() || diag <= tol {
            return false;
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l;
        }
    }
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * d + k] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = b[i];
        for k in i + 1..d {
            s -= a[k * d + i] * b[k];
        }
        b[i] = s / a[i * d + i];
    }
    true
}

/// Assemble the ridge system for one row: returns (A, b) in row-major form.
fn normal_equations(
    adj: &Adjacency,
    row: usize,
    other: &[f64],
    other_gram: &[f64],
    d: usize,
    reg: f64,
    w0: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut a: Vec<f64> = other_gram.iter().map(|g| g * w0).collect();
    for k in 0..d {
        a[k * d + k] += reg;
    }
    let mut b = vec![0.0; d];
    for idx in adj.row(row) {
        let y = &other[adj.cols[idx] * d..(adj.cols[idx] + 1) * d];
        let w = adj.weights[idx];
        let v = adj.values[idx];
        let coef = w - w0;
        for p in 0..d {
            b[p] += w * v * y[p];
            for q in 0..d {
                a[p * d + q] += coef * y[p] * y[q];
            }
        }
    }
    (a, b)
}

/// Solve every row of `target` against the fixed `other` factors.
fn half_step(
    adj: &Adjacency,
    target: &mut [f64],
    other: &[f64],
    d: usize,
    reg: f64,
    w0: f64,
    side: &'static str,
) -> Result<()> {
    let other_gram = if w0 > 0.0 { gram(other, d) } else { vec![0.0; d * d] };
    let failed = target
        .par_chunks_mut(d)
        .enumerate()
        .filter_map(|(row, out)| {
            let (mut a, mut b) = normal_equations(adj, row, other, &other_gram, d, reg, w0);
            if cholesky_solve(&mut a, &mut b, d) {
                out.copy_from_slice(&b);
                None
            } else {
                Some(row)
            }
        })
        .min();
    match failed {
        Some(row) => Err(Error::SingularSystem { side, row }),
        None => Ok(()),
    }
}

/// Weighted objective J for the given factors.
pub fn objective(
    matrix: &SparseRatingMatrix,
    item_factors: &[f64],
    annotator_factors: &[f64],
    d: usize,
    reg: f64,
    w0: f64,
) -> f64 {
    let mut observed_loss = 0.0;
    let mut observed_sq = 0.0;
    for e in &matrix.entries {
        let p = dot(
            &item_factors[e.item * d..(e.item + 1) * d],
            &annotator_factors[e.annotator * d..(e.annotator + 1) * d],
        );
        observed_loss += e.weight * (e.value - p).powi(2);
        observed_sq += p * p;
    }
    let unobserved = if w0 > 0.0 {
        let gx = gram(item_factors, d);
        let gy = gram(annotator_factors, d);
        let all_sq: f64 = gx.iter().zip(&gy).map(|(a, b)| a * b).sum();
        w0 * (all_sq - observed_sq)
    } else {
        0.0
    };
    let norms: f64 = item_factors.iter().chain(annotator_factors).map(|v| v * v).sum();
    observed_loss + unobserved + reg * norms
}

/// Fit item and annotator factors by alternating exact ridge solves.
///
/// Factors start from a seeded Gaussian with standard deviation `1/√dim`.
/// Each iteration solves all item rows, then all annotator rows.
pub fn fit_wals(train: &SparseRatingMatrix, params: &WalsParams, seed: u64) -> Result<FactorModel> {
    params.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no observed entries to factorise".into()));
    }
    let d = params.dim;
    let (n_i, n_u) = (train.n_items, train.n_annotators);
    let scale = 1.0 / (d as f64).sqrt();
    let mut init = rng::stream(rng::derive_seed(seed, "wals-init"), &[]);
    let mut item_factors: Vec<f64> = (0..n_i * d)
        .map(|_| scale * init.sample::<f64, _>(StandardNormal))
        .collect();
    let mut annotator_factors: Vec<f64> = (0..n_u * d)
        .map(|_| scale * init.sample::<f64, _>(StandardNormal))
        .collect();

    let by_item = Adjacency::build(
        n_i,
        train.entries.iter().map(|e| (e.item, e.annotator, e.value, e.weight)),
    );
    let by_annotator = Adjacency::build(
        n_u,
        train.entries.iter().map(|e| (e.annotator, e.item, e.value, e.weight)),
    );

    let (reg, w0) = (params.reg, params.unobserved_weight);
    let mut trace = Vec::with_capacity(2 * params.iterations + 1);
    trace.push(objective(train, &item_factors, &annotator_factors, d, reg, w0));
    for _ in 0..params.iterations {
        half_step(&by_item, &mut item_factors, &annotator_factors, d, reg, w0, "item")?;
        trace.push(objective(train, &item_factors, &annotator_factors, d, reg, w0));
        half_step(&by_annotator, &mut annotator_factors, &item_factors, d, reg, w0, "annotator")?;
        trace.push(objective(train, &item_factors, &annotator_factors, d, reg, w0));
    }

    Ok(FactorModel {
        item_factors,
        annotator_factors,
        n_items: n_i,
        n_annotators: n_u,
        params: *params,
        objective_trace: trace,
    })
}

/// Train/dev reconstruction errors split by value class.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub pos_train: Option<f64>,
    pub neg_train: Option<f64>,
    pub pos_dev: Option<f64>,
    pub neg_dev: Option<f64>,
    pub objective_trace: Vec<f64>,
}

impl FitReport {
    /// Mean of the two dev errors, when both are defined.
    pub fn dev_score(&self) -> Option<f64> {
        Some((self.pos_dev? + self.neg_dev?) / 2.0)
    }

    /// `(name, value)` rows in reporting order.
    pub fn metrics(&self) -> [(&'static str, Option<f64>); 4] {
        [
            ("pos_train", self.pos_train),
            ("neg_train", self.neg_train),
            ("pos_dev", self.pos_dev),
            ("neg_dev", self.neg_dev),
        ]
    }
}

fn check_shape(model: &FactorModel, matrix: &SparseRatingMatrix) -> Result<()> {
    if model.n_items != matrix.n_items || model.n_annotators != matrix.n_annotators {
        return Err(Error::InputMismatch(format!(
            "model is {} x {}, matrix is {} x {}",
            model.n_items, model.n_annotators, matrix.n_items, matrix.n_annotators
        )));
    }
    Ok(())
}

/// RMSE over the entries of one class, with predictions clipped to [0, 1].
fn class_rmse(model: &FactorModel, matrix: &SparseRatingMatrix, class: u8) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for e in matrix.entries.iter().filter(|e| e.class() == class) {
        let p = dot(model.item(e.item), model.annotator(e.annotator)).clamp(0.0, 1.0);
        sum += (e.value - p).powi(2);
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

/// Root-mean-square reconstruction error over all entries of `matrix`.
pub fn rmse(model: &FactorModel, matrix: &SparseRatingMatrix, clip: bool) -> Result<f64> {
    check_shape(model, matrix)?;
    if matrix.is_empty() {
        return Err(Error::EmptyInput("rmse over an empty matrix".into()));
    }
    let sum: f64 = matrix
        .entries
        .iter()
        .map(|e| {
            let p = dot(model.item(e.item), model.annotator(e.annotator));
            let p = if clip { p.clamp(0.0, 1.0) } else { p };
            (e.value - p).powi(2)
        })
        .sum();
    Ok((sum / matrix.entries.len() as f64).sqrt())
}

pub fn error_report(
    model: &FactorModel,
    train: &SparseRatingMatrix,
    dev: &SparseRatingMatrix,
) -> Result<FitReport> {
    check_shape(model, train)?;
    check_shape(model, dev)?;
    Ok(FitReport {
        pos_train: class_rmse(model, train, 1),
        neg_train: class_rmse(model, train, 0),
        pos_dev: class_rmse(model, dev, 1),
        neg_dev: class_rmse(model, dev, 0),
        objective_trace: model.objective_trace.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub dim: usize,
    pub reg: f64,
    pub iterations: usize,
    pub outcome: std::result::Result<FitReport, String>,
}

impl GridCell {
    pub fn dev_score(&self) -> Option<f64> {
        self.outcome.as_ref().ok().and_then(FitReport::dev_score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearch {
    pub best: WalsParams,
    pub best_score: f64,
    pub table: Vec<GridCell>,
}

/// Fit every (dim, reg, iterations) combination with a fixed seed and pick
/// the lowest mean dev error; ties go to smaller dim, then smaller reg, then
/// fewer iterations. Failing cells are kept in the table.
pub fn grid_search(
    train: &SparseRatingMatrix,
    dev: &SparseRatingMatrix,
    dims: &[usize],
    regs: &[f64],
    iterations: &[usize],
    unobserved_weight: f64,
    seed: u64,
) -> Result<GridSearch> {
    if dims.is_empty() || regs.is_empty() || iterations.is_empty() {
        return Err(Error::InvalidConfig("grid search needs non-empty grids".into()));
    }
    let mut table = Vec::with_capacity(dims.len() * regs.len() * iterations.len());
    for &dim in dims {
        for &reg in regs {
            for &iters in iterations {
                let params = WalsParams {
                    dim,
                    reg,
                    iterations: iters,
                    unobserved_weight,
                };
                let outcome = fit_wals(train, &params, seed)
                    .and_then(|m| error_report(&m, train, dev))
                    .map_err(|e| e.to_string());
                table.push(GridCell {
                    dim,
                    reg,
                    iterations: iters,
                    outcome,
                });
            }
        }
    }
    let best = table
        .iter()
        .filter_map(|c| c.dev_score().map(|s| (s, c)))
        .min_by(|(sa, a), (sb, b)| {
            sa.total_cmp(sb)
                .then(a.dim.cmp(&b.dim))
                .then(a.reg.total_cmp(&b.reg))
                .then(a.iterations.cmp(&b.iterations))
        })
        .map(|(s, c)| {
            (
                s,
                WalsParams {
                    dim: c.dim,
                    reg: c.reg,
                    iterations: c.iterations,
                    unobserved_weight,
                },
            )
        });
    match best {
        Some((best_score, best)) => Ok(GridSearch {
            best,
            best_score,
            table,
        }),
        None => Err(Error::undefined(
            "grid search",
            "every cell failed or had an undefined dev error",
        )),
    }
}
