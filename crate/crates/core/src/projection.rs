//! Embedding preprocessing and 2-D projections.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointKind {
    Item,
    Annotator,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Item => "item",
            PointKind::Annotator => "annotator",
        }
    }
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "item" => Ok(PointKind::Item),
            "annotator" => Ok(PointKind::Annotator),
            other => Err(Error::InvalidConfig(format!("unknown point kind `{other}`"))),
        }
    }
}

/// Tagged n × d embedding matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub kinds: Vec<PointKind>,
    pub ids: Vec<u32>,
    pub data: Vec<f64>,
    pub dim: usize,
}

impl EmbeddingSet {
    pub fn new(kinds: Vec<PointKind>, ids: Vec<u32>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be >= 1".into()));
        }
        if kinds.len() != ids.len() || data.len() != kinds.len() * dim {
            return Err(Error::InvalidConfig(format!(
                "embedding shape mismatch: {} kinds, {} ids, {} values for dim {dim}",
                kinds.len(),
                ids.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("embedding contains non-finite values".into()));
        }
        Ok(Self { kinds, ids, data, dim })
    }

    /// Items followed by annotators, taken from a fitted factor model.
    pub fn from_factors(model: &crate::wals::FactorModel, index: &crate::wals::IdIndex) -> Self {
        let mut kinds = vec![PointKind::Item; model.n_items];
        kinds.extend(std::iter::repeat_n(PointKind::Annotator, model.n_annotators));
        let mut ids = index.item_ids.clone();
        ids.extend_from_slice(&index.annotator_ids);
        let mut data = model.item_factors.clone();
        data.extend_from_slice(&model.annotator_factors);
        Self {
            kinds,
            ids,
            data,
            dim: model.dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows of one kind, in their original order.
    pub fn select(&self, kind: PointKind) -> EmbeddingSet {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.kinds[i] == kind).collect();
        EmbeddingSet {
            kinds: keep.iter().map(|&i| self.kinds[i]).collect(),
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
            data: keep.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            dim: self.dim,
        }
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    fn with_data(&self, data: Vec<f64>) -> Self {
        Self {
            kinds: self.kinds.clone(),
            ids: self.ids.clone(),
            data,
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreprocessMode {
    #[default]
    None,
    Standardize,
    Whiten,
}

impl FromStr for PreprocessMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PreprocessMode::None),
            "standardize" => Ok(PreprocessMode::Standardize),
            "whiten" => Ok(PreprocessMode::Whiten),
            other => Err(Error::InvalidConfig(format!("unknown preprocess mode `{other}`"))),
        }
    }
}

fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols()).map(|j| m.column(j).mean()).collect()
}

/// Sample covariance (n − 1 denominator) of the centred matrix.
fn covariance(centred: &DMatrix<f64>) -> DMatrix<f64> {
    let n = centred.nrows() as f64;
    (centred.transpose() * centred) / (n - 1.0)
}

fn centre(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mu) in means.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(-mu);
    }
    out
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Standardise columns or whiten the whole embedding.
///
/// Whitening multiplies the centred data by the symmetric inverse square
/// root of the sample covariance, eigenvalues floored at 1e-10.
pub fn preprocess(set: &EmbeddingSet, mode: PreprocessMode) -> Result<EmbeddingSet> {
    if mode == PreprocessMode::None {
        return Ok(set.clone());
    }
    if set.len() < 2 {
        return Err(Error::InvalidConfig(
            "standardize/whiten need at least 2 rows".into(),
        ));
    }
    let centred = centre(&set.to_matrix());
    let out = match mode {
        PreprocessMode::None => unreachable!(),
        PreprocessMode::Standardize => {
            let n = centred.nrows() as f64;
            let mut out = centred;
            for j in 0..out.ncols() {
                let var = out.column(j).iter().map(|v| v * v).sum::<f64>() / (n - 1.0);
                if var > 0.0 {
                    out.column_mut(j).scale_mut(1.0 / var.sqrt());
                } else {
                    out.column_mut(j).fill(0.0);
                }
            }
            out
        }
        PreprocessMode::Whiten => {
            let eig = SymmetricEigen::new(covariance(&centred));
            let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(1e-10).sqrt());
            let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose();
            centred * w
        }
    };
    Ok(set.with_data(row_major(&out)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    #[default]
    Neighbor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionParams {
    pub method: ProjectionMethod,
    pub n_neighbors: usize,
    pub epochs: usize,
    pub negative_samples: usize,
    pub seed: u64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            method: ProjectionMethod::Neighbor,
            n_neighbors: 15,
            epochs: 200,
            negative_samples: 5,
            seed: 0,
        }
    }
}

/// Top-two principal component scores. Each axis is oriented so that its
/// largest-magnitude loading is positive.
fn pca_2d(set: &EmbeddingSet) -> Vec<[f64; 2]> {
    let centred = centre(&set.to_matrix());
    let eig = SymmetricEigen::new(covariance(&centred));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let pivot = v
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, x)| x)
                .unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            v.into_iter().map(|x| x * sign).collect()
        })
        .collect();
    (0..centred.nrows())
        .map(|i| {
            let row = centred.row(i);
            let score = |axis: &[f64]| row.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            [score(&axes[0]), score(&axes[1])]
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k nearest neighbours of every row (excluding itself), ties by index.
pub(crate) fn knn(set: &EmbeddingSet, k: usize) -> Vec<Vec<(usize, f64)>> {
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(usize, f64)> = (0..set.len())
                .filter(|&j| j != i)
                .map(|j| (j, sq_dist(set.row(i), set.row(j)).sqrt()))
                .collect();
            let by = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            if k < d.len() {
                d.select_nth_unstable_by(k, by);
                d.truncate(k);
            }
            d.sort_by(by);
            d
        })
        .collect()
}

/// Fuzzy neighbour-graph edge weights, symmetrised by probabilistic union.
fn edge_weights(neighbors: &[Vec<(usize, f64)>]) -> Vec<(usize, usize, f64)> {
    let k = neighbors.first().map_or(0, Vec::len);
    let target = (k as f64).log2().max(1e-3);
    let mut directed = std::collections::BTreeMap::new();
    for (i, nb) in neighbors.iter().enumerate() {
        let rho = nb.iter().map(|x| x.1).find(|&d| d > 0.0).unwrap_or(0.0);
        // Bisection on the bandwidth so the weights sum to log2(k).
        let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
        let mut sigma = 1.0;
        for _ in 0..64 {
            let s: f64 = nb.iter().map(|&(_, d)| (-((d - rho).max(0.0)) / sigma).exp()).sum();
            if (s - target).abs() < 1e-5 {
                break;
            }
            if s > target {
                hi = sigma;
                sigma = (lo + hi) / 2.0;
            } else {
                lo = sigma;
                sigma = if hi.is_finite() { (lo + hi) / 2.0 } else { sigma * 2.0 };
            }
        }
        for &(j, d) in nb {
            let w = (-((d - rho).max(0.0)) / sigma).exp();
            directed.insert((i, j), w);
        }
    }
    let mut out = std::collections::BTreeMap::new();
    for (&(i, j), &w) in &directed {
        let back = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let key = (i.min(j), i.max(j));
        out.entry(key).or_insert(w + back - w * back);
    }
    out.into_iter().map(|((i, j), w)| (i, j, w)).collect()
}

/// Attraction/repulsion layout of the neighbour graph.
///
/// Curve parameters correspond to a minimum distance of 0.1 with unit spread.
/// The update loop is sequential, so the layout is fully determined by the
/// seed.
fn neighbor_layout(set: &EmbeddingSet, params: &ProjectionParams) -> Vec<[f64; 2]> {
    const A: f64 = 1.577;
    const B: f64 = 0.8951;
    const CLIP: f64 = 4.0;

    let n = set.len();
    let edges = edge_weights(&knn(set, params.n_neighbors));

    let mut pos = pca_2d(set);
    let extent = pos
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    let scale = if extent > 0.0 { 10.0 / extent } else { 1.0 };
    let seed = rng::derive_seed(params.seed, "layout");
    for (i, p) in pos.iter_mut().enumerate() {
        // Small jitter separates coincident points.
        p[0] = p[0] * scale + 1e-4 * (rng::uniform(seed, &[i as u64, 0]) - 0.5);
        p[1] = p[1] * scale + 1e-4 * (rng::uniform(seed, &[i as u64, 1]) - 0.5);
    }

    let epochs = params.epochs.max(1);
    for epoch in 0..epochs {
        let alpha = 1.0 - epoch as f64 / epochs as f64;
        for (e, &(i, j, w)) in edges.iter().enumerate() {
            if rng::uniform(seed, &[epoch as u64, e as u64, u64::MAX]) >= w {
                continue;
            }
            let (dx, dy) = (pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]);
            let d2 = dx * dx + dy * dy;
            if d2 > 0.0 {
                let coef = -2.0 * A * B * d2.powf(B - 1.0) / (1.0 + A * d2.powf(B));
                let gx = (coef * dx).clamp(-CLIP, CLIP) * alpha;
                let gy = (coef * dy).clamp(-CLIP, CLIP) * alpha;
                pos[i][0] += gx;
                pos[i][1] += gy;
                pos[j][0] -= gx;
                pos[j][1] -= gy;
            }
            for s in 0..params.negative_samples {
                let r = (rng::key(seed, &[epoch as u64, e as u64, s as u64]) % n as u64) as usize;
                if r == i {
                    continue;
                }
                let (dx, dy) = (pos[i][0] - pos[r][0], pos[i][1] - pos[r][1]);
                let d2 = dx * dx + dy * dy;
                let coef = 2.0 * B / ((0.001 + d2) * (1.0 + A * d2.powf(B)));
                pos[i][0] += (coef * dx).clamp(-CLIP, CLIP) * alpha;
                pos[i][1] += (coef * dy).clamp(-CLIP, CLIP) * alpha;
            }
        }
    }
    pos
}

/// Project an embedding to two dimensions.
pub fn project_2d(set: &EmbeddingSet, params: &ProjectionParams) -> Result<Vec<[f64; 2]>> {
    if set.dim < 2 {
        return Err(Error::InvalidConfig("projection needs at least 2 input dimensions".into()));
    }
    if params.n_neighbors < 2 || set.len() <= params.n_neighbors {
        return Err(Error::InvalidConfig(format!(
            "n_neighbors must be >= 2 and below the point count ({} points, {} neighbours)",
            set.len(),
            params.n_neighbors
        )));
    }
    Ok(match params.method {
        ProjectionMethod::Pca => pca_2d(set),
        ProjectionMethod::Neighbor => neighbor_layout(set, params),
    })
}

/// Wrap 2-D points back into an embedding set with the original tags.
pub fn projected_set(set: &EmbeddingSet, points: &[[f64; 2]]) -> EmbeddingSet {
    EmbeddingSet {
        kinds: set.kinds.clone(),
        ids: set.ids.clone(),
        data: points.iter().flat_map(|p| p.iter().copied()).collect(),
        dim: 2,
    }
}
