//! Density-based hierarchical clustering and cluster-derived proxy labels.
//!
//! The clustering follows the HDBSCAN construction: core distances, a
//! minimum spanning tree under mutual reachability, a single-linkage
//! hierarchy condensed by minimum cluster size, and excess-of-mass cluster
//! selection.

use std::collections::BTreeMap;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simgen::AnnotationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSpace {
    #[default]
    Embedding,
    Projection,
}

impl FromStr for ClusterSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embedding" => Ok(ClusterSpace::Embedding),
            "projection" => Ok(ClusterSpace::Projection),
            other => Err(Error::InvalidConfig(format!("unknown cluster space `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Defaults to `min_cluster_size` when unset.
    pub min_samples: Option<usize>,
    pub cluster_space: ClusterSpace,
    /// Let the root of the condensed tree be selected as a cluster.
    pub allow_single_cluster: bool,
    /// Cluster annotator points together with items.
    pub include_annotators: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 15,
            min_samples: None,
            cluster_space: ClusterSpace::Embedding,
            allow_single_cluster: true,
            include_annotators: false,
        }
    }
}

impl ClusterParams {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_cluster_size < 2 || self.min_samples() < 2 {
            return Err(Error::InvalidConfig(
                "min_cluster_size and min_samples must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major point cloud.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} values do not form rows of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("points contain non-finite values".into()));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Distance from each point to its `min_samples`-th nearest neighbour,
/// counting the point itself as the first.
pub fn core_distances(points: Points<'_>, min_samples: usize) -> Vec<f64> {
    let n = points.len();
    let k = min_samples.clamp(1, n.max(1)) - 1;
    (0..n)
        .into_par_iter()
        .map(|i| {
            if k == 0 {
                return 0.0;
            }
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| points.distance(i, j)).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

pub fn mutual_reachability(points: Points<'_>, core: &[f64], a: usize, b: usize) -> f64 {
    points.distance(a, b).max(core[a]).max(core[b])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl MstEdge {
    /// Total order used for tie-breaking: weight, then the smaller index
    /// pair.
    fn key(&self) -> (f64, usize, usize) {
        (self.weight, self.a.min(self.b), self.a.max(self.b))
    }
}

fn key_less(x: (f64, usize, usize), y: (f64, usize, usize)) -> bool {
    x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)).is_lt()
}

/// Prim's algorithm over the dense mutual-reachability graph. Edges come back
/// sorted by (weight, smaller index, larger index).
pub fn mutual_reachability_mst(points: Points<'_>, core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best: Vec<Option<MstEdge>> = vec![None; n];
    let mut edges = Vec::with_capacity(n - 1);
    let mut current = 0usize;
    in_tree[0] = true;
    for _ in 1..n {
        let cur = current;
        best.par_iter_mut().enumerate().for_each(|(j, slot)| {
            if in_tree[j] {
                return;
            }
            let cand = MstEdge {
                a: cur,
                b: j,
                weight: mutual_reachability(points, core, cur, j),
            };
            match slot {
                Some(old) if !key_less(cand.key(), old.key()) => {}
                _ => *slot = Some(cand),
            }
        });
        let (next, edge) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .filter_map(|(j, e)| e.map(|e| (j, e)))
            .reduce(|x, y| if key_less(y.1.key(), x.1.key()) { y } else { x })
            .expect("graph is complete");
        in_tree[next] = true;
        edges.push(edge);
        current = next;
    }
    edges.sort_by(|x, y| {
        let (kx, ky) = (x.key(), y.key());
        kx.0.total_cmp(&ky.0).then(kx.1.cmp(&ky.1)).then(kx.2.cmp(&ky.2))
    });
    edges
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Binary single-linkage node; ids below `n` are leaves.
#[derive(Debug, Clone, Copy)]
struct Merge {
    left: usize,
    right: usize,
    distance: f64,
    size: usize,
}

fn single_linkage(n: usize, mst: &[MstEdge]) -> Vec<Merge> {
    // Union-find over 2n − 1 node ids; each root maps to its current node.
    let mut uf = UnionFind::new(2 * n);
    let mut sizes = vec![1usize; 2 * n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (k, e) in mst.iter().enumerate() {
        let (ra, rb) = (uf.find(e.a), uf.find(e.b));
        let node = n + k;
        let size = sizes[ra] + sizes[rb];
        merges.push(Merge {
            left: ra,
            right: rb,
            distance: e.weight,
            size,
        });
        uf.parent[ra] = node;
        uf.parent[rb] = node;
        sizes[node] = size;
    }
    merges
}

/// Condensed cluster hierarchy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CondensedTree {
    pub parent: Vec<Option<usize>>,
    pub birth_lambda: Vec<f64>,
    pub size: Vec<usize>,
    pub stability: Vec<f64>,
    /// For each point: the deepest condensed cluster it belonged to and the
    /// λ at which it left.
    pub point_cluster: Vec<usize>,
    pub point_lambda: Vec<f64>,
}

impl CondensedTree {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn is_ancestor(&self, ancestor: usize, mut node: usize) -> bool {
        while let Some(p) = self.parent[node] {
            if p == ancestor {
                return true;
            }
            node = p;
        }
        false
    }
}

fn lambda(distance: f64) -> f64 {
    1.0 / distance.max(1e-12)
}

fn condense(n: usize, merges: &[Merge], min_cluster_size: usize) -> CondensedTree {
    let mut tree = CondensedTree {
        parent: vec![None],
        birth_lambda: vec![0.0],
        size: vec![n],
        stability: vec![0.0],
        point_cluster: vec![0; n],
        point_lambda: vec![0.0; n],
    };
    if n < 2 {
        return tree;
    }
    let node_size = |id: usize| if id < n { 1 } else { merges[id - n].size };

    fn leaves(id: usize, n: usize, merges: &[Merge], out: &mut Vec<usize>) {
        let mut stack = vec![id];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                stack.push(merges[x - n].left);
                stack.push(merges[x - n].right);
            }
        }
    }

    // Merges at equal distance are collapsed into one multi-way split so
    // the condensed tree does not depend on how ties were ordered.
    let split_children = |node: usize| -> Vec<usize> {
        let d = merges[node - n].distance;
        let mut out = Vec::new();
        let mut stack = vec![merges[node - n].right, merges[node - n].left];
        while let Some(c) = stack.pop() {
            if c >= n && merges[c - n].distance == d {
                stack.push(merges[c - n].right);
                stack.push(merges[c - n].left);
            } else {
                out.push(c);
            }
        }
        out
    };

    let root = n + merges.len() - 1;
    let mut stack = vec![(root, 0usize)];
    let mut buf = Vec::new();
    while let Some((node, cluster)) = stack.pop() {
        if node < n {
            // A cluster that runs all the way down to a single point.
            tree.point_cluster[node] = cluster;
            tree.point_lambda[node] = tree.birth_lambda[cluster];
            continue;
        }
        let lam = lambda(merges[node - n].distance);
        let children = split_children(node);
        let big: Vec<usize> = children
            .iter()
            .copied()
            .filter(|&c| node_size(c) >= min_cluster_size)
            .collect();
        for &c in children.iter().filter(|&&c| node_size(c) < min_cluster_size) {
            buf.clear();
            leaves(c, n, merges, &mut buf);
            for &p in &buf {
                tree.point_cluster[p] = cluster;
                tree.point_lambda[p] = lam;
                tree.stability[cluster] += lam - tree.birth_lambda[cluster];
            }
        }
        if big.len() == 1 {
            stack.push((big[0], cluster));
        } else if big.len() > 1 {
            let mut kids = Vec::with_capacity(big.len());
            for &child in &big {
                let size = node_size(child);
                let id = tree.parent.len();
                tree.parent.push(Some(cluster));
                tree.birth_lambda.push(lam);
                tree.size.push(size);
                tree.stability.push(0.0);
                tree.stability[cluster] += (lam - tree.birth_lambda[cluster]) * size as f64;
                kids.push((child, id));
            }
            stack.extend(kids.into_iter().rev());
        }
    }
    tree
}

/// Excess-of-mass selection. A node beats its descendants on ties.
fn select_clusters(tree: &CondensedTree, allow_single_cluster: bool) -> Vec<usize> {
    let k = tree.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, p) in tree.parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(c);
        }
    }
    let mut selected = vec![false; k];
    let mut subtree = vec![0.0; k];
    // Children are always created after their parent.
    for c in (0..k).rev() {
        let child_sum: f64 = children[c].iter().map(|&x| subtree[x]).sum();
        let eligible = c != 0 || allow_single_cluster;
        if children[c].is_empty() {
            selected[c] = eligible;
            subtree[c] = tree.stability[c];
        } else if eligible && tree.stability[c] >= child_sum {
            selected[c] = true;
            subtree[c] = tree.stability[c];
            let mut stack = children[c].clone();
            while let Some(x) = stack.pop() {
                selected[x] = false;
                stack.extend_from_slice(&children[x]);
            }
        } else {
            subtree[c] = child_sum;
        }
    }
    (0..k).filter(|&c| selected[c]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Cluster id per point, or −1 for noise.
    pub labels: Vec<i32>,
    /// Stability of each cluster, indexed by cluster id.
    pub stability: Vec<f64>,
    /// Condensed-tree node selected for each cluster id.
    pub selected: Vec<usize>,
    pub tree: CondensedTree,
    /// Set when the input was too small for any cluster.
    pub warning: Option<String>,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.stability.len()
    }

    pub fn noise_fraction(&self) -> f64 {
        if self.labels.is_empty() {
            return 0.0;
        }
        self.labels.iter().filter(|&&l| l < 0).count() as f64 / self.labels.len() as f64
    }
}

/// Cluster a point cloud. Cluster ids are assigned in order of each
/// cluster's lowest member index.
pub fn fit_density_clusters(points: Points<'_>, params: &ClusterParams) -> Result<ClusterResult> {
    params.validate()?;
    let n = points.len();
    if n < params.min_cluster_size {
        return Ok(ClusterResult {
            labels: vec![-1; n],
            stability: Vec::new(),
            selected: Vec::new(),
            tree: CondensedTree::default(),
            warning: Some(format!(
                "{n} points is fewer than min_cluster_size {}",
                params.min_cluster_size
            )),
        });
    }
    let core = core_distances(points, params.min_samples());
    let mst = mutual_reachability_mst(points, &core);
    let merges = single_linkage(n, &mst);
    let tree = condense(n, &merges, params.min_cluster_size);
    let chosen = select_clusters(&tree, params.allow_single_cluster);

    let mut is_selected = vec![false; tree.len()];
    for &c in &chosen {
        is_selected[c] = true;
    }
    let owner = |mut c: usize| -> Option<usize> {
        loop {
            if is_selected[c] {
                return Some(c);
            }
            c = tree.parent[c]?;
        }
    };
    let node_of_point: Vec<Option<usize>> = (0..n).map(|p| owner(tree.point_cluster[p])).collect();

    let mut order: Vec<usize> = Vec::new();
    let mut id_of_node: BTreeMap<usize, i32> = BTreeMap::new();
    for node in node_of_point.iter().flatten() {
        if !id_of_node.contains_key(node) {
            id_of_node.insert(*node, order.len() as i32);
            order.push(*node);
        }
    }
    let labels = node_of_point
        .iter()
        .map(|n| n.map_or(-1, |node| id_of_node[&node]))
        .collect();
    Ok(ClusterResult {
        labels,
        stability: order.iter().map(|&c| tree.stability[c]).collect(),
        selected: order,
        tree,
        warning: None,
    })
}

/// Binary proxy label and ranking score for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxyLabel {
    pub cluster: i32,
    pub label: u8,
    pub score: f64,
}

/// Turn item clusters into binary labels via mean observed annotation.
///
/// `labels[k]` is the cluster of item `item_ids[k]`. A cluster is labelled 1
/// when the mean annotation over all records of its member items is at least
/// 0.5. Noise items use their own mean, with an exact 0.5 mapping to 0.
pub fn derive_binary_labels(
    labels: &[i32],
    item_ids: &[u32],
    records: &[AnnotationRecord],
) -> Result<BTreeMap<u32, ProxyLabel>> {
    if labels.len() != item_ids.len() {
        return Err(Error::InputMismatch(format!(
            "{} cluster labels for {} items",
            labels.len(),
            item_ids.len()
        )));
    }
    let mut per_item: BTreeMap<u32, (u64, u64)> = item_ids.iter().map(|&i| (i, (0, 0))).collect();
    for r in records {
        if let Some(acc) = per_item.get_mut(&r.item_id) {
            acc.0 += u64::from(r.value);
            acc.1 += 1;
        }
    }
    if let Some((id, _)) = per_item.iter().find(|(_, acc)| acc.1 == 0) {
        return Err(Error::ItemWithoutRecords(id.to_string()));
    }
    let mut per_cluster: BTreeMap<i32, (u64, u64)> = BTreeMap::new();
    for (&label, id) in labels.iter().zip(item_ids) {
        if label >= 0 {
            let acc = per_item[id];
            let c = per_cluster.entry(label).or_default();
            c.0 += acc.0;
            c.1 += acc.1;
        }
    }
    Ok(labels
        .iter()
        .zip(item_ids)
        .map(|(&cluster, &id)| {
            let (ones, total) = if cluster >= 0 {
                per_cluster[&cluster]
            } else {
                per_item[&id]
            };
            let score = ones as f64 / total as f64;
            let label = if cluster >= 0 {
                u8::from(score >= 0.5)
            } else {
                u8::from(score > 0.5)
            };
            (id, ProxyLabel { cluster, label, score })
        })
        .collect())
}
