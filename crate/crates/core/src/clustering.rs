//! Balanced hierarchical spherical 2-means and clustering goodness.
//!
//! Every node is split into two halves whose sizes differ by at most one:
//! points are ranked by `x.c1 - x.c2` against the two normalized centroids and
//! the top half goes left. Recursion stops at the target depth or at
//! singletons, so all leaves at the end are balanced to within one point.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, unit_distance, Embeddings};

pub const MAX_SPLIT_ITERS: usize = 20;
pub const DEFAULT_EXACT_CAP: usize = 5000;

/// Partition of `n` items into non-empty clusters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    assignment: Vec<usize>,
    clusters: Vec<Vec<usize>>,
}

impl Clustering {
    /// Builds from membership lists; each list is sorted.
    pub fn from_clusters(n: usize, mut clusters: Vec<Vec<usize>>) -> Result<Self> {
        let mut assignment = vec![usize::MAX; n];
        for (c, members) in clusters.iter_mut().enumerate() {
            if members.is_empty() {
                return Err(Error::Value(format!("cluster {c} is empty")));
            }
            members.sort_unstable();
            for &i in members.iter() {
                if i >= n || assignment[i] != usize::MAX {
                    return Err(Error::Value(format!("item {i} out of range or assigned twice")));
                }
                assignment[i] = c;
            }
        }
        if assignment.contains(&usize::MAX) {
            return Err(Error::Value("some items are not assigned to a cluster".into()));
        }
        Ok(Self { assignment, clusters })
    }

    pub fn singletons(n: usize) -> Self {
        Self { assignment: (0..n).collect(), clusters: (0..n).map(|i| vec![i]).collect() }
    }

    pub fn single(n: usize) -> Self {
        Self { assignment: vec![0; n], clusters: vec![(0..n).collect()] }
    }

    pub fn num_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    pub fn max_size(&self) -> usize {
        self.clusters.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// `max size - min size`.
    pub fn size_spread(&self) -> usize {
        let s = self.sizes();
        s.iter().max().unwrap_or(&0) - s.iter().min().unwrap_or(&0)
    }

    /// One `item_id cluster_id` line per item, optionally mapping item
    /// positions back to external ids.
    pub fn dump(&self, ids: Option<&[usize]>) -> String {
        let mut out = String::new();
        for (i, c) in self.assignment.iter().enumerate() {
            let id = ids.map_or(i, |m| m[i]);
            let _ = writeln!(out, "{id} {c}");
        }
        out
    }
}

/// `2^ceil(log2(ceil(n / c)))`, with `c >= n` giving one cluster.
pub fn target_num_clusters(n: usize, cluster_size: usize) -> usize {
    let c = cluster_size.max(1);
    n.div_ceil(c).max(1).next_power_of_two()
}

pub fn balanced_cluster(emb: &Embeddings, cluster_size: usize, seed: u64) -> Result<Clustering> {
    let n = emb.len();
    if n == 0 {
        return Err(Error::Config("cannot cluster zero points".into()));
    }
    if cluster_size == 0 {
        return Err(Error::Config("cluster size must be >= 1".into()));
    }
    let depth = target_num_clusters(n, cluster_size).trailing_zeros() as usize;
    let leaves = split_recursive(emb, (0..n).collect(), depth, 1, seed);
    Clustering::from_clusters(n, leaves)
}

fn split_recursive(emb: &Embeddings, ids: Vec<usize>, depth: usize, node: u64, seed: u64) -> Vec<Vec<usize>> {
    if depth == 0 || ids.len() < 2 {
        return vec![ids];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(node);
    let (left, right) = split_balanced(emb, &ids, &mut rng);
    let (mut a, b) = rayon::join(
        || split_recursive(emb, left, depth - 1, 2 * node, seed),
        || split_recursive(emb, right, depth - 1, 2 * node + 1, seed),
    );
    a.extend(b);
    a
}

/// Splits `ids` into halves of sizes `ceil(n/2)` and `floor(n/2)`.
pub fn split_balanced(emb: &Embeddings, ids: &[usize], rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let n = ids.len();
    let half = n.div_ceil(2);
    let first = ids[rng.gen_range(0..n)];
    let mut second = ids[0];
    let mut lowest = f64::INFINITY;
    for &i in ids {
        let d = dot(emb.row(i), emb.row(first));
        if d < lowest {
            lowest = d;
            second = i;
        }
    }
    let mut c1 = emb.row(first).to_vec();
    let mut c2 = emb.row(second).to_vec();

    let mut order: Vec<usize> = (0..n).collect();
    let mut in_left = vec![false; n];
    for iter in 0..MAX_SPLIT_ITERS {
        let scores: Vec<f64> = ids
            .iter()
            .map(|&i| dot(emb.row(i), &c1) - dot(emb.row(i), &c2))
            .collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut next = vec![false; n];
        for &p in &order[..half] {
            next[p] = true;
        }
        if iter > 0 && next == in_left {
            break;
        }
        in_left = next;
        let mut m1 = vec![0.0; emb.dim()];
        let mut m2 = vec![0.0; emb.dim()];
        for (p, &i) in ids.iter().enumerate() {
            let m = if in_left[p] { &mut m1 } else { &mut m2 };
            for (acc, x) in m.iter_mut().zip(emb.row(i)) {
                *acc += x;
            }
        }
        if normalize(&mut m1) > 0.0 {
            c1 = m1;
        }
        if normalize(&mut m2) > 0.0 {
            c2 = m2;
        }
    }
    let mut left = Vec::with_capacity(half);
    let mut right = Vec::with_capacity(n - half);
    for (p, &i) in ids.iter().enumerate() {
        if in_left[p] {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    (left, right)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoodnessMode {
    /// All `N^2` ordered pairs; requires `N <= cap`.
    Exact { cap: usize },
    /// `pairs` ordered pairs drawn uniformly with replacement.
    Sampled { pairs: usize, seed: u64 },
}

impl Default for GoodnessMode {
    fn default() -> Self {
        GoodnessMode::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

/// Fraction of ordered pairs `(i, j)` within distance `r` that the clustering
/// separates.
pub fn clustering_goodness(emb: &Embeddings, clustering: &Clustering, r: f64, mode: GoodnessMode) -> Result<f64> {
    let n = emb.len();
    if clustering.num_items() != n {
        return Err(Error::Value(format!(
            "clustering covers {} items but there are {n} embeddings",
            clustering.num_items()
        )));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let split_close = |i: usize, j: usize| {
        clustering.cluster_of(i) != clustering.cluster_of(j) && unit_distance(emb.row(i), emb.row(j)) <= r
    };
    match mode {
        GoodnessMode::Exact { cap } => {
            if n > cap {
                return Err(Error::Config(format!("exact goodness needs N <= {cap}, got {n}")));
            }
            let count: usize = (0..n)
                .into_par_iter()
                .map(|i| (0..n).filter(|&j| split_close(i, j)).count())
                .sum();
            Ok(count as f64 / (n as f64 * n as f64))
        }
        GoodnessMode::Sampled { pairs, seed } => {
            if pairs == 0 {
                return Err(Error::Config("sampled goodness needs at least one pair".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let count = (0..pairs)
                .filter(|_| {
                    let i = rng.gen_range(0..n);
                    let j = rng.gen_range(0..n);
                    split_close(i, j)
                })
                .count();
            Ok(count as f64 / pairs as f64)
        }
    }
}
