//! Exact checks of the negative-mining guarantee.
//!
//! A bad event `(i, l)` is a negative label within distance `r` of point `i`
//! that the point's batch never retrieves. Its rate is bounded by
//! `c1 * eps1 + c2 * eps2`, where `eps1` measures how often positive pairs are
//! far apart (at `r`) and `eps2` how often close point pairs are split by the
//! clustering (at `2r`).

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{balanced_cluster, clustering_goodness, Clustering, GoodnessMode};
use crate::dataset::{compute_stats, Dataset, DatasetStats};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linalg::{unit_distance, Embeddings};
use crate::negmine::{label_pool, select_hard_negatives};

/// Relative slack used by the verdict.
pub const BOUND_TOLERANCE: f64 = 1e-12;

/// Fraction of `(point, positive label)` pairs farther apart than `r`.
pub fn embedding_goodness(ds: &Dataset, point_embs: &Embeddings, label_embs: &Embeddings, r: f64) -> Result<f64> {
    check_shapes(ds, point_embs, label_embs)?;
    let (far, total) = (0..ds.num_points())
        .into_par_iter()
        .map(|i| {
            let pos = ds.positives(i);
            let far = pos
                .iter()
                .filter(|&&l| unit_distance(point_embs.row(i), label_embs.row(l)) > r)
                .count();
            (far, pos.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        return Err(Error::DegenerateInput("no positive pairs".into()));
    }
    Ok(far as f64 / total as f64)
}

/// `c1 = q_bar (mu1 + sigma1 sqrt(L)) / N` and
/// `c2 = (p_bar + sigma2 sqrt(N)) N / (q_min L)`.
pub fn bound_constants(stats: &DatasetStats) -> Result<(f64, f64)> {
    let (Some(mu1), Some(s1_sq)) = (stats.mu1, stats.sigma1_sq) else {
        return Err(Error::DegenerateInput("some label has no relevant point (q_min = 0)".into()));
    };
    let n = stats.num_points as f64;
    let l = stats.num_labels as f64;
    let c1 = stats.q_bar * (mu1 + s1_sq.sqrt() * l.sqrt()) / n;
    let c2 = (stats.p_bar + stats.sigma2_sq.sqrt() * n.sqrt()) * n / (stats.q_min as f64 * l);
    Ok((c1, c2))
}

/// Negatives retrieved when every cluster forms its own batch and no cap is
/// applied: all pool labels within `r` that are not positives of the point.
pub fn full_coverage_negatives(
    ds: &Dataset,
    point_embs: &Embeddings,
    label_embs: &Embeddings,
    clustering: &Clustering,
    r: f64,
) -> Result<Vec<Vec<usize>>> {
    check_shapes(ds, point_embs, label_embs)?;
    if clustering.num_items() != ds.num_points() {
        return Err(Error::Value(format!(
            "clustering covers {} items but there are {} points",
            clustering.num_items(),
            ds.num_points()
        )));
    }
    let mut out = vec![Vec::new(); ds.num_points()];
    for members in clustering.clusters() {
        let pool = label_pool(ds, members);
        let pool_embs = label_embs.select(&pool);
        let batch_embs = point_embs.select(members);
        let pos: Vec<&[usize]> = members.iter().map(|&i| ds.positives(i)).collect();
        let hn = select_hard_negatives(&batch_embs, &pool_embs, &pool, &pos, r, usize::MAX);
        for (&i, list) in members.iter().zip(hn.lists) {
            out[i] = list;
        }
    }
    Ok(out)
}

/// `(1 / NL) * |{(i, l): y_il = -1, d(i, l) <= r, l not retrieved for i}|`.
pub fn bad_event_rate(
    ds: &Dataset,
    point_embs: &Embeddings,
    label_embs: &Embeddings,
    retrieved: &[Vec<usize>],
    r: f64,
) -> Result<f64> {
    check_shapes(ds, point_embs, label_embs)?;
    if retrieved.len() != ds.num_points() {
        return Err(Error::Value(format!(
            "{} retrieved lists for {} points",
            retrieved.len(),
            ds.num_points()
        )));
    }
    let count: usize = (0..ds.num_points())
        .into_par_iter()
        .map(|i| {
            (0..ds.num_labels())
                .filter(|&l| {
                    !ds.is_positive(i, l)
                        && unit_distance(point_embs.row(i), label_embs.row(l)) <= r
                        && !retrieved[i].contains(&l)
                })
                .count()
        })
        .sum();
    Ok(count as f64 / (ds.num_points() as f64 * ds.num_labels() as f64))
}

fn check_shapes(ds: &Dataset, point_embs: &Embeddings, label_embs: &Embeddings) -> Result<()> {
    if point_embs.len() != ds.num_points() || label_embs.len() != ds.num_labels() {
        return Err(Error::Value(format!(
            "expected {} point and {} label embeddings, got {} and {}",
            ds.num_points(),
            ds.num_labels(),
            point_embs.len(),
            label_embs.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub radius: f64,
    pub cluster_size: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { radius: 0.6, cluster_size: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoodnessReport {
    pub radius: f64,
    pub epsilon1: f64,
    /// Clustering goodness at `2r`.
    pub epsilon2: f64,
    pub bad_event_rate: f64,
    pub c1: f64,
    pub c2: f64,
    pub bound_rhs: f64,
    /// `eps1 + eps2` when every point has the same number of positives and
    /// every label the same number of points (then `c1 <= 1` and `c2 = 1`).
    pub corollary_rhs: Option<f64>,
    pub num_clusters: usize,
    pub holds: bool,
}

impl GoodnessReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "epsilon1 = {}", self.epsilon1);
        let _ = writeln!(s, "epsilon2 = {}", self.epsilon2);
        let _ = writeln!(s, "bad_event_rate = {}", self.bad_event_rate);
        let _ = writeln!(s, "c1 = {}", self.c1);
        let _ = writeln!(s, "c2 = {}", self.c2);
        let _ = writeln!(s, "bound_rhs = {}", self.bound_rhs);
        if let Some(c) = self.corollary_rhs {
            let _ = writeln!(s, "corollary_rhs = {c}");
        }
        let _ = writeln!(s, "num_clusters = {}", self.num_clusters);
        let _ = writeln!(s, "holds = {}", self.holds);
        s
    }
}

pub fn is_balanced(stats: &DatasetStats) -> bool {
    stats.sigma1_sq == Some(0.0) && stats.sigma2_sq == 0.0
}

/// Checks the bound for a given clustering of the point embeddings.
pub fn verify_with_clustering(
    ds: &Dataset,
    point_embs: &Embeddings,
    label_embs: &Embeddings,
    clustering: &Clustering,
    r: f64,
) -> Result<GoodnessReport> {
    let stats = compute_stats(ds);
    let (c1, c2) = bound_constants(&stats)?;
    let epsilon1 = embedding_goodness(ds, point_embs, label_embs, r)?;
    let epsilon2 = clustering_goodness(
        point_embs,
        clustering,
        2.0 * r,
        GoodnessMode::Exact { cap: usize::MAX },
    )?;
    let retrieved = full_coverage_negatives(ds, point_embs, label_embs, clustering, r)?;
    let lhs = bad_event_rate(ds, point_embs, label_embs, &retrieved, r)?;
    let bound_rhs = c1 * epsilon1 + c2 * epsilon2;
    Ok(GoodnessReport {
        radius: r,
        epsilon1,
        epsilon2,
        bad_event_rate: lhs,
        c1,
        c2,
        bound_rhs,
        corollary_rhs: is_balanced(&stats).then_some(epsilon1 + epsilon2),
        num_clusters: clustering.num_clusters(),
        holds: lhs <= bound_rhs * (1.0 + BOUND_TOLERANCE),
    })
}

/// Clusters the point embeddings and checks the bound on them.
pub fn verify_embeddings(
    ds: &Dataset,
    point_embs: &Embeddings,
    label_embs: &Embeddings,
    cfg: &VerifyConfig,
) -> Result<GoodnessReport> {
    if !(cfg.radius >= 0.0) {
        return Err(Error::Config(format!("radius must be >= 0, got {}", cfg.radius)));
    }
    if cfg.cluster_size == 0 {
        return Err(Error::Config("cluster_size must be >= 1".into()));
    }
    let clustering = balanced_cluster(point_embs, cfg.cluster_size, cfg.seed)?;
    verify_with_clustering(ds, point_embs, label_embs, &clustering, cfg.radius)
}

pub fn verify_bound<E: Encoder>(ds: &Dataset, enc: &E, cfg: &VerifyConfig) -> Result<GoodnessReport> {
    let stats = compute_stats(ds);
    bound_constants(&stats)?;
    let point_embs = enc.embed_batch(ds.points())?;
    let label_embs = enc.embed_batch(ds.label_features())?;
    verify_embeddings(ds, &point_embs, &label_embs, cfg)
}
