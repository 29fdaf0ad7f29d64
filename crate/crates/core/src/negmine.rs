//! Mini-batch construction and hard-negative selection.
//!
//! The `ngame` strategy batches whole clusters of nearby points so the
//! positives of batch-mates are hard negatives for each other. The other
//! strategies exist for comparison: `uniform` (random in-batch), `static_cluster`
//! (clusters computed once at epoch 0) and `anns_refresh` (global nearest-label
//! retrieval from an index refreshed every few epochs).

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{build_index, IndexMode};
use crate::clustering::{balanced_cluster, Clustering};
use crate::dataset::{Dataset, SparseVector};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linalg::{dot, unit_distance_from_dot, Embeddings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ngame,
    Uniform,
    StaticCluster,
    AnnsRefresh,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::Ngame, Strategy::Uniform, Strategy::StaticCluster, Strategy::AnnsRefresh];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Ngame => "ngame",
            Strategy::Uniform => "uniform",
            Strategy::StaticCluster => "static_cluster",
            Strategy::AnnsRefresh => "anns_refresh",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown miner strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Curriculum {
    pub enabled: bool,
    pub doubling_period: usize,
    pub max_cluster_size: usize,
}

impl Default for Curriculum {
    fn default() -> Self {
        Self { enabled: true, doubling_period: 25, max_cluster_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinerConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub cluster_size: usize,
    /// Epochs between re-clustering (or index refresh).
    pub refresh_interval: usize,
    /// Hardness radius on the unit sphere.
    pub radius: f64,
    /// Negatives kept per point, hardest first.
    pub max_negatives: usize,
    pub curriculum: Curriculum,
}

impl Default for MinerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Ngame,
            batch_size: 64,
            cluster_size: 8,
            refresh_interval: 5,
            radius: 2.0,
            max_negatives: 5,
            curriculum: Curriculum::default(),
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.cluster_size < 1 || self.batch_size < self.cluster_size {
            return bad(format!(
                "need batch_size >= cluster_size >= 1 (got S={}, C={})",
                self.batch_size, self.cluster_size
            ));
        }
        if self.refresh_interval < 1 {
            return bad("refresh_interval must be >= 1".into());
        }
        if !(self.radius > 0.0 && self.radius <= 2.0) {
            return bad(format!("radius must lie in (0, 2], got {}", self.radius));
        }
        if self.max_negatives < 1 {
            return bad("max_negatives must be >= 1".into());
        }
        if self.curriculum.enabled && self.curriculum.doubling_period < 1 {
            return bad("curriculum doubling_period must be >= 1".into());
        }
        Ok(())
    }

    pub fn effective_cluster_size(&self, epoch: usize) -> usize {
        if !self.curriculum.enabled {
            return self.cluster_size;
        }
        curriculum_cluster_size(
            self.cluster_size,
            epoch,
            self.curriculum.doubling_period,
            self.curriculum.max_cluster_size.max(self.cluster_size).min(self.batch_size),
        )
    }
}

/// `base * 2^(epoch / doubling_period)`, clamped to `max`.
pub fn curriculum_cluster_size(base: usize, epoch: usize, doubling_period: usize, max: usize) -> usize {
    let doublings = epoch / doubling_period.max(1);
    let grown = u32::try_from(doublings)
        .ok()
        .and_then(|d| base.checked_mul(1usize.checked_shl(d)?))
        .unwrap_or(usize::MAX);
    grown.min(max)
}

/// One epoch's batches of item positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatchPlan {
    pub batches: Vec<Vec<usize>>,
}

impl MiniBatchPlan {
    pub fn num_items(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    /// Replaces item positions with `ids[position]`.
    pub fn map_ids(self, ids: &[usize]) -> MiniBatchPlan {
        MiniBatchPlan {
            batches: self.batches.into_iter().map(|b| b.into_iter().map(|p| ids[p]).collect()).collect(),
        }
    }
}

/// Shuffles clusters and packs whole clusters into batches of at most
/// `batch_size` items; every cluster is used exactly once.
pub fn plan_epoch(clustering: &Clustering, batch_size: usize, seed: u64) -> Result<MiniBatchPlan> {
    let max = clustering.max_size();
    if batch_size < max {
        return Err(Error::Config(format!(
            "batch size {batch_size} is smaller than the largest cluster ({max})"
        )));
    }
    let mut order: Vec<usize> = (0..clustering.num_clusters()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::with_capacity(batch_size);
    for c in order {
        let members = &clustering.clusters()[c];
        if !current.is_empty() && current.len() + members.len() > batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend_from_slice(members);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Ok(MiniBatchPlan { batches })
}

/// Random in-batch plan: the cluster plan over singletons.
pub fn uniform_plan(n: usize, batch_size: usize, seed: u64) -> Result<MiniBatchPlan> {
    plan_epoch(&Clustering::singletons(n), batch_size, seed)
}

/// Sorted union of the positives of `batch`.
pub fn label_pool(ds: &Dataset, batch: &[usize]) -> Vec<usize> {
    let mut pool: Vec<usize> = batch.iter().flat_map(|&i| ds.positives(i).iter().copied()).collect();
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// Per-point hard-negative label ids, hardest first.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HardNegatives {
    pub lists: Vec<Vec<usize>>,
}

/// For each batch point, pool labels that are not its positives and lie within
/// distance `radius`, sorted by ascending distance (ties by label id) and
/// truncated to `cap`.
///
/// `positives[b]` must be sorted.
pub fn select_hard_negatives(
    point_embs: &Embeddings,
    pool_embs: &Embeddings,
    pool_ids: &[usize],
    positives: &[&[usize]],
    radius: f64,
    cap: usize,
) -> HardNegatives {
    assert_eq!(point_embs.len(), positives.len());
    assert_eq!(pool_embs.len(), pool_ids.len());
    let lists = (0..point_embs.len())
        .into_par_iter()
        .map(|b| {
            let x = point_embs.row(b);
            let mut found: Vec<(f64, usize)> = pool_ids
                .iter()
                .enumerate()
                .filter(|(_, l)| positives[b].binary_search(l).is_err())
                .map(|(p, &l)| (unit_distance_from_dot(dot(x, pool_embs.row(p))), l))
                .filter(|&(d, _)| d <= radius)
                .collect();
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.truncate(cap);
            found.into_iter().map(|(_, l)| l).collect()
        })
        .collect();
    HardNegatives { lists }
}

/// Top-`cap` nearest labels per point, excluding its positives, using a
/// label index of the given mode.
pub fn anns_refresh_negatives(
    point_embs: &Embeddings,
    label_embs: &Embeddings,
    positives: &[&[usize]],
    cap: usize,
    mode: IndexMode,
) -> Result<Vec<Vec<usize>>> {
    let index = build_index(label_embs, mode)?;
    Ok((0..point_embs.len())
        .into_par_iter()
        .map(|i| {
            let pos = positives[i];
            index
                .query(point_embs.row(i), cap.saturating_add(pos.len()))
                .into_iter()
                .map(|(l, _)| l)
                .filter(|l| pos.binary_search(l).is_err())
                .take(cap)
                .collect()
        })
        .collect())
}

/// Sampling overhead relative to a baseline epoch time.
#[derive(Debug, Clone, PartialEq)]
pub struct OverheadReport {
    pub strategy: Strategy,
    pub epoch_seconds: f64,
    pub sampling_seconds: f64,
    pub baseline_epoch_seconds: f64,
    /// `(epoch + sampling) / baseline`.
    pub fraction_increase: f64,
}

impl OverheadReport {
    /// Sampling time as a fraction of the strategy's own epoch time.
    pub fn overhead_fraction(&self) -> f64 {
        self.sampling_seconds / self.epoch_seconds
    }
}

pub fn overhead_report(
    strategy: Strategy,
    epoch_seconds: f64,
    sampling_seconds: f64,
    baseline_epoch_seconds: f64,
) -> OverheadReport {
    OverheadReport {
        strategy,
        epoch_seconds,
        sampling_seconds,
        baseline_epoch_seconds,
        fraction_increase: (epoch_seconds + sampling_seconds) / baseline_epoch_seconds,
    }
}

/// Stateful batch/negative source used by the trainer.
///
/// Works over the dataset's trainable points (those with positives); plans
/// returned by [`Miner::begin_epoch`] hold dataset point ids.
#[derive(Debug, Clone)]
pub struct Miner {
    cfg: MinerConfig,
    seed: u64,
    points: Vec<usize>,
    clustering: Option<Clustering>,
    clustered_size: usize,
    global_negatives: Vec<Vec<usize>>,
    anns_mode: IndexMode,
}

/// Work done by one call to [`Miner::begin_epoch`].
#[derive(Debug, Clone)]
pub struct EpochPlan {
    pub plan: MiniBatchPlan,
    pub cluster_size: usize,
    pub refreshed: bool,
    pub overhead_seconds: f64,
}

impl Miner {
    pub fn new(cfg: MinerConfig, ds: &Dataset, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let points = ds.trainable_points();
        if points.is_empty() {
            return Err(Error::Config("no data point has a positive label".into()));
        }
        Ok(Self {
            anns_mode: IndexMode::approximate(),
            cfg,
            seed,
            points,
            clustering: None,
            clustered_size: 0,
            global_negatives: Vec::new(),
        })
    }

    pub fn with_anns_mode(mut self, mode: IndexMode) -> Self {
        self.anns_mode = mode;
        self
    }

    pub fn config(&self) -> &MinerConfig {
        &self.cfg
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn clustering(&self) -> Option<&Clustering> {
        self.clustering.as_ref()
    }

    fn epoch_seed(&self, epoch: usize, salt: u64) -> u64 {
        self.seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt
    }

    fn embed_points<E: Encoder>(&self, ds: &Dataset, enc: &E) -> Result<Embeddings> {
        let xs: Vec<SparseVector> = self.points.iter().map(|&i| ds.point(i).clone()).collect();
        enc.embed_batch(&xs)
    }

    /// Refreshes clusters or the label index as the strategy requires and
    /// returns this epoch's batches.
    pub fn begin_epoch<E: Encoder>(&mut self, epoch: usize, ds: &Dataset, enc: &E) -> Result<EpochPlan> {
        let start = Instant::now();
        let c = self.cfg.effective_cluster_size(epoch);
        let s = self.cfg.batch_size;
        let mut refreshed = false;
        let plan = match self.cfg.strategy {
            Strategy::Ngame | Strategy::StaticCluster => {
                let due = match self.cfg.strategy {
                    Strategy::Ngame => {
                        self.clustering.is_none()
                            || epoch % self.cfg.refresh_interval == 0
                            || c != self.clustered_size
                    }
                    _ => self.clustering.is_none(),
                };
                if due {
                    let size = if self.cfg.strategy == Strategy::StaticCluster { self.cfg.cluster_size } else { c };
                    let emb = self.embed_points(ds, enc)?;
                    self.clustering = Some(balanced_cluster(&emb, size, self.epoch_seed(epoch, 1))?);
                    self.clustered_size = size;
                    refreshed = true;
                }
                let clustering = self.clustering.as_ref().expect("clustering computed above");
                plan_epoch(clustering, s, self.epoch_seed(epoch, 2))?
            }
            Strategy::Uniform => uniform_plan(self.points.len(), s, self.epoch_seed(epoch, 2))?,
            Strategy::AnnsRefresh => {
                if self.global_negatives.is_empty() || epoch % self.cfg.refresh_interval == 0 {
                    let pe = self.embed_points(ds, enc)?;
                    let le = enc.embed_batch(ds.label_features())?;
                    let pos: Vec<&[usize]> = self.points.iter().map(|&i| ds.positives(i)).collect();
                    self.global_negatives =
                        anns_refresh_negatives(&pe, &le, &pos, self.cfg.max_negatives, self.anns_mode)?;
                    refreshed = true;
                }
                uniform_plan(self.points.len(), s, self.epoch_seed(epoch, 2))?
            }
        };
        let overhead_seconds = if refreshed { start.elapsed().as_secs_f64() } else { 0.0 };
        Ok(EpochPlan { plan: plan.map_ids(&self.points), cluster_size: c, refreshed, overhead_seconds })
    }

    /// Hard negatives for each point of `batch` (dataset ids), in batch order.
    pub fn batch_negatives<E: Encoder>(&self, batch: &[usize], ds: &Dataset, enc: &E) -> Result<HardNegatives> {
        if self.cfg.strategy == Strategy::AnnsRefresh {
            let lists = batch
                .iter()
                .map(|i| {
                    let pos = self.points.binary_search(i).map_err(|_| {
                        Error::Value(format!("point {i} is not a trainable point"))
                    })?;
                    Ok(self.global_negatives[pos].clone())
                })
                .collect::<Result<Vec<_>>>()?;
            return Ok(HardNegatives { lists });
        }
        let pool = label_pool(ds, batch);
        let xs: Vec<SparseVector> = batch.iter().map(|&i| ds.point(i).clone()).collect();
        let zs: Vec<SparseVector> = pool.iter().map(|&l| ds.label(l).clone()).collect();
        let pe = enc.embed_batch(&xs)?;
        let le = enc.embed_batch(&zs)?;
        let pos: Vec<&[usize]> = batch.iter().map(|&i| ds.positives(i)).collect();
        Ok(select_hard_negatives(&pe, &le, &pool, &pos, self.cfg.radius, self.cfg.max_negatives))
    }
}
