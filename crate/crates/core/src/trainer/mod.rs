//! Two-stage training: the Siamese encoder stage ([`train_m1`]) followed by
//! per-label classifier refinement on frozen embeddings ([`train_m2`]).

mod adam;
mod m1;
mod m2;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use m1::train_m1;
pub use m2::{train_m2, ClassifierBank};

use crate::ann::{build_index, IndexMode};
use crate::dataset::{Dataset, SparseVector};
use crate::encoder::{Encoder, LossKind};
use crate::error::{Error, Result};
use crate::linalg::Embeddings;
use crate::negmine::MinerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub miner: MinerConfig,
    pub gamma: f64,
    pub loss_kind: LossKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Training points used for the per-epoch P@1 (0 disables it).
    pub eval_sample: usize,
    /// Stop early once the logged P@1 reaches this value.
    pub stop_at_p1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            miner: MinerConfig::default(),
            gamma: 0.3,
            loss_kind: LossKind::Hinge,
            epochs: 300,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            eval_sample: 1000,
            stop_at_p1: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.miner.validate()?;
        self.adam.validate()?;
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Summed triplet loss divided by the number of trained points.
    pub loss: f64,
    pub p_at_1: Option<f64>,
    /// Wall-clock time of the batch loop.
    pub seconds: f64,
    /// Wall-clock time spent re-clustering or refreshing the index.
    pub overhead_seconds: f64,
    pub cluster_size: usize,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,p_at_1,seconds\n");
    for e in log {
        let p1 = e.p_at_1.map_or_else(String::new, |p| p.to_string());
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.loss, p1, e.seconds);
    }
    s
}

pub fn write_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, log_to_csv(log))?;
    Ok(())
}

/// Deterministic sample of trainable points used for per-epoch evaluation.
pub fn eval_points(ds: &Dataset, sample: usize, seed: u64) -> Vec<usize> {
    let mut pts = ds.trainable_points();
    if sample < pts.len() {
        pts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1));
        pts.truncate(sample);
        pts.sort_unstable();
    }
    pts
}

/// Fraction of `points` whose top-scoring label vector is a positive.
pub fn precision_at_1(ds: &Dataset, points: &[usize], point_embs: &Embeddings, label_vectors: &Embeddings) -> Result<f64> {
    if points.is_empty() {
        return Ok(0.0);
    }
    let index = build_index(label_vectors, IndexMode::Exact)?;
    let hits = points
        .iter()
        .enumerate()
        .filter(|&(r, &i)| {
            index
                .query(point_embs.row(r), 1)
                .first()
                .is_some_and(|&(l, _)| ds.is_positive(i, l))
        })
        .count();
    Ok(hits as f64 / points.len() as f64)
}

pub(crate) fn embed_points<E: Encoder>(ds: &Dataset, enc: &E, points: &[usize]) -> Result<Embeddings> {
    let xs: Vec<SparseVector> = points.iter().map(|&i| ds.point(i).clone()).collect();
    enc.embed_batch(&xs)
}

/// P@1 of the embedding-only model (`w_l = E(z_l)`) on `points`.
pub fn embedding_precision_at_1<E: Encoder>(ds: &Dataset, enc: &E, points: &[usize]) -> Result<f64> {
    let pe = embed_points(ds, enc, points)?;
    let le = enc.embed_batch(ds.label_features())?;
    precision_at_1(ds, points, &pe, &le)
}
