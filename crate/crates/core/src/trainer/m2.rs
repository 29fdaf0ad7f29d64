use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, embed_points, eval_points, precision_at_1, AdamState, EpochLog, TrainConfig};
use crate::ann::IndexMode;
use crate::checkpoint::{self, CLASSIFIER_MAGIC};
use crate::clustering::{balanced_cluster, Clustering};
use crate::dataset::Dataset;
use crate::encoder::{triplet_term, Encoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalize, Embeddings};
use crate::negmine::{anns_refresh_negatives, label_pool, plan_epoch, select_hard_negatives, Strategy};

/// Unit-norm per-label classifier vectors `w_l = E(z_l) + eta_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    vectors: Embeddings,
}

impl ClassifierBank {
    /// Classifiers equal to the label embeddings (zero residuals).
    pub fn from_label_embeddings(label_embs: &Embeddings) -> Self {
        Self { vectors: label_embs.clone() }
    }

    /// Rows are normalized on construction.
    pub fn from_vectors(mut vectors: Embeddings) -> Result<Self> {
        for i in 0..vectors.len() {
            if !(normalize(vectors.row_mut(i)) > 0.0) {
                return Err(Error::DegenerateInput(format!("classifier {i} has zero norm")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &Embeddings {
        &self.vectors
    }

    pub fn num_labels(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn score(&self, label: usize, e: &[f64]) -> f64 {
        dot(self.vectors.row(label), e)
    }

    /// `eta_l = w_l - E(z_l)` for every label.
    pub fn residuals(&self, label_embs: &Embeddings) -> Embeddings {
        let data = self
            .vectors
            .as_flat()
            .iter()
            .zip(label_embs.as_flat())
            .map(|(w, z)| w - z)
            .collect();
        Embeddings::from_flat(self.dim(), data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_matrix(path, CLASSIFIER_MAGIC, self.num_labels(), self.dim(), self.vectors.as_flat())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rec = checkpoint::load_matrix(path, CLASSIFIER_MAGIC)?;
        Self::from_vectors(Embeddings::from_flat(rec.cols, rec.data))
    }
}

/// Refines classifiers on frozen encoder embeddings.
///
/// Classifiers start at the label embeddings. Negatives are re-mined every
/// `refresh_interval` epochs against the current classifiers; the clustering
/// of the frozen point embeddings is computed once.
pub fn train_m2<E: Encoder>(ds: &Dataset, enc: &E, cfg: &TrainConfig) -> Result<(ClassifierBank, Vec<EpochLog>)> {
    cfg.validate()?;
    let label_embs = enc.embed_batch(ds.label_features())?;
    let mut bank = ClassifierBank::from_label_embeddings(&label_embs);
    if cfg.epochs == 0 {
        return Ok((bank, Vec::new()));
    }
    let points = ds.trainable_points();
    if points.is_empty() {
        return Err(Error::Config("no data point has a positive label".into()));
    }
    let point_embs = embed_points(ds, enc, &points)?;
    let eval = if cfg.eval_sample > 0 { eval_points(ds, cfg.eval_sample, cfg.seed) } else { Vec::new() };
    let eval_embs = embed_points(ds, enc, &eval)?;

    let miner = &cfg.miner;
    let seed_for = |epoch: usize, salt: u64| {
        cfg.seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt ^ 0x5EED_0002
    };
    let cluster_start = Instant::now();
    let clustering = match miner.strategy {
        Strategy::Ngame | Strategy::StaticCluster => {
            balanced_cluster(&point_embs, miner.cluster_size, seed_for(0, 1))?
        }
        Strategy::Uniform | Strategy::AnnsRefresh => Clustering::singletons(points.len()),
    };
    let cluster_seconds = cluster_start.elapsed().as_secs_f64();
    let positives: Vec<&[usize]> = points.iter().map(|&i| ds.positives(i)).collect();

    let dim = enc.dim();
    let mut state = AdamState::new(ds.num_labels() * dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let mut negatives: Vec<Vec<usize>> = Vec::new();
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut overhead = if epoch == 0 { cluster_seconds } else { 0.0 };
        if epoch % miner.refresh_interval == 0 {
            let t = Instant::now();
            negatives = mine_all(&clustering, &point_embs, &bank, &positives, ds, &points, cfg, seed_for(epoch, 3))?;
            overhead += t.elapsed().as_secs_f64();
        }

        let start = Instant::now();
        let plan = plan_epoch(&clustering, miner.batch_size, seed_for(epoch, 2))?;
        let mut total_loss = 0.0;
        for batch in &plan.batches {
            let mut grad = vec![0.0; ds.num_labels() * dim];
            let mut any = false;
            for &p in batch {
                let pos = positives[p];
                let l = pos[rng.gen_range(0..pos.len())];
                let e = point_embs.row(p);
                let s_pos = bank.score(l, e);
                for &k in &negatives[p] {
                    let (val, slope) = triplet_term(s_pos, bank.score(k, e), cfg.gamma, cfg.loss_kind);
                    total_loss += val;
                    if slope == 0.0 {
                        continue;
                    }
                    any = true;
                    for d in 0..dim {
                        grad[k * dim + d] += slope * e[d];
                        grad[l * dim + d] -= slope * e[d];
                    }
                }
            }
            if !any {
                continue;
            }
            let mut flat = bank.vectors.as_flat().to_vec();
            adam_step(&mut flat, &grad, &mut state, cfg.learning_rate, &cfg.adam)?;
            bank = ClassifierBank::from_vectors(Embeddings::from_flat(dim, flat))?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let p_at_1 = if eval.is_empty() {
            None
        } else {
            Some(precision_at_1(ds, &eval, &eval_embs, bank.vectors())?)
        };
        log.push(EpochLog {
            epoch,
            loss: total_loss / points.len() as f64,
            p_at_1,
            seconds,
            overhead_seconds: overhead,
            cluster_size: miner.cluster_size,
        });
        if let (Some(target), Some(p)) = (cfg.stop_at_p1, p_at_1) {
            if p >= target {
                break;
            }
        }
    }
    Ok((bank, log))
}

/// Negatives for every trainable point, mined against the current classifiers.
#[allow(clippy::too_many_arguments)]
fn mine_all(
    clustering: &Clustering,
    point_embs: &Embeddings,
    bank: &ClassifierBank,
    positives: &[&[usize]],
    ds: &Dataset,
    points: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let miner = &cfg.miner;
    if miner.strategy == Strategy::AnnsRefresh {
        return anns_refresh_negatives(
            point_embs,
            bank.vectors(),
            positives,
            miner.max_negatives,
            IndexMode::auto(bank.num_labels()),
        );
    }
    let mut out = vec![Vec::new(); points.len()];
    let plan = plan_epoch(clustering, miner.batch_size, seed)?;
    for batch in &plan.batches {
        let ids: Vec<usize> = batch.iter().map(|&p| points[p]).collect();
        let pool = label_pool(ds, &ids);
        let pool_embs = bank.vectors().select(&pool);
        let batch_embs = point_embs.select(batch);
        let pos: Vec<&[usize]> = batch.iter().map(|&p| positives[p]).collect();
        let hn = select_hard_negatives(&batch_embs, &pool_embs, &pool, &pos, miner.radius, miner.max_negatives);
        for (&p, list) in batch.iter().zip(hn.lists) {
            out[p] = list;
        }
    }
    Ok(out)
}
