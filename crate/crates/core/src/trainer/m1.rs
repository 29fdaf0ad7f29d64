use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{adam_step, embedding_precision_at_1, eval_points, AdamState, EpochLog, TrainConfig};
use crate::dataset::Dataset;
use crate::encoder::{Encoder, Triplet};
use crate::error::Result;
use crate::negmine::Miner;

/// Trains the encoder with label embeddings as classifiers.
///
/// Each epoch asks the miner for batches (re-clustering when due), then per
/// batch samples one positive per point, selects hard negatives from the
/// batch's label pool with the current parameters and takes one Adam step on
/// the summed triplet loss.
pub fn train_m1<E: Encoder>(ds: &Dataset, enc: &mut E, cfg: &TrainConfig) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let mut miner = Miner::new(cfg.miner.clone(), ds, cfg.seed)?;
    let mut state = AdamState::new(enc.params().len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let eval = if cfg.eval_sample > 0 { eval_points(ds, cfg.eval_sample, cfg.seed) } else { Vec::new() };

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let epoch_plan = miner.begin_epoch(epoch, ds, enc)?;
        let start = Instant::now();
        let mut total_loss = 0.0;
        let mut trained = 0usize;
        for batch in &epoch_plan.plan.batches {
            let negatives = miner.batch_negatives(batch, ds, enc)?;
            let mut triplets = Vec::with_capacity(batch.len());
            for (&i, negs) in batch.iter().zip(&negatives.lists) {
                let pos = ds.positives(i);
                let l = pos[rng.gen_range(0..pos.len())];
                trained += 1;
                if negs.is_empty() {
                    continue;
                }
                triplets.push(Triplet {
                    anchor: ds.point(i),
                    positive: ds.label(l),
                    negatives: negs.iter().map(|&k| ds.label(k)).collect(),
                });
            }
            if triplets.is_empty() {
                continue;
            }
            let (loss, grad) = enc.loss_and_grad(&triplets, cfg.gamma, cfg.loss_kind)?;
            total_loss += loss;
            adam_step(enc.params_mut(), &grad, &mut state, cfg.learning_rate, &cfg.adam)?;
        }
        let seconds = start.elapsed().as_secs_f64();
        let p_at_1 = if eval.is_empty() { None } else { Some(embedding_precision_at_1(ds, enc, &eval)?) };
        log.push(EpochLog {
            epoch,
            loss: total_loss / trained.max(1) as f64,
            p_at_1,
            seconds,
            overhead_seconds: epoch_plan.overhead_seconds,
            cluster_size: epoch_plan.cluster_size,
        });
        if let (Some(target), Some(p)) = (cfg.stop_at_p1, p_at_1) {
            if p >= target {
                break;
            }
        }
    }
    Ok(log)
}
