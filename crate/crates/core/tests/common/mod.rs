//! Brute-force oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xcmine::dataset::{build_dataset, Dataset, SparseVector};
use xcmine::encoder::{BagOfEmbeddings, Encoder, LossKind, Triplet};
use xcmine::linalg::{normalize, Embeddings};
use xcmine::metrics::PropensityModel;
use xcmine::negmine::{Curriculum, MinerConfig, Strategy};
use xcmine::synth::SynthSpec;
use xcmine::trainer::TrainConfig;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_vec(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if normalize(&mut v) > 1e-3 {
            return v;
        }
    }
}

pub fn random_unit(n: usize, d: usize, rng: &mut impl Rng) -> Embeddings {
    let mut e = Embeddings::new(d);
    for _ in 0..n {
        e.push(&random_unit_vec(d, rng));
    }
    e
}

/// Unit vector `normalize(base + noise * g)` with uniform `g` in `[-1, 1]^d`.
pub fn perturb(base: &[f64], noise: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = base.iter().map(|b| b + noise * rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    v
}

pub fn random_sparse(vocab: usize, rng: &mut impl Rng) -> SparseVector {
    let mut ids: Vec<usize> = (0..vocab).collect();
    ids.shuffle(rng);
    let nnz = rng.gen_range(1..=vocab.min(4));
    let entries = ids[..nnz].iter().map(|&t| (t, rng.gen_range(0.2..2.0))).collect();
    SparseVector::new(vocab, entries).unwrap()
}

/// Dataset whose features are irrelevant (one token per row); used when
/// embeddings are supplied directly.
pub fn dataset_from_relevance(relevance: Vec<Vec<usize>>, num_labels: usize) -> Dataset {
    let x = |i: usize| SparseVector::new(8, vec![(i % 8, 1.0)]).unwrap();
    let points = (0..relevance.len()).map(x).collect();
    let labels = (0..num_labels).map(x).collect();
    build_dataset(points, labels, relevance).unwrap()
}

/// Brute-force hard negatives: pool labels not positive for the point with
/// `2 - 2 cos <= r^2`, sorted by distance then id, first `cap`.
pub fn brute_hard_negatives(
    points: &Embeddings,
    pool: &Embeddings,
    pool_ids: &[usize],
    positives: &[Vec<usize>],
    r: f64,
    cap: usize,
) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for b in 0..points.len() {
        let mut found = Vec::new();
        for p in 0..pool.len() {
            if positives[b].contains(&pool_ids[p]) {
                continue;
            }
            let mut s = 0.0;
            for d in 0..points.dim() {
                s += points.row(b)[d] * pool.row(p)[d];
            }
            let dist = (2.0 - 2.0 * s).max(0.0).sqrt();
            if dist <= r {
                found.push((dist, pool_ids[p]));
            }
        }
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        out.push(found.into_iter().take(cap).map(|x| x.1).collect());
    }
    out
}

fn log2_discount(j: usize) -> f64 {
    1.0 / ((j + 2) as f64).ln() * std::f64::consts::LN_2
}

pub fn oracle_precision(preds: &[usize], rel: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for j in 0..k {
        if j < preds.len() && rel.contains(&preds[j]) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

pub fn oracle_recall(preds: &[usize], rel: &[usize], k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for j in 0..k.min(preds.len()) {
        if rel.contains(&preds[j]) {
            hits += 1;
        }
    }
    hits as f64 / rel.len() as f64
}

pub fn oracle_ndcg(preds: &[usize], rel: &[usize], k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut dcg = 0.0;
    for j in 0..k.min(preds.len()) {
        if rel.contains(&preds[j]) {
            dcg += log2_discount(j);
        }
    }
    let mut idcg = 0.0;
    for j in 0..k.min(rel.len()) {
        idcg += log2_discount(j);
    }
    dcg / idcg
}

fn weights_desc(rel: &[usize], props: &PropensityModel) -> Vec<f64> {
    let mut w: Vec<f64> = rel.iter().map(|&l| 1.0 / props.propensities[l]).collect();
    w.sort_by(|a, b| b.partial_cmp(a).unwrap());
    w
}

pub fn oracle_psp(preds: &[usize], rel: &[usize], props: &PropensityModel, k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut num = 0.0;
    for j in 0..k.min(preds.len()) {
        if rel.contains(&preds[j]) {
            num += 1.0 / props.propensities[preds[j]];
        }
    }
    let den: f64 = weights_desc(rel, props).iter().take(k).sum();
    num / den
}

pub fn oracle_psn(preds: &[usize], rel: &[usize], props: &PropensityModel, k: usize) -> f64 {
    if rel.is_empty() {
        return 0.0;
    }
    let mut num = 0.0;
    for j in 0..k.min(preds.len()) {
        if rel.contains(&preds[j]) {
            num += log2_discount(j) / props.propensities[preds[j]];
        }
    }
    let w = weights_desc(rel, props);
    let mut den = 0.0;
    for j in 0..k.min(w.len()) {
        den += w[j] * log2_discount(j);
    }
    num / den
}

/// Max elementwise relative error between the analytic gradient and central
/// differences with step `h`, for one random squared-hinge configuration.
pub fn gradient_check(seed: u64, vocab: usize, dim: usize, h: f64) -> f64 {
    let mut r = rng(seed);
    let mut enc = BagOfEmbeddings::random(vocab, dim, seed).unwrap();
    let inputs: Vec<SparseVector> = (0..12).map(|_| random_sparse(vocab, &mut r)).collect();
    let gamma = r.gen_range(0.5..1.5);
    let num_triplets = r.gen_range(1..=3);
    let mut spec = Vec::new();
    for _ in 0..num_triplets {
        let a = r.gen_range(0..12);
        let p = r.gen_range(0..12);
        let negs: Vec<usize> = (0..r.gen_range(1..=3)).map(|_| r.gen_range(0..12)).collect();
        spec.push((a, p, negs));
    }
    let loss = |e: &BagOfEmbeddings| {
        let trips: Vec<Triplet> = spec
            .iter()
            .map(|(a, p, n)| Triplet {
                anchor: &inputs[*a],
                positive: &inputs[*p],
                negatives: n.iter().map(|&k| &inputs[k]).collect(),
            })
            .collect();
        e.loss_and_grad(&trips, gamma, LossKind::SquaredHinge).unwrap()
    };
    let (_, grad) = loss(&enc);
    let mut worst: f64 = 0.0;
    for p in 0..enc.params().len() {
        let old = enc.params()[p];
        enc.params_mut()[p] = old + h;
        let up = loss(&enc).0;
        enc.params_mut()[p] = old - h;
        let down = loss(&enc).0;
        enc.params_mut()[p] = old;
        let fd = (up - down) / (2.0 * h);
        let scale = grad[p].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((grad[p] - fd).abs() / scale);
    }
    worst
}

/// The planted-cluster task used for the miner comparison.
pub fn convergence_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_clusters: 8,
        points_per_cluster: 50,
        labels_per_cluster: 10,
        noise: 0.05,
        background_tokens: 8,
        vocab_size: 900,
        dim: 32,
        seed,
        ..SynthSpec::default()
    }
}

/// Training setup for the miner comparison: eight-point batches, one cluster
/// of eight per batch for the cluster strategies, re-clustering every five
/// epochs.
pub fn convergence_config(strategy: Strategy, seed: u64) -> TrainConfig {
    TrainConfig {
        miner: MinerConfig {
            strategy,
            batch_size: 8,
            cluster_size: 8,
            refresh_interval: 5,
            radius: 2.0,
            max_negatives: 5,
            curriculum: Curriculum { enabled: false, ..Curriculum::default() },
        },
        epochs: 300,
        learning_rate: 3e-4,
        seed,
        stop_at_p1: Some(0.9),
        ..TrainConfig::default()
    }
}

/// Twenty points, ten labels; each point shares one token with its label and
/// carries a private token, all rows share a common token.
pub fn toy_task() -> Dataset {
    let vocab = 31;
    let common = 30;
    let points = (0..20)
        .map(|i| SparseVector::new(vocab, vec![(i % 10, 1.0), (10 + i, 1.0), (common, 1.0)]).unwrap())
        .collect();
    let labels = (0..10)
        .map(|l| SparseVector::new(vocab, vec![(l, 1.0), (common, 1.0)]).unwrap())
        .collect();
    let relevance = (0..20).map(|i| vec![i % 10]).collect();
    build_dataset(points, labels, relevance).unwrap()
}

pub fn toy_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        miner: MinerConfig {
            batch_size: 10,
            cluster_size: 2,
            curriculum: Curriculum { enabled: false, ..Curriculum::default() },
            ..MinerConfig::default()
        },
        epochs,
        learning_rate: 0.01,
        seed,
        ..TrainConfig::default()
    }
}

pub fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}
