//! Synthetic datasets with planted cluster structure.
//!
//! The vocabulary is split into one block per cluster plus a pool of shared
//! background tokens. A cluster block holds a few cluster tokens (present in
//! every point and label of the cluster), and for each label some label tokens
//! (only in that label's features) and evidence tokens (only in the features
//! of points relevant to it). Telling labels of the same cluster apart
//! requires learning to align evidence tokens with label tokens, which is
//! what hard in-cluster negatives teach.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_dataset, Dataset, SparseFile, SparseVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_clusters: usize,
    pub points_per_cluster: usize,
    pub labels_per_cluster: usize,
    /// Total vocabulary; 0 picks the structured size plus a background pool.
    pub vocab_size: usize,
    /// Embedding dimension suggested for models trained on this data.
    pub dim: usize,
    /// Probability that each cluster token of a point is kept rather than
    /// replaced by a background token.
    pub overlap: f64,
    /// Probability that each positive is replaced by a random label.
    pub noise: f64,
    pub positives_per_point: usize,
    pub cluster_tokens: usize,
    pub label_tokens: usize,
    pub evidence_tokens: usize,
    /// Random background tokens added to every point.
    pub background_tokens: usize,
    pub test_points_per_cluster: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_clusters: 8,
            points_per_cluster: 50,
            labels_per_cluster: 10,
            vocab_size: 0,
            dim: 32,
            overlap: 1.0,
            noise: 0.0,
            positives_per_point: 1,
            cluster_tokens: 4,
            label_tokens: 2,
            evidence_tokens: 2,
            background_tokens: 0,
            test_points_per_cluster: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn block_size(&self) -> usize {
        self.cluster_tokens + self.labels_per_cluster * (self.label_tokens + self.evidence_tokens)
    }

    pub fn structured_vocab(&self) -> usize {
        self.num_clusters * self.block_size()
    }

    pub fn effective_vocab(&self) -> usize {
        if self.vocab_size == 0 {
            self.structured_vocab() + (self.num_clusters * self.cluster_tokens).max(16)
        } else {
            self.vocab_size
        }
    }

    pub fn num_points(&self) -> usize {
        self.num_clusters * self.points_per_cluster
    }

    pub fn num_labels(&self) -> usize {
        self.num_clusters * self.labels_per_cluster
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.num_clusters == 0 || self.points_per_cluster == 0 || self.labels_per_cluster == 0 {
            return bad("cluster, point and label counts must be >= 1");
        }
        if self.cluster_tokens == 0 || self.label_tokens == 0 || self.evidence_tokens == 0 {
            return bad("token counts must be >= 1");
        }
        if self.positives_per_point == 0 || self.positives_per_point > self.labels_per_cluster {
            return bad("positives_per_point must lie in [1, labels_per_cluster]");
        }
        if !(0.0..=1.0).contains(&self.overlap) || !(0.0..=1.0).contains(&self.noise) {
            return bad("rates must lie in [0, 1]");
        }
        let v = self.effective_vocab();
        let needs_background = self.overlap < 1.0 || self.background_tokens > 0;
        if v < self.structured_vocab() || (needs_background && v == self.structured_vocab()) {
            return bad("vocab_size too small for the planted structure");
        }
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        Ok(())
    }

    fn cluster_token(&self, c: usize, t: usize) -> usize {
        c * self.block_size() + t
    }

    fn label_token(&self, c: usize, local: usize, t: usize) -> usize {
        c * self.block_size() + self.cluster_tokens + local * self.label_tokens + t
    }

    fn evidence_token(&self, c: usize, local: usize, t: usize) -> usize {
        c * self.block_size()
            + self.cluster_tokens
            + self.labels_per_cluster * self.label_tokens
            + local * self.evidence_tokens
            + t
    }
}

/// Generated data with the planted assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub dataset: Dataset,
    pub point_cluster: Vec<usize>,
    pub label_cluster: Vec<usize>,
    /// Held-out points drawn from the same process (may be empty).
    pub test: SparseFile,
}

fn sparse(dim: usize, tokens: impl IntoIterator<Item = usize>) -> Result<SparseVector> {
    let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens {
        *acc.entry(t).or_insert(0.0) += 1.0;
    }
    SparseVector::new(dim, acc.into_iter().collect())
}

struct PointGen<'a> {
    spec: &'a SynthSpec,
    vocab: usize,
}

impl PointGen<'_> {
    fn point(&self, c: usize, j: usize, rng: &mut ChaCha8Rng) -> Result<(SparseVector, Vec<usize>)> {
        let s = self.spec;
        let structured = s.structured_vocab();
        let mut locals = vec![j % s.labels_per_cluster];
        if s.positives_per_point > 1 {
            let mut others: Vec<usize> = (0..s.labels_per_cluster).filter(|&l| l != locals[0]).collect();
            others.shuffle(rng);
            locals.extend(others.into_iter().take(s.positives_per_point - 1));
        }
        let mut tokens = Vec::new();
        for t in 0..s.cluster_tokens {
            if rng.gen::<f64>() < s.overlap {
                tokens.push(s.cluster_token(c, t));
            } else {
                tokens.push(rng.gen_range(structured..self.vocab));
            }
        }
        for &local in &locals {
            tokens.extend((0..s.evidence_tokens).map(|t| s.evidence_token(c, local, t)));
        }
        for _ in 0..s.background_tokens {
            tokens.push(rng.gen_range(structured..self.vocab));
        }
        let mut labels: Vec<usize> = locals.iter().map(|&l| c * s.labels_per_cluster + l).collect();
        let total_labels = s.num_labels();
        for idx in 0..labels.len() {
            if rng.gen::<f64>() < s.noise {
                let replacement = rng.gen_range(0..total_labels);
                if !labels.contains(&replacement) {
                    labels[idx] = replacement;
                }
            }
        }
        labels.sort_unstable();
        labels.dedup();
        Ok((sparse(self.vocab, tokens)?, labels))
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let vocab = spec.effective_vocab();
    let gen = PointGen { spec, vocab };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut label_features = Vec::with_capacity(spec.num_labels());
    let mut label_cluster = Vec::with_capacity(spec.num_labels());
    for c in 0..spec.num_clusters {
        for local in 0..spec.labels_per_cluster {
            let tokens = (0..spec.cluster_tokens)
                .map(|t| spec.cluster_token(c, t))
                .chain((0..spec.label_tokens).map(|t| spec.label_token(c, local, t)));
            label_features.push(sparse(vocab, tokens)?);
            label_cluster.push(c);
        }
    }

    let mut points = Vec::with_capacity(spec.num_points());
    let mut relevance = Vec::with_capacity(spec.num_points());
    let mut point_cluster = Vec::with_capacity(spec.num_points());
    for c in 0..spec.num_clusters {
        for j in 0..spec.points_per_cluster {
            let (x, labels) = gen.point(c, j, &mut rng)?;
            points.push(x);
            relevance.push(labels);
            point_cluster.push(c);
        }
    }

    let mut test_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    test_rng.set_stream(1);
    let mut test = SparseFile {
        num_features: vocab,
        num_labels: spec.num_labels(),
        rows: Vec::new(),
        labels: Vec::new(),
    };
    for c in 0..spec.num_clusters {
        for j in 0..spec.test_points_per_cluster {
            let (x, labels) = gen.point(c, j, &mut test_rng)?;
            test.rows.push(x);
            test.labels.push(labels);
        }
    }

    Ok(SynthData {
        dataset: build_dataset(points, label_features, relevance)?,
        point_cluster,
        label_cluster,
        test,
    })
}
