//! Encoders mapping sparse inputs onto the unit sphere.
//!
//! [`Encoder`] is the interface the trainer and miners work against;
//! [`BagOfEmbeddings`] is the shipped implementation: a value-weighted sum of
//! token embedding rows, normalized to unit length.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, ENCODER_MAGIC};
use crate::dataset::SparseVector;
use crate::error::{Error, Result};
use crate::linalg::{dot, Embeddings};

/// Norm below which a pre-normalization sum is treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    SquaredHinge,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hinge" => Ok(LossKind::Hinge),
            "squared_hinge" | "squared-hinge" => Ok(LossKind::SquaredHinge),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Value and derivative (w.r.t. the margin violation) of one triplet term
/// `[s_neg - s_pos + gamma]_+`, or its square.
#[inline]
pub fn triplet_term(s_pos: f64, s_neg: f64, gamma: f64, kind: LossKind) -> (f64, f64) {
    let m = s_neg - s_pos + gamma;
    if m <= 0.0 {
        return (0.0, 0.0);
    }
    match kind {
        LossKind::Hinge => (m, 1.0),
        LossKind::SquaredHinge => (m * m, 2.0 * m),
    }
}

/// One anchor with a positive and any number of negatives; the loss sums one
/// term per negative.
#[derive(Debug, Clone)]
pub struct Triplet<'a> {
    pub anchor: &'a SparseVector,
    pub positive: &'a SparseVector,
    pub negatives: Vec<&'a SparseVector>,
}

pub trait Encoder: Sync {
    fn dim(&self) -> usize;

    fn embed(&self, x: &SparseVector) -> Result<Embedding>;

    /// Embeds every input, preserving order.
    fn embed_batch(&self, xs: &[SparseVector]) -> Result<Embeddings> {
        let rows: Vec<Result<Embedding>> = xs.par_iter().map(|x| self.embed(x)).collect();
        let mut out = Embeddings::new(self.dim());
        for (i, r) in rows.into_iter().enumerate() {
            match r {
                Ok(e) => out.push(e.as_slice()),
                Err(Error::DegenerateInput(m)) => {
                    return Err(Error::DegenerateInput(format!("input {i}: {m}")))
                }
                Err(e) => return Err(e),
            }
        }
        Ok(out)
    }

    /// Summed triplet loss and its gradient with respect to [`Encoder::params`].
    fn loss_and_grad(&self, batch: &[Triplet<'_>], gamma: f64, kind: LossKind) -> Result<(f64, Vec<f64>)>;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];
}

/// Bag-of-embeddings encoder: `normalize(sum_t value_t * table[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct BagOfEmbeddings {
    vocab: usize,
    dim: usize,
    table: Vec<f64>,
}

impl BagOfEmbeddings {
    pub fn from_table(vocab: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("embedding dimension must be >= 2, got {dim}")));
        }
        if vocab == 0 || table.len() != vocab * dim {
            return Err(Error::Config(format!(
                "embedding table has {} entries, expected {vocab} x {dim}",
                table.len()
            )));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerics("embedding table contains non-finite entries".into()));
        }
        Ok(Self { vocab, dim, table })
    }

    /// Entries drawn i.i.d. uniform in `[-1/sqrt(D), 1/sqrt(D)]`.
    pub fn random(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        let table = (0..vocab * dim).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self::from_table(vocab, dim, table)
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.table[t * self.dim..(t + 1) * self.dim]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_matrix(path, ENCODER_MAGIC, self.vocab, self.dim, &self.table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let rec = checkpoint::load_matrix(path, ENCODER_MAGIC)?;
        Self::from_table(rec.rows, rec.cols, rec.data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode_matrix(ENCODER_MAGIC, self.vocab, self.dim, &self.table)
    }

    /// Unit embedding plus the norm of the pre-normalization sum.
    fn forward(&self, x: &SparseVector) -> Result<(Vec<f64>, f64)> {
        if x.is_empty() {
            return Err(Error::DegenerateInput("empty sparse vector".into()));
        }
        let mut u = vec![0.0; self.dim];
        for (t, v) in x.entries() {
            if t >= self.vocab {
                return Err(Error::Range(format!("token {t} >= vocabulary size {}", self.vocab)));
            }
            for (ud, r) in u.iter_mut().zip(self.row(t)) {
                *ud += v * r;
            }
        }
        let n = dot(&u, &u).sqrt();
        if !(n > DEGENERATE_NORM) {
            return Err(Error::DegenerateInput(format!("pre-normalization norm {n:e}")));
        }
        u.iter_mut().for_each(|ud| *ud /= n);
        Ok((u, n))
    }

    /// Pushes `g = dL/de` back through the normalization into the table gradient.
    fn backward(&self, x: &SparseVector, e: &[f64], n: f64, g: &[f64], grad: &mut [f64]) {
        let ge = dot(g, e);
        let du: Vec<f64> = g.iter().zip(e).map(|(gi, ei)| (gi - ge * ei) / n).collect();
        for (t, v) in x.entries() {
            let row = &mut grad[t * self.dim..(t + 1) * self.dim];
            for (r, d) in row.iter_mut().zip(&du) {
                *r += v * d;
            }
        }
    }
}

impl Encoder for BagOfEmbeddings {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, x: &SparseVector) -> Result<Embedding> {
        self.forward(x).map(|(e, _)| Embedding(e))
    }

    fn loss_and_grad(&self, batch: &[Triplet<'_>], gamma: f64, kind: LossKind) -> Result<(f64, Vec<f64>)> {
        if !(gamma >= 0.0) {
            return Err(Error::Config(format!("margin must be non-negative, got {gamma}")));
        }
        let d = self.dim;
        let mut grad = vec![0.0; self.table.len()];
        let mut loss = 0.0;
        for tr in batch {
            let (ea, na) = self.forward(tr.anchor)?;
            let (ep, np) = self.forward(tr.positive)?;
            let s_pos = dot(&ea, &ep);
            let mut ga = vec![0.0; d];
            let mut gp = vec![0.0; d];
            for neg in &tr.negatives {
                let (en, nn) = self.forward(neg)?;
                let (val, slope) = triplet_term(s_pos, dot(&ea, &en), gamma, kind);
                loss += val;
                if slope == 0.0 {
                    continue;
                }
                let mut gn = vec![0.0; d];
                for k in 0..d {
                    ga[k] += slope * (en[k] - ep[k]);
                    gp[k] -= slope * ea[k];
                    gn[k] = slope * ea[k];
                }
                self.backward(neg, &en, nn, &gn, &mut grad);
            }
            self.backward(tr.anchor, &ea, na, &ga, &mut grad);
            self.backward(tr.positive, &ep, np, &gp, &mut grad);
        }
        Ok((loss, grad))
    }

    fn params(&self) -> &[f64] {
        &self.table
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }
}
