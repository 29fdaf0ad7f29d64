//! Prediction: shortlist labels by classifier score, then rank the shortlist
//! by `T(d) + siamese + classifier`, where `T` is a regression tree over the
//! descriptor `d = (siamese, classifier, label frequency)`.

mod tree;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

pub use tree::{FusionTree, TreeParams, DEFAULT_MIN_LEAF, FUSION_MAGIC, FUSION_VERSION, MAX_DEPTH, NUM_FEATURES};

use crate::ann::{build_index, top_k, IndexMode, MipsIndex};
use crate::dataset::SparseVector;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::linalg::{dot, Embeddings};
use crate::trainer::ClassifierBank;

/// Minimum shortlist used when none is configured.
pub const SHORTLIST_FLOOR: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Descriptor {
    /// `E(z_l) . E(x)`
    pub siamese: f64,
    /// `w_l . E(x)`
    pub classifier: f64,
    /// Training-set positive count of the label.
    pub frequency: usize,
}

impl Descriptor {
    pub fn features(&self) -> [f64; NUM_FEATURES] {
        [self.siamese, self.classifier, self.frequency as f64]
    }
}

/// One `(point, label)` pair for fitting the fusion tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSample {
    pub point: usize,
    pub label: usize,
    pub descriptor: Descriptor,
    pub target: f64,
}

/// `max(k, configured)` where the default is `max(2k, floor)`, clamped to `L`.
pub fn shortlist_size(k: usize, configured: Option<usize>, num_labels: usize) -> usize {
    let base = configured.unwrap_or((2 * k).max(SHORTLIST_FLOOR));
    base.max(k).min(num_labels)
}

pub struct Predictor<'a, E: Encoder> {
    encoder: &'a E,
    bank: &'a ClassifierBank,
    label_embs: Embeddings,
    frequencies: Vec<usize>,
    tree: Option<FusionTree>,
    index: MipsIndex,
    shortlist: Option<usize>,
}

impl<'a, E: Encoder> Predictor<'a, E> {
    pub fn new(
        encoder: &'a E,
        bank: &'a ClassifierBank,
        label_features: &[SparseVector],
        frequencies: Vec<usize>,
        mode: IndexMode,
    ) -> Result<Self> {
        if label_features.len() != bank.num_labels() || frequencies.len() != bank.num_labels() {
            return Err(Error::Value(format!(
                "{} classifiers, {} label feature rows, {} frequencies",
                bank.num_labels(),
                label_features.len(),
                frequencies.len()
            )));
        }
        if encoder.dim() != bank.dim() {
            return Err(Error::Value(format!(
                "encoder dimension {} differs from classifier dimension {}",
                encoder.dim(),
                bank.dim()
            )));
        }
        let label_embs = encoder.embed_batch(label_features)?;
        let index = build_index(bank.vectors(), mode)?;
        Ok(Self { encoder, bank, label_embs, frequencies, tree: None, index, shortlist: None })
    }

    pub fn with_tree(mut self, tree: Option<FusionTree>) -> Self {
        self.tree = tree;
        self
    }

    pub fn with_shortlist(mut self, shortlist: Option<usize>) -> Self {
        self.shortlist = shortlist;
        self
    }

    pub fn num_labels(&self) -> usize {
        self.bank.num_labels()
    }

    pub fn tree(&self) -> Option<&FusionTree> {
        self.tree.as_ref()
    }

    /// Classifier shortlist of the given size with descriptors.
    pub fn shortlist(&self, x: &SparseVector, size: usize) -> Result<Vec<(usize, Descriptor)>> {
        let e = self.encoder.embed(x)?;
        let e = e.as_slice();
        Ok(self
            .index
            .query(e, size)
            .into_iter()
            .map(|(l, _)| {
                let d = Descriptor {
                    siamese: dot(self.label_embs.row(l), e),
                    classifier: self.bank.score(l, e),
                    frequency: self.frequencies[l],
                };
                (l, d)
            })
            .collect())
    }

    pub fn fused_score(&self, d: &Descriptor) -> f64 {
        match &self.tree {
            Some(t) => t.predict(&d.features()) + d.siamese + d.classifier,
            None => d.classifier,
        }
    }

    /// Top-`k` `(label, score)` pairs, best first.
    pub fn predict(&self, x: &SparseVector, k: usize) -> Result<Vec<(usize, f64)>> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let size = shortlist_size(k, self.shortlist, self.num_labels());
        let scored = self
            .shortlist(x, size)?
            .into_iter()
            .map(|(l, d)| (l, self.fused_score(&d)))
            .collect();
        Ok(top_k(scored, k))
    }

    pub fn predict_batch(&self, xs: &[SparseVector], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
        xs.par_iter()
            .enumerate()
            .map(|(i, x)| {
                self.predict(x, k).map_err(|e| match e {
                    Error::DegenerateInput(m) => Error::DegenerateInput(format!("point {i}: {m}")),
                    e => e,
                })
            })
            .collect()
    }
}

/// Pairs `(i, l)` for `l` in the shortlist of `i` or among its positives,
/// tagged 1 for positives.
pub fn build_fusion_training_set<E: Encoder>(
    predictor: &Predictor<'_, E>,
    points: &[SparseVector],
    positives: &[Vec<usize>],
    shortlist: usize,
) -> Result<Vec<FusionSample>> {
    if points.is_empty() {
        return Err(Error::Config("fusion training needs at least one validation point".into()));
    }
    if points.len() != positives.len() {
        return Err(Error::Value(format!("{} points with {} label lists", points.len(), positives.len())));
    }
    let size = shortlist.clamp(1, predictor.num_labels());
    let rows: Vec<Vec<FusionSample>> = points
        .par_iter()
        .zip(positives)
        .enumerate()
        .map(|(i, (x, pos))| {
            let mut pairs = predictor.shortlist(x, size)?;
            let e = predictor.encoder.embed(x)?;
            for &l in pos {
                if !pairs.iter().any(|&(s, _)| s == l) {
                    let d = Descriptor {
                        siamese: dot(predictor.label_embs.row(l), e.as_slice()),
                        classifier: predictor.bank.score(l, e.as_slice()),
                        frequency: predictor.frequencies[l],
                    };
                    pairs.push((l, d));
                }
            }
            Ok(pairs
                .into_iter()
                .map(|(l, d)| FusionSample {
                    point: i,
                    label: l,
                    descriptor: d,
                    target: if pos.contains(&l) { 1.0 } else { 0.0 },
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

pub fn fit_tree(samples: &[FusionSample], params: &TreeParams) -> Result<FusionTree> {
    let xs: Vec<[f64; NUM_FEATURES]> = samples.iter().map(|s| s.descriptor.features()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.target).collect();
    FusionTree::fit(&xs, &ys, params)
}

/// `point_id<TAB>label:score,...` per point.
pub fn format_predictions(preds: &[Vec<(usize, f64)>]) -> String {
    let mut s = String::new();
    for (i, row) in preds.iter().enumerate() {
        let items: Vec<String> = row.iter().map(|(l, v)| format!("{l}:{v}")).collect();
        let _ = writeln!(s, "{i}\t{}", items.join(","));
    }
    s
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[Vec<(usize, f64)>]) -> Result<()> {
    std::fs::write(path, format_predictions(preds))?;
    Ok(())
}

/// Parses prediction TSV into ranked label lists indexed by point id.
pub fn parse_predictions(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Format(format!("predictions line {}: {m}", n + 1));
        let (id, rest) = line.split_once('\t').unwrap_or((line, ""));
        let id: usize = id.trim().parse().map_err(|_| bad("bad point id"))?;
        if id != rows.len() {
            return Err(bad(&format!("expected point id {}, got {id}", rows.len())));
        }
        let mut labels = Vec::new();
        for item in rest.split(',').filter(|s| !s.is_empty()) {
            let (l, v) = item.split_once(':').ok_or_else(|| bad("expected label:score"))?;
            let l: usize = l.parse().map_err(|_| bad("bad label id"))?;
            let v: f64 = v.parse().map_err(|_| bad("bad score"))?;
            if !v.is_finite() || labels.contains(&l) {
                return Err(bad("non-finite score or repeated label"));
            }
            labels.push(l);
        }
        rows.push(labels);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::BagOfEmbeddings;

    fn sv(v: usize, e: &[(usize, f64)]) -> SparseVector {
        SparseVector::new(v, e.to_vec()).unwrap()
    }

    fn setup() -> (BagOfEmbeddings, Vec<SparseVector>) {
        let enc = BagOfEmbeddings::random(6, 4, 1).unwrap();
        let labels = (0..6).map(|t| sv(6, &[(t, 1.0)])).collect();
        (enc, labels)
    }

    #[test]
    fn shortlist_defaults() {
        assert_eq!(shortlist_size(5, None, 1000), 100);
        assert_eq!(shortlist_size(80, None, 1000), 160);
        assert_eq!(shortlist_size(5, None, 30), 30);
        assert_eq!(shortlist_size(5, Some(3), 30), 5);
    }

    #[test]
    fn fused_score_is_plain_sum() {
        let (enc, labels) = setup();
        let le = enc.embed_batch(&labels).unwrap();
        let bank = ClassifierBank::from_label_embeddings(&le);
        let p = Predictor::new(&enc, &bank, &labels, vec![1; 6], IndexMode::Exact)
            .unwrap()
            .with_tree(Some(FusionTree::constant(0.2)));
        let d = Descriptor { siamese: 0.5, classifier: 0.6, frequency: 3 };
        assert!((p.fused_score(&d) - 1.3).abs() < 1e-15);
    }

    #[test]
    fn no_tree_ranks_by_classifier() {
        let (enc, labels) = setup();
        let le = enc.embed_batch(&labels).unwrap();
        let bank = ClassifierBank::from_label_embeddings(&le);
        let p = Predictor::new(&enc, &bank, &labels, vec![1; 6], IndexMode::Exact).unwrap();
        let x = sv(6, &[(2, 1.0), (4, 0.3)]);
        let e = enc.embed(&x).unwrap();
        let mut brute: Vec<(usize, f64)> = (0..6).map(|l| (l, bank.score(l, e.as_slice()))).collect();
        brute.sort_by(crate::ann::rank_order);
        assert_eq!(p.predict(&x, 6).unwrap(), brute);
        assert_eq!(p.predict(&x, 2).unwrap()[0].0, 2);
    }

    #[test]
    fn training_set_unions_positives() {
        let (enc, labels) = setup();
        let le = enc.embed_batch(&labels).unwrap();
        let bank = ClassifierBank::from_label_embeddings(&le);
        let p = Predictor::new(&enc, &bank, &labels, vec![1; 6], IndexMode::Exact).unwrap();
        let x = sv(6, &[(0, 1.0)]);
        let in_list = build_fusion_training_set(&p, &[x.clone()], &[vec![0]], 4).unwrap();
        assert_eq!(in_list.len(), 4);
        assert_eq!(in_list.iter().filter(|s| s.target == 1.0).count(), 1);
        // the label least similar to x is outside a shortlist of 1
        let far = p.predict(&x, 6).unwrap().last().unwrap().0;
        let out = build_fusion_training_set(&p, &[x], &[vec![far]], 1).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().any(|s| s.label == far && s.target == 1.0));
        assert!(matches!(build_fusion_training_set(&p, &[], &[], 4), Err(Error::Config(_))));
    }

    #[test]
    fn prediction_tsv_round_trip() {
        let preds = vec![vec![(3, 0.5), (1, 0.25)], vec![], vec![(0, -1.0)]];
        let text = format_predictions(&preds);
        assert!(text.starts_with("0\t3:0.5,1:0.25\n"));
        assert_eq!(parse_predictions(&text).unwrap(), vec![vec![3, 1], vec![], vec![0]]);
        assert!(parse_predictions("1\t2:0.1\n").is_err());
    }
}
