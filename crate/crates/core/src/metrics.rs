//! Ranking metrics for extreme classification.
//!
//! Predictions are ranked label lists (best first, duplicate-free). Fewer than
//! `k` predictions count the missing slots as misses.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

fn hits<'a>(preds: &'a [usize], relevant: &'a [usize], k: usize) -> impl Iterator<Item = (usize, usize)> + 'a {
    preds
        .iter()
        .take(k)
        .enumerate()
        .filter(move |(_, l)| relevant.contains(l))
        .map(|(j, &l)| (j, l))
}

#[inline]
fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 2) as f64).log2()
}

pub fn precision_at_k(preds: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    hits(preds, relevant, k).count() as f64 / k as f64
}

pub fn recall_at_k(preds: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    hits(preds, relevant, k).count() as f64 / relevant.len() as f64
}

pub fn ndcg_at_k(preds: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = hits(preds, relevant, k).map(|(j, _)| discount(j)).sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(discount).sum();
    dcg / ideal
}

/// Inverse-propensity weights `p_l = 1 / (1 + C (f_l + B)^-A)` with
/// `C = (ln N - 1)(B + 1)^A`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub propensities: Vec<f64>,
}

impl PropensityModel {
    pub fn uniform(num_labels: usize) -> Self {
        Self { a: 0.0, b: 0.0, c: 0.0, propensities: vec![1.0; num_labels] }
    }

    #[inline]
    pub fn weight(&self, label: usize) -> f64 {
        1.0 / self.propensities[label]
    }
}

pub const DEFAULT_A: f64 = 0.55;
pub const DEFAULT_B: f64 = 1.5;

pub fn propensities(freqs: &[usize], num_points: usize, a: f64, b: f64) -> Result<PropensityModel> {
    if num_points < 3 {
        return Err(Error::Config(format!("propensity model needs N >= 3, got {num_points}")));
    }
    if !(a > 0.0 && a < 1.0) || !(b >= 0.0) {
        return Err(Error::Config(format!("propensity parameters out of range: A={a}, B={b}")));
    }
    let c = ((num_points as f64).ln() - 1.0) * (b + 1.0).powf(a);
    let propensities = freqs
        .iter()
        .map(|&f| 1.0 / (1.0 + c * (f as f64 + b).powf(-a)))
        .collect();
    Ok(PropensityModel { a, b, c, propensities })
}

fn sorted_relevant_weights(relevant: &[usize], props: &PropensityModel) -> Vec<f64> {
    let mut w: Vec<f64> = relevant.iter().map(|&l| props.weight(l)).collect();
    w.sort_by(|x, y| y.total_cmp(x));
    w
}

/// Propensity-weighted precision normalized by the best achievable value.
pub fn psp_at_k(preds: &[usize], relevant: &[usize], props: &PropensityModel, k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let got: f64 = hits(preds, relevant, k).map(|(_, l)| props.weight(l)).sum();
    let best: f64 = sorted_relevant_weights(relevant, props).into_iter().take(k).sum();
    got / best
}

/// Propensity-weighted nDCG normalized by the best achievable value.
pub fn psn_at_k(preds: &[usize], relevant: &[usize], props: &PropensityModel, k: usize) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let got: f64 = hits(preds, relevant, k).map(|(j, l)| props.weight(l) * discount(j)).sum();
    let best: f64 = sorted_relevant_weights(relevant, props)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(j, w)| w * discount(j))
        .sum();
    got / best
}

/// Dataset-level metrics: means over points with non-empty ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub num_evaluated: usize,
    pub num_skipped: usize,
    pub propensity_a: f64,
    pub propensity_b: f64,
}

impl MetricReport {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.values.get(key).copied()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "num_evaluated = {}", self.num_evaluated);
        let _ = writeln!(s, "num_skipped_empty = {}", self.num_skipped);
        let _ = writeln!(s, "propensity_a = {}", self.propensity_a);
        let _ = writeln!(s, "propensity_b = {}", self.propensity_b);
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Per-point metric row, in the order of `ks`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMetrics {
    pub point: usize,
    pub values: Vec<(String, f64)>,
}

pub fn point_metrics(preds: &[usize], relevant: &[usize], props: &PropensityModel, ks: &[usize]) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for &k in ks {
        out.push((format!("P@{k}"), precision_at_k(preds, relevant, k)));
        out.push((format!("N@{k}"), ndcg_at_k(preds, relevant, k)));
        out.push((format!("R@{k}"), recall_at_k(preds, relevant, k)));
        out.push((format!("PSP@{k}"), psp_at_k(preds, relevant, props, k)));
        out.push((format!("PSN@{k}"), psn_at_k(preds, relevant, props, k)));
    }
    out
}

pub fn evaluate(
    predictions: &[Vec<usize>],
    ground_truth: &[Vec<usize>],
    props: &PropensityModel,
    ks: &[usize],
) -> Result<(MetricReport, Vec<PointMetrics>)> {
    if predictions.len() != ground_truth.len() {
        return Err(Error::Value(format!(
            "{} prediction rows for {} ground-truth rows",
            predictions.len(),
            ground_truth.len()
        )));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be >= 1".into()));
    }
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for (i, (pred, rel)) in predictions.iter().zip(ground_truth).enumerate() {
        if rel.is_empty() {
            skipped += 1;
            continue;
        }
        let values = point_metrics(pred, rel, props, ks);
        for (k, v) in &values {
            *sums.entry(k.clone()).or_insert(0.0) += v;
        }
        rows.push(PointMetrics { point: i, values });
    }
    let n = rows.len();
    let values = sums
        .into_iter()
        .map(|(k, s)| (k, if n > 0 { s / n as f64 } else { 0.0 }))
        .collect();
    Ok((
        MetricReport { values, num_evaluated: n, num_skipped: skipped, propensity_a: props.a, propensity_b: props.b },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precision_examples() {
        assert!((precision_at_k(&[0, 1, 2], &[0, 2], 3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&[5], &[5], 1), 1.0);
        // padded misses
        assert_eq!(precision_at_k(&[5], &[5], 5), 0.2);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[1, 2, 3], &[1, 2, 3, 4], 3), 1.0);
        let v = ndcg_at_k(&[1, 0], &[0], 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
        assert_eq!(ndcg_at_k(&[1, 0], &[], 2), 0.0);
    }

    #[test]
    fn ndcg_depends_on_order_precision_does_not() {
        let rel = [0];
        assert_eq!(precision_at_k(&[0, 1], &rel, 2), precision_at_k(&[1, 0], &rel, 2));
        assert!(ndcg_at_k(&[0, 1], &rel, 2) > ndcg_at_k(&[1, 0], &rel, 2));
    }

    #[test]
    fn recall_examples() {
        assert_eq!(recall_at_k(&[0, 5, 6, 7, 8], &[0, 1], 5), 0.5);
        assert_eq!(recall_at_k(&[1, 0], &[0, 1], 5), 1.0);
        assert_eq!(recall_at_k(&[1, 0], &[], 5), 0.0);
    }

    #[test]
    fn propensity_formula() {
        let m = propensities(&[1, 10, 1000, 1_000_000_000], 10_000, 0.55, 1.5).unwrap();
        let c = (10_000f64.ln() - 1.0) * 2.5f64.powf(0.55);
        assert!((m.c - c).abs() < 1e-12);
        let expected = 1.0 / (1.0 + c * 2.5f64.powf(-0.55));
        assert!((m.propensities[0] - expected).abs() < 1e-15);
        assert!(m.propensities.windows(2).all(|w| w[0] < w[1]));
        assert!(m.propensities[3] > 0.99);
    }

    #[test]
    fn propensity_needs_three_points() {
        assert!(propensities(&[1], 2, 0.55, 1.5).is_err());
        assert!(propensities(&[1], 100, 1.5, 1.5).is_err());
    }

    #[test]
    fn uniform_psp_reduces_to_precision() {
        let u = PropensityModel::uniform(10);
        let preds = [3, 1, 4, 0, 5];
        let rel = [1, 4, 5, 9, 2, 6];
        for k in 1..=5 {
            assert!((psp_at_k(&preds, &rel, &u, k) - precision_at_k(&preds, &rel, k)).abs() < 1e-15);
        }
        // |relevant| < k: PSP = P@k * k / |relevant|
        let rel = [3, 7];
        let v = psp_at_k(&preds, &rel, &u, 5);
        assert!((v - precision_at_k(&preds, &rel, 5) * 5.0 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_weighted_ranking_scores_one() {
        let m = propensities(&[1, 50, 3, 1000], 5000, 0.55, 1.5).unwrap();
        let rel = [0, 1, 2, 3];
        // rarest labels first
        let mut preds = rel.to_vec();
        preds.sort_by(|&a, &b| m.weight(b).total_cmp(&m.weight(a)));
        for k in 1..=4 {
            assert!((psp_at_k(&preds, &rel, &m, k) - 1.0).abs() < 1e-12);
            assert!((psn_at_k(&preds, &rel, &m, k) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_skips_empty_ground_truth() {
        let u = PropensityModel::uniform(4);
        let (rep, rows) = evaluate(&[vec![0], vec![1]], &[vec![0], vec![]], &u, &[1]).unwrap();
        assert_eq!(rep.num_evaluated, 1);
        assert_eq!(rep.num_skipped, 1);
        assert_eq!(rep.get("P@1"), Some(1.0));
        assert_eq!(rows.len(), 1);
        assert!(rep.to_text().contains("P@1 = 1"));
    }
}
