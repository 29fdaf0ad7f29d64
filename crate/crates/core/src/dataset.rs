//! Sparse datasets in the extreme-classification repository text format.
//!
//! A file starts with a header line `num_rows num_features num_labels`, followed
//! by one line per row: a comma-separated label list, a space, and `id:value`
//! feature pairs. Rows without labels start with a bare space. Label-feature
//! files may omit the third header field.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A sparse feature vector with strictly increasing feature ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseVector {
    /// Builds a vector from `(feature_id, value)` pairs, sorting them by id.
    pub fn new(dim: usize, mut entries: Vec<(usize, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Range("dimensionality must be positive".into()));
        }
        entries.sort_by_key(|e| e.0);
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Format(format!("duplicate feature id {}", w[0].0)));
            }
        }
        for &(id, v) in &entries {
            if id >= dim {
                return Err(Error::Range(format!("feature id {id} >= dimensionality {dim}")));
            }
            if !v.is_finite() {
                return Err(Error::Value(format!("non-finite value {v} for feature {id}")));
            }
        }
        let (indices, values) = entries.into_iter().unzip();
        Ok(Self { indices, values, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    /// Multiplies every value by `alpha`.
    pub fn scaled(&self, alpha: f64) -> SparseVector {
        SparseVector {
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| v * alpha).collect(),
            dim: self.dim,
        }
    }
}

/// Rows and label lists read from one sparse file.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFile {
    pub num_features: usize,
    pub num_labels: usize,
    pub rows: Vec<SparseVector>,
    pub labels: Vec<Vec<usize>>,
}

pub fn parse_sparse_file(path: impl AsRef<Path>) -> Result<SparseFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_sparse_str(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Range(m) => Error::Range(format!("{}: {m}", path.display())),
        Error::Value(m) => Error::Value(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_sparse_str(text: &str) -> Result<SparseFile> {
    let mut lines = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().ok_or_else(|| Error::Format("missing header line".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 && fields.len() != 3 {
        return Err(Error::Format(format!("malformed header {header:?}")));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("malformed header field {s:?}")))
    };
    let num_rows = parse_count(fields[0])?;
    let num_features = parse_count(fields[1])?;
    let num_labels = if fields.len() == 3 { parse_count(fields[2])? } else { 0 };
    if num_features == 0 {
        return Err(Error::Format("header declares zero features".into()));
    }

    let mut rows = Vec::with_capacity(num_rows);
    let mut labels = Vec::with_capacity(num_rows);
    for (lineno, line) in lines.enumerate() {
        let lineno = lineno + 2;
        if rows.len() == num_rows {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Format(format!(
                "more rows than the {num_rows} declared in the header (line {lineno})"
            )));
        }
        let (label_part, feature_part) = split_row(line);
        let mut row_labels = Vec::new();
        for tok in label_part.split(',').filter(|t| !t.is_empty()) {
            let id: usize = tok
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {lineno}: bad label id {tok:?}")))?;
            if id >= num_labels {
                return Err(Error::Range(format!(
                    "line {lineno}: label {id} >= num_labels {num_labels}"
                )));
            }
            row_labels.push(id);
        }
        row_labels.sort_unstable();
        row_labels.dedup();

        let mut entries = Vec::new();
        for tok in feature_part.split_whitespace() {
            let (id, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("line {lineno}: bad feature pair {tok:?}")))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Format(format!("line {lineno}: bad feature id {id:?}")))?;
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Format(format!("line {lineno}: bad feature value {val:?}")))?;
            entries.push((id, val));
        }
        let row = SparseVector::new(num_features, entries).map_err(|e| match e {
            Error::Range(m) => Error::Range(format!("line {lineno}: {m}")),
            Error::Value(m) => Error::Value(format!("line {lineno}: {m}")),
            Error::Format(m) => Error::Format(format!("line {lineno}: {m}")),
            other => other,
        })?;
        rows.push(row);
        labels.push(row_labels);
    }
    if rows.len() != num_rows {
        return Err(Error::Format(format!(
            "header declares {num_rows} rows but file has {}",
            rows.len()
        )));
    }
    Ok(SparseFile { num_features, num_labels, rows, labels })
}

/// Splits a row into its label list and its feature pairs.
fn split_row(line: &str) -> (&str, &str) {
    match line.split_once(' ') {
        Some((first, rest)) if !first.contains(':') => (first, rest),
        Some(_) => ("", line),
        None if line.contains(':') => ("", line),
        None => (line, ""),
    }
}

pub fn format_sparse(file: &SparseFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {} {}", file.rows.len(), file.num_features, file.num_labels);
    for (row, labels) in file.rows.iter().zip(&file.labels) {
        let ls: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
        out.push_str(&ls.join(","));
        for (id, v) in row.entries() {
            let _ = write!(out, " {id}:{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_sparse_file(path: impl AsRef<Path>, file: &SparseFile) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_sparse(file).as_bytes())?;
    Ok(())
}

/// Training data: point features, label features and the relevance relation
/// stored in both directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<SparseVector>,
    label_features: Vec<SparseVector>,
    point_labels: Vec<Vec<usize>>,
    label_points: Vec<Vec<usize>>,
    num_features: usize,
}

pub fn build_dataset(
    points: Vec<SparseVector>,
    label_features: Vec<SparseVector>,
    relevance: Vec<Vec<usize>>,
) -> Result<Dataset> {
    let n = points.len();
    let l = label_features.len();
    if n == 0 || l == 0 {
        return Err(Error::Range(format!("dataset needs N > 0 and L > 0 (got N={n}, L={l})")));
    }
    if relevance.len() != n {
        return Err(Error::Range(format!(
            "relevance has {} rows for {n} points",
            relevance.len()
        )));
    }
    let num_features = points[0].dim();
    for (what, v) in points.iter().map(|p| ("point", p)).chain(label_features.iter().map(|z| ("label", z))) {
        if v.dim() != num_features {
            return Err(Error::Range(format!(
                "{what} feature dimensionality {} differs from shared vocabulary {num_features}",
                v.dim()
            )));
        }
    }
    let mut point_labels = Vec::with_capacity(n);
    let mut label_points = vec![Vec::new(); l];
    for (i, mut row) in relevance.into_iter().enumerate() {
        row.sort_unstable();
        row.dedup();
        if let Some(&bad) = row.iter().find(|&&lab| lab >= l) {
            return Err(Error::Range(format!("point {i} references label {bad} >= L={l}")));
        }
        for &lab in &row {
            label_points[lab].push(i);
        }
        point_labels.push(row);
    }
    Ok(Dataset { points, label_features, point_labels, label_points, num_features })
}

impl Dataset {
    /// Combines a point file and a label-feature file.
    pub fn from_files(points: SparseFile, labels: SparseFile) -> Result<Dataset> {
        if points.num_features != labels.num_features {
            return Err(Error::Range(format!(
                "point files use {} features but label features use {}",
                points.num_features, labels.num_features
            )));
        }
        if points.num_labels != labels.rows.len() {
            return Err(Error::Range(format!(
                "point file declares {} labels but label-feature file has {} rows",
                points.num_labels,
                labels.rows.len()
            )));
        }
        build_dataset(points.rows, labels.rows, points.labels)
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_labels(&self) -> usize {
        self.label_features.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn points(&self) -> &[SparseVector] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &SparseVector {
        &self.points[i]
    }

    pub fn label_features(&self) -> &[SparseVector] {
        &self.label_features
    }

    pub fn label(&self, l: usize) -> &SparseVector {
        &self.label_features[l]
    }

    /// Sorted positive labels of point `i`.
    pub fn positives(&self, i: usize) -> &[usize] {
        &self.point_labels[i]
    }

    /// Sorted points for which label `l` is relevant.
    pub fn label_points(&self, l: usize) -> &[usize] {
        &self.label_points[l]
    }

    pub fn relevance(&self) -> &[Vec<usize>] {
        &self.point_labels
    }

    pub fn is_positive(&self, i: usize, l: usize) -> bool {
        self.point_labels[i].binary_search(&l).is_ok()
    }

    /// Points with at least one positive label.
    pub fn trainable_points(&self) -> Vec<usize> {
        (0..self.num_points()).filter(|&i| !self.point_labels[i].is_empty()).collect()
    }

    /// Number of training points each label is relevant to.
    pub fn label_frequencies(&self) -> Vec<usize> {
        self.label_points.iter().map(Vec::len).collect()
    }

    /// Writes the point file (with relevance) back in sparse format.
    pub fn to_point_file(&self) -> SparseFile {
        SparseFile {
            num_features: self.num_features,
            num_labels: self.num_labels(),
            rows: self.points.clone(),
            labels: self.point_labels.clone(),
        }
    }

    pub fn to_label_file(&self) -> SparseFile {
        SparseFile {
            num_features: self.num_features,
            num_labels: 0,
            rows: self.label_features.clone(),
            labels: vec![Vec::new(); self.num_labels()],
        }
    }
}

/// Transposes a row-indexed adjacency with `cols` columns.
pub fn transpose(rows: &[Vec<usize>], cols: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); cols];
    for (i, row) in rows.iter().enumerate() {
        for &c in row {
            out[c].push(i);
        }
    }
    out
}

/// Counting statistics of the relevance relation.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub num_points: usize,
    pub num_labels: usize,
    pub total_positives: usize,
    /// Positive labels per point.
    pub p: Vec<usize>,
    /// Relevant points per label.
    pub q: Vec<usize>,
    pub p_bar: f64,
    pub q_bar: f64,
    pub p_min: usize,
    pub q_min: usize,
    /// Mean of `(N - q_l) / q_l`; `None` when some label has no positives.
    pub mu1: Option<f64>,
    /// Population variance of `(N - q_l) / q_l`; `None` when `q_min == 0`.
    pub sigma1_sq: Option<f64>,
    /// Population variance of `p_i`.
    pub sigma2_sq: f64,
}

impl DatasetStats {
    /// Whether the moments needed by the negative-mining bound are defined.
    pub fn bound_usable(&self) -> bool {
        self.q_min >= 1
    }

    /// `q_bar * L == p_bar * N`, checked on the integer totals.
    pub fn counting_identity_holds(&self) -> bool {
        self.p.iter().sum::<usize>() == self.q.iter().sum::<usize>()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        let _ = writeln!(s, "num_points = {}", self.num_points);
        let _ = writeln!(s, "num_labels = {}", self.num_labels);
        let _ = writeln!(s, "total_positives = {}", self.total_positives);
        let _ = writeln!(s, "p_bar = {}", self.p_bar);
        let _ = writeln!(s, "q_bar = {}", self.q_bar);
        let _ = writeln!(s, "p_min = {}", self.p_min);
        let _ = writeln!(s, "q_min = {}", self.q_min);
        let _ = writeln!(s, "mu1 = {}", opt(self.mu1));
        let _ = writeln!(s, "sigma1_sq = {}", opt(self.sigma1_sq));
        let _ = writeln!(s, "sigma2_sq = {}", self.sigma2_sq);
        let _ = writeln!(s, "bound_usable = {}", self.bound_usable());
        s
    }
}

fn mean_and_population_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

pub fn compute_stats(ds: &Dataset) -> DatasetStats {
    let n = ds.num_points();
    let l = ds.num_labels();
    let p: Vec<usize> = ds.relevance().iter().map(Vec::len).collect();
    let q = ds.label_frequencies();
    let total: usize = p.iter().sum();
    let pf: Vec<f64> = p.iter().map(|&x| x as f64).collect();
    let (p_bar, sigma2_sq) = mean_and_population_variance(&pf);
    let q_bar = total as f64 / l as f64;
    let q_min = q.iter().copied().min().unwrap_or(0);
    let (mu1, sigma1_sq) = if q_min >= 1 {
        let ratios: Vec<f64> = q.iter().map(|&ql| (n - ql) as f64 / ql as f64).collect();
        let (m, v) = mean_and_population_variance(&ratios);
        (Some(m), Some(v))
    } else {
        (None, None)
    };
    DatasetStats {
        num_points: n,
        num_labels: l,
        total_positives: total,
        p_min: p.iter().copied().min().unwrap_or(0),
        q_min,
        p,
        q,
        p_bar,
        q_bar,
        mu1,
        sigma1_sq,
        sigma2_sq,
    }
}
