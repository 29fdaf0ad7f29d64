//! Depth-capped regression tree over score descriptors.
//!
//! Serialized as magic, `u32` version, `u64` node count, then the nodes in
//! preorder as `(i32 feature, f64 threshold, f64 value)`; leaves use feature
//! `-1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const FUSION_MAGIC: [u8; 8] = *b"XCMFUS\0\0";
pub const FUSION_VERSION: u32 = 1;
pub const MAX_DEPTH: usize = 7;
pub const DEFAULT_MIN_LEAF: usize = 16;
pub const NUM_FEATURES: usize = 3;

const NODE_BYTES: usize = 4 + 8 + 8;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: Box<Node>, right: Box<Node> },
}

/// Regression tree; `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTree {
    root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: MAX_DEPTH, min_leaf: DEFAULT_MIN_LEAF }
    }
}

fn mean(ys: &[f64]) -> f64 {
    ys.iter().sum::<f64>() / ys.len() as f64
}

fn sse(ys: &[f64]) -> f64 {
    let m = mean(ys);
    ys.iter().map(|y| (y - m).powi(2)).sum()
}

/// Best `(feature, threshold, error)` over all midpoints between distinct
/// consecutive values that leave at least `min_leaf` samples per side.
fn best_split(xs: &[[f64; NUM_FEATURES]], ys: &[f64], idx: &[usize], min_leaf: usize) -> Option<(usize, f64, f64)> {
    let n = idx.len();
    let total: f64 = idx.iter().map(|&i| ys[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| ys[i] * ys[i]).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..NUM_FEATURES {
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let (mut s, mut sq) = (0.0, 0.0);
        for j in 0..n - 1 {
            let y = ys[order[j]];
            s += y;
            sq += y * y;
            let left = j + 1;
            let right = n - left;
            let (a, b) = (xs[order[j]][f], xs[order[j + 1]][f]);
            if left < min_leaf || right < min_leaf || a == b {
                continue;
            }
            let err = (sq - s * s / left as f64) + ((total_sq - sq) - (total - s).powi(2) / right as f64);
            if best.map_or(true, |(_, _, e)| err < e) {
                best = Some((f, a + (b - a) / 2.0, err));
            }
        }
    }
    best
}

fn grow(xs: &[[f64; NUM_FEATURES]], ys: &[f64], idx: Vec<usize>, depth: usize, p: &TreeParams) -> Node {
    let targets: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let value = mean(&targets);
    let node_err = sse(&targets);
    if depth >= p.max_depth || node_err <= 0.0 || idx.len() < 2 * p.min_leaf {
        return Node::Leaf(value);
    }
    match best_split(xs, ys, &idx, p.min_leaf) {
        Some((feature, threshold, err)) if err < node_err => {
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| xs[i][feature] <= threshold);
            Node::Split {
                feature,
                threshold,
                left: Box::new(grow(xs, ys, l, depth + 1, p)),
                right: Box::new(grow(xs, ys, r, depth + 1, p)),
            }
        }
        _ => Node::Leaf(value),
    }
}

impl FusionTree {
    /// Greedy squared-error fit with mean leaf values.
    pub fn fit(xs: &[[f64; NUM_FEATURES]], ys: &[f64], params: &TreeParams) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::Config(format!(
                "tree needs matching non-empty inputs ({} descriptors, {} targets)",
                xs.len(),
                ys.len()
            )));
        }
        if params.max_depth > MAX_DEPTH || params.min_leaf == 0 {
            return Err(Error::Config(format!(
                "tree depth must be <= {MAX_DEPTH} and min_leaf >= 1, got {params:?}"
            )));
        }
        if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite tree input".into()));
        }
        Ok(Self { root: grow(xs, ys, (0..xs.len()).collect(), 0, params) })
    }

    pub fn constant(value: f64) -> Self {
        Self { root: Node::Leaf(value) }
    }

    pub fn predict(&self, x: &[f64; NUM_FEATURES]) -> f64 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf(v) => return *v,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + d(left).max(d(right)),
            }
        }
        d(&self.root)
    }

    pub fn num_nodes(&self) -> usize {
        fn c(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 1,
                Node::Split { left, right, .. } => 1 + c(left) + c(right),
            }
        }
        c(&self.root)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        fn push(n: &Node, buf: &mut Vec<u8>) {
            let (feature, threshold, value) = match n {
                Node::Leaf(v) => (-1i32, 0.0, *v),
                Node::Split { feature, threshold, .. } => (*feature as i32, *threshold, 0.0),
            };
            buf.extend_from_slice(&feature.to_le_bytes());
            buf.extend_from_slice(&threshold.to_le_bytes());
            buf.extend_from_slice(&value.to_le_bytes());
            if let Node::Split { left, right, .. } = n {
                push(left, buf);
                push(right, buf);
            }
        }
        let mut buf = Vec::new();
        buf.extend_from_slice(&FUSION_MAGIC);
        buf.extend_from_slice(&FUSION_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.num_nodes() as u64).to_le_bytes());
        push(&self.root, &mut buf);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("fusion model: {m}"));
        if bytes.len() < 20 || bytes[..8] != FUSION_MAGIC {
            return Err(bad("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FUSION_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if count == 0 || body.len() != count.checked_mul(NODE_BYTES).ok_or_else(|| bad("node count overflow"))? {
            return Err(bad("node count does not match body size"));
        }
        let mut nodes = body.chunks_exact(NODE_BYTES).map(|c| {
            (
                i32::from_le_bytes(c[..4].try_into().unwrap()),
                f64::from_le_bytes(c[4..12].try_into().unwrap()),
                f64::from_le_bytes(c[12..20].try_into().unwrap()),
            )
        });
        fn read(it: &mut impl Iterator<Item = (i32, f64, f64)>, depth: usize) -> Result<Node> {
            let bad = |m: &str| Error::Format(format!("fusion model: {m}"));
            let (f, t, v) = it.next().ok_or_else(|| bad("truncated node list"))?;
            if f == -1 {
                if !v.is_finite() {
                    return Err(bad("non-finite leaf value"));
                }
                return Ok(Node::Leaf(v));
            }
            if f < 0 || f as usize >= NUM_FEATURES || !t.is_finite() || depth >= MAX_DEPTH {
                return Err(bad("invalid split node"));
            }
            let left = Box::new(read(it, depth + 1)?);
            let right = Box::new(read(it, depth + 1)?);
            Ok(Node::Split { feature: f as usize, threshold: t, left, right })
        }
        let root = read(&mut nodes, 0)?;
        if nodes.next().is_some() {
            return Err(bad("trailing nodes"));
        }
        Ok(Self { root })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
