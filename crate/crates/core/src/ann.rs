//! Maximum-inner-product search over unit-norm vectors.
//!
//! On the unit sphere the largest inner product is also the smallest
//! Euclidean distance, so the same index serves classifier-score retrieval
//! and radius-style hard-negative queries. The exact mode scans every vector;
//! the approximate mode is a hierarchical navigable small-world graph.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, INDEX_MAGIC};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Embeddings};

/// Vector count above which [`IndexMode::auto`] switches to the graph index.
pub const EXACT_MODE_LIMIT: usize = 50_000;
pub const NORM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexMode {
    Exact,
    Approximate {
        /// Maximum neighbors per node on upper layers (twice this on layer 0).
        degree: usize,
        ef_construction: usize,
        ef_search: usize,
        seed: u64,
    },
}

impl IndexMode {
    pub fn approximate() -> Self {
        IndexMode::Approximate { degree: 16, ef_construction: 200, ef_search: 64, seed: 0 }
    }

    pub fn auto(num_vectors: usize) -> Self {
        if num_vectors < EXACT_MODE_LIMIT {
            IndexMode::Exact
        } else {
            Self::approximate()
        }
    }
}

#[derive(Debug, Clone)]
pub struct MipsIndex {
    vectors: Embeddings,
    ids: Vec<usize>,
    mode: IndexMode,
    graph: Option<Graph>,
}

pub fn build_index(vectors: &Embeddings, mode: IndexMode) -> Result<MipsIndex> {
    build_index_with_ids(vectors, (0..vectors.len()).collect(), mode)
}

pub fn build_index_with_ids(vectors: &Embeddings, ids: Vec<usize>, mode: IndexMode) -> Result<MipsIndex> {
    if vectors.is_empty() {
        return Err(Error::Config("index needs at least one vector".into()));
    }
    if ids.len() != vectors.len() {
        return Err(Error::Config(format!("{} ids for {} vectors", ids.len(), vectors.len())));
    }
    for (i, v) in vectors.rows().enumerate() {
        let n = norm(v);
        if !((n - 1.0).abs() <= NORM_TOLERANCE) {
            return Err(Error::Norm(format!("vector {} has norm {n}", ids[i])));
        }
    }
    let graph = match mode {
        IndexMode::Exact => None,
        IndexMode::Approximate { degree, ef_construction, seed, .. } => {
            if degree < 2 || ef_construction == 0 {
                return Err(Error::Config("graph degree must be >= 2 and ef_construction >= 1".into()));
            }
            Some(Graph::build(vectors, degree, ef_construction, seed))
        }
    };
    Ok(MipsIndex { vectors: vectors.clone(), ids, mode, graph })
}

/// Orders `(id, score)` by score descending, then id ascending.
pub fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`k` of `scored` under [`rank_order`].
pub fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

impl MipsIndex {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.dim()
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn vectors(&self) -> &Embeddings {
        &self.vectors
    }

    /// `(id, score)` pairs in descending score order; `k > len` returns all.
    pub fn query(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(q.len(), self.dim(), "query dimension mismatch");
        match (&self.graph, self.mode) {
            (Some(g), IndexMode::Approximate { ef_search, .. }) => {
                let found = g.search(&self.vectors, q, k, ef_search.max(k));
                top_k(found.into_iter().map(|(s, p)| (self.ids[p as usize], s)).collect(), k)
            }
            _ => self.exact_query(q, k),
        }
    }

    fn exact_query(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let scored = self
            .vectors
            .rows()
            .zip(&self.ids)
            .map(|(v, &id)| (id, dot(v, q)))
            .collect();
        top_k(scored, k)
    }

    /// Writes the stored vectors in the classifier-bank layout.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        checkpoint::save_matrix(path, INDEX_MAGIC, self.len(), self.dim(), self.vectors.as_flat())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored(f64, u32);

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Graph {
    /// `links[node][layer]` neighbor lists.
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    top_layer: usize,
}

impl Graph {
    fn build(vectors: &Embeddings, degree: usize, ef_construction: usize, seed: u64) -> Graph {
        let n = vectors.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level_mult = 1.0 / (degree as f64).ln();
        let mut g = Graph { links: Vec::with_capacity(n), entry: 0, top_layer: 0 };
        for node in 0..n {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let level = (-u.ln() * level_mult).floor() as usize;
            g.links.push(vec![Vec::new(); level + 1]);
            if node == 0 {
                g.top_layer = level;
                continue;
            }
            g.insert(vectors, node as u32, level, degree, ef_construction);
        }
        g
    }

    fn max_links(layer: usize, degree: usize) -> usize {
        if layer == 0 {
            2 * degree
        } else {
            degree
        }
    }

    fn insert(&mut self, vectors: &Embeddings, node: u32, level: usize, degree: usize, ef: usize) {
        let q = vectors.row(node as usize);
        let mut entry = vec![self.entry];
        let mut layer = self.top_layer;
        while layer > level {
            let best = self.search_layer(vectors, q, &entry, 1, layer);
            entry = vec![best[0].1];
            layer -= 1;
        }
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(vectors, q, &entry, ef, layer);
            let chosen: Vec<u32> = found.iter().take(degree).map(|s| s.1).collect();
            self.links[node as usize][layer] = chosen.clone();
            let cap = Self::max_links(layer, degree);
            for &nb in &chosen {
                let list = &mut self.links[nb as usize][layer];
                list.push(node);
                if list.len() > cap {
                    let base = vectors.row(nb as usize);
                    let mut scored: Vec<Scored> =
                        list.iter().map(|&m| Scored(dot(base, vectors.row(m as usize)), m)).collect();
                    scored.sort_by(|a, b| b.cmp(a));
                    scored.truncate(cap);
                    *list = scored.into_iter().map(|s| s.1).collect();
                }
            }
            entry = found.iter().map(|s| s.1).collect();
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = node;
        }
    }

    /// Beam search on one layer; result sorted best first.
    fn search_layer(&self, vectors: &Embeddings, q: &[f64], entry: &[u32], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![false; self.links.len()];
        let mut candidates = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in entry {
            if !visited[e as usize] {
                visited[e as usize] = true;
                let s = Scored(dot(q, vectors.row(e as usize)), e);
                candidates.push(s);
                results.push(Reverse(s));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().map(|r| r.0).unwrap();
            if results.len() >= ef && c < worst {
                break;
            }
            for &nb in &self.links[c.1 as usize][layer] {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                let s = Scored(dot(q, vectors.row(nb as usize)), nb);
                let worst = results.peek().map(|r| r.0).unwrap();
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn search(&self, vectors: &Embeddings, q: &[f64], k: usize, ef: usize) -> Vec<(f64, u32)> {
        let mut entry = vec![self.entry];
        for layer in (1..=self.top_layer).rev() {
            let best = self.search_layer(vectors, q, &entry, 1, layer);
            entry = vec![best[0].1];
        }
        self.search_layer(vectors, q, &entry, ef.max(k), 0)
            .into_iter()
            .map(|s| (s.0, s.1))
            .collect()
    }
}
