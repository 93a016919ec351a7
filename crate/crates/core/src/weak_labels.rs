//! Batch-level weak labels from a mutual 1-nearest-neighbour graph.
//!
//! Embeddings are compared by cosine similarity, an edge joins `i` and `j`
//! when each is the other's nearest neighbour, and connected components
//! (Hoshen–Kopelman union-find) become weak classes.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::types::EmbeddingBatch;

/// Dense symmetric `n × n` similarity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Dimension(format!(
                "similarity matrix of size {n} needs {} values, got {}",
                n * n,
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Undirected graph with edges stored as `(i, j)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl SimilarityGraph {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidArgument(format!("self-loop at vertex {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::InvalidArgument(format!(
                    "edge ({a},{b}) out of range for {n} vertices"
                )));
            }
            set.insert((a.min(b), a.max(b)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }
}

/// Dense 0-based component ids, numbered in order of first vertex occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabels {
    labels: Vec<usize>,
}

impl ComponentLabels {
    /// Renumbers arbitrary ids to dense first-occurrence order.
    pub fn from_raw(raw: &[usize]) -> Self {
        let mut remap = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|r| {
                let next = remap.len();
                *remap.entry(*r).or_insert(next)
            })
            .collect();
        Self { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn component_count(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Symmetric binary `n × n` label matrix with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeakLabelMatrix {
    n: usize,
    y: Vec<bool>,
}

impl WeakLabelMatrix {
    pub fn new(n: usize, y: Vec<bool>) -> Result<Self> {
        if y.len() != n * n {
            return Err(Error::Dimension(format!(
                "label matrix of size {n} needs {} entries, got {}",
                n * n,
                y.len()
            )));
        }
        for i in 0..n {
            if y[i * n + i] {
                return Err(Error::InvalidArgument(format!("diagonal entry {i} is set")));
            }
            for j in i + 1..n {
                if y[i * n + j] != y[j * n + i] {
                    return Err(Error::InvalidArgument(format!(
                        "label matrix not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(Self { n, y })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            y: vec![false; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.y[i * self.n + j]
    }

    pub fn positives(&self, i: usize) -> usize {
        self.y[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }
}

pub(crate) fn row_norms(batch: &EmbeddingBatch) -> Result<Vec<f64>> {
    batch
        .rows()
        .enumerate()
        .map(|(row, r)| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                Ok(norm)
            } else {
                Err(Error::DegenerateEmbedding { row })
            }
        })
        .collect()
}

pub fn cosine_similarity_matrix(batch: &EmbeddingBatch) -> Result<SimilarityMatrix> {
    let norms = row_norms(batch)?;
    let n = batch.count();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in i + 1..n {
            let dot: f64 = batch.row(i).iter().zip(batch.row(j)).map(|(a, b)| a * b).sum();
            let s = dot / (norms[i] * norms[j]);
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix::new(n, values)
}

fn nearest_neighbour(s: &SimilarityMatrix, i: usize) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for k in (0..s.n()).filter(|&k| k != i) {
        let v = s.get(i, k);
        // strict comparison keeps the smallest index on ties
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k)
}

/// Edge `{i, j}` iff `j` is `i`'s nearest neighbour and vice versa.
pub fn mutual_nn_graph(s: &SimilarityMatrix) -> SimilarityGraph {
    let nn: Vec<Option<usize>> = (0..s.n()).map(|i| nearest_neighbour(s, i)).collect();
    let edges = (0..s.n()).filter_map(|i| match nn[i] {
        Some(j) if i < j && nn[j] == Some(i) => Some((i, j)),
        _ => None,
    });
    SimilarityGraph::new(s.n(), edges).expect("edges come from valid indices")
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Union-find labeling of the graph's connected components.
pub fn hoshen_kopelman(g: &SimilarityGraph) -> ComponentLabels {
    let mut uf = UnionFind::new(g.n());
    for &(a, b) in g.edges() {
        uf.union(a, b);
    }
    let roots: Vec<usize> = (0..g.n()).map(|i| uf.find(i)).collect();
    ComponentLabels::from_raw(&roots)
}

pub fn weak_label_matrix(labels: &ComponentLabels) -> WeakLabelMatrix {
    let l = labels.labels();
    let n = l.len();
    let mut y = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            y[i * n + j] = i != j && l[i] == l[j];
        }
    }
    WeakLabelMatrix { n, y }
}

/// Similarity → mutual-NN graph → components → label matrix.
pub fn weak_labels(batch: &EmbeddingBatch) -> Result<WeakLabelMatrix> {
    if batch.count() < 2 {
        return Ok(WeakLabelMatrix::zeros(batch.count()));
    }
    let s = cosine_similarity_matrix(batch)?;
    Ok(weak_label_matrix(&hoshen_kopelman(&mutual_nn_graph(&s))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(deg: f64) -> Vec<f64> {
        let r = deg.to_radians();
        vec![r.cos(), r.sin()]
    }

    #[test]
    fn cosine_examples() {
        let b = EmbeddingBatch::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(cosine_similarity_matrix(&b).unwrap().values(), &[1.0, 0.0, 0.0, 1.0]);
        let h = 0.5f64.sqrt();
        let b = EmbeddingBatch::from_rows(&[vec![1.0, 0.0], vec![h, h]]).unwrap();
        let s = cosine_similarity_matrix(&b).unwrap();
        assert!((s.get(0, 1) - 2f64.sqrt() / 2.0).abs() < 1e-15);
        let b5 = EmbeddingBatch::from_rows(&[vec![5.0, 0.0], vec![h, h]]).unwrap();
        assert_eq!(cosine_similarity_matrix(&b5).unwrap(), s);
    }

    #[test]
    fn zero_row_is_degenerate() {
        let b = EmbeddingBatch::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            cosine_similarity_matrix(&b),
            Err(Error::DegenerateEmbedding { row: 1 })
        ));
    }

    #[test]
    fn two_points_always_connected() {
        let b = EmbeddingBatch::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.1]]).unwrap();
        let g = mutual_nn_graph(&cosine_similarity_matrix(&b).unwrap());
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn four_angles() {
        let b = EmbeddingBatch::from_rows(&[unit(0.0), unit(5.0), unit(180.0), unit(185.0)]).unwrap();
        let g = mutual_nn_graph(&cosine_similarity_matrix(&b).unwrap());
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1), (2, 3)]);
        assert_eq!(hoshen_kopelman(&g).labels(), &[0, 0, 1, 1]);
    }

    #[test]
    fn one_directional_nn_is_not_an_edge() {
        // 1's NN is 0 (0.5 > 0.1) but 0's NN is 2 (0.9 > 0.5)
        let s = SimilarityMatrix::new(3, vec![1.0, 0.5, 0.9, 0.5, 1.0, 0.1, 0.9, 0.1, 1.0]).unwrap();
        let g = mutual_nn_graph(&s);
        assert!(!g.has_edge(0, 1));
        assert!(g.has_edge(0, 2));
    }

    #[test]
    fn ties_go_to_smallest_index() {
        let s = SimilarityMatrix::new(3, vec![1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0]).unwrap();
        let g = mutual_nn_graph(&s);
        assert_eq!(g.edges().iter().copied().collect::<Vec<_>>(), vec![(0, 1)]);
    }

    #[test]
    fn hoshen_kopelman_examples() {
        let g = SimilarityGraph::new(4, []).unwrap();
        assert_eq!(hoshen_kopelman(&g).labels(), &[0, 1, 2, 3]);
        let g = SimilarityGraph::new(4, [(0, 1), (1, 2), (2, 3)]).unwrap();
        assert_eq!(hoshen_kopelman(&g).labels(), &[0, 0, 0, 0]);
        let g = SimilarityGraph::new(5, [(0, 1), (2, 3)]).unwrap();
        assert_eq!(hoshen_kopelman(&g).labels(), &[0, 0, 1, 1, 2]);
        let g = SimilarityGraph::new(4, [(3, 1)]).unwrap();
        assert_eq!(hoshen_kopelman(&g).labels(), &[0, 1, 2, 1]);
    }

    #[test]
    fn label_matrix_examples() {
        let y = weak_label_matrix(&ComponentLabels::from_raw(&[0, 0, 1, 1]));
        let set: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .filter(|&(i, j)| y.get(i, j))
            .collect();
        assert_eq!(set, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        let y = weak_label_matrix(&ComponentLabels::from_raw(&[0, 1, 2]));
        assert_eq!(y, WeakLabelMatrix::zeros(3));
        let y = weak_label_matrix(&ComponentLabels::from_raw(&[7, 7, 7]));
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(y.get(i, j), i != j);
            }
        }
    }

    #[test]
    fn graph_rejects_self_loops() {
        assert!(SimilarityGraph::new(3, [(1, 1)]).is_err());
        assert!(SimilarityGraph::new(3, [(1, 3)]).is_err());
    }
}
