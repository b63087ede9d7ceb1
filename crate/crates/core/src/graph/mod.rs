//! Undirected attributed graphs and everything that builds or alters them.

mod generate;
mod io;
mod neighborhood;
mod perturb;
mod split;

pub use generate::{generate_sbm, SbmParams};
pub use io::{load_graph, read_graph, write_graph, LoadReport};
pub use neighborhood::{k_hop, Neighborhood};
pub use perturb::{
    apply_flips, perturb_heterophilic, perturb_heterophilic_targeted, perturb_random,
    Perturbation,
};
pub use split::{floor_fraction, split_nodes, subsample_graph, Splits};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Simple undirected graph with node features and class labels.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted. Self-loops and
/// duplicates never reach storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    node_count: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

/// What [`Graph::new`] silently repaired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

impl Graph {
    pub fn new(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
    ) -> Result<(Graph, BuildReport)> {
        if features.rows() != node_count {
            return Err(Error::validation(format!(
                "{} feature rows for {node_count} nodes",
                features.rows()
            )));
        }
        if labels.len() != node_count {
            return Err(Error::validation(format!(
                "{} labels for {node_count} nodes",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::validation(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("node features".into()));
        }
        let mut report = BuildReport::default();
        let mut stored = Vec::new();
        for (u, v) in edges {
            if u >= node_count || v >= node_count {
                return Err(Error::validation(format!(
                    "edge ({u}, {v}) references a node outside 0..{node_count}"
                )));
            }
            if u == v {
                report.self_loops += 1;
                continue;
            }
            stored.push((u.min(v), u.max(v)));
        }
        stored.sort_unstable();
        let before = stored.len();
        stored.dedup();
        report.duplicate_edges = before - stored.len();

        let mut neighbors = vec![Vec::new(); node_count];
        for &(u, v) in &stored {
            neighbors[u].push(v);
            neighbors[v].push(u);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok((
            Graph {
                node_count,
                edges: stored,
                neighbors,
                features,
                labels,
                class_count,
            },
            report,
        ))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.node_count && self.neighbors[u].binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &[f64] {
        self.features.row(v)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn check_node(&self, v: usize) -> Result<()> {
        if v >= self.node_count {
            return Err(Error::validation(format!(
                "node {v} outside 0..{}",
                self.node_count
            )));
        }
        Ok(())
    }

    /// Dense symmetric adjacency with zero diagonal.
    pub fn adjacency(&self) -> Matrix {
        let mut a = Matrix::zeros(self.node_count, self.node_count);
        for &(u, v) in &self.edges {
            a[(u, v)] = 1.0;
            a[(v, u)] = 1.0;
        }
        a
    }

    /// Both orientations of every edge as `(source, target)` lists.
    pub fn directed_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let mut src = Vec::with_capacity(2 * self.edges.len());
        let mut dst = Vec::with_capacity(2 * self.edges.len());
        for &(u, v) in &self.edges {
            src.push(u);
            dst.push(v);
            src.push(v);
            dst.push(u);
        }
        (src, dst)
    }

    /// Hex SHA-256 over node count, edges, features and labels.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.node_count as u64).to_le_bytes());
        h.update((self.class_count as u64).to_le_bytes());
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        for x in self.features.data() {
            h.update(x.to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Same nodes and attributes with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        Graph::new(
            self.node_count,
            edges,
            self.features.clone(),
            self.labels.clone(),
            self.class_count,
        )
        .map(|(g, _)| g)
    }
}
