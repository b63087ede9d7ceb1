use std::collections::VecDeque;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Nodes within `K` hops of a center, with the edges among them.
///
/// Local index `0` is the center and local index `i + 1` is `members[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: usize,
    /// Ordered by hop distance, then node id.
    pub members: Vec<usize>,
    /// Hop distance of each member, in `1..=K`.
    pub hops: Vec<usize>,
    /// Local edges `(a, b)` with `a < b`, sorted.
    pub local_edges: Vec<(usize, usize)>,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn hop_of(&self, node: usize) -> Option<usize> {
        self.members
            .iter()
            .position(|&m| m == node)
            .map(|i| self.hops[i])
    }

    /// Global ids in local order: center first, then members.
    pub fn local_nodes(&self) -> Vec<usize> {
        std::iter::once(self.center)
            .chain(self.members.iter().copied())
            .collect()
    }

    /// Dense adjacency over `{center} ∪ members`.
    pub fn local_adjacency(&self) -> Matrix {
        let n = self.members.len() + 1;
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in &self.local_edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }
}

/// Breadth-first expansion to depth `k` around `center`.
pub fn k_hop(g: &Graph, center: usize, k: usize) -> Result<Neighborhood> {
    g.check_node(center)?;
    if k == 0 {
        return Err(Error::validation("hop count K must be at least 1"));
    }
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[center] = 0;
    let mut queue = VecDeque::from([center]);
    let mut reached = Vec::new();
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                reached.push(w);
                queue.push_back(w);
            }
        }
    }
    reached.sort_unstable_by_key(|&w| (dist[w], w));
    let hops = reached.iter().map(|&w| dist[w]).collect();

    let mut local = std::collections::HashMap::with_capacity(reached.len() + 1);
    local.insert(center, 0usize);
    for (i, &w) in reached.iter().enumerate() {
        local.insert(w, i + 1);
    }
    let mut local_edges = Vec::new();
    for (&u, &lu) in &local {
        for &w in g.neighbors(u) {
            if let Some(&lw) = local.get(&w) {
                if lu < lw {
                    local_edges.push((lu, lw));
                }
            }
        }
    }
    local_edges.sort_unstable();
    Ok(Neighborhood {
        center,
        members: reached,
        hops,
        local_edges,
    })
}
