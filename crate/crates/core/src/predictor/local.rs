use super::gcn::Propagation;
use crate::error::{Error, Result};
use crate::graph::{k_hop, Graph};
use crate::nn::Index;

/// Disjoint copies of the `K`-hop neighborhoods of a set of centers, packed
/// into one propagation structure.
///
/// Copy rows of center `i` occupy `offsets[i]..offsets[i + 1]`; the first is
/// the center itself and the rest are its members in neighborhood order.
/// Every non-center copy is one (center, member) pair of the neighbor
/// bottleneck.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBatch {
    pub centers: Vec<usize>,
    pub offsets: Vec<usize>,
    /// Global node id of every copy row.
    pub copy_node: Index,
    /// Copy row of each center.
    pub center_copy: Index,
    /// Global id of the center of each pair.
    pub pair_center: Index,
    /// Global id of the member of each pair.
    pub pair_member: Index,
    /// Copy row of the member of each pair.
    pub pair_copy: Index,
    /// Pairs of center `i` occupy `pair_offsets[i]..pair_offsets[i + 1]`.
    pub pair_offsets: Vec<usize>,
    pub prop: Propagation,
    /// Sorted distinct nodes whose codes feed the batch.
    pub encoded: Vec<usize>,
    /// One entry per layer of a stack as deep as the hop count.
    pub plan: Vec<LayerPlan>,
}

/// The rows and edges one convolution layer needs for the centers' outputs.
///
/// In a `K`-layer stack, layer `l` only has to produce copies within
/// `K - 1 - l` hops of their center; the last layer produces the centers.
/// Positions in `src` and `own` refer to the layer's input: node ids for the
/// first layer, positions in the previous layer's `rows` after that.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// Copy rows produced, ascending.
    pub rows: Index,
    /// Propagation edges whose target is produced.
    pub edges: Index,
    pub src: Index,
    /// Position of each edge's target in `rows`.
    pub dst: Index,
    /// Input position of each produced row.
    pub own: Index,
}

fn plan_layers(copy_node: &[usize], copy_hop: &[usize], prop: &Propagation, hops: usize) -> Vec<LayerPlan> {
    let mut plans = Vec::with_capacity(hops);
    let mut prev: Vec<usize> = copy_node.to_vec();
    for l in 0..hops {
        let reach = hops - 1 - l;
        let rows: Vec<usize> = (0..copy_hop.len()).filter(|&c| copy_hop[c] <= reach).collect();
        let mut pos = vec![usize::MAX; copy_hop.len()];
        for (i, &c) in rows.iter().enumerate() {
            pos[c] = i;
        }
        let (mut edges, mut src, mut dst) = (Vec::new(), Vec::new(), Vec::new());
        for (e, (&s, &d)) in prop.src.iter().zip(prop.dst.iter()).enumerate() {
            if pos[d] != usize::MAX {
                edges.push(e);
                src.push(prev[s]);
                dst.push(pos[d]);
            }
        }
        let own: Vec<usize> = rows.iter().map(|&c| prev[c]).collect();
        plans.push(LayerPlan {
            rows: rows.into(),
            edges: edges.into(),
            src: src.into(),
            dst: dst.into(),
            own: own.into(),
        });
        prev = pos;
    }
    plans
}

impl LocalBatch {
    pub fn build(g: &Graph, centers: &[usize], hops: usize) -> Result<Self> {
        let mut offsets = vec![0];
        let mut copy_node = Vec::new();
        let mut center_copy = Vec::with_capacity(centers.len());
        let (mut pair_center, mut pair_member, mut pair_copy) = (Vec::new(), Vec::new(), Vec::new());
        let mut pair_offsets = vec![0];
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        let mut seen = vec![false; g.node_count()];
        let mut copy_hop = Vec::new();
        if hops == 0 {
            return Err(Error::validation("hop count K must be at least 1"));
        }
        for &c in centers {
            let nb = k_hop(g, c, hops)?;
            let base = copy_node.len();
            center_copy.push(base);
            copy_node.push(c);
            copy_hop.push(0);
            seen[c] = true;
            for (i, &m) in nb.members.iter().enumerate() {
                pair_center.push(c);
                pair_member.push(m);
                pair_copy.push(base + 1 + i);
                copy_node.push(m);
                copy_hop.push(nb.hops[i]);
                seen[m] = true;
            }
            for &(a, b) in &nb.local_edges {
                src.extend([base + a, base + b]);
                dst.extend([base + b, base + a]);
            }
            offsets.push(copy_node.len());
            pair_offsets.push(pair_center.len());
        }
        let encoded = (0..g.node_count()).filter(|&v| seen[v]).collect();
        let rows = copy_node.len();
        let prop = Propagation::new(rows, src, dst)?;
        let plan = plan_layers(&copy_node, &copy_hop, &prop, hops);
        Ok(LocalBatch {
            centers: centers.to_vec(),
            offsets,
            copy_node: copy_node.into(),
            center_copy: center_copy.into(),
            pair_center: pair_center.into(),
            pair_member: pair_member.into(),
            pair_copy: pair_copy.into(),
            pair_offsets,
            prop,
            encoded,
            plan,
        })
    }

    pub fn rows(&self) -> usize {
        self.copy_node.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pair_center.len()
    }

    /// Global ids of the members of center `i`.
    pub fn members(&self, i: usize) -> &[usize] {
        &self.pair_member[self.pair_offsets[i]..self.pair_offsets[i + 1]]
    }
}
