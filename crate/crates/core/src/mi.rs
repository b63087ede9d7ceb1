//! Pair-score estimator and the self-supervision it gives the neighbor
//! bottleneck.
//!
//! The estimator embeds raw node attributes with an MLP, never the graph, and
//! scores a pair as `s_vu = sigmoid(f_M(x_v)ᵀ f_M(x_u))`. It is trained
//! contrastively: linked pairs against uniformly drawn negatives. Once frozen,
//! it splits each node's neighbors into positives (`s_vu >= T`) and negatives
//! (`s_vu < T`), and the neighbor bottleneck is pushed to keep the former and
//! drop the latter.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::bottleneck::{clamp_prob, logit_bound};
use crate::config::MiConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::nn::{Checkpoint, Index, Mlp, Tape, Var};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::{dot, sigmoid, Matrix};
use crate::trainer::{fit, LossBreakdown, Selection};

#[derive(Debug, Clone, PartialEq)]
pub struct MiEstimator {
    pub mlp: Mlp,
    pub threshold: f64,
}

impl MiEstimator {
    pub fn new(input_dim: usize, cfg: &MiConfig, rng: &mut Rng) -> Result<Self> {
        Ok(MiEstimator {
            mlp: Mlp::new("mi", &[input_dim, cfg.hidden_dim, cfg.embed_dim], rng)?,
            threshold: cfg.threshold,
        })
    }

    /// Embeddings of every row of a feature matrix.
    pub fn embed(&self, features: &Matrix) -> Result<Matrix> {
        self.mlp.forward_values(features)
    }

    /// Content hash of the estimator parameters.
    pub fn hash(&self) -> String {
        Checkpoint::new(&[&self.mlp.params]).hash()
    }
}

pub fn mi_score(x_v: &[f64], x_u: &[f64], est: &MiEstimator) -> Result<f64> {
    let e = est.embed(&Matrix::from_rows(&[x_v.to_vec(), x_u.to_vec()])?)?;
    Ok(sigmoid(dot(e.row(0), e.row(1))))
}

/// `negatives_per_edge` uniform draws per directed linked pair `(v, u)`,
/// excluding `v`, as `(v, n)` lists.
pub fn draw_negatives(
    node_count: usize,
    pos_v: &[usize],
    negatives_per_edge: usize,
    rng: &mut Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut nv = Vec::with_capacity(pos_v.len() * negatives_per_edge);
    let mut nn = Vec::with_capacity(pos_v.len() * negatives_per_edge);
    for &v in pos_v {
        for _ in 0..negatives_per_edge {
            let r = rng.random_range(0..node_count - 1);
            nv.push(v);
            nn.push(if r >= v { r + 1 } else { r });
        }
    }
    (nv, nn)
}

/// Mean over linked pairs of `-ln s_vu - (1/k) sum_n ln(1 - s_vn)`.
#[allow(clippy::too_many_arguments)]
pub fn contrastive_loss(
    tape: &mut Tape,
    emb: Var,
    pos_v: Index,
    pos_u: Index,
    neg_v: Index,
    neg_n: Index,
    negatives_per_edge: usize,
) -> Result<Var> {
    let pairs = pos_v.len();
    let a = tape.gather_rows(emb, pos_v)?;
    let b = tape.gather_rows(emb, pos_u)?;
    let x_pos = tape.row_dot(a, b)?;
    let flipped = tape.scale(x_pos, -1.0);
    let pos_terms = tape.softplus(flipped);
    let pos_sum = tape.sum_all(pos_terms);
    let c = tape.gather_rows(emb, neg_v)?;
    let d = tape.gather_rows(emb, neg_n)?;
    let x_neg = tape.row_dot(c, d)?;
    let neg_terms = tape.softplus(x_neg);
    let neg_sum = tape.sum_all(neg_terms);
    let neg_mean = tape.scale(neg_sum, 1.0 / negatives_per_edge as f64);
    let total = tape.add(pos_sum, neg_mean)?;
    Ok(tape.scale(total, 1.0 / pairs as f64))
}

/// Trains the estimator on linked pairs, redrawing negatives every epoch.
pub fn train_mi_estimator(
    g: &Graph,
    negatives_per_edge: usize,
    cfg: &MiConfig,
    seed: u64,
) -> Result<MiEstimator> {
    if negatives_per_edge == 0 {
        return Err(Error::validation("negatives_per_edge must be at least 1"));
    }
    if g.edge_count() == 0 {
        return Err(Error::validation("the pair-score estimator needs at least one edge"));
    }
    let init = MiEstimator::new(g.feature_dim(), cfg, &mut rng_for(seed, &[stream::INIT, 7]))?;
    let (src, dst) = g.directed_edges();
    let pos_v: Index = src.clone().into();
    let pos_u: Index = dst.into();
    let mut neg_rng = rng_for(seed, &[stream::MI_NEGATIVES]);
    let outcome = fit(
        vec![init.mlp.params.clone()],
        cfg.epochs,
        cfg.adam,
        Selection::LastEpoch,
        |_, sets| {
            let (nv, nn) = draw_negatives(g.node_count(), &src, negatives_per_edge, &mut neg_rng);
            let mut tape = Tape::new();
            let bound = sets[0].bind(&mut tape);
            let mlp = Mlp::from_params(sets[0].clone())?;
            let x = tape.constant(g.features().clone());
            let emb = mlp.forward(&mut tape, &bound, x)?;
            let loss = contrastive_loss(
                &mut tape,
                emb,
                pos_v.clone(),
                pos_u.clone(),
                nv.into(),
                nn.into(),
                negatives_per_edge,
            )?;
            tape.backward(loss)?;
            Ok((
                LossBreakdown::supervised(tape.value(loss).item()),
                vec![sets[0].gradients(&tape, &bound)],
            ))
        },
        |_| Ok(0.0),
    )?;
    Ok(MiEstimator {
        mlp: Mlp::from_params(outcome.params.into_iter().next().unwrap())?,
        threshold: cfg.threshold,
    })
}

/// Positive and negative neighbors of every node, each sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborPartition {
    pub pos: Vec<Vec<usize>>,
    pub neg: Vec<Vec<usize>>,
}

impl NeighborPartition {
    pub fn node_count(&self) -> usize {
        self.pos.len()
    }

    pub fn is_negative(&self, v: usize, u: usize) -> bool {
        self.neg[v].binary_search(&u).is_ok()
    }
}

/// `u` is a negative neighbor of `v` when `s_vu < T`.
pub fn partition_neighbors(g: &Graph, est: &MiEstimator) -> Result<NeighborPartition> {
    let emb = est.embed(g.features())?;
    let n = g.node_count();
    let (mut pos, mut neg) = (vec![Vec::new(); n], vec![Vec::new(); n]);
    for v in 0..n {
        for &u in g.neighbors(v) {
            if sigmoid(dot(emb.row(v), emb.row(u))) < est.threshold {
                neg[v].push(u);
            } else {
                pos[v].push(u);
            }
        }
    }
    Ok(NeighborPartition { pos, neg })
}

/// `(1/|V|) sum_v [sum_{u in N+} -ln p_u^v + sum_{u in N-} -ln(1 - p_u^v)]`.
///
/// `probs_by_node[v]` maps neighbors `u` of `v` to `p_u^v`.
pub fn self_supervision_loss(
    probs_by_node: &[BTreeMap<usize, f64>],
    partition: &NeighborPartition,
) -> Result<f64> {
    let n = partition.node_count();
    if probs_by_node.len() != n || n == 0 {
        return Err(Error::validation(format!(
            "{} probability maps for {n} partitioned nodes",
            probs_by_node.len()
        )));
    }
    let lookup = |v: usize, u: usize| {
        probs_by_node[v]
            .get(&u)
            .map(|&p| clamp_prob(p))
            .ok_or_else(|| Error::validation(format!("no probability for neighbor {u} of {v}")))
    };
    let mut total = 0.0;
    for v in 0..n {
        for &u in &partition.pos[v] {
            total -= lookup(v, u)?.ln();
        }
        for &u in &partition.neg[v] {
            total -= (1.0 - lookup(v, u)?).ln();
        }
    }
    Ok(total / n as f64)
}

/// Directed `(v, u)` pairs of a partition with a sign per pair: `-1` for
/// positives and `+1` for negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionPairs {
    pub v: Index,
    pub u: Index,
    pub sign: Matrix,
    pub node_count: usize,
}

impl SupervisionPairs {
    pub fn new(partition: &NeighborPartition) -> Self {
        let (mut v, mut u, mut sign) = (Vec::new(), Vec::new(), Vec::new());
        for c in 0..partition.node_count() {
            for (&w, s) in partition.pos[c]
                .iter()
                .map(|w| (w, -1.0))
                .chain(partition.neg[c].iter().map(|w| (w, 1.0)))
            {
                v.push(c);
                u.push(w);
                sign.push(s);
            }
        }
        SupervisionPairs {
            v: v.into(),
            u: u.into(),
            sign: Matrix::column(sign),
            node_count: partition.node_count(),
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// The self-supervision loss from neighbor-bottleneck embeddings `h` (one row
/// per node). With `x` the clamped logit, `-ln p = softplus(-x)` and
/// `-ln(1 - p) = softplus(x)`.
pub fn self_supervision_tape(tape: &mut Tape, h: Var, pairs: &SupervisionPairs) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let a = tape.gather_rows(h, pairs.v.clone())?;
    let b = tape.gather_rows(h, pairs.u.clone())?;
    let raw = tape.row_dot(a, b)?;
    let bound = logit_bound();
    let x = tape.clamp(raw, -bound, bound);
    let sign = tape.constant(pairs.sign.clone());
    let signed = tape.mul(x, sign)?;
    let terms = tape.softplus(signed);
    let s = tape.sum_all(terms);
    Ok(tape.scale(s, 1.0 / pairs.node_count as f64))
}

/// On-disk partition with the hashes it was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCache {
    pub graph_hash: String,
    pub estimator_hash: String,
    pub threshold: f64,
    pub nodes: BTreeMap<usize, PartitionEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionEntry {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl PartitionCache {
    pub fn new(g: &Graph, est: &MiEstimator, partition: &NeighborPartition) -> Self {
        PartitionCache {
            graph_hash: g.content_hash(),
            estimator_hash: est.hash(),
            threshold: est.threshold,
            nodes: (0..partition.node_count())
                .map(|v| {
                    (
                        v,
                        PartitionEntry {
                            pos: partition.pos[v].clone(),
                            neg: partition.neg[v].clone(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn matches(&self, g: &Graph, est: &MiEstimator) -> bool {
        self.graph_hash == g.content_hash()
            && self.estimator_hash == est.hash()
            && self.threshold == est.threshold
    }

    pub fn partition(&self) -> NeighborPartition {
        NeighborPartition {
            pos: self.nodes.values().map(|e| e.pos.clone()).collect(),
            neg: self.nodes.values().map(|e| e.neg.clone()).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reads the cached partition at `path` when it was computed from the same
/// graph and estimator; otherwise recomputes and rewrites it.
pub fn cached_partition(path: &Path, g: &Graph, est: &MiEstimator) -> Result<NeighborPartition> {
    if let Ok(cache) = PartitionCache::load(path) {
        if cache.matches(g, est) {
            return Ok(cache.partition());
        }
        log::info!("partition cache {} is stale; recomputing", path.display());
    }
    let partition = partition_neighbors(g, est)?;
    PartitionCache::new(g, est, &partition).save(path)?;
    Ok(partition)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};

    fn cfg() -> MiConfig {
        MiConfig {
            hidden_dim: 8,
            embed_dim: 4,
            epochs: 3,
            ..MiConfig::default()
        }
    }

    fn zeroed(input: usize) -> MiEstimator {
        let mut e = MiEstimator::new(input, &cfg(), &mut rng_for(0, &[])).unwrap();
        for i in 0..e.mlp.params.len() {
            e.mlp.params.at_mut(i).data_mut().fill(0.0);
        }
        e
    }

    fn identity(dim: usize) -> MiEstimator {
        let c = MiConfig {
            hidden_dim: dim,
            embed_dim: dim,
            ..cfg()
        };
        let mut e = MiEstimator::new(dim, &c, &mut rng_for(0, &[])).unwrap();
        *e.mlp.params.at_mut(0) = Matrix::identity(dim);
        *e.mlp.params.at_mut(2) = Matrix::identity(dim);
        e.mlp.params.at_mut(1).data_mut().fill(10.0);
        e.mlp.params.at_mut(3).data_mut().fill(-10.0);
        e
    }

    fn triangle() -> Graph {
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        Graph::new(3, [(0, 1), (1, 2), (0, 2)], x, vec![0, 0, 1], 2).unwrap().0
    }

    #[test]
    fn score_closed_forms() {
        let e = identity(2);
        assert!((mi_score(&[1.0, 0.0], &[0.0, 1.0], &e).unwrap() - 0.5).abs() < 1e-15);
        let a = (9f64.ln() / 2.0).sqrt();
        assert!((mi_score(&[a, a], &[a, a], &e).unwrap() - 0.9).abs() < 1e-12);
        let r = MiEstimator::new(2, &cfg(), &mut rng_for(3, &[])).unwrap();
        let (x, y) = ([0.3, -1.2], [2.0, 0.1]);
        assert_eq!(mi_score(&x, &y, &r).unwrap(), mi_score(&y, &x, &r).unwrap());
    }

    #[test]
    fn initial_loss_of_a_zero_estimator_is_two_ln_two() {
        let g = triangle();
        let e = zeroed(2);
        let mut tape = Tape::new();
        let bound = e.mlp.params.bind(&mut tape);
        let x = tape.constant(g.features().clone());
        let emb = e.mlp.forward(&mut tape, &bound, x).unwrap();
        let (src, dst) = g.directed_edges();
        let (nv, nn) = draw_negatives(3, &src, 1, &mut rng_for(1, &[]));
        assert!(nv.iter().zip(&nn).all(|(a, b)| a != b));
        let l = contrastive_loss(&mut tape, emb, src.into(), dst.into(), nv.into(), nn.into(), 1).unwrap();
        assert!((tape.value(l).item() - 2.0 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_training_inputs_are_rejected() {
        let g = triangle();
        assert!(train_mi_estimator(&g, 0, &cfg(), 0).is_err());
        let (empty, _) = Graph::new(2, [], Matrix::zeros(2, 2), vec![0, 1], 2).unwrap();
        assert!(train_mi_estimator(&empty, 1, &cfg(), 0).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let g = generate_sbm(&SbmParams {
            block_sizes: vec![10, 10],
            p_in: 0.4,
            p_out: 0.05,
            feature_dim: 3,
            feature_signal: 2.0,
            seed: 2,
        })
        .unwrap();
        let a = train_mi_estimator(&g, 2, &cfg(), 5).unwrap();
        assert_eq!(a, train_mi_estimator(&g, 2, &cfg(), 5).unwrap());
        assert_ne!(a, train_mi_estimator(&g, 2, &cfg(), 6).unwrap());
    }

    #[test]
    fn threshold_extremes() {
        let g = triangle();
        let mut e = MiEstimator::new(2, &cfg(), &mut rng_for(1, &[])).unwrap();
        e.threshold = 0.0;
        let p = partition_neighbors(&g, &e).unwrap();
        assert!(p.neg.iter().all(Vec::is_empty));
        e.threshold = 1.0;
        let p = partition_neighbors(&g, &e).unwrap();
        assert!(p.pos.iter().all(Vec::is_empty));
        for v in 0..3 {
            assert_eq!(p.neg[v], g.neighbors(v));
        }
    }

    fn maps(g: &Graph, p: impl Fn(usize, usize) -> f64) -> Vec<BTreeMap<usize, f64>> {
        (0..g.node_count())
            .map(|v| g.neighbors(v).iter().map(|&u| (u, p(v, u))).collect())
            .collect()
    }

    #[test]
    fn supervision_loss_closed_forms() {
        let g = triangle();
        let part = partition_neighbors(&g, &identity(2)).unwrap();
        // Identity embeddings: 0 and 1 coincide, 2 points the other way.
        assert_eq!(part.pos[0], vec![1]);
        assert_eq!(part.neg[0], vec![2]);
        assert_eq!(part.neg[2], vec![0, 1]);
        let half = self_supervision_loss(&maps(&g, |_, _| 0.5), &part).unwrap();
        assert!((half - 2f64.ln() * 2.0).abs() < 1e-15);
        let perfect = maps(&g, |v, u| if part.is_negative(v, u) { 0.0 } else { 1.0 });
        let l = self_supervision_loss(&perfect, &part).unwrap();
        assert!(l.abs() < 1e-5 && l >= 0.0);
        assert!(self_supervision_loss(&vec![BTreeMap::new(); 3], &part).is_err());
    }

    #[test]
    fn supervision_gradient_signs() {
        // One edge; the pair is positive from 0 and negative from 1.
        let part = NeighborPartition {
            pos: vec![vec![1], vec![]],
            neg: vec![vec![], vec![0]],
        };
        for (from_pos, expected_sign) in [(true, -1.0), (false, 1.0)] {
            let mut p = part.clone();
            if !from_pos {
                p.pos[0].clear();
                p.neg[0] = vec![1];
            } else {
                p.neg[1].clear();
                p.pos[1] = vec![0];
            }
            let pairs = SupervisionPairs::new(&p);
            let mut tape = Tape::new();
            let h = tape.leaf(Matrix::from_rows(&[vec![0.3], vec![0.2]]).unwrap());
            let l = self_supervision_tape(&mut tape, h, &pairs).unwrap();
            tape.backward(l).unwrap();
            // d loss / d h_0 has the sign of d loss / d logit times h_1 > 0.
            let g0 = tape.grad(h)[(0, 0)];
            assert_eq!(g0.signum(), expected_sign);
        }
    }

    #[test]
    fn tape_and_value_losses_agree() {
        let g = triangle();
        let part = partition_neighbors(&g, &identity(2)).unwrap();
        let h = Matrix::from_rows(&[vec![0.5, -0.1], vec![0.2, 0.9], vec![-0.4, 0.3]]).unwrap();
        let p = maps(&g, |v, u| sigmoid(dot(h.row(v), h.row(u))));
        let direct = self_supervision_loss(&p, &part).unwrap();
        let mut tape = Tape::new();
        let hv = tape.leaf(h);
        let l = self_supervision_tape(&mut tape, hv, &SupervisionPairs::new(&part)).unwrap();
        assert!((tape.value(l).item() - direct).abs() < 1e-14);
    }

    #[test]
    fn cache_is_invalidated_by_graph_changes() {
        let g = triangle();
        let e = identity(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partition.json");
        let p = cached_partition(&path, &g, &e).unwrap();
        let cache = PartitionCache::load(&path).unwrap();
        assert!(cache.matches(&g, &e));
        assert_eq!(cache.partition(), p);
        let g2 = g.with_edges([(0, 1)]).unwrap();
        assert!(!cache.matches(&g2, &e));
        let p2 = cached_partition(&path, &g2, &e).unwrap();
        assert!(p2.neg[2].is_empty() && p2.pos[2].is_empty());
    }
}
