//! Fixtures shared by the integration tests.

#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use rmgib::bottleneck::MaskMode;
use rmgib::config::ModelConfig;
use rmgib::graph::Graph;
use rmgib::mi::{contrastive_loss, draw_negatives, MiEstimator, NeighborPartition, SupervisionPairs};
use rmgib::nn::{gradient_check, Bound, GradCheckReport, Index, Mlp, ParamSet, Tape};
use rmgib::predictor::LocalBatch;
use rmgib::rng::rng_for;
use rmgib::tensor::Matrix;
use rmgib::trainer::{gib_forward, gib_terms, Draws, Masking, RmGibModel};

/// Finite-difference step used by every gradient check.
pub const FD_EPSILON: f64 = 1e-6;
/// Coordinates probed per parameter tensor.
pub const FD_PROBES: usize = 24;

/// Two five-cycles joined by three chords, three classes, four features.
pub fn ten_node_graph() -> Graph {
    let edges = [
        (0, 1),
        (1, 2),
        (2, 3),
        (3, 4),
        (0, 4),
        (5, 6),
        (6, 7),
        (7, 8),
        (8, 9),
        (5, 9),
        (0, 5),
        (2, 7),
        (4, 9),
    ];
    let mut rng = rng_for(10, &[]);
    let data: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
    let features = Matrix::from_vec(10, 4, data).unwrap();
    let labels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2, 0];
    Graph::new(10, edges, features, labels, 3).unwrap().0
}

/// One term of the bottleneck objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Classification,
    AttributeKl,
    NeighborKl,
    SelfSupervision,
    Total,
}

impl Term {
    pub const ALL: [Term; 5] = [
        Term::Classification,
        Term::AttributeKl,
        Term::NeighborKl,
        Term::SelfSupervision,
        Term::Total,
    ];
}

pub fn gradient_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 5,
        code_dim: 3,
        beta: 0.3,
        gamma: 0.7,
        prior_rate: 0.4,
        temperature: 0.7,
        mask_mode: MaskMode::Relaxed,
        ..ModelConfig::default()
    }
}

/// Neighbors `u` of `v` with `(u + v) % 3 == 0` are negatives.
pub fn fixed_partition(g: &Graph) -> NeighborPartition {
    let n = g.node_count();
    let (mut pos, mut neg) = (vec![Vec::new(); n], vec![Vec::new(); n]);
    for v in 0..n {
        for &u in g.neighbors(v) {
            if (u + v) % 3 == 0 {
                neg[v].push(u);
            } else {
                pos[v].push(u);
            }
        }
    }
    NeighborPartition { pos, neg }
}

/// Finite differences against the tape gradient of one objective term, with
/// relaxed masks and frozen draws.
pub fn objective_gradient_check(term: Term) -> GradCheckReport {
    let g = ten_node_graph();
    let cfg = gradient_config();
    let model = RmGibModel::new(&g, &cfg, 11).unwrap();
    let centers = [0, 2, 5, 7, 9];
    let batch = LocalBatch::build(&g, &centers, cfg.layers).unwrap();
    let labels: Index = centers.iter().map(|&v| g.labels()[v]).collect::<Vec<_>>().into();
    let draws = Draws::new(g.node_count(), cfg.code_dim, batch.pair_count(), 5);
    let pairs = SupervisionPairs::new(&fixed_partition(&g));
    let loss = |sets: &[ParamSet]| {
        let m = model.with_params(sets)?;
        let mut tape = Tape::new();
        let bounds: [Bound; 3] = [sets[0].bind(&mut tape), sets[1].bind(&mut tape), sets[2].bind(&mut tape)];
        let masking = Masking::Sampled {
            draws: &draws,
            temperature: cfg.temperature,
            mode: cfg.mask_mode,
        };
        let fwd = gib_forward(&mut tape, &m, &bounds, &g, &batch, masking)?;
        let t = gib_terms(&mut tape, &fwd, &batch, &labels, Some(&pairs), &cfg)?;
        let v = match term {
            Term::Classification => t.l_c,
            Term::AttributeKl => t.l_ix,
            Term::NeighborKl => t.l_in,
            Term::SelfSupervision => t.l_s,
            Term::Total => t.total,
        };
        tape.backward(v)?;
        let grads = sets.iter().zip(&bounds).map(|(s, b)| s.gradients(&tape, b)).collect();
        Ok((tape.value(v).item(), grads))
    };
    gradient_check(loss, &model.param_sets(), FD_EPSILON, FD_PROBES, 0).unwrap()
}

/// Finite differences for the pair-score estimator's contrastive loss with
/// frozen negatives.
pub fn contrastive_gradient_check() -> GradCheckReport {
    let g = ten_node_graph();
    let cfg = gradient_config();
    let est = MiEstimator::new(g.feature_dim(), &cfg.mi, &mut rng_for(3, &[])).unwrap();
    let est = MiEstimator {
        mlp: Mlp::new("mi", &[g.feature_dim(), 6, 3], &mut rng_for(3, &[])).unwrap(),
        ..est
    };
    let (src, dst) = g.directed_edges();
    let (nv, nn) = draw_negatives(g.node_count(), &src, 2, &mut rng_for(4, &[]));
    let (src, dst, nv, nn): (Index, Index, Index, Index) = (src.into(), dst.into(), nv.into(), nn.into());
    let loss = |sets: &[ParamSet]| {
        let mlp = Mlp::from_params(sets[0].clone())?;
        let mut tape = Tape::new();
        let bound = sets[0].bind(&mut tape);
        let x = tape.constant(g.features().clone());
        let emb = mlp.forward(&mut tape, &bound, x)?;
        let l = contrastive_loss(&mut tape, emb, src.clone(), dst.clone(), nv.clone(), nn.clone(), 2)?;
        tape.backward(l)?;
        Ok((tape.value(l).item(), vec![sets[0].gradients(&tape, &bound)]))
    };
    gradient_check(loss, std::slice::from_ref(&est.mlp.params), FD_EPSILON, FD_PROBES, 1).unwrap()
}

/// `KL(N(mu, sigma^2) || N(0, 1))` by composite Simpson quadrature of
/// `p ln(p / q)` over `mu +- 14 sigma`.
pub fn gaussian_kl_quadrature(mu: f64, sigma: f64) -> f64 {
    let steps = 4000;
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let h = (b - a) / steps as f64;
    let ln_norm = -0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| {
        let z = (x - mu) / sigma;
        let ln_p = ln_norm - sigma.ln() - 0.5 * z * z;
        let ln_q = ln_norm - 0.5 * x * x;
        ln_p.exp() * (ln_p - ln_q)
    };
    let mut s = f(a) + f(b);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// `KL(Bernoulli(p) || Bernoulli(r))` as cross-entropy minus entropy.
pub fn bernoulli_kl_entropies(p: f64, r: f64) -> f64 {
    let xlnx = |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() };
    let cross = -(p * r.ln() + (1.0 - p) * (1.0 - r).ln());
    let entropy = -(xlnx(p) + xlnx(1.0 - p));
    cross - entropy
}

/// AUC by counting every (member, non-member) pair, ties as one half.
pub fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / total
}

/// A random probability table with every entry positive.
pub fn random_simplex(n: usize, rng: &mut impl rand::Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|x| x / s).collect();
    // Absorb rounding so the table sums to one within the validator's bound.
    let drift: f64 = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;
    p
}

/// Breadth-first hop distances from `center`, `usize::MAX` when unreachable.
pub fn bfs_distances(g: &Graph, center: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    dist[center] = 0;
    let mut frontier = vec![center];
    let mut d = 0;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for v in frontier {
            for &u in g.neighbors(v) {
                if dist[u] == usize::MAX {
                    dist[u] = d;
                    next.push(u);
                }
            }
        }
        frontier = next;
    }
    dist
}

pub fn random_graph(n: usize, edge_prob: f64, seed: u64) -> Graph {
    let mut rng = rng_for(seed, &[]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(edge_prob) {
                edges.push((u, v));
            }
        }
    }
    let features = Matrix::zeros(n, 2);
    Graph::new(n, edges, features, vec![0; n], 1).unwrap().0
}
