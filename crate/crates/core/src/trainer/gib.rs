use crate::bottleneck::{
    bernoulli_kl_tape, gaussian_kl_rows, gaussian_noise, logistic_noise, pair_logits,
    sample_mask_tape, AttributeEncoder, MaskMode, NeighborEncoder,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::mi::{self_supervision_tape, NeighborPartition, SupervisionPairs};
use crate::nn::{Bound, Gradients, Index, Mlp, ParamSet, Tape, Var};
use crate::predictor::{nll_loss, weighted_coefficients, GcnStack, LocalBatch};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::{softmax_rows, Matrix};

use super::fit::LossBreakdown;

/// Attribute encoder `f_x`, neighbor encoder `f_n` and predictor `f_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmGibModel {
    pub attr: AttributeEncoder,
    pub nbr: NeighborEncoder,
    pub gcn: GcnStack,
}

impl RmGibModel {
    pub fn new(g: &Graph, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let d = g.feature_dim();
        let attr = AttributeEncoder::new(d, cfg.hidden_dim, cfg.code_dim, &mut rng)?;
        let nbr = NeighborEncoder::new(d, cfg.hidden_dim, cfg.code_dim, &mut rng)?;
        let mut widths = vec![cfg.code_dim];
        widths.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.layers - 1));
        widths.push(g.class_count());
        let gcn = GcnStack::new("gcn", &widths, cfg.aggregation, &mut rng)?;
        Ok(RmGibModel { attr, nbr, gcn })
    }

    pub fn param_sets(&self) -> Vec<ParamSet> {
        vec![
            self.attr.mlp.params.clone(),
            self.nbr.mlp.params.clone(),
            self.gcn.params.clone(),
        ]
    }

    pub fn with_params(&self, sets: &[ParamSet]) -> Result<Self> {
        let [a, n, c] = sets else {
            return Err(Error::validation(format!("{} parameter sets, expected 3", sets.len())));
        };
        Ok(RmGibModel {
            attr: AttributeEncoder::from_mlp(Mlp::from_params(a.clone())?)?,
            nbr: NeighborEncoder {
                mlp: Mlp::from_params(n.clone())?,
            },
            gcn: GcnStack::from_params(c.clone(), self.gcn.aggregation)?,
        })
    }

    pub fn hops(&self) -> usize {
        self.gcn.layers()
    }

    fn bind(&self, tape: &mut Tape) -> [Bound; 3] {
        [
            self.attr.mlp.params.bind(tape),
            self.nbr.mlp.params.bind(tape),
            self.gcn.params.bind(tape),
        ]
    }
}

/// Frozen stochastic inputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    /// Standard normal, one row per node of the graph.
    pub attr_noise: Matrix,
    /// Standard logistic, one entry per (center, member) pair of the batch.
    pub mask_noise: Vec<f64>,
}

impl Draws {
    pub fn new(node_count: usize, code_dim: usize, pairs: usize, seed: u64) -> Self {
        Draws {
            attr_noise: gaussian_noise(node_count, code_dim, seed, &[]),
            mask_noise: logistic_noise(pairs, seed, &[]),
        }
    }
}

/// How neighbor masks are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Masking<'a> {
    /// Training: codes `mu + sigma * eps` and sampled masks.
    Sampled {
        draws: &'a Draws,
        temperature: f64,
        mode: MaskMode,
    },
    /// Inference: codes are means and neighbors with `p > 0.5` are kept.
    Deterministic,
}

/// Tape handles of one forward pass over a [`LocalBatch`].
#[derive(Debug, Clone, Copy)]
pub struct GibForward {
    /// One row per batch center.
    pub logits: Var,
    pub mu: Var,
    pub sigma: Var,
    /// `f_n` embeddings of every node.
    pub h: Var,
    /// Clamped logits of the retention probabilities, one per pair.
    pub pair_logits: Option<Var>,
    /// Mask value of every copy row.
    pub copy_mask: Var,
}

pub fn gib_forward(
    tape: &mut Tape,
    model: &RmGibModel,
    bounds: &[Bound; 3],
    g: &Graph,
    batch: &LocalBatch,
    masking: Masking,
) -> Result<GibForward> {
    if batch.centers.is_empty() {
        return Err(Error::validation("empty node batch"));
    }
    let x = tape.constant(g.features().clone());
    let noise = match masking {
        Masking::Sampled { draws, .. } => Some(&draws.attr_noise),
        Masking::Deterministic => None,
    };
    let enc = model.attr.encode(tape, &bounds[0], x, noise)?;
    let h = model.nbr.embed(tape, &bounds[1], x)?;

    let mut center_indicator = Matrix::zeros(batch.rows(), 1);
    for &c in batch.center_copy.iter() {
        center_indicator[(c, 0)] = 1.0;
    }
    let centers = tape.constant(center_indicator);
    let (copy_mask, plogits) = if batch.pair_count() == 0 {
        (centers, None)
    } else {
        let logits = pair_logits(tape, h, batch.pair_center.clone(), batch.pair_member.clone())?;
        let pair_mask = match masking {
            Masking::Sampled {
                draws,
                temperature,
                mode,
            } => sample_mask_tape(tape, logits, &draws.mask_noise, temperature, mode)?,
            Masking::Deterministic => {
                let keep = tape.value(logits).map(|l| if l > 0.0 { 1.0 } else { 0.0 });
                tape.constant(keep)
            }
        };
        let scattered = tape.scatter_rows(pair_mask, batch.pair_copy.clone(), batch.rows())?;
        (tape.add(scattered, centers)?, Some(logits))
    };
    let ms = tape.gather_rows(copy_mask, batch.prop.src.clone())?;
    let md = tape.gather_rows(copy_mask, batch.prop.dst.clone())?;
    let w = tape.mul(ms, md)?;
    let coeffs = weighted_coefficients(tape, &batch.prop, w, model.gcn.aggregation)?;
    let logits = model.gcn.forward_planned(tape, &bounds[2], enc.code, &batch.plan, coeffs)?;
    Ok(GibForward {
        logits,
        mu: enc.mu,
        sigma: enc.sigma,
        h,
        pair_logits: plogits,
        copy_mask,
    })
}

/// Tape handles of every objective term.
#[derive(Debug, Clone, Copy)]
pub struct GibTerms {
    pub l_c: Var,
    pub l_ix: Var,
    pub l_in: Var,
    pub l_s: Var,
    pub total: Var,
}

/// `L_C + beta (L_I^x + L_I^n) + gamma L_S` on the tape.
///
/// `L_I^x` averages the attribute KL over every node whose code feeds the
/// batch, `L_I^n` sums the neighbor KL over each center's pairs and averages
/// over centers, and `L_S` is the self-supervision loss over `supervision`.
pub fn gib_terms(
    tape: &mut Tape,
    fwd: &GibForward,
    batch: &LocalBatch,
    labels: &Index,
    supervision: Option<&SupervisionPairs>,
    cfg: &ModelConfig,
) -> Result<GibTerms> {
    if labels.len() != batch.centers.len() {
        return Err(Error::validation(format!(
            "{} labels for {} centers",
            labels.len(),
            batch.centers.len()
        )));
    }
    let l_c = nll_loss(tape, fwd.logits, labels.clone())?;
    let kl_rows = gaussian_kl_rows(tape, fwd.mu, fwd.sigma)?;
    let encoded: Index = batch.encoded.clone().into();
    let kl_used = tape.gather_rows(kl_rows, encoded)?;
    let l_ix = tape.mean_all(kl_used);
    let l_in = match fwd.pair_logits {
        Some(pl) => {
            let p = tape.sigmoid(pl);
            let kl = bernoulli_kl_tape(tape, p, cfg.prior_rate)?;
            let s = tape.sum_all(kl);
            tape.scale(s, 1.0 / batch.centers.len() as f64)
        }
        None => tape.constant(Matrix::scalar(0.0)),
    };
    let l_s = match supervision {
        Some(pairs) => self_supervision_tape(tape, fwd.h, pairs)?,
        None => tape.constant(Matrix::scalar(0.0)),
    };
    let info = tape.add(l_ix, l_in)?;
    let info = tape.scale(info, cfg.beta);
    let sup = tape.scale(l_s, cfg.gamma);
    let total = tape.add(l_c, info)?;
    let total = tape.add(total, sup)?;
    Ok(GibTerms {
        l_c,
        l_ix,
        l_in,
        l_s,
        total,
    })
}

fn breakdown(tape: &Tape, t: &GibTerms, cfg: &ModelConfig) -> LossBreakdown {
    let v = |x: Var| tape.value(x).item();
    let mut b = LossBreakdown::new(v(t.l_c), v(t.l_ix), v(t.l_in), v(t.l_s), cfg.beta, cfg.gamma);
    b.total = v(t.total);
    b
}

/// Loss and gradients for `[f_x, f_n, f_c]` with frozen draws.
#[allow(clippy::too_many_arguments)]
pub fn gib_step(
    model: &RmGibModel,
    g: &Graph,
    batch: &LocalBatch,
    labels: &Index,
    supervision: Option<&SupervisionPairs>,
    cfg: &ModelConfig,
    draws: &Draws,
) -> Result<(LossBreakdown, Vec<Gradients>)> {
    let mut tape = Tape::new();
    let bounds = model.bind(&mut tape);
    let masking = Masking::Sampled {
        draws,
        temperature: cfg.temperature,
        mode: cfg.mask_mode,
    };
    let fwd = gib_forward(&mut tape, model, &bounds, g, batch, masking)?;
    let terms = gib_terms(&mut tape, &fwd, batch, labels, supervision, cfg)?;
    tape.backward(terms.total)?;
    let grads = vec![
        model.attr.mlp.params.gradients(&tape, &bounds[0]),
        model.nbr.mlp.params.gradients(&tape, &bounds[1]),
        model.gcn.params.gradients(&tape, &bounds[2]),
    ];
    Ok((breakdown(&tape, &terms, cfg), grads))
}

/// Draw seed for one call, from a base seed and a step counter.
pub fn step_seed(seed: u64, stage: u64, step: u64) -> u64 {
    derive_seed(seed, &[stream::ATTR_NOISE, stage, step])
}

/// The objective on `node_batch` with one stochastic draw per node, seeded
/// by `seed`. `labels[v]` must be defined for every batch node.
pub fn gib_loss(
    g: &Graph,
    node_batch: &[usize],
    labels: &[Option<usize>],
    model: &RmGibModel,
    partition: Option<&NeighborPartition>,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    let ys = node_batch
        .iter()
        .map(|&v| {
            labels
                .get(v)
                .copied()
                .flatten()
                .ok_or_else(|| Error::validation(format!("no label for batch node {v}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let batch = LocalBatch::build(g, node_batch, model.hops())?;
    let draws = Draws::new(g.node_count(), model.attr.code_dim(), batch.pair_count(), seed);
    let pairs = partition.map(SupervisionPairs::new);
    let (b, _) = gib_step(model, g, &batch, &ys.into(), pairs.as_ref(), cfg, &draws)?;
    for (name, v) in [("l_c", b.l_c), ("l_ix", b.l_ix), ("l_in", b.l_in), ("l_s", b.l_s)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss term {name}")));
        }
    }
    Ok(b)
}

/// Deterministic class probabilities of the batch centers.
pub fn gib_posteriors(model: &RmGibModel, g: &Graph, batch: &LocalBatch) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bounds = model.bind(&mut tape);
    let fwd = gib_forward(&mut tape, model, &bounds, g, batch, Masking::Deterministic)?;
    Ok(softmax_rows(tape.value(fwd.logits)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, SbmParams};
    use crate::predictor::{gcn_forward, Posterior};

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 6,
            code_dim: 3,
            beta: 0.1,
            gamma: 0.2,
            ..ModelConfig::default()
        }
    }

    fn fixture() -> Graph {
        generate_sbm(&SbmParams {
            block_sizes: vec![5, 5],
            p_in: 0.6,
            p_out: 0.1,
            feature_dim: 4,
            feature_signal: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_leave_the_classification_loss() {
        let g = fixture();
        let c = ModelConfig {
            beta: 0.0,
            gamma: 0.0,
            ..cfg()
        };
        let m = RmGibModel::new(&g, &c, 1).unwrap();
        let labels: Vec<_> = g.labels().iter().map(|&y| Some(y)).collect();
        let b = gib_loss(&g, &[0, 3, 7], &labels, &m, None, &c, 4).unwrap();
        assert_eq!(b.total, b.l_c);
    }

    #[test]
    fn total_recombines_from_parts() {
        let g = fixture();
        let m = RmGibModel::new(&g, &cfg(), 1).unwrap();
        let labels: Vec<_> = g.labels().iter().map(|&y| Some(y)).collect();
        let part = NeighborPartition {
            pos: (0..10).map(|v| g.neighbors(v).to_vec()).collect(),
            neg: vec![Vec::new(); 10],
        };
        let b = gib_loss(&g, &[0, 1, 2, 9], &labels, &m, Some(&part), &cfg(), 4).unwrap();
        assert!((b.total - b.recombined()).abs() < 1e-12);
        assert!(b.l_ix >= 0.0 && b.l_in >= 0.0 && b.l_s > 0.0);
    }

    #[test]
    fn missing_label_is_an_error() {
        let g = fixture();
        let m = RmGibModel::new(&g, &cfg(), 1).unwrap();
        let mut labels: Vec<_> = g.labels().iter().map(|&y| Some(y)).collect();
        labels[3] = None;
        assert!(gib_loss(&g, &[3], &labels, &m, None, &cfg(), 0).is_err());
    }

    #[test]
    fn deterministic_posterior_matches_single_graph_forward() {
        // The batched forward of one center equals the single-graph forward
        // on the selected subgraph with mean codes.
        let g = fixture();
        let m = RmGibModel::new(&g, &cfg(), 2).unwrap();
        for center in [0, 4, 8] {
            let batch = LocalBatch::build(&g, &[center], 2).unwrap();
            let probs = gib_posteriors(&m, &g, &batch).unwrap();

            let nb = crate::graph::k_hop(&g, center, 2).unwrap();
            let p = crate::bottleneck::neighbor_probs(g.feature(center), &nb, g.features(), &m.nbr).unwrap();
            let sel = crate::bottleneck::select_deterministic(&nb, &p).unwrap();
            let mu = |v: usize| crate::bottleneck::attribute_encode(g.feature(v), &m.attr, 0).unwrap().mu;
            let codes = Matrix::from_rows(&sel.local_nodes.iter().map(|&v| mu(v)).collect::<Vec<_>>()).unwrap();
            let direct: Posterior = gcn_forward(&codes, &sel.local_adjacency(), &m.gcn).unwrap();
            for (a, b) in probs.row(0).iter().zip(&direct.probs) {
                assert!((a - b).abs() < 1e-12, "center {center}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn batching_does_not_mix_centers() {
        let g = fixture();
        let m = RmGibModel::new(&g, &cfg(), 2).unwrap();
        let all = gib_posteriors(&m, &g, &LocalBatch::build(&g, &[1, 5, 6], 2).unwrap()).unwrap();
        let one = gib_posteriors(&m, &g, &LocalBatch::build(&g, &[5], 2).unwrap()).unwrap();
        assert_eq!(all.row(1), one.row(0));
    }
}
