use std::collections::VecDeque;

use super::gcn::{unit_coefficients, GcnStack, Propagation};
use super::posterior::{accuracy, nll_loss};
use crate::bottleneck::{gaussian_kl_rows, gaussian_noise, AttributeEncoder};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Splits};
use crate::nn::{Index, Mlp, ParamSet, Tape};
use crate::rng::{rng_for, stream};
use crate::tensor::{softmax_rows, Matrix};
use crate::trainer::{fit, FitOutcome, LossBreakdown, PseudoLabelSet, Selection};

/// Whole-graph GCN, optionally reading attribute-bottleneck codes instead of
/// raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub encoder: Option<AttributeEncoder>,
    pub stack: GcnStack,
}

impl GcnModel {
    pub fn new(g: &Graph, cfg: &ModelConfig, bottleneck: bool, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, &[stream::INIT]);
        let encoder = if bottleneck {
            Some(AttributeEncoder::new(g.feature_dim(), cfg.hidden_dim, cfg.code_dim, &mut rng)?)
        } else {
            None
        };
        let input = encoder.as_ref().map_or(g.feature_dim(), |e| e.code_dim());
        let mut widths = vec![input];
        widths.extend(std::iter::repeat_n(cfg.hidden_dim, cfg.layers - 1));
        widths.push(g.class_count());
        let stack = GcnStack::new("gcn", &widths, cfg.aggregation, &mut rng)?;
        Ok(GcnModel { encoder, stack })
    }

    pub fn param_sets(&self) -> Vec<ParamSet> {
        let mut v: Vec<ParamSet> = self.encoder.iter().map(|e| e.mlp.params.clone()).collect();
        v.push(self.stack.params.clone());
        v
    }

    pub fn with_params(&self, sets: &[ParamSet]) -> Result<Self> {
        let mut m = self.clone();
        let mut it = sets.iter();
        if let Some(enc) = m.encoder.as_mut() {
            let p = it.next().ok_or_else(|| Error::validation("missing encoder parameters"))?;
            *enc = AttributeEncoder::from_mlp(Mlp::from_params(p.clone())?)?;
        }
        let p = it.next().ok_or_else(|| Error::validation("missing gcn parameters"))?;
        m.stack = GcnStack::from_params(p.clone(), m.stack.aggregation)?;
        Ok(m)
    }

    /// Class probabilities for every node; bottleneck codes are their means.
    pub fn posteriors(&self, g: &Graph) -> Result<Matrix> {
        let input = match &self.encoder {
            Some(enc) => {
                let mut tape = Tape::new();
                let bound = enc.mlp.params.bind(&mut tape);
                let x = tape.constant(g.features().clone());
                let b = enc.encode(&mut tape, &bound, x, None)?;
                tape.value(b.mu).clone()
            }
            None => g.features().clone(),
        };
        Ok(softmax_rows(&self.stack.full_graph_logits(g, &input)?))
    }
}

/// A trained model with its posteriors over every node.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedGcn {
    pub model: GcnModel,
    pub probs: Matrix,
    pub outcome: FitOutcome,
}

/// Nodes within `k` hops of any of `sources`, sorted.
pub fn receptive_field(g: &Graph, sources: &[usize], k: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; g.node_count()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if dist[s] == usize::MAX {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        if dist[u] == k {
            continue;
        }
        for &w in g.neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..g.node_count()).filter(|&v| dist[v] != usize::MAX).collect()
}

/// Loss and gradients of one full-batch step.
pub fn gcn_step(
    model: &GcnModel,
    g: &Graph,
    nodes: &Index,
    labels: &Index,
    kl_nodes: &Index,
    beta: f64,
    noise_seed: u64,
) -> Result<(LossBreakdown, Vec<crate::nn::Gradients>)> {
    let prop = Propagation::full_graph(g);
    let mut tape = Tape::new();
    let enc_bound = model.encoder.as_ref().map(|e| e.mlp.params.bind(&mut tape));
    let gcn_bound = model.stack.params.bind(&mut tape);
    let x = tape.constant(g.features().clone());
    let (input, kl) = match (&model.encoder, &enc_bound) {
        (Some(enc), Some(bound)) => {
            let noise = gaussian_noise(g.node_count(), enc.code_dim(), noise_seed, &[]);
            let b = enc.encode(&mut tape, bound, x, Some(&noise))?;
            let rows = gaussian_kl_rows(&mut tape, b.mu, b.sigma)?;
            let picked = tape.gather_rows(rows, kl_nodes.clone())?;
            (b.code, Some(tape.mean_all(picked)))
        }
        _ => (x, None),
    };
    let coeffs = unit_coefficients(&mut tape, &prop, model.stack.aggregation);
    let logits = model
        .stack
        .forward(&mut tape, &gcn_bound, input, None, &prop, coeffs, Some(nodes))?;
    let l_c = nll_loss(&mut tape, logits, labels.clone())?;
    let total = match kl {
        Some(k) => {
            let weighted = tape.scale(k, beta);
            tape.add(l_c, weighted)?
        }
        None => l_c,
    };
    tape.backward(total)?;
    let mut grads = Vec::new();
    if let (Some(enc), Some(bound)) = (&model.encoder, &enc_bound) {
        grads.push(enc.mlp.params.gradients(&tape, bound));
    }
    grads.push(model.stack.params.gradients(&tape, &gcn_bound));
    let l_ix = kl.map_or(0.0, |k| tape.value(k).item());
    let b = if model.encoder.is_some() { beta } else { 0.0 };
    Ok((
        LossBreakdown::new(tape.value(l_c).item(), l_ix, 0.0, 0.0, b, 0.0),
        grads,
    ))
}

/// Trains on `nodes` with the given per-node `labels`; `val` drives model
/// selection unless `selection` is [`Selection::LastEpoch`].
#[allow(clippy::too_many_arguments)]
pub fn train_gcn(
    g: &Graph,
    nodes: &[usize],
    labels: &[usize],
    val: &[usize],
    cfg: &ModelConfig,
    bottleneck: bool,
    selection: Selection,
    seed: u64,
) -> Result<TrainedGcn> {
    cfg.validate()?;
    if nodes.is_empty() || nodes.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} training nodes with {} labels",
            nodes.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= g.class_count()) {
        return Err(Error::validation(format!("label {bad} outside {} classes", g.class_count())));
    }
    let selection = if val.is_empty() { Selection::LastEpoch } else { selection };
    let model = GcnModel::new(g, cfg, bottleneck, seed)?;
    let node_idx: Index = nodes.into();
    let label_idx: Index = labels.into();
    let kl_idx: Index = receptive_field(g, nodes, cfg.layers).into();
    let outcome = fit(
        model.param_sets(),
        cfg.epochs,
        cfg.adam,
        selection,
        |epoch, sets| {
            let m = model.with_params(sets)?;
            let noise_seed = crate::rng::derive_seed(seed, &[stream::ATTR_NOISE, epoch as u64]);
            gcn_step(&m, g, &node_idx, &label_idx, &kl_idx, cfg.beta, noise_seed)
        },
        |sets| {
            let probs = model.with_params(sets)?.posteriors(g)?;
            Ok(accuracy(&probs, val, g.labels()))
        },
    )?;
    let model = model.with_params(&outcome.params)?;
    let probs = model.posteriors(g)?;
    Ok(TrainedGcn {
        model,
        probs,
        outcome,
    })
}

/// Plain GCN on the labeled nodes, selected by validation accuracy.
pub fn baseline_gcn_train(g: &Graph, splits: &Splits, cfg: &ModelConfig, seed: u64) -> Result<TrainedGcn> {
    train_gcn(
        g,
        &splits.train,
        &splits.train_labels(g),
        &splits.val,
        cfg,
        false,
        Selection::BestValidation,
        seed,
    )
}

/// GCN over attribute-bottleneck codes, trained with `L_C + beta * L_I^x`.
pub fn gcn_ib_train(g: &Graph, splits: &Splits, cfg: &ModelConfig, seed: u64) -> Result<TrainedGcn> {
    train_gcn(
        g,
        &splits.train,
        &splits.train_labels(g),
        &splits.val,
        cfg,
        true,
        Selection::BestValidation,
        seed,
    )
}

/// GCN trained twice: once on the labeled nodes, then from scratch on the
/// labeled nodes plus pseudo labels predicted by the first model.
pub fn gcn_pl_train(g: &Graph, splits: &Splits, cfg: &ModelConfig, seed: u64) -> Result<(TrainedGcn, PseudoLabelSet)> {
    let first = baseline_gcn_train(g, splits, cfg, seed).map_err(|e| e.in_stage("gcn_pl stage 1"))?;
    let pl = PseudoLabelSet::from_probs(g, splits, &first.probs, cfg, seed)?;
    let second = train_gcn(
        g,
        &pl.nodes,
        &pl.labels,
        &splits.val,
        cfg,
        false,
        Selection::BestValidation,
        crate::rng::derive_seed(seed, &[stream::PSEUDO]),
    )
    .map_err(|e| e.in_stage("gcn_pl stage 2"))?;
    Ok((second, pl))
}
