//! Bernoulli neighbor bottleneck.
//!
//! Each neighbor `u` of a center is retained with probability
//! `p_u = sigmoid(h_uᵀ h)` where `h = f_n(x_center)` and `h_u = f_n(x_u)`.
//! Masks are drawn with the binary-concrete relaxation
//! `sigmoid((logit(p) + L) / temperature)`, `L` standard logistic noise; the
//! hard variant thresholds that draw at one half (equivalent to an exact
//! Bernoulli(p) draw) and passes gradients straight through. The KL divergence
//! to a Bernoulli(r) prior regularizes the retention probabilities.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Neighborhood;
use crate::nn::{Bound, Index, Mlp, Tape, Var};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::{dot, sigmoid, Matrix};

pub const PROB_CLAMP: f64 = 1e-6;

/// `logit(1 - 1e-6)`: clamping logits here clamps probabilities to
/// `[1e-6, 1 - 1e-6]`.
pub fn logit_bound() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    Relaxed,
    #[default]
    Hard,
}

/// `f_n`: the embedding MLP behind the retention probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborEncoder {
    pub mlp: Mlp,
}

impl NeighborEncoder {
    pub fn new(input_dim: usize, hidden: usize, embed_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(NeighborEncoder {
            mlp: Mlp::new("nbr", &[input_dim, hidden, embed_dim], rng)?,
        })
    }

    pub fn embed(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        self.mlp.forward(tape, bound, x)
    }
}

/// Clamped logits `h_cᵀ h_m` for each `(center, member)` row pair of `h`.
pub fn pair_logits(tape: &mut Tape, h: Var, centers: Index, members: Index) -> Result<Var> {
    let hc = tape.gather_rows(h, centers)?;
    let hm = tape.gather_rows(h, members)?;
    let s = tape.row_dot(hc, hm)?;
    let b = logit_bound();
    Ok(tape.clamp(s, -b, b))
}

/// Retention probabilities of every member of `nb`.
pub fn neighbor_probs(
    x_center: &[f64],
    nb: &Neighborhood,
    features: &Matrix,
    f_n: &NeighborEncoder,
) -> Result<Vec<f64>> {
    if x_center.len() != f_n.mlp.input_dim() || features.cols() != f_n.mlp.input_dim() {
        return Err(Error::shape(
            "neighbor_probs",
            format!(
                "center {} / features {} for encoder input {}",
                x_center.len(),
                features.cols(),
                f_n.mlp.input_dim()
            ),
        ));
    }
    if nb.is_empty() {
        return Ok(Vec::new());
    }
    let h = f_n.mlp.forward_values(&Matrix::row_vector(x_center.to_vec()))?;
    let hu = f_n.mlp.forward_values(&features.gather_rows(&nb.members))?;
    let b = logit_bound();
    Ok((0..hu.rows())
        .map(|i| sigmoid(dot(h.row(0), hu.row(i)).clamp(-b, b)))
        .collect())
}

/// Standard logistic draws `ln u - ln(1 - u)`.
pub fn logistic_noise(n: usize, seed: u64, tags: &[u64]) -> Vec<f64> {
    let mut all = vec![stream::MASK_NOISE];
    all.extend_from_slice(tags);
    let mut rng = rng_for(seed, &all);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            u.ln() - (-u).ln_1p()
        })
        .collect()
}

/// Records a mask draw from clamped logits and pre-drawn logistic noise.
pub fn sample_mask_tape(
    tape: &mut Tape,
    logits: Var,
    noise: &[f64],
    temperature: f64,
    mode: MaskMode,
) -> Result<Var> {
    if temperature <= 0.0 {
        return Err(Error::validation("temperature must be positive"));
    }
    if tape.shape(logits) != (noise.len(), 1) {
        return Err(Error::shape(
            "sample_mask",
            format!("{} noise draws for logits {:?}", noise.len(), tape.shape(logits)),
        ));
    }
    let l = tape.constant(Matrix::column(noise.to_vec()));
    let shifted = tape.add(logits, l)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    let relaxed = tape.sigmoid(scaled);
    Ok(match mode {
        MaskMode::Relaxed => relaxed,
        MaskMode::Hard => tape.straight_through(relaxed),
    })
}

/// Mask values for `probs`; probabilities are clamped to `[1e-6, 1 - 1e-6]`.
pub fn sample_mask(probs: &[f64], temperature: f64, mode: MaskMode, seed: u64) -> Result<Vec<f64>> {
    let noise = logistic_noise(probs.len(), seed, &[]);
    let mut tape = Tape::new();
    let logits = tape.constant(Matrix::column(
        probs
            .iter()
            .map(|&p| {
                let p = clamp_prob(p);
                p.ln() - (-p).ln_1p()
            })
            .collect(),
    ));
    let m = sample_mask_tape(&mut tape, logits, &noise, temperature, mode)?;
    Ok(tape.value(m).data().to_vec())
}

/// Per-entry `KL(Bernoulli(p) || Bernoulli(r))` as a column.
pub fn bernoulli_kl_tape(tape: &mut Tape, probs: Var, r: f64) -> Result<Var> {
    check_prior(r)?;
    let ln_p = tape.ln(probs);
    let q = tape.one_minus(probs);
    let ln_q = tape.ln(q);
    let a = tape.add_scalar(ln_p, -r.ln());
    let b = tape.add_scalar(ln_q, -(-r).ln_1p());
    let ta = tape.mul(probs, a)?;
    let tb = tape.mul(q, b)?;
    tape.add(ta, tb)
}

fn check_prior(r: f64) -> Result<()> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::validation(format!("prior rate {r} outside (0, 1)")));
    }
    Ok(())
}

/// `sum_u [p_u ln(p_u / r) + (1 - p_u) ln((1 - p_u) / (1 - r))]` in nats.
pub fn bernoulli_kl(probs: &[f64], r: f64) -> Result<f64> {
    check_prior(r)?;
    Ok(probs
        .iter()
        .map(|&p| {
            let p = clamp_prob(p);
            p * (p / r).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - r)).ln()
        })
        .sum())
}

/// The neighbors kept for one center and the adjacency among them.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSelection {
    pub probs: Vec<f64>,
    pub relaxed_mask: Vec<f64>,
    pub hard_mask: Vec<bool>,
    /// Retained members, in neighborhood order.
    pub selected: Vec<usize>,
    /// Global ids of `{center} ∪ selected`, center first.
    pub local_nodes: Vec<usize>,
    /// Edges among `local_nodes` by local index, `a < b`.
    pub local_edges: Vec<(usize, usize)>,
}

impl NeighborSelection {
    pub fn local_adjacency(&self) -> Matrix {
        let n = self.local_nodes.len();
        let mut a = Matrix::zeros(n, n);
        for &(i, j) in &self.local_edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }
}

/// Restricts the neighborhood to the center and the members whose mask bit is
/// set; edges with a dropped endpoint disappear.
pub fn assemble_selection(nb: &Neighborhood, hard_mask: &[bool]) -> Result<NeighborSelection> {
    if hard_mask.len() != nb.len() {
        return Err(Error::shape(
            "assemble_selection",
            format!("{} mask bits for {} members", hard_mask.len(), nb.len()),
        ));
    }
    let mut remap = vec![usize::MAX; nb.len() + 1];
    remap[0] = 0;
    let mut local_nodes = vec![nb.center];
    let mut selected = Vec::new();
    for (i, (&m, &keep)) in nb.members.iter().zip(hard_mask).enumerate() {
        if keep {
            remap[i + 1] = local_nodes.len();
            local_nodes.push(m);
            selected.push(m);
        }
    }
    let local_edges = nb
        .local_edges
        .iter()
        .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX)
        .map(|&(a, b)| (remap[a], remap[b]))
        .collect();
    Ok(NeighborSelection {
        probs: Vec::new(),
        relaxed_mask: hard_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        hard_mask: hard_mask.to_vec(),
        selected,
        local_nodes,
        local_edges,
    })
}

/// Samples a mask for `probs` and assembles the selection. The hard mask is the
/// relaxed draw thresholded at one half.
pub fn select_neighbors(
    nb: &Neighborhood,
    probs: &[f64],
    temperature: f64,
    seed: u64,
) -> Result<NeighborSelection> {
    let relaxed = sample_mask(probs, temperature, MaskMode::Relaxed, seed)?;
    let hard: Vec<bool> = relaxed.iter().map(|&m| m > 0.5).collect();
    let mut s = assemble_selection(nb, &hard)?;
    s.probs = probs.iter().map(|&p| clamp_prob(p)).collect();
    s.relaxed_mask = relaxed;
    Ok(s)
}

/// Deterministic inference-time selection: keep `u` iff `p_u > 0.5`.
pub fn select_deterministic(nb: &Neighborhood, probs: &[f64]) -> Result<NeighborSelection> {
    let hard: Vec<bool> = probs.iter().map(|&p| p > 0.5).collect();
    let mut s = assemble_selection(nb, &hard)?;
    s.probs = probs.iter().map(|&p| clamp_prob(p)).collect();
    Ok(s)
}
