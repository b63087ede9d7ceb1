//! Structural perturbations at a fixed edge budget.
//!
//! The budget is `floor(rate * |E|)` node-pair flips. [`perturb_random`] flips
//! uniformly chosen pairs; [`perturb_heterophilic`] is a label-aware poisoning
//! heuristic that connects nodes of different classes, each attacked node
//! being linked to the cross-class node whose features are least similar to
//! its own.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::split::floor_fraction;
use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub graph: Graph,
    /// Flipped pairs `(u, v)` with `u < v`, in the order they were chosen.
    pub flips: Vec<(usize, usize)>,
    pub added: usize,
    pub removed: usize,
    /// Flips spent at random because the heuristic ran out of candidates.
    pub fallback_flips: usize,
    /// Nodes the attack was aimed at; empty for untargeted attacks.
    pub targets: Vec<usize>,
}

fn pair(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

/// Toggles every pair in `flips`. Applying the same flips twice restores the
/// original edge set.
pub fn apply_flips(g: &Graph, flips: &[(usize, usize)]) -> Result<Graph> {
    let mut edges: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
    for &(u, v) in flips {
        if u == v {
            return Err(Error::validation(format!("self-loop flip ({u}, {u})")));
        }
        g.check_node(u)?;
        g.check_node(v)?;
        let p = pair(u, v);
        if !edges.remove(&p) {
            edges.insert(p);
        }
    }
    let mut list: Vec<_> = edges.into_iter().collect();
    list.sort_unstable();
    g.with_edges(list)
}

fn budget(g: &Graph, rate: f64) -> Result<usize> {
    if !(rate >= 0.0 && rate.is_finite()) {
        return Err(Error::validation(format!("perturbation rate {rate} must be >= 0")));
    }
    Ok(floor_fraction(rate, g.edge_count()))
}

fn max_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

fn random_flips(
    g: &Graph,
    count: usize,
    taken: &mut HashSet<(usize, usize)>,
    rng: &mut crate::rng::Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = g.node_count();
    if taken.len() + count > max_pairs(n) {
        return Err(Error::validation(format!(
            "{count} flips exceed the {} flippable pairs",
            max_pairs(n) - taken.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let p = pair(u, v);
        if taken.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn finish(
    g: &Graph,
    flips: Vec<(usize, usize)>,
    fallback_flips: usize,
    targets: Vec<usize>,
) -> Result<Perturbation> {
    let removed = flips.iter().filter(|&&(u, v)| g.has_edge(u, v)).count();
    let graph = apply_flips(g, &flips)?;
    Ok(Perturbation {
        graph,
        added: flips.len() - removed,
        removed,
        flips,
        fallback_flips,
        targets,
    })
}

/// Flips `floor(rate * |E|)` distinct uniformly random node pairs.
pub fn perturb_random(g: &Graph, rate: f64, seed: u64) -> Result<Perturbation> {
    let count = budget(g, rate)?;
    let mut rng = rng_for(seed, &[stream::PERTURB, 0]);
    let flips = random_flips(g, count, &mut HashSet::new(), &mut rng)?;
    finish(g, flips, 0, Vec::new())
}

/// Spends the edge budget on cross-label edges of minimal feature cosine
/// similarity, visiting attacked nodes in a seeded random order.
///
/// `labels` is the attacker's knowledge of node classes. When no cross-label
/// non-edge remains, the rest of the budget becomes random flips and is
/// reported in [`Perturbation::fallback_flips`].
pub fn perturb_heterophilic(
    g: &Graph,
    rate: f64,
    labels: &[usize],
    seed: u64,
) -> Result<Perturbation> {
    let order: Vec<usize> = (0..g.node_count()).collect();
    heterophilic(g, rate, labels, order, false, seed)
}

/// As [`perturb_heterophilic`], but every injected edge touches one of a
/// random `target_fraction` of the nodes.
pub fn perturb_heterophilic_targeted(
    g: &Graph,
    rate: f64,
    labels: &[usize],
    target_fraction: f64,
    seed: u64,
) -> Result<Perturbation> {
    let k = floor_fraction(target_fraction, g.node_count());
    if k == 0 {
        return Err(Error::validation("target fraction selects no nodes"));
    }
    let mut ids: Vec<usize> = (0..g.node_count()).collect();
    ids.shuffle(&mut rng_for(seed, &[stream::PERTURB, 2]));
    ids.truncate(k);
    ids.sort_unstable();
    heterophilic(g, rate, labels, ids, true, seed)
}

fn heterophilic(
    g: &Graph,
    rate: f64,
    labels: &[usize],
    mut attacked: Vec<usize>,
    targeted: bool,
    seed: u64,
) -> Result<Perturbation> {
    if labels.len() != g.node_count() {
        return Err(Error::validation(format!(
            "{} attacker labels for {} nodes",
            labels.len(),
            g.node_count()
        )));
    }
    let count = budget(g, rate)?;
    let mut rng = rng_for(seed, &[stream::PERTURB, 1]);
    attacked.shuffle(&mut rng);

    let n = g.node_count();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|v| {
            let x = g.feature(v);
            let norm = dot(x, x).sqrt();
            if norm == 0.0 {
                vec![0.0; x.len()]
            } else {
                x.iter().map(|a| a / norm).collect()
            }
        })
        .collect();

    let mut taken: HashSet<(usize, usize)> = HashSet::new();
    let mut flips = Vec::with_capacity(count);
    let mut exhausted = vec![false; attacked.len()];
    let mut live = attacked.len();
    let mut cursor = 0;
    while flips.len() < count && live > 0 {
        let slot = cursor % attacked.len();
        cursor += 1;
        if exhausted[slot] {
            continue;
        }
        let v = attacked[slot];
        let best = (0..n)
            .filter(|&u| {
                u != v
                    && labels[u] != labels[v]
                    && !g.has_edge(u, v)
                    && !taken.contains(&pair(u, v))
            })
            .map(|u| (dot(&unit[v], &unit[u]), u))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match best {
            Some((_, u)) => {
                taken.insert(pair(u, v));
                flips.push(pair(u, v));
            }
            None => {
                exhausted[slot] = true;
                live -= 1;
            }
        }
    }
    let fallback = count - flips.len();
    if fallback > 0 {
        log::warn!("heterophilic candidates exhausted; {fallback} random flips used instead");
        flips.extend(random_flips(g, fallback, &mut taken, &mut rng)?);
    }
    let mut targets = if targeted { attacked } else { Vec::new() };
    targets.sort_unstable();
    finish(g, flips, fallback, targets)
}
