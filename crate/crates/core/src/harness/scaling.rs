use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig};
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, SbmParams};
use crate::mi::{partition_neighbors, train_mi_estimator};
use crate::rng::derive_seed;
use crate::trainer::train_stage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub nodes: usize,
    pub edges: usize,
    pub edges_per_node: f64,
    /// Fastest of the repeats.
    pub seconds_per_epoch: f64,
}

/// Same block count, expected degrees and features as `base` at `nodes`
/// nodes.
pub fn resized_sbm(base: &SbmParams, nodes: usize) -> Result<SbmParams> {
    let blocks = base.block_sizes.len();
    let bs = base.block_sizes[0];
    let n: usize = base.block_sizes.iter().sum();
    if base.block_sizes.iter().any(|&b| b != bs) {
        return Err(Error::validation("scaling needs equal block sizes"));
    }
    if nodes < blocks {
        return Err(Error::validation(format!("{nodes} nodes for {blocks} blocks")));
    }
    let deg_in = base.p_in * (bs - 1) as f64;
    let deg_out = base.p_out * (n - bs) as f64;
    Ok(SbmParams::with_degrees(
        blocks,
        nodes / blocks,
        deg_in,
        deg_out,
        base.feature_dim,
        base.feature_signal,
        base.seed,
    ))
}

/// Trains the full objective on every node of SBM graphs of the given sizes
/// and reports wall-clock time per epoch.
pub fn scaling_probe(sizes: &[usize], base: &ExperimentConfig, repeats: usize) -> Result<Vec<ScalingRow>> {
    let DatasetSpec::Sbm(sbm) = &base.dataset else {
        return Err(Error::validation("scaling needs a synthetic dataset"));
    };
    let cfg = &base.params;
    let seed = base.seeds[0];
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = generate_sbm(&resized_sbm(sbm, n)?)?;
        let nodes: Vec<usize> = (0..g.node_count()).collect();
        let partition = if cfg.gamma > 0.0 && g.edge_count() > 0 {
            let est = train_mi_estimator(&g, cfg.mi.negatives_per_edge, &cfg.mi, derive_seed(seed, &[3]))?;
            Some(partition_neighbors(&g, &est)?)
        } else {
            None
        };
        let mut best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let start = Instant::now();
            train_stage(&g, &nodes, g.labels(), &[], partition.as_ref(), cfg, seed, 1)?;
            best = best.min(start.elapsed().as_secs_f64() / cfg.epochs as f64);
        }
        rows.push(ScalingRow {
            nodes: g.node_count(),
            edges: g.edge_count(),
            edges_per_node: g.edge_count() as f64 / g.node_count() as f64,
            seconds_per_epoch: best,
        });
    }
    Ok(rows)
}
