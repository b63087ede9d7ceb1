use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::tensor::Matrix;

/// Stochastic block model with Gaussian class-mean features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Scale of the one-hot class mean added to unit Gaussian noise.
    pub feature_signal: f64,
    pub seed: u64,
}

impl SbmParams {
    /// Equal blocks with edge probabilities chosen for expected within- and
    /// across-block degrees.
    pub fn with_degrees(
        blocks: usize,
        block_size: usize,
        degree_in: f64,
        degree_out: f64,
        feature_dim: usize,
        feature_signal: f64,
        seed: u64,
    ) -> Self {
        let n = blocks * block_size;
        let p_in = (degree_in / (block_size.saturating_sub(1)).max(1) as f64).min(1.0);
        let p_out = (degree_out / (n - block_size).max(1) as f64).min(1.0);
        SbmParams {
            block_sizes: vec![block_size; blocks],
            p_in,
            p_out,
            feature_dim,
            feature_signal,
            seed,
        }
    }
}

/// Samples an SBM graph. Labels are block ids; node `i` of block `b` gets
/// features `feature_signal * e_b + N(0, I)`.
pub fn generate_sbm(p: &SbmParams) -> Result<Graph> {
    if p.block_sizes.is_empty() || p.block_sizes.contains(&0) {
        return Err(Error::validation("every block needs at least one node"));
    }
    if !(0.0..=1.0).contains(&p.p_out) || !(0.0..=1.0).contains(&p.p_in) || p.p_out > p.p_in {
        return Err(Error::validation(format!(
            "need 0 <= p_out <= p_in <= 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    let classes = p.block_sizes.len();
    if p.feature_dim < classes {
        return Err(Error::validation(format!(
            "feature_dim {} is smaller than the class count {classes}",
            p.feature_dim
        )));
    }
    let labels: Vec<usize> = p
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();

    let mut rng = rng_for(p.seed, &[stream::GRAPH]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let prob = if labels[u] == labels[v] { p.p_in } else { p.p_out };
            if prob > 0.0 && rng.random::<f64>() < prob {
                edges.push((u, v));
            }
        }
    }

    let mut features = Matrix::zeros(n, p.feature_dim);
    for v in 0..n {
        let row = features.row_mut(v);
        for x in row.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        row[labels[v]] += p.feature_signal;
    }
    Graph::new(n, edges, features, labels, classes).map(|(g, _)| g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(p_in: f64, p_out: f64) -> SbmParams {
        SbmParams {
            block_sizes: vec![3, 3],
            p_in,
            p_out,
            feature_dim: 4,
            feature_signal: 1.0,
            seed: 5,
        }
    }

    #[test]
    fn degenerate_probabilities_give_two_cliques() {
        let g = generate_sbm(&params(1.0, 0.0)).unwrap();
        assert_eq!(g.edge_count(), 6);
        for &(u, v) in g.edges() {
            assert_eq!(g.labels()[u], g.labels()[v]);
        }
    }

    #[test]
    fn within_block_edges_match_binomial_expectation() {
        let g = generate_sbm(&SbmParams {
            block_sizes: vec![50, 50],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 2,
            feature_signal: 1.0,
            seed: 42,
        })
        .unwrap();
        for block in 0..2 {
            let count = g
                .edges()
                .iter()
                .filter(|&&(u, v)| g.labels()[u] == block && g.labels()[v] == block)
                .count() as f64;
            // C(50, 2) = 1225 pairs at p = 0.1.
            let (mean, sd) = (122.5, (1225.0f64 * 0.1 * 0.9).sqrt());
            assert!((count - mean).abs() <= 3.0 * sd, "block {block}: {count}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_sbm(&params(0.5, 0.2)).unwrap();
        let b = generate_sbm(&params(0.5, 0.2)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut p = params(0.5, 0.2);
        p.block_sizes = vec![3, 0];
        assert!(generate_sbm(&p).is_err());
        assert!(generate_sbm(&params(0.1, 0.2)).is_err());
        let mut p = params(0.5, 0.2);
        p.feature_dim = 1;
        assert!(generate_sbm(&p).is_err());
    }

    #[test]
    fn degree_parameterization() {
        let p = SbmParams::with_degrees(4, 101, 5.0, 1.5, 8, 1.0, 0);
        assert!((p.p_in - 0.05).abs() < 1e-12);
        let g = generate_sbm(&p).unwrap();
        let avg = 2.0 * g.edge_count() as f64 / g.node_count() as f64;
        assert!((avg - 6.5).abs() < 0.6, "average degree {avg}");
    }
}
