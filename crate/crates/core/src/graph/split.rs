use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};

/// Disjoint labeled / validation / test node sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn train_labels(&self, g: &Graph) -> Vec<usize> {
        self.train.iter().map(|&v| g.labels()[v]).collect()
    }

    /// Every node outside the training set.
    pub fn unlabeled(&self, node_count: usize) -> Vec<usize> {
        let mut is_train = vec![false; node_count];
        for &v in &self.train {
            is_train[v] = true;
        }
        (0..node_count).filter(|&v| !is_train[v]).collect()
    }
}

/// `floor(fraction * n)`, robust to representation error such as
/// `0.29 * 100 = 28.999999999999996`.
pub fn floor_fraction(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Uniform random disjoint split with `floor(label_rate * N)` training nodes.
pub fn split_nodes(
    g: &Graph,
    label_rate: f64,
    val_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<Splits> {
    let n = g.node_count();
    if !(0.0..=1.0).contains(&label_rate) {
        return Err(Error::validation(format!("label rate {label_rate} outside [0, 1]")));
    }
    let train_count = floor_fraction(label_rate, n);
    if train_count == 0 {
        return Err(Error::validation(format!(
            "label rate {label_rate} leaves no training nodes among {n}"
        )));
    }
    if train_count + val_count + test_count > n {
        return Err(Error::validation(format!(
            "{train_count} + {val_count} + {test_count} split nodes exceed {n}"
        )));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng_for(seed, &[stream::SPLIT]));
    let take = |count: usize, from: usize| {
        let mut part = ids[from..from + count].to_vec();
        part.sort_unstable();
        part
    };
    let train = take(train_count, 0);
    let val = take(val_count, train_count);
    let test = take(test_count, train_count + val_count);
    Ok(Splits { train, val, test })
}

/// Induced subgraph on a uniform sample of `floor(node_fraction * N)` nodes.
/// Returns the subgraph and, for each new id, the original id.
pub fn subsample_graph(g: &Graph, node_fraction: f64, seed: u64) -> Result<(Graph, Vec<usize>)> {
    if !(node_fraction > 0.0 && node_fraction <= 1.0) {
        return Err(Error::validation(format!(
            "node fraction {node_fraction} outside (0, 1]"
        )));
    }
    let n = g.node_count();
    let k = floor_fraction(node_fraction, n);
    if k == 0 {
        return Err(Error::validation("subsample is empty"));
    }
    let mut keep: Vec<usize> = if k == n {
        (0..n).collect()
    } else {
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng_for(seed, &[stream::GRAPH, 1]));
        ids.truncate(k);
        ids
    };
    keep.sort_unstable();
    let mut new_id = vec![usize::MAX; n];
    for (i, &v) in keep.iter().enumerate() {
        new_id[v] = i;
    }
    let edges = g
        .edges()
        .iter()
        .filter(|&&(u, v)| new_id[u] != usize::MAX && new_id[v] != usize::MAX)
        .map(|&(u, v)| (new_id[u], new_id[v]));
    let features = g.features().gather_rows(&keep);
    let labels = keep.iter().map(|&v| g.labels()[v]).collect();
    let (sub, _) = Graph::new(k, edges, features, labels, g.class_count())?;
    Ok((sub, keep))
}
