use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{floor_fraction, Graph, Splits};
use crate::rng::{rng_for, stream};
use crate::tensor::{argmax, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Given,
    Pseudo,
}

/// Training targets for the second stage: given labels on the labeled nodes
/// plus predicted labels on (a share of) the unlabeled nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    /// Sorted node ids.
    pub nodes: Vec<usize>,
    pub labels: Vec<usize>,
    pub source: Vec<LabelSource>,
}

impl PseudoLabelSet {
    /// The labeled nodes alone.
    pub fn given_only(g: &Graph, splits: &Splits) -> Self {
        PseudoLabelSet {
            nodes: splits.train.clone(),
            labels: splits.train_labels(g),
            source: vec![LabelSource::Given; splits.train.len()],
        }
    }

    /// Argmax labels from `probs` for `cfg.pseudo_fraction` of the unlabeled
    /// nodes, chosen uniformly with a seeded draw; given labels always win.
    pub fn from_probs(
        g: &Graph,
        splits: &Splits,
        probs: &Matrix,
        cfg: &ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        if probs.rows() != g.node_count() {
            return Err(Error::shape(
                "pseudo_labels",
                format!("{} posterior rows for {} nodes", probs.rows(), g.node_count()),
            ));
        }
        let mut unlabeled = splits.unlabeled(g.node_count());
        let keep = floor_fraction(cfg.pseudo_fraction, unlabeled.len());
        if keep < unlabeled.len() {
            unlabeled.shuffle(&mut rng_for(seed, &[stream::PSEUDO, 1]));
            unlabeled.truncate(keep);
        }
        if let Some(min) = cfg.pseudo_min_confidence {
            unlabeled.retain(|&v| probs.row(v).iter().cloned().fold(0.0, f64::max) >= min);
        }
        let mut entries: Vec<(usize, usize, LabelSource)> = splits
            .train
            .iter()
            .map(|&v| (v, g.labels()[v], LabelSource::Given))
            .chain(
                unlabeled
                    .into_iter()
                    .map(|v| (v, argmax(probs.row(v)), LabelSource::Pseudo)),
            )
            .collect();
        entries.sort_unstable_by_key(|e| e.0);
        Ok(PseudoLabelSet {
            nodes: entries.iter().map(|e| e.0).collect(),
            labels: entries.iter().map(|e| e.1).collect(),
            source: entries.iter().map(|e| e.2).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pseudo_count(&self) -> usize {
        self.source.iter().filter(|&&s| s == LabelSource::Pseudo).count()
    }

    /// Agreement of pseudo labels with the true labels; `None` without any.
    pub fn pseudo_accuracy(&self, g: &Graph) -> Option<f64> {
        let pseudo: Vec<usize> = (0..self.len())
            .filter(|&i| self.source[i] == LabelSource::Pseudo)
            .collect();
        if pseudo.is_empty() {
            return None;
        }
        let hits = pseudo
            .iter()
            .filter(|&&i| self.labels[i] == g.labels()[self.nodes[i]])
            .count();
        Some(hits as f64 / pseudo.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Graph, Splits, Matrix) {
        let (g, _) = Graph::new(4, [], Matrix::zeros(4, 1), vec![0, 1, 1, 0], 2).unwrap();
        let splits = Splits {
            train: vec![1],
            val: vec![2],
            test: vec![3],
        };
        // The model disagrees with the given label of node 1.
        let probs = Matrix::from_rows(&[
            vec![0.9, 0.1],
            vec![0.8, 0.2],
            vec![0.3, 0.7],
            vec![0.6, 0.4],
        ])
        .unwrap();
        (g, splits, probs)
    }

    #[test]
    fn given_labels_are_preserved() {
        let (g, s, p) = setup();
        let pl = PseudoLabelSet::from_probs(&g, &s, &p, &ModelConfig::default(), 0).unwrap();
        assert_eq!(pl.nodes, vec![0, 1, 2, 3]);
        assert_eq!(pl.labels, vec![0, 1, 1, 0]);
        assert_eq!(pl.source[1], LabelSource::Given);
        assert_eq!(pl.pseudo_count(), 3);
        assert_eq!(pl.pseudo_accuracy(&g), Some(1.0));
    }

    #[test]
    fn empty_unlabeled_set_gives_the_given_labels() {
        let (g, mut s, p) = setup();
        s.train = vec![0, 1, 2, 3];
        let pl = PseudoLabelSet::from_probs(&g, &s, &p, &ModelConfig::default(), 0).unwrap();
        assert_eq!(pl.labels, g.labels());
        assert_eq!(pl.pseudo_accuracy(&g), None);
    }

    #[test]
    fn fraction_and_confidence_filters() {
        let (g, s, p) = setup();
        let cfg = ModelConfig {
            pseudo_fraction: 0.34,
            ..ModelConfig::default()
        };
        let pl = PseudoLabelSet::from_probs(&g, &s, &p, &cfg, 0).unwrap();
        assert_eq!(pl.pseudo_count(), 1);
        let cfg = ModelConfig {
            pseudo_min_confidence: Some(0.75),
            ..ModelConfig::default()
        };
        let pl = PseudoLabelSet::from_probs(&g, &s, &p, &cfg, 0).unwrap();
        assert_eq!(pl.nodes, vec![0, 1]);
    }

    #[test]
    fn file_round_trip() {
        let (g, s, p) = setup();
        let pl = PseudoLabelSet::from_probs(&g, &s, &p, &ModelConfig::default(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pseudo_labels.json");
        pl.save(&path).unwrap();
        assert_eq!(PseudoLabelSet::load(&path).unwrap(), pl);
    }
}
