use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::{fit, write_loss_curve, FitOutcome, Selection};
use super::gib::{gib_posteriors, gib_step, step_seed, Draws, RmGibModel};
use super::pseudo::PseudoLabelSet;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{Graph, Splits};
use crate::mi::{cached_partition, partition_neighbors, train_mi_estimator, MiEstimator, NeighborPartition, SupervisionPairs};
use crate::nn::{Checkpoint, Index};
use crate::predictor::{accuracy, LocalBatch};
use crate::rng::derive_seed;
use crate::tensor::Matrix;

/// Which parts of the full method are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub self_supervision: bool,
    pub pseudo_labels: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        self_supervision: true,
        pseudo_labels: true,
    };
    pub const NO_SELF_SUPERVISION: Variant = Variant {
        self_supervision: false,
        pseudo_labels: true,
    };
    pub const NO_PSEUDO_LABELS: Variant = Variant {
        self_supervision: true,
        pseudo_labels: false,
    };
}

/// One trained stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageResult {
    pub model: RmGibModel,
    pub fit: FitOutcome,
}

/// Minimizes the objective on `nodes` with per-node `labels`, selecting by
/// accuracy on `val` (last epoch when `val` is empty).
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    g: &Graph,
    nodes: &[usize],
    labels: &[usize],
    val: &[usize],
    partition: Option<&NeighborPartition>,
    cfg: &ModelConfig,
    seed: u64,
    stage: u64,
) -> Result<StageResult> {
    cfg.validate()?;
    if nodes.is_empty() || nodes.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} training nodes with {} labels",
            nodes.len(),
            labels.len()
        )));
    }
    let init = RmGibModel::new(g, cfg, derive_seed(seed, &[stage]))?;
    let batch = LocalBatch::build(g, nodes, cfg.layers)?;
    let val_batch = if val.is_empty() {
        None
    } else {
        Some(LocalBatch::build(g, val, cfg.layers)?)
    };
    let selection = if val_batch.is_some() {
        Selection::BestValidation
    } else {
        Selection::LastEpoch
    };
    let label_idx: Index = labels.into();
    let pairs = match partition {
        Some(p) if cfg.gamma > 0.0 => Some(SupervisionPairs::new(p)),
        _ => None,
    };
    let fit = fit(
        init.param_sets(),
        cfg.epochs,
        cfg.adam,
        selection,
        |epoch, sets| {
            let m = init.with_params(sets)?;
            let draws = Draws::new(
                g.node_count(),
                cfg.code_dim,
                batch.pair_count(),
                step_seed(seed, stage, epoch as u64),
            );
            gib_step(&m, g, &batch, &label_idx, pairs.as_ref(), cfg, &draws)
        },
        |sets| {
            let vb = val_batch.as_ref().expect("validation batch");
            let probs = gib_posteriors(&init.with_params(sets)?, g, vb)?;
            let hits = vb
                .centers
                .iter()
                .enumerate()
                .filter(|&(i, &v)| crate::tensor::argmax(probs.row(i)) == g.labels()[v])
                .count();
            Ok(hits as f64 / vb.centers.len() as f64)
        },
    )?;
    let model = init.with_params(&fit.params)?;
    Ok(StageResult { model, fit })
}

/// Stage 1: the labeled nodes only.
pub fn stage1_train(
    g: &Graph,
    splits: &Splits,
    partition: Option<&NeighborPartition>,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<StageResult> {
    train_stage(g, &splits.train, &splits.train_labels(g), &splits.val, partition, cfg, seed, 1)
}

/// Deterministic posteriors of every node of `g`.
pub fn all_posteriors(model: &RmGibModel, g: &Graph) -> Result<Matrix> {
    let all: Vec<usize> = (0..g.node_count()).collect();
    gib_posteriors(model, g, &LocalBatch::build(g, &all, model.hops())?)
}

/// Labels the unlabeled nodes with the stage-1 model's argmax predictions.
pub fn collect_pseudo_labels(
    model: &RmGibModel,
    g: &Graph,
    splits: &Splits,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<PseudoLabelSet> {
    let probs = all_posteriors(model, g)?;
    PseudoLabelSet::from_probs(g, splits, &probs, cfg, seed)
}

/// Stage 2: re-initialized parameters trained on the pseudo-labeled set.
pub fn stage2_train(
    g: &Graph,
    pl: &PseudoLabelSet,
    val: &[usize],
    partition: Option<&NeighborPartition>,
    cfg: &ModelConfig,
    seed: u64,
) -> Result<StageResult> {
    train_stage(g, &pl.nodes, &pl.labels, val, partition, cfg, seed, 2)
}

/// Everything a full training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedRmGib {
    pub model: RmGibModel,
    /// Deterministic posteriors of every node.
    pub probs: Matrix,
    pub estimator: Option<MiEstimator>,
    pub partition: Option<NeighborPartition>,
    pub stage1: StageResult,
    pub pseudo: Option<PseudoLabelSet>,
    pub stage2: Option<StageResult>,
}

impl TrainedRmGib {
    pub fn final_fit(&self) -> &FitOutcome {
        self.stage2.as_ref().map_or(&self.stage1.fit, |s| &s.fit)
    }

    pub fn test_accuracy(&self, g: &Graph, splits: &Splits) -> f64 {
        accuracy(&self.probs, &splits.test, g.labels())
    }
}

/// Estimator pretraining, stage 1, pseudo labels and stage 2, as enabled by
/// `variant`. With `run_dir` set, the partition cache lives there.
pub fn train_rmgib(
    g: &Graph,
    splits: &Splits,
    cfg: &ModelConfig,
    variant: Variant,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainedRmGib> {
    cfg.validate()?;
    let (estimator, partition) = if variant.self_supervision && cfg.gamma > 0.0 {
        let est = train_mi_estimator(g, cfg.mi.negatives_per_edge, &cfg.mi, derive_seed(seed, &[3]))
            .map_err(|e| e.in_stage("estimator"))?;
        let part = match run_dir {
            Some(dir) => cached_partition(&dir.join("partition.json"), g, &est)?,
            None => partition_neighbors(g, &est)?,
        };
        (Some(est), Some(part))
    } else {
        (None, None)
    };
    let stage1 = stage1_train(g, splits, partition.as_ref(), cfg, seed).map_err(|e| e.in_stage("stage 1"))?;
    let (model, pseudo, stage2) = if variant.pseudo_labels {
        let pl = collect_pseudo_labels(&stage1.model, g, splits, cfg, seed)?;
        let s2 = stage2_train(g, &pl, &splits.val, partition.as_ref(), cfg, seed)
            .map_err(|e| e.in_stage("stage 2"))?;
        (s2.model.clone(), Some(pl), Some(s2))
    } else {
        (stage1.model.clone(), None, None)
    };
    let probs = all_posteriors(&model, g)?;
    Ok(TrainedRmGib {
        model,
        probs,
        estimator,
        partition,
        stage1,
        pseudo,
        stage2,
    })
}

/// Writes `config.json`, `checkpoints/`, `pseudo_labels.json` and the loss
/// curves of a finished run.
pub fn write_run_dir<C: Serialize>(dir: &Path, config: &C, run: &TrainedRmGib) -> Result<()> {
    let ck = dir.join("checkpoints");
    std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
    let cfg_path = dir.join("config.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&cfg_path, e))?;
    let sets = run.model.param_sets();
    Checkpoint::new(&sets.iter().collect::<Vec<_>>()).save(&ck.join("final.json"))?;
    let s1 = run.stage1.model.param_sets();
    Checkpoint::new(&s1.iter().collect::<Vec<_>>()).save(&ck.join("stage1.json"))?;
    if let Some(est) = &run.estimator {
        Checkpoint::new(&[&est.mlp.params]).save(&ck.join("estimator.json"))?;
    }
    if let Some(pl) = &run.pseudo {
        pl.save(&dir.join("pseudo_labels.json"))?;
    }
    write_loss_curve(&dir.join("loss_curve.csv"), &run.final_fit().curve)?;
    if run.stage2.is_some() {
        write_loss_curve(&dir.join("loss_curve_stage1.csv"), &run.stage1.fit.curve)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MiConfig;
    use crate::graph::{generate_sbm, split_nodes, SbmParams};

    fn cfg() -> ModelConfig {
        ModelConfig {
            hidden_dim: 8,
            code_dim: 4,
            epochs: 4,
            mi: MiConfig {
                hidden_dim: 8,
                embed_dim: 4,
                epochs: 3,
                ..MiConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn fixture() -> (Graph, Splits) {
        let g = generate_sbm(&SbmParams {
            block_sizes: vec![15, 15],
            p_in: 0.3,
            p_out: 0.03,
            feature_dim: 4,
            feature_signal: 2.0,
            seed: 5,
        })
        .unwrap();
        let s = split_nodes(&g, 0.2, 6, 10, 1).unwrap();
        (g, s)
    }

    #[test]
    fn full_run_is_deterministic() {
        let (g, s) = fixture();
        let a = train_rmgib(&g, &s, &cfg(), Variant::FULL, 7, None).unwrap();
        let b = train_rmgib(&g, &s, &cfg(), Variant::FULL, 7, None).unwrap();
        assert_eq!(a, b);
        let pl = a.pseudo.as_ref().unwrap();
        assert_eq!(pl.len(), g.node_count());
        for (i, &v) in s.train.iter().enumerate() {
            let k = pl.nodes.binary_search(&v).unwrap();
            assert_eq!(pl.labels[k], s.train_labels(&g)[i]);
        }
    }

    #[test]
    fn ablations_skip_their_parts() {
        let (g, s) = fixture();
        let no_pl = train_rmgib(&g, &s, &cfg(), Variant::NO_PSEUDO_LABELS, 7, None).unwrap();
        assert!(no_pl.stage2.is_none() && no_pl.estimator.is_some());
        let no_s = train_rmgib(&g, &s, &cfg(), Variant::NO_SELF_SUPERVISION, 7, None).unwrap();
        assert!(no_s.estimator.is_none());
        assert!(no_s.final_fit().curve.iter().all(|r| r.loss.l_s == 0.0));
    }

    #[test]
    fn run_directory_layout() {
        let (g, s) = fixture();
        let run = train_rmgib(&g, &s, &cfg(), Variant::FULL, 7, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run_dir(dir.path(), &cfg(), &run).unwrap();
        for f in ["config.json", "checkpoints/final.json", "checkpoints/estimator.json", "pseudo_labels.json", "loss_curve.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let ck = Checkpoint::load(&dir.path().join("checkpoints/final.json")).unwrap();
        let restored = run.model.with_params(&ck.param_sets().unwrap()).unwrap();
        assert_eq!(restored, run.model);
    }
}
