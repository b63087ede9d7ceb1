use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKind, PerturbationKind};
use crate::attacks::{run_mia, MiaSetting};
use crate::error::{Error, Result};
use crate::graph::{
    perturb_heterophilic, perturb_heterophilic_targeted, perturb_random, split_nodes, Graph, Perturbation, Splits,
};
use crate::nn::Checkpoint;
use crate::predictor::{
    accuracy, baseline_gcn_train, gcn_ib_train, gcn_pl_train, posterior_dump, write_posteriors, TrainedGcn,
};
use crate::rng::{derive_seed, stream};
use crate::tensor::Matrix;
use crate::trainer::{train_rmgib, write_loss_curve, write_run_dir, PseudoLabelSet, TrainedRmGib, Variant};

/// A trained target model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedTarget {
    Gcn(TrainedGcn),
    GcnPl(TrainedGcn, PseudoLabelSet),
    Rmgib(Box<TrainedRmGib>),
}

impl TrainedTarget {
    /// Class probabilities for every node.
    pub fn probs(&self) -> &Matrix {
        match self {
            TrainedTarget::Gcn(t) | TrainedTarget::GcnPl(t, _) => &t.probs,
            TrainedTarget::Rmgib(r) => &r.probs,
        }
    }

    /// Optimizer steps over every stage.
    pub fn epochs(&self) -> usize {
        match self {
            TrainedTarget::Gcn(t) => t.outcome.curve.len(),
            TrainedTarget::GcnPl(t, _) => 2 * t.outcome.curve.len(),
            TrainedTarget::Rmgib(r) => {
                r.stage1.fit.curve.len() + r.stage2.as_ref().map_or(0, |s| s.fit.curve.len())
            }
        }
    }

    /// Checkpoints, loss curves and pseudo labels.
    pub fn write_artifacts(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        match self {
            TrainedTarget::Rmgib(r) => write_run_dir(dir, cfg, r),
            TrainedTarget::Gcn(t) | TrainedTarget::GcnPl(t, _) => {
                let ck = dir.join("checkpoints");
                std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
                let sets = t.model.param_sets();
                Checkpoint::new(&sets.iter().collect::<Vec<_>>()).save(&ck.join("final.json"))?;
                write_loss_curve(&dir.join("loss_curve.csv"), &t.outcome.curve)?;
                cfg.save(&dir.join("config.json"))?;
                if let TrainedTarget::GcnPl(_, pl) = self {
                    pl.save(&dir.join("pseudo_labels.json"))?;
                }
                Ok(())
            }
        }
    }
}

/// Trains the configured model on `g`.
pub fn train_target(
    g: &Graph,
    splits: &Splits,
    cfg: &ExperimentConfig,
    seed: u64,
    run_dir: Option<&Path>,
) -> Result<TrainedTarget> {
    let p = &cfg.params;
    let rmgib = |variant| train_rmgib(g, splits, p, variant, seed, run_dir).map(|r| TrainedTarget::Rmgib(Box::new(r)));
    match cfg.model {
        ModelKind::Gcn => baseline_gcn_train(g, splits, p, seed).map(TrainedTarget::Gcn),
        ModelKind::GcnIb => gcn_ib_train(g, splits, p, seed).map(TrainedTarget::Gcn),
        ModelKind::GcnPl => gcn_pl_train(g, splits, p, seed).map(|(t, pl)| TrainedTarget::GcnPl(t, pl)),
        ModelKind::Rmgib => rmgib(Variant::FULL),
        ModelKind::RmgibNoS => rmgib(Variant::NO_SELF_SUPERVISION),
        ModelKind::RmgibNoPl => rmgib(Variant::NO_PSEUDO_LABELS),
    }
}

/// The graph a seed trains on: the dataset, perturbed when configured.
/// The attacker knows the true labels.
pub fn prepare_graph(clean: &Graph, cfg: &ExperimentConfig, seed: u64) -> Result<Perturbation> {
    let ps = derive_seed(seed, &[stream::PERTURB]);
    let spec = &cfg.perturbation;
    match spec.kind {
        PerturbationKind::None => Ok(Perturbation {
            graph: clean.clone(),
            flips: Vec::new(),
            added: 0,
            removed: 0,
            fallback_flips: 0,
            targets: Vec::new(),
        }),
        PerturbationKind::Random => perturb_random(clean, spec.rate, ps),
        PerturbationKind::Heterophilic => perturb_heterophilic(clean, spec.rate, clean.labels(), ps),
        PerturbationKind::Targeted => {
            perturb_heterophilic_targeted(clean, spec.rate, clean.labels(), spec.target_fraction, ps)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub accuracy: f64,
    pub val_accuracy: f64,
    /// Accuracy on the attacked test nodes of a targeted perturbation.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    pub mia_f_roc: Option<f64>,
    pub mia_s_roc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub wall_clock_s: f64,
    pub epochs: usize,
}

/// Mean and sample standard deviation; the deviation needs two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() >= 2)
            .then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Stat { mean, std })
    }

    /// `mean±std` with three decimals, or the mean alone.
    pub fn display(&self) -> String {
        match self.std {
            Some(s) => format!("{:.3}±{:.3}", self.mean, s),
            None => format!("{:.3}", self.mean),
        }
    }
}

/// Everything one configuration produced across its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub node_count: usize,
    pub edge_count: usize,
    pub seeds: Vec<SeedMetrics>,
    pub accuracy: Stat,
    pub val_accuracy: Stat,
    #[serde(default)]
    pub target_accuracy: Option<Stat>,
    pub mia_f_roc: Option<Stat>,
    pub mia_s_roc: Option<Stat>,
    pub timing: Vec<SeedTiming>,
}

impl RunRecord {
    pub fn from_seeds(cfg: &ExperimentConfig, g: &Graph, seeds: Vec<SeedMetrics>, timing: Vec<SeedTiming>) -> Result<Self> {
        let col = |f: fn(&SeedMetrics) -> Option<f64>| -> Vec<f64> { seeds.iter().filter_map(f).collect() };
        let stat = |f| Stat::of(&col(f)).ok_or_else(|| Error::validation("no seed produced metrics"));
        Ok(RunRecord {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            node_count: g.node_count(),
            edge_count: g.edge_count(),
            accuracy: stat(|s| Some(s.accuracy))?,
            val_accuracy: stat(|s| Some(s.val_accuracy))?,
            target_accuracy: Stat::of(&col(|s| s.target_accuracy)),
            mia_f_roc: Stat::of(&col(|s| s.mia_f_roc)),
            mia_s_roc: Stat::of(&col(|s| s.mia_s_roc)),
            seeds,
            timing,
        })
    }

    /// Equality of every field except wall-clock timings.
    pub fn same_metrics(&self, other: &RunRecord) -> bool {
        self.config_hash == other.config_hash
            && self.node_count == other.node_count
            && self.edge_count == other.edge_count
            && self.seeds == other.seeds
            && self.accuracy == other.accuracy
            && self.val_accuracy == other.val_accuracy
            && self.target_accuracy == other.target_accuracy
            && self.mia_f_roc == other.mia_f_roc
            && self.mia_s_roc == other.mia_s_roc
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// One seed of the pipeline: perturb, split, train, evaluate, attack.
pub fn run_seed(
    clean: &Graph,
    cfg: &ExperimentConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<(SeedMetrics, SeedTiming)> {
    let start = Instant::now();
    let pert = prepare_graph(clean, cfg, seed).map_err(|e| e.in_stage("perturb"))?;
    let g = pert.graph;
    let splits = split_nodes(&g, cfg.label_rate, cfg.val_count, cfg.test_count, seed).map_err(|e| e.in_stage("split"))?;
    let dir = out.map(|o| o.join(format!("seed_{seed}")));
    if let Some(d) = &dir {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let target = train_target(&g, &splits, cfg, seed, dir.as_deref()).map_err(|e| e.in_stage("train"))?;
    let probs = target.probs();
    let mut m = SeedMetrics {
        seed,
        accuracy: accuracy(probs, &splits.test, g.labels()),
        val_accuracy: accuracy(probs, &splits.val, g.labels()),
        target_accuracy: target_accuracy(probs, &splits.test, &pert.targets, g.labels()),
        mia_f_roc: None,
        mia_s_roc: None,
    };
    let mut reports = Vec::new();
    for &setting in &cfg.mia {
        let r = run_mia(&g, probs, &splits, setting, &cfg.params, &cfg.attack, derive_seed(seed, &[stream::ATTACK]))
            .map_err(|e| e.in_stage("attack"))?;
        match setting {
            MiaSetting::Full => m.mia_f_roc = Some(r.roc_auc),
            MiaSetting::Subgraph => m.mia_s_roc = Some(r.roc_auc),
        }
        reports.push(r);
    }
    let timing = SeedTiming {
        seed,
        wall_clock_s: start.elapsed().as_secs_f64(),
        epochs: target.epochs(),
    };
    if let Some(d) = &dir {
        target.write_artifacts(d, cfg)?;
        write_posteriors(&d.join("posteriors.jsonl"), &posterior_dump(probs, &splits))?;
        let sp = d.join("splits.json");
        std::fs::write(&sp, serde_json::to_string(&splits)?).map_err(|e| Error::io(&sp, e))?;
        for r in &reports {
            r.save(&d.join(format!("attack_report_{}.json", r.setting.name())))?;
        }
    }
    info!(
        "{} seed {seed}: accuracy {:.3} mia_f {:?} mia_s {:?}",
        cfg.model.name(),
        m.accuracy,
        m.mia_f_roc,
        m.mia_s_roc
    );
    Ok((m, timing))
}

/// Accuracy over the test nodes that were attack targets, if any were.
pub fn target_accuracy(probs: &Matrix, test: &[usize], targets: &[usize], labels: &[usize]) -> Option<f64> {
    let hit: Vec<usize> = test.iter().copied().filter(|v| targets.binary_search(v).is_ok()).collect();
    (!hit.is_empty()).then(|| accuracy(probs, &hit, labels))
}

/// Runs every seed of `cfg`. With `out` set, writes `run_record.json` and
/// one `seed_<s>` directory per seed there.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let g = cfg.dataset.load().map_err(|e| e.in_stage("dataset"))?;
    let mut metrics = Vec::new();
    let mut timing = Vec::new();
    for &seed in &cfg.seeds {
        let (m, t) = run_seed(&g, cfg, seed, out)?;
        metrics.push(m);
        timing.push(t);
    }
    let record = RunRecord::from_seeds(cfg, &g, metrics, timing)?;
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        record.save(&o.join("run_record.json"))?;
    }
    Ok(record)
}

/// Reruns a record's configuration and seeds; true when every metric matches
/// bit for bit.
pub fn reproduce(record: &RunRecord) -> Result<bool> {
    Ok(run_experiment(&record.config, None)?.same_metrics(record))
}

/// Records of a grid search and the one chosen by validation accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub records: Vec<RunRecord>,
    pub best: usize,
}

/// Every combination of grid values applied to `base`, keys in sorted order.
pub fn expand_grid(base: &ExperimentConfig, grid: &BTreeMap<String, Vec<serde_json::Value>>) -> Result<Vec<ExperimentConfig>> {
    if grid.is_empty() || grid.values().any(Vec::is_empty) {
        return Err(Error::validation("grid needs at least one key and one value per key"));
    }
    let mut configs = vec![base.clone()];
    for (key, values) in grid {
        configs = configs
            .iter()
            .flat_map(|c| values.iter().map(move |v| c.with_value(key, v.clone())))
            .collect::<Result<_>>()?;
    }
    Ok(configs)
}

/// Index of the highest mean validation accuracy; ties go to the smallest
/// config hash. Sees nothing but validation scores and hashes.
pub fn select_by_validation(candidates: &[(f64, &str)]) -> Option<usize> {
    (0..candidates.len()).max_by(|&a, &b| {
        let (va, ha) = candidates[a];
        let (vb, hb) = candidates[b];
        va.total_cmp(&vb).then_with(|| hb.cmp(ha))
    })
}

/// Runs the grid on at most `workers` threads. Each point writes to its own
/// directory under `out` when given.
pub fn run_grid(
    base: &ExperimentConfig,
    grid: &BTreeMap<String, Vec<serde_json::Value>>,
    workers: usize,
    out: Option<&Path>,
) -> Result<GridOutcome> {
    let configs = expand_grid(base, grid)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation(format!("worker pool: {e}")))?;
    let records: Vec<RunRecord> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| run_experiment(c, out.map(|o| o.join(c.run_name())).as_deref()))
            .collect::<Result<_>>()
    })?;
    let keys: Vec<(f64, &str)> = records
        .iter()
        .map(|r| (r.val_accuracy.mean, r.config_hash.as_str()))
        .collect();
    let best = select_by_validation(&keys).expect("grid is nonempty");
    Ok(GridOutcome { records, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SbmParams;
    use crate::harness::config::DatasetSpec;
    use serde_json::json;

    fn tiny(model: ModelKind) -> ExperimentConfig {
        let mut c = ExperimentConfig {
            dataset: DatasetSpec::Sbm(SbmParams::with_degrees(3, 20, 4.0, 1.0, 8, 1.0, 2)),
            label_rate: 0.1,
            val_count: 10,
            test_count: 30,
            model,
            seeds: vec![1, 2],
            ..ExperimentConfig::default()
        };
        c.params.hidden_dim = 8;
        c.params.code_dim = 4;
        c.params.epochs = 5;
        c.params.mi.hidden_dim = 8;
        c.params.mi.embed_dim = 4;
        c.params.mi.epochs = 3;
        c.attack.epochs = 20;
        c
    }

    #[test]
    fn std_needs_two_values() {
        assert_eq!(Stat::of(&[0.5]).unwrap().std, None);
        let s = Stat::of(&[1.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, Some(2f64.sqrt()));
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn pipeline_fills_requested_metrics() {
        let mut c = tiny(ModelKind::Gcn);
        c.mia = vec![MiaSetting::Full];
        let r = run_experiment(&c, None).unwrap();
        assert_eq!(r.seeds.len(), 2);
        assert!(r.seeds.iter().all(|s| s.mia_f_roc.is_some() && s.mia_s_roc.is_none()));
        assert!(r.accuracy.std.is_some());
        assert!(r.mia_s_roc.is_none());
    }

    #[test]
    fn every_model_kind_runs() {
        for m in ModelKind::ALL {
            let mut c = tiny(m);
            c.seeds = vec![3];
            let r = run_experiment(&c, None).unwrap();
            assert!((0.0..=1.0).contains(&r.accuracy.mean), "{m:?}");
        }
    }

    #[test]
    fn zero_rate_perturbation_is_the_clean_run() {
        let clean = tiny(ModelKind::Gcn);
        let mut zero = clean.clone();
        zero.perturbation.kind = PerturbationKind::Heterophilic;
        zero.perturbation.rate = 0.0;
        let a = run_experiment(&clean, None).unwrap();
        let b = run_experiment(&zero, None).unwrap();
        assert_eq!(a.seeds, b.seeds);
    }

    #[test]
    fn targeted_runs_report_target_accuracy() {
        let mut c = tiny(ModelKind::Gcn);
        c.perturbation.kind = PerturbationKind::Targeted;
        c.perturbation.target_fraction = 0.5;
        let r = run_experiment(&c, None).unwrap();
        assert!(r.seeds.iter().all(|s| s.target_accuracy.is_some()));
        assert!(r.target_accuracy.is_some());
        assert!(run_experiment(&tiny(ModelKind::Gcn), None).unwrap().target_accuracy.is_none());
    }

    #[test]
    fn target_accuracy_counts_attacked_test_nodes() {
        let probs = Matrix::from_vec(4, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4, 0.3, 0.7]).unwrap();
        let labels = [0, 0, 0, 1];
        assert_eq!(target_accuracy(&probs, &[0, 1, 2, 3], &[1, 3], &labels), Some(0.5));
        assert_eq!(target_accuracy(&probs, &[0, 2], &[1, 3], &labels), None);
    }

    #[test]
    fn persisted_record_reproduces() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(ModelKind::Rmgib);
        let r = run_experiment(&c, Some(dir.path())).unwrap();
        let loaded = RunRecord::load(&dir.path().join("run_record.json")).unwrap();
        assert_eq!(loaded, r);
        assert!(reproduce(&loaded).unwrap());
        for f in ["seed_1/posteriors.jsonl", "seed_1/splits.json", "seed_2/checkpoints/final.json", "seed_2/partition.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn grid_products_and_selection() {
        let base = tiny(ModelKind::GcnIb);
        let mut grid = BTreeMap::new();
        grid.insert("beta".to_string(), vec![json!(0.0001), json!(0.1)]);
        grid.insert("epochs".to_string(), vec![json!(3), json!(4), json!(5)]);
        assert_eq!(expand_grid(&base, &grid).unwrap().len(), 6);
        assert!(expand_grid(&base, &BTreeMap::new()).is_err());

        let mut one = BTreeMap::new();
        one.insert("beta".to_string(), vec![json!(base.params.beta)]);
        let g = run_grid(&base, &one, 2, None).unwrap();
        assert!(g.records[0].same_metrics(&run_experiment(&base, None).unwrap()));
    }

    #[test]
    fn selection_ignores_order() {
        let c = [(0.7, "b"), (0.9, "c"), (0.9, "a"), (0.1, "d")];
        assert_eq!(c[select_by_validation(&c).unwrap()].1, "a");
        let rev: Vec<_> = c.iter().rev().copied().collect();
        assert_eq!(rev[select_by_validation(&rev).unwrap()].1, "a");
    }
}
