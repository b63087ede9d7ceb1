//! Black-box membership inference against node classifiers.
//!
//! The attacker trains a shadow GCN on nodes it labels itself, queries the
//! shadow for posteriors of its members and non-members, and fits a binary
//! classifier on those posteriors. The classifier is then applied to the
//! target's posteriors for its training nodes and for held-out test nodes.

mod roc;

pub use roc::roc_auc;

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{subsample_graph, Graph, Splits};
use crate::nn::{Adam, AdamConfig, Mlp, Tape};
use crate::predictor::{posterior_dump, train_gcn, PosteriorRecord, TrainedGcn};
use crate::rng::{derive_seed, rng_for, stream};
use crate::tensor::{sigmoid, Matrix};
use crate::trainer::Selection;

/// What the attacker holds: the whole training graph, or half its nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MiaSetting {
    #[serde(rename = "mia_f")]
    Full,
    #[serde(rename = "mia_s")]
    Subgraph,
}

impl MiaSetting {
    pub fn name(self) -> &'static str {
        match self {
            MiaSetting::Full => "mia_f",
            MiaSetting::Subgraph => "mia_s",
        }
    }
}

impl std::str::FromStr for MiaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "mia_f" => Ok(MiaSetting::Full),
            "mia_s" => Ok(MiaSetting::Subgraph),
            other => Err(Error::validation(format!("unknown attack setting {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Sort each posterior in descending order before scoring.
    pub sorted_posteriors: bool,
    /// Share of the target graph the attacker holds under [`MiaSetting::Subgraph`].
    pub subgraph_fraction: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            hidden_dim: 64,
            epochs: 300,
            adam: AdamConfig::default(),
            sorted_posteriors: false,
            subgraph_fraction: 0.5,
        }
    }
}

impl AttackConfig {
    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// The attacker's graph and its member / non-member split.
///
/// `node_map[i]` is the target-graph id of shadow node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShadowSetup {
    pub setting: MiaSetting,
    pub graph: Graph,
    pub node_map: Vec<usize>,
    pub members: Vec<usize>,
    pub nonmembers: Vec<usize>,
}

impl ShadowSetup {
    /// Members in target-graph ids.
    pub fn members_in_target(&self) -> Vec<usize> {
        self.members.iter().map(|&v| self.node_map[v]).collect()
    }
}

/// Samples disjoint shadow members and non-members, each as many as the
/// target has training nodes, from nodes outside the target's training set.
pub fn build_shadow_setup(
    g: &Graph,
    target_train: &[usize],
    setting: MiaSetting,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<ShadowSetup> {
    if target_train.is_empty() {
        return Err(Error::validation("target training set is empty"));
    }
    for &v in target_train {
        g.check_node(v)?;
    }
    let (graph, node_map) = match setting {
        MiaSetting::Full => (g.clone(), (0..g.node_count()).collect()),
        MiaSetting::Subgraph => subsample_graph(g, cfg.subgraph_fraction, derive_seed(seed, &[stream::SHADOW]))?,
    };
    let taken: BTreeSet<usize> = target_train.iter().copied().collect();
    let mut candidates: Vec<usize> = (0..graph.node_count())
        .filter(|&i| !taken.contains(&node_map[i]))
        .collect();
    let k = taken.len();
    if candidates.len() < 2 * k {
        return Err(Error::validation(format!(
            "{} nodes outside the target training set; the shadow needs {}",
            candidates.len(),
            2 * k
        )));
    }
    candidates.shuffle(&mut rng_for(seed, &[stream::SHADOW, 1]));
    let mut members = candidates[..k].to_vec();
    let mut nonmembers = candidates[k..2 * k].to_vec();
    members.sort_unstable();
    nonmembers.sort_unstable();
    Ok(ShadowSetup {
        setting,
        graph,
        node_map,
        members,
        nonmembers,
    })
}

/// Posterior vectors with membership bits.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackDataset {
    pub inputs: Matrix,
    pub membership: Vec<bool>,
}

impl AttackDataset {
    pub fn new(inputs: Matrix, membership: Vec<bool>) -> Result<Self> {
        if inputs.rows() != membership.len() {
            return Err(Error::validation(format!(
                "{} posterior rows for {} membership bits",
                inputs.rows(),
                membership.len()
            )));
        }
        Ok(AttackDataset { inputs, membership })
    }

    /// Member rows first, then non-member rows.
    pub fn from_posteriors(members: &Matrix, nonmembers: &Matrix) -> Result<Self> {
        if members.cols() != nonmembers.cols() {
            return Err(Error::shape("attack_dataset", "member and non-member class counts differ"));
        }
        let mut rows = members.to_rows();
        rows.extend(nonmembers.to_rows());
        let mut membership = vec![true; members.rows()];
        membership.extend(std::iter::repeat_n(false, nonmembers.rows()));
        AttackDataset::new(Matrix::from_rows(&rows)?, membership)
    }

    pub fn len(&self) -> usize {
        self.membership.len()
    }

    pub fn is_empty(&self) -> bool {
        self.membership.is_empty()
    }

    /// `(members, non-members)`.
    pub fn class_balance(&self) -> (usize, usize) {
        let m = self.membership.iter().filter(|&&b| b).count();
        (m, self.len() - m)
    }
}

/// Trains the shadow GCN on its members with their true labels, using the
/// last epoch, and collects posteriors for members and non-members.
pub fn train_shadow_and_collect(
    setup: &ShadowSetup,
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<(TrainedGcn, AttackDataset)> {
    let labels: Vec<usize> = setup.members.iter().map(|&v| setup.graph.labels()[v]).collect();
    let shadow = train_gcn(
        &setup.graph,
        &setup.members,
        &labels,
        &[],
        model_cfg,
        false,
        Selection::LastEpoch,
        derive_seed(seed, &[stream::SHADOW, 2]),
    )
    .map_err(|e| e.in_stage("shadow training"))?;
    let d = AttackDataset::from_posteriors(
        &shadow.probs.gather_rows(&setup.members),
        &shadow.probs.gather_rows(&setup.nonmembers),
    )?;
    Ok((shadow, d))
}

/// Binary membership classifier over posterior vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    pub mlp: Mlp,
    pub sorted: bool,
}

impl AttackModel {
    pub fn class_count(&self) -> usize {
        self.mlp.input_dim()
    }

    fn prepare(&self, inputs: &Matrix) -> Matrix {
        prepare_inputs(inputs, self.sorted)
    }

    /// Membership probability of each row.
    pub fn score(&self, inputs: &Matrix) -> Result<Vec<f64>> {
        let logits = self.mlp.forward_values(&self.prepare(inputs))?;
        Ok(logits.data().iter().map(|&z| sigmoid(z)).collect())
    }
}

fn prepare_inputs(inputs: &Matrix, sorted: bool) -> Matrix {
    if !sorted {
        return inputs.clone();
    }
    let mut m = inputs.clone();
    for i in 0..m.rows() {
        m.row_mut(i).sort_by(|a, b| b.total_cmp(a));
    }
    m
}

/// Full-batch binary cross-entropy training of a `C -> hidden -> 1` network.
pub fn train_attack_model(d: &AttackDataset, cfg: &AttackConfig, seed: u64) -> Result<AttackModel> {
    let (pos, neg) = d.class_balance();
    if pos == 0 || neg == 0 {
        return Err(Error::validation("attack dataset holds a single class"));
    }
    if cfg.epochs == 0 || cfg.hidden_dim == 0 {
        return Err(Error::validation("attack model needs positive epochs and width"));
    }
    let mut rng = rng_for(seed, &[stream::ATTACK]);
    let mlp = Mlp::new("attack", &[d.inputs.cols(), cfg.hidden_dim, 1], &mut rng)?;
    let inputs = prepare_inputs(&d.inputs, cfg.sorted_posteriors);
    // softplus(-z) for members and softplus(z) for non-members.
    let signs = Matrix::column(d.membership.iter().map(|&m| if m { -1.0 } else { 1.0 }).collect());
    let mut params = mlp.params.clone();
    let mut adam = Adam::new(cfg.adam);
    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(inputs.clone());
        let z = Mlp::from_params(params.clone())?.forward(&mut tape, &bound, x)?;
        let s = tape.constant(signs.clone());
        let sz = tape.mul(z, s)?;
        let sp = tape.softplus(sz);
        let loss = tape.mean_all(sp);
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: "attack loss is not finite".into(),
            });
        }
        tape.backward(loss)?;
        let grads = params.gradients(&tape, &bound);
        adam.step(&mut params, &grads)?;
    }
    Ok(AttackModel {
        mlp: Mlp::from_params(params)?,
        sorted: cfg.sorted_posteriors,
    })
}

/// Size of each side of an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiaScore {
    pub roc_auc: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
}

/// Scores the target's training nodes (members) against `holdout`
/// (non-members). Only posterior records are read.
pub fn evaluate_mia(
    target: &[PosteriorRecord],
    target_train: &[usize],
    holdout: &[usize],
    atk: &AttackModel,
) -> Result<MiaScore> {
    if target_train.is_empty() || holdout.is_empty() {
        return Err(Error::validation("membership evaluation needs members and non-members"));
    }
    let train: BTreeSet<usize> = target_train.iter().copied().collect();
    if let Some(v) = holdout.iter().find(|v| train.contains(v)) {
        return Err(Error::validation(format!("holdout node {v} is also a training node")));
    }
    let by_id: HashMap<usize, &PosteriorRecord> = target.iter().map(|r| (r.node_id, r)).collect();
    let mut rows = Vec::with_capacity(target_train.len() + holdout.len());
    for &v in target_train.iter().chain(holdout) {
        let r = by_id
            .get(&v)
            .ok_or_else(|| Error::validation(format!("no posterior for node {v}")))?;
        if r.probs.len() != atk.class_count() {
            return Err(Error::shape(
                "evaluate_mia",
                format!("{} classes in the dump, {} in the attack model", r.probs.len(), atk.class_count()),
            ));
        }
        rows.push(r.probs.clone());
    }
    let scores = atk.score(&Matrix::from_rows(&rows)?)?;
    let mut labels = vec![true; target_train.len()];
    labels.extend(std::iter::repeat_n(false, holdout.len()));
    Ok(MiaScore {
        roc_auc: roc_auc(&scores, &labels)?,
        n_members: target_train.len(),
        n_nonmembers: holdout.len(),
    })
}

/// Contents of `attack_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub setting: MiaSetting,
    pub roc_auc: f64,
    pub n_members: usize,
    pub n_nonmembers: usize,
    pub attacker_config_hash: String,
}

impl AttackReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&s)?)
    }
}

/// Test nodes never used by the target or the shadow, as many as the
/// target's training set.
pub fn holdout_nodes(splits: &Splits, setup: &ShadowSetup, seed: u64) -> Result<Vec<usize>> {
    let used: BTreeSet<usize> = setup.members_in_target().into_iter().chain(splits.train.iter().copied()).collect();
    let mut pool: Vec<usize> = splits.test.iter().copied().filter(|v| !used.contains(v)).collect();
    let k = splits.train.len();
    if pool.len() < k {
        return Err(Error::validation(format!(
            "{} unused test nodes for {k} holdout non-members",
            pool.len()
        )));
    }
    pool.shuffle(&mut rng_for(seed, &[stream::HOLDOUT]));
    pool.truncate(k);
    pool.sort_unstable();
    Ok(pool)
}

/// The whole attack against a target's posteriors on `g`.
pub fn run_mia(
    g: &Graph,
    target_probs: &Matrix,
    splits: &Splits,
    setting: MiaSetting,
    shadow_cfg: &ModelConfig,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AttackReport> {
    let setup = build_shadow_setup(g, &splits.train, setting, cfg, seed)?;
    let (_, d) = train_shadow_and_collect(&setup, shadow_cfg, seed)?;
    let atk = train_attack_model(&d, cfg, seed)?;
    let holdout = holdout_nodes(splits, &setup, seed)?;
    let dump = posterior_dump(target_probs, splits);
    let s = evaluate_mia(&dump, &splits.train, &holdout, &atk)?;
    Ok(AttackReport {
        setting,
        roc_auc: s.roc_auc,
        n_members: s.n_members,
        n_nonmembers: s.n_nonmembers,
        attacker_config_hash: cfg.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_sbm, split_nodes, SbmParams};
    use rand::Rng as _;

    fn sbm(n_per_block: usize) -> Graph {
        generate_sbm(&SbmParams {
            block_sizes: vec![n_per_block; 3],
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 6,
            feature_signal: 1.0,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn full_setting_keeps_the_graph() {
        let g = sbm(20);
        let train = vec![0, 5, 21, 40];
        let s = build_shadow_setup(&g, &train, MiaSetting::Full, &AttackConfig::default(), 1).unwrap();
        assert_eq!(s.graph.node_count(), g.node_count());
        assert_eq!(s.members.len(), 4);
        assert_eq!(s.nonmembers.len(), 4);
        for v in s.members_in_target() {
            assert!(!train.contains(&v));
            assert!(!s.nonmembers.contains(&v));
        }
    }

    #[test]
    fn subgraph_setting_halves_the_graph() {
        let g = sbm(20);
        let s = build_shadow_setup(&g, &[1, 2], MiaSetting::Subgraph, &AttackConfig::default(), 1).unwrap();
        assert_eq!(s.graph.node_count(), 30);
        assert!(s.members_in_target().iter().all(|v| ![1, 2].contains(v)));
    }

    #[test]
    fn too_few_outside_nodes() {
        let g = sbm(2);
        let train: Vec<usize> = (0..3).collect();
        assert!(build_shadow_setup(&g, &train, MiaSetting::Full, &AttackConfig::default(), 1).is_err());
    }

    fn separable() -> AttackDataset {
        let members = Matrix::from_rows(&vec![vec![1.0, 0.0, 0.0]; 10]).unwrap();
        let nonmembers = Matrix::from_rows(&vec![vec![1.0 / 3.0; 3]; 10]).unwrap();
        AttackDataset::from_posteriors(&members, &nonmembers).unwrap()
    }

    #[test]
    fn separable_posteriors_are_learned() {
        let d = separable();
        assert_eq!(d.class_balance(), (10, 10));
        let atk = train_attack_model(&d, &AttackConfig::default(), 4).unwrap();
        let s = atk.score(&d.inputs).unwrap();
        let correct = s.iter().zip(&d.membership).filter(|&(&p, &m)| (p > 0.5) == m).count();
        assert_eq!(correct, 20);
        assert_eq!(atk, train_attack_model(&d, &AttackConfig::default(), 4).unwrap());
    }

    #[test]
    fn single_class_dataset_is_rejected() {
        let m = Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap();
        let d = AttackDataset::new(m, vec![true]).unwrap();
        assert!(train_attack_model(&d, &AttackConfig::default(), 0).is_err());
    }

    #[test]
    fn sorting_makes_class_order_irrelevant() {
        let a = Matrix::from_rows(&[vec![0.1, 0.9], vec![0.6, 0.4]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.9, 0.1], vec![0.4, 0.6]]).unwrap();
        assert_eq!(prepare_inputs(&a, true), prepare_inputs(&b, true));
    }

    #[test]
    fn constant_attacker_scores_one_half() {
        let d = separable();
        let mut atk = train_attack_model(&d, &AttackConfig::default(), 4).unwrap();
        for i in 0..atk.mlp.params.len() {
            atk.mlp.params.at_mut(i).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let dump: Vec<PosteriorRecord> = (0..6)
            .map(|v| PosteriorRecord {
                node_id: v,
                probs: vec![v as f64 / 6.0, 0.5, 1.0 - v as f64 / 6.0],
                split_tag: "test".into(),
            })
            .collect();
        let s = evaluate_mia(&dump, &[0, 1, 2], &[3, 4, 5], &atk).unwrap();
        assert_eq!(s.roc_auc, 0.5);
        assert!(evaluate_mia(&dump, &[0, 1, 2], &[2, 4, 5], &atk).is_err());
        assert!(evaluate_mia(&dump, &[0, 1, 2], &[], &atk).is_err());
    }

    #[test]
    fn shuffled_membership_carries_no_signal() {
        let mut rng = rng_for(9, &[]);
        let mut sample = |n: usize| {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let a: f64 = rng.random();
                    vec![a, 1.0 - a]
                })
                .collect();
            let bits: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
            AttackDataset::new(Matrix::from_rows(&rows).unwrap(), bits).unwrap()
        };
        let train = sample(400);
        let held = sample(2000);
        let atk = train_attack_model(&train, &AttackConfig::default(), 1).unwrap();
        let auc = roc_auc(&atk.score(&held.inputs).unwrap(), &held.membership).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }

    #[test]
    fn shadow_members_look_more_confident() {
        let g = generate_sbm(&SbmParams {
            block_sizes: vec![30; 3],
            p_in: 0.1,
            p_out: 0.05,
            feature_dim: 16,
            feature_signal: 0.5,
            seed: 3,
        })
        .unwrap();
        let splits = split_nodes(&g, 0.1, 10, 40, 2).unwrap();
        let setup = build_shadow_setup(&g, &splits.train, MiaSetting::Full, &AttackConfig::default(), 5).unwrap();
        let cfg = ModelConfig {
            hidden_dim: 16,
            epochs: 100,
            ..ModelConfig::default()
        };
        let (_, d) = train_shadow_and_collect(&setup, &cfg, 5).unwrap();
        let mean_max = |member: bool| {
            let rows: Vec<f64> = (0..d.len())
                .filter(|&i| d.membership[i] == member)
                .map(|i| d.inputs.row(i).iter().cloned().fold(0.0, f64::max))
                .collect();
            rows.iter().sum::<f64>() / rows.len() as f64
        };
        assert!(mean_max(true) >= mean_max(false));
        for i in 0..d.len() {
            assert!((d.inputs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn report_round_trip() {
        let r = AttackReport {
            setting: MiaSetting::Subgraph,
            roc_auc: 0.625,
            n_members: 3,
            n_nonmembers: 3,
            attacker_config_hash: AttackConfig::default().hash(),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("attack_report.json");
        r.save(&p).unwrap();
        assert_eq!(AttackReport::load(&p).unwrap(), r);
        assert!(std::fs::read_to_string(&p).unwrap().contains("\"mia_s\""));
    }
}
