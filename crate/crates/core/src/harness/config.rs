use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::{AttackConfig, MiaSetting};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::graph::{generate_sbm, load_graph, Graph, SbmParams};

/// Values of `beta` allowed in grid mode.
pub const BETA_GRID: [f64; 6] = [0.0001, 0.0003, 0.001, 0.003, 0.03, 0.1];
/// Values of `gamma` allowed in grid mode.
pub const GAMMA_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

/// Environment variable overriding [`DEFAULT_RUNS_DIR`].
pub const RUNS_DIR_ENV: &str = "RMGIB_RUNS_DIR";
pub const DEFAULT_RUNS_DIR: &str = "runs";

/// Output root for run directories.
pub fn runs_dir() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR), PathBuf::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// `nodes.tsv` / `edges.tsv` pair.
    Files { nodes: PathBuf, edges: PathBuf },
    Sbm(SbmParams),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Sbm(SbmParams::with_degrees(5, 200, 6.0, 2.0, 32, 0.6, 0))
    }
}

impl DatasetSpec {
    pub fn load(&self) -> Result<Graph> {
        match self {
            DatasetSpec::Files { nodes, edges } => load_graph(nodes, edges).map(|(g, _)| g),
            DatasetSpec::Sbm(p) => generate_sbm(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gcn,
    GcnPl,
    GcnIb,
    Rmgib,
    RmgibNoS,
    RmgibNoPl,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Gcn,
        ModelKind::GcnPl,
        ModelKind::GcnIb,
        ModelKind::Rmgib,
        ModelKind::RmgibNoS,
        ModelKind::RmgibNoPl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Gcn => "gcn",
            ModelKind::GcnPl => "gcn_pl",
            ModelKind::GcnIb => "gcn_ib",
            ModelKind::Rmgib => "rmgib",
            ModelKind::RmgibNoS => "rmgib_no_s",
            ModelKind::RmgibNoPl => "rmgib_no_pl",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown model {s}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    #[default]
    None,
    Random,
    Heterophilic,
    /// Heterophilic injection aimed at a random `target_fraction` of nodes.
    Targeted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Flips as a fraction of the clean edge count.
    pub rate: f64,
    /// Share of nodes attacked by `targeted`.
    pub target_fraction: f64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            kind: PerturbationKind::None,
            rate: 0.2,
            target_fraction: 0.15,
        }
    }
}

impl PerturbationSpec {
    pub fn label(&self) -> String {
        match self.kind {
            PerturbationKind::None => "none".into(),
            PerturbationKind::Random => format!("random@{}", self.rate),
            PerturbationKind::Heterophilic => format!("heterophilic@{}", self.rate),
            PerturbationKind::Targeted => format!("targeted@{}/{}", self.rate, self.target_fraction),
        }
    }
}

/// One experiment: dataset, split sizes, model, perturbation, attacks and
/// seeds. Model settings sit at the top level of the JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: Option<String>,
    pub dataset: DatasetSpec,
    pub label_rate: f64,
    pub val_count: usize,
    pub test_count: usize,
    pub model: ModelKind,
    #[serde(flatten)]
    pub params: ModelConfig,
    pub perturbation: PerturbationSpec,
    pub mia: Vec<MiaSetting>,
    pub attack: AttackConfig,
    pub seeds: Vec<u64>,
    /// Restricts `beta` and `gamma` to [`BETA_GRID`] and [`GAMMA_GRID`].
    pub grid_mode: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: None,
            dataset: DatasetSpec::default(),
            label_rate: 0.02,
            val_count: 200,
            test_count: 400,
            model: ModelKind::Rmgib,
            params: ModelConfig::default(),
            perturbation: PerturbationSpec::default(),
            mia: Vec::new(),
            attack: AttackConfig::default(),
            seeds: vec![1],
            grid_mode: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.label_rate > 0.0 && self.label_rate <= 1.0) {
            return Err(Error::validation(format!("label rate {} outside (0, 1]", self.label_rate)));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("at least one seed is required"));
        }
        if !(self.perturbation.rate >= 0.0 && self.perturbation.rate.is_finite()) {
            return Err(Error::validation(format!(
                "perturbation rate {} must be >= 0",
                self.perturbation.rate
            )));
        }
        if self.grid_mode {
            if !BETA_GRID.contains(&self.params.beta) {
                return Err(Error::validation(format!("beta {} is not a grid value", self.params.beta)));
            }
            if !GAMMA_GRID.contains(&self.params.gamma) {
                return Err(Error::validation(format!("gamma {} is not a grid value", self.params.gamma)));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Directory name for this configuration under [`runs_dir`].
    pub fn run_name(&self) -> String {
        match &self.name {
            Some(n) => n.clone(),
            None => format!("{}-{}", self.model.name(), &self.hash()[..12]),
        }
    }

    /// Sets a key of the JSON form, with `.` separating nested keys.
    pub fn with_value(&self, key: &str, value: serde_json::Value) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| Error::validation(format!("unknown config key {key}")))?;
        }
        *slot = value;
        let cfg: ExperimentConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the value under a dotted key of the JSON form.
    pub fn value(&self, key: &str) -> Option<serde_json::Value> {
        let doc = serde_json::to_value(self).ok()?;
        let mut slot = &doc;
        for part in key.split('.') {
            slot = slot.as_object()?.get(part)?;
        }
        Some(slot.clone())
    }
}
