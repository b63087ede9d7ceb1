//! Model and optimization settings shared by the training entry points.

use serde::{Deserialize, Serialize};

use crate::bottleneck::MaskMode;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;
use crate::predictor::Aggregation;

/// Architecture and objective settings for every model in the crate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Predictor depth; also the hop scope of the neighbor bottleneck.
    pub layers: usize,
    pub code_dim: usize,
    pub aggregation: Aggregation,
    pub beta: f64,
    pub gamma: f64,
    pub prior_rate: f64,
    pub temperature: f64,
    pub mask_mode: MaskMode,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Share of unlabeled nodes that receive a pseudo label in stage 2.
    pub pseudo_fraction: f64,
    /// Optional confidence filter on pseudo labels; off by default.
    pub pseudo_min_confidence: Option<f64>,
    pub mi: MiConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 256,
            layers: 2,
            code_dim: 64,
            aggregation: Aggregation::Gcn,
            beta: 0.001,
            gamma: 0.01,
            prior_rate: 0.5,
            temperature: 1.0,
            mask_mode: MaskMode::Hard,
            epochs: 200,
            adam: AdamConfig::default(),
            pseudo_fraction: 1.0,
            pseudo_min_confidence: None,
            mi: MiConfig::default(),
        }
    }
}

/// Settings of the pretrained pair-score estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiConfig {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub negatives_per_edge: usize,
    pub threshold: f64,
    pub adam: AdamConfig,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            hidden_dim: 256,
            embed_dim: 64,
            epochs: 200,
            negatives_per_edge: 1,
            threshold: 0.5,
            adam: AdamConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::validation(m));
        if self.hidden_dim == 0 || self.code_dim == 0 || self.mi.hidden_dim == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.layers == 0 {
            return bad("at least one predictor layer is required".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return bad(format!("beta {} and gamma {} must be >= 0", self.beta, self.gamma));
        }
        if !(self.prior_rate > 0.0 && self.prior_rate < 1.0) {
            return bad(format!("prior rate {} outside (0, 1)", self.prior_rate));
        }
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.pseudo_fraction) {
            return bad(format!("pseudo fraction {} outside [0, 1]", self.pseudo_fraction));
        }
        if !(0.0..=1.0).contains(&self.mi.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.mi.threshold));
        }
        Ok(())
    }
}
