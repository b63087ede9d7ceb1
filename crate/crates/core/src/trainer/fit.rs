use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Gradients, ParamSet};

/// The terms of the training objective, in nats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_ix: f64,
    pub l_in: f64,
    pub l_s: f64,
    pub beta: f64,
    pub gamma: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(l_c: f64, l_ix: f64, l_in: f64, l_s: f64, beta: f64, gamma: f64) -> Self {
        let mut b = LossBreakdown {
            l_c,
            l_ix,
            l_in,
            l_s,
            beta,
            gamma,
            total: 0.0,
        };
        b.total = b.recombined();
        b
    }

    /// Classification loss only.
    pub fn supervised(l_c: f64) -> Self {
        Self::new(l_c, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn recombined(&self) -> f64 {
        self.l_c + self.beta * (self.l_ix + self.l_in) + self.gamma * self.l_s
    }

    /// Fails with the name of the first non-finite term.
    pub fn check_finite(&self, epoch: usize) -> Result<()> {
        for (name, v) in [
            ("l_c", self.l_c),
            ("l_ix", self.l_ix),
            ("l_in", self.l_in),
            ("l_s", self.l_s),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("{name} = {v}"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub val_acc: Option<f64>,
}

/// Which parameters a training run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// The epoch with the highest validation accuracy; earliest on ties.
    BestValidation,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub params: Vec<ParamSet>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val: Option<f64>,
    pub curve: Vec<EpochRecord>,
}

/// Full-batch Adam over several parameter sets.
///
/// `step` returns the loss and gradients at the current parameters; the
/// update is applied, then `eval` scores the updated parameters when
/// validation selection is on.
pub fn fit<S, E>(
    mut params: Vec<ParamSet>,
    epochs: usize,
    adam: AdamConfig,
    selection: Selection,
    mut step: S,
    mut eval: E,
) -> Result<FitOutcome>
where
    S: FnMut(usize, &[ParamSet]) -> Result<(LossBreakdown, Vec<Gradients>)>,
    E: FnMut(&[ParamSet]) -> Result<f64>,
{
    if epochs == 0 {
        return Err(Error::validation("epochs must be positive"));
    }
    let mut opt = Adam::new(adam);
    let mut curve = Vec::with_capacity(epochs);
    let mut best: Option<(usize, f64, Vec<ParamSet>)> = None;
    for epoch in 0..epochs {
        let (loss, grads) = step(epoch, &params)?;
        loss.check_finite(epoch)?;
        if grads.len() != params.len() {
            return Err(Error::validation(format!(
                "{} gradient sets for {} parameter sets",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter_mut().zip(&grads) {
            opt.step(p, g).map_err(|e| Error::Divergence {
                epoch,
                detail: e.to_string(),
            })?;
        }
        let val_acc = match selection {
            Selection::BestValidation => {
                let acc = eval(&params)?;
                if best.as_ref().is_none_or(|b| acc > b.1) {
                    best = Some((epoch, acc, params.clone()));
                }
                Some(acc)
            }
            Selection::LastEpoch => None,
        };
        curve.push(EpochRecord {
            epoch,
            loss,
            val_acc,
        });
    }
    Ok(match best {
        Some((best_epoch, acc, kept)) => FitOutcome {
            params: kept,
            best_epoch,
            best_val: Some(acc),
            curve,
        },
        None => FitOutcome {
            params,
            best_epoch: epochs - 1,
            best_val: None,
            curve,
        },
    })
}

/// `epoch,l_c,l_ix,l_in,l_s,total,val_acc` rows.
pub fn loss_curve_csv(curve: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,l_c,l_ix,l_in,l_s,total,val_acc\n");
    for r in curve {
        let l = &r.loss;
        let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch, l.l_c, l.l_ix, l.l_in, l.l_s, l.total, val
        );
    }
    out
}

pub fn write_loss_curve(path: &Path, curve: &[EpochRecord]) -> Result<()> {
    std::fs::write(path, loss_curve_csv(curve)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    fn quadratic() -> Vec<ParamSet> {
        let mut p = ParamSet::new("q");
        p.insert("w", Matrix::scalar(1.0));
        vec![p]
    }

    fn grad_of(p: &[ParamSet]) -> (LossBreakdown, Vec<Gradients>) {
        let w = p[0].at(0).item();
        let mut g = p[0].zero_gradients();
        g.set("w", Matrix::scalar(2.0 * w));
        (LossBreakdown::supervised(w * w), vec![g])
    }

    #[test]
    fn recombination_is_exact() {
        let b = LossBreakdown::new(1.25, 0.5, 2.0, 3.0, 0.1, 0.01);
        assert_eq!(b.total, 1.25 + 0.1 * (0.5 + 2.0) + 0.01 * 3.0);
        assert_eq!(LossBreakdown::new(0.7, 9.0, 9.0, 9.0, 0.0, 0.0).total, 0.7);
    }

    #[test]
    fn non_finite_part_is_named() {
        let b = LossBreakdown::new(1.0, f64::NAN, 0.0, 0.0, 0.1, 0.0);
        let msg = b.check_finite(3).unwrap_err().to_string();
        assert!(msg.contains("epoch 3") && msg.contains("l_ix"), "{msg}");
    }

    #[test]
    fn keeps_the_earliest_best_validation_epoch() {
        let scores = [0.2, 0.5, 0.5, 0.1];
        let mut k = 0;
        let out = fit(
            quadratic(),
            4,
            AdamConfig::default(),
            Selection::BestValidation,
            |_, p| Ok(grad_of(p)),
            |_| {
                k += 1;
                Ok(scores[k - 1])
            },
        )
        .unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.best_val, Some(0.5));
        assert_eq!(out.curve.len(), 4);
        assert!(out.params[0].at(0).item() < 1.0);
    }

    #[test]
    fn last_epoch_selection_never_evaluates() {
        let out = fit(
            quadratic(),
            3,
            AdamConfig::default(),
            Selection::LastEpoch,
            |_, p| Ok(grad_of(p)),
            |_| panic!("no validation set"),
        )
        .unwrap();
        assert_eq!(out.best_epoch, 2);
        assert!(loss_curve_csv(&out.curve).starts_with("epoch,l_c,l_ix,l_in,l_s,total,val_acc\n0,1,"));
    }

    #[test]
    fn divergence_reports_the_epoch() {
        let err = fit(
            quadratic(),
            5,
            AdamConfig::default(),
            Selection::LastEpoch,
            |e, p| {
                let (mut l, g) = grad_of(p);
                if e == 2 {
                    l = LossBreakdown::supervised(f64::INFINITY);
                }
                Ok((l, g))
            },
            |_| Ok(0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Divergence { epoch: 2, .. }));
    }
}
