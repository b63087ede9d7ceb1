use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Matrix,
    v: Matrix,
    t: u64,
}

/// Adaptive-moment optimizer. State is keyed by `tag/name`, so one instance
/// can drive several parameter sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            state: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        params.check_aligned(grads)?;
        for (name, g) in grads.iter() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of {}.{name}",
                    params.tag()
                )));
            }
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        for (i, (name, g)) in grads.iter().enumerate() {
            let key = format!("{}/{name}", params.tag());
            let p = params.at_mut(i);
            let st = self.state.entry(key).or_insert_with(|| Moments {
                m: Matrix::zeros(g.rows(), g.cols()),
                v: Matrix::zeros(g.rows(), g.cols()),
                t: 0,
            });
            st.t += 1;
            let bc1 = 1.0 - beta1.powi(st.t as i32);
            let bc2 = 1.0 - beta2.powi(st.t as i32);
            let pd = p.data_mut();
            let (md, vd) = (st.m.data_mut(), st.v.data_mut());
            for k in 0..pd.len() {
                let gk = g.data()[k] + weight_decay * pd[k];
                md[k] = beta1 * md[k] + (1.0 - beta1) * gk;
                vd[k] = beta2 * vd[k] + (1.0 - beta2) * gk * gk;
                let mhat = md[k] / bc1;
                let vhat = vd[k] / bc2;
                pd[k] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::Tape;

    fn quadratic_grad(p: &ParamSet) -> Gradients {
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let sq = tape.mul(b.var(0), b.var(0)).unwrap();
        let loss = tape.sum_all(sq);
        tape.backward(loss).unwrap();
        p.gradients(&tape, &b)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::new("q");
        p.insert("w", Matrix::column(vec![1.5, -2.0]));
        let before = p.clone();
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..10 {
            let g = p.zero_gradients();
            opt.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = ParamSet::new("q");
        p.insert("w", Matrix::scalar(1.0));
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..2000 {
            let g = quadratic_grad(&p);
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.at(0).item().abs() < 1e-3, "w = {}", p.at(0).item());
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut p = ParamSet::new("q");
            p.insert("w", Matrix::column(vec![0.3, -0.7, 2.0]));
            let mut opt = Adam::new(AdamConfig::default());
            let mut path = Vec::new();
            for _ in 0..50 {
                let g = quadratic_grad(&p);
                opt.step(&mut p, &g).unwrap();
                path.extend_from_slice(p.at(0).data());
            }
            path
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut p = ParamSet::new("enc");
        p.insert("w0", Matrix::scalar(1.0));
        let mut g = p.zero_gradients();
        g.set("w0", Matrix::scalar(f64::NAN));
        let err = Adam::new(AdamConfig::default()).step(&mut p, &g).unwrap_err();
        assert!(err.to_string().contains("enc.w0"), "{err}");
    }
}
