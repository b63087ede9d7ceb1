//! Gaussian attribute bottleneck.
//!
//! An MLP maps node features to a mean and a pre-activation for the standard
//! deviation, `sigma = softplus(raw) + 1e-6`. Codes are sampled with the
//! reparameterization `z = mu + sigma * eps`, `eps ~ N(0, I)`, and regularized
//! towards a standard-normal prior with the closed-form KL divergence.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nn::{Bound, Mlp, Tape, Var};
use crate::rng::{rng_for, stream, Rng};
use crate::tensor::{softplus, Matrix};

pub const SIGMA_FLOOR: f64 = 1e-6;

/// One node's attribute code.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeCode {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sample: Vec<f64>,
    pub noise: Vec<f64>,
}

/// `f_x`: features to `(mu, raw sigma)`, each `code_dim` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeEncoder {
    pub mlp: Mlp,
    code_dim: usize,
}

/// Tape handles for an encoded batch; rows follow the input rows.
#[derive(Debug, Clone, Copy)]
pub struct EncodedBatch {
    pub mu: Var,
    pub sigma: Var,
    pub code: Var,
}

impl AttributeEncoder {
    pub fn new(input_dim: usize, hidden: usize, code_dim: usize, rng: &mut Rng) -> Result<Self> {
        let mlp = Mlp::new("attr", &[input_dim, hidden, 2 * code_dim], rng)?;
        Ok(AttributeEncoder { mlp, code_dim })
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        if !mlp.output_dim().is_multiple_of(2) {
            return Err(Error::validation("attribute encoder output must be even"));
        }
        let code_dim = mlp.output_dim() / 2;
        Ok(AttributeEncoder { mlp, code_dim })
    }

    pub fn code_dim(&self) -> usize {
        self.code_dim
    }

    /// Encodes every row of `x`. With `noise = None` the code is the mean.
    pub fn encode(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        noise: Option<&Matrix>,
    ) -> Result<EncodedBatch> {
        let out = self.mlp.forward(tape, bound, x)?;
        let c = self.code_dim;
        let mu = tape.slice_cols(out, 0, c)?;
        let raw = tape.slice_cols(out, c, 2 * c)?;
        let sp = tape.softplus(raw);
        let sigma = tape.add_scalar(sp, SIGMA_FLOOR);
        let code = match noise {
            Some(eps) => {
                if eps.shape() != tape.shape(mu) {
                    return Err(Error::shape(
                        "attribute_encode",
                        format!("noise {:?} for codes {:?}", eps.shape(), tape.shape(mu)),
                    ));
                }
                let e = tape.constant(eps.clone());
                let spread = tape.mul(sigma, e)?;
                tape.add(mu, spread)?
            }
            None => mu,
        };
        if !tape.value(out).is_finite() {
            return Err(Error::NonFinite("attribute encoder output".into()));
        }
        Ok(EncodedBatch { mu, sigma, code })
    }
}

/// Standard-normal draws for `rows` codes of width `cols`.
pub fn gaussian_noise(rows: usize, cols: usize, seed: u64, tags: &[u64]) -> Matrix {
    let mut all = vec![stream::ATTR_NOISE];
    all.extend_from_slice(tags);
    let mut rng = rng_for(seed, &all);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Encodes a single feature vector with noise drawn from `noise_seed`.
pub fn attribute_encode(x: &[f64], enc: &AttributeEncoder, noise_seed: u64) -> Result<AttributeCode> {
    let noise = gaussian_noise(1, enc.code_dim(), noise_seed, &[]);
    encode_with_noise(x, enc, &noise)
}

pub(crate) fn encode_with_noise(
    x: &[f64],
    enc: &AttributeEncoder,
    noise: &Matrix,
) -> Result<AttributeCode> {
    let mut tape = Tape::new();
    let bound = enc.mlp.params.bind(&mut tape);
    let xv = tape.constant(Matrix::row_vector(x.to_vec()));
    let b = enc.encode(&mut tape, &bound, xv, Some(noise))?;
    Ok(AttributeCode {
        mu: tape.value(b.mu).data().to_vec(),
        sigma: tape.value(b.sigma).data().to_vec(),
        sample: tape.value(b.code).data().to_vec(),
        noise: noise.data().to_vec(),
    })
}

/// `sigma` from the raw encoder output.
pub fn sigma_from_raw(raw: f64) -> f64 {
    softplus(raw) + SIGMA_FLOOR
}

/// Per-row `KL(N(mu, sigma^2) || N(0, I))` as an `n x 1` column.
pub fn gaussian_kl_rows(tape: &mut Tape, mu: Var, sigma: Var) -> Result<Var> {
    let width = tape.shape(mu).1 as f64;
    let mu2 = tape.mul(mu, mu)?;
    let s2 = tape.mul(sigma, sigma)?;
    let ln_s = tape.ln(sigma);
    let two_ln_s = tape.scale(ln_s, 2.0);
    let a = tape.add(mu2, s2)?;
    let t = tape.sub(a, two_ln_s)?;
    let rows = tape.sum_rows(t);
    let half = tape.scale(rows, 0.5);
    Ok(tape.add_scalar(half, -0.5 * width))
}

/// `sum_d 0.5 * (mu_d^2 + sigma_d^2 - 1 - 2 ln sigma_d)` in nats.
pub fn gaussian_kl(code: &AttributeCode) -> f64 {
    code.mu
        .iter()
        .zip(&code.sigma)
        .map(|(&m, &s)| 0.5 * (m * m + s * s - 1.0 - 2.0 * s.ln()))
        .sum()
}
