use rand::Rng as _;

use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Affine layers with a rectifier between consecutive layers and a linear
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    pub params: ParamSet,
}

/// Uniform initialization scaled by fan-in plus fan-out.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

impl Mlp {
    /// `widths` lists input, hidden and output sizes; at least two entries.
    pub fn new(tag: &str, widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::validation(format!(
                "mlp {tag} needs at least two positive widths, got {widths:?}"
            )));
        }
        let mut params = ParamSet::new(tag);
        for (l, w) in widths.windows(2).enumerate() {
            params.insert(format!("w{l}"), glorot_uniform(w[0], w[1], rng));
            params.insert(format!("b{l}"), Matrix::zeros(1, w[1]));
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            params,
        })
    }

    /// Builds an MLP around existing parameters, e.g. from a checkpoint.
    pub fn from_params(params: ParamSet) -> Result<Self> {
        if params.is_empty() || !params.len().is_multiple_of(2) {
            return Err(Error::validation("mlp parameters come in weight/bias pairs"));
        }
        let mut widths = vec![params.at(0).rows()];
        for l in 0..params.len() / 2 {
            let (w, b) = (params.at(2 * l), params.at(2 * l + 1));
            if w.rows() != *widths.last().unwrap() || b.shape() != (1, w.cols()) {
                return Err(Error::shape("mlp", format!("layer {l} {:?}", w.shape())));
            }
            widths.push(w.cols());
        }
        Ok(Mlp { widths, params })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, input: Var) -> Result<Var> {
        let cols = tape.shape(input).1;
        if cols != self.input_dim() {
            return Err(Error::shape(
                "mlp_forward",
                format!("{} input columns for an mlp of input {}", cols, self.input_dim()),
            ));
        }
        let mut h = input;
        for l in 0..self.depth() {
            h = tape.matmul(h, bound.var(2 * l))?;
            h = tape.add_row(h, bound.var(2 * l + 1))?;
            if l + 1 < self.depth() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Forward pass without recording gradients.
    pub fn forward_values(&self, input: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(input.clone());
        let out = self.forward(&mut tape, &bound, x)?;
        Ok(tape.value(out).clone())
    }
}
