use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// A named, ordered collection of parameter tensors owned by one module.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    tag: String,
    entries: Vec<(String, Matrix)>,
}

/// Tape handles for every tensor of a [`ParamSet`], in insertion order.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, i: usize) -> Var {
        self.vars[i]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Gradients aligned with the entries of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Matrix)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replaces one tensor's gradient; used to build mutation tests.
    pub fn set(&mut self, name: &str, value: Matrix) {
        if let Some(slot) = self.entries.iter_mut().find(|(n, _)| n == name) {
            slot.1 = value;
        }
    }
}

impl ParamSet {
    pub fn new(tag: impl Into<String>) -> Self {
        ParamSet {
            tag: tag.into(),
            entries: Vec::new(),
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn at(&self, i: usize) -> &Matrix {
        &self.entries[i].1
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.entries[i].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, m)| m.is_finite())
    }

    /// Records every tensor as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self
                .entries
                .iter()
                .map(|(_, m)| tape.leaf(m.clone()))
                .collect(),
        }
    }

    /// Reads the gradients of a bound copy after [`Tape::backward`].
    pub fn gradients(&self, tape: &Tape, bound: &Bound) -> Gradients {
        Gradients {
            entries: self
                .entries
                .iter()
                .zip(&bound.vars)
                .map(|((n, _), &v)| (n.clone(), tape.grad(v)))
                .collect(),
        }
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            entries: self
                .entries
                .iter()
                .map(|(n, m)| (n.clone(), Matrix::zeros(m.rows(), m.cols())))
                .collect(),
        }
    }

    pub(crate) fn check_aligned(&self, grads: &Gradients) -> Result<()> {
        if grads.entries.len() != self.entries.len() {
            return Err(Error::shape(
                "gradients",
                format!(
                    "{} gradients for {} tensors of {}",
                    grads.entries.len(),
                    self.entries.len(),
                    self.tag
                ),
            ));
        }
        for ((n, p), (gn, g)) in self.entries.iter().zip(&grads.entries) {
            if n != gn || p.shape() != g.shape() {
                return Err(Error::shape(
                    "gradients",
                    format!("{}.{n} {:?} vs {gn} {:?}", self.tag, p.shape(), g.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Serialized form of one tensor: name, shape and row-major values.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSetRecord {
    pub tag: String,
    pub tensors: Vec<NamedTensor>,
}

impl From<&ParamSet> for ParamSetRecord {
    fn from(p: &ParamSet) -> Self {
        ParamSetRecord {
            tag: p.tag.clone(),
            tensors: p
                .entries
                .iter()
                .map(|(n, m)| NamedTensor {
                    name: n.clone(),
                    shape: [m.rows(), m.cols()],
                    values: m.data().to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<ParamSetRecord> for ParamSet {
    type Error = Error;

    fn try_from(r: ParamSetRecord) -> Result<Self> {
        let mut p = ParamSet::new(r.tag);
        for t in r.tensors {
            let m = Matrix::from_vec(t.shape[0], t.shape[1], t.values)?;
            if !m.is_finite() {
                return Err(Error::NonFinite(format!("{}.{}", p.tag, t.name)));
            }
            p.insert(t.name, m);
        }
        Ok(p)
    }
}
