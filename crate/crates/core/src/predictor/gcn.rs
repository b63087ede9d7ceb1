use serde::{Deserialize, Serialize};

use super::posterior::Posterior;
use super::local::LayerPlan;
use crate::error::{Error, Result};
use crate::nn::{Bound, Index, Mlp, ParamSet, Tape, Var};
use crate::rng::Rng;
use crate::tensor::Matrix;

/// Neighborhood aggregation rule of a [`GcnStack`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `D^-1/2 (A + I) D^-1/2` with a rectifier between layers.
    #[default]
    Gcn,
    /// GCN propagation without the rectifier.
    Sgc,
    /// Row-normalized `D^-1 (A + I)` with a rectifier between layers.
    Mean,
}

/// Directed message-passing structure over `rows` node rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub rows: usize,
    pub src: Index,
    pub dst: Index,
}

impl Propagation {
    pub fn new(rows: usize, src: Vec<usize>, dst: Vec<usize>) -> Result<Self> {
        if src.len() != dst.len() || src.iter().chain(&dst).any(|&i| i >= rows) {
            return Err(Error::shape(
                "propagation",
                format!("{} sources, {} targets over {rows} rows", src.len(), dst.len()),
            ));
        }
        Ok(Propagation {
            rows,
            src: src.into(),
            dst: dst.into(),
        })
    }

    pub fn full_graph(g: &crate::graph::Graph) -> Self {
        let (src, dst) = g.directed_edges();
        Propagation {
            rows: g.node_count(),
            src: src.into(),
            dst: dst.into(),
        }
    }

    /// Off-diagonal nonzeros of a symmetric 0/1 adjacency matrix.
    pub fn from_adjacency(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::shape("propagation", format!("adjacency {:?}", a.shape())));
        }
        let (mut src, mut dst) = (Vec::new(), Vec::new());
        for i in 0..n {
            for j in 0..n {
                if a[(i, j)] != a[(j, i)] {
                    return Err(Error::validation(format!("adjacency asymmetric at ({i}, {j})")));
                }
                if i != j && a[(i, j)] != 0.0 {
                    src.push(j);
                    dst.push(i);
                }
            }
        }
        Propagation::new(n, src, dst)
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }
}

/// Per-edge and self-loop propagation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    pub edge: Var,
    pub self_loop: Var,
}

/// Coefficients for unit edge weights, recorded as constants.
pub fn unit_coefficients(tape: &mut Tape, prop: &Propagation, agg: Aggregation) -> Coefficients {
    let mut deg = vec![1.0f64; prop.rows];
    for &d in prop.dst.iter() {
        deg[d] += 1.0;
    }
    let edge = prop
        .src
        .iter()
        .zip(prop.dst.iter())
        .map(|(&s, &d)| match agg {
            Aggregation::Gcn | Aggregation::Sgc => 1.0 / (deg[s] * deg[d]).sqrt(),
            Aggregation::Mean => 1.0 / deg[d],
        })
        .collect();
    let self_loop = deg.iter().map(|d| 1.0 / d).collect();
    Coefficients {
        edge: tape.constant(Matrix::column(edge)),
        self_loop: tape.constant(Matrix::column(self_loop)),
    }
}

/// Coefficients for differentiable edge weights `w` (an `E x 1` column):
/// degrees are `1 + sum of incoming weights`.
pub fn weighted_coefficients(
    tape: &mut Tape,
    prop: &Propagation,
    w: Var,
    agg: Aggregation,
) -> Result<Coefficients> {
    let ones = tape.constant(Matrix::filled(prop.rows, 1, 1.0));
    let incoming = tape.edge_aggregate(ones, w, prop.src.clone(), prop.dst.clone(), prop.rows)?;
    let deg = tape.add_scalar(incoming, 1.0);
    let self_loop = tape.powf(deg, -1.0);
    let edge = match agg {
        Aggregation::Gcn | Aggregation::Sgc => {
            let dinv = tape.powf(deg, -0.5);
            let ds = tape.gather_rows(dinv, prop.src.clone())?;
            let dd = tape.gather_rows(dinv, prop.dst.clone())?;
            let both = tape.mul(ds, dd)?;
            tape.mul(w, both)?
        }
        Aggregation::Mean => {
            let dd = tape.gather_rows(self_loop, prop.dst.clone())?;
            tape.mul(w, dd)?
        }
    };
    Ok(Coefficients { edge, self_loop })
}

/// Stacked graph convolutions `H' = act(Â H W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnStack {
    widths: Vec<usize>,
    pub aggregation: Aggregation,
    pub params: ParamSet,
}

impl GcnStack {
    pub fn new(tag: &str, widths: &[usize], aggregation: Aggregation, rng: &mut Rng) -> Result<Self> {
        let mlp = Mlp::new(tag, widths, rng)?;
        Ok(GcnStack {
            widths: widths.to_vec(),
            aggregation,
            params: mlp.params,
        })
    }

    pub fn from_params(params: ParamSet, aggregation: Aggregation) -> Result<Self> {
        let mlp = Mlp::from_params(params)?;
        Ok(GcnStack {
            widths: mlp.widths().to_vec(),
            aggregation,
            params: mlp.params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Logits for the rows `out_rows` of the propagation structure, or for
    /// every row when `out_rows` is `None`.
    ///
    /// With `input_rows` set, `x` holds one row per node and row `i` of the
    /// propagation structure reads node `input_rows[i]`; the first linear map
    /// is applied before that gather.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        input_rows: Option<&Index>,
        prop: &Propagation,
        coeffs: Coefficients,
        out_rows: Option<&Index>,
    ) -> Result<Var> {
        let (rows, cols) = tape.shape(x);
        if cols != self.input_dim() {
            return Err(Error::shape(
                "gcn_forward",
                format!("{cols} input columns for a stack of input {}", self.input_dim()),
            ));
        }
        let expected = input_rows.map_or(rows, |r| r.len());
        if expected != prop.rows {
            return Err(Error::shape(
                "gcn_forward",
                format!("{expected} input rows for {} propagation rows", prop.rows),
            ));
        }
        let mut h = x;
        for l in 0..self.layers() {
            let mut t = tape.matmul(h, bound.var(2 * l))?;
            if l == 0 {
                if let Some(idx) = input_rows {
                    t = tape.gather_rows(t, idx.clone())?;
                }
            }
            let nb = tape.edge_aggregate(t, coeffs.edge, prop.src.clone(), prop.dst.clone(), prop.rows)?;
            let own = tape.mul_col(t, coeffs.self_loop)?;
            let sum = tape.add(nb, own)?;
            h = tape.add_row(sum, bound.var(2 * l + 1))?;
            if l + 1 < self.layers() && self.aggregation != Aggregation::Sgc {
                h = tape.relu(h);
            }
        }
        match out_rows {
            Some(idx) => tape.gather_rows(h, idx.clone()),
            None => Ok(h),
        }
    }

    /// Logits of the centers of a [`LocalBatch`](super::LocalBatch), one
    /// row each, computing only the rows in its layer plan. `x` holds one row
    /// per node of the graph.
    pub fn forward_planned(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        plan: &[LayerPlan],
        coeffs: Coefficients,
    ) -> Result<Var> {
        if plan.len() != self.layers() {
            return Err(Error::shape(
                "gcn_forward",
                format!("{} planned layers for a stack of {}", plan.len(), self.layers()),
            ));
        }
        if tape.shape(x).1 != self.input_dim() {
            return Err(Error::shape(
                "gcn_forward",
                format!("{} input columns for a stack of input {}", tape.shape(x).1, self.input_dim()),
            ));
        }
        let mut h = x;
        for (l, p) in plan.iter().enumerate() {
            let t = tape.matmul(h, bound.var(2 * l))?;
            let ce = tape.gather_rows(coeffs.edge, p.edges.clone())?;
            let cs = tape.gather_rows(coeffs.self_loop, p.rows.clone())?;
            let nb = tape.edge_aggregate(t, ce, p.src.clone(), p.dst.clone(), p.rows.len())?;
            let own = tape.gather_rows(t, p.own.clone())?;
            let own = tape.mul_col(own, cs)?;
            let sum = tape.add(nb, own)?;
            h = tape.add_row(sum, bound.var(2 * l + 1))?;
            if l + 1 < self.layers() && self.aggregation != Aggregation::Sgc {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Logits for every node of `g` from the input matrix `x`.
    pub fn full_graph_logits(&self, g: &crate::graph::Graph, x: &Matrix) -> Result<Matrix> {
        let prop = Propagation::full_graph(g);
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let coeffs = unit_coefficients(&mut tape, &prop, self.aggregation);
        let out = self.forward(&mut tape, &bound, xv, None, &prop, coeffs, None)?;
        Ok(tape.value(out).clone())
    }
}

/// Posterior of the center (row 0) of a single local graph with adjacency
/// `a_s` and one code row per local node.
pub fn gcn_forward(codes: &Matrix, a_s: &Matrix, stack: &GcnStack) -> Result<Posterior> {
    if codes.rows() != a_s.rows() || codes.rows() == 0 {
        return Err(Error::shape(
            "gcn_forward",
            format!("{} code rows for adjacency {:?}", codes.rows(), a_s.shape()),
        ));
    }
    let prop = Propagation::from_adjacency(a_s)?;
    let mut tape = Tape::new();
    let bound = stack.params.bind(&mut tape);
    let x = tape.constant(codes.clone());
    let coeffs = unit_coefficients(&mut tape, &prop, stack.aggregation);
    let center: Index = vec![0].into();
    let out = stack.forward(&mut tape, &bound, x, None, &prop, coeffs, Some(&center))?;
    Ok(Posterior::from_logits(tape.value(out).row(0).to_vec()))
}
