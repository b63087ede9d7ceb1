//! Exact mutual information over small discrete joints.
//!
//! When a representation `z` is computed from the input `x` alone, so that
//! `p(x, y, z) = p(x, y) k(z | x)`, the chain rule gives
//! `I(z; x) = I(z; y) + I(z; x | y) >= I(z; y)`: compressing `z` with respect
//! to `x` also bounds what it retains about the labels.

use crate::error::{Error, Result};

/// Tolerance of the conditional-independence check in
/// [`verify_ib_inequality`].
pub const INDEPENDENCE_TOL: f64 = 1e-12;
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var3 {
    X,
    Y,
    Z,
}

/// Probability table over `(x, y, z)`, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    dims: [usize; 3],
    p: Vec<f64>,
}

impl JointDistribution {
    pub fn new(nx: usize, ny: usize, nz: usize, p: Vec<f64>) -> Result<Self> {
        if nx * ny * nz == 0 || p.len() != nx * ny * nz {
            return Err(Error::validation(format!(
                "{} entries for a {nx}x{ny}x{nz} table",
                p.len()
            )));
        }
        if p.iter().any(|&q| q.is_nan() || q < 0.0) {
            return Err(Error::validation("negative or NaN probability"));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!("probabilities sum to {total}")));
        }
        Ok(JointDistribution { dims: [nx, ny, nz], p })
    }

    /// `p(x, y) k(z | x)`, with `p_xy` an `nx x ny` table and `kernel` an
    /// `nx x nz` table of conditional distributions.
    pub fn from_kernel(nx: usize, ny: usize, nz: usize, p_xy: &[f64], kernel: &[f64]) -> Result<Self> {
        if p_xy.len() != nx * ny || kernel.len() != nx * nz {
            return Err(Error::validation("kernel or marginal table has the wrong size"));
        }
        for x in 0..nx {
            let row: f64 = kernel[x * nz..(x + 1) * nz].iter().sum();
            if (row - 1.0).abs() > 1e-12 {
                return Err(Error::validation(format!("kernel row {x} sums to {row}")));
            }
        }
        let mut p = Vec::with_capacity(nx * ny * nz);
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    p.push(p_xy[x * ny + y] * kernel[x * nz + z]);
                }
            }
        }
        Self::new(nx, ny, nz, p)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        let [_, ny, nz] = self.dims;
        self.p[(x * ny + y) * nz + z]
    }

    fn axis(v: Var3) -> usize {
        match v {
            Var3::X => 0,
            Var3::Y => 1,
            Var3::Z => 2,
        }
    }

    /// Marginal over the listed axes, as a map from their values.
    fn marginal(&self, axes: &[usize]) -> std::collections::HashMap<Vec<usize>, f64> {
        let mut m = std::collections::HashMap::new();
        let [nx, ny, nz] = self.dims;
        for x in 0..nx {
            for y in 0..ny {
                for z in 0..nz {
                    let idx = [x, y, z];
                    let key: Vec<usize> = axes.iter().map(|&a| idx[a]).collect();
                    *m.entry(key).or_insert(0.0) += self.get(x, y, z);
                }
            }
        }
        m
    }
}

/// `I(a; b)` or `I(a; b | c)` in nats by exact summation.
pub fn discrete_mi(j: &JointDistribution, vars: (Var3, Var3), conditioned_on: Option<Var3>) -> Result<f64> {
    let (a, b) = (JointDistribution::axis(vars.0), JointDistribution::axis(vars.1));
    let c = conditioned_on.map(JointDistribution::axis);
    if a == b || c == Some(a) || c == Some(b) {
        return Err(Error::validation("mutual information needs distinct variables"));
    }
    let cs: Vec<usize> = c.into_iter().collect();
    let with = |extra: &[usize]| {
        let mut v = extra.to_vec();
        v.extend(&cs);
        j.marginal(&v)
    };
    let p_abc = with(&[a, b]);
    let p_ac = with(&[a]);
    let p_bc = with(&[b]);
    let p_c = with(&[]);
    let mut total = 0.0;
    for (key, &p) in &p_abc {
        if p == 0.0 {
            continue;
        }
        let rest = &key[2..];
        let ka: Vec<usize> = std::iter::once(key[0]).chain(rest.iter().copied()).collect();
        let kb: Vec<usize> = std::iter::once(key[1]).chain(rest.iter().copied()).collect();
        total += p * (p * p_c[rest] / (p_ac[&ka] * p_bc[&kb])).ln();
    }
    Ok(total)
}

/// The four information terms of a kernel-built joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IbReport {
    pub i_zx: f64,
    pub i_zy: f64,
    pub i_zx_given_y: f64,
    pub i_zy_given_x: f64,
}

/// Checks `I(z; x) = I(z; y) + I(z; x | y)` and `I(z; x) >= I(z; y)`.
/// Joints in which `z` depends on `y` beyond `x` are rejected.
pub fn verify_ib_inequality(j: &JointDistribution) -> Result<IbReport> {
    let r = IbReport {
        i_zx: discrete_mi(j, (Var3::Z, Var3::X), None)?,
        i_zy: discrete_mi(j, (Var3::Z, Var3::Y), None)?,
        i_zx_given_y: discrete_mi(j, (Var3::Z, Var3::X), Some(Var3::Y))?,
        i_zy_given_x: discrete_mi(j, (Var3::Z, Var3::Y), Some(Var3::X))?,
    };
    if r.i_zy_given_x.abs() > INDEPENDENCE_TOL {
        return Err(Error::validation(format!(
            "z is not conditionally independent of y given x: I(z;y|x) = {}",
            r.i_zy_given_x
        )));
    }
    let gap = r.i_zx - (r.i_zy + r.i_zx_given_y);
    if gap.abs() > IDENTITY_TOL {
        return Err(Error::validation(format!("decomposition off by {gap}")));
    }
    if r.i_zx < r.i_zy - IDENTITY_TOL {
        return Err(Error::validation(format!("I(z;x) = {} < I(z;y) = {}", r.i_zx, r.i_zy)));
    }
    Ok(r)
}
