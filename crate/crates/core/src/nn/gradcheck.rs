//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Outcome of a [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over probed coordinates of `|g_fd - g| / max(1, |g_fd|, |g|)`.
    pub max_relative_error: f64,
    /// `(set tag, tensor name, flat index)` of the worst coordinate.
    pub worst: Option<(String, String, usize)>,
    pub coordinates: usize,
}

/// Compares the analytic gradients returned by `loss` against central
/// differences with step `epsilon`.
///
/// `loss` must be deterministic: any stochastic draw inside it has to be
/// frozen (fixed seed) so that every probe sees the same noise. At most
/// `per_tensor` coordinates of every tensor are probed, chosen with `seed`.
pub fn gradient_check<F>(
    loss: F,
    params: &[ParamSet],
    epsilon: f64,
    per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&[ParamSet]) -> Result<(f64, Vec<Gradients>)>,
{
    let (base, analytic) = loss(params)?;
    if !base.is_finite() {
        return Err(Error::NonFinite("loss at probe point".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::shape(
            "gradient_check",
            format!("{} gradient sets for {} parameter sets", analytic.len(), params.len()),
        ));
    }
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let mut rng = rng_for(seed, &[]);
    let mut probe = params.to_vec();
    for (s, set) in params.iter().enumerate() {
        set.check_aligned(&analytic[s])?;
        for (t, ((name, value), (_, grad))) in set.iter().zip(analytic[s].iter()).enumerate() {
            let n = value.len();
            let picks: Vec<usize> = if n <= per_tensor {
                (0..n).collect()
            } else {
                let mut v = sample(&mut rng, n, per_tensor).into_vec();
                v.sort_unstable();
                v
            };
            for k in picks {
                let orig = value.data()[k];
                probe[s].at_mut(t).data_mut()[k] = orig + epsilon;
                let (up, _) = loss(&probe)?;
                probe[s].at_mut(t).data_mut()[k] = orig - epsilon;
                let (down, _) = loss(&probe)?;
                probe[s].at_mut(t).data_mut()[k] = orig;
                if !up.is_finite() || !down.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss near {}.{name}[{k}]",
                        set.tag()
                    )));
                }
                let fd = (up - down) / (2.0 * epsilon);
                let g = grad.data()[k];
                let rel = (fd - g).abs() / 1f64.max(fd.abs()).max(g.abs());
                report.coordinates += 1;
                if report.worst.is_none() || rel > report.max_relative_error {
                    report.max_relative_error = rel;
                    report.worst = Some((set.tag().to_string(), name.to_string(), k));
                }
            }
        }
    }
    Ok(report)
}
