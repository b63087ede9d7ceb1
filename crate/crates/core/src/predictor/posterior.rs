use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Splits;
use crate::nn::{Index, Tape, Var};
use crate::tensor::{softmax_rows, Matrix};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Class logits and their softmax for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Posterior {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let probs = softmax_rows(&Matrix::row_vector(logits.clone())).into_data();
        Posterior { logits, probs }
    }

    pub fn predicted(&self) -> usize {
        crate::tensor::argmax(&self.probs)
    }
}

/// Mean `-ln p(label)` in nats.
pub fn classification_loss(posteriors: &[Posterior], labels: &[usize]) -> Result<f64> {
    if posteriors.len() != labels.len() || posteriors.is_empty() {
        return Err(Error::validation(format!(
            "{} posteriors for {} labels",
            posteriors.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (p, &y) in posteriors.iter().zip(labels) {
        let q = p
            .probs
            .get(y)
            .ok_or_else(|| Error::validation(format!("label {y} outside {} classes", p.probs.len())))?;
        total -= q.max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`, recorded on the tape.
pub fn nll_loss(tape: &mut Tape, logits: Var, labels: Index) -> Result<Var> {
    let n = tape.shape(logits).0;
    if n == 0 {
        return Err(Error::validation("empty batch"));
    }
    let lsm = tape.log_softmax(logits);
    let picked = tape.pick_per_row(lsm, labels)?;
    let s = tape.sum_all(picked);
    Ok(tape.scale(s, -1.0 / n as f64))
}

/// Fraction of rows of `probs` whose argmax equals the label.
pub fn accuracy(probs: &Matrix, nodes: &[usize], labels: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes
        .iter()
        .filter(|&&v| crate::tensor::argmax(probs.row(v)) == labels[v])
        .count();
    hits as f64 / nodes.len() as f64
}

/// One line of a posterior dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub node_id: usize,
    pub probs: Vec<f64>,
    pub split_tag: String,
}

/// Records for every node, tagged `train`, `val`, `test` or `unlabeled`.
pub fn posterior_dump(probs: &Matrix, splits: &Splits) -> Vec<PosteriorRecord> {
    let mut tag = vec!["unlabeled"; probs.rows()];
    for (set, name) in [(&splits.train, "train"), (&splits.val, "val"), (&splits.test, "test")] {
        for &v in set {
            tag[v] = name;
        }
    }
    (0..probs.rows())
        .map(|v| PosteriorRecord {
            node_id: v,
            probs: probs.row(v).to_vec(),
            split_tag: tag[v].to_string(),
        })
        .collect()
}

/// Writes one JSON object per line.
pub fn write_posteriors(path: &Path, records: &[PosteriorRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_posteriors(path: &Path) -> Result<Vec<PosteriorRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: PosteriorRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(r);
    }
    Ok(out)
}
