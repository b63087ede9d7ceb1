use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::run::{RunRecord, Stat};
use crate::error::{Error, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per record.
pub fn summary_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(
        "model,perturbation,label_rate,beta,gamma,n_seeds,accuracy_mean,accuracy_std,\
         target_accuracy_mean,target_accuracy_std,mia_f_roc_mean,mia_f_roc_std,mia_s_roc_mean,mia_s_roc_std,config_hash\n",
    );
    for r in records {
        let c = &r.config;
        let stat = |x: &Option<Stat>| (opt(x.map(|s| s.mean)), opt(x.and_then(|s| s.std)));
        let (tm, ts) = stat(&r.target_accuracy);
        let (fm, fs) = stat(&r.mia_f_roc);
        let (sm, ss) = stat(&r.mia_s_roc);
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{tm},{ts},{fm},{fs},{sm},{ss},{}",
            c.model.name(),
            c.perturbation.label(),
            c.label_rate,
            c.params.beta,
            c.params.gamma,
            r.seeds.len(),
            r.accuracy.mean,
            opt(r.accuracy.std),
            r.config_hash
        )
        .expect("write to string");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRatePoint {
    pub label_rate: f64,
    pub accuracy: f64,
    pub mia_f_roc: Option<f64>,
    pub mia_s_roc: Option<f64>,
}

/// Metrics of otherwise identical configurations at several label rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRateTrend {
    pub model: String,
    pub perturbation: String,
    pub points: Vec<LabelRatePoint>,
    /// Attack ROC at the highest label rate minus that at the lowest.
    pub mia_f_change: Option<f64>,
    pub mia_f_decreasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightCell {
    pub beta: f64,
    pub gamma: f64,
    pub accuracy: f64,
    pub mia_f_roc: Option<f64>,
}

/// Metrics of otherwise identical configurations over `beta` and `gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSweep {
    pub model: String,
    pub perturbation: String,
    pub cells: Vec<WeightCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trends {
    pub label_rate: Vec<LabelRateTrend>,
    pub weights: Vec<WeightSweep>,
}

/// Groups records whose configs agree outside `varying` (and the run name),
/// in order of first appearance.
fn group_by<'a>(records: &'a [RunRecord], varying: &[&str]) -> Vec<Vec<&'a RunRecord>> {
    let key = |r: &RunRecord| {
        let mut v = serde_json::to_value(&r.config).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("name");
            for k in varying {
                o.remove(*k);
            }
        }
        v.to_string()
    };
    let mut groups: Vec<(String, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, members)) => members.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

pub fn trends(records: &[RunRecord]) -> Trends {
    let mut label_rate = Vec::new();
    for group in group_by(records, &["label_rate"]) {
        let mut points: Vec<LabelRatePoint> = group
            .iter()
            .map(|r| LabelRatePoint {
                label_rate: r.config.label_rate,
                accuracy: r.accuracy.mean,
                mia_f_roc: r.mia_f_roc.map(|s| s.mean),
                mia_s_roc: r.mia_s_roc.map(|s| s.mean),
            })
            .collect();
        points.sort_by(|a, b| a.label_rate.total_cmp(&b.label_rate));
        points.dedup_by(|a, b| a.label_rate == b.label_rate);
        if points.len() < 2 {
            continue;
        }
        let change = match (points.first().unwrap().mia_f_roc, points.last().unwrap().mia_f_roc) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        label_rate.push(LabelRateTrend {
            model: group[0].config.model.name().into(),
            perturbation: group[0].config.perturbation.label(),
            points,
            mia_f_change: change,
            mia_f_decreasing: change.map(|c| c < 0.0),
        });
    }
    let mut weights = Vec::new();
    for group in group_by(records, &["beta", "gamma"]) {
        let mut cells: Vec<WeightCell> = group
            .iter()
            .map(|r| WeightCell {
                beta: r.config.params.beta,
                gamma: r.config.params.gamma,
                accuracy: r.accuracy.mean,
                mia_f_roc: r.mia_f_roc.map(|s| s.mean),
            })
            .collect();
        cells.sort_by(|a, b| a.beta.total_cmp(&b.beta).then(a.gamma.total_cmp(&b.gamma)));
        cells.dedup_by(|a, b| a.beta == b.beta && a.gamma == b.gamma);
        if cells.len() < 2 {
            continue;
        }
        weights.push(WeightSweep {
            model: group[0].config.model.name().into(),
            perturbation: group[0].config.perturbation.label(),
            cells,
        });
    }
    Trends { label_rate, weights }
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">{}</text>\n",
        W / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy and attack ROC against label rate, both on a 0..1 axis.
pub fn label_rate_svg(t: &LabelRateTrend) -> String {
    let mut s = svg_open(&format!("{} ({}) by label rate", t.model, t.perturbation));
    let (lo, hi) = (t.points[0].label_rate, t.points.last().unwrap().label_rate);
    let x = |r: f64| PAD + (r - lo) / (hi - lo).max(f64::EPSILON) * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - v * (H - 2.0 * PAD);
    let _ = writeln!(
        s,
        "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n<line x1=\"{PAD}\" y1=\"{PAD}\" x2=\"{PAD}\" y2=\"{}\" stroke=\"black\"/>",
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    for tick in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>", PAD - 4.0, y(tick) + 4.0);
    }
    for p in &t.points {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}%</text>",
            x(p.label_rate),
            H - PAD + 16.0,
            p.label_rate * 100.0
        );
    }
    let series: [(&str, &str, Vec<Option<f64>>); 3] = [
        ("accuracy", "#1f77b4", t.points.iter().map(|p| Some(p.accuracy)).collect()),
        ("MIA-F ROC", "#d62728", t.points.iter().map(|p| p.mia_f_roc).collect()),
        ("MIA-S ROC", "#2ca02c", t.points.iter().map(|p| p.mia_s_roc).collect()),
    ];
    for (i, (name, color, vals)) in series.iter().enumerate() {
        let pts: Vec<String> = t
            .points
            .iter()
            .zip(vals)
            .filter_map(|(p, v)| v.map(|v| format!("{:.1},{:.1}", x(p.label_rate), y(v))))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>",
            pts.join(" ")
        );
        let ly = PAD + 14.0 * i as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{}\">{name}</text>",
            W - PAD - 90.0,
            ly - 9.0,
            W - PAD - 76.0,
            ly
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Accuracy over the `beta` x `gamma` cells, darker is higher.
pub fn heatmap_svg(sweep: &WeightSweep) -> String {
    let mut s = svg_open(&format!("{} ({}) accuracy over beta x gamma", sweep.model, sweep.perturbation));
    let mut betas: Vec<f64> = sweep.cells.iter().map(|c| c.beta).collect();
    let mut gammas: Vec<f64> = sweep.cells.iter().map(|c| c.gamma).collect();
    for v in [&mut betas, &mut gammas] {
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    let (lo, hi) = sweep
        .cells
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), c| (l.min(c.accuracy), h.max(c.accuracy)));
    let cw = (W - 2.0 * PAD) / betas.len() as f64;
    let ch = (H - 2.0 * PAD) / gammas.len() as f64;
    for c in &sweep.cells {
        let i = betas.iter().position(|&b| b == c.beta).unwrap();
        let j = gammas.iter().position(|&g| g == c.gamma).unwrap();
        let t = if hi > lo { (c.accuracy - lo) / (hi - lo) } else { 1.0 };
        let shade = (230.0 - 190.0 * t).round() as u8;
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"rgb({shade},{shade},255)\" stroke=\"white\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.3}</text>",
            PAD + i as f64 * cw,
            PAD + j as f64 * ch,
            PAD + (i as f64 + 0.5) * cw,
            PAD + (j as f64 + 0.5) * ch + 4.0,
            c.accuracy
        );
    }
    for (i, b) in betas.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{b}</text>", PAD + (i as f64 + 0.5) * cw, H - PAD + 14.0);
    }
    for (j, g) in gammas.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{g}</text>", PAD - 4.0, PAD + (j as f64 + 0.5) * ch + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">beta</text>", W / 2.0, H - 12.0);
    let _ = writeln!(s, "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">gamma</text>", H / 2.0, H / 2.0);
    s.push_str("</svg>\n");
    s
}

fn write(path: PathBuf, content: &str) -> Result<PathBuf> {
    std::fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `summary.csv`, `trends.json` and one SVG per trend; returns the
/// written paths.
pub fn emit_report(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::validation("no records to report"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let t = trends(records);
    let mut files = vec![
        write(out_dir.join("summary.csv"), &summary_csv(records))?,
        write(out_dir.join("trends.json"), &serde_json::to_string_pretty(&t)?)?,
    ];
    for (i, lt) in t.label_rate.iter().enumerate() {
        files.push(write(out_dir.join(format!("label_rate_{i}_{}.svg", lt.model)), &label_rate_svg(lt))?);
    }
    for (i, w) in t.weights.iter().enumerate() {
        files.push(write(out_dir.join(format!("heatmap_{i}_{}.svg", w.model)), &heatmap_svg(w))?);
    }
    Ok(files)
}
