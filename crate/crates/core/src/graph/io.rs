//! TSV dataset files.
//!
//! `nodes.tsv` holds `node_id<TAB>label<TAB>f1,f2,...,fD` per line with ids
//! `0..N` each appearing once; `edges.tsv` holds `src<TAB>dst` per line.
//! Blank lines and lines starting with `#` are ignored. Edges are read as
//! undirected; reversed duplicates and self-loops are dropped and counted.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use super::Graph;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub nodes: usize,
    pub edges: usize,
    pub duplicate_edges: usize,
    pub self_loops: usize,
}

pub fn load_graph(nodes_path: &Path, edges_path: &Path) -> Result<(Graph, LoadReport)> {
    let nodes = std::fs::read_to_string(nodes_path).map_err(|e| Error::io(nodes_path, e))?;
    let edges = std::fs::read_to_string(edges_path).map_err(|e| Error::io(edges_path, e))?;
    read_graph(&nodes, nodes_path, &edges, edges_path)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Parses the two TSV documents; paths only label error messages.
pub fn read_graph(
    nodes_text: &str,
    nodes_path: &Path,
    edges_text: &str,
    edges_path: &Path,
) -> Result<(Graph, LoadReport)> {
    let perr = |path: &Path, line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut rows: Vec<(usize, usize, Vec<f64>, usize)> = Vec::new();
    for (line, l) in content_lines(nodes_text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(perr(
                nodes_path,
                line,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| perr(nodes_path, line, format!("bad node id {:?}", fields[0])))?;
        let label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| perr(nodes_path, line, format!("bad label {:?}", fields[1])))?;
        let feats = fields[2]
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| perr(nodes_path, line, format!("non-numeric feature {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some((_, _, first, _)) = rows.first() {
            if first.len() != feats.len() {
                return Err(perr(
                    nodes_path,
                    line,
                    format!("{} features, expected {}", feats.len(), first.len()),
                ));
            }
        }
        rows.push((id, label, feats, line));
    }

    let n = rows.len();
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut features = Matrix::zeros(n, dim);
    let mut labels = vec![0; n];
    let mut seen = vec![false; n];
    for (id, label, feats, line) in rows {
        if id >= n || seen[id] {
            return Err(perr(
                nodes_path,
                line,
                format!("node id {id} is duplicated or outside 0..{n}"),
            ));
        }
        seen[id] = true;
        labels[id] = label;
        features.row_mut(id).copy_from_slice(&feats);
    }
    let class_count = labels.iter().max().map_or(0, |m| m + 1);

    let mut edges = Vec::new();
    for (line, l) in content_lines(edges_text) {
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 2 {
            return Err(perr(
                edges_path,
                line,
                format!("expected 2 tab-separated fields, found {}", fields.len()),
            ));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| perr(edges_path, line, format!("bad node id {s:?}")))
        };
        let (u, v) = (parse(fields[0])?, parse(fields[1])?);
        if u >= n || v >= n {
            return Err(Error::validation(format!(
                "{}:{line}: edge ({u}, {v}) has an endpoint outside 0..{n}",
                edges_path.display()
            )));
        }
        edges.push((u, v));
    }

    let (g, built) = Graph::new(n, edges, features, labels, class_count)?;
    if built.duplicate_edges + built.self_loops > 0 {
        warn!(
            "dropped {} duplicate edges and {} self-loops",
            built.duplicate_edges, built.self_loops
        );
    }
    let report = LoadReport {
        nodes: g.node_count(),
        edges: g.edge_count(),
        duplicate_edges: built.duplicate_edges,
        self_loops: built.self_loops,
    };
    Ok((g, report))
}

/// Writes `nodes.tsv` and `edges.tsv` into `dir`.
pub fn write_graph(g: &Graph, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut nodes = String::new();
    for v in 0..g.node_count() {
        let feats: Vec<String> = g.feature(v).iter().map(|x| x.to_string()).collect();
        writeln!(nodes, "{v}\t{}\t{}", g.labels()[v], feats.join(",")).unwrap();
    }
    let mut edges = String::new();
    for &(u, v) in g.edges() {
        writeln!(edges, "{u}\t{v}").unwrap();
    }
    let np = dir.join("nodes.tsv");
    let ep = dir.join("edges.tsv");
    std::fs::write(&np, nodes).map_err(|e| Error::io(&np, e))?;
    std::fs::write(&ep, edges).map_err(|e| Error::io(&ep, e))?;
    Ok(())
}
