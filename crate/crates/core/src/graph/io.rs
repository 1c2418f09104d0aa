use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{mask_indices, LabeledGraph, SplitMasks, SymmetricBinaryAdjacency};
use crate::error::{Error, Result};

/// Locations of the four text files making up a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub edges: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl DatasetPaths {
    /// `features.txt`, `edges.txt`, `labels.txt`, `splits.txt` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            features: dir.join("features.txt"),
            edges: dir.join("edges.txt"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
        }
    }
}

fn malformed(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated tokens with their 1-based column.
fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (pos, ch) in line.char_indices() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some(pos),
            (true, Some(s)) => {
                out.push((s + 1, &line[s..pos]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-empty lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_index(path: &Path, line: usize, (col, tok): (usize, &str), n: usize) -> Result<usize> {
    let idx: usize = tok
        .parse()
        .map_err(|_| malformed(path, line, col, format!("expected a node index, found {tok:?}")))?;
    if idx >= n {
        return Err(Error::IndexOutOfRange {
            index: idx,
            n_nodes: n,
        });
    }
    Ok(idx)
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let text = read_text(path)?;
    let mut lines = content_lines(&text);
    let (hline, header) = lines
        .next()
        .ok_or_else(|| malformed(path, 1, 1, "missing \"N D\" header"))?;
    let htoks = tokens(header);
    if htoks.len() != 2 {
        return Err(malformed(path, hline, 1, "header must be \"N D\""));
    }
    let parse_dim = |(col, tok): (usize, &str)| -> Result<usize> {
        tok.parse()
            .map_err(|_| malformed(path, hline, col, format!("bad dimension {tok:?}")))
    };
    let n = parse_dim(htoks[0])?;
    let d = parse_dim(htoks[1])?;
    let mut x = Array2::zeros((n, d));
    let mut row = 0;
    for (lineno, line) in lines {
        if row >= n {
            return Err(malformed(path, lineno, 1, format!("more than {n} feature rows")));
        }
        let toks = tokens(line);
        if toks.len() != d {
            return Err(malformed(
                path,
                lineno,
                1,
                format!("expected {d} values, found {}", toks.len()),
            ));
        }
        for (k, (col, tok)) in toks.into_iter().enumerate() {
            let v: f64 = tok
                .parse()
                .map_err(|_| malformed(path, lineno, col, format!("bad number {tok:?}")))?;
            x[[row, k]] = v;
        }
        row += 1;
    }
    if row != n {
        return Err(Error::InconsistentDimensions(format!(
            "{}: header declares {n} rows but {row} were found",
            path.display()
        )));
    }
    Ok(x)
}

/// Reads an edges file for a graph of `n_nodes` nodes.
pub fn read_edges(path: &Path, n_nodes: usize) -> Result<SymmetricBinaryAdjacency> {
    let text = read_text(path)?;
    let mut g = SymmetricBinaryAdjacency::empty(n_nodes);
    for (lineno, line) in content_lines(&text) {
        let toks = tokens(line);
        if toks.len() != 2 {
            return Err(malformed(path, lineno, 1, "expected \"u<TAB>v\""));
        }
        let u = parse_index(path, lineno, toks[0], n_nodes)?;
        let v = parse_index(path, lineno, toks[1], n_nodes)?;
        if u == v {
            return Err(malformed(path, lineno, toks[1].0, format!("self-loop on node {u}")));
        }
        g.insert(u, v)?;
    }
    Ok(g)
}

fn read_labels(path: &Path, n: usize) -> Result<(Vec<Option<usize>>, usize)> {
    let text = read_text(path)?;
    let mut labels = vec![None; n];
    for (lineno, line) in content_lines(&text) {
        let toks = tokens(line);
        if toks.len() != 2 {
            return Err(malformed(path, lineno, 1, "expected \"node_id<TAB>class_id\""));
        }
        let node = parse_index(path, lineno, toks[0], n)?;
        let (col, tok) = toks[1];
        let class: usize = tok
            .parse()
            .map_err(|_| malformed(path, lineno, col, format!("bad class id {tok:?}")))?;
        if labels[node].is_some_and(|c| c != class) {
            return Err(malformed(path, lineno, 1, format!("node {node} labelled twice")));
        }
        labels[node] = Some(class);
    }
    let n_classes = labels.iter().flatten().max().map_or(0, |&c| c + 1);
    Ok((labels, n_classes))
}

fn read_splits(path: &Path, n: usize) -> Result<SplitMasks> {
    let text = read_text(path)?;
    let mut masks = SplitMasks::empty(n);
    for (lineno, line) in content_lines(&text) {
        let toks = tokens(line);
        if toks.len() != 2 {
            return Err(malformed(path, lineno, 1, "expected \"node_id<TAB>split\""));
        }
        let node = parse_index(path, lineno, toks[0], n)?;
        let mask = match toks[1].1 {
            "train" => &mut masks.train,
            "val" => &mut masks.val,
            "test" => &mut masks.test,
            other => {
                return Err(malformed(
                    path,
                    lineno,
                    toks[1].0,
                    format!("unknown split {other:?}"),
                ))
            }
        };
        mask[node] = true;
    }
    Ok(masks)
}

/// Loads and validates a dataset.
pub fn load_dataset(paths: &DatasetPaths) -> Result<LabeledGraph> {
    let nodes = load_nodes(&paths.features, &paths.labels, &paths.splits)?;
    let adjacency = read_edges(&paths.edges, nodes.n_nodes())?;
    nodes.with_adjacency(adjacency)
}

/// Loads features, labels and splits with an empty graph.
pub fn load_nodes(features: &Path, labels: &Path, splits: &Path) -> Result<LabeledGraph> {
    let features = read_features(features)?;
    let n = features.nrows();
    let (labels, n_classes) = read_labels(labels, n)?;
    let masks = read_splits(splits, n)?;
    LabeledGraph::new(
        features,
        SymmetricBinaryAdjacency::empty(n),
        labels,
        n_classes,
        masks,
    )
}

pub fn write_edges(path: &Path, adjacency: &SymmetricBinaryAdjacency) -> Result<()> {
    let mut s = String::new();
    for (u, v) in adjacency.edges() {
        writeln!(s, "{u}\t{v}").unwrap();
    }
    crate::io::write_atomic(path, s.as_bytes())
}

/// Writes the four dataset files; floats use the shortest exact representation.
pub fn save_dataset(graph: &LabeledGraph, paths: &DatasetPaths) -> Result<()> {
    let mut s = format!("{} {}\n", graph.n_nodes(), graph.n_features());
    for row in graph.features.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    crate::io::write_atomic(&paths.features, s.as_bytes())?;
    write_edges(&paths.edges, &graph.adjacency)?;

    let mut s = String::new();
    for (i, l) in graph.labels.iter().enumerate() {
        if let Some(c) = l {
            writeln!(s, "{i}\t{c}").unwrap();
        }
    }
    crate::io::write_atomic(&paths.labels, s.as_bytes())?;

    let mut s = String::new();
    for (name, mask) in [
        ("train", &graph.masks.train),
        ("val", &graph.masks.val),
        ("test", &graph.masks.test),
    ] {
        for i in mask_indices(mask) {
            writeln!(s, "{i}\t{name}").unwrap();
        }
    }
    crate::io::write_atomic(&paths.splits, s.as_bytes())
}
