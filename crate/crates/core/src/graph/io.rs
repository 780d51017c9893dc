//! Plain-text graph files and LINQS-style citation dataset import.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, GraphError, GraphOptions, Labels, Split};
use crate::matrix::DenseMatrix;

/// Locations of the four files making up a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphFiles {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl GraphFiles {
    /// Conventional names inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            edges: dir.join("edges.txt"),
            features: dir.join("features.txt"),
            labels: dir.join("labels.txt"),
            splits: dir.join("splits.txt"),
        }
    }

    pub fn all_exist(&self) -> bool {
        [&self.edges, &self.features, &self.labels, &self.splits]
            .iter()
            .all(|p| p.is_file())
    }
}

fn read(path: &Path) -> Result<String, GraphError> {
    fs::read_to_string(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), GraphError> {
    fs::write(path, contents).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Reads a dataset in the plain-text layout.
pub fn load_graph(files: &GraphFiles, options: GraphOptions) -> Result<Graph, GraphError> {
    let features = parse_features(&files.features)?;
    let n = features.rows();

    let mut edges = Vec::new();
    let path = &files.edges;
    for (no, line) in lines(&read(path)?) {
        let mut it = line.split_whitespace();
        let mut id = |what: &str| -> Result<usize, GraphError> {
            let tok = it
                .next()
                .ok_or_else(|| parse_err(path, no, format!("missing {what} id")))?;
            tok.parse()
                .map_err(|_| parse_err(path, no, format!("bad {what} id `{tok}`")))
        };
        let (src, dst) = (id("source")?, id("target")?);
        if it.next().is_some() {
            return Err(parse_err(path, no, "expected exactly two ids"));
        }
        if src >= n || dst >= n {
            return Err(GraphError::Structural(format!(
                "{}:{no}: edge ({src}, {dst}) outside 0..{n}",
                path.display()
            )));
        }
        edges.push((src, dst));
    }

    let labels = parse_labels(&files.labels)?;
    let splits = parse_splits(&files.splits)?;
    let graph = Graph::from_edges(n, &edges, features, labels, splits, options)?;
    graph.validate()?;
    Ok(graph)
}

fn parse_features(path: &Path) -> Result<DenseMatrix, GraphError> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (no, line) in lines(&read(path)?) {
        let before = values.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| parse_err(path, no, format!("bad float `{tok}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no, "non-finite feature value"));
            }
            values.push(v);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => return Err(parse_err(path, no, format!("row has {width} values, expected {c}"))),
            _ => {}
        }
        rows += 1;
    }
    DenseMatrix::from_vec(rows, cols.unwrap_or(0), values)
        .ok_or_else(|| GraphError::Internal("feature buffer size".into()))
}

fn parse_labels(path: &Path) -> Result<Labels, GraphError> {
    let text = read(path)?;
    let mut rows: Vec<Vec<usize>> = Vec::new();
    for (no, line) in lines(&text) {
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>()
                    .map_err(|_| parse_err(path, no, format!("bad label `{tok}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(parse_err(path, no, "label rows differ in width"));
        }
        rows.push(row);
    }
    let multi_label = rows.first().is_some_and(|r| r.len() > 1);
    if multi_label {
        let width = rows[0].len();
        let mut m = DenseMatrix::zeros(rows.len(), width);
        for (r, row) in rows.iter().enumerate() {
            for (c, &b) in row.iter().enumerate() {
                if b > 1 {
                    return Err(GraphError::Structural(format!(
                        "{}: multi-label entry {b} is not 0/1",
                        path.display()
                    )));
                }
                m.set(r, c, b as f64);
            }
        }
        Ok(Labels::MultiLabel(m))
    } else {
        let classes: Vec<usize> = rows.iter().map(|r| r[0]).collect();
        let num_classes = classes.iter().max().map_or(0, |m| m + 1);
        Ok(Labels::MultiClass { classes, num_classes })
    }
}

fn parse_splits(path: &Path) -> Result<Vec<Split>, GraphError> {
    lines(&read(path)?)
        .map(|(no, line)| line.parse().map_err(|e: String| parse_err(path, no, e)))
        .collect()
}

/// Writes `graph` in the plain-text layout. Self-loops are implicit and
/// each undirected edge is written once.
pub fn save_graph(graph: &Graph, files: &GraphFiles) -> Result<(), GraphError> {
    let mut edges = String::new();
    for v in 0..graph.num_nodes() {
        for &u in graph.neighbors(v) {
            if v < u {
                edges.push_str(&format!("{v} {u}\n"));
            }
        }
    }
    write(&files.edges, &edges)?;

    let mut feats = String::new();
    for r in 0..graph.num_nodes() {
        let row: Vec<String> = graph.features().row(r).iter().map(|x| x.to_string()).collect();
        feats.push_str(&row.join(" "));
        feats.push('\n');
    }
    write(&files.features, &feats)?;

    let mut labels = String::new();
    match graph.labels() {
        Labels::MultiClass { classes, .. } => {
            for c in classes {
                labels.push_str(&format!("{c}\n"));
            }
        }
        Labels::MultiLabel(m) => {
            for r in 0..m.rows() {
                let row: Vec<&str> = m.row(r).iter().map(|&b| if b > 0.5 { "1" } else { "0" }).collect();
                labels.push_str(&row.join(" "));
                labels.push('\n');
            }
        }
    }
    write(&files.labels, &labels)?;

    let splits: String = graph.splits().iter().map(|s| format!("{}\n", s.token())).collect();
    write(&files.splits, &splits)
}

/// Split sizes for datasets that ship without an assignment. Nodes are
/// permuted with `seed` and cut in train, val, test order; the rest are
/// left unassigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinqsSplit {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl LinqsSplit {
    /// 1208 / 500 / 1000, the usual Cora sizes.
    pub fn cora(seed: u64) -> Self {
        Self {
            train: 1208,
            val: 500,
            test: 1000,
            seed,
        }
    }
}

/// Imports a `.content` / `.cites` pair.
///
/// Content lines are `id f_1 … f_D label`; cites lines are `cited citing`.
/// Label names are mapped to ids in sorted order. Citations naming an
/// unknown paper are skipped with a warning.
pub fn import_linqs(
    content_path: &Path,
    cites_path: &Path,
    split: LinqsSplit,
    options: GraphOptions,
) -> Result<Graph, GraphError> {
    let content = read(content_path)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for (no, line) in lines(&content) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(content_path, no, "expected id, features and label"));
        }
        let row = toks[1..toks.len() - 1]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(content_path, no, format!("bad feature `{t}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if feature_rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(parse_err(content_path, no, "feature width differs"));
        }
        if ids.insert(toks[0].to_string(), feature_rows.len()).is_some() {
            return Err(parse_err(content_path, no, format!("duplicate id `{}`", toks[0])));
        }
        feature_rows.push(row);
        label_names.push(toks[toks.len() - 1].to_string());
    }
    let n = feature_rows.len();

    let names: BTreeSet<&String> = label_names.iter().collect();
    let class_of: HashMap<&String, usize> = names.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let classes: Vec<usize> = label_names.iter().map(|s| class_of[s]).collect();

    let mut edges = Vec::new();
    let mut skipped = 0usize;
    for (no, line) in lines(&read(cites_path)?) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(parse_err(cites_path, no, "expected two ids"));
        }
        match (ids.get(toks[0]), ids.get(toks[1])) {
            (Some(&a), Some(&b)) => edges.push((a, b)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} citations reference unknown papers and were skipped");
    }

    if split.train + split.val + split.test > n {
        return Err(GraphError::Parameter(format!(
            "split sizes {}+{}+{} exceed {n} nodes",
            split.train, split.val, split.test
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let mut splits = vec![Split::Unassigned; n];
    for (rank, &v) in order.iter().enumerate() {
        splits[v] = if rank < split.train {
            Split::Train
        } else if rank < split.train + split.val {
            Split::Val
        } else if rank < split.train + split.val + split.test {
            Split::Test
        } else {
            Split::Unassigned
        };
    }

    let features =
        DenseMatrix::from_rows(&feature_rows).ok_or_else(|| GraphError::Internal("feature rows ragged".into()))?;
    let labels = Labels::MultiClass {
        classes,
        num_classes: names.len(),
    };
    Graph::from_edges(n, &edges, features, labels, splits, options)
}
