//! Dataset directories, the synthetic benchmark and labeled/test splits.
//!
//! A dataset directory holds four UTF-8 files:
//!
//! * `meta.json`: `{"name": ..., "num_nodes": N, "num_features": F}`
//! * `edges.tsv`: one `u<TAB>v` pair per line, 0-indexed; either direction
//!   is enough, duplicates and self-loops are ignored
//! * `features.csv`: N lines of F comma-separated decimals
//! * `labels.csv`: `node_id,label` lines with label 0 (normal) or 1 (anomaly)

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GgadError, Result};
use crate::graph::Graph;
use crate::linalg::{DenseMatrix, Rng};

pub const META_FILE: &str = "meta.json";
pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub num_nodes: usize,
    pub num_features: usize,
}

/// Writes `graph` as a dataset directory, creating it if needed.
pub fn save_dataset(graph: &Graph, name: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = DatasetMeta {
        name: name.to_owned(),
        num_nodes: graph.num_nodes(),
        num_features: graph.num_features(),
    };
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;

    let mut edges = String::new();
    for (u, v) in graph.edges() {
        let _ = writeln!(edges, "{u}\t{v}");
    }
    fs::write(dir.join(EDGES_FILE), edges)?;

    let mut feats = String::new();
    for v in 0..graph.num_nodes() {
        let row: Vec<String> = graph.features().row(v).iter().map(|x| format!("{x:.16e}")).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    fs::write(dir.join(FEATURES_FILE), feats)?;

    if let Some(labels) = graph.labels() {
        let mut out = String::new();
        for (v, l) in labels.iter().enumerate() {
            let _ = writeln!(out, "{v},{l}");
        }
        fs::write(dir.join(LABELS_FILE), out)?;
    }
    Ok(())
}

fn read(path: PathBuf) -> Result<(PathBuf, String)> {
    if !path.is_file() {
        return Err(GgadError::MissingFile(path));
    }
    let text = fs::read_to_string(&path)?;
    Ok((path, text))
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> GgadError {
    GgadError::ParseError { file: file.to_path_buf(), line, msg: msg.into() }
}

/// Reads and validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(DatasetMeta, Graph)> {
    let (meta_path, meta_text) = read(dir.join(META_FILE))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text)
        .map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    let n = meta.num_nodes;

    let (edge_path, edge_text) = read(dir.join(EDGES_FILE))?;
    let mut edges = Vec::new();
    for (i, line) in edge_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(&edge_path, i + 1, "expected `u<TAB>v`"));
        };
        let parse = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|e| parse_err(&edge_path, i + 1, format!("bad node id {s:?}: {e}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= n || v >= n {
            return Err(parse_err(&edge_path, i + 1, format!("node id out of range for {n} nodes")));
        }
        edges.push((u, v));
    }

    let (feat_path, feat_text) = read(dir.join(FEATURES_FILE))?;
    let mut data = Vec::with_capacity(n * meta.num_features);
    let mut rows = 0usize;
    for (i, line) in feat_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for tok in line.split(',') {
            let x: f64 = tok
                .trim()
                .parse()
                .map_err(|e| parse_err(&feat_path, i + 1, format!("bad number {tok:?}: {e}")))?;
            data.push(x);
        }
        if data.len() - before != meta.num_features {
            return Err(GgadError::CountMismatch(format!(
                "{}:{}: {} features, meta says {}",
                feat_path.display(),
                i + 1,
                data.len() - before,
                meta.num_features
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(GgadError::CountMismatch(format!("{rows} feature rows, meta says {n} nodes")));
    }
    let features = DenseMatrix::from_vec(n, meta.num_features, data)?;

    let label_path = dir.join(LABELS_FILE);
    let labels = if label_path.is_file() {
        let (label_path, text) = read(label_path)?;
        let mut labels = vec![None; n];
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let Some((a, b)) = line.split_once(',') else {
                return Err(parse_err(&label_path, i + 1, "expected `node_id,label`"));
            };
            let v: usize = a
                .trim()
                .parse()
                .map_err(|e| parse_err(&label_path, i + 1, format!("bad node id: {e}")))?;
            let l: u8 = match b.trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(&label_path, i + 1, format!("label must be 0 or 1, got {other:?}"))),
            };
            if v >= n {
                return Err(parse_err(&label_path, i + 1, format!("node id out of range for {n} nodes")));
            }
            labels[v] = Some(l);
        }
        let labels: Option<Vec<u8>> = labels.into_iter().collect();
        Some(labels.ok_or_else(|| GgadError::CountMismatch("labels file does not cover every node".into()))?)
    } else {
        None
    };

    let graph = Graph::new(n, &edges, features, labels)?;
    Ok((meta, graph))
}

/// Stochastic-block-model benchmark parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub nodes: usize,
    pub blocks: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub anomaly_rate: f64,
    pub feature_dim: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { nodes: 2000, blocks: 4, p_in: 0.02, p_out: 0.002, anomaly_rate: 0.05, feature_dim: 16 }
    }
}

/// Spread of block means around the origin, per feature.
const BLOCK_MEAN_STD: f64 = 1.5;
/// Contextual anomalies draw features around a point this many block-mean
/// standard deviations away from their own block mean.
const CONTEXT_SHIFT: f64 = 3.0;

/// Block of node `v`: contiguous, near-equal ranges.
pub fn block_of(v: usize, nodes: usize, blocks: usize) -> usize {
    v * blocks / nodes
}

/// SBM graph with Gaussian block features and injected anomalies: half of
/// them wired into one clique spanning blocks (structural), the rest with
/// features redrawn around a distant mean (contextual).
pub fn synth_generate(p: &SynthParams, rng: &mut Rng) -> Result<Graph> {
    if p.nodes < 2 || p.blocks == 0 || p.blocks > p.nodes || p.feature_dim == 0 {
        return Err(GgadError::InvalidParams(format!(
            "need nodes ≥ 2, 1 ≤ blocks ≤ nodes, feature_dim ≥ 1; got {p:?}"
        )));
    }
    if !(0.0 <= p.p_out && p.p_out < p.p_in && p.p_in <= 1.0) {
        return Err(GgadError::InvalidParams(format!(
            "need 0 ≤ p_out < p_in ≤ 1, got p_in={} p_out={}",
            p.p_in, p.p_out
        )));
    }
    if !(p.anomaly_rate > 0.0 && p.anomaly_rate < 0.5) {
        return Err(GgadError::InvalidParams(format!("anomaly_rate must be in (0, 0.5), got {}", p.anomaly_rate)));
    }
    let n = p.nodes;
    let f = p.feature_dim;
    let block = |v: usize| block_of(v, n, p.blocks);

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let prob = if block(u) == block(v) { p.p_in } else { p.p_out };
            if rng.uniform() < prob {
                edges.push((u, v));
            }
        }
    }

    let means: Vec<Vec<f64>> =
        (0..p.blocks).map(|_| (0..f).map(|_| rng.normal(0.0, BLOCK_MEAN_STD)).collect()).collect();
    let mut features = DenseMatrix::zeros(n, f);
    for v in 0..n {
        let m = &means[block(v)];
        for (c, x) in features.row_mut(v).iter_mut().enumerate() {
            *x = rng.normal(m[c], 1.0);
        }
    }

    let n_anom = ((p.anomaly_rate * n as f64).round() as usize).max(1);
    let all: Vec<usize> = (0..n).collect();
    let anomalies = rng.sample_without_replacement(&all, n_anom);
    let n_struct = n_anom / 2;
    let (structural, contextual) = anomalies.split_at(n_struct);

    for (i, &u) in structural.iter().enumerate() {
        for &v in &structural[i + 1..] {
            edges.push((u, v));
        }
    }
    for &v in contextual {
        let m = &means[block(v)];
        let dir: Vec<f64> = (0..f).map(|_| rng.normal(0.0, 1.0)).collect();
        let len = crate::linalg::norm(&dir).max(1e-12);
        let shift = CONTEXT_SHIFT * BLOCK_MEAN_STD * (f as f64).sqrt();
        for (c, x) in features.row_mut(v).iter_mut().enumerate() {
            *x = rng.normal(m[c] + shift * dir[c] / len, 1.0);
        }
    }

    let mut labels = vec![0u8; n];
    for &v in &anomalies {
        labels[v] = 1;
    }
    Graph::new(n, &edges, features, Some(labels))
}

/// Labeled-normal training set and the held-out test nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    /// Percent of normal nodes given as labeled normals.
    pub train_rate: f64,
    /// Fraction of the labeled set that are actually anomalies.
    pub contamination_rate: f64,
    pub seed: u64,
    /// Sorted.
    pub labeled_normals: Vec<usize>,
    /// Sorted; complement of `labeled_normals`.
    pub test_nodes: Vec<usize>,
    /// Anomalies hidden inside `labeled_normals`, sorted.
    pub contaminated: Vec<usize>,
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (path, text) = read(path.to_path_buf())?;
        serde_json::from_str(&text).map_err(|e| parse_err(&path, e.line(), e.to_string()))
    }

    /// Checks the split against `graph`: in range, disjoint, covering.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let n = graph.num_nodes();
        let mut seen = vec![false; n];
        for &v in self.labeled_normals.iter().chain(&self.test_nodes) {
            if v >= n {
                return Err(GgadError::NodeOutOfRange { node: v, num_nodes: n });
            }
            if seen[v] {
                return Err(GgadError::InvalidParams(format!("node {v} appears twice in split")));
            }
            seen[v] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(GgadError::InvalidParams("split does not cover every node".into()));
        }
        Ok(())
    }
}

/// Samples `round(R/100 · |normals|)` labeled nodes, of which
/// `round(c · |V_l|)` are anomalies standing in for normals.
pub fn build_split(graph: &Graph, train_rate: f64, contamination_rate: f64, seed: u64) -> Result<Split> {
    let labels = graph.labels().ok_or(GgadError::MissingLabels)?;
    if !(train_rate > 0.0 && train_rate <= 100.0) {
        return Err(GgadError::InvalidParams(format!("train rate must be in (0, 100], got {train_rate}")));
    }
    if !(0.0..1.0).contains(&contamination_rate) {
        return Err(GgadError::InvalidParams(format!(
            "contamination must be in [0, 1), got {contamination_rate}"
        )));
    }
    let normals: Vec<usize> = (0..graph.num_nodes()).filter(|&v| labels[v] == 0).collect();
    let anomalies: Vec<usize> = (0..graph.num_nodes()).filter(|&v| labels[v] == 1).collect();
    let n_labeled = (train_rate / 100.0 * normals.len() as f64).round() as usize;
    let n_contam = (contamination_rate * n_labeled as f64).round() as usize;
    if n_labeled == 0 {
        return Err(GgadError::InsufficientNodes(format!(
            "{train_rate}% of {} normals rounds to zero",
            normals.len()
        )));
    }
    if n_contam > anomalies.len() {
        return Err(GgadError::InsufficientNodes(format!(
            "need {n_contam} contaminating anomalies, graph has {}",
            anomalies.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let mut labeled = rng.sample_without_replacement(&normals, n_labeled - n_contam);
    let mut contaminated = rng.sample_without_replacement(&anomalies, n_contam);
    contaminated.sort_unstable();
    labeled.extend_from_slice(&contaminated);
    labeled.sort_unstable();
    let mut in_train = vec![false; graph.num_nodes()];
    for &v in &labeled {
        in_train[v] = true;
    }
    let test_nodes = (0..graph.num_nodes()).filter(|&v| !in_train[v]).collect();
    Ok(Split {
        train_rate,
        contamination_rate,
        seed,
        labeled_normals: labeled,
        test_nodes,
        contaminated,
    })
}
