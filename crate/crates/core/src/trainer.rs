//! Adam, the full-batch training loop and mini-batch training over
//! 2-hop-closed subgraphs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Split;
use crate::error::{GgadError, Result};
use crate::graph::{khop_nodes, normalize_adjacency, Graph, NormalizedAdjacency};
use crate::linalg::{DenseMatrix, Rng};
use crate::losses::LossBundle;
use crate::model::{backward, forward, gcn_forward, Gradients, LossWeights, ModelDims, ModelParams, Objective};
use crate::outliers::{select_anchors, OutlierNoise, OutlierSet, OutlierStrategy};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Node count above which training switches to mini-batches automatically.
pub const DEFAULT_MINIBATCH_THRESHOLD: usize = 200_000;
/// Batch size used when the threshold triggers and none was given.
pub const DEFAULT_BATCH_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub s_ratio: f64,
    pub eps_mean: f64,
    pub eps_std: f64,
    /// Perturbation scale for the gaussianp strategy.
    pub perturb_std: f64,
    pub hidden: usize,
    pub dim: usize,
    /// `None` trains full-batch unless the graph exceeds `minibatch_threshold`.
    pub batch_size: Option<usize>,
    pub minibatch_threshold: usize,
    pub seed: u64,
    pub outlier_strategy: OutlierStrategy,
    pub disable_ala: bool,
    pub disable_ec: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 200,
            alpha: 0.7,
            beta: 1.0,
            lambda: 1.0,
            s_ratio: 0.05,
            eps_mean: 0.01,
            eps_std: 0.005,
            perturb_std: 0.1,
            hidden: 128,
            dim: 64,
            batch_size: None,
            minibatch_threshold: DEFAULT_MINIBATCH_THRESHOLD,
            seed: 0,
            outlier_strategy: OutlierStrategy::Ggad,
            disable_ala: false,
            disable_ec: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GgadError::InvalidParams(m.to_owned()));
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.s_ratio > 0.0 && self.s_ratio <= 1.0) {
            return bad("s_ratio must be in (0, 1]");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.lambda >= 0.0) {
            return bad("alpha, beta and lambda must be ≥ 0");
        }
        if !(self.eps_std >= 0.0 && self.perturb_std >= 0.0) {
            return bad("noise standard deviations must be ≥ 0");
        }
        if self.hidden == 0 || self.dim == 0 {
            return bad("hidden and dim must be ≥ 1");
        }
        if let Some(b) = self.batch_size {
            if b < 2 {
                return Err(GgadError::BatchTooSmall(b));
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: if self.disable_ala { 0.0 } else { self.beta },
            lambda: if self.disable_ec { 0.0 } else { self.lambda },
        }
    }

    pub fn noise(&self) -> OutlierNoise {
        OutlierNoise { eps_mean: self.eps_mean, eps_std: self.eps_std, perturb_std: self.perturb_std }
    }

    /// Batch size to use, or `None` for full-batch training.
    pub fn effective_batch_size(&self, num_nodes: usize) -> Option<usize> {
        self.batch_size
            .or_else(|| (num_nodes > self.minibatch_threshold).then_some(DEFAULT_BATCH_SIZE))
    }
}

/// Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(dims: ModelDims) -> Self {
        Self { m: Gradients::zeros(dims), v: Gradients::zeros(dims), step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<()> {
    if params.dims != state_dims(state) || grads.w1.shape() != params.w1.shape() {
        return Err(GgadError::ShapeMismatch("adam: parameter / gradient / state shapes differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let gs = grads.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(gs).zip(ms).zip(vs) {
        if p.len() != g.len() {
            return Err(GgadError::ShapeMismatch("adam: gradient tensor length".into()));
        }
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

fn state_dims(state: &AdamState) -> ModelDims {
    let (f, h) = state.m.w1.shape();
    ModelDims { features: f, hidden: h, rep: state.m.w2.cols() }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// One bundle per epoch, measured before that epoch's update(s).
    pub log: Vec<LossBundle>,
    pub outliers: OutlierSet,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from(LossBundle::CSV_HEADER);
        out.push('\n');
        for (e, b) in self.log.iter().enumerate() {
            out.push_str(&b.csv_row(e + 1));
            out.push('\n');
        }
        out
    }
}

// Sub-stream tags; full-batch and mini-batch runs draw identical values from
// the first three.
const STREAM_INIT: u64 = 1;
const STREAM_ANCHORS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_BATCHES: u64 = 4;

struct Setup {
    params: ModelParams,
    outliers: OutlierSet,
    normals: Vec<usize>,
}

fn setup(graph: &Graph, split: &Split, config: &TrainConfig) -> Result<Setup> {
    config.validate()?;
    if split.labeled_normals.is_empty() {
        return Err(GgadError::EmptySet);
    }
    let root = Rng::new(config.seed);
    let dims = ModelDims { features: graph.num_features(), hidden: config.hidden, rep: config.dim };
    let params = ModelParams::init(dims, &mut root.fork(STREAM_INIT));
    let anchors = select_anchors(&split.labeled_normals, graph, config.s_ratio, &mut root.fork(STREAM_ANCHORS))?;
    let outliers =
        OutlierSet::prepare(config.outlier_strategy, anchors, config.dim, config.noise(), &mut root.fork(STREAM_NOISE))?;
    let mut normals = split.labeled_normals.clone();
    if config.outlier_strategy == OutlierStrategy::Random {
        normals.retain(|v| !outliers.anchors.contains(v));
        if normals.is_empty() {
            return Err(GgadError::InsufficientNodes("no labeled normals left after relabeling".into()));
        }
    }
    Ok(Setup { params, outliers, normals })
}

/// Full-batch training on the whole graph.
pub fn train_full_batch(graph: &Graph, split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    let Setup { mut params, outliers, normals } = setup(graph, split, config)?;
    let adj = normalize_adjacency(graph);
    let obj = Objective::new(&adj, graph.features(), normals, outliers, config.weights())?;
    let mut adam = AdamState::new(params.dims);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let cache = forward(&params, &obj)?;
        if !cache.losses.is_finite() {
            return Err(GgadError::NonFiniteLoss { epoch });
        }
        log.push(cache.losses);
        let grads = backward(&params, &obj, &cache)?;
        adam_step(&mut params, &grads, &mut adam, config.lr)?;
    }
    Ok(TrainOutcome { params, log, outliers: obj.outliers })
}

/// One batch: its training nodes, its outliers and its closed subgraph.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    /// Training nodes of the batch, global ids, sorted.
    pub nodes: Vec<usize>,
    /// Indices into the run's outlier set, sorted.
    pub outlier_rows: Vec<usize>,
    /// 2-hop closure of `nodes`, global ids, sorted. Local id `i` ↔ `closure[i]`.
    pub closure: Vec<usize>,
    /// Restriction of the full-graph normalized adjacency to `closure`.
    pub adj: NormalizedAdjacency,
}

impl MiniBatch {
    pub fn local(&self, v: usize) -> usize {
        self.closure.binary_search(&v).expect("node inside closure")
    }
}

#[derive(Debug, Clone)]
pub struct MiniBatchPlan {
    pub batches: Vec<MiniBatch>,
}

/// Shuffled partition of `train` into batches of about `batch_size`, with
/// the outlier rows dealt round-robin so every batch gets at least one.
/// Anchors travel with their outlier row.
pub fn plan_minibatches(
    graph: &Graph,
    adj: &NormalizedAdjacency,
    train: &[usize],
    outliers: &OutlierSet,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<MiniBatchPlan> {
    if batch_size < 2 {
        return Err(GgadError::BatchTooSmall(batch_size));
    }
    if train.is_empty() || outliers.is_empty() {
        return Err(GgadError::EmptySet);
    }
    let anchored = !outliers.anchors.is_empty();
    let mut is_anchor = vec![false; graph.num_nodes()];
    for &a in &outliers.anchors {
        is_anchor[a] = true;
    }
    let mut rest: Vec<usize> = train.iter().copied().filter(|&v| !is_anchor[v]).collect();
    let wanted = train.len().div_ceil(batch_size);
    let z = wanted.min(outliers.len()).min(rest.len().max(1)).max(1);

    let mut rows: Vec<usize> = (0..outliers.len()).collect();
    rng.shuffle(&mut rows);
    rng.shuffle(&mut rest);

    let mut nodes = vec![Vec::new(); z];
    let mut outlier_rows = vec![Vec::new(); z];
    for (i, &r) in rows.iter().enumerate() {
        outlier_rows[i % z].push(r);
        if anchored {
            nodes[i % z].push(outliers.anchors[r]);
        }
    }
    for (i, &v) in rest.iter().enumerate() {
        nodes[i % z].push(v);
    }

    let mut batches = Vec::with_capacity(z);
    for (mut nodes, mut outlier_rows) in nodes.into_iter().zip(outlier_rows) {
        nodes.sort_unstable();
        nodes.dedup();
        outlier_rows.sort_unstable();
        let closure = khop_nodes(graph, &nodes, 2)?;
        let sub = adj.restrict(&closure);
        batches.push(MiniBatch { nodes, outlier_rows, closure, adj: sub });
    }
    Ok(MiniBatchPlan { batches })
}

struct BatchData {
    features: DenseMatrix,
    normals: Vec<usize>,
    outliers: OutlierSet,
}

fn batch_data(graph: &Graph, batch: &MiniBatch, normals_global: &[bool], all: &OutlierSet) -> BatchData {
    let features = graph.features().select_rows(&batch.closure);
    let normals = batch.nodes.iter().filter(|&&v| normals_global[v]).map(|&v| batch.local(v)).collect();
    let outliers = all.subset(&batch.outlier_rows, |v| batch.local(v));
    BatchData { features, normals, outliers }
}

/// Mini-batch training: one Adam step per batch, batch order reshuffled
/// every epoch. The logged bundle of an epoch is the mean over its batches.
pub fn train_minibatch(graph: &Graph, split: &Split, config: &TrainConfig, batch_size: usize) -> Result<TrainOutcome> {
    let Setup { mut params, outliers, normals } = setup(graph, split, config)?;
    let adj = normalize_adjacency(graph);
    let mut rng = Rng::new(config.seed).fork(STREAM_BATCHES);
    let plan = plan_minibatches(graph, &adj, &split.labeled_normals, &outliers, batch_size, &mut rng)?;

    let mut is_normal = vec![false; graph.num_nodes()];
    for &v in &normals {
        is_normal[v] = true;
    }
    let data: Vec<BatchData> = plan.batches.iter().map(|b| batch_data(graph, b, &is_normal, &outliers)).collect();
    let objectives = plan
        .batches
        .iter()
        .zip(&data)
        .map(|(b, d)| Objective::new(&b.adj, &d.features, d.normals.clone(), d.outliers.clone(), config.weights()))
        .collect::<Result<Vec<_>>>()?;

    let mut adam = AdamState::new(params.dims);
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..objectives.len()).collect();
    for epoch in 1..=config.epochs {
        if objectives.len() > 1 {
            rng.shuffle(&mut order);
        }
        let mut acc = [0.0f64; 6];
        for &b in &order {
            let obj = &objectives[b];
            let cache = forward(&params, obj)?;
            if !cache.losses.is_finite() {
                return Err(GgadError::NonFiniteLoss { epoch });
            }
            let l = cache.losses;
            for (a, x) in acc.iter_mut().zip([l.l_bce, l.l_ala, l.l_ec, l.l_total, l.tau_normal, l.tau_outlier]) {
                *a += x;
            }
            let grads = backward(&params, obj, &cache)?;
            adam_step(&mut params, &grads, &mut adam, config.lr)?;
        }
        let k = objectives.len() as f64;
        log.push(LossBundle {
            l_bce: acc[0] / k,
            l_ala: acc[1] / k,
            l_ec: acc[2] / k,
            l_total: acc[3] / k,
            tau_normal: acc[4] / k,
            tau_outlier: acc[5] / k,
        });
    }
    Ok(TrainOutcome { params, log, outliers })
}

/// Full-batch or mini-batch, per [`TrainConfig::effective_batch_size`].
pub fn train(graph: &Graph, split: &Split, config: &TrainConfig) -> Result<TrainOutcome> {
    match config.effective_batch_size(graph.num_nodes()) {
        Some(b) => train_minibatch(graph, split, config, b),
        None => train_full_batch(graph, split, config),
    }
}

/// Final representations of every node.
pub fn embed(params: &ModelParams, graph: &Graph) -> Result<DenseMatrix> {
    let adj = normalize_adjacency(graph);
    Ok(gcn_forward(params, &adj, graph.features())?.0)
}

pub const MODEL_FORMAT: &str = "ggad-model/1";

/// On-disk model: parameters plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub params: ModelParams,
}

impl SavedModel {
    pub fn new(config: &TrainConfig, params: ModelParams) -> Self {
        Self { format: MODEL_FORMAT.into(), seed: config.seed, config: config.clone(), params }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(GgadError::MissingFile(path.to_path_buf()));
        }
        let model: SavedModel = serde_json::from_str(&fs::read_to_string(path)?)?;
        if model.format != MODEL_FORMAT {
            return Err(GgadError::InvalidParams(format!("unknown model format {:?}", model.format)));
        }
        if !model.params.is_finite() {
            return Err(GgadError::InvalidParams("model contains non-finite weights".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::node_set;
    use approx::assert_abs_diff_eq;

    fn dims() -> ModelDims {
        ModelDims { features: 1, hidden: 1, rep: 1 }
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = ModelParams::init(dims(), &mut Rng::new(0));
        let before = p.clone();
        let mut g = Gradients::zeros(dims());
        g.b_cls = 1.0;
        g.w_cls[0] = -3.0;
        let mut s = AdamState::new(dims());
        adam_step(&mut p, &g, &mut s, 1e-3).unwrap();
        assert_abs_diff_eq!(p.b_cls - before.b_cls, -1e-3 / (1.0 + 1e-8), epsilon = 1e-18);
        assert_abs_diff_eq!(p.w_cls[0] - before.w_cls[0], 1e-3 * 3.0 / (3.0 + 1e-8), epsilon = 1e-15);
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = ModelParams::init(dims(), &mut Rng::new(0));
        let before = p.clone();
        let mut s = AdamState::new(dims());
        s.m.b_cls = 0.5;
        s.v.b_cls = 0.25;
        adam_step(&mut p, &Gradients::zeros(dims()), &mut s, 1e-3).unwrap();
        assert_eq!(p.w1, before.w1);
        assert_eq!(s.m.b_cls, 0.45);
        assert_abs_diff_eq!(s.v.b_cls, 0.25 * 0.999, epsilon = 1e-16);
        // b_cls still moves because its moments are nonzero
        assert_ne!(p.b_cls, before.b_cls);
    }

    #[test]
    fn adam_two_steps_hand_unrolled() {
        let mut p = ModelParams::init(dims(), &mut Rng::new(0));
        let theta0 = p.b_cls;
        let mut s = AdamState::new(dims());
        let (g1, g2, lr) = (0.5, -0.2, 0.01);
        for g in [g1, g2] {
            let mut grads = Gradients::zeros(dims());
            grads.b_cls = g;
            adam_step(&mut p, &grads, &mut s, lr).unwrap();
        }
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let theta1 = theta0 - lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let theta2 = theta1 - lr * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.999f64.powi(2))).sqrt() + 1e-8);
        assert_abs_diff_eq!(p.b_cls, theta2, epsilon = 1e-15);
    }

    #[test]
    fn adam_rejects_mismatched_state() {
        let mut p = ModelParams::init(dims(), &mut Rng::new(0));
        let mut s = AdamState::new(ModelDims { features: 2, hidden: 1, rep: 1 });
        assert!(matches!(
            adam_step(&mut p, &Gradients::zeros(dims()), &mut s, 1e-3),
            Err(GgadError::ShapeMismatch(_))
        ));
    }

    fn chain(n: usize) -> Graph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::new(n, &edges, DenseMatrix::zeros(n, 1), None).unwrap()
    }

    fn ggad_set(anchors: Vec<usize>) -> OutlierSet {
        let noise = OutlierNoise { eps_mean: 0.01, eps_std: 0.005, perturb_std: 0.1 };
        OutlierSet::prepare(OutlierStrategy::Ggad, anchors, 2, noise, &mut Rng::new(0)).unwrap()
    }

    #[test]
    fn plan_chain_closure() {
        let g = chain(5);
        let adj = normalize_adjacency(&g);
        let plan = plan_minibatches(&g, &adj, &[0], &ggad_set(vec![0]), 4, &mut Rng::new(1)).unwrap();
        assert_eq!(plan.batches.len(), 1);
        assert_eq!(plan.batches[0].closure, vec![0, 1, 2]);
    }

    #[test]
    fn plan_single_batch_when_large() {
        let g = chain(6);
        let adj = normalize_adjacency(&g);
        let train = [1, 2, 4];
        let plan = plan_minibatches(&g, &adj, &train, &ggad_set(vec![2]), 10, &mut Rng::new(1)).unwrap();
        assert_eq!(plan.batches.len(), 1);
        assert_eq!(plan.batches[0].nodes, train);
        assert_eq!(plan.batches[0].closure, khop_nodes(&g, &train, 2).unwrap());
        assert_eq!(plan.batches[0].adj, adj.restrict(&plan.batches[0].closure));
    }

    #[test]
    fn plan_partitions_training_nodes() {
        let n = 300;
        let mut rng = Rng::new(4);
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.uniform() < 0.02 {
                    edges.push((u, v));
                }
            }
        }
        let g = Graph::new(n, &edges, DenseMatrix::zeros(n, 1), None).unwrap();
        let adj = normalize_adjacency(&g);
        let train: Vec<usize> = (0..n).step_by(2).collect();
        let anchors = select_anchors(&train, &g, 0.1, &mut rng).unwrap();
        let set = ggad_set(anchors);
        let plan = plan_minibatches(&g, &adj, &train, &set, 16, &mut rng).unwrap();
        let mut seen: Vec<usize> = plan.batches.iter().flat_map(|b| b.nodes.clone()).collect();
        let total = seen.len();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), total, "duplicated nodes across batches");
        assert_eq!(seen, train);
        let mut rows: Vec<usize> = plan.batches.iter().flat_map(|b| b.outlier_rows.clone()).collect();
        rows.sort_unstable();
        assert_eq!(rows, (0..set.len()).collect::<Vec<_>>());
        for b in &plan.batches {
            assert!(!b.outlier_rows.is_empty());
            assert!(!b.nodes.is_empty());
            for &r in &b.outlier_rows {
                assert!(b.nodes.contains(&set.anchors[r]));
            }
            assert_eq!(node_set(&b.closure), node_set(&khop_nodes(&g, &b.nodes, 2).unwrap()));
        }
    }

    #[test]
    fn plan_rejects_tiny_batches() {
        let g = chain(3);
        let adj = normalize_adjacency(&g);
        assert!(matches!(
            plan_minibatches(&g, &adj, &[0], &ggad_set(vec![0]), 1, &mut Rng::new(0)),
            Err(GgadError::BatchTooSmall(1))
        ));
    }

    #[test]
    fn config_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.alpha, c.beta, c.lambda), (1e-3, 0.7, 1.0, 1.0));
        assert_eq!((c.s_ratio, c.eps_mean, c.eps_std), (0.05, 0.01, 0.005));
        assert_eq!((c.hidden, c.dim, c.epochs), (128, 64, 200));
        assert_eq!(c.effective_batch_size(1000), None);
        assert_eq!(c.effective_batch_size(300_000), Some(DEFAULT_BATCH_SIZE));
        let w = TrainConfig { disable_ala: true, ..c.clone() }.weights();
        assert_eq!((w.beta, w.lambda), (0.0, 1.0));
        assert!(TrainConfig { lr: 0.0, ..c.clone() }.validate().is_err());
        assert!(matches!(TrainConfig { batch_size: Some(1), ..c }.validate(), Err(GgadError::BatchTooSmall(1))));
    }
}
