//! Two-layer GCN encoder, ego-network outlier generator and one-class head,
//! with reverse-mode gradients of the full training objective written out
//! by hand.
//!
//! Row convention: representations are row vectors, so a layer computes
//! `Â·H·W + b` and the generator computes `ReLU(h_j · W_gen)`.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{GgadError, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{axpy, cosine_backward, dot, glorot_init, spmm, DenseMatrix, Rng};
use crate::losses::{self, LossBundle, LossParts, PROB_CLAMP};
use crate::outliers::{make_outliers, GeneratorCache, OutlierSet, OutlierStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub features: usize,
    pub hidden: usize,
    pub rep: usize,
}

impl ModelDims {
    pub fn param_count(&self) -> usize {
        let (f, h, d) = (self.features, self.hidden, self.rep);
        f * h + h + h * d + d + d * d + d + 1
    }
}

pub const TENSOR_NAMES: [&str; 7] = ["w1", "b1", "w2", "b2", "w_gen", "w_cls", "b_cls"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub w_gen: DenseMatrix,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
}

/// Same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: DenseMatrix,
    pub b1: Vec<f64>,
    pub w2: DenseMatrix,
    pub b2: Vec<f64>,
    pub w_gen: DenseMatrix,
    pub w_cls: Vec<f64>,
    pub b_cls: f64,
}

macro_rules! tensor_views {
    ($t:ty) => {
        impl $t {
            /// Flat views in [`TENSOR_NAMES`] order.
            pub fn tensors(&self) -> [&[f64]; 7] {
                [
                    self.w1.as_slice(),
                    &self.b1,
                    self.w2.as_slice(),
                    &self.b2,
                    self.w_gen.as_slice(),
                    &self.w_cls,
                    std::slice::from_ref(&self.b_cls),
                ]
            }

            pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
                [
                    self.w1.as_mut_slice(),
                    &mut self.b1,
                    self.w2.as_mut_slice(),
                    &mut self.b2,
                    self.w_gen.as_mut_slice(),
                    &mut self.w_cls,
                    std::slice::from_mut(&mut self.b_cls),
                ]
            }

            pub fn is_finite(&self) -> bool {
                self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
            }
        }
    };
}

tensor_views!(ModelParams);
tensor_views!(Gradients);

impl ModelParams {
    /// Glorot weights, zero biases.
    pub fn init(dims: ModelDims, rng: &mut Rng) -> Self {
        let ModelDims { features: f, hidden: h, rep: d } = dims;
        Self {
            dims,
            w1: glorot_init(rng, f, h),
            b1: vec![0.0; h],
            w2: glorot_init(rng, h, d),
            b2: vec![0.0; d],
            w_gen: glorot_init(rng, d, d),
            w_cls: glorot_init(rng, d, 1).into_vec(),
            b_cls: 0.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn fingerprint(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        for t in self.tensors() {
            for v in t {
                v.to_bits().hash(&mut hasher);
            }
        }
        hasher.finish()
    }

    pub fn check_shapes(&self) -> Result<()> {
        let ModelDims { features: f, hidden: h, rep: d } = self.dims;
        let ok = self.w1.shape() == (f, h)
            && self.b1.len() == h
            && self.w2.shape() == (h, d)
            && self.b2.len() == d
            && self.w_gen.shape() == (d, d)
            && self.w_cls.len() == d;
        if ok {
            Ok(())
        } else {
            Err(GgadError::ShapeMismatch(format!("parameters inconsistent with {:?}", self.dims)))
        }
    }
}

impl Gradients {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims { features: f, hidden: h, rep: d } = dims;
        Self {
            w1: DenseMatrix::zeros(f, h),
            b1: vec![0.0; h],
            w2: DenseMatrix::zeros(h, d),
            b2: vec![0.0; d],
            w_gen: DenseMatrix::zeros(d, d),
            w_cls: vec![0.0; d],
            b_cls: 0.0,
        }
    }
}

/// Intermediate values of the encoder.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â·X`
    pub agg_x: DenseMatrix,
    pub z1: DenseMatrix,
    /// `Â·ReLU(z1)`
    pub agg_a1: DenseMatrix,
    pub z2: DenseMatrix,
}

/// `H = ReLU(Â·ReLU(Â·X·W1 + b1)·W2 + b2)`
pub fn gcn_forward(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &DenseMatrix,
) -> Result<(DenseMatrix, GcnCache)> {
    params.check_shapes()?;
    if x.cols() != params.dims.features {
        return Err(GgadError::ShapeMismatch(format!(
            "features have {} columns, model expects {}",
            x.cols(),
            params.dims.features
        )));
    }
    let agg_x = spmm(adj, x)?;
    let mut z1 = agg_x.matmul(&params.w1)?;
    z1.add_row_vector(&params.b1);
    let agg_a1 = spmm(adj, &z1.relu())?;
    let mut z2 = agg_a1.matmul(&params.w2)?;
    z2.add_row_vector(&params.b2);
    let h = z2.relu();
    Ok((h, GcnCache { agg_x, z1, agg_a1, z2 }))
}

/// `ĥ_i = (1/|N_i|) Σ_{j∈N_i} ReLU(h_j · W_gen)`; row `i` follows `egos[i]`.
pub fn generate_outliers(params: &ModelParams, h: &DenseMatrix, egos: &[Vec<usize>]) -> Result<DenseMatrix> {
    generate_outliers_cached(params, h, egos).map(|(hh, _)| hh)
}

pub(crate) fn generate_outliers_cached(
    params: &ModelParams,
    h: &DenseMatrix,
    egos: &[Vec<usize>],
) -> Result<(DenseMatrix, GeneratorCache)> {
    let d = params.dims.rep;
    if h.cols() != d {
        return Err(GgadError::ShapeMismatch(format!("representations have {} columns, expected {d}", h.cols())));
    }
    let mut out = DenseMatrix::zeros(egos.len(), d);
    let mut cache = Vec::with_capacity(egos.len());
    for (i, ego) in egos.iter().enumerate() {
        if ego.is_empty() {
            return Err(GgadError::EmptyEgoNetwork(i));
        }
        let pre = h.select_rows(ego).matmul(&params.w_gen)?;
        let inv = 1.0 / ego.len() as f64;
        let row = out.row_mut(i);
        for r in 0..pre.rows() {
            for (o, &u) in row.iter_mut().zip(pre.row(r)) {
                *o += inv * u.max(0.0);
            }
        }
        cache.push(pre);
    }
    Ok((out, cache))
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One-class head: clamped `sigmoid(row · w_cls + b_cls)` per row.
pub fn classify(params: &ModelParams, rows: &DenseMatrix) -> Result<Vec<f64>> {
    if rows.cols() != params.w_cls.len() {
        return Err(GgadError::ShapeMismatch(format!(
            "classifier expects {} columns, got {}",
            params.w_cls.len(),
            rows.cols()
        )));
    }
    Ok((0..rows.rows())
        .map(|r| losses::clamp_prob(sigmoid(dot(rows.row(r), &params.w_cls) + params.b_cls)))
        .collect())
}

/// Effective loss weights; a switched-off term has weight 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
}

/// The data one training step sees: a (sub)graph, its features, the
/// labeled normals (y = 1) and the outliers (y = 0), all in local ids.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub adj: &'a NormalizedAdjacency,
    pub features: &'a DenseMatrix,
    pub normals: Vec<usize>,
    pub outliers: OutlierSet,
    pub weights: LossWeights,
    normal_egos: Vec<Vec<usize>>,
    anchor_egos: Vec<Vec<usize>>,
}

impl<'a> Objective<'a> {
    pub fn new(
        adj: &'a NormalizedAdjacency,
        features: &'a DenseMatrix,
        normals: Vec<usize>,
        outliers: OutlierSet,
        weights: LossWeights,
    ) -> Result<Self> {
        let n = adj.num_nodes();
        if features.rows() != n {
            return Err(GgadError::ShapeMismatch(format!("{} feature rows for {n} nodes", features.rows())));
        }
        if normals.is_empty() {
            return Err(GgadError::EmptySet);
        }
        for &v in normals.iter().chain(&outliers.anchors) {
            if v >= n {
                return Err(GgadError::NodeOutOfRange { node: v, num_nodes: n });
            }
        }
        if outliers.strategy.needs_anchors() && outliers.anchors.len() != outliers.len() {
            return Err(GgadError::ShapeMismatch("one anchor per outlier row required".into()));
        }
        let egos = |nodes: &[usize]| nodes.iter().map(|&v| adj.neighbors(v).collect()).collect();
        let normal_egos = egos(&normals);
        let anchor_egos: Vec<Vec<usize>> = egos(&outliers.anchors);
        if matches!(outliers.strategy, OutlierStrategy::Ggad | OutlierStrategy::Nlo) {
            if let Some(i) = anchor_egos.iter().position(Vec::is_empty) {
                return Err(GgadError::EmptyEgoNetwork(outliers.anchors[i]));
            }
        }
        Ok(Self { adj, features, normals, outliers, weights, normal_egos, anchor_egos })
    }

    pub fn num_outliers(&self) -> usize {
        self.outliers.len()
    }

    /// Whether the affinity and closeness terms apply. Noise outliers have no
    /// ego network or counterpart normal node, so both are inactive.
    fn priors_apply(&self) -> bool {
        self.outliers.strategy.needs_anchors() && !self.outliers.is_empty()
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub h: DenseMatrix,
    pub gcn: GcnCache,
    pub h_hat: DenseMatrix,
    generator: Option<GeneratorCache>,
    /// Pre-clamp sigmoid outputs: normals first, then outliers.
    pub raw_probs: Vec<f64>,
    pub probs: Vec<f64>,
    pub tau_normal_nodes: Vec<f64>,
    pub tau_outlier_nodes: Vec<f64>,
    pub losses: LossBundle,
    fingerprint: u64,
}

/// Full forward pass: representations, outliers, classifier and all losses.
pub fn forward(params: &ModelParams, obj: &Objective<'_>) -> Result<ForwardCache> {
    forward_with(params, obj, None)
}

/// `frozen` replaces the outlier rows with constants, which is what a
/// detached strategy looks like to a finite-difference probe.
fn forward_with(params: &ModelParams, obj: &Objective<'_>, frozen: Option<&DenseMatrix>) -> Result<ForwardCache> {
    let (h, gcn) = gcn_forward(params, obj.adj, obj.features)?;
    let (h_hat, generator) = match frozen {
        Some(f) => (f.clone(), None),
        None => make_outliers(&obj.outliers, params, &h, &obj.anchor_egos)?,
    };

    let mut raw_probs = Vec::with_capacity(obj.normals.len() + h_hat.rows());
    for &v in &obj.normals {
        raw_probs.push(sigmoid(dot(h.row(v), &params.w_cls) + params.b_cls));
    }
    for i in 0..h_hat.rows() {
        raw_probs.push(sigmoid(dot(h_hat.row(i), &params.w_cls) + params.b_cls));
    }
    let probs: Vec<f64> = raw_probs.iter().map(|&p| losses::clamp_prob(p)).collect();
    let labels: Vec<u8> = (0..probs.len()).map(|i| (i < obj.normals.len()) as u8).collect();
    let bce = losses::bce_loss(&probs, &labels)?;

    let tau_normal_nodes: Vec<f64> = obj
        .normals
        .iter()
        .zip(&obj.normal_egos)
        .map(|(&v, ego)| losses::affinity(h.row(v), &h, ego))
        .collect();
    let tau_normal = mean(&tau_normal_nodes);

    let mut parts = LossParts { bce, tau_normal, ..Default::default() };
    let mut tau_outlier_nodes = Vec::new();
    if obj.priors_apply() {
        tau_outlier_nodes = obj
            .anchor_egos
            .iter()
            .enumerate()
            .map(|(i, ego)| losses::affinity(h_hat.row(i), &h, ego))
            .collect();
        parts.tau_outlier = mean(&tau_outlier_nodes);
        parts.ala = losses::ala_loss(tau_normal, parts.tau_outlier, obj.weights.alpha);
        let anchor_rows = h.select_rows(&obj.outliers.anchors);
        parts.ec = losses::ec_loss(&anchor_rows, &h_hat, &obj.outliers.eps)?;
    }
    let bundle = losses::total_loss(parts, obj.weights.beta, obj.weights.lambda);

    Ok(ForwardCache {
        h,
        gcn,
        h_hat,
        generator,
        raw_probs,
        probs,
        tau_normal_nodes,
        tau_outlier_nodes,
        losses: bundle,
        fingerprint: params.fingerprint(),
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Exact gradient of `l_total` for the forward pass recorded in `cache`.
pub fn backward(params: &ModelParams, obj: &Objective<'_>, cache: &ForwardCache) -> Result<Gradients> {
    if cache.fingerprint != params.fingerprint() {
        return Err(GgadError::StaleCache);
    }
    let d = params.dims.rep;
    let h = &cache.h;
    let mut grads = Gradients::zeros(params.dims);
    let mut dh = DenseMatrix::zeros(h.rows(), d);
    let mut dh_hat = DenseMatrix::zeros(cache.h_hat.rows(), d);
    let n_normals = obj.normals.len();

    // BCE: dℓ/dz = (p − y)/n; the clamp is flat, so saturated samples give 0.
    let n_cls = cache.raw_probs.len() as f64;
    for (i, &p) in cache.raw_probs.iter().enumerate() {
        if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
            continue;
        }
        let y = if i < n_normals { 1.0 } else { 0.0 };
        let dz = (p - y) / n_cls;
        let (row, grad_row) = if i < n_normals {
            let v = obj.normals[i];
            (h.row(v), dh.row_mut(v))
        } else {
            let r = i - n_normals;
            (cache.h_hat.row(r), dh_hat.row_mut(r))
        };
        axpy(dz, row, &mut grads.w_cls);
        grads.b_cls += dz;
        axpy(dz, &params.w_cls, grad_row);
    }

    if obj.priors_apply() {
        let w = obj.weights;
        let losses = &cache.losses;
        let (g_normal, g_outlier) = losses::ala_grad(losses.tau_normal, losses.tau_outlier, w.alpha);
        let (g_normal, g_outlier) = (w.beta * g_normal, w.beta * g_outlier);
        let mut tmp_c = vec![0.0; d];
        let mut tmp_n = vec![0.0; d];

        if g_normal != 0.0 {
            for (&v, ego) in obj.normals.iter().zip(&obj.normal_egos) {
                if ego.is_empty() {
                    continue;
                }
                let scale = g_normal / (n_normals * ego.len()) as f64;
                for &j in ego {
                    tmp_c.iter_mut().for_each(|x| *x = 0.0);
                    tmp_n.iter_mut().for_each(|x| *x = 0.0);
                    cosine_backward(h.row(v), h.row(j), scale, Some(&mut tmp_c), Some(&mut tmp_n));
                    axpy(1.0, &tmp_c, dh.row_mut(v));
                    axpy(1.0, &tmp_n, dh.row_mut(j));
                }
            }
        }
        if g_outlier != 0.0 {
            let s = obj.num_outliers();
            for (i, ego) in obj.anchor_egos.iter().enumerate() {
                if ego.is_empty() {
                    continue;
                }
                let scale = g_outlier / (s * ego.len()) as f64;
                for &j in ego {
                    tmp_n.iter_mut().for_each(|x| *x = 0.0);
                    cosine_backward(cache.h_hat.row(i), h.row(j), scale, Some(dh_hat.row_mut(i)), Some(&mut tmp_n));
                    axpy(1.0, &tmp_n, dh.row_mut(j));
                }
            }
        }

        if w.lambda != 0.0 {
            let k = 2.0 * w.lambda / obj.num_outliers() as f64;
            for (i, &a) in obj.outliers.anchors.iter().enumerate() {
                for c in 0..d {
                    let r = cache.h_hat.get(i, c) - h.get(a, c) - obj.outliers.eps.get(i, c);
                    dh_hat.row_mut(i)[c] += k * r;
                    dh.row_mut(a)[c] -= k * r;
                }
            }
        }
    }

    // Route outlier gradients back into the encoder / generator.
    match obj.outliers.strategy {
        OutlierStrategy::Ggad => {
            let pre = cache.generator.as_ref().expect("generator cache present for ggad");
            let mut g = vec![0.0; d];
            let mut back = vec![0.0; d];
            for (i, ego) in obj.anchor_egos.iter().enumerate() {
                let inv = 1.0 / ego.len() as f64;
                let upstream = dh_hat.row(i);
                for (r, &j) in ego.iter().enumerate() {
                    let mut any = false;
                    for ((gc, &u), &up) in g.iter_mut().zip(pre[i].row(r)).zip(upstream) {
                        *gc = if u > 0.0 { inv * up } else { 0.0 };
                        any |= *gc != 0.0;
                    }
                    if !any {
                        continue;
                    }
                    let hj = h.row(j);
                    for (a, &hja) in hj.iter().enumerate() {
                        if hja != 0.0 {
                            axpy(hja, &g, grads.w_gen.row_mut(a));
                        }
                    }
                    for (a, b) in back.iter_mut().enumerate() {
                        *b = dot(params.w_gen.row(a), &g);
                    }
                    axpy(1.0, &back, dh.row_mut(j));
                }
            }
        }
        OutlierStrategy::Nlo => {
            for (i, ego) in obj.anchor_egos.iter().enumerate() {
                let inv = 1.0 / ego.len() as f64;
                let upstream = dh_hat.row(i).to_vec();
                for &j in ego {
                    axpy(inv, &upstream, dh.row_mut(j));
                }
            }
        }
        OutlierStrategy::Random => {
            for (i, &a) in obj.outliers.anchors.iter().enumerate() {
                let upstream = dh_hat.row(i).to_vec();
                axpy(1.0, &upstream, dh.row_mut(a));
            }
        }
        OutlierStrategy::Noise | OutlierStrategy::Gaussianp => {}
    }

    // Encoder.
    let gcn = &cache.gcn;
    let mut dz2 = dh;
    dz2.mask_relu_grad(&gcn.z2);
    grads.w2 = gcn.agg_a1.t_matmul(&dz2)?;
    grads.b2 = dz2.sum_rows();
    // Â is symmetric, so Âᵀ·G = Â·G.
    let mut dz1 = spmm(obj.adj, &dz2.matmul_t(&params.w2)?)?;
    dz1.mask_relu_grad(&gcn.z1);
    grads.w1 = gcn.agg_x.t_matmul(&dz1)?;
    grads.b1 = dz1.sum_rows();
    Ok(grads)
}

/// Result of comparing [`backward`] with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `(tensor name, ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, 1e-8))`
    pub per_tensor: Vec<(&'static str, f64)>,
    pub max_abs_diff: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Central differences of `l_total` with step `step` for every parameter.
/// Outliers of non-differentiable strategies are held at their unperturbed
/// value.
pub fn numeric_gradients(params: &ModelParams, obj: &Objective<'_>, step: f64) -> Result<Gradients> {
    let frozen = if obj.outliers.strategy.is_differentiable() { None } else { Some(forward(params, obj)?.h_hat) };
    let frozen = frozen.as_ref();
    let mut probe = params.clone();
    let mut out = Gradients::zeros(params.dims);
    for t in 0..TENSOR_NAMES.len() {
        for k in 0..params.tensors()[t].len() {
            let orig = params.tensors()[t][k];
            probe.tensors_mut()[t][k] = orig + step;
            let plus = forward_with(&probe, obj, frozen)?.losses.l_total;
            probe.tensors_mut()[t][k] = orig - step;
            let minus = forward_with(&probe, obj, frozen)?.losses.l_total;
            probe.tensors_mut()[t][k] = orig;
            out.tensors_mut()[t][k] = (plus - minus) / (2.0 * step);
        }
    }
    Ok(out)
}

pub fn gradient_check(params: &ModelParams, obj: &Objective<'_>, step: f64) -> Result<GradCheckReport> {
    let cache = forward(params, obj)?;
    let analytic = backward(params, obj, &cache)?;
    let numeric = numeric_gradients(params, obj, step)?;
    let mut per_tensor = Vec::new();
    let mut max_abs_diff = 0.0f64;
    for ((name, a), n) in TENSOR_NAMES.iter().zip(analytic.tensors()).zip(numeric.tensors()) {
        let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        per_tensor.push((*name, diff / na.max(nn).max(1e-8)));
        for (x, y) in a.iter().zip(n) {
            max_abs_diff = max_abs_diff.max((x - y).abs());
        }
    }
    Ok(GradCheckReport { per_tensor, max_abs_diff })
}
