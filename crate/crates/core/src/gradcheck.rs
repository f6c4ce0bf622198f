//! Seeded random instances for checking analytic gradients against finite
//! differences.

use crate::error::Result;
use crate::graph::{normalize_adjacency, Graph, NormalizedAdjacency};
use crate::linalg::{gaussian, Rng};
use crate::model::{gradient_check, GradCheckReport, LossWeights, ModelDims, ModelParams, Objective};
use crate::outliers::{select_anchors, OutlierNoise, OutlierSet, OutlierStrategy};

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct InstanceShape {
    pub nodes: usize,
    pub features: usize,
    pub hidden: usize,
    pub rep: usize,
    pub labeled: usize,
    pub outliers: usize,
}

impl Default for InstanceShape {
    fn default() -> Self {
        Self { nodes: 20, features: 8, hidden: 8, rep: 4, labeled: 8, outliers: 2 }
    }
}

/// A small random graph with a ring backbone (every node has degree ≥ 2),
/// random parameters including nonzero biases, and the outlier set.
pub struct GradCheckInstance {
    pub graph: Graph,
    pub adj: NormalizedAdjacency,
    pub normals: Vec<usize>,
    pub outliers: OutlierSet,
    pub params: ModelParams,
}

impl GradCheckInstance {
    pub fn random(seed: u64, shape: InstanceShape, strategy: OutlierStrategy) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let n = shape.nodes;
        let mut edges: Vec<(usize, usize)> = (0..n).map(|u| (u, (u + 1) % n)).collect();
        for u in 0..n {
            for v in (u + 2)..n {
                if rng.uniform() < 0.15 {
                    edges.push((u, v));
                }
            }
        }
        let x = gaussian(&mut rng, 0.0, 1.0, n, shape.features)?;
        let graph = Graph::new(n, &edges, x, None)?;
        let adj = normalize_adjacency(&graph);
        let all: Vec<usize> = (0..n).collect();
        let mut labeled = rng.sample_without_replacement(&all, shape.labeled);
        labeled.sort_unstable();
        let ratio = shape.outliers as f64 / shape.labeled as f64;
        let anchors = select_anchors(&labeled, &graph, ratio, &mut rng)?;
        let noise = OutlierNoise { eps_mean: 0.01, eps_std: 0.005, perturb_std: 0.1 };
        let outliers = OutlierSet::prepare(strategy, anchors, shape.rep, noise, &mut rng)?;
        let dims = ModelDims { features: shape.features, hidden: shape.hidden, rep: shape.rep };
        let mut params = ModelParams::init(dims, &mut rng);
        params.b1 = gaussian(&mut rng, 0.05, 0.05, 1, shape.hidden)?.into_vec();
        params.b2 = gaussian(&mut rng, 0.05, 0.05, 1, shape.rep)?.into_vec();
        params.b_cls = rng.normal(0.0, 0.5);
        let mut normals = labeled;
        if strategy == OutlierStrategy::Random {
            normals.retain(|v| !outliers.anchors.contains(v));
        }
        Ok(Self { graph, adj, normals, outliers, params })
    }

    pub fn objective(&self, weights: LossWeights) -> Result<Objective<'_>> {
        Objective::new(&self.adj, self.graph.features(), self.normals.clone(), self.outliers.clone(), weights)
    }

    pub fn check(&self, weights: LossWeights) -> Result<GradCheckReport> {
        gradient_check(&self.params, &self.objective(weights)?, FD_STEP)
    }
}

/// Default-weight gradient check on the default instance shape.
pub fn run(seed: u64) -> Result<GradCheckReport> {
    let inst = GradCheckInstance::random(seed, InstanceShape::default(), OutlierStrategy::Ggad)?;
    inst.check(LossWeights { alpha: 0.7, beta: 1.0, lambda: 1.0 })
}

