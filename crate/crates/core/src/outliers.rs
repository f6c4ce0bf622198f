//! Anchor selection and outlier-representation strategies.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GgadError, Result};
use crate::graph::Graph;
use crate::linalg::{gaussian, DenseMatrix, Rng};
use crate::model::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutlierStrategy {
    /// Learnable ego-network generator.
    Ggad,
    /// Sampled normal nodes relabeled as outliers.
    Random,
    /// Mean of the ego network with no learnable transform.
    Nlo,
    /// Standard-normal vectors, fixed at initialization.
    Noise,
    /// Anchor representation plus fixed Gaussian perturbation.
    Gaussianp,
}

impl OutlierStrategy {
    pub fn needs_anchors(self) -> bool {
        !matches!(self, OutlierStrategy::Noise)
    }

    /// Whether gradients flow from the outlier rows back into the model.
    pub fn is_differentiable(self) -> bool {
        matches!(self, OutlierStrategy::Ggad | OutlierStrategy::Random | OutlierStrategy::Nlo)
    }
}

impl fmt::Display for OutlierStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutlierStrategy::Ggad => "ggad",
            OutlierStrategy::Random => "random",
            OutlierStrategy::Nlo => "nlo",
            OutlierStrategy::Noise => "noise",
            OutlierStrategy::Gaussianp => "gaussianp",
        };
        f.write_str(s)
    }
}

/// `round(s_ratio · num_labeled)`, at least 1.
pub fn outlier_count(num_labeled: usize, s_ratio: f64) -> usize {
    ((s_ratio * num_labeled as f64).round() as usize).max(1)
}

/// Samples anchors uniformly without replacement among labeled normals
/// that have at least one neighbor. Returns `min(S, eligible)` nodes.
pub fn select_anchors(
    labeled: &[usize],
    graph: &Graph,
    s_ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = labeled.iter().copied().filter(|&v| graph.degree(v) > 0).collect();
    if eligible.is_empty() {
        return Err(GgadError::NoEligibleAnchors);
    }
    let s = outlier_count(labeled.len(), s_ratio).min(eligible.len());
    Ok(rng.sample_without_replacement(&eligible, s))
}

/// Everything about the outliers that is fixed for a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSet {
    pub strategy: OutlierStrategy,
    /// Anchor node per outlier row; empty for [`OutlierStrategy::Noise`].
    pub anchors: Vec<usize>,
    /// Closeness-target noise ε, one row per outlier.
    pub eps: DenseMatrix,
    /// Noise vectors (noise) or perturbations (gaussianp).
    pub fixed: Option<DenseMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierNoise {
    pub eps_mean: f64,
    pub eps_std: f64,
    pub perturb_std: f64,
}

impl OutlierSet {
    /// Draws the per-run noise for `anchors`. For the noise strategy the
    /// anchors only fix the row count and are dropped afterwards.
    pub fn prepare(
        strategy: OutlierStrategy,
        anchors: Vec<usize>,
        rep_dim: usize,
        noise: OutlierNoise,
        rng: &mut Rng,
    ) -> Result<Self> {
        let s = anchors.len();
        let eps = gaussian(rng, noise.eps_mean, noise.eps_std, s, rep_dim)?;
        let (anchors, fixed) = match strategy {
            OutlierStrategy::Noise => (Vec::new(), Some(gaussian(rng, 0.0, 1.0, s, rep_dim)?)),
            OutlierStrategy::Gaussianp => {
                (anchors, Some(gaussian(rng, 0.0, noise.perturb_std, s, rep_dim)?))
            }
            _ => (anchors, None),
        };
        Ok(Self { strategy, anchors, eps, fixed })
    }

    pub fn len(&self) -> usize {
        self.eps.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows `rows` of this set, anchors translated through `map`.
    pub fn subset(&self, rows: &[usize], map: impl Fn(usize) -> usize) -> Self {
        Self {
            strategy: self.strategy,
            anchors: if self.anchors.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&r| map(self.anchors[r])).collect()
            },
            eps: self.eps.select_rows(rows),
            fixed: self.fixed.as_ref().map(|f| f.select_rows(rows)),
        }
    }
}

/// Pre-activations of the generator, one `k_i × d` block per outlier.
pub type GeneratorCache = Vec<DenseMatrix>;

/// Outlier representations Ĥ for the current `h`. `egos[i]` is the ego
/// network of anchor `i` (ignored by strategies that don't use it).
pub fn make_outliers(
    set: &OutlierSet,
    params: &ModelParams,
    h: &DenseMatrix,
    egos: &[Vec<usize>],
) -> Result<(DenseMatrix, Option<GeneratorCache>)> {
    let d = h.cols();
    match set.strategy {
        OutlierStrategy::Ggad => {
            let (hh, cache) = model::generate_outliers_cached(params, h, egos)?;
            Ok((hh, Some(cache)))
        }
        OutlierStrategy::Random => Ok((h.select_rows(&set.anchors), None)),
        OutlierStrategy::Nlo => {
            let mut out = DenseMatrix::zeros(egos.len(), d);
            for (i, ego) in egos.iter().enumerate() {
                if ego.is_empty() {
                    return Err(GgadError::EmptyEgoNetwork(set.anchors[i]));
                }
                let inv = 1.0 / ego.len() as f64;
                let row = out.row_mut(i);
                for &j in ego {
                    crate::linalg::axpy(inv, h.row(j), row);
                }
            }
            Ok((out, None))
        }
        OutlierStrategy::Noise => Ok((set.fixed.clone().expect("noise rows prepared"), None)),
        OutlierStrategy::Gaussianp => {
            let mut out = h.select_rows(&set.anchors);
            out.add_assign(set.fixed.as_ref().expect("perturbation prepared"));
            Ok((out, None))
        }
    }
}
