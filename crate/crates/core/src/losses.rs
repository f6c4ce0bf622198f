//! Training objectives: local affinity, the affinity margin, egocentric
//! closeness, one-class BCE and their weighted sum.

use serde::{Deserialize, Serialize};

use crate::error::{GgadError, Result};
use crate::graph::Graph;
use crate::linalg::{cosine_unchecked, DenseMatrix};

/// Lower/upper probability clamp applied before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Loss terms of one forward pass. `l_ala`, `l_ec` are the raw (unweighted)
/// values even when a term is switched off; `l_total` holds the weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    pub l_bce: f64,
    pub l_ala: f64,
    pub l_ec: f64,
    pub l_total: f64,
    pub tau_normal: f64,
    pub tau_outlier: f64,
}

impl LossBundle {
    pub const CSV_HEADER: &'static str = "epoch,l_bce,l_ala,l_ec,l_total,tau_normal,tau_outlier";

    pub fn csv_row(&self, epoch: usize) -> String {
        format!(
            "{epoch},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.l_bce, self.l_ala, self.l_ec, self.l_total, self.tau_normal, self.tau_outlier
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.l_bce, self.l_ala, self.l_ec, self.l_total, self.tau_normal, self.tau_outlier]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Unweighted terms, before combination.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub bce: f64,
    pub ala: f64,
    pub ec: f64,
    pub tau_normal: f64,
    pub tau_outlier: f64,
}

/// Mean cosine similarity between `center` and the rows of `h` listed in
/// `neighbors`; 0.0 for an empty neighbor list.
pub fn affinity(center: &[f64], h: &DenseMatrix, neighbors: &[usize]) -> f64 {
    if neighbors.is_empty() {
        return 0.0;
    }
    let total: f64 = neighbors.iter().map(|&j| cosine_unchecked(center, h.row(j))).sum();
    total / neighbors.len() as f64
}

/// τ(v): mean cosine similarity of `h_v` to its neighbors. Isolated nodes get 0.
pub fn local_affinity(graph: &Graph, h: &DenseMatrix, v: usize) -> f64 {
    affinity(h.row(v), h, graph.neighbors(v))
}

/// τ of a generated outlier: `h_hat` measured against its anchor's ego network.
pub fn outlier_affinity(graph: &Graph, h: &DenseMatrix, h_hat: &[f64], anchor: usize) -> f64 {
    affinity(h_hat, h, graph.neighbors(anchor))
}

/// A set whose mean local affinity is wanted.
#[derive(Debug, Clone, Copy)]
pub enum AffinitySet<'a> {
    Nodes(&'a [usize]),
    /// Row `i` of `h_hat` paired with `anchors[i]`.
    Outliers { anchors: &'a [usize], h_hat: &'a DenseMatrix },
}

/// τ(V): mean of the members' local affinities.
pub fn set_affinity(graph: &Graph, h: &DenseMatrix, set: AffinitySet<'_>) -> Result<f64> {
    let (total, n) = match set {
        AffinitySet::Nodes(nodes) => {
            (nodes.iter().map(|&v| local_affinity(graph, h, v)).sum::<f64>(), nodes.len())
        }
        AffinitySet::Outliers { anchors, h_hat } => {
            if h_hat.rows() != anchors.len() {
                return Err(GgadError::ShapeMismatch(format!(
                    "{} outlier rows for {} anchors",
                    h_hat.rows(),
                    anchors.len()
                )));
            }
            let total = anchors
                .iter()
                .enumerate()
                .map(|(i, &a)| outlier_affinity(graph, h, h_hat.row(i), a))
                .sum::<f64>();
            (total, anchors.len())
        }
    };
    if n == 0 {
        return Err(GgadError::EmptySet);
    }
    Ok(total / n as f64)
}

/// `max{0, α − (τ_normal − τ_outlier)}`
pub fn ala_loss(tau_normal: f64, tau_outlier: f64, alpha: f64) -> f64 {
    (alpha - (tau_normal - tau_outlier)).max(0.0)
}

/// Derivatives of [`ala_loss`] w.r.t. `(τ_normal, τ_outlier)`. Zero at the hinge.
pub fn ala_grad(tau_normal: f64, tau_outlier: f64, alpha: f64) -> (f64, f64) {
    if alpha - (tau_normal - tau_outlier) > 0.0 {
        (-1.0, 1.0)
    } else {
        (0.0, 0.0)
    }
}

/// `(1/S) Σ_i ‖ĥ_i − (h_i + ε_i)‖²`
pub fn ec_loss(anchor_rows: &DenseMatrix, h_hat: &DenseMatrix, eps: &DenseMatrix) -> Result<f64> {
    if anchor_rows.shape() != h_hat.shape() || eps.shape() != h_hat.shape() {
        return Err(GgadError::ShapeMismatch(format!(
            "ec_loss: anchors {:?}, outliers {:?}, noise {:?}",
            anchor_rows.shape(),
            h_hat.shape(),
            eps.shape()
        )));
    }
    if h_hat.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = h_hat
        .as_slice()
        .iter()
        .zip(anchor_rows.as_slice())
        .zip(eps.as_slice())
        .map(|((hh, h), e)| {
            let r = hh - (h + e);
            r * r
        })
        .sum();
    Ok(total / h_hat.rows() as f64)
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean negative log-likelihood. `probs` are clamped again defensively.
pub fn bce_loss(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(GgadError::LengthMismatch(probs.len(), labels.len()));
    }
    if probs.is_empty() {
        return Err(GgadError::EmptySet);
    }
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

pub fn total_loss(parts: LossParts, beta: f64, lambda: f64) -> LossBundle {
    LossBundle {
        l_bce: parts.bce,
        l_ala: parts.ala,
        l_ec: parts.ec,
        l_total: parts.bce + beta * parts.ala + lambda * parts.ec,
        tau_normal: parts.tau_normal,
        tau_outlier: parts.tau_outlier,
    }
}
