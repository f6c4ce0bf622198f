//! Anomaly scoring and ranking metrics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{GgadError, Result};
use crate::linalg::DenseMatrix;
use crate::model::{classify, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub node: usize,
    pub score: f64,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub const CSV_HEADER: &'static str = "node_id,score,label";

    pub fn scores(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.score).collect()
    }

    pub fn node_ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.node).collect()
    }

    /// Labels of every row, if all rows carry one.
    pub fn labels(&self) -> Option<Vec<u8>> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// `node_id,score,label`; unknown labels are left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let label = r.label.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{:?},{}", r.node, r.score, label);
        }
        out
    }
}

/// `score(v) = 1 − η(h_v)` for each listed node.
pub fn score_nodes(
    params: &ModelParams,
    h: &DenseMatrix,
    nodes: &[usize],
    labels: Option<&[u8]>,
) -> Result<ScoreTable> {
    let probs = classify(params, &h.select_rows(nodes))?;
    let rows = nodes
        .iter()
        .zip(probs)
        .map(|(&node, p)| ScoreRow { node, score: 1.0 - p, label: labels.map(|l| l[node]) })
        .collect();
    Ok(ScoreTable { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub auprc: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl MetricsReport {
    /// The fixed machine-readable line.
    pub fn metric_line(&self) -> String {
        format!("AUROC={:.6} AUPRC={:.6}", self.auroc, self.auprc)
    }

    pub fn report(&self) -> String {
        format!(
            "{}\npositives={} negatives={}",
            self.metric_line(),
            self.positives,
            self.negatives
        )
    }
}

fn counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    (pos, labels.len() - pos)
}

/// Probability that a random anomaly outscores a random normal node, ties
/// counted as one half (Mann–Whitney U / (P·N)).
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GgadError::LengthMismatch(scores.len(), labels.len()));
    }
    let (pos, neg) = counts(labels);
    if pos == 0 || neg == 0 {
        return Err(GgadError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of positives' (1-based, tie-averaged) ranks, kept doubled so every
    // intermediate stays an exact integer.
    let mut rank_sum_x2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let tie_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        // average rank of the block is (i+1 + j+1)/2
        rank_sum_x2 += tie_pos * (i as u128 + j as u128 + 2);
        i = j + 1;
    }
    let pos_u = pos as u128;
    let u_x2 = rank_sum_x2 - pos_u * (pos_u + 1);
    Ok(u_x2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Average precision. Ranking is by descending score, ties broken by
/// ascending `node_ids`.
pub fn auprc(scores: &[f64], labels: &[u8], node_ids: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(GgadError::LengthMismatch(scores.len(), labels.len()));
    }
    if node_ids.len() != scores.len() {
        return Err(GgadError::LengthMismatch(scores.len(), node_ids.len()));
    }
    let (pos, _) = counts(labels);
    if pos == 0 {
        return Err(GgadError::DegenerateLabels);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => node_ids[a].cmp(&node_ids[b]),
        o => o,
    });
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / pos as f64)
}

/// Both metrics over a labeled score table.
pub fn evaluate(table: &ScoreTable) -> Result<MetricsReport> {
    let labels = table.labels().ok_or(GgadError::MissingLabels)?;
    let scores = table.scores();
    let (positives, negatives) = counts(&labels);
    Ok(MetricsReport {
        auroc: auroc(&scores, &labels)?,
        auprc: auprc(&scores, &labels, &table.node_ids())?,
        positives,
        negatives,
    })
}
