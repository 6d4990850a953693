//! Ranking metrics for binary scores: average precision and ROC AUC.
//!
//! Both treat tied scores as one indistinguishable group. Average precision
//! steps through distinct thresholds from high to low and sums
//! `(recall_k - recall_{k-1}) * precision_k`; AUC is the Mann-Whitney
//! statistic computed from mean ranks, so ties contribute half a pair.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("metric needs at least one score")]
    Empty,
    #[error("scores and labels have different lengths ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("average precision needs at least one positive label")]
    NoPositives,
    #[error("ROC AUC needs both a positive and a negative label")]
    SingleClass,
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

/// Indices sorted by descending score; equal scores keep input order, which
/// is irrelevant downstream because ties are always consumed as a group.
fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Area under the precision-recall curve, one point per distinct threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_inputs(scores, labels)?;
    let total_pos = labels.iter().filter(|&&l| l).count();
    if total_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let order = descending_order(scores);
    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            }
            seen += 1;
            j += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Mann-Whitney AUC from mean ranks: `(R_pos - P(P+1)/2) / (P * N)` where
/// `R_pos` sums the average ascending ranks of the positives.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_inputs(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; a tie group spanning positions i..j all get the
        // group's mean rank.
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += mean_rank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * neg as f64))
}

/// AP and AUC of one scored batch, bundled for reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkMetrics {
    pub ap: f64,
    pub auc: f64,
    pub n_scored: usize,
}

pub fn link_metrics(scores: &[f64], labels: &[bool]) -> Result<LinkMetrics, MetricError> {
    Ok(LinkMetrics {
        ap: average_precision(scores, labels)?,
        auc: roc_auc(scores, labels)?,
        n_scored: scores.len(),
    })
}
