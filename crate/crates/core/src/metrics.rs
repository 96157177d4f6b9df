//! Clustering F1 score and per-cell trial statistics.

use serde::{Deserialize, Serialize};

use crate::em::Assignment;
use crate::error::{Error, Result};

/// Largest K for which the permutation search is run.
pub const MAX_PERMUTATION_K: usize = 6;

fn f1_binary(pred: &[bool], truth: &[bool]) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fneg = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    if tp == 0 {
        // Precision and recall are both zero or undefined.
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                cur.push(c);
                rec(cur, used, out);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// F1 of `predicted` against `truth` on raw label vectors with `k` clusters.
///
/// For K = 2 the score is the best of both cluster relabelings and both
/// choices of positive class. For K > 2 it is the mean per-class F1 under
/// the best of all K! relabelings.
pub fn f1_labels(predicted: &[usize], truth: &[usize], k: usize) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!("{} predicted labels vs {} true labels", predicted.len(), truth.len())));
    }
    if predicted.is_empty() {
        return Err(Error::InvalidParameter("F1 of an empty assignment".into()));
    }
    if k == 0 || k > MAX_PERMUTATION_K {
        return Err(Error::InvalidParameter(format!("F1 supports 1 <= K <= {MAX_PERMUTATION_K}, got {k}")));
    }
    for (index, (&p, &t)) in predicted.iter().zip(truth).enumerate() {
        if p >= k {
            return Err(Error::LabelOutOfRange { index, label: p, k });
        }
        if t >= k.max(2) {
            return Err(Error::LabelOutOfRange { index, label: t, k });
        }
    }
    if k <= 2 {
        let mut best: f64 = 0.0;
        for flip in [false, true] {
            let pred: Vec<usize> = predicted.iter().map(|&p| if flip { 1 - p.min(1) } else { p }).collect();
            for positive in [0, 1] {
                let pb: Vec<bool> = pred.iter().map(|&p| p == positive).collect();
                let tb: Vec<bool> = truth.iter().map(|&t| t == positive).collect();
                best = best.max(f1_binary(&pb, &tb));
            }
        }
        return Ok(best);
    }
    let mut best: f64 = 0.0;
    for perm in permutations(k) {
        let mut total = 0.0;
        for c in 0..k {
            let pb: Vec<bool> = predicted.iter().map(|&p| perm[p] == c).collect();
            let tb: Vec<bool> = truth.iter().map(|&t| t == c).collect();
            total += f1_binary(&pb, &tb);
        }
        best = best.max(total / k as f64);
    }
    Ok(best)
}

pub fn f1_pair(predicted: &Assignment, truth: &[usize]) -> Result<f64> {
    f1_labels(predicted.labels(), truth, predicted.k())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStats {
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval, 1.96·s/√n.
    pub ci_half_width: f64,
    pub n_trials: usize,
    pub raw: Vec<f64>,
}

pub fn aggregate(raw: &[f64]) -> Result<TrialStats> {
    let n = raw.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("aggregate needs at least 2 trials, got {n}")));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("trial scores".into()));
    }
    let mean = raw.iter().sum::<f64>() / n as f64;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(TrialStats { mean, ci_half_width: 1.96 * var.sqrt() / (n as f64).sqrt(), n_trials: n, raw: raw.to_vec() })
}
