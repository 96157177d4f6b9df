//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use ldsclust::{Dataset, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn test_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(r: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-scale..scale))
}

pub fn random_trajectory(r: &mut impl Rng, id: usize, steps: usize, m: usize) -> Trajectory {
    Trajectory::new(id, uniform_matrix(r, steps, m, 2.0), None).unwrap()
}

pub fn random_dataset(r: &mut impl Rng, n: usize, steps: usize, m: usize) -> Dataset {
    Dataset::new((0..n).map(|i| random_trajectory(r, i, steps, m)).collect()).unwrap()
}

/// Least-squares design for the state problem: unknown is the stacked
/// `(φ_1, …, φ_T)`; rows are the observation terms `f_t − F'φ_t`, then the
/// process terms `φ_t − Gφ_{t−1}` for `t ≥ 2`.
pub fn state_design(g: &DMatrix<f64>, f: &DMatrix<f64>, outputs: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (steps, m) = outputs.shape();
    let n = g.nrows();
    let rows = steps * m + (steps - 1) * n;
    let mut a = DMatrix::zeros(rows, steps * n);
    let mut b = DVector::zeros(rows);
    for t in 0..steps {
        for j in 0..m {
            let r = t * m + j;
            for i in 0..n {
                a[(r, t * n + i)] = f[(i, j)];
            }
            b[r] = outputs[(t, j)];
        }
    }
    for t in 1..steps {
        for i in 0..n {
            let r = steps * m + (t - 1) * n + i;
            a[(r, t * n + i)] = 1.0;
            for k in 0..n {
                a[(r, (t - 1) * n + k)] -= g[(i, k)];
            }
        }
    }
    (a, b)
}

/// Dense normal-equations solution and the condition number of `A'A`.
pub fn dense_states(g: &DMatrix<f64>, f: &DMatrix<f64>, outputs: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (a, b) = state_design(g, f, outputs);
    let ata = a.transpose() * &a;
    let atb = a.transpose() * b;
    let sv = ata.clone().singular_values();
    let cond = sv.max() / sv.min();
    let x = ata.lu().solve(&atb).unwrap_or_else(|| DVector::zeros(a.ncols()));
    let n = g.nrows();
    (DMatrix::from_fn(outputs.nrows(), n, |t, i| x[t * n + i]), cond)
}

pub fn state_objective(g: &DMatrix<f64>, f: &DMatrix<f64>, outputs: &DMatrix<f64>, states: &DMatrix<f64>) -> f64 {
    let (a, b) = state_design(g, f, outputs);
    let x = DVector::from_iterator(states.len(), (0..states.nrows()).flat_map(|t| states.row(t).iter().copied().collect::<Vec<_>>()));
    (a * x - b).norm_squared()
}

fn local(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum()
}

/// DTW by enumerating every monotone warping path explicitly.
pub fn dtw_enumerate(a: &Trajectory, b: &Trajectory) -> f64 {
    fn walk(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + local(a, b, i, j);
        if i + 1 == a.nrows() && j + 1 == b.nrows() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.nrows() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.nrows() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.nrows() && j + 1 < b.nrows() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a.values(), b.values(), 0, 0, 0.0, &mut best);
    best.sqrt()
}

/// Precision/recall F1 from explicit confusion counts, best over both
/// relabelings and both positive classes.
pub fn f1_by_hand(pred: &[usize], truth: &[usize]) -> f64 {
    let mut best: f64 = 0.0;
    for flip in [0, 1] {
        for pos in [0, 1] {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (&p, &t) in pred.iter().zip(truth) {
                let p = p ^ flip;
                if p == pos && t == pos {
                    tp += 1.0;
                } else if p == pos {
                    fp += 1.0;
                } else if t == pos {
                    fneg += 1.0;
                }
            }
            let prec: f64 = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let rec: f64 = if tp + fneg > 0.0 { tp / (tp + fneg) } else { 0.0 };
            if prec + rec > 0.0 {
                best = best.max(2.0 * prec * rec / (prec + rec));
            }
        }
    }
    best
}
