//! Alternating (EM-style) clustering with per-cluster LDS fits, the joint
//! objective, and an exhaustive oracle over assignments.
//!
//! Every cluster fit inside one [`em_cluster`] or [`oracle_cluster`] call uses
//! the same fit seed, so the fit of a member set is a deterministic function
//! of that set. Both searches therefore score any given partition
//! identically, and the oracle's minimum is a true lower bound on what EM can
//! report for the same options and seed.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_cluster, ClusterFit, FitOptions};
use crate::lds::{sq_dist, Dataset};
use crate::rng;

/// Exhaustive search refuses instances with more than this many raw labelings.
pub const ORACLE_BUDGET: u64 = 1 << 20;

/// Salt separating EM initialization streams from fit restart streams.
const INIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Cluster labels `l_i ∈ {0, …, K−1}` for `N` trajectories.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "AssignmentRepr", into = "AssignmentRepr")]
pub struct Assignment {
    labels: Vec<usize>,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct AssignmentRepr {
    labels: Vec<usize>,
    k: usize,
}

impl TryFrom<AssignmentRepr> for Assignment {
    type Error = Error;
    fn try_from(r: AssignmentRepr) -> Result<Self> {
        Assignment::new(r.labels, r.k)
    }
}

impl From<Assignment> for AssignmentRepr {
    fn from(a: Assignment) -> Self {
        AssignmentRepr { labels: a.labels, k: a.k }
    }
}

impl Assignment {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange { index, label, k });
        }
        Ok(Self { labels, k })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Indices of the trajectories in cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Relabels cluster `c` as `perm[c]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        Assignment::new(self.labels.iter().map(|&l| perm[l]).collect(), self.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignment: Assignment,
    pub fits: Vec<ClusterFit>,
    pub joint_objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_em_iters: usize,
    /// Independent random initial partitions; the best final objective wins.
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self { max_em_iters: 100, restarts: 1 }
    }
}

/// `Σ_i Σ_t ‖X^i_t − f^{l_i}_t‖² + Σ_c Σ_t (‖υ^c_t‖² + ‖ω^c_t‖²)`.
pub fn eval_joint(data: &Dataset, assignment: &Assignment, fits: &[ClusterFit]) -> Result<f64> {
    if assignment.len() != data.len() {
        return Err(Error::Shape(format!("{} labels for {} trajectories", assignment.len(), data.len())));
    }
    if fits.len() != assignment.k() {
        return Err(Error::Shape(format!("{} fits for K = {}", fits.len(), assignment.k())));
    }
    let shape = (data.horizon(), data.obs_dim());
    if let Some(c) = fits.iter().position(|f| f.outputs.shape() != shape) {
        return Err(Error::Shape(format!("fit {c} outputs do not match the data shape {shape:?}")));
    }
    let data_term: f64 = data
        .trajectories()
        .iter()
        .zip(assignment.labels())
        .map(|(tr, &l)| sq_dist(tr.values(), &fits[l].outputs))
        .sum();
    Ok(data_term + fits.iter().map(ClusterFit::penalty).sum::<f64>())
}

/// Assigns every trajectory to the cluster whose outputs are closest in
/// squared error; ties go to the lowest cluster index.
pub fn reassign(data: &Dataset, fits: &[ClusterFit]) -> Result<Assignment> {
    if fits.is_empty() {
        return Err(Error::InvalidParameter("reassign needs at least one fit".into()));
    }
    let labels = data
        .trajectories()
        .iter()
        .map(|tr| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, f) in fits.iter().enumerate() {
                let d = sq_dist(tr.values(), &f.outputs);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    Assignment::new(labels, fits.len())
}

/// Member-set keyed memo of cluster fits. Valid because fits are
/// deterministic in (members, options, seed).
#[derive(Default)]
struct FitCache {
    fits: Mutex<HashMap<Vec<usize>, Arc<ClusterFit>>>,
}

impl FitCache {
    fn get_or_fit(&self, data: &Dataset, members: &[usize], opts: &FitOptions, seed: u64) -> Result<Arc<ClusterFit>> {
        if let Some(f) = self.fits.lock().expect("fit cache poisoned").get(members) {
            return Ok(f.clone());
        }
        let refs: Vec<_> = members.iter().map(|&i| &data.trajectories()[i]).collect();
        let fit = Arc::new(fit_cluster(&refs, opts, seed)?);
        self.fits.lock().expect("fit cache poisoned").insert(members.to_vec(), fit.clone());
        Ok(fit)
    }
}

fn fit_all(
    data: &Dataset,
    assignment: &Assignment,
    opts: &FitOptions,
    seed: u64,
    cache: &FitCache,
) -> Result<Vec<ClusterFit>> {
    (0..assignment.k())
        .into_par_iter()
        .map(|c| cache.get_or_fit(data, &assignment.members(c), opts, seed).map(|f| (*f).clone()))
        .collect()
}

/// Moves one trajectory into each empty cluster. The donor is the trajectory
/// with the largest error against its own cluster's `reference` (fitted
/// outputs, or the cluster mean before any fit), taken from clusters with
/// more than one member; ties go to the lowest index.
fn fill_empty(data: &Dataset, labels: &mut [usize], k: usize, reference: Option<&[ClusterFit]>) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let refs: Vec<nalgebra::DMatrix<f64>> = match reference {
            Some(fits) => fits.iter().map(|f| f.outputs.clone()).collect(),
            None => (0..k)
                .map(|c| {
                    let mut acc = nalgebra::DMatrix::zeros(data.horizon(), data.obs_dim());
                    for (i, tr) in data.trajectories().iter().enumerate() {
                        if labels[i] == c {
                            acc += tr.values();
                        }
                    }
                    acc / sizes[c].max(1) as f64
                })
                .collect(),
        };
        let mut donor = None;
        let mut worst = f64::NEG_INFINITY;
        for (i, tr) in data.trajectories().iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(tr.values(), &refs[labels[i]]);
            if d > worst {
                worst = d;
                donor = Some(i);
            }
        }
        match donor {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

struct EmRun {
    assignment: Assignment,
    fits: Vec<ClusterFit>,
    objective: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn run_em(
    data: &Dataset,
    k: usize,
    opts: &FitOptions,
    em: &EmOptions,
    seed: u64,
    restart: usize,
    cache: &FitCache,
) -> Result<EmRun> {
    let mut r = rng::stream(seed ^ INIT_SALT, restart as u64);
    let mut labels: Vec<usize> = (0..data.len()).map(|_| r.gen_range(0..k)).collect();
    fill_empty(data, &mut labels, k, None);
    let mut assignment = Assignment::new(labels, k)?;
    let mut best: Option<(Assignment, Vec<ClusterFit>, f64)> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < em.max_em_iters {
        iterations += 1;
        let fits = fit_all(data, &assignment, opts, seed, cache)?;
        let objective = eval_joint(data, &assignment, &fits)?;
        trace.push(objective);
        if best.as_ref().map_or(true, |b| objective < b.2) {
            best = Some((assignment.clone(), fits.clone(), objective));
        }
        if k == 1 {
            converged = true;
            break;
        }
        let mut next = reassign(data, &fits)?.labels;
        fill_empty(data, &mut next, k, Some(&fits));
        if next == assignment.labels {
            converged = true;
            break;
        }
        assignment = Assignment::new(next, k)?;
    }
    let (assignment, fits, objective) = best.expect("at least one EM iteration");
    Ok(EmRun { assignment, fits, objective, iterations, converged, trace })
}

fn check_instance(data: &Dataset, k: usize, opts: &FitOptions) -> Result<()> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::InvalidParameter("K must be >= 1".into()));
    }
    if data.len() < k {
        return Err(Error::Insufficient(format!("{} trajectories cannot fill {k} clusters", data.len())));
    }
    Ok(())
}

/// Alternates per-cluster fits with nearest-output reassignment until no
/// label changes or `max_em_iters` rounds have run, returning the best
/// iterate seen. With `em.restarts > 1`, independent random initial
/// partitions are tried and the lowest objective wins (ties: first restart).
///
/// Initial partition `r` is drawn from a stream derived from `seed`; every
/// cluster fit uses `seed` as its fit seed.
pub fn em_cluster(data: &Dataset, k: usize, opts: &FitOptions, em: &EmOptions, seed: u64) -> Result<ClusteringResult> {
    em_cluster_traced(data, k, opts, em, seed).map(|(r, _)| r)
}

/// [`em_cluster`] plus the per-iteration joint objective of the winning restart.
pub fn em_cluster_traced(
    data: &Dataset,
    k: usize,
    opts: &FitOptions,
    em: &EmOptions,
    seed: u64,
) -> Result<(ClusteringResult, Vec<f64>)> {
    check_instance(data, k, opts)?;
    if em.max_em_iters == 0 || em.restarts == 0 {
        return Err(Error::InvalidParameter("max_em_iters and restarts must be >= 1".into()));
    }
    let cache = FitCache::default();
    let runs: Vec<EmRun> = (0..em.restarts)
        .into_par_iter()
        .map(|r| run_em(data, k, opts, em, seed, r, &cache))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.objective < runs[best].objective {
            best = i;
        }
    }
    let run = runs.into_iter().nth(best).expect("restarts >= 1");
    Ok((
        ClusteringResult {
            assignment: run.assignment,
            fits: run.fits,
            joint_objective: run.objective,
            iterations: run.iterations,
            converged: run.converged,
            seed,
        },
        run.trace,
    ))
}

/// All labelings with exactly `k` non-empty clusters, one per partition:
/// restricted growth strings (`l_0 = 0`, each label at most one above the
/// running maximum), in lexicographic order.
pub fn canonical_partitions(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 || k == 0 || k > n {
        return out;
    }
    let mut labels = vec![0usize; n];
    fn rec(i: usize, max: usize, labels: &mut Vec<usize>, n: usize, k: usize, out: &mut Vec<Vec<usize>>) {
        if i == n {
            if max + 1 == k {
                out.push(labels.clone());
            }
            return;
        }
        // Not enough positions left to open the remaining clusters.
        if (max + 1) + (n - i) < k {
            return;
        }
        for l in 0..=(max + 1).min(k - 1) {
            labels[i] = l;
            rec(i + 1, max.max(l), labels, n, k, out);
        }
    }
    rec(1, 0, &mut labels, n, k, &mut out);
    out
}

/// Global minimum of the joint objective over all partitions into `k`
/// non-empty clusters, each scored with [`fit_cluster`] under `opts` and
/// `seed`. Refuses instances with `K^N > 2^20`.
pub fn oracle_cluster(data: &Dataset, k: usize, opts: &FitOptions, seed: u64) -> Result<ClusteringResult> {
    check_instance(data, k, opts)?;
    let n = data.len();
    let too_big = (k as u64).checked_pow(n as u32).map_or(true, |v| v > ORACLE_BUDGET);
    if too_big {
        return Err(Error::BudgetExceeded { k, n, budget: ORACLE_BUDGET });
    }
    let partitions = canonical_partitions(n, k);
    let mut subsets: Vec<Vec<usize>> = partitions
        .iter()
        .flat_map(|p| {
            (0..k).map(move |c| p.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect::<Vec<_>>())
        })
        .collect();
    subsets.sort();
    subsets.dedup();
    let fitted: Vec<ClusterFit> = subsets
        .par_iter()
        .map(|s| {
            let refs: Vec<_> = s.iter().map(|&i| &data.trajectories()[i]).collect();
            fit_cluster(&refs, opts, seed)
        })
        .collect::<Result<_>>()?;
    let index: HashMap<&[usize], usize> = subsets.iter().enumerate().map(|(i, s)| (s.as_slice(), i)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (pi, p) in partitions.iter().enumerate() {
        let assignment = Assignment::new(p.clone(), k)?;
        let fits: Vec<ClusterFit> =
            (0..k).map(|c| fitted[index[assignment.members(c).as_slice()]].clone()).collect();
        let obj = eval_joint(data, &assignment, &fits)?;
        if best.map_or(true, |(_, b)| obj < b) {
            best = Some((pi, obj));
        }
    }
    let (pi, joint_objective) = best.expect("at least one partition");
    let assignment = Assignment::new(partitions[pi].clone(), k)?;
    let fits = (0..k).map(|c| fitted[index[assignment.members(c).as_slice()]].clone()).collect();
    Ok(ClusteringResult { assignment, fits, joint_objective, iterations: partitions.len(), converged: true, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::Trajectory;
    use nalgebra::DMatrix;

    fn fake_fit(outputs: DMatrix<f64>, pen: f64) -> ClusterFit {
        let t = outputs.nrows();
        let mut obs = DMatrix::zeros(t, outputs.ncols());
        obs[(0, 0)] = pen.sqrt();
        ClusterFit {
            g: DMatrix::zeros(1, 1),
            f_mat: DMatrix::zeros(1, outputs.ncols()),
            states: DMatrix::zeros(t, 1),
            outputs,
            proc_residuals: DMatrix::zeros(t - 1, 1),
            obs_residuals: obs,
            objective: 0.0,
            member_count: 1,
            iterations: 0,
            converged: true,
            restart: 0,
        }
    }

    fn tiny() -> Dataset {
        let a = Trajectory::from_rows(0, &[vec![0.0], vec![0.0]], None).unwrap();
        let b = Trajectory::from_rows(1, &[vec![2.0], vec![2.0]], None).unwrap();
        let c = Trajectory::from_rows(2, &[vec![1.0], vec![1.0]], None).unwrap();
        Dataset::new(vec![a, b, c]).unwrap()
    }

    #[test]
    fn assignment_validation() {
        assert!(Assignment::new(vec![0, 1, 2], 2).is_err());
        assert!(Assignment::new(vec![0, 1], 0).is_err());
        let a = Assignment::new(vec![1, 0, 1], 2).unwrap();
        assert_eq!(a.members(1), vec![0, 2]);
        assert_eq!(a.sizes(), vec![1, 2]);
        let json = serde_json::to_string(&a).unwrap();
        assert!(serde_json::from_str::<Assignment>(r#"{"labels":[0,3],"k":2}"#).is_err());
        assert_eq!(serde_json::from_str::<Assignment>(&json).unwrap(), a);
    }

    #[test]
    fn reassign_zero_distance_and_ties() {
        let data = tiny();
        let fits = vec![
            fake_fit(DMatrix::from_element(2, 1, 0.0), 0.0),
            fake_fit(DMatrix::from_element(2, 1, 2.0), 0.0),
        ];
        let a = reassign(&data, &fits).unwrap();
        // Trajectory 2 is equidistant and goes to cluster 0.
        assert_eq!(a.labels(), &[0, 1, 0]);
    }

    #[test]
    fn eval_joint_perfect_and_symmetric() {
        let data = tiny();
        let perfect: Vec<ClusterFit> =
            data.trajectories().iter().map(|t| fake_fit(t.values().clone(), 0.0)).collect();
        let a = Assignment::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(eval_joint(&data, &a, &perfect).unwrap(), 0.0);

        let same = vec![fake_fit(DMatrix::from_element(2, 1, 0.5), 0.3), fake_fit(DMatrix::from_element(2, 1, 0.5), 0.3)];
        let x = eval_joint(&data, &Assignment::new(vec![0, 0, 1], 2).unwrap(), &same).unwrap();
        let y = eval_joint(&data, &Assignment::new(vec![1, 0, 1], 2).unwrap(), &same).unwrap();
        assert_eq!(x, y);
        assert!(eval_joint(&data, &Assignment::new(vec![0, 0], 2).unwrap(), &same).is_err());
    }

    #[test]
    fn canonical_partition_counts() {
        // Stirling numbers of the second kind.
        assert_eq!(canonical_partitions(6, 2).len(), 31);
        assert_eq!(canonical_partitions(5, 3).len(), 25);
        assert_eq!(canonical_partitions(4, 4).len(), 1);
        assert_eq!(canonical_partitions(3, 1), vec![vec![0, 0, 0]]);
        assert!(canonical_partitions(2, 3).is_empty());
    }

    #[test]
    fn single_cluster_em() {
        let data = tiny();
        let opts = FitOptions { restarts: 2, ..FitOptions::default().with_hidden_dim(1) };
        let r = em_cluster(&data, 1, &opts, &EmOptions::default(), 4).unwrap();
        assert_eq!(r.assignment.labels(), &[0, 0, 0]);
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn fill_empty_moves_worst_member() {
        let data = tiny();
        let mut labels = vec![0, 0, 0];
        fill_empty(&data, &mut labels, 2, None);
        // Mean is 1; trajectories 0 and 1 are equally far, lowest index moves.
        assert_eq!(labels, vec![1, 0, 0]);
    }

    #[test]
    fn oracle_budget_is_enforced() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0]];
        let trs: Vec<_> = (0..21).map(|i| Trajectory::from_rows(i, &rows, None).unwrap()).collect();
        let data = Dataset::new(trs).unwrap();
        assert!(matches!(
            oracle_cluster(&data, 2, &FitOptions::default(), 0),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
