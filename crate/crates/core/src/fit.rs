//! Per-cluster LDS identification by exact block-coordinate descent.
//!
//! For a cluster with members `X¹ … X^N` the subproblem is
//!
//! ```text
//! min  Σ_i Σ_t ‖X^i_t − f_t‖² + Σ_t ‖υ_t‖² + Σ_{t≥2} ‖ω_t‖²
//! s.t. φ_t = G φ_{t-1} + ω_t   (t = 2..T)
//!      f_t = F' φ_t + υ_t      (t = 1..T)
//! ```
//!
//! Eliminating the residuals and writing `X̄` for the pointwise mean, the
//! data term equals `N·Σ_t ‖X̄_t − f_t‖²` plus a constant scatter term, so the
//! fit only ever sees `(X̄, N)`. Each of the four blocks `f`, `F`, `G`, `φ`
//! has an exact minimizer:
//!
//! - `f`: per-step weighted average of `X̄_t` and `F'φ_t`;
//! - `F`, `G`: row-wise least squares with entries boxed to `[−B, B]`;
//! - `φ`: a symmetric block-tridiagonal linear system.
//!
//! Cycling through them never increases the objective. Two further steps
//! speed up the descent without changing that: a diagonal rescaling of the
//! hidden coordinates (which leaves `υ` fixed and shrinks `ω` until `F` meets
//! its box), and an extrapolation along the last iterate's direction that is
//! kept only when it lowers the objective.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::{sq_dist, Trajectory};
use crate::linalg::{box_lstsq, sym_pinv, BlockTridiagonal};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub hidden_dim: usize,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub matrix_bound: f64,
    pub init_scale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            hidden_dim: 2,
            max_outer_iters: 500,
            rel_tol: 1e-7,
            restarts: 10,
            matrix_bound: 10.0,
            init_scale: 1.0,
        }
    }
}

impl FitOptions {
    pub fn with_hidden_dim(mut self, n: usize) -> Self {
        self.hidden_dim = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::InvalidParameter("hidden_dim must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("rel_tol must be > 0".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter("max_outer_iters must be >= 1".into()));
        }
        if !(self.matrix_bound > 0.0) || !(self.init_scale > 0.0) {
            return Err(Error::InvalidParameter("matrix_bound and init_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// A fitted cluster model together with its hidden states and residuals.
///
/// `states` is `T × n`, `outputs` and `obs_residuals` are `T × m`, and
/// `proc_residuals` is `(T−1) × n` with row `k` holding `ω` at step `k + 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterFit {
    #[serde(with = "crate::matrix_serde")]
    pub g: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub f_mat: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub states: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub outputs: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub proc_residuals: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub obs_residuals: DMatrix<f64>,
    pub objective: f64,
    pub member_count: usize,
    pub iterations: usize,
    pub converged: bool,
    pub restart: usize,
}

impl ClusterFit {
    /// `Σ_t ‖υ_t‖² + Σ_{t≥2} ‖ω_t‖²`.
    pub fn penalty(&self) -> f64 {
        self.obs_residuals.norm_squared() + self.proc_residuals.norm_squared()
    }
}

/// Pointwise mean of the members, accumulated in member order.
pub fn mean_trajectory(members: &[&Trajectory]) -> Result<DMatrix<f64>> {
    let first = members.first().ok_or_else(|| Error::Insufficient("cluster has no members".into()))?;
    let shape = first.values().shape();
    let mut acc = DMatrix::zeros(shape.0, shape.1);
    for m in members {
        if m.values().shape() != shape {
            return Err(Error::Shape(format!("member {} has shape {:?}, expected {shape:?}", m.id, m.values().shape())));
        }
        acc += m.values();
    }
    Ok(acc / members.len() as f64)
}

/// Within-cluster scatter `Σ_i Σ_t ‖X^i_t − X̄_t‖²`.
pub fn scatter(members: &[&Trajectory], mean: &DMatrix<f64>) -> f64 {
    members.iter().map(|m| sq_dist(m.values(), mean)).sum()
}

/// Exact minimizer over `f` of `w‖X̄_t − f_t‖² + ‖f_t − F'φ_t‖²` for each `t`.
pub fn update_outputs(mean: &DMatrix<f64>, weight: usize, f_mat: &DMatrix<f64>, states: &DMatrix<f64>) -> DMatrix<f64> {
    let w = weight as f64;
    let pred = states * f_mat; // row t is (F'φ_t)'
    DMatrix::from_fn(mean.nrows(), mean.ncols(), |t, j| (w * mean[(t, j)] + pred[(t, j)]) / (w + 1.0))
}

/// Exact minimizer over `φ` of `Σ_t ‖f_t − F'φ_t‖² + Σ_{t≥2} ‖φ_t − Gφ_{t−1}‖²`.
///
/// The normal equations are block tridiagonal with diagonal blocks
/// `FF' + [t>1]·I + [t<T]·G'G` and off-diagonal blocks `−G`. Singular systems
/// fall back to a `1e-10` diagonal ridge, then to the minimum-norm solution.
pub fn solve_states(g: &DMatrix<f64>, f_mat: &DMatrix<f64>, outputs: &DMatrix<f64>) -> DMatrix<f64> {
    let steps = outputs.nrows();
    let n = g.nrows();
    let m = f_mat.ncols();
    let nn = n * n;
    let ffp = f_mat * f_mat.transpose();
    let gtg = g.transpose() * g;
    let mut diag = vec![0.0; steps * nn];
    for t in 0..steps {
        for i in 0..n {
            for j in 0..n {
                let mut v = ffp[(i, j)];
                if t > 0 && i == j {
                    v += 1.0;
                }
                if t + 1 < steps {
                    v += gtg[(i, j)];
                }
                diag[t * nn + i * n + j] = v;
            }
        }
    }
    let minus_g: Vec<f64> = (0..nn).map(|k| -g[(k / n, k % n)]).collect();
    let lower = minus_g.repeat(steps.saturating_sub(1));
    let mut rhs = vec![0.0; steps * n];
    for t in 0..steps {
        for i in 0..n {
            rhs[t * n + i] = (0..m).map(|j| f_mat[(i, j)] * outputs[(t, j)]).sum();
        }
    }
    let x = BlockTridiagonal { n, diag, lower }.solve(&rhs);
    DMatrix::from_fn(steps, n, |t, i| x[t * n + i])
}

/// Boxed least-squares `G` minimizing `Σ_{t≥2} ‖φ_t − Gφ_{t−1}‖²`, one row at a
/// time. With fewer than two steps there is nothing to fit and `warm` (or
/// zero) is returned.
pub fn solve_transition(states: &DMatrix<f64>, bound: f64, warm: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let (steps, n) = states.shape();
    if steps < 2 {
        return warm.cloned().unwrap_or_else(|| DMatrix::zeros(n, n));
    }
    let prev = states.rows(0, steps - 1);
    let next = states.rows(1, steps - 1);
    let gram = prev.transpose() * prev;
    let cross = prev.transpose() * next;
    let pinv = sym_pinv(&gram);
    let mut g = DMatrix::zeros(n, n);
    for r in 0..n {
        let w = warm.map(|w| w.row(r).transpose());
        let beta = box_lstsq(&gram, &pinv, &cross.column(r).into_owned(), bound, w.as_ref());
        g.row_mut(r).copy_from(&beta.transpose());
    }
    g
}

/// Boxed least-squares `F` minimizing `Σ_t ‖f_t − F'φ_t‖²`, one column at a time.
pub fn solve_observation(
    states: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    bound: f64,
    warm: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let n = states.ncols();
    let m = outputs.ncols();
    let gram = states.transpose() * states;
    let cross = states.transpose() * outputs;
    let pinv = sym_pinv(&gram);
    let mut f = DMatrix::zeros(n, m);
    for j in 0..m {
        let w = warm.map(|w| w.column(j).into_owned());
        let beta = box_lstsq(&gram, &pinv, &cross.column(j).into_owned(), bound, w.as_ref());
        f.column_mut(j).copy_from(&beta);
    }
    f
}

/// `(G, F)` given fixed states and outputs.
pub fn solve_matrices(states: &DMatrix<f64>, outputs: &DMatrix<f64>, bound: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    (solve_transition(states, bound, None), solve_observation(states, outputs, bound, None))
}

/// Working point of the block-coordinate descent.
#[derive(Debug, Clone)]
pub struct BlockState {
    g: DMatrix<f64>,
    f_mat: DMatrix<f64>,
    states: DMatrix<f64>,
    outputs: DMatrix<f64>,
    penalty: f64,
}

impl BlockState {
    pub fn new(g: DMatrix<f64>, f_mat: DMatrix<f64>, states: DMatrix<f64>, outputs: DMatrix<f64>) -> Self {
        let penalty = penalty_of(&g, &f_mat, &states, &outputs);
        BlockState { g, f_mat, states, outputs, penalty }
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn f_mat(&self) -> &DMatrix<f64> {
        &self.f_mat
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    /// `w·Σ‖X̄_t − f_t‖² + Σ‖υ_t‖² + Σ‖ω_t‖²` (the subproblem objective
    /// without the constant scatter term).
    pub fn reduced_objective(&self, mean: &DMatrix<f64>, weight: usize) -> f64 {
        weight as f64 * sq_dist(mean, &self.outputs) + self.penalty()
    }

    pub fn step_outputs(&mut self, mean: &DMatrix<f64>, weight: usize) {
        self.outputs = update_outputs(mean, weight, &self.f_mat, &self.states);
        self.penalty = penalty_of(&self.g, &self.f_mat, &self.states, &self.outputs);
    }

    /// `Σ‖υ_t‖² + Σ‖ω_t‖²` at the current point.
    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    // The matrix and state steps below solve their blocks exactly, but when
    // the normal equations are numerically singular rounding can make the
    // solved block worse than the current one. They keep the current block in
    // that case, so no step ever increases the objective.

    pub fn step_observation(&mut self, bound: f64) {
        let f_mat = solve_observation(&self.states, &self.outputs, bound, Some(&self.f_mat));
        let p = penalty_of(&self.g, &f_mat, &self.states, &self.outputs);
        if p <= self.penalty {
            self.f_mat = f_mat;
            self.penalty = p;
        }
    }

    pub fn step_transition(&mut self, bound: f64) {
        let g = solve_transition(&self.states, bound, Some(&self.g));
        let p = penalty_of(&g, &self.f_mat, &self.states, &self.outputs);
        if p <= self.penalty {
            self.g = g;
            self.penalty = p;
        }
    }

    /// Rescales hidden coordinates: `φ_i → s_iφ_i`, row `i` of `F` by `1/s_i`
    /// and `G_ij → s_i G_ij / s_j`. The observation residuals are unchanged
    /// and `ω_i` scales by `s_i`, so each `s_i` is taken as small as the box
    /// on `F` allows. When that would push `G` out of its box, a common
    /// factor is used instead, which leaves `G` as is.
    pub fn step_scale(&mut self, bound: f64) {
        let n = self.f_mat.nrows();
        let rows: Vec<f64> = (0..n).map(|i| self.f_mat.row(i).amax() / bound).collect();
        let common = rows.iter().fold(0.0f64, |a, &b| a.max(b));
        if !(common > 0.0 && common < 1.0) {
            return;
        }
        let mut s: Vec<f64> = rows.iter().map(|&r| if r > 0.0 { r } else { 1.0 }).collect();
        let g_scaled = DMatrix::from_fn(n, n, |i, j| self.g[(i, j)] * s[i] / s[j]);
        let g = if g_scaled.amax() <= bound {
            g_scaled
        } else {
            s = vec![common; n];
            self.g.clone()
        };
        let f_mat = DMatrix::from_fn(n, self.f_mat.ncols(), |i, j| self.f_mat[(i, j)] / s[i]);
        let states = DMatrix::from_fn(self.states.nrows(), n, |t, i| self.states[(t, i)] * s[i]);
        let p = penalty_of(&g, &f_mat, &states, &self.outputs);
        if p <= self.penalty {
            self.g = g;
            self.f_mat = f_mat;
            self.states = states;
            self.penalty = p;
        }
    }

    /// Tries `x + β(x − prev)` over all blocks, with `G` and `F` projected
    /// onto the box, and keeps it only if the subproblem objective drops
    /// below `current`. Returns the accepted objective.
    pub fn step_extrapolate(
        &mut self,
        prev: &BlockState,
        beta: f64,
        mean: &DMatrix<f64>,
        weight: usize,
        bound: f64,
        current: f64,
    ) -> Option<f64> {
        let ext = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.zip_map(b, |x, y| x + beta * (x - y));
        let boxed = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.zip_map(b, |x, y| (x + beta * (x - y)).clamp(-bound, bound));
        let cand = BlockState::new(
            boxed(&self.g, &prev.g),
            boxed(&self.f_mat, &prev.f_mat),
            ext(&self.states, &prev.states),
            ext(&self.outputs, &prev.outputs),
        );
        let objective = cand.reduced_objective(mean, weight);
        (objective < current).then(|| {
            *self = cand;
            objective
        })
    }

    pub fn step_states(&mut self) {
        let states = solve_states(&self.g, &self.f_mat, &self.outputs);
        let p = penalty_of(&self.g, &self.f_mat, &states, &self.outputs);
        if p <= self.penalty {
            self.states = states;
            self.penalty = p;
        }
    }
}

/// `Σ_t ‖f_t − F'φ_t‖² + Σ_{t≥2} ‖φ_t − Gφ_{t−1}‖²` without temporaries.
fn penalty_of(g: &DMatrix<f64>, f_mat: &DMatrix<f64>, states: &DMatrix<f64>, outputs: &DMatrix<f64>) -> f64 {
    let (steps, n) = states.shape();
    let m = outputs.ncols();
    let mut acc = 0.0;
    for t in 0..steps {
        for j in 0..m {
            let pred: f64 = (0..n).map(|i| f_mat[(i, j)] * states[(t, i)]).sum();
            let r = outputs[(t, j)] - pred;
            acc += r * r;
        }
    }
    for t in 1..steps {
        for i in 0..n {
            let pred: f64 = (0..n).map(|k| g[(i, k)] * states[(t - 1, k)]).sum();
            let r = states[(t, i)] - pred;
            acc += r * r;
        }
    }
    acc
}

/// `(υ, ω)` implied by a working point: `υ_t = f_t − F'φ_t` (`T × m`) and
/// `ω_t = φ_t − Gφ_{t−1}` for `t ≥ 2` (`(T−1) × n`).
pub fn residuals(
    g: &DMatrix<f64>,
    f_mat: &DMatrix<f64>,
    states: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let steps = states.nrows();
    let obs = outputs - states * f_mat;
    let proc = if steps >= 2 {
        states.rows(1, steps - 1) - states.rows(0, steps - 1) * g.transpose()
    } else {
        DMatrix::zeros(0, states.ncols())
    };
    (obs, proc)
}

struct RestartOutcome {
    state: BlockState,
    objective: f64,
    iterations: usize,
    converged: bool,
}

// Step-size schedule for the extrapolation in `run_restart`: grows after an
// accepted step, shrinks after a rejected one.
const EXTRAPOLATION_START: f64 = 1.0;
const EXTRAPOLATION_MIN: f64 = 0.1;
const EXTRAPOLATION_MAX: f64 = 10.0;

fn run_restart(mean: &DMatrix<f64>, weight: usize, opts: &FitOptions, seed: u64, restart: usize) -> RestartOutcome {
    let n = opts.hidden_dim;
    let m = mean.ncols();
    let mut r = rng::stream(seed, restart as u64);
    let s = opts.init_scale;
    let b = opts.matrix_bound;
    let mut draw = || r.gen_range(-s..=s).clamp(-b, b);
    let g = DMatrix::from_fn(n, n, |_, _| draw());
    let f_mat = DMatrix::from_fn(n, m, |_, _| draw());
    let states = solve_states(&g, &f_mat, mean);
    let mut st = BlockState::new(g, f_mat, states, mean.clone());
    let mut objective = st.reduced_objective(mean, weight);
    let mut converged = false;
    let mut iterations = 0;
    let mut beta = EXTRAPOLATION_START;
    while iterations < opts.max_outer_iters {
        let before = st.clone();
        iterations += 1;
        st.step_observation(b);
        st.step_transition(b);
        st.step_states();
        st.step_scale(b);
        st.step_outputs(mean, weight);
        let mut next = st.reduced_objective(mean, weight);
        match st.step_extrapolate(&before, beta, mean, weight, b, next) {
            Some(v) => {
                next = v;
                beta = (beta * 1.5).min(EXTRAPOLATION_MAX);
            }
            None => beta = (beta / 2.0).max(EXTRAPOLATION_MIN),
        }
        let improvement = objective - next;
        objective = next;
        if next == 0.0 || improvement <= opts.rel_tol * next.abs() {
            converged = true;
            break;
        }
    }
    RestartOutcome { state: st, objective, iterations, converged }
}

fn fit_reduced(mean: &DMatrix<f64>, weight: usize, opts: &FitOptions, seed: u64) -> Result<(BlockState, RestartOutcomeMeta)> {
    opts.validate()?;
    if weight == 0 {
        return Err(Error::Insufficient("cluster weight must be >= 1".into()));
    }
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cluster data".into()));
    }
    let outcomes: Vec<RestartOutcome> =
        (0..opts.restarts).into_par_iter().map(|r| run_restart(mean, weight, opts, seed, r)).collect();
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.objective < outcomes[best].objective {
            best = i;
        }
    }
    let o = outcomes.into_iter().nth(best).expect("restarts >= 1");
    Ok((o.state, RestartOutcomeMeta { iterations: o.iterations, converged: o.converged, restart: best }))
}

struct RestartOutcomeMeta {
    iterations: usize,
    converged: bool,
    restart: usize,
}

fn assemble(st: BlockState, meta: RestartOutcomeMeta, data_term: f64, member_count: usize) -> ClusterFit {
    let (obs, proc) = residuals(&st.g, &st.f_mat, &st.states, &st.outputs);
    let objective = data_term + obs.norm_squared() + proc.norm_squared();
    ClusterFit {
        g: st.g,
        f_mat: st.f_mat,
        states: st.states,
        outputs: st.outputs,
        proc_residuals: proc,
        obs_residuals: obs,
        objective,
        member_count,
        iterations: meta.iterations,
        converged: meta.converged,
        restart: meta.restart,
    }
}

/// Best fit over `opts.restarts` random initializations for the given members.
///
/// Restart `r` draws its initial `G`, `F` from stream `(seed, r)`; the result
/// is a deterministic function of the members, the options, and `seed`.
pub fn fit_cluster(members: &[&Trajectory], opts: &FitOptions, seed: u64) -> Result<ClusterFit> {
    let mean = mean_trajectory(members)?;
    let (st, meta) = fit_reduced(&mean, members.len(), opts, seed)?;
    let data_term: f64 = members.iter().map(|m| sq_dist(m.values(), &st.outputs)).sum();
    Ok(assemble(st, meta, data_term, members.len()))
}

/// Fits a single (mean) trajectory standing in for `weight` members.
pub fn fit_weighted(mean: &DMatrix<f64>, weight: usize, opts: &FitOptions, seed: u64) -> Result<ClusterFit> {
    let (st, meta) = fit_reduced(mean, weight, opts, seed)?;
    let data_term = weight as f64 * sq_dist(mean, &st.outputs);
    Ok(assemble(st, meta, data_term, weight))
}

/// Subproblem value recomputed from a fit's fields and the member data.
pub fn subproblem_objective(members: &[&Trajectory], fit: &ClusterFit) -> f64 {
    let data: f64 = members.iter().map(|m| sq_dist(m.values(), &fit.outputs)).sum();
    data + fit.penalty()
}

/// Checks the feasibility and objective invariants of a fit.
pub fn validate_fit(fit: &ClusterFit, members: &[&Trajectory]) -> std::result::Result<(), String> {
    let steps = fit.states.nrows();
    for t in 1..steps {
        let lhs = fit.states.row(t);
        let rhs = (&fit.g * fit.states.row(t - 1).transpose()).transpose() + fit.proc_residuals.row(t - 1);
        let err = (lhs - rhs).abs().max();
        if err > 1e-8 {
            return Err(format!("state recursion violated at t={} by {err:e}", t + 1));
        }
    }
    for t in 0..steps {
        let rhs = (fit.f_mat.transpose() * fit.states.row(t).transpose()).transpose() + fit.obs_residuals.row(t);
        let err = (fit.outputs.row(t) - rhs).abs().max();
        if err > 1e-8 {
            return Err(format!("output equation violated at t={} by {err:e}", t + 1));
        }
    }
    if fit.objective < 0.0 {
        return Err("negative objective".into());
    }
    let recomputed = subproblem_objective(members, fit);
    if (recomputed - fit.objective).abs() > 1e-10 * recomputed.abs().max(f64::MIN_POSITIVE) {
        return Err(format!("objective {} disagrees with recomputed {}", fit.objective, recomputed));
    }
    if fit.member_count != members.len() {
        return Err(format!("member_count {} != {}", fit.member_count, members.len()));
    }
    Ok(())
}
