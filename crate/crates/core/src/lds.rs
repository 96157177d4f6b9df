//! Trajectories, linear dynamical system models, and simulation.
//!
//! A model evolves a hidden state and emits observations:
//!
//! ```text
//! φ_t = G φ_{t-1} + ω_t,   ω_t ~ N(0, Σ_H)
//! x_t = F' φ_t + υ_t,      υ_t ~ N(0, Σ_O)
//! ```
//!
//! Matrices keep their stated orientation: trajectories are `T × m` (one row
//! per time step), `G` is `n × n` and `F` is `n × m`, applied as `F'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::psd_factor;
use crate::rng::NormalStream;

/// One observed multivariate time series, `T` rows by `m` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: usize,
    values: DMatrix<f64>,
    pub true_label: Option<usize>,
}

impl Trajectory {
    pub fn new(id: usize, values: DMatrix<f64>, true_label: Option<usize>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!(
                "trajectory {id} must have T >= 1 and m >= 1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("trajectory {id}")));
        }
        Ok(Self { id, values, true_label })
    }

    /// Builds a trajectory from row-major data (`T` rows of `m` values).
    pub fn from_rows(id: usize, rows: &[Vec<f64>], true_label: Option<usize>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Shape(format!("trajectory {id} has ragged rows")));
        }
        Self::new(id, DMatrix::from_row_iterator(rows.len(), m, rows.iter().flatten().copied()), true_label)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn horizon(&self) -> usize {
        self.values.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_id(mut self, id: usize) -> Self {
        self.id = id;
        self
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.true_label = label;
        self
    }
}

/// A collection of trajectories sharing `T` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Insufficient("dataset has no trajectories".into()))?;
        let (t, m) = (first.horizon(), first.obs_dim());
        for tr in &trajectories {
            if tr.horizon() != t || tr.obs_dim() != m {
                return Err(Error::Shape(format!(
                    "trajectory {} is {}x{}, dataset is {t}x{m}",
                    tr.id,
                    tr.horizon(),
                    tr.obs_dim()
                )));
            }
        }
        Ok(Self { trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].horizon()
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories[0].obs_dim()
    }

    /// Ground-truth labels, if every trajectory carries one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.trajectories.iter().map(|t| t.true_label).collect()
    }
}

/// The quadruple `(G, F, Σ_H, Σ_O)` plus the initial state `φ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdsModel {
    #[serde(with = "crate::matrix_serde")]
    pub g: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub f_mat: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub sigma_h: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub sigma_o: DMatrix<f64>,
    pub phi0: Vec<f64>,
}

impl LdsModel {
    pub fn new(
        g: DMatrix<f64>,
        f_mat: DMatrix<f64>,
        sigma_h: DMatrix<f64>,
        sigma_o: DMatrix<f64>,
        phi0: Vec<f64>,
    ) -> Result<Self> {
        let model = Self { g, f_mat, sigma_h, sigma_o, phi0 };
        model.validate()?;
        Ok(model)
    }

    pub fn hidden_dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.f_mat.ncols()
    }

    /// Checks shapes, finiteness, and PSD covariances; returns the two
    /// covariance factors on success.
    fn validate(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let n = self.g.nrows();
        if n == 0 || self.g.ncols() != n {
            return Err(Error::Shape(format!("G must be n x n with n >= 1, got {}x{}", n, self.g.ncols())));
        }
        if self.f_mat.nrows() != n || self.f_mat.ncols() == 0 {
            return Err(Error::Shape(format!(
                "F must be {n} x m with m >= 1, got {}x{}",
                self.f_mat.nrows(),
                self.f_mat.ncols()
            )));
        }
        let m = self.f_mat.ncols();
        if self.sigma_h.shape() != (n, n) {
            return Err(Error::Shape(format!("sigma_h must be {n}x{n}")));
        }
        if self.sigma_o.shape() != (m, m) {
            return Err(Error::Shape(format!("sigma_o must be {m}x{m}")));
        }
        if self.phi0.len() != n {
            return Err(Error::Shape(format!("phi0 must have length {n}")));
        }
        if self.g.iter().chain(self.f_mat.iter()).chain(self.phi0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LDS model".into()));
        }
        Ok((psd_factor(&self.sigma_h, "sigma_h")?, psd_factor(&self.sigma_o, "sigma_o")?))
    }
}

/// Draws one realization of length `horizon`.
///
/// `φ₁ = G φ₀ + ω₁`, so `φ₀` acts as the initial condition. Each step draws
/// `n` standard normals for `ω_t` and then `m` for `υ_t`, and colours them
/// with the lower-triangular covariance factors; draws happen even for zero
/// covariance so streams stay aligned across noise levels.
pub fn simulate(model: &LdsModel, horizon: usize, noise: &mut NormalStream) -> Result<Trajectory> {
    let (lh, lo) = model.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be >= 1".into()));
    }
    let n = model.hidden_dim();
    let m = model.obs_dim();
    let ft = model.f_mat.transpose();
    let mut phi = DVector::from_column_slice(&model.phi0);
    let mut out = DMatrix::zeros(horizon, m);
    for t in 0..horizon {
        let z_h = DVector::from_fn(n, |_, _| noise.next_normal());
        let z_o = DVector::from_fn(m, |_, _| noise.next_normal());
        phi = &model.g * &phi + &lh * z_h;
        let x = &ft * &phi + &lo * z_o;
        out.row_mut(t).copy_from(&x.transpose());
    }
    Trajectory::new(0, out, None)
}

/// `Σ_t ‖x_t − f_t‖²`.
pub fn trajectory_error(x: &Trajectory, outputs: &DMatrix<f64>) -> Result<f64> {
    if x.values().shape() != outputs.shape() {
        return Err(Error::Shape(format!(
            "trajectory is {:?}, outputs are {:?}",
            x.values().shape(),
            outputs.shape()
        )));
    }
    Ok(sq_dist(x.values(), outputs))
}

/// Squared Frobenius distance, summed time-major (over `t`, then over `j`).
pub(crate) fn sq_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for t in 0..a.nrows() {
        for j in 0..a.ncols() {
            let d = a[(t, j)] - b[(t, j)];
            acc += d * d;
        }
    }
    acc
}
