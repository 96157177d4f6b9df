//! Synthetic dataset generation and UCR-format ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::{simulate, Dataset, LdsModel, Trajectory};
use crate::rng::{self, NormalStream};

/// Seed of the fixed draw that fills the template observation matrices.
pub const TEMPLATE_F_SEED: u64 = 0x5eed_f00d;

/// Default rotation angles (radians) of the two template clusters.
pub const DEFAULT_ANGLES: [f64; 2] = [0.3, 1.2];

/// Default spectral radius of the template rotations.
pub const DEFAULT_RADIUS: f64 = 0.99;

/// `k` rotation angles `0.3 + 0.9·c`; the first two are [`DEFAULT_ANGLES`].
pub fn spaced_angles(k: usize) -> Vec<f64> {
    (0..k).map(|c| 0.3 + 0.9 * c as f64).collect()
}

pub const DEFAULT_COV_GRID: [f64; 4] = [0.0004, 0.0016, 0.0036, 0.0064];

/// Fixed system matrices and initial state of one synthetic cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterTemplate {
    #[serde(with = "crate::matrix_serde")]
    pub g: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub f_mat: DMatrix<f64>,
    pub phi0: Vec<f64>,
}

impl ClusterTemplate {
    /// Scaled rotation `radius·R(angle)` in the leading 2×2 block of `G`, 0.9 on
    /// the remaining diagonal, `F` uniform on `[−1, 1]` from the fixed template
    /// seed (stream `cluster`), and `φ₀ = (1, 0, …)`.
    ///
    /// For `n = 1` there is no rotation; `G = radius·cos(angle)`.
    pub fn rotation(n: usize, m: usize, angle: f64, radius: f64, cluster: u64) -> Self {
        let mut g = DMatrix::zeros(n, n);
        if n == 1 {
            g[(0, 0)] = radius * angle.cos();
        } else {
            let (s, c) = angle.sin_cos();
            g[(0, 0)] = radius * c;
            g[(0, 1)] = -radius * s;
            g[(1, 0)] = radius * s;
            g[(1, 1)] = radius * c;
            for i in 2..n {
                g[(i, i)] = 0.9;
            }
        }
        let mut r = rng::stream(TEMPLATE_F_SEED, cluster);
        let f_mat = DMatrix::from_fn(n, m, |_, _| r.gen_range(-1.0..=1.0));
        let mut phi0 = vec![0.0; n];
        phi0[0] = 1.0;
        Self { g, f_mat, phi0 }
    }

    pub fn model(&self, sigma_h: f64, sigma_o: f64) -> Result<LdsModel> {
        let n = self.g.nrows();
        let m = self.f_mat.ncols();
        LdsModel::new(
            self.g.clone(),
            self.f_mat.clone(),
            DMatrix::identity(n, n) * sigma_h,
            DMatrix::identity(m, m) * sigma_o,
            self.phi0.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub hidden_dim: usize,
    pub obs_dim: usize,
    pub horizon: usize,
    pub cov_grid: Vec<f64>,
    pub cluster_models: Vec<ClusterTemplate>,
    pub seed: u64,
    /// Trajectories drawn per cluster and covariance pair.
    #[serde(default = "one")]
    pub replicates: usize,
}

fn one() -> usize {
    1
}

impl SyntheticSpec {
    /// Two rotation clusters with the default angles, `m = 2`, `T = 100`, and
    /// the default covariance grid.
    pub fn rotations(hidden_dim: usize, seed: u64) -> Self {
        Self::rotations_with(hidden_dim, 2, 100, DEFAULT_COV_GRID.to_vec(), seed)
    }

    pub fn rotations_with(hidden_dim: usize, obs_dim: usize, horizon: usize, cov_grid: Vec<f64>, seed: u64) -> Self {
        let cluster_models = DEFAULT_ANGLES
            .iter()
            .enumerate()
            .map(|(c, &a)| ClusterTemplate::rotation(hidden_dim, obs_dim, a, DEFAULT_RADIUS, c as u64))
            .collect();
        Self { hidden_dim, obs_dim, horizon, cov_grid, cluster_models, seed, replicates: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.obs_dim == 0 || self.horizon == 0 || self.replicates == 0 {
            return Err(Error::InvalidParameter("hidden_dim, obs_dim, horizon and replicates must be >= 1".into()));
        }
        if self.cov_grid.is_empty() || self.cov_grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter("cov_grid must be non-empty with finite entries >= 0".into()));
        }
        if self.cluster_models.is_empty() {
            return Err(Error::InvalidParameter("at least one cluster template is required".into()));
        }
        for (c, t) in self.cluster_models.iter().enumerate() {
            if t.g.shape() != (self.hidden_dim, self.hidden_dim)
                || t.f_mat.shape() != (self.hidden_dim, self.obs_dim)
                || t.phi0.len() != self.hidden_dim
            {
                return Err(Error::InvalidParameter(format!("cluster template {c} has the wrong shape")));
            }
        }
        Ok(())
    }
}

/// `replicates` trajectories per cluster and per `(σ_H, σ_O)` in `cov_grid × cov_grid`,
/// with `Σ_H = σ_H·I_n` and `Σ_O = σ_O·I_m`.
///
/// Trajectory ids run cluster-major; the noise of trajectory `id` comes from
/// stream `(seed, id)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut out = Vec::new();
    for (c, template) in spec.cluster_models.iter().enumerate() {
        for &sh in &spec.cov_grid {
            for &so in &spec.cov_grid {
                let model = template.model(sh, so)?;
                for _ in 0..spec.replicates {
                    let id = out.len();
                    let mut noise = NormalStream::from_seed(spec.seed, id as u64);
                    let tr = simulate(&model, spec.horizon, &mut noise)?;
                    out.push(tr.with_id(id).with_label(Some(c)));
                }
            }
        }
    }
    Dataset::new(out)
}

/// Rows of a UCR-format file: class label followed by the series values.
#[derive(Debug, Clone, PartialEq)]
pub struct UcrDataset {
    pub sequences: Vec<(i64, Vec<f64>)>,
    pub source: PathBuf,
    pub length: usize,
}

impl UcrDataset {
    pub fn count_label(&self, label: i64) -> usize {
        self.sequences.iter().filter(|(l, _)| *l == label).count()
    }

    /// Concatenates datasets of equal series length.
    pub fn concat(parts: Vec<UcrDataset>) -> Result<UcrDataset> {
        let mut iter = parts.into_iter();
        let mut acc = iter.next().ok_or_else(|| Error::Insufficient("no UCR files given".into()))?;
        for p in iter {
            if p.length != acc.length {
                return Err(Error::Shape(format!(
                    "{} has length {}, {} has {}",
                    p.source.display(),
                    p.length,
                    acc.source.display(),
                    acc.length
                )));
            }
            acc.sequences.extend(p.sequences);
        }
        Ok(acc)
    }
}

fn split_row(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses UCR text: one series per line, label first. Tab, comma and
/// (legacy) whitespace delimiters are accepted.
pub fn parse_ucr(text: &str, source: &Path) -> Result<UcrDataset> {
    let mut sequences = Vec::new();
    let mut length: Option<usize> = None;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = split_row(line);
        let err = |msg: String| Error::Parse { path: source.into(), line: line_no, msg };
        let label_val: f64 = cells[0].parse().map_err(|_| err(format!("label {:?} is not numeric", cells[0])))?;
        if label_val.fract() != 0.0 || !label_val.is_finite() {
            return Err(err(format!("label {label_val} is not an integer")));
        }
        let mut values = Vec::with_capacity(cells.len() - 1);
        for c in &cells[1..] {
            let v: f64 = c.parse().map_err(|_| err(format!("value {c:?} is not numeric")))?;
            if !v.is_finite() {
                return Err(err(format!("value {c:?} is not finite")));
            }
            values.push(v);
        }
        if values.is_empty() {
            return Err(err("row has a label but no values".into()));
        }
        match length {
            None => length = Some(values.len()),
            Some(l) if l != values.len() => {
                return Err(err(format!(
                    "row {} has {} values, expected {l}",
                    sequences.len(),
                    values.len()
                )))
            }
            _ => {}
        }
        sequences.push((label_val as i64, values));
    }
    let length = length.ok_or_else(|| Error::Parse { path: source.into(), line: 1, msg: "no rows".into() })?;
    Ok(UcrDataset { sequences, source: source.into(), length })
}

pub fn load_ucr(path: &Path) -> Result<UcrDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ucr(&text, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoClassSampling {
    pub normal_label: i64,
    pub abnormal_label: i64,
    pub per_class: usize,
    pub window: usize,
    #[serde(default)]
    pub anchor: usize,
}

/// Draws `per_class` rows of each label without replacement and cuts the
/// window `[anchor, anchor + window)` from each. Normal rows get label 0 and
/// come first; abnormal rows get label 1.
pub fn sample_two_class(ucr: &UcrDataset, s: &TwoClassSampling, seed: u64) -> Result<Dataset> {
    if s.window == 0 || s.anchor + s.window > ucr.length {
        return Err(Error::InvalidParameter(format!(
            "window [{}, {}) does not fit series of length {}",
            s.anchor,
            s.anchor + s.window,
            ucr.length
        )));
    }
    if s.per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be >= 1".into()));
    }
    let mut r = rng::stream(seed, 0);
    let mut out = Vec::with_capacity(2 * s.per_class);
    for (class, label) in [s.normal_label, s.abnormal_label].into_iter().enumerate() {
        let rows: Vec<&Vec<f64>> = ucr.sequences.iter().filter(|(l, _)| *l == label).map(|(_, v)| v).collect();
        if rows.len() < s.per_class {
            return Err(Error::Insufficient(format!(
                "label {label} has {} rows, {} requested",
                rows.len(),
                s.per_class
            )));
        }
        let mut picks = sample(&mut r, rows.len(), s.per_class).into_vec();
        picks.sort_unstable();
        for p in picks {
            let window = &rows[p][s.anchor..s.anchor + s.window];
            let id = out.len();
            out.push(Trajectory::new(id, DMatrix::from_column_slice(s.window, 1, window), Some(class))?);
        }
    }
    Dataset::new(out)
}
