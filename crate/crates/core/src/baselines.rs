//! Distance-based clustering baselines: dynamic time warping and
//! Fourier-coefficient distance, each followed by k-medoids.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::Assignment;
use crate::error::{Error, Result};
use crate::lds::{Dataset, Trajectory};
use crate::rng;

/// Symmetric, non-negative pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: DMatrix<f64>,
    ids: Vec<usize>,
}

impl DistanceMatrix {
    pub fn new(values: DMatrix<f64>, ids: Vec<usize>) -> Result<Self> {
        let n = values.nrows();
        if values.ncols() != n || ids.len() != n {
            return Err(Error::Shape(format!("distance matrix {:?} with {} ids", values.shape(), ids.len())));
        }
        for i in 0..n {
            if values[(i, i)] != 0.0 {
                return Err(Error::InvalidParameter(format!("non-zero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (values[(i, j)], values[(j, i)]);
                if !(a >= 0.0) || (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidParameter(format!("entry ({i},{j}) is negative or asymmetric")));
                }
            }
        }
        Ok(Self { values, ids })
    }

    /// Evaluates `dist` on every unordered pair, mirroring into both halves.
    pub fn from_fn<F>(data: &Dataset, dist: F) -> Result<Self>
    where
        F: Fn(&Trajectory, &Trajectory) -> Result<f64> + Sync,
    {
        let tr = data.trajectories();
        let n = tr.len();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..i).map(move |j| (i, j))).collect();
        let vals: Vec<f64> = pairs.par_iter().map(|&(i, j)| dist(&tr[i], &tr[j])).collect::<Result<_>>()?;
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), v) in pairs.iter().zip(vals) {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        Self::new(m, tr.iter().map(|t| t.id).collect())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// CSV with a header row of trajectory ids and one row per trajectory.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = self.ids.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.values.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }
}

/// DTW distance: square root of the cheapest monotone alignment cost, with
/// the squared Euclidean distance between observation vectors as the local
/// cost and steps ↓, →, ↘. `band` applies a Sakoe-Chiba constraint
/// `|i − j| ≤ band` and must be at least `|T_a − T_b|`.
pub fn dtw_distance(a: &Trajectory, b: &Trajectory, band: Option<usize>) -> Result<f64> {
    if a.obs_dim() != b.obs_dim() {
        return Err(Error::Shape(format!("observation dims {} and {}", a.obs_dim(), b.obs_dim())));
    }
    let (ta, tb) = (a.horizon(), b.horizon());
    let w = band.unwrap_or(ta.max(tb));
    if w < ta.abs_diff(tb) {
        return Err(Error::InvalidParameter(format!("band {w} is narrower than the length difference {}", ta.abs_diff(tb))));
    }
    let (xa, xb) = (a.values(), b.values());
    let local = |i: usize, j: usize| -> f64 {
        (0..xa.ncols()).map(|k| (xa[(i, k)] - xb[(j, k)]).powi(2)).sum()
    };
    let inf = f64::INFINITY;
    let mut prev = vec![inf; tb + 1];
    let mut cur = vec![inf; tb + 1];
    prev[0] = 0.0;
    for i in 1..=ta {
        cur.fill(inf);
        let lo = i.saturating_sub(w).max(1);
        let hi = (i + w).min(tb);
        for j in lo..=hi {
            let best = prev[j].min(cur[j - 1]).min(prev[j - 1]);
            cur[j] = local(i - 1, j - 1) + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[tb].sqrt())
}

fn is_power_of_two(n: usize) -> bool {
    n != 0 && n & (n - 1) == 0
}

/// Unnormalized forward DFT `X_k = Σ_t x_t e^{−2πikt/T}`. Iterative radix-2
/// for power-of-two lengths, the direct sum otherwise; no padding either way.
pub fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if is_power_of_two(n) {
        radix2(x)
    } else {
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, &v)| {
                        // Reduce k·t mod n first to keep the angle small.
                        let angle = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                        Complex64::from_polar(v, angle)
                    })
                    .sum()
            })
            .collect()
    }
}

fn radix2(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let bits = n.trailing_zeros();
    let mut a: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    for (i, &v) in x.iter().enumerate() {
        let rev = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        a[rev] = Complex64::new(v, 0.0);
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64);
                let u = a[start + k];
                let v = a[start + k + half] * w;
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
    a
}

/// `√(Σ_dims Σ_k |Â_k − B̂_k|²)` over the full unnormalized spectra of each
/// observation dimension.
pub fn fft_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.horizon() != b.horizon() || a.obs_dim() != b.obs_dim() {
        return Err(Error::Shape(format!(
            "Fourier distance needs equal shapes, got {:?} and {:?}",
            a.values().shape(),
            b.values().shape()
        )));
    }
    let mut acc = 0.0;
    for j in 0..a.obs_dim() {
        let sa = dft(a.values().column(j).as_slice());
        let sb = dft(b.values().column(j).as_slice());
        acc += sa.iter().zip(&sb).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>();
    }
    Ok(acc.sqrt())
}

/// Sum over items of the distance to their cluster's medoid.
pub fn medoid_cost(dist: &DistanceMatrix, labels: &[usize], medoids: &[usize]) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| dist.get(i, medoids[l])).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMedoidsResult {
    pub assignment: Assignment,
    pub medoids: Vec<usize>,
    pub cost: f64,
    pub iterations: usize,
    /// Total cost after each assignment step.
    pub trace: Vec<f64>,
}

fn assign_to_medoids(dist: &DistanceMatrix, medoids: &[usize]) -> Vec<usize> {
    (0..dist.len())
        .map(|i| {
            if let Some(own) = medoids.iter().position(|&m| m == i) {
                return own;
            }
            let mut best = 0;
            for (c, &m) in medoids.iter().enumerate() {
                if dist.get(i, m) < dist.get(i, medoids[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Alternating k-medoids: assign each item to its nearest medoid (ties to the
/// lowest cluster), then move each medoid to the member with the smallest
/// total distance to its cluster (ties to the lowest index). Initial medoids
/// are `k` distinct items drawn from stream `(seed, 0)`.
pub fn kmedoids(dist: &DistanceMatrix, k: usize, seed: u64, max_iters: usize) -> Result<KMedoidsResult> {
    let n = dist.len();
    if k == 0 || n < k {
        return Err(Error::InvalidParameter(format!("k-medoids needs 1 <= K <= N, got K={k}, N={n}")));
    }
    let mut r = rng::stream(seed, 0);
    let mut medoids = sample(&mut r, n, k).into_vec();
    let mut labels = assign_to_medoids(dist, &medoids);
    let mut trace = vec![medoid_cost(dist, &labels, &medoids)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut next = medoids.clone();
        for (c, slot) in next.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            let mut best = *slot;
            let mut best_cost: f64 = members.iter().map(|&j| dist.get(best, j)).sum();
            for &cand in &members {
                let cost: f64 = members.iter().map(|&j| dist.get(cand, j)).sum();
                if cost < best_cost || (cost == best_cost && cand < best) {
                    best = cand;
                    best_cost = cost;
                }
            }
            *slot = best;
        }
        if next == medoids {
            break;
        }
        medoids = next;
        labels = assign_to_medoids(dist, &medoids);
        trace.push(medoid_cost(dist, &labels, &medoids));
    }
    let cost = medoid_cost(dist, &labels, &medoids);
    Ok(KMedoidsResult { assignment: Assignment::new(labels, k)?, medoids, cost, iterations, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMethod {
    Dtw,
    Fft,
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineMethod::Dtw => "dtw",
            BaselineMethod::Fft => "fft",
        })
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dtw" => Ok(BaselineMethod::Dtw),
            "fft" => Ok(BaselineMethod::Fft),
            other => Err(Error::InvalidParameter(format!("unknown baseline {other:?}"))),
        }
    }
}

pub const KMEDOIDS_MAX_ITERS: usize = 300;

pub fn distance_matrix(data: &Dataset, method: BaselineMethod) -> Result<DistanceMatrix> {
    match method {
        BaselineMethod::Dtw => DistanceMatrix::from_fn(data, |a, b| dtw_distance(a, b, None)),
        BaselineMethod::Fft => DistanceMatrix::from_fn(data, fft_distance),
    }
}

/// Pairwise distances under `method`, then k-medoids.
pub fn baseline_cluster(data: &Dataset, k: usize, method: BaselineMethod, seed: u64) -> Result<Assignment> {
    let dist = distance_matrix(data, method)?;
    Ok(kmedoids(&dist, k, seed, KMEDOIDS_MAX_ITERS)?.assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(vals: &[f64]) -> Trajectory {
        Trajectory::new(0, DMatrix::from_column_slice(vals.len(), 1, vals), None).unwrap()
    }

    #[test]
    fn dtw_examples() {
        let a = series(&[1.0, 3.0]);
        let b = series(&[1.0, 2.0, 3.0]);
        assert_eq!(dtw_distance(&a, &b, None).unwrap(), 1.0);
        assert_eq!(dtw_distance(&b, &b, None).unwrap(), 0.0);
        let p = Trajectory::from_rows(0, &[vec![0.0, 0.0]], None).unwrap();
        let q = Trajectory::from_rows(1, &[vec![3.0, 4.0]], None).unwrap();
        assert_eq!(dtw_distance(&p, &q, None).unwrap(), 5.0);
    }

    #[test]
    fn dtw_band_checks() {
        let a = series(&[1.0, 3.0]);
        let b = series(&[1.0, 2.0, 3.0, 4.0]);
        assert!(dtw_distance(&a, &b, Some(1)).is_err());
        assert!(dtw_distance(&a, &b, Some(2)).is_ok());
        // A zero band on equal lengths forces the diagonal path.
        let c = series(&[0.0, 1.0, 2.0]);
        let d = series(&[1.0, 2.0, 3.0]);
        assert_eq!(dtw_distance(&c, &d, Some(0)).unwrap(), 3f64.sqrt());
        assert!(dtw_distance(&c, &d, None).unwrap() < 3f64.sqrt());
    }

    #[test]
    fn impulse_spectrum() {
        let s = dft(&[1.0, 0.0, 0.0, 0.0]);
        assert!(s.iter().all(|c| *c == Complex64::new(1.0, 0.0)));
        assert_eq!(fft_distance(&series(&[1.0, 0.0, 0.0, 0.0]), &series(&[0.0; 4])).unwrap(), 2.0);
    }

    #[test]
    fn radix2_matches_direct_sum() {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64 - 1.5).collect();
        let fast = dft(&x);
        for (k, got) in fast.iter().enumerate() {
            let mut want = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                want += Complex64::from_polar(v, -2.0 * PI * (k * t) as f64 / 16.0);
            }
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn fft_distance_rejects_unequal_lengths() {
        assert!(fft_distance(&series(&[1.0, 2.0]), &series(&[1.0])).is_err());
    }

    #[test]
    fn kmedoids_separable_blocks() {
        let n = 6;
        let vals = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else if (i < 3) == (j < 3) { 0.0 } else { 10.0 });
        let d = DistanceMatrix::new(vals, (0..n).collect()).unwrap();
        for seed in 0..10 {
            let r = kmedoids(&d, 2, seed, 300).unwrap();
            let l = r.assignment.labels();
            assert!(l[0] == l[1] && l[1] == l[2]);
            assert!(l[3] == l[4] && l[4] == l[5]);
            assert_ne!(l[0], l[3]);
            assert_eq!(r.cost, 0.0);
        }
    }

    #[test]
    fn kmedoids_k_equals_n() {
        let vals = DMatrix::from_fn(4, 4, |i, j| (i as f64 - j as f64).abs());
        let d = DistanceMatrix::new(vals, (0..4).collect()).unwrap();
        let r = kmedoids(&d, 4, 1, 300).unwrap();
        let mut l = r.assignment.labels().to_vec();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert_eq!(r.cost, 0.0);
    }

    #[test]
    fn distance_matrix_validation_and_csv() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0, 0.0]);
        assert!(DistanceMatrix::new(bad, vec![0, 1]).is_err());
        let good = DistanceMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 1.5, 0.0]), vec![7, 9]).unwrap();
        let mut buf = Vec::new();
        good.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("7,9"));
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [BaselineMethod::Dtw, BaselineMethod::Fft] {
            assert_eq!(m.to_string().parse::<BaselineMethod>().unwrap(), m);
        }
        assert!("kmeans".parse::<BaselineMethod>().is_err());
    }
}
