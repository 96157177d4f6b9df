//! Seeded multi-trial experiments: every (method, n, T) cell runs `trials`
//! trials with seeds `base_seed + k`, appends one row per trial to
//! `records.csv`, dumps each assignment as JSON, and finishes with a
//! `summary.csv` of per-cell means and 95% half-widths.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_cluster, BaselineMethod};
use crate::data::{
    generate_synthetic, load_ucr, sample_two_class, ClusterTemplate, SyntheticSpec, TwoClassSampling, UcrDataset,
    DEFAULT_ANGLES, DEFAULT_COV_GRID, DEFAULT_RADIUS,
};
use crate::em::{em_cluster, oracle_cluster, Assignment, EmOptions};
use crate::error::{Error, Result};
use crate::fit::FitOptions;
use crate::lds::Dataset;
use crate::metrics::{aggregate, f1_pair, TrialStats};
use crate::rng;

pub const RECORDS_HEADER: &str = "method,dataset,n,T,seed,f1,objective,iterations,runtime_ms,converged";
pub const SUMMARY_HEADER: &str = "method,dataset,n,T,trials,f1_mean,f1_ci95";

/// Written in the `f1` column of a trial whose method failed.
pub const ERROR_MARKER: &str = "error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Em,
    Oracle,
    Dtw,
    Fft,
    /// Labels drawn uniformly at random; a floor for the other methods.
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Em, Method::Oracle, Method::Dtw, Method::Fft, Method::Random];

    pub fn name(self) -> &'static str {
        match self {
            Method::Em => "em",
            Method::Oracle => "oracle",
            Method::Dtw => "dtw",
            Method::Fft => "fft",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method {s:?} (expected em, oracle, dtw, fft or random)")))
    }
}

/// Uniform random labels in `0..k` from stream `(seed, 0)`.
pub fn random_assignment(n: usize, k: usize, seed: u64) -> Result<Assignment> {
    let mut r = rng::stream(seed, 0);
    Assignment::new((0..n).map(|_| r.gen_range(0..k)).collect(), k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Rotation-dynamics clusters; one cluster per entry of `angles`.
    Synthetic {
        #[serde(default = "default_obs_dim")]
        obs_dim: usize,
        #[serde(default = "default_cov_grid")]
        cov_grid: Vec<f64>,
        #[serde(default = "default_angles")]
        angles: Vec<f64>,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_replicates")]
        replicates: usize,
    },
    /// UCR-format files, concatenated in order, sampled two classes at a time.
    Ucr {
        paths: Vec<PathBuf>,
        normal_label: i64,
        abnormal_label: i64,
        per_class: usize,
        #[serde(default)]
        anchor: usize,
    },
}

fn default_obs_dim() -> usize {
    2
}
fn default_cov_grid() -> Vec<f64> {
    DEFAULT_COV_GRID.to_vec()
}
fn default_angles() -> Vec<f64> {
    DEFAULT_ANGLES.to_vec()
}
fn default_radius() -> f64 {
    DEFAULT_RADIUS
}
fn default_replicates() -> usize {
    1
}

impl DatasetSpec {
    pub fn synthetic() -> Self {
        DatasetSpec::Synthetic {
            obs_dim: default_obs_dim(),
            cov_grid: default_cov_grid(),
            angles: default_angles(),
            radius: default_radius(),
            replicates: 1,
        }
    }
}

fn default_trials() -> usize {
    50
}
fn default_clusters() -> usize {
    2
}
fn default_hidden_dims() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_jobs() -> usize {
    1
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// One benchmark run. For synthetic data `windows` are generated horizons
/// (empty means 100); for UCR data they are cut lengths and must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Name written in the `dataset` column; defaults to `synthetic` or the
    /// stem of the first UCR file.
    #[serde(default)]
    pub name: Option<String>,
    pub methods: Vec<Method>,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub windows: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub em: EmOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

pub const DEFAULT_SYNTHETIC_HORIZON: usize = 100;

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, methods: Vec<Method>) -> Self {
        Self {
            dataset,
            name: None,
            methods,
            clusters: default_clusters(),
            hidden_dims: default_hidden_dims(),
            windows: Vec::new(),
            trials: default_trials(),
            base_seed: 0,
            fit: FitOptions::default(),
            em: EmOptions::default(),
            output_dir: default_output_dir(),
            jobs: default_jobs(),
        }
    }

    /// Reads and validates a JSON config. Relative UCR paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if let DatasetSpec::Ucr { paths, .. } = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in paths.iter_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.clusters == 0 {
            return bad("clusters must be >= 1".into());
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be a non-empty list of positive integers".into());
        }
        if self.windows.contains(&0) {
            return bad("windows must be positive".into());
        }
        if self.jobs == 0 {
            return bad("jobs must be >= 1".into());
        }
        self.fit.validate()?;
        if self.em.max_em_iters == 0 || self.em.restarts == 0 {
            return bad("em.max_em_iters and em.restarts must be >= 1".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic { angles, replicates, .. } => {
                if angles.len() != self.clusters {
                    return bad(format!("{} angles given for {} clusters", angles.len(), self.clusters));
                }
                if *replicates == 0 {
                    return bad("replicates must be >= 1".into());
                }
            }
            DatasetSpec::Ucr { paths, .. } => {
                if self.clusters != 2 {
                    return bad("UCR sampling produces two classes; clusters must be 2".into());
                }
                if self.windows.is_empty() {
                    return bad("UCR experiments need at least one window".into());
                }
                if paths.is_empty() {
                    return bad("UCR dataset needs at least one path".into());
                }
                for p in paths {
                    if !p.is_file() {
                        return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "file not found")));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.dataset {
            DatasetSpec::Synthetic { .. } => "synthetic".into(),
            DatasetSpec::Ucr { paths, .. } => paths
                .first()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().split('_').next().unwrap_or_default().to_string())
                .unwrap_or_else(|| "ucr".into()),
        }
    }

    fn horizons(&self) -> Vec<usize> {
        if self.windows.is_empty() {
            vec![DEFAULT_SYNTHETIC_HORIZON]
        } else {
            self.windows.clone()
        }
    }
}

/// One trial of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub dataset: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub seed: u64,
    /// `None` when the method failed; see `error`.
    pub f1: Option<f64>,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub runtime_ms: u64,
    pub converged: Option<bool>,
    pub error: Option<String>,
}

fn opt<T: fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl RunRecord {
    /// One `records.csv` row (no newline). Floats use the shortest
    /// representation that round-trips.
    pub fn csv_row(&self) -> String {
        let f1 = match self.f1 {
            Some(v) => v.to_string(),
            None => ERROR_MARKER.to_string(),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.method,
            self.dataset,
            self.n,
            self.horizon,
            self.seed,
            f1,
            opt(&self.objective),
            opt(&self.iterations),
            self.runtime_ms,
            opt(&self.converged)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub dataset: String,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Successful trials.
    pub trials: usize,
    pub f1_mean: Option<f64>,
    /// `None` with fewer than two successful trials.
    pub stats: Option<TrialStats>,
}

impl CellSummary {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.dataset,
            self.n,
            self.horizon,
            self.trials,
            opt(&self.f1_mean),
            opt(&self.stats.as_ref().map(|s| s.ci_half_width))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<RunRecord>,
    pub summaries: Vec<CellSummary>,
}

/// Stored under `assignments/<cell>/<seed>.json`; enough to recompute F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentDump {
    pub method: Method,
    pub seed: u64,
    pub truth: Vec<usize>,
    pub assignment: Option<Assignment>,
    pub error: Option<String>,
}

pub fn cell_dir_name(method: Method, n: usize, horizon: usize) -> String {
    format!("{method}_n{n}_T{horizon}")
}

struct Outcome {
    assignment: Assignment,
    objective: Option<f64>,
    iterations: Option<usize>,
    converged: Option<bool>,
}

fn run_method(method: Method, data: &Dataset, k: usize, fit: &FitOptions, em: &EmOptions, seed: u64) -> Result<Outcome> {
    let from_result = |r: crate::em::ClusteringResult| Outcome {
        assignment: r.assignment,
        objective: Some(r.joint_objective),
        iterations: Some(r.iterations),
        converged: Some(r.converged),
    };
    let plain = |assignment| Outcome { assignment, objective: None, iterations: None, converged: None };
    Ok(match method {
        Method::Em => from_result(em_cluster(data, k, fit, em, seed)?),
        Method::Oracle => from_result(oracle_cluster(data, k, fit, seed)?),
        Method::Dtw => plain(baseline_cluster(data, k, BaselineMethod::Dtw, seed)?),
        Method::Fft => plain(baseline_cluster(data, k, BaselineMethod::Fft, seed)?),
        Method::Random => plain(random_assignment(data.len(), k, seed)?),
    })
}

enum Source {
    Synthetic(Vec<ClusterTemplateSet>),
    Ucr(UcrDataset),
}

struct ClusterTemplateSet {
    n: usize,
    templates: Vec<ClusterTemplate>,
}

fn build_dataset(cfg: &ExperimentConfig, source: &Source, n: usize, horizon: usize, seed: u64) -> Result<Dataset> {
    match (&cfg.dataset, source) {
        (DatasetSpec::Synthetic { obs_dim, cov_grid, replicates, .. }, Source::Synthetic(sets)) => {
            let templates = &sets.iter().find(|s| s.n == n).expect("templates built for every n").templates;
            generate_synthetic(&SyntheticSpec {
                hidden_dim: n,
                obs_dim: *obs_dim,
                horizon,
                cov_grid: cov_grid.clone(),
                cluster_models: templates.clone(),
                seed,
                replicates: *replicates,
            })
        }
        (DatasetSpec::Ucr { normal_label, abnormal_label, per_class, anchor, .. }, Source::Ucr(ucr)) => {
            let sampling = TwoClassSampling {
                normal_label: *normal_label,
                abnormal_label: *abnormal_label,
                per_class: *per_class,
                window: horizon,
                anchor: *anchor,
            };
            sample_two_class(ucr, &sampling, seed)
        }
        _ => unreachable!("source matches dataset spec"),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Runs every cell of `cfg`, writing results under `cfg.output_dir`.
///
/// Cells are ordered by `n`, then `T`, then method as listed; trials within a
/// cell run up to `jobs` at a time but are written in trial order. The data of
/// trial `k` depends only on `(n, T, base_seed + k)`, so all methods in a
/// given `(n, T)` see the same samples.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let source = match &cfg.dataset {
        DatasetSpec::Synthetic { obs_dim, angles, radius, .. } => Source::Synthetic(
            cfg.hidden_dims
                .iter()
                .map(|&n| ClusterTemplateSet {
                    n,
                    templates: angles
                        .iter()
                        .enumerate()
                        .map(|(c, &a)| ClusterTemplate::rotation(n, *obs_dim, a, *radius, c as u64))
                        .collect(),
                })
                .collect(),
        ),
        DatasetSpec::Ucr { paths, .. } => {
            let parts = paths.iter().map(|p| load_ucr(p)).collect::<Result<Vec<_>>>()?;
            Source::Ucr(UcrDataset::concat(parts)?)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let out = &cfg.output_dir;
    fs::create_dir_all(out.join("assignments")).map_err(io_err(out))?;
    let records_path = out.join("records.csv");
    let mut records_file =
        BufWriter::new(File::create(&records_path).map_err(io_err(&records_path))?);
    writeln!(records_file, "{RECORDS_HEADER}").map_err(io_err(&records_path))?;
    records_file.flush().map_err(io_err(&records_path))?;

    let dataset = cfg.dataset_name();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for &n in &cfg.hidden_dims {
        for horizon in cfg.horizons() {
            let seeds: Vec<u64> = (0..cfg.trials as u64).map(|k| cfg.base_seed.wrapping_add(k)).collect();
            let datasets: Vec<Result<Dataset>> =
                pool.install(|| seeds.par_iter().map(|&s| build_dataset(cfg, &source, n, horizon, s)).collect());
            let fit = cfg.fit.clone().with_hidden_dim(n);
            for &method in &cfg.methods {
                let cell = out.join("assignments").join(cell_dir_name(method, n, horizon));
                fs::create_dir_all(&cell).map_err(io_err(&cell))?;
                let mut cell_records = Vec::with_capacity(cfg.trials);
                for chunk in seeds.iter().zip(&datasets).collect::<Vec<_>>().chunks(cfg.jobs) {
                    let results: Vec<(RunRecord, AssignmentDump)> = pool.install(|| {
                        chunk
                            .par_iter()
                            .map(|&(&seed, data)| run_trial(cfg, method, &dataset, n, horizon, seed, data, &fit))
                            .collect()
                    });
                    for (rec, dump) in results {
                        let path = cell.join(format!("{seed}.json", seed = rec.seed));
                        let json = serde_json::to_string_pretty(&dump).map_err(|e| Error::json(&path, e))?;
                        fs::write(&path, json).map_err(io_err(&path))?;
                        writeln!(records_file, "{}", rec.csv_row()).map_err(io_err(&records_path))?;
                        records_file.flush().map_err(io_err(&records_path))?;
                        cell_records.push(rec);
                    }
                }
                summaries.push(summarize(method, &dataset, n, horizon, &cell_records)?);
                records.extend(cell_records);
            }
        }
    }

    let summary_path = out.join("summary.csv");
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for c in &summaries {
        s.push_str(&c.csv_row());
        s.push('\n');
    }
    fs::write(&summary_path, s).map_err(io_err(&summary_path))?;
    Ok(ExperimentReport { records, summaries })
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    cfg: &ExperimentConfig,
    method: Method,
    dataset: &str,
    n: usize,
    horizon: usize,
    seed: u64,
    data: &Result<Dataset>,
    fit: &FitOptions,
) -> (RunRecord, AssignmentDump) {
    let start = Instant::now();
    let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|d| {
        let truth = d.labels().ok_or_else(|| "dataset has no true labels".to_string())?;
        let o = run_method(method, d, cfg.clusters, fit, &cfg.em, seed).map_err(|e| e.to_string())?;
        let f1 = f1_pair(&o.assignment, &truth).map_err(|e| e.to_string())?;
        Ok((o, f1, truth))
    });
    let runtime_ms = start.elapsed().as_millis() as u64;
    let mut rec = RunRecord {
        method,
        dataset: dataset.to_string(),
        n,
        horizon,
        seed,
        f1: None,
        objective: None,
        iterations: None,
        runtime_ms,
        converged: None,
        error: None,
    };
    let dump = match outcome {
        Ok((o, f1, truth)) => {
            rec.f1 = Some(f1);
            rec.objective = o.objective;
            rec.iterations = o.iterations;
            rec.converged = o.converged;
            AssignmentDump { method, seed, truth, assignment: Some(o.assignment), error: None }
        }
        Err(msg) => {
            rec.error = Some(msg.clone());
            let truth = data.as_ref().ok().and_then(|d| d.labels()).unwrap_or_default();
            AssignmentDump { method, seed, truth, assignment: None, error: Some(msg) }
        }
    };
    (rec, dump)
}

fn summarize(method: Method, dataset: &str, n: usize, horizon: usize, recs: &[RunRecord]) -> Result<CellSummary> {
    let scores: Vec<f64> = recs.iter().filter_map(|r| r.f1).collect();
    let f1_mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64);
    let stats = if scores.len() >= 2 { Some(aggregate(&scores)?) } else { None };
    Ok(CellSummary {
        method,
        dataset: dataset.to_string(),
        n,
        horizon,
        trials: scores.len(),
        // Use the aggregate's mean when there is one so both agree exactly.
        f1_mean: stats.as_ref().map(|s| s.mean).or(f1_mean),
        stats,
    })
}
