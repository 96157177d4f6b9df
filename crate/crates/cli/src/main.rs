use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ldsclust::baselines::{baseline_cluster, BaselineMethod};
use ldsclust::data::{generate_synthetic, spaced_angles, ClusterTemplate, SyntheticSpec, DEFAULT_COV_GRID, DEFAULT_RADIUS};
use ldsclust::em::{em_cluster, oracle_cluster, Assignment, ClusteringResult, EmOptions};
use ldsclust::harness::{random_assignment, run_experiment, ExperimentConfig, Method};
use ldsclust::io::{read_dataset, write_dataset};
use ldsclust::metrics::f1_pair;
use ldsclust::{Dataset, FitOptions, Trajectory};

/// Clustering of multivariate time series by per-cluster linear dynamical systems.
#[derive(Parser)]
#[command(name = "ldsclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled dataset (rotation dynamics, covariance grid).
    Generate(GenerateArgs),
    /// Cluster one dataset directory with one method.
    Cluster(ClusterArgs),
    /// Run a multi-trial experiment from a JSON config.
    Benchmark(BenchmarkArgs),
    /// Exhaustive search over all assignments of a small dataset.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct FitFlags {
    /// Hidden state dimension n.
    #[arg(long, default_value_t = 2)]
    hidden_dim: usize,
    /// Outer block-coordinate iterations per fit.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative objective improvement below which a fit stops.
    #[arg(long)]
    tol: Option<f64>,
    /// Random restarts per cluster fit.
    #[arg(long)]
    fit_restarts: Option<usize>,
}

impl FitFlags {
    fn options(&self) -> FitOptions {
        let mut o = FitOptions::default().with_hidden_dim(self.hidden_dim);
        if let Some(v) = self.max_iters {
            o.max_outer_iters = v;
        }
        if let Some(v) = self.tol {
            o.rel_tol = v;
        }
        if let Some(v) = self.fit_restarts {
            o.restarts = v;
        }
        o
    }
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 2)]
    hidden_dim: usize,
    /// Observation dimension m.
    #[arg(long, default_value_t = 2)]
    obs_dim: usize,
    /// Trajectory length T.
    #[arg(long, default_value_t = 100)]
    window: usize,
    /// Noise variances; every (process, observation) pair is generated.
    #[arg(long, value_delimiter = ',')]
    cov_grid: Option<Vec<f64>>,
    /// Trajectories per cluster and covariance pair.
    #[arg(long, default_value_t = 1)]
    replicates: usize,
}

#[derive(Args)]
struct ClusterArgs {
    /// Dataset directory as written by `generate`.
    dataset: PathBuf,
    /// em, oracle, dtw, fft or random.
    #[arg(long, default_value = "em")]
    method: String,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the first T observations of each trajectory.
    #[arg(long)]
    window: Option<usize>,
    /// Random initial partitions for em.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_em_iters: Option<usize>,
    /// Write the result as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured methods (comma-separated).
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long)]
    clusters: Option<usize>,
    /// Overrides the configured hidden dimensions (comma-separated).
    #[arg(long, value_delimiter = ',')]
    hidden_dim: Option<Vec<usize>>,
    /// Overrides the configured windows (comma-separated).
    #[arg(long, value_delimiter = ',')]
    window: Option<Vec<usize>>,
    #[arg(long)]
    trials: Option<usize>,
    /// Base seed; trial k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// EM random initial partitions.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    fit_restarts: Option<usize>,
    /// Trials run concurrently.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    dataset: PathBuf,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitFlags,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<ldsclust::Error> for Failure {
    fn from(e: ldsclust::Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{}", e.render());
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Cluster(a) => cluster(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn generate(a: GenerateArgs) -> Result<(), Failure> {
    let cluster_models = spaced_angles(a.clusters)
        .into_iter()
        .enumerate()
        .map(|(c, angle)| ClusterTemplate::rotation(a.hidden_dim, a.obs_dim, angle, DEFAULT_RADIUS, c as u64))
        .collect();
    let spec = SyntheticSpec {
        hidden_dim: a.hidden_dim,
        obs_dim: a.obs_dim,
        horizon: a.window,
        cov_grid: a.cov_grid.unwrap_or_else(|| DEFAULT_COV_GRID.to_vec()),
        cluster_models,
        seed: a.seed,
        replicates: a.replicates,
    };
    let data = generate_synthetic(&spec)?;
    write_dataset(&a.out, &data, Some(a.seed))?;
    println!("wrote {} trajectories ({}x{}) to {}", data.len(), data.horizon(), data.obs_dim(), a.out.display());
    Ok(())
}

fn load(dir: &Path, window: Option<usize>) -> Result<Dataset, Failure> {
    let data = read_dataset(dir)?;
    let Some(t) = window else { return Ok(data) };
    if t == 0 || t > data.horizon() {
        return Err(Failure::Usage(format!("window {t} outside 1..={}", data.horizon())));
    }
    let cut = data
        .trajectories()
        .iter()
        .map(|tr| Trajectory::new(tr.id, tr.values().rows(0, t).into_owned(), tr.true_label))
        .collect::<ldsclust::Result<Vec<_>>>()?;
    Ok(Dataset::new(cut)?)
}

fn print_assignment(a: &Assignment, data: &Dataset) -> Result<(), Failure> {
    let labels: Vec<String> = a.labels().iter().map(|l| l.to_string()).collect();
    println!("assignment: {}", labels.join(" "));
    println!("sizes: {:?}", a.sizes());
    if let Some(truth) = data.labels() {
        println!("f1: {}", f1_pair(a, &truth)?);
    }
    Ok(())
}

fn print_result(r: &ClusteringResult, data: &Dataset) -> Result<(), Failure> {
    print_assignment(&r.assignment, data)?;
    println!("objective: {}", r.joint_objective);
    println!("iterations: {}", r.iterations);
    println!("converged: {}", r.converged);
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn cluster(a: ClusterArgs) -> Result<(), Failure> {
    let method: Method = a.method.parse()?;
    let opts = a.fit.options();
    let mut em = EmOptions::default();
    if let Some(r) = a.restarts {
        em.restarts = r;
    }
    if let Some(v) = a.max_em_iters {
        em.max_em_iters = v;
    }
    let data = load(&a.dataset, a.window)?;
    match method {
        Method::Em | Method::Oracle => {
            let r = if method == Method::Em {
                em_cluster(&data, a.clusters, &opts, &em, a.seed)?
            } else {
                oracle_cluster(&data, a.clusters, &opts, a.seed)?
            };
            print_result(&r, &data)?;
            if let Some(p) = &a.out {
                write_json(p, &r)?;
            }
        }
        Method::Dtw | Method::Fft | Method::Random => {
            let assignment = match method {
                Method::Dtw => baseline_cluster(&data, a.clusters, BaselineMethod::Dtw, a.seed)?,
                Method::Fft => baseline_cluster(&data, a.clusters, BaselineMethod::Fft, a.seed)?,
                _ => random_assignment(data.len(), a.clusters, a.seed)?,
            };
            print_assignment(&assignment, &data)?;
            if let Some(p) = &a.out {
                write_json(p, &assignment)?;
            }
        }
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<(), Failure> {
    let data = load(&a.dataset, None)?;
    let r = oracle_cluster(&data, a.clusters, &a.fit.options(), a.seed)?;
    println!("partitions searched: {}", r.iterations);
    print_assignment(&r.assignment, &data)?;
    println!("objective: {}", r.joint_objective);
    if let Some(p) = &a.out {
        write_json(p, &r)?;
    }
    Ok(())
}

fn benchmark(a: BenchmarkArgs) -> Result<(), Failure> {
    // Anything wrong with the config file itself is a data error.
    let mut cfg = ExperimentConfig::load(&a.config).map_err(|e| Failure::Data(e.to_string()))?;
    if let Some(ms) = a.method {
        cfg.methods = ms.iter().map(|m| m.parse()).collect::<ldsclust::Result<_>>()?;
    }
    if let Some(v) = a.clusters {
        cfg.clusters = v;
    }
    if let Some(v) = a.hidden_dim {
        cfg.hidden_dims = v;
    }
    if let Some(v) = a.window {
        cfg.windows = v;
    }
    if let Some(v) = a.trials {
        cfg.trials = v;
    }
    if let Some(v) = a.seed {
        cfg.base_seed = v;
    }
    if let Some(v) = a.out {
        cfg.output_dir = v;
    }
    if let Some(v) = a.max_iters {
        cfg.fit.max_outer_iters = v;
    }
    if let Some(v) = a.tol {
        cfg.fit.rel_tol = v;
    }
    if let Some(v) = a.restarts {
        cfg.em.restarts = v;
    }
    if let Some(v) = a.fit_restarts {
        cfg.fit.restarts = v;
    }
    if let Some(v) = a.jobs {
        cfg.jobs = v;
    }
    cfg.validate()?;
    let report = run_experiment(&cfg)?;
    println!("{:<8} {:>3} {:>5} {:>6} {:>8} {:>8}", "method", "n", "T", "trials", "f1_mean", "f1_ci95");
    for s in &report.summaries {
        let mean = s.f1_mean.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        let ci = s.stats.as_ref().map(|v| format!("{:.4}", v.ci_half_width)).unwrap_or_else(|| "-".into());
        println!("{:<8} {:>3} {:>5} {:>6} {:>8} {:>8}", s.method, s.n, s.horizon, s.trials, mean, ci);
    }
    println!("results in {}", cfg.output_dir.display());
    Ok(())
}
