//! Joint clustering of multivariate time series with per-cluster linear
//! dynamical system (LDS) identification.
//!
//! The crate is organized bottom-up:
//!
//! - [`lds`]: trajectories, LDS models, simulation;
//! - [`fit`]: per-cluster identification by block-coordinate descent;
//! - [`em`]: the alternating clustering heuristic and an exhaustive oracle;
//! - [`baselines`]: DTW and Fourier-distance clustering with k-medoids;
//! - [`metrics`]: F1 scoring and trial aggregates;
//! - [`data`]: synthetic generation and UCR-format ingestion;
//! - [`harness`]: seeded multi-trial experiments with CSV output.

pub mod baselines;
pub mod data;
pub mod em;
pub mod error;
pub mod fit;
pub mod harness;
pub mod io;
pub mod lds;
pub mod linalg;
mod matrix_serde;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
pub use fit::{fit_cluster, ClusterFit, FitOptions};
pub use lds::{simulate, trajectory_error, Dataset, LdsModel, Trajectory};
pub use em::{em_cluster, oracle_cluster, Assignment, ClusteringResult, EmOptions};
pub use metrics::{aggregate, f1_pair, TrialStats};
