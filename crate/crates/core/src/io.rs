//! On-disk trajectory format.
//!
//! Each trajectory is a pair of files in one directory:
//!
//! - `traj_<id>.csv`: header `x_1,...,x_m`, then one row per time step,
//!   values written with 17 significant digits so they parse back bit-exactly;
//! - `traj_<id>.json`: sidecar manifest `{id, T, m, true_label, seed}`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::{Dataset, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub id: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub m: usize,
    pub true_label: Option<usize>,
    pub seed: Option<u64>,
}

fn stem(id: usize) -> String {
    format!("traj_{id:05}")
}

pub fn trajectory_csv(tr: &Trajectory) -> String {
    let m = tr.obs_dim();
    let mut out = (1..=m).map(|j| format!("x_{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in tr.values().row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn parse_trajectory_csv(text: &str, path: &Path, id: usize, label: Option<usize>) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { path: path.into(), line: 1, msg: "empty file".into() })?;
    let m = header.split(',').count();
    let mut data = Vec::new();
    let mut rows = 0;
    for (idx, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != m {
            return Err(Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg: format!("expected {m} columns, found {}", cells.len()),
            });
        }
        for c in cells {
            let v: f64 = c.trim().parse().map_err(|_| Error::Parse {
                path: path.into(),
                line: idx + 1,
                msg: format!("not a number: {c:?}"),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Trajectory::new(id, DMatrix::from_row_slice(rows, m, &data), label)
}

pub fn write_trajectory(dir: &Path, tr: &Trajectory, seed: Option<u64>) -> Result<()> {
    let base = dir.join(stem(tr.id));
    let csv = base.with_extension("csv");
    fs::write(&csv, trajectory_csv(tr)).map_err(|e| Error::io(&csv, e))?;
    let manifest = TrajectoryManifest {
        id: tr.id,
        horizon: tr.horizon(),
        m: tr.obs_dim(),
        true_label: tr.true_label,
        seed,
    };
    let json = base.with_extension("json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&json, e))?;
    fs::write(&json, text).map_err(|e| Error::io(&json, e))
}

pub fn write_dataset(dir: &Path, data: &Dataset, seed: Option<u64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for tr in data.trajectories() {
        write_trajectory(dir, tr, seed)?;
    }
    Ok(())
}

/// Reads every `traj_*.json` sidecar in `dir` with its CSV, ordered by id.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut sidecars: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_sidecar = path.extension().is_some_and(|e| e == "json")
            && path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("traj_"));
        if is_sidecar {
            sidecars.push(path);
        }
    }
    if sidecars.is_empty() {
        return Err(Error::Insufficient(format!("no trajectory manifests in {}", dir.display())));
    }
    let mut trajectories = Vec::with_capacity(sidecars.len());
    for json in sidecars {
        let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
        let manifest: TrajectoryManifest = serde_json::from_str(&text).map_err(|e| Error::json(&json, e))?;
        let csv = json.with_extension("csv");
        let body = fs::read_to_string(&csv).map_err(|e| Error::io(&csv, e))?;
        let tr = parse_trajectory_csv(&body, &csv, manifest.id, manifest.true_label)?;
        if tr.horizon() != manifest.horizon || tr.obs_dim() != manifest.m {
            return Err(Error::Shape(format!(
                "{} declares {}x{} but holds {}x{}",
                csv.display(),
                manifest.horizon,
                manifest.m,
                tr.horizon(),
                tr.obs_dim()
            )));
        }
        trajectories.push(tr);
    }
    trajectories.sort_by_key(|t| t.id);
    Dataset::new(trajectories)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 3), 1..20),
            tiny in -1e-300f64..1e-300,
        ) {
            let mut rows = rows;
            rows[0][0] = tiny;
            let tr = Trajectory::from_rows(4, &rows, Some(1)).unwrap();
            let text = trajectory_csv(&tr);
            let back = parse_trajectory_csv(&text, Path::new("x.csv"), 4, Some(1)).unwrap();
            for (a, b) in tr.values().iter().zip(back.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn dataset_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = Trajectory::from_rows(0, &[vec![0.1, 0.2], vec![1.0 / 3.0, -2.5]], Some(0)).unwrap();
        let b = Trajectory::from_rows(1, &[vec![7.0, 8.0], vec![9.0, 1e-17]], Some(1)).unwrap();
        let data = Dataset::new(vec![a, b]).unwrap();
        write_dataset(dir.path(), &data, Some(42)).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back, data);
        let manifest: TrajectoryManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("traj_00001.json")).unwrap()).unwrap();
        assert_eq!(manifest, TrajectoryManifest { id: 1, horizon: 2, m: 2, true_label: Some(1), seed: Some(42) });
    }

    #[test]
    fn bad_cell_reports_line() {
        let err = parse_trajectory_csv("x_1,x_2\n1,2\n3,oops\n", Path::new("t.csv"), 0, None).unwrap_err();
        assert!(err.to_string().contains("t.csv:3"), "{err}");
    }
}
