//! Deterministic CSV tables and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io { path: path.to_path_buf(), source }
}

/// Serializes rows as CSV with a header derived from the row type.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, OutputError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| OutputError::Csv(e.into_error().into()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), OutputError> {
    write_bytes(path, &to_csv(rows)?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let mut f = fs::File::create(path).map_err(io(path))?;
    f.write_all(bytes).map_err(io(path))
}

/// `git describe` of the working tree, or `"unknown"` outside a checkout.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<C: Serialize> {
    pub experiment: String,
    pub seed: u64,
    pub version: String,
    pub git: String,
    pub config: C,
    pub outputs: Vec<String>,
}

impl<C: Serialize> Manifest<C> {
    pub fn new(experiment: &str, seed: u64, config: C) -> Self {
        Self {
            experiment: experiment.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            git: git_describe(),
            config,
            outputs: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), OutputError> {
        let mut text = serde_json::to_vec_pretty(self)?;
        text.push(b'\n');
        write_bytes(path, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        hour: u64,
        ratio: f64,
    }

    #[test]
    fn csv_has_header_and_is_stable() {
        let rows = [Row { hour: 0, ratio: 0.5 }, Row { hour: 1, ratio: 0.25 }];
        let a = to_csv(&rows).unwrap();
        assert_eq!(String::from_utf8(a.clone()).unwrap(), "hour,ratio\n0,0.5\n1,0.25\n");
        assert_eq!(a, to_csv(&rows).unwrap());
    }

    #[test]
    fn manifest_records_seed_and_config() {
        let dir = std::env::temp_dir().join(format!("lluad-manifest-{}", std::process::id()));
        let path = dir.join("manifest.json");
        let m = Manifest::new("hit-ratio", 7, serde_json::json!({"n_popular": [100, 1000]}));
        m.write(&path).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(v["seed"], 7);
        assert_eq!(v["config"]["n_popular"][1], 1000);
        assert!(!v["git"].as_str().unwrap().is_empty());
        fs::remove_dir_all(dir).unwrap();
    }
}
