//! On-disk artifacts: CSV matrices, iteration logs and the run manifest.

use anyhow::{Context, Result};
use serde::Serialize;
use sgflow_core::{FlowTrace, Grid2D};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One row per y index, comma-separated x values.
pub fn matrix_csv(grid: &Grid2D, values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for j in 0..grid.ny() {
        for i in 0..grid.nx() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(values[grid.node_index(i, j)]));
        }
        out.push('\n');
    }
    out
}

pub const ITERATIONS_HEADER: &str = "iteration,energy,grad_norm,lambda,accepted,cg_iters";

/// `energy` is the energy after the step when accepted and the unchanged
/// energy when rejected.
pub fn iterations_csv(trace: &FlowTrace) -> String {
    let mut out = String::from(ITERATIONS_HEADER);
    out.push('\n');
    for r in &trace.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.energy),
            fmt_f64(r.grad_norm),
            fmt_f64(r.lambda),
            u8::from(r.accepted),
            r.cg_iterations
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Collects the files of one run directory and their checksums.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl ArtifactWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(FileEntry {
            name: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents)),
            bytes: contents.len() as u64,
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
