// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run directories, manifests, tabular outputs and figures.
//!
//! A run lives at `<root>/<name>/<timestamp>/` with `manifest.json`, a
//! `data/` directory of machine-readable results and a `figures/`
//! directory of SVGs rendered from those results.

pub mod plot;
mod recipe;

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) use recipe::{emit_grid, emit_intervention};
pub use recipe::{run_recipe, BlockRecipe, DetectRecipe, ExperimentRecipe, InterventionRecipe, StageRecipe};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Streams a file through SHA-256.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub operation: String,
    /// Relative to the run directory.
    pub path: String,
    /// Absent for figures, which are derived from a data file.
    pub sha256: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub recipe_sha256: String,
    pub tool_version: String,
    pub seed: u64,
    pub weights_sha256: Option<String>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputRecord>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn output(&self, operation: &str) -> Option<&OutputRecord> {
        self.outputs.iter().find(|o| o.operation == operation)
    }

    /// Hashes of every data output, for comparing two runs of one recipe.
    pub fn data_hashes(&self) -> Vec<(&str, &str)> {
        self.outputs.iter().filter_map(|o| o.sha256.as_deref().map(|h| (o.path.as_str(), h))).collect()
    }
}

/// An open run directory that records what is written into it.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
    clock: Instant,
}

impl RunDir {
    /// Creates `<base>/<name>/<UTC timestamp>/{data,figures}`, adding a
    /// numeric suffix if the timestamp is taken.
    pub fn create(base: &Path, name: &str, seed: u64, recipe_sha256: String) -> Result<Self> {
        let now = chrono::Utc::now();
        let stamp = now.format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let parent = base.join(name);
        let mut root = parent.join(&stamp);
        let mut k = 1;
        while root.exists() {
            root = parent.join(format!("{stamp}-{k}"));
            k += 1;
        }
        for sub in ["data", "figures"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self {
            root,
            manifest: RunManifest {
                name: name.to_string(),
                recipe_sha256,
                tool_version: TOOL_VERSION.to_string(),
                seed,
                weights_sha256: None,
                started_at: now.to_rfc3339(),
                wall_clock_seconds: 0.0,
                outputs: Vec::new(),
            },
            clock: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn set_weights_hash(&mut self, hash: Option<String>) {
        self.manifest.weights_sha256 = hash;
    }

    /// Writes `data/<file>` and records its hash.
    pub fn write_data(&mut self, operation: &str, file: &str, bytes: &[u8]) -> Result<PathBuf> {
        let rel = format!("data/{file}");
        let path = self.root.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest.outputs.push(OutputRecord {
            operation: operation.to_string(),
            path: rel,
            sha256: Some(sha256_hex(bytes)),
        });
        Ok(path)
    }

    pub fn data_path(&self, file: &str) -> PathBuf {
        self.root.join("data").join(file)
    }

    /// Records a file already written under `data/`.
    pub fn record_data(&mut self, operation: &str, file: &str) -> Result<PathBuf> {
        let path = self.data_path(file);
        self.manifest.outputs.push(OutputRecord {
            operation: operation.to_string(),
            path: format!("data/{file}"),
            sha256: Some(sha256_file(&path)?),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, operation: &str, file: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_data(operation, file, text.as_bytes())
    }

    /// Renders `figures/<file>` through `draw` and records it.
    pub fn figure(&mut self, operation: &str, file: &str, draw: impl FnOnce(&Path) -> Result<()>) -> Result<PathBuf> {
        let rel = format!("figures/{file}");
        let path = self.root.join(&rel);
        draw(&path)?;
        self.manifest.outputs.push(OutputRecord { operation: operation.to_string(), path: rel, sha256: None });
        Ok(path)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Stamps the wall-clock time and writes `manifest.json`.
    pub fn finish(mut self) -> Result<(PathBuf, RunManifest)> {
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok((self.root, self.manifest))
    }
}

/// `label,value` rows.
pub fn pairs_csv<'a>(header: (&str, &str), rows: impl IntoIterator<Item = (&'a str, f64)>) -> String {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (k, v) in rows {
        out.push_str(&format!("{k},{v}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_layout_and_manifest() {
        let base = tempfile::tempdir().unwrap();
        let mut run = RunDir::create(base.path(), "demo", 7, "abc".into()).unwrap();
        let again = RunDir::create(base.path(), "demo", 7, "abc".into()).unwrap();
        assert_ne!(run.root(), again.root());
        assert!(run.root().join("data").is_dir());
        assert!(run.root().join("figures").is_dir());
        run.write_data("eval", "a.csv", b"x,y\n1,2\n").unwrap();
        let (root, manifest) = run.finish().unwrap();
        let read = RunManifest::read(&root.join("manifest.json")).unwrap();
        assert_eq!(read, manifest);
        assert_eq!(read.output("eval").unwrap().sha256.as_deref(), Some(sha256_hex(b"x,y\n1,2\n").as_str()));
        assert_eq!(root.parent().unwrap(), base.path().join("demo"));
    }

    #[test]
    fn file_hash_matches_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");
        fs::write(&p, b"hello").unwrap();
        assert_eq!(sha256_file(&p).unwrap(), sha256_hex(b"hello"));
        assert_eq!(sha256_hex(b"hello"), "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
    }

    #[test]
    fn pairs_csv_rows() {
        assert_eq!(pairs_csv(("k", "v"), [("a", 1.5)]), "k,v\na,1.5\n");
    }
}
