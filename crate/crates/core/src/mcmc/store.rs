//! Posterior draw storage and its on-disk layout.
//!
//! A store directory holds `manifest.json` plus one column file per
//! parameter. Column files are raw little-endian `f64`, iteration-major: the
//! value for post-burn-in iteration `t` of chain `c` sits at byte offset
//! `8 * (t * n_chains + c)`.

use super::diagnostics::{ess, split_rhat};
use super::ChainConfig;
use crate::special::summarize;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed manifest {path}: {source}")]
    Manifest { path: String, source: serde_json::Error },
    #[error("column {name} has {got} bytes, expected {expected}")]
    ColumnSize { name: String, got: usize, expected: usize },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub parameters: Vec<String>,
    pub files: Vec<String>,
    pub n_chains: usize,
    pub n_draws: usize,
    pub layout: String,
    pub config: Option<ChainConfig>,
    pub block_names: Vec<String>,
    /// Post-burn-in acceptance rate per chain and block.
    pub acceptance: Vec<Vec<f64>>,
    pub diagnostics: Vec<ParamDiagnostics>,
    /// Free-form provenance (data hashes, stage name, ...).
    #[serde(default)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStore {
    names: Vec<String>,
    n_chains: usize,
    n_draws: usize,
    /// `columns[param][chain * n_draws + t]`
    columns: Vec<Vec<f64>>,
    pub manifest: StoreManifest,
}

impl PosteriorStore {
    pub fn from_chain_major(
        names: Vec<String>,
        n_chains: usize,
        n_draws: usize,
        columns: Vec<Vec<f64>>,
    ) -> Self {
        assert_eq!(names.len(), columns.len());
        assert!(columns.iter().all(|c| c.len() == n_chains * n_draws));
        let mut store = Self { names, n_chains, n_draws, columns, manifest: StoreManifest::default() };
        store.refresh_diagnostics();
        store
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.n_chains
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_total(&self) -> usize {
        self.n_chains * self.n_draws
    }

    /// All draws of a parameter, chain after chain.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64], StoreError> {
        self.column(name).ok_or_else(|| StoreError::UnknownParameter(name.to_string()))
    }

    pub fn chains(&self, name: &str) -> Option<Vec<&[f64]>> {
        self.column(name).map(|c| c.chunks(self.n_draws).collect())
    }

    /// Appends a derived quantity laid out like the sampled columns.
    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.n_total());
        self.names.push(name.into());
        self.columns.push(values);
        self.refresh_diagnostics();
    }

    pub fn diagnostics(&self) -> &[ParamDiagnostics] {
        &self.manifest.diagnostics
    }

    pub fn diagnostic(&self, name: &str) -> Option<&ParamDiagnostics> {
        self.manifest.diagnostics.iter().find(|d| d.name == name)
    }

    pub fn refresh_diagnostics(&mut self) {
        let diags = self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let chains: Vec<&[f64]> = col.chunks(self.n_draws.max(1)).collect();
                let (mean, q025, q975) = summarize(col);
                let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                    / (col.len().max(2) - 1) as f64)
                    .sqrt();
                let rhat = split_rhat(&chains).ok();
                let e = ess(&chains).ok();
                ParamDiagnostics {
                    name: name.clone(),
                    mean,
                    sd,
                    q025,
                    q975,
                    rhat,
                    ess: e.map(|e| e.ess),
                    degenerate: e.map(|e| e.degenerate).unwrap_or(false),
                }
            })
            .collect();
        self.manifest.diagnostics = diags;
        self.manifest.parameters = self.names.clone();
        self.manifest.n_chains = self.n_chains;
        self.manifest.n_draws = self.n_draws;
    }

    pub fn save(&self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut manifest = self.manifest.clone();
        manifest.parameters = self.names.clone();
        manifest.files = self.names.iter().enumerate().map(|(i, n)| column_file(i, n)).collect();
        manifest.n_chains = self.n_chains;
        manifest.n_draws = self.n_draws;
        manifest.layout = "f64-le iteration-major: offset = 8 * (t * n_chains + c)".into();
        for (col, file) in self.columns.iter().zip(&manifest.files) {
            let mut bytes = Vec::with_capacity(col.len() * 8);
            for t in 0..self.n_draws {
                for c in 0..self.n_chains {
                    bytes.extend_from_slice(&col[c * self.n_draws + t].to_le_bytes());
                }
            }
            let path = dir.join(file);
            fs::File::create(&path)
                .and_then(|mut f| f.write_all(&bytes))
                .map_err(io_err(&path))?;
        }
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: StoreManifest = serde_json::from_str(&text)
            .map_err(|source| StoreError::Manifest { path: path.display().to_string(), source })?;
        let (n_chains, n_draws) = (manifest.n_chains, manifest.n_draws);
        let mut columns = Vec::with_capacity(manifest.parameters.len());
        for (name, file) in manifest.parameters.iter().zip(&manifest.files) {
            let path = dir.join(file);
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let expected = 8 * n_chains * n_draws;
            if bytes.len() != expected {
                return Err(StoreError::ColumnSize { name: name.clone(), got: bytes.len(), expected });
            }
            let mut col = vec![0.0; n_chains * n_draws];
            for (k, chunk) in bytes.chunks_exact(8).enumerate() {
                let (t, c) = (k / n_chains, k % n_chains);
                col[c * n_draws + t] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            columns.push(col);
        }
        Ok(Self { names: manifest.parameters.clone(), n_chains, n_draws, columns, manifest })
    }
}

fn column_file(index: usize, name: &str) -> String {
    let clean: String =
        name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' }).collect();
    format!("{index:04}_{clean}.f64")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        // two chains, three draws: chain 0 = 0,1,2 ; chain 1 = 10,11,12
        let store = PosteriorStore::from_chain_major(
            vec!["beta[1]".into()],
            2,
            3,
            vec![vec![0.0, 1.0, 2.0, 10.0, 11.0, 12.0]],
        );
        store.save(dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("0000_beta_1_.f64")).unwrap();
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(values, vec![0.0, 10.0, 1.0, 11.0, 2.0, 12.0]);
        let back = PosteriorStore::load(dir.path()).unwrap();
        assert_eq!(back.column("beta[1]"), store.column("beta[1]"));
        assert_eq!(back.n_chains(), 2);
    }

    #[test]
    fn truncated_column_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let store = PosteriorStore::from_chain_major(vec!["a".into()], 1, 4, vec![vec![1.0; 4]]);
        store.save(dir.path()).unwrap();
        fs::write(dir.path().join("0000_a.f64"), [0u8; 8]).unwrap();
        assert!(matches!(PosteriorStore::load(dir.path()), Err(StoreError::ColumnSize { .. })));
    }
}
