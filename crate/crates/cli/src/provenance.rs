//! Every artifact gets a `<name>.prov.json` sidecar holding its hash, the
//! hashes of the files it was computed from and the full resolved config.

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const SIDECAR_SUFFIX: &str = ".prov.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub sha256: String,
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<InputRef>,
    pub config: RunConfig,
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(SIDECAR_SUFFIX);
    PathBuf::from(s)
}

/// Writes artifacts of one command into the output directory.
pub struct ArtifactWriter<'a> {
    dir: PathBuf,
    cfg: &'a RunConfig,
    command: String,
    inputs: Vec<InputRef>,
    pub written: Vec<PathBuf>,
}

impl<'a> ArtifactWriter<'a> {
    pub fn new(dir: &Path, cfg: &'a RunConfig, command: &str) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), cfg, command: command.into(), inputs: Vec::new(), written: Vec::new() })
    }

    /// Read an upstream artifact, recording its hash as an input.
    pub fn read_input(&mut self, name: &str, producer: &'static str) -> CliResult<Vec<u8>> {
        let path = self.dir.join(name);
        if !path.exists() {
            return Err(CliError::MissingArtifact { path, producer });
        }
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        self.inputs.push(InputRef { file: name.into(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let prov = Provenance {
            artifact: name.into(),
            sha256: sha256_hex(bytes),
            command: self.command.clone(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            seed: self.cfg.seed,
            config_sha256: sha256_hex(self.cfg.canonical_json().as_bytes()),
            inputs: self.inputs.clone(),
            config: self.cfg.clone(),
        };
        let side = sidecar_path(&path);
        let text = serde_json::to_string_pretty(&prov).expect("provenance serializes");
        fs::write(&side, text).map_err(|e| CliError::io(&side, e))?;
        self.written.push(path.clone());
        Ok(path)
    }
}
