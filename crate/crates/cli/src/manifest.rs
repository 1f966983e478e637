use std::fs;
use std::path::{Path, PathBuf};

use bmploop::digest::{json_digest, sha256_hex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything that determines a run's outputs. Two runs with equal manifests
/// write byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub tool_version: String,
    /// Filled in as outputs are written; not part of the digest.
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: u64) -> Self {
        Self {
            command: command.into(),
            config,
            inputs: Vec::new(),
            seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            outputs: Vec::new(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    pub fn digest(&self) -> String {
        json_digest(&(&self.command, &self.config, &self.inputs, self.seed, &self.tool_version))
    }
}

/// Output directory of one run, `<out>/<command>-<digest prefix>`.
pub struct RunDir {
    pub path: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn create(out_root: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        let path = out_root.join(format!("{}-{}", manifest.command, &manifest.digest()[..16]));
        fs::create_dir_all(&path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(Self { path, manifest })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let p = self.path.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
        self.manifest.outputs.push(name.to_string());
        Ok(p)
    }

    /// Also writes `bytes` to a user-chosen path outside the run directory.
    pub fn export(&mut self, dest: &Path, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(dest, bytes).map_err(|e| CliError::Output(format!("{}: {e}", dest.display())))?;
        self.manifest.outputs.push(dest.display().to_string());
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let m = self.manifest.clone();
        let mut text = serde_json::to_vec_pretty(&m).expect("manifest");
        text.push(b'\n');
        self.write("manifest.json", &text)?;
        Ok(self.path)
    }
}
