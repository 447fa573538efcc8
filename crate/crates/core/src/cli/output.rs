use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CliError, RunConfig};
use crate::report::{Artifact, Provenance};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

/// Written as `manifest.json` next to a command's artifacts: the argument
/// vector and resolved configuration needed to re-run it, plus a digest of
/// every file produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub options: serde_json::Value,
    pub files: Vec<FileRecord>,
}

/// Digest input: everything that determines a run's results.
#[derive(Serialize)]
struct HashedConfig<'a> {
    command: &'a str,
    config: &'a RunConfig,
    options: &'a serde_json::Value,
}

pub struct RunOutput {
    dir: PathBuf,
    provenance: Provenance,
    files: Vec<FileRecord>,
}

impl RunOutput {
    pub fn create(dir: &Path, command: &str, run: &RunConfig, options: &serde_json::Value) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let provenance = Provenance::new(
            command,
            &HashedConfig {
                command,
                config: run,
                options,
            },
        );
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
            files: Vec::new(),
        })
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.files.push(FileRecord {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    /// JSON wrapped with the producing command and config hash.
    pub fn write_json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<PathBuf, CliError> {
        let text = Artifact::new(&self.provenance, payload).to_json();
        self.write_bytes(name, text.as_bytes())
    }

    /// CSV preceded by the provenance comment line.
    pub fn write_csv(&mut self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let text = format!("{}{body}", self.provenance.csv_comment());
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes `config.toml` and `manifest.json`.
    pub fn finish(mut self, argv: Vec<String>, run: &RunConfig, options: serde_json::Value) -> Result<Manifest, CliError> {
        let toml = format!(
            "# command={} config_hash={}\n{}",
            self.provenance.command,
            self.provenance.config_hash,
            run.to_toml()
        );
        self.write_bytes("config.toml", toml.as_bytes())?;
        let manifest = Manifest {
            command: self.provenance.command.clone(),
            config_hash: self.provenance.config_hash.clone(),
            argv,
            config: run.clone(),
            options,
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join("manifest.json"), text)?;
        Ok(manifest)
    }
}
