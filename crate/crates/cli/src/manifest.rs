//! Run manifests: `<out>.manifest.json` next to the primary output.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Serialize)]
struct FileHash {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, C: Serialize> {
    subcommand: &'a str,
    config: &'a C,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
    wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Tracks one subcommand invocation.
pub struct Run<'a, C: Serialize> {
    subcommand: &'a str,
    config: &'a C,
    started: Instant,
    inputs: Vec<PathBuf>,
}

impl<'a, C: Serialize> Run<'a, C> {
    pub fn start(subcommand: &'a str, config: &'a C) -> Self {
        Self { subcommand, config, started: Instant::now(), inputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes the manifest beside `outputs[0]`.
    pub fn finish(self, outputs: &[&Path]) -> Result<(), CliError> {
        let hash_all = |paths: &mut dyn Iterator<Item = &Path>| -> Result<Vec<FileHash>, CliError> {
            paths.map(|p| Ok(FileHash { path: p.to_path_buf(), sha256: sha256_file(p)? })).collect()
        };
        let manifest = RunManifest {
            subcommand: self.subcommand,
            config: self.config,
            inputs: hash_all(&mut self.inputs.iter().map(PathBuf::as_path))?,
            outputs: hash_all(&mut outputs.iter().copied())?,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut name = outputs[0].as_os_str().to_owned();
        name.push(".manifest.json");
        crate::commands::write_json(Path::new(&name), &manifest)
    }
}
