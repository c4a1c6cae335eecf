use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> CliResult<InputDigest> {
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

fn no_warnings(w: &&[String]) -> bool {
    w.is_empty()
}

/// Wrapper written around every command result.
#[derive(Debug, Serialize)]
pub struct Report<'a, C: Serialize, R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a C,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: &'a [InputDigest],
    #[serde(skip_serializing_if = "no_warnings")]
    pub warnings: &'a [String],
    pub result: R,
}

impl<'a, C: Serialize, R: Serialize> Report<'a, C, R> {
    pub fn new(
        command: &'a str,
        config: &'a C,
        seed: u64,
        inputs: &'a [InputDigest],
        warnings: &'a [String],
        result: R,
    ) -> CliResult<Self> {
        let canonical =
            serde_json::to_vec(config).map_err(|e| CliError::internal(e.to_string()))?;
        Ok(Report {
            tool: TOOL,
            version: VERSION,
            command,
            config,
            config_sha256: sha256_hex(&canonical),
            seed,
            inputs,
            warnings,
            result,
        })
    }
}

/// Output directory that reports the files it writes.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::internal(format!("{}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text =
            serde_json::to_vec_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
        text.push(b'\n');
        self.write(name, &text)
    }

    /// Runs a CSV writer into memory, then saves the bytes.
    pub fn write_with<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut Vec<u8>) -> CliResult<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

pub fn csv_rows<T: Serialize>(rows: &[T], out: &mut Vec<u8>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::internal(e.to_string()))
}
