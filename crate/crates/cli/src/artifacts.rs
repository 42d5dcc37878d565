//! Artifact staging, atomic writes and run manifests.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad flags, unreadable or invalid config, invalid dataset: exit 2.
    Config,
    /// Anything that fails after the inputs were accepted: exit 1.
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
    pub file: Option<String>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Config,
            message: message.into(),
            file: None,
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Runtime,
            message: message.into(),
            file: None,
        }
    }

    pub fn in_file(mut self, file: impl Into<String>) -> Self {
        self.file = Some(file.into());
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Config => 2,
            ErrorKind::Runtime => 1,
        }
    }

    /// One-line JSON diagnostic for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": match self.kind {
                ErrorKind::Config => "config",
                ErrorKind::Runtime => "runtime",
            },
            "message": self.message,
            "file": self.file,
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.file {
            Some(file) => write!(f, "{file}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl From<proximal_core::Error> for CliError {
    fn from(e: proximal_core::Error) -> Self {
        use proximal_core::Error as E;
        let kind = match e {
            E::Validation(_) | E::Layout(_) | E::InvalidSpec(_) | E::Json(_) | E::Csv(_) => ErrorKind::Config,
            _ => ErrorKind::Runtime,
        };
        Self {
            kind,
            message: e.to_string(),
            file: None,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read_file(path: &str) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::runtime(e.to_string()).in_file(path))
}

/// Parses a JSON file; schema errors are config errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &str) -> CliResult<T> {
    let bytes = read_file(path)?;
    // serde_json messages already carry the line and column
    serde_json::from_slice(&bytes).map_err(|e| CliError::config(e.to_string()).in_file(path))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    out.push(b'\n');
    out
}

/// `dir/stem.csv` → `dir/stem<suffix>`.
pub fn sibling(path: &str, suffix: &str) -> String {
    let p = Path::new(path);
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = format!("{stem}{suffix}");
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(name).to_string_lossy().into_owned(),
        _ => name,
    }
}

/// Files a command produces, held in memory until every one is ready.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, path: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((path.into(), bytes));
    }

    pub fn files(&self) -> &[(String, Vec<u8>)] {
        &self.files
    }

    /// Writes every file through a temporary in the target directory and an
    /// atomic rename.
    pub fn commit(&self) -> CliResult<()> {
        for (path, bytes) in &self.files {
            write_atomic(Path::new(path), bytes).map_err(|e| CliError::runtime(e.to_string()).in_file(path))?;
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir: PathBuf = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
}

pub fn config_hash(config: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("config serializes"))
}

pub fn manifest_path(config: &RunConfig) -> String {
    sibling(config.output(), ".manifest.json")
}

/// Provenance block embedded in result files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn of(config: &RunConfig) -> Self {
        Self {
            command: config.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config_hash(config),
            seed: config.seed(),
        }
    }
}

pub fn build_manifest(config: &RunConfig, inputs: &[(String, Vec<u8>)], artifacts: &Artifacts) -> Manifest {
    let digest = |(p, b): &(String, Vec<u8>)| FileDigest {
        path: p.clone(),
        sha256: sha256_hex(b),
    };
    Manifest {
        tool: "proximal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_sha256: config_hash(config),
        seed: config.seed(),
        config: config.clone(),
        inputs: inputs.iter().map(digest).collect(),
        artifacts: artifacts.files().iter().map(digest).collect(),
    }
}
