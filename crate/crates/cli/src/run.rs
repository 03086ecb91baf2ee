use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_FAILED: u8 = 2;

pub const CACHE_DIR_ENV: &str = "AHGNN_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = ".ahgnn-cache";

/// A subcommand error, tagged with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, missing inputs, malformed files or out-of-range settings.
    Invalid(anyhow::Error),
    /// The inputs were fine but the computation did not succeed.
    Failed(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Failed(_) => EXIT_FAILED,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Invalid(e) | Failure::Failed(e)) = self;
        write!(f, "{e:#}")
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait Classify<T> {
    fn invalid(self) -> Outcome<T>;
    fn failed(self) -> Outcome<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Outcome<T> {
        self.map_err(|e| Failure::Invalid(e.into()))
    }

    fn failed(self) -> Outcome<T> {
        self.map_err(|e| Failure::Failed(e.into()))
    }
}

pub fn invalid(msg: impl fmt::Display) -> Failure {
    Failure::Invalid(anyhow::anyhow!("{msg}"))
}

pub fn failed(msg: impl fmt::Display) -> Failure {
    Failure::Failed(anyhow::anyhow!("{msg}"))
}

pub fn require_dir(path: &Path, what: &str) -> Outcome {
    if path.is_dir() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} directory {} does not exist",
            path.display()
        )))
    }
}

pub fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{what} file {} does not exist",
            path.display()
        )))
    }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| failed(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| failed(format!("cannot write {}: {e}", path.display())))
}

/// Where a cache for this dataset fingerprint and depth pair lives when no
/// explicit path is given.
pub fn default_cache_path(fingerprint: u64, l1: usize, l2: usize) -> PathBuf {
    let dir = std::env::var_os(CACHE_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR), PathBuf::from);
    dir.join(format!("{fingerprint:016x}-l{l1}-l{l2}.ahgc"))
}

/// The settings every subcommand echoes into `run.json`.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub threads: usize,
    /// The `--seed` flag, if given; each subcommand resolves its own default.
    pub seed: Option<u64>,
    pub verbosity: u8,
}

impl RunContext {
    pub fn seed_or(&self, fallback: u64) -> u64 {
        self.seed.unwrap_or(fallback)
    }

    pub fn note(&self, msg: impl fmt::Display) {
        if self.verbosity > 0 {
            eprintln!("{msg}");
        }
    }
}

pub fn write_run_json(
    dir: &Path,
    command: &str,
    ctx: &RunContext,
    seed: u64,
    config: impl Serialize,
    outputs: &[&str],
) -> Outcome {
    let config = serde_json::to_value(config).failed()?;
    let doc: Value = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "threads": ctx.threads,
        "config": config,
        "outputs": outputs,
    });
    let mut text = serde_json::to_string_pretty(&doc).failed()?;
    text.push('\n');
    write_file(&dir.join("run.json"), text)
}
