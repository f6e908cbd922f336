//! Layered configuration: built-in defaults, then `--config`, then flags.
//!
//! Run manifests are valid configuration files: their `format_version`,
//! `command`, `run.*` and `artifact.*` entries are bookkeeping and are
//! skipped on input.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use stsm_core::kv::KvDoc;

use crate::error::{io_at, CliError, Result};

pub const RUN_MANIFEST: &str = "run_manifest.txt";
pub const RUN_FORMAT_VERSION: u32 = 1;

fn is_bookkeeping(key: &str) -> bool {
    key == "format_version" || key == "command" || key.starts_with("run.") || key.starts_with("artifact.")
}

/// Key prefixes (ending in `.`) and exact keys each command accepts.
fn accepted(command: &str) -> &'static [&'static str] {
    match command {
        "generate" => &["seed", "paths.out", "data."],
        "train" => &["seed", "paths.out", "paths.data", "model.", "train."],
        "eval" => &["seed", "paths.out", "paths.data", "paths.checkpoint", "eval.split"],
        "ablate" => &["seed", "paths.out", "paths.data", "ablate.ratios", "model.", "train."],
        "predict-map" => &["seed", "paths.out", "paths.data", "paths.checkpoint", "data."],
        _ => &[],
    }
}

fn key_accepted(command: &str, key: &str) -> bool {
    accepted(command)
        .iter()
        .any(|a| if a.ends_with('.') { key.starts_with(a) } else { key == *a })
}

/// Reads a configuration file for `command`.
pub fn load_config_file(path: &Path, command: &str) -> Result<KvDoc> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let doc = KvDoc::parse(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Some(c) = doc.get("command") {
        if c != command {
            return Err(CliError::Config(format!(
                "{} was written by `{c}`, not `{command}`",
                path.display()
            )));
        }
    }
    let mut out = KvDoc::new();
    for (k, v) in doc.iter().filter(|(k, _)| !is_bookkeeping(k)) {
        out.set(k, v);
    }
    Ok(out)
}

/// Merges the file layer and the flag layer and rejects keys the command
/// does not understand.
pub fn resolve(command: &str, file: Option<KvDoc>, flags: &KvDoc) -> Result<KvDoc> {
    let mut doc = file.unwrap_or_default();
    doc.extend(flags);
    if let Some(k) = doc.keys().find(|k| !key_accepted(command, k)) {
        return Err(CliError::Config(format!("unknown configuration key {k:?} for `{command}`")));
    }
    Ok(doc)
}

/// Keys under `prefix`, with the prefix kept.
pub fn section(doc: &KvDoc, prefix: &str) -> KvDoc {
    let mut out = KvDoc::new();
    for (k, v) in doc.iter().filter(|(k, _)| k.starts_with(prefix)) {
        out.set(k, v);
    }
    out
}

pub fn seed(doc: &KvDoc) -> Result<u64> {
    Ok(doc
        .parse_opt("seed")
        .map_err(|e| CliError::Config(e.to_string()))?
        .unwrap_or(0))
}

pub fn path_or(doc: &KvDoc, key: &str, default: &str) -> PathBuf {
    PathBuf::from(doc.get(key).unwrap_or(default))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// One run's record: the resolved configuration plus bookkeeping.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: KvDoc,
    pub artifacts: KvDoc,
    pub run: KvDoc,
    pub started: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: KvDoc) -> Self {
        Self {
            command: command.to_string(),
            config,
            artifacts: KvDoc::new(),
            run: KvDoc::new(),
            started: unix_now(),
        }
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.set(name, path.display().to_string());
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("format_version", RUN_FORMAT_VERSION);
        doc.set("command", &self.command);
        doc.extend(&self.config);
        for (k, v) in self.artifacts.iter() {
            doc.set(format!("artifact.{k}"), v);
        }
        for (k, v) in self.run.iter() {
            doc.set(format!("run.{k}"), v);
        }
        doc.set("run.tool_version", env!("CARGO_PKG_VERSION"));
        doc.set("run.started_unix", self.started);
        doc.set("run.finished_unix", unix_now());
        doc
    }

    /// Writes `run_manifest.txt` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, self.to_kv().to_string()).map_err(io_at(&path))?;
        Ok(path)
    }
}
