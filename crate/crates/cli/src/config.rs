//! Config-file layering and run manifests.
//!
//! Every tunable resolves as: flag > config file > built-in default. The
//! effective values — plus SHA-256 digests of every input file — are echoed
//! to a run manifest so any output can be traced back to exactly what
//! produced it. Manifests carry no timestamps: reruns of the same command
//! must be byte-identical.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::{LossArg, ModeArg, OnOff};
use crate::{CmdResult, Failure};

// ───────────────────────── config file ─────────────────────────

/// Optional JSON config; keys mirror the flag names. Unknown keys are
/// rejected so typos fail loudly instead of silently using defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    // Paths.
    pub pools: Option<PathBuf>,
    pub tuples: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub history: Option<PathBuf>,
    // Selection / evaluation.
    pub k: Option<usize>,
    pub k_list: Option<Vec<usize>>,
    pub pool_size: Option<usize>,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub mode: Option<ModeArg>,
    pub quality: Option<OnOff>,
    // Training.
    pub loss: Option<LossArg>,
    pub epochs: Option<usize>,
    pub batch: Option<usize>,
    pub lr: Option<f64>,
    pub max_neg_subsets: Option<usize>,
    // Verification.
    pub trials: Option<usize>,
    // Synthetic data.
    pub queries: Option<usize>,
    pub dim: Option<usize>,
    pub k_pos: Option<usize>,
    pub k_cycle: Option<Vec<usize>>,
    pub redundancy: Option<f64>,
    pub noise: Option<f64>,
    pub ratio: Option<String>,
}

pub fn load_file_config(path: &Path) -> CmdResult<FileConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::input(format!("config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::input(format!("config {}: {e}", path.display())))
}

/// Resolved global state shared by every command.
pub struct Ctx {
    pub file: FileConfig,
    pub seed: u64,
    /// Digest of the config file itself, when one was given.
    pub config_input: Option<FileDigest>,
}

/// flag > config file > default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Required value with no default: must come from a flag or the config file.
pub fn pick_required<T>(flag: Option<T>, file: Option<T>, name: &str) -> CmdResult<T> {
    flag.or(file)
        .ok_or_else(|| Failure::input(format!("missing required --{name}")))
}

// ───────────────────────── run manifest ─────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub role: &'static str,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputEntry {
    pub role: &'static str,
    pub path: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: &'static str,
    pub seed: u64,
    /// Every effective value the command ran with.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<OutputEntry>,
}

pub fn sha256_file(path: &Path) -> CmdResult<String> {
    let bytes =
        fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest(role: &'static str, path: &Path) -> CmdResult<FileDigest> {
    Ok(FileDigest {
        role,
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

impl Manifest {
    pub fn new(command: &'static str, seed: u64, config: impl Serialize) -> Self {
        Manifest {
            format_version: 1,
            command,
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, d: FileDigest) -> Self {
        self.inputs.push(d);
        self
    }

    pub fn input_opt(mut self, d: Option<FileDigest>) -> Self {
        self.inputs.extend(d);
        self
    }

    pub fn output(mut self, role: &'static str, path: &Path) -> Self {
        self.outputs.push(OutputEntry {
            role,
            path: path.display().to_string(),
        });
        self
    }

    /// Write next to the primary output (`<out>.manifest.json`, or
    /// `manifest.json` inside an output directory). Commands that print to
    /// stdout have no artifact to sit next to, so the manifest goes to
    /// stderr as a single line — still emitted, never mixed into the data
    /// stream.
    pub fn emit(&self, dest: Option<PathBuf>) -> CmdResult<()> {
        match dest {
            Some(path) => {
                let text = serde_json::to_string_pretty(self).expect("manifest serializes");
                fs::write(&path, text.as_bytes())
                    .map_err(|e| Failure::input(format!("{}: {e}", path.display())))
            }
            None => {
                let text = serde_json::to_string(self).expect("manifest serializes");
                let mut err = std::io::stderr().lock();
                let _ = writeln!(err, "{text}");
                Ok(())
            }
        }
    }
}

/// Manifest path for a file output: `select.jsonl` → `select.jsonl.manifest.json`.
pub fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}
