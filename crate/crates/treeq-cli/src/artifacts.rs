//! Artifact IO. Every file a subcommand writes carries the schema
//! version and the hash of the config that produced it: JSON artifacts
//! as an envelope, JSONL artifacts as a header line, CSV artifacts as a
//! leading comment. Timestamps never appear in artifacts; they live only
//! in run.log, which reruns are allowed to differ on.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use treeq_core::agent::{PolicyCheckpoint, SoftmaxPolicy};

use crate::CliError;

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// JSON envelopes
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Envelope<T> {
    schema_version: u32,
    kind: String,
    config_hash: String,
    payload: T,
}

pub fn write_json<T: Serialize>(
    path: &Path,
    kind: &str,
    config_hash: &str,
    payload: &T,
) -> Result<(), CliError> {
    let envelope = Envelope {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&envelope)
        .map_err(|e| CliError::Data(format!("serialize {kind}: {e}")))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let envelope: Envelope<T> = serde_json::from_str(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    if envelope.kind != kind {
        return Err(CliError::Data(format!(
            "{}: expected a {kind} artifact, found {}",
            path.display(),
            envelope.kind
        )));
    }
    Ok(envelope.payload)
}

/// Reads a policy checkpoint, accepting both the enveloped CLI artifact
/// and the bare library format.
pub fn load_policy(path: &Path) -> Result<SoftmaxPolicy, CliError> {
    let from_envelope = read_json::<PolicyCheckpoint>(path, "policy_checkpoint");
    let ckpt = match from_envelope {
        Ok(ckpt) => ckpt,
        Err(_) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
    };
    SoftmaxPolicy::from_checkpoint(&ckpt).map_err(|e| CliError::Data(e.to_string()))
}

// ---------------------------------------------------------------------------
// JSONL with a header line
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct JsonlHeader {
    schema_version: u32,
    kind: String,
    config_hash: String,
}

pub fn write_jsonl<T: Serialize>(
    path: &Path,
    kind: &str,
    config_hash: &str,
    items: &[T],
) -> Result<(), CliError> {
    let mut out = Vec::new();
    let header = JsonlHeader {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        kind: kind.to_string(),
        config_hash: config_hash.to_string(),
    };
    serde_json::to_writer(&mut out, &header).expect("header serializes");
    out.push(b'\n');
    for item in items {
        serde_json::to_writer(&mut out, item)
            .map_err(|e| CliError::Data(format!("serialize {kind} record: {e}")))?;
        out.push(b'\n');
    }
    write_file(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty file", path.display())))?;
    let header: JsonlHeader = serde_json::from_str(header_line)
        .map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?;
    if header.kind != kind {
        return Err(CliError::Data(format!(
            "{}: expected a {kind} artifact, found {}",
            path.display(),
            header.kind
        )));
    }
    let mut items = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        items.push(serde_json::from_str(line).map_err(|e| {
            CliError::Data(format!("{} line {}: {e}", path.display(), i + 2))
        })?);
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// CSV with fixed columns
// ---------------------------------------------------------------------------

pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(config_hash: &str, columns: &[&str]) -> Self {
        let mut text = format!("# config_hash={config_hash}\n");
        text.push_str(&columns.join(","));
        text.push('\n');
        Csv {
            text,
            columns: columns.len(),
        }
    }

    /// Appends one row. Values must already be rendered; floats should
    /// come through `fmt_f64` so reruns agree byte for byte.
    pub fn row(&mut self, values: &[String]) {
        assert_eq!(values.len(), self.columns, "csv row width");
        self.text.push_str(&values.join(","));
        self.text.push('\n');
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, self.text.as_bytes())
    }
}

/// Shortest round-trip decimal form, the same on every run.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt_f64(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Output directory and run log
// ---------------------------------------------------------------------------

pub struct OutDir {
    pub root: PathBuf,
    pub config_hash: String,
}

impl OutDir {
    /// Creates the directory if needed and echoes the resolved config.
    pub fn prepare(cfg: &crate::config::ExperimentConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cfg.out_dir).map_err(|e| {
            CliError::Data(format!("cannot create {}: {e}", cfg.out_dir.display()))
        })?;
        let dir = OutDir {
            root: cfg.out_dir.clone(),
            config_hash: cfg.hash(),
        };
        write_file(
            &dir.path("config.resolved.json"),
            cfg.resolved_json().as_bytes(),
        )?;
        Ok(dir)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Appends a timestamped line to run.log, the one file allowed to
    /// differ between reruns.
    pub fn log(&self, message: &str) -> Result<(), CliError> {
        let unix_secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path("run.log"))
            .map_err(|e| CliError::Data(format!("run.log: {e}")))?;
        writeln!(f, "{unix_secs} {message}").map_err(|e| CliError::Data(format!("run.log: {e}")))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
