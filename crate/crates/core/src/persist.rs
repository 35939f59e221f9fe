//! Saving and loading trained models.
//!
//! A model file is one JSON document with keys in a fixed order:
//! `format_version`, `config`, `hyperparams`, `summary`, `qtable`. The Q-table
//! is a list of `[state_key, [v0..v5]]` pairs sorted by key, each value a
//! decimal string with 17 significant digits so it reads back bit-exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::SystemTime;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, HyperParams, QTable};
use crate::track::{Action, GenConfig, StateKey, TrackError};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = ".hitlrl.json";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub episodes_completed: u64,
    pub total_steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub config: GenConfig,
    pub hyperparams: HyperParams,
    pub summary: TrainingSummary,
    pub qtable: QTable,
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unsupported format_version {found} (expected {FORMAT_VERSION})")]
    Version { path: PathBuf, found: u64 },
    #[error("{path}: parse error at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        #[source]
        source: AgentError,
    },
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: u32,
    config: GenConfig,
    hyperparams: HyperParams,
    summary: TrainingSummary,
    qtable: Vec<(String, [String; Action::COUNT])>,
}

fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Canonical file contents for `model`.
pub fn to_bytes(model: &ModelFile) -> Vec<u8> {
    let doc = Document {
        format_version: FORMAT_VERSION,
        config: model.config.clone(),
        hyperparams: model.hyperparams.clone(),
        summary: model.summary,
        qtable: model
            .qtable
            .iter()
            .map(|(k, v)| (k.as_str().to_string(), v.map(format_value)))
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("model document serializes");
    out.push(b'\n');
    out
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `model` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn save_model(path: &Path, model: &ModelFile) -> Result<(), PersistError> {
    let io_err = |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(
        ".{name}.{}.tmp",
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&to_bytes(model))?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io_err(e)
    })
}

/// Parses and fully validates model file contents.
pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<ModelFile, PersistError> {
    let parse_err = |line, message: String| PersistError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let value: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| parse_err(e.line(), e.to_string()))?;
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(found) => {
            return Err(PersistError::Version {
                path: path.to_path_buf(),
                found,
            })
        }
        None => return Err(parse_err(1, "missing or non-integer format_version".into())),
    }
    // Re-parse from text so serde errors keep their line numbers.
    let doc: Document = serde_json::from_slice(bytes).map_err(|e| parse_err(e.line(), e.to_string()))?;

    let invalid = |source: AgentError| PersistError::Invalid {
        path: path.to_path_buf(),
        source,
    };
    doc.config.validate().map_err(|e| invalid(e.into()))?;
    doc.hyperparams.validate().map_err(invalid)?;

    let text = String::from_utf8_lossy(bytes);
    let line_of = |key: &str| {
        let needle = format!("\"{key}\"");
        let start = text.find("\"qtable\"").unwrap_or(0);
        text[start..]
            .find(&needle)
            .map(|off| text[..start + off].lines().count().max(1))
            .unwrap_or(0)
    };
    let mut qtable = Vec::with_capacity(doc.qtable.len());
    let mut previous: Option<&str> = None;
    for (key, values) in &doc.qtable {
        let state = StateKey::parse(key)
            .map_err(|e: TrackError| parse_err(line_of(key), e.to_string()))?;
        if previous.is_some_and(|p| p.as_bytes() >= key.as_bytes()) {
            return Err(parse_err(line_of(key), format!("qtable entry {key:?} out of order or duplicated")));
        }
        previous = Some(key);
        let mut parsed = [0.0; Action::COUNT];
        for (slot, raw) in parsed.iter_mut().zip(values) {
            *slot = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_of(key), format!("bad q-value {raw:?} for {key:?}")))?;
        }
        qtable.push((state, parsed));
    }
    Ok(ModelFile {
        config: doc.config,
        hyperparams: doc.hyperparams,
        summary: doc.summary,
        qtable: qtable.into_iter().collect(),
    })
}

pub fn load_model(path: &Path) -> Result<ModelFile, PersistError> {
    let bytes = fs::read(path).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(path, &bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelListing {
    pub name: String,
    pub path: PathBuf,
    pub saved_at: Option<SystemTime>,
    pub episodes_completed: Option<u64>,
    /// Set when the file could not be loaded.
    pub error: Option<String>,
}

/// Path of the model called `name` inside `dir`.
pub fn model_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}{MODEL_EXTENSION}"))
}

/// Summaries of every `*.hitlrl.json` file in `dir`, sorted by name.
/// Unreadable or corrupt files are listed with `error` set.
pub fn list_models(dir: &Path) -> Result<Vec<ModelListing>, PersistError> {
    let entries = fs::read_dir(dir).map_err(|source| PersistError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut listings = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| PersistError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        let Some(name) = file_name.strip_suffix(MODEL_EXTENSION) else {
            continue;
        };
        if name.is_empty() || name.starts_with('.') {
            continue;
        }
        let path = entry.path();
        let saved_at = entry.metadata().and_then(|m| m.modified()).ok();
        let (episodes_completed, error) = match load_model(&path) {
            Ok(m) => (Some(m.summary.episodes_completed), None),
            Err(e) => (None, Some(e.to_string())),
        };
        listings.push(ModelListing {
            name: name.to_string(),
            path,
            saved_at,
            episodes_completed,
            error,
        });
    }
    listings.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(listings)
}
