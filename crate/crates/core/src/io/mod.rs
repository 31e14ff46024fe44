//! Model archives, corpora, result files, run configuration and reports.

mod archive;
mod config;
mod corpus;
mod report;

pub use archive::{load_model, parse_obj, save_model, CorrectiveHeader, ModelHeader, ARCHIVE_VERSION};
pub use config::{IntrinsicsOverrides, RunConfig, StageOverrides};
pub use corpus::{load_corpus, write_corpus, CorpusManifest, LoadedCorpus};
pub use report::{
    errors_csv, histogram, plot_curves, plot_histogram, preview_strip, reflectance_preview, sh_sphere,
    train_log_csv, trajectory_csv, write_fit_report, write_train_report, Histogram,
};

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes a file, creating its parent directory when missing.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
