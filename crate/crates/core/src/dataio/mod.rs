//! Input bundles, chain files, reports and synthetic data.
//!
//! Tabular inputs are CSV files whose first line is
//! `# schema_version: 1`; the manifest, fishery graph and reports are JSON
//! with a `schema_version` field. Missing observations are absent rows.

mod bundle;
mod chains;
mod report;
pub mod synthetic;

use std::io::Write;
use std::path::{Path, PathBuf};

pub use bundle::{load_bundle, write_bundle, DatasetBundle, Manifest, ManifestFiles};
pub use chains::{
    append_chains, decode_chains, encode_chains, read_chains, write_chains, CHAINS_SCHEMA_VERSION,
};
pub use report::{
    parse_risk_report, read_risk_report, risk_report_csv, summaries_csv, write_risk_report, write_summaries,
};

/// Schema version of every tabular and JSON input.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}", schema_message(file, *row, column.as_deref(), message))]
    Schema {
        file: String,
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },
    #[error("{file}: schema version {found}, expected {expected}")]
    Version {
        file: String,
        found: String,
        expected: u32,
    },
    #[error("{file}: {message}")]
    Chains { file: String, message: String },
    #[error("invalid configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("synthetic data generation failed: {0}")]
    Synthetic(String),
}

fn schema_message(file: &str, row: Option<usize>, column: Option<&str>, message: &str) -> String {
    let mut s = file.to_string();
    if let Some(r) = row {
        s.push_str(&format!(", row {r}"));
    }
    if let Some(c) = column {
        s.push_str(&format!(", column {c}"));
    }
    s.push_str(": ");
    s.push_str(message);
    s
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn schema(file: &str, row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        DataError::Schema {
            file: file.to_string(),
            row,
            column: column.map(str::to_string),
            message: message.into(),
        }
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// renamed into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| DataError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| DataError::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| DataError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| DataError::io(path, e))?;
    tmp.persist(path).map_err(|e| DataError::io(path, e.error))?;
    Ok(())
}
