//! Small filesystem helpers: atomic writes and JSON IO.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Result, ScdError};

pub fn create_dir_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ScdError::io(format!("create {}", dir.display()), e))
}

/// Write-temp-then-rename in the destination directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    create_dir_all(dir)?;
    let mut tmp =
        tempfile::NamedTempFile::new_in(dir).map_err(|e| ScdError::io(format!("temp file in {}", dir.display()), e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| ScdError::io(format!("write {}", path.display()), e))?;
    tmp.persist(path)
        .map_err(|e| ScdError::io(format!("rename onto {}", path.display()), e.error))?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| ScdError::json(path.display().to_string(), e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| ScdError::io(format!("read {}", path.display()), e))?;
    serde_json::from_slice(&bytes).map_err(|e| ScdError::json(path.display().to_string(), e))
}
