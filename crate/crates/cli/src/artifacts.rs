//! Atomic artifact writes and the hash manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::NamedTempFile;
use vqcollapse::trajectory::fmt_float;

use crate::{CliError, Result};

/// Suffix for artifacts of a run that did not finish.
pub const PARTIAL_SUFFIX: &str = ".partial";

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub name: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    mode: &'a str,
    config_sha256: String,
    artifacts: &'a [ManifestEntry],
    cells: &'a [CellRecord],
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Collects the artifacts of one run inside its output directory.
#[derive(Debug)]
pub struct ArtifactWriter {
    dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(ArtifactWriter { dir, entries: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `name` (relative to the output directory) and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        if name.contains(['/', '\\']) || name == MANIFEST_NAME {
            return Err(CliError::Config(format!("invalid artifact name {name:?}")));
        }
        write_atomic(&self.dir.join(name), bytes)?;
        self.entries.push(ManifestEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    /// Writes the manifest last; entries keep their write order.
    pub fn finish(self, mode: &str, config_text: &str, cells: &[CellRecord]) -> Result<PathBuf> {
        let manifest = Manifest { mode, config_sha256: sha256_hex(config_text.as_bytes()), artifacts: &self.entries, cells };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        let path = self.dir.join(MANIFEST_NAME);
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// A JSON number printed with 17 significant digits; `null` if non-finite.
pub fn json_float(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    Value::Number(fmt_float(v).parse().expect("formatted float is a JSON number"))
}

/// Pretty JSON with a trailing newline.
pub fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        let v = json_float(0.1);
        assert_eq!(v.to_string(), "1.0000000000000001e-1");
        let back: f64 = v.to_string().parse().unwrap();
        assert_eq!(back, 0.1);
        assert_eq!(json_float(f64::NAN), Value::Null);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArtifactWriter::create(dir.path().join("out")).unwrap();
        w.write("a.csv", b"x\n").unwrap();
        w.write("a.csv", b"y\n").unwrap();
        assert_eq!(std::fs::read(dir.path().join("out/a.csv")).unwrap(), b"y\n");
        assert!(w.write("../escape", b"").is_err());
        assert_eq!(w.entries()[1].sha256, sha256_hex(b"y\n"));
    }
}
