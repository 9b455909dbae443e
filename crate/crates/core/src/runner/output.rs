//! Output files: every artifact is written to a temporary sibling and
//! renamed into place, then recorded with its SHA-256 digest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{snapshot, Field};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Path relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Io(e)
    })
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// The single writer of a run.
#[derive(Debug, Clone)]
pub struct OutputSink {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputSink {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir, files: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        if rel.split('/').any(|c| c.is_empty() || c == "..") || rel == "manifest.json" {
            return Err(Error::Config(format!("invalid output name '{rel}'")));
        }
        write_atomic(&self.dir.join(rel), bytes)?;
        self.files.push(OutputFile { path: rel.to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    /// CSV with a header row; cells are written verbatim.
    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut s = header.join(",");
        s.push('\n');
        for r in rows {
            if r.len() != header.len() {
                return Err(Error::ShapeMismatch(format!("{rel}: row of {} cells under {} columns", r.len(), header.len())));
            }
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write(rel, s.as_bytes())
    }

    /// Concatenated `.fld` snapshots `(field, time, node_id)`.
    pub fn write_fields(&mut self, rel: &str, frames: &[(Field, f64, usize)]) -> Result<()> {
        let mut buf = Vec::new();
        for (f, t, id) in frames {
            snapshot::write_snapshot(&mut buf, f, *t, *id)?;
        }
        self.write(rel, &buf)
    }
}

/// Shortest round-trip representation, so equal values give equal bytes.
pub(crate) fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Reads back every frame of a `.fld` time stack.
pub fn read_field_stack(path: &Path) -> Result<Vec<(snapshot::SnapshotHeader, Field)>> {
    let bytes = std::fs::read(path)?;
    let mut out = Vec::new();
    let mut rest: &[u8] = &bytes;
    while !rest.is_empty() {
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Config("snapshot header is not newline terminated".into()))?;
        let header: snapshot::SnapshotHeader = serde_json::from_slice(&rest[..nl])?;
        let len = 8 * header.points.pow(header.n as u32);
        let end = nl + 1 + len;
        if rest.len() < end {
            return Err(Error::ShapeMismatch("truncated snapshot payload".into()));
        }
        let (_, f) = snapshot::read_snapshot(&rest[..end])?;
        out.push((header, f));
        rest = &rest[end..];
    }
    Ok(out)
}
