//! `.fld` field snapshots: one JSON header line `{n, L, N, time, node_id}`
//! terminated by `\n`, then `N^n` little-endian `f64` values in row-major
//! axis order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, Grid};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub points: usize,
    pub time: f64,
    pub node_id: usize,
}

pub fn write_snapshot<W: Write>(mut out: W, field: &Field, time: f64, node_id: usize) -> Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        n: g.dim(),
        l: g.half_width(),
        points: g.points(),
        time,
        node_id,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a snapshot; the returned field lives on a grid with the stored box
/// and a unit time axis.
pub fn read_snapshot<R: Read>(input: R) -> Result<(SnapshotHeader, Field)> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Config("snapshot header is not newline terminated".into()));
    }
    let header: SnapshotHeader = serde_json::from_slice(&line[..line.len() - 1])?;
    let grid = Grid::new(header.n, header.l, header.points, 1.0, 1)?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "snapshot payload has {} bytes, expected {}",
            bytes.len(),
            8 * grid.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((header, Field::from_values(grid, values)?))
}

pub fn save(path: &Path, field: &Field, time: f64, node_id: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_snapshot(&mut w, field, time, node_id)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(SnapshotHeader, Field)> {
    read_snapshot(std::fs::File::open(path)?)
}
