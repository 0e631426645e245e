//! On-disk layout helpers: raw little-endian f32 tile files plus JSON sidecars.

use super::tile::Tile;
use super::BandRole;
use crate::error::Result;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(super) struct LayerFile {
    pub layer_id: String,
    pub band_role: BandRole,
    pub units: String,
}

pub(super) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    let mut f = std::fs::File::create(&tmp)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.flush()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub(super) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

fn tile_path(snap_dir: &Path, tile_row: i64, tile_col: i64) -> std::path::PathBuf {
    snap_dir.join(format!("tile_{tile_row}_{tile_col}.f32"))
}

pub(super) fn write_tile(snap_dir: &Path, tile: &Tile) -> Result<()> {
    let mut bytes = Vec::with_capacity(tile.values.len() * 4);
    for v in &tile.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(tile_path(snap_dir, tile.tile_row, tile.tile_col), bytes)?;
    Ok(())
}

pub(super) fn read_tile(
    snap_dir: &Path,
    tile_row: i64,
    tile_col: i64,
    size: usize,
) -> Result<Tile> {
    let mut f = std::fs::File::open(tile_path(snap_dir, tile_row, tile_col))?;
    let mut bytes = Vec::with_capacity(size * size * 4);
    f.read_to_end(&mut bytes)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tile {
        tile_row,
        tile_col,
        size,
        values,
    })
}

/// Read one raw band-sequential f32 file (the data half of an ingest pair).
pub fn read_bsq_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Write one raw band-sequential f32 file.
pub fn write_bsq_f32(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
