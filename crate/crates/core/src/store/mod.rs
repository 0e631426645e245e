//! Tile-backed raster store.
//!
//! Single-band, timestamped rasters live on one shared equirectangular grid
//! and are persisted as fixed-size tiles of raw little-endian f32 with NaN as
//! the nodata sentinel. Point and window queries touch only the tiles that
//! intersect the request, never whole layers; an atomic counter tracks tile
//! reads so callers can assert that.

mod persist;

pub use persist::{read_bsq_f32, write_bsq_f32};
mod tile;

pub use tile::{tile_of_pixel, Tile};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PixelRect};
use crate::timestamp::Timestamp;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

/// Default tile edge in pixels.
pub const DEFAULT_TILE_SIZE: usize = 256;

/// Semantic identity of a single-band layer; `nir`/`red` drive derived indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandRole {
    Red,
    Green,
    Blue,
    Nir,
    Other,
}

impl std::fmt::Display for BandRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BandRole::Red => "red",
            BandRole::Green => "green",
            BandRole::Blue => "blue",
            BandRole::Nir => "nir",
            BandRole::Other => "other",
        };
        f.write_str(s)
    }
}

/// Header half of the "BSQ-F32 v1" ingest pair: describes the raw f32 file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestHeader {
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
    pub band_role: BandRole,
    pub layer_id: String,
    pub timestamp: Timestamp,
    /// Only `"nan"` is supported.
    pub nodata: String,
}

/// What one ingest produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub layer_id: String,
    pub timestamp: Timestamp,
    pub tile_count: usize,
    pub coverage: PixelRect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotInfo {
    pub timestamp: Timestamp,
    pub coverage: PixelRect,
    pub tile_count: usize,
}

/// Everything a caller can know about a layer without touching pixel data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub layer_id: String,
    pub band_role: BandRole,
    pub units: String,
    /// Ascending by timestamp.
    pub snapshots: Vec<SnapshotInfo>,
}

/// A k-by-k read result. Pixels outside coverage are NaN and marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelWindow {
    pub k: usize,
    /// Row-major k*k values.
    pub values: Vec<f32>,
    /// Row-major k*k validity flags (false where nodata or out of coverage).
    pub valid: Vec<bool>,
}

impl PixelWindow {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.k + c]
    }

    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        self.valid[r * self.k + c]
    }

    pub fn fully_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn any_valid(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SnapshotIndex {
    timestamp: Timestamp,
    coverage: PixelRect,
    tiles: Vec<(i64, i64)>,
    tile_size: usize,
}

#[derive(Debug, Clone)]
struct LayerMeta {
    band_role: BandRole,
    units: String,
    snapshots: BTreeMap<Timestamp, SnapshotIndex>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    grid: GridSpec,
    tile_size: usize,
}

/// Cumulative read-side instrumentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub tiles_read: u64,
    pub windows_served: u64,
}

/// The store. Shareable across threads: reads run under a read lock, ingest
/// serializes on a writer mutex.
pub struct RasterStore {
    root: PathBuf,
    grid: GridSpec,
    tile_size: usize,
    layers: RwLock<HashMap<String, LayerMeta>>,
    ingest_lock: Mutex<()>,
    tiles_read: AtomicU64,
    windows_served: AtomicU64,
}

impl RasterStore {
    /// Create a new store rooted at `root`, or fail if one already exists there.
    pub fn create(root: impl AsRef<Path>, grid: GridSpec, tile_size: usize) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest_path = root.join("store.json");
        if manifest_path.exists() {
            return Err(Error::MalformedHeader(format!(
                "store already exists at {}",
                root.display()
            )));
        }
        std::fs::create_dir_all(root.join("layers"))?;
        let manifest = StoreManifest { grid, tile_size };
        persist::write_json(&manifest_path, &manifest)?;
        Ok(RasterStore {
            root,
            grid,
            tile_size,
            layers: RwLock::new(HashMap::new()),
            ingest_lock: Mutex::new(()),
            tiles_read: AtomicU64::new(0),
            windows_served: AtomicU64::new(0),
        })
    }

    /// Open an existing store, loading all layer metadata.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let manifest: StoreManifest = persist::read_json(&root.join("store.json"))?;
        let mut layers = HashMap::new();
        let layers_dir = root.join("layers");
        if layers_dir.exists() {
            for entry in std::fs::read_dir(&layers_dir)? {
                let dir = entry?.path();
                if !dir.is_dir() {
                    continue;
                }
                let meta: persist::LayerFile = persist::read_json(&dir.join("layer.json"))?;
                let mut snapshots = BTreeMap::new();
                let snap_dir = dir.join("snapshots");
                if snap_dir.exists() {
                    for snap in std::fs::read_dir(&snap_dir)? {
                        let sdir = snap?.path();
                        let index_path = sdir.join("index.json");
                        if index_path.exists() {
                            let index: SnapshotIndex = persist::read_json(&index_path)?;
                            snapshots.insert(index.timestamp, index);
                        }
                    }
                }
                layers.insert(
                    meta.layer_id.clone(),
                    LayerMeta {
                        band_role: meta.band_role,
                        units: meta.units,
                        snapshots,
                    },
                );
            }
        }
        Ok(RasterStore {
            root,
            grid: manifest.grid,
            tile_size: manifest.tile_size,
            layers: RwLock::new(layers),
            ingest_lock: Mutex::new(()),
            tiles_read: AtomicU64::new(0),
            windows_served: AtomicU64::new(0),
        })
    }

    /// Open if present, else create with the given grid.
    pub fn open_or_create(
        root: impl AsRef<Path>,
        grid: GridSpec,
        tile_size: usize,
    ) -> Result<Self> {
        if root.as_ref().join("store.json").exists() {
            Self::open(root)
        } else {
            Self::create(root, grid, tile_size)
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> StoreStats {
        StoreStats {
            tiles_read: self.tiles_read.load(Ordering::Relaxed),
            windows_served: self.windows_served.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        self.tiles_read.store(0, Ordering::Relaxed);
        self.windows_served.store(0, Ordering::Relaxed);
    }

    /// Ingest one band-sequential raster: resample to the store grid by
    /// nearest neighbor, split into tiles, persist.
    ///
    /// Re-ingesting an existing (layer, timestamp) is rejected unless
    /// `overwrite` is set.
    pub fn ingest_raster(
        &self,
        header: &IngestHeader,
        pixels: &[f32],
        overwrite: bool,
    ) -> Result<SnapshotRecord> {
        if header.resolution <= 0.0 || !header.resolution.is_finite() {
            return Err(Error::MalformedHeader(format!(
                "resolution must be positive, got {}",
                header.resolution
            )));
        }
        if header.rows == 0 || header.cols == 0 {
            return Err(Error::MalformedHeader("empty raster extent".into()));
        }
        if header.nodata != "nan" {
            return Err(Error::MalformedHeader(format!(
                "unsupported nodata sentinel {:?} (only \"nan\")",
                header.nodata
            )));
        }
        if pixels.len() != header.rows * header.cols {
            return Err(Error::MalformedHeader(format!(
                "pixel stream has {} values, header declares {}x{}",
                pixels.len(),
                header.rows,
                header.cols
            )));
        }
        for (i, &v) in pixels.iter().enumerate() {
            if v.is_infinite() {
                return Err(Error::NonFiniteSample { index: i, value: v });
            }
        }

        let _guard = self.ingest_lock.lock().unwrap();

        // Layer registration (or band-role consistency check).
        {
            let layers = self.layers.read().unwrap();
            if let Some(meta) = layers.get(&header.layer_id) {
                if meta.band_role != header.band_role {
                    return Err(Error::LayerConflict {
                        layer: header.layer_id.clone(),
                        existing: meta.band_role.to_string(),
                        requested: header.band_role.to_string(),
                    });
                }
                if meta.snapshots.contains_key(&header.timestamp) && !overwrite {
                    return Err(Error::SnapshotExists {
                        layer: header.layer_id.clone(),
                        timestamp: header.timestamp.to_rfc3339(),
                    });
                }
            }
        }

        let coverage = self.output_coverage(header);
        if coverage.rows == 0 || coverage.cols == 0 {
            return Err(Error::MalformedHeader(
                "source raster maps to zero store pixels".into(),
            ));
        }

        let snap_dir = self.snapshot_dir(&header.layer_id, header.timestamp);
        if snap_dir.exists() {
            std::fs::remove_dir_all(&snap_dir)?;
        }
        std::fs::create_dir_all(&snap_dir)?;

        let t = self.tile_size as i64;
        let tr0 = tile_of_pixel(coverage.row0, self.tile_size);
        let tr1 = tile_of_pixel(coverage.row_end() - 1, self.tile_size);
        let tc0 = tile_of_pixel(coverage.col0, self.tile_size);
        let tc1 = tile_of_pixel(coverage.col_end() - 1, self.tile_size);

        let mut tiles = Vec::new();
        for tr in tr0..=tr1 {
            for tc in tc0..=tc1 {
                let tile_rect = PixelRect::new(tr * t, tc * t, self.tile_size as u32, self.tile_size as u32);
                let isect = match tile_rect.intersect(&coverage) {
                    Some(r) => r,
                    None => continue,
                };
                let mut tile = Tile::empty(tr, tc, self.tile_size);
                for row in isect.row0..isect.row_end() {
                    for col in isect.col0..isect.col_end() {
                        let v = self.resample_at(header, pixels, row, col);
                        tile.set((row - tile_rect.row0) as usize, (col - tile_rect.col0) as usize, v);
                    }
                }
                persist::write_tile(&snap_dir, &tile)?;
                tiles.push((tr, tc));
            }
        }

        let index = SnapshotIndex {
            timestamp: header.timestamp,
            coverage,
            tiles: tiles.clone(),
            tile_size: self.tile_size,
        };
        persist::write_json(&snap_dir.join("index.json"), &index)?;

        let mut layers = self.layers.write().unwrap();
        let meta = layers.entry(header.layer_id.clone()).or_insert_with(|| {
            let lf = persist::LayerFile {
                layer_id: header.layer_id.clone(),
                band_role: header.band_role,
                units: String::new(),
            };
            let dir = self.layer_dir(&header.layer_id);
            std::fs::create_dir_all(&dir).ok();
            persist::write_json(&dir.join("layer.json"), &lf).ok();
            LayerMeta {
                band_role: header.band_role,
                units: String::new(),
                snapshots: BTreeMap::new(),
            }
        });
        meta.snapshots.insert(header.timestamp, index);

        Ok(SnapshotRecord {
            layer_id: header.layer_id.clone(),
            timestamp: header.timestamp,
            tile_count: tiles.len(),
            coverage,
        })
    }

    /// Pixel indices for a coordinate on the store grid.
    pub fn geo_to_pixel(&self, lat: f64, lon: f64) -> (i64, i64) {
        self.grid.geo_to_pixel(lat, lon)
    }

    /// Read a k-by-k window centered on a pixel (top-left = center - floor(k/2)).
    ///
    /// Fails with `WindowOutOfCoverage` when the window misses the snapshot's
    /// coverage entirely; otherwise out-of-coverage pixels come back invalid.
    pub fn read_window(
        &self,
        layer_id: &str,
        timestamp: Timestamp,
        center: (i64, i64),
        k: usize,
    ) -> Result<PixelWindow> {
        assert!(k >= 1, "window size must be at least 1");
        let index = {
            let layers = self.layers.read().unwrap();
            let meta = layers
                .get(layer_id)
                .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
            meta.snapshots
                .get(&timestamp)
                .ok_or_else(|| Error::NoTemporalMatch {
                    layer: layer_id.to_string(),
                    window_secs: 0,
                })?
                .clone()
        };

        let half = (k / 2) as i64;
        let window = PixelRect::new(center.0 - half, center.1 - half, k as u32, k as u32);
        let isect = window
            .intersect(&index.coverage)
            .ok_or_else(|| Error::WindowOutOfCoverage {
                layer: layer_id.to_string(),
            })?;

        let mut values = vec![f32::NAN; k * k];
        let t = self.tile_size as i64;
        let snap_dir = self.snapshot_dir(layer_id, timestamp);
        let tr0 = tile_of_pixel(isect.row0, self.tile_size);
        let tr1 = tile_of_pixel(isect.row_end() - 1, self.tile_size);
        let tc0 = tile_of_pixel(isect.col0, self.tile_size);
        let tc1 = tile_of_pixel(isect.col_end() - 1, self.tile_size);
        for tr in tr0..=tr1 {
            for tc in tc0..=tc1 {
                if !index.tiles.contains(&(tr, tc)) {
                    continue;
                }
                let tile = persist::read_tile(&snap_dir, tr, tc, self.tile_size)?;
                self.tiles_read.fetch_add(1, Ordering::Relaxed);
                let tile_rect = PixelRect::new(tr * t, tc * t, self.tile_size as u32, self.tile_size as u32);
                if let Some(part) = tile_rect.intersect(&isect) {
                    for row in part.row0..part.row_end() {
                        let src_off = ((row - tile_rect.row0) as usize) * self.tile_size
                            + (part.col0 - tile_rect.col0) as usize;
                        let dst_off =
                            ((row - window.row0) as usize) * k + (part.col0 - window.col0) as usize;
                        let n = part.cols as usize;
                        values[dst_off..dst_off + n]
                            .copy_from_slice(&tile.values[src_off..src_off + n]);
                    }
                }
            }
        }
        self.windows_served.fetch_add(1, Ordering::Relaxed);

        let valid = values.iter().map(|v| v.is_finite()).collect();
        Ok(PixelWindow { k, values, valid })
    }

    /// Closest available snapshot within +/- `search_window_secs` of the
    /// requested instant; ties break toward the earlier timestamp.
    pub fn resolve_timestamp(
        &self,
        layer_id: &str,
        requested: Timestamp,
        search_window_secs: i64,
    ) -> Result<Timestamp> {
        assert!(search_window_secs >= 0, "search window must be non-negative");
        let layers = self.layers.read().unwrap();
        let meta = layers
            .get(layer_id)
            .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
        let mut best: Option<Timestamp> = None;
        for &ts in meta.snapshots.keys() {
            if ts.distance(requested) > search_window_secs {
                continue;
            }
            best = match best {
                None => Some(ts),
                Some(cur) => {
                    let better = ts.distance(requested) < cur.distance(requested)
                        || (ts.distance(requested) == cur.distance(requested) && ts < cur);
                    Some(if better { ts } else { cur })
                }
            };
        }
        best.ok_or(Error::NoTemporalMatch {
            layer: layer_id.to_string(),
            window_secs: search_window_secs,
        })
    }

    pub fn layer_info(&self, layer_id: &str) -> Result<LayerDescriptor> {
        let layers = self.layers.read().unwrap();
        let meta = layers
            .get(layer_id)
            .ok_or_else(|| Error::UnknownLayer(layer_id.to_string()))?;
        Ok(LayerDescriptor {
            layer_id: layer_id.to_string(),
            band_role: meta.band_role,
            units: meta.units.clone(),
            snapshots: meta
                .snapshots
                .values()
                .map(|s| SnapshotInfo {
                    timestamp: s.timestamp,
                    coverage: s.coverage,
                    tile_count: s.tiles.len(),
                })
                .collect(),
        })
    }

    pub fn layer_ids(&self) -> Vec<String> {
        let layers = self.layers.read().unwrap();
        let mut ids: Vec<String> = layers.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn has_layer(&self, layer_id: &str) -> bool {
        self.layers.read().unwrap().contains_key(layer_id)
    }

    fn layer_dir(&self, layer_id: &str) -> PathBuf {
        self.root.join("layers").join(layer_id)
    }

    fn snapshot_dir(&self, layer_id: &str, ts: Timestamp) -> PathBuf {
        self.layer_dir(layer_id)
            .join("snapshots")
            .join(format!("t{}", ts.unix()))
    }

    /// Store-grid pixels whose centers fall inside the source bbox.
    fn output_coverage(&self, header: &IngestHeader) -> PixelRect {
        let res = self.grid.resolution;
        let north = header.origin_lat;
        let south = header.origin_lat - header.rows as f64 * header.resolution;
        let west = header.origin_lon;
        let east = header.origin_lon + header.cols as f64 * header.resolution;

        let r_start = ((self.grid.origin_lat - north) / res - 0.5).ceil() as i64;
        let r_end = ((self.grid.origin_lat - south) / res - 0.5).ceil() as i64;
        let c_start = ((west - self.grid.origin_lon) / res - 0.5).ceil() as i64;
        let c_end = ((east - self.grid.origin_lon) / res - 0.5).ceil() as i64;

        PixelRect::new(
            r_start,
            c_start,
            (r_end - r_start).max(0) as u32,
            (c_end - c_start).max(0) as u32,
        )
    }

    /// Nearest-neighbor lookup: the source pixel containing this store pixel's center.
    fn resample_at(&self, header: &IngestHeader, pixels: &[f32], row: i64, col: i64) -> f32 {
        let (lat, lon) = self.grid.pixel_center(row, col);
        let sr = ((header.origin_lat - lat) / header.resolution).floor() as i64;
        let sc = ((lon - header.origin_lon) / header.resolution).floor() as i64;
        let sr = sr.clamp(0, header.rows as i64 - 1) as usize;
        let sc = sc.clamp(0, header.cols as i64 - 1) as usize;
        pixels[sr * header.cols + sc]
    }
}

impl std::fmt::Debug for RasterStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterStore")
            .field("root", &self.root)
            .field("grid", &self.grid)
            .field("tile_size", &self.tile_size)
            .finish()
    }
}

#[cfg(test)]
mod tests;
