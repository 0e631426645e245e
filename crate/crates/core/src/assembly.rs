//! Parallel patch assembly: N coordinates to N candidate k×k×c patches.
//!
//! Points that fail coverage or temporal matching are rejected with a reason,
//! never dropped: output order always matches input order, so callers can zip
//! patches back to their points and labels.

use crate::error::{Error, Result};
use crate::query::{Mode, QuerySpec, Spatial};
use crate::store::{PixelWindow, RasterStore};
use crate::timestamp::Timestamp;
use rayon::prelude::*;
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub lat: f64,
    pub lon: f64,
    /// Absent for inference tiles and data queries.
    pub label: Option<String>,
    /// Per-point acquisition time; defaults to the query snapshot.
    pub label_time: Option<Timestamp>,
}

impl LabeledPoint {
    pub fn new(lat: f64, lon: f64) -> Self {
        LabeledPoint {
            lat,
            lon,
            label: None,
            label_time: None,
        }
    }

    pub fn labeled(lat: f64, lon: f64, label: impl Into<String>) -> Self {
        LabeledPoint {
            lat,
            lon,
            label: Some(label.into()),
            label_time: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PatchStatus {
    Ok,
    Rejected(String),
}

impl PatchStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, PatchStatus::Ok)
    }

    pub fn reason(&self) -> Option<&str> {
        match self {
            PatchStatus::Ok => None,
            PatchStatus::Rejected(r) => Some(r),
        }
    }
}

/// One k×k×c sample. Channel order equals the query layer order; data is
/// band-sequential (channel, then row, then column).
#[derive(Debug, Clone)]
pub struct Patch {
    pub k: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    /// Per-pixel validity, intersected across channels.
    pub valid: Vec<bool>,
    pub point: LabeledPoint,
    /// Resolved snapshot per layer; None when resolution failed.
    pub resolved: Vec<Option<Timestamp>>,
    pub status: PatchStatus,
}

/// Bitwise pixel equality: NaN fill compares equal to itself, so two
/// assemblies of the same inputs are equal even where pixels are nodata.
impl PartialEq for Patch {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k
            && self.channels == other.channels
            && self.valid == other.valid
            && self.point == other.point
            && self.resolved == other.resolved
            && self.status == other.status
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl Patch {
    pub fn band(&self, channel: usize) -> &[f32] {
        let n = self.k * self.k;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[channel * self.k * self.k + row * self.k + col]
    }

    pub fn is_ok(&self) -> bool {
        self.status.is_ok()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub k: usize,
    pub layer_ids: Vec<String>,
    pub patches: Vec<Patch>,
}

impl PatchSet {
    pub fn channels(&self) -> usize {
        self.layer_ids.len()
    }

    pub fn ok_count(&self) -> usize {
        self.patches.iter().filter(|p| p.is_ok()).count()
    }

    pub fn rejected_count(&self) -> usize {
        self.patches.len() - self.ok_count()
    }

    pub fn ok_patches(&self) -> impl Iterator<Item = &Patch> {
        self.patches.iter().filter(|p| p.is_ok())
    }
}

fn assemble_point(
    store: &RasterStore,
    layers: &[String],
    point: &LabeledPoint,
    k: usize,
    snapshot: Timestamp,
    window_secs: i64,
) -> Patch {
    let c = layers.len();
    let n = k * k;
    let target = point.label_time.unwrap_or(snapshot);

    let mut resolved: Vec<Option<Timestamp>> = vec![None; c];
    let mut status = PatchStatus::Ok;
    for (i, layer) in layers.iter().enumerate() {
        match store.resolve_timestamp(layer, target, window_secs) {
            Ok(ts) => resolved[i] = Some(ts),
            Err(_) => {
                status = PatchStatus::Rejected(format!(
                    "no_temporal_match: {layer} (window \u{00b1}{window_secs}s)"
                ));
                break;
            }
        }
    }

    let mut data = vec![f32::NAN; c * n];
    let mut valid = vec![true; n];
    if status.is_ok() {
        let center = store.grid().geo_to_pixel(point.lat, point.lon);
        for (i, layer) in layers.iter().enumerate() {
            let ts = resolved[i].unwrap();
            match store.read_window(layer, ts, center, k) {
                Ok(window) => {
                    let PixelWindow {
                        values,
                        valid: layer_valid,
                        ..
                    } = window;
                    data[i * n..(i + 1) * n].copy_from_slice(&values);
                    for (v, lv) in valid.iter_mut().zip(&layer_valid) {
                        *v &= *lv;
                    }
                    if !layer_valid.iter().all(|&b| b) && status.is_ok() {
                        status = PatchStatus::Rejected(format!("partial_coverage: {layer}"));
                    }
                }
                Err(Error::WindowOutOfCoverage { .. }) => {
                    valid.fill(false);
                    status = PatchStatus::Rejected(format!("out_of_coverage: {layer}"));
                    break;
                }
                Err(_) => {
                    valid.fill(false);
                    status = PatchStatus::Rejected(format!("read_failed: {layer}"));
                    break;
                }
            }
        }
    } else {
        valid.fill(false);
    }

    Patch {
        k,
        channels: c,
        data,
        valid,
        point: point.clone(),
        resolved,
        status,
    }
}

/// Assemble one patch per point, in parallel. Output order matches input
/// order regardless of scheduling; an all-rejected result is not an error
/// here (inference tiling tolerates it).
pub fn assemble_points(
    store: &RasterStore,
    layers: &[String],
    points: &[LabeledPoint],
    k: usize,
    snapshot: Timestamp,
    window_secs: i64,
) -> PatchSet {
    let patches: Vec<Patch> = points
        .par_iter()
        .map(|p| assemble_point(store, layers, p, k, snapshot, window_secs))
        .collect();
    PatchSet {
        k,
        layer_ids: layers.to_vec(),
        patches,
    }
}

/// Assemble the patches for a train-mode query. Errors with `AssemblyEmpty`
/// when every point was rejected.
pub fn assemble_patches(spec: &QuerySpec, store: &RasterStore) -> Result<PatchSet> {
    let model = spec
        .model
        .as_ref()
        .ok_or_else(|| Error::InvalidQuery("patch assembly requires a model block".into()))?;
    let coords = match &spec.spatial {
        Spatial::Points(p) => p,
        Spatial::Square { .. } => {
            return Err(Error::InvalidQuery(
                "patch assembly requires point coordinates".into(),
            ))
        }
    };
    let points: Vec<LabeledPoint> = coords
        .iter()
        .enumerate()
        .map(|(i, &(lat, lon))| LabeledPoint {
            lat,
            lon,
            label: match model.mode {
                Mode::Train => model.labels.get(i).cloned(),
                Mode::Test => None,
            },
            label_time: None,
        })
        .collect();
    let set = assemble_points(
        store,
        &spec.layers,
        &points,
        model.window_size,
        spec.temporal.snapshot,
        spec.temporal.window_or_default(),
    );
    if set.ok_count() == 0 {
        return Err(Error::AssemblyEmpty);
    }
    Ok(set)
}

#[derive(Serialize)]
struct ManifestLine<'a> {
    index: usize,
    lat: f64,
    lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<&'a str>,
}

/// Debug export: one raw band-sequential f32 blob per patch plus a JSON-lines
/// manifest of statuses.
pub fn export_patch_set(set: &PatchSet, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::io::BufWriter::new(std::fs::File::create(dir.join("manifest.jsonl"))?);
    for (index, patch) in set.patches.iter().enumerate() {
        let line = ManifestLine {
            index,
            lat: patch.point.lat,
            lon: patch.point.lon,
            label: patch.point.label.as_deref(),
            status: if patch.is_ok() { "ok" } else { "rejected" },
            reason: patch.status.reason(),
        };
        serde_json::to_writer(&mut manifest, &line)?;
        manifest.write_all(b"\n")?;
        let mut blob = std::io::BufWriter::new(std::fs::File::create(
            dir.join(format!("patch_{index:05}.f32")),
        )?);
        for v in &patch.data {
            blob.write_all(&v.to_le_bytes())?;
        }
    }
    manifest.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
