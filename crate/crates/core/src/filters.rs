//! Derived indices, per-sample statistics, and quality filtering.
//!
//! The canonical use is the vegetation gate: reject every sample whose mean
//! NDVI is negative before training or inference. Bounds are conjunctive; a
//! sample must satisfy all of them to be retained.

use crate::assembly::{Patch, PatchSet, PatchStatus};
use crate::error::{Error, Result};
use crate::features::Selector;
use crate::query::{FilterBound, FilterSpec, Statistic};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

/// min/max/mean/std over the valid pixels of one band or derived index.
/// Population std: deterministic even for single-pixel windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl StatSummary {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Min => self.min,
            Statistic::Max => self.max,
            Statistic::Mean => self.mean,
            Statistic::Std => self.std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    /// One summary per channel, in patch channel order.
    pub bands: Vec<StatSummary>,
    pub ndvi: Option<StatSummary>,
}

impl SampleStats {
    pub fn select(&self, selector: &Selector) -> Result<&StatSummary> {
        match selector {
            Selector::Band(i) => self.bands.get(*i).ok_or_else(|| {
                Error::BandOutOfRange(format!("band {i} of {} channels", self.bands.len()))
            }),
            Selector::Ndvi => self.ndvi.as_ref().ok_or_else(|| {
                Error::StatsUndefined("ndvi statistics were not computed for this patch".into())
            }),
        }
    }
}

/// Summarize the values where `valid` holds. Two-pass mean/std in f64.
pub fn summarize(values: &[f32], valid: &[bool]) -> Result<StatSummary> {
    debug_assert_eq!(values.len(), valid.len());
    let mut n = 0u64;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for (&v, &ok) in values.iter().zip(valid) {
        if !ok {
            continue;
        }
        let v = v as f64;
        n += 1;
        sum += v;
        min = min.min(v);
        max = max.max(v);
    }
    if n == 0 {
        return Err(Error::StatsUndefined("no valid pixels".into()));
    }
    let mean = sum / n as f64;
    let mut sq = 0.0f64;
    for (&v, &ok) in values.iter().zip(valid) {
        if ok {
            let d = v as f64 - mean;
            sq += d * d;
        }
    }
    Ok(StatSummary {
        min,
        max,
        mean,
        std: (sq / n as f64).sqrt(),
    })
}

/// Per-pixel NDVI = (NIR − Red) / (NIR + Red). Pixels where the denominator
/// is zero are set to 0 and marked invalid; pixels invalid in the patch mask
/// stay invalid.
pub fn compute_ndvi(
    patch: &Patch,
    red_index: usize,
    nir_index: usize,
) -> Result<(Vec<f32>, Vec<bool>)> {
    let c = patch.channels;
    if red_index >= c || nir_index >= c {
        return Err(Error::BandOutOfRange(format!(
            "ndvi bands ({red_index}, {nir_index}) of {c} channels"
        )));
    }
    let red = patch.band(red_index);
    let nir = patch.band(nir_index);
    let n = patch.k * patch.k;
    let mut ndvi = vec![0.0f32; n];
    let mut valid = vec![false; n];
    for i in 0..n {
        if !patch.valid[i] {
            continue;
        }
        let denom = nir[i] + red[i];
        if denom == 0.0 {
            ndvi[i] = 0.0;
        } else {
            ndvi[i] = (nir[i] - red[i]) / denom;
            valid[i] = true;
        }
    }
    Ok((ndvi, valid))
}

/// Statistics over every band, plus NDVI when band indices are supplied.
pub fn patch_stats(patch: &Patch, ndvi_bands: Option<(usize, usize)>) -> Result<SampleStats> {
    let bands = (0..patch.channels)
        .map(|ch| summarize(patch.band(ch), &patch.valid))
        .collect::<Result<Vec<_>>>()?;
    let ndvi = match ndvi_bands {
        Some((red, nir)) => {
            let (values, valid) = compute_ndvi(patch, red, nir)?;
            Some(summarize(&values, &valid)?)
        }
        None => None,
    };
    Ok(SampleStats { bands, ndvi })
}

fn bound_key(bound: &FilterBound) -> String {
    let sel = match &bound.selector {
        Selector::Band(i) => i.to_string(),
        Selector::Ndvi => "ndvi".to_string(),
    };
    format!("{sel}.{}", bound.statistic.name())
}

/// First violated bound, rendered like "ndvi.mean < 0", or None if all hold.
/// A patch whose referenced statistic is undefined (e.g. NDVI with no valid
/// pixels) is treated as violating that bound.
pub fn filter_reason(
    patch: &Patch,
    filter: &FilterSpec,
    ndvi_bands: Option<(usize, usize)>,
) -> Result<Option<String>> {
    let needs_ndvi = filter
        .bounds
        .iter()
        .any(|b| b.selector == Selector::Ndvi);
    if needs_ndvi && ndvi_bands.is_none() {
        return Err(Error::UnknownBandRole(
            "filter references \"ndvi\" but red/nir bands are not resolved".into(),
        ));
    }
    let stats = match patch_stats(patch, if needs_ndvi { ndvi_bands } else { None }) {
        Ok(s) => s,
        Err(Error::StatsUndefined(_)) => {
            let first = filter.bounds.first().map(bound_key).unwrap_or_default();
            return Ok(Some(format!("{first} undefined (no valid pixels)")));
        }
        Err(e) => return Err(e),
    };
    for bound in &filter.bounds {
        let summary = match stats.select(&bound.selector) {
            Ok(s) => *s,
            Err(Error::StatsUndefined(_)) => {
                return Ok(Some(format!("{} undefined (no valid pixels)", bound_key(bound))))
            }
            Err(e) => return Err(e),
        };
        let value = summary.get(bound.statistic);
        if let Some(min) = bound.min {
            if value < min {
                return Ok(Some(format!("{} < {min}", bound_key(bound))));
            }
        }
        if let Some(max) = bound.max {
            if value > max {
                return Ok(Some(format!("{} > {max}", bound_key(bound))));
            }
        }
    }
    Ok(None)
}

/// Partition into (retained, rejected). Retained patches are the ok patches
/// satisfying every bound; everything else lands in rejected with a reason.
/// Both halves preserve input order, so retained ∪ rejected = input.
pub fn apply_filters(
    set: PatchSet,
    filter: &FilterSpec,
    ndvi_bands: Option<(usize, usize)>,
) -> Result<(PatchSet, PatchSet)> {
    let PatchSet {
        k,
        layer_ids,
        patches,
    } = set;
    let mut retained = Vec::new();
    let mut rejected = Vec::new();
    for mut patch in patches {
        if !patch.is_ok() {
            rejected.push(patch);
            continue;
        }
        match filter_reason(&patch, filter, ndvi_bands)? {
            None => retained.push(patch),
            Some(reason) => {
                patch.status = PatchStatus::Rejected(reason);
                rejected.push(patch);
            }
        }
    }
    Ok((
        PatchSet {
            k,
            layer_ids: layer_ids.clone(),
            patches: retained,
        },
        PatchSet {
            k,
            layer_ids,
            patches: rejected,
        },
    ))
}

#[derive(Serialize)]
struct RejectionLine<'a> {
    index: usize,
    lat: f64,
    lon: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
    reason: &'a str,
}

/// Audit trail: one JSON line per rejected sample.
pub fn write_rejection_report(rejected: &PatchSet, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (index, patch) in rejected.patches.iter().enumerate() {
        let line = RejectionLine {
            index,
            lat: patch.point.lat,
            lon: patch.point.lon,
            label: patch.point.label.as_deref(),
            reason: patch.status.reason().unwrap_or("unknown"),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
