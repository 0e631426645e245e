//! Hand-generated features for the random forest: per-band mean and standard
//! deviation, horizontal GLCM contrast on quantized bands, and NDVI mean/std.

use crate::assembly::Patch;
use crate::error::{Error, Result};
use crate::filters::{compute_ndvi, summarize, StatSummary};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// What a statistic is computed over: a raw band (by channel index) or the
/// derived NDVI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Selector {
    Band(usize),
    Ndvi,
}

impl std::fmt::Display for Selector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selector::Band(i) => write!(f, "{i}"),
            Selector::Ndvi => write!(f, "ndvi"),
        }
    }
}

pub const DEFAULT_GLCM_LEVELS: usize = 8;

/// Which statistics to compute over which selectors. Feature order is fixed:
/// all mean selectors, then all std selectors, then all contrast selectors,
/// each in spec order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSpec {
    pub mean: Vec<Selector>,
    pub std: Vec<Selector>,
    pub glcm_contrast: Vec<Selector>,
    pub glcm_levels: usize,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            mean: Vec::new(),
            std: Vec::new(),
            glcm_contrast: Vec::new(),
            glcm_levels: DEFAULT_GLCM_LEVELS,
        }
    }
}

impl FeatureSpec {
    /// Mean/std over every band (and NDVI when available) plus contrast over
    /// every band. For c=4 with NDVI this is the 14-feature layout.
    pub fn default_for_channels(c: usize, with_ndvi: bool) -> Self {
        let mut mean: Vec<Selector> = (0..c).map(Selector::Band).collect();
        let mut std = mean.clone();
        let glcm_contrast = mean.clone();
        if with_ndvi {
            mean.push(Selector::Ndvi);
            std.push(Selector::Ndvi);
        }
        FeatureSpec {
            mean,
            std,
            glcm_contrast,
            glcm_levels: DEFAULT_GLCM_LEVELS,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len() + self.std.len() + self.glcm_contrast.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column names for exports, "stat:selector".
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        names.extend(self.mean.iter().map(|s| format!("mean:{s}")));
        names.extend(self.std.iter().map(|s| format!("std:{s}")));
        names.extend(self.glcm_contrast.iter().map(|s| format!("glcm:contrast:{s}")));
        names
    }

    pub fn needs_ndvi(&self) -> bool {
        self.mean.contains(&Selector::Ndvi) || self.std.contains(&Selector::Ndvi)
    }

    /// Structural validity for a c-channel patch.
    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.glcm_levels < 2 {
            return Err(Error::BadFeatureSpec(format!(
                "glcm_levels must be at least 2, got {}",
                self.glcm_levels
            )));
        }
        for sel in self.mean.iter().chain(&self.std).chain(&self.glcm_contrast) {
            if let Selector::Band(i) = sel {
                if *i >= channels {
                    return Err(Error::BadFeatureSpec(format!(
                        "selector band {i} out of range for c={channels}"
                    )));
                }
            }
        }
        if self.glcm_contrast.contains(&Selector::Ndvi) {
            return Err(Error::BadFeatureSpec(
                "glcm:contrast is defined on quantized bands, not \"ndvi\"".into(),
            ));
        }
        Ok(())
    }
}

/// Linear min–max quantization of the valid pixels into `levels` bins:
/// floor(levels·(v−min)/(max−min)) clamped to levels−1. A constant band maps
/// to all zeros. Invalid pixels get level 0.
pub fn quantize_band(values: &[f32], valid: &[bool], levels: usize) -> Result<Vec<u32>> {
    if levels < 2 {
        return Err(Error::BadFeatureSpec(format!(
            "quantization needs at least 2 levels, got {levels}"
        )));
    }
    let s = summarize(values, valid)?;
    let range = s.max - s.min;
    let mut out = vec![0u32; values.len()];
    if range == 0.0 {
        return Ok(out);
    }
    let g = levels as f64;
    let top = (levels - 1) as u32;
    for (i, (&v, &ok)) in values.iter().zip(valid).enumerate() {
        if ok {
            let level = (g * (v as f64 - s.min) / range).floor() as u32;
            out[i] = level.min(top);
        }
    }
    Ok(out)
}

/// Ordered horizontal co-occurrence counts: key (i, j) counts pairs
/// (row, col) → (row, col+1). Total count is k·(k−1).
pub fn glcm_pair_counts(quantized: &[u32], k: usize) -> BTreeMap<(u32, u32), u64> {
    let mut counts = BTreeMap::new();
    for row in 0..k {
        for col in 0..k - 1 {
            let i = quantized[row * k + col];
            let j = quantized[row * k + col + 1];
            *counts.entry((i, j)).or_insert(0u64) += 1;
        }
    }
    counts
}

/// Horizontal GLCM contrast: Σ P(i,j)·(i−j)² with P = pair count / (k·(k−1)).
/// Computed as an exact integer sum divided once, so the result is
/// bit-reproducible across platforms and thread counts.
pub fn glcm_contrast(quantized: &[u32], k: usize, levels: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::GlcmUndefined);
    }
    debug_assert_eq!(quantized.len(), k * k);
    debug_assert!(quantized.iter().all(|&q| (q as usize) < levels));
    let counts = glcm_pair_counts(quantized, k);
    let mut num = 0u64;
    for (&(i, j), &count) in &counts {
        let d = i as i64 - j as i64;
        num += count * (d * d) as u64;
    }
    let denom = (k * (k - 1)) as u64;
    Ok(num as f64 / denom as f64)
}

/// Compute the feature vector for one ok patch. Order and length follow the
/// spec; "ndvi" selectors derive NDVI from `ndvi_bands` = (red, nir).
pub fn build_feature_vector(
    patch: &Patch,
    spec: &FeatureSpec,
    ndvi_bands: Option<(usize, usize)>,
) -> Result<Vec<f64>> {
    spec.validate(patch.channels)?;
    let ndvi: Option<StatSummary> = if spec.needs_ndvi() {
        let (red, nir) = ndvi_bands.ok_or_else(|| {
            Error::UnknownBandRole(
                "features reference \"ndvi\" but red/nir bands are not resolved".into(),
            )
        })?;
        let (values, valid) = compute_ndvi(patch, red, nir)?;
        Some(summarize(&values, &valid)?)
    } else {
        None
    };

    let mut band_stats: Vec<Option<StatSummary>> = vec![None; patch.channels];
    let stat_for = |sel: &Selector, band_stats: &mut Vec<Option<StatSummary>>| -> Result<StatSummary> {
        match sel {
            Selector::Band(i) => {
                if band_stats[*i].is_none() {
                    band_stats[*i] = Some(summarize(patch.band(*i), &patch.valid)?);
                }
                Ok(band_stats[*i].unwrap())
            }
            Selector::Ndvi => Ok(ndvi.unwrap()),
        }
    };

    let mut out = Vec::with_capacity(spec.len());
    for sel in &spec.mean {
        out.push(stat_for(sel, &mut band_stats)?.mean);
    }
    for sel in &spec.std {
        out.push(stat_for(sel, &mut band_stats)?.std);
    }
    for sel in &spec.glcm_contrast {
        let band = match sel {
            Selector::Band(i) => patch.band(*i),
            Selector::Ndvi => unreachable!("rejected by validate"),
        };
        let quantized = quantize_band(band, &patch.valid, spec.glcm_levels)?;
        out.push(glcm_contrast(&quantized, patch.k, spec.glcm_levels)?);
    }
    debug_assert!(out.iter().all(|v| v.is_finite()));
    Ok(out)
}

/// Feature matrix export: header row of "stat:selector" names (plus a label
/// column when labels are given), one row per sample.
pub fn write_feature_csv(
    path: &Path,
    spec: &FeatureSpec,
    vectors: &[Vec<f64>],
    labels: Option<&[String]>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let names = spec.feature_names();
    if labels.is_some() {
        writeln!(out, "{},label", names.join(","))?;
    } else {
        writeln!(out, "{}", names.join(","))?;
    }
    for (i, v) in vectors.iter().enumerate() {
        let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
        match labels {
            Some(ls) => writeln!(out, "{},{}", row.join(","), ls[i])?,
            None => writeln!(out, "{}", row.join(","))?,
        }
    }
    out.flush()?;
    Ok(())
}
