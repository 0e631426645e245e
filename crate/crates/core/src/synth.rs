//! Synthetic benchmark worlds: multi-band rasters with class-controlled
//! signals, ground-truth region maps, label manifests with optional location
//! error, and an end-to-end benchmark harness.
//!
//! Every class signature is built from verifiable knobs: band means set the
//! spectral separation and the NDVI sign, noise sets the difficulty, and
//! vertical stripes (a square wave along columns) set the horizontal GLCM
//! contrast without moving the mean or the variance between two classes that
//! share an amplitude. Generation is pure given the seed and parallel across
//! regions, each (region, band) pair drawing from its own counter-derived
//! stream.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::LabeledPoint;
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::grid::{GridSpec, PixelRect, HALF_METER_DEG};
use crate::manifest::{LabelManifest, ManifestPoint};
use crate::models::{mix_seed3, TrainReport};
use crate::pipeline::{
    run_inference_query, run_training_with_points, ClassificationMap, InferOptions,
    InferenceOutcome, TrainOptions,
};
use crate::query::{
    Architecture, FilterSpec, GridSearchSpec, HoldoutSpec, Mode, ModelBlock, ModelParams,
    QuerySpec, Spatial, Temporal,
};
use crate::registry::ModelRegistry;
use crate::store::{BandRole, IngestHeader, RasterStore, DEFAULT_TILE_SIZE};
use crate::timestamp::Timestamp;

/// Layer ids of the generated bands, in channel order.
pub const BAND_NAMES: [&str; 4] = ["red", "green", "blue", "nir"];

const BAND_ROLES: [BandRole; 4] = [BandRole::Red, BandRole::Green, BandRole::Blue, BandRole::Nir];

// ---------------------------------------------------------------------------
// World specification
// ---------------------------------------------------------------------------

/// One land-cover class: per-band means, Gaussian noise, and an optional
/// vertical stripe texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Band means in channel order red, green, blue, nir.
    pub means: [f32; 4],
    /// Per-pixel Gaussian noise, same for every band.
    pub noise_std: f32,
    /// Square-wave period along columns, in pixels. 0 means untextured;
    /// otherwise even and at least 2. The wave is added to all four bands,
    /// so it changes GLCM contrast but not NDVI.
    #[serde(default)]
    pub stripe_period: usize,
    /// Square-wave amplitude; zero exactly when the period is zero.
    #[serde(default)]
    pub stripe_amplitude: f32,
    /// Vegetated classes have NIR mean above red (positive expected NDVI),
    /// bare classes the reverse.
    pub vegetated: bool,
}

/// A class-labeled rectangle of the world, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    /// Index into `WorldSpec::classes`.
    pub class: usize,
    pub row: usize,
    pub col: usize,
    pub rows: usize,
    pub cols: usize,
}

/// A complete synthetic world: size, geography, classes, and a region layout
/// that tiles the world exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    pub grid: GridSpec,
    pub snapshot: Timestamp,
    pub classes: Vec<ClassSpec>,
    pub regions: Vec<RegionSpec>,
}

fn bad(msg: String) -> Error {
    Error::BadWorldSpec(msg)
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(bad(format!("world is {}x{} pixels", self.rows, self.cols)));
        }
        let area = self
            .rows
            .checked_mul(self.cols)
            .ok_or_else(|| bad("world area overflows".into()))?;
        if self.classes.is_empty() {
            return Err(bad("no classes".into()));
        }
        if self.classes.len() > u16::MAX as usize {
            return Err(bad(format!("{} classes exceed the class-index range", self.classes.len())));
        }
        for (i, class) in self.classes.iter().enumerate() {
            class.validate(i)?;
            if self.classes[..i].iter().any(|c| c.name == class.name) {
                return Err(bad(format!("duplicate class name {:?}", class.name)));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[..i] {
                if a.means == b.means
                    && a.noise_std == b.noise_std
                    && a.stripe_period == b.stripe_period
                    && a.stripe_amplitude == b.stripe_amplitude
                {
                    return Err(bad(format!(
                        "classes {:?} and {:?} have identical signatures",
                        b.name, a.name
                    )));
                }
            }
        }

        // regions must tile the world: no overlap, no gap
        let mut covered = vec![false; area];
        for (i, region) in self.regions.iter().enumerate() {
            if region.class >= self.classes.len() {
                return Err(bad(format!(
                    "region {i} names class {} of {}",
                    region.class,
                    self.classes.len()
                )));
            }
            if region.rows == 0 || region.cols == 0 {
                return Err(bad(format!("region {i} is empty")));
            }
            let row_end = region.row.checked_add(region.rows);
            let col_end = region.col.checked_add(region.cols);
            if row_end.is_none_or(|r| r > self.rows) || col_end.is_none_or(|c| c > self.cols) {
                return Err(bad(format!("region {i} exceeds the world bounds")));
            }
            for r in region.row..region.row + region.rows {
                for c in region.col..region.col + region.cols {
                    let idx = r * self.cols + c;
                    if covered[idx] {
                        return Err(bad(format!(
                            "region {i} overlaps an earlier region at pixel ({r}, {c})"
                        )));
                    }
                    covered[idx] = true;
                }
            }
        }
        if let Some(idx) = covered.iter().position(|&v| !v) {
            return Err(bad(format!(
                "no region covers pixel ({}, {})",
                idx / self.cols,
                idx % self.cols
            )));
        }
        Ok(())
    }

    /// The default benchmark world: 10 well-separated vegetated classes on an
    /// 8x8 checker of 256 px regions (2048x2048 total), half of them striped.
    pub fn ten_class(seed: u64) -> WorldSpec {
        let names = [
            "alder", "ash", "beech", "birch", "cedar", "elm", "fir", "hemlock", "maple", "oak",
        ];
        let classes = names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let f = i as f32;
                let period = [0usize, 4, 8, 16][i % 4];
                ClassSpec {
                    name: name.to_string(),
                    means: [24.0 + 5.0 * f, 40.0 + 4.0 * f, 18.0 + 3.0 * f, 96.0 + 7.0 * f],
                    noise_std: 4.0,
                    stripe_period: period,
                    stripe_amplitude: if period == 0 { 0.0 } else { 6.0 },
                    vegetated: true,
                }
            })
            .collect();
        WorldSpec {
            seed,
            rows: 2048,
            cols: 2048,
            grid: GridSpec::new(45.0, -70.0, HALF_METER_DEG),
            snapshot: Timestamp::parse("2018-06-01T00:00:00Z").unwrap(),
            classes,
            regions: checker_regions(8, 8, 256, 10),
        }
    }

    /// Ten classes in five pairs that differ only in stripe period (4 vs 16 px
    /// at equal amplitude): means, variance, min and max match within a pair,
    /// so only texture-sensitive features can separate its members.
    pub fn stripe_paired(seed: u64) -> WorldSpec {
        let prefixes = ["alder", "birch", "cedar", "maple", "oak"];
        let mut classes = Vec::new();
        for (j, prefix) in prefixes.iter().enumerate() {
            let f = j as f32;
            let means = [25.0 + 10.0 * f, 45.0 + 8.0 * f, 20.0 + 6.0 * f, 100.0 + 12.0 * f];
            for (suffix, period) in [("coarse", 16usize), ("fine", 4)] {
                classes.push(ClassSpec {
                    name: format!("{prefix}_{suffix}"),
                    means,
                    noise_std: 3.0,
                    stripe_period: period,
                    stripe_amplitude: 12.0,
                    vegetated: true,
                });
            }
        }
        WorldSpec {
            seed,
            rows: 2048,
            cols: 2048,
            grid: GridSpec::new(45.0, -70.0, HALF_METER_DEG),
            snapshot: Timestamp::parse("2018-06-01T00:00:00Z").unwrap(),
            classes,
            regions: checker_regions(8, 8, 256, 10),
        }
    }

    /// Three vegetated species over two region rows plus a bare-ground strip
    /// along the bottom: the small world for NDVI filtering and mixed maps.
    pub fn mixed_cover(seed: u64) -> WorldSpec {
        let classes = vec![
            ClassSpec {
                name: "alder".into(),
                means: [30.0, 55.0, 25.0, 110.0],
                noise_std: 5.0,
                stripe_period: 4,
                stripe_amplitude: 5.0,
                vegetated: true,
            },
            ClassSpec {
                name: "bare".into(),
                means: [90.0, 80.0, 70.0, 40.0],
                noise_std: 5.0,
                stripe_period: 0,
                stripe_amplitude: 0.0,
                vegetated: false,
            },
            ClassSpec {
                name: "birch".into(),
                means: [60.0, 70.0, 35.0, 140.0],
                noise_std: 5.0,
                stripe_period: 0,
                stripe_amplitude: 0.0,
                vegetated: true,
            },
            ClassSpec {
                name: "spruce".into(),
                means: [15.0, 40.0, 45.0, 85.0],
                noise_std: 5.0,
                stripe_period: 8,
                stripe_amplitude: 5.0,
                vegetated: true,
            },
        ];
        // rows of regions: alder birch spruce / spruce alder birch / bare bare bare
        let layout = [0usize, 2, 3, 3, 0, 2, 1, 1, 1];
        let regions = layout
            .iter()
            .enumerate()
            .map(|(i, &class)| RegionSpec {
                class,
                row: (i / 3) * 256,
                col: (i % 3) * 256,
                rows: 256,
                cols: 256,
            })
            .collect();
        WorldSpec {
            seed,
            rows: 768,
            cols: 768,
            grid: GridSpec::new(45.0, -70.0, HALF_METER_DEG),
            snapshot: Timestamp::parse("2018-06-01T00:00:00Z").unwrap(),
            classes,
            regions,
        }
    }
}

impl ClassSpec {
    fn validate(&self, index: usize) -> Result<()> {
        let who = || format!("class {index} ({:?})", self.name);
        if self.name.is_empty() {
            return Err(bad(format!("class {index} has an empty name")));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(bad(format!("{}: non-finite band mean", who())));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(bad(format!("{}: noise std {}", who(), self.noise_std)));
        }
        if self.stripe_period == 1 || self.stripe_period % 2 != 0 {
            return Err(bad(format!(
                "{}: stripe period {} is not 0 or even",
                who(),
                self.stripe_period
            )));
        }
        if !self.stripe_amplitude.is_finite()
            || (self.stripe_period == 0) != (self.stripe_amplitude == 0.0)
            || self.stripe_amplitude < 0.0
        {
            return Err(bad(format!(
                "{}: stripe period {} and amplitude {} must be zero or positive together",
                who(),
                self.stripe_period,
                self.stripe_amplitude
            )));
        }
        if self.vegetated && self.means[3] <= self.means[0] {
            return Err(bad(format!("{}: vegetated needs NIR mean above red", who())));
        }
        if !self.vegetated && self.means[0] <= self.means[3] {
            return Err(bad(format!("{}: bare needs red mean above NIR", who())));
        }
        Ok(())
    }

    /// Square-wave offset at a world column; identical across bands.
    fn stripe(&self, col: usize) -> f32 {
        if self.stripe_period == 0 {
            return 0.0;
        }
        if (col / (self.stripe_period / 2)) % 2 == 0 {
            self.stripe_amplitude
        } else {
            -self.stripe_amplitude
        }
    }
}

/// Regions on a checker of square tiles, classes assigned row-major modulo
/// `class_count` so every class appears in several places.
pub fn checker_regions(
    region_rows: usize,
    region_cols: usize,
    region_size: usize,
    class_count: usize,
) -> Vec<RegionSpec> {
    let mut regions = Vec::with_capacity(region_rows * region_cols);
    for i in 0..region_rows {
        for j in 0..region_cols {
            regions.push(RegionSpec {
                class: (i * region_cols + j) % class_count,
                row: i * region_size,
                col: j * region_size,
                rows: region_size,
                cols: region_size,
            });
        }
    }
    regions
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

/// Row-major class index per pixel, with the class names attached.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub rows: usize,
    pub cols: usize,
    pub classes: Vec<String>,
    pub data: Vec<u16>,
}

#[derive(Serialize, Deserialize)]
struct TruthSidecar {
    rows: usize,
    cols: usize,
    classes: Vec<String>,
}

impl GroundTruth {
    pub fn class_at(&self, row: usize, col: usize) -> usize {
        self.data[row * self.cols + col] as usize
    }

    pub fn name_at(&self, row: usize, col: usize) -> &str {
        &self.classes[self.class_at(row, col)]
    }

    /// Majority class over the k-by-k tile anchored at (row0, col0); ties go
    /// to the lowest class index. The tile must lie inside the map.
    pub fn tile_majority(&self, row0: usize, col0: usize, k: usize) -> usize {
        assert!(row0 + k <= self.rows && col0 + k <= self.cols, "tile outside ground truth");
        let mut counts = vec![0u32; self.classes.len()];
        for r in row0..row0 + k {
            for c in col0..col0 + k {
                counts[self.data[r * self.cols + c] as usize] += 1;
            }
        }
        let mut best = 0;
        for (i, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = i;
            }
        }
        best
    }

    /// Write `truth.json` (shape and class names) plus raw little-endian u16
    /// `truth.u16` into the directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json_file(
            &dir.join("truth.json"),
            &TruthSidecar {
                rows: self.rows,
                cols: self.cols,
                classes: self.classes.clone(),
            },
        )?;
        let mut bytes = Vec::with_capacity(self.data.len() * 2);
        for v in &self.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(dir.join("truth.u16"), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: TruthSidecar = serde_json::from_slice(&std::fs::read(dir.join("truth.json"))?)?;
        let bytes = std::fs::read(dir.join("truth.u16"))?;
        let data: Vec<u16> = bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        if data.len() != sidecar.rows * sidecar.cols || bytes.len() % 2 != 0 {
            return Err(Error::BadGroundTruth(format!(
                "truth.u16 holds {} values for a {}x{} map",
                data.len(),
                sidecar.rows,
                sidecar.cols
            )));
        }
        let n = sidecar.classes.len();
        if let Some(v) = data.iter().find(|&&v| v as usize >= n) {
            return Err(Error::BadGroundTruth(format!(
                "class index {v} out of range for {n} classes"
            )));
        }
        Ok(GroundTruth {
            rows: sidecar.rows,
            cols: sidecar.cols,
            classes: sidecar.classes,
            data,
        })
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// A generated world: the four bands plus the ground-truth map.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub spec: WorldSpec,
    /// Row-major pixels per band, in `BAND_NAMES` order.
    pub bands: [Vec<f32>; 4],
    pub truth: GroundTruth,
}

/// Generate the four bands and the ground truth. Each pixel is class mean +
/// stripe + Gaussian noise; every (region, band) pair uses its own stream
/// derived from the world seed, so the output is independent of scheduling.
pub fn gen_synthetic_world(spec: &WorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let area = spec.rows * spec.cols;

    let buffers: Vec<[Vec<f32>; 4]> = spec
        .regions
        .par_iter()
        .enumerate()
        .map(|(ri, region)| {
            let class = &spec.classes[region.class];
            std::array::from_fn(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed3(spec.seed, ri as u64, b as u64));
                let noise = Normal::new(0.0f64, class.noise_std as f64).expect("validated std");
                let mut buf = Vec::with_capacity(region.rows * region.cols);
                for _ in 0..region.rows {
                    for c in 0..region.cols {
                        let v = class.means[b]
                            + class.stripe(region.col + c)
                            + noise.sample(&mut rng) as f32;
                        buf.push(v);
                    }
                }
                buf
            })
        })
        .collect();

    let mut bands: [Vec<f32>; 4] = std::array::from_fn(|_| vec![0.0; area]);
    let mut data = vec![0u16; area];
    for (region, bufs) in spec.regions.iter().zip(&buffers) {
        for r in 0..region.rows {
            let dst = (region.row + r) * spec.cols + region.col;
            let src = r * region.cols;
            for b in 0..4 {
                bands[b][dst..dst + region.cols].copy_from_slice(&bufs[b][src..src + region.cols]);
            }
            data[dst..dst + region.cols].fill(region.class as u16);
        }
    }

    Ok(SyntheticWorld {
        spec: spec.clone(),
        bands,
        truth: GroundTruth {
            rows: spec.rows,
            cols: spec.cols,
            classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
            data,
        },
    })
}

impl SyntheticWorld {
    /// Ingest header for one band, matching what `write_dir` emits.
    pub fn band_header(&self, band: usize) -> IngestHeader {
        IngestHeader {
            origin_lat: self.spec.grid.origin_lat,
            origin_lon: self.spec.grid.origin_lon,
            resolution: self.spec.grid.resolution,
            rows: self.spec.rows,
            cols: self.spec.cols,
            band_role: BAND_ROLES[band],
            layer_id: BAND_NAMES[band].to_string(),
            timestamp: self.spec.snapshot,
            nodata: "nan".to_string(),
        }
    }

    /// Ingest all four bands as layers red/green/blue/nir.
    pub fn ingest_into(&self, store: &RasterStore) -> Result<()> {
        for b in 0..4 {
            store.ingest_raster(&self.band_header(b), &self.bands[b], false)?;
        }
        Ok(())
    }

    /// Emit the on-disk artifact set: `world.json` (this spec), one
    /// header/data pair per band, and the ground-truth map.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_json_file(&dir.join("world.json"), &self.spec)?;
        for b in 0..4 {
            write_json_file(&dir.join(format!("{}.json", BAND_NAMES[b])), &self.band_header(b))?;
            crate::store::write_bsq_f32(&dir.join(format!("{}.bsq", BAND_NAMES[b])), &self.bands[b])?;
        }
        self.truth.save(dir)
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    std::fs::write(path, json)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Label manifests
// ---------------------------------------------------------------------------

/// What label sampling produced, measured against the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestReport {
    pub total: usize,
    /// Points whose jittered location landed in another class's region.
    pub mislabeled: usize,
    /// Mislabel counts keyed by the label the point carries.
    pub mislabeled_by_class: BTreeMap<String, usize>,
}

/// Sample `per_class` distinct pixels inside each class's regions, jitter the
/// locations by a Gaussian of `jitter` pixels per axis (simulating GPS error;
/// labels keep their original class), and return the manifest plus a report of
/// how many points the jitter carried across a region boundary.
///
/// Base locations depend only on (seed, per_class): the jitter draws come from
/// a separate stream, so turning jitter up moves points without resampling
/// them.
pub fn emit_label_manifest(
    world: &SyntheticWorld,
    per_class: usize,
    jitter: f64,
    seed: u64,
) -> Result<(LabelManifest, ManifestReport)> {
    if per_class == 0 {
        return Err(Error::BadManifest("per_class must be at least 1".into()));
    }
    if !jitter.is_finite() || jitter < 0.0 {
        return Err(Error::BadManifest(format!("jitter {jitter} px")));
    }
    let spec = &world.spec;
    let mut points = Vec::with_capacity(per_class * spec.classes.len());
    let mut mislabeled_by_class: BTreeMap<String, usize> =
        spec.classes.iter().map(|c| (c.name.clone(), 0)).collect();
    let mut mislabeled = 0;

    for (ci, class) in spec.classes.iter().enumerate() {
        let regions: Vec<&RegionSpec> =
            spec.regions.iter().filter(|r| r.class == ci).collect();
        let area: usize = regions.iter().map(|r| r.rows * r.cols).sum();
        if area < per_class {
            return Err(Error::BadManifest(format!(
                "class {:?}: {area} px of region is too small for {per_class} samples",
                class.name
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed3(seed, ci as u64, 0));
        let mut offsets = rand::seq::index::sample(&mut rng, area, per_class).into_vec();
        offsets.sort_unstable();

        let mut jitter_rng = ChaCha8Rng::seed_from_u64(mix_seed3(seed, ci as u64, 1));
        let jitter_dist = (jitter > 0.0).then(|| Normal::new(0.0, jitter).unwrap());

        for offset in offsets {
            // map the flat offset into (row, col) of the owning region
            let mut rest = offset;
            let region = regions
                .iter()
                .find(|r| {
                    let a = r.rows * r.cols;
                    if rest < a {
                        true
                    } else {
                        rest -= a;
                        false
                    }
                })
                .expect("offset within total area");
            let mut row = (region.row + rest / region.cols) as i64;
            let mut col = (region.col + rest % region.cols) as i64;
            if let Some(dist) = &jitter_dist {
                let dr = dist.sample(&mut jitter_rng);
                let dc = dist.sample(&mut jitter_rng);
                row = (row as f64 + dr).round() as i64;
                col = (col as f64 + dc).round() as i64;
                row = row.clamp(0, spec.rows as i64 - 1);
                col = col.clamp(0, spec.cols as i64 - 1);
            }
            if world.truth.class_at(row as usize, col as usize) != ci {
                mislabeled += 1;
                *mislabeled_by_class.get_mut(&class.name).unwrap() += 1;
            }
            let (lat, lon) = spec.grid.pixel_center(row, col);
            points.push(ManifestPoint {
                lat,
                lon,
                label: class.name.clone(),
                time: Some(spec.snapshot),
            });
        }
    }

    let manifest = LabelManifest {
        classes: spec.classes.iter().map(|c| c.name.clone()).collect(),
        points,
    };
    let report = ManifestReport {
        total: manifest.points.len(),
        mislabeled,
        mislabeled_by_class,
    };
    Ok((manifest, report))
}

// ---------------------------------------------------------------------------
// Map scoring
// ---------------------------------------------------------------------------

/// A classification map measured against the ground truth, tile by tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapScore {
    /// Fraction of decided tiles matching the majority ground-truth class.
    pub accuracy: f64,
    /// Rows = ground-truth majority class, columns = predicted class, both in
    /// world class order. Undecided tiles are excluded.
    pub confusion: Vec<Vec<u64>>,
    pub decided: usize,
    pub undecided: usize,
}

/// Compare each decided map tile to the majority ground-truth class of the
/// same pixel footprint. The map must lie inside the truth, and every map
/// class name must exist there.
pub fn score_map(map: &ClassificationMap, truth: &GroundTruth) -> Result<MapScore> {
    let to_truth: Vec<usize> = map
        .class_map
        .iter()
        .map(|name| {
            truth.classes.iter().position(|c| c == name).ok_or_else(|| {
                Error::BadGroundTruth(format!("map names class {name:?} the truth does not define"))
            })
        })
        .collect::<Result<_>>()?;
    let k = map.k;
    let (r0, c0) = map.origin;
    if r0 < 0
        || c0 < 0
        || r0 as usize + map.rows * k > truth.rows
        || c0 as usize + map.cols * k > truth.cols
    {
        return Err(Error::BadGroundTruth(
            "map footprint extends outside the ground truth".into(),
        ));
    }

    let n = truth.classes.len();
    let mut confusion = vec![vec![0u64; n]; n];
    let (mut decided, mut undecided, mut correct) = (0usize, 0usize, 0usize);
    for tr in 0..map.rows {
        for tc in 0..map.cols {
            match map.tile(tr, tc) {
                None => undecided += 1,
                Some(ci) => {
                    let pred = to_truth[ci];
                    let actual =
                        truth.tile_majority(r0 as usize + tr * k, c0 as usize + tc * k, k);
                    confusion[actual][pred] += 1;
                    decided += 1;
                    if pred == actual {
                        correct += 1;
                    }
                }
            }
        }
    }
    Ok(MapScore {
        accuracy: if decided > 0 { correct as f64 / decided as f64 } else { 0.0 },
        confusion,
        decided,
        undecided,
    })
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// Everything the benchmark needs besides the world itself.
#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    /// Manifest sampling: points per class and Gaussian location error.
    pub per_class: usize,
    pub jitter: f64,
    pub manifest_seed: u64,
    /// Patch edge in pixels, train and inference alike.
    pub window_size: usize,
    /// Models to train and evaluate, each over the same points.
    pub architectures: Vec<Architecture>,
    /// Quality filters frozen into each model.
    pub filters: FilterSpec,
    /// Random-forest search grid; None uses the service default.
    pub grid: Option<GridSearchSpec>,
    /// Per-class validation/test holdout.
    pub holdout: HoldoutSpec,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub model_seed: u64,
    /// Held-out pixel rectangle: training never touches it (windows included)
    /// and inference maps it tile by tile.
    pub eval_rect: PixelRect,
    pub tile_size: usize,
    /// Feature override for the forest, e.g. to ablate texture features.
    pub features: Option<FeatureSpec>,
}

impl BenchmarkConfig {
    pub fn new(eval_rect: PixelRect) -> Self {
        BenchmarkConfig {
            per_class: 300,
            jitter: 0.0,
            manifest_seed: 7,
            window_size: 32,
            architectures: vec![Architecture::RandomForest],
            filters: FilterSpec::default(),
            grid: None,
            holdout: HoldoutSpec {
                validation: 30,
                test: 30,
            },
            epochs: None,
            batch_size: None,
            model_seed: 11,
            eval_rect,
            tile_size: DEFAULT_TILE_SIZE,
            features: None,
        }
    }
}

/// One model's results inside a benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchReport {
    pub architecture: String,
    pub model_id: String,
    /// Training metrics on the held-out test split of the manifest points.
    pub train: TrainReport,
    /// The classified held-out rectangle.
    pub map: ClassificationMap,
    /// The map measured against the ground truth.
    pub score: MapScore,
    pub infer_secs: f64,
}

/// The full benchmark result; serialized as `report.json` in the work
/// directory, rendered for humans by [`BenchmarkReport::render_table`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub spec: WorldSpec,
    pub manifest: ManifestReport,
    /// Manifest points that remained after carving out the eval rectangle.
    pub training_points: usize,
    pub eval_rect: PixelRect,
    pub runs: Vec<ArchReport>,
    pub gen_secs: f64,
    pub ingest_secs: f64,
}

/// Generate a world, ingest it, sample a manifest, train every configured
/// architecture on the points outside the eval rectangle, classify that
/// rectangle, and score the maps against the ground truth. The work directory
/// receives the store, the registry, `manifest.json`, one PPM per model, and
/// `report.json`.
pub fn run_benchmark(
    spec: &WorldSpec,
    config: &BenchmarkConfig,
    work_dir: &Path,
) -> Result<BenchmarkReport> {
    if config.architectures.is_empty() {
        return Err(Error::InvalidQuery("benchmark without architectures".into()));
    }
    let eval = config.eval_rect;
    if eval.row0 < 0
        || eval.col0 < 0
        || eval.row_end() > spec.rows as i64
        || eval.col_end() > spec.cols as i64
    {
        return Err(bad(format!(
            "eval rect ({}, {}) {}x{} leaves the {}x{} world",
            eval.row0, eval.col0, eval.rows, eval.cols, spec.rows, spec.cols
        )));
    }

    let t = Instant::now();
    let world = gen_synthetic_world(spec)?;
    let gen_secs = t.elapsed().as_secs_f64();

    std::fs::create_dir_all(work_dir)?;
    let t = Instant::now();
    let store = RasterStore::create(work_dir.join("store"), spec.grid, config.tile_size)?;
    world.ingest_into(&store)?;
    let ingest_secs = t.elapsed().as_secs_f64();

    let (manifest, manifest_report) =
        emit_label_manifest(&world, config.per_class, config.jitter, config.manifest_seed)?;
    manifest.save(&work_dir.join("manifest.json"))?;

    // keep only points whose window cannot overlap the held-out rectangle
    let margin = config.window_size as i64;
    let train_points: Vec<LabeledPoint> = manifest
        .to_points()
        .into_iter()
        .filter(|p| {
            let (r, c) = spec.grid.geo_to_pixel(p.lat, p.lon);
            r < eval.row0 - margin
                || r >= eval.row_end() + margin
                || c < eval.col0 - margin
                || c >= eval.col_end() + margin
        })
        .collect();
    if train_points.is_empty() {
        return Err(Error::AssemblyEmpty);
    }

    let registry = ModelRegistry::open(work_dir.join("registry"))?;
    let layers: Vec<String> = BAND_NAMES.iter().map(|s| s.to_string()).collect();
    let temporal = Temporal {
        snapshot: spec.snapshot,
        search_window_secs: None,
    };

    let mut runs = Vec::new();
    for arch in &config.architectures {
        let model_id = format!("bench_{}", arch.canonical_name());
        let train_spec = QuerySpec {
            layers: layers.clone(),
            spatial: Spatial::Points(train_points.iter().map(|p| (p.lat, p.lon)).collect()),
            temporal,
            model: Some(ModelBlock {
                mode: Mode::Train,
                id: model_id.clone(),
                architecture: *arch,
                labels: train_points
                    .iter()
                    .map(|p| p.label.clone().unwrap())
                    .collect(),
                window_size: config.window_size,
                filters: config.filters.clone(),
                params: ModelParams {
                    features: config.features.clone(),
                    grid: config.grid.clone(),
                    holdout: Some(config.holdout),
                    ndvi_bands: None,
                    epochs: config.epochs,
                    batch_size: config.batch_size,
                    lr_step_epochs: None,
                    seed: Some(config.model_seed),
                },
            }),
        };
        let options = TrainOptions {
            overwrite: true,
            ..TrainOptions::default()
        };
        let (_, train_report) =
            run_training_with_points(&store, &registry, &train_spec, &train_points, &options)?;

        let infer_spec = QuerySpec {
            layers: layers.clone(),
            spatial: Spatial::Square {
                corner1: spec.grid.pixel_center(eval.row0, eval.col0),
                corner2: spec.grid.pixel_center(eval.row_end() - 1, eval.col_end() - 1),
            },
            temporal,
            model: Some(ModelBlock {
                mode: Mode::Test,
                id: model_id.clone(),
                architecture: *arch,
                labels: Vec::new(),
                window_size: config.window_size,
                filters: FilterSpec::default(),
                params: ModelParams::default(),
            }),
        };
        let t = Instant::now();
        let outcome = run_inference_query(&store, &registry, &infer_spec, &InferOptions::default())?;
        let infer_secs = t.elapsed().as_secs_f64();
        let map = match outcome {
            InferenceOutcome::Map(map) => map,
            InferenceOutcome::Points { .. } => unreachable!("square query yields a map"),
        };
        let score = score_map(&map, &world.truth)?;
        std::fs::write(work_dir.join(format!("{model_id}.ppm")), map.to_ppm())?;
        runs.push(ArchReport {
            architecture: arch.canonical_name().to_string(),
            model_id,
            train: train_report,
            map,
            score,
            infer_secs,
        });
    }

    let report = BenchmarkReport {
        spec: spec.clone(),
        manifest: manifest_report,
        training_points: train_points.len(),
        eval_rect: eval,
        runs,
        gen_secs,
        ingest_secs,
    };
    write_json_file(&work_dir.join("report.json"), &report)?;
    Ok(report)
}

impl BenchmarkReport {
    /// Human-readable summary: per-model accuracies, timings, and the map
    /// confusion matrix against the ground truth.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "world: {} classes, {}x{} px, seed {}\n",
            self.spec.classes.len(),
            self.spec.rows,
            self.spec.cols,
            self.spec.seed
        ));
        out.push_str(&format!(
            "manifest: {} points, {} mislabeled; {} usable for training outside the {}x{} eval rect\n",
            self.manifest.total,
            self.manifest.mislabeled,
            self.training_points,
            self.eval_rect.rows,
            self.eval_rect.cols
        ));
        let names: Vec<String> = self.spec.classes.iter().map(|c| c.name.clone()).collect();
        for run in &self.runs {
            let (tr, va, te) = run.train.split_sizes;
            out.push_str(&format!("\nmodel {} ({})\n", run.model_id, run.architecture));
            out.push_str(&format!(
                "  test accuracy: {:.3}  (split {tr}/{va}/{te})\n",
                run.train.accuracy
            ));
            out.push_str(&format!(
                "  map accuracy:  {:.3}  ({} decided, {} undecided of {} tiles)\n",
                run.score.accuracy,
                run.score.decided,
                run.score.undecided,
                run.map.rows * run.map.cols
            ));
            out.push_str(&format!(
                "  train {:.1} s, infer {:.1} s\n",
                run.train.wall_time_secs, run.infer_secs
            ));
            out.push_str("  map confusion (rows = truth, cols = predicted):\n");
            out.push_str(&indent(&render_confusion(&names, &run.score.confusion), 4));
        }
        out
    }
}

/// Fixed-width confusion matrix with class names on both axes.
pub fn render_confusion(classes: &[String], confusion: &[Vec<u64>]) -> String {
    let label_w = classes.iter().map(String::len).max().unwrap_or(0);
    let cell_w = classes
        .iter()
        .map(String::len)
        .chain(confusion.iter().flatten().map(|v| v.to_string().len()))
        .max()
        .unwrap_or(1);
    let mut out = String::new();
    out.push_str(&" ".repeat(label_w));
    for name in classes {
        out.push_str(&format!("  {name:>cell_w$}"));
    }
    out.push('\n');
    for (name, row) in classes.iter().zip(confusion) {
        out.push_str(&format!("{name:<label_w$}"));
        for v in row {
            out.push_str(&format!("  {v:>cell_w$}"));
        }
        out.push('\n');
    }
    out
}

fn indent(text: &str, by: usize) -> String {
    let pad = " ".repeat(by);
    text.lines()
        .map(|l| format!("{pad}{l}\n"))
        .collect()
}
