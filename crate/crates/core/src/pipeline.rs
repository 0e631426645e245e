//! End-to-end query execution: train-mode queries into registered models,
//! test-mode queries into per-point classifications or assembled tile maps.
//!
//! Training runs assemble → filter → stratified split → fit → evaluate →
//! persist, and the returned report carries the rejected-sample audit next to
//! the accuracy numbers. Inference loads everything it needs from the model
//! record, so results are identical with the training data gone.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_points, LabeledPoint, Patch, PatchSet, PatchStatus};
use crate::error::{Error, Result};
use crate::features::{build_feature_vector, FeatureSpec};
use crate::filters::{filter_reason, write_rejection_report};
use crate::grid::{GridSpec, PixelRect};
use crate::models::cnn::{cnn_predict, cnn_train, FlexCnnConfig};
use crate::models::rf::{
    default_grid, rf_grid_search, rf_predict_with_votes, rf_train, RandomForestConfig,
};
use crate::models::{evaluate, ModelBlob, TrainReport, TrainedModel};
use crate::query::{Architecture, FilterSpec, Mode, ModelBlock, QuerySpec, Spatial};
use crate::registry::{ModelRecord, ModelRegistry};
use crate::split::{stratified_split, take_rows, SplitSpec};
use crate::store::{BandRole, RasterStore};
use crate::timestamp::Timestamp;

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Replace an existing model id (the prior version is archived).
    pub overwrite: bool,
    /// Takes precedence over the seed in the query document.
    pub seed_override: Option<u64>,
    /// Where to write the per-sample rejection audit, if anywhere.
    pub rejection_report: Option<PathBuf>,
}

/// Labeled points of a train query: coordinates zipped with labels.
pub fn training_points_from_spec(spec: &QuerySpec) -> Result<Vec<LabeledPoint>> {
    let model = require_model(spec, Mode::Train)?;
    let coords = spec.points().ok_or_else(|| {
        Error::InvalidQuery("training requires point coordinates, not a square".into())
    })?;
    if model.labels.len() != coords.len() {
        return Err(Error::InvalidQuery(format!(
            "{} labels for {} coordinates",
            model.labels.len(),
            coords.len()
        )));
    }
    Ok(coords
        .iter()
        .zip(&model.labels)
        .map(|(&(lat, lon), label)| LabeledPoint::labeled(lat, lon, label.clone()))
        .collect())
}

/// Execute a train-mode query end to end and persist the resulting model.
pub fn run_training_query(
    store: &RasterStore,
    registry: &ModelRegistry,
    spec: &QuerySpec,
    options: &TrainOptions,
) -> Result<(ModelRecord, TrainReport)> {
    let points = training_points_from_spec(spec)?;
    run_training_with_points(store, registry, spec, &points, options)
}

/// Training core: like [`run_training_query`] but with the labeled points
/// supplied directly, so callers can attach per-point acquisition times
/// (which override the query snapshot during assembly).
pub fn run_training_with_points(
    store: &RasterStore,
    registry: &ModelRegistry,
    spec: &QuerySpec,
    points: &[LabeledPoint],
    options: &TrainOptions,
) -> Result<(ModelRecord, TrainReport)> {
    let start = Instant::now();
    let model_block = require_model(spec, Mode::Train)?;
    if points.iter().any(|p| p.label.is_none()) {
        return Err(Error::InvalidQuery(
            "every training point needs a label".into(),
        ));
    }

    let set = assemble_points(
        store,
        &spec.layers,
        points,
        model_block.window_size,
        spec.temporal.snapshot,
        spec.temporal.window_or_default(),
    );
    if set.ok_count() == 0 {
        return Err(Error::AssemblyEmpty);
    }
    let samples_assembled = set.patches.len();

    let ndvi_bands = resolve_ndvi_bands(store, &spec.layers, model_block.params.ndvi_bands)?;
    let (retained, rejected) =
        crate::filters::apply_filters(set, &model_block.filters, ndvi_bands)?;
    if retained.patches.is_empty() {
        return Err(Error::AssemblyEmpty);
    }
    if let Some(path) = &options.rejection_report {
        write_rejection_report(&rejected, path)?;
    }
    let rejected_by_reason = count_reasons(&rejected);

    // class indices are alphabetical over the labels that survived filtering
    let (class_map, y) = index_labels(&retained)?;
    let n_classes = class_map.len();

    let seed = options
        .seed_override
        .or(model_block.params.seed)
        .unwrap_or(0);
    let split_spec = SplitSpec::from_holdout(model_block.params.holdout, seed);
    let split = stratified_split(&y, &class_map, &split_spec)?;

    let mut report;
    let model;
    let mut feature_spec = None;
    match model_block.architecture {
        Architecture::RandomForest => {
            let fspec = model_block.params.features.clone().unwrap_or_else(|| {
                FeatureSpec::default_for_channels(spec.layers.len(), ndvi_bands.is_some())
            });
            let x = feature_matrix(&retained, &fspec, ndvi_bands)?;
            let y_train = take_rows(&y, &split.train);
            let y_val = take_rows(&y, &split.validation);
            let y_test = take_rows(&y, &split.test);
            let base = RandomForestConfig {
                seed,
                ..Default::default()
            };
            let grid = model_block.params.grid.clone().unwrap_or_else(default_grid);
            let (best, scores) = rf_grid_search(
                &take_rows(&x, &split.train),
                &y_train,
                &take_rows(&x, &split.validation),
                &y_val,
                n_classes,
                &base,
                &grid,
            )?;
            let forest = rf_train(&take_rows(&x, &split.train), &y_train, n_classes, &best)?;
            let (preds, _) = rf_predict_with_votes(&forest, &take_rows(&x, &split.test))?;
            report = evaluate(&preds, &y_test, n_classes)?;
            report.grid_scores = scores;
            feature_spec = Some(fspec);
            model = TrainedModel::Forest(forest);
        }
        Architecture::FlexCnn { preset } => {
            let mut config = FlexCnnConfig::desk(spec.layers.len(), n_classes, preset);
            config.seed = seed;
            if let Some(e) = model_block.params.epochs {
                config.epochs = e;
            }
            if let Some(b) = model_block.params.batch_size {
                config.batch_size = b;
            }
            if let Some(s) = model_block.params.lr_step_epochs {
                config.lr_step_epochs = s;
            }
            let x: Vec<Vec<f32>> = retained.patches.iter().map(|p| p.data.clone()).collect();
            let (net, loss_curve) = cnn_train(
                &take_rows(&x, &split.train),
                &take_rows(&y, &split.train),
                &config,
            )?;
            let (preds, _) = cnn_predict(&net, &take_rows(&x, &split.test))?;
            report = evaluate(&preds, &take_rows(&y, &split.test), n_classes)?;
            report.loss_curve = loss_curve;
            model = TrainedModel::Cnn(net);
        }
    }

    report.samples_assembled = samples_assembled;
    report.samples_retained = retained.patches.len();
    report.rejected_by_reason = rejected_by_reason;
    report.split_sizes = split.counts();
    report.wall_time_secs = start.elapsed().as_secs_f64();

    let blob = ModelBlob {
        class_map,
        feature_spec,
        filter_spec: model_block.filters.clone(),
        ndvi_bands,
        layer_ids: spec.layers.clone(),
        window_size: model_block.window_size,
        model,
    };
    let record = ModelRecord {
        id: model_block.id.clone(),
        created_at: chrono::Utc::now().to_rfc3339(),
        report: report.clone(),
        blob,
    };
    registry.put(&record, options.overwrite)?;
    Ok((record, report))
}

/// Map NDVI's red/nir channels to layer indices: an explicit override wins,
/// otherwise the first layers whose registered band roles are red and nir.
pub fn resolve_ndvi_bands(
    store: &RasterStore,
    layers: &[String],
    explicit: Option<(usize, usize)>,
) -> Result<Option<(usize, usize)>> {
    if let Some((red, nir)) = explicit {
        let c = layers.len();
        if red >= c || nir >= c {
            return Err(Error::BandOutOfRange(format!(
                "ndvi bands ({red}, {nir}) of {c} channels"
            )));
        }
        return Ok(Some((red, nir)));
    }
    let mut red = None;
    let mut nir = None;
    for (i, layer) in layers.iter().enumerate() {
        match store.layer_info(layer)?.band_role {
            BandRole::Red => red = red.or(Some(i)),
            BandRole::Nir => nir = nir.or(Some(i)),
            _ => {}
        }
    }
    Ok(red.zip(nir))
}

fn require_model(spec: &QuerySpec, mode: Mode) -> Result<&ModelBlock> {
    let model = spec
        .model
        .as_ref()
        .ok_or_else(|| Error::InvalidQuery("query has no model block".into()))?;
    if model.mode != mode {
        return Err(Error::InvalidQuery(format!(
            "query mode is {:?}, expected {:?}",
            model.mode, mode
        )));
    }
    Ok(model)
}

fn count_reasons(rejected: &PatchSet) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for patch in &rejected.patches {
        let reason = patch.status.reason().unwrap_or("unknown").to_string();
        *counts.entry(reason).or_insert(0) += 1;
    }
    counts
}

/// Alphabetical class map over the retained labels, plus per-patch indices.
fn index_labels(retained: &PatchSet) -> Result<(Vec<String>, Vec<usize>)> {
    let mut class_map: Vec<String> = retained
        .patches
        .iter()
        .map(|p| {
            p.point
                .label
                .clone()
                .ok_or_else(|| Error::InvalidQuery("training sample without a label".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    class_map.sort();
    class_map.dedup();
    let y = retained
        .patches
        .iter()
        .map(|p| {
            let label = p.point.label.as_deref().unwrap();
            class_map.binary_search_by(|c| c.as_str().cmp(label)).unwrap()
        })
        .collect();
    Ok((class_map, y))
}

fn feature_matrix(
    set: &PatchSet,
    spec: &FeatureSpec,
    ndvi_bands: Option<(usize, usize)>,
) -> Result<Vec<Vec<f64>>> {
    set.patches
        .par_iter()
        .map(|p| build_feature_vector(p, spec, ndvi_bands))
        .collect()
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct InferOptions {
    /// Use the query document's filter block instead of the one frozen in the
    /// model record (experimentation escape hatch; off by default for
    /// train/test consistency).
    pub use_query_filters: bool,
}

/// Outcome of one classified point or tile request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointClassification {
    pub lat: f64,
    pub lon: f64,
    /// Index into the model's class map; None when rejected.
    pub class_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_name: Option<String>,
    /// Why the sample was rejected, when it was.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Per-class scores (vote fractions or softmax probabilities).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

/// Tile-gridded classification result. `tiles` is row-major, `None` exactly
/// where the quality filters rejected a tile or coverage failed. Tile (0,0)'s
/// north-west pixel is `origin`; partial tiles past `rows`·`cols` were
/// discarded, so effective coverage is `rows`·k by `cols`·k pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMap {
    pub rows: usize,
    pub cols: usize,
    /// Tile side in pixels.
    pub k: usize,
    /// Pixel (row, col) of the map's north-west corner.
    pub origin: (i64, i64),
    pub grid: GridSpec,
    pub tiles: Vec<Option<usize>>,
    pub class_map: Vec<String>,
    pub model_id: String,
    pub snapshot: Timestamp,
}

/// Render colors: class i maps to `PALETTE[i % 10]`, rejected tiles to black.
pub const PALETTE: [[u8; 3]; 10] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [170, 110, 40],
];

impl ClassificationMap {
    pub fn tile(&self, row: usize, col: usize) -> Option<usize> {
        self.tiles[row * self.cols + col]
    }

    pub fn class_name(&self, index: usize) -> &str {
        &self.class_map[index]
    }

    /// Tiles per class name, with rejected tiles under "none".
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.tiles {
            let key = match t {
                Some(i) => self.class_map[*i].clone(),
                None => "none".to_string(),
            };
            *counts.entry(key).or_insert(0) += 1;
        }
        counts
    }

    /// Binary P6 pixmap, one pixel per tile.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.cols, self.rows).into_bytes();
        for t in &self.tiles {
            match t {
                Some(i) => out.extend_from_slice(&PALETTE[i % PALETTE.len()]),
                None => out.extend_from_slice(&[0, 0, 0]),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InferenceOutcome {
    Points { results: Vec<PointClassification> },
    Map(ClassificationMap),
}

/// Execute a test-mode query: classify labeled-point candidates one by one,
/// or tile a square bbox and classify every full tile inside it.
pub fn run_inference_query(
    store: &RasterStore,
    registry: &ModelRegistry,
    spec: &QuerySpec,
    options: &InferOptions,
) -> Result<InferenceOutcome> {
    let model_block = require_model(spec, Mode::Test)?;
    let record = registry.get(&model_block.id)?;
    check_query_against_record(spec, model_block, &record)?;

    let filters = if options.use_query_filters {
        model_block.filters.clone()
    } else {
        record.blob.filter_spec.clone()
    };

    match &spec.spatial {
        Spatial::Points(coords) => {
            let points: Vec<LabeledPoint> = coords
                .iter()
                .map(|&(lat, lon)| LabeledPoint::new(lat, lon))
                .collect();
            let set = assemble_points(
                store,
                &record.blob.layer_ids,
                &points,
                record.blob.window_size,
                spec.temporal.snapshot,
                spec.temporal.window_or_default(),
            );
            let results = classify_patches(&set.patches, &record, &filters)?;
            Ok(InferenceOutcome::Points { results })
        }
        Spatial::Square { corner1, corner2 } => {
            let map = classify_square(
                store,
                &record,
                &filters,
                *corner1,
                *corner2,
                spec.temporal.snapshot,
                spec.temporal.window_or_default(),
            )?;
            Ok(InferenceOutcome::Map(map))
        }
    }
}

/// A test query must agree with the record it targets: same architecture
/// family, same layer stack, same window size.
fn check_query_against_record(
    spec: &QuerySpec,
    model_block: &ModelBlock,
    record: &ModelRecord,
) -> Result<()> {
    if model_block.architecture.canonical_name() != record.architecture() {
        return Err(Error::InvalidQuery(format!(
            "query asks for {} but model {} is {}",
            model_block.architecture.canonical_name(),
            record.id,
            record.architecture()
        )));
    }
    if model_block.window_size != record.blob.window_size {
        return Err(Error::InvalidQuery(format!(
            "query window_size {} but model {} was trained with {}",
            model_block.window_size, record.id, record.blob.window_size
        )));
    }
    if spec.layers != record.blob.layer_ids {
        return Err(Error::InvalidQuery(format!(
            "query layers {:?} but model {} was trained on {:?}",
            spec.layers, record.id, record.blob.layer_ids
        )));
    }
    Ok(())
}

/// Filter and classify assembled patches, preserving order. Rejected patches
/// become `None` classifications carrying the reason.
fn classify_patches(
    patches: &[Patch],
    record: &ModelRecord,
    filters: &FilterSpec,
) -> Result<Vec<PointClassification>> {
    let ndvi_bands = record.blob.ndvi_bands;
    let mut results: Vec<PointClassification> = Vec::with_capacity(patches.len());
    let mut kept: Vec<usize> = Vec::new();
    for (i, patch) in patches.iter().enumerate() {
        let mut result = PointClassification {
            lat: patch.point.lat,
            lon: patch.point.lon,
            class_index: None,
            class_name: None,
            reason: None,
            scores: None,
        };
        if let Some(reason) = patch.status.reason() {
            result.reason = Some(reason.to_string());
        } else if let Some(reason) = filter_reason(patch, filters, ndvi_bands)? {
            result.reason = Some(reason);
        } else {
            kept.push(i);
        }
        results.push(result);
    }
    if kept.is_empty() {
        return Ok(results);
    }

    let kept_patches: Vec<&Patch> = kept.iter().map(|&i| &patches[i]).collect();
    let (preds, scores) = match &record.blob.model {
        TrainedModel::Forest(forest) => {
            let fspec = record.blob.feature_spec.as_ref().ok_or_else(|| {
                Error::RegistryCorrupt(format!(
                    "{}: random forest record lacks a feature spec",
                    record.id
                ))
            })?;
            let x = kept_patches
                .par_iter()
                .map(|p| build_feature_vector(p, fspec, ndvi_bands))
                .collect::<Result<Vec<_>>>()?;
            rf_predict_with_votes(forest, &x)?
        }
        TrainedModel::Cnn(net) => {
            let x: Vec<Vec<f32>> = kept_patches.iter().map(|p| p.data.clone()).collect();
            cnn_predict(net, &x)?
        }
    };
    for ((&i, pred), score) in kept.iter().zip(preds).zip(scores) {
        results[i].class_index = Some(pred);
        results[i].class_name = Some(record.blob.class_map[pred].clone());
        results[i].scores = Some(score);
    }
    Ok(results)
}

/// Snap a two-corner bbox to the pixel grid (pixels containing both corners
/// included), tile it row-major with k×k tiles anchored at the north-west
/// corner, discard partial tiles at the south and east edges, and classify
/// every remaining tile.
fn classify_square(
    store: &RasterStore,
    record: &ModelRecord,
    filters: &FilterSpec,
    corner1: (f64, f64),
    corner2: (f64, f64),
    snapshot: Timestamp,
    window_secs: i64,
) -> Result<ClassificationMap> {
    let k = record.blob.window_size;
    let layers = &record.blob.layer_ids;
    let grid = store.grid();

    let (r1, c1) = grid.geo_to_pixel(corner1.0, corner1.1);
    let (r2, c2) = grid.geo_to_pixel(corner2.0, corner2.1);
    let row0 = r1.min(r2);
    let col0 = c1.min(c2);
    let height = (r1.max(r2) - row0 + 1) as usize;
    let width = (c1.max(c2) - col0 + 1) as usize;
    let rows = height / k;
    let cols = width / k;
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidQuery(format!(
            "bbox spans {height}x{width} pixels, smaller than one {k}x{k} tile"
        )));
    }

    // resolve each layer's snapshot once; every tile reads the same instants
    let resolved: Vec<Timestamp> = layers
        .iter()
        .map(|l| store.resolve_timestamp(l, snapshot, window_secs))
        .collect::<Result<_>>()?;

    // the snapped bbox must touch every layer's coverage
    let bbox = PixelRect::new(row0, col0, (rows * k) as u32, (cols * k) as u32);
    for (layer, &ts) in layers.iter().zip(&resolved) {
        let info = store.layer_info(layer)?;
        let coverage = info
            .snapshots
            .iter()
            .find(|s| s.timestamp == ts)
            .map(|s| s.coverage)
            .ok_or_else(|| Error::UnknownLayer(layer.clone()))?;
        if bbox.intersect(&coverage).is_none() {
            return Err(Error::WindowOutOfCoverage {
                layer: layer.clone(),
            });
        }
    }

    let half = (k / 2) as i64;
    let patches: Vec<Patch> = (0..rows * cols)
        .into_par_iter()
        .map(|idx| {
            let (tr, tc) = (idx / cols, idx % cols);
            let center = (
                row0 + (tr * k) as i64 + half,
                col0 + (tc * k) as i64 + half,
            );
            assemble_tile(store, layers, &resolved, center, k, &grid)
        })
        .collect();

    let results = classify_patches(&patches, record, filters)?;
    Ok(ClassificationMap {
        rows,
        cols,
        k,
        origin: (row0, col0),
        grid,
        tiles: results.into_iter().map(|r| r.class_index).collect(),
        class_map: record.blob.class_map.clone(),
        model_id: record.id.clone(),
        snapshot,
    })
}

/// One tile's patch, read pixel-addressed with pre-resolved timestamps.
fn assemble_tile(
    store: &RasterStore,
    layers: &[String],
    resolved: &[Timestamp],
    center: (i64, i64),
    k: usize,
    grid: &GridSpec,
) -> Patch {
    let c = layers.len();
    let n = k * k;
    let mut data = vec![f32::NAN; c * n];
    let mut valid = vec![true; n];
    let mut status = PatchStatus::Ok;
    for (i, (layer, &ts)) in layers.iter().zip(resolved).enumerate() {
        match store.read_window(layer, ts, center, k) {
            Ok(window) => {
                data[i * n..(i + 1) * n].copy_from_slice(&window.values);
                for (v, lv) in valid.iter_mut().zip(&window.valid) {
                    *v &= *lv;
                }
                if status.is_ok() && !window.valid.iter().all(|&b| b) {
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
    let (lat, lon) = grid.pixel_center(center.0, center.1);
    Patch {
        k,
        channels: c,
        data,
        valid,
        point: LabeledPoint::new(lat, lon),
        resolved: resolved.iter().map(|&t| Some(t)).collect(),
        status,
    }
}

// ---------------------------------------------------------------------------
// Evaluation against labeled points
// ---------------------------------------------------------------------------

/// Classify labeled points with a registered model and score the results.
/// Points rejected by coverage or filters are excluded from the accuracy but
/// counted in the report's audit fields.
pub fn evaluate_points(
    store: &RasterStore,
    registry: &ModelRegistry,
    model_id: &str,
    points: &[LabeledPoint],
    snapshot: Timestamp,
    window_secs: i64,
) -> Result<TrainReport> {
    let record = registry.get(model_id)?;
    if points.iter().any(|p| p.label.is_none()) {
        return Err(Error::InvalidQuery(
            "every evaluation point needs a label".into(),
        ));
    }
    let set = assemble_points(
        store,
        &record.blob.layer_ids,
        points,
        record.blob.window_size,
        snapshot,
        window_secs,
    );
    let results = classify_patches(&set.patches, &record, &record.blob.filter_spec)?;

    let mut preds = Vec::new();
    let mut truth = Vec::new();
    let mut rejected_by_reason = BTreeMap::new();
    for (patch, result) in set.patches.iter().zip(&results) {
        match result.class_index {
            Some(pred) => {
                let label = patch.point.label.as_deref().unwrap();
                let idx = record
                    .blob
                    .class_map
                    .iter()
                    .position(|c| c == label)
                    .ok_or_else(|| {
                        Error::InvalidQuery(format!(
                            "label {label:?} is not in the model's class map"
                        ))
                    })?;
                preds.push(pred);
                truth.push(idx);
            }
            None => {
                let reason = result.reason.clone().unwrap_or_else(|| "unknown".into());
                *rejected_by_reason.entry(reason).or_insert(0) += 1;
            }
        }
    }
    if preds.is_empty() {
        return Err(Error::AssemblyEmpty);
    }
    let mut report = evaluate(&preds, &truth, record.blob.class_map.len())?;
    report.samples_assembled = points.len();
    report.samples_retained = preds.len();
    report.rejected_by_reason = rejected_by_reason;
    Ok(report)
}
