//! Full-stack smoke drive: build a store, ingest four bands, train a random
//! forest from labeled points, then classify points and a bbox with it.
//!
//!     cargo run -p autogeo-core --example end_to_end
//!
//! Exits nonzero if any stage misbehaves, so it doubles as a quick check that
//! the whole pipeline holds together outside the unit-test harness.

use autogeo_core::assembly::LabeledPoint;
use autogeo_core::error::Result;
use autogeo_core::grid::GridSpec;
use autogeo_core::pipeline::{
    evaluate_points, run_inference_query, run_training_query, InferOptions, InferenceOutcome,
    TrainOptions,
};
use autogeo_core::query::{
    Architecture, FilterBound, FilterSpec, GridSearchSpec, HoldoutSpec, Mode, ModelBlock,
    ModelParams, QuerySpec, Spatial, Statistic, Temporal,
};
use autogeo_core::registry::ModelRegistry;
use autogeo_core::store::{BandRole, IngestHeader, RasterStore};
use autogeo_core::features::Selector;
use autogeo_core::timestamp::Timestamp;

const SNAPSHOT: &str = "2018-01-29T12:00:00Z";

/// Two vegetated quadrants on top (NDVI > 0), bare ground below (NDVI < 0).
fn band_value(band: usize, r: usize, c: usize) -> f32 {
    let base: [f32; 4] = if r >= 64 {
        [50.0, 30.0, 30.0, 10.0]
    } else if c < 64 {
        [10.0, 20.0, 20.0, 50.0]
    } else {
        [30.0, 40.0, 5.0, 60.0]
    };
    base[band] + ((r * 31 + c * 17) % 7) as f32 * 0.1
}

fn lattice(grid: &GridSpec, rows: (usize, usize), cols: (usize, usize)) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for r in (rows.0..rows.1).step_by(8) {
        for c in (cols.0..cols.1).step_by(8) {
            out.push(grid.pixel_center(r as i64, c as i64));
        }
    }
    out
}

fn main() -> Result<()> {
    let dir = tempfile::TempDir::new()?;
    let grid = GridSpec::new(40.0, -75.0, 0.001);
    let snapshot = Timestamp::parse(SNAPSHOT)?;

    // ingest a 128x128 four-band world
    let store = RasterStore::create(dir.path().join("store"), grid, 64)?;
    let layers = ["red", "green", "blue", "nir"];
    let roles = [BandRole::Red, BandRole::Green, BandRole::Blue, BandRole::Nir];
    for (b, (layer, role)) in layers.iter().zip(roles).enumerate() {
        let header = IngestHeader {
            origin_lat: grid.origin_lat,
            origin_lon: grid.origin_lon,
            resolution: grid.resolution,
            rows: 128,
            cols: 128,
            band_role: role,
            layer_id: layer.to_string(),
            timestamp: snapshot,
            nodata: "nan".to_string(),
        };
        let pixels: Vec<f32> = (0..128 * 128)
            .map(|i| band_value(b, i / 128, i % 128))
            .collect();
        store.ingest_raster(&header, &pixels, false)?;
    }
    println!("ingested {} layers", layers.len());

    // train on 12 points per class, guarded by an NDVI floor
    let alder = lattice(&grid, (12, 53), (12, 53));
    let birch = lattice(&grid, (12, 53), (76, 117));
    let mut coords = alder.clone();
    coords.extend(birch.iter().copied());
    let mut labels = vec!["alder".to_string(); alder.len()];
    labels.extend(vec!["birch".to_string(); birch.len()]);

    let layer_ids: Vec<String> = layers.iter().map(|s| s.to_string()).collect();
    let train = QuerySpec {
        layers: layer_ids.clone(),
        spatial: Spatial::Points(coords),
        temporal: Temporal {
            snapshot,
            search_window_secs: None,
        },
        model: Some(ModelBlock {
            mode: Mode::Train,
            id: "quadrant_rf".into(),
            architecture: Architecture::RandomForest,
            labels,
            window_size: 9,
            filters: FilterSpec {
                bounds: vec![FilterBound {
                    selector: Selector::Ndvi,
                    statistic: Statistic::Mean,
                    min: Some(0.0),
                    max: None,
                }],
            },
            params: ModelParams {
                grid: Some(GridSearchSpec {
                    n_estimators: vec![25],
                    max_depth: vec![6],
                }),
                holdout: Some(HoldoutSpec {
                    validation: 6,
                    test: 6,
                }),
                seed: Some(42),
                ..Default::default()
            },
        }),
    };

    let registry = ModelRegistry::open(dir.path().join("models"))?;
    let (record, report) = run_training_query(&store, &registry, &train, &TrainOptions::default())?;
    println!(
        "trained {} ({}): accuracy {:.3}, split {:?}",
        record.id,
        record.architecture(),
        report.accuracy,
        report.split_sizes
    );
    assert_eq!(report.accuracy, 1.0, "separable classes must score 1.0");

    // classify a bbox spanning both vegetated quadrants and some bare ground
    let infer = QuerySpec {
        layers: layer_ids,
        spatial: Spatial::Square {
            corner1: grid.pixel_center(0, 0),
            corner2: grid.pixel_center(80, 127),
        },
        temporal: Temporal {
            snapshot,
            search_window_secs: None,
        },
        model: Some(ModelBlock {
            mode: Mode::Test,
            id: "quadrant_rf".into(),
            architecture: Architecture::RandomForest,
            labels: Vec::new(),
            window_size: 9,
            filters: FilterSpec::default(),
            params: ModelParams::default(),
        }),
    };
    let outcome = run_inference_query(&store, &registry, &infer, &InferOptions::default())?;
    let InferenceOutcome::Map(map) = outcome else {
        panic!("square query must yield a map");
    };
    println!(
        "classified {}x{} tiles (k={}): {:?}",
        map.rows,
        map.cols,
        map.k,
        map.counts()
    );
    assert!(map.counts().contains_key("none"), "bare tiles reject");
    let ppm = map.to_ppm();
    println!("rendered {} byte ppm", ppm.len());

    // score held-back labeled points through the registered model
    let held_back: Vec<LabeledPoint> = lattice(&grid, (20, 45), (20, 45))
        .into_iter()
        .map(|(lat, lon)| LabeledPoint::labeled(lat, lon, "alder"))
        .collect();
    let eval = evaluate_points(&store, &registry, "quadrant_rf", &held_back, snapshot, 86_400)?;
    println!(
        "evaluated {} held-back points: accuracy {:.3}",
        eval.samples_retained, eval.accuracy
    );
    assert_eq!(eval.accuracy, 1.0);

    println!("ok");
    Ok(())
}
