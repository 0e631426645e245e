use super::*;
use crate::grid::GridSpec;
use crate::query::{Architecture, FilterSpec, Mode, ModelBlock, ModelParams, Temporal};
use crate::store::{BandRole, IngestHeader, RasterStore};
use crate::timestamp::SECONDS_PER_DAY;
use proptest::prelude::*;
use std::sync::OnceLock;
use tempfile::TempDir;

const T0: &str = "2018-01-29T12:00:00Z";

fn grid() -> GridSpec {
    GridSpec::new(40.0, -75.0, 0.001)
}

fn ingest(store: &RasterStore, layer: &str, role: BandRole, ts: &str, rows: usize, cols: usize, f: impl Fn(usize, usize) -> f32) {
    let header = IngestHeader {
        origin_lat: store.grid().origin_lat,
        origin_lon: store.grid().origin_lon,
        resolution: store.grid().resolution,
        rows,
        cols,
        band_role: role,
        layer_id: layer.to_string(),
        timestamp: Timestamp::parse(ts).unwrap(),
        nodata: "nan".to_string(),
    };
    let pixels: Vec<f32> = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
    store.ingest_raster(&header, &pixels, false).unwrap();
}

/// 128x128 coverage on four layers, distinguishable per channel and pixel.
fn four_band_store() -> &'static (TempDir, RasterStore) {
    static STORE: OnceLock<(TempDir, RasterStore)> = OnceLock::new();
    STORE.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let store = RasterStore::create(dir.path(), grid(), 64).unwrap();
        for (i, layer) in ["b0", "b1", "b2", "b3"].iter().enumerate() {
            ingest(&store, layer, BandRole::Red, T0, 128, 128, move |r, c| {
                (i * 100_000 + r * 128 + c) as f32
            });
        }
        (dir, store)
    })
}

fn layers() -> Vec<String> {
    vec!["b0".into(), "b1".into(), "b2".into(), "b3".into()]
}

/// Geographic center of pixel (row, col) under `grid()`.
fn point_at(row: i64, col: i64) -> LabeledPoint {
    let (lat, lon) = grid().pixel_center(row, col);
    LabeledPoint::new(lat, lon)
}

fn t0() -> Timestamp {
    Timestamp::parse(T0).unwrap()
}

#[test]
fn fully_covered_point_yields_ok_32x32x4_patch() {
    let (_dir, store) = four_band_store();
    let set = assemble_points(store, &layers(), &[point_at(64, 64)], 32, t0(), SECONDS_PER_DAY);
    assert_eq!(set.patches.len(), 1);
    let patch = &set.patches[0];
    assert!(patch.is_ok());
    assert_eq!(patch.k, 32);
    assert_eq!(patch.channels, 4);
    assert_eq!(patch.data.len(), 32 * 32 * 4);
    assert!(patch.valid.iter().all(|&v| v));
    // Channel order equals layer order; window top-left is center - k/2.
    assert_eq!(patch.get(0, 0, 0), (48 * 128 + 48) as f32);
    assert_eq!(patch.get(3, 16, 16), (300_000 + 64 * 128 + 64) as f32);
    assert_eq!(patch.resolved, vec![Some(t0()); 4]);
}

#[test]
fn point_outside_coverage_is_rejected_not_dropped() {
    let (_dir, store) = four_band_store();
    let set = assemble_points(store, &layers(), &[point_at(5000, 5000)], 32, t0(), SECONDS_PER_DAY);
    assert_eq!(set.patches.len(), 1);
    let status = &set.patches[0].status;
    assert_eq!(status.reason(), Some("out_of_coverage: b0"));
}

#[test]
fn partially_covered_window_is_rejected_with_layer() {
    let (_dir, store) = four_band_store();
    // Window [..16..] around row 10 sticks out above row 0.
    let set = assemble_points(store, &layers(), &[point_at(10, 64)], 32, t0(), SECONDS_PER_DAY);
    let patch = &set.patches[0];
    assert_eq!(patch.status.reason(), Some("partial_coverage: b0"));
    assert!(!patch.valid[0]);
    // The covered half is still present for inspection.
    assert_eq!(patch.get(0, 16, 16), (10 * 128 + 64) as f32);
}

#[test]
fn per_layer_timestamps_resolve_independently() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), grid(), 64).unwrap();
    let t1 = "2018-01-30T12:00:00Z";
    ingest(&store, "a", BandRole::Red, T0, 64, 64, |_, _| 1.0);
    ingest(&store, "b", BandRole::Nir, t1, 64, 64, |_, _| 2.0);
    let set = assemble_points(
        &store,
        &["a".to_string(), "b".to_string()],
        &[point_at(32, 32)],
        16,
        t0(),
        7 * SECONDS_PER_DAY,
    );
    let patch = &set.patches[0];
    assert!(patch.is_ok());
    assert_eq!(
        patch.resolved,
        vec![Some(t0()), Some(Timestamp::parse(t1).unwrap())]
    );
}

#[test]
fn temporal_miss_rejects_with_window_in_reason() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), grid(), 64).unwrap();
    ingest(&store, "a", BandRole::Red, T0, 64, 64, |_, _| 1.0);
    let far = Timestamp::parse("2019-06-01T00:00:00Z").unwrap();
    let set = assemble_points(&store, &["a".to_string()], &[point_at(32, 32)], 8, far, 3600);
    assert_eq!(
        set.patches[0].status.reason(),
        Some("no_temporal_match: a (window \u{00b1}3600s)")
    );
    assert!(set.patches[0].valid.iter().all(|&v| !v));
}

#[test]
fn label_time_overrides_query_snapshot() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), grid(), 64).unwrap();
    let t1 = "2018-03-15T12:00:00Z";
    ingest(&store, "a", BandRole::Red, T0, 64, 64, |_, _| 1.0);
    ingest(&store, "a", BandRole::Red, t1, 64, 64, |_, _| 2.0);
    let mut with_time = point_at(32, 32);
    with_time.label_time = Some(Timestamp::parse(t1).unwrap());
    let set = assemble_points(
        &store,
        &["a".to_string()],
        &[point_at(32, 32), with_time],
        4,
        t0(),
        30 * SECONDS_PER_DAY,
    );
    assert_eq!(set.patches[0].resolved, vec![Some(t0())]);
    assert_eq!(set.patches[1].resolved, vec![Some(Timestamp::parse(t1).unwrap())]);
    assert_eq!(set.patches[0].get(0, 0, 0), 1.0);
    assert_eq!(set.patches[1].get(0, 0, 0), 2.0);
}

fn train_spec(points: &[(f64, f64)]) -> QuerySpec {
    QuerySpec {
        layers: layers(),
        spatial: Spatial::Points(points.to_vec()),
        temporal: Temporal {
            snapshot: t0(),
            search_window_secs: Some(SECONDS_PER_DAY),
        },
        model: Some(ModelBlock {
            mode: Mode::Train,
            id: "m".into(),
            architecture: Architecture::RandomForest,
            labels: points.iter().map(|_| "x".to_string()).collect(),
            window_size: 16,
            filters: FilterSpec::default(),
            params: ModelParams::default(),
        }),
    }
}

#[test]
fn all_points_rejected_is_assembly_empty() {
    let (_dir, store) = four_band_store();
    let far = grid().pixel_center(9000, 9000);
    let err = assemble_patches(&train_spec(&[far, far]), store).unwrap_err();
    assert!(matches!(err, Error::AssemblyEmpty));
}

#[test]
fn query_assembly_zips_labels_to_points() {
    let (_dir, store) = four_band_store();
    let a = grid().pixel_center(40, 40);
    let b = grid().pixel_center(80, 80);
    let mut spec = train_spec(&[a, b]);
    spec.model.as_mut().unwrap().labels = vec!["oak".into(), "pine".into()];
    let set = assemble_patches(&spec, store).unwrap();
    assert_eq!(set.patches[0].point.label.as_deref(), Some("oak"));
    assert_eq!(set.patches[1].point.label.as_deref(), Some("pine"));
}

/// Serial reference: same store reads, no rayon. Oracle for the parallel path.
fn assemble_serial(
    store: &RasterStore,
    layer_ids: &[String],
    points: &[LabeledPoint],
    k: usize,
    snapshot: Timestamp,
    window_secs: i64,
) -> Vec<Patch> {
    points
        .iter()
        .map(|p| super::assemble_point(store, layer_ids, p, k, snapshot, window_secs))
        .collect()
}

fn mixed_points() -> Vec<LabeledPoint> {
    // In-coverage, edge-partial, and out-of-coverage points interleaved.
    let mut pts = Vec::new();
    for i in 0..24 {
        let (row, col) = match i % 3 {
            0 => (30 + i as i64 * 2, 40 + i as i64),
            1 => (3, 64),
            _ => (4000, 4000),
        };
        let mut p = point_at(row, col);
        p.label = Some(format!("c{}", i % 3));
        pts.push(p);
    }
    pts
}

#[test]
fn parallel_assembly_equals_serial_reference() {
    let (_dir, store) = four_band_store();
    let pts = mixed_points();
    let parallel = assemble_points(store, &layers(), &pts, 16, t0(), SECONDS_PER_DAY);
    let serial = assemble_serial(store, &layers(), &pts, 16, t0(), SECONDS_PER_DAY);
    assert_eq!(parallel.patches, serial);
}

#[test]
fn assembly_is_deterministic_across_runs() {
    let (_dir, store) = four_band_store();
    let pts = mixed_points();
    let a = assemble_points(store, &layers(), &pts, 16, t0(), SECONDS_PER_DAY);
    let b = assemble_points(store, &layers(), &pts, 16, t0(), SECONDS_PER_DAY);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // Permuting input points permutes output patches identically.
    #[test]
    fn assembly_is_permutation_equivariant(
        perm in Just((0..24usize).collect::<Vec<_>>()).prop_shuffle()
    ) {
        let (_dir, store) = four_band_store();
        let pts = mixed_points();
        let base = assemble_points(store, &layers(), &pts, 8, t0(), SECONDS_PER_DAY);
        let shuffled: Vec<LabeledPoint> = perm.iter().map(|&i| pts[i].clone()).collect();
        let permuted = assemble_points(store, &layers(), &shuffled, 8, t0(), SECONDS_PER_DAY);
        for (out_idx, &src_idx) in perm.iter().enumerate() {
            prop_assert_eq!(&permuted.patches[out_idx], &base.patches[src_idx]);
        }
    }
}

#[test]
fn export_writes_one_blob_per_patch_and_a_manifest() {
    let (_dir, store) = four_band_store();
    let pts = vec![point_at(40, 40), point_at(4000, 4000)];
    let set = assemble_points(store, &layers(), &pts, 8, t0(), SECONDS_PER_DAY);
    let out = TempDir::new().unwrap();
    export_patch_set(&set, out.path()).unwrap();
    let manifest = std::fs::read_to_string(out.path().join("manifest.jsonl")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].contains("\"status\":\"ok\""));
    assert!(lines[1].contains("\"status\":\"rejected\""));
    assert!(lines[1].contains("out_of_coverage"));
    let blob = std::fs::read(out.path().join("patch_00000.f32")).unwrap();
    assert_eq!(blob.len(), 8 * 8 * 4 * 4);
}
