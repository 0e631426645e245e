use super::*;
use crate::timestamp::SECONDS_PER_DAY;
use tempfile::TempDir;

fn test_grid() -> GridSpec {
    GridSpec::new(40.0, -75.0, 0.001)
}

fn header(grid: &GridSpec, rows: usize, cols: usize, layer: &str, ts: &str) -> IngestHeader {
    IngestHeader {
        origin_lat: grid.origin_lat,
        origin_lon: grid.origin_lon,
        resolution: grid.resolution,
        rows,
        cols,
        band_role: BandRole::Red,
        layer_id: layer.to_string(),
        timestamp: Timestamp::parse(ts).unwrap(),
        nodata: "nan".to_string(),
    }
}

fn ramp(rows: usize, cols: usize) -> Vec<f32> {
    (0..rows * cols).map(|i| i as f32).collect()
}

#[test]
fn aligned_ingest_is_one_partial_tile_with_source_coverage() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 4, 4, "b0", "2018-01-29T12:00:00Z");
    let rec = store.ingest_raster(&h, &ramp(4, 4), false).unwrap();
    assert_eq!(rec.tile_count, 1);
    assert_eq!(rec.coverage, PixelRect::new(0, 0, 4, 4));
}

#[test]
fn finer_source_resamples_nearest_and_constant_stays_constant() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    // Source at 2x finer resolution covering the same 4x4 store-pixel area.
    let mut h = header(&store.grid(), 8, 8, "b0", "2018-01-29T12:00:00Z");
    h.resolution = store.grid().resolution / 2.0;
    let rec = store.ingest_raster(&h, &vec![7.25; 64], false).unwrap();
    assert_eq!(rec.coverage, PixelRect::new(0, 0, 4, 4));
    let ts = h.timestamp;
    let w = store.read_window("b0", ts, (2, 2), 4).unwrap();
    assert!(w.fully_valid());
    assert!(w.values.iter().all(|&v| v == 7.25));
}

#[test]
fn full_tile_grid_splits_into_four() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 512, 512, "b0", "2018-01-29T12:00:00Z");
    let rec = store.ingest_raster(&h, &vec![1.0; 512 * 512], false).unwrap();
    assert_eq!(rec.tile_count, 4);
}

#[test]
fn reingest_rejected_without_overwrite() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 4, 4, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &ramp(4, 4), false).unwrap();
    let err = store.ingest_raster(&h, &ramp(4, 4), false).unwrap_err();
    assert!(matches!(err, Error::SnapshotExists { .. }));
    store.ingest_raster(&h, &ramp(4, 4), true).unwrap();
}

#[test]
fn infinite_pixel_rejected() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 2, 2, "b0", "2018-01-29T12:00:00Z");
    let err = store
        .ingest_raster(&h, &[1.0, f32::INFINITY, 2.0, 3.0], false)
        .unwrap_err();
    assert!(matches!(err, Error::NonFiniteSample { index: 1, .. }));
}

#[test]
fn nan_maps_to_invalid_mask() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 2, 2, "b0", "2018-01-29T12:00:00Z");
    store
        .ingest_raster(&h, &[1.0, f32::NAN, 2.0, 3.0], false)
        .unwrap();
    let w = store.read_window("b0", h.timestamp, (1, 1), 2).unwrap();
    assert_eq!(w.valid, vec![true, false, true, true]);
}

#[test]
fn window_centering_matches_ramp_example() {
    // 4x4 ramp 0..15 row-major, center (1,1), k=2 -> [[0,1],[4,5]]
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 4, 4, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &ramp(4, 4), false).unwrap();
    let w = store.read_window("b0", h.timestamp, (1, 1), 2).unwrap();
    assert_eq!(w.values, vec![0.0, 1.0, 4.0, 5.0]);
}

#[test]
fn k1_window_is_the_center_pixel() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 4, 4, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &ramp(4, 4), false).unwrap();
    let w = store.read_window("b0", h.timestamp, (2, 3), 1).unwrap();
    assert_eq!(w.values, vec![11.0]);
}

#[test]
fn near_edge_window_has_invalid_margin() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 64, 64, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &ramp(64, 64), false).unwrap();
    // Center near the north-west corner: window extends past coverage.
    let w = store.read_window("b0", h.timestamp, (4, 4), 32).unwrap();
    assert!(!w.fully_valid());
    assert!(w.any_valid());
    // Top-left is at (-12,-12); margin rows/cols are invalid, interior valid.
    assert!(!w.is_valid(0, 0));
    assert!(w.is_valid(31, 31));
    assert!(w.is_valid(12, 12));
    assert!(!w.is_valid(11, 12));
    assert!(!w.is_valid(12, 11));
}

#[test]
fn window_fully_outside_coverage_errors() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 4, 4, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &ramp(4, 4), false).unwrap();
    let err = store
        .read_window("b0", h.timestamp, (1000, 1000), 8)
        .unwrap_err();
    assert!(matches!(err, Error::WindowOutOfCoverage { .. }));
}

#[test]
fn resolve_timestamp_exact_nearest_and_tie() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let t0 = Timestamp::parse("2018-01-29T12:00:00Z").unwrap();
    for off in [-3 * SECONDS_PER_DAY, SECONDS_PER_DAY] {
        let mut h = header(&store.grid(), 2, 2, "b0", "2018-01-29T12:00:00Z");
        h.timestamp = t0.offset(off);
        store.ingest_raster(&h, &[1.0; 4], false).unwrap();
    }
    // exact match resolves to itself
    let exact = store
        .resolve_timestamp("b0", t0.offset(SECONDS_PER_DAY), 7 * SECONDS_PER_DAY)
        .unwrap();
    assert_eq!(exact, t0.offset(SECONDS_PER_DAY));
    // {t-3d, t+1d} within +/-7d -> t+1d
    let near = store.resolve_timestamp("b0", t0, 7 * SECONDS_PER_DAY).unwrap();
    assert_eq!(near, t0.offset(SECONDS_PER_DAY));

    // {t-2d, t+2d} -> earlier wins
    let store2 = RasterStore::create(dir.path().join("s2"), test_grid(), 256).unwrap();
    for off in [-2 * SECONDS_PER_DAY, 2 * SECONDS_PER_DAY] {
        let mut h = header(&store2.grid(), 2, 2, "b0", "2018-01-29T12:00:00Z");
        h.timestamp = t0.offset(off);
        store2.ingest_raster(&h, &[1.0; 4], false).unwrap();
    }
    let tie = store2.resolve_timestamp("b0", t0, 7 * SECONDS_PER_DAY).unwrap();
    assert_eq!(tie, t0.offset(-2 * SECONDS_PER_DAY));
}

#[test]
fn no_temporal_match_errors() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 2, 2, "b0", "2018-01-29T12:00:00Z");
    store.ingest_raster(&h, &[1.0; 4], false).unwrap();
    let err = store
        .resolve_timestamp("b0", h.timestamp.offset(100 * SECONDS_PER_DAY), SECONDS_PER_DAY)
        .unwrap_err();
    assert!(matches!(err, Error::NoTemporalMatch { .. }));
}

#[test]
fn layer_info_lists_snapshots_ascending() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    assert!(matches!(
        store.layer_info("nope").unwrap_err(),
        Error::UnknownLayer(_)
    ));
    let mut h = header(&store.grid(), 2, 2, "b0", "2018-01-30T12:00:00Z");
    store.ingest_raster(&h, &[1.0; 4], false).unwrap();
    let info = store.layer_info("b0").unwrap();
    assert_eq!(info.snapshots.len(), 1);

    h.timestamp = Timestamp::parse("2018-01-29T12:00:00Z").unwrap();
    store.ingest_raster(&h, &[1.0; 4], false).unwrap();
    let info = store.layer_info("b0").unwrap();
    assert_eq!(info.snapshots.len(), 2);
    assert!(info.snapshots[0].timestamp < info.snapshots[1].timestamp);
}

#[test]
fn round_trip_is_bit_exact_and_survives_reopen() {
    let dir = TempDir::new().unwrap();
    let grid = test_grid();
    let src: Vec<f32> = (0..300 * 300).map(|i| (i as f32).sin()).collect();
    {
        let store = RasterStore::create(dir.path(), grid, 256).unwrap();
        let h = header(&grid, 300, 300, "b0", "2018-01-29T12:00:00Z");
        store.ingest_raster(&h, &src, false).unwrap();
    }
    let store = RasterStore::open(dir.path()).unwrap();
    let ts = Timestamp::parse("2018-01-29T12:00:00Z").unwrap();
    // Full-extent read via a window centered on the raster.
    let w = store.read_window("b0", ts, (150, 150), 300).unwrap();
    assert!(w.fully_valid());
    for (a, b) in w.values.iter().zip(src.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn point_read_touches_bounded_tiles() {
    let dir = TempDir::new().unwrap();
    let store = RasterStore::create(dir.path(), test_grid(), 256).unwrap();
    let h = header(&store.grid(), 1024, 1024, "b0", "2018-01-29T12:00:00Z");
    store
        .ingest_raster(&h, &vec![1.0; 1024 * 1024], false)
        .unwrap();
    store.reset_stats();
    // Window straddling a tile corner: worst case for k=32, T=256 is 4 tiles.
    store.read_window("b0", h.timestamp, (256, 256), 32).unwrap();
    let bound = ((32 + 256) as f64 / 256.0).ceil().powi(2) as u64;
    assert!(store.stats().tiles_read <= bound);
}
