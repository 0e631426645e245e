//! The store-wide equirectangular pixel grid.
//!
//! A single grid level keeps window arithmetic exact: pixel (0,0) covers
//! `[origin_lat - resolution, origin_lat] x [origin_lon, origin_lon + resolution]`,
//! rows increase southward and columns eastward.

use serde::{Deserialize, Serialize};

/// Degrees-per-pixel grid anchored at a north-west origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Degrees per pixel; must be positive.
    pub resolution: f64,
}

/// Roughly 0.5 m of ground spacing at the equator, in degrees.
pub const HALF_METER_DEG: f64 = 4.5e-6;

impl GridSpec {
    pub fn new(origin_lat: f64, origin_lon: f64, resolution: f64) -> Self {
        assert!(resolution > 0.0, "grid resolution must be positive");
        GridSpec {
            origin_lat,
            origin_lon,
            resolution,
        }
    }

    /// Pixel indices containing the coordinate (floor convention; indices may
    /// be negative or beyond stored coverage — callers check coverage).
    pub fn geo_to_pixel(&self, lat: f64, lon: f64) -> (i64, i64) {
        let row = ((self.origin_lat - lat) / self.resolution).floor() as i64;
        let col = ((lon - self.origin_lon) / self.resolution).floor() as i64;
        (row, col)
    }

    /// Geographic center of a pixel.
    pub fn pixel_center(&self, row: i64, col: i64) -> (f64, f64) {
        let lat = self.origin_lat - (row as f64 + 0.5) * self.resolution;
        let lon = self.origin_lon + (col as f64 + 0.5) * self.resolution;
        (lat, lon)
    }

    /// North-west corner of a pixel.
    pub fn pixel_corner(&self, row: i64, col: i64) -> (f64, f64) {
        let lat = self.origin_lat - row as f64 * self.resolution;
        let lon = self.origin_lon + col as f64 * self.resolution;
        (lat, lon)
    }
}

/// Axis-aligned pixel rectangle, half-open on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelRect {
    pub row0: i64,
    pub col0: i64,
    pub rows: u32,
    pub cols: u32,
}

impl PixelRect {
    pub fn new(row0: i64, col0: i64, rows: u32, cols: u32) -> Self {
        PixelRect {
            row0,
            col0,
            rows,
            cols,
        }
    }

    pub fn row_end(&self) -> i64 {
        self.row0 + self.rows as i64
    }

    pub fn col_end(&self) -> i64 {
        self.col0 + self.cols as i64
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= self.row0 && row < self.row_end() && col >= self.col0 && col < self.col_end()
    }

    /// Intersection, or None when disjoint.
    pub fn intersect(&self, other: &PixelRect) -> Option<PixelRect> {
        let row0 = self.row0.max(other.row0);
        let col0 = self.col0.max(other.col0);
        let row1 = self.row_end().min(other.row_end());
        let col1 = self.col_end().min(other.col_end());
        if row0 < row1 && col0 < col1 {
            Some(PixelRect::new(
                row0,
                col0,
                (row1 - row0) as u32,
                (col1 - col0) as u32,
            ))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_maps_to_zero() {
        let g = GridSpec::new(40.0, -75.0, 0.01);
        assert_eq!(g.geo_to_pixel(40.0, -75.0), (0, 0));
    }

    #[test]
    fn fractional_offsets_floor() {
        // lat = origin - 2.5*res, lon = origin + 3.5*res -> (2, 3)
        let g = GridSpec::new(40.0, -75.0, 0.01);
        assert_eq!(g.geo_to_pixel(40.0 - 2.5 * 0.01, -75.0 + 3.5 * 0.01), (2, 3));
    }

    #[test]
    fn boundary_lon_uses_floor() {
        let g = GridSpec::new(0.0, 0.0, 0.25);
        // exactly on the boundary between columns 2 and 3
        assert_eq!(g.geo_to_pixel(-0.1, 0.75), (0, 3).into());
    }

    #[test]
    fn negative_indices_allowed() {
        let g = GridSpec::new(40.0, -75.0, 0.01);
        let (row, col) = g.geo_to_pixel(40.005, -75.005);
        assert_eq!((row, col), (-1, -1));
    }

    #[test]
    fn rect_intersection() {
        let a = PixelRect::new(0, 0, 10, 10);
        let b = PixelRect::new(5, 5, 10, 10);
        assert_eq!(a.intersect(&b), Some(PixelRect::new(5, 5, 5, 5)));
        let c = PixelRect::new(20, 20, 2, 2);
        assert_eq!(a.intersect(&c), None);
    }
}
