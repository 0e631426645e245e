//! Fixed-size raster tiles.

/// Tile index containing a pixel index (floor division, so negative pixel
/// rows map to negative tile rows).
pub fn tile_of_pixel(pixel: i64, tile_size: usize) -> i64 {
    pixel.div_euclid(tile_size as i64)
}

/// One T-by-T tile of f32 values. NaN marks nodata; the validity mask is
/// derived from it, so values are finite exactly where the mask says valid.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub tile_row: i64,
    pub tile_col: i64,
    pub size: usize,
    /// Row-major size*size values.
    pub values: Vec<f32>,
}

impl Tile {
    pub fn empty(tile_row: i64, tile_col: i64, size: usize) -> Self {
        Tile {
            tile_row,
            tile_col,
            size,
            values: vec![f32::NAN; size * size],
        }
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.values[r * self.size + c] = v;
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.size + c]
    }

    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        self.get(r, c).is_finite()
    }

    /// Row-major validity mask.
    pub fn mask(&self) -> Vec<bool> {
        self.values.iter().map(|v| v.is_finite()).collect()
    }
}
