use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AnchorGrid, BBox};
use crate::image::Image;

/// Binary score-map-sized grid marking where the target should appear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionMask {
    pub size: usize,
    /// Row-major, entries 0 or 1.
    pub cells: Vec<u8>,
}

impl ConditionMask {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            cells: vec![0; size * size],
        }
    }

    pub fn ones(size: usize) -> Self {
        Self {
            size,
            cells: vec![1; size * size],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.size + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.cells[row * self.size + col] = v as u8;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == 1).count()
    }

    /// Active `(row, col)` cells in row-major order.
    pub fn active(&self) -> Vec<(usize, usize)> {
        (0..self.cells.len())
            .filter(|&i| self.cells[i] == 1)
            .map(|i| (i / self.size, i % self.size))
            .collect()
    }

    /// Marks every cell whose center lies inside `b` (closed), in
    /// search-crop pixels.
    pub fn from_box(grid: &AnchorGrid, b: &BBox) -> Self {
        let (x1, y1, x2, y2) = b.corners();
        let mut m = Self::zeros(grid.score_size);
        for row in 0..grid.score_size {
            for col in 0..grid.score_size {
                let (x, y) = grid.cell_center(row, col);
                m.set(row, col, x >= x1 && x <= x2 && y >= y1 && y <= y2);
            }
        }
        m
    }
}

/// Unit vector of direction `k` out of `count`; `k = 0` points along +x and
/// angles grow towards +y (image rows grow downwards).
pub fn direction(k: usize, count: usize) -> (f64, f64) {
    if count % 2 == 0 && k >= count / 2 {
        // exact negation keeps opposite masks point-symmetric after rounding
        let (x, y) = direction(k - count / 2, count);
        return (-x, -y);
    }
    let theta = std::f64::consts::TAU * k as f64 / count as f64;
    (theta.cos(), theta.sin())
}

/// Cell `d` cells away from the grid center along direction `k`, rounded.
pub fn direction_cell(k: usize, count: usize, d: f64, grid: &AnchorGrid) -> Result<(usize, usize)> {
    if count == 0 || k >= count {
        return Err(Error::InvalidConfig(format!("direction {k} of {count}")));
    }
    let (ux, uy) = direction(k, count);
    let c = grid.center_cell() as f64;
    let col = c + (d * ux).round();
    let row = c + (d * uy).round();
    let max = (grid.score_size - 1) as f64;
    if !(0.0..=max).contains(&col) || !(0.0..=max).contains(&row) {
        return Err(Error::InvalidConfig(format!("direction {k}/{count} at distance {d} leaves the grid")));
    }
    Ok((row as usize, col as usize))
}

/// Target box for direction `k` in search-crop pixels, centered on the
/// displaced cell.
pub fn direction_box(k: usize, count: usize, d: f64, box_side: f64, grid: &AnchorGrid) -> Result<BBox> {
    let (row, col) = direction_cell(k, count, d, grid)?;
    let (x, y) = grid.cell_center(row, col);
    BBox::new(x, y, box_side, box_side)
}

/// Mask of the cells under a `box_side` square centered `d` cells from the
/// grid center in direction `k`.
pub fn make_direction_mask(k: usize, count: usize, d: f64, box_side: f64, grid: &AnchorGrid) -> Result<ConditionMask> {
    Ok(ConditionMask::from_box(grid, &direction_box(k, count, d, box_side, grid)?))
}

/// Nearest-neighbour resize of the mask to a `side x side` single channel.
pub fn upsample_mask(mask: &ConditionMask, side: usize) -> Image {
    let mut out = Image::new(1, side, side);
    for y in 0..side {
        let r = (y * mask.size / side).min(mask.size - 1);
        for x in 0..side {
            let c = (x * mask.size / side).min(mask.size - 1);
            out.set(0, y, x, mask.get(r, c) as f32);
        }
    }
    out
}
