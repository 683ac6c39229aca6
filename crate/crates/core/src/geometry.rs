//! Boxes, anchor grids, crop windows and the anchor offset codec.
//!
//! Frame coordinates are continuous: pixel `i` covers `[i, i + 1)`, so a box
//! given as `x,y,w,h` has center `x + w/2`. Crop coordinates use pixel
//! centers instead, which puts the center of a 255-pixel search region at
//! 127 and makes the anchor lattice `(index - 12) * 8 + 127`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Axis-aligned box in center form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    /// Builds a box without validation; used for decoded proposals which may
    /// be arbitrarily small but are always positive.
    pub const fn raw(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite();
        if !finite || self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    /// Top-left corner plus extent, the annotation convention.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn xywh(&self) -> (f64, f64, f64, f64) {
        (self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        let inter = iw * ih;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

/// Anchor-relative regression target.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Offsets {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl Offsets {
    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self {
            dx: a[0],
            dy: a[1],
            dw: a[2],
            dh: a[3],
        }
    }
}

pub fn encode_offsets(anchor: &BBox, target: &BBox) -> Result<Offsets> {
    if anchor.w <= 0.0 || anchor.h <= 0.0 {
        return Err(Error::InvalidBox(format!("anchor {anchor:?}")));
    }
    if target.w <= 0.0 || target.h <= 0.0 {
        return Err(Error::InvalidBox(format!("target {target:?}")));
    }
    Ok(Offsets {
        dx: (target.cx - anchor.cx) / anchor.w,
        dy: (target.cy - anchor.cy) / anchor.h,
        dw: (target.w / anchor.w).ln(),
        dh: (target.h / anchor.h).ln(),
    })
}

pub fn decode_offsets(anchor: &BBox, o: &Offsets) -> BBox {
    BBox::raw(
        anchor.cx + o.dx * anchor.w,
        anchor.cy + o.dy * anchor.h,
        anchor.w * o.dw.exp(),
        anchor.h * o.dh.exp(),
    )
}

/// Position of one anchor in a grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnchorIndex {
    pub row: usize,
    pub col: usize,
    pub k: usize,
}

/// Anchors laid out on the score-map lattice, in search-region pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorGrid {
    pub score_size: usize,
    pub stride: f64,
    pub ratios: Vec<f64>,
    pub base_scale: f64,
    pub region_center: f64,
    boxes: Vec<BBox>,
}

pub const DEFAULT_RATIOS: [f64; 5] = [1.0 / 3.0, 0.5, 1.0, 2.0, 3.0];

impl AnchorGrid {
    pub fn new(
        score_size: usize,
        stride: f64,
        ratios: &[f64],
        base_scale: f64,
        region_center: f64,
    ) -> Result<Self> {
        if stride <= 0.0 || !stride.is_finite() {
            return Err(Error::InvalidConfig(format!("stride must be positive, got {stride}")));
        }
        if ratios.is_empty() {
            return Err(Error::InvalidConfig("anchor ratios are empty".into()));
        }
        if score_size == 0 || score_size % 2 == 0 {
            return Err(Error::InvalidConfig(format!("score size must be odd, got {score_size}")));
        }
        if base_scale <= 0.0 || ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::InvalidConfig("anchor scale and ratios must be positive".into()));
        }
        let side = base_scale * stride;
        let mut boxes = Vec::with_capacity(score_size * score_size * ratios.len());
        for &r in ratios {
            // h / w == r, w * h == side^2
            let w = side / r.sqrt();
            let h = side * r.sqrt();
            for row in 0..score_size {
                for col in 0..score_size {
                    let cx = Self::lattice(col, score_size, stride, region_center);
                    let cy = Self::lattice(row, score_size, stride, region_center);
                    boxes.push(BBox::raw(cx, cy, w, h));
                }
            }
        }
        Ok(Self {
            score_size,
            stride,
            ratios: ratios.to_vec(),
            base_scale,
            region_center,
            boxes,
        })
    }

    /// 25x25 cells, stride 8, five ratios, 64 px base extent, centered at 127.
    pub fn default_search() -> Self {
        Self::new(25, 8.0, &DEFAULT_RATIOS, 8.0, 127.0).expect("default anchor config is valid")
    }

    fn lattice(index: usize, score_size: usize, stride: f64, center: f64) -> f64 {
        (index as f64 - (score_size as f64 - 1.0) / 2.0) * stride + center
    }

    pub fn k(&self) -> usize {
        self.ratios.len()
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn center_cell(&self) -> usize {
        self.score_size / 2
    }

    /// Flat position, laid out `[k][row][col]` like the network's channels.
    #[inline]
    pub fn flat(&self, idx: AnchorIndex) -> usize {
        (idx.k * self.score_size + idx.row) * self.score_size + idx.col
    }

    #[inline]
    pub fn unflat(&self, j: usize) -> AnchorIndex {
        let s = self.score_size;
        AnchorIndex {
            k: j / (s * s),
            row: (j / s) % s,
            col: j % s,
        }
    }

    pub fn anchor(&self, idx: AnchorIndex) -> BBox {
        self.boxes[self.flat(idx)]
    }

    pub fn anchors(&self) -> &[BBox] {
        &self.boxes
    }

    /// Pixel position of a cell center.
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            Self::lattice(col, self.score_size, self.stride, self.region_center),
            Self::lattice(row, self.score_size, self.stride, self.region_center),
        )
    }

    /// Nearest cell to a pixel position, or `None` when it falls off the grid.
    pub fn nearest_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let half = (self.score_size as f64 - 1.0) / 2.0;
        let col = ((x - self.region_center) / self.stride + half).round();
        let row = ((y - self.region_center) / self.stride + half).round();
        let max = (self.score_size - 1) as f64;
        if !(0.0..=max).contains(&col) || !(0.0..=max).contains(&row) {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// The anchor at `(row, col)` with highest IoU against `target`.
    pub fn best_anchor_at(&self, row: usize, col: usize, target: &BBox) -> AnchorIndex {
        let mut best = AnchorIndex { row, col, k: 0 };
        let mut best_iou = f64::NEG_INFINITY;
        for k in 0..self.k() {
            let idx = AnchorIndex { row, col, k };
            let iou = self.anchor(idx).iou(target);
            if iou > best_iou {
                best_iou = iou;
                best = idx;
            }
        }
        best
    }
}

/// Context-padded template side used by Siamese trackers:
/// `sqrt((w + p) * (h + p))` with `p = (w + h) / 2`.
pub fn template_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

pub fn search_side(w: f64, h: f64) -> f64 {
    2.0 * template_side(w, h)
}

/// Square frame window resampled to `out` pixels.
///
/// The window is snapped to whole frame pixels so that a crop with
/// `side == out` is an exact copy of the frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: i64,
    pub y0: i64,
    pub side: usize,
    pub out: usize,
}

impl CropWindow {
    pub fn around(center: (f64, f64), side: f64, out: usize) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() || out == 0 {
            return Err(Error::InvalidConfig(format!("crop side {side} -> {out}")));
        }
        let s = side.round().max(1.0);
        Ok(Self {
            x0: (center.0 - s / 2.0).round() as i64,
            y0: (center.1 - s / 2.0).round() as i64,
            side: s as usize,
            out,
        })
    }

    /// Crop pixels per frame pixel.
    pub fn scale(&self) -> f64 {
        self.out as f64 / self.side as f64
    }

    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        ((x - self.x0 as f64) * s - 0.5, (y - self.y0 as f64) * s - 0.5)
    }

    pub fn to_frame(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        (self.x0 as f64 + (u + 0.5) / s, self.y0 as f64 + (v + 0.5) / s)
    }

    pub fn box_to_crop(&self, b: &BBox) -> BBox {
        let (cx, cy) = self.to_crop(b.cx, b.cy);
        let s = self.scale();
        BBox::raw(cx, cy, b.w * s, b.h * s)
    }

    pub fn box_to_frame(&self, b: &BBox) -> BBox {
        let (cx, cy) = self.to_frame(b.cx, b.cy);
        let s = self.scale();
        BBox::raw(cx, cy, b.w / s, b.h / s)
    }

    pub fn extract(&self, frame: &Image) -> Image {
        let fill = frame.channel_means();
        self.extract_with_fill(frame, &fill)
    }

    pub fn extract_with_fill(&self, frame: &Image, fill: &[f32]) -> Image {
        frame
            .window(self.y0, self.x0, self.side, self.side, fill)
            .resize(self.out, self.out)
    }
}

/// Square crop centered at `center`, mean-padded outside the frame and
/// resized to `out_side`.
pub fn crop_region(frame: &Image, center: (f64, f64), side: f64, out_side: usize) -> Result<Image> {
    if frame.is_empty() {
        return Err(Error::InvalidConfig("empty frame".into()));
    }
    Ok(CropWindow::around(center, side, out_side)?.extract(frame))
}
