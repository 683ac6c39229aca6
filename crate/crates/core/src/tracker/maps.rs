use crate::error::{Error, Result};
use crate::geometry::{AnchorGrid, Offsets};
use crate::nn::Tensor;

/// Classification logits and regression offsets for every anchor of one
/// search region.
///
/// Storage follows the network channels: `cls[(k * 2 + c) * S * S + row * S + col]`
/// with `c = 0` background and `c = 1` foreground, and
/// `reg[(k * 4 + r) * S * S + row * S + col]` with `r` in `dx, dy, dw, dh`.
/// Anchor flat indices come from [`AnchorGrid::flat`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMaps {
    pub size: usize,
    pub k: usize,
    pub cls: Vec<f32>,
    pub reg: Vec<f32>,
}

impl ScoreMaps {
    pub fn zeros(size: usize, k: usize) -> Self {
        Self {
            size,
            k,
            cls: vec![0.0; 2 * k * size * size],
            reg: vec![0.0; 4 * k * size * size],
        }
    }

    pub fn zeros_like(other: &ScoreMaps) -> Self {
        Self::zeros(other.size, other.k)
    }

    /// Splits batched head outputs `(n, 2K, S, S)` / `(n, 4K, S, S)`.
    pub fn from_tensors(cls: &Tensor, reg: &Tensor) -> Vec<ScoreMaps> {
        let (size, k) = (cls.h(), cls.c() / 2);
        (0..cls.n())
            .map(|b| ScoreMaps {
                size,
                k,
                cls: cls.item(b).to_vec(),
                reg: reg.item(b).to_vec(),
            })
            .collect()
    }

    /// Stacks maps back into `(n, 2K, S, S)` / `(n, 4K, S, S)` tensors.
    pub fn to_tensors(maps: &[ScoreMaps]) -> (Tensor, Tensor) {
        let (size, k) = (maps[0].size, maps[0].k);
        let mut cls = Vec::with_capacity(maps.len() * 2 * k * size * size);
        let mut reg = Vec::with_capacity(maps.len() * 4 * k * size * size);
        for m in maps {
            cls.extend_from_slice(&m.cls);
            reg.extend_from_slice(&m.reg);
        }
        (
            Tensor {
                shape: [maps.len(), 2 * k, size, size],
                data: cls,
            },
            Tensor {
                shape: [maps.len(), 4 * k, size, size],
                data: reg,
            },
        )
    }

    /// `(H, W, K, 2)` view of the logits.
    pub fn cls_shape(&self) -> (usize, usize, usize, usize) {
        (self.size, self.size, self.k, 2)
    }

    /// `(H, W, 4K)` view of the offsets.
    pub fn reg_shape(&self) -> (usize, usize, usize) {
        (self.size, self.size, 4 * self.k)
    }

    pub fn num_anchors(&self) -> usize {
        self.k * self.size * self.size
    }

    pub fn check_grid(&self, grid: &AnchorGrid) -> Result<()> {
        if grid.score_size != self.size || grid.k() != self.k {
            return Err(Error::Shape(format!(
                "maps {}x{}x{} vs grid {}x{}x{}",
                self.size,
                self.size,
                self.k,
                grid.score_size,
                grid.score_size,
                grid.k()
            )));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ScoreMaps) -> bool {
        self.size == other.size && self.k == other.k
    }

    #[inline]
    fn plane(&self) -> usize {
        self.size * self.size
    }

    #[inline]
    pub fn bg_index(&self, j: usize) -> usize {
        let p = self.plane();
        (j / p * 2) * p + j % p
    }

    #[inline]
    pub fn fg_index(&self, j: usize) -> usize {
        self.bg_index(j) + self.plane()
    }

    #[inline]
    pub fn reg_index(&self, j: usize, r: usize) -> usize {
        let p = self.plane();
        (j / p * 4 + r) * p + j % p
    }

    #[inline]
    pub fn bg(&self, j: usize) -> f32 {
        self.cls[self.bg_index(j)]
    }

    #[inline]
    pub fn fg(&self, j: usize) -> f32 {
        self.cls[self.fg_index(j)]
    }

    /// Softmax foreground probability `exp(f) / (exp(f) + exp(b))`.
    pub fn fg_prob(&self, j: usize) -> f64 {
        let d = self.fg(j) as f64 - self.bg(j) as f64;
        1.0 / (1.0 + (-d).exp())
    }

    pub fn bg_prob(&self, j: usize) -> f64 {
        let d = self.bg(j) as f64 - self.fg(j) as f64;
        1.0 / (1.0 + (-d).exp())
    }

    pub fn fg_probs(&self) -> Vec<f64> {
        (0..self.num_anchors()).map(|j| self.fg_prob(j)).collect()
    }

    pub fn offsets(&self, j: usize) -> Offsets {
        Offsets {
            dx: self.reg[self.reg_index(j, 0)] as f64,
            dy: self.reg[self.reg_index(j, 1)] as f64,
            dw: self.reg[self.reg_index(j, 2)] as f64,
            dh: self.reg[self.reg_index(j, 3)] as f64,
        }
    }

    pub fn set_offsets(&mut self, j: usize, o: Offsets) {
        for (r, v) in o.to_array().into_iter().enumerate() {
            let i = self.reg_index(j, r);
            self.reg[i] = v as f32;
        }
    }

    pub fn set_logits(&mut self, j: usize, bg: f32, fg: f32) {
        let (b, f) = (self.bg_index(j), self.fg_index(j));
        self.cls[b] = bg;
        self.cls[f] = fg;
    }

    pub fn add_assign(&mut self, other: &ScoreMaps) {
        for (a, b) in self.cls.iter_mut().zip(&other.cls) {
            *a += b;
        }
        for (a, b) in self.reg.iter_mut().zip(&other.reg) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.cls.iter_mut().chain(self.reg.iter_mut()).for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.cls.iter().chain(&self.reg).all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorIndex;

    #[test]
    fn default_shapes() {
        let m = ScoreMaps::zeros(25, 5);
        assert_eq!(m.cls_shape(), (25, 25, 5, 2));
        assert_eq!(m.reg_shape(), (25, 25, 20));
        m.check_grid(&AnchorGrid::default_search()).unwrap();
        assert!(m.check_grid(&AnchorGrid::new(17, 8.0, &[1.0], 8.0, 127.0).unwrap()).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut m = ScoreMaps::zeros(3, 2);
        for j in 0..m.num_anchors() {
            m.set_logits(j, j as f32 * 0.7 - 3.0, 1.3 - j as f32 * 0.4);
        }
        for j in 0..m.num_anchors() {
            let (p, q) = (m.fg_prob(j), m.bg_prob(j));
            assert!((p + q - 1.0).abs() < 1e-12);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn index_layout_matches_grid() {
        let grid = AnchorGrid::default_search();
        let m = ScoreMaps::zeros(25, 5);
        let j = grid.flat(AnchorIndex { row: 3, col: 7, k: 2 });
        assert_eq!(m.bg_index(j), (2 * 2) * 625 + 3 * 25 + 7);
        assert_eq!(m.fg_index(j), (2 * 2 + 1) * 625 + 3 * 25 + 7);
        assert_eq!(m.reg_index(j, 3), (2 * 4 + 3) * 625 + 3 * 25 + 7);
    }

    #[test]
    fn tensor_roundtrip() {
        let mut a = ScoreMaps::zeros(3, 2);
        a.cls[5] = 1.5;
        a.reg[7] = -2.0;
        let b = ScoreMaps::zeros(3, 2);
        let (c, r) = ScoreMaps::to_tensors(&[a.clone(), b.clone()]);
        assert_eq!(ScoreMaps::from_tensors(&c, &r), vec![a, b]);
    }
}
