//! Encoder-decoder that maps a 127x127 template (plus an optional mask
//! channel) to a 255x255 perturbation.
//!
//! Four stride-2 encoder stages (127 -> 64 -> 32 -> 16 -> 8), three decoder
//! stages with skip connections back up to 64, then two more upsampling
//! stages (128, 255) and a tanh output scaled to the budget.
//!
//! Two coordinate channels are appended to the input. Without them the
//! convolutions cannot tell where in the crop a pixel sits, and the shift
//! objective asks for a position-dependent pattern.
//!
//! The output layer also carries an untied bias: a learned 3x255x255 image
//! added before the tanh. It holds the part of the perturbation that does not
//! depend on the template and trains far faster than synthesizing the same
//! texture through the decoder. Conditional generators also learn a stamp
//! that is pasted at the search-crop position of the mask centroid, so a
//! target region gets the same local texture wherever it sits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::AnchorGrid;
use crate::nn::{
    concat_channels, leaky_relu, leaky_relu_backward, split_channels, tanh, tanh_backward, upsample_nearest,
    upsample_nearest_backward, Conv2d, Module, Param, Tensor,
};

pub const INPUT_SIZE: usize = 127;
pub const OUTPUT_SIZE: usize = 255;

/// Multiplier on the untied bias, so Adam moves it in larger steps.
const PATTERN_GAIN: f32 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorNetConfig {
    pub encoder: [usize; 4],
    pub decoder: [usize; 4],
    pub slope: f32,
}

impl Default for GeneratorNetConfig {
    fn default() -> Self {
        Self {
            encoder: [16, 32, 48, 64],
            decoder: [48, 32, 16, 8],
            slope: 0.2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeneratorNet {
    pub config: GeneratorNetConfig,
    pub in_channels: usize,
    enc: Vec<Conv2d>,
    dec: Vec<Conv2d>,
    out: Conv2d,
    pattern: Param,
    /// Only present with a mask channel.
    stamp: Option<Param>,
}

/// Activations for the backward pass.
pub struct GeneratorCache {
    input: Tensor,
    enc: Vec<Tensor>,
    /// Decoder conv inputs (after upsampling and concatenation) and outputs.
    dec_in: Vec<Tensor>,
    dec_out: Vec<Tensor>,
    out_in: Tensor,
    cells: Vec<Vec<MaskCell>>,
    tanh: Tensor,
    scale: f32,
}

const DEC_SIZES: [usize; 4] = [16, 32, 64, 128];

/// Column and row position in `[-1, 1]`, one pair per batch item.
fn coordinates(n: usize) -> Tensor {
    let s = INPUT_SIZE;
    let pos = |i: usize| 2.0 * i as f32 / (s - 1) as f32 - 1.0;
    let mut one = Vec::with_capacity(2 * s * s);
    one.extend((0..s * s).map(|k| pos(k % s)));
    one.extend((0..s * s).map(|k| pos(k / s)));
    let data = (0..n).flat_map(|_| one.iter().copied()).collect();
    Tensor { shape: [n, 2, s, s], data }
}

const STAMP: usize = 96;

/// Where the stamp goes, in search-crop pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
struct MaskCell {
    y: usize,
    x: usize,
    w: f32,
}

/// Reads the mask channel (the last input channel) back into its weighted
/// centroid, one per batch item; empty masks place nothing.
fn mask_cells(input: &Tensor) -> Vec<Vec<MaskCell>> {
    let grid = AnchorGrid::default_search();
    let size = grid.score_size;
    let origin = grid.region_center - (size as f64 - 1.0) / 2.0 * grid.stride;
    let (c, plane) = (input.c(), INPUT_SIZE * INPUT_SIZE);
    (0..input.n())
        .map(|b| {
            let m = &input.data[(b * c + c - 1) * plane..(b * c + c) * plane];
            // inverse of the nearest-neighbour upsampling used to build the channel
            let at = |r: usize| (r * INPUT_SIZE).div_ceil(size);
            let (mut total, mut sy, mut sx) = (0.0f64, 0.0, 0.0);
            for r in 0..size {
                for q in 0..size {
                    let w = m[at(r) * INPUT_SIZE + at(q)].max(0.0) as f64;
                    total += w;
                    sy += w * r as f64;
                    sx += w * q as f64;
                }
            }
            if total <= 0.0 {
                return Vec::new();
            }
            let pos = |r: f64| (origin + r / total * grid.stride).round() as usize;
            vec![MaskCell { y: pos(sy), x: pos(sx), w: 1.0 }]
        })
        .collect()
}

/// Visits every `(output index, stamp index, weight)` the stamp touches for
/// one batch item, per channel plane.
fn for_stamp(cells: &[MaskCell], mut f: impl FnMut(usize, usize, f32)) {
    let half = STAMP / 2;
    for k in cells {
        for dy in 0..STAMP {
            let Some(y) = (k.y + dy).checked_sub(half).filter(|&y| y < OUTPUT_SIZE) else { continue };
            for dx in 0..STAMP {
                let Some(x) = (k.x + dx).checked_sub(half).filter(|&x| x < OUTPUT_SIZE) else { continue };
                f(y * OUTPUT_SIZE + x, dy * STAMP + dx, k.w);
            }
        }
    }
}

impl GeneratorNet {
    pub fn new(config: GeneratorNetConfig, in_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = config.encoder;
        let d = config.decoder;
        let enc = (0..4)
            .map(|i| {
                let cin = if i == 0 { in_channels + 2 } else { e[i - 1] };
                Conv2d::new(&format!("enc{}", i + 1), cin, e[i], 3, 2, 1, 1.0, &mut rng)
            })
            .collect();
        // decoder i consumes the previous stage plus the matching encoder skip
        let dec_in = [e[3] + e[2], d[0] + e[1], d[1] + e[0], d[2]];
        let dec = (0..4)
            .map(|i| Conv2d::new(&format!("dec{}", i + 1), dec_in[i], d[i], 3, 1, 1, 1.0, &mut rng))
            .collect();
        let out = Conv2d::new("out", d[3], 3, 3, 1, 1, 0.5, &mut rng);
        Self {
            config,
            in_channels,
            enc,
            dec,
            out,
            pattern: Param::zeros("out.pattern", &[3, OUTPUT_SIZE, OUTPUT_SIZE]),
            stamp: (in_channels > 3).then(|| Param::zeros("out.stamp", &[3, STAMP, STAMP])),
        }
    }

    /// Returns the perturbation `tanh(.) * scale` with shape `(n, 3, 255, 255)`.
    pub fn forward(&self, input: &Tensor, scale: f32, keep: bool) -> Result<(Tensor, Option<GeneratorCache>)> {
        if input.c() != self.in_channels || input.h() != INPUT_SIZE || input.w() != INPUT_SIZE {
            return Err(Error::Shape(format!(
                "generator input {:?}, expected (_, {}, {INPUT_SIZE}, {INPUT_SIZE})",
                input.shape, self.in_channels
            )));
        }
        let slope = self.config.slope;
        let mut x = input.clone();
        x.data.iter_mut().for_each(|v| *v -= 0.5);
        let x = concat_channels(&x, &coordinates(input.n()));
        let mut enc = Vec::with_capacity(4);
        let mut h = x.clone();
        for c in &self.enc {
            h = leaky_relu(c.forward(&h), slope);
            enc.push(h.clone());
        }
        let mut dec_in = Vec::with_capacity(4);
        let mut dec_out = Vec::with_capacity(4);
        for (i, c) in self.dec.iter().enumerate() {
            let up = upsample_nearest(&h, DEC_SIZES[i], DEC_SIZES[i]);
            let inp = if i < 3 { concat_channels(&up, &enc[2 - i]) } else { up };
            h = leaky_relu(c.forward(&inp), slope);
            dec_in.push(inp);
            dec_out.push(h.clone());
        }
        let out_in = upsample_nearest(&h, OUTPUT_SIZE, OUTPUT_SIZE);
        let mut pre = self.out.forward(&out_in);
        for item in pre.data.chunks_mut(self.pattern.len()) {
            for (v, b) in item.iter_mut().zip(&self.pattern.value) {
                *v += PATTERN_GAIN * b;
            }
        }
        let cells = match &self.stamp {
            Some(p) => {
                let cells = mask_cells(input);
                let (plane, sp) = (OUTPUT_SIZE * OUTPUT_SIZE, STAMP * STAMP);
                for (item, cs) in pre.data.chunks_mut(3 * plane).zip(&cells) {
                    for ch in 0..3 {
                        let (o, st) = (&mut item[ch * plane..(ch + 1) * plane], &p.value[ch * sp..(ch + 1) * sp]);
                        for_stamp(cs, |i, j, w| o[i] += PATTERN_GAIN * w * st[j]);
                    }
                }
                cells
            }
            None => Vec::new(),
        };
        let t = tanh(pre);
        let mut delta = t.clone();
        delta.data.iter_mut().for_each(|v| *v *= scale);
        let cache = keep.then(|| GeneratorCache {
            input: x,
            enc,
            dec_in,
            dec_out,
            out_in,
            cells,
            tanh: t,
            scale,
        });
        Ok((delta, cache))
    }

    /// Accumulates parameter gradients for `d_delta = dL/d(delta)`.
    pub fn backward_params(&mut self, cache: &GeneratorCache, d_delta: &Tensor) {
        let slope = self.config.slope;
        let mut g = d_delta.clone();
        g.data.iter_mut().for_each(|v| *v *= cache.scale);
        let g = tanh_backward(&cache.tanh, g);
        for item in g.data.chunks(self.pattern.len()) {
            for (pg, v) in self.pattern.grad.iter_mut().zip(item) {
                *pg += PATTERN_GAIN * v;
            }
        }
        if let Some(p) = self.stamp.as_mut() {
            let (plane, sp) = (OUTPUT_SIZE * OUTPUT_SIZE, STAMP * STAMP);
            for (item, cs) in g.data.chunks(3 * plane).zip(&cache.cells) {
                for ch in 0..3 {
                    let (gi, st) = (&item[ch * plane..(ch + 1) * plane], &mut p.grad[ch * sp..(ch + 1) * sp]);
                    for_stamp(cs, |i, j, w| st[j] += PATTERN_GAIN * w * gi[i]);
                }
            }
        }
        self.out.backward_params(&cache.out_in, &g);
        let d_up = self.out.backward_input(cache.out_in.shape, &g);
        let mut dh = upsample_nearest_backward(cache.dec_out[3].shape, &d_up);
        let e = self.config.encoder;
        let mut d_skip: Vec<Option<Tensor>> = vec![None, None, None];
        for i in (0..4).rev() {
            let gi = leaky_relu_backward(&cache.dec_out[i], dh, slope);
            self.dec[i].backward_params(&cache.dec_in[i], &gi);
            let d_in = self.dec[i].backward_input(cache.dec_in[i].shape, &gi);
            let prev_shape = if i == 0 { cache.enc[3].shape } else { cache.dec_out[i - 1].shape };
            let d_up = if i < 3 {
                let up_c = d_in.c() - e[2 - i];
                let (a, b) = split_channels(&d_in, up_c);
                d_skip[2 - i] = Some(b);
                a
            } else {
                d_in
            };
            dh = upsample_nearest_backward(prev_shape, &d_up);
        }
        // dh is now the gradient at the deepest encoder output
        for i in (0..4).rev() {
            if i < 3 {
                if let Some(s) = d_skip[i].take() {
                    dh.add_assign(&s);
                }
            }
            let gi = leaky_relu_backward(&cache.enc[i], dh, slope);
            let x = if i == 0 { &cache.input } else { &cache.enc[i - 1] };
            self.enc[i].backward_params(x, &gi);
            if i == 0 {
                break;
            }
            dh = self.enc[i].backward_input(x.shape, &gi);
        }
    }
}

impl Module for GeneratorNet {
    fn params(&self) -> Vec<&Param> {
        self.enc
            .iter()
            .chain(&self.dec)
            .chain(std::iter::once(&self.out))
            .flat_map(|c| [&c.weight, &c.bias])
            .chain(std::iter::once(&self.pattern))
            .chain(self.stamp.as_ref())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.enc
            .iter_mut()
            .chain(self.dec.iter_mut())
            .chain(std::iter::once(&mut self.out))
            .flat_map(|c| [&mut c.weight, &mut c.bias])
            .chain(std::iter::once(&mut self.pattern))
            .chain(self.stamp.as_mut())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> GeneratorNetConfig {
        GeneratorNetConfig {
            encoder: [3, 3, 3, 3],
            decoder: [3, 3, 3, 3],
            // no kinks, so finite differences are exact up to rounding
            slope: 1.0,
        }
    }

    #[test]
    fn output_is_bounded() {
        let net = GeneratorNet::new(GeneratorNetConfig::default(), 4, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec([2, 4, 127, 127], (0..2 * 4 * 127 * 127).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let (d, _) = net.forward(&x, 16.0 / 255.0, false).unwrap();
        assert_eq!(d.shape, [2, 3, 255, 255]);
        assert!(d.data.iter().all(|v| v.abs() <= 16.0 / 255.0));
        assert!(net.forward(&Tensor::zeros([1, 3, 127, 127]), 1.0, false).is_err());
    }

    #[test]
    fn stamp_goes_to_the_mask_centroid() {
        let grid = AnchorGrid::default_search();
        let mut m = crate::generator::ConditionMask::zeros(grid.score_size);
        m.set(16, 12, true);
        m.set(0, 24, true);
        let ch = crate::generator::upsample_mask(&m, INPUT_SIZE);
        let mut data = vec![0.0; 3 * INPUT_SIZE * INPUT_SIZE];
        data.extend_from_slice(&ch.data);
        let cells = mask_cells(&Tensor::from_vec([1, 4, INPUT_SIZE, INPUT_SIZE], data).unwrap());
        // centroid of rows 0 and 16, cols 24 and 12
        assert_eq!(cells[0], vec![MaskCell { y: 95, x: 175, w: 1.0 }]);
        let one = crate::generator::upsample_mask(&crate::generator::ConditionMask::zeros(grid.score_size), INPUT_SIZE);
        let mut data = vec![0.0; 3 * INPUT_SIZE * INPUT_SIZE];
        data.extend_from_slice(&one.data);
        assert!(mask_cells(&Tensor::from_vec([1, 4, INPUT_SIZE, INPUT_SIZE], data).unwrap())[0].is_empty());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = GeneratorNet::new(small(), 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec([1, 4, 127, 127], (0..4 * 127 * 127).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let w = Tensor::from_vec([1, 3, 255, 255], (0..3 * 255 * 255).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (_, cache) = net.forward(&x, 0.5, true).unwrap();
        net.zero_grad();
        net.backward_params(&cache.unwrap(), &w);
        let objective = |n: &GeneratorNet| -> f64 {
            let (d, _) = n.forward(&x, 0.5, false).unwrap();
            d.data.iter().zip(&w.data).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let h = 1e-2f32;
        let names: Vec<String> = net.params().iter().map(|p| p.name.clone()).collect();
        let (mut fds, mut gs) = (Vec::new(), Vec::new());
        for (pi, name) in names.iter().enumerate() {
            let len = net.params()[pi].len();
            for i in [0, len - 1] {
                let mut a = net.clone();
                a.params_mut()[pi].value[i] += h;
                let mut b = net.clone();
                b.params_mut()[pi].value[i] -= h;
                let fd = (objective(&a) - objective(&b)) / (2.0 * h as f64);
                let g = net.params()[pi].grad[i] as f64;
                assert!((fd - g).abs() <= 2e-2 * fd.abs().max(g.abs()).max(0.5), "{name}[{i}]: fd {fd} vs {g}");
                fds.push(fd);
                gs.push(g);
            }
        }
        let dot: f64 = fds.iter().zip(&gs).map(|(a, b)| a * b).sum();
        let na = fds.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = gs.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999, "cosine {}", dot / (na * nb));
    }
}
