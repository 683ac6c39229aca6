use rand::Rng;

use super::{gemm, Param, Tensor};

/// Square-kernel 2-D convolution lowered to im2col + sgemm.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        gain: f32,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_c * k * k;
        Self {
            weight: Param::he(format!("{name}.weight"), &[out_c, in_c, k, k], fan_in, gain, rng),
            bias: Param::zeros(format!("{name}.bias"), &[out_c]),
            in_c,
            out_c,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn ckk(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, col: &mut [f32]) {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = oh * ow;
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f32], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [f32]) {
        let (k, s, pad) = (self.k, self.stride, self.pad as isize);
        let p = oh * ow;
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = ((c * k + ki) * k + kj) * p;
                    for oy in 0..oh {
                        let iy = (oy * s + ki) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &col[row + oy * ow..row + (oy + 1) * ow];
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, &v) in src.iter().enumerate() {
                            let ix = (ox * s + kj) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.c(), self.in_c, "{}: input channels", self.weight.name);
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = self.out_hw(h, w);
        let p = oh * ow;
        let ckk = self.ckk();
        let mut y = Tensor::zeros([x.n(), self.out_c, oh, ow]);
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; ckk * p] };
        for b in 0..x.n() {
            let out = y.item_mut(b);
            for (o, chunk) in out.chunks_mut(p).enumerate() {
                chunk.fill(self.bias.value[o]);
            }
            let src: &[f32] = if self.is_pointwise() {
                x.item(b)
            } else {
                self.im2col(x.item(b), h, w, oh, ow, &mut col);
                &col
            };
            gemm(self.out_c, ckk, p, &self.weight.value, ckk as isize, 1, src, p as isize, 1, out, 1.0);
        }
        y
    }

    /// Gradient with respect to the input.
    pub fn backward_input(&self, x_shape: [usize; 4], dy: &Tensor) -> Tensor {
        let [n, _, h, w] = x_shape;
        let (oh, ow) = (dy.h(), dy.w());
        let p = oh * ow;
        let ckk = self.ckk();
        let mut dx = Tensor::zeros(x_shape);
        let mut dcol = vec![0.0; ckk * p];
        for b in 0..n {
            if self.is_pointwise() {
                gemm(ckk, self.out_c, p, &self.weight.value, 1, ckk as isize, dy.item(b), p as isize, 1, dx.item_mut(b), 0.0);
            } else {
                gemm(ckk, self.out_c, p, &self.weight.value, 1, ckk as isize, dy.item(b), p as isize, 1, &mut dcol, 0.0);
                self.col2im(&dcol, h, w, oh, ow, dx.item_mut(b));
            }
        }
        dx
    }

    /// Accumulates weight and bias gradients.
    pub fn backward_params(&mut self, x: &Tensor, dy: &Tensor) {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (dy.h(), dy.w());
        let p = oh * ow;
        let ckk = self.ckk();
        if self.weight.grad.len() != self.weight.value.len() {
            self.weight.zero_grad();
            self.bias.zero_grad();
        }
        let mut col = if self.is_pointwise() { Vec::new() } else { vec![0.0; ckk * p] };
        for b in 0..x.n() {
            let g = dy.item(b);
            for (o, chunk) in g.chunks(p).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f32>();
            }
            let src: &[f32] = if self.is_pointwise() {
                x.item(b)
            } else {
                self.im2col(x.item(b), h, w, oh, ow, &mut col);
                &col
            };
            gemm(self.out_c, p, ckk, g, p as isize, 1, src, 1, p as isize, &mut self.weight.grad, 1.0);
        }
    }
}
