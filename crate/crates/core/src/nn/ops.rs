use super::Tensor;
use crate::error::{Error, Result};

pub fn relu(mut x: Tensor) -> Tensor {
    for v in &mut x.data {
        *v = v.max(0.0);
    }
    x
}

/// Backward through ReLU given its output.
pub fn relu_backward(y: &Tensor, mut dy: Tensor) -> Tensor {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    dy
}

pub fn leaky_relu(mut x: Tensor, slope: f32) -> Tensor {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    x
}

/// Backward through leaky ReLU given its output (the sign is preserved).
pub fn leaky_relu_backward(y: &Tensor, mut dy: Tensor, slope: f32) -> Tensor {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v < 0.0 {
            *g *= slope;
        }
    }
    dy
}

pub fn tanh(mut x: Tensor) -> Tensor {
    for v in &mut x.data {
        *v = v.tanh();
    }
    x
}

pub fn tanh_backward(y: &Tensor, mut dy: Tensor) -> Tensor {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        *g *= 1.0 - v * v;
    }
    dy
}

fn nearest_index(o: usize, n_in: usize, n_out: usize) -> usize {
    (o * n_in / n_out).min(n_in - 1)
}

/// Nearest-neighbour resize to any output size.
pub fn upsample_nearest(x: &Tensor, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape;
    let xs: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        let src = &x.data[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data[p * oh * ow..(p + 1) * oh * ow];
        for oy in 0..oh {
            let row = &src[nearest_index(oy, h, oh) * w..][..w];
            for (d, &sx) in dst[oy * ow..(oy + 1) * ow].iter_mut().zip(&xs) {
                *d = row[sx];
            }
        }
    }
    y
}

pub fn upsample_nearest_backward(x_shape: [usize; 4], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let (oh, ow) = (dy.h(), dy.w());
    let xs: Vec<usize> = (0..ow).map(|o| nearest_index(o, w, ow)).collect();
    let mut dx = Tensor::zeros(x_shape);
    for p in 0..n * c {
        let src = &dy.data[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let row = &mut dst[nearest_index(oy, h, oh) * w..][..w];
            for (g, &sx) in src[oy * ow..(oy + 1) * ow].iter().zip(&xs) {
                row[sx] += g;
            }
        }
    }
    dx
}

/// Spatial window `[top, top + oh) x [left, left + ow)`.
pub fn crop(x: &Tensor, top: usize, left: usize, oh: usize, ow: usize) -> Tensor {
    let [n, c, h, w] = x.shape;
    assert!(top + oh <= h && left + ow <= w, "crop out of bounds");
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for p in 0..n * c {
        for r in 0..oh {
            let src = &x.data[(p * h + top + r) * w + left..][..ow];
            y.data[(p * oh + r) * ow..][..ow].copy_from_slice(src);
        }
    }
    y
}

pub fn crop_backward(x_shape: [usize; 4], top: usize, left: usize, dy: &Tensor) -> Tensor {
    let [n, c, h, w] = x_shape;
    let (oh, ow) = (dy.h(), dy.w());
    let mut dx = Tensor::zeros(x_shape);
    for p in 0..n * c {
        for r in 0..oh {
            let src = &dy.data[(p * oh + r) * ow..][..ow];
            dx.data[(p * h + top + r) * w + left..][..ow].copy_from_slice(src);
        }
    }
    dx
}

/// Crops the centered `oh x ow` window.
pub fn center_crop(x: &Tensor, oh: usize, ow: usize) -> (Tensor, usize, usize) {
    let top = (x.h() - oh) / 2;
    let left = (x.w() - ow) / 2;
    (crop(x, top, left, oh, ow), top, left)
}

pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.n(), b.n());
    assert_eq!((a.h(), a.w()), (b.h(), b.w()));
    let mut y = Tensor::zeros([a.n(), a.c() + b.c(), a.h(), a.w()]);
    for i in 0..a.n() {
        let dst = y.item_mut(i);
        dst[..a.item_len()].copy_from_slice(a.item(i));
        dst[a.item_len()..].copy_from_slice(b.item(i));
    }
    y
}

/// Splits a channel concatenation gradient back into its two parts.
pub fn split_channels(dy: &Tensor, first: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = dy.shape;
    let mut a = Tensor::zeros([n, first, h, w]);
    let mut b = Tensor::zeros([n, c - first, h, w]);
    let split = first * h * w;
    for i in 0..n {
        a.item_mut(i).copy_from_slice(&dy.item(i)[..split]);
        b.item_mut(i).copy_from_slice(&dy.item(i)[split..]);
    }
    (a, b)
}

/// Per-channel cross-correlation of `search` with `kernel`.
///
/// `kernel` holds either one item shared by the whole batch or one item per
/// search item.
pub fn xcorr_depthwise(search: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let [n, c, hs, ws] = search.shape;
    let [nk, ck, hk, wk] = kernel.shape;
    if ck != c || !(nk == 1 || nk == n) || hk > hs || wk > ws {
        return Err(Error::Shape(format!(
            "xcorr of search {:?} with kernel {:?}",
            search.shape, kernel.shape
        )));
    }
    let (oh, ow) = (hs - hk + 1, ws - wk + 1);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    for b in 0..n {
        let kb = if nk == 1 { 0 } else { b };
        for ch in 0..c {
            let s = &search.data[(b * c + ch) * hs * ws..][..hs * ws];
            let k = &kernel.data[(kb * c + ch) * hk * wk..][..hk * wk];
            let out = &mut y.data[(b * c + ch) * oh * ow..][..oh * ow];
            for u in 0..hk {
                for v in 0..wk {
                    let kv = k[u * wk + v];
                    for i in 0..oh {
                        let srow = &s[(i + u) * ws + v..][..ow];
                        for (o, &sv) in out[i * ow..(i + 1) * ow].iter_mut().zip(srow) {
                            *o += kv * sv;
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`xcorr_depthwise`] for search and kernel. A shared kernel
/// receives the sum over the batch.
pub fn xcorr_depthwise_backward(search: &Tensor, kernel: &Tensor, dy: &Tensor, need_kernel: bool) -> (Tensor, Option<Tensor>) {
    let [n, c, hs, ws] = search.shape;
    let [nk, _, hk, wk] = kernel.shape;
    let (oh, ow) = (dy.h(), dy.w());
    let mut ds = Tensor::zeros(search.shape);
    let mut dk = need_kernel.then(|| Tensor::zeros(kernel.shape));
    for b in 0..n {
        let kb = if nk == 1 { 0 } else { b };
        for ch in 0..c {
            let s = &search.data[(b * c + ch) * hs * ws..][..hs * ws];
            let k = &kernel.data[(kb * c + ch) * hk * wk..][..hk * wk];
            let g = &dy.data[(b * c + ch) * oh * ow..][..oh * ow];
            let dsp = &mut ds.data[(b * c + ch) * hs * ws..][..hs * ws];
            for u in 0..hk {
                for v in 0..wk {
                    let kv = k[u * wk + v];
                    let mut acc = 0.0f32;
                    for i in 0..oh {
                        let grow = &g[i * ow..(i + 1) * ow];
                        let srow = &s[(i + u) * ws + v..][..ow];
                        let drow = &mut dsp[(i + u) * ws + v..][..ow];
                        for ((d, &gv), &sv) in drow.iter_mut().zip(grow).zip(srow) {
                            *d += kv * gv;
                            acc += gv * sv;
                        }
                    }
                    if let Some(dk) = dk.as_mut() {
                        dk.data[(kb * c + ch) * hk * wk + u * wk + v] += acc;
                    }
                }
            }
        }
    }
    (ds, dk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data.iter().zip(&b.data).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    /// Every op here is linear in its input, so `<dy, f(x)> == <f^T(dy), x>`
    /// checks the backward pass exactly.
    #[test]
    fn linear_ops_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor([2, 3, 7, 5], &mut rng);

        let y = upsample_nearest(&x, 16, 11);
        let dy = rand_tensor(y.shape, &mut rng);
        let dx = upsample_nearest_backward(x.shape, &dy);
        assert!((dot(&dy, &y) - dot(&dx, &x)).abs() < 1e-4);

        let y = crop(&x, 2, 1, 4, 3);
        let dy = rand_tensor(y.shape, &mut rng);
        let dx = crop_backward(x.shape, 2, 1, &dy);
        assert!((dot(&dy, &y) - dot(&dx, &x)).abs() < 1e-4);

        let b = rand_tensor([2, 2, 7, 5], &mut rng);
        let y = concat_channels(&x, &b);
        let (da, db) = split_channels(&y, 3);
        assert_eq!(da, x);
        assert_eq!(db, b);
    }

    #[test]
    fn xcorr_matches_naive_and_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = rand_tensor([3, 2, 9, 8], &mut rng);
        for nk in [1, 3] {
            let k = rand_tensor([nk, 2, 4, 3], &mut rng);
            let y = xcorr_depthwise(&s, &k).unwrap();
            assert_eq!(y.shape, [3, 2, 6, 6]);
            for b in 0..3 {
                for c in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            let mut acc = 0.0;
                            for u in 0..4 {
                                for v in 0..3 {
                                    acc += s.at(b, c, i + u, j + v) * k.at(if nk == 1 { 0 } else { b }, c, u, v);
                                }
                            }
                            assert!((acc - y.at(b, c, i, j)).abs() < 1e-5);
                        }
                    }
                }
            }
            let dy = rand_tensor(y.shape, &mut rng);
            let (ds, dk) = xcorr_depthwise_backward(&s, &k, &dy, true);
            // y is bilinear: <dy, y> == <ds, s> == <dk, k>
            assert!((dot(&dy, &y) - dot(&ds, &s)).abs() < 1e-3);
            assert!((dot(&dy, &y) - dot(&dk.unwrap(), &k)).abs() < 1e-3);
        }
        let bad = rand_tensor([1, 3, 4, 3], &mut rng);
        assert!(xcorr_depthwise(&s, &bad).is_err());
    }

    #[test]
    fn nearest_upsample_of_constant() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest(&x, 4, 4);
        assert_eq!(&y.data[..4], &[1.0, 1.0, 2.0, 2.0]);
        assert_eq!(&y.data[12..], &[3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn activation_backward() {
        let x = Tensor::from_vec([1, 1, 1, 4], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let ones = Tensor::from_vec([1, 1, 1, 4], vec![1.0; 4]).unwrap();
        let y = relu(x.clone());
        assert_eq!(relu_backward(&y, ones.clone()).data, vec![0.0, 0.0, 1.0, 1.0]);
        let y = leaky_relu(x.clone(), 0.2);
        assert_eq!(leaky_relu_backward(&y, ones.clone(), 0.2).data, vec![0.2, 0.2, 1.0, 1.0]);
        let y = tanh(x.clone());
        let g = tanh_backward(&y, ones);
        for (gi, xi) in g.data.iter().zip(&x.data) {
            let expect = 1.0 - xi.tanh().powi(2);
            assert!((gi - expect).abs() < 1e-6);
        }
    }
}
