use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Additive search-region perturbation with its L-infinity budget.
///
/// `epsilon` is on the 0-255 scale; pixels live in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub delta: Image,
    pub epsilon: f64,
}

/// Serializable summary written next to attack outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationStats {
    pub epsilon: f64,
    pub linf: f64,
    pub mean_abs: f64,
}

impl Perturbation {
    pub fn zeros(side: usize, epsilon: f64) -> Self {
        Self {
            delta: Image::new(3, side, side),
            epsilon,
        }
    }

    /// Budget on the unit pixel scale.
    pub fn bound(&self) -> f32 {
        (self.epsilon / 255.0) as f32
    }

    pub fn linf(&self) -> f64 {
        self.delta.data.iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64
    }

    pub fn stats(&self) -> PerturbationStats {
        let n = self.delta.data.len().max(1) as f64;
        PerturbationStats {
            epsilon: self.epsilon,
            linf: self.linf() * 255.0,
            mean_abs: self.delta.data.iter().map(|v| v.abs() as f64).sum::<f64>() / n * 255.0,
        }
    }
}

/// `clamp(clamp(s + delta, s - e, s + e), 0, 1)` per pixel. No network runs here.
pub fn apply(search: &Image, p: &Perturbation) -> Result<Image> {
    if !search.same_shape(&p.delta) {
        return Err(Error::Shape(format!(
            "perturbation {}x{}x{} vs search {}x{}x{}",
            p.delta.channels, p.delta.height, p.delta.width, search.channels, search.height, search.width
        )));
    }
    let e = p.bound();
    let mut out = search.clone();
    for (o, d) in out.data.iter_mut().zip(&p.delta.data) {
        let s = *o;
        *o = (s + d).clamp(s - e, s + e).clamp(0.0, 1.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, side: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * side * side).map(|_| rng.gen_range(0.0..=1.0)).collect();
        Image::from_vec(3, side, side, data).unwrap()
    }

    #[test]
    fn zero_delta_is_identity() {
        let s = random_image(1, 255);
        assert_eq!(apply(&s, &Perturbation::zeros(255, 8.0)).unwrap(), s);
    }

    #[test]
    fn huge_delta_saturates_at_budget() {
        let s = random_image(2, 255);
        let p = Perturbation {
            delta: Image::filled(3, 255, 255, 1000.0),
            epsilon: 16.0,
        };
        let out = apply(&s, &p).unwrap();
        let e = (16.0f64 / 255.0) as f32;
        for (o, v) in out.data.iter().zip(&s.data) {
            assert_eq!(*o, (v + e).min(1.0));
        }
    }

    #[test]
    fn random_delta_reaches_budget() {
        let s = Image::filled(3, 64, 64, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let delta = (0..3 * 64 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = Perturbation {
            delta: Image::from_vec(3, 64, 64, delta).unwrap(),
            epsilon: 8.0,
        };
        let out = apply(&s, &p).unwrap();
        let dev = out.max_abs_diff(&s) as f64;
        assert!((dev - 8.0 / 255.0).abs() < 1e-6, "{dev}");
    }

    #[test]
    fn shape_mismatch() {
        assert!(apply(&Image::new(3, 10, 10), &Perturbation::zeros(255, 8.0)).is_err());
    }

    proptest! {
        #[test]
        fn deviation_never_exceeds_budget(seed in 0u64..1000, eps in 1.0f64..32.0, scale in 0.0f32..100.0) {
            let s = random_image(seed, 16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let delta = (0..3 * 16 * 16).map(|_| rng.gen_range(-scale..=scale)).collect();
            let p = Perturbation { delta: Image::from_vec(3, 16, 16, delta).unwrap(), epsilon: eps };
            let out = apply(&s, &p).unwrap();
            let e = p.bound();
            for (o, v) in out.data.iter().zip(&s.data) {
                prop_assert!(*o >= (v - e).max(0.0) && *o <= (v + e).min(1.0));
            }
        }

        #[test]
        fn crop_commutes_with_apply(seed in 0u64..500, y in 0i64..8, x in 0i64..8) {
            let s = random_image(seed, 16);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
            let delta = (0..3 * 16 * 16).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let p = Perturbation { delta: Image::from_vec(3, 16, 16, delta).unwrap(), epsilon: 8.0 };
            let fill = [0.0; 3];
            let a = apply(&s, &p).unwrap().window(y, x, 8, 8, &fill);
            let pc = Perturbation { delta: p.delta.window(y, x, 8, 8, &fill), epsilon: 8.0 };
            let b = apply(&s.window(y, x, 8, 8, &fill), &pc).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
