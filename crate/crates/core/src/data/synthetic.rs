//! Procedural tracking sequences: a textured rectangular sprite moving over a
//! smooth noise background, optionally with look-alike distractors.
//!
//! Frames are rendered on demand from the spec, so a corpus of hundreds of
//! sequences costs almost no memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Video;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Motion {
    ConstantVelocity { vx: f64, vy: f64 },
    Sinusoidal { ax: f64, ay: f64, period: f64, phase: f64 },
    RandomWalk { max_speed: f64, accel: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub object_w: f64,
    pub object_h: f64,
    /// Initial object center; `None` centers it in the frame.
    pub start: Option<(f64, f64)>,
    pub texture_seed: u64,
    pub background_seed: u64,
    pub motion: Motion,
    pub distractors: usize,
    /// Multiplicative size change per frame.
    pub scale_drift: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// A plausible random sequence derived entirely from `seed`.
    pub fn random(name: impl Into<String>, seed: u64, width: usize, height: usize, length: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5eed);
        let object_w: f64 = rng.gen_range(26.0..56.0);
        let aspect: f64 = rng.gen_range(0.6..1.6);
        let object_h = (object_w * aspect).clamp(20.0, 70.0);
        let speed: f64 = rng.gen_range(0.5..3.0);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let motion = match rng.gen_range(0..3) {
            0 => Motion::ConstantVelocity {
                vx: speed * theta.cos(),
                vy: speed * theta.sin(),
            },
            1 => Motion::Sinusoidal {
                ax: rng.gen_range(20.0..100.0),
                ay: rng.gen_range(10.0..70.0),
                period: rng.gen_range(60.0..200.0),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            },
            _ => Motion::RandomWalk {
                max_speed: speed + 0.5,
                accel: rng.gen_range(0.1..0.5),
            },
        };
        let margin_x = object_w / 2.0 + 4.0;
        let margin_y = object_h / 2.0 + 4.0;
        let start = (
            rng.gen_range(margin_x..width as f64 - margin_x),
            rng.gen_range(margin_y..height as f64 - margin_y),
        );
        Self {
            name: name.into(),
            width,
            height,
            length,
            object_w,
            object_h,
            start: Some(start),
            texture_seed: rng.gen(),
            background_seed: rng.gen(),
            motion,
            distractors: rng.gen_range(0..3),
            scale_drift: rng.gen_range(-0.002..0.002),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fits = self.object_w >= 4.0
            && self.object_h >= 4.0
            && self.object_w + 2.0 < self.width as f64
            && self.object_h + 2.0 < self.height as f64;
        if self.length == 0 || !fits {
            return Err(Error::InvalidConfig(format!("synthetic spec {} does not fit its frame", self.name)));
        }
        Ok(())
    }
}

/// Smooth color field evaluated at normalized coordinates, so a sprite keeps
/// its look while it changes size.
#[derive(Clone, Debug)]
struct Texture {
    grid: usize,
    colors: Vec<[f32; 3]>,
    stripe: [f32; 3],
    freq: (f32, f32),
    stripe_amp: f32,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, grid: usize, saturated: bool) -> Self {
        let color = |rng: &mut ChaCha8Rng| -> [f32; 3] {
            if saturated {
                [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]
            } else {
                let base: f32 = rng.gen_range(0.25..0.75);
                [
                    base + rng.gen_range(-0.12..0.12),
                    base + rng.gen_range(-0.12..0.12),
                    base + rng.gen_range(-0.12..0.12),
                ]
            }
        };
        let colors = (0..grid * grid).map(|_| color(rng)).collect();
        let stripe = color(rng);
        Self {
            grid,
            colors,
            stripe,
            freq: (rng.gen_range(1.0..5.0), rng.gen_range(1.0..5.0)),
            stripe_amp: if saturated { rng.gen_range(0.2..0.5) } else { rng.gen_range(0.0..0.15) },
        }
    }

    fn sample(&self, u: f32, v: f32) -> [f32; 3] {
        let g = (self.grid - 1) as f32;
        let (x, y) = (u.clamp(0.0, 1.0) * g, v.clamp(0.0, 1.0) * g);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.grid - 1), (y0 + 1).min(self.grid - 1));
        let (fx, fy) = (x - x0 as f32, y - y0 as f32);
        let at = |r: usize, c: usize| self.colors[r * self.grid + c];
        let s = ((u * self.freq.0 + v * self.freq.1) * std::f32::consts::TAU).sin() * 0.5 + 0.5;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = at(y0, x0)[c] * (1.0 - fx) + at(y0, x1)[c] * fx;
            let bot = at(y1, x0)[c] * (1.0 - fx) + at(y1, x1)[c] * fx;
            let base = top * (1.0 - fy) + bot * fy;
            *o = (base * (1.0 - self.stripe_amp * s) + self.stripe[c] * self.stripe_amp * s).clamp(0.0, 1.0);
        }
        out
    }
}

#[derive(Clone, Debug)]
struct Sprite {
    texture: Texture,
    boxes: Vec<BBox>,
}

/// One rendered-on-demand synthetic sequence.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    spec: SyntheticSpec,
    background: Image,
    target: Sprite,
    distractors: Vec<Sprite>,
}

fn fold(x: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return (lo + hi) / 2.0;
    }
    let span = hi - lo;
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn trajectory(spec: &SyntheticSpec, motion: &Motion, start: (f64, f64), rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let (fw, fh) = (spec.width as f64, spec.height as f64);
    let mut out = Vec::with_capacity(spec.length);
    let (mut px, mut py) = start;
    let (mut vx, mut vy) = (0.0, 0.0);
    for t in 0..spec.length {
        let grow = (1.0 + spec.scale_drift).powi(t as i32).clamp(0.6, 1.6);
        let w = (spec.object_w * grow).min(fw - 2.0).round().max(4.0);
        let h = (spec.object_h * grow).min(fh - 2.0).round().max(4.0);
        let (cx, cy) = match motion {
            Motion::ConstantVelocity { vx, vy } => (start.0 + vx * t as f64, start.1 + vy * t as f64),
            Motion::Sinusoidal { ax, ay, period, phase } => {
                let a = std::f64::consts::TAU * t as f64 / period + phase;
                (start.0 + ax * a.sin() - ax * phase.sin(), start.1 + ay * (2.0 * a).sin() - ay * (2.0 * phase).sin())
            }
            Motion::RandomWalk { max_speed, accel } => {
                if t > 0 {
                    vx = (vx + rng.gen_range(-accel..=*accel)).clamp(-max_speed, *max_speed);
                    vy = (vy + rng.gen_range(-accel..=*accel)).clamp(-max_speed, *max_speed);
                    px += vx;
                    py += vy;
                }
                (px, py)
            }
        };
        let cx = fold(cx, w / 2.0 + 1.0, fw - w / 2.0 - 1.0);
        let cy = fold(cy, h / 2.0 + 1.0, fh - h / 2.0 - 1.0);
        // snap to whole pixels so the rendered sprite matches its box exactly
        let x = (cx - w / 2.0).round();
        let y = (cy - h / 2.0).round();
        out.push(BBox::raw(x + w / 2.0, y + h / 2.0, w, h));
    }
    out
}

fn render_background(spec: &SyntheticSpec) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.background_seed);
    let coarse = Texture::new(&mut rng, 6, false);
    let fine = Texture::new(&mut rng, 16, false);
    let noise_amp: f32 = rng.gen_range(0.01..0.04);
    let mut img = Image::new(3, spec.height, spec.width);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let u = x as f32 / spec.width as f32;
            let v = y as f32 / spec.height as f32;
            let a = coarse.sample(u, v);
            let b = fine.sample(u, v);
            for c in 0..3 {
                let n: f32 = rng.gen_range(-noise_amp..noise_amp);
                img.set(c, y, x, (0.6 * a[c] + 0.4 * b[c] + n).clamp(0.0, 1.0));
            }
        }
    }
    img
}

impl SyntheticVideo {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let start = spec.start.unwrap_or((spec.width as f64 / 2.0, spec.height as f64 / 2.0));
        let mut tex_rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
        let target = Sprite {
            texture: Texture::new(&mut tex_rng, 4, true),
            boxes: trajectory(&spec, &spec.motion, start, &mut rng),
        };
        let distractors = (0..spec.distractors)
            .map(|_| {
                let mut d = spec.clone();
                d.object_w *= rng.gen_range(0.8..1.2);
                d.object_h *= rng.gen_range(0.8..1.2);
                let speed: f64 = rng.gen_range(0.5..2.5);
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let motion = Motion::ConstantVelocity {
                    vx: speed * theta.cos(),
                    vy: speed * theta.sin(),
                };
                let start = (rng.gen_range(0.0..spec.width as f64), rng.gen_range(0.0..spec.height as f64));
                Sprite {
                    texture: Texture::new(&mut tex_rng, 4, true),
                    boxes: trajectory(&d, &motion, start, &mut rng),
                }
            })
            .collect();
        Ok(Self {
            background: render_background(&spec),
            spec,
            target,
            distractors,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn draw(img: &mut Image, sprite: &Sprite, t: usize) {
        let b = sprite.boxes[t];
        let (x1, y1, _, _) = b.corners();
        let (x0, y0) = (x1.round() as i64, y1.round() as i64);
        let (w, h) = (b.w as i64, b.h as i64);
        for v in 0..h {
            let y = y0 + v;
            if y < 0 || y >= img.height as i64 {
                continue;
            }
            for u in 0..w {
                let x = x0 + u;
                if x < 0 || x >= img.width as i64 {
                    continue;
                }
                let col = sprite
                    .texture
                    .sample((u as f32 + 0.5) / w as f32, (v as f32 + 0.5) / h as f32);
                for (c, &val) in col.iter().enumerate() {
                    img.set(c, y as usize, x as usize, val);
                }
            }
        }
    }
}

impl Video for SyntheticVideo {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn len(&self) -> usize {
        self.spec.length
    }

    fn frame(&self, i: usize) -> Result<Image> {
        let mut img = self.background.clone();
        for d in &self.distractors {
            Self::draw(&mut img, d, i);
        }
        Self::draw(&mut img, &self.target, i);
        Ok(img)
    }

    fn gt(&self, i: usize) -> BBox {
        self.target.boxes[i]
    }

    fn frame_size(&self) -> (usize, usize) {
        (self.spec.width, self.spec.height)
    }
}

/// Renders a whole sequence.
pub fn generate_video(spec: &SyntheticSpec) -> Result<(Vec<Image>, Vec<BBox>)> {
    let video = SyntheticVideo::new(spec.clone())?;
    let frames = (0..video.len()).map(|i| video.frame(i)).collect::<Result<Vec<_>>>()?;
    let boxes = (0..video.len()).map(|i| video.gt(i)).collect();
    Ok((frames, boxes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(motion: Motion) -> SyntheticSpec {
        SyntheticSpec {
            name: "t".into(),
            width: 320,
            height: 240,
            length: 12,
            object_w: 40.0,
            object_h: 30.0,
            start: Some((100.0, 100.0)),
            texture_seed: 1,
            background_seed: 2,
            motion,
            distractors: 1,
            scale_drift: 0.0,
            seed: 3,
        }
    }

    #[test]
    fn zero_velocity_keeps_box_constant() {
        let (_, boxes) = generate_video(&still(Motion::ConstantVelocity { vx: 0.0, vy: 0.0 })).unwrap();
        assert!(boxes.iter().all(|b| *b == boxes[0]));
    }

    #[test]
    fn constant_velocity_displacement() {
        let (_, boxes) = generate_video(&still(Motion::ConstantVelocity { vx: 2.0, vy: 1.0 })).unwrap();
        assert_eq!(boxes[10].cx - boxes[0].cx, 20.0);
        assert_eq!(boxes[10].cy - boxes[0].cy, 10.0);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SyntheticSpec::random("r", 42, 320, 240, 20);
        let (fa, ba) = generate_video(&spec).unwrap();
        let (fb, bb) = generate_video(&spec).unwrap();
        assert_eq!(ba, bb);
        assert!(fa.iter().zip(&fb).all(|(a, b)| a.data == b.data));
        let (fc, _) = generate_video(&SyntheticSpec::random("r", 43, 320, 240, 20)).unwrap();
        assert_ne!(fa[0].data, fc[0].data);
    }

    #[test]
    fn boxes_stay_inside_frame() {
        for seed in 0..40 {
            let spec = SyntheticSpec::random("r", seed, 320, 240, 120);
            let video = SyntheticVideo::new(spec).unwrap();
            for i in 0..video.len() {
                let b = video.gt(i);
                b.validate().unwrap();
                let (x1, y1, x2, y2) = b.corners();
                assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 320.0 && y2 <= 240.0, "seed {seed} frame {i}: {b:?}");
            }
        }
    }

    #[test]
    fn sprite_is_drawn_inside_its_box() {
        let spec = still(Motion::ConstantVelocity { vx: 0.0, vy: 0.0 });
        let mut bare = spec.clone();
        bare.distractors = 0;
        let video = SyntheticVideo::new(bare).unwrap();
        let frame = video.frame(0).unwrap();
        let b = video.gt(0);
        // pixels just outside the box are background
        let (x1, y1, _, _) = b.corners();
        let outside = (y1 as usize - 1, x1 as usize - 1);
        assert_eq!(frame.get(0, outside.0, outside.1), video.background.get(0, outside.0, outside.1));
    }

    #[test]
    fn rejects_oversized_object() {
        let mut spec = still(Motion::ConstantVelocity { vx: 0.0, vy: 0.0 });
        spec.object_w = 400.0;
        assert!(SyntheticVideo::new(spec).is_err());
    }
}
