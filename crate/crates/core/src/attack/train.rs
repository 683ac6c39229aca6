//! Generator training against a frozen tracker.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Video};
use crate::error::{Error, Result};
use crate::generator::{
    apply, direction, make_direction_mask, ConditionMask, Generator, GeneratorConfig, GeneratorNetConfig, Perturbation,
};
use crate::geometry::{search_side, AnchorGrid, BBox, CropWindow};
use crate::image::Image;
use crate::losses::{
    fool_loss, perceptibility_loss, select_anchors, shift_loss_targeted, shift_loss_untargeted, LossConfig, LossParts,
};
use crate::nn::{Adam, Module, Tensor};
use crate::tracker::{ScoreMaps, TemplateEmbedding, Tracker, SEARCH_SIZE};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMode {
    #[default]
    Untargeted,
    Targeted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackTrainConfig {
    pub mode: AttackMode,
    pub learning_rate: f32,
    pub epsilon: f64,
    pub frame_stride: usize,
    /// Search crops per template.
    pub searches: usize,
    pub epochs: usize,
    pub templates_per_step: usize,
    /// Uniform shift of the search crops around the gt center, in crop pixels.
    pub jitter: f64,
    /// Directions for targeted training.
    pub directions: usize,
    /// Cap on the number of training videos; 0 uses all.
    pub max_videos: usize,
    pub seed: u64,
    pub net: GeneratorNetConfig,
    pub loss: LossConfig,
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        Self {
            mode: AttackMode::Untargeted,
            learning_rate: 1e-3,
            epsilon: 16.0,
            frame_stride: 10,
            searches: 8,
            epochs: 3,
            templates_per_step: 1,
            jitter: 0.0,
            directions: 12,
            max_videos: 0,
            seed: 0,
            net: GeneratorNetConfig::default(),
            // a heavier shift term; at 0.1 the decoy never forms on this tracker
            loss: LossConfig {
                lambda3: 10.0,
                ..LossConfig::default()
            },
        }
    }
}

impl AttackTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.frame_stride == 0 {
            return Err(Error::InvalidConfig("frame stride must be at least 1".into()));
        }
        if self.searches == 0 {
            return Err(Error::InvalidConfig("need at least one search crop per template".into()));
        }
        if self.templates_per_step == 0 || self.directions == 0 {
            return Err(Error::InvalidConfig("templates per step and directions must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            net: self.net.clone(),
            conditional: self.mode == AttackMode::Targeted,
            epsilon: self.epsilon,
            seed: self.seed,
        }
    }
}

/// One template and its search crops, all centered on the ground truth.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    pub template: Image,
    pub searches: Vec<Image>,
    pub gt_boxes: Vec<BBox>,
    pub frames: Vec<usize>,
    pub windows: Vec<CropWindow>,
}

/// Template from frame 0 and search crops at frames `stride, 2 * stride, ...`.
/// Returns `Ok(None)` when the video is too short.
pub fn sample_training_batch(video: &dyn Video, cfg: &AttackTrainConfig, rng: &mut impl Rng) -> Result<Option<TrainingBatch>> {
    if cfg.searches == 0 {
        return Err(Error::InvalidConfig("empty training batch: zero search crops".into()));
    }
    if video.len() <= cfg.searches * cfg.frame_stride {
        log::warn!("skipping {}: {} frames is too short", video.name(), video.len());
        return Ok(None);
    }
    let template = Tracker::template_crop(&video.frame(0)?, &video.gt(0))?;
    let mut batch = TrainingBatch {
        template,
        searches: Vec::with_capacity(cfg.searches),
        gt_boxes: Vec::with_capacity(cfg.searches),
        frames: Vec::with_capacity(cfg.searches),
        windows: Vec::with_capacity(cfg.searches),
    };
    for i in 1..=cfg.searches {
        let f = i * cfg.frame_stride;
        let gt = video.gt(f);
        let side = search_side(gt.w, gt.h);
        let s = SEARCH_SIZE as f64 / side;
        let (jx, jy) = if cfg.jitter > 0.0 {
            (rng.gen_range(-cfg.jitter..=cfg.jitter) / s, rng.gen_range(-cfg.jitter..=cfg.jitter) / s)
        } else {
            (0.0, 0.0)
        };
        let window = CropWindow::around((gt.cx + jx, gt.cy + jy), side, SEARCH_SIZE)?;
        batch.searches.push(window.extract(&video.frame(f)?));
        batch.gt_boxes.push(gt);
        batch.frames.push(f);
        batch.windows.push(window);
    }
    Ok(Some(batch))
}

/// Targeted-mode target box for direction `k`: a `box_side` square whose
/// center sits `d` strides from the search center along the direction.
pub fn direction_target(k: usize, count: usize, grid: &AnchorGrid, cfg: &LossConfig) -> Result<BBox> {
    let (ux, uy) = direction(k, count);
    let r = cfg.d as f64 * grid.stride;
    BBox::new(grid.region_center + r * ux, grid.region_center + r * uy, cfg.target_box_side, cfg.target_box_side)
}

/// Per-step training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub fool: f64,
    pub shift: f64,
    pub perceptibility: f64,
    pub total: f64,
}

pub const TRAIN_LOG_HEADER: &str = "step,L_fool,L_shift,L_p,total";

pub fn write_train_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{TRAIN_LOG_HEADER}")?;
    for s in log {
        writeln!(f, "{},{:.6},{:.6},{:.6},{:.6}", s.step, s.fool, s.shift, s.perceptibility, s.total)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AttackTrainReport {
    pub steps: Vec<StepLog>,
    pub epoch_losses: Vec<f64>,
    pub generator_calls: usize,
    pub templates_seen: usize,
    pub seconds: f64,
}

/// Clean-side data for one template, reused across epochs.
struct Prepared {
    video: usize,
    embedding: TemplateEmbedding,
    clean: Vec<ScoreMaps>,
}

/// Loss parts and the gradient with respect to each adversarial search.
pub struct SearchObjective {
    pub parts: LossParts,
    pub grads: Tensor,
}

/// Evaluates the full objective on adversarial searches and backpropagates
/// it through the frozen tracker to the search pixels.
pub fn search_objective(
    tracker: &Tracker,
    embedding: &TemplateEmbedding,
    clean_searches: &[Image],
    clean_maps: &[ScoreMaps],
    adv: &Tensor,
    target: Option<&BBox>,
    cfg: &LossConfig,
) -> Result<SearchObjective> {
    let (cls, reg, cache) = tracker.net.forward_cached(embedding, adv)?;
    let maps = ScoreMaps::from_tensors(&cls, &reg);
    let n = maps.len() as f64;
    let mut parts = LossParts::default();
    let mut dmaps = Vec::with_capacity(maps.len());
    let mut dpix = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        let fool = fool_loss(&clean_maps[i], m, cfg)?;
        let shift = match target {
            None => shift_loss_untargeted(m, &tracker.grid, cfg)?,
            Some(t) => shift_loss_targeted(m, &tracker.grid, t, cfg)?,
        };
        let (lp, gp) = perceptibility_loss(&clean_searches[i], &adv.image(i), cfg)?;
        parts.add(&LossParts {
            fool: fool.value / n,
            shift: shift.value / n,
            perceptibility: lp / n,
        });
        let mut g = fool.grad;
        g.add_assign(&shift.grad);
        g.scale((1.0 / n) as f32);
        dmaps.push(g);
        dpix.extend(gp.into_iter().map(|v| v / n as f32));
    }
    let (dcls, dreg) = ScoreMaps::to_tensors(&dmaps);
    let mut grads = tracker.net.backward_search(&cache, dcls, dreg);
    for (g, p) in grads.data.iter_mut().zip(&dpix) {
        *g += p;
    }
    Ok(SearchObjective { parts, grads })
}

fn stack_adversarial(searches: &[Image], p: &Perturbation) -> Result<Tensor> {
    let adv = searches.iter().map(|s| apply(s, p)).collect::<Result<Vec<_>>>()?;
    Tensor::from_images(&adv.iter().collect::<Vec<_>>())
}

/// Sums per-search gradients into a perturbation gradient, masking pixels
/// where the clip is active.
fn delta_gradient(searches: &[Image], p: &Perturbation, grads: &Tensor) -> Tensor {
    let len = p.delta.data.len();
    let e = p.bound();
    let mut out = vec![0.0f32; len];
    for (i, s) in searches.iter().enumerate() {
        let g = grads.item(i);
        for k in 0..len {
            let v = s.data[k] + p.delta.data[k];
            if v >= 0.0 && v <= 1.0 && (v - s.data[k]).abs() <= e {
                out[k] += g[k];
            }
        }
    }
    Tensor {
        shape: [1, 3, p.delta.height, p.delta.width],
        data: out,
    }
}

/// Trains a generator against `tracker`, which is only read.
pub fn train_generator(tracker: &Tracker, data: &Dataset, cfg: &AttackTrainConfig) -> Result<(Generator, AttackTrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut generator = Generator::new(cfg.generator_config());
    let limit = if cfg.max_videos == 0 { data.len() } else { cfg.max_videos.min(data.len()) };

    let mut batches = Vec::new();
    let mut prepared = Vec::new();
    for (vi, video) in data.iter().take(limit).enumerate() {
        let Some(b) = sample_training_batch(video.as_ref(), cfg, &mut rng)? else {
            continue;
        };
        let embedding = tracker.embed_template(&b.template)?;
        let clean = tracker.forward_batch(&embedding, &b.searches.iter().collect::<Vec<_>>())?;
        prepared.push(Prepared { video: vi, embedding, clean });
        batches.push(b);
    }
    if prepared.is_empty() {
        return Err(Error::InvalidConfig("no training video is long enough".into()));
    }
    log::info!("attack training on {} templates", prepared.len());

    let mut adam = Adam::new(cfg.learning_rate);
    let mut report = AttackTrainReport::default();
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for chunk in order.chunks(cfg.templates_per_step) {
            generator.net.zero_grad();
            let mut step_parts = LossParts::default();
            let masks: Vec<Option<(ConditionMask, BBox)>> = chunk
                .iter()
                .map(|_| match cfg.mode {
                    AttackMode::Untargeted => Ok(None),
                    AttackMode::Targeted => {
                        let k = rng.gen_range(0..cfg.directions);
                        let mask = make_direction_mask(k, cfg.directions, cfg.loss.d as f64, cfg.loss.target_box_side, &tracker.grid)?;
                        Ok(Some((mask, direction_target(k, cfg.directions, &tracker.grid, &cfg.loss)?)))
                    }
                })
                .collect::<Result<_>>()?;
            let inputs = chunk
                .iter()
                .zip(&masks)
                .map(|(&i, m)| generator.input(&batches[i].template, m.as_ref().map(|m| &m.0)))
                .collect::<Result<Vec<_>>>()?;
            let x = Tensor::from_images(&inputs.iter().collect::<Vec<_>>())?;
            let (deltas, cache) = generator.forward_train(&x)?;
            let mut d_delta = Tensor::zeros(deltas.shape);
            for (bi, &i) in chunk.iter().enumerate() {
                let p = Perturbation {
                    delta: deltas.image(bi),
                    epsilon: cfg.epsilon,
                };
                let b = &batches[i];
                let adv = stack_adversarial(&b.searches, &p)?;
                let target = masks[bi].as_ref().map(|m| &m.1);
                let obj = search_objective(tracker, &prepared[i].embedding, &b.searches, &prepared[i].clean, &adv, target, &cfg.loss)?;
                let g = delta_gradient(&b.searches, &p, &obj.grads);
                let scale = 1.0 / chunk.len() as f32;
                for (o, v) in d_delta.item_mut(bi).iter_mut().zip(&g.data) {
                    *o = v * scale;
                }
                step_parts.add(&obj.parts.scaled(1.0 / chunk.len() as f64));
            }
            let total = step_parts.total();
            if !total.is_finite() {
                return Err(Error::Diverged(format!(
                    "generator loss {total} at step {step} (epoch {epoch}, video {}), seed {}, config {}",
                    prepared[chunk[0]].video,
                    cfg.seed,
                    serde_json::to_string(cfg).unwrap_or_default()
                )));
            }
            generator.net.backward_params(&cache, &d_delta);
            adam.step(&mut generator.net.params_mut());
            report.steps.push(StepLog {
                step,
                fool: step_parts.fool,
                shift: step_parts.shift,
                perceptibility: step_parts.perceptibility,
                total,
            });
            epoch_total += total * chunk.len() as f64;
            step += 1;
        }
        let mean = epoch_total / prepared.len() as f64;
        log::info!("attack epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    report.generator_calls = generator.calls();
    report.templates_seen = prepared.len() * cfg.epochs;
    report.seconds = start.elapsed().as_secs_f64();
    generator.reset_calls();
    Ok((generator, report))
}

/// Mean clean-selected foreground probability on adversarial searches, and
/// for targeted generators the mean foreground probability at the masked
/// target cells. Used to check that training moved the tracker.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttackProbe {
    pub selected_fg: f64,
    pub target_fg: f64,
}

pub fn probe_generator(tracker: &Tracker, generator: &Generator, data: &Dataset, cfg: &AttackTrainConfig) -> Result<AttackProbe> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37);
    let (mut sel, mut nsel, mut tgt, mut ntgt) = (0.0, 0usize, 0.0, 0usize);
    for (vi, video) in data.iter().enumerate() {
        let Some(b) = sample_training_batch(video.as_ref(), cfg, &mut rng)? else {
            continue;
        };
        let emb = tracker.embed_template(&b.template)?;
        let clean = tracker.forward_batch(&emb, &b.searches.iter().collect::<Vec<_>>())?;
        let mask = if generator.config.conditional {
            let k = vi % cfg.directions;
            Some(make_direction_mask(k, cfg.directions, cfg.loss.d as f64, cfg.loss.target_box_side, &tracker.grid)?)
        } else {
            None
        };
        let p = generator.generate(&b.template, mask.as_ref())?;
        let adv = b.searches.iter().map(|s| apply(s, &p)).collect::<Result<Vec<_>>>()?;
        let maps = tracker.forward_batch(&emb, &adv.iter().collect::<Vec<_>>())?;
        for (c, m) in clean.iter().zip(&maps) {
            for j in select_anchors(c, &cfg.loss) {
                sel += m.fg_prob(j);
                nsel += 1;
            }
            if let Some(mask) = &mask {
                for (row, col) in mask.active() {
                    let best = (0..m.k).map(|k| m.fg_prob((k * m.size + row) * m.size + col)).fold(0.0, f64::max);
                    tgt += best;
                    ntgt += 1;
                }
            }
        }
    }
    Ok(AttackProbe {
        selected_fg: sel / nsel.max(1) as f64,
        target_fg: tgt / ntgt.max(1) as f64,
    })
}
