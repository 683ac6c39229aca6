//! Offline RPN training on template/search pairs.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ScoreMaps, Tracker, TrackerConfig, SEARCH_SIZE};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{encode_offsets, search_side, AnchorGrid, BBox, CropWindow};
use crate::image::Image;
use crate::nn::{Adam, Module, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainTrackerConfig {
    pub epochs: usize,
    /// Pairs in the fixed training pool; one epoch visits each once.
    pub pairs: usize,
    pub batch: usize,
    pub lr: f32,
    pub max_gap: usize,
    /// Maximum target offset from the search center, in crop pixels.
    pub shift: f64,
    /// Log-uniform scale jitter of the search side.
    pub scale_jitter: f64,
    pub negative_fraction: f64,
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub max_positives: usize,
    pub anchors_per_sample: usize,
    pub reg_weight: f32,
    pub smooth_l1_beta: f32,
    /// Classification targets become `1 - s` and `s`; keeps logits small.
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainTrackerConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            pairs: 1600,
            batch: 8,
            lr: 1e-3,
            max_gap: 40,
            shift: 48.0,
            scale_jitter: 0.15,
            negative_fraction: 0.2,
            pos_iou: 0.6,
            neg_iou: 0.3,
            max_positives: 16,
            anchors_per_sample: 64,
            reg_weight: 1.0,
            smooth_l1_beta: 0.1,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrackerReport {
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    pub seconds: f64,
}

/// Anchor label before sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// IoU labelling against `target` (crop pixels). Without a target every
/// anchor is background.
pub fn label_anchors(grid: &AnchorGrid, target: Option<&BBox>, pos_iou: f64, neg_iou: f64) -> Vec<AnchorLabel> {
    grid.anchors()
        .iter()
        .map(|a| match target {
            None => AnchorLabel::Negative,
            Some(t) => {
                let iou = a.iou(t);
                if iou >= pos_iou {
                    AnchorLabel::Positive
                } else if iou <= neg_iou {
                    AnchorLabel::Negative
                } else {
                    AnchorLabel::Ignore
                }
            }
        })
        .collect()
}

/// A recipe for one training pair, rendered on demand.
#[derive(Clone, Copy, Debug)]
struct PairSpec {
    video: usize,
    template_frame: usize,
    search_video: usize,
    search_frame: usize,
    shift: (f64, f64),
    log_scale: f64,
    negative: bool,
}

pub struct TrainingPair {
    pub template: Image,
    pub search: Image,
    /// Target in search-crop pixels; `None` for negative pairs.
    pub target: Option<BBox>,
}

fn sample_specs(data: &Dataset, cfg: &TrainTrackerConfig, rng: &mut ChaCha8Rng) -> Vec<PairSpec> {
    let n = data.len();
    (0..cfg.pairs)
        .map(|_| {
            let video = rng.gen_range(0..n);
            let len = data.videos[video].len();
            let t = rng.gen_range(0..len);
            let lo = t.saturating_sub(cfg.max_gap);
            let hi = (t + cfg.max_gap).min(len - 1);
            let negative = n > 1 && rng.gen_bool(cfg.negative_fraction);
            let (search_video, search_frame) = if negative {
                let mut o = rng.gen_range(0..n - 1);
                if o >= video {
                    o += 1;
                }
                (o, rng.gen_range(0..data.videos[o].len()))
            } else {
                (video, rng.gen_range(lo..=hi))
            };
            PairSpec {
                video,
                template_frame: t,
                search_video,
                search_frame,
                shift: (rng.gen_range(-cfg.shift..=cfg.shift), rng.gen_range(-cfg.shift..=cfg.shift)),
                log_scale: rng.gen_range(-cfg.scale_jitter..=cfg.scale_jitter),
                negative,
            }
        })
        .collect()
}

fn render(data: &Dataset, p: &PairSpec) -> Result<TrainingPair> {
    let tv = &data.videos[p.video];
    let template = Tracker::template_crop(&tv.frame(p.template_frame)?, &tv.gt(p.template_frame))?;
    let sv = &data.videos[p.search_video];
    let gt = sv.gt(p.search_frame);
    let side = search_side(gt.w, gt.h) * p.log_scale.exp();
    let s = SEARCH_SIZE as f64 / side;
    let center = (gt.cx - p.shift.0 / s, gt.cy - p.shift.1 / s);
    let window = CropWindow::around(center, side, SEARCH_SIZE)?;
    let search = window.extract(&sv.frame(p.search_frame)?);
    let target = (!p.negative).then(|| window.box_to_crop(&gt));
    Ok(TrainingPair { template, search, target })
}

/// Cross-entropy on sampled anchors plus smooth-L1 on positive offsets.
/// Returns the loss and its gradient with respect to the head outputs.
pub fn rpn_loss(
    maps: &ScoreMaps,
    grid: &AnchorGrid,
    target: Option<&BBox>,
    cfg: &TrainTrackerConfig,
    rng: &mut impl Rng,
) -> Result<(f64, ScoreMaps)> {
    let labels = label_anchors(grid, target, cfg.pos_iou, cfg.neg_iou);
    let mut pos: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == AnchorLabel::Positive).collect();
    let mut neg: Vec<usize> = (0..labels.len()).filter(|&j| labels[j] == AnchorLabel::Negative).collect();
    pos.shuffle(rng);
    pos.truncate(cfg.max_positives);
    neg.shuffle(rng);
    neg.truncate(cfg.anchors_per_sample.saturating_sub(pos.len()));

    let mut grad = ScoreMaps::zeros_like(maps);
    let mut loss = 0.0;
    let groups: [(&[usize], usize); 2] = [(&pos, 1), (&neg, 0)];
    let share = if pos.is_empty() { 1.0 } else { 0.5 };
    for (set, y) in groups {
        if set.is_empty() {
            continue;
        }
        let w = share / set.len() as f64;
        let t = if y == 1 { 1.0 - cfg.label_smoothing } else { cfg.label_smoothing };
        for &j in set {
            let pf = maps.fg_prob(j);
            loss += -w * (t * pf.max(1e-12).ln() + (1.0 - t) * (1.0 - pf).max(1e-12).ln());
            let dfg = w * (pf - t);
            let (bi, fi) = (grad.bg_index(j), grad.fg_index(j));
            grad.cls[fi] += dfg as f32;
            grad.cls[bi] -= dfg as f32;
        }
    }
    if let Some(t) = target {
        let beta = cfg.smooth_l1_beta as f64;
        let w = cfg.reg_weight as f64 / pos.len().max(1) as f64;
        for &j in &pos {
            let want = encode_offsets(&grid.anchors()[j], t)?.to_array();
            let have = maps.offsets(j).to_array();
            for r in 0..4 {
                let d = have[r] - want[r];
                let (l, g) = if d.abs() < beta {
                    (0.5 * d * d / beta, d / beta)
                } else {
                    (d.abs() - 0.5 * beta, d.signum())
                };
                loss += w * l;
                let i = grad.reg_index(j, r);
                grad.reg[i] += (w * g) as f32;
            }
        }
    }
    Ok((loss, grad))
}

/// Trains a tracker from scratch on `data`. Deterministic for a given seed.
pub fn train_tracker(data: &Dataset, config: &TrackerConfig, cfg: &TrainTrackerConfig) -> Result<(Tracker, TrainTrackerReport)> {
    if data.is_empty() || cfg.batch == 0 || cfg.pairs == 0 {
        return Err(Error::InvalidConfig("tracker training needs data, pairs and a batch size".into()));
    }
    let start = Instant::now();
    let mut tracker = Tracker::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs = sample_specs(data, cfg, &mut rng);
    let mut adam = Adam::new(cfg.lr);
    let mut report = TrainTrackerReport::default();
    let mut order: Vec<usize> = (0..specs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let pairs = chunk.iter().map(|&i| render(data, &specs[i])).collect::<Result<Vec<_>>>()?;
            let t = Tensor::from_images(&pairs.iter().map(|p| &p.template).collect::<Vec<_>>())?;
            let s = Tensor::from_images(&pairs.iter().map(|p| &p.search).collect::<Vec<_>>())?;
            let (cls, reg, cache) = tracker.net.forward_train(&t, &s)?;
            let maps = ScoreMaps::from_tensors(&cls, &reg);
            let mut grads = Vec::with_capacity(maps.len());
            let mut batch_loss = 0.0;
            for (m, p) in maps.iter().zip(&pairs) {
                let (l, mut g) = rpn_loss(m, &tracker.grid, p.target.as_ref(), cfg, &mut rng)?;
                g.scale(1.0 / pairs.len() as f32);
                batch_loss += l / pairs.len() as f64;
                grads.push(g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "tracker loss {batch_loss} at epoch {epoch}, seed {}, config {}",
                    cfg.seed,
                    serde_json::to_string(cfg).unwrap_or_default()
                )));
            }
            let (dcls, dreg) = ScoreMaps::to_tensors(&grads);
            tracker.net.zero_grad();
            tracker.net.backward_params(&cache, dcls, dreg);
            adam.step(&mut tracker.net.params_mut());
            total += batch_loss * pairs.len() as f64;
            count += pairs.len();
            report.steps += 1;
        }
        let mean = total / count as f64;
        log::info!("tracker epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok((tracker, report))
}

/// Template and search crops as seen during training, for inspection.
pub fn sample_pairs(data: &Dataset, cfg: &TrainTrackerConfig, n: usize) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cfg = TrainTrackerConfig { pairs: n, ..cfg.clone() };
    sample_specs(data, &cfg, &mut rng).iter().map(|p| render(data, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorIndex;

    #[test]
    fn gt_matching_anchor_is_positive() {
        let grid = AnchorGrid::default_search();
        let target = BBox::raw(131.0, 127.0, 64.0, 64.0);
        let labels = label_anchors(&grid, Some(&target), 0.6, 0.3);
        // 60x64 overlap over 4096 + 4096 - 3840
        let j = grid.flat(AnchorIndex { row: 12, col: 12, k: 2 });
        assert!((grid.anchors()[j].iou(&target) - 3840.0 / 4352.0).abs() < 1e-12);
        assert_eq!(labels[j], AnchorLabel::Positive);
        let far = grid.flat(AnchorIndex { row: 0, col: 0, k: 2 });
        assert_eq!(labels[far], AnchorLabel::Negative);
    }

    #[test]
    fn background_frame_has_no_positives() {
        let grid = AnchorGrid::default_search();
        let labels = label_anchors(&grid, None, 0.6, 0.3);
        assert!(labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let grid = AnchorGrid::default_search();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = ScoreMaps::zeros(25, 5);
        m.cls.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
        m.reg.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3));
        let target = BBox::raw(140.0, 120.0, 50.0, 70.0);
        let cfg = TrainTrackerConfig::default();
        let (_, g) = rpn_loss(&m, &grid, Some(&target), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let eval = |m: &ScoreMaps| rpn_loss(m, &grid, Some(&target), &cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap().0;
        let h = 1e-3;
        let nz: Vec<usize> = (0..g.cls.len()).filter(|&i| g.cls[i] != 0.0).take(10).collect();
        assert!(!nz.is_empty());
        for i in nz {
            let (mut p, mut q) = (m.clone(), m.clone());
            p.cls[i] += h;
            q.cls[i] -= h;
            let fd = (eval(&p) - eval(&q)) / (2.0 * h as f64);
            assert!((fd - g.cls[i] as f64).abs() < 1e-4, "{fd} vs {}", g.cls[i]);
        }
        let nz: Vec<usize> = (0..g.reg.len()).filter(|&i| g.reg[i] != 0.0).take(10).collect();
        assert!(!nz.is_empty());
        for i in nz {
            let (mut p, mut q) = (m.clone(), m.clone());
            p.reg[i] += h;
            q.reg[i] -= h;
            let fd = (eval(&p) - eval(&q)) / (2.0 * h as f64);
            assert!((fd - g.reg[i] as f64).abs() < 1e-3, "{fd} vs {}", g.reg[i]);
        }
    }
}
