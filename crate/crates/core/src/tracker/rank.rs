use serde::{Deserialize, Serialize};

use super::ScoreMaps;
use crate::error::Result;
use crate::geometry::{decode_offsets, template_side, AnchorGrid, BBox};

/// Proposal re-ranking hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RankConfig {
    pub penalty_k: f64,
    pub window_influence: f64,
    pub size_lr: f64,
    /// Lower bound on the tracked box side, in frame pixels.
    pub min_size: f64,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self {
            penalty_k: 0.05,
            window_influence: 0.40,
            size_lr: 0.30,
            min_size: 10.0,
        }
    }
}

/// Best-scoring anchor after re-ranking, in search-crop pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Proposal {
    pub index: usize,
    /// Decoded box before size smoothing.
    pub bbox: BBox,
    /// Raw foreground probability of the chosen anchor.
    pub confidence: f64,
    pub penalty: f64,
    pub score: f64,
}

impl Proposal {
    /// Size learning rate `penalty * H * size_lr`.
    pub fn size_rate(&self, cfg: &RankConfig) -> f64 {
        self.penalty * self.confidence * cfg.size_lr
    }
}

/// Hanning window over the score map, tiled over the anchor shapes.
pub fn cosine_window(grid: &AnchorGrid) -> Vec<f64> {
    let s = grid.score_size;
    let han: Vec<f64> = if s == 1 {
        vec![1.0]
    } else {
        (0..s)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (s - 1) as f64).cos())
            .collect()
    };
    let mut w = Vec::with_capacity(grid.len());
    for _ in 0..grid.k() {
        for r in 0..s {
            for c in 0..s {
                w.push(han[r] * han[c]);
            }
        }
    }
    w
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

/// Decodes every anchor, applies the scale/aspect change penalty
/// `exp(-k * (r_c * s_c - 1))` and the window prior, and returns the argmax.
///
/// `target` is the current target `(w, h)` in search-crop pixels.
pub fn rank_proposals(
    maps: &ScoreMaps,
    grid: &AnchorGrid,
    window: &[f64],
    target: (f64, f64),
    cfg: &RankConfig,
) -> Result<Proposal> {
    maps.check_grid(grid)?;
    let target_sz = template_side(target.0, target.1);
    let target_ratio = target.0 / target.1;
    let wi = cfg.window_influence;
    let mut best: Option<Proposal> = None;
    for (j, anchor) in grid.anchors().iter().enumerate() {
        let b = decode_offsets(anchor, &maps.offsets(j));
        let s_c = change(template_side(b.w, b.h) / target_sz);
        let r_c = change(target_ratio / (b.w / b.h));
        let penalty = (-cfg.penalty_k * (r_c * s_c - 1.0)).exp();
        let h = maps.fg_prob(j);
        let score = (1.0 - wi) * penalty * h + wi * window[j];
        if best.is_none_or(|p| score > p.score) {
            best = Some(Proposal {
                index: j,
                bbox: b,
                confidence: h,
                penalty,
                score,
            });
        }
    }
    Ok(best.expect("grid is never empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AnchorIndex;
    use proptest::prelude::*;

    fn setup() -> (AnchorGrid, Vec<f64>) {
        let g = AnchorGrid::default_search();
        let w = cosine_window(&g);
        (g, w)
    }

    #[test]
    fn window_peaks_at_center() {
        let (g, w) = setup();
        let c = g.flat(AnchorIndex { row: 12, col: 12, k: 3 });
        assert_eq!(w[c], 1.0);
        assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(w[g.flat(AnchorIndex { row: 0, col: 5, k: 0 })], 0.0);
    }

    #[test]
    fn full_window_influence_picks_center() {
        let (g, w) = setup();
        let m = ScoreMaps::zeros(25, 5);
        let cfg = RankConfig {
            window_influence: 1.0,
            ..RankConfig::default()
        };
        let p = rank_proposals(&m, &g, &w, (64.0, 64.0), &cfg).unwrap();
        let idx = g.unflat(p.index);
        assert_eq!((idx.row, idx.col), (12, 12));
        assert_eq!(p.bbox.center(), (127.0, 127.0));
    }

    #[test]
    fn dominant_logit_decodes_to_its_anchor() {
        let (g, w) = setup();
        let mut m = ScoreMaps::zeros(25, 5);
        let j = g.flat(AnchorIndex { row: 12, col: 16, k: 2 });
        m.set_logits(j, -5.0, 5.0);
        let cfg = RankConfig {
            window_influence: 0.0,
            ..RankConfig::default()
        };
        let p = rank_proposals(&m, &g, &w, (64.0, 64.0), &cfg).unwrap();
        assert_eq!(p.index, j);
        assert_eq!(p.bbox.center(), (159.0, 127.0));
        assert!((p.confidence - 1.0 / (1.0 + (-10.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn penalty_prefers_unchanged_scale() {
        let (g, w) = setup();
        let m = ScoreMaps::zeros(25, 5);
        let cfg = RankConfig {
            window_influence: 0.0,
            ..RankConfig::default()
        };
        let p = rank_proposals(&m, &g, &w, (64.0, 64.0), &cfg).unwrap();
        assert_eq!(g.unflat(p.index).k, 2);
        assert!((p.penalty - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn no_priors_is_plain_argmax(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (g, w) = setup();
            let mut m = ScoreMaps::zeros(25, 5);
            m.cls.iter_mut().for_each(|v| *v = rng.gen_range(-4.0..4.0));
            m.reg.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
            let cfg = RankConfig { window_influence: 0.0, penalty_k: 0.0, ..RankConfig::default() };
            let p = rank_proposals(&m, &g, &w, (40.0, 70.0), &cfg).unwrap();
            let probs = m.fg_probs();
            let best = (0..probs.len()).fold(0, |b, j| if probs[j] > probs[b] { j } else { b });
            prop_assert_eq!(p.index, best);
        }

        #[test]
        fn full_window_ignores_logits(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let (g, w) = setup();
            let mut m = ScoreMaps::zeros(25, 5);
            m.cls.iter_mut().for_each(|v| *v = rng.gen_range(-10.0..10.0));
            let cfg = RankConfig { window_influence: 1.0, ..RankConfig::default() };
            let idx = g.unflat(rank_proposals(&m, &g, &w, (30.0, 50.0), &cfg).unwrap().index);
            prop_assert_eq!((idx.row, idx.col), (12, 12));
        }
    }
}
