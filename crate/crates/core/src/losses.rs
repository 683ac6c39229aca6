//! Generator training objectives on tracker head outputs.
//!
//! Every score-map loss returns its value together with the gradient with
//! respect to the adversarial maps, so the generator can backpropagate
//! through the frozen tracker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_offsets, AnchorGrid, AnchorIndex, BBox};
use crate::image::Image;
use crate::tracker::ScoreMaps;

/// How sums over the selected anchors are reduced.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

/// Per-component switches used by the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossTerms {
    pub fool_cls: bool,
    pub fool_reg: bool,
    pub shift_cls: bool,
    pub shift_reg: bool,
    pub perceptibility: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        Self::all()
    }
}

impl LossTerms {
    pub fn all() -> Self {
        Self {
            fool_cls: true,
            fool_reg: true,
            shift_cls: true,
            shift_reg: true,
            perceptibility: true,
        }
    }

    pub fn none() -> Self {
        Self {
            fool_cls: false,
            fool_reg: false,
            shift_cls: false,
            shift_reg: false,
            perceptibility: false,
        }
    }

    /// Fooling terms and perceptibility only.
    pub fn fool_only() -> Self {
        Self {
            shift_cls: false,
            shift_reg: false,
            ..Self::all()
        }
    }

    /// Short label such as `fool+shift+p`, used in ablation tables.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        match (self.fool_cls, self.fool_reg) {
            (true, true) => parts.push("fool"),
            (true, false) => parts.push("fool_cls"),
            (false, true) => parts.push("fool_reg"),
            _ => {}
        }
        match (self.shift_cls, self.shift_reg) {
            (true, true) => parts.push("shift"),
            (true, false) => parts.push("shift_cls"),
            (false, true) => parts.push("shift_reg"),
            _ => {}
        }
        if self.perceptibility {
            parts.push("p");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    /// Inverse of [`LossTerms::label`]; also accepts `all`.
    pub fn from_label(label: &str) -> Result<Self> {
        match label.trim() {
            "all" => return Ok(Self::all()),
            "none" => return Ok(Self::none()),
            _ => {}
        }
        let mut t = Self::none();
        for part in label.split('+').map(str::trim) {
            match part {
                "fool" => (t.fool_cls, t.fool_reg) = (true, true),
                "fool_cls" => t.fool_cls = true,
                "fool_reg" => t.fool_reg = true,
                "shift" => (t.shift_cls, t.shift_reg) = (true, true),
                "shift_cls" => t.shift_cls = true,
                "shift_reg" => t.shift_reg = true,
                "p" => t.perceptibility = true,
                other => return Err(Error::InvalidConfig(format!("unknown loss term `{other}` in `{label}`"))),
            }
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Clean foreground probability above which an anchor is attacked.
    pub tau: f64,
    pub mu_c: f64,
    pub mu_w: f64,
    pub mu_h: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    /// Untargeted shift distance, in score-map cells below the center.
    pub d: i64,
    pub target_box_side: f64,
    /// Attack the single most confident anchor when none passes `tau`.
    pub top1_fallback: bool,
    pub reduction: Reduction,
    pub terms: LossTerms,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            mu_c: -5.0,
            mu_w: -5.0,
            mu_h: -5.0,
            lambda1: 0.1,
            lambda2: 1.0,
            lambda3: 0.1,
            lambda4: 1.0,
            lambda5: 500.0,
            d: 4,
            target_box_side: 64.0,
            top1_fallback: true,
            reduction: Reduction::Sum,
            terms: LossTerms::all(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4, self.lambda5];
        if lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.target_box_side > 0.0) {
            return Err(Error::InvalidConfig("target box side must be positive".into()));
        }
        Ok(())
    }
}

/// A loss value and its gradient with respect to the adversarial maps.
#[derive(Clone, Debug)]
pub struct MapLoss {
    pub value: f64,
    pub grad: ScoreMaps,
}

/// Anchors attacked by the fooling loss. Depends on the clean maps only.
pub fn select_anchors(clean: &ScoreMaps, cfg: &LossConfig) -> Vec<usize> {
    let probs = clean.fg_probs();
    let picked: Vec<usize> = (0..probs.len()).filter(|&j| probs[j] > cfg.tau).collect();
    if picked.is_empty() && cfg.top1_fallback {
        let best = (0..probs.len()).fold(0, |b, j| if probs[j] > probs[b] { j } else { b });
        return vec![best];
    }
    picked
}

fn hinge(x: f64, margin: f64) -> (f64, f64) {
    if x > margin {
        (x, 1.0)
    } else {
        (margin, 0.0)
    }
}

/// `l1 * sum max(f - b, mu_c) + l2 * sum (max(dw, mu_w) + max(dh, mu_h))`
/// over the anchors selected on the clean maps.
pub fn fool_loss(clean: &ScoreMaps, adv: &ScoreMaps, cfg: &LossConfig) -> Result<MapLoss> {
    if !clean.same_shape(adv) {
        return Err(Error::Shape("clean and adversarial maps differ".into()));
    }
    let selected = select_anchors(clean, cfg);
    let mut grad = ScoreMaps::zeros_like(adv);
    let scale = match cfg.reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / selected.len().max(1) as f64,
    };
    let mut value = 0.0;
    for &j in &selected {
        if cfg.terms.fool_cls {
            let (v, g) = hinge(adv.fg(j) as f64 - adv.bg(j) as f64, cfg.mu_c);
            value += cfg.lambda1 * scale * v;
            let g = (cfg.lambda1 * scale * g) as f32;
            let (bi, fi) = (grad.bg_index(j), grad.fg_index(j));
            grad.cls[fi] += g;
            grad.cls[bi] -= g;
        }
        if cfg.terms.fool_reg {
            for (r, mu) in [(2, cfg.mu_w), (3, cfg.mu_h)] {
                let i = adv.reg_index(j, r);
                let (v, g) = hinge(adv.reg[i] as f64, mu);
                value += cfg.lambda2 * scale * v;
                grad.reg[i] += (cfg.lambda2 * scale * g) as f32;
            }
        }
    }
    Ok(MapLoss { value, grad })
}

/// The untargeted shift target: a square box `d` cells below the center.
pub fn untargeted_target(grid: &AnchorGrid, cfg: &LossConfig) -> Result<BBox> {
    let c = grid.center_cell() as i64;
    let row = c + cfg.d;
    if row < 0 || row >= grid.score_size as i64 {
        return Err(Error::InvalidConfig(format!("shift distance {} leaves the {}-cell grid", cfg.d, grid.score_size)));
    }
    let (x, y) = grid.cell_center(row as usize, c as usize);
    Ok(BBox::raw(x, y, cfg.target_box_side, cfg.target_box_side))
}

fn shift_at(adv: &ScoreMaps, grid: &AnchorGrid, idx: AnchorIndex, target: &BBox, cfg: &LossConfig) -> Result<MapLoss> {
    adv.check_grid(grid)?;
    let j = grid.flat(idx);
    let want = encode_offsets(&grid.anchor(idx), target)?.to_array();
    let mut grad = ScoreMaps::zeros_like(adv);
    let mut value = 0.0;
    if cfg.terms.shift_cls {
        // -log softmax_fg = softplus(b - f)
        let z = adv.bg(j) as f64 - adv.fg(j) as f64;
        let nll = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        value += cfg.lambda3 * nll;
        let g = cfg.lambda3 * adv.bg_prob(j);
        let (bi, fi) = (grad.bg_index(j), grad.fg_index(j));
        grad.cls[fi] -= g as f32;
        grad.cls[bi] += g as f32;
    }
    if cfg.terms.shift_reg {
        for (r, w) in want.iter().enumerate() {
            let i = adv.reg_index(j, r);
            let diff = adv.reg[i] as f64 - w;
            value += cfg.lambda4 * diff.abs();
            grad.reg[i] += (cfg.lambda4 * diff.signum() * (diff != 0.0) as u8 as f64) as f32;
        }
    }
    Ok(MapLoss { value, grad })
}

/// Pulls the prediction towards the box `d` cells below the search center.
pub fn shift_loss_untargeted(adv: &ScoreMaps, grid: &AnchorGrid, cfg: &LossConfig) -> Result<MapLoss> {
    let target = untargeted_target(grid, cfg)?;
    let c = grid.center_cell();
    let row = (c as i64 + cfg.d) as usize;
    let idx = grid.best_anchor_at(row, c, &target);
    shift_at(adv, grid, idx, &target, cfg)
}

/// Cell and anchor a targeted loss acts on for `target` (search-crop pixels).
pub fn targeted_anchor(grid: &AnchorGrid, target: &BBox) -> Result<AnchorIndex> {
    target.validate()?;
    let extent = grid.region_center * 2.0 + 1.0;
    let (x, y) = target.center();
    if !(0.0..extent).contains(&x) || !(0.0..extent).contains(&y) {
        return Err(Error::InvalidTarget(format!("target center ({x}, {y}) outside the search region")));
    }
    let half = grid.center_cell() as f64;
    let max = (grid.score_size - 1) as f64;
    let col = ((x - grid.region_center) / grid.stride + half).round().clamp(0.0, max) as usize;
    let row = ((y - grid.region_center) / grid.stride + half).round().clamp(0.0, max) as usize;
    Ok(grid.best_anchor_at(row, col, target))
}

/// Pulls the prediction towards an arbitrary target box.
pub fn shift_loss_targeted(adv: &ScoreMaps, grid: &AnchorGrid, target: &BBox, cfg: &LossConfig) -> Result<MapLoss> {
    let idx = targeted_anchor(grid, target)?;
    shift_at(adv, grid, idx, target, cfg)
}

/// `lambda5 * mean((clean - adv)^2)` and its gradient with respect to `adv`.
pub fn perceptibility_loss(clean: &Image, adv: &Image, cfg: &LossConfig) -> Result<(f64, Vec<f32>)> {
    if !clean.same_shape(adv) {
        return Err(Error::Shape("clean and adversarial search differ in size".into()));
    }
    let n = clean.data.len().max(1) as f64;
    if !cfg.terms.perceptibility {
        return Ok((0.0, vec![0.0; adv.data.len()]));
    }
    let mut sum = 0.0;
    let grad = clean
        .data
        .iter()
        .zip(&adv.data)
        .map(|(c, a)| {
            let d = *a as f64 - *c as f64;
            sum += d * d;
            (2.0 * cfg.lambda5 * d / n) as f32
        })
        .collect();
    Ok((cfg.lambda5 * sum / n, grad))
}

/// The three parts of the full objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub fool: f64,
    pub shift: f64,
    pub perceptibility: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.fool + self.shift + self.perceptibility
    }

    pub fn add(&mut self, o: &LossParts) {
        self.fool += o.fool;
        self.shift += o.shift;
        self.perceptibility += o.perceptibility;
    }

    pub fn scaled(&self, s: f64) -> LossParts {
        LossParts {
            fool: self.fool * s,
            shift: self.shift * s,
            perceptibility: self.perceptibility * s,
        }
    }
}

/// Sum of the three parts.
pub fn total_loss(parts: &LossParts) -> f64 {
    parts.total()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_anchor(f: f32, b: f32, dw: f32, dh: f32) -> ScoreMaps {
        let mut m = ScoreMaps::zeros(1, 1);
        m.set_logits(0, b, f);
        m.reg[2] = dw;
        m.reg[3] = dh;
        m
    }

    fn confident() -> ScoreMaps {
        // p = 0.9
        one_anchor((9.0f64).ln() as f32, 0.0, 0.0, 0.0)
    }

    #[test]
    fn term_labels_roundtrip() {
        for t in [LossTerms::all(), LossTerms::fool_only(), LossTerms { fool_reg: false, ..LossTerms::none() }] {
            assert_eq!(LossTerms::from_label(&t.label()).unwrap(), t);
        }
        assert_eq!(LossTerms::from_label("all").unwrap(), LossTerms::all());
        assert!(LossTerms::from_label("fool+bogus").is_err());
    }

    #[test]
    fn fool_loss_hand_values() {
        let cfg = LossConfig::default();
        let l = fool_loss(&confident(), &one_anchor(2.0, 0.0, 0.5, -1.0), &cfg).unwrap();
        assert!((l.value - (-0.3)).abs() < 1e-6, "{}", l.value);
        let l = fool_loss(&confident(), &one_anchor(-10.0, 0.0, -10.0, -10.0), &cfg).unwrap();
        assert!((l.value - (-10.5)).abs() < 1e-6, "{}", l.value);
        assert!(l.grad.cls.iter().chain(&l.grad.reg).all(|g| *g == 0.0));
    }

    #[test]
    fn empty_selection_without_fallback_is_zero() {
        let cfg = LossConfig {
            top1_fallback: false,
            ..LossConfig::default()
        };
        let clean = one_anchor(-3.0, 0.0, 0.0, 0.0);
        assert!(select_anchors(&clean, &cfg).is_empty());
        assert_eq!(fool_loss(&clean, &one_anchor(2.0, 0.0, 1.0, 1.0), &cfg).unwrap().value, 0.0);
        assert_eq!(select_anchors(&clean, &LossConfig::default()), vec![0]);
    }

    fn grid() -> AnchorGrid {
        AnchorGrid::default_search()
    }

    #[test]
    fn untargeted_target_sits_below_center() {
        let t = untargeted_target(&grid(), &LossConfig::default()).unwrap();
        assert_eq!(t, BBox::raw(127.0, 159.0, 64.0, 64.0));
        let far = LossConfig {
            d: 13,
            ..LossConfig::default()
        };
        assert!(matches!(untargeted_target(&grid(), &far), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn shift_loss_hand_values() {
        let g = grid();
        let cfg = LossConfig::default();
        let target = untargeted_target(&g, &cfg).unwrap();
        let idx = g.best_anchor_at(16, 12, &target);
        assert_eq!(idx.k, 2);
        let j = g.flat(idx);
        // f == b and offsets already at the target: pure ln 2 classification term
        let adv = ScoreMaps::zeros(25, 5);
        let l = shift_loss_untargeted(&adv, &g, &cfg).unwrap();
        assert!((l.value - 0.1 * std::f64::consts::LN_2).abs() < 1e-6);
        let cls_only = LossConfig {
            lambda3: 1.0,
            ..cfg.clone()
        };
        assert!((shift_loss_untargeted(&adv, &g, &cls_only).unwrap().value - std::f64::consts::LN_2).abs() < 1e-6);
        let mut big = ScoreMaps::zeros(25, 5);
        big.set_logits(j, 0.0, 60.0);
        assert!(shift_loss_untargeted(&big, &g, &cls_only).unwrap().value < 1e-20);
    }

    #[test]
    fn targeted_matches_untargeted_on_the_same_box() {
        let g = grid();
        let cfg = LossConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut adv = ScoreMaps::zeros(25, 5);
        adv.cls.iter_mut().chain(adv.reg.iter_mut()).for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let target = untargeted_target(&g, &cfg).unwrap();
        let a = shift_loss_untargeted(&adv, &g, &cfg).unwrap();
        let b = shift_loss_targeted(&adv, &g, &target, &cfg).unwrap();
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn targeted_cell_for_box_right_of_center() {
        let g = grid();
        let idx = targeted_anchor(&g, &BBox::raw(159.0, 127.0, 64.0, 64.0)).unwrap();
        assert_eq!((idx.row, idx.col, idx.k), (12, 16, 2));
        let on_anchor = g.anchor(idx);
        let cfg = LossConfig {
            terms: LossTerms {
                shift_cls: false,
                ..LossTerms::all()
            },
            ..LossConfig::default()
        };
        let l = shift_loss_targeted(&ScoreMaps::zeros(25, 5), &g, &on_anchor, &cfg).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(matches!(
            targeted_anchor(&g, &BBox::raw(300.0, 127.0, 64.0, 64.0)),
            Err(Error::InvalidTarget(_))
        ));
    }

    #[test]
    fn perceptibility_hand_value() {
        let cfg = LossConfig::default();
        let clean = Image::filled(3, 8, 8, 0.5);
        let mut adv = clean.clone();
        adv.data.iter_mut().for_each(|v| *v += 1.0 / 255.0);
        let (l, _) = perceptibility_loss(&clean, &adv, &cfg).unwrap();
        assert!((l - 500.0 / 255.0f64.powi(2)).abs() < 1e-6, "{l}");
        assert!((l - 7.69e-3).abs() < 1e-5);
        assert_eq!(perceptibility_loss(&clean, &clean, &cfg).unwrap().0, 0.0);
        assert!(perceptibility_loss(&clean, &Image::new(3, 4, 4), &cfg).is_err());
    }

    #[test]
    fn total_adds_parts() {
        assert_eq!(total_loss(&LossParts::default()), 0.0);
        let ln2 = 0.1 * std::f64::consts::LN_2;
        let p = LossParts {
            fool: -0.3,
            shift: ln2,
            perceptibility: 500.0 / 255.0f64.powi(2),
        };
        assert!((total_loss(&p) - (-0.3 + ln2 + 500.0 / 65025.0)).abs() < 1e-12);
    }

    #[test]
    fn toggles_off_leave_only_perceptibility() {
        let cfg = LossConfig {
            terms: LossTerms {
                perceptibility: true,
                ..LossTerms::none()
            },
            ..LossConfig::default()
        };
        let g = grid();
        let adv = ScoreMaps::zeros(25, 5);
        assert_eq!(fool_loss(&adv, &adv, &cfg).unwrap().value, 0.0);
        assert_eq!(shift_loss_untargeted(&adv, &g, &cfg).unwrap().value, 0.0);
        assert!(LossTerms::fool_only().label() == "fool+p");
    }

    fn mini_grid() -> AnchorGrid {
        AnchorGrid::new(3, 8.0, &[1.0, 2.0], 8.0, 127.0).unwrap()
    }

    fn random_maps(rng: &mut ChaCha8Rng) -> ScoreMaps {
        let mut m = ScoreMaps::zeros(3, 2);
        m.cls.iter_mut().for_each(|v| *v = rng.gen_range(-3.0..3.0));
        m.reg.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        m
    }

    fn check_grad(f: impl Fn(&ScoreMaps) -> MapLoss, at: &ScoreMaps) {
        let g = f(at).grad;
        let h = 1e-3f32;
        for (which, len) in [(0, at.cls.len()), (1, at.reg.len())] {
            for i in 0..len {
                let (mut p, mut q) = (at.clone(), at.clone());
                let (pv, qv) = if which == 0 { (&mut p.cls[i], &mut q.cls[i]) } else { (&mut p.reg[i], &mut q.reg[i]) };
                *pv += h;
                *qv -= h;
                let (fp, f0, fq) = (f(&p).value, f(at).value, f(&q).value);
                let a = if which == 0 { g.cls[i] } else { g.reg[i] } as f64;
                let close = |fd: f64| (fd - a).abs() <= 1e-2 * fd.abs().max(a.abs()).max(1e-2);
                // near a hinge or L1 kink only the one-sided difference that
                // stays on the same piece is meaningful
                let ok = close((fp - fq) / (2.0 * h as f64)) || close((fp - f0) / h as f64) || close((f0 - fq) / h as f64);
                assert!(ok, "{which}/{i}: fd {} vs {a}", (fp - fq) / (2.0 * h as f64));
            }
        }
    }

    proptest! {
        #[test]
        fn fool_gradient(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = random_maps(&mut rng);
            let adv = random_maps(&mut rng);
            let cfg = LossConfig { mu_c: -1.0, mu_w: -0.5, mu_h: -0.5, ..LossConfig::default() };
            check_grad(|m| fool_loss(&clean, m, &cfg).unwrap(), &adv);
        }

        #[test]
        fn shift_gradients(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let adv = random_maps(&mut rng);
            let g = mini_grid();
            let cfg = LossConfig { d: 1, ..LossConfig::default() };
            check_grad(|m| shift_loss_untargeted(m, &g, &cfg).unwrap(), &adv);
            let t = BBox::raw(rng.gen_range(110.0..145.0), rng.gen_range(110.0..145.0), 50.0, 70.0);
            check_grad(|m| shift_loss_targeted(m, &g, &t, &cfg).unwrap(), &adv);
        }

        #[test]
        fn perceptibility_gradient(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..27).map(|_| rng.gen_range(0.0..1.0)).collect();
            let clean = Image::from_vec(3, 3, 3, data).unwrap();
            let mut adv = clean.clone();
            adv.data.iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            let cfg = LossConfig::default();
            let (_, g) = perceptibility_loss(&clean, &adv, &cfg).unwrap();
            let h = 1e-3f32;
            for i in 0..27 {
                let (mut p, mut q) = (adv.clone(), adv.clone());
                p.data[i] += h;
                q.data[i] -= h;
                let fd = (perceptibility_loss(&clean, &p, &cfg).unwrap().0 - perceptibility_loss(&clean, &q, &cfg).unwrap().0) / (2.0 * h as f64);
                prop_assert!((fd - g[i] as f64).abs() <= 1e-2 * fd.abs().max(1e-2));
            }
        }

        #[test]
        fn selection_ignores_adversarial_maps(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = random_maps(&mut rng);
            let a = random_maps(&mut rng);
            let b = random_maps(&mut rng);
            let cfg = LossConfig::default();
            let touched = |m: &ScoreMaps| {
                let g = fool_loss(&clean, m, &LossConfig { mu_c: -1e9, mu_w: -1e9, mu_h: -1e9, ..cfg.clone() }).unwrap().grad;
                (0..m.num_anchors()).filter(|&j| g.fg(j) != 0.0).collect::<Vec<_>>()
            };
            prop_assert_eq!(touched(&a), touched(&b));
            prop_assert_eq!(touched(&a), select_anchors(&clean, &cfg));
        }

        #[test]
        fn fool_non_increasing_in_fg_logit(seed in 0u64..200, drop in 0.0f32..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = random_maps(&mut rng);
            let adv = random_maps(&mut rng);
            let cfg = LossConfig::default();
            let mut lower = adv.clone();
            for j in select_anchors(&clean, &cfg) {
                let i = lower.fg_index(j);
                lower.cls[i] -= drop;
            }
            prop_assert!(fool_loss(&clean, &lower, &cfg).unwrap().value <= fool_loss(&clean, &adv, &cfg).unwrap().value + 1e-9);
        }
    }
}
