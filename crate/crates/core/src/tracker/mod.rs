//! Siamese RPN tracker: network, proposal re-ranking and the online loop.

mod maps;
mod net;
mod rank;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use maps::ScoreMaps;
pub use net::{ForwardCache, NetConfig, TemplateEmbedding, TrackerNet, SEARCH_SIZE, TEMPLATE_SIZE};
pub use rank::{cosine_window, rank_proposals, Proposal, RankConfig};

use crate::error::{Error, Result};
use crate::generator::{apply, Perturbation};
use crate::geometry::{search_side, template_side, AnchorGrid, BBox, CropWindow, DEFAULT_RATIOS};
use crate::image::Image;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Module, Tensor};

pub const CHECKPOINT_KIND: &str = "tracker";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub net: NetConfig,
    pub anchor_ratios: Vec<f64>,
    /// Anchor side in units of the score-map stride.
    pub anchor_scale: f64,
    pub stride: f64,
    pub rank: RankConfig,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            anchor_ratios: DEFAULT_RATIOS.to_vec(),
            anchor_scale: 8.0,
            stride: 8.0,
            rank: RankConfig::default(),
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn grid(&self) -> Result<AnchorGrid> {
        AnchorGrid::new(
            self.net.score_size(),
            self.stride,
            &self.anchor_ratios,
            self.anchor_scale,
            (SEARCH_SIZE - 1) as f64 / 2.0,
        )
    }
}

/// Network weights plus the anchor layout they were trained for.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub config: TrackerConfig,
    pub net: TrackerNet,
    pub grid: AnchorGrid,
}

/// Per-sequence tracking state. Sizes are in frame pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackerState {
    pub center: (f64, f64),
    pub size: (f64, f64),
    pub embedding: TemplateEmbedding,
    pub window: Vec<f64>,
    pub rank: RankConfig,
    pub frame_size: (usize, usize),
}

impl TrackerState {
    pub fn bbox(&self) -> BBox {
        BBox::raw(self.center.0, self.center.1, self.size.0, self.size.1)
    }

    pub fn search_window(&self) -> Result<CropWindow> {
        CropWindow::around(self.center, search_side(self.size.0, self.size.1), SEARCH_SIZE)
    }
}

/// Result of one tracking step.
#[derive(Clone, Debug)]
pub struct TrackStep {
    pub state: TrackerState,
    pub bbox: BBox,
    pub confidence: f64,
    pub proposal: Proposal,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        let grid = config.grid()?;
        let net = TrackerNet::new(config.net.clone(), grid.k(), config.seed);
        Ok(Self { config, net, grid })
    }

    /// Context-padded template crop around `target`, resized to 127.
    pub fn template_crop(frame: &Image, target: &BBox) -> Result<Image> {
        let w = CropWindow::around(target.center(), template_side(target.w, target.h), TEMPLATE_SIZE)?;
        Ok(w.extract(frame))
    }

    pub fn embed_template(&self, template: &Image) -> Result<TemplateEmbedding> {
        self.net.embed(&Tensor::from_images(&[template])?)
    }

    pub fn forward(&self, emb: &TemplateEmbedding, search: &Image) -> Result<ScoreMaps> {
        let (cls, reg) = self.net.forward(emb, &Tensor::from_images(&[search])?)?;
        Ok(ScoreMaps::from_tensors(&cls, &reg).remove(0))
    }

    pub fn forward_batch(&self, emb: &TemplateEmbedding, searches: &[&Image]) -> Result<Vec<ScoreMaps>> {
        let (cls, reg) = self.net.forward(emb, &Tensor::from_images(searches)?)?;
        Ok(ScoreMaps::from_tensors(&cls, &reg))
    }

    pub fn track_init(&self, frame: &Image, gt: &BBox) -> Result<TrackerState> {
        gt.validate()?;
        let (fw, fh) = (frame.width as f64, frame.height as f64);
        let (cx, cy) = gt.center();
        if !(0.0..=fw).contains(&cx) || !(0.0..=fh).contains(&cy) {
            return Err(Error::InvalidBox(format!("{gt:?} outside {}x{} frame", frame.width, frame.height)));
        }
        let template = Self::template_crop(frame, gt)?;
        Ok(TrackerState {
            center: (cx, cy),
            size: (gt.w, gt.h),
            embedding: self.embed_template(&template)?,
            window: cosine_window(&self.grid),
            rank: self.config.rank,
            frame_size: (frame.width, frame.height),
        })
    }

    /// Search crop for the next step.
    pub fn search_crop(&self, state: &TrackerState, frame: &Image) -> Result<(CropWindow, Image)> {
        let w = state.search_window()?;
        Ok((w, w.extract(frame)))
    }

    pub fn track_step(&self, state: &TrackerState, frame: &Image, perturbation: Option<&Perturbation>) -> Result<TrackStep> {
        let (window, search) = self.search_crop(state, frame)?;
        let search = match perturbation {
            Some(p) => apply(&search, p)?,
            None => search,
        };
        self.step_on_search(state, &window, &search)
    }

    /// Runs the network on an already cropped (and possibly perturbed)
    /// search region and updates the state.
    pub fn step_on_search(&self, state: &TrackerState, window: &CropWindow, search: &Image) -> Result<TrackStep> {
        let maps = self.forward(&state.embedding, search)?;
        Ok(self.update(state, window, &maps)?)
    }

    /// Re-ranks `maps` and moves the state to the chosen proposal.
    pub fn update(&self, state: &TrackerState, window: &CropWindow, maps: &ScoreMaps) -> Result<TrackStep> {
        let s = window.scale();
        let target = (state.size.0 * s, state.size.1 * s);
        let p = rank_proposals(maps, &self.grid, &state.window, target, &state.rank)?;
        let lr = p.size_rate(&state.rank);
        let (cx, cy) = window.to_frame(p.bbox.cx, p.bbox.cy);
        let (fw, fh) = (state.frame_size.0 as f64, state.frame_size.1 as f64);
        let min = state.rank.min_size;
        let w = (state.size.0 * (1.0 - lr) + p.bbox.w / s * lr).clamp(min, fw.max(min));
        let h = (state.size.1 * (1.0 - lr) + p.bbox.h / s * lr).clamp(min, fh.max(min));
        let mut next = state.clone();
        next.center = (cx.clamp(0.0, fw), cy.clamp(0.0, fh));
        next.size = (w, h);
        Ok(TrackStep {
            bbox: next.bbox(),
            state: next,
            confidence: p.confidence,
            proposal: p,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::to_value(&self.config).expect("config serializes");
        Checkpoint::new(CHECKPOINT_KIND, meta, self.net.params().into_iter().cloned().collect())
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let ck = ck.expect_kind(CHECKPOINT_KIND)?;
        let config: TrackerConfig = serde_json::from_value(ck.meta)?;
        let mut t = Self::new(config)?;
        t.net.load_params(&ck.tensors)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}
