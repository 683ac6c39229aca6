//! Inference-time attacks and generator training.
//!
//! An [`Attack`] sees every search crop before the tracker does and may
//! replace it with an adversarial one. The one-shot attack generates a
//! single perturbation from the first template; the targeted attack
//! precomputes a bank of directional perturbations and picks one per frame;
//! the per-frame baseline runs the generator on every search crop.

mod bank;
pub mod train;
mod trajectory;

use sha2::{Digest, Sha256};

pub use bank::{build_bank, select_direction, BankMeta, PerturbationBank, BANK_KIND};
pub use trajectory::TargetTrajectory;

use crate::data::Video;
use crate::error::{Error, Result};
use crate::eval::{run_sequence, Protocol, RunOptions, SequenceResult};
use crate::generator::{apply, Generator, Perturbation, INPUT_SIZE};
use crate::image::Image;
use crate::tracker::{Tracker, TrackerState};

/// Per-sequence attack record; identical to an evaluation result.
pub type AttackRun = SequenceResult;

/// What an attack did to one search crop.
pub struct Perturbed {
    pub search: Image,
    pub direction: Option<usize>,
}

pub trait Attack {
    fn name(&self) -> String;

    /// Budget on the 0-255 scale; 0 for the clean run.
    fn epsilon(&self) -> f64;

    /// Called once per sequence, with the first template.
    fn prepare(&mut self, tracker: &Tracker, video: &dyn Video, template: &Image) -> Result<()>;

    fn perturb(&mut self, video: &dyn Video, frame: usize, state: &TrackerState, search: Image) -> Result<Perturbed>;

    /// Generator invocations made for the current sequence.
    fn generator_calls(&self) -> usize;

    /// Desired target center at `frame`, for targeted attacks.
    fn target(&self, _video: &dyn Video, _frame: usize) -> Option<(f64, f64)> {
        None
    }
}

/// No perturbation at all.
#[derive(Clone, Debug, Default)]
pub struct Clean;

impl Attack for Clean {
    fn name(&self) -> String {
        "clean".into()
    }

    fn epsilon(&self) -> f64 {
        0.0
    }

    fn prepare(&mut self, _: &Tracker, _: &dyn Video, _: &Image) -> Result<()> {
        Ok(())
    }

    fn perturb(&mut self, _: &dyn Video, _: usize, _: &TrackerState, search: Image) -> Result<Perturbed> {
        Ok(Perturbed { search, direction: None })
    }

    fn generator_calls(&self) -> usize {
        0
    }
}

/// One perturbation from the first template, added to every search crop,
/// kept across tracker restarts.
#[derive(Clone, Debug)]
pub struct OneShot {
    pub generator: Generator,
    pub delta: Option<Perturbation>,
    calls: usize,
}

impl OneShot {
    pub fn new(generator: Generator) -> Self {
        Self {
            generator,
            delta: None,
            calls: 0,
        }
    }
}

impl Attack for OneShot {
    fn name(&self) -> String {
        "one-shot".into()
    }

    fn epsilon(&self) -> f64 {
        self.generator.config.epsilon
    }

    fn prepare(&mut self, _: &Tracker, _: &dyn Video, template: &Image) -> Result<()> {
        if self.delta.is_none() {
            self.delta = Some(self.generator.generate(template, None)?);
            self.calls += 1;
        }
        Ok(())
    }

    fn perturb(&mut self, _: &dyn Video, _: usize, _: &TrackerState, search: Image) -> Result<Perturbed> {
        let p = self.delta.as_ref().ok_or_else(|| Error::Conditioning("one-shot attack used before prepare".into()))?;
        Ok(Perturbed {
            search: apply(&search, p)?,
            direction: None,
        })
    }

    fn generator_calls(&self) -> usize {
        self.calls
    }
}

/// Steers the tracker along a trajectory with a precomputed bank.
#[derive(Clone, Debug)]
pub struct Targeted {
    pub generator: Generator,
    pub trajectory: TargetTrajectory,
    pub directions: usize,
    pub d: f64,
    pub box_side: f64,
    pub bank: Option<PerturbationBank>,
    previous: usize,
    calls: usize,
}

impl Targeted {
    pub fn new(generator: Generator, trajectory: TargetTrajectory, directions: usize, d: f64, box_side: f64) -> Self {
        Self {
            generator,
            trajectory,
            directions,
            d,
            box_side,
            bank: None,
            previous: 0,
            calls: 0,
        }
    }
}

impl Attack for Targeted {
    fn name(&self) -> String {
        format!("targeted {}", self.trajectory.label())
    }

    fn epsilon(&self) -> f64 {
        self.generator.config.epsilon
    }

    fn prepare(&mut self, tracker: &Tracker, _: &dyn Video, template: &Image) -> Result<()> {
        self.trajectory.validate()?;
        if self.bank.is_none() {
            let bank = build_bank(&self.generator, template, self.directions, self.d, self.box_side, &tracker.grid)?;
            self.calls += bank.len();
            self.bank = Some(bank);
        }
        Ok(())
    }

    fn perturb(&mut self, video: &dyn Video, frame: usize, state: &TrackerState, search: Image) -> Result<Perturbed> {
        let bank = self.bank.as_ref().ok_or_else(|| Error::Conditioning("targeted attack used before prepare".into()))?;
        let (tx, ty) = self.trajectory.center(video, frame);
        let v = (tx - state.center.0, ty - state.center.1);
        let k = select_direction(v, bank.len(), self.previous);
        self.previous = k;
        Ok(Perturbed {
            search: apply(&search, &bank.perturbations[k])?,
            direction: Some(k),
        })
    }

    fn generator_calls(&self) -> usize {
        self.calls
    }

    fn target(&self, video: &dyn Video, frame: usize) -> Option<(f64, f64)> {
        Some(self.trajectory.center(video, frame))
    }
}

/// Cost baseline: the generator runs on every search crop, resized to the
/// template input size.
#[derive(Clone, Debug)]
pub struct PerFrame {
    pub generator: Generator,
    calls: usize,
}

impl PerFrame {
    pub fn new(generator: Generator) -> Self {
        Self { generator, calls: 0 }
    }
}

impl Attack for PerFrame {
    fn name(&self) -> String {
        "per-frame".into()
    }

    fn epsilon(&self) -> f64 {
        self.generator.config.epsilon
    }

    fn prepare(&mut self, _: &Tracker, _: &dyn Video, _: &Image) -> Result<()> {
        Ok(())
    }

    fn perturb(&mut self, _: &dyn Video, _: usize, _: &TrackerState, search: Image) -> Result<Perturbed> {
        let p = self.generator.generate(&search.resize(INPUT_SIZE, INPUT_SIZE), None)?;
        self.calls += 1;
        Ok(Perturbed {
            search: apply(&search, &p)?,
            direction: None,
        })
    }

    fn generator_calls(&self) -> usize {
        self.calls
    }
}

/// Untargeted one-shot attack over a whole sequence (one-pass protocol).
pub fn one_shot_attack(tracker: &Tracker, generator: &Generator, video: &dyn Video) -> Result<AttackRun> {
    run_sequence(tracker, video, &mut OneShot::new(generator.clone()), &RunOptions::default())
}

/// Targeted attack along `trajectory` with a fresh bank of `directions` entries.
pub fn follow_trajectory(
    tracker: &Tracker,
    generator: &Generator,
    video: &dyn Video,
    trajectory: &TargetTrajectory,
    directions: usize,
    d: f64,
    box_side: f64,
) -> Result<AttackRun> {
    let mut attack = Targeted::new(generator.clone(), trajectory.clone(), directions, d, box_side);
    run_sequence(tracker, video, &mut attack, &RunOptions::default())
}

pub fn per_frame_baseline_attack(tracker: &Tracker, generator: &Generator, video: &dyn Video) -> Result<AttackRun> {
    run_sequence(tracker, video, &mut PerFrame::new(generator.clone()), &RunOptions::default())
}

/// Clean run under the restart protocol, or with an attack.
pub fn run_with_restarts(tracker: &Tracker, video: &dyn Video, attack: &mut dyn Attack) -> Result<AttackRun> {
    run_sequence(
        tracker,
        video,
        attack,
        &RunOptions {
            protocol: Protocol::Restarts { skip: 5 },
            ..RunOptions::default()
        },
    )
}

/// Hex SHA-256 of an image's bytes, used to tie banks to templates.
pub fn image_hash(img: &Image) -> String {
    let mut h = Sha256::new();
    for v in &img.data {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}
