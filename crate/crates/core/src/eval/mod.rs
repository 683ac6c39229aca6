//! Sequence runner, tracking and attack metrics, cost accounting and
//! report emission.
//!
//! Metrics only look at frames the tracker actually predicted: the frame a
//! tracker is (re)initialized on and frames skipped after a failure are
//! recorded but never scored.

mod metrics;
mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::*;
pub use report::{cost_report, emit_report, summarize, CostRow, MethodSummary, FRAMES_HEADER, SUMMARY_HEADER, COST_HEADER};

use crate::attack::Attack;
use crate::data::{Dataset, Video};
use crate::error::Result;
use crate::geometry::BBox;
use crate::tracker::Tracker;

pub const SHORT_TERM_THRESHOLD: f64 = 20.0;
pub const LONG_TERM_THRESHOLD: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameStatus {
    Init,
    Tracked,
    /// Tracked with zero overlap; the tracker restarts after this frame.
    Failure,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub status: FrameStatus,
    pub gt: BBox,
    pub bbox: Option<BBox>,
    pub target: Option<(f64, f64)>,
    pub confidence: Option<f64>,
    pub direction: Option<usize>,
    pub overlap: Option<f64>,
    pub center_error: Option<f64>,
    pub millis: f64,
}

impl FrameRecord {
    pub fn scored(&self) -> bool {
        matches!(self.status, FrameStatus::Tracked | FrameStatus::Failure)
    }
}

/// Everything recorded while running one sequence, clean or attacked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub sequence: String,
    pub method: String,
    pub epsilon: f64,
    pub frames: Vec<FrameRecord>,
    pub restarts: usize,
    pub generator_calls: usize,
    pub seconds: f64,
}

impl SequenceResult {
    pub fn scored(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.scored())
    }

    pub fn center_errors(&self) -> Vec<f64> {
        self.scored().filter_map(|f| f.center_error).collect()
    }

    pub fn overlaps(&self) -> Vec<f64> {
        self.scored().filter_map(|f| f.overlap).collect()
    }

    /// Distances from the prediction to the target trajectory.
    pub fn target_errors(&self) -> Vec<f64> {
        self.scored()
            .filter_map(|f| {
                let (b, (tx, ty)) = (f.bbox?, f.target?);
                Some((b.cx - tx).hypot(b.cy - ty))
            })
            .collect()
    }

    pub fn precision(&self, threshold: f64) -> f64 {
        precision_at(&self.center_errors(), threshold)
    }

    pub fn auc(&self) -> f64 {
        success_curve(&self.overlaps()).1
    }

    /// Mean overlap over scored frames.
    pub fn accuracy(&self) -> f64 {
        let o = self.overlaps();
        if o.is_empty() {
            0.0
        } else {
            o.iter().sum::<f64>() / o.len() as f64
        }
    }

    pub fn tracked_frames(&self) -> usize {
        self.scored().count()
    }

    /// Per-frame wall-clock, including generator calls made at init.
    pub fn millis_per_frame(&self) -> f64 {
        if self.frames.is_empty() {
            0.0
        } else {
            self.seconds * 1e3 / self.frames.len() as f64
        }
    }
}

/// Precision against the target trajectory instead of the ground truth.
pub fn targeted_precision(result: &SequenceResult, threshold: f64) -> f64 {
    precision_at(&result.target_errors(), threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Initialize once, never restart.
    OnePass,
    /// Restart from the ground truth `skip` frames after a zero-overlap frame.
    Restarts { skip: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub protocol: Protocol,
    /// Frames treated as failures regardless of overlap.
    pub inject_failures: Vec<usize>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            protocol: Protocol::OnePass,
            inject_failures: Vec::new(),
        }
    }
}

/// Tracks `video` from frame 0 with `attack` perturbing every search crop.
pub fn run_sequence(tracker: &Tracker, video: &dyn Video, attack: &mut dyn Attack, opts: &RunOptions) -> Result<SequenceResult> {
    let start = Instant::now();
    let mut frames = Vec::with_capacity(video.len());
    let mut restarts = 0;
    let mut prepared = false;
    let mut state = None;
    let mut i = 0;
    while i < video.len() {
        let t0 = Instant::now();
        let frame = video.frame(i)?;
        let gt = video.gt(i);
        let Some(current) = state.take() else {
            let st = tracker.track_init(&frame, &gt)?;
            if !prepared {
                attack.prepare(tracker, video, &Tracker::template_crop(&frame, &gt)?)?;
                prepared = true;
            }
            frames.push(FrameRecord {
                frame: i,
                status: FrameStatus::Init,
                gt,
                bbox: Some(st.bbox()),
                target: attack.target(video, i),
                confidence: None,
                direction: None,
                overlap: None,
                center_error: None,
                millis: t0.elapsed().as_secs_f64() * 1e3,
            });
            state = Some(st);
            i += 1;
            continue;
        };
        let (window, search) = tracker.search_crop(&current, &frame)?;
        let adv = attack.perturb(video, i, &current, search)?;
        let step = tracker.step_on_search(&current, &window, &adv.search)?;
        let overlap = step.bbox.iou(&gt);
        let failed = match opts.protocol {
            Protocol::OnePass => false,
            Protocol::Restarts { .. } => overlap == 0.0 || opts.inject_failures.contains(&i),
        };
        frames.push(FrameRecord {
            frame: i,
            status: if failed { FrameStatus::Failure } else { FrameStatus::Tracked },
            gt,
            bbox: Some(step.bbox),
            target: attack.target(video, i),
            confidence: Some(step.confidence),
            direction: adv.direction,
            overlap: Some(overlap),
            center_error: Some(step.bbox.center_distance(&gt)),
            millis: t0.elapsed().as_secs_f64() * 1e3,
        });
        match (failed, opts.protocol) {
            (true, Protocol::Restarts { skip }) => {
                restarts += 1;
                let resume = (i + skip).min(video.len());
                for j in i + 1..resume {
                    frames.push(FrameRecord {
                        frame: j,
                        status: FrameStatus::Skipped,
                        gt: video.gt(j),
                        bbox: None,
                        target: None,
                        confidence: None,
                        direction: None,
                        overlap: None,
                        center_error: None,
                        millis: 0.0,
                    });
                }
                i = resume;
            }
            _ => {
                state = Some(step.state);
                i += 1;
            }
        }
    }
    Ok(SequenceResult {
        sequence: video.name().to_string(),
        method: attack.name(),
        epsilon: attack.epsilon(),
        frames,
        restarts,
        generator_calls: attack.generator_calls(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs every sequence with a fresh attack from `make_attack`. Results keep
/// the dataset order whatever the worker count.
pub fn run_dataset<F>(tracker: &Tracker, data: &Dataset, make_attack: F, opts: &RunOptions, workers: usize) -> Result<Vec<SequenceResult>>
where
    F: Fn() -> Box<dyn Attack> + Sync,
{
    let videos: Vec<_> = data.iter().cloned().collect();
    let run = |v: &crate::data::SharedVideo| {
        let mut attack = make_attack();
        let r = run_sequence(tracker, v.as_ref(), attack.as_mut(), opts);
        if let Ok(r) = &r {
            log::info!(
                "{} {}: p20 {:.3} auc {:.3} restarts {}",
                r.method,
                r.sequence,
                r.precision(SHORT_TERM_THRESHOLD),
                r.auc(),
                r.restarts
            );
        }
        r
    };
    if workers <= 1 {
        return videos.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| crate::Error::InvalidConfig(format!("worker pool: {e}")))?;
    pool.install(|| videos.par_iter().map(run).collect())
}

/// Concatenated per-frame errors over several runs.
pub fn pooled_precision(results: &[SequenceResult], threshold: f64) -> f64 {
    let e: Vec<f64> = results.iter().flat_map(|r| r.center_errors()).collect();
    precision_at(&e, threshold)
}

pub fn pooled_auc(results: &[SequenceResult]) -> f64 {
    let o: Vec<f64> = results.iter().flat_map(|r| r.overlaps()).collect();
    success_curve(&o).1
}

pub fn pooled_targeted_precision(results: &[SequenceResult], threshold: f64) -> f64 {
    let e: Vec<f64> = results.iter().flat_map(|r| r.target_errors()).collect();
    precision_at(&e, threshold)
}

pub fn total_restarts(results: &[SequenceResult]) -> usize {
    results.iter().map(|r| r.restarts).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Clean;
    use crate::data::{Motion, SyntheticSpec, SyntheticVideo};
    use crate::tracker::TrackerConfig;
    use proptest::prelude::*;

    fn video(len: usize) -> SyntheticVideo {
        let mut spec = SyntheticSpec::random("v", 4, 160, 120, len);
        spec.motion = Motion::ConstantVelocity { vx: 0.0, vy: 0.0 };
        SyntheticVideo::new(spec).unwrap()
    }

    #[test]
    fn injected_failure_restarts_five_frames_later() {
        let tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let v = video(20);
        let opts = RunOptions {
            protocol: Protocol::Restarts { skip: 5 },
            inject_failures: vec![7],
        };
        let r = run_sequence(&tracker, &v, &mut Clean, &opts).unwrap();
        assert_eq!(r.frames.len(), 20);
        assert!(r.frames.iter().enumerate().all(|(i, f)| f.frame == i));
        let status = |i: usize| r.frames[i].status;
        assert_eq!(status(0), FrameStatus::Init);
        assert_eq!(status(7), FrameStatus::Failure);
        assert!((8..12).all(|i| status(i) == FrameStatus::Skipped));
        assert_eq!(status(12), FrameStatus::Init);
        assert!(r.restarts >= 1);
        assert!(r.frames.iter().filter(|f| !f.scored()).all(|f| f.overlap.is_none() && f.center_error.is_none()));
        assert_eq!(r.center_errors().len(), r.tracked_frames());
    }

    #[test]
    fn one_pass_scores_every_frame_but_the_first() {
        let tracker = Tracker::new(TrackerConfig::default()).unwrap();
        let r = run_sequence(&tracker, &video(6), &mut Clean, &RunOptions::default()).unwrap();
        assert_eq!(r.tracked_frames(), 5);
        assert_eq!(r.restarts, 0);
        assert!(r.overlaps().iter().all(|o| (0.0..=1.0).contains(o)));
    }

    fn result_with(pred: &[(f64, f64)], target: &[(f64, f64)]) -> SequenceResult {
        let frames = pred
            .iter()
            .zip(target)
            .enumerate()
            .map(|(i, (p, t))| FrameRecord {
                frame: i,
                status: FrameStatus::Tracked,
                gt: BBox::raw(0.0, 0.0, 10.0, 10.0),
                bbox: Some(BBox::raw(p.0, p.1, 10.0, 10.0)),
                target: Some(*t),
                confidence: None,
                direction: None,
                overlap: Some(0.0),
                center_error: Some(0.0),
                millis: 0.0,
            })
            .collect();
        SequenceResult {
            sequence: "s".into(),
            method: "m".into(),
            epsilon: 0.0,
            frames,
            restarts: 0,
            generator_calls: 0,
            seconds: 0.0,
        }
    }

    #[test]
    fn target_equal_to_prediction_is_perfect() {
        let pts = [(1.0, 2.0), (30.0, 40.0)];
        assert_eq!(targeted_precision(&result_with(&pts, &pts), 20.0), 1.0);
    }

    proptest! {
        #[test]
        fn targeted_precision_matches_naive_count(steps in prop::collection::vec((-9.0f64..9.0, -9.0f64..9.0), 1..60), t in 1.0f64..60.0) {
            let mut walk = Vec::new();
            let (mut x, mut y) = (100.0, 100.0);
            for (dx, dy) in &steps {
                x += dx;
                y += dy;
                walk.push((x, y));
            }
            let still = vec![(100.0, 100.0); walk.len()];
            let r = result_with(&still, &walk);
            let mut hits = 0;
            for (tx, ty) in &walk {
                let d = ((tx - 100.0) * (tx - 100.0) + (ty - 100.0) * (ty - 100.0)).sqrt();
                if d <= t {
                    hits += 1;
                }
            }
            prop_assert!((targeted_precision(&r, t) - hits as f64 / walk.len() as f64).abs() < 1e-12);
        }
    }
}
