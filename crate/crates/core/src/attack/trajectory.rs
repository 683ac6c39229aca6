use serde::{Deserialize, Serialize};

use crate::data::Video;
use crate::error::{Error, Result};

/// Where a targeted attack wants the tracker to go.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetTrajectory {
    /// Start at the first gt center and move `(dx, dy)` pixels per frame,
    /// bouncing off the frame borders.
    FixedDirection { dx: f64, dy: f64 },
    /// Follow the gt center at a constant offset, clamped to the frame.
    GtOffset { dx: f64, dy: f64 },
    /// Explicit per-frame centers; the last one repeats.
    Polyline { points: Vec<(f64, f64)> },
}

fn reflect(v: f64, max: f64) -> f64 {
    if max <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * max;
    let m = v.rem_euclid(period);
    if m <= max {
        m
    } else {
        period - m
    }
}

impl TargetTrajectory {
    /// The four diagonal fixed-direction scenarios, 3 px per frame.
    pub fn diagonals(step: f64) -> Vec<TargetTrajectory> {
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .into_iter()
            .map(|(x, y)| TargetTrajectory::FixedDirection { dx: x * step, dy: y * step })
            .collect()
    }

    /// The four diagonal gt-offset scenarios.
    pub fn offsets(offset: f64) -> Vec<TargetTrajectory> {
        [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
            .into_iter()
            .map(|(x, y)| TargetTrajectory::GtOffset { dx: x * offset, dy: y * offset })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetTrajectory::Polyline { points } if points.is_empty() => {
                Err(Error::InvalidTarget("polyline trajectory has no points".into()))
            }
            _ => Ok(()),
        }
    }

    /// Target center at frame `i`.
    pub fn center(&self, video: &dyn Video, i: usize) -> (f64, f64) {
        let (w, h) = video.frame_size();
        let (w, h) = (w as f64, h as f64);
        match self {
            TargetTrajectory::FixedDirection { dx, dy } => {
                let (x0, y0) = video.gt(0).center();
                (reflect(x0 + dx * i as f64, w), reflect(y0 + dy * i as f64, h))
            }
            TargetTrajectory::GtOffset { dx, dy } => {
                let (x, y) = video.gt(i).center();
                ((x + dx).clamp(0.0, w), (y + dy).clamp(0.0, h))
            }
            TargetTrajectory::Polyline { points } => points[i.min(points.len() - 1)],
        }
    }

    /// Short name used in report rows.
    pub fn label(&self) -> String {
        match self {
            TargetTrajectory::FixedDirection { dx, dy } => format!("fixed({dx:+},{dy:+})"),
            TargetTrajectory::GtOffset { dx, dy } => format!("offset({dx:+},{dy:+})"),
            TargetTrajectory::Polyline { points } => format!("polyline({})", points.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Motion, SyntheticSpec, SyntheticVideo};

    fn still() -> SyntheticVideo {
        let mut spec = SyntheticSpec::random("s", 1, 320, 240, 200);
        spec.start = Some((300.0, 120.0));
        spec.object_w = 30.0;
        spec.object_h = 30.0;
        spec.scale_drift = 0.0;
        spec.motion = Motion::ConstantVelocity { vx: 0.0, vy: 0.0 };
        SyntheticVideo::new(spec).unwrap()
    }

    #[test]
    fn fixed_direction_moves_and_reflects() {
        let v = still();
        let t = TargetTrajectory::FixedDirection { dx: 3.0, dy: 3.0 };
        assert_eq!(t.center(&v, 0), (300.0, 120.0));
        assert_eq!(t.center(&v, 5), (315.0, 135.0));
        // x hits 320 at frame 6.67 and bounces back
        assert_eq!(t.center(&v, 10), (310.0, 150.0));
    }

    #[test]
    fn gt_offset_is_clamped() {
        let v = still();
        let t = TargetTrajectory::GtOffset { dx: 80.0, dy: -80.0 };
        assert_eq!(t.center(&v, 3), (320.0, 40.0));
    }

    #[test]
    fn polyline_repeats_last_point() {
        let v = still();
        let t = TargetTrajectory::Polyline {
            points: vec![(1.0, 2.0), (3.0, 4.0)],
        };
        assert_eq!(t.center(&v, 1), (3.0, 4.0));
        assert_eq!(t.center(&v, 9), (3.0, 4.0));
        assert!(TargetTrajectory::Polyline { points: vec![] }.validate().is_err());
    }

    #[test]
    fn serde_shape() {
        let t: TargetTrajectory = toml::from_str("mode = \"gt-offset\"\ndx = 80.0\ndy = -80.0").unwrap();
        assert_eq!(t, TargetTrajectory::GtOffset { dx: 80.0, dy: -80.0 });
    }
}
