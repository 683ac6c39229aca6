//! Run configuration: one TOML file covering every stage.
//!
//! Unknown keys are rejected everywhere. Missing keys take the defaults
//! below, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::train::AttackTrainConfig;
use crate::attack::TargetTrajectory;
use crate::data::CorpusConfig;
use crate::error::{Error, Result};
use crate::losses::LossTerms;
use crate::tracker::train::TrainTrackerConfig;
use crate::tracker::TrackerConfig;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SIAM_ONESHOT_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Trajectories run by the targeted attack.
    pub trajectories: Vec<TargetTrajectory>,
    /// Use the restart protocol instead of a single pass.
    pub restarts: bool,
    /// Frames skipped after a failure under the restart protocol.
    pub skip: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        let mut trajectories = TargetTrajectory::diagonals(3.0);
        trajectories.extend(TargetTrajectory::offsets(80.0));
        Self {
            trajectories,
            restarts: false,
            skip: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub precision_threshold: f64,
    pub target_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            precision_threshold: 20.0,
            target_threshold: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub toggle_sets: Vec<LossTerms>,
    pub d_sweep: Vec<i64>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let t = LossTerms::all();
        Self {
            toggle_sets: vec![
                LossTerms::fool_only(),
                LossTerms {
                    fool_cls: false,
                    fool_reg: false,
                    ..t
                },
                LossTerms { fool_reg: false, shift_reg: false, ..t },
                LossTerms { fool_cls: false, shift_cls: false, ..t },
                t,
            ],
            d_sweep: vec![2, 4, 6, 8, 10],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every stage.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Parallel sequence evaluation; 1 runs sequentially.
    pub workers: usize,
    pub corpus: CorpusConfig,
    pub tracker: TrackerConfig,
    pub train_tracker: TrainTrackerConfig,
    pub train_attack: AttackTrainConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("runs"),
            workers: 1,
            corpus: CorpusConfig::default(),
            tracker: TrackerConfig::default(),
            train_tracker: TrainTrackerConfig::default(),
            train_attack: AttackTrainConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
            msg: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?, path)
    }

    /// Pushes the top-level seed into every stage and validates.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(s) = self.seed {
            self.corpus.seed = s;
            self.tracker.seed = s;
            self.train_tracker.seed = s;
            self.train_attack.seed = s;
        }
        if self.workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        self.train_attack.validate()?;
        for t in &self.attack.trajectories {
            t.validate()?;
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("", Path::new("c.toml")).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml("[tracker]\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = RunConfig::from_toml("[corpus]\ntrain = 2\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e}");
        assert!(RunConfig::from_toml("colour = 1", Path::new("c.toml")).is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.seed = Some(7);
        c.train_attack.loss.d = 6;
        let back = RunConfig::from_toml(&c.to_toml(), Path::new("echo.toml")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn seed_reaches_every_stage() {
        let c = RunConfig {
            seed: Some(9),
            ..RunConfig::default()
        }
        .resolved()
        .unwrap();
        assert_eq!((c.corpus.seed, c.tracker.seed, c.train_tracker.seed, c.train_attack.seed), (9, 9, 9, 9));
    }
}
