//! The on-disk workflow behind the command-line tool.
//!
//! Layout under the output root:
//!
//! ```text
//! corpus/{train,val,test}/<sequence>/   frames + groundtruth.txt
//! tracker/tracker.ckpt                  plus train_log.csv, config.toml
//! generator-<mode>/generator.ckpt       plus train_log.csv, config.toml
//! runs/<method>/<sequence>.json         one attack run per sequence
//! eval/                                 report tables and plots
//! ablate/                               ablation tables and cached generators
//! ```
//!
//! Every stage writes the effective configuration next to its outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::train::{train_generator, write_train_log, AttackMode, AttackTrainConfig, AttackTrainReport};
use crate::attack::{Attack, Clean, OneShot, PerFrame, TargetTrajectory, Targeted};
use crate::config::RunConfig;
use crate::data::{load_dataset, write_sequence, Dataset, Split};
use crate::error::{Error, Result};
use crate::eval::{emit_report, run_dataset, summarize, MethodSummary, Protocol, RunOptions, SequenceResult};
use crate::generator::Generator;
use crate::losses::LossTerms;
use crate::tracker::train::{train_tracker, TrainTrackerReport};
use crate::tracker::Tracker;

pub const CONFIG_ECHO: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    Clean,
    OneShot,
    Targeted,
    PerFrameBaseline,
}

impl AttackMethod {
    pub fn generator_mode(self) -> Option<AttackMode> {
        match self {
            AttackMethod::Clean => None,
            AttackMethod::Targeted => Some(AttackMode::Targeted),
            AttackMethod::OneShot | AttackMethod::PerFrameBaseline => Some(AttackMode::Untargeted),
        }
    }
}

fn mode_name(mode: AttackMode) -> &'static str {
    match mode {
        AttackMode::Untargeted => "untargeted",
        AttackMode::Targeted => "targeted",
    }
}

/// File-system friendly version of a run label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| match c {
            '+' => 'p',
            c if c.is_ascii_alphanumeric() || c == '-' || c == '.' => c,
            _ => '_',
        })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Short hex digest of any serializable value.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("value serializes");
    hex::encode(&Sha256::digest(&json)[..8])
}

/// One row of an ablation table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub precision20: f64,
    pub auc: f64,
    pub restarts: usize,
    pub clean_precision20: f64,
    pub clean_restarts: usize,
}

impl AblationRow {
    /// Relative precision drop against the clean tracker.
    pub fn precision_drop(&self) -> f64 {
        if self.clean_precision20 == 0.0 {
            0.0
        } else {
            1.0 - self.precision20 / self.clean_precision20
        }
    }
}

pub const ABLATION_HEADER: &str = "variant,precision20,auc,restarts,clean_precision20,clean_restarts,precision_drop";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{:.6},{},{:.6}",
            r.variant,
            r.precision20,
            r.auc,
            r.restarts,
            r.clean_precision20,
            r.clean_restarts,
            r.precision_drop()
        );
    }
    s
}

pub struct Pipeline {
    pub config: RunConfig,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        Ok(Self {
            config: config.resolved()?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.config.out_dir
    }

    pub fn corpus_dir(&self, split: Split) -> PathBuf {
        self.root().join("corpus").join(split.name())
    }

    pub fn tracker_dir(&self) -> PathBuf {
        self.root().join("tracker")
    }

    pub fn tracker_path(&self) -> PathBuf {
        self.tracker_dir().join("tracker.ckpt")
    }

    pub fn generator_dir(&self, mode: AttackMode) -> PathBuf {
        self.root().join(format!("generator-{}", mode_name(mode)))
    }

    pub fn generator_path(&self, mode: AttackMode) -> PathBuf {
        self.generator_dir(mode).join("generator.ckpt")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.root().join("runs")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root().join("eval")
    }

    pub fn ablate_dir(&self) -> PathBuf {
        self.root().join("ablate")
    }

    pub fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_ECHO), self.config.to_toml())?;
        Ok(())
    }

    /// Writes the synthetic corpus, one directory per split.
    pub fn gen_data(&self) -> Result<PathBuf> {
        for split in [Split::Train, Split::Val, Split::Test] {
            let dir = self.corpus_dir(split);
            let data = self.config.corpus.dataset(split)?;
            for v in data.iter() {
                write_sequence(v.as_ref(), &dir.join(v.name()))?;
            }
            log::info!("wrote {} {} sequences to {}", data.len(), split.name(), dir.display());
        }
        let root = self.root().join("corpus");
        self.echo(&root)?;
        Ok(root)
    }

    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let dir = self.corpus_dir(split);
        if !dir.is_dir() {
            return Err(Error::Missing {
                what: format!("{} corpus at {}", split.name(), dir.display()),
                command: "gen-data".into(),
            });
        }
        let data = load_dataset(&dir)?;
        if data.is_empty() {
            return Err(Error::Missing {
                what: format!("sequences in {}", dir.display()),
                command: "gen-data".into(),
            });
        }
        Ok(data)
    }

    pub fn train_tracker(&self) -> Result<TrainTrackerReport> {
        let data = self.dataset(Split::Train)?;
        let (tracker, report) = train_tracker(&data, &self.config.tracker, &self.config.train_tracker)?;
        let dir = self.tracker_dir();
        self.echo(&dir)?;
        tracker.save(&self.tracker_path())?;
        let mut log = String::from("epoch,loss\n");
        for (i, l) in report.epoch_losses.iter().enumerate() {
            let _ = writeln!(log, "{i},{l:.6}");
        }
        fs::write(dir.join("train_log.csv"), log)?;
        Ok(report)
    }

    pub fn tracker(&self) -> Result<Tracker> {
        let p = self.tracker_path();
        if !p.exists() {
            return Err(Error::Missing {
                what: format!("tracker checkpoint {}", p.display()),
                command: "train-tracker".into(),
            });
        }
        Tracker::load(&p)
    }

    pub fn attack_train_config(&self, mode: AttackMode) -> AttackTrainConfig {
        AttackTrainConfig {
            mode,
            ..self.config.train_attack.clone()
        }
    }

    pub fn train_attack(&self, mode: AttackMode) -> Result<AttackTrainReport> {
        let tracker = self.tracker()?;
        let data = self.dataset(Split::Train)?;
        let (generator, report) = train_generator(&tracker, &data, &self.attack_train_config(mode))?;
        let dir = self.generator_dir(mode);
        self.echo(&dir)?;
        generator.save(&self.generator_path(mode))?;
        write_train_log(&dir.join("train_log.csv"), &report.steps)?;
        Ok(report)
    }

    pub fn generator(&self, mode: AttackMode) -> Result<Generator> {
        let p = self.generator_path(mode);
        if !p.exists() {
            return Err(Error::Missing {
                what: format!("{} generator checkpoint {}", mode_name(mode), p.display()),
                command: format!("train-attack --mode {}", mode_name(mode)),
            });
        }
        Generator::load(&p)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            protocol: if self.config.attack.restarts {
                Protocol::Restarts {
                    skip: self.config.attack.skip,
                }
            } else {
                Protocol::OnePass
            },
            inject_failures: Vec::new(),
        }
    }

    /// Runs `make` over the test split.
    pub fn run_test<F>(&self, tracker: &Tracker, make: F) -> Result<Vec<SequenceResult>>
    where
        F: Fn() -> Box<dyn Attack> + Sync,
    {
        let data = self.dataset(Split::Test)?;
        run_dataset(tracker, &data, make, &self.options(), self.config.workers)
    }

    /// Runs one attack method over the test split and writes one JSON file
    /// per sequence. Returns the run directories.
    pub fn attack(&self, method: AttackMethod, trajectories: Option<&[TargetTrajectory]>) -> Result<Vec<PathBuf>> {
        let tracker = self.tracker()?;
        let generator = method.generator_mode().map(|m| self.generator(m)).transpose()?;
        let protocol = if self.config.attack.restarts { "-restarts" } else { "" };
        type Make = Box<dyn Fn() -> Box<dyn Attack> + Sync>;
        let mut jobs: Vec<(String, Make)> = Vec::new();
        match (method, generator) {
            (AttackMethod::Clean, _) => jobs.push(("clean".into(), Box::new(|| -> Box<dyn Attack> { Box::new(Clean) }))),
            (AttackMethod::OneShot, Some(g)) => {
                let label = format!("one-shot-eps{}", g.config.epsilon);
                jobs.push((label, Box::new(move || -> Box<dyn Attack> { Box::new(OneShot::new(g.clone())) })));
            }
            (AttackMethod::PerFrameBaseline, Some(g)) => {
                let label = format!("per-frame-eps{}", g.config.epsilon);
                jobs.push((label, Box::new(move || -> Box<dyn Attack> { Box::new(PerFrame::new(g.clone())) })));
            }
            (AttackMethod::Targeted, Some(g)) => {
                let trajectories = trajectories.unwrap_or(&self.config.attack.trajectories);
                let t = &self.config.train_attack;
                for traj in trajectories {
                    traj.validate()?;
                    let (g, traj) = (g.clone(), traj.clone());
                    let (k, d, side) = (t.directions, t.loss.d as f64, t.loss.target_box_side);
                    jobs.push((
                        format!("targeted-{}", traj.label()),
                        Box::new(move || -> Box<dyn Attack> { Box::new(Targeted::new(g.clone(), traj.clone(), k, d, side)) }),
                    ));
                }
            }
            _ => unreachable!("generator loaded for every attacking method"),
        }
        let mut dirs = Vec::new();
        for (label, make) in jobs {
            let results = self.run_test(&tracker, make)?;
            let dir = self.runs_dir().join(slug(&format!("{label}{protocol}")));
            fs::create_dir_all(&dir)?;
            for r in &results {
                fs::write(dir.join(format!("{}.json", r.sequence)), serde_json::to_string_pretty(r)?)?;
            }
            self.echo(&dir)?;
            log::info!("wrote {} runs to {}", results.len(), dir.display());
            dirs.push(dir);
        }
        Ok(dirs)
    }

    /// Loads every run file under `dirs` (recursively, sorted) and writes the
    /// report to `out`. Nothing is written when no run is found.
    pub fn eval(&self, dirs: &[PathBuf], out: &Path) -> Result<Vec<MethodSummary>> {
        let mut files = Vec::new();
        for d in dirs {
            collect_runs(d, &mut files)?;
        }
        files.sort();
        if files.is_empty() {
            let shown: Vec<String> = dirs.iter().map(|d| d.display().to_string()).collect();
            return Err(Error::Missing {
                what: format!("attack runs in {}", shown.join(", ")),
                command: "attack".into(),
            });
        }
        let results = files
            .iter()
            .map(|f| Ok(serde_json::from_str::<SequenceResult>(&fs::read_to_string(f)?)?))
            .collect::<Result<Vec<_>>>()?;
        emit_report(&results, out, Some(&self.config.to_toml()))?;
        Ok(summarize(&results))
    }

    /// Trains (or reuses) an untargeted generator for `cfg`, cached under
    /// `ablate/` by configuration hash.
    pub fn cached_generator(&self, tracker: &Tracker, cfg: &AttackTrainConfig) -> Result<Generator> {
        let key = config_hash(&(cfg, config_hash(&self.config.corpus), config_hash(&tracker.to_checkpoint().to_bytes())));
        let path = self.ablate_dir().join(format!("generator-{key}.ckpt"));
        if path.exists() {
            return Generator::load(&path);
        }
        let data = self.dataset(Split::Train)?;
        let (g, _) = train_generator(tracker, &data, cfg)?;
        fs::create_dir_all(self.ablate_dir())?;
        g.save(&path)?;
        Ok(g)
    }

    fn ablation_row(&self, tracker: &Tracker, variant: String, g: &Generator, clean: &[SequenceResult]) -> Result<AblationRow> {
        let adv = self.run_test(tracker, || Box::new(OneShot::new(g.clone())))?;
        let (a, c) = (&summarize(&adv)[0], &summarize(clean)[0]);
        Ok(AblationRow {
            variant,
            precision20: a.precision20,
            auc: a.auc,
            restarts: a.restarts,
            clean_precision20: c.precision20,
            clean_restarts: c.restarts,
        })
    }

    /// Loss-term ablation (one untargeted generator per toggle set).
    pub fn ablate_losses(&self, sets: &[LossTerms]) -> Result<Vec<AblationRow>> {
        let tracker = self.tracker()?;
        let clean = self.run_test(&tracker, || Box::new(Clean))?;
        let mut rows = Vec::new();
        for terms in sets {
            let mut cfg = self.attack_train_config(AttackMode::Untargeted);
            cfg.loss.terms = *terms;
            let g = self.cached_generator(&tracker, &cfg)?;
            rows.push(self.ablation_row(&tracker, terms.label(), &g, &clean)?);
        }
        self.write_ablation("losses.csv", &rows)?;
        Ok(rows)
    }

    /// Shift-distance sweep for the untargeted attack.
    pub fn ablate_d(&self, ds: &[i64]) -> Result<Vec<AblationRow>> {
        let tracker = self.tracker()?;
        let clean = self.run_test(&tracker, || Box::new(Clean))?;
        let mut rows = Vec::new();
        for &d in ds {
            let mut cfg = self.attack_train_config(AttackMode::Untargeted);
            cfg.loss.d = d;
            let g = self.cached_generator(&tracker, &cfg)?;
            rows.push(self.ablation_row(&tracker, format!("d={d}"), &g, &clean)?);
        }
        self.write_ablation("d_sweep.csv", &rows)?;
        Ok(rows)
    }

    fn write_ablation(&self, name: &str, rows: &[AblationRow]) -> Result<()> {
        let dir = self.ablate_dir();
        self.echo(&dir)?;
        fs::write(dir.join(name), ablation_csv(rows))?;
        Ok(())
    }
}

fn collect_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    if !dir.is_dir() {
        return Ok(());
    }
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_runs(&p, out)?;
        } else if p.extension().is_some_and(|x| x == "json") {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_path_safe() {
        assert_eq!(slug("targeted-fixed(+3,-3)"), "targeted-fixed_p3_-3");
        assert_eq!(slug("one-shot-eps16"), "one-shot-eps16");
    }

    #[test]
    fn missing_prerequisites_name_the_command() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        })
        .unwrap();
        let e = p.tracker().unwrap_err().to_string();
        assert!(e.contains("train-tracker"), "{e}");
        let e = p.dataset(Split::Train).unwrap_err().to_string();
        assert!(e.contains("gen-data"), "{e}");
        let e = p.generator(AttackMode::Targeted).unwrap_err().to_string();
        assert!(e.contains("train-attack --mode targeted"), "{e}");
    }

    #[test]
    fn eval_on_empty_dir_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(RunConfig {
            out_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        })
        .unwrap();
        fs::create_dir_all(p.runs_dir()).unwrap();
        let out = dir.path().join("eval");
        assert!(matches!(p.eval(&[p.runs_dir()], &out), Err(Error::Missing { .. })));
        assert!(!out.exists());
    }
}
