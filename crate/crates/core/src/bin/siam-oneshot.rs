use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use siam_oneshot::attack::train::AttackMode;
use siam_oneshot::attack::TargetTrajectory;
use siam_oneshot::config::{RunConfig, OUT_ENV};
use siam_oneshot::data::CorpusConfig;
use siam_oneshot::losses::LossTerms;
use siam_oneshot::pipeline::{AttackMethod, Pipeline};

#[derive(Parser)]
#[command(name = "siam-oneshot", version, about = "One-shot adversarial perturbations against a Siamese RPN tracker")]
struct Cli {
    /// TOML run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Seed for every stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Sequences evaluated in parallel.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainMode {
    Untargeted,
    Targeted,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Clean,
    OneShot,
    Targeted,
    PerFrameBaseline,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/val/test corpus.
    GenData {
        /// TOML file with corpus settings (same keys as `[corpus]`).
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Train the tracker on the train split.
    TrainTracker {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        pairs: Option<usize>,
    },
    /// Train a perturbation generator against the saved tracker.
    TrainAttack {
        #[arg(long, value_enum, default_value = "untargeted")]
        mode: TrainMode,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Run an attack over the test split and save one run file per sequence.
    Attack {
        #[arg(long, value_enum, default_value = "one-shot")]
        mode: Mode,
        /// `diagonals`, `offsets`, `long-offsets`, or a TOML file with one
        /// trajectory table or a `[[trajectory]]` list.
        #[arg(long)]
        trajectory: Option<String>,
        /// Use the restart protocol.
        #[arg(long)]
        restarts: bool,
    },
    /// Aggregate run files into CSV tables and plots.
    Eval {
        /// Run directories or files; defaults to `<out>/runs`.
        runs: Vec<PathBuf>,
        /// Columns printed to stdout.
        #[arg(long, value_delimiter = ',', default_value = "precision,success,restarts")]
        metrics: Vec<String>,
        /// Report directory; defaults to `<out>/eval`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Loss-term and shift-distance ablations.
    Ablate {
        /// Comma-separated term sets such as `fool+p,fool+shift+p`.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        toggle_set: Option<Vec<String>>,
        /// Shift distances; without values uses the configured sweep.
        #[arg(long, num_args = 0..)]
        d_sweep: Option<Vec<i64>>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    trajectory: Vec<TargetTrajectory>,
}

fn trajectories(spec: &str) -> anyhow::Result<Vec<TargetTrajectory>> {
    match spec {
        "diagonals" => return Ok(TargetTrajectory::diagonals(3.0)),
        "offsets" => return Ok(TargetTrajectory::offsets(80.0)),
        "long-offsets" => return Ok(TargetTrajectory::offsets(150.0)),
        _ => {}
    }
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading trajectory file {spec}"))?;
    if let Ok(f) = toml::from_str::<TrajectoryFile>(&text) {
        return Ok(f.trajectory);
    }
    let t: TargetTrajectory = toml::from_str(&text).with_context(|| format!("parsing trajectory file {spec}"))?;
    Ok(vec![t])
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn print_summary(rows: &[siam_oneshot::eval::MethodSummary], metrics: &[String]) -> anyhow::Result<()> {
    let mut header = vec!["method".to_string(), "epsilon".into(), "sequences".into()];
    for m in metrics {
        match m.as_str() {
            "precision" => header.push("precision20".into()),
            "success" => header.push("auc".into()),
            "accuracy" => header.push("accuracy".into()),
            "restarts" => header.push("restarts".into()),
            "target" => header.extend(["target_precision20".into(), "target_precision50".into()]),
            other => bail!("unknown metric `{other}`; expected precision, success, accuracy, restarts or target"),
        }
    }
    println!("{}", header.join("\t"));
    for r in rows {
        let mut cells = vec![r.method.clone(), r.epsilon.to_string(), r.sequences.to_string()];
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        for m in metrics {
            match m.as_str() {
                "precision" => cells.push(format!("{:.3}", r.precision20)),
                "success" => cells.push(format!("{:.3}", r.auc)),
                "accuracy" => cells.push(format!("{:.3}", r.accuracy)),
                "restarts" => cells.push(r.restarts.to_string()),
                _ => cells.extend([opt(r.target_precision20), opt(r.target_precision50)]),
            }
        }
        println!("{}", cells.join("\t"));
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenData { spec } => {
            if let Some(s) = spec {
                let text = std::fs::read_to_string(s)?;
                cfg.corpus = toml::from_str::<CorpusConfig>(&text).with_context(|| format!("parsing {}", s.display()))?;
            }
            let p = Pipeline::new(cfg)?;
            println!("{}", p.gen_data()?.display());
        }
        Command::TrainTracker { epochs, pairs } => {
            if let Some(e) = epochs {
                cfg.train_tracker.epochs = *e;
            }
            if let Some(n) = pairs {
                cfg.train_tracker.pairs = *n;
            }
            let p = Pipeline::new(cfg)?;
            let r = p.train_tracker()?;
            println!("{} ({:.0}s, losses {:?})", p.tracker_path().display(), r.seconds, r.epoch_losses);
        }
        Command::TrainAttack { mode, epochs, epsilon } => {
            if let Some(e) = epochs {
                cfg.train_attack.epochs = *e;
            }
            if let Some(e) = epsilon {
                cfg.train_attack.epsilon = *e;
            }
            let mode = match mode {
                TrainMode::Untargeted => AttackMode::Untargeted,
                TrainMode::Targeted => AttackMode::Targeted,
            };
            let p = Pipeline::new(cfg)?;
            let r = p.train_attack(mode)?;
            println!("{} ({:.0}s, losses {:?})", p.generator_path(mode).display(), r.seconds, r.epoch_losses);
        }
        Command::Attack { mode, trajectory, restarts } => {
            cfg.attack.restarts |= *restarts;
            let method = match mode {
                Mode::Clean => AttackMethod::Clean,
                Mode::OneShot => AttackMethod::OneShot,
                Mode::Targeted => AttackMethod::Targeted,
                Mode::PerFrameBaseline => AttackMethod::PerFrameBaseline,
            };
            let trajs = trajectory.as_deref().map(trajectories).transpose()?;
            let p = Pipeline::new(cfg)?;
            for d in p.attack(method, trajs.as_deref())? {
                println!("{}", d.display());
            }
        }
        Command::Eval { runs, metrics, report } => {
            let p = Pipeline::new(cfg)?;
            let runs = if runs.is_empty() { vec![p.runs_dir()] } else { runs.clone() };
            let out = report.clone().unwrap_or_else(|| p.eval_dir());
            let rows = p.eval(&runs, &out)?;
            print_summary(&rows, metrics)?;
            eprintln!("report written to {}", out.display());
        }
        Command::Ablate { toggle_set, d_sweep } => {
            let p = Pipeline::new(cfg)?;
            let both = toggle_set.is_none() && d_sweep.is_none();
            if toggle_set.is_some() || both {
                let sets = match toggle_set.as_deref() {
                    Some(s) if !s.is_empty() => s.iter().map(|l| LossTerms::from_label(l)).collect::<Result<Vec<_>, _>>()?,
                    _ => p.config.ablate.toggle_sets.clone(),
                };
                print_ablation(&p.ablate_losses(&sets)?);
            }
            if d_sweep.is_some() || both {
                let ds = match d_sweep.as_deref() {
                    Some(d) if !d.is_empty() => d.to_vec(),
                    _ => p.config.ablate.d_sweep.clone(),
                };
                print_ablation(&p.ablate_d(&ds)?);
            }
            eprintln!("tables written to {}", p.ablate_dir().display());
        }
    }
    Ok(())
}

fn print_ablation(rows: &[siam_oneshot::pipeline::AblationRow]) {
    println!("variant\tprecision20\tauc\trestarts\tdrop");
    for r in rows {
        println!("{}\t{:.3}\t{:.3}\t{}\t{:.3}", r.variant, r.precision20, r.auc, r.restarts, r.precision_drop());
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
