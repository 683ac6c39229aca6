//! Trains an untargeted or targeted perturbation generator against a saved
//! tracker and prints the loss curve.
//!
//! cargo run --release --example train_generator -- tracker.ckpt [untargeted|targeted] [epochs]

use std::path::Path;

use anyhow::Context;
use siam_oneshot::attack::train::{probe_generator, train_generator, AttackMode, AttackTrainConfig};
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::generator::Generator;
use siam_oneshot::tracker::Tracker;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let tracker_path = args.next().unwrap_or_else(|| "tracker.ckpt".into());
    let tracker = Tracker::load(Path::new(&tracker_path)).with_context(|| format!("run the train_tracker example first ({tracker_path})"))?;
    let mode = match args.next().as_deref() {
        Some("targeted") => AttackMode::Targeted,
        _ => AttackMode::Untargeted,
    };
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);

    let corpus = CorpusConfig::default();
    let cfg = AttackTrainConfig {
        mode,
        epochs,
        ..AttackTrainConfig::default()
    };
    let train = corpus.dataset(Split::Train)?;
    let (generator, report) = train_generator(&tracker, &train, &cfg)?;
    for s in report.steps.iter().step_by(25) {
        println!("step {:>5}  fool {:>8.3}  shift {:>7.3}  p {:>6.3}  total {:>8.3}", s.step, s.fool, s.shift, s.perceptibility, s.total);
    }

    let val = corpus.dataset(Split::Val)?;
    let before = probe_generator(&tracker, &Generator::new(cfg.generator_config()), &val, &cfg)?;
    let after = probe_generator(&tracker, &generator, &val, &cfg)?;
    println!("clean-selected fg prob: untrained {:.3}, trained {:.3}", before.selected_fg, after.selected_fg);
    if mode == AttackMode::Targeted {
        println!("fg prob at masked cells: untrained {:.3}, trained {:.3}", before.target_fg, after.target_fg);
    }
    let out = format!("generator-{}.ckpt", if mode == AttackMode::Targeted { "targeted" } else { "untargeted" });
    generator.save(Path::new(&out))?;
    println!("saved {out}");
    Ok(())
}
