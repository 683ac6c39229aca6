//! Trains the tracker on the synthetic corpus and reports clean precision.
//!
//! cargo run --release --example train_tracker -- [epochs] [pairs] [out]

use std::path::PathBuf;

use siam_oneshot::attack::Clean;
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::eval::{pooled_auc, pooled_precision, run_dataset, RunOptions};
use siam_oneshot::tracker::train::{train_tracker, TrainTrackerConfig};
use siam_oneshot::tracker::TrackerConfig;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let pairs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(400);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "tracker.ckpt".into()));

    let corpus = CorpusConfig::default();
    let cfg = TrainTrackerConfig {
        epochs,
        pairs,
        ..TrainTrackerConfig::default()
    };
    let (tracker, report) = train_tracker(&corpus.dataset(Split::Train)?, &TrackerConfig::default(), &cfg)?;
    println!("epoch losses {:?} in {:.0}s", report.epoch_losses, report.seconds);
    tracker.save(&out)?;

    let test = corpus.dataset(Split::Test)?;
    let runs = run_dataset(&tracker, &test, || Box::new(Clean), &RunOptions::default(), 1)?;
    println!("clean precision@20 {:.3}  success AUC {:.3}", pooled_precision(&runs, 20.0), pooled_auc(&runs));
    println!("saved {}", out.display());
    Ok(())
}
