//! Loss-term and shift-distance ablations through the on-disk pipeline.
//! Expects `gen-data`, `train-tracker` to have run under the same output root.
//!
//! cargo run --release --example ablation -- <out root> [epochs]

use std::path::PathBuf;

use siam_oneshot::config::RunConfig;
use siam_oneshot::losses::LossTerms;
use siam_oneshot::pipeline::{ablation_csv, Pipeline};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = RunConfig {
        out_dir: PathBuf::from(args.next().unwrap_or_else(|| "runs".into())),
        ..RunConfig::default()
    };
    cfg.train_attack.epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let p = Pipeline::new(cfg)?;
    let losses = p.ablate_losses(&[LossTerms::fool_only(), LossTerms::all()])?;
    print!("{}", ablation_csv(&losses));
    let d = p.ablate_d(&[2, 4, 6, 8, 10])?;
    print!("{}", ablation_csv(&d));
    Ok(())
}
