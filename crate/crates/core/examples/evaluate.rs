//! Runs clean, one-shot and per-frame evaluations over part of the test split
//! and writes the CSV/SVG report.
//!
//! cargo run --release --example evaluate -- tracker.ckpt generator-untargeted.ckpt [sequences] [out]

use std::path::{Path, PathBuf};

use siam_oneshot::attack::{Clean, OneShot, PerFrame};
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::eval::{emit_report, run_dataset, summarize, Protocol, RunOptions};
use siam_oneshot::generator::Generator;
use siam_oneshot::tracker::Tracker;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tracker = Tracker::load(Path::new(&args.next().unwrap_or_else(|| "tracker.ckpt".into())))?;
    let g = Generator::load(Path::new(&args.next().unwrap_or_else(|| "generator-untargeted.ckpt".into())))?;
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "report-demo".into()));
    let test = CorpusConfig::default().dataset(Split::Test)?.take(n);

    let one_pass = RunOptions::default();
    let restarts = RunOptions {
        protocol: Protocol::Restarts { skip: 5 },
        ..RunOptions::default()
    };
    let mut results = run_dataset(&tracker, &test, || Box::new(Clean), &one_pass, 1)?;
    results.extend(run_dataset(&tracker, &test, || Box::new(OneShot::new(g.clone())), &one_pass, 1)?);
    results.extend(run_dataset(&tracker, &test, || Box::new(PerFrame::new(g.clone())), &one_pass, 1)?);
    let mut with_restarts = run_dataset(&tracker, &test, || Box::new(Clean), &restarts, 1)?;
    with_restarts.extend(run_dataset(&tracker, &test, || Box::new(OneShot::new(g.clone())), &restarts, 1)?);

    for s in summarize(&results) {
        println!("{:<12} eps {:>4}  precision@20 {:.3}  AUC {:.3}", s.method, s.epsilon, s.precision20, s.auc);
    }
    for s in summarize(&with_restarts) {
        println!("{:<12} restarts {}", s.method, s.restarts);
    }
    for p in emit_report(&results, &out, None)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
