//! Generator-call and wall-clock cost of the three attack modes.
//!
//! cargo run --release --example attack_cost -- tracker.ckpt generator-untargeted.ckpt generator-targeted.ckpt [sequences]

use std::path::Path;

use siam_oneshot::attack::{OneShot, PerFrame, TargetTrajectory, Targeted};
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::eval::{cost_report, run_dataset, RunOptions};
use siam_oneshot::generator::Generator;
use siam_oneshot::tracker::Tracker;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tracker = Tracker::load(Path::new(&args.next().unwrap_or_else(|| "tracker.ckpt".into())))?;
    let untargeted = Generator::load(Path::new(&args.next().unwrap_or_else(|| "generator-untargeted.ckpt".into())))?;
    let targeted = Generator::load(Path::new(&args.next().unwrap_or_else(|| "generator-targeted.ckpt".into())))?;
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let test = CorpusConfig::default().dataset(Split::Test)?.take(n);
    let opts = RunOptions::default();
    let traj = TargetTrajectory::FixedDirection { dx: 3.0, dy: 3.0 };

    let mut runs = run_dataset(&tracker, &test, || Box::new(OneShot::new(untargeted.clone())), &opts, 1)?;
    runs.extend(run_dataset(&tracker, &test, || Box::new(Targeted::new(targeted.clone(), traj.clone(), 12, 4.0, 64.0)), &opts, 1)?);
    runs.extend(run_dataset(&tracker, &test, || Box::new(PerFrame::new(untargeted.clone())), &opts, 1)?);
    println!("{:<22} {:>6} {:>10} {:>12} {:>10}", "method", "seqs", "calls/seq", "s/seq", "ms/frame");
    for r in cost_report(&runs) {
        println!(
            "{:<22} {:>6} {:>10.1} {:>12.3} {:>10.2}",
            r.method, r.sequences, r.calls_per_sequence, r.seconds_per_sequence, r.ms_per_frame
        );
    }
    Ok(())
}
