//! Builds a directional perturbation bank and steers the tracker along the
//! four diagonal trajectories and the four gt-offset trajectories.
//!
//! cargo run --release --example targeted_attack -- tracker.ckpt generator-targeted.ckpt [sequences]

use std::path::Path;

use siam_oneshot::attack::{build_bank, follow_trajectory, TargetTrajectory};
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::eval::{pooled_targeted_precision, SHORT_TERM_THRESHOLD};
use siam_oneshot::generator::Generator;
use siam_oneshot::tracker::Tracker;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tracker = Tracker::load(Path::new(&args.next().unwrap_or_else(|| "tracker.ckpt".into())))?;
    let generator = Generator::load(Path::new(&args.next().unwrap_or_else(|| "generator-targeted.ckpt".into())))?;
    let n: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(5);
    let test = CorpusConfig::default().dataset(Split::Test)?.take(n);

    let first = &test.videos[0];
    let template = Tracker::template_crop(&first.frame(0)?, &first.gt(0))?;
    let bank = build_bank(&generator, &template, 12, 4.0, 64.0, &tracker.grid)?;
    println!("bank of {} perturbations, max |delta| {:.4}", bank.len(), bank.perturbations[0].linf());

    let mut trajectories = TargetTrajectory::diagonals(3.0);
    trajectories.extend(TargetTrajectory::offsets(80.0));
    for t in &trajectories {
        let runs = test
            .iter()
            .map(|v| follow_trajectory(&tracker, &generator, v.as_ref(), t, 12, 4.0, 64.0))
            .collect::<Result<Vec<_>, _>>()?;
        let dirs: Vec<usize> = runs[0].frames.iter().filter_map(|f| f.direction).take(12).collect();
        println!(
            "{:<18} targeted precision@20 {:.3}  calls/seq {}  first directions {:?}",
            t.label(),
            pooled_targeted_precision(&runs, SHORT_TERM_THRESHOLD),
            runs[0].generator_calls,
            dirs
        );
    }
    Ok(())
}
