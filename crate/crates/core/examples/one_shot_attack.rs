//! Tracks one test sequence clean and under the one-shot attack.
//!
//! cargo run --release --example one_shot_attack -- tracker.ckpt generator-untargeted.ckpt [sequence index]

use std::path::Path;

use siam_oneshot::attack::{one_shot_attack, run_with_restarts, Clean, OneShot};
use siam_oneshot::data::{CorpusConfig, Split};
use siam_oneshot::eval::{run_sequence, RunOptions};
use siam_oneshot::generator::Generator;
use siam_oneshot::tracker::Tracker;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let tracker = Tracker::load(Path::new(&args.next().unwrap_or_else(|| "tracker.ckpt".into())))?;
    let generator = Generator::load(Path::new(&args.next().unwrap_or_else(|| "generator-untargeted.ckpt".into())))?;
    let index: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);

    let test = CorpusConfig::default().dataset(Split::Test)?;
    let video = test.videos[index % test.len()].clone();

    let clean = run_sequence(&tracker, video.as_ref(), &mut Clean, &RunOptions::default())?;
    let adv = one_shot_attack(&tracker, &generator, video.as_ref())?;
    println!("{}: {} frames", video.name(), video.len());
    println!("clean     precision@20 {:.3}  AUC {:.3}", clean.precision(20.0), clean.auc());
    println!("one-shot  precision@20 {:.3}  AUC {:.3}  generator calls {}", adv.precision(20.0), adv.auc(), adv.generator_calls);

    let restarts_clean = run_with_restarts(&tracker, video.as_ref(), &mut Clean)?;
    let mut attack = OneShot::new(generator);
    let restarts_adv = run_with_restarts(&tracker, video.as_ref(), &mut attack)?;
    println!(
        "restarts  clean {}  attacked {}  (perturbation generated {} time)",
        restarts_clean.restarts, restarts_adv.restarts, restarts_adv.generator_calls
    );
    for f in adv.frames.iter().step_by(10) {
        if let (Some(b), Some(e)) = (f.bbox, f.center_error) {
            println!("  frame {:>3}  pred ({:>6.1},{:>6.1})  gt ({:>6.1},{:>6.1})  error {:>6.1}", f.frame, b.cx, b.cy, f.gt.cx, f.gt.cy, e);
        }
    }
    Ok(())
}
