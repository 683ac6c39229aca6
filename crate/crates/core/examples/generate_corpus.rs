//! Writes a small synthetic corpus to disk and reads it back.
//!
//! cargo run --release --example generate_corpus -- /tmp/corpus

use std::path::PathBuf;

use siam_oneshot::data::{load_dataset, write_sequence, CorpusConfig, Split};

fn main() -> anyhow::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "corpus-demo".into()));
    let corpus = CorpusConfig {
        train: 4,
        val: 1,
        test: 2,
        frames: 30,
        ..CorpusConfig::default()
    };
    for split in [Split::Train, Split::Val, Split::Test] {
        let dir = out.join(split.name());
        for v in corpus.dataset(split)?.iter() {
            write_sequence(v.as_ref(), &dir.join(v.name()))?;
        }
        let back = load_dataset(&dir)?;
        for v in back.iter() {
            let (first, last) = (v.gt(0), v.gt(v.len() - 1));
            println!(
                "{:<10} {} frames {}x{}  box ({:.0},{:.0}) -> ({:.0},{:.0})",
                v.name(),
                v.len(),
                v.frame_size().0,
                v.frame_size().1,
                first.cx,
                first.cy,
                last.cx,
                last.cy
            );
        }
    }
    println!("corpus written to {}", out.display());
    Ok(())
}
