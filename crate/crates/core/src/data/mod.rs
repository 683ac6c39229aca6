//! Tracking sequences: procedural synthetic videos and on-disk frame folders.
//!
//! On disk a sequence is a directory of numbered lossless frames plus a
//! `groundtruth.txt` holding one `x,y,w,h` line (top-left corner, extent)
//! per frame.

mod synthetic;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use synthetic::{generate_video, Motion, SyntheticSpec, SyntheticVideo};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::Image;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";

/// Random-access annotated sequence.
pub trait Video: Send + Sync {
    fn name(&self) -> &str;
    fn len(&self) -> usize;
    fn frame(&self, i: usize) -> Result<Image>;
    fn gt(&self, i: usize) -> BBox;
    /// `(width, height)` in pixels.
    fn frame_size(&self) -> (usize, usize);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gt_boxes(&self) -> Vec<BBox> {
        (0..self.len()).map(|i| self.gt(i)).collect()
    }
}

pub type SharedVideo = Arc<dyn Video>;

/// Sequence stored as frame images plus annotations.
pub struct DiskVideo {
    name: String,
    frames: Vec<PathBuf>,
    boxes: Vec<BBox>,
    size: (usize, usize),
}

impl Video for DiskVideo {
    fn name(&self) -> &str {
        &self.name
    }

    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, i: usize) -> Result<Image> {
        Image::load_png(&self.frames[i])
    }

    fn gt(&self, i: usize) -> BBox {
        self.boxes[i]
    }

    fn frame_size(&self) -> (usize, usize) {
        self.size
    }
}

/// Parses `x,y,w,h` lines (commas, tabs or spaces) into center-form boxes.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BBox>> {
    let mut boxes = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let vals = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 4 {
            return Err(err(format!("expected 4 values `x,y,w,h`, found {}", vals.len())));
        }
        let b = BBox::from_xywh(vals[0], vals[1], vals[2], vals[3]).map_err(|e| err(e.to_string()))?;
        boxes.push(b);
    }
    Ok(boxes)
}

pub fn format_groundtruth(boxes: &[BBox]) -> String {
    let mut s = String::new();
    for b in boxes {
        let (x, y, w, h) = b.xywh();
        let _ = writeln!(s, "{x},{y},{w},{h}");
    }
    s
}

fn is_frame_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("png") | Some("PNG"))
}

/// Loads one sequence directory.
pub fn load_sequence(dir: &Path) -> Result<DiskVideo> {
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let text = std::fs::read_to_string(&gt_path).map_err(|e| Error::Parse {
        path: gt_path.clone(),
        line: 0,
        msg: e.to_string(),
    })?;
    let boxes = parse_groundtruth(&text, &gt_path)?;
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_frame_file(p))
        .collect();
    frames.sort();
    if frames.len() != boxes.len() {
        return Err(Error::Parse {
            path: gt_path,
            line: boxes.len(),
            msg: format!("{} frames but {} annotation lines", frames.len(), boxes.len()),
        });
    }
    let size = match frames.first() {
        Some(f) => {
            let (w, h) = image::image_dimensions(f)?;
            (w as usize, h as usize)
        }
        None => (0, 0),
    };
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("sequence").to_owned();
    Ok(DiskVideo { name, frames, boxes, size })
}

/// Loads a dataset root: either a single sequence directory or a directory
/// of sequence directories (sorted by name).
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    if path.join(GROUNDTRUTH_FILE).exists() {
        return Ok(Dataset::new(vec![Arc::new(load_sequence(path)?)]));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).exists())
        .collect();
    dirs.sort();
    let videos = dirs
        .iter()
        .map(|d| load_sequence(d).map(|v| Arc::new(v) as SharedVideo))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(videos))
}

/// Writes a sequence as numbered PNG frames plus annotations.
pub fn write_sequence(video: &dyn Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..video.len() {
        video.frame(i)?.save_png(&dir.join(format!("{:08}.png", i + 1)))?;
    }
    std::fs::write(dir.join(GROUNDTRUTH_FILE), format_groundtruth(&video.gt_boxes()))?;
    Ok(())
}

/// Ordered collection of sequences.
#[derive(Clone, Default)]
pub struct Dataset {
    pub videos: Vec<SharedVideo>,
}

impl std::fmt::Debug for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.videos.iter().map(|v| v.name())).finish()
    }
}

impl Dataset {
    pub fn new(videos: Vec<SharedVideo>) -> Self {
        Self { videos }
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SharedVideo> {
        self.videos.iter()
    }

    pub fn take(&self, n: usize) -> Dataset {
        Dataset::new(self.videos.iter().take(n).cloned().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Split::Train => 0x7261_696e,
            Split::Val => 0x0076_616c,
            Split::Test => 0x7465_7374,
        }
    }
}

/// Size and seed of the synthetic train/val/test corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train: 200,
            val: 20,
            test: 30,
            frames: 120,
            width: 320,
            height: 240,
            seed: 2021,
        }
    }
}

impl CorpusConfig {
    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Per-sequence seeds; splits draw from disjoint streams and are
    /// deduplicated against each other.
    pub fn seeds(&self, split: Split) -> Vec<u64> {
        let mut taken = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for s in [Split::Train, Split::Val, Split::Test] {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ s.salt().wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut seeds = Vec::new();
            while seeds.len() < self.count(s) {
                let v: u64 = rng.gen();
                if taken.insert(v) {
                    seeds.push(v);
                }
            }
            if s == split {
                out = seeds;
            }
        }
        out
    }

    pub fn specs(&self, split: Split) -> Vec<SyntheticSpec> {
        self.seeds(split)
            .into_iter()
            .enumerate()
            .map(|(i, seed)| SyntheticSpec::random(format!("{}-{i:03}", split.name()), seed, self.width, self.height, self.frames))
            .collect()
    }

    pub fn dataset(&self, split: Split) -> Result<Dataset> {
        let videos = self
            .specs(split)
            .into_iter()
            .map(|s| SyntheticVideo::new(s).map(|v| Arc::new(v) as SharedVideo))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset::new(videos))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_frames(dir: &Path, n: usize) {
        for i in 0..n {
            Image::filled(3, 8, 10, i as f32 / 10.0)
                .save_png(&dir.join(format!("{:08}.png", i + 1)))
                .unwrap();
        }
    }

    #[test]
    fn parse_corner_format() {
        let b = parse_groundtruth("10,20,30,40\n", Path::new("gt")).unwrap();
        assert_eq!(b, vec![BBox::raw(25.0, 40.0, 30.0, 40.0)]);
        let b = parse_groundtruth("10\t20\t30\t40\n1 2 3 4\n", Path::new("gt")).unwrap();
        assert_eq!(b.len(), 2);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = parse_groundtruth("1,2,3,4\n1,2,x,4\n", Path::new("gt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_groundtruth("1,2,3\n", Path::new("gt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
        let err = parse_groundtruth("1,2,0,4\n", Path::new("gt")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn load_matching_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), 3);
        std::fs::write(dir.path().join(GROUNDTRUTH_FILE), "1,1,2,2\n1,1,2,2\n2,2,3,3\n").unwrap();
        let v = load_sequence(dir.path()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.frame_size(), (10, 8));
        assert_eq!(v.frame(2).unwrap().get(0, 0, 0), (0.2f32 * 255.0).round() / 255.0);
    }

    #[test]
    fn load_count_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write_frames(dir.path(), 3);
        std::fs::write(dir.path().join(GROUNDTRUTH_FILE), "1,1,2,2\n1,1,2,2\n").unwrap();
        assert!(matches!(load_sequence(dir.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn write_then_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::random("seq", 9, 64, 48, 4);
        let mut spec = spec;
        spec.object_w = 12.0;
        spec.object_h = 10.0;
        spec.start = Some((30.0, 20.0));
        let video = SyntheticVideo::new(spec).unwrap();
        write_sequence(&video, &dir.path().join("seq")).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 1);
        let back = &ds.videos[0];
        assert_eq!(back.gt_boxes(), video.gt_boxes());
        let a = back.frame(3).unwrap();
        let b = video.frame(3).unwrap();
        assert!(a.max_abs_diff(&b) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn corpus_splits_are_disjoint() {
        let cfg = CorpusConfig::default();
        let train = cfg.seeds(Split::Train);
        let val = cfg.seeds(Split::Val);
        let test = cfg.seeds(Split::Test);
        assert_eq!((train.len(), val.len(), test.len()), (200, 20, 30));
        let all: std::collections::BTreeSet<_> = train.iter().chain(&val).chain(&test).collect();
        assert_eq!(all.len(), 250);
        assert_eq!(cfg.seeds(Split::Test), test);
    }
}
