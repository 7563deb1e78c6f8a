//! Manifest-driven access to avatar videos stored as per-video frame
//! directories, plus the procedural generator in [`synth`].

pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::{s, Array4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synth::{generate_synthetic_dataset, SynthConfig, MANIFEST_FILE};

/// `T × 1 × S × S` grayscale frames in `[0, 1]`.
pub type ClipTensor = Array4<f32>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split `{s}`")))
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_path: PathBuf,
    pub target_id: String,
    pub driver_id: String,
    pub generator: String,
    pub split: Split,
    pub num_frames: usize,
    pub fps: f64,
}

impl VideoRecord {
    /// Driver and target are the same person.
    pub fn is_self_reenactment(&self) -> bool {
        self.target_id == self.driver_id
    }

    /// A record for a bare frame directory outside any manifest, labelled as
    /// a test video with empty identities.
    pub fn from_frame_dir(dir: &Path) -> Result<Self> {
        let frames = list_frames(dir)?;
        if frames.is_empty() {
            return Err(Error::Data(format!("{} contains no frames", dir.display())));
        }
        Ok(Self {
            video_path: dir.to_path_buf(),
            target_id: String::new(),
            driver_id: String::new(),
            generator: String::new(),
            split: Split::Test,
            num_frames: frames.len(),
            fps: 25.0,
        })
    }
}

/// Validated, identity-disjoint collection of video records.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    records: Vec<VideoRecord>,
    identity_split_map: BTreeMap<String, Split>,
}

impl Manifest {
    /// Checks every invariant: positive frame counts and fps, unique paths,
    /// and identity-disjoint splits.
    pub fn from_records(records: Vec<VideoRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut map: BTreeMap<String, Split> = BTreeMap::new();
        for r in &records {
            if r.num_frames == 0 {
                return Err(Error::Data(format!(
                    "{}: num_frames must be at least 1",
                    r.video_path.display()
                )));
            }
            if !(r.fps > 0.0 && r.fps.is_finite()) {
                return Err(Error::Data(format!(
                    "{}: fps must be positive",
                    r.video_path.display()
                )));
            }
            if !seen.insert(r.video_path.clone()) {
                return Err(Error::DuplicateVideo(r.video_path.clone()));
            }
            for id in [&r.target_id, &r.driver_id] {
                match map.get(id) {
                    Some(&s) if s != r.split => {
                        return Err(Error::SplitLeak {
                            identity: id.clone(),
                            first: s.to_string(),
                            second: r.split.to_string(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        map.insert(id.clone(), r.split);
                    }
                }
            }
        }
        Ok(Self {
            records,
            identity_split_map: map,
        })
    }

    pub fn records(&self) -> &[VideoRecord] {
        &self.records
    }

    pub fn identity_split_map(&self) -> &BTreeMap<String, Split> {
        &self.identity_split_map
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> Vec<&VideoRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn identities(&self, split: Split) -> Vec<&str> {
        self.identity_split_map
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn drivers(&self, split: Split) -> BTreeSet<&str> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.driver_id.as_str())
            .collect()
    }

    pub fn generators(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.generator.as_str()).collect()
    }

    /// Sub-manifest of the records matching `keep`.
    pub fn filter(&self, keep: impl Fn(&VideoRecord) -> bool) -> Manifest {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Manifest::from_records(records).expect("subset of a valid manifest is valid")
    }

    /// SHA-256 over the canonical line-delimited form.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.records {
            h.update(serde_json::to_string(r).expect("record serialises"));
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Writes one JSON record per line. Paths under `relative_to` are
    /// written relative to it.
    pub fn save(&self, path: &Path, relative_to: Option<&Path>) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            let mut r = r.clone();
            if let Some(base) = relative_to {
                if let Ok(rel) = r.video_path.strip_prefix(base) {
                    r.video_path = rel.to_path_buf();
                }
            }
            serde_json::to_writer(&mut out, &r).map_err(|e| Error::Serde(e.to_string()))?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a line-delimited manifest. Relative `video_path`s resolve against
/// the manifest's directory and must exist.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut rec: VideoRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if rec.video_path.is_relative() {
            rec.video_path = base.join(&rec.video_path);
        }
        if !rec.video_path.exists() {
            return Err(Error::MissingFile(rec.video_path));
        }
        records.push(rec);
    }
    Manifest::from_records(records)
}

const FRAME_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Sorted frame files of a frame-sequence directory.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(if dir.exists() {
            Error::Decode {
                path: dir.to_path_buf(),
                message: "only frame-sequence directories are supported".into(),
            }
        } else {
            Error::MissingFile(dir.to_path_buf())
        });
    }
    let mut frames = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| FRAME_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect::<Vec<_>>();
    frames.sort();
    Ok(frames)
}

/// Decodes one frame to BT.601 luma in `[0, 1]`, bilinearly resized to
/// `size × size`.
pub fn load_luma_frame(path: &Path, size: usize) -> Result<ImageBuffer<Luma<f32>, Vec<f32>>> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Decode {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let luma = to_luma(&img);
    let size = size as u32;
    Ok(if luma.dimensions() == (size, size) {
        luma
    } else {
        image::imageops::resize(&luma, size, size, FilterType::Triangle)
    })
}

fn to_luma(img: &DynamicImage) -> ImageBuffer<Luma<f32>, Vec<f32>> {
    if !img.color().has_color() {
        let mut l = img.to_luma32f();
        l.pixels_mut().for_each(|p| p.0[0] = p.0[0].clamp(0.0, 1.0));
        return l;
    }
    let rgb = img.to_rgb32f();
    ImageBuffer::from_fn(rgb.width(), rgb.height(), |x, y| {
        let [r, g, b] = rgb.get_pixel(x, y).0;
        Luma([(0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)])
    })
}

/// `length` consecutive frames starting at `start`; indices past the last
/// frame repeat the final frame.
pub fn read_clip_frames(
    record: &VideoRecord,
    start: usize,
    length: usize,
    frame_size: usize,
) -> Result<ClipTensor> {
    if length == 0 {
        return Err(Error::Data("clip length must be at least 1".into()));
    }
    if start >= record.num_frames {
        return Err(Error::Data(format!(
            "start {start} out of range for {} frames in {}",
            record.num_frames,
            record.video_path.display()
        )));
    }
    let files = list_frames(&record.video_path)?;
    if files.len() < record.num_frames {
        return Err(Error::Decode {
            path: record.video_path.clone(),
            message: format!(
                "manifest lists {} frames but {} were found",
                record.num_frames,
                files.len()
            ),
        });
    }
    let mut clip = ClipTensor::zeros((length, 1, frame_size, frame_size));
    let last = record.num_frames - 1;
    let mut decoded_last: Option<usize> = None;
    for t in 0..length {
        let idx = (start + t).min(last);
        if decoded_last == Some(idx) {
            let prev = clip.slice(s![t - 1, .., .., ..]).to_owned();
            clip.slice_mut(s![t, .., .., ..]).assign(&prev);
            continue;
        }
        let frame = load_luma_frame(&files[idx], frame_size)?;
        let mut dst = clip.slice_mut(s![t, 0, .., ..]);
        for (y, mut row) in dst.outer_iter_mut().enumerate() {
            for (x, v) in row.iter_mut().enumerate() {
                *v = frame.get_pixel(x as u32, y as u32).0[0];
            }
        }
        decoded_last = Some(idx);
    }
    Ok(clip)
}

/// SHA-256 over every file below `dir` (sorted relative paths and
/// contents), for comparing generated datasets byte for byte.
pub fn directory_digest(dir: &Path) -> Result<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0u8]);
        h.update(fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Frame indices `read_clip_frames` would decode.
pub fn clip_indices(num_frames: usize, start: usize, length: usize) -> Vec<usize> {
    (0..length)
        .map(|t| (start + t).min(num_frames.saturating_sub(1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(path: &str, t: &str, d: &str, split: Split) -> VideoRecord {
        VideoRecord {
            video_path: PathBuf::from(path),
            target_id: t.into(),
            driver_id: d.into(),
            generator: "g".into(),
            split,
            num_frames: 10,
            fps: 25.0,
        }
    }

    #[test]
    fn accepts_consistent_records() {
        let m = Manifest::from_records(vec![
            rec("a", "A", "A", Split::Train),
            rec("b", "A", "B", Split::Train),
            rec("c", "B", "B", Split::Train),
        ])
        .unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.identities(Split::Train), vec!["A", "B"]);
        assert!(m.records()[0].is_self_reenactment());
        assert!(!m.records()[1].is_self_reenactment());
    }

    #[test]
    fn detects_split_leak() {
        let err = Manifest::from_records(vec![
            rec("a", "A", "A", Split::Train),
            rec("b", "C", "C", Split::Test),
            rec("c", "A", "C", Split::Train),
        ])
        .unwrap_err();
        match err {
            Error::SplitLeak { identity, .. } => assert_eq!(identity, "C"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_duplicate_paths() {
        let err = Manifest::from_records(vec![
            rec("a", "A", "A", Split::Train),
            rec("a", "A", "A", Split::Train),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateVideo(_)));
    }

    #[test]
    fn padding_indices_repeat_last_frame() {
        assert_eq!(clip_indices(100, 10, 64), (10..74).collect::<Vec<_>>());
        let idx = clip_indices(50, 0, 64);
        assert_eq!(&idx[..50], &(0..50).collect::<Vec<_>>()[..]);
        assert!(idx[50..].iter().all(|&i| i == 49));
        assert_eq!(idx[50..].len(), 14);
    }
}
