//! Frame-folder import: 8-bit (or 16-bit) grayscale PGM frames plus a label
//! file.
//!
//! Frames are the `*.pgm` files of a directory in file-name order. The label
//! file has one line per frame, `frame_index gl h m e drowsy`, where the four
//! scene values are the 1-based annotation categories and `drowsy` is 0
//! (non-drowsiness) or 1 (drowsiness). Blank lines and `#` comments are
//! ignored. Consecutive non-overlapping runs of five frames become clips,
//! labeled by the temporal-IOU rule; a trailing partial run is dropped.

use std::path::{Path, PathBuf};

use condadapt_core::data::{resize_bilinear, Dataset, FrameSequence, CLIP_FRAMES};
use condadapt_core::labels::{Condition, Drowsiness, Eye, GlassesIllum, Head, Mouth};
use condadapt_core::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImportError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot decode {path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("label file line {line}: {message}")]
    Label { line: usize, message: String },
    #[error("frame {0} has no label line")]
    MissingLabel(usize),
    #[error("found {0} frames; at least 5 are needed for one clip")]
    TooFewFrames(usize),
    #[error(transparent)]
    Data(#[from] condadapt_core::data::DataError),
}

/// Per-frame label row, 0-based indices ordered glasses/illumination, head,
/// mouth, eye, drowsiness.
pub type FrameLabels = [usize; 5];

pub fn parse_labels(text: &str) -> Result<Vec<(usize, FrameLabels)>, ImportError> {
    let mut rows = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ImportError::Label { line: n + 1, message };
        let nums = line
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| err(format!("not a non-negative integer: {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let [frame, gl, h, m, e, d] = nums[..] else {
            return Err(err(format!("expected 6 fields, found {}", nums.len())));
        };
        let scene = [
            GlassesIllum::from_category(gl).map(|c| c.index()),
            Head::from_category(h).map(|c| c.index()),
            Mouth::from_category(m).map(|c| c.index()),
            Eye::from_category(e).map(|c| c.index()),
        ];
        let mut labels = [0usize; 5];
        for (slot, r) in labels.iter_mut().zip(scene) {
            *slot = r.map_err(|e| err(e.to_string()))?;
        }
        labels[4] = Drowsiness::from_index(d)
            .map_err(|_| err(format!("drowsiness must be 0 or 1, got {d}")))?
            .index();
        rows.push((frame, labels));
    }
    Ok(rows)
}

/// Loads one frame as `[H, W]` with values in [0, 1].
pub fn read_frame(path: &Path) -> Result<Tensor, ImportError> {
    let img = image::open(path).map_err(|source| ImportError::Image {
        path: path.to_owned(),
        source,
    })?;
    let gray = img.to_luma32f();
    let (w, h) = gray.dimensions();
    let data = gray.into_raw().into_iter().map(f64::from).collect();
    Ok(Tensor::new(vec![h as usize, w as usize], data).expect("image extents"))
}

fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>, ImportError> {
    let io = |source| ImportError::Io {
        path: dir.to_owned(),
        source,
    };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Imports `dir`, resizing every frame to `size` (height, width).
pub fn import_dir(dir: &Path, labels: &Path, size: (usize, usize)) -> Result<Dataset, ImportError> {
    let paths = frame_paths(dir)?;
    if paths.len() < CLIP_FRAMES {
        return Err(ImportError::TooFewFrames(paths.len()));
    }
    let text = std::fs::read_to_string(labels).map_err(|source| ImportError::Io {
        path: labels.to_owned(),
        source,
    })?;
    let mut by_frame: Vec<Option<FrameLabels>> = vec![None; paths.len()];
    for (frame, row) in parse_labels(&text)? {
        if let Some(slot) = by_frame.get_mut(frame) {
            *slot = Some(row);
        }
    }

    let mut clips = Vec::new();
    for start in (0..=paths.len() - CLIP_FRAMES).step_by(CLIP_FRAMES) {
        let mut pixels = Vec::with_capacity(CLIP_FRAMES * size.0 * size.1);
        let mut streams = [[0usize; CLIP_FRAMES]; 5];
        for (t, path) in paths[start..start + CLIP_FRAMES].iter().enumerate() {
            let i = start + t;
            let frame = resize_bilinear(&read_frame(path)?, size)?;
            pixels.extend_from_slice(frame.data());
            let row = by_frame[i].ok_or(ImportError::MissingLabel(i))?;
            for (s, &v) in row.iter().enumerate() {
                streams[s][t] = v;
            }
        }
        let frames = Tensor::new(vec![CLIP_FRAMES, size.0, size.1], pixels).expect("clip extents");
        clips.push(FrameSequence::new(frames, streams)?.to_labeled_clip()?);
    }
    Ok(Dataset::new(clips, format!("import {}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use condadapt_core::ConditionLabels;

    fn write_pgm(path: &Path, w: usize, h: usize, value: u8) {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend(std::iter::repeat_n(value, w * h));
        std::fs::write(path, bytes).unwrap();
    }

    #[test]
    fn label_lines() {
        let rows = parse_labels("# header\n0 1 3 2 1 1\n\n1 5 1 1 2 0 # trailing\n").unwrap();
        assert_eq!(rows, vec![(0, [0, 2, 1, 0, 1]), (1, [4, 0, 0, 1, 0])]);
        assert!(parse_labels("0 6 1 1 1 0").is_err());
        assert!(parse_labels("0 1 1 1 1 2").is_err());
        assert!(parse_labels("0 1 1 1").is_err());
        assert!(parse_labels("0 1 x 1 1 0").is_err());
    }

    #[test]
    fn imports_clips_with_temporal_iou_labels() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..11 {
            write_pgm(&dir.path().join(format!("f{i:03}.pgm")), 6, 4, (i * 20) as u8);
        }
        // clip 0: head nodding in 3 of 5 frames; clip 1: eye sleepy in 2 of 5
        let mut labels = String::new();
        for i in 0..11 {
            let head = if [0, 2, 4].contains(&i) { 3 } else { 1 };
            let eye = if [5, 6].contains(&i) { 1 } else { 2 };
            labels.push_str(&format!("{i} 4 {head} 1 {eye} 0\n"));
        }
        let lpath = dir.path().join("labels.txt");
        std::fs::write(&lpath, labels).unwrap();

        let ds = import_dir(dir.path(), &lpath, (8, 8)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.clips[0].clip.dims(), &[1, 5, 8, 8]);
        let want = |head, eye| ConditionLabels {
            glasses_illum: GlassesIllum::NightBareFace,
            head,
            mouth: Mouth::Normal,
            eye,
            drowsy: Drowsiness::Alert,
        };
        assert_eq!(ds.clips[0].labels, want(Head::Nodding, Eye::Normal));
        assert_eq!(ds.clips[1].labels, want(Head::Normal, Eye::Normal));
        // constant frames stay constant through the resize
        let f = ds.clips[1].frame(0);
        assert!(f.data().iter().all(|&v| (v - 100.0 / 255.0).abs() < 1e-6));
    }

    #[test]
    fn missing_labels_and_short_folders() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5 {
            write_pgm(&dir.path().join(format!("f{i}.pgm")), 3, 3, 9);
        }
        let lpath = dir.path().join("labels.txt");
        std::fs::write(&lpath, "0 1 1 1 1 0\n1 1 1 1 1 0\n").unwrap();
        assert!(matches!(
            import_dir(dir.path(), &lpath, (4, 4)),
            Err(ImportError::MissingLabel(2))
        ));
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(
            import_dir(empty.path(), &lpath, (4, 4)),
            Err(ImportError::TooFewFrames(0))
        ));
    }
}
