//! Clip datasets: frame-to-clip labeling, image operations, augmentation
//! and a procedural clip generator.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::mix_seed;
use crate::labels::{Condition, ConditionLabels, Drowsiness, Eye, GlassesIllum, Head, LabelError, Mouth};
use crate::tensor::{Shape, Tensor, TensorError};

/// Frames per clip.
pub const CLIP_FRAMES: usize = 5;

/// Blur strengths used by [`augment`] by default.
pub const DEFAULT_SIGMAS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error("frame label {value} outside alphabet of size {alphabet}")]
    FrameLabel { value: usize, alphabet: usize },
    #[error("image extents must be at least 2x2, got {0}")]
    DegenerateExtent(Shape),
    #[error("gaussian sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("expected a {expected} tensor, got {got}")]
    Extents { expected: &'static str, got: Shape },
    #[error("clip count must be at least 1")]
    NoClips,
    #[error("dataset clips have mixed extents: {0} and {1}")]
    Heterogeneous(Shape, Shape),
}

/// Clip-level label from five frame-level labels: the value present in at
/// least three frames, otherwise (three or more distinct values, none in
/// the majority) the middle frame's value.
pub fn clip_label_from_frames(frames: [usize; CLIP_FRAMES], alphabet: usize) -> Result<usize, DataError> {
    if let Some(&value) = frames.iter().find(|&&v| v >= alphabet) {
        return Err(DataError::FrameLabel { value, alphabet });
    }
    for &candidate in &frames {
        if frames.iter().filter(|&&v| v == candidate).count() * 2 > CLIP_FRAMES {
            return Ok(candidate);
        }
    }
    Ok(frames[CLIP_FRAMES / 2])
}

/// Five grayscale frames with five per-frame label streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    /// `[5, H, W]`, values in `[0, 1]`.
    pub frames: Tensor,
    /// `labels[stream][frame]`; streams are glasses/illum, head, mouth, eye,
    /// drowsiness (0-based indices).
    pub labels: [[usize; CLIP_FRAMES]; 5],
}

impl FrameSequence {
    pub fn new(frames: Tensor, labels: [[usize; CLIP_FRAMES]; 5]) -> Result<Self, DataError> {
        match frames.dims() {
            [CLIP_FRAMES, h, w] if *h >= 1 && *w >= 1 => {}
            _ => {
                return Err(DataError::Extents {
                    expected: "[5, H, W]",
                    got: frames.shape().clone(),
                })
            }
        }
        let seq = FrameSequence { frames, labels };
        seq.clip_labels()?;
        Ok(seq)
    }

    pub fn clip_labels(&self) -> Result<ConditionLabels, DataError> {
        let alphabets = [
            GlassesIllum::count(),
            Head::count(),
            Mouth::count(),
            Eye::count(),
            Drowsiness::count(),
        ];
        let mut idx = [0; 5];
        for s in 0..5 {
            idx[s] = clip_label_from_frames(self.labels[s], alphabets[s])?;
        }
        Ok(ConditionLabels::from_indices(idx)?)
    }

    pub fn to_labeled_clip(&self) -> Result<LabeledClip, DataError> {
        let mut dims = vec![1];
        dims.extend_from_slice(self.frames.dims());
        let clip = self.frames.reshape(dims)?;
        Ok(LabeledClip::new(clip, self.clip_labels()?))
    }
}

/// A `[1, 5, H, W]` clip with clip-level labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledClip {
    pub clip: Tensor,
    pub labels: ConditionLabels,
    /// Reporting group; the clip's glasses/illumination condition.
    pub scenario: GlassesIllum,
}

impl LabeledClip {
    pub fn new(clip: Tensor, labels: ConditionLabels) -> Self {
        LabeledClip {
            clip,
            labels,
            scenario: labels.glasses_illum,
        }
    }

    /// Frame `t` as an `[H, W]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        let (h, w) = (self.clip.dims()[2], self.clip.dims()[3]);
        let plane = h * w;
        Tensor::new(vec![h, w], self.clip.data()[t * plane..(t + 1) * plane].to_vec()).expect("frame extents")
    }

    fn map_frames(&self, f: impl Fn(&Tensor) -> Result<Tensor, DataError>) -> Result<LabeledClip, DataError> {
        let frames = self.clip.dims()[1];
        let mut data = Vec::with_capacity(self.clip.len());
        for t in 0..frames {
            data.extend_from_slice(f(&self.frame(t))?.data());
        }
        Ok(LabeledClip {
            clip: Tensor::from_shape(self.clip.shape().clone(), data)?,
            labels: self.labels,
            scenario: self.scenario,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub clips: Vec<LabeledClip>,
    /// Free text: generator seed or import path.
    pub provenance: String,
}

impl Dataset {
    pub fn new(clips: Vec<LabeledClip>, provenance: impl Into<String>) -> Self {
        Dataset {
            clips,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Common clip extents; errors when clips disagree. `None` when empty.
    pub fn extents(&self) -> Result<Option<Shape>, DataError> {
        let Some(first) = self.clips.first() else {
            return Ok(None);
        };
        for c in &self.clips[1..] {
            if c.clip.shape() != first.clip.shape() {
                return Err(DataError::Heterogeneous(
                    first.clip.shape().clone(),
                    c.clip.shape().clone(),
                ));
            }
        }
        Ok(Some(first.clip.shape().clone()))
    }

    /// Number of drowsy and alert clips.
    pub fn class_balance(&self) -> (usize, usize) {
        let drowsy = self
            .clips
            .iter()
            .filter(|c| c.labels.drowsy == Drowsiness::Drowsy)
            .count();
        (drowsy, self.clips.len() - drowsy)
    }

    /// Every clip replaced by its eight augmented variants.
    pub fn augmented(&self, sigmas: &[f64]) -> Result<Dataset, DataError> {
        let mut clips = Vec::with_capacity(self.clips.len() * 2 * (1 + sigmas.len()));
        for c in &self.clips {
            clips.extend(augment(c, sigmas)?);
        }
        Ok(Dataset::new(clips, alloc::format!("{} (augmented)", self.provenance)))
    }
}

fn frame_dims(frame: &Tensor) -> Result<(usize, usize), DataError> {
    match *frame.dims() {
        [h, w] => Ok((h, w)),
        _ => Err(DataError::Extents {
            expected: "[H, W]",
            got: frame.shape().clone(),
        }),
    }
}

/// Bilinear resampling with corner-aligned sample positions.
pub fn resize_bilinear(frame: &Tensor, out: (usize, usize)) -> Result<Tensor, DataError> {
    let (h, w) = frame_dims(frame)?;
    let (oh, ow) = out;
    if h < 2 || w < 2 || oh < 2 || ow < 2 {
        return Err(DataError::DegenerateExtent(Shape::new(vec![oh.max(1), ow.max(1)])?));
    }
    let src = frame.data();
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (libm::floor(pos) as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut data = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, ty) = coord(y, oh, h);
        for x in 0..ow {
            let (x0, x1, tx) = coord(x, ow, w);
            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * tx;
            let bottom = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * tx;
            data.push((top + (bottom - top) * ty).clamp(0.0, 1.0));
        }
    }
    Ok(Tensor::new(vec![oh, ow], data)?)
}

/// Normalized 1D Gaussian kernel of radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>, DataError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(DataError::Sigma(sigma));
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

/// Separable Gaussian blur with clamped edges.
pub fn gaussian_filter(frame: &Tensor, sigma: f64) -> Result<Tensor, DataError> {
    let (h, w) = frame_dims(frame)?;
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let src = frame.data();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * src[y * w + clamp(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let v: f64 = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * rows[clamp(y as isize + k as isize - r, h) * w + x])
                .sum();
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    Ok(Tensor::new(vec![h, w], out)?)
}

/// Mirror the last axis.
pub fn flip_horizontal(t: &Tensor) -> Tensor {
    let w = *t.dims().last().expect("rank >= 1");
    let mut data = t.data().to_vec();
    for row in data.chunks_exact_mut(w) {
        row.reverse();
    }
    Tensor::from_shape(t.shape().clone(), data).expect("same shape")
}

/// `{original, flipped} × {unfiltered, blur σ for σ in sigmas}`, labels
/// copied unchanged. Eight clips for the default three sigmas.
pub fn augment(clip: &LabeledClip, sigmas: &[f64]) -> Result<Vec<LabeledClip>, DataError> {
    let flipped = LabeledClip {
        clip: flip_horizontal(&clip.clip),
        ..clip.clone()
    };
    let mut out = Vec::with_capacity(2 * (1 + sigmas.len()));
    for base in [clip.clone(), flipped] {
        for &s in sigmas {
            out.push(base.map_frames(|f| gaussian_filter(f, s))?);
        }
        out.insert(out.len() - sigmas.len(), base);
    }
    Ok(out)
}

/// Procedural generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Probability that one frame of one label stream deviates from the
    /// clip's condition (still a minority, so clip labels are unaffected).
    pub frame_flip_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 32,
            width: 32,
            noise: 0.03,
            frame_flip_prob: 0.5,
        }
    }
}

/// Drowsiness rule of the generator: drowsy exactly when the eyes are
/// sleepy, the driver yawns or the head nods.
pub fn synth_drowsiness(head: Head, mouth: Mouth, eye: Eye) -> Drowsiness {
    if eye == Eye::Sleepy || mouth == Mouth::Yawning || head == Head::Nodding {
        Drowsiness::Drowsy
    } else {
        Drowsiness::Alert
    }
}

/// Clip-level conditions for clip `index`.
///
/// Odd indices are drowsy and even ones alert; scenarios cycle so every
/// scenario gets both classes. Drowsy clips show a non-empty subset of
/// {sleepy eyes, yawning, nodding}; alert clips have normal eyes, a normal or
/// talking mouth and a normal or side-looking head.
fn synth_conditions(index: usize, rng: &mut ChaCha8Rng) -> ConditionLabels {
    let glasses_illum = GlassesIllum::ALL[(index / 2) % GlassesIllum::count()];
    let drowsy = index % 2 == 1;
    let (head, mouth, eye) = if drowsy {
        let signs = rng.random_range(1u8..8);
        (
            if signs & 1 != 0 {
                Head::Nodding
            } else {
                pick(rng, &[Head::Normal, Head::LookingAside])
            },
            if signs & 2 != 0 {
                Mouth::Yawning
            } else {
                pick(rng, &[Mouth::Normal, Mouth::Talking])
            },
            if signs & 4 != 0 { Eye::Sleepy } else { Eye::Normal },
        )
    } else {
        (
            pick(rng, &[Head::Normal, Head::LookingAside]),
            pick(rng, &[Mouth::Normal, Mouth::Talking]),
            Eye::Normal,
        )
    };
    ConditionLabels {
        glasses_illum,
        head,
        mouth,
        eye,
        drowsy: synth_drowsiness(head, mouth, eye),
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, options: &[T]) -> T {
    options[rng.random_range(0..options.len())]
}

struct Jitter {
    dx: f64,
    dy: f64,
    face: f64,
}

fn ellipse(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (a, b) = ((u - cx) / rx, (v - cy) / ry);
    a * a + b * b <= 1.0
}

/// Render frame `t` of a clip in normalized coordinates.
fn render_frame(
    t: usize,
    labels: [usize; 4],
    jitter: &Jitter,
    cfg: &SynthConfig,
    noise: &mut impl FnMut() -> f64,
) -> Vec<f64> {
    let gl = GlassesIllum::ALL[labels[0]];
    let head = Head::ALL[labels[1]];
    let mouth = Mouth::ALL[labels[2]];
    let eye = Eye::ALL[labels[3]];

    let phase = libm::sin(PI * t as f64 / 2.0);
    let (mut cx, mut cy) = (0.5 + jitter.dx, 0.5 + jitter.dy);
    match head {
        Head::Normal => {}
        Head::LookingAside => cx += 0.12 * phase,
        Head::Nodding => cy += 0.12 * libm::fabs(phase),
    }
    let (background, face) = if gl.is_night() { (0.08, 0.35) } else { (0.5, 0.85) };
    let face = face + jitter.face;

    let eye_half_h = match eye {
        Eye::Normal => 0.07,
        Eye::Sleepy => [0.045, 0.035, 0.025, 0.015, 0.01][t],
    };
    let mouth_half_h = match mouth {
        Mouth::Normal => 0.02,
        Mouth::Talking => [0.02, 0.07, 0.02, 0.07, 0.02][t],
        Mouth::Yawning => [0.08, 0.1, 0.12, 0.13, 0.13][t],
    };
    let eye_y = cy - 0.08;
    let eyes = [cx - 0.12, cx + 0.12];
    let mouth_y = cy + 0.18;

    let (h, w) = (cfg.height, cfg.width);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let v = (y as f64 + 0.5) / h as f64;
        for x in 0..w {
            let u = (x as f64 + 0.5) / w as f64;
            let mut p = background + 0.05 * v;
            if ellipse(u, v, cx, cy, 0.3, 0.38) {
                p = face;
                if eyes.iter().any(|&ex| ellipse(u, v, ex, eye_y, 0.08, eye_half_h)) {
                    p = face * 0.15;
                }
                if ellipse(u, v, cx, mouth_y, 0.13, mouth_half_h) {
                    p = face * 0.2;
                }
                let near_eye = eyes.iter().any(|&ex| (u - ex).abs() < 0.11 && (v - eye_y).abs() < 0.1);
                match gl {
                    GlassesIllum::DayGlasses | GlassesIllum::NightGlasses => {
                        let inner = eyes
                            .iter()
                            .any(|&ex| (u - ex).abs() < 0.085 && (v - eye_y).abs() < 0.075);
                        let bridge = (u - cx).abs() < 0.04 && (v - eye_y).abs() < 0.015;
                        if (near_eye && !inner) || bridge {
                            p = 0.05;
                        }
                    }
                    GlassesIllum::DaySunglasses if near_eye => p *= 0.45,
                    _ => {}
                }
            }
            out.push((p + noise()).clamp(0.0, 1.0));
        }
    }
    out
}

/// Generate one clip with per-frame labels.
pub fn synth_sequence(index: usize, seed: u64, cfg: &SynthConfig) -> Result<FrameSequence, DataError> {
    if cfg.height < 2 || cfg.width < 2 {
        return Err(DataError::DegenerateExtent(Shape::new(vec![
            cfg.height.max(1),
            cfg.width.max(1),
        ])?));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let clip_labels = synth_conditions(index, &mut rng);
    let idx = clip_labels.indices();
    let alphabets = [5, 3, 3, 2, 2];

    let mut labels = [[0usize; CLIP_FRAMES]; 5];
    for s in 0..5 {
        labels[s] = [idx[s]; CLIP_FRAMES];
    }
    if rng.random_bool(cfg.frame_flip_prob.clamp(0.0, 1.0)) {
        let s = rng.random_range(0..5);
        let t = rng.random_range(0..CLIP_FRAMES);
        let other = (idx[s] + rng.random_range(1..alphabets[s])) % alphabets[s];
        labels[s][t] = other;
    }

    let jitter = Jitter {
        dx: rng.random_range(-0.04..0.04),
        dy: rng.random_range(-0.04..0.04),
        face: rng.random_range(-0.05..0.05),
    };
    let normal = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|_| DataError::Sigma(cfg.noise))?;
    let mut noise = || normal.sample(&mut rng);
    let mut frames = Vec::with_capacity(CLIP_FRAMES * cfg.height * cfg.width);
    frames.extend((0..CLIP_FRAMES).flat_map(|t| {
        let frame_labels = core::array::from_fn(|s| labels[s][t]);
        render_frame(t, frame_labels, &jitter, cfg, &mut noise)
    }));
    let frames = Tensor::new(vec![CLIP_FRAMES, cfg.height, cfg.width], frames)?;
    FrameSequence::new(frames, labels)
}

/// `n` procedurally rendered clips. Each clip depends only on
/// `(seed, index)`, so datasets with the same seed share their prefix.
pub fn synth_generate(n: usize, seed: u64, cfg: &SynthConfig) -> Result<Dataset, DataError> {
    if n == 0 {
        return Err(DataError::NoClips);
    }
    let clips = (0..n)
        .map(|i| synth_sequence(i, seed, cfg)?.to_labeled_clip())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(clips, alloc::format!("synthetic seed={seed} clips={n}")))
}
