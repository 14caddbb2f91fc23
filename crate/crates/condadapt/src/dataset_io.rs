//! Dataset container file.
//!
//! Layout (little-endian): magic `CADD`, `u32` version, `u64` clip count,
//! then per clip: four `u32` extents `[1, 5, H, W]`, the pixels as `f64`,
//! five 0-based label bytes (glasses/illumination, head, mouth, eye,
//! drowsiness) and one scenario byte.

use std::path::Path;

use condadapt_core::data::{Dataset, LabeledClip, CLIP_FRAMES};
use condadapt_core::labels::{Condition, ConditionLabels, GlassesIllum};
use condadapt_core::tensor::Tensor;

use crate::format::{put_f64s, put_u32, put_u64, write_atomic, FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"CADD";
pub const VERSION: u32 = 1;

pub fn encode(dataset: &Dataset) -> Result<Vec<u8>, FormatError> {
    if dataset.is_empty() {
        return Err(FormatError::Corrupt("refusing to write an empty dataset".into()));
    }
    dataset.extents()?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, dataset.len() as u64);
    for c in &dataset.clips {
        for &d in c.clip.dims() {
            let d = u32::try_from(d).map_err(|_| FormatError::Corrupt(format!("extent {d} too large")))?;
            put_u32(&mut out, d);
        }
        put_f64s(&mut out, c.clip.data());
        // every index is < 5, so the narrowing is lossless
        out.extend(c.labels.indices().iter().map(|&i| i as u8));
        out.push(c.scenario.index() as u8);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], provenance: &str) -> Result<Dataset, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC, "dataset")?;
    r.version(VERSION, "dataset")?;
    let count = r.usize()?;
    if count == 0 {
        return Err(FormatError::Corrupt("dataset holds no clips".into()));
    }
    let mut clips = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
        if dims[0] != 1 || dims[1] != CLIP_FRAMES || dims[2] == 0 || dims[3] == 0 {
            return Err(FormatError::Corrupt(format!(
                "clip {i}: extents {dims:?} are not [1, 5, H, W]"
            )));
        }
        let data = r.f64s(dims.iter().product())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(FormatError::Corrupt(format!("clip {i}: non-finite pixel {v}")));
        }
        let clip = Tensor::new(dims.to_vec(), data).map_err(|e| FormatError::Corrupt(e.to_string()))?;
        let idx: [u8; 5] = r.array()?;
        let labels = ConditionLabels::from_indices(idx.map(usize::from))
            .map_err(|e| FormatError::Corrupt(format!("clip {i}: {e}")))?;
        let scenario = GlassesIllum::from_index(r.u8()? as usize)
            .map_err(|e| FormatError::Corrupt(format!("clip {i}: scenario {e}")))?;
        clips.push(LabeledClip { clip, labels, scenario });
    }
    r.finish()?;
    let dataset = Dataset::new(clips, provenance);
    dataset.extents()?;
    Ok(dataset)
}

pub fn save(path: &Path, dataset: &Dataset) -> Result<(), FormatError> {
    Ok(write_atomic(path, &encode(dataset)?)?)
}

pub fn load(path: &Path) -> Result<Dataset, FormatError> {
    decode(&std::fs::read(path)?, &path.display().to_string())
}
