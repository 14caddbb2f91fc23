//! Scene-condition categories and their one-hot codes.
//!
//! Category numbers are 1-based as in the annotation table; the one-hot bit
//! for category `k` is at index `k - 1`. Indices used throughout the crate
//! (and in the dataset container) are 0-based.

use alloc::vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layers::{one_hot_index, LayerError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelError {
    #[error("{kind} category {value} out of range 1..={max}")]
    CategoryOutOfRange {
        kind: &'static str,
        value: usize,
        max: usize,
    },
    #[error("{kind} index {value} out of range 0..{count}")]
    IndexOutOfRange {
        kind: &'static str,
        value: usize,
        count: usize,
    },
    #[error("{kind}: {source}")]
    OneHot { kind: &'static str, source: LayerError },
}

/// A categorical scene attribute with a fixed number of categories.
pub trait Condition: Copy + Sized + 'static {
    const KIND: &'static str;
    const ALL: &'static [Self];
    const NAMES: &'static [&'static str];

    fn index(self) -> usize;

    fn count() -> usize {
        Self::ALL.len()
    }

    fn from_index(i: usize) -> Result<Self, LabelError> {
        Self::ALL.get(i).copied().ok_or(LabelError::IndexOutOfRange {
            kind: Self::KIND,
            value: i,
            count: Self::ALL.len(),
        })
    }

    /// From a 1-based table category number.
    fn from_category(category: usize) -> Result<Self, LabelError> {
        if category == 0 || category > Self::ALL.len() {
            return Err(LabelError::CategoryOutOfRange {
                kind: Self::KIND,
                value: category,
                max: Self::ALL.len(),
            });
        }
        Ok(Self::ALL[category - 1])
    }

    fn category(self) -> usize {
        self.index() + 1
    }

    fn name(self) -> &'static str {
        Self::NAMES[self.index()]
    }

    fn one_hot(self) -> Tensor {
        let mut v = vec![0.0; Self::count()];
        v[self.index()] = 1.0;
        Tensor::vector(v)
    }

    fn from_one_hot(t: &Tensor) -> Result<Self, LabelError> {
        if t.len() != Self::count() {
            return Err(LabelError::OneHot {
                kind: Self::KIND,
                source: LayerError::OneHot(t.data().into()),
            });
        }
        let i = one_hot_index(t).map_err(|source| LabelError::OneHot {
            kind: Self::KIND,
            source,
        })?;
        Self::from_index(i)
    }
}

macro_rules! condition {
    ($(#[$m:meta])* $name:ident, $kind:literal, [$($variant:ident => $label:literal),+ $(,)?]) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $($variant),+
        }

        impl Condition for $name {
            const KIND: &'static str = $kind;
            const ALL: &'static [Self] = &[$($name::$variant),+];
            const NAMES: &'static [&'static str] = &[$($label),+];

            fn index(self) -> usize {
                self as usize
            }
        }
    };
}

condition!(
    /// Glasses and illumination; also the reporting scenario.
    GlassesIllum, "glasses/illumination", [
        DayBareFace => "Day bare face",
        DayGlasses => "Day glasses",
        NightGlasses => "Night glasses",
        NightBareFace => "Night bare face",
        DaySunglasses => "Day sunglasses",
    ]
);

condition!(Head, "head", [
    Normal => "Normal status",
    LookingAside => "Looking at both sides",
    Nodding => "Nodding",
]);

condition!(Mouth, "mouth", [
    Normal => "Normal status",
    Talking => "Talking and laughing",
    Yawning => "Yawning",
]);

condition!(Eye, "eye", [
    Sleepy => "Sleepiness eye",
    Normal => "Normal status",
]);

condition!(
    /// Detector target: index 0 is the non-drowsiness unit, 1 the drowsiness unit.
    Drowsiness, "drowsiness", [
        Alert => "Non-drowsiness",
        Drowsy => "Drowsiness",
    ]
);

impl GlassesIllum {
    pub fn is_night(self) -> bool {
        matches!(self, GlassesIllum::NightGlasses | GlassesIllum::NightBareFace)
    }
}

/// Which of the four scene heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SceneKind {
    GlassesIllum,
    Head,
    Mouth,
    Eye,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [
        SceneKind::GlassesIllum,
        SceneKind::Head,
        SceneKind::Mouth,
        SceneKind::Eye,
    ];

    /// One-hot length: 5, 3, 3, 2.
    pub fn classes(self) -> usize {
        match self {
            SceneKind::GlassesIllum => GlassesIllum::count(),
            SceneKind::Head => Head::count(),
            SceneKind::Mouth => Mouth::count(),
            SceneKind::Eye => Eye::count(),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            SceneKind::GlassesIllum => "gl",
            SceneKind::Head => "h",
            SceneKind::Mouth => "m",
            SceneKind::Eye => "e",
        }
    }

    /// Display name of category `index` for this head.
    pub fn category_name(self, index: usize) -> Option<&'static str> {
        match self {
            SceneKind::GlassesIllum => GlassesIllum::NAMES.get(index),
            SceneKind::Head => Head::NAMES.get(index),
            SceneKind::Mouth => Mouth::NAMES.get(index),
            SceneKind::Eye => Eye::NAMES.get(index),
        }
        .copied()
    }
}

/// Clip annotation: the four scene conditions plus drowsiness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionLabels {
    pub glasses_illum: GlassesIllum,
    pub head: Head,
    pub mouth: Mouth,
    pub eye: Eye,
    pub drowsy: Drowsiness,
}

impl ConditionLabels {
    /// 0-based indices in the order glasses/illum, head, mouth, eye, drowsiness.
    pub fn indices(&self) -> [usize; 5] {
        [
            self.glasses_illum.index(),
            self.head.index(),
            self.mouth.index(),
            self.eye.index(),
            self.drowsy.index(),
        ]
    }

    pub fn from_indices(idx: [usize; 5]) -> Result<Self, LabelError> {
        Ok(ConditionLabels {
            glasses_illum: GlassesIllum::from_index(idx[0])?,
            head: Head::from_index(idx[1])?,
            mouth: Mouth::from_index(idx[2])?,
            eye: Eye::from_index(idx[3])?,
            drowsy: Drowsiness::from_index(idx[4])?,
        })
    }

    /// Scene indices only (no drowsiness), ordered as [`SceneKind::ALL`].
    pub fn scene_indices(&self) -> [usize; 4] {
        let [g, h, m, e, _] = self.indices();
        [g, h, m, e]
    }

    /// The four scene one-hots, ordered as [`SceneKind::ALL`].
    pub fn scene_one_hots(&self) -> [Tensor; 4] {
        [
            self.glasses_illum.one_hot(),
            self.head.one_hot(),
            self.mouth.one_hot(),
            self.eye.one_hot(),
        ]
    }
}

/// One-hot vectors for scene indices (e.g. hardened head predictions).
pub fn scene_one_hots(indices: [usize; 4]) -> Result<[Tensor; 4], LabelError> {
    let mut out = [(); 4].map(|_| Tensor::vector(vec![0.0]));
    for (slot, (kind, &i)) in out.iter_mut().zip(SceneKind::ALL.iter().zip(&indices)) {
        if i >= kind.classes() {
            return Err(LabelError::IndexOutOfRange {
                kind: kind.short_name(),
                value: i,
                count: kind.classes(),
            });
        }
        let mut v = vec![0.0; kind.classes()];
        v[i] = 1.0;
        *slot = Tensor::vector(v);
    }
    Ok(out)
}
