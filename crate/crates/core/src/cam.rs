//! Activation maps, label masks and the probabilistic OR/AND fusion rules.
//!
//! All fusion happens per class channel on maps of equal shape. Each fused
//! map is divided by its own maximum; an all-zero result stays all-zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label value excluded from every metric.
pub const IGNORE_LABEL: u8 = 255;
/// Background label.
pub const BACKGROUND: u8 = 0;
/// Largest usable class id (255 is reserved for ignore).
pub const MAX_CLASS_ID: u8 = 254;
/// Default constant background score used by [`to_pseudo_mask`].
pub const DEFAULT_BG_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CamError {
    #[error("map has a zero dimension ({height}x{width})")]
    EmptyMap { height: usize, width: usize },
    #[error("value buffer holds {actual} entries, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("non-finite value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("negative value {value} at index {index}")]
    NegativeValue { index: usize, value: f64 },
    #[error("value {value} at index {index} lies outside [0, 1]")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("class sets differ: {left:?} vs {right:?}")]
    ClassSetMismatch { left: Vec<u8>, right: Vec<u8> },
    #[error("image ids differ: {left} vs {right}")]
    ImageIdMismatch { left: String, right: String },
    #[error("class id {0} outside 1..=254")]
    InvalidClassId(u8),
    #[error("duplicate class id {0}")]
    DuplicateClass(u8),
    #[error("stack has no class maps")]
    EmptyStack,
    #[error("background threshold {0} must lie strictly between 0 and 1")]
    InvalidThreshold(f64),
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<(), CamError> {
    if height == 0 || width == 0 {
        return Err(CamError::EmptyMap { height, width });
    }
    if len != height * width {
        return Err(CamError::BufferLength {
            expected: height * width,
            actual: len,
        });
    }
    Ok(())
}

/// Non-negative classifier output before max normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RawMap {
    /// Wraps a row-major buffer. Finiteness and sign are checked by
    /// [`normalize_cam`], so maps read from disk can be held before
    /// validation.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, CamError> {
        check_dims(height, width, values.len())?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

impl From<Cam> for RawMap {
    fn from(cam: Cam) -> Self {
        Self {
            height: cam.height,
            width: cam.width,
            values: cam.values,
        }
    }
}

/// Single-class activation map with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Cam {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, CamError> {
        check_dims(height, width, values.len())?;
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(CamError::NonFiniteInput { index });
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(CamError::ValueOutOfRange { index, value });
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0, "Cam::zeros needs positive dimensions");
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Builds a map from 2D rows; convenient in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, CamError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(CamError::BufferLength {
                    expected: width,
                    actual: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Divides a raw map by its maximum. An all-zero map stays all-zero.
pub fn normalize_cam(raw: &RawMap) -> Result<Cam, CamError> {
    check_dims(raw.height, raw.width, raw.values.len())?;
    let mut max = 0.0f64;
    for (index, &value) in raw.values.iter().enumerate() {
        if !value.is_finite() {
            return Err(CamError::NonFiniteInput { index });
        }
        if value < 0.0 {
            return Err(CamError::NegativeValue { index, value });
        }
        max = max.max(value);
    }
    Ok(Cam {
        height: raw.height,
        width: raw.width,
        values: divide_by_max(&raw.values, max),
    })
}

fn divide_by_max(values: &[f64], max: f64) -> Vec<f64> {
    if max > 0.0 {
        // x / max can round above 1 only when x == max, which yields exactly 1.
        values.iter().map(|&v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    }
}

/// Ensemble rule applied per class channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Or,
    And,
    Avg,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Or, FusionMode::And, FusionMode::Avg];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Or => "or",
            FusionMode::And => "and",
            FusionMode::Avg => "avg",
        }
    }
}

impl std::str::FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "or" => Ok(FusionMode::Or),
            "and" => Ok(FusionMode::And),
            "avg" => Ok(FusionMode::Avg),
            other => Err(format!("unknown fusion mode {other:?} (expected or|and|avg)")),
        }
    }
}

/// Per-pixel fused value before max normalization.
#[inline]
pub fn fuse_pixel(mode: FusionMode, a: f64, b: f64) -> f64 {
    match mode {
        // Same value as a + b - ab, arranged so rounding can never drop the
        // result below max(a, b). Ordering the operands keeps it symmetric.
        FusionMode::Or => {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            hi + lo * (1.0 - hi)
        }
        FusionMode::And => a * b,
        FusionMode::Avg => (a + b) / 2.0,
    }
}

/// Pre-normalization fused map. The expressions are symmetric in the two
/// operands, so swapping them gives bit-identical output.
pub fn fuse_unnormalized(c1: &Cam, c2: &Cam, mode: FusionMode) -> Result<RawMap, CamError> {
    if c1.shape() != c2.shape() {
        return Err(CamError::DimensionMismatch {
            left: c1.shape(),
            right: c2.shape(),
        });
    }
    let values = c1
        .values
        .iter()
        .zip(&c2.values)
        .map(|(&a, &b)| fuse_pixel(mode, a, b))
        .collect();
    Ok(RawMap {
        height: c1.height,
        width: c1.width,
        values,
    })
}

pub fn fuse(c1: &Cam, c2: &Cam, mode: FusionMode) -> Result<Cam, CamError> {
    let raw = fuse_unnormalized(c1, c2, mode)?;
    let max = raw.max();
    Ok(Cam {
        height: raw.height,
        width: raw.width,
        values: divide_by_max(&raw.values, max),
    })
}

/// Probabilistic OR: `(a + b - ab) / max(a + b - ab)`.
pub fn fuse_or(c1: &Cam, c2: &Cam) -> Result<Cam, CamError> {
    fuse(c1, c2, FusionMode::Or)
}

/// Probabilistic AND: `ab / max(ab)`.
pub fn fuse_and(c1: &Cam, c2: &Cam) -> Result<Cam, CamError> {
    fuse(c1, c2, FusionMode::And)
}

/// Naive ensemble baseline: max-normalized per-pixel mean.
pub fn fuse_average(c1: &Cam, c2: &Cam) -> Result<Cam, CamError> {
    fuse(c1, c2, FusionMode::Avg)
}

/// Per-image set of class maps sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct CamStack {
    image_id: String,
    height: usize,
    width: usize,
    entries: BTreeMap<u8, Cam>,
}

impl CamStack {
    pub fn new(
        image_id: impl Into<String>,
        entries: impl IntoIterator<Item = (u8, Cam)>,
    ) -> Result<Self, CamError> {
        let mut map = BTreeMap::new();
        let mut shape = None;
        for (class_id, cam) in entries {
            if class_id == BACKGROUND || class_id > MAX_CLASS_ID {
                return Err(CamError::InvalidClassId(class_id));
            }
            match shape {
                None => shape = Some(cam.shape()),
                Some(s) if s != cam.shape() => {
                    return Err(CamError::DimensionMismatch {
                        left: s,
                        right: cam.shape(),
                    })
                }
                _ => {}
            }
            if map.insert(class_id, cam).is_some() {
                return Err(CamError::DuplicateClass(class_id));
            }
        }
        let (height, width) = shape.ok_or(CamError::EmptyStack)?;
        Ok(Self {
            image_id: image_id.into(),
            height,
            width,
            entries: map,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn class_ids(&self) -> Vec<u8> {
        self.entries.keys().copied().collect()
    }

    pub fn get(&self, class_id: u8) -> Option<&Cam> {
        self.entries.get(&class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, &Cam)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Applies the chosen fusion rule class by class.
pub fn stack_fuse(s1: &CamStack, s2: &CamStack, mode: FusionMode) -> Result<CamStack, CamError> {
    if s1.image_id != s2.image_id {
        return Err(CamError::ImageIdMismatch {
            left: s1.image_id.clone(),
            right: s2.image_id.clone(),
        });
    }
    if s1.shape() != s2.shape() {
        return Err(CamError::DimensionMismatch {
            left: s1.shape(),
            right: s2.shape(),
        });
    }
    if !s1.entries.keys().eq(s2.entries.keys()) {
        return Err(CamError::ClassSetMismatch {
            left: s1.class_ids(),
            right: s2.class_ids(),
        });
    }
    let entries = s1
        .entries
        .iter()
        .map(|(&k, c1)| fuse(c1, &s2.entries[&k], mode).map(|c| (k, c)))
        .collect::<Result<BTreeMap<_, _>, _>>()?;
    Ok(CamStack {
        image_id: s1.image_id.clone(),
        height: s1.height,
        width: s1.width,
        entries,
    })
}

/// 2D label map: 0 background, class ids, 255 ignore.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PseudoMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl PseudoMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, CamError> {
        check_dims(height, width, labels.len())?;
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        assert!(height > 0 && width > 0, "PseudoMask::filled needs positive dimensions");
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self, CamError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut labels = Vec::with_capacity(height * width);
        for row in rows {
            let row = row.as_ref();
            if row.len() != width {
                return Err(CamError::BufferLength {
                    expected: width,
                    actual: row.len(),
                });
            }
            labels.extend_from_slice(row);
        }
        Self::new(height, width, labels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    /// Sorted distinct labels, ignore included if present.
    pub fn distinct_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (0..=255u8).filter(|&l| seen[l as usize]).collect()
    }
}

/// Per-pixel argmax over a constant background score and each class map.
///
/// Classes are visited in ascending id and must strictly beat the current
/// best, so background wins exact ties and lower ids win among classes.
pub fn to_pseudo_mask(stack: &CamStack, bg_threshold: f64) -> Result<PseudoMask, CamError> {
    if !(bg_threshold > 0.0 && bg_threshold < 1.0) {
        return Err(CamError::InvalidThreshold(bg_threshold));
    }
    if stack.is_empty() {
        return Err(CamError::EmptyStack);
    }
    let n = stack.height * stack.width;
    let mut best = vec![bg_threshold; n];
    let mut labels = vec![BACKGROUND; n];
    for (&class_id, cam) in &stack.entries {
        for ((score, label), &v) in best.iter_mut().zip(labels.iter_mut()).zip(&cam.values) {
            if v > *score {
                *score = v;
                *label = class_id;
            }
        }
    }
    Ok(PseudoMask {
        height: stack.height,
        width: stack.width,
        labels,
    })
}
