//! Scale scheduling: early epochs see image/mask pairs shrunk by a
//! per-epoch factor so that small mask noise is pooled away.
//!
//! Images are area-averaged. Masks are mode-pooled: each block takes its
//! most frequent label (lowest id on ties), so a label that fills less than
//! half of every block it touches cannot survive.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::PseudoMask;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CurriculumError {
    #[error("{height}x{width} is not divisible by factor {factor}")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("factor {factor} is larger than the {height}x{width} input")]
    FactorTooLarge {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("image {image:?} and mask {mask:?} differ in size")]
    PairMismatch {
        image: (usize, usize),
        mask: (usize, usize),
    },
    #[error("image buffer holds {actual} bytes, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("epochs are numbered from 1")]
    ZeroEpoch,
}

/// Inclusive epoch range sharing one downsampling factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleStage {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ScaleStage>", into = "Vec<ScaleStage>")]
pub struct ScaleSchedule {
    stages: Vec<ScaleStage>,
}

impl Default for ScaleSchedule {
    /// Epochs 1-2 at factor 8, 3-4 at 4, 5-6 at 2, then full size.
    fn default() -> Self {
        Self::from_durations(&[(2, 8), (2, 4), (2, 2)]).expect("default schedule is valid")
    }
}

impl TryFrom<Vec<ScaleStage>> for ScaleSchedule {
    type Error = CurriculumError;

    fn try_from(stages: Vec<ScaleStage>) -> Result<Self, Self::Error> {
        Self::new(stages)
    }
}

impl From<ScaleSchedule> for Vec<ScaleStage> {
    fn from(s: ScaleSchedule) -> Self {
        s.stages
    }
}

impl ScaleSchedule {
    pub fn new(stages: Vec<ScaleStage>) -> Result<Self, CurriculumError> {
        let bad = |m: String| Err(CurriculumError::InvalidSchedule(m));
        let mut next = 1;
        let mut prev_factor = usize::MAX;
        for (i, s) in stages.iter().enumerate() {
            if s.first_epoch != next {
                return bad(format!("stage {i} starts at epoch {}, expected {next}", s.first_epoch));
            }
            if s.last_epoch < s.first_epoch {
                return bad(format!("stage {i} ends before it starts"));
            }
            if !s.factor.is_power_of_two() {
                return bad(format!("stage {i}: factor {} is not a power of two", s.factor));
            }
            if s.factor > prev_factor {
                return bad(format!("stage {i}: factors must not increase"));
            }
            prev_factor = s.factor;
            next = s.last_epoch + 1;
        }
        Ok(Self { stages })
    }

    /// Builds consecutive stages from `(epoch count, factor)` pairs.
    pub fn from_durations(durations: &[(usize, usize)]) -> Result<Self, CurriculumError> {
        let mut first = 1;
        let mut stages = Vec::with_capacity(durations.len());
        for &(len, factor) in durations {
            if len == 0 {
                return Err(CurriculumError::InvalidSchedule("zero-length stage".into()));
            }
            stages.push(ScaleStage {
                first_epoch: first,
                last_epoch: first + len - 1,
                factor,
            });
            first += len;
        }
        Self::new(stages)
    }

    pub fn stages(&self) -> &[ScaleStage] {
        &self.stages
    }

    /// First epoch trained at full resolution.
    pub fn full_scale_epoch(&self) -> usize {
        self.stages.last().map_or(1, |s| s.last_epoch + 1)
    }
}

/// Downsampling factor for a 1-based epoch; 1 after the last stage.
pub fn schedule_factor(schedule: &ScaleSchedule, epoch: usize) -> usize {
    schedule
        .stages
        .iter()
        .find(|s| (s.first_epoch..=s.last_epoch).contains(&epoch))
        .map_or(1, |s| s.factor)
}

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, CurriculumError> {
        if data.len() != height * width * 3 {
            return Err(CurriculumError::BufferLength {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(Self { height, width, data })
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePair {
    pub image: RgbImage,
    pub mask: PseudoMask,
}

impl ImagePair {
    pub fn new(image: RgbImage, mask: PseudoMask) -> Result<Self, CurriculumError> {
        if image.shape() != mask.shape() {
            return Err(CurriculumError::PairMismatch {
                image: image.shape(),
                mask: mask.shape(),
            });
        }
        Ok(Self { image, mask })
    }
}

fn check_divisible(height: usize, width: usize, factor: usize) -> Result<(), CurriculumError> {
    if factor == 0 || !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
        return Err(CurriculumError::IndivisibleDimensions { height, width, factor });
    }
    Ok(())
}

/// Block-mean pooling per channel, rounding half up.
pub fn downsample_image(image: &RgbImage, factor: usize) -> Result<RgbImage, CurriculumError> {
    check_divisible(image.height, image.width, factor)?;
    if factor == 1 {
        return Ok(image.clone());
    }
    let (oh, ow) = (image.height / factor, image.width / factor);
    let n = (factor * factor) as u64;
    let mut data = Vec::with_capacity(oh * ow * 3);
    for by in 0..oh {
        for bx in 0..ow {
            let mut sums = [0u64; 3];
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    let p = image.pixel(y, x);
                    for c in 0..3 {
                        sums[c] += p[c] as u64;
                    }
                }
            }
            // round(sum / n) with halves going up
            data.extend(sums.iter().map(|&s| ((2 * s + n) / (2 * n)) as u8));
        }
    }
    Ok(RgbImage {
        height: oh,
        width: ow,
        data,
    })
}

/// Block-mode pooling; ties go to the lowest label, 255 counts like any
/// other label.
pub fn downsample_mask(mask: &PseudoMask, factor: usize) -> Result<PseudoMask, CurriculumError> {
    let (h, w) = mask.shape();
    check_divisible(h, w, factor)?;
    if factor == 1 {
        return Ok(mask.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut labels = Vec::with_capacity(oh * ow);
    let mut hist = [0u32; 256];
    for by in 0..oh {
        for bx in 0..ow {
            hist.iter_mut().for_each(|c| *c = 0);
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    hist[mask.get(y, x) as usize] += 1;
                }
            }
            let mut best = 0usize;
            for l in 1..256 {
                if hist[l] > hist[best] {
                    best = l;
                }
            }
            labels.push(best as u8);
        }
    }
    Ok(PseudoMask::new(oh, ow, labels).expect("pooled shape is positive"))
}

/// Central window of the largest size divisible by `factor`.
fn crop_bounds(len: usize, factor: usize) -> (usize, usize) {
    let kept = len - len % factor;
    ((len - kept) / 2, kept)
}

/// Center-crops a pair to the largest size divisible by `factor`.
pub fn center_crop(pair: &ImagePair, factor: usize) -> Result<ImagePair, CurriculumError> {
    let (h, w) = pair.image.shape();
    if factor == 0 {
        return Err(CurriculumError::IndivisibleDimensions { height: h, width: w, factor });
    }
    if h < factor || w < factor {
        return Err(CurriculumError::FactorTooLarge { height: h, width: w, factor });
    }
    let (y0, ch) = crop_bounds(h, factor);
    let (x0, cw) = crop_bounds(w, factor);
    if (ch, cw) == (h, w) {
        return Ok(pair.clone());
    }
    let mut img = Vec::with_capacity(ch * cw * 3);
    let mut lab = Vec::with_capacity(ch * cw);
    for y in y0..y0 + ch {
        let row = (y * w + x0) * 3;
        img.extend_from_slice(&pair.image.data[row..row + cw * 3]);
        for x in x0..x0 + cw {
            lab.push(pair.mask.get(y, x));
        }
    }
    Ok(ImagePair {
        image: RgbImage {
            height: ch,
            width: cw,
            data: img,
        },
        mask: PseudoMask::new(ch, cw, lab).expect("crop shape is positive"),
    })
}

/// Applies the epoch's factor to every pair, center-cropping pairs whose
/// size does not divide. Order is preserved.
pub fn build_epoch_dataset(
    pairs: &[ImagePair],
    schedule: &ScaleSchedule,
    epoch: usize,
) -> Result<Vec<ImagePair>, CurriculumError> {
    if epoch == 0 {
        return Err(CurriculumError::ZeroEpoch);
    }
    let factor = schedule_factor(schedule, epoch);
    pairs
        .iter()
        .map(|pair| {
            if factor == 1 {
                return Ok(pair.clone());
            }
            let cropped = center_crop(pair, factor)?;
            Ok(ImagePair {
                image: downsample_image(&cropped.image, factor)?,
                mask: downsample_mask(&cropped.mask, factor)?,
            })
        })
        .collect()
}
