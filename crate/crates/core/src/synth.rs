//! Deterministic synthetic corpus: ground-truth masks with two contrasting
//! CAM styles.
//!
//! * peaky: a few sharp, bright bumps strictly inside each object plus
//!   isolated false bumps in the background.
//! * dense: a moderate plateau over the dilated object plus strong false
//!   blobs in the background.
//!
//! In `disjoint` mode the two styles' false supports never share a pixel,
//! so the probabilistic AND removes them exactly. Every random draw comes
//! from a ChaCha8 stream seeded from `(master seed, image index)`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::{normalize_cam, CamStack, PseudoMask, RawMap, MAX_CLASS_ID};
use crate::curriculum::RgbImage;
use crate::io::png::voc_color;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("could not place objects for image {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },
    #[error("invalid corpus spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Ellipses,
    Rectangles,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FalseOverlap {
    /// False supports of the two styles never touch.
    Disjoint,
    /// Each dense false blob is centred on a peaky false bump.
    Overlapping,
    /// No false activations at all.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeakyStyle {
    /// Bumps per object.
    pub bumps: usize,
    /// Bump radius as a fraction of the object's inradius.
    pub bump_scale: f64,
    /// Exponent on the cosine falloff; below 1 flattens the top.
    pub sharpness: f64,
    pub false_count: usize,
    pub false_strength: f64,
    pub false_radius: f64,
}

impl Default for PeakyStyle {
    fn default() -> Self {
        Self {
            bumps: 3,
            bump_scale: 1.0,
            sharpness: 0.1,
            false_count: 2,
            false_strength: 0.8,
            false_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseStyle {
    /// Coverage inflation: plateau extends this many pixels past the object.
    pub dilation: f64,
    /// Raw plateau level relative to a unit-strength activation.
    pub plateau: f64,
    /// Relative per-object jitter of the plateau level.
    pub plateau_jitter: f64,
    pub false_count: usize,
    pub false_strength: f64,
    pub false_radius: f64,
}

impl Default for DenseStyle {
    fn default() -> Self {
        Self {
            dilation: 2.0,
            plateau: 0.4,
            plateau_jitter: 0.1,
            false_count: 2,
            false_strength: 1.0,
            false_radius: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub height: usize,
    pub width: usize,
    pub num_images: usize,
    /// Foreground classes; ids run 1..=num_classes.
    pub num_classes: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    pub shape: ShapeFamily,
    /// Semi-axis range in pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Allowed foreground fraction for images with at least one object.
    pub coverage_min: f64,
    pub coverage_max: f64,
    pub peaky: PeakyStyle,
    pub dense: DenseStyle,
    pub false_overlap: FalseOverlap,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            num_images: 84,
            num_classes: 5,
            objects_min: 1,
            objects_max: 2,
            shape: ShapeFamily::Mixed,
            radius_min: 4.0,
            radius_max: 7.0,
            coverage_min: 0.02,
            coverage_max: 0.6,
            peaky: PeakyStyle::default(),
            dense: DenseStyle::default(),
            false_overlap: FalseOverlap::Disjoint,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(8) || !self.width.is_multiple_of(8) {
            return bad("image size must be a positive multiple of 8");
        }
        if self.num_classes == 0 || self.num_classes > MAX_CLASS_ID as usize {
            return bad("num_classes must lie in 1..=254");
        }
        if self.objects_min > self.objects_max || self.objects_max > self.num_classes {
            return bad("need objects_min <= objects_max <= num_classes");
        }
        if !(self.radius_min >= 1.0 && self.radius_min <= self.radius_max) {
            return bad("need 1 <= radius_min <= radius_max");
        }
        if !(0.0..=1.0).contains(&self.coverage_min)
            || !(0.0..=1.0).contains(&self.coverage_max)
            || self.coverage_min > self.coverage_max
        {
            return bad("coverage bounds must satisfy 0 <= min <= max <= 1");
        }
        let strengths = [
            self.peaky.false_strength,
            self.dense.false_strength,
            self.dense.plateau,
            self.dense.plateau_jitter,
        ];
        if strengths.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return bad("strengths, plateau and jitter must lie in [0, 1]");
        }
        if !(self.peaky.bump_scale > 0.0 && self.peaky.bump_scale <= 1.0) {
            return bad("bump_scale must lie in (0, 1]");
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.peaky.sharpness > 0.0) {
            return bad("sharpness must be positive");
        }
        if !(self.peaky.false_radius > 0.0 && self.dense.false_radius > 0.0 && self.dense.dilation >= 0.0) {
            return bad("radii must be positive and dilation non-negative");
        }
        Ok(())
    }
}

/// Seeds used for one sample, recorded for auditing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedTrail {
    pub sample: u64,
    pub ground_truth: u64,
    pub image: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub index: usize,
    pub image_id: String,
    pub gt: PseudoMask,
    pub image: RgbImage,
    /// Peaky style.
    pub cams_a: CamStack,
    /// Dense style.
    pub cams_b: CamStack,
    pub seeds: SeedTrail,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-image seed. Injective in `index` for a fixed master seed.
pub fn sample_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}

fn derive(seed: u64, tag: u64) -> u64 {
    splitmix64(seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

const TAG_GT: u64 = 1;
const TAG_IMAGE: u64 = 2;
const TAG_LAYOUT: u64 = 3;
const TAG_PEAKY: u64 = 4;
const TAG_DENSE: u64 = 5;

pub fn seed_trail(spec: &CorpusSpec, index: usize) -> SeedTrail {
    let sample = sample_seed(spec.seed, index);
    SeedTrail {
        sample,
        ground_truth: derive(sample, TAG_GT),
        image: derive(sample, TAG_IMAGE),
    }
}

pub fn image_id(index: usize) -> String {
    format!("img_{index:05}")
}

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => (y0..=y1).contains(&y) && (x0..=x1).contains(&x),
        }
    }
}

fn random_shape(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Shape {
    let ry = rng.gen_range(spec.radius_min..=spec.radius_max);
    let rx = rng.gen_range(spec.radius_min..=spec.radius_max);
    let rect = match spec.shape {
        ShapeFamily::Ellipses => false,
        ShapeFamily::Rectangles => true,
        ShapeFamily::Mixed => rng.gen_bool(0.5),
    };
    let (h, w) = (spec.height as f64, spec.width as f64);
    let cy = rng.gen_range(ry.min(h / 2.0)..=(h - 1.0 - ry).max(h / 2.0));
    let cx = rng.gen_range(rx.min(w / 2.0)..=(w - 1.0 - rx).max(w / 2.0));
    if rect {
        let clamp = |v: f64, hi: usize| v.round().clamp(0.0, (hi - 1) as f64) as usize;
        Shape::Rect {
            y0: clamp(cy - ry, spec.height),
            x0: clamp(cx - rx, spec.width),
            y1: clamp(cy + ry, spec.height),
            x1: clamp(cx + rx, spec.width),
        }
    } else {
        Shape::Ellipse { cy, cx, ry, rx }
    }
}

/// Places `k` non-touching shapes with distinct class ids on background 0.
pub fn gen_ground_truth(spec: &CorpusSpec, index: usize) -> Result<PseudoMask, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed_trail(spec, index).ground_truth);
    let (h, w) = (spec.height, spec.width);
    let count = rng.gen_range(spec.objects_min..=spec.objects_max);
    let mut classes: Vec<u8> = (1..=spec.num_classes as u8).collect();
    classes.shuffle(&mut rng);
    classes.truncate(count);

    if count == 0 {
        return Ok(PseudoMask::filled(h, w, 0));
    }
    // Keep objects apart so that dilated plateaus of different objects do
    // not meet.
    let gap = (2.0 * spec.dense.dilation).ceil() as usize + 1;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let mut mask = PseudoMask::filled(h, w, 0);
        let mut ok = true;
        for &class in &classes {
            let shape = random_shape(spec, &mut rng);
            let pixels: Vec<(usize, usize)> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .filter(|&(y, x)| shape.contains(y, x))
                .collect();
            let clear = pixels.iter().all(|&(y, x)| {
                let (ylo, yhi) = (y.saturating_sub(gap), (y + gap).min(h - 1));
                let (xlo, xhi) = (x.saturating_sub(gap), (x + gap).min(w - 1));
                (ylo..=yhi).all(|yy| (xlo..=xhi).all(|xx| mask.get(yy, xx) == 0))
            });
            if pixels.is_empty() || !clear {
                ok = false;
                break;
            }
            for (y, x) in pixels {
                mask.set(y, x, class);
            }
        }
        if !ok {
            continue;
        }
        let fg = mask.labels().iter().filter(|&&l| l != 0).count() as f64 / (h * w) as f64;
        if (spec.coverage_min..=spec.coverage_max).contains(&fg) {
            return Ok(mask);
        }
    }
    Err(SynthError::PlacementFailure {
        index,
        attempts: PLACEMENT_ATTEMPTS,
    })
}

/// Euclidean distance from every pixel to the nearest pixel where
/// `inside` is false (0 outside the region). Pixels beyond the border count
/// as outside.
fn inside_distance(inside: &[bool], h: usize, w: usize) -> Vec<f64> {
    let outside: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| !inside[i])
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    (0..h * w)
        .map(|i| {
            if !inside[i] {
                return 0.0;
            }
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            let border = (y + 1.0).min(x + 1.0).min(h as f64 - y).min(w as f64 - x);
            outside
                .iter()
                .map(|&(oy, ox)| ((y - oy).powi(2) + (x - ox).powi(2)).sqrt())
                .fold(border, f64::min)
        })
        .collect()
}

/// Distance from every pixel to the nearest `true` pixel (`inf` if none).
fn distance_to(region: &[bool], h: usize, w: usize) -> Vec<f64> {
    let pts: Vec<(f64, f64)> = (0..h * w)
        .filter(|&i| region[i])
        .map(|i| ((i / w) as f64, (i % w) as f64))
        .collect();
    (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64, (i % w) as f64);
            pts.iter()
                .map(|&(py, px)| ((y - py).powi(2) + (x - px).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Truncated cosine bump: `cos(pi r / 2R)^sharpness` for `r < R`, else 0.
pub fn bump_profile(r: f64, radius: f64, sharpness: f64) -> f64 {
    if r >= radius {
        0.0
    } else {
        (std::f64::consts::FRAC_PI_2 * r / radius).cos().powf(sharpness)
    }
}

/// One disc-shaped false activation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FalseBlob {
    pub class_id: u8,
    pub cy: f64,
    pub cx: f64,
    pub radius: f64,
    pub strength: f64,
}

impl FalseBlob {
    fn dist(&self, y: usize, x: usize) -> f64 {
        ((y as f64 - self.cy).powi(2) + (x as f64 - self.cx).powi(2)).sqrt()
    }

    fn covers(&self, y: usize, x: usize) -> bool {
        self.dist(y, x) < self.radius
    }
}

/// False activations of both styles for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FalseLayout {
    pub peaky: Vec<FalseBlob>,
    pub dense: Vec<FalseBlob>,
}

impl FalseLayout {
    /// Pixel indicator of one style's false support for `class_id`
    /// (all classes when `None`).
    pub fn support(blobs: &[FalseBlob], class_id: Option<u8>, h: usize, w: usize) -> Vec<bool> {
        let mut out = vec![false; h * w];
        for b in blobs.iter().filter(|b| class_id.is_none_or(|c| c == b.class_id)) {
            for y in 0..h {
                for x in 0..w {
                    if b.covers(y, x) {
                        out[y * w + x] = true;
                    }
                }
            }
        }
        out
    }
}

fn present_classes(gt: &PseudoMask) -> Vec<u8> {
    gt.distinct_labels()
        .into_iter()
        .filter(|&l| l != 0 && l <= MAX_CLASS_ID)
        .collect()
}

/// Places false blobs outside every dilated object. Blobs that find no
/// room within the retry budget are dropped.
pub fn gen_false_layout(gt: &PseudoMask, spec: &CorpusSpec, seed: u64) -> FalseLayout {
    let (h, w) = gt.shape();
    let mut layout = FalseLayout::default();
    if spec.false_overlap == FalseOverlap::None {
        return layout;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, TAG_LAYOUT));
    let fg: Vec<bool> = gt.labels().iter().map(|&l| l != 0 && l != 255).collect();
    let from_objects = distance_to(&fg, h, w);
    // Supports must stay clear of every object's dilated plateau.
    let keep_out = spec.dense.dilation + 1.0;

    let fits = |cy: f64, cx: f64, r: f64| -> bool {
        (0..h).all(|y| {
            (0..w).all(|x| {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                d >= r || from_objects[y * w + x] > keep_out
            })
        })
    };
    let apart = |a: &FalseBlob, cy: f64, cx: f64, r: f64| {
        ((a.cy - cy).powi(2) + (a.cx - cx).powi(2)).sqrt() >= a.radius + r + 1.0
    };

    for class_id in present_classes(gt) {
        for _ in 0..spec.peaky.false_count {
            let r = spec.peaky.false_radius;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let cy = rng.gen_range(0.0..h as f64);
                let cx = rng.gen_range(0.0..w as f64);
                if fits(cy, cx, r) {
                    layout.peaky.push(FalseBlob {
                        class_id,
                        cy,
                        cx,
                        radius: r,
                        strength: spec.peaky.false_strength * rng.gen_range(0.8..=1.0),
                    });
                    break;
                }
            }
        }
    }
    for class_id in present_classes(gt) {
        let own: Vec<FalseBlob> = layout.peaky.iter().filter(|b| b.class_id == class_id).copied().collect();
        for j in 0..spec.dense.false_count {
            let r = spec.dense.false_radius;
            let strength = spec.dense.false_strength * rng.gen_range(0.85..=1.0);
            match spec.false_overlap {
                FalseOverlap::Overlapping => {
                    if let Some(anchor) = own.get(j % own.len().max(1)) {
                        layout.dense.push(FalseBlob {
                            class_id,
                            cy: anchor.cy,
                            cx: anchor.cx,
                            radius: r,
                            strength,
                        });
                    }
                }
                FalseOverlap::Disjoint => {
                    for _ in 0..PLACEMENT_ATTEMPTS {
                        let cy = rng.gen_range(0.0..h as f64);
                        let cx = rng.gen_range(0.0..w as f64);
                        if fits(cy, cx, r) && layout.peaky.iter().all(|p| apart(p, cy, cx, r)) {
                            layout.dense.push(FalseBlob {
                                class_id,
                                cy,
                                cx,
                                radius: r,
                                strength,
                            });
                            break;
                        }
                    }
                }
                FalseOverlap::None => unreachable!(),
            }
        }
    }
    layout
}

fn finish(id: &str, h: usize, w: usize, maps: Vec<(u8, Vec<f64>)>) -> CamStack {
    let entries = maps.into_iter().map(|(k, values)| {
        let raw = RawMap::new(h, w, values).expect("map shape matches the mask");
        (k, normalize_cam(&raw).expect("synthetic maps are finite and non-negative"))
    });
    CamStack::new(id, entries).expect("class ids come from a valid mask")
}

/// Peaky style: sharp bumps strictly inside each object plus the layout's
/// peaky false bumps. Max-normalized per class.
pub fn gen_peaky_cam(gt: &PseudoMask, spec: &CorpusSpec, seed: u64, image_id: &str) -> Option<CamStack> {
    let (h, w) = gt.shape();
    let classes = present_classes(gt);
    if classes.is_empty() {
        return None;
    }
    let layout = gen_false_layout(gt, spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, TAG_PEAKY));
    let style = &spec.peaky;
    let maps = classes
        .iter()
        .map(|&k| {
            let inside: Vec<bool> = gt.labels().iter().map(|&l| l == k).collect();
            let depth = inside_distance(&inside, h, w);
            let inradius = depth.iter().copied().fold(0.0, f64::max);
            let radius = (style.bump_scale * inradius).max(1.0);
            // A bump centred at depth >= radius never leaves the object.
            let mut centres: Vec<usize> = (0..h * w).filter(|&i| depth[i] >= radius).collect();
            if centres.is_empty() {
                centres = (0..h * w).filter(|&i| depth[i] >= inradius).collect();
            }
            let radius = radius.min(inradius);
            let mut values = vec![0.0f64; h * w];
            for b in 0..style.bumps {
                let c = centres[rng.gen_range(0..centres.len())];
                let (cy, cx) = ((c / w) as f64, (c % w) as f64);
                let amp = if b == 0 { 1.0 } else { rng.gen_range(0.75..=1.0) };
                for (i, v) in values.iter_mut().enumerate() {
                    let r = (((i / w) as f64 - cy).powi(2) + ((i % w) as f64 - cx).powi(2)).sqrt();
                    *v = v.max(amp * bump_profile(r, radius, style.sharpness));
                }
            }
            for blob in layout.peaky.iter().filter(|b| b.class_id == k) {
                for (i, v) in values.iter_mut().enumerate() {
                    let r = blob.dist(i / w, i % w);
                    *v = v.max(blob.strength * bump_profile(r, blob.radius, style.sharpness));
                }
            }
            (k, values)
        })
        .collect();
    Some(finish(image_id, h, w, maps))
}

/// Dense style: a weak plateau over each object and its dilation ring plus
/// the layout's dense false blobs. Max-normalized per class.
pub fn gen_dense_cam(gt: &PseudoMask, spec: &CorpusSpec, seed: u64, image_id: &str) -> Option<CamStack> {
    let (h, w) = gt.shape();
    let classes = present_classes(gt);
    if classes.is_empty() {
        return None;
    }
    let layout = gen_false_layout(gt, spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, TAG_DENSE));
    let style = &spec.dense;
    let maps = classes
        .iter()
        .map(|&k| {
            let region: Vec<bool> = gt.labels().iter().map(|&l| l == k).collect();
            let dist = distance_to(&region, h, w);
            let jitter = if style.plateau_jitter > 0.0 {
                rng.gen_range(-style.plateau_jitter..=style.plateau_jitter)
            } else {
                0.0
            };
            let level = (style.plateau * (1.0 + jitter)).clamp(0.0, 1.0);
            let mut values: Vec<f64> = dist
                .iter()
                .map(|&d| {
                    if d == 0.0 {
                        level
                    } else if d <= style.dilation {
                        // slight fade across the dilation ring
                        level * (1.0 - 0.25 * d / (style.dilation + 1.0))
                    } else {
                        0.0
                    }
                })
                .collect();
            for blob in layout.dense.iter().filter(|b| b.class_id == k) {
                for (i, v) in values.iter_mut().enumerate() {
                    if blob.covers(i / w, i % w) {
                        *v = v.max(blob.strength);
                    }
                }
            }
            (k, values)
        })
        .collect();
    Some(finish(image_id, h, w, maps))
}

/// Flat-coloured rendering of the mask with seeded noise: background in a
/// random grey, objects in their VOC colour.
pub fn render_image(gt: &PseudoMask, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg: u8 = rng.gen_range(60..=180);
    let mut data = Vec::with_capacity(gt.labels().len() * 3);
    for &l in gt.labels() {
        let base = if l == 0 { [bg; 3] } else { voc_color(l) };
        for c in base {
            let noise: i16 = rng.gen_range(-12..=12);
            data.push((c as i16 + noise).clamp(0, 255) as u8);
        }
    }
    RgbImage::new(gt.height(), gt.width(), data).expect("buffer sized from the mask")
}

/// Generates image `index` of the corpus. Images without objects carry no
/// CAMs and are rejected; use `objects_min >= 1` for CAM corpora.
pub fn gen_sample(spec: &CorpusSpec, index: usize) -> Result<SynthSample, SynthError> {
    let seeds = seed_trail(spec, index);
    let gt = gen_ground_truth(spec, index)?;
    let id = image_id(index);
    let cams_a = gen_peaky_cam(&gt, spec, seeds.sample, &id);
    let cams_b = gen_dense_cam(&gt, spec, seeds.sample, &id);
    let (cams_a, cams_b) = match (cams_a, cams_b) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(SynthError::InvalidSpec(format!(
                "image {index} has no objects; CAM corpora need objects_min >= 1"
            )))
        }
    };
    Ok(SynthSample {
        index,
        image_id: id,
        image: render_image(&gt, seeds.image),
        gt,
        cams_a,
        cams_b,
        seeds,
    })
}

/// The whole corpus, in index order.
pub fn gen_corpus(spec: &CorpusSpec) -> Result<Vec<SynthSample>, SynthError> {
    spec.validate()?;
    use rayon::prelude::*;
    (0..spec.num_images)
        .into_par_iter()
        .map(|i| gen_sample(spec, i))
        .collect()
}
