//! Pipeline commands over an on-disk corpus.
//!
//! Corpus directory:
//!
//! ```text
//! corpus.json             spec echo and image index
//! images/<id>.png         RGB rendering
//! gt/<id>.png             ground-truth labels (grayscale)
//! gt_color/<id>.png       VOC-coloured preview
//! cams_a/<id>_<k>.npy     peaky CAMs
//! cams_b/<id>_<k>.npy     dense CAMs
//! ```
//!
//! Output directory:
//!
//! ```text
//! fused/{or,and,avg}/     fused stacks
//! checkpoint.npz          refiner parameters (unless configured elsewhere)
//! history.json            per-epoch training loss
//! refined/                refiner outputs
//! masks/<variant>/        pseudo-masks for every variant
//! report.json             metrics on the held-out images
//! schedule/               curriculum datasets
//! timing.json             wall-clock seconds per command
//! ```
//!
//! Wall-clock time lives only in `timing.json`, so every other artifact is
//! a pure function of the configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cam::{stack_fuse, to_pseudo_mask, Cam, CamError, CamStack, FusionMode, PseudoMask, RawMap, IGNORE_LABEL};
use crate::curriculum::{build_epoch_dataset, schedule_factor, CurriculumError, ImagePair, ScaleSchedule};
use crate::io::{
    load_checkpoint, read_mask_png, read_npy, read_rgb_png, save_checkpoint, write_color_mask_png, write_mask_png,
    write_npy, write_rgb_png, CheckpointError, NpyError, PngError,
};
use crate::metrics::{summarize_with, ConfusionMatrix, MetricOptions, MetricReport, MetricsError};
use crate::model::{infer, train, EpochStats, ModelError, TrainConfig, TrainSample};
use crate::synth::{gen_corpus, CorpusSpec, SeedTrail, SynthError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const CORPUS_FORMAT: u32 = 1;
pub const LOCK_FILE: &str = ".cam-forge.lock";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("{path}: {source}")]
    Npy { path: PathBuf, source: NpyError },
    #[error("{path}: {source}")]
    Png { path: PathBuf, source: PngError },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Cam(#[from] CamError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),
}

impl PipelineError {
    /// Process exit code. 2 is left to the argument parser.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 3,
            PipelineError::Io { .. } => 4,
            PipelineError::MissingInput(_) => 5,
            PipelineError::Npy { .. }
            | PipelineError::Png { .. }
            | PipelineError::Json { .. }
            | PipelineError::Checkpoint(_) => 6,
            PipelineError::Cam(_)
            | PipelineError::Metrics(_)
            | PipelineError::Synth(_)
            | PipelineError::Curriculum(_) => 7,
            PipelineError::Model(_) => 8,
            PipelineError::Locked(_) => 9,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } => "io",
            PipelineError::MissingInput(_) => "missing_input",
            PipelineError::Npy { .. } => "npy",
            PipelineError::Png { .. } => "png",
            PipelineError::Json { .. } => "json",
            PipelineError::Checkpoint(_) => "checkpoint",
            PipelineError::Cam(_) => "cam",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Synth(_) => "synth",
            PipelineError::Curriculum(_) => "curriculum",
            PipelineError::Model(_) => "model",
            PipelineError::Locked(_) => "locked",
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The CAM sources a report compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    CamA,
    CamB,
    Or,
    And,
    Avg,
    Orandnet,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::CamA,
        Variant::CamB,
        Variant::Or,
        Variant::And,
        Variant::Avg,
        Variant::Orandnet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CamA => "cam_a",
            Variant::CamB => "cam_b",
            Variant::Or => "or",
            Variant::And => "and",
            Variant::Avg => "avg",
            Variant::Orandnet => "orandnet",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/corpus`.
    pub corpus_dir: Option<PathBuf>,
    /// Defaults to `<out_dir>/checkpoint.npz`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("cam-forge-out"),
            corpus_dir: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    /// Master seed; overrides the corpus and training seeds.
    pub seed: u64,
    pub corpus: CorpusSpec,
    pub train: TrainConfig,
    pub schedule: ScaleSchedule,
    pub bg_threshold: f64,
    /// Fusion fed to the refiner.
    pub refiner_input: FusionMode,
    /// Fusion the refiner learns to reproduce.
    pub refiner_target: FusionMode,
    /// Training pairs, taken in image then class order from the training split.
    pub train_pairs: usize,
    /// The last `held_out` images are never trained on and are the ones scored.
    /// Fixed when the corpus is generated and recorded in `corpus.json`.
    pub held_out: usize,
    /// Variant whose pseudo-masks feed the curriculum datasets.
    pub schedule_source: Variant,
    pub metrics: MetricOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            seed: 0,
            corpus: CorpusSpec::default(),
            train: TrainConfig::default(),
            schedule: ScaleSchedule::default(),
            bg_threshold: crate::cam::DEFAULT_BG_THRESHOLD,
            refiner_input: FusionMode::Or,
            refiner_target: FusionMode::And,
            train_pairs: 64,
            held_out: 20,
            schedule_source: Variant::Orandnet,
            metrics: MetricOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                PipelineError::MissingInput(path.to_path_buf())
            } else {
                io_err(path)(e)
            }
        })?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.paths
            .corpus_dir
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("corpus"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out_dir.join("checkpoint.npz"))
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out_dir
    }

    /// Corpus spec with the master seed applied.
    pub fn corpus_spec(&self) -> CorpusSpec {
        CorpusSpec {
            seed: self.seed,
            ..self.corpus.clone()
        }
    }

    /// Training config with the master seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: String| PipelineError::Config(e);
        self.corpus_spec().validate().map_err(|e| cfg(e.to_string()))?;
        self.train_config().validate().map_err(|e| cfg(e.to_string()))?;
        if !(self.bg_threshold > 0.0 && self.bg_threshold < 1.0) {
            return Err(cfg(format!("bg_threshold {} outside (0, 1)", self.bg_threshold)));
        }
        if self.held_out > self.corpus.num_images {
            return Err(cfg(format!(
                "held_out {} exceeds num_images {}",
                self.held_out, self.corpus.num_images
            )));
        }
        if self.train_pairs == 0 {
            return Err(cfg("train_pairs must be positive".into()));
        }
        Ok(())
    }

    /// The configuration minus filesystem paths, as echoed in reports.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("paths");
            obj.insert("seed".into(), self.seed.into());
        }
        v
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(dir.to_path_buf())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => PipelineError::MissingInput(path.to_path_buf()),
        _ => io_err(path)(e),
    })?;
    serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Removes and recreates a directory so reruns leave no stale files.
fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn require_dir(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(dir.to_path_buf()))
    }
}

pub fn write_stack(dir: &Path, stack: &CamStack) -> Result<()> {
    for (k, cam) in stack.iter() {
        let path = dir.join(format!("{}_{k}.npy", stack.image_id()));
        write_npy(&path, &RawMap::from(cam.clone())).map_err(|source| PipelineError::Npy { path, source })?;
    }
    Ok(())
}

/// Reads every `<image_id>_<class>.npy` in `dir`, grouped by image.
pub fn read_stack_dir(dir: &Path) -> Result<BTreeMap<String, CamStack>> {
    require_dir(dir)?;
    let mut grouped: BTreeMap<String, Vec<(u8, Cam)>> = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(stem) = path
            .extension()
            .filter(|e| *e == "npy")
            .and(path.file_stem())
            .and_then(|s| s.to_str())
        else {
            continue;
        };
        let Some((id, class)) = stem.rsplit_once('_') else {
            return Err(PipelineError::Config(format!(
                "{}: expected <image_id>_<class>.npy",
                path.display()
            )));
        };
        let class: u8 = class.parse().map_err(|_| {
            PipelineError::Config(format!("{}: class id {class:?} is not a label", path.display()))
        })?;
        let raw = read_npy(&path).map_err(|source| PipelineError::Npy {
            path: path.clone(),
            source,
        })?;
        let (h, w) = raw.shape();
        let cam = Cam::new(h, w, raw.into_values())?;
        grouped.entry(id.to_string()).or_default().push((class, cam));
    }
    grouped
        .into_iter()
        .map(|(id, entries)| Ok((id.clone(), CamStack::new(id, entries)?)))
        .collect()
}

fn read_mask(path: &Path) -> Result<PseudoMask> {
    if !path.exists() {
        return Err(PipelineError::MissingInput(path.to_path_buf()));
    }
    read_mask_png(path).map_err(|source| PipelineError::Png {
        path: path.to_path_buf(),
        source,
    })
}

fn write_mask(path: &Path, mask: &PseudoMask) -> Result<()> {
    write_mask_png(path, mask).map_err(|source| PipelineError::Png {
        path: path.to_path_buf(),
        source,
    })
}

/// Adds one command's wall-clock seconds to `timing.json`.
fn record_timing(out_dir: &Path, command: &str, started: Instant) -> Result<()> {
    let path = out_dir.join("timing.json");
    let mut timing: BTreeMap<String, f64> = if path.exists() {
        read_json(&path).unwrap_or_default()
    } else {
        BTreeMap::new()
    };
    timing.insert(command.to_string(), started.elapsed().as_secs_f64());
    write_json(&path, &timing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub image_id: String,
    pub classes: Vec<u8>,
    pub seeds: SeedTrail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusIndex {
    pub format: u32,
    pub spec: CorpusSpec,
    pub held_out: usize,
    pub images: Vec<CorpusEntry>,
}

impl CorpusIndex {
    pub fn load(corpus_dir: &Path) -> Result<Self> {
        let index: CorpusIndex = read_json(&corpus_dir.join("corpus.json"))?;
        if index.format != CORPUS_FORMAT {
            return Err(PipelineError::Config(format!(
                "corpus format {} is not supported",
                index.format
            )));
        }
        Ok(index)
    }

    /// Image ids of the training and held-out splits.
    pub fn split(&self) -> (Vec<String>, Vec<String>) {
        let cut = self.images.len().saturating_sub(self.held_out);
        let ids: Vec<String> = self.images.iter().map(|e| e.image_id.clone()).collect();
        let (a, b) = ids.split_at(cut);
        (a.to_vec(), b.to_vec())
    }
}

fn synth_inner(cfg: &RunConfig) -> Result<CorpusIndex> {
    let spec = cfg.corpus_spec();
    let samples = gen_corpus(&spec)?;
    let dir = cfg.corpus_dir();
    fresh_dir(&dir)?;
    for sub in ["images", "gt", "gt_color", "cams_a", "cams_b"] {
        fs::create_dir_all(dir.join(sub)).map_err(io_err(&dir))?;
    }
    let mut images = Vec::with_capacity(samples.len());
    for s in &samples {
        let id = &s.image_id;
        let img = dir.join("images").join(format!("{id}.png"));
        write_rgb_png(&img, &s.image).map_err(|source| PipelineError::Png { path: img, source })?;
        write_mask(&dir.join("gt").join(format!("{id}.png")), &s.gt)?;
        let color = dir.join("gt_color").join(format!("{id}.png"));
        write_color_mask_png(&color, &s.gt).map_err(|source| PipelineError::Png { path: color, source })?;
        write_stack(&dir.join("cams_a"), &s.cams_a)?;
        write_stack(&dir.join("cams_b"), &s.cams_b)?;
        images.push(CorpusEntry {
            image_id: id.clone(),
            classes: s.cams_a.class_ids(),
            seeds: s.seeds,
        });
    }
    let index = CorpusIndex {
        format: CORPUS_FORMAT,
        spec,
        held_out: cfg.held_out,
        images,
    };
    write_json(&dir.join("corpus.json"), &index)?;
    Ok(index)
}

fn fuse_inner(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.corpus_dir();
    let a = read_stack_dir(&corpus.join("cams_a"))?;
    let b = read_stack_dir(&corpus.join("cams_b"))?;
    for mode in FusionMode::ALL {
        let dir = cfg.out_dir().join("fused").join(mode.name());
        fresh_dir(&dir)?;
        for (id, sa) in &a {
            let sb = b
                .get(id)
                .ok_or_else(|| PipelineError::MissingInput(corpus.join("cams_b").join(format!("{id}_*.npy"))))?;
            write_stack(&dir, &stack_fuse(sa, sb, mode)?)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    /// `(image_id, class_id)` of each training pair, in dataset order.
    pub pairs: Vec<(String, u8)>,
    pub epochs: Vec<EpochStats>,
}

/// Training pairs from the training split, in image then class order.
pub fn training_pairs(cfg: &RunConfig) -> Result<Vec<TrainSample>> {
    let index = CorpusIndex::load(&cfg.corpus_dir())?;
    let (train_ids, _) = index.split();
    let fused = cfg.out_dir().join("fused");
    let inputs = read_stack_dir(&fused.join(cfg.refiner_input.name()))?;
    let targets = read_stack_dir(&fused.join(cfg.refiner_target.name()))?;
    let mut pairs = Vec::with_capacity(cfg.train_pairs);
    'images: for id in &train_ids {
        let missing = || PipelineError::MissingInput(fused.join(format!("*/{id}_*.npy")));
        let input = inputs.get(id).ok_or_else(missing)?;
        let target = targets.get(id).ok_or_else(missing)?;
        for (k, x) in input.iter() {
            if pairs.len() == cfg.train_pairs {
                break 'images;
            }
            let y = target.get(k).ok_or_else(missing)?;
            pairs.push(TrainSample::new(x.clone(), y.clone())?.tagged(id.clone(), k));
        }
    }
    Ok(pairs)
}

fn train_inner(cfg: &RunConfig) -> Result<TrainRecord> {
    let data = training_pairs(cfg)?;
    let config = cfg.train_config();
    let (params, history) = train(&data, &config)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    save_checkpoint(&ckpt, &params, Some(&config))?;
    let record = TrainRecord {
        pairs: data
            .iter()
            .map(|s| (s.image_id.clone().unwrap_or_default(), s.class_id.unwrap_or_default()))
            .collect(),
        epochs: history.epochs,
    };
    write_json(&cfg.out_dir().join("history.json"), &record)?;
    Ok(record)
}

fn infer_inner(cfg: &RunConfig) -> Result<()> {
    let ckpt = cfg.checkpoint_path();
    if !ckpt.exists() {
        return Err(PipelineError::MissingInput(ckpt));
    }
    let (params, _) = load_checkpoint(&ckpt)?;
    let inputs = read_stack_dir(&cfg.out_dir().join("fused").join(cfg.refiner_input.name()))?;
    let refined: Vec<CamStack> = inputs
        .par_iter()
        .map(|(id, stack)| {
            let entries = stack
                .iter()
                .map(|(k, cam)| Ok((k, infer(&params, cam)?)))
                .collect::<Result<Vec<_>>>()?;
            Ok(CamStack::new(id.clone(), entries)?)
        })
        .collect::<Result<_>>()?;
    let dir = cfg.out_dir().join("refined");
    fresh_dir(&dir)?;
    for stack in &refined {
        write_stack(&dir, stack)?;
    }
    Ok(())
}

fn variant_dir(cfg: &RunConfig, variant: Variant) -> PathBuf {
    let out = cfg.out_dir();
    match variant {
        Variant::CamA => cfg.corpus_dir().join("cams_a"),
        Variant::CamB => cfg.corpus_dir().join("cams_b"),
        Variant::Or => out.join("fused").join("or"),
        Variant::And => out.join("fused").join("and"),
        Variant::Avg => out.join("fused").join("avg"),
        Variant::Orandnet => out.join("refined"),
    }
}

/// Pseudo-masks of one variant for every image in the corpus.
pub fn variant_masks(cfg: &RunConfig, variant: Variant) -> Result<BTreeMap<String, PseudoMask>> {
    let stacks = read_stack_dir(&variant_dir(cfg, variant))?;
    stacks
        .iter()
        .map(|(id, s)| Ok((id.clone(), to_pseudo_mask(s, cfg.bg_threshold)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    /// Classes including background.
    pub num_classes: usize,
    pub evaluated_images: Vec<String>,
    pub variants: BTreeMap<Variant, MetricReport>,
    pub config: serde_json::Value,
}

impl Report {
    /// Structural check: every variant present and every number finite.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(format!("schema version {}", self.schema_version));
        }
        for v in Variant::ALL {
            let m = self.variants.get(&v).ok_or(format!("variant {} missing", v.name()))?;
            let lists = [&m.per_class_iou, &m.per_class_precision, &m.per_class_recall];
            if lists.iter().any(|l| l.len() != self.num_classes) {
                return Err(format!("variant {}: per-class lists have the wrong length", v.name()));
            }
            let finite = [m.miou, m.mean_precision, m.mean_recall]
                .into_iter()
                .chain(lists.iter().flat_map(|l| l.iter().flatten().copied()))
                .all(f64::is_finite);
            if !finite {
                return Err(format!("variant {}: non-finite metric", v.name()));
            }
        }
        Ok(())
    }
}

fn eval_inner(cfg: &RunConfig) -> Result<Report> {
    let corpus = cfg.corpus_dir();
    let index = CorpusIndex::load(&corpus)?;
    let (_, mut scored) = index.split();
    if scored.is_empty() {
        scored = index.images.iter().map(|e| e.image_id.clone()).collect();
    }
    let gt: BTreeMap<String, PseudoMask> = scored
        .iter()
        .map(|id| Ok((id.clone(), read_mask(&corpus.join("gt").join(format!("{id}.png")))?)))
        .collect::<Result<_>>()?;
    let num_classes = index.spec.num_classes + 1;
    let masks_root = cfg.out_dir().join("masks");
    let mut variants = BTreeMap::new();
    for v in Variant::ALL {
        let masks = variant_masks(cfg, v)?;
        let dir = masks_root.join(v.name());
        fresh_dir(&dir)?;
        for (id, m) in &masks {
            write_mask(&dir.join(format!("{id}.png")), m)?;
        }
        let mut cm = ConfusionMatrix::new(num_classes)?;
        for (id, g) in &gt {
            let pred = masks
                .get(id)
                .ok_or_else(|| PipelineError::MissingInput(variant_dir(cfg, v).join(format!("{id}_*.npy"))))?;
            cm.accumulate(pred, g)?;
        }
        variants.insert(v, summarize_with(&cm, cfg.metrics)?);
    }
    // Describe the corpus that was scored, not what the flags would generate.
    let mut echoed = cfg.clone();
    echoed.corpus = index.spec.clone();
    echoed.held_out = index.held_out;
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        num_classes,
        evaluated_images: scored,
        variants,
        config: echoed.echo(),
    };
    write_json(&cfg.out_dir().join("report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskEvalReport {
    pub schema_version: u32,
    pub num_classes: usize,
    pub images: Vec<String>,
    pub metrics: MetricReport,
}

/// Scores every `<name>.png` in `gt_dir` against the same name in
/// `pred_dir`. With no class count given, the largest label seen (other
/// than the ignore label) decides it.
pub fn eval_mask_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    num_classes: Option<usize>,
    opts: MetricOptions,
) -> Result<MaskEvalReport> {
    require_dir(pred_dir)?;
    require_dir(gt_dir)?;
    let mut names: Vec<String> = fs::read_dir(gt_dir)
        .map_err(io_err(gt_dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .filter_map(|p| p.file_name().and_then(|n| n.to_str()).map(String::from))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(PipelineError::MissingInput(gt_dir.join("*.png")));
    }
    let mut pairs = Vec::with_capacity(names.len());
    for name in &names {
        pairs.push((read_mask(&pred_dir.join(name))?, read_mask(&gt_dir.join(name))?));
    }
    let n = match num_classes {
        Some(n) => n,
        None => {
            let max = pairs
                .iter()
                .flat_map(|(p, g)| p.labels().iter().chain(g.labels()))
                .filter(|&&l| l != IGNORE_LABEL)
                .max()
                .copied()
                .unwrap_or(0);
            (max as usize + 1).max(2)
        }
    };
    let mut cm = ConfusionMatrix::new(n)?;
    for (p, g) in &pairs {
        cm.accumulate(p, g)?;
    }
    Ok(MaskEvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        num_classes: n,
        images: names
            .iter()
            .map(|n| n.trim_end_matches(".png").to_string())
            .collect(),
        metrics: summarize_with(&cm, opts)?,
    })
}

/// Writes a mask-directory report as `<out_dir>/mask_report.json`.
pub fn write_mask_report(out_dir: &Path, report: &MaskEvalReport) -> Result<()> {
    let _lock = OutputLock::acquire(out_dir)?;
    write_json(&out_dir.join("mask_report.json"), report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEpoch {
    pub epoch: usize,
    pub factor: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleManifest {
    pub source: Variant,
    pub images: Vec<String>,
    pub epochs: Vec<ScheduleEpoch>,
}

fn schedule_inner(cfg: &RunConfig) -> Result<ScheduleManifest> {
    let corpus = cfg.corpus_dir();
    let index = CorpusIndex::load(&corpus)?;
    let (train_ids, _) = index.split();
    let masks = variant_masks(cfg, cfg.schedule_source)?;
    let pairs = train_ids
        .iter()
        .map(|id| {
            let path = corpus.join("images").join(format!("{id}.png"));
            if !path.exists() {
                return Err(PipelineError::MissingInput(path));
            }
            let image = read_rgb_png(&path).map_err(|source| PipelineError::Png { path, source })?;
            let mask = masks
                .get(id)
                .cloned()
                .ok_or_else(|| PipelineError::MissingInput(variant_dir(cfg, cfg.schedule_source)))?;
            Ok(ImagePair::new(image, mask)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let root = cfg.out_dir().join("schedule");
    fresh_dir(&root)?;
    let mut epochs = Vec::new();
    // Epochs past the last stage repeat the full-size data; one is enough.
    for epoch in 1..=cfg.schedule.full_scale_epoch() {
        let data = build_epoch_dataset(&pairs, &cfg.schedule, epoch)?;
        let dir = root.join(format!("epoch_{epoch:03}"));
        let (img_dir, mask_dir) = (dir.join("images"), dir.join("masks"));
        fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
        fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;
        for (id, pair) in train_ids.iter().zip(&data) {
            let p = img_dir.join(format!("{id}.png"));
            write_rgb_png(&p, &pair.image).map_err(|source| PipelineError::Png { path: p, source })?;
            write_mask(&mask_dir.join(format!("{id}.png")), &pair.mask)?;
        }
        let (height, width) = data.first().map_or((0, 0), |p| p.image.shape());
        epochs.push(ScheduleEpoch {
            epoch,
            factor: schedule_factor(&cfg.schedule, epoch),
            height,
            width,
        });
    }
    let manifest = ScheduleManifest {
        source: cfg.schedule_source,
        images: train_ids,
        epochs,
    };
    write_json(&root.join("schedule.json"), &manifest)?;
    Ok(manifest)
}

fn guarded<T>(cfg: &RunConfig, command: &str, f: impl FnOnce(&RunConfig) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(cfg.out_dir())?;
    let started = Instant::now();
    let out = f(cfg)?;
    record_timing(cfg.out_dir(), command, started)?;
    Ok(out)
}

/// Generates the synthetic corpus into the corpus directory.
pub fn cmd_synth(cfg: &RunConfig) -> Result<CorpusIndex> {
    guarded(cfg, "synth", synth_inner)
}

/// Writes OR, AND and AVG stacks under `fused/`.
pub fn cmd_fuse(cfg: &RunConfig) -> Result<()> {
    guarded(cfg, "fuse", fuse_inner)
}

/// Trains the refiner and writes the checkpoint and `history.json`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainRecord> {
    guarded(cfg, "train", train_inner)
}

/// Runs the refiner over every image's input fusion, writing `refined/`.
pub fn cmd_infer(cfg: &RunConfig) -> Result<()> {
    guarded(cfg, "infer", infer_inner)
}

/// Materializes the curriculum datasets under `schedule/`.
pub fn cmd_schedule(cfg: &RunConfig) -> Result<ScheduleManifest> {
    guarded(cfg, "schedule", schedule_inner)
}

/// Scores every variant on the held-out images and writes `report.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<Report> {
    guarded(cfg, "eval", eval_inner)
}

/// synth, fuse, train, infer and eval in sequence.
pub fn cmd_run(cfg: &RunConfig) -> Result<Report> {
    guarded(cfg, "run", |cfg| {
        synth_inner(cfg)?;
        fuse_inner(cfg)?;
        train_inner(cfg)?;
        infer_inner(cfg)?;
        eval_inner(cfg)
    })
}
