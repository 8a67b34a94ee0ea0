//! Ensemble pseudo-mask generation for weakly supervised segmentation.
//!
//! Two class activation maps from different classifiers are fused with a
//! probabilistic OR and AND. A small fully convolutional refiner learns to
//! predict the AND map from the OR map, recovering precision without the
//! AND map's loss of coverage. Around that sit a scale-scheduling
//! curriculum for noisy masks, a confusion-matrix evaluator, a synthetic
//! corpus generator, file formats and the pipeline commands used by the
//! `cam-forge` binary.

pub mod cam;
pub mod curriculum;
pub mod io;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use cam::{
    fuse_and, fuse_average, fuse_or, normalize_cam, stack_fuse, to_pseudo_mask, Cam, CamError, CamStack,
    FusionMode, PseudoMask, RawMap,
};
pub use metrics::{ConfusionMatrix, MetricReport, MetricsError};
