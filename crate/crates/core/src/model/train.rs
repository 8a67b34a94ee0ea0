use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arch::FcnArchitecture;
use super::loss::loss_ls_bce;
use super::network::{backward, forward, init_params, FcnParams, ParamGrads};
use super::optim::{poly_lr, sgd_step, SgdState};
use super::ModelError;
use crate::cam::Cam;

/// Stream id separating the shuffle RNG from the initializer's.
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: FcnArchitecture,
    pub lr0: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Schedule horizon in optimizer steps; defaults to every step of the run.
    pub total_steps: Option<u64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: FcnArchitecture::desk(),
            lr0: 0.001,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 0.0,
            label_smoothing: 0.1,
            batch_size: 32,
            epochs: 200,
            total_steps: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 {} must be finite and non-negative", self.lr0));
        }
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0, 0.5)", self.label_smoothing));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        // Written negated so NaN is rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(self.weight_decay >= 0.0) || !(self.poly_power >= 0.0) {
            return bad("weight_decay and poly_power must be non-negative".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if self.total_steps == Some(0) {
            return bad("total_steps must be at least 1".into());
        }
        self.architecture.validate()
    }

    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch_size) as u64
    }

    pub fn horizon(&self, samples: usize) -> u64 {
        self.total_steps
            .unwrap_or(self.epochs as u64 * self.steps_per_epoch(samples))
    }
}

/// One OR map and its AND target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub input: Cam,
    pub target: Cam,
    pub image_id: Option<String>,
    pub class_id: Option<u8>,
}

impl TrainSample {
    pub fn new(input: Cam, target: Cam) -> Result<Self, ModelError> {
        if input.shape() != target.shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "input {:?} vs target {:?}",
                input.shape(),
                target.shape()
            )));
        }
        Ok(Self {
            input,
            target,
            image_id: None,
            class_id: None,
        })
    }

    pub fn tagged(mut self, image_id: impl Into<String>, class_id: u8) -> Self {
        self.image_id = Some(image_id.into());
        self.class_id = Some(class_id);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean of the per-sample losses seen during the epoch.
    pub mean_loss: f64,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Loss and summed parameter gradient over `samples`, visited in order.
/// Per-sample work may run in parallel; the reduction order is fixed.
pub fn batch_gradient(
    params: &FcnParams,
    samples: &[&TrainSample],
    label_smoothing: f64,
) -> Result<(Vec<f64>, ParamGrads), ModelError> {
    let per_sample: Vec<(f64, ParamGrads)> = samples
        .par_iter()
        .map(|s| {
            let (pred, cache) = forward(params, &s.input)?;
            let (loss, dpred) = loss_ls_bce(&pred, &s.target, label_smoothing)?;
            let grads = backward(params, &cache, &dpred)?;
            Ok((loss, grads))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = ParamGrads::zeros_for(params);
    let mut losses = Vec::with_capacity(per_sample.len());
    for (loss, grads) in &per_sample {
        total.add_assign(grads);
        losses.push(*loss);
    }
    Ok((losses, total))
}

/// Trains a fresh refiner on OR -> AND pairs.
///
/// Each epoch visits a seeded permutation of the dataset in mini-batches;
/// the update uses the batch-summed gradient and the poly-decayed rate.
/// Everything is reproducible from `config.seed`.
pub fn train(dataset: &[TrainSample], config: &TrainConfig) -> Result<(FcnParams, History), ModelError> {
    config.validate()?;
    let first = dataset.first().ok_or(ModelError::EmptyDataset)?;
    let shape = first.input.shape();
    let div = config.architecture.downsampling();
    for s in dataset {
        if s.input.shape() != shape || s.target.shape() != shape {
            return Err(ModelError::ShapeMismatch(format!(
                "samples must share one shape; found {:?} and {:?}",
                shape,
                s.input.shape()
            )));
        }
    }
    if shape.0 % div != 0 || shape.1 % div != 0 {
        return Err(ModelError::ShapeError {
            height: shape.0,
            width: shape.1,
            divisor: div,
        });
    }

    let mut params = init_params(&config.architecture, config.seed)?;
    let mut state = SgdState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(SHUFFLE_STREAM);

    let horizon = config.horizon(dataset.len());
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = History::default();
    let mut sample_loss = vec![0.0; dataset.len()];

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = poly_lr(config.lr0, step, horizon, config.poly_power);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (losses, grads) = batch_gradient(&params, &batch, config.label_smoothing)?;
            for (&i, l) in chunk.iter().zip(losses) {
                sample_loss[i] = l;
            }
            let lr = poly_lr(config.lr0, step, horizon, config.poly_power);
            sgd_step(&mut params, &grads, lr, config.momentum, config.weight_decay, &mut state)?;
            step += 1;
        }
        // Sum in dataset order so the statistic does not depend on the shuffle.
        let mean_loss = sample_loss.iter().sum::<f64>() / dataset.len() as f64;
        if !mean_loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        history.epochs.push(EpochStats {
            epoch,
            mean_loss,
            lr: epoch_lr,
        });
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> Cam {
        let values = (0..h * w)
            .map(|i| {
                let (y, x) = ((i / w) as f64, (i % w) as f64);
                let d = ((y - cy).powi(2) + (x - cx).powi(2)).sqrt() / r;
                (1.0 - d).max(0.0)
            })
            .collect();
        Cam::new(h, w, values).unwrap()
    }

    fn toy_dataset() -> Vec<TrainSample> {
        (0..6)
            .map(|i| {
                let c = 3.0 + i as f64;
                TrainSample::new(blob(8, 8, c, 4.0, 4.0), blob(8, 8, c, 4.0, 2.0)).unwrap()
            })
            .collect()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            lr0: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_reproducible() {
        let data = toy_dataset();
        let (p1, h1) = train(&data, &quick_config()).unwrap();
        let (p2, h2) = train(&data, &quick_config()).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert_eq!(h1.epochs.len(), 3);
        assert_eq!(h1.epochs[0].lr, 0.01);
    }

    #[test]
    fn zero_lr_keeps_loss_constant() {
        let config = TrainConfig {
            lr0: 0.0,
            ..quick_config()
        };
        let (_, history) = train(&toy_dataset(), &config).unwrap();
        let losses = history.losses();
        assert!(losses.iter().all(|&l| l == losses[0]));
    }

    #[test]
    fn duplicated_sample_doubles_summed_gradient() {
        let data = toy_dataset();
        let params = init_params(&FcnArchitecture::desk(), 9).unwrap();
        let (_, once) = batch_gradient(&params, &[&data[0]], 0.1).unwrap();
        let (_, twice) = batch_gradient(&params, &[&data[0], &data[0]], 0.1).unwrap();
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn rejects_bad_datasets() {
        assert!(matches!(
            train(&[], &quick_config()),
            Err(ModelError::EmptyDataset)
        ));
        let mut data = toy_dataset();
        data.push(TrainSample::new(blob(4, 4, 1.0, 1.0, 1.0), blob(4, 4, 1.0, 1.0, 1.0)).unwrap());
        assert!(matches!(
            train(&data, &quick_config()),
            Err(ModelError::ShapeMismatch(_))
        ));
        let odd = vec![TrainSample::new(blob(6, 6, 1.0, 1.0, 2.0), blob(6, 6, 1.0, 1.0, 1.0)).unwrap()];
        assert!(matches!(
            train(&odd, &quick_config()),
            Err(ModelError::ShapeError { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            label_smoothing: 0.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        TrainConfig::default().validate().unwrap();
    }
}
