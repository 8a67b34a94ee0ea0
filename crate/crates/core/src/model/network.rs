use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{FcnArchitecture, LayerSpec};
use super::layers::{self, Tensor};
use super::ModelError;
use crate::cam::{normalize_cam, Cam, RawMap};

/// Weight and bias buffers of one convolution. Also used for gradients and
/// optimizer velocity, which share the shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTensors {
    /// `[out][in][k][k]` row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTensors {
    fn zeros_like(other: &ConvTensors) -> Self {
        Self {
            weight: vec![0.0; other.weight.len()],
            bias: vec![0.0; other.bias.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitInfo {
    pub seed: u64,
    pub scheme: String,
}

pub const INIT_SCHEME: &str = "uniform_fan_in";

#[derive(Debug, Clone, PartialEq)]
pub struct FcnParams {
    pub arch: FcnArchitecture,
    /// One entry per convolution, in layer order.
    pub convs: Vec<ConvTensors>,
    pub init: InitInfo,
}

impl FcnParams {
    /// Checks that every tensor matches the architecture and is finite.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.arch.validate()?;
        let shapes: Vec<_> = self.arch.conv_layers().collect();
        if shapes.len() != self.convs.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "architecture has {} convolutions, parameters hold {}",
                shapes.len(),
                self.convs.len()
            )));
        }
        for (i, ((cin, cout, k), t)) in shapes.iter().zip(&self.convs).enumerate() {
            if t.weight.len() != cout * cin * k * k || t.bias.len() != *cout {
                return Err(ModelError::ShapeMismatch(format!(
                    "conv {i}: weight {} / bias {} entries do not fit {cout}x{cin}x{k}x{k}",
                    t.weight.len(),
                    t.bias.len()
                )));
            }
            if t.weight.iter().chain(&t.bias).any(|v| !v.is_finite()) {
                return Err(ModelError::NonFiniteParameter(i));
            }
        }
        Ok(())
    }

    pub fn num_parameters(&self) -> usize {
        self.convs.iter().map(|t| t.weight.len() + t.bias.len()).sum()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Vec<ConvTensors> {
        self.convs.iter().map(ConvTensors::zeros_like).collect()
    }
}

/// Parameter gradients, aligned with [`FcnParams::convs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub convs: Vec<ConvTensors>,
}

impl ParamGrads {
    pub fn zeros_for(params: &FcnParams) -> Self {
        Self {
            convs: params.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.convs
            .iter()
            .flat_map(|t| t.weight.iter().chain(&t.bias).copied())
    }
}

/// Weights uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
/// Draws run layer by layer from one ChaCha8 stream.
pub fn init_params(arch: &FcnArchitecture, seed: u64) -> Result<FcnParams, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let convs = arch
        .conv_layers()
        .map(|(cin, cout, k)| {
            let fan_in = cin * k * k;
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weight = (0..cout * fan_in)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            ConvTensors {
                weight,
                bias: vec![0.0; cout],
            }
        })
        .collect();
    Ok(FcnParams {
        arch: arch.clone(),
        convs,
        init: InitInfo {
            seed,
            scheme: INIT_SCHEME.to_string(),
        },
    })
}

#[derive(Debug, Clone)]
enum Step {
    Conv {
        input_shape: (usize, usize, usize),
        cols: Vec<f64>,
    },
    Relu {
        output: Tensor,
    },
    MaxPool {
        input_shape: (usize, usize, usize),
        argmax: Vec<usize>,
    },
    Upsample {
        input_shape: (usize, usize, usize),
        factor: usize,
    },
    Sigmoid {
        output: Tensor,
    },
}

/// Intermediates recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    arch: FcnArchitecture,
    steps: Vec<Step>,
    output_shape: (usize, usize),
}

impl ForwardCache {
    pub fn output_shape(&self) -> (usize, usize) {
        self.output_shape
    }
}

fn run_forward(params: &FcnParams, input: &Cam, keep_cache: bool) -> Result<(Tensor, Vec<Step>), ModelError> {
    let (h, w) = input.shape();
    let div = params.arch.downsampling();
    if h % div != 0 || w % div != 0 {
        return Err(ModelError::ShapeError {
            height: h,
            width: w,
            divisor: div,
        });
    }
    if params.convs.len() != params.arch.conv_layers().count() {
        return Err(ModelError::ShapeMismatch(
            "parameter list does not match architecture".into(),
        ));
    }
    let mut x = Tensor::from_vec(1, h, w, input.values().to_vec());
    let mut steps = Vec::with_capacity(if keep_cache { params.arch.layers.len() } else { 0 });
    let mut conv_idx = 0;
    for layer in &params.arch.layers {
        match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => {
                let t = &params.convs[conv_idx];
                conv_idx += 1;
                let input_shape = x.shape();
                let (y, cols) = layers::conv2d_forward(&x, &t.weight, &t.bias, out_channels, kernel);
                if keep_cache {
                    steps.push(Step::Conv { input_shape, cols });
                }
                x = y;
            }
            LayerSpec::Relu => {
                x = layers::relu_forward(&x);
                if keep_cache {
                    steps.push(Step::Relu { output: x.clone() });
                }
            }
            LayerSpec::MaxPool => {
                let input_shape = x.shape();
                let (y, argmax) = layers::maxpool2_forward(&x);
                if keep_cache {
                    steps.push(Step::MaxPool { input_shape, argmax });
                }
                x = y;
            }
            LayerSpec::Upsample { factor } => {
                let input_shape = x.shape();
                x = layers::upsample_bilinear_forward(&x, factor);
                if keep_cache {
                    steps.push(Step::Upsample { input_shape, factor });
                }
            }
            LayerSpec::Sigmoid => {
                x = layers::sigmoid_forward(&x);
                if keep_cache {
                    steps.push(Step::Sigmoid { output: x.clone() });
                }
            }
        }
    }
    Ok((x, steps))
}

fn tensor_to_cam(t: Tensor) -> Cam {
    Cam::new(t.height, t.width, t.data).expect("sigmoid output lies in [0, 1]")
}

/// Runs the refiner on one map. The prediction has the input's shape and
/// sigmoid-range values.
pub fn forward(params: &FcnParams, input: &Cam) -> Result<(Cam, ForwardCache), ModelError> {
    let (out, steps) = run_forward(params, input, true)?;
    let cache = ForwardCache {
        arch: params.arch.clone(),
        steps,
        output_shape: (out.height, out.width),
    };
    Ok((tensor_to_cam(out), cache))
}

/// Forward pass without recording intermediates.
pub fn predict(params: &FcnParams, input: &Cam) -> Result<Cam, ModelError> {
    run_forward(params, input, false).map(|(out, _)| tensor_to_cam(out))
}

/// Back-propagates `grad_pred` (d loss / d prediction, row-major) to every
/// parameter.
pub fn backward(params: &FcnParams, cache: &ForwardCache, grad_pred: &[f64]) -> Result<ParamGrads, ModelError> {
    let (h, w) = cache.output_shape;
    if cache.arch != params.arch || cache.steps.len() != params.arch.layers.len() {
        return Err(ModelError::StaleCache(
            "cache was recorded for a different architecture".into(),
        ));
    }
    if grad_pred.len() != h * w {
        return Err(ModelError::StaleCache(format!(
            "gradient has {} entries, cached output is {h}x{w}",
            grad_pred.len()
        )));
    }
    let mut grads = ParamGrads::zeros_for(params);
    let mut g = Tensor::from_vec(1, h, w, grad_pred.to_vec());
    let mut conv_idx = params.convs.len();
    for (i, step) in cache.steps.iter().enumerate().rev() {
        g = match step {
            Step::Conv { input_shape, cols } => {
                conv_idx -= 1;
                let kernel = match params.arch.layers[i] {
                    LayerSpec::Conv { kernel, .. } => kernel,
                    _ => unreachable!("step kinds follow the architecture"),
                };
                let need_input = conv_idx > 0;
                let r = layers::conv2d_backward(
                    cols,
                    *input_shape,
                    &params.convs[conv_idx].weight,
                    &g,
                    kernel,
                    need_input,
                );
                grads.convs[conv_idx] = ConvTensors {
                    weight: r.weight,
                    bias: r.bias,
                };
                match r.input {
                    Some(t) => t,
                    None => break,
                }
            }
            Step::Relu { output } => layers::relu_backward(output, &g),
            Step::MaxPool { input_shape, argmax } => layers::maxpool2_backward(argmax, *input_shape, &g),
            Step::Upsample { input_shape, factor } => {
                layers::upsample_bilinear_backward(*input_shape, *factor, &g)
            }
            Step::Sigmoid { output } => layers::sigmoid_backward(output, &g),
        };
    }
    Ok(grads)
}

/// Test-time refinement: forward pass followed by max normalization.
pub fn infer(params: &FcnParams, or_cam: &Cam) -> Result<Cam, ModelError> {
    let pred = predict(params, or_cam)?;
    let (h, w) = pred.shape();
    let raw = RawMap::new(h, w, pred.into_values()).expect("prediction shape is positive");
    Ok(normalize_cam(&raw).expect("sigmoid output is finite and non-negative"))
}
