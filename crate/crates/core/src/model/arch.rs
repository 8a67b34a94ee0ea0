use serde::{Deserialize, Serialize};

use super::ModelError;

/// One stage of the refiner. Convolutions use stride 1 and zero "same"
/// padding, so only pooling and upsampling change the spatial size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    /// 2x2 window, stride 2.
    MaxPool,
    /// Bilinear, half-pixel centres (`align_corners = false`).
    Upsample { factor: usize },
    Sigmoid,
}

impl LayerSpec {
    pub fn conv3(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 3,
        }
    }

    pub fn conv1(in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FcnArchitecture {
    pub layers: Vec<LayerSpec>,
}

impl Default for FcnArchitecture {
    fn default() -> Self {
        Self::desk()
    }
}

impl FcnArchitecture {
    /// Five 3x3 convolutions over two pooling stages, a x4 bilinear
    /// upsample and a 1x1 sigmoid head.
    pub fn desk() -> Self {
        use LayerSpec::*;
        Self {
            layers: vec![
                LayerSpec::conv3(1, 16),
                Relu,
                LayerSpec::conv3(16, 16),
                Relu,
                MaxPool,
                LayerSpec::conv3(16, 32),
                Relu,
                LayerSpec::conv3(32, 32),
                Relu,
                MaxPool,
                LayerSpec::conv3(32, 32),
                Relu,
                Upsample { factor: 4 },
                LayerSpec::conv1(32, 1),
                Sigmoid,
            ],
        }
    }

    /// VGG16 convolutional trunk without batch norm, fed a single channel.
    /// The fifth pool is dropped so the trunk downsamples by 16, then a x16
    /// bilinear upsample and a 1x1 sigmoid head restore the input size.
    pub fn vgg16() -> Self {
        use LayerSpec::*;
        let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let mut layers = Vec::new();
        let mut channels = 1;
        for (i, &(width, depth)) in blocks.iter().enumerate() {
            for _ in 0..depth {
                layers.push(LayerSpec::conv3(channels, width));
                layers.push(Relu);
                channels = width;
            }
            if i + 1 < blocks.len() {
                layers.push(MaxPool);
            }
        }
        layers.push(Upsample { factor: 16 });
        layers.push(LayerSpec::conv1(channels, 1));
        layers.push(Sigmoid);
        Self { layers }
    }

    /// Product of all pooling strides; inputs must be divisible by it.
    pub fn downsampling(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::MaxPool))
            .fold(1, |acc, _| acc * 2)
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
            } => Some((in_channels, out_channels, kernel)),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidArchitecture(msg));
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        let mut channels = 1usize;
        let mut pooled = 1usize;
        let mut upsampled = 1usize;
        let mut seen_conv = false;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    if in_channels != channels {
                        return bad(format!(
                            "layer {i}: conv expects {in_channels} channels, receives {channels}"
                        ));
                    }
                    if out_channels == 0 {
                        return bad(format!("layer {i}: conv with zero output channels"));
                    }
                    if kernel != 1 && kernel != 3 {
                        return bad(format!("layer {i}: kernel {kernel} (only 1 and 3 supported)"));
                    }
                    channels = out_channels;
                    seen_conv = true;
                }
                LayerSpec::MaxPool => pooled *= 2,
                LayerSpec::Upsample { factor } => {
                    if factor == 0 {
                        return bad(format!("layer {i}: upsample factor 0"));
                    }
                    upsampled *= factor;
                }
                LayerSpec::Relu => {}
                LayerSpec::Sigmoid => {
                    if i + 1 != self.layers.len() {
                        return bad(format!("layer {i}: sigmoid must be the last layer"));
                    }
                }
            }
        }
        if !seen_conv {
            return bad("no convolution layers".into());
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Sigmoid)) {
            return bad("last layer must be a sigmoid".into());
        }
        if channels != 1 {
            return bad(format!("network emits {channels} channels, expected 1"));
        }
        if pooled != upsampled {
            return bad(format!(
                "pooling downsamples by {pooled} but upsampling restores {upsampled}"
            ));
        }
        Ok(())
    }
}
