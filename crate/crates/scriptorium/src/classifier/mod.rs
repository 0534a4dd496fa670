//! A small configurable convolutional network with hand-rolled forward,
//! backward, and Adam optimization, all in 64-bit floats.
//!
//! The architecture is a chain of valid (no padding) convolutions with ReLU
//! and optional 2×2 max-pooling, followed by fully connected layers and a
//! softmax over the K classes. Everything is deterministic under the seeds
//! carried in [`ModelConfig`] (initialization) and [`TrainConfig`]
//! (shuffling); batch gradients are reduced in fixed sample order so results
//! do not depend on thread count.

mod adam;
mod checkpoint;
mod network;
mod train;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, read_checkpoint_file, save_checkpoint, write_checkpoint_file, FORMAT_VERSION,
    MAGIC,
};
pub use network::{forward, loss_and_gradient, Gradient, ModelParams};
pub use train::{train, write_history_csv, EpochStats, Sample, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

// Validation caps. They bound every size computation in `plan` (and thus in
// checkpoint decoding, where these numbers arrive from untrusted bytes) far
// below integer-overflow territory.
const MAX_INPUT_DIM: usize = 65_535;
const MAX_CONV_LAYERS: usize = 64;
const MAX_OUT_CHANNELS: usize = 4_096;
const MAX_KERNEL: usize = 255;
const MAX_FC_LAYERS: usize = 64;
const MAX_FC_WIDTH: usize = 1_048_576;

/// One convolution layer: valid correlation, ReLU, then an optional 2×2
/// max-pool with stride 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub pool: bool,
}

/// Network architecture and input geometry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    /// 1 for grayscale input, 3 for RGB.
    pub input_channels: u8,
    pub num_classes: usize,
    pub conv_layers: Vec<ConvLayerSpec>,
    /// Hidden fully-connected widths; the final layer to `num_classes` is
    /// always appended implicitly.
    pub fc_layers: Vec<usize>,
    /// Seed for weight initialization.
    pub seed: u64,
}

/// Resolved per-layer dimensions of one convolution stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: bool,
    /// After convolution, before pooling.
    pub conv_h: usize,
    pub conv_w: usize,
    /// After the optional pool.
    pub out_h: usize,
    pub out_w: usize,
}

/// The fully resolved dimension chain of a [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct ModelPlan {
    pub conv: Vec<ConvDims>,
    /// Flattened feature length entering the fully connected chain.
    pub flat_len: usize,
    /// (input, output) width of each fully connected layer, final included.
    pub fc: Vec<(usize, usize)>,
}

impl ModelConfig {
    /// Validate the configuration and resolve every layer's dimensions.
    pub(crate) fn plan(&self) -> Result<ModelPlan> {
        let fail = |msg: String| Err(Error::InvalidModelConfig(msg));
        if self.input_height == 0
            || self.input_width == 0
            || self.input_height > MAX_INPUT_DIM
            || self.input_width > MAX_INPUT_DIM
        {
            return fail(format!(
                "input {}x{} outside 1..={MAX_INPUT_DIM}",
                self.input_width, self.input_height
            ));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return fail(format!(
                "input_channels must be 1 or 3, got {}",
                self.input_channels
            ));
        }
        if self.num_classes < 2 || self.num_classes > MAX_FC_WIDTH {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.conv_layers.len() > MAX_CONV_LAYERS {
            return fail(format!("{} conv layers exceeds {MAX_CONV_LAYERS}", self.conv_layers.len()));
        }
        if self.fc_layers.len() > MAX_FC_LAYERS {
            return fail(format!("{} fc layers exceeds {MAX_FC_LAYERS}", self.fc_layers.len()));
        }

        let (mut c, mut h, mut w) = (self.input_channels as usize, self.input_height, self.input_width);
        let mut conv = Vec::with_capacity(self.conv_layers.len());
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.out_channels == 0 || layer.out_channels > MAX_OUT_CHANNELS {
                return fail(format!("conv layer {i}: out_channels {} outside 1..={MAX_OUT_CHANNELS}", layer.out_channels));
            }
            if layer.kernel_size == 0 || layer.kernel_size > MAX_KERNEL {
                return fail(format!("conv layer {i}: kernel {} outside 1..={MAX_KERNEL}", layer.kernel_size));
            }
            if layer.stride == 0 {
                return fail(format!("conv layer {i}: stride must be positive"));
            }
            if h < layer.kernel_size || w < layer.kernel_size {
                return fail(format!(
                    "conv layer {i}: kernel {} does not fit input {w}x{h}",
                    layer.kernel_size
                ));
            }
            let conv_h = (h - layer.kernel_size) / layer.stride + 1;
            let conv_w = (w - layer.kernel_size) / layer.stride + 1;
            let (out_h, out_w) = if layer.pool {
                if conv_h < 2 || conv_w < 2 {
                    return fail(format!(
                        "conv layer {i}: 2x2 pool needs at least 2x2 input, got {conv_w}x{conv_h}"
                    ));
                }
                (conv_h / 2, conv_w / 2)
            } else {
                (conv_h, conv_w)
            };
            conv.push(ConvDims {
                in_c: c,
                in_h: h,
                in_w: w,
                out_c: layer.out_channels,
                kernel: layer.kernel_size,
                stride: layer.stride,
                pool: layer.pool,
                conv_h,
                conv_w,
                out_h,
                out_w,
            });
            c = layer.out_channels;
            h = out_h;
            w = out_w;
        }

        let flat_len = c * h * w;
        let mut fc = Vec::with_capacity(self.fc_layers.len() + 1);
        let mut prev = flat_len;
        for (i, &width) in self.fc_layers.iter().enumerate() {
            if width == 0 || width > MAX_FC_WIDTH {
                return fail(format!("fc layer {i}: width {width} outside 1..={MAX_FC_WIDTH}"));
            }
            fc.push((prev, width));
            prev = width;
        }
        fc.push((prev, self.num_classes));
        Ok(ModelPlan { conv, flat_len, fc })
    }

    /// Check validity without keeping the plan.
    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Total learnable parameter count.
    pub fn num_params(&self) -> Result<usize> {
        let plan = self.plan()?;
        let conv: usize = plan
            .conv
            .iter()
            .map(|d| d.out_c * d.in_c * d.kernel * d.kernel + d.out_c)
            .sum();
        let fc: usize = plan.fc.iter().map(|&(i, o)| i * o + o).sum();
        Ok(conv + fc)
    }
}

/// Optimization hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Seed for epoch shuffling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 10,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidTrainConfig(msg.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be positive and finite");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> ModelConfig {
        ModelConfig {
            input_height: 28,
            input_width: 28,
            input_channels: 1,
            num_classes: 7,
            conv_layers: vec![
                ConvLayerSpec { out_channels: 4, kernel_size: 3, stride: 1, pool: true },
                ConvLayerSpec { out_channels: 8, kernel_size: 3, stride: 1, pool: true },
            ],
            fc_layers: vec![16],
            seed: 1,
        }
    }

    #[test]
    fn plan_resolves_dimension_chain() {
        let plan = base_config().plan().unwrap();
        // 28 -> conv3 -> 26 -> pool -> 13 -> conv3 -> 11 -> pool -> 5
        assert_eq!(plan.conv[0].conv_h, 26);
        assert_eq!(plan.conv[0].out_h, 13);
        assert_eq!(plan.conv[1].conv_h, 11);
        assert_eq!(plan.conv[1].out_h, 5);
        assert_eq!(plan.flat_len, 8 * 5 * 5);
        assert_eq!(plan.fc, vec![(200, 16), (16, 7)]);
    }

    #[test]
    fn plan_handles_stride_and_no_conv() {
        let mut cfg = base_config();
        cfg.conv_layers = vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 2, pool: false }];
        // floor((28 - 3) / 2) + 1 = 13
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.conv[0].out_h, 13);

        cfg.conv_layers.clear();
        cfg.fc_layers.clear();
        let plan = cfg.plan().unwrap();
        assert_eq!(plan.flat_len, 28 * 28);
        assert_eq!(plan.fc, vec![(784, 7)]);
    }

    #[test]
    fn plan_rejects_inconsistent_chains() {
        let mut cfg = base_config();
        cfg.conv_layers[0].kernel_size = 30; // larger than input
        assert!(matches!(cfg.plan(), Err(Error::InvalidModelConfig(_))));

        let mut cfg = base_config();
        cfg.num_classes = 1;
        assert!(cfg.plan().is_err());

        let mut cfg = base_config();
        cfg.input_channels = 2;
        assert!(cfg.plan().is_err());

        // pooling a 1-pixel map
        let mut cfg = base_config();
        cfg.input_height = 3;
        cfg.input_width = 3;
        cfg.conv_layers = vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 1, pool: true }];
        assert!(cfg.plan().is_err());

        let mut cfg = base_config();
        cfg.fc_layers = vec![0];
        assert!(cfg.plan().is_err());
    }

    #[test]
    fn num_params_counts_weights_and_biases() {
        let mut cfg = base_config();
        cfg.conv_layers.truncate(1);
        cfg.fc_layers.clear();
        // conv: 4*1*3*3 + 4 = 40; fc: (4*13*13)*7 + 7 = 4739
        assert_eq!(cfg.num_params().unwrap(), 40 + 4 * 13 * 13 * 7 + 7);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut t = TrainConfig::default();
        t.batch_size = 0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::default();
        t.learning_rate = 0.0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::default();
        t.beta1 = 1.0;
        assert!(t.validate().is_err());
        let mut t = TrainConfig::default();
        t.epochs = 0;
        assert!(t.validate().is_err());
    }
}
