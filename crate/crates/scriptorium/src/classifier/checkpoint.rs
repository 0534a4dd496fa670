//! Versioned binary checkpoint serialization.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "SCRB" (4 bytes)
//! format version            u16
//! input_height              u32
//! input_width               u32
//! input_channels            u8
//! num_classes               u32
//! init seed                 u64
//! conv layer count          u32
//!   per conv layer: out_channels u32, kernel_size u32, stride u32, pool u8
//! fc layer count            u32
//!   per fc layer: width u32
//! mu                        f64
//! sigma                     f64
//! weights                   f64 × N, declaration order
//! ```
//!
//! Declaration order is conv 0 weights, conv 0 biases, conv 1 weights, …,
//! then fc 0 weights, fc 0 biases, … — the same order [`ModelParams::tensors`]
//! yields. Nothing may follow the weight block.

use std::path::Path;

use super::network::ModelParams;
use super::{ConvLayerSpec, ModelConfig};
use crate::error::{CheckpointError, Error};
use crate::patching::NormConstants;
use crate::Result;

pub const MAGIC: [u8; 4] = *b"SCRB";
pub const FORMAT_VERSION: u16 = 1;

/// Serialize a model to bytes. Fails on non-finite parameters rather than
/// writing a checkpoint that cannot be loaded back.
pub fn save_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    if !params.all_finite() {
        return Err(CheckpointError::NonFiniteValue("parameters").into());
    }
    let norm = params.norm();
    if !(norm.std > 0.0) || !norm.mean.is_finite() || !norm.std.is_finite() {
        return Err(CheckpointError::NonFiniteValue("normalization constants").into());
    }
    let config = params.config();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.input_height as u32).to_le_bytes());
    out.extend_from_slice(&(config.input_width as u32).to_le_bytes());
    out.push(config.input_channels);
    out.extend_from_slice(&(config.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&config.seed.to_le_bytes());
    out.extend_from_slice(&(config.conv_layers.len() as u32).to_le_bytes());
    for layer in &config.conv_layers {
        out.extend_from_slice(&(layer.out_channels as u32).to_le_bytes());
        out.extend_from_slice(&(layer.kernel_size as u32).to_le_bytes());
        out.extend_from_slice(&(layer.stride as u32).to_le_bytes());
        out.push(u8::from(layer.pool));
    }
    out.extend_from_slice(&(config.fc_layers.len() as u32).to_le_bytes());
    for &width in &config.fc_layers {
        out.extend_from_slice(&(width as u32).to_le_bytes());
    }
    out.extend_from_slice(&norm.mean.to_le_bytes());
    out.extend_from_slice(&norm.std.to_le_bytes());
    for tensor in params.tensors() {
        for value in tensor {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let remaining = self.bytes.len() - self.pos;
        if n > remaining {
            return Err(CheckpointError::Truncated {
                reading: what,
                needed: n - remaining,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u8(&mut self, what: &'static str) -> std::result::Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn read_u16(&mut self, what: &'static str) -> std::result::Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn read_u32(&mut self, what: &'static str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn read_u64(&mut self, what: &'static str) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn read_f64(&mut self, what: &'static str) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Deserialize a checkpoint, validating magic, version, configuration
/// consistency, weight-block length, and finiteness.
pub fn load_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic).into());
    }
    let version = r.read_u16("format version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }

    let input_height = r.read_u32("input_height")? as usize;
    let input_width = r.read_u32("input_width")? as usize;
    let input_channels = r.read_u8("input_channels")?;
    let num_classes = r.read_u32("num_classes")? as usize;
    let seed = r.read_u64("seed")?;
    let conv_count = r.read_u32("conv layer count")? as usize;
    // cap before allocating: a corrupt count must not trigger a huge reserve
    if conv_count > 1024 {
        return Err(CheckpointError::ShapeInconsistency(format!(
            "implausible conv layer count {conv_count}"
        ))
        .into());
    }
    let mut conv_layers = Vec::with_capacity(conv_count);
    for _ in 0..conv_count {
        conv_layers.push(ConvLayerSpec {
            out_channels: r.read_u32("conv out_channels")? as usize,
            kernel_size: r.read_u32("conv kernel_size")? as usize,
            stride: r.read_u32("conv stride")? as usize,
            pool: r.read_u8("conv pool flag")? != 0,
        });
    }
    let fc_count = r.read_u32("fc layer count")? as usize;
    if fc_count > 1024 {
        return Err(CheckpointError::ShapeInconsistency(format!(
            "implausible fc layer count {fc_count}"
        ))
        .into());
    }
    let mut fc_layers = Vec::with_capacity(fc_count);
    for _ in 0..fc_count {
        fc_layers.push(r.read_u32("fc width")? as usize);
    }
    let config = ModelConfig {
        input_height,
        input_width,
        input_channels,
        num_classes,
        conv_layers,
        fc_layers,
        seed,
    };
    let plan = match config.plan() {
        Ok(plan) => plan,
        Err(Error::InvalidModelConfig(msg)) => {
            return Err(CheckpointError::ShapeInconsistency(msg).into())
        }
        Err(other) => return Err(other),
    };

    let mean = r.read_f64("mu")?;
    let std = r.read_f64("sigma")?;
    if !mean.is_finite() || !std.is_finite() {
        return Err(CheckpointError::NonFiniteValue("normalization constants").into());
    }
    if !(std > 0.0) {
        return Err(CheckpointError::ShapeInconsistency(format!(
            "normalization std must be positive, got {std}"
        ))
        .into());
    }

    let mut tensors = Vec::new();
    let read_tensor =
        |r: &mut Reader, len: usize, what: &'static str| -> std::result::Result<Vec<f64>, CheckpointError> {
            let mut t = Vec::with_capacity(len);
            for _ in 0..len {
                let v = r.read_f64(what)?;
                if !v.is_finite() {
                    return Err(CheckpointError::NonFiniteValue(what));
                }
                t.push(v);
            }
            Ok(t)
        };
    for d in &plan.conv {
        tensors.push(read_tensor(&mut r, d.out_c * d.in_c * d.kernel * d.kernel, "conv weights")?);
        tensors.push(read_tensor(&mut r, d.out_c, "conv biases")?);
    }
    for &(fan_in, out) in &plan.fc {
        tensors.push(read_tensor(&mut r, out * fan_in, "fc weights")?);
        tensors.push(read_tensor(&mut r, out, "fc biases")?);
    }
    if r.remaining() > 0 {
        return Err(CheckpointError::TrailingBytes(r.remaining()).into());
    }

    ModelParams::from_tensors(config, NormConstants { mean, std }, tensors)
}

/// Save to a file.
pub fn write_checkpoint_file(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = save_checkpoint(params)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load from a file.
pub fn read_checkpoint_file(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint(&bytes)
}
