//! Parameter storage, forward pass, and reverse-mode gradients.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ConvDims, ModelConfig, ModelPlan};
use crate::error::Error;
use crate::patching::{NormConstants, Patch};
use crate::scoring::ScoreVector;
use crate::Result;

use super::train::Sample;

/// All learnable tensors of a model plus the input-normalization constants,
/// tied to the [`ModelConfig`] they were built for.
///
/// Tensor layouts: convolution weights are `[out_c][in_c][ky][kx]` flattened,
/// biases `[out_c]`; fully connected weights are `[out][in]` flattened,
/// biases `[out]`. "Declaration order" — the order used by the checkpoint
/// format and the optimizer — is conv 0 weights, conv 0 biases, conv 1
/// weights, … then fc 0 weights, fc 0 biases, …
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    pub(super) plan: ModelPlan,
    pub(super) conv_weights: Vec<Vec<f64>>,
    pub(super) conv_biases: Vec<Vec<f64>>,
    pub(super) fc_weights: Vec<Vec<f64>>,
    pub(super) fc_biases: Vec<Vec<f64>>,
    norm: NormConstants,
}

impl ModelParams {
    /// He-uniform fan-in initialization of all weights (biases start at
    /// zero), drawn from a generator seeded with `config.seed`.
    pub fn init(config: &ModelConfig, norm: NormConstants) -> Result<Self> {
        let plan = config.plan()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut he_uniform = |fan_in: usize, len: usize| -> Vec<f64> {
            let limit = (6.0 / fan_in as f64).sqrt();
            (0..len).map(|_| rng.random_range(-limit..limit)).collect()
        };

        let mut conv_weights = Vec::with_capacity(plan.conv.len());
        let mut conv_biases = Vec::with_capacity(plan.conv.len());
        for d in &plan.conv {
            let fan_in = d.in_c * d.kernel * d.kernel;
            conv_weights.push(he_uniform(fan_in, d.out_c * fan_in));
            conv_biases.push(vec![0.0; d.out_c]);
        }
        let mut fc_weights = Vec::with_capacity(plan.fc.len());
        let mut fc_biases = Vec::with_capacity(plan.fc.len());
        for &(fan_in, out) in &plan.fc {
            fc_weights.push(he_uniform(fan_in, out * fan_in));
            fc_biases.push(vec![0.0; out]);
        }
        Ok(Self {
            config: config.clone(),
            plan,
            conv_weights,
            conv_biases,
            fc_weights,
            fc_biases,
            norm,
        })
    }

    /// Rebuild from raw tensors (checkpoint loading). Tensor shapes must
    /// match the config's plan exactly.
    pub(super) fn from_tensors(
        config: ModelConfig,
        norm: NormConstants,
        mut tensors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let plan = config.plan()?;
        let expected = 2 * (plan.conv.len() + plan.fc.len());
        if tensors.len() != expected {
            return Err(Error::InvalidModelConfig(format!(
                "expected {expected} tensors, got {}",
                tensors.len()
            )));
        }
        let mut drain = tensors.drain(..);
        let mut conv_weights = Vec::new();
        let mut conv_biases = Vec::new();
        for d in &plan.conv {
            let w = drain.next().unwrap();
            let b = drain.next().unwrap();
            if w.len() != d.out_c * d.in_c * d.kernel * d.kernel || b.len() != d.out_c {
                return Err(Error::InvalidModelConfig("conv tensor shape mismatch".into()));
            }
            conv_weights.push(w);
            conv_biases.push(b);
        }
        let mut fc_weights = Vec::new();
        let mut fc_biases = Vec::new();
        for &(fan_in, out) in &plan.fc {
            let w = drain.next().unwrap();
            let b = drain.next().unwrap();
            if w.len() != out * fan_in || b.len() != out {
                return Err(Error::InvalidModelConfig("fc tensor shape mismatch".into()));
            }
            fc_weights.push(w);
            fc_biases.push(b);
        }
        drop(drain);
        Ok(Self {
            config,
            plan,
            conv_weights,
            conv_biases,
            fc_weights,
            fc_biases,
            norm,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn norm(&self) -> NormConstants {
        self.norm
    }

    /// All tensors in declaration order.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            out.push(w);
            out.push(b);
        }
        for (w, b) in self.fc_weights.iter().zip(&self.fc_biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.conv_weights.iter_mut().zip(&mut self.conv_biases) {
            out.push(w);
            out.push(b);
        }
        for (w, b) in self.fc_weights.iter_mut().zip(&mut self.fc_biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_patch(&self, patch: &Patch) -> Result<()> {
        let ok = patch.height() == self.config.input_height
            && patch.width() == self.config.input_width
            && patch.channels() == self.config.input_channels;
        if ok {
            Ok(())
        } else {
            Err(Error::PatchShapeMismatch {
                expected: format!(
                    "{}x{}x{}",
                    self.config.input_width, self.config.input_height, self.config.input_channels
                ),
                actual: format!(
                    "{}x{}x{}",
                    patch.width(),
                    patch.height(),
                    patch.channels()
                ),
            })
        }
    }
}

/// Gradients with the same tensor shapes as [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub(super) conv_weights: Vec<Vec<f64>>,
    pub(super) conv_biases: Vec<Vec<f64>>,
    pub(super) fc_weights: Vec<Vec<f64>>,
    pub(super) fc_biases: Vec<Vec<f64>>,
}

impl Gradient {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let z = |src: &[Vec<f64>]| src.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            conv_weights: z(&params.conv_weights),
            conv_biases: z(&params.conv_biases),
            fc_weights: z(&params.fc_weights),
            fc_biases: z(&params.fc_biases),
        }
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for (w, b) in self.conv_weights.iter().zip(&self.conv_biases) {
            out.push(w);
            out.push(b);
        }
        for (w, b) in self.fc_weights.iter().zip(&self.fc_biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    fn add_assign(&mut self, other: &Gradient) {
        let add = |dst: &mut Vec<Vec<f64>>, src: &Vec<Vec<f64>>| {
            for (d, s) in dst.iter_mut().zip(src) {
                for (x, y) in d.iter_mut().zip(s) {
                    *x += y;
                }
            }
        };
        add(&mut self.conv_weights, &other.conv_weights);
        add(&mut self.conv_biases, &other.conv_biases);
        add(&mut self.fc_weights, &other.fc_weights);
        add(&mut self.fc_biases, &other.fc_biases);
    }

    fn scale(&mut self, s: f64) {
        for tensor in [
            &mut self.conv_weights,
            &mut self.conv_biases,
            &mut self.fc_weights,
            &mut self.fc_biases,
        ] {
            for t in tensor.iter_mut() {
                for v in t.iter_mut() {
                    *v *= s;
                }
            }
        }
    }
}

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
    /// Input map of each conv layer (planar).
    conv_inputs: Vec<Vec<f64>>,
    /// Post-ReLU, pre-pool maps.
    relu_out: Vec<Vec<f64>>,
    /// Flat argmax index (into the relu map) per pooled cell; empty when the
    /// layer has no pool.
    pool_argmax: Vec<Vec<usize>>,
    /// Input vector of each fully connected layer.
    fc_inputs: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

fn conv_forward(input: &[f64], d: &ConvDims, w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.out_c * d.conv_h * d.conv_w];
    for oc in 0..d.out_c {
        for oy in 0..d.conv_h {
            for ox in 0..d.conv_w {
                let mut acc = b[oc];
                for ic in 0..d.in_c {
                    for ky in 0..d.kernel {
                        let iy = oy * d.stride + ky;
                        let wrow = ((oc * d.in_c + ic) * d.kernel + ky) * d.kernel;
                        let irow = (ic * d.in_h + iy) * d.in_w + ox * d.stride;
                        for kx in 0..d.kernel {
                            acc += w[wrow + kx] * input[irow + kx];
                        }
                    }
                }
                out[(oc * d.conv_h + oy) * d.conv_w + ox] = acc;
            }
        }
    }
    out
}

/// 2×2 max-pool with stride 2. Ties keep the first maximum in row-major
/// window order, so pooling is deterministic on plateaus.
fn pool_forward(relu: &[f64], d: &ConvDims) -> (Vec<f64>, Vec<usize>) {
    let mut out = vec![0.0; d.out_c * d.out_h * d.out_w];
    let mut argmax = vec![0usize; out.len()];
    for c in 0..d.out_c {
        for oy in 0..d.out_h {
            for ox in 0..d.out_w {
                let mut best_idx = (c * d.conv_h + oy * 2) * d.conv_w + ox * 2;
                let mut best = relu[best_idx];
                for wy in 0..2 {
                    for wx in 0..2 {
                        let idx = (c * d.conv_h + oy * 2 + wy) * d.conv_w + ox * 2 + wx;
                        if relu[idx] > best {
                            best = relu[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (c * d.out_h + oy) * d.out_w + ox;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

fn fc_forward(input: &[f64], w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = input.len();
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(input) {
            acc += wi * xi;
        }
        out.push(acc);
    }
    out
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

fn forward_cached(params: &ModelParams, patch: &Patch) -> ForwardCache {
    let plan = &params.plan;
    let mut cache = ForwardCache {
        conv_inputs: Vec::with_capacity(plan.conv.len()),
        relu_out: Vec::with_capacity(plan.conv.len()),
        pool_argmax: Vec::with_capacity(plan.conv.len()),
        fc_inputs: Vec::with_capacity(plan.fc.len()),
        logits: Vec::new(),
    };
    let mut current = patch.data().to_vec();
    for (l, d) in plan.conv.iter().enumerate() {
        cache.conv_inputs.push(current.clone());
        let mut z = conv_forward(&current, d, &params.conv_weights[l], &params.conv_biases[l]);
        for v in &mut z {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        if d.pool {
            let (pooled, argmax) = pool_forward(&z, d);
            cache.relu_out.push(z);
            cache.pool_argmax.push(argmax);
            current = pooled;
        } else {
            cache.relu_out.push(z.clone());
            cache.pool_argmax.push(Vec::new());
            current = z;
        }
    }
    let n_fc = plan.fc.len();
    for (l, &(_, out_dim)) in plan.fc.iter().enumerate() {
        cache.fc_inputs.push(current.clone());
        let mut z = fc_forward(&current, &params.fc_weights[l], &params.fc_biases[l], out_dim);
        if l + 1 < n_fc {
            for v in &mut z {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        current = z;
    }
    cache.logits = current;
    cache
}

/// Run the network on one patch and return the softmax distribution.
pub fn forward(params: &ModelParams, patch: &Patch) -> Result<ScoreVector> {
    params.check_patch(patch)?;
    let cache = forward_cached(params, patch);
    ScoreVector::new(softmax(&cache.logits))
}

/// Cross-entropy loss and full parameter gradient for one sample.
fn backward_sample(params: &ModelParams, patch: &Patch, label: usize) -> (f64, Gradient) {
    let plan = &params.plan;
    let cache = forward_cached(params, patch);
    let loss = log_sum_exp(&cache.logits) - cache.logits[label];

    let mut grad = Gradient::zeros_like(params);

    // fused softmax + cross-entropy gradient
    let mut dout = softmax(&cache.logits);
    dout[label] -= 1.0;

    // fully connected chain, last to first
    for l in (0..plan.fc.len()).rev() {
        let (in_dim, out_dim) = plan.fc[l];
        let input = &cache.fc_inputs[l];
        let w = &params.fc_weights[l];
        let gw = &mut grad.fc_weights[l];
        for o in 0..out_dim {
            let g = dout[o];
            grad.fc_biases[l][o] += g;
            let row = o * in_dim;
            for i in 0..in_dim {
                gw[row + i] += g * input[i];
            }
        }
        let mut dinput = vec![0.0; in_dim];
        for o in 0..out_dim {
            let g = dout[o];
            let row = o * in_dim;
            for (i, di) in dinput.iter_mut().enumerate() {
                *di += g * w[row + i];
            }
        }
        if l > 0 {
            // the input of this layer was ReLU output of the previous one
            for (di, &x) in dinput.iter_mut().zip(input) {
                if x <= 0.0 {
                    *di = 0.0;
                }
            }
        }
        dout = dinput;
    }

    // convolution chain, last to first
    let mut dcur = dout;
    for l in (0..plan.conv.len()).rev() {
        let d = &plan.conv[l];
        // undo pooling: route each pooled gradient to its argmax cell
        let mut drelu = if d.pool {
            let mut dr = vec![0.0; d.out_c * d.conv_h * d.conv_w];
            for (cell, &src) in cache.pool_argmax[l].iter().enumerate() {
                dr[src] += dcur[cell];
            }
            dr
        } else {
            dcur
        };
        // ReLU mask
        for (g, &a) in drelu.iter_mut().zip(&cache.relu_out[l]) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
        // conv weight/bias/input gradients
        let input = &cache.conv_inputs[l];
        let w = &params.conv_weights[l];
        let gw = &mut grad.conv_weights[l];
        let mut dinput = vec![0.0; d.in_c * d.in_h * d.in_w];
        for oc in 0..d.out_c {
            for oy in 0..d.conv_h {
                for ox in 0..d.conv_w {
                    let g = drelu[(oc * d.conv_h + oy) * d.conv_w + ox];
                    if g == 0.0 {
                        continue;
                    }
                    grad.conv_biases[l][oc] += g;
                    for ic in 0..d.in_c {
                        for ky in 0..d.kernel {
                            let iy = oy * d.stride + ky;
                            let wrow = ((oc * d.in_c + ic) * d.kernel + ky) * d.kernel;
                            let irow = (ic * d.in_h + iy) * d.in_w + ox * d.stride;
                            for kx in 0..d.kernel {
                                gw[wrow + kx] += g * input[irow + kx];
                                dinput[irow + kx] += g * w[wrow + kx];
                            }
                        }
                    }
                }
            }
        }
        dcur = dinput;
    }

    (loss, grad)
}

/// Mean cross-entropy loss and mean gradient over a batch.
///
/// Per-sample gradients may be computed in parallel; the reduction always
/// runs in sample-index order, so the result is bit-identical regardless of
/// thread count.
pub fn loss_and_gradient(params: &ModelParams, batch: &[Sample]) -> Result<(f64, Gradient)> {
    let refs: Vec<&Sample> = batch.iter().collect();
    loss_and_gradient_refs(params, &refs)
}

pub(super) fn loss_and_gradient_refs(
    params: &ModelParams,
    batch: &[&Sample],
) -> Result<(f64, Gradient)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("empty training batch".into()));
    }
    for sample in batch {
        params.check_patch(&sample.patch)?;
        if sample.label >= params.config.num_classes {
            return Err(Error::LabelOutOfRange {
                label: sample.label,
                num_classes: params.config.num_classes,
            });
        }
    }
    let per_sample: Vec<(f64, Gradient)> = batch
        .par_iter()
        .map(|sample| backward_sample(params, &sample.patch, sample.label))
        .collect();

    let mut total_loss = 0.0;
    let mut grad = Gradient::zeros_like(params);
    for (i, (loss, g)) in per_sample.iter().enumerate() {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { sample: i });
        }
        total_loss += loss;
        grad.add_assign(g);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.scale(scale);
    Ok((total_loss * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::ConvLayerSpec;

    fn patch_from(values: &[f64], w: usize, h: usize, c: u8) -> Patch {
        Patch::new(w, h, c, values.to_vec()).unwrap()
    }

    fn seeded_patch(rng: &mut ChaCha8Rng, w: usize, h: usize, c: u8) -> Patch {
        let data: Vec<f64> = (0..w * h * c as usize)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        patch_from(&data, w, h, c)
    }

    /// Randomize every tensor (including biases) so gradient checks exercise
    /// all parameters away from ReLU kinks.
    fn randomize(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
        for tensor in params.tensors_mut() {
            for v in tensor.iter_mut() {
                *v = rng.random_range(-0.9..0.9);
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / f64::max(1e-8, f64::max(a.abs(), b.abs()))
    }

    fn loss_at(params: &ModelParams, batch: &[Sample]) -> f64 {
        loss_and_gradient(params, batch).unwrap().0
    }

    /// Compare the analytic gradient against central finite differences over
    /// every coordinate; returns the largest relative error.
    fn finite_difference_max_err(config: &ModelConfig, batch: &[Sample], seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(config, NormConstants::identity()).unwrap();
        randomize(&mut params, &mut rng);

        let (_, grad) = loss_and_gradient(&params, batch).unwrap();
        let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| (*t).clone()).collect();

        let step = 1e-5;
        let mut max_err: f64 = 0.0;
        let n_tensors = params.tensors().len();
        for ti in 0..n_tensors {
            for vi in 0..params.tensors()[ti].len() {
                let original = params.tensors()[ti][vi];
                params.tensors_mut()[ti][vi] = original + step;
                let plus = loss_at(&params, batch);
                params.tensors_mut()[ti][vi] = original - step;
                let minus = loss_at(&params, batch);
                params.tensors_mut()[ti][vi] = original;
                let fd = (plus - minus) / (2.0 * step);
                max_err = max_err.max(rel_err(analytic[ti][vi], fd));
            }
        }
        max_err
    }

    fn batch_for(config: &ModelConfig, n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Sample {
                patch: seeded_patch(
                    &mut rng,
                    config.input_width,
                    config.input_height,
                    config.input_channels,
                ),
                label: i % config.num_classes,
            })
            .collect()
    }

    #[test]
    fn gradient_check_fc_only() {
        let config = ModelConfig {
            input_height: 3,
            input_width: 2,
            input_channels: 1,
            num_classes: 3,
            conv_layers: vec![],
            fc_layers: vec![5],
            seed: 11,
        };
        let batch = batch_for(&config, 3, 21);
        let err = finite_difference_max_err(&config, &batch, 31);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_conv_no_pool() {
        let config = ModelConfig {
            input_height: 4,
            input_width: 4,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![ConvLayerSpec { out_channels: 3, kernel_size: 2, stride: 1, pool: false }],
            fc_layers: vec![],
            seed: 12,
        };
        let batch = batch_for(&config, 2, 22);
        let err = finite_difference_max_err(&config, &batch, 32);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_conv_with_pool_and_stride() {
        let config = ModelConfig {
            input_height: 7,
            input_width: 7,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 2, pool: false }],
            fc_layers: vec![],
            seed: 13,
        };
        let batch = batch_for(&config, 2, 23);
        let err = finite_difference_max_err(&config, &batch, 33);
        assert!(err < 1e-4, "max relative error {err}");

        let config = ModelConfig {
            input_height: 6,
            input_width: 6,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 1, pool: true }],
            fc_layers: vec![],
            seed: 14,
        };
        let batch = batch_for(&config, 2, 24);
        let err = finite_difference_max_err(&config, &batch, 34);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_composed_network() {
        // two conv stages (one pooled) into a hidden fc and the classifier
        let config = ModelConfig {
            input_height: 8,
            input_width: 8,
            input_channels: 1,
            num_classes: 3,
            conv_layers: vec![
                ConvLayerSpec { out_channels: 4, kernel_size: 3, stride: 1, pool: true },
                ConvLayerSpec { out_channels: 8, kernel_size: 3, stride: 1, pool: false },
            ],
            fc_layers: vec![6],
            seed: 15,
        };
        let batch = batch_for(&config, 2, 25);
        let err = finite_difference_max_err(&config, &batch, 35);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn gradient_check_rgb_input() {
        let config = ModelConfig {
            input_height: 5,
            input_width: 5,
            input_channels: 3,
            num_classes: 2,
            conv_layers: vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 1, pool: false }],
            fc_layers: vec![],
            seed: 16,
        };
        let batch = batch_for(&config, 2, 26);
        let err = finite_difference_max_err(&config, &batch, 36);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zeroed_model_outputs_uniform() {
        let config = ModelConfig {
            input_height: 4,
            input_width: 4,
            input_channels: 1,
            num_classes: 5,
            conv_layers: vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 1, pool: false }],
            fc_layers: vec![4],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        let patch = patch_from(&vec![0.7; 16], 4, 4, 1);
        let score = forward(&params, &patch).unwrap();
        for &p in score.probs() {
            assert!((p - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logits_give_uniform() {
        // zero weights, all final biases at the same value: softmax shift
        // invariance must yield exactly uniform output
        let config = ModelConfig {
            input_height: 2,
            input_width: 2,
            input_channels: 1,
            num_classes: 4,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        for b in params.fc_biases[0].iter_mut() {
            *b = 7.25;
        }
        let patch = patch_from(&[0.1, 0.2, 0.3, 0.4], 2, 2, 1);
        let score = forward(&params, &patch).unwrap();
        for &p in score.probs() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_unit_logits() {
        // logits (1, 0) -> e/(e+1), 1/(e+1)
        let config = ModelConfig {
            input_height: 1,
            input_width: 1,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        params.fc_biases[0][0] = 1.0;
        let patch = patch_from(&[0.0], 1, 1, 1);
        let score = forward(&params, &patch).unwrap();
        assert!((score.probs()[0] - 0.7310585786300049).abs() < 1e-4);
        assert!((score.probs()[1] - 0.2689414213699951).abs() < 1e-4);
    }

    #[test]
    fn uniform_model_loss_is_ln_k() {
        let config = ModelConfig {
            input_height: 2,
            input_width: 2,
            input_channels: 1,
            num_classes: 3,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        let batch: Vec<Sample> = (0..3)
            .map(|label| Sample {
                patch: patch_from(&[0.5, -0.5, 0.25, 0.0], 2, 2, 1),
                label,
            })
            .collect();
        let (loss, _) = loss_and_gradient(&params, &batch).unwrap();
        assert!((loss - 1.0986122886681098).abs() < 1e-9, "loss {loss}");
    }

    #[test]
    fn confident_correct_model_loss_near_zero() {
        let config = ModelConfig {
            input_height: 1,
            input_width: 1,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v = 0.0;
            }
        }
        params.fc_biases[0][0] = 100.0;
        let batch = vec![Sample {
            patch: patch_from(&[0.0], 1, 1, 1),
            label: 0,
        }];
        let (loss, _) = loss_and_gradient(&params, &batch).unwrap();
        assert!(loss >= 0.0 && loss < 1e-9, "loss {loss}");
    }

    #[test]
    fn forward_argmax_invariant_under_final_bias_shift() {
        let config = ModelConfig {
            input_height: 6,
            input_width: 6,
            input_channels: 1,
            num_classes: 4,
            conv_layers: vec![ConvLayerSpec { out_channels: 3, kernel_size: 3, stride: 1, pool: false }],
            fc_layers: vec![5],
            seed: 77,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        randomize(&mut params, &mut rng);
        let patch = seeded_patch(&mut rng, 6, 6, 1);
        let before = forward(&params, &patch).unwrap();
        let last = params.fc_biases.len() - 1;
        for b in params.fc_biases[last].iter_mut() {
            *b += 3.5;
        }
        let after = forward(&params, &patch).unwrap();
        assert_eq!(before.argmax().0, after.argmax().0);
        for (x, y) in before.probs().iter().zip(after.probs()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_and_label_validation() {
        let config = ModelConfig {
            input_height: 4,
            input_width: 4,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        let wrong = patch_from(&vec![0.0; 9], 3, 3, 1);
        assert!(matches!(
            forward(&params, &wrong),
            Err(Error::PatchShapeMismatch { .. })
        ));
        let batch = vec![Sample {
            patch: patch_from(&vec![0.0; 16], 4, 4, 1),
            label: 2,
        }];
        assert!(matches!(
            loss_and_gradient(&params, &batch),
            Err(Error::LabelOutOfRange { label: 2, num_classes: 2 })
        ));
        assert!(loss_and_gradient(&params, &[]).is_err());
    }

    #[test]
    fn non_finite_loss_is_reported_with_sample_index() {
        let config = ModelConfig {
            input_height: 2,
            input_width: 2,
            input_channels: 1,
            num_classes: 2,
            conv_layers: vec![],
            fc_layers: vec![],
            seed: 0,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        params.fc_weights[0][0] = f64::INFINITY;
        let batch = vec![Sample {
            patch: patch_from(&[1.0, 0.0, 0.0, 0.0], 2, 2, 1),
            label: 1,
        }];
        assert!(matches!(
            loss_and_gradient(&params, &batch),
            Err(Error::NonFiniteLoss { sample: 0 })
        ));
    }

    #[test]
    fn pool_tie_takes_first_in_window_order() {
        let d = ConvDims {
            in_c: 1,
            in_h: 2,
            in_w: 2,
            out_c: 1,
            kernel: 1,
            stride: 1,
            pool: true,
            conv_h: 2,
            conv_w: 2,
            out_h: 1,
            out_w: 1,
        };
        let (out, argmax) = pool_forward(&[0.5, 0.5, 0.5, 0.5], &d);
        assert_eq!(out, vec![0.5]);
        assert_eq!(argmax, vec![0]);
        let (_, argmax) = pool_forward(&[0.1, 0.5, 0.5, 0.2], &d);
        assert_eq!(argmax, vec![1]);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let config = ModelConfig {
            input_height: 6,
            input_width: 6,
            input_channels: 1,
            num_classes: 3,
            conv_layers: vec![ConvLayerSpec { out_channels: 2, kernel_size: 3, stride: 1, pool: false }],
            fc_layers: vec![4],
            seed: 99,
        };
        let a = ModelParams::init(&config, NormConstants::identity()).unwrap();
        let b = ModelParams::init(&config, NormConstants::identity()).unwrap();
        assert_eq!(a, b);
        let mut other = config.clone();
        other.seed = 100;
        let c = ModelParams::init(&other, NormConstants::identity()).unwrap();
        assert_ne!(a.fc_weights, c.fc_weights);
    }

    #[test]
    fn batch_reduction_order_is_fixed() {
        // same batch evaluated repeatedly gives bit-identical gradients
        let config = ModelConfig {
            input_height: 6,
            input_width: 6,
            input_channels: 1,
            num_classes: 3,
            conv_layers: vec![ConvLayerSpec { out_channels: 3, kernel_size: 3, stride: 1, pool: true }],
            fc_layers: vec![],
            seed: 5,
        };
        let mut params = ModelParams::init(&config, NormConstants::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        randomize(&mut params, &mut rng);
        let batch = batch_for(&config, 7, 7);
        let (l1, g1) = loss_and_gradient(&params, &batch).unwrap();
        let (l2, g2) = loss_and_gradient(&params, &batch).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }
}
