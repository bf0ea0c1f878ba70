//! Convolutional autoencoder used for both appearance patches and
//! flow-rendered patches.
//!
//! Encoder: four `conv3x3 -> batch norm -> ReLU` blocks, the last three with
//! stride 2. Decoder: three `upsample x2 -> conv3x3 -> batch norm -> ReLU`
//! blocks, then a `conv3x3` head to 3 channels with a per-pixel sigmoid.
//! Everything runs in `f64`; trained weights are rounded to `f32` precision
//! so that persisted bundles reproduce scores exactly.

mod augment;
mod layers;
mod train;

pub use augment::{augment_patch, AugmentConfig};
pub use layers::{BatchNorm, Conv2d};
pub use train::{ae_train, TrainConfig, TrainReport};

use ndarray::{Array1, Array2, Array4, Axis};
use serde::{Deserialize, Serialize};

use crate::data::ImagePatch;
use crate::error::{Error, Result};
use crate::imageops::resize_bilinear;
use crate::rng::Rng64;
use crate::tensor::{NamedTensor, TensorMap};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    /// Side length of the square input; must be divisible by 8.
    pub input_size: usize,
    pub encoder_widths: [usize; 4],
    pub decoder_widths: [usize; 3],
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            input_size: 32,
            encoder_widths: [16, 32, 64, 128],
            decoder_widths: [64, 32, 16],
        }
    }
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 8 || !self.input_size.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "autoencoder input size must be a positive multiple of 8, got {}",
                self.input_size
            )));
        }
        if self
            .encoder_widths
            .iter()
            .chain(&self.decoder_widths)
            .any(|&w| w == 0)
        {
            return Err(Error::Config("layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub upsample: bool,
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderState {
    pub spec: AutoencoderSpec,
    pub blocks: Vec<Block>,
    pub head: Conv2d,
}

fn uniform_weights(rng: &mut Rng64, rows: usize, cols: usize) -> Array2<f64> {
    // LeCun-uniform: variance 1 / fan_in
    let bound = (3.0 / cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.range(-bound, bound))
}

/// Fresh weights from a fan-in scaled uniform draw; batch-norm scales 1,
/// shifts 0.
pub fn ae_init(spec: &AutoencoderSpec, seed: u64) -> Result<AutoencoderState> {
    spec.validate()?;
    let mut rng = Rng64::new(seed);
    let mut blocks = Vec::with_capacity(7);
    let mut cin = 3;
    for (i, &cout) in spec.encoder_widths.iter().enumerate() {
        blocks.push(Block {
            upsample: false,
            conv: Conv2d {
                in_channels: cin,
                out_channels: cout,
                stride: if i == 0 { 1 } else { 2 },
                weight: uniform_weights(&mut rng, cout, cin * 9),
                bias: None,
            },
            bn: BatchNorm::new(cout),
        });
        cin = cout;
    }
    for &cout in &spec.decoder_widths {
        blocks.push(Block {
            upsample: true,
            conv: Conv2d {
                in_channels: cin,
                out_channels: cout,
                stride: 1,
                weight: uniform_weights(&mut rng, cout, cin * 9),
                bias: None,
            },
            bn: BatchNorm::new(cout),
        });
        cin = cout;
    }
    let head = Conv2d {
        in_channels: cin,
        out_channels: 3,
        stride: 1,
        weight: uniform_weights(&mut rng, 3, cin * 9),
        bias: Some(Array1::zeros(3)),
    };
    let mut state = AutoencoderState {
        spec: spec.clone(),
        blocks,
        head,
    };
    state.quantize();
    Ok(state)
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(z)` against `t`, from logits.
pub(crate) fn bce_with_logits(z: &Array4<f64>, t: &Array4<f64>) -> f64 {
    let n = z.len() as f64;
    ndarray::Zip::from(z)
        .and(t)
        .fold(0.0, |acc, &z, &t| acc + z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
        / n
}

struct BlockCache {
    conv: layers::ConvCache,
    bn: layers::BnCache,
    relu_mask: Array4<f64>,
}

/// Gradients in the same order as [`AutoencoderState::params_mut`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub blocks: Vec<(Array2<f64>, Array1<f64>, Array1<f64>)>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl Gradients {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for (w, g, b) in &self.blocks {
            v.push(w.as_slice().unwrap());
            v.push(g.as_slice().unwrap());
            v.push(b.as_slice().unwrap());
        }
        v.push(self.head_weight.as_slice().unwrap());
        v.push(self.head_bias.as_slice().unwrap());
        v
    }
}

/// Outcome of one training-mode pass.
pub struct TrainStep {
    pub loss: f64,
    pub gradients: Gradients,
    pub batch_stats: Vec<layers::BnBatchStats>,
}

impl AutoencoderState {
    pub fn input_size(&self) -> usize {
        self.spec.input_size
    }

    /// Trainable parameters, block by block (conv weight, bn gamma, bn beta),
    /// then head weight and bias.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            v.push(b.conv.weight.as_slice_mut().unwrap());
            v.push(b.bn.gamma.as_slice_mut().unwrap());
            v.push(b.bn.beta.as_slice_mut().unwrap());
        }
        v.push(self.head.weight.as_slice_mut().unwrap());
        v.push(self.head.bias.as_mut().unwrap().as_slice_mut().unwrap());
        v
    }

    fn all_values_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.conv.weight.as_slice_mut().unwrap());
            out.push(b.bn.gamma.as_slice_mut().unwrap());
            out.push(b.bn.beta.as_slice_mut().unwrap());
            out.push(b.bn.running_mean.as_slice_mut().unwrap());
            out.push(b.bn.running_var.as_slice_mut().unwrap());
        }
        out.push(self.head.weight.as_slice_mut().unwrap());
        out.push(self.head.bias.as_mut().unwrap().as_slice_mut().unwrap());
        out
    }

    /// Rounds every stored value to the nearest `f32`.
    pub fn quantize(&mut self) {
        for s in self.all_values_mut() {
            for x in s.iter_mut() {
                *x = *x as f32 as f64;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        let finite = |a: &[f64]| a.iter().all(|x| x.is_finite());
        self.blocks.iter().all(|b| {
            finite(b.conv.weight.as_slice().unwrap())
                && [&b.bn.gamma, &b.bn.beta, &b.bn.running_mean, &b.bn.running_var]
                    .iter()
                    .all(|a| finite(a.as_slice().unwrap()))
        }) && finite(self.head.weight.as_slice().unwrap())
            && finite(self.head.bias.as_ref().unwrap().as_slice().unwrap())
    }

    /// Inference-mode logits for a `[N, 3, S, S]` batch.
    pub fn logits_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let mut a = x.clone();
        for b in &self.blocks {
            if b.upsample {
                a = layers::upsample2(&a);
            }
            let (y, _) = b.conv.forward(&a, false);
            a = b.bn.forward_eval(&y).mapv(|v| v.max(0.0));
        }
        self.head.forward(&a, false).0
    }

    /// Training-mode loss (batch statistics) without gradients.
    pub fn train_loss(&self, x: &Array4<f64>) -> f64 {
        let mut a = x.clone();
        for b in &self.blocks {
            if b.upsample {
                a = layers::upsample2(&a);
            }
            let (y, _) = b.conv.forward(&a, false);
            let (y, _, _) = b.bn.forward_train(&y);
            a = y.mapv(|v| v.max(0.0));
        }
        bce_with_logits(&self.head.forward(&a, false).0, x)
    }

    /// Training-mode forward and backward pass; targets are the inputs.
    pub fn train_step(&self, x: &Array4<f64>) -> TrainStep {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut batch_stats = Vec::with_capacity(self.blocks.len());
        let mut a = x.clone();
        for b in &self.blocks {
            if b.upsample {
                a = layers::upsample2(&a);
            }
            let (y, conv) = b.conv.forward(&a, true);
            let (y, bn, stats) = b.bn.forward_train(&y);
            let relu_mask = y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
            a = &y * &relu_mask;
            caches.push(BlockCache {
                conv: conv.unwrap(),
                bn,
                relu_mask,
            });
            batch_stats.push(stats);
        }
        let (z, head_cache) = self.head.forward(&a, true);
        let loss = bce_with_logits(&z, x);
        let count = z.len() as f64;
        let mut dz = z.clone();
        ndarray::Zip::from(&mut dz)
            .and(x)
            .for_each(|d, &t| *d = (sigmoid(*d) - t) / count);

        let (dx, head_weight, head_bias) = self.head.backward(head_cache.as_ref().unwrap(), &dz, true);
        let mut grad = dx.unwrap();
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (i, (b, c)) in self.blocks.iter().zip(&caches).enumerate().rev() {
            let d_relu = &grad * &c.relu_mask;
            let (d_conv, dgamma, dbeta) = b.bn.backward(&c.bn, &d_relu);
            let (dx, dw, _) = b.conv.backward(&c.conv, &d_conv, i > 0);
            block_grads.push((dw, dgamma, dbeta));
            if let Some(dx) = dx {
                grad = if b.upsample {
                    layers::upsample2_backward(&dx)
                } else {
                    dx
                };
            }
        }
        block_grads.reverse();
        TrainStep {
            loss,
            gradients: Gradients {
                blocks: block_grads,
                head_weight,
                head_bias: head_bias.unwrap(),
            },
            batch_stats,
        }
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("{prefix}.block{i}");
            out.push(NamedTensor::from_array2(format!("{p}.conv.weight"), &b.conv.weight));
            out.push(NamedTensor::from_array1(format!("{p}.bn.gamma"), &b.bn.gamma));
            out.push(NamedTensor::from_array1(format!("{p}.bn.beta"), &b.bn.beta));
            out.push(NamedTensor::from_array1(format!("{p}.bn.running_mean"), &b.bn.running_mean));
            out.push(NamedTensor::from_array1(format!("{p}.bn.running_var"), &b.bn.running_var));
        }
        out.push(NamedTensor::from_array2(format!("{prefix}.head.weight"), &self.head.weight));
        out.push(NamedTensor::from_array1(
            format!("{prefix}.head.bias"),
            self.head.bias.as_ref().unwrap(),
        ));
        out
    }

    pub fn from_tensors(spec: &AutoencoderSpec, prefix: &str, map: &TensorMap) -> Result<Self> {
        let mut state = ae_init(spec, 0)?;
        for (i, b) in state.blocks.iter_mut().enumerate() {
            let p = format!("{prefix}.block{i}");
            b.conv.weight = map.array2(&format!("{p}.conv.weight"), b.conv.weight.dim())?;
            let c = b.bn.gamma.len();
            b.bn.gamma = map.array1(&format!("{p}.bn.gamma"), c)?;
            b.bn.beta = map.array1(&format!("{p}.bn.beta"), c)?;
            b.bn.running_mean = map.array1(&format!("{p}.bn.running_mean"), c)?;
            b.bn.running_var = map.array1(&format!("{p}.bn.running_var"), c)?;
        }
        state.head.weight = map.array2(&format!("{prefix}.head.weight"), state.head.weight.dim())?;
        state.head.bias = Some(map.array1(&format!("{prefix}.head.bias"), 3)?);
        Ok(state)
    }
}

/// `[N, 3, S, S]` batch from square patches of side `S`.
pub fn patches_to_batch(patches: &[&ImagePatch], size: usize) -> Array4<f64> {
    let mut x = Array4::<f64>::zeros((patches.len(), 3, size, size));
    for (n, p) in patches.iter().enumerate() {
        debug_assert_eq!((p.width, p.height), (size, size));
        for (i, &v) in p.data().iter().enumerate() {
            let c = i % 3;
            let pix = i / 3;
            x[[n, c, pix / size, pix % size]] = v;
        }
    }
    x
}

fn batch_item_to_patch(y: &Array4<f64>, n: usize) -> ImagePatch {
    let (_, _, h, w) = y.dim();
    let item = y.index_axis(Axis(0), n);
    let mut data = Vec::with_capacity(h * w * 3);
    for yy in 0..h {
        for xx in 0..w {
            for c in 0..3 {
                data.push(item[[c, yy, xx]]);
            }
        }
    }
    ImagePatch::from_clamped(w, h, data)
}

/// Inference-mode reconstruction. The patch must already have the spec's
/// input size (see [`prepare_patch`]).
pub fn ae_forward(state: &AutoencoderState, patch: &ImagePatch) -> Result<ImagePatch> {
    let s = state.input_size();
    if patch.width != s || patch.height != s {
        return Err(Error::Dimension(format!(
            "autoencoder expects {s}x{s} input, got {}x{}",
            patch.width, patch.height
        )));
    }
    if !state.is_finite() {
        return Err(Error::Numeric("autoencoder has non-finite weights".into()));
    }
    let z = state.logits_eval(&patches_to_batch(&[patch], s));
    Ok(batch_item_to_patch(&z.mapv(sigmoid), 0))
}

/// Resizes an arbitrary patch to the autoencoder input size.
pub fn prepare_patch(state: &AutoencoderState, patch: &ImagePatch) -> ImagePatch {
    resize_bilinear(patch, state.input_size(), state.input_size())
}

/// Per-channel mean absolute reconstruction error.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub errors: [f64; 3],
    pub reconstruction: ImagePatch,
}

pub fn channel_errors(input: &ImagePatch, output: &ImagePatch) -> Result<[f64; 3]> {
    if (input.width, input.height) != (output.width, output.height) {
        return Err(Error::Dimension("reconstruction size differs from input".into()));
    }
    let mut sums = [0.0; 3];
    for (i, (a, b)) in input.data().iter().zip(output.data()).enumerate() {
        sums[i % 3] += (a - b).abs();
    }
    let n = (input.width * input.height) as f64;
    Ok(sums.map(|s| s / n))
}

/// Resizes `patch` to the input size, reconstructs it and measures the
/// per-channel error against the resized input.
pub fn reconstruction_errors(state: &AutoencoderState, patch: &ImagePatch) -> Result<Reconstruction> {
    let input = prepare_patch(state, patch);
    let reconstruction = ae_forward(state, &input)?;
    Ok(Reconstruction {
        errors: channel_errors(&input, &reconstruction)?,
        reconstruction,
    })
}
