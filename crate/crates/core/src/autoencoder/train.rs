use serde::{Deserialize, Serialize};

use super::{augment_patch, patches_to_batch, AugmentConfig, AutoencoderState};
use crate::data::ImagePatch;
use crate::error::{Error, Result};
use crate::imageops::resize_bilinear;
use crate::rng::{self, Rng64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Running-statistics momentum for batch normalization.
    pub bn_momentum: f64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            bn_momentum: 0.9,
            augment: Some(AugmentConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training-mode loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub samples: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let mut k = 0;
        for (p, g) in params.into_iter().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g) {
                self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * gi;
                self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = self.m[k] / bc1;
                let vhat = self.v[k] / bc2;
                *pi -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
                k += 1;
            }
        }
    }
}

/// Minibatch Adam on per-pixel binary cross-entropy with the input as target.
/// Patches are resized to the input size (and augmented when enabled) first.
/// Same inputs and seed give bit-identical weights.
pub fn ae_train(
    state: &AutoencoderState,
    patches: &[ImagePatch],
    cfg: &TrainConfig,
) -> Result<(AutoencoderState, TrainReport)> {
    cfg.validate()?;
    if patches.is_empty() {
        return Err(Error::Config("autoencoder training needs at least one patch".into()));
    }
    let size = state.input_size();
    let mut data: Vec<ImagePatch> = Vec::new();
    for (i, p) in patches.iter().enumerate() {
        let p = resize_bilinear(p, size, size);
        match &cfg.augment {
            Some(aug) => data.extend(augment_patch(&p, rng::mix(cfg.seed, i as u64), aug)),
            None => data.push(p),
        }
    }

    let mut state = state.clone();
    let n_params: usize = state.params_mut().iter().map(|s| s.len()).sum();
    let mut adam = Adam {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut rng = Rng64::derived(cfg.seed, 0xAE);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport {
        epoch_losses: Vec::with_capacity(cfg.epochs),
        samples: data.len(),
    };
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ImagePatch> = chunk.iter().map(|&i| &data[i]).collect();
            let x = patches_to_batch(&batch, size);
            let step = state.train_step(&x);
            if !step.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "autoencoder loss became {} at epoch {epoch} (batch of {})",
                    step.loss,
                    chunk.len()
                )));
            }
            total += step.loss * chunk.len() as f64;
            count += chunk.len();
            let grads = step.gradients.slices();
            adam.step(state.params_mut(), grads, cfg);
            for (b, s) in state.blocks.iter_mut().zip(&step.batch_stats) {
                b.bn.update_running(s, cfg.bn_momentum);
            }
        }
        let mean = total / count as f64;
        log::debug!("autoencoder epoch {epoch}: loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    state.quantize();
    if !state.is_finite() {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok((state, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::{ae_forward, ae_init, AutoencoderSpec};

    #[test]
    fn zero_epochs_rejected() {
        let st = ae_init(&AutoencoderSpec::default(), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let p = ImagePatch::filled(32, 32, [0.5; 3]);
        assert!(matches!(ae_train(&st, &[p], &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn constant_patch_reaches_entropy_floor() {
        let t: f64 = 0.3;
        let st = ae_init(&AutoencoderSpec::default(), 4).unwrap();
        let p = ImagePatch::filled(32, 32, [t; 3]);
        let cfg = TrainConfig {
            epochs: 200,
            seed: 1,
            augment: None,
            ..Default::default()
        };
        let (trained, report) = ae_train(&st, std::slice::from_ref(&p), &cfg).unwrap();
        let out = ae_forward(&trained, &p).unwrap();
        let bce = out
            .data()
            .iter()
            .map(|&y| -(t * y.ln() + (1.0 - t) * (1.0 - y).ln()))
            .sum::<f64>()
            / out.data().len() as f64;
        let floor = -(t * t.ln() + (1.0 - t) * (1.0 - t).ln());
        assert!((bce - floor).abs() < 1e-2, "bce {bce} floor {floor}");
        assert!(report.epoch_losses.last().unwrap() < &report.epoch_losses[0]);
    }

    #[test]
    fn reproducible_and_loss_decreasing() {
        let spec = AutoencoderSpec {
            input_size: 16,
            encoder_widths: [4, 8, 8, 8],
            decoder_widths: [8, 8, 4],
        };
        let st = ae_init(&spec, 2).unwrap();
        let mut rng = Rng64::new(5);
        let patches: Vec<ImagePatch> = (0..12)
            .map(|_| {
                let base = [rng.uniform(), rng.uniform(), rng.uniform()];
                let data = (0..16 * 16)
                    .flat_map(|_| {
                        let n = rng.range(-0.05, 0.05);
                        base.map(|b| (b + n).clamp(0.0, 1.0))
                    })
                    .collect();
                ImagePatch::new(16, 16, data).unwrap()
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 9,
            ..Default::default()
        };
        let (a, ra) = ae_train(&st, &patches, &cfg).unwrap();
        let (b, rb) = ae_train(&st, &patches, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        for w in ra.epoch_losses.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "loss rose from {} to {}", w[0], w[1]);
        }
    }
}
