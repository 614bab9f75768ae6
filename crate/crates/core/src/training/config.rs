use crate::error::{Error, Result};
use crate::losses::{LossWeights, SsimParams};
use crate::models::{DiscriminatorConfig, GeneratorConfig, Method};
use crate::nn::AdamConfig;

/// Hyperparameters of a training run. The seed is passed separately.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub learning_rate: f64,
    /// Multiplier applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub epochs: usize,
    /// Epochs of MS-SSIM warm-up before adversarial training.
    pub stage1_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    pub ssim: SsimParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::L1,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            learning_rate: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 100,
            epochs: 200,
            stage1_epochs: 100,
            batch_size: 16,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            ssim: SsimParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Invalid(format!(
                "lr decay {} must lie in (0, 1]",
                self.lr_decay
            )));
        }
        if self.lr_decay_every == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Invalid(
                "epochs, batch size and decay period must be at least 1".into(),
            ));
        }
        if self.method == Method::Perceptual {
            self.discriminator.validate()?;
            if self.stage1_epochs >= self.epochs {
                return Err(Error::Invalid(format!(
                    "stage 1 takes {} of {} epochs, leaving none for stage 2",
                    self.stage1_epochs, self.epochs
                )));
            }
            if self.discriminator.input_block_size != self.generator.input_block_size {
                return Err(Error::Invalid(format!(
                    "discriminator block {} differs from generator block {}",
                    self.discriminator.input_block_size, self.generator.input_block_size
                )));
            }
        }
        Ok(())
    }

    /// Whether `epoch` belongs to the adversarial stage.
    pub fn is_stage2(&self, epoch: usize) -> bool {
        self.method == Method::Perceptual && epoch >= self.stage1_epochs
    }

    /// Flat key/value description, used to match checkpoints to configs.
    pub fn describe(&self) -> Vec<(String, String)> {
        let g = &self.generator;
        let d = &self.discriminator;
        let s = &self.ssim;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut out = vec![
            ("method", self.method.to_string()),
            ("g.blocks", g.num_residual_blocks.to_string()),
            ("g.width", g.feature_width.to_string()),
            ("g.kernel", g.kernel_size.to_string()),
            ("g.block_size", g.input_block_size.to_string()),
            ("lr", format!("{:?}", self.learning_rate)),
            ("lr_decay", format!("{:?}", self.lr_decay)),
            ("lr_decay_every", self.lr_decay_every.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            (
                "adam",
                format!(
                    "{:?},{:?},{:?}",
                    self.adam.beta1, self.adam.beta2, self.adam.eps
                ),
            ),
            (
                "ssim",
                format!(
                    "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
                    s.window,
                    s.sigma,
                    s.k1,
                    s.k2,
                    s.dynamic_range,
                    s.domain,
                    s.ms_weights,
                    s.max_scales
                ),
            ),
        ];
        if self.method == Method::Perceptual {
            out.extend([
                ("stage1_epochs", self.stage1_epochs.to_string()),
                ("alpha", format!("{:?}", self.weights.alpha)),
                ("beta", format!("{:?}", self.weights.beta)),
                ("d.widths", list(&d.widths)),
                ("d.strides", list(&d.strides)),
                ("d.kernel", d.kernel_size.to_string()),
                ("d.dense", d.dense_width.to_string()),
                ("d.block_size", d.input_block_size.to_string()),
                (
                    "d.bn",
                    format!("{:?},{:?},{:?}", d.leaky_slope, d.bn_eps, d.bn_momentum),
                ),
            ]);
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// `lr * decay^floor(epoch / every)` for `0 <= epoch < epochs`.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::Invalid(format!(
            "epoch {epoch} is outside 0..{}",
            config.epochs
        )));
    }
    let k = (epoch / config.lr_decay_every) as i32;
    Ok(config.learning_rate * config.lr_decay.powi(k))
}
