use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dispatch::Codec;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator, Method, Mode, ModelBundle};
use crate::nn::{Adam, Graph, ParameterSet, Tape};
use crate::tensor::Tensor4;
use crate::training::config::{lr_at_epoch, TrainConfig};
use crate::training::dataset::BlockPairDataset;

pub const LOG_HEADER: &str = "epoch,step,loss_total,loss_ssim,loss_l1,loss_adv,lr";

/// Losses of one optimisation step. Terms not part of the step's objective
/// are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub step: u64,
    pub loss_total: f64,
    pub loss_ssim: Option<f64>,
    pub loss_l1: Option<f64>,
    pub loss_adv: Option<f64>,
    /// Discriminator loss of the paired update in the adversarial stage.
    pub loss_disc: Option<f64>,
    pub lr: f64,
}

impl LogRow {
    /// One CSV line matching [`LOG_HEADER`], without the newline.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:?}"));
        let mut s = String::new();
        write!(
            s,
            "{},{},{:?},{},{},{},{:?}",
            self.epoch,
            self.step,
            self.loss_total,
            opt(self.loss_ssim),
            opt(self.loss_l1),
            opt(self.loss_adv),
            self.lr
        )
        .expect("write to String");
        s
    }
}

/// Running statistics of a finished epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: u64,
    pub mean_loss: f64,
}

/// Mutable state of a run; everything needed to continue it lives here.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub(crate) config: TrainConfig,
    pub(crate) seed: u64,
    pub(crate) codec: Codec,
    pub(crate) qp_group: String,
    pub(crate) generator: Generator<f32>,
    pub(crate) discriminator: Option<Discriminator<f32>>,
    pub(crate) g_opt: Adam<f32>,
    pub(crate) d_opt: Adam<f32>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) epoch: usize,
    pub(crate) step: u64,
    pub(crate) stage1_output: Option<ParameterSet<f32>>,
    pub(crate) history: Vec<EpochSummary>,
}

fn init_seeds(seed: u64) -> (u64, u64) {
    (seed, seed ^ 0x9e37_79b9_7f4a_7c15)
}

impl Trainer {
    /// Fresh state for a dataset tagged `codec`/`qp_group`.
    pub fn new(config: TrainConfig, codec: Codec, qp_group: &str, seed: u64) -> Result<Self> {
        config.validate()?;
        let (gs, ds) = init_seeds(seed);
        let generator = Generator::new(config.generator, gs)?;
        let discriminator = match config.method {
            Method::Perceptual => Some(Discriminator::new(config.discriminator.clone(), ds)?),
            Method::L1 => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        // validates the group
        ModelBundle::new(codec, qp_group, config.method, generator.clone())?;
        Ok(Trainer {
            g_opt: Adam::new(config.adam),
            d_opt: Adam::new(config.adam),
            config,
            seed,
            codec,
            qp_group: qp_group.to_string(),
            generator,
            discriminator,
            rng,
            epoch: 0,
            step: 0,
            stage1_output: None,
            history: Vec::new(),
        })
    }

    /// Fresh state tagged from the dataset's metadata.
    pub fn for_dataset(dataset: &BlockPairDataset, config: TrainConfig, seed: u64) -> Result<Self> {
        check_dataset(dataset, &config)?;
        Self::new(config, dataset.codec, &dataset.qp_group.clone(), seed)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Next epoch to run.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Optimisation steps taken so far (generator updates).
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn generator(&self) -> &Generator<f32> {
        &self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator<f32>> {
        self.discriminator.as_ref()
    }

    pub fn discriminator_mut(&mut self) -> Option<&mut Discriminator<f32>> {
        self.discriminator.as_mut()
    }

    /// Generator parameters at the end of the MS-SSIM stage, once reached.
    pub fn stage1_output(&self) -> Option<&ParameterSet<f32>> {
        self.stage1_output.as_ref()
    }

    pub fn history(&self) -> &[EpochSummary] {
        &self.history
    }

    /// Runs one epoch, passing each step's losses to `sink`.
    pub fn run_epoch(
        &mut self,
        dataset: &BlockPairDataset,
        sink: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<EpochSummary> {
        check_dataset(dataset, &self.config)?;
        if self.is_finished() {
            return Err(Error::Invalid(format!(
                "all {} epochs already ran",
                self.config.epochs
            )));
        }
        let epoch = self.epoch;
        let lr = lr_at_epoch(&self.config, epoch)?;
        let stage2 = self.config.is_stage2(epoch);
        if stage2 && self.stage1_output.is_none() {
            self.stage1_output = Some(self.generator.params.clone());
            self.g_opt = Adam::new(self.config.adam);
        }
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut steps = 0u64;
        for chunk in order.chunks(self.config.batch_size) {
            let (x, y) = dataset.batch(chunk)?;
            let mut row = match (self.config.method, stage2) {
                (Method::L1, _) => self.l1_step(x, y, lr)?,
                (Method::Perceptual, false) => self.ms_ssim_step(x, y, lr)?,
                (Method::Perceptual, true) => {
                    let disc = self.discriminator_step(&x, &y, lr)?;
                    let mut row = self.adversarial_step(x, y, lr)?;
                    row.loss_disc = Some(disc);
                    row
                }
            };
            self.step += 1;
            row.epoch = epoch;
            row.step = self.step;
            row.lr = lr;
            total += row.loss_total;
            steps += 1;
            sink(&row)?;
        }
        let summary = EpochSummary {
            epoch,
            steps,
            mean_loss: total / steps as f64,
        };
        self.history.push(summary);
        self.epoch += 1;
        Ok(summary)
    }

    /// Runs until epoch `end` (exclusive) or the configured total.
    pub fn run_until(
        &mut self,
        dataset: &BlockPairDataset,
        end: usize,
        sink: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        while self.epoch < end.min(self.config.epochs) {
            self.run_epoch(dataset, sink)?;
        }
        Ok(())
    }

    pub fn run(
        &mut self,
        dataset: &BlockPairDataset,
        sink: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        self.run_until(dataset, self.config.epochs, sink)
    }

    /// Packages the current weights.
    pub fn bundle(&self) -> Result<ModelBundle> {
        let mut b = ModelBundle::new(
            self.codec,
            self.qp_group.clone(),
            self.config.method,
            self.generator.clone(),
        )?;
        b.discriminator = self.discriminator.clone();
        b.notes = vec![
            ("seed".into(), self.seed.to_string()),
            ("epochs".into(), self.epoch.to_string()),
            ("steps".into(), self.step.to_string()),
        ];
        Ok(b)
    }

    fn row(total: f64) -> LogRow {
        LogRow {
            epoch: 0,
            step: 0,
            loss_total: total,
            loss_ssim: None,
            loss_l1: None,
            loss_adv: None,
            loss_disc: None,
            lr: 0.0,
        }
    }

    fn l1_step(&mut self, x: Tensor4<f32>, y: Tensor4<f32>, lr: f64) -> Result<LogRow> {
        let mut t = Tape::new();
        let (x, y) = (t.constant(x), t.constant(y));
        let out = self.generator.forward(&mut t, &x)?;
        let loss = t.l1(out, y)?;
        let grads = t.backward(loss)?.for_params(&self.generator.params);
        self.g_opt.step(&mut self.generator.params, &grads, lr)?;
        let v = t.scalar(loss)?;
        Ok(LogRow {
            loss_l1: Some(v),
            ..Self::row(v)
        })
    }

    fn ms_ssim_step(&mut self, x: Tensor4<f32>, y: Tensor4<f32>, lr: f64) -> Result<LogRow> {
        let mut t = Tape::new();
        let (x, y) = (t.constant(x), t.constant(y));
        let out = self.generator.forward(&mut t, &x)?;
        let m = t.ms_ssim(out, y, &self.config.ssim)?;
        let loss = t.linear(&[(m, -1.0)], 1.0)?;
        let grads = t.backward(loss)?.for_params(&self.generator.params);
        self.g_opt.step(&mut self.generator.params, &grads, lr)?;
        let v = t.scalar(loss)?;
        Ok(LogRow {
            loss_ssim: Some(v),
            ..Self::row(v)
        })
    }

    /// Relativistic discriminator update on real and generated batches,
    /// each normalised with its own batch statistics.
    pub(crate) fn discriminator_step(
        &mut self,
        x: &Tensor4<f32>,
        y: &Tensor4<f32>,
        lr: f64,
    ) -> Result<f64> {
        let fake = self.generator.infer(x)?;
        let d = self
            .discriminator
            .as_mut()
            .expect("perceptual run has a discriminator");
        let mut t = Tape::new();
        let (real, fake) = (t.constant(y.clone()), t.constant(fake));
        let (sr, stats_real) = d.forward(&mut t, &real, Mode::Train)?;
        let (sf, stats_fake) = d.forward(&mut t, &fake, Mode::Train)?;
        let loss = t.ragan_discriminator(sr, sf)?;
        let grads = t.backward(loss)?.for_params(&d.params);
        self.d_opt.step(&mut d.params, &grads, lr)?;
        d.apply_batch_stats(&stats_real)?;
        d.apply_batch_stats(&stats_fake)?;
        t.scalar(loss)
    }

    fn adversarial_step(&mut self, x: Tensor4<f32>, y: Tensor4<f32>, lr: f64) -> Result<LogRow> {
        let d = self
            .discriminator
            .as_ref()
            .expect("perceptual run has a discriminator");
        let w = self.config.weights;
        let mut t = Tape::new();
        let (x, y) = (t.constant(x), t.constant(y));
        let out = self.generator.forward(&mut t, &x)?;
        let s = t.ssim(out, y, &self.config.ssim)?;
        let l1 = t.l1(out, y)?;
        let (sr, _) = d.forward(&mut t, &y, Mode::Train)?;
        let (sf, _) = d.forward(&mut t, &out, Mode::Train)?;
        let adv = t.ragan_generator(sr, sf)?;
        let loss = t.linear(&[(s, -1.0), (l1, w.alpha), (adv, w.beta)], 1.0)?;
        let grads = t.backward(loss)?.for_params(&self.generator.params);
        self.g_opt.step(&mut self.generator.params, &grads, lr)?;
        Ok(LogRow {
            loss_ssim: Some(1.0 - t.scalar(s)?),
            loss_l1: Some(t.scalar(l1)?),
            loss_adv: Some(t.scalar(adv)?),
            ..Self::row(t.scalar(loss)?)
        })
    }
}

fn check_dataset(dataset: &BlockPairDataset, config: &TrainConfig) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Invalid("training dataset is empty".into()));
    }
    if dataset.block_size() != config.generator.input_block_size {
        return Err(Error::Invalid(format!(
            "dataset blocks are {b}x{b} but the generator expects {g}x{g}",
            b = dataset.block_size(),
            g = config.generator.input_block_size
        )));
    }
    Ok(())
}

/// Generator-only training on mean absolute error.
pub fn train_l1(
    dataset: &BlockPairDataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<ModelBundle> {
    if config.method != Method::L1 {
        return Err(Error::Invalid(format!(
            "train_l1 called with method {}",
            config.method
        )));
    }
    let mut t = Trainer::for_dataset(dataset, config.clone(), seed)?;
    t.run(dataset, &mut |_| Ok(()))?;
    t.bundle()
}

/// MS-SSIM warm-up followed by alternating discriminator and generator
/// updates.
pub fn train_perceptual(
    dataset: &BlockPairDataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<ModelBundle> {
    if config.method != Method::Perceptual {
        return Err(Error::Invalid(format!(
            "train_perceptual called with method {}",
            config.method
        )));
    }
    let mut t = Trainer::for_dataset(dataset, config.clone(), seed)?;
    t.run(dataset, &mut |_| Ok(()))?;
    t.bundle()
}
