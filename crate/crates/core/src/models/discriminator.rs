use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::generator::{check_layout, CHANNELS};
use crate::nn::{he_normal, Eager, Graph, Padding, ParameterSet};
use crate::tensor::{Scalar, Shape, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    /// Output channels of the input layer followed by every BN layer.
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel_size: usize,
    pub dense_width: usize,
    pub input_block_size: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            widths: vec![64, 64, 128, 128, 256, 256, 512, 512],
            strides: vec![1, 2, 1, 2, 1, 2, 1, 2],
            kernel_size: 3,
            dense_width: 1024,
            input_block_size: 96,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl DiscriminatorConfig {
    /// Same topology with every width divided by `factor` (at least 1).
    pub fn reduced(factor: usize) -> Self {
        let d = Self::default();
        DiscriminatorConfig {
            widths: d.widths.iter().map(|w| (w / factor).max(1)).collect(),
            dense_width: (d.dense_width / factor).max(1),
            ..d
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.len() != self.strides.len() {
            return Err(Error::Invalid(
                "discriminator needs matching widths/strides for the input layer and at least one BN layer".into(),
            ));
        }
        if self.widths.contains(&0) || self.strides.contains(&0) || self.dense_width == 0 {
            return Err(Error::Invalid(
                "discriminator widths and strides must be positive".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Invalid(format!(
                "kernel size {} is not odd",
                self.kernel_size
            )));
        }
        if self.input_block_size == 0 {
            return Err(Error::Invalid(
                "discriminator input size must be positive".into(),
            ));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::Invalid(
                "batch-norm eps must be positive and momentum in [0,1)".into(),
            ));
        }
        Ok(())
    }

    /// Side length of the last feature map.
    pub fn final_side(&self) -> usize {
        self.strides
            .iter()
            .fold(self.input_block_size, |s, &st| s.div_ceil(st))
    }

    pub(crate) fn layout(&self) -> Vec<(String, Shape, usize)> {
        let k = self.kernel_size;
        let mut out = Vec::new();
        let mut cin = CHANNELS;
        for (i, &w) in self.widths.iter().enumerate() {
            out.push((format!("d.c{i}.w"), Shape::new(w, cin, k, k), cin * k * k));
            out.push((format!("d.c{i}.b"), Shape::new(1, w, 1, 1), 0));
            if i > 0 {
                for stat in ["scale", "shift", "mean", "var"] {
                    out.push((format!("d.c{i}.bn.{stat}"), Shape::new(1, w, 1, 1), 0));
                }
            }
            cin = w;
        }
        let side = self.final_side();
        let flat = cin * side * side;
        out.push((
            "d.fc1.w".into(),
            Shape::new(self.dense_width, flat, 1, 1),
            flat,
        ));
        out.push(("d.fc1.b".into(), Shape::new(1, self.dense_width, 1, 1), 0));
        out.push((
            "d.fc2.w".into(),
            Shape::new(1, self.dense_width, 1, 1),
            self.dense_width,
        ));
        out.push(("d.fc2.b".into(), Shape::new(1, 1, 1, 1), 0));
        out
    }
}

/// Batch statistics observed by one training-mode pass, one entry per BN
/// layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub layers: Vec<(usize, Vec<T>, Vec<T>)>,
}

/// Conv/BN/LeakyReLU stack followed by two dense layers. Outputs raw
/// scores; the sigmoid lives in the adversarial losses.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub config: DiscriminatorConfig,
    pub params: ParameterSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for (name, shape, fan_in) in config.layout() {
            let (value, trainable) = if fan_in > 0 {
                (he_normal(shape, fan_in, &mut rng), true)
            } else if name.ends_with(".scale") {
                (Tensor4::full(shape, T::one()), true)
            } else if name.ends_with(".var") {
                (Tensor4::full(shape, T::one()), false)
            } else if name.ends_with(".mean") {
                (Tensor4::zeros(shape), false)
            } else {
                (Tensor4::zeros(shape), true)
            };
            params.insert(name, value, trainable)?;
        }
        Ok(Discriminator { config, params })
    }

    /// All-zero parameters with the right layout, for loaders to fill.
    pub fn zeroed(config: DiscriminatorConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape, _) in config.layout() {
            let trainable = !(name.ends_with(".mean") || name.ends_with(".var"));
            params.insert(name, Tensor4::zeros(shape), trainable)?;
        }
        Ok(Discriminator { config, params })
    }

    pub fn from_params(config: DiscriminatorConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        check_layout(&config.layout(), &params, "discriminator")?;
        Ok(Discriminator { config, params })
    }

    /// Scores shaped `(n,1,1,1)` plus the batch statistics in train mode.
    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Value,
        mode: Mode,
    ) -> Result<(G::Value, BatchStats<T>)> {
        let (h, stats) = self.features(g, x, mode)?;
        Ok((self.head(g, &h)?, stats))
    }

    /// Output of the convolutional stack, before the dense layers.
    pub fn features<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Value,
        mode: Mode,
    ) -> Result<(G::Value, BatchStats<T>)> {
        let s = g.value(x).shape();
        let b = self.config.input_block_size;
        if s.n == 0 || s != Shape::new(s.n, CHANNELS, b, b) {
            return Err(Error::shape(
                "discriminator",
                format!("expected (n,{CHANNELS},{b},{b}), got {s}"),
            ));
        }
        let c = &self.config;
        let p = &self.params;
        let bind = |g: &mut G, name: String| -> Result<G::Value> {
            let v = p.expect(&name)?;
            Ok(g.param(&name, v))
        };
        let mut stats = BatchStats { layers: Vec::new() };
        let mut h = x.clone();
        for i in 0..c.widths.len() {
            let w = bind(g, format!("d.c{i}.w"))?;
            let bias = bind(g, format!("d.c{i}.b"))?;
            h = g.conv2d(&h, &w, &bias, c.strides[i], Padding::Same)?;
            if i > 0 {
                let scale = bind(g, format!("d.c{i}.bn.scale"))?;
                let shift = bind(g, format!("d.c{i}.bn.shift"))?;
                h = match mode {
                    Mode::Train => {
                        let (y, mean, var) = g.batch_norm_train(&h, &scale, &shift, c.bn_eps)?;
                        stats.layers.push((i, mean, var));
                        y
                    }
                    Mode::Infer => {
                        let mean = bind(g, format!("d.c{i}.bn.mean"))?;
                        let var = bind(g, format!("d.c{i}.bn.var"))?;
                        g.batch_norm_infer(&h, &scale, &shift, &mean, &var, c.bn_eps)?
                    }
                };
            }
            h = g.leaky_relu(&h, c.leaky_slope);
        }
        Ok((h, stats))
    }

    /// Dense layers mapping [`features`](Self::features) to scores.
    pub fn head<G: Graph<T>>(&self, g: &mut G, features: &G::Value) -> Result<G::Value> {
        let p = &self.params;
        let mut bind = |name: &str| -> Result<G::Value> { Ok(g.param(name, p.expect(name)?)) };
        let (w1, b1) = (bind("d.fc1.w")?, bind("d.fc1.b")?);
        let (w2, b2) = (bind("d.fc2.w")?, bind("d.fc2.b")?);
        let h = g.dense(features, &w1, &b1)?;
        let h = g.leaky_relu(&h, self.config.leaky_slope);
        g.dense(&h, &w2, &b2)
    }

    /// Per-item scores without recording.
    pub fn scores(&self, x: &Tensor4<T>, mode: Mode) -> Result<(Vec<f64>, BatchStats<T>)> {
        let (s, stats) = self.forward(&mut Eager, x, mode)?;
        Ok((s.data().iter().map(|v| v.f64()).collect(), stats))
    }

    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn apply_batch_stats(&mut self, stats: &BatchStats<T>) -> Result<()> {
        let m = self.config.bn_momentum;
        for (i, mean, var) in &stats.layers {
            for (stat, batch) in [("mean", mean), ("var", var)] {
                let name = format!("d.c{i}.bn.{stat}");
                let run = self
                    .params
                    .get_mut(&name)
                    .ok_or_else(|| Error::Topology(format!("parameter `{name}` not present")))?;
                if run.len() != batch.len() {
                    return Err(Error::shape(
                        "apply_batch_stats",
                        format!("{name}: {} values for {}", batch.len(), run.len()),
                    ));
                }
                for (r, &b) in run.data_mut().iter_mut().zip(batch.iter()) {
                    *r = T::of(m * r.f64() + (1.0 - m) * b.f64());
                }
            }
        }
        Ok(())
    }
}
