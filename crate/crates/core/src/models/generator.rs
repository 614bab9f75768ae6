use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{he_normal, Eager, Graph, Padding, ParameterSet};
use crate::tensor::{Scalar, Shape, Tensor4};

/// Image channels in and out of both networks.
pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub num_residual_blocks: usize,
    pub feature_width: usize,
    pub kernel_size: usize,
    pub input_block_size: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_residual_blocks: 16,
            feature_width: 64,
            kernel_size: 3,
            input_block_size: 96,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_residual_blocks == 0 {
            return Err(Error::Invalid(
                "generator needs at least one residual block".into(),
            ));
        }
        if self.feature_width == 0 {
            return Err(Error::Invalid(
                "generator feature width must be positive".into(),
            ));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::Invalid(format!(
                "kernel size {} is not odd",
                self.kernel_size
            )));
        }
        if self.input_block_size < 16 {
            return Err(Error::Invalid(format!(
                "input block size {} is below 16",
                self.input_block_size
            )));
        }
        Ok(())
    }

    /// Parameter tensors in creation order as `(name, shape, fan_in)`;
    /// `fan_in == 0` marks tensors that are not He-initialised.
    pub(crate) fn layout(&self) -> Vec<(String, Shape, usize)> {
        let (w, k) = (self.feature_width, self.kernel_size);
        let conv = |name: &str, cin: usize, cout: usize| {
            [
                (
                    format!("{name}.w"),
                    Shape::new(cout, cin, k, k),
                    cin * k * k,
                ),
                (format!("{name}.b"), Shape::new(1, cout, 1, 1), 0),
            ]
        };
        let mut out = Vec::new();
        out.extend(conv("g.in", CHANNELS, w));
        out.push(("g.in.a".to_string(), Shape::new(1, w, 1, 1), 0));
        for i in 0..self.num_residual_blocks {
            out.extend(conv(&format!("g.rb{i}.c1"), w, w));
            out.push((format!("g.rb{i}.a"), Shape::new(1, w, 1, 1), 0));
            out.extend(conv(&format!("g.rb{i}.c2"), w, w));
        }
        out.extend(conv("g.post", w, w));
        out.extend(conv("g.out", w, CHANNELS));
        out
    }
}

/// Residual-block generator.
///
/// `x0 = PReLU(conv(x))`, each block adds `conv(PReLU(conv(h)))` to its
/// input, `z = conv(h_N) + x0`, and the result is `tanh(conv(z) + x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub config: GeneratorConfig,
    pub params: ParameterSet<T>,
}

impl<T: Scalar> Generator<T> {
    /// Deterministic initialisation from `seed`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParameterSet::new();
        for (name, shape, fan_in) in config.layout() {
            let value = if fan_in > 0 {
                he_normal(shape, fan_in, &mut rng)
            } else if name.ends_with(".a") {
                Tensor4::full(shape, T::of(0.25))
            } else {
                Tensor4::zeros(shape)
            };
            params.insert(name, value, true)?;
        }
        Ok(Generator { config, params })
    }

    /// All-zero parameters with the right layout, for loaders to fill.
    pub fn zeroed(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape, _) in config.layout() {
            params.insert(name, Tensor4::zeros(shape), true)?;
        }
        Ok(Generator { config, params })
    }

    /// Wraps existing parameters after checking they fit `config`.
    pub fn from_params(config: GeneratorConfig, params: ParameterSet<T>) -> Result<Self> {
        config.validate()?;
        check_layout(&config.layout(), &params, "generator")?;
        Ok(Generator { config, params })
    }

    pub fn input_shape(&self, n: usize) -> Shape {
        let b = self.config.input_block_size;
        Shape::new(n, CHANNELS, b, b)
    }

    /// Wires the network onto `g`.
    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let s = g.value(x).shape();
        if s.n == 0 || s != self.input_shape(s.n) {
            return Err(Error::shape(
                "generator",
                format!(
                    "expected (n,{CHANNELS},{b},{b}), got {s}",
                    b = self.config.input_block_size
                ),
            ));
        }
        let same = Padding::Same;
        let p = &self.params;
        let conv = |g: &mut G, x: &G::Value, name: &str| -> Result<G::Value> {
            let w = g.param(&format!("{name}.w"), p.expect(&format!("{name}.w"))?);
            let b = g.param(&format!("{name}.b"), p.expect(&format!("{name}.b"))?);
            g.conv2d(x, &w, &b, 1, same)
        };
        let prelu = |g: &mut G, x: &G::Value, name: &str| -> Result<G::Value> {
            let a = g.param(name, p.expect(name)?);
            g.prelu(x, &a)
        };

        let t = conv(g, x, "g.in")?;
        let x0 = prelu(g, &t, "g.in.a")?;
        let mut h = x0.clone();
        for i in 0..self.config.num_residual_blocks {
            let t = conv(g, &h, &format!("g.rb{i}.c1"))?;
            let t = prelu(g, &t, &format!("g.rb{i}.a"))?;
            let t = conv(g, &t, &format!("g.rb{i}.c2"))?;
            h = g.add(&h, &t)?;
        }
        let t = conv(g, &h, "g.post")?;
        let z = g.add(&t, &x0)?;
        let o = conv(g, &z, "g.out")?;
        let o = g.add(&o, x)?;
        Ok(g.tanh(&o))
    }

    /// Forward pass without recording.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.forward(&mut Eager, x)
    }
}

pub(crate) fn check_layout<T: Scalar>(
    layout: &[(String, Shape, usize)],
    params: &ParameterSet<T>,
    what: &str,
) -> Result<()> {
    let names: Vec<&str> = params.names().collect();
    if names.len() != layout.len() {
        return Err(Error::Topology(format!(
            "{what} has {} parameter tensors, configuration expects {}",
            names.len(),
            layout.len()
        )));
    }
    for ((name, shape, _), have) in layout.iter().zip(names) {
        let t = params.expect(name)?;
        if have != name || t.shape() != *shape {
            return Err(Error::Topology(format!(
                "{what} parameter `{have}` {} does not match `{name}` {shape}",
                t.shape()
            )));
        }
    }
    Ok(())
}
