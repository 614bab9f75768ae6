//! Reverse-mode differentiation over a recorded operation list.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::losses::{self, SsimParams};
use crate::nn::graph::Graph;
use crate::nn::ops::{self, Padding};
use crate::nn::params::{Gradients, ParameterSet};
use crate::tensor::{Scalar, Shape, Tensor4};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    },
    Prelu {
        x: Var,
        slope: Var,
    },
    Leaky {
        x: Var,
        slope: f64,
    },
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    BnTrain {
        scale: Var,
        shift: Var,
        x: Var,
        normalized: Tensor4<T>,
        inv_std: Vec<T>,
    },
    BnInfer {
        x: Var,
        scale: Var,
        shift: Var,
        mean: Var,
        var: Var,
        eps: f64,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    /// Scalar `offset + sum(k * v)`.
    Linear(Vec<(Var, f64)>),
    L1(Var, Var),
    Mse(Var, Var),
    Ssim(Var, Var, Box<SsimParams>),
    MsSsim(Var, Var, Box<SsimParams>),
    Ragan {
        real: Var,
        fake: Var,
        generator: bool,
    },
}

struct Node<T> {
    value: Tensor4<T>,
    op: Op<T>,
}

/// Records a forward pass so gradients can be pulled back from a scalar.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: IndexMap::new(),
        }
    }

    fn push(&mut self, value: Tensor4<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor4<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Scalar value of a `(1,1,1,1)` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.val(v).item().map(Scalar::f64)
    }

    /// Sum of all elements.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.val(x).sum();
        self.push(Tensor4::scalar(s), Op::Sum(x))
    }

    /// `offset + sum(k_i * v_i)` over scalar nodes.
    pub fn linear(&mut self, terms: &[(Var, f64)], offset: f64) -> Result<Var> {
        let mut acc = offset;
        for &(v, k) in terms {
            acc += k * self.scalar(v)?;
        }
        Ok(self.push(Tensor4::scalar(T::of(acc)), Op::Linear(terms.to_vec())))
    }

    pub fn l1(&mut self, output: Var, target: Var) -> Result<Var> {
        let v = losses::l1_loss(self.val(output), self.val(target))?;
        Ok(self.push(Tensor4::scalar(T::of(v)), Op::L1(output, target)))
    }

    pub fn mse(&mut self, output: Var, target: Var) -> Result<Var> {
        let v = losses::mse_loss(self.val(output), self.val(target))?;
        Ok(self.push(Tensor4::scalar(T::of(v)), Op::Mse(output, target)))
    }

    pub fn ssim(&mut self, a: Var, b: Var, params: &SsimParams) -> Result<Var> {
        let v = losses::ssim(self.val(a), self.val(b), params)?;
        Ok(self.push(
            Tensor4::scalar(T::of(v)),
            Op::Ssim(a, b, Box::new(params.clone())),
        ))
    }

    pub fn ms_ssim(&mut self, a: Var, b: Var, params: &SsimParams) -> Result<Var> {
        let v = losses::ms_ssim(self.val(a), self.val(b), params)?;
        Ok(self.push(
            Tensor4::scalar(T::of(v)),
            Op::MsSsim(a, b, Box::new(params.clone())),
        ))
    }

    fn scores(&self, v: Var) -> Vec<f64> {
        self.val(v).data().iter().map(|s| s.f64()).collect()
    }

    /// Relativistic-average generator loss over two score tensors.
    pub fn ragan_generator(&mut self, real: Var, fake: Var) -> Result<Var> {
        let v = losses::ragan_generator_loss(&self.scores(real), &self.scores(fake))?;
        Ok(self.push(
            Tensor4::scalar(T::of(v)),
            Op::Ragan {
                real,
                fake,
                generator: true,
            },
        ))
    }

    pub fn ragan_discriminator(&mut self, real: Var, fake: Var) -> Result<Var> {
        let v = losses::ragan_discriminator_loss(&self.scores(real), &self.scores(fake))?;
        Ok(self.push(
            Tensor4::scalar(T::of(v)),
            Op::Ragan {
                real,
                fake,
                generator: false,
            },
        ))
    }

    /// Binds every parameter of a set; returns nothing because lookups go
    /// through [`Graph::param`] by name.
    pub fn bind_all(&mut self, params: &ParameterSet<T>) {
        for (name, p) in params.iter() {
            self.param(name, &p.value);
        }
    }

    /// Runs the backward pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        if self.val(loss).shape() != Shape::scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {}", self.val(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor4::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Grads {
            nodes: grads,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn backward_node(
        &self,
        i: usize,
        g: &Tensor4<T>,
        grads: &mut [Option<Tensor4<T>>],
    ) -> Result<()> {
        let mut acc = |v: Var, d: Tensor4<T>| -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => {
                    *slot = Some(d);
                    Ok(())
                }
            }
        };
        let gs = || g.data()[0].f64();
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Conv {
                x,
                w,
                b,
                stride,
                padding,
            } => {
                let r = ops::conv2d_backward(self.val(x), self.val(w), g, stride, padding)?;
                acc(x, r.input)?;
                acc(w, r.kernel)?;
                acc(b, r.bias.reshape(self.val(b).shape())?)?;
            }
            &Op::Prelu { x, slope } => {
                let (dx, ds) = ops::prelu_backward(self.val(x), self.val(slope), g)?;
                acc(x, dx)?;
                acc(slope, ds.reshape(self.val(slope).shape())?)?;
            }
            &Op::Leaky { x, slope } => acc(x, ops::leaky_relu_backward(self.val(x), slope, g)?)?,
            &Op::Tanh(x) => acc(x, ops::tanh_backward(&self.nodes[i].value, g)?)?,
            &Op::Sigmoid(x) => acc(x, ops::sigmoid_backward(&self.nodes[i].value, g)?)?,
            &Op::Add(a, b) => {
                acc(a, g.clone())?;
                acc(b, g.clone())?;
            }
            Op::BnTrain {
                x,
                scale,
                shift,
                normalized,
                inv_std,
            } => {
                let (dx, dscale, dshift) =
                    ops::batch_norm_train_backward(normalized, inv_std, self.val(*scale), g)?;
                acc(*x, dx)?;
                acc(*scale, dscale.reshape(self.val(*scale).shape())?)?;
                acc(*shift, dshift.reshape(self.val(*shift).shape())?)?;
            }
            &Op::BnInfer {
                x,
                scale,
                shift,
                mean,
                var,
                eps,
            } => {
                let (dx, dscale, dshift) = ops::batch_norm_infer_backward(
                    self.val(x),
                    self.val(scale),
                    self.val(mean),
                    self.val(var),
                    eps,
                    g,
                )?;
                acc(x, dx)?;
                acc(scale, dscale.reshape(self.val(scale).shape())?)?;
                acc(shift, dshift.reshape(self.val(shift).shape())?)?;
            }
            &Op::Dense { x, w, b } => {
                let (dx, dw, db) = ops::dense_backward(self.val(x), self.val(w), g)?;
                acc(x, dx)?;
                acc(w, dw)?;
                acc(b, db.reshape(self.val(b).shape())?)?;
            }
            &Op::Sum(x) => acc(x, Tensor4::full(self.val(x).shape(), g.data()[0]))?,
            Op::Linear(terms) => {
                for &(v, k) in terms {
                    acc(v, Tensor4::scalar(T::of(k * gs())))?;
                }
            }
            &Op::L1(a, b) => {
                let d = losses::l1_backward(self.val(a), self.val(b), gs())?;
                acc(b, d.map(|v| -v))?;
                acc(a, d)?;
            }
            &Op::Mse(a, b) => {
                let d = losses::mse_backward(self.val(a), self.val(b), gs())?;
                acc(b, d.map(|v| -v))?;
                acc(a, d)?;
            }
            Op::Ssim(a, b, p) => {
                let (da, db) = losses::ssim_backward(self.val(*a), self.val(*b), p, gs())?;
                acc(*a, da)?;
                acc(*b, db)?;
            }
            Op::MsSsim(a, b, p) => {
                let (da, db) = losses::ms_ssim_backward(self.val(*a), self.val(*b), p, gs())?;
                acc(*a, da)?;
                acc(*b, db)?;
            }
            &Op::Ragan {
                real,
                fake,
                generator,
            } => {
                let (r, f) = (self.scores(real), self.scores(fake));
                let (_, dr, df) = if generator {
                    losses::ragan_generator_grad(&r, &f)?
                } else {
                    losses::ragan_discriminator_grad(&r, &f)?
                };
                let k = gs();
                let to_t = |v: Vec<f64>, shape| {
                    Tensor4::from_vec(shape, v.into_iter().map(|d| T::of(d * k)).collect())
                };
                acc(real, to_t(dr, self.val(real).shape())?)?;
                acc(fake, to_t(df, self.val(fake).shape())?)?;
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Grads<T> {
    nodes: Vec<Option<Tensor4<T>>>,
    params: IndexMap<String, Var>,
    shapes: Vec<Shape>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the loss with respect to any node; zeros if the node does
    /// not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor4<T> {
        self.nodes[v.0]
            .clone()
            .unwrap_or_else(|| Tensor4::zeros(self.shapes[v.0]))
    }

    /// Gradient for every parameter in `params`. Parameters that were not
    /// bound or not reached get exact zeros.
    pub fn for_params(&self, params: &ParameterSet<T>) -> Gradients<T> {
        let mut out = Gradients::new();
        for (name, p) in params.iter() {
            let g = self
                .params
                .get(name)
                .and_then(|v| self.nodes[v.0].clone())
                .unwrap_or_else(|| Tensor4::zeros(p.value.shape()));
            out.insert(name, g);
        }
        out
    }
}

impl<T: Scalar> Graph<T> for Tape<T> {
    type Value = Var;

    fn constant(&mut self, t: Tensor4<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    fn param(&mut self, name: &str, t: &Tensor4<T>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.push(t.clone(), Op::Leaf);
        self.params.insert(name.to_string(), v);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor4<T> {
        self.val(*v)
    }

    fn conv2d(
        &mut self,
        x: &Var,
        w: &Var,
        b: &Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let y = ops::conv2d(self.val(*x), self.val(*w), self.val(*b), stride, padding)?;
        Ok(self.push(
            y,
            Op::Conv {
                x: *x,
                w: *w,
                b: *b,
                stride,
                padding,
            },
        ))
    }

    fn prelu(&mut self, x: &Var, slope: &Var) -> Result<Var> {
        let y = ops::prelu(self.val(*x), self.val(*slope))?;
        Ok(self.push(
            y,
            Op::Prelu {
                x: *x,
                slope: *slope,
            },
        ))
    }

    fn leaky_relu(&mut self, x: &Var, slope: f64) -> Var {
        let y = ops::leaky_relu(self.val(*x), slope);
        self.push(y, Op::Leaky { x: *x, slope })
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let y = ops::tanh(self.val(*x));
        self.push(y, Op::Tanh(*x))
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = ops::sigmoid(self.val(*x));
        self.push(y, Op::Sigmoid(*x))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let mut y = self.val(*a).clone();
        y.add_assign(self.val(*b))?;
        Ok(self.push(y, Op::Add(*a, *b)))
    }

    fn batch_norm_train(
        &mut self,
        x: &Var,
        scale: &Var,
        shift: &Var,
        eps: f64,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        let bn = ops::batch_norm_train(self.val(*x), self.val(*scale), self.val(*shift), eps)?;
        let v = self.push(
            bn.output,
            Op::BnTrain {
                x: *x,
                scale: *scale,
                shift: *shift,
                normalized: bn.normalized,
                inv_std: bn.inv_std,
            },
        );
        Ok((v, bn.batch_mean, bn.batch_var))
    }

    fn batch_norm_infer(
        &mut self,
        x: &Var,
        scale: &Var,
        shift: &Var,
        running_mean: &Var,
        running_var: &Var,
        eps: f64,
    ) -> Result<Var> {
        let y = ops::batch_norm_infer(
            self.val(*x),
            self.val(*scale),
            self.val(*shift),
            self.val(*running_mean),
            self.val(*running_var),
            eps,
        )?;
        Ok(self.push(
            y,
            Op::BnInfer {
                x: *x,
                scale: *scale,
                shift: *shift,
                mean: *running_mean,
                var: *running_var,
                eps,
            },
        ))
    }

    fn dense(&mut self, x: &Var, w: &Var, b: &Var) -> Result<Var> {
        let y = ops::dense(self.val(*x), self.val(*w), self.val(*b))?;
        Ok(self.push(
            y,
            Op::Dense {
                x: *x,
                w: *w,
                b: *b,
            },
        ))
    }
}
