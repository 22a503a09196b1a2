//! Layers built on the [`Graph`](crate::Graph) primitives.

use rand_core::RngCore;

use crate::init::{uniform01, xavier_uniform};
use crate::{DiffError, Graph, ParamId, ParamStore, Real, Result, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer `x @ W + b`, weights of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Real, R: RngCore + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier_uniform(rng, in_dim, out_dim));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[out_dim])));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// Batch normalization over the row axis with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

pub const BATCHNORM_MOMENTUM: f64 = 0.1;
pub const BATCHNORM_EPS: f64 = 1e-5;

impl<T: Real> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], T::ONE)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
            running_mean: Tensor::zeros(&[dim]),
            running_var: Tensor::full(&[dim], T::ONE),
            momentum: BATCHNORM_MOMENTUM,
            eps: BATCHNORM_EPS,
        }
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode uses the running estimates only.
    pub fn forward(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, mean, var) = g.batchnorm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                for (r, b) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                    *r = T::from_f64((1.0 - m) * r.to_f64() + m * b);
                }
                for (r, b) in self.running_var.data_mut().iter_mut().zip(&var) {
                    *r = T::from_f64(((1.0 - m) * r.to_f64() + m * b).max(0.0));
                }
                Ok(y)
            }
            Mode::Eval => g.batchnorm_eval(
                x,
                gamma,
                beta,
                &self.running_mean.to_f64_vec(),
                &self.running_var.to_f64_vec(),
                self.eps,
            ),
        }
    }

    pub fn cast<U: Real>(&self) -> BatchNorm<U> {
        BatchNorm {
            gamma: self.gamma,
            beta: self.beta,
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

/// Inverted dropout: in train mode zeroes entries with probability `p` and
/// rescales survivors by `1 / (1 - p)`. Identity in eval mode or for `p == 0`.
pub fn dropout<T: Real, R: RngCore + ?Sized>(
    g: &mut Graph<T>,
    x: Var,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    if !(0.0..1.0).contains(&p) {
        return Err(DiffError::Invalid(format!("dropout rate {p}")));
    }
    let shape = g.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - p);
    let n = g.value(x).numel();
    let mask = (0..n)
        .map(|_| T::from_f64(if uniform01(rng) < p { 0.0 } else { keep }))
        .collect();
    g.mul_const(x, Tensor::new(shape, mask)?)
}

#[derive(Clone, Debug)]
pub struct MlpLayer<T> {
    pub linear: Linear,
    pub norm: Option<BatchNorm<T>>,
    pub relu: bool,
}

/// Stack of `linear -> [batchnorm] -> relu` hidden layers and a final linear
/// layer with an optional ReLU.
///
/// Linear layers that feed a batch normalization carry no bias, since the
/// normalization removes it.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<MlpLayer<T>>,
    pub dropout: f64,
}

impl<T: Real> Mlp<T> {
    /// `dims` lists the input width, hidden widths and output width.
    pub fn new<R: RngCore + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dims: &[usize],
        batchnorm: bool,
        output_relu: bool,
        dropout: f64,
        rng: &mut R,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let last = i + 1 == n;
                let name = format!("{name}.{i}");
                let norm = !last && batchnorm;
                MlpLayer {
                    linear: Linear::new(store, &name, dims[i], dims[i + 1], !norm, rng),
                    norm: norm.then(|| BatchNorm::new(store, &format!("{name}.bn"), dims[i + 1])),
                    relu: !last || output_relu,
                }
            })
            .collect();
        Mlp { layers, dropout }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].linear.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.linear.out_dim)
    }

    pub fn forward<R: RngCore + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let n = self.layers.len();
        let mut h = x;
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.linear.forward(g, store, h)?;
            if let Some(bn) = &mut layer.norm {
                h = bn.forward(g, store, h, mode)?;
            }
            if layer.relu {
                h = g.relu(h);
            }
            if i + 1 < n {
                h = dropout(g, h, self.dropout, mode, rng)?;
            }
        }
        Ok(h)
    }

    pub fn norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.layers.iter().filter_map(|l| l.norm.as_ref())
    }

    pub fn norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.layers.iter_mut().filter_map(|l| l.norm.as_mut())
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.linear.weight);
            out.extend(l.linear.bias);
            if let Some(bn) = &l.norm {
                out.push(bn.gamma);
                out.push(bn.beta);
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| MlpLayer {
                    linear: l.linear.clone(),
                    norm: l.norm.as_ref().map(|b| b.cast()),
                    relu: l.relu,
                })
                .collect(),
            dropout: self.dropout,
        }
    }
}
