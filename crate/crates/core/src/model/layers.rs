//! Differentiable building blocks shared by the encoders, decoders and heads.

use std::cell::RefCell;

use candle_core::{DType, Tensor, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{join, Init, ParamStore};
use crate::error::Result;

/// Forward-pass mode plus the dropout stream.
pub struct Ctx {
    train: bool,
    dropout: f64,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    /// Inference: no dropout.
    pub fn infer() -> Self {
        Self {
            train: false,
            dropout: 0.0,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(dropout: f64, seed: u64) -> Self {
        Self {
            train: true,
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Inverted dropout; identity outside training or when `p == 0`.
    pub fn dropout(&self, x: &Tensor) -> Result<Tensor> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.dropout;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f64> = (0..x.elem_count())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

/// Affine map over the last dimension; weight is `out x in`.
#[derive(Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        Self::with_init(
            store,
            prefix,
            d_in,
            d_out,
            Init::Xavier {
                fan_in: d_in,
                fan_out: d_out,
            },
        )
    }

    pub fn with_init(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        let weight = store.param(&join(prefix, "weight"), &[d_out, d_in], init)?;
        let bias = store.param(&join(prefix, "bias"), &[d_out], Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("linear input has a last dimension");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x
            .reshape((rows, d_in))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.param(&join(prefix, "weight"), &[dim], Init::Ones)?,
            beta: store.param(&join(prefix, "bias"), &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Two affine layers with GELU in between.
#[derive(Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, prefix: &str, d_in: usize, hidden: usize, d_out: usize) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &join(prefix, "fc1"), d_in, hidden)?,
            fc2: Linear::new(store, &join(prefix, "fc2"), hidden, d_out)?,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let h = self.fc1.forward(x)?.gelu_erf()?;
        self.fc2.forward(&ctx.dropout(&h)?)
    }
}

/// Numerically stable log-softmax over the last dimension.
pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let shifted = x.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(D::Minus1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Softmax over the last dimension.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub struct AttentionOutput {
    /// `B x Tq x C`
    pub output: Tensor,
    /// `B x H x Tq x Tk`, rows sum to one.
    pub weights: Tensor,
}

/// Multi-head scaled dot-product attention with separate q/k/v projections.
#[derive(Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, &join(prefix, "q"), dim, dim)?,
            k: Linear::new(store, &join(prefix, "k"), dim, dim)?,
            v: Linear::new(store, &join(prefix, "v"), dim, dim)?,
            out: Linear::new(store, &join(prefix, "out"), dim, dim)?,
            heads,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, c) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, c / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    pub fn forward(&self, query: &Tensor, key: &Tensor, value: &Tensor) -> Result<AttentionOutput> {
        let (b, tq, c) = query.dims3()?;
        let head_dim = c / self.heads;
        let q = self.split_heads(&self.q.forward(query)?)?;
        let k = self.split_heads(&self.k.forward(key)?)?;
        let v = self.split_heads(&self.v.forward(value)?)?;

        let scores = (q.matmul(&k.t()?.contiguous()?)? * (1.0 / (head_dim as f64).sqrt()))?;
        let weights = softmax(&scores)?;
        let mixed = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, tq, c))?;
        Ok(AttentionOutput {
            output: self.out.forward(&mixed)?,
            weights,
        })
    }
}

/// Gathers row `indices[b]` of each batch item: `B x N x C -> B x C`.
pub fn select_rows(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let (b, n, c) = x.dims3()?;
    let flat: Vec<u32> = indices.iter().enumerate().map(|(i, &r)| (i * n + r) as u32).collect();
    let ids = Tensor::from_vec(flat, b, x.device())?;
    Ok(x.reshape((b * n, c))?.index_select(&ids, 0)?)
}

/// Copies a tensor of any float dtype out as `f64`s.
pub fn to_f64_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}
