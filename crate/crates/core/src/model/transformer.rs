//! Pre-norm transformer encoder and parallel (non-autoregressive) decoder.
//!
//! The positional encoding is added to the attention queries and keys of
//! every encoder layer and to the memory keys of every decoder
//! cross-attention; values never carry it.

use candle_core::Tensor;

use super::encoding::TokenSequence;
use super::layers::{Ctx, LayerNorm, Mlp, MultiHeadAttention};
use super::params::{join, ParamStore};
use crate::error::{Error, Result};

/// Attention weights kept from one pass, one entry per layer.
#[derive(Clone, Default)]
pub struct AttentionTrace {
    /// `B x H x Tq x Tk` per layer.
    pub weights: Vec<Tensor>,
}

#[derive(Clone)]
pub struct EncoderLayer {
    norm1: LayerNorm,
    attn: MultiHeadAttention,
    norm2: LayerNorm,
    mlp: Mlp,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &join(prefix, "norm1"), dim)?,
            attn: MultiHeadAttention::new(store, &join(prefix, "self_attn"), dim, heads)?,
            norm2: LayerNorm::new(store, &join(prefix, "norm2"), dim)?,
            mlp: Mlp::new(store, &join(prefix, "mlp"), dim, hidden, dim)?,
        })
    }

    fn forward(&self, z: &Tensor, pos: &Tensor, ctx: &Ctx, trace: Option<&mut AttentionTrace>) -> Result<Tensor> {
        let h = self.norm1.forward(z)?;
        let qk = h.broadcast_add(pos)?;
        let a = self.attn.forward(&qk, &qk, &h)?;
        if let Some(t) = trace {
            t.weights.push(a.weights);
        }
        let z = (z + ctx.dropout(&a.output)?)?;
        let h = self.norm2.forward(&z)?;
        Ok((&z + ctx.dropout(&self.mlp.forward(&h, ctx)?)?)?)
    }
}

#[derive(Clone)]
pub struct EncoderStack {
    layers: Vec<EncoderLayer>,
    norm: LayerNorm,
}

impl EncoderStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| EncoderLayer::new(store, &join(prefix, &format!("layers.{i}")), dim, heads, hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(store, &join(prefix, "norm"), dim)?,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Runs every layer then the final LayerNorm; output shape equals input.
    pub fn encode(
        &self,
        seq: &TokenSequence,
        ctx: &Ctx,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<TokenSequence> {
        let mut z = seq.tokens.clone();
        for layer in &self.layers {
            z = layer.forward(&z, &seq.pos, ctx, trace.as_deref_mut())?;
        }
        Ok(TokenSequence {
            tokens: self.norm.forward(&z)?,
            ..seq.clone()
        })
    }
}

#[derive(Clone)]
pub struct DecoderLayer {
    norm1: LayerNorm,
    self_attn: MultiHeadAttention,
    norm2: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm3: LayerNorm,
    mlp: Mlp,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, heads: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &join(prefix, "norm1"), dim)?,
            self_attn: MultiHeadAttention::new(store, &join(prefix, "self_attn"), dim, heads)?,
            norm2: LayerNorm::new(store, &join(prefix, "norm2"), dim)?,
            cross_attn: MultiHeadAttention::new(store, &join(prefix, "cross_attn"), dim, heads)?,
            norm3: LayerNorm::new(store, &join(prefix, "norm3"), dim)?,
            mlp: Mlp::new(store, &join(prefix, "mlp"), dim, hidden, dim)?,
        })
    }

    fn forward(
        &self,
        t: &Tensor,
        memory: &Tensor,
        memory_keys: &Tensor,
        ctx: &Ctx,
        trace: Option<&mut AttentionTrace>,
    ) -> Result<Tensor> {
        let h = self.norm1.forward(t)?;
        let a = self.self_attn.forward(&h, &h, &h)?;
        let t = (t + ctx.dropout(&a.output)?)?;

        let h = self.norm2.forward(&t)?;
        let a = self.cross_attn.forward(&h, memory_keys, memory)?;
        if let Some(tr) = trace {
            tr.weights.push(a.weights);
        }
        let t = (&t + ctx.dropout(&a.output)?)?;

        let h = self.norm3.forward(&t)?;
        Ok((&t + ctx.dropout(&self.mlp.forward(&h, ctx)?)?)?)
    }
}

#[derive(Clone)]
pub struct DecoderStack {
    layers: Vec<DecoderLayer>,
    norm: LayerNorm,
}

impl DecoderStack {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        depth: usize,
        dim: usize,
        heads: usize,
        hidden: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| DecoderLayer::new(store, &join(prefix, &format!("layers.{i}")), dim, heads, hidden))
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            norm: LayerNorm::new(store, &join(prefix, "norm"), dim)?,
        })
    }

    /// Decodes `N x C_d` queries against the encoder memory into `B x N x C_d`
    /// per-scene embeddings. The trace records cross-attention weights.
    pub fn decode(
        &self,
        memory: &TokenSequence,
        queries: &Tensor,
        expected_queries: usize,
        ctx: &Ctx,
        mut trace: Option<&mut AttentionTrace>,
    ) -> Result<Tensor> {
        let (n, c) = queries.dims2()?;
        if n != expected_queries {
            return Err(Error::Config(format!(
                "decoder got {n} queries, expected {expected_queries}"
            )));
        }
        let b = memory.tokens.dim(0)?;
        let keys = memory.tokens.broadcast_add(&memory.pos)?;
        let mut t = queries.unsqueeze(0)?.broadcast_as((b, n, c))?.contiguous()?;
        for layer in &self.layers {
            t = layer.forward(&t, &memory.tokens, &keys, ctx, trace.as_deref_mut())?;
        }
        self.norm.forward(&t)
    }
}
