use super::conv::Conv1d;
use super::dense::Dense;
use super::forward::{in_layer, Forward};
use super::init::Builder;
use crate::autodiff::{Element, Var};
use crate::error::{Error, Result};

/// Scaled dot-product self-attention with `heads` parallel heads of width
/// `key_dim`, concatenated and projected back to the model width.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub name: String,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub output: Dense,
    pub heads: usize,
    pub key_dim: usize,
    pub width: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, width: usize, heads: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "{name}: {heads} heads do not divide model width {width}"
            )));
        }
        let key_dim = width / heads;
        b.push(name);
        let inner = heads * key_dim;
        let query = Dense::new(b, "query", width, inner)?;
        let key = Dense::new(b, "key", width, inner)?;
        let value = Dense::new(b, "value", width, inner)?;
        let output = Dense::new(b, "output", inner, width)?;
        b.pop();
        Ok(MultiHeadAttention {
            name: b.path(name),
            query,
            key,
            value,
            output,
            heads,
            key_dim,
            width,
        })
    }

    pub fn param_count(&self) -> usize {
        self.query.param_count() + self.key.param_count() + self.value.param_count() + self.output.param_count()
    }

    /// `[B, T, d]` → `[B·h, T, d_k]`.
    fn split_heads<T: Element>(&self, cx: &mut Forward<T>, x: Var, b: usize, t: usize) -> Result<Var> {
        let x = cx.tape.reshape(x, &[b, t, self.heads, self.key_dim])?;
        let x = cx.tape.permute(x, &[0, 2, 1, 3])?;
        cx.tape.reshape(x, &[b * self.heads, t, self.key_dim])
    }

    /// Returns the output `[B, T, d]` and the attention weights `[B·h, T, T]`
    /// (head-major within each sample).
    pub fn forward_with_weights<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<(Var, Var)> {
        let shape = cx.shape(x);
        if shape.len() != 3 || shape[2] != self.width {
            return Err(Error::shape("multi_head_attention", &shape, &[self.width]).in_layer(&self.name));
        }
        let (b, t) = (shape[0], shape[1]);
        let q = self.query.forward(cx, x)?;
        let k = self.key.forward(cx, x)?;
        let v = self.value.forward(cx, x)?;
        let (ctx, weights) = in_layer(&self.name, || {
            let q = self.split_heads(cx, q, b, t)?;
            let k = self.split_heads(cx, k, b, t)?;
            let v = self.split_heads(cx, v, b, t)?;
            let logits = cx.tape.matmul_t(q, k, false, true)?;
            let logits = cx.tape.scale(logits, 1.0 / (self.key_dim as f64).sqrt());
            let weights = cx.tape.softmax(logits, 2)?;
            let heads = cx.tape.matmul(weights, v)?;
            let heads = cx.tape.reshape(heads, &[b, self.heads, t, self.key_dim])?;
            let heads = cx.tape.permute(heads, &[0, 2, 1, 3])?;
            let ctx = cx.tape.reshape(heads, &[b, t, self.heads * self.key_dim])?;
            Ok((ctx, weights))
        })?;
        let out = self.output.forward(cx, ctx)?;
        Ok((out, weights))
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        self.forward_with_weights(cx, x).map(|(o, _)| o)
    }
}

/// Linear kernel-1 convolution `C`, self-attention `M = MHA(C)`, output `C ⊙ M`.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub name: String,
    pub conv: Conv1d,
    pub mha: MultiHeadAttention,
}

impl AttentionBlock {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels_in: usize, width: usize, kernel: usize, heads: usize) -> Result<Self> {
        b.push(name);
        let conv = Conv1d::new(b, "conv", kernel, channels_in, width)?;
        let mha = MultiHeadAttention::new(b, "mha", width, heads)?;
        b.pop();
        Ok(AttentionBlock {
            name: b.path(name),
            conv,
            mha,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.mha.param_count()
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, p: Var, trace_block: &str) -> Result<Var> {
        let c = self.conv.forward(cx, p)?;
        cx.record(trace_block, "Convolution1D", c);
        let m = self.mha.forward(cx, c)?;
        cx.record(trace_block, "MultiHeadAttention", m);
        let y = in_layer(&format!("{}/multiply", self.name), || cx.tape.mul(c, m))?;
        cx.record(trace_block, "Multiply", y);
        Ok(y)
    }
}
