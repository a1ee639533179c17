use super::forward::{in_layer, Forward};
use super::init::Builder;
use super::params::ParamId;
use crate::autodiff::{Element, Var};
use crate::error::Result;

/// Affine map over the last axis: `x · W + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub units_in: usize,
    pub units_out: usize,
}

impl Dense {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, units_in: usize, units_out: usize) -> Result<Self> {
        b.push(name);
        let kernel = b.glorot("kernel", &[units_in, units_out])?;
        let bias = b.constant("bias", &[units_out], 0.0, true)?;
        b.pop();
        Ok(Dense {
            name: b.path(name),
            kernel,
            bias,
            units_in,
            units_out,
        })
    }

    pub fn param_count(&self) -> usize {
        self.units_in * self.units_out + self.units_out
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        in_layer(&self.name, || {
            let (w, b) = (cx.param(self.kernel), cx.param(self.bias));
            let y = cx.tape.matmul(x, w)?;
            cx.tape.add(y, b)
        })
    }
}

/// Two-way output head: dense layer followed by a softmax.
#[derive(Clone, Debug)]
pub struct DenseSoftmax {
    pub dense: Dense,
}

impl DenseSoftmax {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, units_in: usize, classes: usize) -> Result<Self> {
        Ok(DenseSoftmax {
            dense: Dense::new(b, name, units_in, classes)?,
        })
    }

    pub fn param_count(&self) -> usize {
        self.dense.param_count()
    }

    /// Returns `(logits, probabilities)`.
    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<(Var, Var)> {
        let logits = self.dense.forward(cx, x)?;
        let axis = cx.tape.shape(logits).len() - 1;
        let probs = in_layer(&self.dense.name, || cx.tape.softmax(logits, axis))?;
        Ok((logits, probs))
    }
}
