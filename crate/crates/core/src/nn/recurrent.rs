use super::forward::{in_layer, Forward};
use super::init::Builder;
use super::params::ParamId;
use crate::autodiff::{Element, Tensor, Var};
use crate::error::{Error, Result};

/// Long short-term memory layer. Gate blocks in the fused kernels are
/// ordered input, forget, candidate, output.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub name: String,
    pub kernel: ParamId,
    pub recurrent: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config(format!("{name}: LSTM sizes must be positive")));
        }
        b.push(name);
        let kernel = b.glorot("kernel", &[input, 4 * hidden])?;
        let recurrent = b.orthogonal("recurrent_kernel", hidden, 4 * hidden)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        let bias = b.add("bias", &[4 * hidden], &bias, true)?;
        b.pop();
        Ok(Lstm {
            name: b.path(name),
            kernel,
            recurrent,
            bias,
            input,
            hidden,
        })
    }

    pub fn param_count(&self) -> usize {
        4 * self.hidden * (self.input + self.hidden + 1)
    }

    /// One step from the pre-computed input projection `xw_t = x_t·W + b`.
    fn step<T: Element>(&self, cx: &mut Forward<T>, xw_t: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let u = cx.param(self.recurrent);
        let hu = cx.tape.matmul(h, u)?;
        let z = cx.tape.add(xw_t, hu)?;
        let zi = cx.tape.slice(z, 1, 0, hd)?;
        let zf = cx.tape.slice(z, 1, hd, hd)?;
        let zc = cx.tape.slice(z, 1, 2 * hd, hd)?;
        let zo = cx.tape.slice(z, 1, 3 * hd, hd)?;
        let i = cx.tape.sigmoid(zi);
        let f = cx.tape.sigmoid(zf);
        let g = cx.tape.tanh(zc);
        let o = cx.tape.sigmoid(zo);
        let keep = cx.tape.mul(f, c)?;
        let write = cx.tape.mul(i, g)?;
        let c = cx.tape.add(keep, write)?;
        let tc = cx.tape.tanh(c);
        let h = cx.tape.mul(o, tc)?;
        Ok((h, c))
    }

    /// A single cell update: `x_t [B, d]`, `h, c [B, H]` → `(h_t, c_t)`.
    pub fn cell<T: Element>(&self, cx: &mut Forward<T>, x_t: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        in_layer(&self.name, || {
            let (w, b) = (cx.param(self.kernel), cx.param(self.bias));
            let xw = cx.tape.matmul(x_t, w)?;
            let xw = cx.tape.add(xw, b)?;
            self.step(cx, xw, h, c)
        })
    }

    /// Hidden states for every position of `x [B, T, d]`, indexed by
    /// position. With `reverse` the scan runs from `T` down to 1.
    pub fn scan<T: Element>(&self, cx: &mut Forward<T>, x: Var, reverse: bool) -> Result<Vec<Var>> {
        in_layer(&self.name, || {
            let shape = cx.shape(x);
            if shape.len() != 3 || shape[2] != self.input {
                return Err(Error::shape("lstm", &shape, &[self.input]));
            }
            let (b, t) = (shape[0], shape[1]);
            let (w, bias) = (cx.param(self.kernel), cx.param(self.bias));
            let xw = cx.tape.matmul(x, w)?;
            let xw = cx.tape.add(xw, bias)?;
            let mut h = cx.constant(Tensor::zeros(&[b, self.hidden]));
            let mut c = cx.constant(Tensor::zeros(&[b, self.hidden]));
            let mut out = vec![h; t];
            let order: Vec<usize> = if reverse { (0..t).rev().collect() } else { (0..t).collect() };
            for pos in order {
                let xt = cx.tape.slice(xw, 1, pos, 1)?;
                let xt = cx.tape.reshape(xt, &[b, 4 * self.hidden])?;
                (h, c) = self.step(cx, xt, h, c)?;
                out[pos] = h;
            }
            Ok(out)
        })
    }

    /// Final hidden state `[B, H]`.
    pub fn last<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        let states = self.scan(cx, x, false)?;
        states
            .last()
            .copied()
            .ok_or_else(|| Error::Contract(format!("{}: empty sequence", self.name)))
    }

    /// Full output sequence `[B, T, H]`.
    pub fn sequence<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        let states = self.scan(cx, x, false)?;
        stack_time(cx, &states, &self.name)
    }
}

fn stack_time<T: Element>(cx: &mut Forward<T>, states: &[Var], name: &str) -> Result<Var> {
    in_layer(name, || {
        let mut parts = Vec::with_capacity(states.len());
        for &s in states {
            let sh = cx.shape(s);
            parts.push(cx.tape.reshape(s, &[sh[0], 1, sh[1]])?);
        }
        cx.tape.concat(&parts, 1)
    })
}

/// Forward and backward LSTMs over the same input, summed position-wise.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub name: String,
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, input: usize, hidden: usize) -> Result<Self> {
        b.push(name);
        let forward = Lstm::new(b, "forward", input, hidden)?;
        let backward = Lstm::new(b, "backward", input, hidden)?;
        b.pop();
        Ok(BiLstm {
            name: b.path(name),
            forward,
            backward,
        })
    }

    pub fn param_count(&self) -> usize {
        self.forward.param_count() + self.backward.param_count()
    }

    /// `[B, T, d]` → `[B, T, H]`.
    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        let fwd = self.forward.scan(cx, x, false)?;
        let bwd = self.backward.scan(cx, x, true)?;
        let f = stack_time(cx, &fwd, &self.name)?;
        let b = stack_time(cx, &bwd, &self.name)?;
        in_layer(&self.name, || cx.tape.add(f, b))
    }
}
