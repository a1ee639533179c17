use rand::Rng;
use serde::{Deserialize, Serialize};

use super::forward::{in_layer, Forward};
use super::init::Builder;
use super::params::ParamId;
use crate::autodiff::{Element, Padding, Tensor, Var};
use crate::error::{Error, Result};

/// `max(0, x) + a·min(0, x)` with one slope per channel (last axis).
#[derive(Clone, Debug)]
pub struct PRelu {
    pub name: String,
    pub alpha: ParamId,
    pub channels: usize,
}

impl PRelu {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels: usize, init: f64) -> Result<Self> {
        let alpha = b.constant(&format!("{name}/alpha"), &[channels], init, true)?;
        Ok(PRelu {
            name: b.path(name),
            alpha,
            channels,
        })
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        in_layer(&self.name, || {
            let a = cx.param(self.alpha);
            let pos = cx.tape.relu(x);
            let nx = cx.tape.neg(x);
            let neg = cx.tape.relu(nx);
            let scaled = cx.tape.mul(neg, a)?;
            cx.tape.sub(pos, scaled)
        })
    }
}

/// Batch normalisation over every axis but the last.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        b.push(name);
        let gamma = b.constant("gamma", &[channels], 1.0, true)?;
        let beta = b.constant("beta", &[channels], 0.0, true)?;
        let running_mean = b.constant("running_mean", &[channels], 0.0, false)?;
        let running_var = b.constant("running_var", &[channels], 1.0, false)?;
        b.pop();
        Ok(BatchNorm {
            name: b.path(name),
            gamma,
            beta,
            running_mean,
            running_var,
            momentum,
            eps,
            channels,
        })
    }

    /// Train mode normalises with (biased) batch statistics and queues the
    /// moving-average update; infer mode uses the running statistics.
    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        in_layer(&self.name, || {
            let shape = cx.shape(x);
            let c = *shape.last().unwrap_or(&0);
            if c != self.channels {
                return Err(Error::shape("batch_norm", &shape, &[self.channels]));
            }
            let (gamma, beta) = (cx.param(self.gamma), cx.param(self.beta));
            let rows = shape.iter().product::<usize>() / c.max(1);
            let (centered, inv_std) = if cx.training() {
                let flat = cx.tape.reshape(x, &[rows, c])?;
                let mean = cx.tape.mean_axis(flat, 0, true)?;
                let centered = cx.tape.sub(flat, mean)?;
                let sq = cx.tape.square(centered)?;
                let var = cx.tape.mean_axis(sq, 0, true)?;
                let shifted = cx.tape.add_scalar(var, self.eps);
                let std = cx.tape.sqrt(shifted);
                let inv = cx.tape.recip(std);
                let momentum = cx.ema_momentum(self.momentum);
                let m = T::of(momentum);
                let one_m = T::of(1.0 - momentum);
                let blend = |old: &Tensor<T>, new: &Tensor<T>| {
                    let data = old.data().iter().zip(new.data()).map(|(&o, &n)| o * m + n * one_m).collect();
                    Tensor::from_vec(old.shape(), data).expect("bn stat shape")
                };
                let new_mean = blend(cx.params().value(self.running_mean), cx.value(mean));
                let new_var = blend(cx.params().value(self.running_var), cx.value(var));
                cx.push_bn_update(self.running_mean, new_mean);
                cx.push_bn_update(self.running_var, new_var);
                let centered = cx.tape.reshape(centered, &shape)?;
                let inv = cx.tape.reshape(inv, &[c])?;
                (centered, inv)
            } else {
                let rm = cx.param(self.running_mean);
                let rv = cx.param(self.running_var);
                let centered = cx.tape.sub(x, rm)?;
                let shifted = cx.tape.add_scalar(rv, self.eps);
                let std = cx.tape.sqrt(shifted);
                (centered, cx.tape.recip(std))
            };
            let normed = cx.tape.mul(centered, inv_std)?;
            let scaled = cx.tape.mul(normed, gamma)?;
            cx.tape.add(scaled, beta)
        })
    }
}

/// Drops whole channels of `[B, L, C]` in train mode, scaling survivors by
/// `1/(1−p)`. Identity in infer mode.
pub fn spatial_dropout<T: Element>(cx: &mut Forward<T>, x: Var, rate: f64) -> Result<Var> {
    if !cx.training() || rate == 0.0 {
        return Ok(x);
    }
    let shape = cx.shape(x);
    if shape.len() != 3 {
        return Err(Error::shape("spatial_dropout", &shape, &[]));
    }
    let (b, c) = (shape[0], shape[2]);
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..b * c)
        .map(|_| if cx.rng().random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let m = cx.constant(Tensor::from_vec(&[b, 1, c], mask)?);
    cx.tape.mul(x, m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub size: usize,
    pub stride: usize,
    pub padding: Padding,
}

/// Hyper-parameters of one convolution block.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlockConfig {
    pub filters: usize,
    pub kernel: usize,
    pub pool: PoolConfig,
    pub dropout: f64,
}

/// 'same' cross-correlation plus bias over `[B, L, C_in]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub channels_in: usize,
    pub filters: usize,
}

impl Conv1d {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, width: usize, channels_in: usize, filters: usize) -> Result<Self> {
        b.push(name);
        let kernel = b.glorot("kernel", &[width, channels_in, filters])?;
        let bias = b.constant("bias", &[filters], 0.0, true)?;
        b.pop();
        Ok(Conv1d {
            name: b.path(name),
            kernel,
            bias,
            width,
            channels_in,
            filters,
        })
    }

    pub fn param_count(&self) -> usize {
        self.width * self.channels_in * self.filters + self.filters
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var) -> Result<Var> {
        in_layer(&self.name, || {
            let (w, b) = (cx.param(self.kernel), cx.param(self.bias));
            let y = cx.tape.conv1d_same(x, w)?;
            cx.tape.add(y, b)
        })
    }
}

/// Conv → PReLU → SpatialDropout → MaxPool → BatchNorm.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub name: String,
    pub conv: Conv1d,
    pub prelu: PRelu,
    pub bn: BatchNorm,
    pub cfg: ConvBlockConfig,
}

/// Settings shared by every convolution block.
#[derive(Clone, Copy, Debug)]
pub struct BlockCommon {
    pub prelu_init: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl ConvBlock {
    pub fn new<T: Element>(
        b: &mut Builder<T>,
        name: &str,
        channels_in: usize,
        cfg: ConvBlockConfig,
        common: BlockCommon,
    ) -> Result<Self> {
        if cfg.filters == 0 || cfg.kernel == 0 || cfg.pool.size == 0 || cfg.pool.stride == 0 {
            return Err(Error::Config(format!("{name}: sizes must be positive")));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::Config(format!("{name}: dropout {} not in [0, 1)", cfg.dropout)));
        }
        b.push(name);
        let conv = Conv1d::new(b, "conv", cfg.kernel, channels_in, cfg.filters)?;
        let prelu = PRelu::new(b, "prelu", cfg.filters, common.prelu_init)?;
        let bn = BatchNorm::new(b, "bn", cfg.filters, common.bn_momentum, common.bn_eps)?;
        b.pop();
        Ok(ConvBlock {
            name: b.path(name),
            conv,
            prelu,
            bn,
            cfg,
        })
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + 3 * self.cfg.filters
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        let p = self.cfg.pool;
        p.padding.pool_geometry(len, p.size, p.stride).map(|(l, _)| l)
    }

    /// `trace_block` labels the recorded rows.
    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var, trace_block: &str) -> Result<Var> {
        let y = self.conv.forward(cx, x)?;
        cx.record(trace_block, "Convolution1D", y);
        let y = self.prelu.forward(cx, y)?;
        cx.record(trace_block, "PReLU", y);
        let y = in_layer(&format!("{}/dropout", self.name), || spatial_dropout(cx, y, self.cfg.dropout))?;
        cx.record(trace_block, "SpatialDropout1D", y);
        let p = self.cfg.pool;
        let y = in_layer(&format!("{}/pool", self.name), || cx.tape.max_pool1d(y, p.size, p.stride, p.padding))?;
        cx.record(trace_block, "MaxPooling1D", y);
        let y = self.bn.forward(cx, y)?;
        cx.record(trace_block, "BatchNormalization", y);
        Ok(y)
    }
}
