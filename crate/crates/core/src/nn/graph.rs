use super::dense::Dense;
use super::forward::{in_layer, Forward};
use super::init::Builder;
use super::params::ParamId;
use crate::autodiff::{Element, Tensor, Var};
use crate::error::{Error, Result};

/// Graph convolution `relu(Â X W + b)` for a pre-normalised adjacency `Â`.
#[derive(Clone, Debug)]
pub struct Gcn {
    pub name: String,
    pub kernel: ParamId,
    pub bias: ParamId,
    pub features_in: usize,
    pub features_out: usize,
}

impl Gcn {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, features_in: usize, features_out: usize) -> Result<Self> {
        b.push(name);
        let kernel = b.glorot("kernel", &[features_in, features_out])?;
        let bias = b.constant("bias", &[features_out], 0.0, true)?;
        b.pop();
        Ok(Gcn {
            name: b.path(name),
            kernel,
            bias,
            features_in,
            features_out,
        })
    }

    pub fn param_count(&self) -> usize {
        self.features_in * self.features_out + self.features_out
    }

    /// `x [B, N, F]`, `a [B, N, N]` → `[B, N, F']`.
    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var, a: Var) -> Result<Var> {
        in_layer(&self.name, || {
            let (xs, as_) = (cx.shape(x), cx.shape(a));
            if xs.len() != 3 || as_.len() != 3 || as_[1] != xs[1] || as_[2] != xs[1] || as_[0] != xs[0] {
                return Err(Error::shape("gcn", &xs, &as_));
            }
            let w = cx.param(self.kernel);
            // multiply in the cheaper order
            let y = if self.features_in <= self.features_out {
                let ax = cx.tape.matmul(a, x)?;
                cx.tape.matmul(ax, w)?
            } else {
                let xw = cx.tape.matmul(x, w)?;
                cx.tape.matmul(a, xw)?
            };
            let b = cx.param(self.bias);
            let y = cx.tape.add(y, b)?;
            Ok(cx.tape.relu(y))
        })
    }
}

/// Result of one MinCut coarsening step.
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    /// `Sᵀ X`, `[B, K, F]`.
    pub x: Var,
    /// `Sᵀ A S` with zeroed diagonal, degree-normalised: `[B, K, K]`.
    pub a: Var,
    /// Soft assignment `[B, N, K]`.
    pub s: Var,
    pub cut_loss: Var,
    pub ortho_loss: Var,
}

/// MinCut pooling: `S = softmax(X W + b)`, `X' = SᵀX`, `A' = SᵀAS`, plus the
/// cut and orthogonality auxiliary losses (batch means).
#[derive(Clone, Debug)]
pub struct MinCutPool {
    pub name: String,
    pub assign: Dense,
    pub clusters: usize,
}

fn identity<T: Element>(cx: &mut Forward<T>, k: usize, scale: f64) -> Var {
    let mut eye = Tensor::<T>::eye(k);
    eye.data_mut().iter_mut().for_each(|v| *v = *v * T::of(scale));
    cx.constant(eye)
}

/// Sum over the last two axes of `[B, P, Q]` → `[B]`.
fn sum_last2<T: Element>(cx: &mut Forward<T>, x: Var) -> Result<Var> {
    let s = cx.tape.sum_axis(x, 2, false)?;
    cx.tape.sum_axis(s, 1, false)
}

impl MinCutPool {
    pub fn new<T: Element>(b: &mut Builder<T>, name: &str, features_in: usize, clusters: usize) -> Result<Self> {
        if clusters == 0 {
            return Err(Error::Config(format!("{name}: cluster count must be positive")));
        }
        b.push(name);
        let assign = Dense::new(b, "assign", features_in, clusters)?;
        b.pop();
        Ok(MinCutPool {
            name: b.path(name),
            assign,
            clusters,
        })
    }

    pub fn param_count(&self) -> usize {
        self.assign.param_count()
    }

    pub fn forward<T: Element>(&self, cx: &mut Forward<T>, x: Var, a: Var) -> Result<Pooled> {
        let (xs, as_) = (cx.shape(x), cx.shape(a));
        if xs.len() != 3 || as_.len() != 3 || as_[1] != xs[1] || as_[2] != xs[1] {
            return Err(Error::shape("mincut_pool", &xs, &as_).in_layer(&self.name));
        }
        let n = xs[1];
        let k = self.clusters;
        if k >= n {
            return Err(Error::Config(format!("{}: {k} clusters for a graph of {n} nodes", self.name)));
        }
        let logits = self.assign.forward(cx, x)?;
        let pooled = in_layer(&self.name, || {
            let s = cx.tape.softmax(logits, 2)?;
            let xp = cx.tape.matmul_t(s, x, true, false)?;
            let a_s = cx.tape.matmul(a, s)?;
            let ap = cx.tape.matmul_t(s, a_s, true, false)?;

            // cut loss: −Tr(SᵀAS) / Tr(SᵀDS)
            let eye = identity(cx, k, 1.0);
            let diag = cx.tape.mul(ap, eye)?;
            let num = sum_last2(cx, diag)?;
            let deg = cx.tape.sum_axis(a, 2, true)?;
            let s2 = cx.tape.square(s)?;
            let ds = cx.tape.mul(deg, s2)?;
            let den = sum_last2(cx, ds)?;
            let ratio = cx.tape.div(num, den)?;
            let mean_ratio = cx.tape.mean(ratio);
            let cut_loss = cx.tape.neg(mean_ratio);

            // orthogonality loss: ‖SᵀS/‖SᵀS‖ − I/√K‖
            let ss = cx.tape.matmul_t(s, s, true, false)?;
            let ss2 = cx.tape.square(ss)?;
            let fro2 = sum_last2(cx, ss2)?;
            let fro = cx.tape.sqrt(fro2);
            let b = xs[0];
            let fro = cx.tape.reshape(fro, &[b, 1, 1])?;
            let unit = cx.tape.div(ss, fro)?;
            let target = identity(cx, k, 1.0 / (k as f64).sqrt());
            let diff = cx.tape.sub(unit, target)?;
            let diff2 = cx.tape.square(diff)?;
            let dn2 = sum_last2(cx, diff2)?;
            let dn = cx.tape.sqrt(dn2);
            let ortho_loss = cx.tape.mean(dn);

            // coarsened adjacency for the next layer
            let off = {
                let mut m = Tensor::<T>::ones(&[k, k]);
                for i in 0..k {
                    m.data_mut()[i * k + i] = T::zero();
                }
                cx.constant(m)
            };
            let ap = cx.tape.mul(ap, off)?;
            let d = cx.tape.sum_axis(ap, 2, true)?;
            let d = cx.tape.sqrt(d);
            let d = cx.tape.add_scalar(d, 1e-7);
            let dt = cx.tape.reshape(d, &[b, 1, k])?;
            let an = cx.tape.div(ap, d)?;
            let an = cx.tape.div(an, dt)?;
            Ok(Pooled {
                x: xp,
                a: an,
                s,
                cut_loss,
                ortho_loss,
            })
        })?;
        cx.push_aux(format!("{}/cut", self.name), pooled.cut_loss);
        cx.push_aux(format!("{}/ortho", self.name), pooled.ortho_loss);
        Ok(pooled)
    }
}
