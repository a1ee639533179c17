//! Forward constructors for every primitive. Each validates shapes, computes
//! the value and records what the reverse pass needs.

use super::kernels;
use super::tape::{MatMulLayout, Op, Tape, Var};
use super::tensor::{broadcast_shape, broadcast_strides, for_each_broadcast2, gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

/// Padding mode of [`Tape::max_pool1d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output length `ceil(L / stride)`, padding split with the extra cell on the right.
    Same,
    /// Windows lie entirely inside the input: `floor((L - pool) / stride) + 1`.
    Valid,
}

impl Padding {
    /// `(output length, left padding)` for a pooling window over `len` cells.
    pub fn pool_geometry(self, len: usize, pool: usize, stride: usize) -> Option<(usize, usize)> {
        if pool == 0 || stride == 0 {
            return None;
        }
        match self {
            Padding::Same => {
                let out = len.div_ceil(stride);
                let total = ((out - 1) * stride + pool).saturating_sub(len);
                Some((out, total / 2))
            }
            Padding::Valid => {
                if len < pool {
                    None
                } else {
                    Some(((len - pool) / stride + 1, 0))
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Element> Tape<T> {
    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(Tensor<T>, bool)> {
        let (av, bv) = (self.value(a), self.value(b));
        let shape = broadcast_shape(av.shape(), bv.shape())
            .ok_or_else(|| Error::shape(name, av.shape(), bv.shape()))?;
        let mut out = Tensor::zeros(&shape);
        if av.shape() == bv.shape() {
            for ((o, &x), &y) in out.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                *o = f(x, y);
            }
        } else {
            let sa = broadcast_strides(av.shape(), &shape);
            let sb = broadcast_strides(bv.shape(), &shape);
            let (ad, bd, od) = (av.data(), bv.data(), out.data_mut());
            for_each_broadcast2(&shape, &sa, &sb, |o, ia, ib| od[o] = f(ad[ia], bd[ib]));
        }
        Ok((out, self.any_grad(&[a, b])))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (v, rg) = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b), rg))
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if broadcast_shape(xv.shape(), shape).as_deref() != Some(shape) {
            return Err(Error::shape("broadcast_to", xv.shape(), shape));
        }
        let v = kernels::broadcast_to(xv, shape);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::BroadcastTo(x), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(v, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.sqrt(), Op::Sqrt(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn recip(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / v, Op::Recip(x))
    }

    /// Clamp into `[lo, hi]`; the gradient is passed only where the input
    /// was inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product over the last two axes, optionally transposing either
    /// operand. `b` of rank 2 is shared across all leading axes of `a`;
    /// otherwise both operands carry identical leading (batch) axes.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ash, bsh) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let err = || Error::shape("matmul", &ash, &bsh);
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(err());
        }
        let (ar, br) = (ash.len(), bsh.len());
        let b_shared = br == 2;
        if !b_shared && (ar != br || ash[..ar - 2] != bsh[..br - 2]) {
            return Err(err());
        }
        let (b_rows, b_cols) = (bsh[br - 2], bsh[br - 1]);
        let (kb, n) = if tb { (b_cols, b_rows) } else { (b_rows, b_cols) };
        let layout;
        let out_shape;
        if b_shared && !ta {
            // fold every leading axis of `a` into the row dimension
            let m: usize = ash[..ar - 1].iter().product();
            let k = ash[ar - 1];
            if k != kb {
                return Err(err());
            }
            layout = MatMulLayout {
                batch: 1,
                m,
                n,
                a_dims: (m, k),
                b_dims: (b_rows, b_cols),
                b_shared,
                ta,
                tb,
            };
            out_shape = [&ash[..ar - 1], &[n]].concat();
        } else {
            let batch: usize = ash[..ar - 2].iter().product();
            let (a_rows, a_cols) = (ash[ar - 2], ash[ar - 1]);
            let (m, k) = if ta { (a_cols, a_rows) } else { (a_rows, a_cols) };
            if k != kb {
                return Err(err());
            }
            layout = MatMulLayout {
                batch,
                m,
                n,
                a_dims: (a_rows, a_cols),
                b_dims: (b_rows, b_cols),
                b_shared,
                ta,
                tb,
            };
            out_shape = [&ash[..ar - 2], &[m, n]].concat();
        }
        let mut out = Tensor::zeros(&out_shape);
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            let od = out.data_mut();
            let mn = layout.m * layout.n;
            for i in 0..layout.batch {
                gemm(
                    layout.a_view(ad, i),
                    layout.b_view(bd, i),
                    &mut od[i * mn..(i + 1) * mn],
                    false,
                );
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b, layout), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", shape, axes));
        }
        let v = kernels::permute(self.value(x), axes);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::Permute(x, axes.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        for &x in &xs[1..] {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &first, s));
            }
        }
        let values: Vec<&Tensor<T>> = xs.iter().map(|&x| self.value(x)).collect();
        let v = kernels::concat(&values, axis);
        let rg = self.any_grad(xs);
        Ok(self.push(v, Op::Concat(xs.to_vec(), axis), rg))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x);
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", shape, &[axis, start, len]));
        }
        let v = kernels::slice(self.value(x), axis, start, len);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::Slice { x, axis, start }, rg))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum_axis", &shape, &[axis]));
        }
        let v = kernels::sum_axis(self.value(x), axis);
        let rg = self.requires_grad(x);
        let s = self.push(v, Op::SumAxis(x, axis), rg);
        if keepdim {
            Ok(s)
        } else {
            let mut out = shape;
            out.remove(axis);
            self.reshape(s, &out)
        }
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize, keepdim: bool) -> Result<Var> {
        let n = *self.shape(x).get(axis).ok_or_else(|| Error::shape("mean_axis", self.shape(x), &[axis]))?;
        let s = self.sum_axis(x, axis, keepdim)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = T::zero();
        for &v in self.value(x).data() {
            acc = acc + v;
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(acc), Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Max over `axis`, kept with length 1. Ties resolve to the first index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape("max_axis", self.shape(x), &[axis]));
        }
        let (v, arg) = kernels::max_axis(self.value(x), axis);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::MaxAxis(x, arg), rg))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= self.shape(x).len() {
            return Err(Error::shape("softmax", self.shape(x), &[axis]));
        }
        let v = kernels::softmax(self.value(x), axis);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::Softmax(x, axis), rg))
    }

    /// 1-D cross-correlation with 'same' padding and stride 1.
    /// `x: [B, L, C_in]`, `w: [K, C_in, C_out]` → `[B, L, C_out]`.
    /// Even kernels put the extra padding cell on the right.
    pub fn conv1d_same(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || ws[0] == 0 {
            return Err(Error::shape("conv1d", &xs, &ws));
        }
        let (b, l) = (xs[0], xs[1]);
        let (kw, cin, cout) = (ws[0], ws[1], ws[2]);
        let pad_left = (kw - 1) / 2;
        // one product per kernel tap over the padded rows; rows that straddle
        // two sequences are computed and then discarded
        let lp = l + kw - 1;
        let padded = kernels::pad_rows(self.value(x), kw, pad_left);
        let m = b * lp - (kw - 1);
        let mut full = vec![T::zero(); m * cout];
        let wd = self.value(w).data();
        for tap in 0..kw {
            gemm(
                MatRef::row_major(padded.data(), tap * cin, m, cin),
                MatRef::row_major(wd, tap * cin * cout, cin, cout),
                &mut full,
                tap > 0,
            );
        }
        full.resize(b * lp * cout, T::zero());
        let out = Tensor::from_vec(&[b, l, cout], kernels::unpad_rows(&full, b, l, lp, cout, 0))?;
        let keep = self.requires_grad(w);
        let rg = self.any_grad(&[x, w]);
        let op = Op::Conv1d {
            x,
            w,
            pad_left,
            padded: keep.then_some(padded),
        };
        Ok(self.push(out, op, rg))
    }

    /// Max pooling along axis 1 of `[B, L, C]`.
    pub fn max_pool1d(&mut self, x: Var, pool: usize, stride: usize, padding: Padding) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 3 {
            return Err(Error::shape("max_pool1d", &xs, &[pool, stride]));
        }
        let (out_len, pad_left) = padding
            .pool_geometry(xs[1], pool, stride)
            .ok_or_else(|| Error::shape("max_pool1d", &xs, &[pool, stride]))?;
        let (v, arg) = kernels::max_pool1d(self.value(x), pool, stride, pad_left, out_len);
        let rg = self.requires_grad(x);
        Ok(self.push(v, Op::MaxPool1d(x, arg), rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::<f64>::new();
        let i = tape.constant(Tensor::eye(2));
        let m = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i, m).unwrap();
        assert_eq!(tape.value(y), tape.value(m));
    }

    #[test]
    fn conv_same_preserves_length() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[2, 101, 4]));
        for k in [1, 2, 3, 4, 11] {
            let w = tape.constant(Tensor::ones(&[k, 4, 5]));
            let y = tape.conv1d_same(x, w).unwrap();
            assert_eq!(tape.shape(y), &[2, 101, 5]);
        }
    }

    #[test]
    fn conv_is_cross_correlation() {
        // kernel [0, 1, 2] on a ramp picks x[t] + 2·x[t+1]
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[3, 1, 1], &[0.0, 1.0, 2.0]));
        let y = tape.conv1d_same(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0, 8.0, 11.0, 4.0]);
    }

    #[test]
    fn pooling_geometry() {
        assert_eq!(Padding::Same.pool_geometry(101, 2, 1), Some((101, 0)));
        assert_eq!(Padding::Valid.pool_geometry(101, 2, 2), Some((50, 0)));
        assert_eq!(Padding::Valid.pool_geometry(50, 2, 2), Some((25, 0)));
        assert_eq!(Padding::Same.pool_geometry(5, 3, 2), Some((3, 1)));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[4, 5]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]") && err.contains("[4, 5]"), "{err}");
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.starts_with("add"), "{err}");
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2, 2], &[1.0, -2.0, 3.0, 0.5]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn diamond_graph_sums_path_gradients() {
        // y = a·x + b·x with shared x: dy/dx = a + b
        let mut tape = Tape::<f64>::new();
        let x = tape.variable(t(&[1], &[0.7]));
        let a = tape.scale(x, 3.0);
        let b = tape.exp(x);
        let y = tape.add(a, b).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        let want = 3.0 + 0.7f64.exp();
        assert!((g.get(x).unwrap().data()[0] - want).abs() < 1e-14);
    }
}
