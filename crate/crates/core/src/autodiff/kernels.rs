//! Loops shared by forward and backward passes.

use super::tensor::{broadcast_strides, for_each_broadcast2, row_major_strides, Element, Tensor};

/// `(outer, dim, inner)` split of `shape` around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Sums a broadcast gradient back down to `shape`.
pub(crate) fn reduce_to<T: Element>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape);
    let sa = broadcast_strides(shape, g.shape());
    let zeros = vec![0; g.rank()];
    let (gd, od) = (g.data(), out.data_mut());
    for_each_broadcast2(g.shape(), &sa, &zeros, |o, i, _| od[i] = od[i] + gd[o]);
    out
}

pub(crate) fn broadcast_to<T: Element>(x: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let mut out = Tensor::zeros(shape);
    let sa = broadcast_strides(x.shape(), shape);
    let zeros = vec![0; shape.len()];
    let (xd, od) = (x.data(), out.data_mut());
    for_each_broadcast2(shape, &sa, &zeros, |o, i, _| od[o] = xd[i]);
    out
}

fn permuted_strides(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let strides = row_major_strides(shape);
    let out_shape = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = axes.iter().map(|&a| strides[a]).collect();
    (out_shape, in_strides)
}

pub(crate) fn permute<T: Element>(x: &Tensor<T>, axes: &[usize]) -> Tensor<T> {
    let (out_shape, s) = permuted_strides(x.shape(), axes);
    let mut out = Tensor::zeros(&out_shape);
    let zeros = vec![0; axes.len()];
    let (xd, od) = (x.data(), out.data_mut());
    for_each_broadcast2(&out_shape, &s, &zeros, |o, i, _| od[o] = xd[i]);
    out
}

pub(crate) fn permute_back<T: Element>(g: &Tensor<T>, in_shape: &[usize], axes: &[usize]) -> Tensor<T> {
    let (out_shape, s) = permuted_strides(in_shape, axes);
    let mut gx = Tensor::zeros(in_shape);
    let zeros = vec![0; axes.len()];
    let (gd, xd) = (g.data(), gx.data_mut());
    for_each_broadcast2(&out_shape, &s, &zeros, |o, i, _| xd[i] = gd[o]);
    gx
}

pub(crate) fn slice<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        data.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    Tensor::from_vec(&shape, data).expect("slice shape")
}

/// Adds `g` into the `[start, start + len)` window of `acc` along `axis`.
pub(crate) fn unslice_add<T: Element>(g: &Tensor<T>, acc: &mut Tensor<T>, axis: usize, start: usize) {
    let (outer, dim, inner) = split_axis(acc.shape(), axis);
    let len = g.shape()[axis];
    let ad = acc.data_mut();
    for o in 0..outer {
        let dst = o * dim * inner + start * inner;
        let src = o * len * inner;
        for (a, &v) in ad[dst..dst + len * inner].iter_mut().zip(&g.data()[src..src + len * inner]) {
            *a = *a + v;
        }
    }
}

pub(crate) fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    let mut shape = xs[0].shape().to_vec();
    shape[axis] = xs.iter().map(|x| x.shape()[axis]).sum();
    let (outer, _, inner) = split_axis(&shape, axis);
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for x in xs {
            let chunk = x.shape()[axis] * inner;
            data.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    Tensor::from_vec(&shape, data).expect("concat shape")
}

/// Sum over `axis`, keeping it with length 1.
pub(crate) fn sum_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    let mut out = vec![T::zero(); outer * inner];
    let xd = x.data();
    for o in 0..outer {
        for d in 0..dim {
            let row = &xd[(o * dim + d) * inner..(o * dim + d + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc = *acc + v;
            }
        }
    }
    Tensor::from_vec(&shape, out).expect("sum_axis shape")
}

/// Inverse of [`sum_axis`] for gradients: repeats `g` along `axis`.
pub(crate) fn expand_axis<T: Element>(g: &Tensor<T>, in_shape: &[usize], axis: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_axis(in_shape, axis);
    let mut gx = Tensor::zeros(in_shape);
    let (gd, xd) = (g.data(), gx.data_mut());
    for o in 0..outer {
        for d in 0..dim {
            let base = (o * dim + d) * inner;
            xd[base..base + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
        }
    }
    gx
}

/// Max over `axis` (kept with length 1) and the flat source index of each maximum.
pub(crate) fn max_axis<T: Element>(x: &Tensor<T>, axis: usize) -> (Tensor<T>, Vec<usize>) {
    let (outer, dim, inner) = split_axis(x.shape(), axis);
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    let mut out = Vec::with_capacity(outer * inner);
    let mut arg = Vec::with_capacity(outer * inner);
    let xd = x.data();
    for o in 0..outer {
        for i in 0..inner {
            let mut best = o * dim * inner + i;
            for d in 1..dim {
                let idx = (o * dim + d) * inner + i;
                if xd[idx] > xd[best] {
                    best = idx;
                }
            }
            out.push(xd[best]);
            arg.push(best);
        }
    }
    (Tensor::from_vec(&shape, out).expect("max shape"), arg)
}

pub(crate) fn softmax<T: Element>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_axis(x.shape(), axis);
    let mut y = x.clone();
    let yd = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |d: usize| (o * dim + d) * inner + i;
            let mut mx = T::neg_infinity();
            for d in 0..dim {
                mx = mx.max(yd[at(d)]);
            }
            let mut sum = T::zero();
            for d in 0..dim {
                let e = (yd[at(d)] - mx).exp();
                yd[at(d)] = e;
                sum = sum + e;
            }
            for d in 0..dim {
                yd[at(d)] = yd[at(d)] / sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<T: Element>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, dim, inner) = split_axis(y.shape(), axis);
    let mut gx = Tensor::zeros(y.shape());
    let (yd, gd, xd) = (y.data(), g.data(), gx.data_mut());
    for o in 0..outer {
        for i in 0..inner {
            let at = |d: usize| (o * dim + d) * inner + i;
            let mut dot = T::zero();
            for d in 0..dim {
                dot = dot + gd[at(d)] * yd[at(d)];
            }
            for d in 0..dim {
                xd[at(d)] = yd[at(d)] * (gd[at(d)] - dot);
            }
        }
    }
    gx
}

/// Copies `x [B, L, C]` into rows of a `[B·(L+K−1), C]` buffer with
/// `pad_left` zero rows before and `K−1−pad_left` after each sequence.
pub(crate) fn pad_rows<T: Element>(x: &Tensor<T>, kernel: usize, pad_left: usize) -> Tensor<T> {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let lp = l + kernel - 1;
    let mut out = vec![T::zero(); b * lp * c];
    for bi in 0..b {
        let dst = (bi * lp + pad_left) * c;
        out[dst..dst + l * c].copy_from_slice(&x.data()[bi * l * c..(bi + 1) * l * c]);
    }
    Tensor::from_vec(&[b * lp, c], out).expect("pad shape")
}

/// Inverse of [`pad_rows`]: keeps rows `pad_left..pad_left+L` of each block
/// of `lp` rows, for `b` blocks.
pub(crate) fn unpad_rows<T: Element>(p: &[T], b: usize, l: usize, lp: usize, c: usize, pad_left: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(b * l * c);
    for bi in 0..b {
        let src = (bi * lp + pad_left) * c;
        out.extend_from_slice(&p[src..src + l * c]);
    }
    out
}

/// Max pooling over axis 1 of `x [B, L, C]`. Out-of-range window cells are
/// ignored (equivalent to −∞ padding).
pub(crate) fn max_pool1d<T: Element>(
    x: &Tensor<T>,
    pool: usize,
    stride: usize,
    pad_left: usize,
    out_len: usize,
) -> (Tensor<T>, Vec<usize>) {
    let (b, l, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xd = x.data();
    let mut out = Vec::with_capacity(b * out_len * c);
    let mut arg = Vec::with_capacity(b * out_len * c);
    for bi in 0..b {
        for o in 0..out_len {
            let start = (o * stride) as isize - pad_left as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + pool as isize).min(l as isize)) as usize;
            let first = (bi * l + lo) * c;
            let at = out.len();
            out.extend_from_slice(&xd[first..first + c]);
            arg.extend(first..first + c);
            for t in lo + 1..hi {
                let row = (bi * l + t) * c;
                for ch in 0..c {
                    if xd[row + ch] > out[at + ch] {
                        out[at + ch] = xd[row + ch];
                        arg[at + ch] = row + ch;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(&[b, out_len, c], out).expect("pool shape"),
        arg,
    )
}
