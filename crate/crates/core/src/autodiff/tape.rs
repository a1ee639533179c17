//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its forward value and an [`Op`]
//! record. Nodes are appended after their inputs, so walking the tape
//! backwards is a reverse topological order and visits each node once.

use super::kernels;
use super::tensor::{broadcast_strides, for_each_broadcast2, gemm, Element, MatRef, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dimensions of a (possibly batched) matrix product.
#[derive(Clone, Debug)]
pub(crate) struct MatMulLayout {
    pub batch: usize,
    pub m: usize,
    pub n: usize,
    /// Stored (untransposed) matrix dims of each operand.
    pub a_dims: (usize, usize),
    pub b_dims: (usize, usize),
    pub b_shared: bool,
    pub ta: bool,
    pub tb: bool,
}

impl MatMulLayout {
    pub fn a_view<'a, T>(&self, data: &'a [T], i: usize) -> MatRef<'a, T> {
        let (r, c) = self.a_dims;
        let v = MatRef::row_major(data, i * r * c, r, c);
        if self.ta {
            v.t()
        } else {
            v
        }
    }

    pub fn b_view<'a, T>(&self, data: &'a [T], i: usize) -> MatRef<'a, T> {
        let (r, c) = self.b_dims;
        let off = if self.b_shared { 0 } else { i * r * c };
        let v = MatRef::row_major(data, off, r, c);
        if self.tb {
            v.t()
        } else {
            v
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    BroadcastTo(Var),
    Scale(Var, T),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Recip(Var),
    Clamp(Var, T, T),
    MatMul(Var, Var, MatMulLayout),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    SumAxis(Var, usize),
    SumAll(Var),
    MaxAxis(Var, Vec<usize>),
    Softmax(Var, usize),
    Conv1d {
        x: Var,
        w: Var,
        pad_left: usize,
        /// Zero-padded input rows, kept when the kernel needs a gradient.
        padded: Option<Tensor<T>>,
    },
    MaxPool1d(Var, Vec<usize>),
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// A differentiation graph under construction.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Populates gradients of every tracked leaf reachable from `loss`.
    /// Fan-out contributions accumulate additively.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::ones(loss_value.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse pass of a broadcasting binary product; `da` and `db` map
    /// `(g, a, b)` to the local contribution for each operand.
    #[allow(clippy::too_many_arguments)]
    fn product_grads(
        &self,
        grads: &mut [Option<Tensor<T>>],
        out_shape: &[usize],
        g: &Tensor<T>,
        a: Var,
        b: Var,
        da: impl Fn(T, T, T) -> T,
        db: impl Fn(T, T, T) -> T,
    ) {
        let (av, bv) = (self.value(a), self.value(b));
        let (ad, bd, gd) = (av.data(), bv.data(), g.data());
        if av.shape() == bv.shape() {
            if self.wants(a) {
                let v = gd.iter().zip(ad).zip(bd).map(|((&g, &a), &b)| da(g, a, b)).collect();
                self.accumulate(grads, a, Tensor::from_vec(av.shape(), v).expect("grad shape"));
            }
            if self.wants(b) {
                let v = gd.iter().zip(ad).zip(bd).map(|((&g, &a), &b)| db(g, a, b)).collect();
                self.accumulate(grads, b, Tensor::from_vec(bv.shape(), v).expect("grad shape"));
            }
            return;
        }
        let sa = broadcast_strides(av.shape(), out_shape);
        let sb = broadcast_strides(bv.shape(), out_shape);
        if self.wants(a) {
            let mut ga = Tensor::zeros(av.shape());
            let gad = ga.data_mut();
            for_each_broadcast2(out_shape, &sa, &sb, |o, ia, ib| {
                gad[ia] = gad[ia] + da(gd[o], ad[ia], bd[ib]);
            });
            self.accumulate(grads, a, ga);
        }
        if self.wants(b) {
            let mut gb = Tensor::zeros(bv.shape());
            let gbd = gb.data_mut();
            for_each_broadcast2(out_shape, &sa, &sb, |o, ia, ib| {
                gbd[ib] = gbd[ib] + db(gd[o], ad[ia], bd[ib]);
            });
            self.accumulate(grads, b, gb);
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                if self.wants(*a) {
                    let ga = kernels::reduce_to(&g, self.shape(*a));
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = kernels::reduce_to(&g, self.shape(*b));
                    if neg {
                        gb.data_mut().iter_mut().for_each(|v| *v = -*v);
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                self.product_grads(grads, y.shape(), &g, *a, *b, |g, _, b| g * b, |g, a, _| g * a);
            }
            Op::Div(a, b) => {
                self.product_grads(grads, y.shape(), &g, *a, *b, |g, _, b| g / b, |g, a, b| -g * a / (b * b));
            }
            Op::BroadcastTo(x) => {
                let gx = kernels::reduce_to(&g, self.shape(*x));
                self.accumulate(grads, *x, gx);
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g),
            Op::Exp(x) => {
                let gx = zip_map(&g, y, |g, y| g * y);
                self.accumulate(grads, *x, gx);
            }
            Op::Log(x) => {
                let gx = zip_map(&g, self.value(*x), |g, x| g / x);
                self.accumulate(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let two = T::of(2.0);
                let gx = zip_map(&g, y, |g, y| g / (two * y));
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = zip_map(&g, y, |g, y| g * (T::one() - y * y));
                self.accumulate(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(&g, y, |g, y| g * y * (T::one() - y));
                self.accumulate(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = zip_map(&g, self.value(*x), |g, x| if x > T::zero() { g } else { T::zero() });
                self.accumulate(grads, *x, gx);
            }
            Op::Recip(x) => {
                let gx = zip_map(&g, y, |g, y| -g * y * y);
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let gx = zip_map(&g, self.value(*x), |g, x| {
                    if x >= lo && x <= hi {
                        g
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *x, gx);
            }
            Op::MatMul(a, b, l) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let gd = g.data();
                let g_view = |i: usize| MatRef::row_major(gd, i * l.m * l.n, l.m, l.n);
                if self.wants(*a) {
                    let (r, c) = l.a_dims;
                    let mut ga = Tensor::zeros(self.shape(*a));
                    for i in 0..l.batch {
                        let out = &mut ga.data_mut()[i * r * c..(i + 1) * r * c];
                        let opb = l.b_view(bd, i);
                        if l.ta {
                            gemm(opb, g_view(i).t(), out, false);
                        } else {
                            gemm(g_view(i), opb.t(), out, false);
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let (r, c) = l.b_dims;
                    let mut gb = Tensor::zeros(self.shape(*b));
                    for i in 0..l.batch {
                        let (off, acc) = if l.b_shared { (0, i > 0) } else { (i * r * c, false) };
                        let out = &mut gb.data_mut()[off..off + r * c];
                        let opa = l.a_view(ad, i);
                        if l.tb {
                            gemm(g_view(i).t(), opa, out, acc);
                        } else {
                            gemm(opa.t(), g_view(i), out, acc);
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Reshape(x) => {
                let gx = g.reshape(self.shape(*x)).expect("reshape grad");
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, axes) => {
                let gx = kernels::permute_back(&g, self.shape(*x), axes);
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(xs, axis) => {
                let mut start = 0;
                for x in xs {
                    let len = self.shape(*x)[*axis];
                    if self.wants(*x) {
                        let gx = kernels::slice(&g, *axis, start, len);
                        self.accumulate(grads, *x, gx);
                    }
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                if !self.wants(*x) {
                    return;
                }
                let acc = grads[x.0].get_or_insert_with(|| Tensor::zeros(self.shape(*x)));
                kernels::unslice_add(&g, acc, *axis, *start);
            }
            Op::SumAxis(x, axis) => {
                let gx = kernels::expand_axis(&g, self.shape(*x), *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::SumAll(x) => {
                let gx = Tensor::full(self.shape(*x), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::MaxAxis(x, argmax) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let gxd = gx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    gxd[src] = gxd[src] + g.data()[o];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x, axis) => {
                let gx = kernels::softmax_backward(y, &g, *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::Conv1d {
                x,
                w,
                pad_left,
                padded,
            } => {
                let xs = self.shape(*x).to_vec();
                let ws = self.shape(*w).to_vec();
                let (b, l, cin) = (xs[0], xs[1], xs[2]);
                let (kw, cout) = (ws[0], ws[2]);
                let lp = l + kw - 1;
                let m = b * lp - (kw - 1);
                // gradient rows laid out like the forward's padded output
                let mut gp = vec![T::zero(); b * lp * cout];
                for bi in 0..b {
                    gp[bi * lp * cout..(bi * lp + l) * cout]
                        .copy_from_slice(&g.data()[bi * l * cout..(bi + 1) * l * cout]);
                }
                let gview = MatRef::row_major(&gp, 0, m, cout);
                if self.wants(*w) {
                    let recomputed;
                    let padded = match padded {
                        Some(p) => p,
                        None => {
                            recomputed = kernels::pad_rows(self.value(*x), kw, *pad_left);
                            &recomputed
                        }
                    };
                    let mut gw = Tensor::zeros(&ws);
                    for tap in 0..kw {
                        gemm(
                            MatRef::row_major(padded.data(), tap * cin, m, cin).t(),
                            gview,
                            &mut gw.data_mut()[tap * cin * cout..(tap + 1) * cin * cout],
                            false,
                        );
                    }
                    self.accumulate(grads, *w, gw);
                }
                if self.wants(*x) {
                    let mut dp = vec![T::zero(); b * lp * cin];
                    let wd = self.value(*w).data();
                    for tap in 0..kw {
                        gemm(
                            gview,
                            MatRef::row_major(wd, tap * cin * cout, cin, cout).t(),
                            &mut dp[tap * cin..(tap + m) * cin],
                            true,
                        );
                    }
                    let gx = Tensor::from_vec(&xs, kernels::unpad_rows(&dp, b, l, lp, cin, *pad_left))
                        .expect("conv grad shape");
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::MaxPool1d(x, argmax) => {
                let mut gx = Tensor::zeros(self.shape(*x));
                let gxd = gx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    gxd[src] = gxd[src] + g.data()[o];
                }
                self.accumulate(grads, *x, gx);
            }
        }
    }
}

fn zip_map<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map shapes")
}

/// Gradients produced by [`Tape::backward`], indexed by leaf [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a tracked leaf. `None` when the leaf is unreachable from
    /// the loss (its gradient is identically zero).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

