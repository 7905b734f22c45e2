//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are only ever
//! appended, so a node's parents always precede it and the backward sweep is a
//! plain reverse walk over the node list. Build a fresh tape for every forward
//! pass.

use crate::kernels::{gemm, ConvGeom};
use crate::tensor::{Tensor, TensorError, TensorResult};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    AddBias { a: Var, b: Var, axis: usize },
    AddScalar(Var),
    MulElem(Var, Var),
    ScalarMul(Var, f64),
    MatMul { a: Var, b: Var, trans_b: bool },
    Conv2d { x: Var, filters: Var },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    LogClamped(Var, f64),
    Sum(Var),
    L1(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    SumAxis(Var, usize),
}

/// One recorded value and the operation that produced it.
#[derive(Debug, Clone)]
pub struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

/// Append-only list of nodes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`; zeros if nothing has flowed into it yet.
    pub fn grad(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        node.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(node.value.shape()))
    }

    /// Clears every accumulated gradient.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// A leaf that is differentiable only when `trainable` is set.
    pub fn input(&mut self, value: Tensor, trainable: bool) -> Var {
        self.push_raw(value, Op::Leaf, trainable)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    /// Elementwise sum. `b` may also match only the trailing dimensions of
    /// `a`, in which case it is broadcast over the leading ones (row bias).
    pub fn add(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let value = self.broadcast_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise difference, with the same broadcasting rule as [`add`](Self::add).
    pub fn sub(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let value = self.broadcast_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    fn broadcast_binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> TensorResult<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa == sb {
            return ta.zip_map(tb, f);
        }
        if sb.len() < sa.len() && sa.ends_with(sb) {
            let inner = tb.numel();
            let data = ta
                .data()
                .chunks(inner)
                .flat_map(|chunk| chunk.iter().zip(tb.data()).map(|(&x, &y)| f(x, y)))
                .collect();
            return Ok(Tensor::from_parts(sa.to_vec(), data));
        }
        Err(TensorError::ShapeMismatch {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    /// Adds a vector `b` along `axis` of `a` (per-channel or per-row bias).
    pub fn add_bias(&mut self, a: Var, b: Var, axis: usize) -> TensorResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if axis >= ta.ndim() || tb.ndim() != 1 || tb.numel() != ta.shape()[axis] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let inner: usize = ta.shape()[axis + 1..].iter().product();
        let len = tb.numel();
        let mut data = ta.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tb.data()[(i / inner) % len];
        }
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        Ok(self.push(value, Op::AddBias { a, b, axis }, &[a, b]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |v| v + c)
    }

    pub fn mul_elem(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y).map_err(|_| {
            TensorError::ShapeMismatch {
                op: "mul_elem",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            }
        })?;
        Ok(self.push(value, Op::MulElem(a, b), &[a, b]))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::ScalarMul(a, c), |v| v * c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scalar_mul(a, -1.0)
    }

    /// `[m x k] . [k x n] -> [m x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a . b^T` for `a: [m x k]`, `b: [n x k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> TensorResult<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> TensorResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let mismatch = || TensorError::ShapeMismatch {
            op: if trans_b { "matmul_bt" } else { "matmul" },
            lhs: ta.shape().to_vec(),
            rhs: tb.shape().to_vec(),
        };
        if ta.ndim() != 2 || tb.ndim() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (kb, n, bs) = if trans_b {
            (tb.shape()[1], tb.shape()[0], (1isize, tb.shape()[1] as isize))
        } else {
            (tb.shape()[0], tb.shape()[1], (tb.shape()[1] as isize, 1isize))
        };
        if kb != k {
            return Err(mismatch());
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), bs, &mut out, 0.0);
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    fn conv_geom(&self, x: Var, filters: Var) -> TensorResult<(usize, usize, ConvGeom)> {
        let (tx, tf) = (self.value(x), self.value(filters));
        let mismatch = || TensorError::ShapeMismatch {
            op: "conv2d_same",
            lhs: tx.shape().to_vec(),
            rhs: tf.shape().to_vec(),
        };
        let (batch, sx) = match tx.ndim() {
            3 => (1, tx.shape()),
            4 => (tx.shape()[0], &tx.shape()[1..]),
            _ => return Err(mismatch()),
        };
        if tf.ndim() != 4 || tf.shape()[1] != sx[0] {
            return Err(mismatch());
        }
        let geom = ConvGeom {
            c_in: sx[0],
            h: sx[1],
            w: sx[2],
            kh: tf.shape()[2],
            kw: tf.shape()[3],
        };
        Ok((batch, tf.shape()[0], geom))
    }

    /// Same-padded stride-1 correlation of `x: [C_in x H x W]` (or a batch
    /// `[B x C_in x H x W]`) with `filters: [C_out x C_in x kh x kw]`. Padding
    /// is zero; tap `(kh/2, kw/2)` of each filter lands on the output pixel.
    pub fn conv2d_same(&mut self, x: Var, filters: Var) -> TensorResult<Var> {
        let (batch, c_out, g) = self.conv_geom(x, filters)?;
        let (tx, tf) = (self.value(x), self.value(filters));
        let npix = g.pixels();
        let mut xp = vec![0.0; g.c_in * g.plane_len()];
        let mut wide = vec![0.0; g.wide_len()];
        let mut out = vec![0.0; batch * c_out * npix];
        for bi in 0..batch {
            g.pad(&tx.data()[bi * g.c_in * npix..(bi + 1) * g.c_in * npix], &mut xp);
            g.forward(&xp, tf.data(), c_out, &mut out[bi * c_out * npix..(bi + 1) * c_out * npix], &mut wide);
        }
        let shape = if tx.ndim() == 3 {
            vec![c_out, g.h, g.w]
        } else {
            vec![batch, c_out, g.h, g.w]
        };
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Conv2d { x, filters }, &[x, filters]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    /// `|a|`; the subgradient at zero is taken to be zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), f64::abs)
    }

    /// `log(max(a, eps))`.
    pub fn log_clamped(&mut self, a: Var, eps: f64) -> Var {
        self.unary(a, Op::LogClamped(a, eps), |v| v.max(eps).ln())
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// `sum(|a|)`.
    pub fn l1(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).data().iter().map(|v| v.abs()).sum());
        self.push(value, Op::L1(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> TensorResult<Var> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(a), &[a]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&mut self, a: Var, perm: &[usize]) -> TensorResult<Var> {
        let ta = self.value(a);
        let mut seen = vec![false; ta.ndim()];
        if perm.len() != ta.ndim() || perm.iter().any(|&p| p >= ta.ndim() || std::mem::replace(&mut seen[p], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of the axes of {:?}", ta.shape()),
            });
        }
        let value = permute_tensor(ta, perm);
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), &[a]))
    }

    /// Sums out one axis.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> TensorResult<Var> {
        let ta = self.value(a);
        if axis >= ta.ndim() {
            return Err(TensorError::Invalid {
                op: "sum_axis",
                msg: format!("axis {axis} out of range for {:?}", ta.shape()),
            });
        }
        let s = ta.shape();
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &ta.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += v;
                }
            }
        }
        let mut shape = s.to_vec();
        shape.remove(axis);
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::SumAxis(a, axis), &[a]))
    }

    /// Accumulates `d root / d node` into every differentiable ancestor of
    /// `root`. Calling it twice without [`zero_grads`](Self::zero_grads)
    /// adds the same gradients again.
    pub fn backward(&mut self, root: Var) -> TensorResult<()> {
        if !self.value(root).is_scalar() {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        let mut local: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        local[root.0] = Some(Tensor::ones(self.shape(root)));
        for i in (0..=root.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut local);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g)?,
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, local: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut send = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut local[v.0] {
                Some(acc) => acc
                    .add_assign(&t)
                    .expect("gradient shape matches value shape"),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                send(*a, g.clone());
                if self.rg(*b) {
                    let mut gb = reduce_to(g, self.shape(*b));
                    if neg {
                        gb = gb.scale(-1.0);
                    }
                    send(*b, gb);
                }
            }
            Op::AddBias { a, b, axis } => {
                send(*a, g.clone());
                if self.rg(*b) {
                    let len = self.value(*b).numel();
                    let inner: usize = g.shape()[axis + 1..].iter().product();
                    let mut gb = vec![0.0; len];
                    for (j, v) in g.data().iter().enumerate() {
                        gb[(j / inner) % len] += v;
                    }
                    send(*b, Tensor::from_parts(vec![len], gb));
                }
            }
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::MulElem(a, b) => {
                if self.rg(*a) {
                    send(*a, mul(g, self.value(*b)));
                }
                if self.rg(*b) {
                    send(*b, mul(g, self.value(*a)));
                }
            }
            Op::ScalarMul(a, c) => send(*a, g.scale(*c)),
            Op::MatMul { a, b, trans_b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = g.shape()[1];
                if self.rg(*a) {
                    // dA = g . B_eff^T
                    let bs = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n as isize, 1), tb.data(), bs, &mut da, 0.0);
                    send(*a, Tensor::from_parts(vec![m, k], da));
                }
                if self.rg(*b) {
                    let db = if *trans_b {
                        // b is [n x k]: db = g^T . A
                        let mut db = vec![0.0; n * k];
                        gemm(n, m, k, g.data(), (1, n as isize), ta.data(), (k as isize, 1), &mut db, 0.0);
                        Tensor::from_parts(vec![n, k], db)
                    } else {
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), &mut db, 0.0);
                        Tensor::from_parts(vec![k, n], db)
                    };
                    send(*b, db);
                }
            }
            Op::Conv2d { x, filters } => {
                let (batch, c_out, geom) = self.conv_geom(*x, *filters).expect("validated in forward");
                let (tx, tf) = (self.value(*x), self.value(*filters));
                let npix = geom.pixels();
                let need_f = self.rg(*filters);
                let need_x = self.rg(*x);
                let mut df = vec![0.0; tf.numel()];
                let mut dx = vec![0.0; if need_x { tx.numel() } else { 0 }];
                let mut xp = vec![0.0; geom.c_in * geom.plane_len()];
                let mut gw = vec![0.0; c_out * geom.wide_len()];
                for bi in 0..batch {
                    geom.widen(&g.data()[bi * c_out * npix..(bi + 1) * c_out * npix], c_out, &mut gw);
                    let xs = bi * geom.c_in * npix..(bi + 1) * geom.c_in * npix;
                    if need_f {
                        geom.pad(&tx.data()[xs.clone()], &mut xp);
                        geom.filter_grad(&xp, &gw, c_out, &mut df);
                    }
                    if need_x {
                        geom.input_grad(tf.data(), &gw, c_out, &mut xp, &mut dx[xs]);
                    }
                }
                if need_f {
                    send(*filters, Tensor::from_parts(tf.shape().to_vec(), df));
                }
                if need_x {
                    send(*x, Tensor::from_parts(tx.shape().to_vec(), dx));
                }
            }
            Op::Relu(a) => send(*a, zip(g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::LeakyRelu(a, s) => {
                let s = *s;
                send(*a, zip(g, self.value(*a), |g, x| if x > 0.0 { g } else { s * g }))
            }
            Op::Tanh(a) => send(*a, zip(g, &node.value, |g, y| g * (1.0 - y * y))),
            Op::Sigmoid(a) => send(*a, zip(g, &node.value, |g, y| g * y * (1.0 - y))),
            Op::Abs(a) => send(*a, zip(g, self.value(*a), |g, x| g * sign(x))),
            Op::LogClamped(a, eps) => {
                let eps = *eps;
                send(*a, zip(g, self.value(*a), |g, x| if x > eps { g / x } else { 0.0 }))
            }
            Op::Sum(a) => {
                let s = g.item();
                send(*a, Tensor::full(self.shape(*a), s))
            }
            Op::L1(a) => {
                let s = g.item();
                send(*a, self.value(*a).map(|x| s * sign(x)))
            }
            Op::Reshape(a) => send(*a, g.reshape(self.shape(*a)).expect("same element count")),
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(*a, permute_tensor(g, &inv))
            }
            Op::SumAxis(a, axis) => {
                let s = self.shape(*a);
                let inner: usize = s[axis + 1..].iter().product();
                let len = s[*axis];
                let outer: usize = s[..*axis].iter().product();
                let mut out = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g.data()[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        out[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(src);
                    }
                }
                send(*a, Tensor::from_parts(s.to_vec(), out))
            }
        }
    }
}

fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    zip(a, b, |x, y| x * y)
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    a.zip_map(b, f).expect("gradient shape matches value shape")
}

/// Sums a gradient over broadcast leading dimensions down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let inner: usize = shape.iter().product();
    let mut out = vec![0.0; inner];
    for chunk in g.data().chunks(inner) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn permute_tensor(t: &Tensor, perm: &[usize]) -> Tensor {
    let s = t.shape();
    let nd = s.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * s[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(t.numel());
    let mut idx = vec![0usize; nd];
    for _ in 0..t.numel() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(t.data()[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::from_parts(out_shape, out)
}

/// Outcome of comparing tape gradients against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
    pub max_rel_error: f64,
    /// Coordinates skipped because `f` has a kink within `h` of them.
    pub excluded: Vec<usize>,
}

/// Maximum relative error between the tape gradient of scalar `f` at `x` and
/// a central-difference estimate with step `h`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> TensorResult<f64>
where
    F: Fn(&mut Tape, Var) -> TensorResult<Var>,
{
    grad_check_detailed(f, x, h).map(|r| r.max_rel_error)
}

/// Like [`grad_check`], also reporting which coordinates were skipped.
///
/// A coordinate is skipped when the forward and backward one-sided
/// differences disagree by more than `1e-3 + 1e-2 * max(|fwd|, |bwd|)`, which
/// only happens when a nondifferentiable point lies inside `[x - h, x + h]`.
pub fn grad_check_detailed<F>(f: F, x: &Tensor, h: f64) -> TensorResult<GradCheck>
where
    F: Fn(&mut Tape, Var) -> TensorResult<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let root = f(&mut tape, xv)?;
    tape.backward(root)?;
    let analytic = tape.grad(xv);
    let f0 = tape.value(root).item();

    let eval = |p: &Tensor| -> TensorResult<f64> {
        let mut t = Tape::new();
        let v = t.constant(p.clone());
        let r = f(&mut t, v)?;
        Ok(t.value(r).item())
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        excluded: Vec::new(),
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let (fwd, bwd) = ((fp - f0) / h, (f0 - fm) / h);
        if (fwd - bwd).abs() > 1e-3 + 1e-2 * fwd.abs().max(bwd.abs()) {
            report.excluded.push(i);
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max(rel);
    }
    Ok(report)
}
