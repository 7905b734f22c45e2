//! Layers, parameter storage, initialization, and the Adam optimizer.

use crate::autodiff::{Tape, Var};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError, TensorResult};
use crate::{Error, Result};

/// Pointwise nonlinearity applied after a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
    /// Leaky ReLU with slope 0.2.
    LeakyRelu,
    Tanh,
    Sigmoid,
}

pub const LEAKY_SLOPE: f64 = 0.2;

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::LeakyRelu => 2,
            Activation::Tanh => 3,
            Activation::Sigmoid => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::None,
            1 => Activation::Relu,
            2 => Activation::LeakyRelu,
            3 => Activation::Tanh,
            4 => Activation::Sigmoid,
            _ => return None,
        })
    }

    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::None => x,
            Activation::Relu => tape.relu(x),
            Activation::LeakyRelu => tape.leaky_relu(x, LEAKY_SLOPE),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// Fully connected layer, `weights . x + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        DenseLayer {
            weights: init_params(&[outputs, inputs], rng, InitScheme::default()),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Records the layer on `tape`; parameters are leaves when `trainable`.
    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> TensorResult<Var> {
        let w = tape.input(self.weights.clone(), trainable);
        let b = tape.input(self.bias.clone(), trainable);
        dense_forward(tape, w, b, x)
    }
}

/// Convolution layer: same-padded correlation plus a per-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    pub filters: Tensor,
    pub bias: Tensor,
}

impl Conv2dLayer {
    pub fn new(c_in: usize, c_out: usize, kh: usize, kw: usize, rng: &mut Rng) -> Self {
        Conv2dLayer {
            filters: init_params(&[c_out, c_in, kh, kw], rng, InitScheme::default()),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> TensorResult<Var> {
        let f = tape.input(self.filters.clone(), trainable);
        let b = tape.input(self.bias.clone(), trainable);
        conv_forward(tape, f, b, x)
    }
}

/// `w . x + b` for `x: [in]`, or `x . w^T + b` row-wise for a batch `x: [B x in]`.
pub fn dense_forward(tape: &mut Tape, w: Var, b: Var, x: Var) -> TensorResult<Var> {
    match tape.shape(x).len() {
        1 => {
            let n = tape.shape(x)[0];
            let col = tape.reshape(x, &[n, 1])?;
            let y = tape.matmul(w, col)?;
            let out = tape.shape(w)[0];
            let y = tape.reshape(y, &[out])?;
            tape.add(y, b)
        }
        2 => {
            let y = tape.matmul_bt(x, w)?;
            tape.add(y, b)
        }
        _ => Err(TensorError::ShapeMismatch {
            op: "dense_forward",
            lhs: tape.shape(w).to_vec(),
            rhs: tape.shape(x).to_vec(),
        }),
    }
}

/// Same-padded convolution plus per-output-channel bias, for `[C x H x W]`
/// or `[B x C x H x W]` inputs.
pub fn conv_forward(tape: &mut Tape, filters: Var, bias: Var, x: Var) -> TensorResult<Var> {
    let y = tape.conv2d_same(x, filters)?;
    let axis = tape.shape(y).len() - 3;
    tape.add_bias(y, bias, axis)
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// i.i.d. `N(0, std^2)`.
    Normal { std: f64 },
    Zeros,
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::Normal { std: 0.02 }
    }
}

pub fn init_params(shape: &[usize], rng: &mut Rng, scheme: InitScheme) -> Tensor {
    match scheme {
        InitScheme::Zeros => Tensor::zeros(shape),
        InitScheme::Normal { std } => {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.normal(0.0, std)).collect();
            Tensor::from_parts(shape.to_vec(), data)
        }
    }
}

/// A named parameter and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered collection of parameters with unique names.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    params: Vec<Parameter>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Parameter { name, value, grad });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Parameter {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Parameter {
        &mut self.params[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Places every value on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.input(p.value.clone(), trainable))
            .collect()
    }

    /// Copies the tape gradients of previously bound vars into `grad`,
    /// accumulating onto whatever is already there.
    pub fn accumulate_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<()> {
        assert_eq!(vars.len(), self.params.len(), "bound var count");
        for (p, &v) in self.params.iter_mut().zip(vars) {
            p.grad.add_assign(&tape.grad(v))?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

pub fn zero_grads(params: &mut ParameterSet) {
    params.zero_grads();
}

/// First and second moment estimates for one [`ParameterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self::with_betas(params, 0.9, 0.999)
    }

    pub fn with_betas(params: &ParameterSet, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if state.m.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "optimizer state tracks {} tensors, parameter set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        if m.shape() != p.value.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: m.shape().to_vec(),
                rhs: p.value.shape().to_vec(),
            }
            .into());
        }
        let it = p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((theta, &g), (mi, vi)) in it {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Shape of one layer in a [`Sequential`] network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense { inputs: usize, outputs: usize },
    Conv2d { c_out: usize, c_in: usize, kh: usize, kw: usize },
}

impl LayerKind {
    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Dense { inputs, outputs } => vec![outputs, inputs],
            LayerKind::Conv2d { c_out, c_in, kh, kw } => vec![c_out, c_in, kh, kw],
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerKind::Dense { outputs, .. } => outputs,
            LayerKind::Conv2d { c_out, .. } => c_out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub activation: Activation,
}

/// A chain of dense/conv layers whose weights live in one [`ParameterSet`],
/// stored as `(weight, bias)` pairs in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    layers: Vec<LayerSpec>,
    pub params: ParameterSet,
}

impl Sequential {
    /// Weights drawn i.i.d. `N(0, 0.02^2)`, biases zero.
    pub fn new(layers: Vec<LayerSpec>, rng: &mut Rng) -> Self {
        let mut params = ParameterSet::new();
        for (i, l) in layers.iter().enumerate() {
            let w = init_params(&l.kind.weight_shape(), rng, InitScheme::default());
            params.push(format!("l{i}.weight"), w).expect("unique names");
            params
                .push(format!("l{i}.bias"), Tensor::zeros(&[l.kind.bias_len()]))
                .expect("unique names");
        }
        Sequential { layers, params }
    }

    /// Rebuilds a network from stored parameters, checking their shapes.
    pub fn from_parts(layers: Vec<LayerSpec>, values: Vec<Tensor>) -> Result<Self> {
        if values.len() != 2 * layers.len() {
            return Err(Error::InvalidArgument(format!(
                "{} layers need {} tensors, got {}",
                layers.len(),
                2 * layers.len(),
                values.len()
            )));
        }
        let mut params = ParameterSet::new();
        let mut it = values.into_iter();
        for (i, l) in layers.iter().enumerate() {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != l.kind.weight_shape().as_slice() || b.shape() != [l.kind.bias_len()] {
                return Err(TensorError::ShapeMismatch {
                    op: "Sequential::from_parts",
                    lhs: l.kind.weight_shape(),
                    rhs: w.shape().to_vec(),
                }
                .into());
            }
            params.push(format!("l{i}.weight"), w)?;
            params.push(format!("l{i}.bias"), b)?;
        }
        Ok(Sequential { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.params.get(2 * layer).value
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.params.get(2 * layer + 1).value
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params.get_mut(2 * layer).value
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.params.get_mut(2 * layer + 1).value
    }

    /// Runs the network; returns the output and the bound parameter vars.
    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> TensorResult<(Var, Vec<Var>)> {
        let vars = self.params.bind(tape, trainable);
        let y = self.forward_bound(tape, x, &vars)?;
        Ok((y, vars))
    }

    /// Runs the network with parameters already on the tape.
    pub fn forward_bound(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> TensorResult<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            let (w, b) = (vars[2 * i], vars[2 * i + 1]);
            h = match l.kind {
                LayerKind::Dense { .. } => dense_forward(tape, w, b, h)?,
                LayerKind::Conv2d { .. } => conv_forward(tape, w, b, h)?,
            };
            h = l.activation.apply(tape, h);
        }
        Ok(h)
    }

    /// Forward pass with no gradient bookkeeping.
    pub fn eval(&self, x: &Tensor) -> TensorResult<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (y, _) = self.forward(&mut tape, xv, false)?;
        Ok(tape.value(y).clone())
    }
}
