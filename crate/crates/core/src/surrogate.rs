//! Trainable stand-ins for the unknown measurement process.
//!
//! Two families: a two-layer convolutional network without nonlinearity for
//! linear image operators, and a pixel-wise two-layer perceptron for source
//! mixing. Both keep their weights in a [`Sequential`] so they share the
//! optimizer plumbing and the layer-file format.

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{self, LayerRecord};
use crate::nn::{Activation, LayerKind, LayerSpec, ParameterSet, Sequential};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError, TensorResult};
use crate::{Error, Result};

pub const HIDDEN_CHANNELS: usize = 16;
pub const CONV_KERNEL: usize = 5;
pub const HIDDEN_UNITS: usize = 16;

/// `conv(C -> 16, 5x5)` then `conv(16 -> C, 5x5)`, linear unless `relu` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSurrogate {
    pub net: Sequential,
}

/// Per-pixel `dense(S -> 16) relu dense(16 -> N_obs)` with weights shared
/// across pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSurrogate {
    pub net: Sequential,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surrogate {
    Conv(ConvSurrogate),
    Mix(MixSurrogate),
}

pub fn build_conv_surrogate(channels: usize, relu: bool, rng: &mut Rng) -> ConvSurrogate {
    ConvSurrogate {
        net: Sequential::new(conv_layers(channels, relu), rng),
    }
}

fn conv_layers(channels: usize, relu: bool) -> Vec<LayerSpec> {
    vec![
        LayerSpec {
            kind: LayerKind::Conv2d { c_out: HIDDEN_CHANNELS, c_in: channels, kh: CONV_KERNEL, kw: CONV_KERNEL },
            activation: if relu { Activation::Relu } else { Activation::None },
        },
        LayerSpec {
            kind: LayerKind::Conv2d { c_out: channels, c_in: HIDDEN_CHANNELS, kh: CONV_KERNEL, kw: CONV_KERNEL },
            activation: Activation::None,
        },
    ]
}

pub fn build_mix_surrogate(sources: usize, observations: usize, rng: &mut Rng) -> MixSurrogate {
    let layers = vec![
        LayerSpec {
            kind: LayerKind::Dense { inputs: sources, outputs: HIDDEN_UNITS },
            activation: Activation::Relu,
        },
        LayerSpec {
            kind: LayerKind::Dense { inputs: HIDDEN_UNITS, outputs: observations },
            activation: Activation::None,
        },
    ];
    MixSurrogate {
        net: Sequential::new(layers, rng),
    }
}

impl ConvSurrogate {
    /// Both layers pass channel `c` straight through hidden channel `c`.
    pub fn identity(channels: usize) -> Self {
        assert!(channels <= HIDDEN_CHANNELS);
        let mut net = Sequential::new(conv_layers(channels, false), &mut Rng::seed(0));
        for l in 0..2 {
            net.weight_mut(l).data_mut().fill(0.0);
        }
        let mid = CONV_KERNEL / 2;
        for c in 0..channels {
            net.weight_mut(0).set(&[c, c, mid, mid], 1.0);
            net.weight_mut(1).set(&[c, c, mid, mid], 1.0);
        }
        ConvSurrogate { net }
    }

    pub fn channels(&self) -> usize {
        self.net.weight(0).shape()[1]
    }

    pub fn has_relu(&self) -> bool {
        self.net.layers()[0].activation != Activation::None
    }

    /// The single kernel bank `[C x C x 9 x 9]` equivalent to the two layers
    /// (biases ignored). Equals the surrogate exactly wherever the hidden
    /// layer's zero padding is not reached, e.g. on images with a zero border
    /// at least two pixels wide.
    pub fn effective_kernel(&self) -> Result<Tensor> {
        if self.has_relu() {
            return Err(Error::InvalidArgument("effective kernel is undefined with a ReLU between layers".into()));
        }
        let (f1, f2) = (self.net.weight(0), self.net.weight(1));
        let (mid, c_in, k1h, k1w) = (f1.shape()[0], f1.shape()[1], f1.shape()[2], f1.shape()[3]);
        let (c_out, k2h, k2w) = (f2.shape()[0], f2.shape()[2], f2.shape()[3]);
        let (kh, kw) = (k1h + k2h - 1, k1w + k2w - 1);
        let mut k = Tensor::zeros(&[c_out, c_in, kh, kw]);
        for o in 0..c_out {
            for i in 0..c_in {
                for m in 0..mid {
                    for ay in 0..k1h {
                        for ax in 0..k1w {
                            let a = f1.get(&[m, i, ay, ax]);
                            for by in 0..k2h {
                                for bx in 0..k2w {
                                    let at = k.offset(&[o, i, ay + by, ax + bx]);
                                    k.data_mut()[at] += a * f2.get(&[o, m, by, bx]);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(k)
    }

    /// One `(out, in)` slice of [`effective_kernel`](Self::effective_kernel).
    pub fn effective_kernel_for(&self, out: usize, input: usize) -> Result<crate::ConvKernel> {
        let bank = self.effective_kernel()?;
        let (kh, kw) = (bank.shape()[2], bank.shape()[3]);
        let at = bank.offset(&[out, input, 0, 0]);
        crate::ConvKernel::new(Tensor::new(&[kh, kw], bank.data()[at..at + kh * kw].to_vec())?)
    }
}

impl MixSurrogate {
    pub fn sources(&self) -> usize {
        self.net.weight(0).shape()[1]
    }

    pub fn observations(&self) -> usize {
        self.net.weight(1).shape()[0]
    }

    fn forward_bound(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> TensorResult<Var> {
        let shape = tape.shape(x).to_vec();
        let (batched, s, m) = match shape[..] {
            [s, m] => (None, s, m),
            [b, s, m] => (Some(b), s, m),
            _ => return Err(self.shape_error(&shape)),
        };
        if s != self.sources() {
            return Err(self.shape_error(&shape));
        }
        // columns are pixels (of every set in the batch)
        let cols = match batched {
            None => x,
            Some(b) => {
                let p = tape.permute(x, &[1, 0, 2])?;
                tape.reshape(p, &[s, b * m])?
            }
        };
        let h = tape.matmul(vars[0], cols)?;
        let h = tape.add_bias(h, vars[1], 0)?;
        let h = tape.relu(h);
        let y = tape.matmul(vars[2], h)?;
        let y = tape.add_bias(y, vars[3], 0)?;
        match batched {
            None => Ok(y),
            Some(b) => {
                let n = self.observations();
                let y = tape.reshape(y, &[n, b, m])?;
                tape.permute(y, &[1, 0, 2])
            }
        }
    }

    fn shape_error(&self, got: &[usize]) -> TensorError {
        TensorError::ShapeMismatch {
            op: "MixSurrogate::forward",
            lhs: vec![self.sources(), 0],
            rhs: got.to_vec(),
        }
    }
}

impl Surrogate {
    pub fn net(&self) -> &Sequential {
        match self {
            Surrogate::Conv(s) => &s.net,
            Surrogate::Mix(s) => &s.net,
        }
    }

    pub fn params(&self) -> &ParameterSet {
        &self.net().params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        match self {
            Surrogate::Conv(s) => &mut s.net.params,
            Surrogate::Mix(s) => &mut s.net.params,
        }
    }

    /// Checks that source sets of shape `source_shape` are valid inputs.
    pub fn check_source_shape(&self, source_shape: &[usize]) -> Result<()> {
        let ok = match self {
            Surrogate::Conv(s) => source_shape.len() == 3 && source_shape[0] == s.channels(),
            Surrogate::Mix(s) => source_shape.len() == 2 && source_shape[0] == s.sources(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "surrogate cannot consume sources of shape {source_shape:?}"
            )))
        }
    }

    /// Records the surrogate; its parameters are leaves when `trainable`.
    /// Accepts a single source set or a batch of them.
    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> TensorResult<(Var, Vec<Var>)> {
        let vars = self.params().bind(tape, trainable);
        let y = self.forward_bound(tape, x, &vars)?;
        Ok((y, vars))
    }

    pub fn forward_bound(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> TensorResult<Var> {
        match self {
            Surrogate::Conv(s) => s.net.forward_bound(tape, x, vars),
            Surrogate::Mix(s) => s.forward_bound(tape, x, vars),
        }
    }

    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (y, _) = self.forward(&mut tape, xv, false)?;
        Ok(tape.value(y).clone())
    }

    /// Layer-file encoding (latent dimension field is 0).
    pub fn encode(&self) -> Vec<u8> {
        let net = self.net();
        let records: Vec<LayerRecord> = net.layers().iter().map(|&s| LayerRecord::plain(s)).collect();
        let tensors: Vec<&Tensor> = net.params.iter().map(|p| &p.value).collect();
        checkpoint::encode(0, &records, &tensors)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let file = checkpoint::decode(bytes)?;
        let specs: Vec<LayerSpec> = file.layers.iter().map(|l| l.spec).collect();
        let conv = specs.iter().all(|s| matches!(s.kind, LayerKind::Conv2d { .. }));
        let dense = specs.iter().all(|s| matches!(s.kind, LayerKind::Dense { .. }));
        if specs.len() != 2 || !(conv || dense) {
            return Err(Error::format("surrogate", "expected two conv or two dense layers"));
        }
        let net = Sequential::from_parts(specs, file.tensors)?;
        Ok(if conv {
            Surrogate::Conv(ConvSurrogate { net })
        } else {
            Surrogate::Mix(MixSurrogate { net })
        })
    }
}

impl From<ConvSurrogate> for Surrogate {
    fn from(s: ConvSurrogate) -> Self {
        Surrogate::Conv(s)
    }
}

impl From<MixSurrogate> for Surrogate {
    fn from(s: MixSurrogate) -> Self {
        Surrogate::Mix(s)
    }
}
