//! Ground-truth measurement processes used to synthesize observations.
//!
//! The recovery never sees these: they generate data and back the
//! known-operator baseline.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::harness::persist;
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorError, TensorResult};
use crate::{Error, Result};

/// A 2-D correlation kernel `[kh x kw]`, applied channel by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    values: Tensor,
}

impl ConvKernel {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.ndim() != 2 {
            return Err(Error::InvalidArgument(format!("kernel must be 2-D, got {:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(Error::InvalidArgument("kernel has non-finite entries".into()));
        }
        Ok(ConvKernel { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    /// Filter bank `[C x C x kh x kw]` applying this kernel to every channel separately.
    pub fn channel_bank(&self, channels: usize) -> Tensor {
        let (kh, kw) = (self.height(), self.width());
        let mut bank = Tensor::zeros(&[channels, channels, kh, kw]);
        for c in 0..channels {
            let at = bank.offset(&[c, c, 0, 0]);
            bank.data_mut()[at..at + kh * kw].copy_from_slice(self.values.data());
        }
        bank
    }

    /// Embeds the kernel, centered, in a larger odd-sized frame; both
    /// anchors `(k/2, k/2)` coincide.
    pub fn padded_to(&self, h: usize, w: usize) -> Result<ConvKernel> {
        let (kh, kw) = (self.height(), self.width());
        if h < kh || w < kw {
            return Err(Error::InvalidArgument(format!("cannot pad {kh}x{kw} kernel into {h}x{w}")));
        }
        let (oy, ox) = (h / 2 - kh / 2, w / 2 - kw / 2);
        if oy + kh > h || ox + kw > w {
            return Err(Error::InvalidArgument(format!("anchors of {kh}x{kw} and {h}x{w} cannot be aligned")));
        }
        let mut out = Tensor::zeros(&[h, w]);
        for y in 0..kh {
            for x in 0..kw {
                out.set(&[y + oy, x + ox], self.values.get(&[y, x]));
            }
        }
        ConvKernel::new(out)
    }
}

/// Normalized Gaussian, `k[i,j] ~ exp(-((i-c)^2 + (j-c)^2) / (2 sigma^2))`
/// with `c = (size-1)/2`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<ConvKernel> {
    if size == 0 || !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("gaussian kernel needs size >= 1 and sigma > 0, got {size}, {sigma}")));
    }
    let c = (size as f64 - 1.0) / 2.0;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            data.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = data.iter().sum();
    data.iter_mut().for_each(|v| *v /= total);
    ConvKernel::new(Tensor::new(&[size, size], data)?)
}

/// The 3x3 horizontal-gradient edge kernel.
pub fn edge_kernel() -> ConvKernel {
    let values = Tensor::from_rows(&[
        vec![1.0, 0.0, -1.0],
        vec![2.0, 0.0, -2.0],
        vec![1.0, 0.0, -1.0],
    ])
    .expect("3x3");
    ConvKernel { values }
}

pub(crate) fn as_chw(image: &Tensor) -> Result<[usize; 3]> {
    match *image.shape() {
        [h, w] => Ok([1, h, w]),
        [c, h, w] => Ok([c, h, w]),
        _ => Err(Error::InvalidArgument(format!("expected an image [C x H x W], got {:?}", image.shape()))),
    }
}

/// Same-padded correlation of every channel of `image` (`[H x W]` or
/// `[C x H x W]`) with `kernel`, under the tape's zero-padding and anchor
/// conventions.
pub fn apply_kernel(image: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let [c, h, w] = as_chw(image)?;
    let mut tape = Tape::new();
    let x = tape.constant(image.reshape(&[c, h, w])?);
    let f = tape.constant(kernel.channel_bank(c));
    let y = tape.conv2d_same(x, f)?;
    Ok(tape.value(y).reshape(image.shape())?)
}

/// Circular (wrap-around) correlation of every channel with `kernel`.
pub fn apply_kernel_circular(image: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let [c, h, w] = as_chw(image)?;
    let (kh, kw) = (kernel.height(), kernel.width());
    let (ah, aw) = (kh / 2, kw / 2);
    let mut out = vec![0.0; image.numel()];
    let src = image.data();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for a in 0..kh {
                    let sy = (y + a + h * kh - ah) % h;
                    for b in 0..kw {
                        let sx = (x + b + w * kw - aw) % w;
                        acc += kernel.values.data()[a * kw + b] * src[ch * h * w + sy * w + sx];
                    }
                }
                out[ch * h * w + y * w + x] = acc;
            }
        }
    }
    Ok(Tensor::new(image.shape(), out)?)
}

/// Matrix `[HW x HW]` with `vec(apply_kernel(x)) = T . vec(x)` for a single
/// `H x W` channel. Not necessarily full rank.
pub fn toeplitz_of(kernel: &ConvKernel, h: usize, w: usize) -> Tensor {
    let (kh, kw) = (kernel.height(), kernel.width());
    let (ah, aw) = (kh as isize / 2, kw as isize / 2);
    let n = h * w;
    let mut t = Tensor::zeros(&[n, n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            for sy in 0..h as isize {
                for sx in 0..w as isize {
                    let (a, b) = (sy - y + ah, sx - x + aw);
                    if (0..kh as isize).contains(&a) && (0..kw as isize).contains(&b) {
                        let row = (y * w as isize + x) as usize;
                        let col = (sy * w as isize + sx) as usize;
                        t.set(&[row, col], kernel.values.get(&[a as usize, b as usize]));
                    }
                }
            }
        }
    }
    t
}

/// Mixing weights `[S x N_obs]`; observation is `|M^T X|`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    values: Tensor,
}

impl MixingMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.ndim() != 2 || !values.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "mixing matrix must be a finite 2-D tensor, got {:?}",
                values.shape()
            )));
        }
        Ok(MixingMatrix { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn sources(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn observations(&self) -> usize {
        self.values.shape()[1]
    }

    /// `M^T` as an `[N_obs x S]` tensor.
    pub fn transposed(&self) -> Tensor {
        let (s, n) = (self.sources(), self.observations());
        let mut t = Tensor::zeros(&[n, s]);
        for i in 0..s {
            for j in 0..n {
                t.set(&[j, i], self.values.get(&[i, j]));
            }
        }
        t
    }
}

/// Entries i.i.d. normal with mean -0.5 and standard deviation 0.5.
pub fn sample_mixing(sources: usize, observations: usize, rng: &mut Rng) -> MixingMatrix {
    let data = (0..sources * observations).map(|_| rng.normal(-0.5, 0.5)).collect();
    MixingMatrix {
        values: Tensor::new(&[sources, observations], data).expect("positive dims"),
    }
}

/// `|M^T X|` for sources `x: [S x M_pix]`, giving `[N_obs x M_pix]`.
pub fn mix_abs(m: &MixingMatrix, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = mix_abs_on_tape(&mut tape, m, xv)?;
    Ok(tape.value(y).clone())
}

fn mix_abs_on_tape(tape: &mut Tape, m: &MixingMatrix, x: Var) -> TensorResult<Var> {
    let mt = tape.constant(m.transposed());
    let shape = tape.shape(x).to_vec();
    if let [b, s, px] = shape[..] {
        let cols = tape.permute(x, &[1, 0, 2])?;
        let cols = tape.reshape(cols, &[s, b * px])?;
        let y = tape.matmul(mt, cols)?;
        let y = tape.abs(y);
        let y = tape.reshape(y, &[m.observations(), b, px])?;
        return tape.permute(y, &[1, 0, 2]);
    }
    let y = tape.matmul(mt, x)?;
    Ok(tape.abs(y))
}

/// Adds i.i.d. `N(0, sigma^2)` noise; `sigma = 0` returns `y` unchanged.
pub fn add_noise(y: &Tensor, sigma: f64, rng: &mut Rng) -> Tensor {
    if sigma == 0.0 {
        return y.clone();
    }
    y.map(|v| v + rng.normal(0.0, sigma))
}

/// A ground-truth forward model.
#[derive(Debug, Clone, PartialEq)]
pub enum Operator {
    Identity,
    /// Same-padded correlation with a kernel, labelled for provenance.
    Kernel { label: String, kernel: ConvKernel },
    Mixing(MixingMatrix),
}

impl Operator {
    pub fn blur(size: usize, sigma: f64) -> Result<Self> {
        Ok(Operator::Kernel {
            label: format!("blur(size={size},sigma={sigma})"),
            kernel: gaussian_kernel(size, sigma)?,
        })
    }

    pub fn edge() -> Self {
        Operator::Kernel {
            label: "edge".into(),
            kernel: edge_kernel(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Operator::Identity => "identity".into(),
            Operator::Kernel { label, .. } => label.clone(),
            Operator::Mixing(m) => format!("mix_abs(S={},N_obs={})", m.sources(), m.observations()),
        }
    }

    /// Applies the operator to one source set: an image `[C x H x W]` for
    /// kernels, `[S x M_pix]` for mixing.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Operator::Identity => Ok(x.clone()),
            Operator::Kernel { kernel, .. } => apply_kernel(x, kernel),
            Operator::Mixing(m) => mix_abs(m, x),
        }
    }

    /// Differentiable application on a tape. Kernels accept `[C x H x W]` or
    /// a batch `[B x C x H x W]`; mixing accepts `[S x M_pix]` or `[B x S x M_pix]`.
    pub fn apply_on_tape(&self, tape: &mut Tape, x: Var) -> TensorResult<Var> {
        match self {
            Operator::Identity => Ok(x),
            Operator::Kernel { kernel, .. } => {
                let s = tape.shape(x);
                let c = match s.len() {
                    3 => s[0],
                    4 => s[1],
                    _ => {
                        return Err(TensorError::Invalid {
                            op: "Operator::apply_on_tape",
                            msg: format!("kernel operator needs an image batch, got {s:?}"),
                        })
                    }
                };
                let f = tape.constant(kernel.channel_bank(c));
                tape.conv2d_same(x, f)
            }
            Operator::Mixing(m) => mix_abs_on_tape(tape, m, x),
        }
    }
}

impl fmt::Display for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

/// Observed measurements plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub observations: Vec<Tensor>,
    pub operator_id: String,
    pub seed: u64,
    /// Ground-truth sources, kept only for evaluation.
    pub sources: Option<Vec<Tensor>>,
}

impl ObservationSet {
    pub fn new(observations: Vec<Tensor>, operator_id: String, seed: u64, sources: Option<Vec<Tensor>>) -> Result<Self> {
        let first = observations
            .first()
            .ok_or_else(|| Error::InvalidArgument("an observation set needs at least one observation".into()))?;
        if observations.iter().any(|o| o.shape() != first.shape()) {
            return Err(Error::InvalidArgument("observations must share one shape".into()));
        }
        if let Some(src) = &sources {
            if src.len() != observations.len() || src.iter().any(|s| s.shape() != src[0].shape()) {
                return Err(Error::InvalidArgument("sources must be one equally-shaped tensor per observation".into()));
            }
        }
        Ok(ObservationSet {
            observations,
            operator_id,
            seed,
            sources,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.observations[0].shape()
    }

    /// Writes `manifest.json` plus raw little-endian f32 payloads into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        persist::write_f32(&dir.join(OBS_PAYLOAD), &self.observations)?;
        let sources = match &self.sources {
            Some(src) => {
                persist::write_f32(&dir.join(SRC_PAYLOAD), src)?;
                Some(PayloadRef {
                    shape: src[0].shape().to_vec(),
                    payload: SRC_PAYLOAD.into(),
                })
            }
            None => None,
        };
        let manifest = ObservationManifest {
            operator_id: self.operator_id.clone(),
            seed: self.seed,
            n: self.len(),
            shape: self.shape().to_vec(),
            payload: OBS_PAYLOAD.into(),
            sources,
        };
        persist::write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: ObservationManifest = persist::read_json(&dir.join(MANIFEST))?;
        let observations = persist::read_f32(&dir.join(&m.payload), m.n, &m.shape)?;
        let sources = match m.sources {
            Some(r) => Some(persist::read_f32(&dir.join(&r.payload), m.n, &r.shape)?),
            None => None,
        };
        ObservationSet::new(observations, m.operator_id, m.seed, sources)
    }
}

const MANIFEST: &str = "manifest.json";
const OBS_PAYLOAD: &str = "observations.f32";
const SRC_PAYLOAD: &str = "sources.f32";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PayloadRef {
    shape: Vec<usize>,
    payload: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationManifest {
    operator_id: String,
    seed: u64,
    n: usize,
    shape: Vec<usize>,
    payload: String,
    sources: Option<PayloadRef>,
}

/// Applies `operator` to the first `n` source sets, then adds noise with
/// standard deviation `noise_sigma` drawn from `rng`.
pub fn make_observations(
    sources: &[Tensor],
    operator: &Operator,
    n: usize,
    noise_sigma: f64,
    seed: u64,
    rng: &mut Rng,
) -> Result<ObservationSet> {
    if n == 0 || n > sources.len() {
        return Err(Error::InvalidArgument(format!("requested {n} observations from {} source sets", sources.len())));
    }
    let src = sources[..n].to_vec();
    let obs = src
        .iter()
        .map(|x| operator.apply(x).map(|y| add_noise(&y, noise_sigma, rng)))
        .collect::<Result<Vec<_>>>()?;
    ObservationSet::new(obs, operator.id(), seed, Some(src))
}
