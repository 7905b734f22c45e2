//! Desk-scale generative adversarial prior: generator, discriminator,
//! adversarial training, and the perceptual loss used during recovery.

use std::path::Path;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{self, LayerRecord};
use crate::nn::{adam_step, Activation, AdamState, LayerKind, LayerSpec, Sequential};
use crate::rng::Rng;
use crate::tensor::{Tensor, TensorResult};
use crate::{Error, Result};

/// Floor applied inside every log of the adversarial losses.
pub const LOG_EPS: f64 = 1e-8;

/// Architecture of a generator/discriminator pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    pub latent_dim: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            latent_dim: 100,
            channels: 1,
            height: 16,
            width: 16,
            generator_hidden: vec![128, 256],
            discriminator_hidden: vec![256, 128],
        }
    }
}

impl GanConfig {
    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn mlp(dims: &[usize], hidden: Activation, last: Activation) -> Vec<LayerSpec> {
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            kind: LayerKind::Dense { inputs: w[0], outputs: w[1] },
            activation: if i + 2 == dims.len() { last } else { hidden },
        })
        .collect()
}

/// Maps latent codes in `[-1, 1]^T` to images in `[-1, 1]` (final tanh).
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Sequential,
    latent_dim: usize,
    output_shape: [usize; 3],
}

impl Generator {
    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    /// `[C, H, W]` of one generated image.
    pub fn output_shape(&self) -> [usize; 3] {
        self.output_shape
    }

    pub fn pixels(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// Generates a batch: `z: [B x T]` to `[B x C*H*W]`.
    pub fn forward(&self, tape: &mut Tape, z: Var, trainable: bool) -> TensorResult<(Var, Vec<Var>)> {
        self.net.forward(tape, z, trainable)
    }

    /// Generates a single image from `z: [T]`.
    pub fn sample(&self, z: &Tensor) -> Result<Tensor> {
        let t = self.latent_dim;
        let batch = z.reshape(&[1, t])?;
        let flat = self.net.eval(&batch)?;
        Ok(flat.reshape(&self.output_shape)?)
    }

    /// Generates one image per row of `z: [B x T]`, returned as `[B x C*H*W]`.
    pub fn sample_batch(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.net.eval(z)?)
    }
}

/// Scores flattened images with a probability of being real (final sigmoid).
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Sequential,
}

impl Discriminator {
    /// `x: [B x C*H*W]` to scores `[B x 1]`.
    pub fn forward(&self, tape: &mut Tape, x: Var, trainable: bool) -> TensorResult<(Var, Vec<Var>)> {
        self.net.forward(tape, x, trainable)
    }

    pub fn score(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.net.eval(x)?)
    }
}

/// dense(T,h1) leaky dense(h1,h2) leaky ... dense(.., C*H*W) tanh.
pub fn build_generator(cfg: &GanConfig, rng: &mut Rng) -> Generator {
    let mut dims = vec![cfg.latent_dim];
    dims.extend(&cfg.generator_hidden);
    dims.push(cfg.pixels());
    Generator {
        net: Sequential::new(mlp(&dims, Activation::LeakyRelu, Activation::Tanh), rng),
        latent_dim: cfg.latent_dim,
        output_shape: [cfg.channels, cfg.height, cfg.width],
    }
}

/// dense(C*H*W,h1) leaky ... dense(.., 1) sigmoid.
pub fn build_discriminator(cfg: &GanConfig, rng: &mut Rng) -> Discriminator {
    let mut dims = vec![cfg.pixels()];
    dims.extend(&cfg.discriminator_hidden);
    dims.push(1);
    Discriminator {
        net: Sequential::new(mlp(&dims, Activation::LeakyRelu, Activation::Sigmoid), rng),
    }
}

/// `sum_b log(max(1 - D(x_b), eps))` over a batch `images: [B x C*H*W]`.
/// The discriminator's parameters are bound as constants.
pub fn perceptual_loss(tape: &mut Tape, disc: &Discriminator, images: Var) -> TensorResult<Var> {
    let (d, _) = disc.forward(tape, images, false)?;
    Ok(log_one_minus_sum(tape, d))
}

fn log_one_minus_sum(tape: &mut Tape, d: Var) -> Var {
    let neg = tape.neg(d);
    let one_minus = tape.add_scalar(neg, 1.0);
    let logs = tape.log_clamped(one_minus, LOG_EPS);
    tape.sum(logs)
}

/// Value of [`perceptual_loss`] for a list of flattened or shaped images.
pub fn perceptual_loss_value(disc: &Discriminator, images: &[Tensor]) -> Result<f64> {
    let flat: Vec<Tensor> = images
        .iter()
        .map(|t| t.reshape(&[t.numel()]))
        .collect::<TensorResult<_>>()?;
    let batch = Tensor::stack(&flat)?;
    let mut tape = Tape::new();
    let x = tape.constant(batch);
    let l = perceptual_loss(&mut tape, disc, x)?;
    Ok(tape.value(l).item())
}

/// Hyperparameters of [`gan_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    /// Discriminator target for real images (one-sided label smoothing below 1).
    pub real_label: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch: 32,
            lr_g: 1e-3,
            lr_d: 2e-4,
            beta1: 0.5,
            real_label: 0.9,
        }
    }
}

/// Mean per-epoch losses.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct TrainingLog {
    pub d_loss: Vec<f64>,
    pub g_loss: Vec<f64>,
}

fn uniform_latents(rng: &mut Rng, batch: usize, dim: usize) -> Tensor {
    let data = (0..batch * dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    Tensor::new(&[batch, dim], data).expect("positive dims")
}

/// Alternates one discriminator step (maximize `log D(x) + log(1 - D(G(z)))`)
/// and one generator step (minimize `-log D(G(z))`) per batch. `dataset`
/// images must already be scaled to `[-1, 1]`; latents are drawn from
/// `U(-1, 1)`, matching the box the recovery projects onto.
pub fn gan_train(
    gen: &mut Generator,
    disc: &mut Discriminator,
    dataset: &[Tensor],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainingLog> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be at least 1".into()));
    }
    let pixels = gen.pixels();
    if let Some(bad) = dataset.iter().position(|t| t.numel() != pixels) {
        return Err(Error::InvalidArgument(format!(
            "dataset item {bad} has {} values, generator emits {pixels}",
            dataset[bad].numel()
        )));
    }
    let mut adam_g = AdamState::with_betas(&gen.net.params, cfg.beta1, 0.999);
    let mut adam_d = AdamState::with_betas(&disc.net.params, cfg.beta1, 0.999);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = TrainingLog::default();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut d_sum, mut g_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch) {
            let b = chunk.len();
            let mut real = Vec::with_capacity(b * pixels);
            for &i in chunk {
                real.extend_from_slice(dataset[i].data());
            }
            let real = Tensor::new(&[b, pixels], real)?;

            // discriminator step
            let z = uniform_latents(rng, b, gen.latent_dim);
            let fake = gen.sample_batch(&z)?;
            let mut tape = Tape::new();
            let dvars = disc.net.params.bind(&mut tape, true);
            let xr = tape.constant(real);
            let xf = tape.constant(fake);
            let dr = disc.net.forward_bound(&mut tape, xr, &dvars)?;
            let df = disc.net.forward_bound(&mut tape, xf, &dvars)?;
            let lr_ = tape.log_clamped(dr, LOG_EPS);
            let lr_ = tape.sum(lr_);
            let lr_ = tape.scalar_mul(lr_, cfg.real_label);
            let lr_miss = log_one_minus_sum(&mut tape, dr);
            let lr_miss = tape.scalar_mul(lr_miss, 1.0 - cfg.real_label);
            let lf = log_one_minus_sum(&mut tape, df);
            let total = tape.add(lr_, lr_miss)?;
            let total = tape.add(total, lf)?;
            let d_loss = tape.scalar_mul(total, -1.0 / b as f64);
            tape.backward(d_loss)?;
            let d_val = tape.value(d_loss).item();
            disc.net.params.zero_grads();
            disc.net.params.accumulate_grads(&tape, &dvars)?;
            adam_step(&mut disc.net.params, &mut adam_d, cfg.lr_d)?;

            // generator step, non-saturating loss
            let z = uniform_latents(rng, b, gen.latent_dim);
            let mut tape = Tape::new();
            let zv = tape.constant(z);
            let (x, gvars) = gen.forward(&mut tape, zv, true)?;
            let (d, _) = disc.forward(&mut tape, x, false)?;
            let ld = tape.log_clamped(d, LOG_EPS);
            let ld = tape.sum(ld);
            let g_loss = tape.scalar_mul(ld, -1.0 / b as f64);
            tape.backward(g_loss)?;
            let g_val = tape.value(g_loss).item();
            gen.net.params.zero_grads();
            gen.net.params.accumulate_grads(&tape, &gvars)?;
            adam_step(&mut gen.net.params, &mut adam_g, cfg.lr_g)?;

            if !d_val.is_finite() || !g_val.is_finite() || !gen.net.params.all_finite() || !disc.net.params.all_finite() {
                return Err(Error::NonFinite {
                    context: format!("GAN training, epoch {epoch}, batch {batches} (d_loss={d_val}, g_loss={g_val})"),
                });
            }
            d_sum += d_val;
            g_sum += g_val;
            batches += 1;
        }
        log.d_loss.push(d_sum / batches as f64);
        log.g_loss.push(g_sum / batches as f64);
        log::debug!("gan epoch {epoch}: d={:.4} g={:.4}", d_sum / batches as f64, g_sum / batches as f64);
    }
    Ok(log)
}

/// Serializes both networks into one checkpoint file. Generator layers come
/// first; its final (tanh) layer carries the output image's spatial view.
pub fn encode_checkpoint(gen: &Generator, disc: &Discriminator) -> Vec<u8> {
    let [_, h, w] = gen.output_shape;
    let n_gen = gen.net.layers().len();
    let mut records: Vec<LayerRecord> = gen.net.layers().iter().map(|&s| LayerRecord::plain(s)).collect();
    records[n_gen - 1].view = (h, w);
    records.extend(disc.net.layers().iter().map(|&s| LayerRecord::plain(s)));
    let tensors: Vec<&Tensor> = gen
        .net
        .params
        .iter()
        .chain(disc.net.params.iter())
        .map(|p| &p.value)
        .collect();
    checkpoint::encode(gen.latent_dim, &records, &tensors)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Generator, Discriminator)> {
    let file = checkpoint::decode(bytes)?;
    let split = file
        .layers
        .iter()
        .position(|l| l.spec.activation == Activation::Tanh)
        .map(|i| i + 1)
        .ok_or_else(|| Error::format("checkpoint", "no tanh layer terminating the generator"))?;
    if split == file.layers.len() {
        return Err(Error::format("checkpoint", "no discriminator layers"));
    }
    let last = file.layers[split - 1];
    let (h, w) = last.view;
    let outputs = last.spec.kind.bias_len();
    if outputs % (h * w) != 0 {
        return Err(Error::format(
            "checkpoint",
            format!("generator output {outputs} is not a multiple of its {h}x{w} view"),
        ));
    }
    let specs = |r: &[LayerRecord]| r.iter().map(|l| l.spec).collect::<Vec<_>>();
    let mut tensors = file.tensors;
    let disc_tensors = tensors.split_off(2 * split);
    let gen = Generator {
        net: Sequential::from_parts(specs(&file.layers[..split]), tensors)?,
        latent_dim: file.latent_dim,
        output_shape: [outputs / (h * w), h, w],
    };
    let disc = Discriminator {
        net: Sequential::from_parts(specs(&file.layers[split..]), disc_tensors)?,
    };
    Ok((gen, disc))
}

pub fn save_checkpoint(path: &Path, gen: &Generator, disc: &Discriminator) -> Result<()> {
    checkpoint::write_file(path, &encode_checkpoint(gen, disc))
}

pub fn load_checkpoint(path: &Path) -> Result<(Generator, Discriminator)> {
    decode_checkpoint(&checkpoint::read_file(path)?)
}
