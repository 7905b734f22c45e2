//! Alternating recovery of latent codes and a surrogate forward model.
//!
//! Each outer epoch fits the surrogate to the current source estimates
//! `G(z)` with the codes frozen, then moves the codes with the surrogate
//! frozen, clipping them back into range after every step. The solver only
//! sees observations, a source count and a surrogate family.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::gan::{perceptual_loss, perceptual_loss_value, Discriminator, Generator};
use crate::harness::persist;
use crate::measurement::Operator;
use crate::nn::{adam_step, AdamState, ParameterSet};
use crate::rng::Rng;
use crate::surrogate::{build_conv_surrogate, build_mix_surrogate, Surrogate};
use crate::tensor::{Tensor, TensorResult};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// Two linear conv layers; observations are images shaped like `G(z)`.
    #[default]
    Conv,
    /// Two conv layers with a ReLU in between.
    ConvRelu,
    /// Pixel-wise perceptron; observations are `[N_obs x pixels]` mixtures.
    Mix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Outer epochs `T`.
    pub epochs: usize,
    /// Surrogate steps per epoch `T1`.
    pub surrogate_steps: usize,
    /// Latent steps per epoch `T2`.
    pub latent_steps: usize,
    pub lr_theta: f64,
    pub lr_z: f64,
    /// Weight of the perceptual term.
    pub alpha: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Sources per observation set `S`.
    pub sources: usize,
    pub loss_norm: LossNorm,
    pub surrogate: SurrogateKind,
    /// Stop once the epoch loss changes by less than 1e-5 (relative) for 5 epochs.
    pub early_stop: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            epochs: 100,
            surrogate_steps: 50,
            latent_steps: 50,
            lr_theta: 4e-3,
            lr_z: 3e-4,
            alpha: 1e-4,
            clip_lo: -1.0,
            clip_hi: 1.0,
            sources: 1,
            loss_norm: LossNorm::L1,
            surrogate: SurrogateKind::Conv,
            early_stop: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr_theta > 0.0 && self.lr_theta.is_finite()) {
            return bad(format!("lr_theta must be positive, got {}", self.lr_theta));
        }
        if !(self.lr_z > 0.0 && self.lr_z.is_finite()) {
            return bad(format!("lr_z must be positive, got {}", self.lr_z));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.clip_lo < self.clip_hi) {
            return bad(format!("clip range [{}, {}] is empty", self.clip_lo, self.clip_hi));
        }
        if self.sources == 0 {
            return bad("sources must be at least 1".into());
        }
        if matches!(self.surrogate, SurrogateKind::Conv | SurrogateKind::ConvRelu) && self.sources != 1 {
            return bad(format!("conv surrogates recover one source per observation, got sources = {}", self.sources));
        }
        Ok(())
    }

    /// Step budget given to gradient baselines: `T * T2`.
    pub fn baseline_steps(&self) -> usize {
        self.epochs * self.latent_steps
    }
}

/// Losses recorded at the end of one outer epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochLoss {
    pub after_surrogate: f64,
    pub after_latent: f64,
}

/// `[N x S x T]` codes drawn from `U(-1, 1)`.
pub fn init_latents(n: usize, s: usize, t: usize, rng: &mut Rng) -> Tensor {
    let data = (0..n * s * t).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    Tensor::from_parts(vec![n, s, t], data)
}

pub fn project_clip(z: &Tensor, lo: f64, hi: f64) -> Tensor {
    z.map(|v| v.clamp(lo, hi))
}

fn clip_in_place(params: &mut ParameterSet, lo: f64, hi: f64) {
    for i in 0..params.len() {
        for v in params.get_mut(i).value.data_mut() {
            *v = v.clamp(lo, hi);
        }
    }
}

fn residual(tape: &mut Tape, y_est: Var, y_obs: Var) -> TensorResult<Var> {
    let (se, so) = (tape.shape(y_est), tape.shape(y_obs));
    if se.len() < so.len() && so.ends_with(se) {
        tape.sub(y_obs, y_est)
    } else {
        tape.sub(y_est, y_obs)
    }
}

/// `norm(y_est - y_obs) + alpha * perceptual_loss(images)`, where `images`
/// are the flattened sources `[K x C*H*W]`. `y_est` may also be broadcast
/// against the trailing dimensions of `y_obs`.
pub fn total_loss(
    tape: &mut Tape,
    y_est: Var,
    y_obs: Var,
    disc: &Discriminator,
    images: Var,
    alpha: f64,
    norm: LossNorm,
) -> TensorResult<Var> {
    let data = data_loss(tape, y_est, y_obs, norm)?;
    if alpha == 0.0 {
        return Ok(data);
    }
    let per = perceptual_loss(tape, disc, images)?;
    let per = tape.scalar_mul(per, alpha);
    tape.add(data, per)
}

fn data_loss(tape: &mut Tape, y_est: Var, y_obs: Var, norm: LossNorm) -> TensorResult<Var> {
    let r = residual(tape, y_est, y_obs)?;
    Ok(match norm {
        LossNorm::L1 => tape.l1(r),
        LossNorm::L2 => {
            let sq = tape.mul_elem(r, r)?;
            tape.sum(sq)
        }
    })
}

/// How a source set is arranged before the forward model sees it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layout {
    /// `[C x H x W]`, one source per set.
    Image,
    /// `[S x C*H*W]`.
    Rows,
}

/// Forward model used inside the latent objective.
pub(crate) enum Forward<'a> {
    Identity,
    Known(&'a Operator),
    /// Compares the plain sum of the sources against every observed row.
    Additive,
    Model(&'a Surrogate, &'a [Var]),
}

/// Observations and prior shared by the solver and the gradient baselines.
pub(crate) struct Problem<'a> {
    pub gen: &'a Generator,
    pub disc: &'a Discriminator,
    pub n: usize,
    pub s: usize,
    pub layout: Layout,
    pub alpha: f64,
    pub norm: LossNorm,
    y_obs: Tensor,
}

impl<'a> Problem<'a> {
    pub fn new(
        gen: &'a Generator,
        disc: &'a Discriminator,
        observations: &[Tensor],
        s: usize,
        layout: Layout,
        alpha: f64,
        norm: LossNorm,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::InvalidArgument("at least one observation is required".into()));
        }
        if s == 0 || (layout == Layout::Image && s != 1) {
            return Err(Error::InvalidArgument(format!("invalid source count {s} for this forward model")));
        }
        let y_obs = Tensor::stack(observations)?;
        if !y_obs.is_finite() {
            return Err(Error::NonFinite { context: "observations".into() });
        }
        Ok(Problem {
            gen,
            disc,
            n: observations.len(),
            s,
            layout,
            alpha,
            norm,
            y_obs,
        })
    }

    pub fn observation_shape(&self) -> &[usize] {
        &self.y_obs.shape()[1..]
    }

    pub fn set_shape(&self) -> Vec<usize> {
        match self.layout {
            Layout::Image => self.gen.output_shape().to_vec(),
            Layout::Rows => vec![self.s, self.gen.pixels()],
        }
    }

    /// Returns the flattened images `[N*S x P]` and the arranged batch `[N x set]`.
    fn generate(&self, tape: &mut Tape, z: Var) -> TensorResult<(Var, Var)> {
        let zf = tape.reshape(z, &[self.n * self.s, self.gen.latent_dim()])?;
        let (g, _) = self.gen.forward(tape, zf, false)?;
        let mut shape = vec![self.n];
        shape.extend(self.set_shape());
        let x = tape.reshape(g, &shape)?;
        Ok((g, x))
    }

    fn observed(&self, tape: &mut Tape, fwd: &Forward) -> TensorResult<Var> {
        let y = tape.constant(self.y_obs.clone());
        match fwd {
            Forward::Additive => tape.permute(y, &[1, 0, 2]),
            _ => Ok(y),
        }
    }

    pub fn objective(&self, tape: &mut Tape, z: Var, fwd: &Forward) -> TensorResult<Var> {
        let (g, x) = self.generate(tape, z)?;
        let y_est = self.apply(tape, x, fwd)?;
        let y_obs = self.observed(tape, fwd)?;
        total_loss(tape, y_est, y_obs, self.disc, g, self.alpha, self.norm)
    }

    fn apply(&self, tape: &mut Tape, x: Var, fwd: &Forward) -> TensorResult<Var> {
        match fwd {
            Forward::Identity => Ok(x),
            Forward::Known(op) => op.apply_on_tape(tape, x),
            Forward::Additive => tape.sum_axis(x, 1),
            Forward::Model(s, vars) => s.forward_bound(tape, x, vars),
        }
    }

    /// One source set per observation, shaped by the layout.
    pub fn sources_of(&self, z: &Tensor) -> Result<Vec<Tensor>> {
        let flat = self.gen.sample_batch(&z.reshape(&[self.n * self.s, self.gen.latent_dim()])?)?;
        let set = self.set_shape();
        let per: usize = set.iter().product();
        Ok(flat
            .data()
            .chunks(per)
            .map(|c| Tensor::from_parts(set.clone(), c.to_vec()))
            .collect())
    }
}

/// Runs `steps` Adam updates on `params`, clipping into `clip` after each.
pub(crate) fn descend<F>(
    params: &mut ParameterSet,
    adam: &mut AdamState,
    lr: f64,
    steps: usize,
    clip: Option<(f64, f64)>,
    context: &str,
    mut objective: F,
) -> Result<()>
where
    F: FnMut(&mut Tape, &[Var]) -> TensorResult<Var>,
{
    for step in 0..steps {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape, true);
        let loss = objective(&mut tape, &vars)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::NonFinite {
                context: format!("{context}, step {step} (loss)"),
            });
        }
        tape.backward(loss)?;
        params.zero_grads();
        params.accumulate_grads(&tape, &vars)?;
        adam_step(params, adam, lr)?;
        if !params.all_finite() {
            return Err(Error::NonFinite {
                context: format!("{context}, step {step} (parameters)"),
            });
        }
        if let Some((lo, hi)) = clip {
            clip_in_place(params, lo, hi);
        }
    }
    Ok(())
}

/// Mutable state of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    latents: ParameterSet,
    pub surrogate: Surrogate,
    pub adam_theta: AdamState,
    pub adam_z: AdamState,
    pub loss_history: Vec<EpochLoss>,
}

impl SolverState {
    /// Latent codes `[N x S x T]`.
    pub fn z(&self) -> &Tensor {
        &self.latents.get(0).value
    }
}

/// Alternating solver bound to one problem instance.
pub struct Solver<'a> {
    config: SolverConfig,
    problem: Problem<'a>,
    initial_surrogate: Option<Surrogate>,
}

impl<'a> Solver<'a> {
    pub fn new(config: SolverConfig, gen: &'a Generator, disc: &'a Discriminator, observations: &[Tensor]) -> Result<Self> {
        config.validate()?;
        let layout = match config.surrogate {
            SurrogateKind::Conv | SurrogateKind::ConvRelu => Layout::Image,
            SurrogateKind::Mix => Layout::Rows,
        };
        let problem = Problem::new(gen, disc, observations, config.sources, layout, config.alpha, config.loss_norm)?;
        let obs = problem.observation_shape();
        let ok = match layout {
            Layout::Image => obs == gen.output_shape(),
            Layout::Rows => obs.len() == 2 && obs[1] == gen.pixels(),
        };
        if !ok {
            let want = match layout {
                Layout::Image => format!("{:?}", gen.output_shape()),
                Layout::Rows => format!("[N_obs, {}]", gen.pixels()),
            };
            return Err(Error::InvalidArgument(format!(
                "{:?} surrogate expects observations shaped {want}, got {obs:?}",
                config.surrogate
            )));
        }
        Ok(Solver {
            config,
            problem,
            initial_surrogate: None,
        })
    }

    /// Starts from `surrogate` instead of a random one.
    pub fn with_surrogate(mut self, surrogate: Surrogate) -> Result<Self> {
        let fits = match (&surrogate, self.config.surrogate) {
            (Surrogate::Conv(s), SurrogateKind::Conv | SurrogateKind::ConvRelu) => {
                s.channels() == self.problem.gen.output_shape()[0]
            }
            (Surrogate::Mix(s), SurrogateKind::Mix) => {
                s.sources() == self.problem.s && s.observations() == self.problem.observation_shape()[0]
            }
            _ => false,
        };
        if !fits {
            return Err(Error::InvalidArgument("initial surrogate does not match the problem".into()));
        }
        self.initial_surrogate = Some(surrogate);
        Ok(self)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Draws the codes, then the surrogate weights, from `rng`.
    pub fn init(&self, rng: &mut Rng) -> SolverState {
        let p = &self.problem;
        let z = init_latents(p.n, p.s, p.gen.latent_dim(), rng);
        let surrogate = match self.config.surrogate {
            SurrogateKind::Conv | SurrogateKind::ConvRelu => {
                let relu = self.config.surrogate == SurrogateKind::ConvRelu;
                Surrogate::Conv(build_conv_surrogate(p.gen.output_shape()[0], relu, rng))
            }
            SurrogateKind::Mix => Surrogate::Mix(build_mix_surrogate(p.s, p.observation_shape()[0], rng)),
        };
        let surrogate = self.initial_surrogate.clone().unwrap_or(surrogate);
        let mut latents = ParameterSet::new();
        latents.push("z", z).expect("fresh set");
        SolverState {
            adam_theta: AdamState::new(surrogate.params()),
            adam_z: AdamState::new(&latents),
            latents,
            surrogate,
            loss_history: Vec::new(),
        }
    }

    /// Total loss at the current state.
    pub fn loss(&self, state: &SolverState) -> Result<f64> {
        let mut tape = Tape::new();
        let z = tape.constant(state.z().clone());
        let theta = state.surrogate.params().bind(&mut tape, false);
        let l = self.problem.objective(&mut tape, z, &Forward::Model(&state.surrogate, &theta))?;
        Ok(tape.value(l).item())
    }

    /// `T1` Adam steps on the surrogate with the codes frozen.
    pub fn surrogate_phase(&self, state: &mut SolverState, epoch: usize) -> Result<()> {
        let steps = self.config.surrogate_steps;
        if steps == 0 {
            return Ok(());
        }
        let p = &self.problem;
        let sources = p.sources_of(state.z())?;
        let mut shape = vec![p.n];
        shape.extend(p.set_shape());
        let x = Tensor::stack(&sources)?.reshape(&shape)?;
        let per = if p.alpha == 0.0 {
            0.0
        } else {
            p.alpha * perceptual_loss_value(p.disc, &sources_as_images(p, &sources)?)?
        };
        let SolverState {
            surrogate, adam_theta, ..
        } = state;
        let shadow = surrogate.clone();
        descend(
            surrogate.params_mut(),
            adam_theta,
            self.config.lr_theta,
            steps,
            None,
            &format!("epoch {epoch}, surrogate phase"),
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let y = shadow.forward_bound(tape, xv, vars)?;
                let y_obs = p.observed(tape, &Forward::Identity)?;
                let data = data_loss(tape, y, y_obs, p.norm)?;
                Ok(tape.add_scalar(data, per))
            },
        )
    }

    /// `T2` projected Adam steps on the codes with the surrogate frozen.
    pub fn latent_phase(&self, state: &mut SolverState, epoch: usize) -> Result<()> {
        let SolverState {
            latents,
            surrogate,
            adam_z,
            ..
        } = state;
        let p = &self.problem;
        let surrogate = &*surrogate;
        descend(
            latents,
            adam_z,
            self.config.lr_z,
            self.config.latent_steps,
            Some((self.config.clip_lo, self.config.clip_hi)),
            &format!("epoch {epoch}, latent phase"),
            |tape, vars| {
                let theta = surrogate.params().bind(tape, false);
                p.objective(tape, vars[0], &Forward::Model(surrogate, &theta))
            },
        )
    }

    pub fn run(&self, seed: u64) -> Result<RecoveryResult> {
        let mut rng = Rng::seed(seed);
        let mut state = self.init(&mut rng);
        let initial_loss = self.loss(&state)?;
        let mut quiet = 0;
        for epoch in 0..self.config.epochs {
            self.surrogate_phase(&mut state, epoch)?;
            let after_surrogate = self.loss(&state)?;
            self.latent_phase(&mut state, epoch)?;
            let after_latent = self.loss(&state)?;
            for (v, phase) in [(after_surrogate, "surrogate"), (after_latent, "latent")] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("epoch {epoch}, {phase} phase"),
                    });
                }
            }
            let prev = state.loss_history.last().map_or(initial_loss, |e| e.after_latent);
            state.loss_history.push(EpochLoss {
                after_surrogate,
                after_latent,
            });
            if self.config.early_stop {
                let change = (prev - after_latent).abs() / prev.abs().max(1e-12);
                quiet = if change < 1e-5 { quiet + 1 } else { 0 };
                if quiet >= 5 {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
        let final_loss = state.loss_history.last().map_or(initial_loss, |e| e.after_latent);
        Ok(RecoveryResult {
            sources: self.problem.sources_of(state.z())?,
            latents: state.z().clone(),
            surrogate: state.surrogate,
            initial_loss,
            final_loss,
            loss_history: state.loss_history,
            config: self.config.clone(),
            seed,
            metrics: BTreeMap::new(),
        })
    }
}

fn sources_as_images(p: &Problem, sources: &[Tensor]) -> Result<Vec<Tensor>> {
    let px = p.gen.pixels();
    let mut out = Vec::with_capacity(p.n * p.s);
    for set in sources {
        for row in set.data().chunks(px) {
            out.push(Tensor::vector(row.to_vec()));
        }
    }
    Ok(out)
}

/// Full alternating solve from a seed.
pub fn solve(
    config: &SolverConfig,
    gen: &Generator,
    disc: &Discriminator,
    observations: &[Tensor],
    seed: u64,
) -> Result<RecoveryResult> {
    Solver::new(config.clone(), gen, disc, observations)?.run(seed)
}

/// Output of [`solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    /// One source set per observation: `[C x H x W]` or `[S x pixels]`.
    pub sources: Vec<Tensor>,
    pub latents: Tensor,
    pub surrogate: Surrogate,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub loss_history: Vec<EpochLoss>,
    pub config: SolverConfig,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
}

pub(crate) const MANIFEST: &str = "manifest.json";
const SOURCES: &str = "sources.f32";
const LATENTS: &str = "latents.f32";
const SURROGATE: &str = "surrogate.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct Payload {
    pub shape: Vec<usize>,
    pub payload: String,
}

/// Manifest shared by solver and baseline results.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ResultManifest {
    pub method: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<SolverConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub loss_history: Vec<EpochLoss>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub runtime_ms: u64,
    pub n: usize,
    pub sources: Payload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latents: Option<Payload>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surrogate: Option<String>,
}

pub(crate) fn write_sources(dir: &Path, sources: &[Tensor]) -> Result<Payload> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    persist::write_f32(&dir.join(SOURCES), sources)?;
    Ok(Payload {
        shape: sources.first().map(|s| s.shape().to_vec()).unwrap_or_default(),
        payload: SOURCES.into(),
    })
}

pub(crate) fn read_manifest(dir: &Path) -> Result<(ResultManifest, Vec<Tensor>)> {
    let m: ResultManifest = persist::read_json(&dir.join(MANIFEST))?;
    let sources = persist::read_f32(&dir.join(&m.sources.payload), m.n, &m.sources.shape)?;
    Ok((m, sources))
}

impl RecoveryResult {
    /// Writes the manifest, f32 payloads and the surrogate layer file into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let sources = write_sources(dir, &self.sources)?;
        persist::write_f32(&dir.join(LATENTS), std::slice::from_ref(&self.latents))?;
        std::fs::write(dir.join(SURROGATE), self.surrogate.encode()).map_err(|e| Error::io(dir.join(SURROGATE), e))?;
        let manifest = ResultManifest {
            method: "solve".into(),
            seed: self.seed,
            config: Some(self.config.clone()),
            initial_loss: Some(self.initial_loss),
            final_loss: Some(self.final_loss),
            loss_history: self.loss_history.clone(),
            metrics: self.metrics.clone(),
            runtime_ms: 0,
            n: self.sources.len(),
            sources,
            latents: Some(Payload {
                shape: self.latents.shape().to_vec(),
                payload: LATENTS.into(),
            }),
            surrogate: Some(SURROGATE.into()),
        };
        persist::write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, sources) = read_manifest(dir)?;
        let missing = |what: &str| Error::format("result", format!("{}: no {what} recorded", dir.display()));
        let lat = m.latents.ok_or_else(|| missing("latents"))?;
        let latents = persist::read_f32(&dir.join(&lat.payload), 1, &lat.shape)?.remove(0);
        let sur_path = dir.join(m.surrogate.ok_or_else(|| missing("surrogate"))?);
        let bytes = std::fs::read(&sur_path).map_err(|e| Error::io(&sur_path, e))?;
        Ok(RecoveryResult {
            sources,
            latents,
            surrogate: Surrogate::decode(&bytes)?,
            initial_loss: m.initial_loss.ok_or_else(|| missing("initial loss"))?,
            final_loss: m.final_loss.ok_or_else(|| missing("final loss"))?,
            loss_history: m.loss_history,
            config: m.config.ok_or_else(|| missing("config"))?,
            seed: m.seed,
            metrics: m.metrics,
        })
    }
}
