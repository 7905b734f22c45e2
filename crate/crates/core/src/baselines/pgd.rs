//! Projected gradient descent in latent space under fixed forward models.

use std::collections::BTreeMap;
use std::time::Instant;

use super::BaselineResult;
use crate::autodiff::Tape;
use crate::gan::{Discriminator, Generator};
use crate::measurement::Operator;
use crate::nn::{AdamState, ParameterSet};
use crate::rng::Rng;
use crate::solver::{descend, init_latents, Forward, Layout, LossNorm, Problem, SolverConfig};
use crate::tensor::Tensor;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PgdConfig {
    pub steps: usize,
    pub lr: f64,
    pub alpha: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub loss_norm: LossNorm,
}

impl PgdConfig {
    /// `T * T2` steps at the latent learning rate, same weight and clip range.
    pub fn from_solver(c: &SolverConfig) -> Self {
        PgdConfig {
            steps: c.baseline_steps(),
            lr: c.lr_z,
            alpha: c.alpha,
            clip_lo: c.clip_lo,
            clip_hi: c.clip_hi,
            loss_norm: c.loss_norm,
        }
    }
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self::from_solver(&SolverConfig::default())
    }
}

fn run(method: &str, problem: &Problem, fwd: Forward, cfg: &PgdConfig, seed: u64) -> Result<BaselineResult> {
    let start = Instant::now();
    let mut rng = Rng::seed(seed);
    let z = init_latents(problem.n, problem.s, problem.gen.latent_dim(), &mut rng);
    let mut params = ParameterSet::new();
    params.push("z", z)?;
    let mut adam = AdamState::new(&params);
    descend(
        &mut params,
        &mut adam,
        cfg.lr,
        cfg.steps,
        Some((cfg.clip_lo, cfg.clip_hi)),
        method,
        |tape, vars| problem.objective(tape, vars[0], &fwd),
    )?;
    let z = params.get(0).value.clone();
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let loss = problem.objective(&mut tape, zv, &fwd)?;
    Ok(BaselineResult {
        method: method.into(),
        sources: problem.sources_of(&z)?,
        latents: Some(z),
        final_loss: Some(tape.value(loss).item()),
        metrics: BTreeMap::new(),
        runtime_ms: start.elapsed().as_millis() as u64,
        seed,
    })
}

/// Fits `G(z_j)` to each observation directly, as if no measurement happened.
pub fn pgd_no_forward(
    gen: &Generator,
    disc: &Discriminator,
    observations: &[Tensor],
    cfg: &PgdConfig,
    seed: u64,
) -> Result<BaselineResult> {
    let problem = Problem::new(gen, disc, observations, 1, Layout::Image, cfg.alpha, cfg.loss_norm)?;
    run("pgd_no_forward", &problem, Forward::Identity, cfg, seed)
}

/// Fits `F(G(z_j))` to each observation with the true operator `F`.
pub fn pgd_known_forward(
    gen: &Generator,
    disc: &Discriminator,
    observations: &[Tensor],
    operator: &Operator,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<BaselineResult> {
    let (s, layout) = match operator {
        Operator::Mixing(m) => (m.sources(), Layout::Rows),
        _ => (1, Layout::Image),
    };
    let problem = Problem::new(gen, disc, observations, s, layout, cfg.alpha, cfg.loss_norm)?;
    let fwd = match operator {
        Operator::Identity => Forward::Identity,
        op => Forward::Known(op),
    };
    run("pgd_known_forward", &problem, fwd, cfg, seed)
}

/// Fits `sum_i G(z_j^i)` to every row of each `[N_obs x pixels]` observation.
pub fn naive_additive(
    gen: &Generator,
    disc: &Discriminator,
    observations: &[Tensor],
    sources: usize,
    cfg: &PgdConfig,
    seed: u64,
) -> Result<BaselineResult> {
    let problem = Problem::new(gen, disc, observations, sources, Layout::Rows, cfg.alpha, cfg.loss_norm)?;
    run("naive_additive", &problem, Forward::Additive, cfg, seed)
}
