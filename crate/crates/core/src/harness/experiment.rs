//! End-to-end runs: train a prior, synthesize observations, recover, score.
//!
//! Output directory layout:
//!
//! ```text
//! experiment.json          configuration echo
//! observations/            ObservationSet (with ground truth)
//! <method>/                one result per method (trial_<i>/<method>/ with trials > 1)
//! images/                  PGM dumps
//! metrics.csv              one row per (item, method)
//! summary.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{ExperimentConfig, Scenario, TruthSource};
use super::{data, metrics, persist};
use crate::baselines::{self, fastica_seeded, wiener_deconvolve, BaselineResult, PgdConfig};
use crate::gan::{self, build_discriminator, build_generator, gan_train, Discriminator, Generator, TrainingLog};
use crate::measurement::{make_observations, sample_mixing, ObservationSet, Operator};
use crate::rng::Rng;
use crate::solver;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const SOLVE: &str = "solve";
pub const BASELINES: &[&str] = &["pgd_no_forward", "pgd_known_forward", "wiener", "naive_additive", "fastica"];
pub const THREADS_ENV: &str = "BLINDINV_THREADS";

const CONFIG_FILE: &str = "experiment.json";
const OBS_DIR: &str = "observations";
const TIMINGS_FILE: &str = "timings.json";
const CSV_FILE: &str = "metrics.csv";
const SUMMARY_FILE: &str = "summary.json";

const STREAM_DATA: u64 = 1 << 32;
const STREAM_GAN: u64 = (1 << 32) + 1;
const STREAM_OPERATOR: u64 = (1 << 32) + 2;
const STREAM_NOISE: u64 = (1 << 32) + 3;
const STREAM_TRUTH: u64 = (1 << 32) + 4;

fn stream(seed: u64, k: u64) -> Rng {
    Rng::seed(Rng::derived_seed(seed, k))
}

/// Seed of trial `i`: the configured seed for a single trial, otherwise
/// `splitmix64(seed + i)`.
pub fn trial_seed(cfg: &ExperimentConfig, i: usize) -> u64 {
    if cfg.trials == 1 {
        cfg.seed
    } else {
        Rng::derived_seed(cfg.seed, i as u64)
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Training images and the held-out tenth.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Tensor>,
    pub held_out: Vec<Tensor>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let images = match &cfg.dataset {
        Some(path) => {
            let raw = data::load_idx(path, false)?;
            if cfg.downsample && raw.first().is_some_and(|t| t.shape() == [1, 28, 28]) {
                data::parse_idx(&data::encode_idx(&raw)?, true)?
            } else {
                raw
            }
        }
        None => {
            let mut rng = stream(cfg.seed, STREAM_DATA);
            match cfg.channels {
                1 => data::synthetic_shapes(cfg.dataset_size, cfg.height, cfg.width, &mut rng),
                3 => data::synthetic_faces(cfg.dataset_size, cfg.height, cfg.width, &mut rng),
                c => return Err(Error::Config(format!("synthetic data has 1 or 3 channels, got {c}"))),
            }
        }
    };
    let want = [cfg.channels, cfg.height, cfg.width];
    if let Some(bad) = images.iter().find(|t| t.shape() != want) {
        return Err(Error::Config(format!("dataset images are {:?}, configuration expects {want:?}", bad.shape())));
    }
    let (train, held_out) = data::split_holdout(&images, 0.1);
    Ok(Dataset { train, held_out })
}

/// Trains the prior on the training split and writes the checkpoint.
pub fn train_gan(cfg: &ExperimentConfig) -> Result<TrainingLog> {
    let ds = load_dataset(cfg)?;
    let mut rng = stream(cfg.seed, STREAM_GAN);
    let gcfg = cfg.gan_config();
    let mut gen = build_generator(&gcfg, &mut rng);
    let mut disc = build_discriminator(&gcfg, &mut rng);
    let log = gan_train(&mut gen, &mut disc, &ds.train, &cfg.train_config(), &mut rng)?;
    if let Some(parent) = cfg.checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    gan::save_checkpoint(&cfg.checkpoint, &gen, &disc)?;
    mkdir(&cfg.output)?;
    persist::write_json(&cfg.output.join("gan_log.json"), &log)?;
    Ok(log)
}

/// The measurement process used to synthesize data (and by known-operator baselines).
pub fn ground_truth_operator(cfg: &ExperimentConfig) -> Result<Operator> {
    Ok(match cfg.scenario()? {
        Scenario::Deblur => Operator::blur(cfg.blur_size, cfg.blur_sigma)?,
        Scenario::Edgemap => Operator::edge(),
        Scenario::Bss => Operator::Mixing(sample_mixing(cfg.sources, cfg.n_obs, &mut stream(cfg.seed, STREAM_OPERATOR))),
    })
}

fn truth_sets(cfg: &ExperimentConfig, gen: &Generator) -> Result<Vec<Tensor>> {
    let scenario = cfg.scenario()?;
    let per_set = if scenario == Scenario::Bss { cfg.sources } else { 1 };
    let needed = cfg.n * per_set;
    let images = match cfg.truth {
        TruthSource::Dataset => {
            let held = load_dataset(cfg)?.held_out;
            if held.len() < needed {
                return Err(Error::Config(format!("{needed} held-out images needed, dataset provides {}", held.len())));
            }
            held[..needed].to_vec()
        }
        TruthSource::Generator => {
            let mut rng = stream(cfg.seed, STREAM_TRUTH);
            let t = gen.latent_dim();
            (0..needed)
                .map(|_| gen.sample(&Tensor::vector((0..t).map(|_| rng.uniform_range(-1.0, 1.0)).collect())))
                .collect::<Result<_>>()?
        }
    };
    if scenario != Scenario::Bss {
        return Ok(images);
    }
    let px = gen.pixels();
    images
        .chunks(per_set)
        .map(|group| {
            let data: Vec<f64> = group.iter().flat_map(|t| t.data().iter().copied()).collect();
            Ok(Tensor::new(&[per_set, px], data)?)
        })
        .collect()
}

/// Synthesizes the configured observations from ground-truth sources.
pub fn observe(cfg: &ExperimentConfig, gen: &Generator) -> Result<ObservationSet> {
    let op = ground_truth_operator(cfg)?;
    let sets = truth_sets(cfg, gen)?;
    make_observations(&sets, &op, cfg.n, cfg.noise_sigma, cfg.seed, &mut stream(cfg.seed, STREAM_NOISE))
}

fn observations_for(cfg: &ExperimentConfig, gen: &Generator) -> Result<ObservationSet> {
    match &cfg.observations {
        Some(dir) => ObservationSet::load(dir),
        None => observe(cfg, gen),
    }
}

fn run_baseline(
    method: &str,
    cfg: &ExperimentConfig,
    gen: &Generator,
    disc: &Discriminator,
    obs: &ObservationSet,
    seed: u64,
) -> Result<BaselineResult> {
    let pgd = PgdConfig::from_solver(&cfg.solver_config()?);
    let y = &obs.observations;
    let direct = |method: &str, sources: Vec<Tensor>| BaselineResult {
        method: method.into(),
        sources,
        latents: None,
        final_loss: None,
        metrics: BTreeMap::new(),
        runtime_ms: 0,
        seed,
    };
    match method {
        "pgd_no_forward" => baselines::pgd_no_forward(gen, disc, y, &pgd, seed),
        "pgd_known_forward" => baselines::pgd_known_forward(gen, disc, y, &ground_truth_operator(cfg)?, &pgd, seed),
        "naive_additive" => baselines::naive_additive(gen, disc, y, cfg.sources, &pgd, seed),
        "wiener" => {
            let Operator::Kernel { kernel, .. } = ground_truth_operator(cfg)? else {
                return Err(Error::InvalidArgument("wiener needs a convolutional scenario".into()));
            };
            let sources = y
                .iter()
                .map(|o| Ok(wiener_deconvolve(o, &kernel, cfg.k_reg)?.map(|v| v.clamp(-1.0, 1.0))))
                .collect::<Result<_>>()?;
            Ok(direct(method, sources))
        }
        "fastica" => {
            let sources = y
                .iter()
                .map(|o| Ok(fastica_seeded(o, cfg.sources, seed)?.sources))
                .collect::<Result<_>>()?;
            Ok(direct(method, sources))
        }
        other => Err(Error::InvalidArgument(format!("unknown method \"{other}\""))),
    }
}

/// One method's output for one trial.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub trial: usize,
    pub seed: u64,
    pub sources: Vec<Tensor>,
    pub runtime_ms: u64,
}

fn result_dir(root: &Path, cfg: &ExperimentConfig, trial: usize, method: &str) -> PathBuf {
    if cfg.trials == 1 {
        root.join(method)
    } else {
        root.join(format!("trial_{trial}")).join(method)
    }
}

/// Runs `method` and stores its result under `dir`.
pub fn run_method(
    method: &str,
    cfg: &ExperimentConfig,
    gen: &Generator,
    disc: &Discriminator,
    obs: &ObservationSet,
    seed: u64,
    dir: &Path,
) -> Result<(Vec<Tensor>, u64)> {
    let start = Instant::now();
    let sources = if method == SOLVE {
        let r = solver::solve(&cfg.solver_config()?, gen, disc, &obs.observations, seed)?;
        r.save(dir)?;
        r.sources
    } else {
        let mut r = run_baseline(method, cfg, gen, disc, obs, seed)?;
        r.runtime_ms = if cfg.record_timings { start.elapsed().as_millis() as u64 } else { 0 };
        r.save(dir)?;
        r.sources
    };
    Ok((sources, start.elapsed().as_millis() as u64))
}

fn thread_cap(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

fn run_trial(
    cfg: &ExperimentConfig,
    methods: &[String],
    gen: &Generator,
    disc: &Discriminator,
    obs: &ObservationSet,
    trial: usize,
) -> Result<Vec<MethodRun>> {
    let seed = trial_seed(cfg, trial);
    methods
        .iter()
        .map(|m| {
            log::info!("trial {trial}: running {m}");
            let (sources, runtime_ms) = run_method(m, cfg, gen, disc, obs, seed, &result_dir(&cfg.output, cfg, trial, m))?;
            Ok(MethodRun {
                method: m.clone(),
                trial,
                seed,
                sources,
                runtime_ms,
            })
        })
        .collect()
}

fn dump_images(cfg: &ExperimentConfig, shape: [usize; 3], obs: &ObservationSet, runs: &[MethodRun]) -> Result<()> {
    let dir = cfg.output.join("images");
    mkdir(&dir)?;
    let write_set = |prefix: &str, set: &Tensor| -> Result<()> {
        if set.shape() == shape {
            return data::save_pgm(&dir.join(format!("{prefix}.pgm")), set);
        }
        let px: usize = shape.iter().product();
        if !set.numel().is_multiple_of(px) {
            return Ok(());
        }
        for (i, row) in set.data().chunks(px).enumerate() {
            let img = Tensor::new(&shape, row.to_vec())?;
            data::save_pgm(&dir.join(format!("{prefix}_s{i}.pgm")), &img)?;
        }
        Ok(())
    };
    for (j, y) in obs.observations.iter().enumerate() {
        write_set(&format!("observed_{j:02}"), y)?;
    }
    for (j, x) in obs.sources.iter().flatten().enumerate() {
        write_set(&format!("truth_{j:02}"), x)?;
    }
    for r in runs {
        let prefix = if cfg.trials == 1 { String::new() } else { format!("trial{}_", r.trial) };
        for (j, x) in r.sources.iter().enumerate() {
            write_set(&format!("{prefix}{}_{j:02}", r.method), x)?;
        }
    }
    Ok(())
}

/// Runs `methods` for every trial, then scores everything with [`evaluate`].
pub fn run_methods(cfg: &ExperimentConfig, methods: &[String], parallel: bool) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let (gen, disc) = gan::load_checkpoint(&cfg.checkpoint)?;
    mkdir(&cfg.output)?;
    persist::write_json(&cfg.output.join(CONFIG_FILE), cfg)?;
    let obs = observations_for(cfg, &gen)?;
    obs.save(&cfg.output.join(OBS_DIR))?;

    let trials: Vec<usize> = (0..cfg.trials).collect();
    let workers = if parallel { thread_cap(trials.len()) } else { 1 };
    let mut per_trial: Vec<Result<Vec<MethodRun>>> = Vec::with_capacity(trials.len());
    if workers <= 1 {
        for &t in &trials {
            per_trial.push(run_trial(cfg, methods, &gen, &disc, &obs, t));
        }
    } else {
        let chunk = trials.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = trials
                .chunks(chunk)
                .map(|ts| {
                    let (gen, disc, obs) = (&gen, &disc, &obs);
                    scope.spawn(move || ts.iter().map(|&t| run_trial(cfg, methods, gen, disc, obs, t)).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                per_trial.extend(h.join().expect("trial worker panicked"));
            }
        });
    }
    let runs: Vec<MethodRun> = per_trial.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();

    if cfg.record_timings {
        let path = cfg.output.join(TIMINGS_FILE);
        let mut timings: BTreeMap<String, u64> = if path.exists() { persist::read_json(&path)? } else { BTreeMap::new() };
        timings.extend(runs.iter().map(|r| (format!("{}/{}", r.trial, r.method), r.runtime_ms)));
        persist::write_json(&path, &timings)?;
    }
    dump_images(cfg, gen.output_shape(), &obs, &runs)?;
    evaluate(&cfg.output)
}

/// Solver plus every configured baseline.
pub fn run_experiment(cfg: &ExperimentConfig, parallel: bool) -> Result<ExperimentSummary> {
    let mut methods = vec![SOLVE.to_string()];
    methods.extend(cfg.baselines());
    run_methods(cfg, &methods, parallel)
}

/// Aggregate scores of one method in one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub trial: usize,
    pub method: String,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub report: metrics::MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub methods: Vec<MethodSummary>,
}

impl ExperimentSummary {
    /// Mean PSNR of `method` over items and trials.
    pub fn mean_psnr(&self, method: &str) -> Option<f64> {
        self.mean_of(method, |r| r.mean_psnr)
    }

    pub fn mean_mse(&self, method: &str) -> Option<f64> {
        self.mean_of(method, |r| r.mean_mse)
    }

    fn mean_of(&self, method: &str, f: impl Fn(&metrics::MetricsReport) -> f64) -> Option<f64> {
        let v: Vec<f64> = self.methods.iter().filter(|m| m.method == method).map(|m| f(&m.report)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Scores recovered sources against references for a scenario.
pub fn score(scenario: Scenario, est: &[Tensor], truth: &[Tensor]) -> Result<metrics::MetricsReport> {
    match scenario {
        Scenario::Bss => metrics::separation_report(est, truth),
        _ => metrics::image_report(est, truth),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Scores every result under an experiment directory and rewrites
/// `metrics.csv` and `summary.json`.
pub fn evaluate(dir: &Path) -> Result<ExperimentSummary> {
    let cfg: ExperimentConfig = persist::read_json(&dir.join(CONFIG_FILE))?;
    let scenario = cfg.scenario()?;
    let obs = ObservationSet::load(&dir.join(OBS_DIR))?;
    let truth = obs
        .sources
        .ok_or_else(|| Error::format("observations", "no ground-truth sources recorded"))?;
    let timings: BTreeMap<String, u64> = if cfg.record_timings && dir.join(TIMINGS_FILE).exists() {
        persist::read_json(&dir.join(TIMINGS_FILE))?
    } else {
        BTreeMap::new()
    };
    let csv_path = dir.join(CSV_FILE);
    let mut csv = csv::Writer::from_path(&csv_path).map_err(|e| Error::format("csv", format!("{}: {e}", csv_path.display())))?;
    let csv_err = |e: csv::Error| Error::format("csv", e.to_string());
    csv.write_record(["scenario", "item", "method", "psnr", "mse", "l1", "final_loss", "seed", "runtime_ms"])
        .map_err(csv_err)?;
    let mut methods = Vec::new();
    for trial in 0..cfg.trials {
        for method in std::iter::once(SOLVE).chain(BASELINES.iter().copied()) {
            let rdir = result_dir(dir, &cfg, trial, method);
            if !rdir.join(solver::MANIFEST).exists() {
                continue;
            }
            let (manifest, sources) = solver::read_manifest(&rdir)?;
            let report = score(scenario, &sources, &truth)?;
            let runtime = timings.get(&format!("{trial}/{method}")).copied().unwrap_or(0);
            for item in &report.items {
                csv.write_record([
                    scenario.name().to_string(),
                    item.item.to_string(),
                    method.to_string(),
                    format!("{:.6}", item.psnr),
                    format!("{:.6}", item.mse),
                    format!("{:.6}", item.l1),
                    fmt_opt(manifest.final_loss),
                    manifest.seed.to_string(),
                    runtime.to_string(),
                ])
                .map_err(csv_err)?;
            }
            methods.push(MethodSummary {
                trial,
                method: method.to_string(),
                seed: manifest.seed,
                final_loss: manifest.final_loss,
                report,
            });
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    let summary = ExperimentSummary {
        scenario: scenario.name().into(),
        methods,
    };
    persist::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
