//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use blindinv::baselines::{self, dft2d, fastica_seeded, idft2d, wiener_deconvolve, PgdConfig};
use blindinv::gan::{self, GanConfig, TrainingLog};
use blindinv::gradcheck;
use blindinv::harness::config::{ExperimentConfig, Scenario};
use blindinv::harness::experiment::{self, SOLVE};
use blindinv::harness::metrics::{self, match_sources_up_to_sign};
use blindinv::measurement::{
    apply_kernel, apply_kernel_circular, edge_kernel, gaussian_kernel, sample_mixing, toeplitz_of,
};
use blindinv::nn::{adam_step, AdamState, ParameterSet};
use blindinv::solver::{self, Solver, SolverConfig};
use blindinv::{ConvKernel, Discriminator, Generator, RecoveryResult, Rng, Surrogate, Tensor};

const GRAD_TOL: f64 = 1e-4;
const GRAD_TRIALS: u64 = 100;
const GRAD_BUDGET: Duration = Duration::from_secs(60);
const ADAM_STEPS: usize = 1000;
const ADAM_TOL: f64 = 1e-12;
const TOEPLITZ_TOL: f64 = 1e-10;
const WIENER_RMSE: f64 = 1e-3;
const DFT_TOL: f64 = 1e-8;
const NCC_MIN: f64 = 0.9;
const NCC_SEEDS: u64 = 5;
const NCC_REQUIRED: usize = 4;
const RECOVERY_BUDGET: Duration = Duration::from_secs(600);
const ORDERING_ITEMS: usize = 20;
const KNOWN_MARGIN_DB: f64 = 3.0;
const BSS_SEEDS: u64 = 10;
const BSS_SETS: usize = 10;
const BSS_FRACTION: f64 = 0.8;
const ICA_CORR_MIN: f64 = 0.9;
const ICA_SAMPLES: usize = 1000;

const GAN_SEED: u64 = 2024;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} [{id}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

/// Losses and latents of every recovery run, checked by criterion 8.
#[derive(Default)]
struct RunLog {
    runs: Vec<(String, f64, f64, f64)>,
}

impl RunLog {
    fn add(&mut self, label: String, r: &RecoveryResult) {
        self.runs.push((label, r.initial_loss, r.final_loss, r.latents.max_abs()));
    }
}

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

fn criterion_autodiff(report: &mut Report) {
    let start = Instant::now();
    let cases = gradcheck::run_suite(GRAD_TRIALS, gradcheck::DEFAULT_STEP);
    let elapsed = start.elapsed();
    let worst = cases.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let errors: usize = cases.iter().map(|c| c.errors.len()).sum();
    let pass = errors == 0 && worst.max_rel_error < GRAD_TOL && elapsed < GRAD_BUDGET;
    report.record(
        1,
        "autodiff correctness",
        pass,
        format!(
            "{} cases x {GRAD_TRIALS} trials ({} ops, {} composite graphs), max relative error {:.2e} ({} #{}) < {GRAD_TOL:e}, {errors} errors, {:.1}s < {}s",
            cases.len(),
            gradcheck::OPS.len(),
            gradcheck::GRAPHS.len(),
            worst.max_rel_error,
            worst.name,
            worst.worst_trial,
            elapsed.as_secs_f64(),
            GRAD_BUDGET.as_secs()
        ),
    );
}

/// Textbook Adam on a flat vector.
struct ReferenceAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ReferenceAdam {
    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
        self.t += 1;
        for i in 0..theta.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            theta[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn criterion_adam(report: &mut Report) {
    let dim = 6;
    let mut worst = 0.0f64;
    for q in 0..3u64 {
        let mut rng = Rng::seed(77 + q);
        let b = random(&mut rng, &[dim, dim], -1.0, 1.0);
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim).map(|k| b.get(&[k, i]) * b.get(&[k, j])).sum::<f64>() + if i == j { 0.1 } else { 0.0 };
            }
        }
        let c = random(&mut rng, &[dim], -2.0, 2.0);
        let grad = |theta: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|i| (0..dim).map(|j| a[i * dim + j] * (theta[j] - c.data()[j])).sum())
                .collect()
        };
        let start = random(&mut rng, &[dim], -2.0, 2.0);
        let mut params = ParameterSet::new();
        params.push("theta", start.clone()).unwrap();
        let mut state = AdamState::new(&params);
        let mut reference = ReferenceAdam {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        };
        let mut theta = start.data().to_vec();
        for _ in 0..ADAM_STEPS {
            let g = grad(params.get(0).value.data());
            params.get_mut(0).grad = Tensor::vector(g);
            adam_step(&mut params, &mut state, 1e-2).unwrap();
            let g_ref = grad(&theta);
            reference.step(&mut theta, &g_ref, 1e-2);
            let diff = params.get(0).value.data().iter().zip(&theta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            worst = worst.max(diff);
        }
    }
    report.record(
        2,
        "Adam oracle equivalence",
        worst <= ADAM_TOL,
        format!("3 quadratics x {ADAM_STEPS} steps, max per-step deviation {worst:.2e} <= {ADAM_TOL:e}"),
    );
}

fn criterion_defaults(report: &mut Report) {
    let c = SolverConfig::default();
    let exp = ExperimentConfig::new(Scenario::Deblur, 0, "out", "gan.bin");
    let mut problems = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            problems.push(what.to_string());
        }
    };
    expect("T=100", c.epochs == 100);
    expect("T1=50", c.surrogate_steps == 50);
    expect("T2=50", c.latent_steps == 50);
    expect("lr_theta=4e-3", c.lr_theta == 4e-3);
    expect("lr_z=3e-4", c.lr_z == 3e-4);
    expect("alpha=1e-4", c.alpha == 1e-4);
    expect("clip=[-1,1]", c.clip_lo == -1.0 && c.clip_hi == 1.0);
    expect("latent_dim=100", GanConfig::default().latent_dim == 100 && exp.latent_dim == 100);
    expect("experiment solver defaults", exp.solver_config().unwrap() == c);
    let edge = [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0];
    expect("edge kernel", edge_kernel().values().shape() == [3, 3] && edge_kernel().values().data() == edge);
    report.record(
        3,
        "hyperparameter fidelity",
        problems.is_empty(),
        if problems.is_empty() {
            "T=100 T1=T2=50 lr_theta=4e-3 lr_z=3e-4 alpha=1e-4 clip=[-1,1] latent_dim=100, edge kernel exact".into()
        } else {
            format!("mismatched: {}", problems.join(", "))
        },
    );
}

fn criterion_operators(report: &mut Report) {
    let mut rng = Rng::seed(4);
    let mut toeplitz = 0.0f64;
    for _ in 0..20 {
        let (kh, kw) = (1 + rng.below(5), 1 + rng.below(5));
        let (h, w) = (2 + rng.below(7), 2 + rng.below(7));
        let k = ConvKernel::new(random(&mut rng, &[kh, kw], -1.0, 1.0)).unwrap();
        let x = random(&mut rng, &[1, h, w], -1.0, 1.0);
        let y = apply_kernel(&x, &k).unwrap();
        let t = toeplitz_of(&k, h, w);
        for r in 0..h * w {
            let mv: f64 = (0..h * w).map(|c| t.get(&[r, c]) * x.data()[c]).sum();
            toeplitz = toeplitz.max((mv - y.data()[r]).abs());
        }
    }
    let kernel = gaussian_kernel(7, 1.5).unwrap();
    let images = blindinv::harness::data::synthetic_shapes(5, 16, 16, &mut rng);
    let mut wiener = 0.0f64;
    for x in &images {
        let y = apply_kernel_circular(x, &kernel).unwrap();
        let rec = wiener_deconvolve(&y, &kernel, 0.0).unwrap();
        wiener = wiener.max(metrics::mse(&rec, x).unwrap().sqrt());
    }
    let (mut roundtrip, mut parseval) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let x = random(&mut rng, &[1, 16, 16], -1.0, 1.0);
        let spec = dft2d(&x).unwrap();
        let back = idft2d(&spec);
        roundtrip = roundtrip.max(x.data().iter().zip(back.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        let energy: f64 = x.data().iter().map(|v| v * v).sum();
        let spectral: f64 = spec.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / (16.0 * 16.0);
        parseval = parseval.max((energy - spectral).abs() / energy);
    }
    let pass = toeplitz < TOEPLITZ_TOL && wiener < WIENER_RMSE && roundtrip < DFT_TOL && parseval < DFT_TOL;
    report.record(
        4,
        "operator identities",
        pass,
        format!(
            "Toeplitz max err {toeplitz:.1e} < {TOEPLITZ_TOL:e} (20 cases), Wiener circular RMSE {wiener:.1e} < {WIENER_RMSE:e}, DFT round trip {roundtrip:.1e} and Parseval {parseval:.1e} < {DFT_TOL:e}"
        ),
    );
}

fn desk_gan(root: &Path) -> (PathBuf, TrainingLog, Duration) {
    let cfg = ExperimentConfig::new(Scenario::Deblur, GAN_SEED, root.join("gan"), root.join("gan.bin"));
    let start = Instant::now();
    let log = experiment::train_gan(&cfg).expect("desk GAN training");
    (cfg.checkpoint, log, start.elapsed())
}

/// Mean-removed normalized cross-correlation.
fn ncc(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let da = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>().sqrt();
    let db = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>().sqrt();
    num / (da * db)
}

fn criterion_surrogate(report: &mut Report, root: &Path, ckpt: &Path, gen: &Generator, disc: &Discriminator, log: &mut RunLog) {
    let start = Instant::now();
    let mut scores = Vec::new();
    for seed in 0..NCC_SEEDS {
        let cfg = ExperimentConfig::new(Scenario::Deblur, seed, root.join(format!("c5_{seed}")), ckpt);
        let obs = experiment::observe(&cfg, gen).unwrap();
        let r = solver::solve(&cfg.solver_config().unwrap(), gen, disc, &obs.observations, seed).unwrap();
        let Surrogate::Conv(conv) = &r.surrogate else { unreachable!("deblur uses a conv surrogate") };
        let learned = conv.effective_kernel_for(0, 0).unwrap();
        let (kh, kw) = (learned.height(), learned.width());
        let truth = gaussian_kernel(cfg.blur_size, cfg.blur_sigma).unwrap().padded_to(kh, kw).unwrap();
        scores.push(ncc(learned.values().data(), truth.values().data()));
        log.add(format!("c5 seed {seed}"), &r);
    }
    let elapsed = start.elapsed();
    let hits = scores.iter().filter(|&&s| s >= NCC_MIN).count();
    report.record(
        5,
        "surrogate recovery",
        hits >= NCC_REQUIRED && elapsed < RECOVERY_BUDGET,
        format!(
            "effective-kernel NCC per seed [{}], {hits}/{NCC_SEEDS} >= {NCC_MIN} (need {NCC_REQUIRED}), {:.0}s < {}s",
            scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>().join(", "),
            elapsed.as_secs_f64(),
            RECOVERY_BUDGET.as_secs()
        ),
    );
}

fn criterion_ordering(report: &mut Report, root: &Path, ckpt: &Path, log: &mut RunLog) {
    let mut cfg = ExperimentConfig::new(Scenario::Deblur, 11, root.join("c6"), ckpt);
    cfg.n = ORDERING_ITEMS;
    let methods: Vec<String> = [SOLVE, "pgd_no_forward", "pgd_known_forward"].iter().map(|s| s.to_string()).collect();
    let summary = experiment::run_methods(&cfg, &methods, false).unwrap();
    let r = RecoveryResult::load(&cfg.output.join(SOLVE)).unwrap();
    log.add("c6 solve".into(), &r);
    let psnr = |m: &str| summary.mean_psnr(m).unwrap_or(f64::NAN);
    let (s, p, k) = (psnr(SOLVE), psnr("pgd_no_forward"), psnr("pgd_known_forward"));
    report.record(
        6,
        "baseline ordering",
        s > p && k >= s - KNOWN_MARGIN_DB,
        format!(
            "{ORDERING_ITEMS} held-out items: PSNR solve {s:.2} dB > pgd_no_forward {p:.2} dB; pgd_known_forward {k:.2} dB >= solve - {KNOWN_MARGIN_DB} dB"
        ),
    );
}

/// Uniform, Laplace and random-sign rows, cycled to `s` sources.
fn independent_sources(s: usize, len: usize, seed: u64) -> Tensor {
    let mut rng = Rng::seed(Rng::derived_seed(seed, 77));
    let mut data = Vec::with_capacity(s * len);
    for k in 0..s {
        for _ in 0..len {
            data.push(match k % 3 {
                0 => rng.uniform_range(-1.0, 1.0),
                1 => {
                    let u = rng.uniform_range(-0.5, 0.5);
                    -u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln()
                }
                _ => if rng.below(2) == 0 { -1.0 } else { 1.0 },
            });
        }
    }
    Tensor::new(&[s, len], data).unwrap()
}

/// Smallest matched |correlation| of FastICA on `Mᵀ x`.
fn linear_ica_min_corr(x: &Tensor, m: &blindinv::MixingMatrix, seed: u64) -> f64 {
    let (s, n_obs, len) = (m.sources(), m.observations(), x.shape()[1]);
    let mut y = Tensor::zeros(&[n_obs, len]);
    for o in 0..n_obs {
        for p in 0..len {
            let v: f64 = (0..s).map(|k| m.values().get(&[k, o]) * x.get(&[k, p])).sum();
            y.set(&[o, p], v);
        }
    }
    let est = fastica_seeded(&y, s, seed).unwrap().sources;
    let matched = match_sources_up_to_sign(&est, x).unwrap();
    matched.scores.iter().map(|mse| 1.0 - mse / 2.0).fold(f64::INFINITY, f64::min)
}

fn criterion_bss(report: &mut Report, root: &Path, ckpt: &Path, gen: &Generator, disc: &Discriminator, log: &mut RunLog) {
    let (mut beat_naive, mut beat_ica) = (0usize, 0usize);
    let (mut min_corr, mut image_corr) = (f64::INFINITY, f64::INFINITY);
    let mut rows = Vec::new();
    for seed in 0..BSS_SEEDS {
        let mut cfg = ExperimentConfig::new(Scenario::Bss, seed, root.join(format!("c7_{seed}")), ckpt);
        cfg.n = BSS_SETS;
        let obs = experiment::observe(&cfg, gen).unwrap();
        let truth = obs.sources.clone().unwrap();
        let sc = cfg.solver_config().unwrap();
        let r = solver::solve(&sc, gen, disc, &obs.observations, seed).unwrap();
        log.add(format!("c7 seed {seed}"), &r);
        let pgd = PgdConfig::from_solver(&sc);
        let naive = baselines::naive_additive(gen, disc, &obs.observations, cfg.sources, &pgd, seed).unwrap();
        let ica: Vec<Tensor> = obs
            .observations
            .iter()
            .map(|y| fastica_seeded(y, cfg.sources, seed).unwrap().sources)
            .collect();
        let mse = |est: &[Tensor]| metrics::separation_report(est, &truth).unwrap().mean_mse;
        let (ms, mn, mi) = (mse(&r.sources), mse(&naive.sources), mse(&ica));
        beat_naive += usize::from(ms < mn);
        beat_ica += usize::from(ms < mi);
        rows.push(format!("{ms:.2}/{mn:.2}/{mi:.2}"));

        let m = sample_mixing(cfg.sources, cfg.n_obs, &mut Rng::seed(seed));
        for x in &truth {
            image_corr = image_corr.min(linear_ica_min_corr(x, &m, seed));
        }
        let independent = independent_sources(cfg.sources, ICA_SAMPLES, seed);
        min_corr = min_corr.min(linear_ica_min_corr(&independent, &m, seed));
    }
    let need = (BSS_FRACTION * BSS_SEEDS as f64).ceil() as usize;
    report.record(
        7,
        "BSS sanity",
        beat_naive >= need && beat_ica >= need && min_corr > ICA_CORR_MIN,
        format!(
            "matched MSE solve/naive/ica per seed [{}]; solve < naive on {beat_naive}/{BSS_SEEDS}, solve < FastICA on {beat_ica}/{BSS_SEEDS} (need {need}); FastICA on linear mixtures of independent sources min |corr| {min_corr:.3} > {ICA_CORR_MIN} (on the image sets, not gated: {image_corr:.3})",
            rows.join(", ")
        ),
    );
}

fn criterion_invariants(report: &mut Report, root: &Path, ckpt: &Path, gen: &Generator, disc: &Discriminator, gan_log: &TrainingLog, log: &RunLog) {
    let mut problems = Vec::new();

    // phase isolation
    let cfg = ExperimentConfig::new(Scenario::Deblur, 3, root.join("c8_phase"), ckpt);
    let obs = experiment::observe(&cfg, gen).unwrap();
    let sc = SolverConfig {
        surrogate_steps: 5,
        latent_steps: 5,
        ..cfg.solver_config().unwrap()
    };
    let solver = Solver::new(sc.clone(), gen, disc, &obs.observations).unwrap();
    let mut state = solver.init(&mut Rng::seed(3));
    let z_before = state.z().clone();
    solver.surrogate_phase(&mut state, 0).unwrap();
    if state.z() != &z_before {
        problems.push("surrogate phase changed z".to_string());
    }
    let theta_before = state.surrogate.encode();
    let params_before = state.surrogate.params().clone();
    solver.latent_phase(&mut state, 0).unwrap();
    if state.surrogate.params() != &params_before || state.surrogate.encode() != theta_before {
        problems.push("latent phase changed theta".to_string());
    }
    if state.z().max_abs() > 1.0 {
        problems.push("latent phase left z outside [-1, 1]".to_string());
    }

    // determinism: solver and the whole pipeline
    let quick = SolverConfig { epochs: 3, ..sc };
    let a = solver::solve(&quick, gen, disc, &obs.observations, 9).unwrap();
    let b = solver::solve(&quick, gen, disc, &obs.observations, 9).unwrap();
    if a != b {
        problems.push("solver reruns differ".to_string());
    }
    let csv = |dir: &str| {
        let mut c = ExperimentConfig::new(Scenario::Deblur, 5, root.join(dir), ckpt);
        c.n = 3;
        c.epochs = 2;
        c.surrogate_steps = 3;
        c.latent_steps = 3;
        experiment::run_experiment(&c, false).unwrap();
        std::fs::read(c.output.join("metrics.csv")).unwrap()
    };
    if csv("c8_run_a") != csv("c8_run_b") {
        problems.push("metrics.csv differs between identical runs".to_string());
    }

    // projection and descent on every acceptance run
    for (label, initial, final_loss, zmax) in &log.runs {
        if zmax > &1.0 {
            problems.push(format!("{label}: max|z| = {zmax}"));
        }
        if !(final_loss < initial) {
            problems.push(format!("{label}: final loss {final_loss} >= initial {initial}"));
        }
    }

    let gan_finite = gan_log.d_loss.iter().chain(&gan_log.g_loss).all(|v| v.is_finite());
    if !gan_finite {
        problems.push("GAN training log has non-finite entries".to_string());
    }
    report.record(
        8,
        "invariant suite",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "phase isolation bit-exact, reruns bit-identical (solver and metrics.csv), {} runs projected with final < initial loss, GAN log finite over {} epochs",
                log.runs.len(),
                gan_log.d_loss.len()
            )
        } else {
            problems.join("; ")
        },
    );
}

fn main() {
    let tmp = tempfile::tempdir().expect("scratch directory");
    let root = tmp.path();
    let mut report = Report { failures: 0 };
    let total = Instant::now();

    criterion_autodiff(&mut report);
    criterion_adam(&mut report);
    criterion_defaults(&mut report);
    criterion_operators(&mut report);

    let (ckpt, gan_log, gan_time) = desk_gan(root);
    println!("desk GAN trained in {:.0}s", gan_time.as_secs_f64());
    let (gen, disc) = gan::load_checkpoint(&ckpt).unwrap();
    let mut runs = RunLog::default();
    criterion_surrogate(&mut report, root, &ckpt, &gen, &disc, &mut runs);
    criterion_ordering(&mut report, root, &ckpt, &mut runs);
    criterion_bss(&mut report, root, &ckpt, &gen, &disc, &mut runs);
    criterion_invariants(&mut report, root, &ckpt, &gen, &disc, &gan_log, &runs);

    println!(
        "acceptance: {} of 8 criteria passed in {:.0}s",
        8 - report.failures,
        total.elapsed().as_secs_f64()
    );
    if report.failures > 0 {
        std::process::exit(1);
    }
}
