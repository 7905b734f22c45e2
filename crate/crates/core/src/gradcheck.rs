//! Finite-difference checks of every tape op and of the composite
//! generator, surrogate and loss graphs.

use crate::autodiff::{grad_check_detailed, Tape, Var};
use crate::gan::{build_discriminator, build_generator, Discriminator, GanConfig, Generator};
use crate::rng::Rng;
use crate::solver::{total_loss, LossNorm};
use crate::surrogate::{build_conv_surrogate, build_mix_surrogate, Surrogate};
use crate::tensor::{Tensor, TensorResult};

pub const DEFAULT_STEP: f64 = 1e-5;

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

pub type Scalar = Box<dyn Fn(&mut Tape, Var) -> TensorResult<Var>>;

/// `sum(w * y)` with fixed random weights, so every output element matters.
fn weighted(tape: &mut Tape, y: Var, w: &Tensor) -> TensorResult<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul_elem(y, wv)?;
    Ok(tape.sum(p))
}

/// Scalar function of one tensor and the point to probe it at, for op `name`.
///
/// Panics on an unknown name.
pub fn op_case(name: &str, rng: &mut Rng) -> (Scalar, Tensor) {
    let r = |rng: &mut Rng, s: &[usize]| random(rng, s, -1.0, 1.0);
    macro_rules! unary {
        ($shape:expr, $out:expr, $body:expr) => {{
            let w = r(rng, &$out);
            let x = r(rng, &$shape);
            let f: Scalar = Box::new(move |t, v| {
                let y = $body(t, v)?;
                weighted(t, y, &w)
            });
            (f, x)
        }};
    }
    match name {
        "add" => {
            let c = r(rng, &[3, 4]);
            unary!([3, 4], [3, 4], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.add(v, cv)
            })
        }
        "add_broadcast_rhs" => {
            let c = r(rng, &[2, 3, 4]);
            unary!([3, 4], [2, 3, 4], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.add(cv, v)
            })
        }
        "sub" => {
            let c = r(rng, &[3, 4]);
            unary!([3, 4], [3, 4], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.sub(cv, v)
            })
        }
        "sub_broadcast_rhs" => {
            let c = r(rng, &[2, 4]);
            unary!([4], [2, 4], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.sub(cv, v)
            })
        }
        "add_bias" => {
            let c = r(rng, &[3, 4, 2]);
            unary!([4], [3, 4, 2], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.add_bias(cv, v, 1)
            })
        }
        "add_scalar" => unary!([5], [5], |t: &mut Tape, v| Ok(t.add_scalar(v, 0.7))),
        "mul_elem" => {
            let c = r(rng, &[2, 3]);
            unary!([2, 3], [2, 3], |t: &mut Tape, v| {
                let cv = t.constant(c.clone());
                t.mul_elem(v, cv)
            })
        }
        "mul_elem_square" => unary!([2, 3], [2, 3], |t: &mut Tape, v| t.mul_elem(v, v)),
        "scalar_mul" => unary!([4], [4], |t: &mut Tape, v| Ok(t.scalar_mul(v, -1.3))),
        "neg" => unary!([4], [4], |t: &mut Tape, v| Ok(t.neg(v))),
        "matmul_lhs" => {
            let b = r(rng, &[4, 2]);
            unary!([3, 4], [3, 2], |t: &mut Tape, v| {
                let bv = t.constant(b.clone());
                t.matmul(v, bv)
            })
        }
        "matmul_rhs" => {
            let a = r(rng, &[3, 4]);
            unary!([4, 2], [3, 2], |t: &mut Tape, v| {
                let av = t.constant(a.clone());
                t.matmul(av, v)
            })
        }
        "matmul_bt_lhs" => {
            let b = r(rng, &[2, 4]);
            unary!([3, 4], [3, 2], |t: &mut Tape, v| {
                let bv = t.constant(b.clone());
                t.matmul_bt(v, bv)
            })
        }
        "matmul_bt_rhs" => {
            let a = r(rng, &[3, 4]);
            unary!([2, 4], [3, 2], |t: &mut Tape, v| {
                let av = t.constant(a.clone());
                t.matmul_bt(av, v)
            })
        }
        "conv2d_input" => {
            let f = r(rng, &[2, 2, 3, 2]);
            unary!([2, 4, 5], [2, 4, 5], |t: &mut Tape, v| {
                let fv = t.constant(f.clone());
                t.conv2d_same(v, fv)
            })
        }
        "conv2d_batched_input" => {
            let f = r(rng, &[3, 1, 3, 3]);
            unary!([2, 1, 4, 4], [2, 3, 4, 4], |t: &mut Tape, v| {
                let fv = t.constant(f.clone());
                t.conv2d_same(v, fv)
            })
        }
        "conv2d_filters" => {
            let x = r(rng, &[2, 5, 4]);
            unary!([3, 2, 4, 3], [3, 5, 4], |t: &mut Tape, v| {
                let xv = t.constant(x.clone());
                t.conv2d_same(xv, v)
            })
        }
        "relu" => unary!([6], [6], |t: &mut Tape, v| Ok(t.relu(v))),
        "leaky_relu" => unary!([6], [6], |t: &mut Tape, v| Ok(t.leaky_relu(v, 0.2))),
        "tanh" => unary!([6], [6], |t: &mut Tape, v| Ok(t.tanh(v))),
        "sigmoid" => unary!([6], [6], |t: &mut Tape, v| Ok(t.sigmoid(v))),
        "abs" => unary!([6], [6], |t: &mut Tape, v| Ok(t.abs(v))),
        "log_clamped" => {
            let w = r(rng, &[6]);
            let x = random(rng, &[6], 0.1, 2.0);
            let f: Scalar = Box::new(move |t, v| {
                let y = t.log_clamped(v, 1e-8);
                weighted(t, y, &w)
            });
            (f, x)
        }
        "sum" => {
            let x = r(rng, &[3, 2]);
            let f: Scalar = Box::new(|t, v| {
                let sq = t.mul_elem(v, v)?;
                Ok(t.sum(sq))
            });
            (f, x)
        }
        "l1" => {
            let x = r(rng, &[7]);
            let f: Scalar = Box::new(|t, v| Ok(t.l1(v)));
            (f, x)
        }
        "reshape" => unary!([2, 6], [3, 4], |t: &mut Tape, v| t.reshape(v, &[3, 4])),
        "permute" => unary!([2, 3, 4], [4, 2, 3], |t: &mut Tape, v| t.permute(v, &[2, 0, 1])),
        "sum_axis" => unary!([2, 3, 4], [2, 4], |t: &mut Tape, v| t.sum_axis(v, 1)),
        other => panic!("no gradient case for {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "add_broadcast_rhs",
    "sub",
    "sub_broadcast_rhs",
    "add_bias",
    "add_scalar",
    "mul_elem",
    "mul_elem_square",
    "scalar_mul",
    "neg",
    "matmul_lhs",
    "matmul_rhs",
    "matmul_bt_lhs",
    "matmul_bt_rhs",
    "conv2d_input",
    "conv2d_batched_input",
    "conv2d_filters",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "abs",
    "log_clamped",
    "sum",
    "l1",
    "reshape",
    "permute",
    "sum_axis",
];

fn small_gan(rng: &mut Rng) -> (Generator, Discriminator) {
    let cfg = GanConfig {
        latent_dim: 5,
        channels: 1,
        height: 5,
        width: 5,
        generator_hidden: vec![8],
        discriminator_hidden: vec![6],
    };
    let mut gen = build_generator(&cfg, rng);
    let mut disc = build_discriminator(&cfg, rng);
    for set in [&mut gen.net.params, &mut disc.net.params] {
        for i in 0..set.len() {
            let p = set.get_mut(i);
            p.value = p.value.map(|_| rng.normal(0.0, 0.4));
        }
    }
    (gen, disc)
}

fn randomized(mut s: Surrogate, rng: &mut Rng) -> Surrogate {
    let set = s.params_mut();
    for i in 0..set.len() {
        let p = set.get_mut(i);
        p.value = p.value.map(|_| rng.normal(0.0, 0.3));
    }
    s
}

/// Like [`op_case`] for the end-to-end graphs in [`GRAPHS`].
pub fn graph_case(name: &str, rng: &mut Rng) -> (Scalar, Tensor) {
    let (gen, disc) = small_gan(rng);
    match name {
        "G∘F̂ conv, total_loss(l1) wrt z" | "G∘F̂ conv, total_loss(l2) wrt z" => {
            let norm = if name.contains("l1") { LossNorm::L1 } else { LossNorm::L2 };
            let sur = randomized(build_conv_surrogate(1, false, rng).into(), rng);
            let y_obs = random(rng, &[2, 1, 5, 5], -1.0, 1.0);
            let z = random(rng, &[2, 5], -1.0, 1.0);
            let f: Scalar = Box::new(move |t, v| {
                let (g, _) = gen.forward(t, v, false)?;
                let x = t.reshape(g, &[2, 1, 5, 5])?;
                let (y, _) = sur.forward(t, x, false)?;
                let yo = t.constant(y_obs.clone());
                total_loss(t, y, yo, &disc, g, 0.3, norm)
            });
            (f, z)
        }
        "G∘F̂ conv, total_loss wrt first filter bank" => {
            let sur = randomized(build_conv_surrogate(1, true, rng).into(), rng);
            let y_obs = random(rng, &[2, 1, 5, 5], -1.0, 1.0);
            let z = random(rng, &[2, 5], -1.0, 1.0);
            let w0 = sur.params().get(0).value.clone();
            let f: Scalar = Box::new(move |t, v| {
                let zv = t.constant(z.clone());
                let (g, _) = gen.forward(t, zv, false)?;
                let x = t.reshape(g, &[2, 1, 5, 5])?;
                let mut vars = sur.params().bind(t, false);
                vars[0] = v;
                let y = sur.forward_bound(t, x, &vars)?;
                let yo = t.constant(y_obs.clone());
                total_loss(t, y, yo, &disc, g, 0.3, LossNorm::L2)
            });
            (f, w0)
        }
        "G∘F̂ mix, total_loss wrt z" => {
            let sur = randomized(build_mix_surrogate(2, 3, rng).into(), rng);
            let y_obs = random(rng, &[2, 3, 25], 0.0, 1.0);
            let z = random(rng, &[2, 2, 5], -1.0, 1.0);
            let f: Scalar = Box::new(move |t, v| {
                let zf = t.reshape(v, &[4, 5])?;
                let (g, _) = gen.forward(t, zf, false)?;
                let x = t.reshape(g, &[2, 2, 25])?;
                let (y, _) = sur.forward(t, x, false)?;
                let yo = t.constant(y_obs.clone());
                total_loss(t, y, yo, &disc, g, 0.3, LossNorm::L1)
            });
            (f, z)
        }
        other => panic!("no graph case {other}"),
    }
}

pub const GRAPHS: &[&str] = &[
    "G∘F̂ conv, total_loss(l1) wrt z",
    "G∘F̂ conv, total_loss(l2) wrt z",
    "G∘F̂ conv, total_loss wrt first filter bank",
    "G∘F̂ mix, total_loss wrt z",
];


/// Worst result for one case over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseReport {
    pub name: &'static str,
    pub trials: u64,
    pub max_rel_error: f64,
    pub worst_trial: u64,
    pub excluded: usize,
    pub errors: Vec<String>,
}

/// Runs every case in [`OPS`] and [`GRAPHS`] for `trials` seeded draws.
pub fn run_suite(trials: u64, h: f64) -> Vec<CaseReport> {
    let cases = OPS.iter().map(|&n| (n, false)).chain(GRAPHS.iter().map(|&n| (n, true)));
    cases
        .enumerate()
        .map(|(i, (name, graph))| {
            let mut rep = CaseReport {
                name,
                trials,
                max_rel_error: 0.0,
                worst_trial: 0,
                excluded: 0,
                errors: Vec::new(),
            };
            for trial in 0..trials {
                let mut rng = Rng::seed(Rng::derived_seed(1000 + i as u64, trial));
                let (f, x) = if graph { graph_case(name, &mut rng) } else { op_case(name, &mut rng) };
                match grad_check_detailed(|t, v| f(t, v), &x, h) {
                    Ok(r) => {
                        rep.excluded += r.excluded.len();
                        if r.max_rel_error > rep.max_rel_error {
                            rep.max_rel_error = r.max_rel_error;
                            rep.worst_trial = trial;
                        }
                    }
                    Err(e) => rep.errors.push(format!("trial {trial}: {e}")),
                }
            }
            rep
        })
        .collect()
}
