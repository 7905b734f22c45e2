//! Fixtures shared by the criterion benches.

use blindinv::gan::{build_discriminator, build_generator, GanConfig};
use blindinv::measurement::Operator;
use blindinv::{Discriminator, Generator, Rng, Tensor};

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = Rng::seed(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

/// Untrained prior at the default architecture.
pub fn prior(seed: u64) -> (Generator, Discriminator) {
    let cfg = GanConfig::default();
    let mut rng = Rng::seed(seed);
    (build_generator(&cfg, &mut rng), build_discriminator(&cfg, &mut rng))
}

/// `n` blurred samples of `gen`.
pub fn blurred_observations(gen: &Generator, n: usize, seed: u64) -> Vec<Tensor> {
    let op = Operator::blur(7, 1.5).unwrap();
    (0..n)
        .map(|i| {
            let z = random(&[gen.latent_dim()], seed + i as u64);
            op.apply(&gen.sample(&z).unwrap()).unwrap()
        })
        .collect()
}
