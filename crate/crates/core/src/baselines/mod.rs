//! Comparison methods: latent-space PGD with and without a known forward
//! model, an additive source model, Wiener deconvolution and FastICA.

mod dft;
mod ica;
mod pgd;
mod wiener;

use std::collections::BTreeMap;
use std::path::Path;

pub use dft::{dft2d, idft2d, Spectrum};
pub use ica::{fastica, fastica_seeded, IcaResult};
pub use pgd::{naive_additive, pgd_known_forward, pgd_no_forward, PgdConfig};
pub use wiener::wiener_deconvolve;

use crate::harness::persist;
use crate::solver::{self, Payload, ResultManifest};
use crate::tensor::Tensor;
use crate::{Error, Result};

const LATENTS: &str = "latents.f32";

/// Sources recovered by one baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub method: String,
    /// One source set per observation, shaped like the solver's.
    pub sources: Vec<Tensor>,
    pub latents: Option<Tensor>,
    pub final_loss: Option<f64>,
    pub metrics: BTreeMap<String, f64>,
    pub runtime_ms: u64,
    pub seed: u64,
}

impl BaselineResult {
    pub fn save(&self, dir: &Path) -> Result<()> {
        if self.metrics.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{} metrics", self.method),
            });
        }
        let sources = solver::write_sources(dir, &self.sources)?;
        let latents = match &self.latents {
            Some(z) => {
                persist::write_f32(&dir.join(LATENTS), std::slice::from_ref(z))?;
                Some(Payload {
                    shape: z.shape().to_vec(),
                    payload: LATENTS.into(),
                })
            }
            None => None,
        };
        let manifest = ResultManifest {
            method: self.method.clone(),
            seed: self.seed,
            config: None,
            initial_loss: None,
            final_loss: self.final_loss,
            loss_history: Vec::new(),
            metrics: self.metrics.clone(),
            runtime_ms: self.runtime_ms,
            n: self.sources.len(),
            sources,
            latents,
            surrogate: None,
        };
        persist::write_json(&dir.join(solver::MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (m, sources) = solver::read_manifest(dir)?;
        let latents = match &m.latents {
            Some(p) => Some(persist::read_f32(&dir.join(&p.payload), 1, &p.shape)?.remove(0)),
            None => None,
        };
        Ok(BaselineResult {
            method: m.method,
            sources,
            latents,
            final_loss: m.final_loss,
            metrics: m.metrics,
            runtime_ms: m.runtime_ms,
            seed: m.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let r = BaselineResult {
            method: "wiener".into(),
            sources: vec![Tensor::full(&[1, 2, 2], 0.5); 3],
            latents: None,
            final_loss: None,
            metrics: BTreeMap::from([("psnr".to_string(), 20.0)]),
            runtime_ms: 7,
            seed: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        r.save(dir.path()).unwrap();
        assert_eq!(BaselineResult::load(dir.path()).unwrap(), r);
    }

    #[test]
    fn non_finite_metrics_refused() {
        let r = BaselineResult {
            method: "x".into(),
            sources: vec![Tensor::zeros(&[1])],
            latents: None,
            final_loss: None,
            metrics: BTreeMap::from([("psnr".to_string(), f64::NAN)]),
            runtime_ms: 0,
            seed: 0,
        };
        assert!(r.save(tempfile::tempdir().unwrap().path()).is_err());
    }
}
