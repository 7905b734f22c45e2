//! Image and source-separation quality metrics.

use serde::Serialize;

use crate::tensor::Tensor;
use crate::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_PEAK: f64 = 2.0;
const MAX_SOURCES: usize = 5;

fn check(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64)
}

/// Mean absolute difference.
pub fn l1(a: &Tensor, b: &Tensor) -> Result<f64> {
    check(a, b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64)
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// `10 log10(peak^2 / mse)` in dB, capped at 99 for identical inputs.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, peak))
}

fn normalized_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    if t.ndim() < 2 {
        return Err(Error::InvalidArgument(format!("expected [S x ...] sources, got {:?}", t.shape())));
    }
    let s = t.shape()[0];
    let per = t.numel() / s;
    Ok(t.data()
        .chunks(per)
        .map(|row| {
            let mean = row.iter().sum::<f64>() / per as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / per as f64;
            let sd = var.sqrt();
            row.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect()
        })
        .collect())
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Best assignment of estimated to true sources.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SourceMatch {
    /// `permutation[i]` is the estimate matched to true source `i`.
    pub permutation: Vec<usize>,
    /// Per-source MSE after normalization, in true-source order.
    pub scores: Vec<f64>,
    /// Per-source mean absolute error after normalization.
    pub l1: Vec<f64>,
    /// Whether each matched estimate was negated.
    pub flipped: Vec<bool>,
}

impl SourceMatch {
    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn mean_l1(&self) -> f64 {
        self.l1.iter().sum::<f64>() / self.l1.len() as f64
    }
}

/// Normalizes every source to zero mean and unit variance, then picks the
/// permutation with the smallest total MSE.
pub fn match_sources(est: &Tensor, truth: &Tensor) -> Result<SourceMatch> {
    match_with(est, truth, false)
}

/// As [`match_sources`], also allowing each estimate to be negated.
pub fn match_sources_up_to_sign(est: &Tensor, truth: &Tensor) -> Result<SourceMatch> {
    match_with(est, truth, true)
}

fn match_with(est: &Tensor, truth: &Tensor, signed: bool) -> Result<SourceMatch> {
    check(est, truth)?;
    let s = truth.shape()[0];
    if s > MAX_SOURCES {
        return Err(Error::InvalidArgument(format!("source matching supports at most {MAX_SOURCES} sources, got {s}")));
    }
    let (e, t) = (normalized_rows(est)?, normalized_rows(truth)?);
    let n = t[0].len() as f64;
    // pair[i][k] = (mse, l1, flipped) for truth i against estimate k
    let pair: Vec<Vec<(f64, f64, bool)>> = t
        .iter()
        .map(|ti| {
            e.iter()
                .map(|ek| {
                    let score = |sign: f64| {
                        let m = ti.iter().zip(ek).map(|(a, b)| (a - sign * b).powi(2)).sum::<f64>() / n;
                        let l = ti.iter().zip(ek).map(|(a, b)| (a - sign * b).abs()).sum::<f64>() / n;
                        (m, l)
                    };
                    let (m, l) = score(1.0);
                    if signed {
                        let (mf, lf) = score(-1.0);
                        if mf < m {
                            return (mf, lf, true);
                        }
                    }
                    (m, l, false)
                })
                .collect()
        })
        .collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(s) {
        let total: f64 = p.iter().enumerate().map(|(i, &k)| pair[i][k].0).sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, p));
        }
    }
    let (_, permutation) = best.expect("at least one permutation");
    Ok(SourceMatch {
        scores: permutation.iter().enumerate().map(|(i, &k)| pair[i][k].0).collect(),
        l1: permutation.iter().enumerate().map(|(i, &k)| pair[i][k].1).collect(),
        flipped: permutation.iter().enumerate().map(|(i, &k)| pair[i][k].2).collect(),
        permutation,
    })
}

/// Scores for one recovered item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemMetrics {
    pub item: usize,
    pub psnr: f64,
    pub mse: f64,
    pub l1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matching: Option<SourceMatch>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub items: Vec<ItemMetrics>,
    pub mean_psnr: f64,
    pub mean_mse: f64,
    pub mean_l1: f64,
}

impl MetricsReport {
    fn from_items(items: Vec<ItemMetrics>) -> Self {
        let n = items.len().max(1) as f64;
        MetricsReport {
            mean_psnr: items.iter().map(|i| i.psnr).sum::<f64>() / n,
            mean_mse: items.iter().map(|i| i.mse).sum::<f64>() / n,
            mean_l1: items.iter().map(|i| i.l1).sum::<f64>() / n,
            items,
        }
    }
}

fn paired<'a>(est: &'a [Tensor], truth: &'a [Tensor]) -> Result<impl Iterator<Item = (usize, (&'a Tensor, &'a Tensor))>> {
    if est.len() != truth.len() {
        return Err(Error::InvalidArgument(format!("{} estimates for {} references", est.len(), truth.len())));
    }
    Ok(est.iter().zip(truth).enumerate())
}

/// Per-image PSNR, MSE and mean absolute error against references.
pub fn image_report(est: &[Tensor], truth: &[Tensor]) -> Result<MetricsReport> {
    let items = paired(est, truth)?
        .map(|(item, (e, t))| {
            let m = mse(e, t)?;
            Ok(ItemMetrics {
                item,
                psnr: psnr_from_mse(m, DEFAULT_PEAK),
                mse: m,
                l1: l1(e, t)?,
                matching: None,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_items(items))
}

/// Per-set scores after best-permutation, sign-invariant matching of
/// normalized sources.
pub fn separation_report(est: &[Tensor], truth: &[Tensor]) -> Result<MetricsReport> {
    let items = paired(est, truth)?
        .map(|(item, (e, t))| {
            let m = match_sources_up_to_sign(e, t)?;
            Ok(ItemMetrics {
                item,
                psnr: psnr_from_mse(m.mean_score(), DEFAULT_PEAK),
                mse: m.mean_score(),
                l1: m.mean_l1(),
                matching: Some(m),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_items(items))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(r).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = Tensor::vector(vec![0.5, -0.25]);
        assert_eq!(psnr(&a, &a, 2.0).unwrap(), 99.0);
        // mse = peak^2
        let b = a.map(|v| v + 2.0);
        assert!(psnr(&a, &b, 2.0).unwrap().abs() < 1e-12);
        let c = Tensor::vector(vec![0.1, 0.3]);
        assert_eq!(psnr(&a, &c, 2.0).unwrap(), psnr(&c, &a, 2.0).unwrap());
        assert!(mse(&a, &Tensor::vector(vec![1.0])).is_err());
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn matching_examples() {
        let t = rows(&[vec![1.0, 2.0, 0.0, 5.0], vec![3.0, -1.0, 2.0, 2.0], vec![0.0, 0.0, 1.0, 4.0]]);
        let same = match_sources(&t, &t).unwrap();
        assert_eq!(same.permutation, vec![0, 1, 2]);
        assert!(same.scores.iter().all(|&s| s.abs() < 1e-24));

        let rev = rows(&[t.index_axis0(2).into_data(), t.index_axis0(1).into_data(), t.index_axis0(0).into_data()]);
        let m = match_sources(&rev, &t).unwrap();
        assert_eq!(m.permutation, vec![2, 1, 0]);

        let scaled = rev.scale(3.0);
        let ms = match_sources(&scaled, &t).unwrap();
        assert_eq!(ms.permutation, m.permutation);
        for (a, b) in ms.scores.iter().zip(&m.scores) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_invariant_matching() {
        let t = rows(&[vec![1.0, 2.0, 0.0, 5.0], vec![3.0, -1.0, 2.0, 2.0]]);
        let neg = t.scale(-1.0);
        let m = match_sources_up_to_sign(&neg, &t).unwrap();
        assert_eq!(m.flipped, vec![true, true]);
        assert!(m.mean_score() < 1e-24);
        assert!(match_sources(&neg, &t).unwrap().mean_score() > 1.0);
    }

    #[test]
    fn too_many_sources() {
        let t = Tensor::zeros(&[6, 3]);
        assert!(match_sources(&t, &t).is_err());
    }
}
