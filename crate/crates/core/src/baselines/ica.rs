//! FastICA with a tanh contrast and symmetric decorrelation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

const TOL: f64 = 1e-6;
const MAX_ITER: usize = 200;
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct IcaResult {
    /// Estimated components `[S x M]`, unit variance, arbitrary order and sign.
    /// Rows past `rank` are zero.
    pub sources: Tensor,
    /// Orthonormal unmixing matrix `[rank x rank]` acting on whitened data.
    pub unmixing: Tensor,
    /// Number of independent directions found in the mixtures, at most S.
    pub rank: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn to_tensor(m: &DMatrix<f64>) -> Tensor {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Tensor::from_parts(vec![m.nrows(), m.ncols()], data)
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eigenvectors.nrows(), order.len(), |r, c| eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// `(W W^T)^(-1/2) W`.
fn decorrelate(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sorted_eigen(w * w.transpose());
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| 1.0 / v.max(1e-300).sqrt()),
    ));
    &vecs * inv_sqrt * vecs.transpose() * w
}

/// Separates `s` components from mixtures `y: [N_obs x M]` with a fixed seed.
pub fn fastica(y: &Tensor, s: usize) -> Result<IcaResult> {
    fastica_seeded(y, s, 0)
}

pub fn fastica_seeded(y: &Tensor, s: usize, seed: u64) -> Result<IcaResult> {
    let [n_obs, m] = match *y.shape() {
        [a, b] => [a, b],
        _ => return Err(Error::InvalidArgument(format!("fastica expects [N_obs x M], got {:?}", y.shape()))),
    };
    if s == 0 || m < 2 {
        return Err(Error::InvalidArgument(format!("fastica needs s >= 1 and at least 2 samples, got s = {s}, M = {m}")));
    }
    if n_obs < s {
        return Err(Error::Underdetermined {
            observations: n_obs,
            sources: s,
        });
    }
    let mut x = DMatrix::from_row_slice(n_obs, m, y.data());
    for r in 0..n_obs {
        let mean = x.row(r).mean();
        x.row_mut(r).add_scalar_mut(-mean);
    }
    let cov = &x * x.transpose() / m as f64;
    let (vals, vecs) = sorted_eigen(cov);
    let rank = vals[..s].iter().take_while(|&&v| v > RANK_TOL * vals[0] && v > 0.0).count();
    if rank < s {
        log::warn!("fastica: mixtures span {rank} of {s} directions, padding with zero components");
    }
    let mut k = DMatrix::zeros(rank, n_obs);
    for i in 0..rank {
        let scale = 1.0 / vals[i].sqrt();
        for j in 0..n_obs {
            k[(i, j)] = vecs[(j, i)] * scale;
        }
    }
    let xw = &k * &x;
    let padded = |est: DMatrix<f64>| est.resize_vertically(s, 0.0);
    if rank <= 1 {
        return Ok(IcaResult {
            sources: to_tensor(&padded(xw)),
            unmixing: Tensor::eye(rank.max(1)),
            rank,
            converged: true,
            iterations: 0,
        });
    }
    let mut rng = Rng::seed(seed);
    let mut w = decorrelate(&DMatrix::from_fn(rank, rank, |_, _| rng.standard_normal()));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let wx = &w * &xw;
        let g = wx.map(f64::tanh);
        let g_prime_mean: Vec<f64> = (0..rank).map(|r| g.row(r).iter().map(|t| 1.0 - t * t).sum::<f64>() / m as f64).collect();
        let mut next = &g * xw.transpose() / m as f64;
        for r in 0..rank {
            for c in 0..rank {
                next[(r, c)] -= g_prime_mean[r] * w[(r, c)];
            }
        }
        let next = decorrelate(&next);
        let change = (&next * w.transpose())
            .diagonal()
            .iter()
            .map(|d| (d.abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = next;
        if change < TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("fastica stopped after {MAX_ITER} iterations without converging");
    }
    Ok(IcaResult {
        sources: to_tensor(&padded(&w * &xw)),
        unmixing: to_tensor(&w),
        rank,
        converged,
        iterations,
    })
}
