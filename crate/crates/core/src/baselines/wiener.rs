//! Frequency-domain Wiener deconvolution under a circular blur model.

use num_complex::Complex64;

use super::dft::{dft2d, idft2d};
use crate::measurement::{as_chw, ConvKernel};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Transfer function of circular correlation with `kernel` on `h x w` images.
fn transfer(kernel: &ConvKernel, h: usize, w: usize) -> Result<super::Spectrum> {
    let (kh, kw) = (kernel.height(), kernel.width());
    let (ah, aw) = (kh / 2, kw / 2);
    let mut psf = Tensor::zeros(&[h, w]);
    for a in 0..kh {
        for b in 0..kw {
            let y = (ah + h * kh - a) % h;
            let x = (aw + w * kw - b) % w;
            let at = y * w + x;
            psf.data_mut()[at] += kernel.values().get(&[a, b]);
        }
    }
    dft2d(&psf)
}

/// `X = conj(H) Y / (|H|^2 + k_reg)` per channel of `y` (`[H x W]` or
/// `[C x H x W]`); the output has the shape of `y`.
pub fn wiener_deconvolve(y: &Tensor, kernel: &ConvKernel, k_reg: f64) -> Result<Tensor> {
    if !(k_reg >= 0.0) {
        return Err(Error::InvalidArgument(format!("k_reg must be non-negative, got {k_reg}")));
    }
    let [c, h, w] = as_chw(y)?;
    let tf = transfer(kernel, h, w)?;
    let mut out = Vec::with_capacity(y.numel());
    for ch in 0..c {
        let plane = Tensor::new(&[h, w], y.data()[ch * h * w..(ch + 1) * h * w].to_vec())?;
        let mut spec = dft2d(&plane)?;
        for (yv, hv) in spec.data.iter_mut().zip(&tf.data) {
            let denom = hv.norm_sqr() + k_reg;
            *yv = if denom == 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                hv.conj() * *yv / denom
            };
        }
        out.extend_from_slice(idft2d(&spec).data());
    }
    Ok(Tensor::new(y.shape(), out)?)
}
