//! Naive separable 2-D discrete Fourier transform for small images.

use num_complex::Complex64;

use crate::tensor::Tensor;
use crate::Result;

/// Row-major `h x w` complex spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub h: usize,
    pub w: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.w + v]
    }
}

fn twiddles(n: usize, sign: f64) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64))
        .collect()
}

/// Transforms every row, then every column, in place.
fn transform(data: &mut [Complex64], h: usize, w: usize, sign: f64) {
    let (tw_w, tw_h) = (twiddles(w, sign), twiddles(h, sign));
    let mut buf = vec![Complex64::new(0.0, 0.0); h.max(w)];
    for r in 0..h {
        let row = &mut data[r * w..(r + 1) * w];
        for (k, out) in buf[..w].iter_mut().enumerate() {
            *out = row.iter().enumerate().map(|(x, &v)| v * tw_w[(k * x) % w]).sum();
        }
        row.copy_from_slice(&buf[..w]);
    }
    for c in 0..w {
        for (k, out) in buf[..h].iter_mut().enumerate() {
            *out = (0..h).map(|y| data[y * w + c] * tw_h[(k * y) % h]).sum();
        }
        for y in 0..h {
            data[y * w + c] = buf[y];
        }
    }
}

/// `X[u,v] = sum_{y,x} img[y,x] exp(-2 pi i (u y / H + v x / W))` of an
/// `[H x W]` image (or `[1 x H x W]`).
pub fn dft2d(image: &Tensor) -> Result<Spectrum> {
    let [c, h, w] = crate::measurement::as_chw(image)?;
    if c != 1 {
        return Err(crate::Error::InvalidArgument(format!("dft2d takes one channel, got {c}")));
    }
    let mut data: Vec<Complex64> = image.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, h, w, -1.0);
    Ok(Spectrum { h, w, data })
}

/// Inverse of [`dft2d`]; returns the real part as `[H x W]`.
pub fn idft2d(spectrum: &Spectrum) -> Tensor {
    let (h, w) = (spectrum.h, spectrum.w);
    let mut data = spectrum.data.clone();
    transform(&mut data, h, w, 1.0);
    let scale = 1.0 / (h * w) as f64;
    Tensor::from_parts(vec![h, w], data.iter().map(|v| v.re * scale).collect())
}
