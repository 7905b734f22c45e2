//! Raw numeric kernels shared by the tape ops. Row-major slices only.

/// `c = alpha * op(a) * op(b) + beta * c` for an `m x k` by `k x n` product,
/// with arbitrary element strides for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices were checked to cover every element addressed by
    // the given dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dot product with eight independent partial sums (fixed order, so still deterministic).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (xa, xb) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += k * x` elementwise.
#[inline]
pub(crate) fn axpy(k: f64, x: &[f64], y: &mut [f64]) {
    for (d, s) in y.iter_mut().zip(x) {
        *d += k * s;
    }
}

/// Geometry of a same-padded, stride-1 2-D correlation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    /// Row stride of the zero-padded planes and of the "wide" output rows.
    fn wp(&self) -> usize {
        self.w + self.kw - 1
    }

    /// Length of one padded plane, with slack so every tap window fits.
    pub fn plane_len(&self) -> usize {
        (self.h + self.kh - 1) * self.wp() + self.kw
    }

    /// Length of one wide output plane (`h` rows of stride `w + kw - 1`).
    pub fn wide_len(&self) -> usize {
        self.h * self.wp()
    }

    fn tap_offset(&self, a: usize, b: usize) -> usize {
        a * self.wp() + b
    }

    /// Copies `c_in` planes into zero-padded planes; pixel `(y, x)` lands at
    /// padded `(y + kh/2, x + kw/2)`.
    pub fn pad(&self, x: &[f64], out: &mut [f64]) {
        let (plen, wp, npix) = (self.plane_len(), self.wp(), self.pixels());
        let (ah, aw) = (self.kh / 2, self.kw / 2);
        out.fill(0.0);
        for c in 0..self.c_in {
            for y in 0..self.h {
                let dst = c * plen + (y + ah) * wp + aw;
                out[dst..dst + self.w].copy_from_slice(&x[c * npix + y * self.w..c * npix + (y + 1) * self.w]);
            }
        }
    }

    /// Expands `c` planes of `h x w` into wide rows, zeroing the extra columns.
    pub fn widen(&self, g: &[f64], channels: usize, out: &mut [f64]) {
        let (wl, wp, npix) = (self.wide_len(), self.wp(), self.pixels());
        out.fill(0.0);
        for c in 0..channels {
            for y in 0..self.h {
                let dst = c * wl + y * wp;
                out[dst..dst + self.w].copy_from_slice(&g[c * npix + y * self.w..c * npix + (y + 1) * self.w]);
            }
        }
    }

    /// Correlates padded input planes with `filters: [c_out x c_in x kh x kw]`,
    /// writing `c_out x h x w`. `wide` is scratch of `wide_len()`.
    pub fn forward(&self, xp: &[f64], filters: &[f64], c_out: usize, out: &mut [f64], wide: &mut [f64]) {
        let (plen, wl, wp, npix) = (self.plane_len(), self.wide_len(), self.wp(), self.pixels());
        let taps = self.kh * self.kw;
        for o in 0..c_out {
            wide.fill(0.0);
            for c in 0..self.c_in {
                let plane = &xp[c * plen..(c + 1) * plen];
                let f = &filters[(o * self.c_in + c) * taps..(o * self.c_in + c + 1) * taps];
                for a in 0..self.kh {
                    for b in 0..self.kw {
                        let k = f[a * self.kw + b];
                        let off = self.tap_offset(a, b);
                        axpy(k, &plane[off..off + wl], wide);
                    }
                }
            }
            for y in 0..self.h {
                out[o * npix + y * self.w..o * npix + (y + 1) * self.w].copy_from_slice(&wide[y * wp..y * wp + self.w]);
            }
        }
    }

    /// Accumulates the filter gradient from padded input planes and the wide
    /// output gradient (`c_out` planes of `wide_len()`).
    pub fn filter_grad(&self, xp: &[f64], gwide: &[f64], c_out: usize, df: &mut [f64]) {
        let (plen, wl) = (self.plane_len(), self.wide_len());
        let taps = self.kh * self.kw;
        for o in 0..c_out {
            let go = &gwide[o * wl..(o + 1) * wl];
            for c in 0..self.c_in {
                let plane = &xp[c * plen..(c + 1) * plen];
                let f = &mut df[(o * self.c_in + c) * taps..(o * self.c_in + c + 1) * taps];
                for a in 0..self.kh {
                    for b in 0..self.kw {
                        let off = self.tap_offset(a, b);
                        f[a * self.kw + b] += dot(go, &plane[off..off + wl]);
                    }
                }
            }
        }
    }

    /// Accumulates the input gradient into `dx` (`c_in x h x w`). `dxp` is
    /// scratch of `c_in * plane_len()`.
    pub fn input_grad(&self, filters: &[f64], gwide: &[f64], c_out: usize, dxp: &mut [f64], dx: &mut [f64]) {
        let (plen, wl, wp, npix) = (self.plane_len(), self.wide_len(), self.wp(), self.pixels());
        let (ah, aw) = (self.kh / 2, self.kw / 2);
        let taps = self.kh * self.kw;
        dxp.fill(0.0);
        for c in 0..self.c_in {
            let plane = &mut dxp[c * plen..(c + 1) * plen];
            for o in 0..c_out {
                let go = &gwide[o * wl..(o + 1) * wl];
                let f = &filters[(o * self.c_in + c) * taps..(o * self.c_in + c + 1) * taps];
                for a in 0..self.kh {
                    for b in 0..self.kw {
                        let k = f[a * self.kw + b];
                        let off = self.tap_offset(a, b);
                        axpy(k, go, &mut plane[off..off + wl]);
                    }
                }
            }
            for y in 0..self.h {
                let src = c * plen + (y + ah) * wp + aw;
                for (d, s) in dx[c * npix + y * self.w..c * npix + (y + 1) * self.w]
                    .iter_mut()
                    .zip(&dxp[src..src + self.w])
                {
                    *d += s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_with_transposed_operand() {
        // a: 2x3, b stored as 2x3 and used transposed (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, (3, 1), &b, (1, 3), &mut c, 0.0);
        assert_eq!(c, [-2.0, 5.5, -2.0, 16.0]);
    }

    fn naive(g: &ConvGeom, x: &[f64], f: &[f64], c_out: usize) -> Vec<f64> {
        let (ah, aw) = (g.kh as isize / 2, g.kw as isize / 2);
        let mut out = vec![0.0; c_out * g.pixels()];
        for o in 0..c_out {
            for y in 0..g.h as isize {
                for xx in 0..g.w as isize {
                    let mut acc = 0.0;
                    for c in 0..g.c_in {
                        for a in 0..g.kh as isize {
                            for b in 0..g.kw as isize {
                                let (sy, sx) = (y + a - ah, xx + b - aw);
                                if sy >= 0 && sx >= 0 && sy < g.h as isize && sx < g.w as isize {
                                    let fi = ((o * g.c_in + c) * g.kh + a as usize) * g.kw + b as usize;
                                    acc += f[fi] * x[c * g.pixels() + (sy as usize) * g.w + sx as usize];
                                }
                            }
                        }
                    }
                    out[o * g.pixels() + (y as usize) * g.w + xx as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn direct_conv_matches_naive_and_adjoints_agree() {
        for (kh, kw) in [(3, 2), (1, 1), (5, 5), (4, 3)] {
            let g = ConvGeom { c_in: 2, h: 4, w: 5, kh, kw };
            let c_out = 3;
            let x: Vec<f64> = (0..g.c_in * g.pixels()).map(|i| (i as f64 * 0.37).sin()).collect();
            let f: Vec<f64> = (0..c_out * g.c_in * kh * kw).map(|i| (i as f64 * 0.53).cos()).collect();
            let gy: Vec<f64> = (0..c_out * g.pixels()).map(|i| (i as f64 * 0.11).cos()).collect();
            let mut xp = vec![0.0; g.c_in * g.plane_len()];
            g.pad(&x, &mut xp);
            let mut out = vec![0.0; c_out * g.pixels()];
            let mut wide = vec![0.0; g.wide_len()];
            g.forward(&xp, &f, c_out, &mut out, &mut wide);
            for (a, b) in out.iter().zip(naive(&g, &x, &f, c_out)) {
                assert!((a - b).abs() < 1e-12);
            }
            // <gy, conv(x)> = <dx, x> = <df, f>
            let lhs: f64 = out.iter().zip(&gy).map(|(a, b)| a * b).sum();
            let mut gw = vec![0.0; c_out * g.wide_len()];
            g.widen(&gy, c_out, &mut gw);
            let mut dxp = vec![0.0; g.c_in * g.plane_len()];
            let mut dx = vec![0.0; x.len()];
            g.input_grad(&f, &gw, c_out, &mut dxp, &mut dx);
            let via_x: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
            let mut df = vec![0.0; f.len()];
            g.filter_grad(&xp, &gw, c_out, &mut df);
            let via_f: f64 = df.iter().zip(&f).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-10 && (lhs - via_f).abs() < 1e-10);
        }
    }
}
