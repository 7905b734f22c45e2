//! Image datasets: IDX archives, binary PGM files and synthetic shapes.

use std::path::Path;

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const IDX_MAGIC: u32 = 0x0000_0803;

fn to_unit(byte: u8, maxval: f64) -> f64 {
    2.0 * f64::from(byte) / maxval - 1.0
}

/// Reads an IDX image archive (`u8` pixels, `[N x rows x cols]`) as
/// `[1 x rows x cols]` images in `[-1, 1]`. With `downsample`, 28x28 images
/// are padded with background to 32x32 and 2x2 mean pooled to 16x16.
pub fn load_idx(path: &Path, downsample: bool) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, downsample)
}

pub fn parse_idx(bytes: &[u8], downsample: bool) -> Result<Vec<Tensor>> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::format("idx", format!("header truncated at {} bytes", bytes.len())))
    };
    let magic = word(0)?;
    if magic != IDX_MAGIC {
        return Err(Error::format("idx", format!("bad magic 0x{magic:08x}, expected 0x{IDX_MAGIC:08x}")));
    }
    let (n, rows, cols) = (word(1)? as usize, word(2)? as usize, word(3)? as usize);
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::format("idx", format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut out = Vec::with_capacity(n);
    for px in bytes[16..].chunks_exact((rows * cols).max(1)).take(n) {
        let img = Tensor::new(&[1, rows, cols], px.iter().map(|&b| to_unit(b, 255.0)).collect())?;
        out.push(if downsample { downsample_28(&img)? } else { img });
    }
    Ok(out)
}

/// Encodes `[1 x rows x cols]` images in `[-1, 1]` as an IDX archive.
pub fn encode_idx(images: &[Tensor]) -> Result<Vec<u8>> {
    let (rows, cols) = match images.first().map(Tensor::shape) {
        Some(&[1, r, c]) => (r, c),
        Some(s) => return Err(Error::InvalidArgument(format!("idx images must be [1 x H x W], got {s:?}"))),
        None => (0, 0),
    };
    let mut bytes = Vec::new();
    for w in [IDX_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        bytes.extend_from_slice(&w.to_be_bytes());
    }
    for img in images {
        if img.shape() != [1, rows, cols] {
            return Err(Error::InvalidArgument("idx images must share one shape".into()));
        }
        bytes.extend(img.data().iter().map(|&v| quantize(v)));
    }
    Ok(bytes)
}

fn downsample_28(img: &Tensor) -> Result<Tensor> {
    if img.shape() != [1, 28, 28] {
        return Err(Error::InvalidArgument(format!("downsampling expects 28x28 images, got {:?}", img.shape())));
    }
    let mut out = Tensor::zeros(&[1, 16, 16]);
    let at = |y: usize, x: usize| -> f64 {
        // two background pixels of padding on every side
        if (2..30).contains(&y) && (2..30).contains(&x) {
            img.get(&[0, y - 2, x - 2])
        } else {
            -1.0
        }
    };
    for y in 0..16 {
        for x in 0..16 {
            let v = (at(2 * y, 2 * x) + at(2 * y + 1, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x + 1)) / 4.0;
            out.set(&[0, y, x], v);
        }
    }
    Ok(out)
}

/// `[-1, 1]` to `0..=255`, clipping first and rounding half up.
pub fn quantize(v: f64) -> u8 {
    let c = v.clamp(-1.0, 1.0);
    ((c + 1.0) * 127.5 + 0.5).floor().min(255.0) as u8
}

/// Writes a binary PGM. Multi-channel images are tiled left to right.
pub fn save_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let [c, h, w] = crate::measurement::as_chw(image)?;
    let mut bytes = format!("P5\n{} {}\n255\n", c * w, h).into_bytes();
    for y in 0..h {
        for ch in 0..c {
            for x in 0..w {
                bytes.push(quantize(image.data()[(ch * h + y) * w + x]));
            }
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM (maxval up to 255) as a `[1 x H x W]` image in `[-1, 1]`.
pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |msg: &str| Error::format("pgm", msg.to_string());
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| bad("non-ascii header"))?.to_string());
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 files are supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let data = bytes.get(i + 1..).ok_or_else(|| bad("missing pixel data"))?;
    if data.len() < w * h {
        return Err(Error::format("pgm", format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Ok(Tensor::new(&[1, h, w], data[..w * h].iter().map(|&b| to_unit(b, maxval as f64)).collect())?)
}

/// Splits off the last `fraction` of `items` as a held-out set.
pub fn split_holdout<T: Clone>(items: &[T], fraction: f64) -> (Vec<T>, Vec<T>) {
    let held = ((items.len() as f64 * fraction).round() as usize).min(items.len());
    let cut = items.len() - held;
    (items[..cut].to_vec(), items[cut..].to_vec())
}

const SUBSAMPLES: usize = 4;

/// Blends `ch_values` into each pixel by the fraction of a 4x4 subpixel grid
/// that falls `inside`.
fn paint(img: &mut Tensor, ch_values: &[f64], inside: impl Fn(f64, f64) -> bool) {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let step = 1.0 / SUBSAMPLES as f64;
    for y in 0..h {
        for x in 0..w {
            let mut hits = 0;
            for sy in 0..SUBSAMPLES {
                for sx in 0..SUBSAMPLES {
                    hits += usize::from(inside(y as f64 + (sy as f64 + 0.5) * step, x as f64 + (sx as f64 + 0.5) * step));
                }
            }
            if hits == 0 {
                continue;
            }
            let cover = hits as f64 / (SUBSAMPLES * SUBSAMPLES) as f64;
            for ch in 0..c {
                let old = img.get(&[ch, y, x]);
                img.set(&[ch, y, x], old + cover * (ch_values[ch.min(ch_values.len() - 1)] - old));
            }
        }
    }
}

/// Antialiased rectangles, disks and thick bars at `+1` on a `-1` background.
pub fn synthetic_shapes(n: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<Tensor> {
    (0..n)
        .map(|_| {
            let mut img = Tensor::full(&[1, h, w], -1.0);
            let (hf, wf) = (h as f64, w as f64);
            match rng.below(3) {
                0 => {
                    let (rh, rw) = (rng.uniform_range(0.25, 0.6) * hf, rng.uniform_range(0.25, 0.6) * wf);
                    let (y0, x0) = (rng.uniform_range(0.0, hf - rh), rng.uniform_range(0.0, wf - rw));
                    paint(&mut img, &[1.0], |y, x| y >= y0 && y < y0 + rh && x >= x0 && x < x0 + rw);
                }
                1 => {
                    let r = rng.uniform_range(0.15, 0.32) * hf.min(wf);
                    let (cy, cx) = (rng.uniform_range(r, hf - r), rng.uniform_range(r, wf - r));
                    paint(&mut img, &[1.0], |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r);
                }
                _ => {
                    let angle = rng.uniform_range(0.0, std::f64::consts::PI);
                    let (cy, cx) = (rng.uniform_range(0.35, 0.65) * hf, rng.uniform_range(0.35, 0.65) * wf);
                    let half = rng.uniform_range(1.0, 1.8);
                    let (s, c) = angle.sin_cos();
                    paint(&mut img, &[1.0], |y, x| ((y - cy) * c - (x - cx) * s).abs() <= half);
                }
            }
            img
        })
        .collect()
}

/// Cartoon faces `[3 x h x w]`: a tinted disk with two eyes and a mouth.
pub fn synthetic_faces(n: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<Tensor> {
    (0..n)
        .map(|_| {
            let bg: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, -0.4)).collect();
            let mut img = Tensor::zeros(&[3, h, w]);
            paint(&mut img, &bg, |_, _| true);
            let (hf, wf) = (h as f64, w as f64);
            let r = rng.uniform_range(0.3, 0.42) * hf.min(wf);
            let (cy, cx) = (hf / 2.0 + rng.uniform_range(-1.0, 1.0), wf / 2.0 + rng.uniform_range(-1.0, 1.0));
            let tone = rng.uniform_range(0.2, 0.9);
            let skin = [tone, tone - 0.3, tone - 0.6];
            paint(&mut img, &skin, |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r);
            let eye = [-1.0, -1.0, -0.6];
            let (ey, ex) = (cy - 0.3 * r, 0.4 * r);
            for side in [-1.0, 1.0] {
                paint(&mut img, &eye, |y, x| (y - ey).powi(2) + (x - cx - side * ex).powi(2) <= 1.1);
            }
            let smile = rng.uniform_range(0.0, 0.25) * r;
            paint(&mut img, &[0.8, -0.9, -0.8], |y, x| {
                let dx = (x - cx) / (0.5 * r);
                dx.abs() <= 1.0 && (y - (cy + 0.45 * r + smile * (1.0 - dx * dx))).abs() <= 0.6
            });
            img
        })
        .collect()
}
