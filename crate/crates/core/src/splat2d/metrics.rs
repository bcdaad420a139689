//! PSNR, SSIM and the blended L1 + D-SSIM training loss.

use crate::error::Result;

use super::image::ImageBuffer;

pub const DEFAULT_LAMBDA: f64 = 0.2;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.map(|v| v / total)
}

/// Separable Gaussian filter with zero padding, output the size of the input.
fn blur(data: &[f64], width: usize, height: usize, w: &[f64; WINDOW]) -> Vec<f64> {
    let half = WINDOW / 2;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let sx = x + k;
                if sx >= half && sx - half < width {
                    acc += wk * row[sx - half];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for (k, wk) in w.iter().enumerate() {
            let sy = y + k;
            if sy < half || sy - half >= height {
                continue;
            }
            let src = &tmp[(sy - half) * width..(sy - half + 1) * width];
            let dst = &mut out[y * width..(y + 1) * width];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

struct Moments {
    mu_a: Vec<f64>,
    mu_b: Vec<f64>,
    aa: Vec<f64>,
    bb: Vec<f64>,
    ab: Vec<f64>,
}

fn moments(a: &ImageBuffer, b: &ImageBuffer) -> Moments {
    let w = window();
    let (wd, ht) = (a.width, a.height);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.pixels
            .iter()
            .zip(&b.pixels)
            .map(|(&x, &y)| f(x, y))
            .collect()
    };
    Moments {
        mu_a: blur(&a.pixels, wd, ht, &w),
        mu_b: blur(&b.pixels, wd, ht, &w),
        aa: blur(&prod(&|x, _| x * x), wd, ht, &w),
        bb: blur(&prod(&|_, y| y * y), wd, ht, &w),
        ab: blur(&prod(&|x, y| x * y), wd, ht, &w),
    }
}

/// Terms of the SSIM map at one pixel: `S = A·B / (C·D)`.
#[inline]
fn terms(m: &Moments, i: usize) -> (f64, f64, f64, f64) {
    let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
    let a = 2.0 * ma * mb + C1;
    let b = 2.0 * (m.ab[i] - ma * mb) + C2;
    let c = ma * ma + mb * mb + C1;
    let d = (m.aa[i] - ma * ma) + (m.bb[i] - mb * mb) + C2;
    (a, b, c, d)
}

/// Mean SSIM over all pixels, 11×11 Gaussian window (σ = 1.5), zero-padded.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let m = moments(a, b);
    let total: f64 = (0..a.len())
        .map(|i| {
            let (ta, tb, tc, td) = terms(&m, i);
            ta * tb / (tc * td)
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// SSIM and its gradient with respect to the pixels of `a`.
pub fn ssim_with_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<f64>)> {
    a.same_dims(b)?;
    let n = a.len();
    if n == 0 {
        return Ok((1.0, Vec::new()));
    }
    let m = moments(a, b);
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut g_mu = vec![0.0; n];
    let mut g_aa = vec![0.0; n];
    let mut g_ab = vec![0.0; n];
    for i in 0..n {
        let (ta, tb, tc, td) = terms(&m, i);
        let cd = tc * td;
        let s = ta * tb / cd;
        total += s;
        let (ma, mb) = (m.mu_a[i], m.mu_b[i]);
        g_mu[i] =
            inv_n * ((2.0 * mb * tb - 2.0 * mb * ta) / cd - s * (2.0 * ma / tc - 2.0 * ma / td));
        g_aa[i] = -inv_n * s / td;
        g_ab[i] = inv_n * 2.0 * ta / cd;
    }
    // The window is symmetric, so the filter is its own adjoint.
    let w = window();
    let f_mu = blur(&g_mu, a.width, a.height, &w);
    let f_aa = blur(&g_aa, a.width, a.height, &w);
    let f_ab = blur(&g_ab, a.width, a.height, &w);
    let grad = (0..n)
        .map(|i| f_mu[i] + 2.0 * a.pixels[i] * f_aa[i] + b.pixels[i] * f_ab[i])
        .collect();
    Ok((total * inv_n, grad))
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio for unit dynamic range; `+∞` for identical
/// images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let e = mse(a, b)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / e).log10()
    })
}

fn l1(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let sum: f64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (x - y).abs())
        .sum();
    sum / a.len().max(1) as f64
}

/// `(1 - λ)·L1 + λ·(1 - SSIM)/2`.
pub fn loss(rendered: &ImageBuffer, truth: &ImageBuffer, lambda: f64) -> Result<f64> {
    rendered.same_dims(truth)?;
    let mut value = (1.0 - lambda) * l1(rendered, truth);
    if lambda != 0.0 {
        value += lambda * (1.0 - ssim(rendered, truth)?) / 2.0;
    }
    Ok(value)
}

/// Loss and its gradient with respect to each rendered pixel.
pub fn loss_with_grad(
    rendered: &ImageBuffer,
    truth: &ImageBuffer,
    lambda: f64,
) -> Result<(f64, ImageBuffer)> {
    rendered.same_dims(truth)?;
    let n = rendered.len().max(1) as f64;
    let mut value = (1.0 - lambda) * l1(rendered, truth);
    let mut grad: Vec<f64> = rendered
        .pixels
        .iter()
        .zip(&truth.pixels)
        .map(|(x, y)| {
            let d = x - y;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda) * sign / n
        })
        .collect();
    if lambda != 0.0 {
        let (s, ds) = ssim_with_grad(rendered, truth)?;
        value += lambda * (1.0 - s) / 2.0;
        for (g, d) in grad.iter_mut().zip(ds) {
            *g -= 0.5 * lambda * d;
        }
    }
    Ok((
        value,
        ImageBuffer::from_pixels(rendered.width, rendered.height, grad)?,
    ))
}

/// Marks pixels within `strip_px` (Chebyshev distance) of a pixel assigned to
/// a different cell by `owner`.
pub fn boundary_strip_mask(
    width: usize,
    height: usize,
    strip_px: usize,
    owner: impl Fn(usize, usize) -> u32,
) -> Vec<bool> {
    let labels: Vec<u32> = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| owner(x, y))
        .collect();
    let mut mask = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let here = labels[y * width + x];
            let (x0, x1) = (x.saturating_sub(strip_px), (x + strip_px).min(width - 1));
            let (y0, y1) = (y.saturating_sub(strip_px), (y + strip_px).min(height - 1));
            mask[y * width + x] =
                (y0..=y1).any(|yy| (x0..=x1).any(|xx| labels[yy * width + xx] != here));
        }
    }
    mask
}

/// PSNR restricted to the masked pixels; `None` when the mask is empty.
pub fn masked_psnr(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<Option<f64>> {
    a.same_dims(b)?;
    let (sum, count) = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), ((x, y), _)| {
            (s + (x - y).powi(2), c + 1)
        });
    if count == 0 {
        return Ok(None);
    }
    let e = sum / count as f64;
    Ok(Some(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / e).log10()
    }))
}

/// Mean of the SSIM map over the masked pixels; `None` when the mask is empty.
pub fn masked_ssim(a: &ImageBuffer, b: &ImageBuffer, mask: &[bool]) -> Result<Option<f64>> {
    a.same_dims(b)?;
    let m = moments(a, b);
    let (sum, count) = (0..a.len())
        .filter(|&i| mask[i])
        .fold((0.0, 0usize), |(s, c), i| {
            let (ta, tb, tc, td) = terms(&m, i);
            (s + ta * tb / (tc * td), c + 1)
        });
    Ok((count > 0).then(|| sum / count as f64))
}
