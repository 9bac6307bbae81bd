//! Image-quality metrics: PSNR and SSIM.

use crate::error::{Error, Result};
use crate::image::Image;

/// Peak signal-to-noise ratio in dB over `[0,1]` images, computed in f64 and
/// capped at 99 dB (the reported value for effectively identical images).
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("psnr requires equal image shapes"));
    }
    let n = a.data().len() as f64;
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

/// Structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), k1 = 0.01, k2 = 0.03, dynamic range 1; averaged over valid
/// window positions and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::invalid("ssim requires equal image shapes"));
    }
    const WIN: usize = 11;
    if a.width < WIN || a.height < WIN {
        return Err(Error::invalid("ssim needs images at least 11x11"));
    }
    let kernel = gaussian_kernel(WIN, 1.5);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let pa = channel_plane(a, ch);
        let pb = channel_plane(b, ch);
        let mu_a = blur(&pa, a.width, a.height, &kernel);
        let mu_b = blur(&pb, a.width, a.height, &kernel);
        let aa = blur(&mul(&pa, &pa), a.width, a.height, &kernel);
        let bb = blur(&mul(&pb, &pb), a.width, a.height, &kernel);
        let ab = blur(&mul(&pa, &pb), a.width, a.height, &kernel);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data()
        .iter()
        .skip(ch)
        .step_by(3)
        .map(|&v| v as f64)
        .collect()
}

fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Separable valid-mode convolution; output is (w - k + 1) x (h - k + 1).
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let ow = w - k + 1;
    // horizontal
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                s += plane[y * w + x + i] * kv;
            }
            tmp[y * ow + x] = s;
        }
    }
    // vertical
    let oh = h - k + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut s = 0.0;
            for (i, kv) in kernel.iter().enumerate() {
                s += tmp[(y + i) * ow + x] * kv;
            }
            out[y * ow + x] = s;
        }
    }
    out
}
