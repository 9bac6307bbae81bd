//! Discretized volume-rendering quadrature and its exact adjoint.
//!
//! For sorted samples `t_i` with radiance `(c_i, sigma_i)`:
//! `delta_i = t_{i+1} - t_i` (the last interval runs to `t_far`),
//! `alpha_i = 1 - exp(-sigma_i * delta_i)`, transmittance
//! `T_i = prod_{j<i} (1 - alpha_j)`, weight `w_i = T_i * alpha_i`, and
//! `rgb = sum w_i c_i + (1 - sum w_i) * background`.

pub use crate::net::RadianceSample;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-ray sample arrays: positions, sampled features, radiance, and the
/// compositing weights written back by [`composite`].
#[derive(Debug, Clone)]
pub struct SampleBatch<T> {
    pub ts: Vec<T>,
    pub t_far: T,
    feat_len: usize,
    feats: Vec<T>,
    /// Inside the volume and not masked empty; vacuum otherwise.
    pub renderable: Vec<bool>,
    pub radiance: Vec<RadianceSample<T>>,
    /// `w_i`, filled by [`composite`].
    pub weights: Vec<T>,
    /// `T_i` (transmittance before sample i), filled by [`composite`].
    pub trans: Vec<T>,
    background: Option<[T; 3]>,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn new(ts: Vec<T>, t_far: T, feat_len: usize) -> Result<Self> {
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("sample t-values must be sorted ascending"));
        }
        let n = ts.len();
        Ok(Self {
            ts,
            t_far,
            feat_len,
            feats: vec![T::zero(); n * feat_len],
            renderable: vec![false; n],
            radiance: vec![RadianceSample::vacuum(); n],
            weights: vec![T::zero(); n],
            trans: vec![T::zero(); n],
            background: None,
        })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn feat_len(&self) -> usize {
        self.feat_len
    }

    pub fn feature(&self, i: usize) -> &[T] {
        &self.feats[i * self.feat_len..(i + 1) * self.feat_len]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.feats[i * self.feat_len..(i + 1) * self.feat_len]
    }

    pub fn composited(&self) -> bool {
        self.background.is_some()
    }

    pub fn background(&self) -> Option<[T; 3]> {
        self.background
    }

    #[inline]
    fn delta(&self, i: usize) -> T {
        let next = if i + 1 < self.ts.len() {
            self.ts[i + 1]
        } else {
            self.t_far
        };
        (next - self.ts[i]).max(T::zero())
    }
}

/// Color estimate for one ray: a convex combination of sample colors and the
/// background, plus the accumulated opacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelEstimate<T> {
    pub rgb: [T; 3],
    pub alpha_total: T,
}

impl<T: Scalar> PixelEstimate<T> {
    pub fn background(bg: [T; 3]) -> Self {
        Self {
            rgb: bg,
            alpha_total: T::zero(),
        }
    }
}

/// Front-to-back alpha compositing over a sorted batch. Weights and
/// transmittances are stored back into the batch for importance sampling and
/// the backward pass.
pub fn composite<T: Scalar>(batch: &mut SampleBatch<T>, background: [T; 3]) -> Result<PixelEstimate<T>> {
    if batch.ts.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("sample t-values must be sorted ascending"));
    }
    let n = batch.len();
    let mut trans = T::one();
    let mut rgb = [T::zero(); 3];
    let mut alpha_total = T::zero();
    for i in 0..n {
        let delta = batch.delta(i);
        let sigma = batch.radiance[i].sigma;
        let alpha = T::one() - (-sigma * delta).exp();
        let w = trans * alpha;
        batch.weights[i] = w;
        batch.trans[i] = trans;
        for c in 0..3 {
            rgb[c] = rgb[c] + batch.radiance[i].color[c] * w;
        }
        alpha_total = alpha_total + w;
        trans = trans * (T::one() - alpha);
    }
    for c in 0..3 {
        rgb[c] = rgb[c] + background[c] * (T::one() - alpha_total);
    }
    batch.background = Some(background);
    Ok(PixelEstimate { rgb, alpha_total })
}

/// Exact gradients of the composited rgb with respect to every sample's
/// color and density, including the transmittance chain and the residual
/// background term. Requires a prior [`composite`] on the batch.
pub fn composite_backward<T: Scalar>(
    batch: &SampleBatch<T>,
    d_rgb: [T; 3],
) -> Result<Vec<([T; 3], T)>> {
    let Some(bg) = batch.background else {
        return Err(Error::invalid(
            "composite_backward requires a composited batch",
        ));
    };
    let n = batch.len();
    let mut out = vec![([T::zero(); 3], T::zero()); n];
    // suffix[i] = sum_{k > i} w_k * (c_k - bg) . d_rgb
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        let w = batch.weights[i];
        let c = batch.radiance[i].color;
        let dc = [d_rgb[0] * w, d_rgb[1] * w, d_rgb[2] * w];
        let mut contrib = T::zero();
        for ch in 0..3 {
            contrib = contrib + (c[ch] - bg[ch]) * d_rgb[ch];
        }
        // T_{i+1} = T_i - w_i
        let t_next = batch.trans[i] - w;
        let dsigma = batch.delta(i) * (t_next * contrib - suffix);
        out[i] = (dc, dsigma);
        suffix = suffix + w * contrib;
    }
    Ok(out)
}
