//! Sample placement along rays: stratified bins for the coarse pass and
//! inverse-CDF importance draws against the coarse compositing weights for
//! the fine pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Floor added to every importance weight so the PDF never degenerates.
pub const EPS_PDF: f64 = 1e-5;

/// Splits `[t_near, t_far]` into `n` equal bins and places one sample per
/// bin: the midpoint when `jitter` is false, uniform within the bin
/// otherwise. Output is sorted ascending.
pub fn stratified_samples<T: Scalar>(
    t_near: T,
    t_far: T,
    n: usize,
    rng: &mut impl Rng,
    jitter: bool,
) -> Vec<T> {
    debug_assert!(n >= 1, "stratified sampling needs n >= 1");
    let width = (t_far - t_near) / T::c(n as f64);
    (0..n)
        .map(|i| {
            let u = if jitter {
                T::c(rng.random::<f64>())
            } else {
                T::c(0.5)
            };
            t_near + width * (T::c(i as f64) + u)
        })
        .collect()
}

/// Bin edges for a piecewise-constant PDF over the coarse samples: each
/// sample owns the interval between the midpoints to its neighbors, clamped
/// to the first and last sample.
fn pdf_edges<T: Scalar>(ts: &[T]) -> Vec<T> {
    let m = ts.len();
    let half = T::c(0.5);
    let mut edges = Vec::with_capacity(m + 1);
    edges.push(ts[0]);
    for i in 1..m {
        edges.push((ts[i - 1] + ts[i]) * half);
    }
    edges.push(ts[m - 1]);
    edges
}

/// Draws `n` new t-values by inverse-CDF of stratified uniforms against the
/// piecewise-constant PDF defined by `weights` (plus [`EPS_PDF`]) over the
/// coarse bins, then returns them merged with `t_coarse` and sorted.
pub fn importance_samples<T: Scalar>(
    t_coarse: &[T],
    weights: &[T],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if t_coarse.is_empty() {
        return Err(Error::invalid("importance sampling needs coarse samples"));
    }
    if t_coarse.len() != weights.len() {
        return Err(Error::invalid(format!(
            "weights length {} does not match {} coarse samples",
            weights.len(),
            t_coarse.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < T::zero()) {
        return Err(Error::invalid("importance weights must be finite and >= 0"));
    }
    let mut merged = t_coarse.to_vec();
    if n == 0 {
        return Ok(merged);
    }

    let m = weights.len();
    let eps = T::c(EPS_PDF);
    let mut cdf = Vec::with_capacity(m + 1);
    cdf.push(T::zero());
    let mut acc = T::zero();
    for &w in weights {
        acc = acc + w + eps;
        cdf.push(acc);
    }
    let total = acc;
    for v in cdf.iter_mut() {
        *v = *v / total;
    }
    cdf[m] = T::one();

    let edges = pdf_edges(t_coarse);
    let inv_n = 1.0 / n as f64;
    let mut bin = 0usize;
    for i in 0..n {
        // stratified uniforms ascend, so the CDF scan can resume where it
        // left off
        let u = T::c((i as f64 + rng.random::<f64>()) * inv_n);
        while bin + 1 < m && cdf[bin + 1] <= u {
            bin += 1;
        }
        let lo = cdf[bin];
        let hi = cdf[bin + 1];
        let denom = (hi - lo).max(T::c(1e-12));
        let frac = (u - lo) / denom;
        merged.push(edges[bin] + (edges[bin + 1] - edges[bin]) * frac);
    }
    merged.sort_by(|a, b| a.partial_cmp(b).expect("finite t-values"));
    Ok(merged)
}
