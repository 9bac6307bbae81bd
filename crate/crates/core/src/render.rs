//! Per-pixel rendering: a stratified coarse pass whose compositing weights
//! drive importance sampling for the fine pass, both composited against an
//! explicit background. Samples outside the volume (or masked empty) become
//! vacuum without invoking the network.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::camera::{Camera, Ray};
use crate::composite::{composite, PixelEstimate, SampleBatch};
use crate::error::Result;
use crate::image::Image;
use crate::math::derive_seed;
use crate::net::{pos_encode, DirEncoding, ForwardCache, RenderParams, WhichNet};
use crate::sampling::{importance_samples, stratified_samples};
use crate::scalar::Scalar;
use crate::volume::FeatureVolume;

/// Sampling counts and compositing environment for rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig<T> {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub background: [T; 3],
    pub jitter: bool,
}

impl<T: Scalar> Default for RenderConfig<T> {
    fn default() -> Self {
        Self {
            n_coarse: 64,
            n_fine: 64,
            background: [T::zero(); 3],
            jitter: true,
        }
    }
}

impl<T: Scalar> RenderConfig<T> {
    pub fn with_background(mut self, bg: [T; 3]) -> Self {
        self.background = bg;
        self
    }
}

/// Both pass estimates plus the sample batches that produced them; the
/// batches feed the training backward pass.
#[derive(Debug, Clone)]
pub struct PixelRender<T> {
    pub coarse: PixelEstimate<T>,
    pub fine: PixelEstimate<T>,
    pub coarse_batch: SampleBatch<T>,
    pub fine_batch: SampleBatch<T>,
}

/// Samples the volume and evaluates one network over the given t-values.
pub fn fill_batch<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    which: WhichNet,
    ray: &Ray<T>,
    ts: Vec<T>,
    enc: &DirEncoding<T>,
    cache: &mut ForwardCache<T>,
) -> Result<SampleBatch<T>> {
    let mut batch = SampleBatch::new(ts, ray.t_far, volume.feat_len())?;
    for i in 0..batch.len() {
        let p = ray.at(batch.ts[i]);
        let flags = volume.sample_into(p, batch.feature_mut(i));
        let renderable = flags.inside && flags.occupied;
        batch.renderable[i] = renderable;
        if renderable {
            let rad = params.forward(which, batch.feature(i), enc, cache)?;
            batch.radiance[i] = rad;
        }
    }
    Ok(batch)
}

/// Renders one ray: stratified coarse pass, importance-sampled fine pass.
/// Deterministic for a fixed rng seed.
pub fn render_pixel_batches<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    ray: &Ray<T>,
    cfg: &RenderConfig<T>,
    rng: &mut impl Rng,
    cache: &mut ForwardCache<T>,
) -> Result<PixelRender<T>> {
    let enc = pos_encode(ray.dir, params.descriptor().enc_levels)?;
    let ts_coarse = stratified_samples(ray.t_near, ray.t_far, cfg.n_coarse, rng, cfg.jitter);
    let mut coarse_batch = fill_batch(
        volume,
        params,
        WhichNet::Coarse,
        ray,
        ts_coarse,
        &enc,
        cache,
    )?;
    let coarse = composite(&mut coarse_batch, cfg.background)?;

    let ts_fine = importance_samples(&coarse_batch.ts, &coarse_batch.weights, cfg.n_fine, rng)?;
    let mut fine_batch = fill_batch(volume, params, WhichNet::Fine, ray, ts_fine, &enc, cache)?;
    let fine = composite(&mut fine_batch, cfg.background)?;

    Ok(PixelRender {
        coarse,
        fine,
        coarse_batch,
        fine_batch,
    })
}

/// Coarse and fine color estimates for one ray.
pub fn render_pixel<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    ray: &Ray<T>,
    cfg: &RenderConfig<T>,
    rng: &mut impl Rng,
) -> Result<(PixelEstimate<T>, PixelEstimate<T>)> {
    let mut cache = ForwardCache::new(params.descriptor());
    let out = render_pixel_batches(volume, params, ray, cfg, rng, &mut cache)?;
    Ok((out.coarse, out.fine))
}

/// Full-frame render of the fine pass, parallel over pixels. Per-pixel rng
/// streams derive from `(seed, pixel index)`, so the thread schedule never
/// changes the output.
pub fn render_image<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    camera: &Camera<T>,
    cfg: &RenderConfig<T>,
    seed: u64,
) -> Result<Image> {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| -> Result<Vec<[f32; 3]>> {
            let mut cache = ForwardCache::new(params.descriptor());
            let mut row = Vec::with_capacity(w);
            for x in 0..w {
                let idx = (y * w + x) as u64;
                let mut rng = StdRng::seed_from_u64(derive_seed(seed, idx));
                let ray = camera.generate_ray(T::c(x as f64), T::c(y as f64))?;
                let out = render_pixel_batches(volume, params, &ray, cfg, &mut rng, &mut cache)?;
                row.push([
                    out.fine.rgb[0].to_f32_lossy(),
                    out.fine.rgb[1].to_f32_lossy(),
                    out.fine.rgb[2].to_f32_lossy(),
                ]);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut img = Image::new(w, h);
    for (y, row) in rows.into_iter().enumerate() {
        for (x, px) in row.into_iter().enumerate() {
            img.set_pixel(x, y, px);
        }
    }
    Ok(img)
}
