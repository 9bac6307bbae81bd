//! Training: joint optimization of the shared renderer and per-scene feature
//! volumes by photometric loss plus total-variation regularization, a
//! multi-resolution schedule that doubles volume dimensions between stages,
//! round-robin multi-scene cycling, frozen-renderer novel-scene fitting, and
//! held-out evaluation.
//!
//! Every step is bit-reproducible: ray draws and per-ray rng streams derive
//! from `(seed, iteration)`, parallel workers produce chunk-local gradient
//! buffers that reduce in fixed chunk order, and optimizer updates walk
//! touched cells in sorted order.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::Ray;
use crate::composite::{composite, composite_backward, SampleBatch};
use crate::error::{Error, Result};
use crate::math::derive_seed;
use crate::metrics::{psnr, ssim};
use crate::net::{pos_encode, DirEncoding, ForwardCache, NetDescriptor, NetGrads, RenderParams, WhichNet};
use crate::render::{render_image, RenderConfig};
use crate::sampling::{importance_samples, stratified_samples};
use crate::scalar::Scalar;
use crate::scene::SceneDataset;
use crate::volume::{FeatureVolume, VolumeGrad};

/// Rays per parallel work item; fixed so reductions are schedule-independent.
const CHUNK_RAYS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub resolution: usize,
    pub steps: u64,
}

/// Hyperparameters for training runs. Serializable so checkpoints can echo
/// the exact configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rays_per_batch: usize,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub lambda_tv: f64,
    pub lr_net: f64,
    pub lr_volume: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Volume resolutions with per-stage step budgets; strictly doubling.
    pub schedule: Vec<StageConfig>,
    /// Consecutive iterations on one scene before cycling.
    pub scene_block: u64,
    pub seed: u64,
    pub init_scale: f64,
    pub net: NetDescriptor,
    pub background: [f64; 3],
    pub jitter: bool,
    /// Std of Gaussian noise added to the density pre-activation during
    /// training forwards; off by default (softplus keeps gradients alive
    /// without it).
    #[serde(default)]
    pub sigma_noise_std: f64,
}

impl TrainConfig {
    /// Full-scale defaults.
    pub fn full() -> Self {
        Self {
            rays_per_batch: 1024,
            n_coarse: 64,
            n_fine: 64,
            lambda_tv: 1e-4,
            lr_net: 5e-4,
            lr_volume: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            schedule: [16, 32, 64, 128]
                .iter()
                .map(|&r| StageConfig {
                    resolution: r,
                    steps: 2000,
                })
                .collect(),
            scene_block: 50,
            seed: 0,
            init_scale: 0.01,
            net: NetDescriptor::full(64),
            background: [0.0; 3],
            jitter: true,
            sigma_noise_std: 0.0,
        }
    }

    /// Desk-scale defaults: 16^3 -> 32^3 volumes, the small renderer preset,
    /// and batch sizes that train a synthetic scene on CPU in minutes.
    pub fn desk() -> Self {
        Self {
            rays_per_batch: 256,
            n_coarse: 32,
            n_fine: 32,
            lambda_tv: 1e-4,
            lr_net: 5e-4,
            lr_volume: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            schedule: vec![
                StageConfig {
                    resolution: 16,
                    steps: 600,
                },
                StageConfig {
                    resolution: 32,
                    steps: 900,
                },
            ],
            scene_block: 50,
            seed: 0,
            init_scale: 0.01,
            net: NetDescriptor::desk(16),
            background: [0.0; 3],
            jitter: true,
            sigma_noise_std: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rays_per_batch == 0 || self.n_coarse == 0 {
            return Err(Error::invalid("batch and coarse sample counts must be positive"));
        }
        if self.lr_net <= 0.0 || self.lr_volume <= 0.0 {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.lambda_tv < 0.0 {
            return Err(Error::invalid("lambda_tv must be >= 0"));
        }
        if self.sigma_noise_std < 0.0 || !self.sigma_noise_std.is_finite() {
            return Err(Error::invalid("sigma_noise_std must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if self.schedule.is_empty() {
            return Err(Error::invalid("schedule needs at least one stage"));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].resolution != pair[0].resolution * 2 {
                return Err(Error::invalid(
                    "schedule resolutions must double at every stage",
                ));
            }
        }
        if self.schedule.iter().any(|s| s.resolution < 2 || s.steps == 0) {
            return Err(Error::invalid("stages need resolution >= 2 and steps > 0"));
        }
        self.net.validate()
    }

    pub fn render_config<T: Scalar>(&self) -> RenderConfig<T> {
        RenderConfig {
            n_coarse: self.n_coarse,
            n_fine: self.n_fine,
            background: [
                T::c(self.background[0]),
                T::c(self.background[1]),
                T::c(self.background[2]),
            ],
            jitter: self.jitter,
        }
    }
}

/// Adam state for the renderer: moment buffers mirroring every tensor.
#[derive(Debug, Clone)]
pub struct NetOptimizer<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> NetOptimizer<T> {
    pub fn new(params: &RenderParams<T>) -> Self {
        let mut m = Vec::new();
        params.visit(|t| m.push(vec![T::zero(); t.len()]));
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut RenderParams<T>, grads: &NetGrads<T>, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let lr = T::c(cfg.lr_net);
        let eps = T::c(cfg.eps_adam);
        let bc1 = T::one() - T::c(cfg.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::c(cfg.beta2.powi(self.step as i32));
        let g_tensors = grads.flat_tensors();
        let mut ti = 0;
        params.visit_mut(|t| {
            let g = g_tensors[ti];
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            for i in 0..t.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                t[i] = t[i] - lr * mhat / (vhat.sqrt() + eps);
            }
            ti += 1;
        });
    }
}

/// Adam state for one feature volume; moments update lazily on touched
/// cells only, with bias correction from the shared step counter.
#[derive(Debug, Clone)]
pub struct VolumeOptimizer<T> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
}

impl<T: Scalar> VolumeOptimizer<T> {
    pub fn new(volume: &FeatureVolume<T>) -> Self {
        let n = volume.data().len();
        Self {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            step: 0,
        }
    }

    pub fn step(
        &mut self,
        volume: &mut FeatureVolume<T>,
        grad: &VolumeGrad<T>,
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let lr = T::c(cfg.lr_volume);
        let eps = T::c(cfg.eps_adam);
        let bc1 = T::one() - T::c(cfg.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::c(cfg.beta2.powi(self.step as i32));
        let f = volume.feat_len();
        for cell in grad.sorted_cells() {
            let g = grad.get(cell as usize).expect("sorted cell present");
            let base = cell as usize * f;
            let data = volume.data_mut();
            for (i, &gi) in g.iter().enumerate() {
                let idx = base + i;
                self.m[idx] = b1 * self.m[idx] + (T::one() - b1) * gi;
                self.v[idx] = b2 * self.v[idx] + (T::one() - b2) * gi * gi;
                let mhat = self.m[idx] / bc1;
                let vhat = self.v[idx] / bc2;
                data[idx] = data[idx] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// One resident scene: its volume, the volume's optimizer state, and the
/// dataset it trains against.
#[derive(Debug, Clone)]
pub struct SceneSlot<T> {
    pub id: String,
    pub volume: FeatureVolume<T>,
    pub opt: VolumeOptimizer<T>,
    pub dataset: SceneDataset<T>,
}

impl<T: Scalar> SceneSlot<T> {
    /// Builds a slot at the first schedule resolution, volume bounds taken
    /// from the dataset.
    pub fn new(dataset: SceneDataset<T>, cfg: &TrainConfig, slot_seed: u64) -> Result<Self> {
        dataset.validate()?;
        let res = cfg.schedule[0].resolution;
        let volume = FeatureVolume::new(
            [res, res, res],
            cfg.net.feat_len,
            dataset.aabb,
            T::c(cfg.init_scale),
            slot_seed,
        )?;
        let opt = VolumeOptimizer::new(&volume);
        Ok(Self {
            id: dataset.id.clone(),
            volume,
            opt,
            dataset,
        })
    }
}

/// Loss components of one step. `loss_tv` is the lambda-scaled value that
/// enters the total objective.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepMetrics {
    pub loss_r: f64,
    pub loss_tv: f64,
    pub psnr_running: f64,
}

struct RayWork<T> {
    ray: Ray<T>,
    target: [T; 3],
    seed: u64,
}

struct ChunkScratch<T> {
    coarse_caches: Vec<ForwardCache<T>>,
    fine_caches: Vec<ForwardCache<T>>,
    dfeat: Vec<T>,
}

impl<T: Scalar> ChunkScratch<T> {
    fn new(desc: &NetDescriptor, n_coarse: usize, n_fine_total: usize) -> Self {
        Self {
            coarse_caches: (0..n_coarse).map(|_| ForwardCache::new(desc)).collect(),
            fine_caches: (0..n_fine_total).map(|_| ForwardCache::new(desc)).collect(),
            dfeat: vec![T::zero(); desc.feat_len],
        }
    }
}

/// Forward pass over one ray's samples, retaining per-sample caches for the
/// backward pass. `sigma_noise_std > 0` perturbs each renderable sample's
/// density pre-activation from the ray's rng stream.
#[allow(clippy::too_many_arguments)]
fn forward_ray_cached<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    which: WhichNet,
    ray: &Ray<T>,
    ts: Vec<T>,
    enc: &DirEncoding<T>,
    caches: &mut [ForwardCache<T>],
    sigma_noise_std: T,
    rng: &mut StdRng,
) -> Result<SampleBatch<T>> {
    let mut batch = SampleBatch::new(ts, ray.t_far, volume.feat_len())?;
    for i in 0..batch.len() {
        let p = ray.at(batch.ts[i]);
        let flags = volume.sample_into(p, batch.feature_mut(i));
        let renderable = flags.inside && flags.occupied;
        batch.renderable[i] = renderable;
        if renderable {
            let noise = if sigma_noise_std > T::zero() {
                sigma_noise_std * T::c(crate::math::normal_sample(rng))
            } else {
                T::zero()
            };
            let rad =
                params.forward_noisy(which, batch.feature(i), enc, noise, &mut caches[i])?;
            batch.radiance[i] = rad;
        }
    }
    Ok(batch)
}

fn backward_ray<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    which: WhichNet,
    ray: &Ray<T>,
    batch: &SampleBatch<T>,
    caches: &mut [ForwardCache<T>],
    d_rgb: [T; 3],
    net_grads: &mut NetGrads<T>,
    vol_grad: &mut VolumeGrad<T>,
    dfeat: &mut [T],
) -> Result<()> {
    let per_sample = composite_backward(batch, d_rgb)?;
    for (i, (dc, dsigma)) in per_sample.into_iter().enumerate() {
        if !batch.renderable[i] {
            continue;
        }
        dfeat.fill(T::zero());
        params.backward(which, &mut caches[i], dc, dsigma, net_grads, dfeat)?;
        volume.sample_backward(ray.at(batch.ts[i]), dfeat, vol_grad);
    }
    Ok(())
}

/// Photometric loss over a ray batch with gradients for the renderer and the
/// volume: mean over rays of the summed squared coarse and fine errors.
/// Returns `(loss, per-channel fine mse, net grads, volume grad)`.
pub fn reconstruction_loss<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    rays: &[(Ray<T>, [T; 3])],
    cfg: &RenderConfig<T>,
    batch_seed: u64,
) -> Result<(f64, f64, NetGrads<T>, VolumeGrad<T>)> {
    reconstruction_loss_noisy(volume, params, rays, cfg, batch_seed, T::zero())
}

/// [`reconstruction_loss`] with training-time density noise.
pub fn reconstruction_loss_noisy<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    rays: &[(Ray<T>, [T; 3])],
    cfg: &RenderConfig<T>,
    batch_seed: u64,
    sigma_noise_std: T,
) -> Result<(f64, f64, NetGrads<T>, VolumeGrad<T>)> {
    if rays.is_empty() {
        return Err(Error::invalid("reconstruction loss needs a nonempty batch"));
    }
    let work: Vec<RayWork<T>> = rays
        .iter()
        .enumerate()
        .map(|(i, (ray, target))| RayWork {
            ray: *ray,
            target: *target,
            seed: derive_seed(batch_seed, i as u64),
        })
        .collect();
    let n = work.len();
    let inv_n = T::c(1.0 / n as f64);
    let two = T::c(2.0);
    let desc = params.descriptor();

    let chunk_results: Vec<Result<(f64, f64, NetGrads<T>, VolumeGrad<T>)>> = work
        .par_chunks(CHUNK_RAYS)
        .map(|chunk| {
            let mut scratch =
                ChunkScratch::new(desc, cfg.n_coarse, cfg.n_coarse + cfg.n_fine);
            let mut net_grads = NetGrads::zeros_like(params);
            let mut vol_grad = VolumeGrad::for_volume(volume);
            let mut loss_sum = 0.0f64;
            let mut mse_fine_sum = 0.0f64;
            for item in chunk {
                let mut rng = StdRng::seed_from_u64(item.seed);
                let enc = pos_encode(item.ray.dir, desc.enc_levels)?;
                let ts_c = stratified_samples(
                    item.ray.t_near,
                    item.ray.t_far,
                    cfg.n_coarse,
                    &mut rng,
                    cfg.jitter,
                );
                let mut batch_c = forward_ray_cached(
                    volume,
                    params,
                    WhichNet::Coarse,
                    &item.ray,
                    ts_c,
                    &enc,
                    &mut scratch.coarse_caches,
                    sigma_noise_std,
                    &mut rng,
                )?;
                let est_c = composite(&mut batch_c, cfg.background)?;
                let ts_f =
                    importance_samples(&batch_c.ts, &batch_c.weights, cfg.n_fine, &mut rng)?;
                let mut batch_f = forward_ray_cached(
                    volume,
                    params,
                    WhichNet::Fine,
                    &item.ray,
                    ts_f,
                    &enc,
                    &mut scratch.fine_caches,
                    sigma_noise_std,
                    &mut rng,
                )?;
                let est_f = composite(&mut batch_f, cfg.background)?;

                let mut d_c = [T::zero(); 3];
                let mut d_f = [T::zero(); 3];
                let mut ray_loss = 0.0f64;
                let mut ray_fine = 0.0f64;
                for ch in 0..3 {
                    let ec = est_c.rgb[ch] - item.target[ch];
                    let ef = est_f.rgb[ch] - item.target[ch];
                    ray_loss += (ec * ec + ef * ef).to_f64_lossy();
                    ray_fine += (ef * ef).to_f64_lossy();
                    d_c[ch] = two * ec * inv_n;
                    d_f[ch] = two * ef * inv_n;
                }
                loss_sum += ray_loss;
                mse_fine_sum += ray_fine;

                backward_ray(
                    volume,
                    params,
                    WhichNet::Coarse,
                    &item.ray,
                    &batch_c,
                    &mut scratch.coarse_caches,
                    d_c,
                    &mut net_grads,
                    &mut vol_grad,
                    &mut scratch.dfeat,
                )?;
                backward_ray(
                    volume,
                    params,
                    WhichNet::Fine,
                    &item.ray,
                    &batch_f,
                    &mut scratch.fine_caches,
                    d_f,
                    &mut net_grads,
                    &mut vol_grad,
                    &mut scratch.dfeat,
                )?;
            }
            Ok((loss_sum, mse_fine_sum, net_grads, vol_grad))
        })
        .collect();

    // fixed-order reduction keeps sums independent of the thread schedule
    let mut loss = 0.0f64;
    let mut mse_fine = 0.0f64;
    let mut net_grads = NetGrads::zeros_like(params);
    let mut vol_grad = VolumeGrad::for_volume(volume);
    for res in chunk_results {
        let (l, m, ng, vg) = res?;
        loss += l;
        mse_fine += m;
        net_grads.coarse.merge(&ng.coarse);
        net_grads.fine.merge(&ng.fine);
        vol_grad.merge(vg);
    }
    Ok((loss / n as f64, mse_fine / (3.0 * n as f64), net_grads, vol_grad))
}

/// Forward-only loss evaluation over the same ray batch; the independent
/// oracle for gradient and bookkeeping checks.
pub fn reconstruction_loss_value<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    rays: &[(Ray<T>, [T; 3])],
    cfg: &RenderConfig<T>,
    batch_seed: u64,
) -> Result<f64> {
    let mut total = 0.0f64;
    let mut cache = ForwardCache::new(params.descriptor());
    for (i, (ray, target)) in rays.iter().enumerate() {
        let mut rng = StdRng::seed_from_u64(derive_seed(batch_seed, i as u64));
        let out = crate::render::render_pixel_batches(volume, params, ray, cfg, &mut rng, &mut cache)?;
        for ch in 0..3 {
            let ec = (out.coarse.rgb[ch] - target[ch]).to_f64_lossy();
            let ef = (out.fine.rgb[ch] - target[ch]).to_f64_lossy();
            total += ec * ec + ef * ef;
        }
    }
    Ok(total / rays.len() as f64)
}

/// Draws a training ray batch uniformly over all pixels of all training
/// images of the scene.
pub fn draw_ray_batch<T: Scalar>(
    dataset: &SceneDataset<T>,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(Ray<T>, [T; 3])>> {
    if dataset.train_idx.is_empty() {
        return Err(Error::invalid("dataset has no training views"));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let vi = dataset.train_idx[rng.random_range(0..dataset.train_idx.len())];
        let cam = &dataset.cameras[vi];
        let px = rng.random_range(0..cam.width);
        let py = rng.random_range(0..cam.height);
        let ray = cam.generate_ray(T::c(px as f64), T::c(py as f64))?;
        let rgb = dataset.images[vi].pixel(px as usize, py as usize);
        out.push((
            ray,
            [T::from_f32c(rgb[0]), T::from_f32c(rgb[1]), T::from_f32c(rgb[2])],
        ));
    }
    Ok(out)
}

/// One optimizer step on a scene slot: photometric gradients, one TV region
/// draw, Adam updates. Renderer parameters update only when `update_net`.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    slot: &mut SceneSlot<T>,
    params: &mut RenderParams<T>,
    net_opt: &mut NetOptimizer<T>,
    cfg: &TrainConfig,
    iteration: u64,
    update_net: bool,
) -> Result<StepMetrics> {
    let step_seed = derive_seed(cfg.seed, iteration);
    let mut rng = StdRng::seed_from_u64(step_seed);
    let rays = draw_ray_batch(&slot.dataset, cfg.rays_per_batch, &mut rng)?;
    let render_cfg = cfg.render_config::<T>();
    let (loss_r, mse_fine, net_grads, mut vol_grad) = reconstruction_loss_noisy(
        &slot.volume,
        params,
        &rays,
        &render_cfg,
        derive_seed(step_seed, 1),
        T::c(cfg.sigma_noise_std),
    )?;

    let mut loss_tv = 0.0f64;
    if cfg.lambda_tv > 0.0 {
        let region = slot.volume.tv_region_sample(&mut rng);
        let raw = slot
            .volume
            .tv_loss(&region, T::c(cfg.lambda_tv), &mut vol_grad)
            .to_f64_lossy();
        loss_tv = cfg.lambda_tv * raw;
    }

    if !(loss_r + loss_tv).is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            scene: slot.id.clone(),
            loss_r,
            loss_tv,
        });
    }

    if update_net {
        net_opt.step(params, &net_grads, cfg);
    }
    slot.opt.step(&mut slot.volume, &vol_grad, cfg);

    let mse = mse_fine.max(1e-10);
    Ok(StepMetrics {
        loss_r,
        loss_tv,
        psnr_running: (10.0 * (1.0 / mse).log10()).min(99.0),
    })
}

/// CSV training log: `iter,scene,stage,loss_r,loss_tv,psnr_running`.
pub struct TrainLogger {
    writer: Option<BufWriter<File>>,
}

impl TrainLogger {
    pub fn to_file(path: &Path) -> Result<Self> {
        let mut writer = BufWriter::new(File::create(path)?);
        writeln!(writer, "iter,scene,stage,loss_r,loss_tv,psnr_running")?;
        Ok(Self {
            writer: Some(writer),
        })
    }

    pub fn disabled() -> Self {
        Self { writer: None }
    }

    fn log(&mut self, iter: u64, scene: &str, stage: usize, m: &StepMetrics) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            writeln!(
                w,
                "{iter},{scene},{stage},{:.6e},{:.6e},{:.3}",
                m.loss_r, m.loss_tv, m.psnr_running
            )?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

/// Checkpoint bookkeeping written alongside the weight files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointState {
    pub stage: usize,
    pub iteration: u64,
    pub seed: u64,
    pub config: TrainConfig,
}

/// Writes `net.cnrfnet`, one `scene_<id>.cnrfvol` per slot (stamped with the
/// renderer hash), and `state.json`.
pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    params: &RenderParams<T>,
    slots: &mut [SceneSlot<T>],
    state: &CheckpointState,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    params.save(&dir.join("net.cnrfnet"))?;
    let hash = params.content_hash();
    for slot in slots.iter_mut() {
        slot.volume.set_renderer_hash(hash);
        slot.volume.save(&dir.join(format!("scene_{}.cnrfvol", slot.id)))?;
    }
    fs::write(
        dir.join("state.json"),
        serde_json::to_string_pretty(state).expect("serializable state"),
    )?;
    Ok(())
}

/// Hooks for long runs: checkpoint directory and CSV logging.
pub struct TrainHooks<'a> {
    pub checkpoint_dir: Option<&'a Path>,
    pub logger: &'a mut TrainLogger,
    /// Called after every step with (global iteration, scene id, metrics).
    pub progress: Option<&'a mut dyn FnMut(u64, &str, &StepMetrics)>,
}

impl<'a> TrainHooks<'a> {
    pub fn none(logger: &'a mut TrainLogger) -> Self {
        Self {
            checkpoint_dir: None,
            logger,
            progress: None,
        }
    }
}

fn train_loop<T: Scalar>(
    slots: &mut [SceneSlot<T>],
    params: &mut RenderParams<T>,
    cfg: &TrainConfig,
    update_net: bool,
    hooks: &mut TrainHooks<'_>,
) -> Result<u64> {
    cfg.validate()?;
    if slots.is_empty() {
        return Err(Error::invalid("training needs at least one scene slot"));
    }
    for slot in slots.iter() {
        if slot.volume.feat_len() != cfg.net.feat_len {
            return Err(Error::invalid("volume feature length must match the net"));
        }
    }
    let mut net_opt = NetOptimizer::new(params);
    let mut scene_rng = StdRng::seed_from_u64(derive_seed(cfg.seed, 0xb10c));
    let mut global_iter: u64 = 0;

    for (stage_idx, stage) in cfg.schedule.iter().enumerate() {
        for slot in slots.iter() {
            let dims = slot.volume.dims();
            if dims != [stage.resolution; 3] {
                return Err(Error::invalid(format!(
                    "scene `{}` volume dims {dims:?} do not match stage resolution {}",
                    slot.id, stage.resolution
                )));
            }
        }
        let mut remaining = stage.steps;
        while remaining > 0 {
            let scene_i = if slots.len() > 1 {
                scene_rng.random_range(0..slots.len())
            } else {
                0
            };
            let block = remaining.min(cfg.scene_block);
            for _ in 0..block {
                let metrics = train_step(
                    &mut slots[scene_i],
                    params,
                    &mut net_opt,
                    cfg,
                    global_iter,
                    update_net,
                )?;
                global_iter += 1;
                let id = slots[scene_i].id.clone();
                hooks.logger.log(global_iter, &id, stage_idx, &metrics)?;
                if let Some(progress) = hooks.progress.as_mut() {
                    progress(global_iter, &id, &metrics);
                }
            }
            remaining -= block;
        }
        // checkpoint before the stage transition
        if let Some(dir) = hooks.checkpoint_dir {
            let state = CheckpointState {
                stage: stage_idx,
                iteration: global_iter,
                seed: cfg.seed,
                config: cfg.clone(),
            };
            save_checkpoint(dir, params, slots, &state)?;
        }
        if stage_idx + 1 < cfg.schedule.len() {
            for slot in slots.iter_mut() {
                slot.volume = slot.volume.upsample_2x();
                // moment shapes change with the grid; reset rather than
                // transporting them through the interpolation
                slot.opt = VolumeOptimizer::new(&slot.volume);
            }
        }
    }
    hooks.logger.flush()?;
    Ok(global_iter)
}

/// Joint multi-scene training: cycles scenes uniformly at random with
/// `scene_block` consecutive steps per visit, doubling every volume between
/// schedule stages. Renderer parameters and their optimizer state persist
/// across stages.
pub fn train_multi_scene<T: Scalar>(
    slots: &mut [SceneSlot<T>],
    params: &mut RenderParams<T>,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<u64> {
    train_loop(slots, params, cfg, true, hooks)
}

/// Fits a volume for a novel scene against frozen renderer weights. The
/// returned volume is stamped with the renderer hash; the caller's
/// parameters are untouched (verified by content hash).
pub fn optimize_novel_scene<T: Scalar>(
    dataset: SceneDataset<T>,
    params: &RenderParams<T>,
    cfg: &TrainConfig,
    hooks: &mut TrainHooks<'_>,
) -> Result<FeatureVolume<T>> {
    let hash_before = params.content_hash();
    let mut local = params.clone();
    let slot_seed = derive_seed(cfg.seed, 0x510f);
    let mut slots = vec![SceneSlot::new(dataset, cfg, slot_seed)?];
    train_loop(&mut slots, &mut local, cfg, false, hooks)?;
    if local.content_hash() != hash_before {
        return Err(Error::invalid(
            "internal invariant violation: frozen renderer weights changed",
        ));
    }
    let mut volume = slots.into_iter().next().expect("one slot").volume;
    volume.set_renderer_hash(hash_before);
    Ok(volume)
}

/// Per-view and mean PSNR/SSIM over selected views.
#[derive(Debug, Clone, Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders the listed views and scores them against the dataset images.
pub fn evaluate<T: Scalar>(
    volume: &FeatureVolume<T>,
    params: &RenderParams<T>,
    dataset: &SceneDataset<T>,
    views: &[usize],
    render_cfg: &RenderConfig<T>,
    seed: u64,
) -> Result<EvalReport> {
    if views.is_empty() {
        return Err(Error::invalid("evaluate needs at least one view"));
    }
    let mut out = Vec::with_capacity(views.len());
    for &vi in views {
        if vi >= dataset.len() {
            return Err(Error::invalid(format!("view {vi} out of range")));
        }
        let img = render_image(
            volume,
            params,
            &dataset.cameras[vi],
            render_cfg,
            derive_seed(seed, vi as u64),
        )?;
        out.push(ViewMetrics {
            view: vi,
            psnr: psnr(&img, &dataset.images[vi])?,
            ssim: ssim(&img, &dataset.images[vi])?,
        });
    }
    let mean_psnr = out.iter().map(|v| v.psnr).sum::<f64>() / out.len() as f64;
    let mean_ssim = out.iter().map(|v| v.ssim).sum::<f64>() / out.len() as f64;
    Ok(EvalReport {
        views: out,
        mean_psnr,
        mean_ssim,
    })
}
