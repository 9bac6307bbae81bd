//! Acceptance suite: every criterion runs at its stated tolerance on a
//! 4-thread pool and prints one pass/fail line. Run with
//! `cargo test -p cnrf-core --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use cnrf_core::camera::Camera;
use cnrf_core::composite::{composite, RadianceSample, SampleBatch};
use cnrf_core::edit::{
    affine_coord_field, apply_edit_script, erase_region, extract_region, fuse_max_norm,
    parse_script, resample, CoordField,
};
use cnrf_core::image::Image;
use cnrf_core::math::{Aabb, Affine3, Vec3};
use cnrf_core::metrics::psnr;
use cnrf_core::net::{pos_encode, ForwardCache, NetDescriptor, NetGrads, RenderParams, WhichNet};
use cnrf_core::render::{render_image, RenderConfig};
use cnrf_core::sampling::{importance_samples, EPS_PDF};
use cnrf_core::scene::{demo_scene_spec, synthesize_scene, SceneDataset, SyntheticSceneSpec};
use cnrf_core::train::{
    evaluate, optimize_novel_scene, train_multi_scene, EvalReport, SceneSlot, StageConfig,
    TrainConfig, TrainHooks, TrainLogger,
};
use cnrf_core::volume::{FeatureVolume, VolumeGrad, VolumeRegion};
use cnrf_core::Ray;

type C = Result<String, String>;

fn check(cond: bool, detail: String) -> C {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit_bounds<T: cnrf_core::Scalar>() -> Aabb<T> {
    Aabb::new(
        Vec3::new(T::c(-1.0), T::c(-1.0), T::c(-1.0)),
        Vec3::new(T::c(1.0), T::c(1.0), T::c(1.0)),
    )
    .unwrap()
}

// ---------------------------------------------------------------------- 1

/// Trilinear sampling against an independent 8-corner weighted-sum oracle,
/// plus node exactness.
fn criterion_1_interpolation() -> C {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(101);
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for trial in 0..25 {
        let vol = FeatureVolume::<f64>::new([4, 4, 4], 3, unit_bounds(), 0.5, 9000 + trial).unwrap();
        let mut buf = vec![0.0; 3];
        for _ in 0..40 {
            let p = Vec3::new(
                rng.random_range(-0.99..0.49),
                rng.random_range(-0.99..0.49),
                rng.random_range(-0.99..0.49),
            );
            let flags = vol.sample_into(p, &mut buf);
            assert!(flags.inside);
            // independent oracle: explicit corner weights
            let g = vol.world_to_grid(p);
            let base = [
                (g.x.floor() as usize).min(2),
                (g.y.floor() as usize).min(2),
                (g.z.floor() as usize).min(2),
            ];
            let frac = [
                g.x - base[0] as f64,
                g.y - base[1] as f64,
                g.z - base[2] as f64,
            ];
            let mut want = vec![0.0; 3];
            for corner in 0..8usize {
                let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                let mut w = 1.0;
                for a in 0..3 {
                    w *= if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                let cell = vol.cell_index(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
                for (o, v) in want.iter_mut().zip(vol.feature(cell)) {
                    *o += w * v;
                }
            }
            for (a, b) in buf.iter().zip(&want) {
                max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-9));
            }
            checked += 1;
        }
        // node exactness on every lattice point
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..4 {
                    let p = vol.cell_center_world(i, j, k);
                    vol.sample_into(p, &mut buf);
                    let want = vol.feature(vol.cell_index(i, j, k));
                    for (a, b) in buf.iter().zip(want) {
                        max_rel = max_rel.max((a - b).abs() / b.abs().max(1e-9));
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        max_rel <= 1e-6 && checked == 1000 && elapsed < 5.0,
        format!("{checked} points, max rel err {max_rel:.2e}, {elapsed:.2} s (budget 5 s)"),
    )
}

// ---------------------------------------------------------------------- 2

fn rel_err(fd: f64, an: f64) -> f64 {
    let denom = fd.abs().max(an.abs());
    if denom < 1e-7 {
        0.0
    } else {
        (fd - an).abs() / denom
    }
}

fn criterion_2_gradients() -> C {
    let start = Instant::now();
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();

    // (a) sample_backward
    {
        let vol = FeatureVolume::<f64>::new([3, 3, 3], 2, unit_bounds(), 0.5, 201).unwrap();
        let p = Vec3::new(0.21, -0.33, 0.17);
        let upstream = [0.8, -1.1];
        let mut grad = VolumeGrad::for_volume(&vol);
        vol.sample_backward(p, &upstream, &mut grad);
        let h = 1e-4;
        let mut m = 0.0f64;
        let mut buf = vec![0.0; 2];
        for cell in 0..vol.cell_count() {
            for f in 0..2 {
                let mut hi = vol.clone();
                hi.feature_mut(cell)[f] += h;
                let mut lo = vol.clone();
                lo.feature_mut(cell)[f] -= h;
                hi.sample_into(p, &mut buf);
                let vh: f64 = buf.iter().zip(&upstream).map(|(a, b)| a * b).sum();
                lo.sample_into(p, &mut buf);
                let vl: f64 = buf.iter().zip(&upstream).map(|(a, b)| a * b).sum();
                m = m.max(rel_err((vh - vl) / (2.0 * h), grad.get(cell).map_or(0.0, |g| g[f])));
            }
        }
        worst.insert("sample_backward", m);
    }

    // (b) tv_loss
    {
        let vol = FeatureVolume::<f64>::new([3, 3, 3], 2, unit_bounds(), 0.5, 202).unwrap();
        let region = VolumeRegion {
            offset: [0, 0, 1],
            size: [3, 2, 2],
        };
        let mut grad = VolumeGrad::for_volume(&vol);
        vol.tv_loss(&region, 1.0, &mut grad);
        let h = 1e-6;
        let mut m = 0.0f64;
        for cell in 0..vol.cell_count() {
            for f in 0..2 {
                let mut hi = vol.clone();
                hi.feature_mut(cell)[f] += h;
                let mut lo = vol.clone();
                lo.feature_mut(cell)[f] -= h;
                let mut sink = VolumeGrad::for_volume(&vol);
                let fd = (hi.tv_loss(&region, 0.0, &mut sink)
                    - lo.tv_loss(&region, 0.0, &mut sink))
                    / (2.0 * h);
                m = m.max(rel_err(fd, grad.get(cell).map_or(0.0, |g| g[f])));
            }
        }
        worst.insert("tv_loss", m);
    }

    // (c) network backward on the tiny preset
    {
        let desc = NetDescriptor::tiny(4);
        let params = RenderParams::<f64>::init(desc, 203).unwrap();
        let mut rng = StdRng::seed_from_u64(204);
        let feature: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir = Vec3::new(0.48, -0.6, 0.64).normalized();
        let enc = pos_encode(dir, desc.enc_levels).unwrap();
        let up_c = [0.5, -0.25, 0.75];
        let up_s = 1.25;
        let loss = |p: &RenderParams<f64>, feat: &[f64]| -> f64 {
            let mut cache = ForwardCache::new(&desc);
            let out = p.forward(WhichNet::Fine, feat, &enc, &mut cache).unwrap();
            out.color.iter().zip(&up_c).map(|(c, u)| c * u).sum::<f64>() + out.sigma * up_s
        };
        let mut cache = ForwardCache::new(&desc);
        params
            .forward(WhichNet::Fine, &feature, &enc, &mut cache)
            .unwrap();
        let mut grads = NetGrads::zeros_like(&params);
        let mut dfeat = vec![0.0; 4];
        params
            .backward(WhichNet::Fine, &mut cache, up_c, up_s, &mut grads, &mut dfeat)
            .unwrap();
        let h = 1e-5;
        let mut m = 0.0f64;
        let n_tensors = grads.fine.tensors().len();
        for tensor in 0..n_tensors {
            for idx in 0..grads.fine.tensors()[tensor].len() {
                let mut hi = params.clone();
                let mut lo = params.clone();
                // fine tensors come after the coarse block in visit order
                let (mut ti_h, mut ti_l) = (0usize, 0usize);
                hi.visit_mut(|t| {
                    if ti_h == n_tensors + tensor {
                        t[idx] += h;
                    }
                    ti_h += 1;
                });
                lo.visit_mut(|t| {
                    if ti_l == n_tensors + tensor {
                        t[idx] -= h;
                    }
                    ti_l += 1;
                });
                let fd = (loss(&hi, &feature) - loss(&lo, &feature)) / (2.0 * h);
                m = m.max(rel_err(fd, grads.fine.tensors()[tensor][idx]));
            }
        }
        for idx in 0..4 {
            let mut hi = feature.clone();
            hi[idx] += h;
            let mut lo = feature.clone();
            lo[idx] -= h;
            let fd = (loss(&params, &hi) - loss(&params, &lo)) / (2.0 * h);
            m = m.max(rel_err(fd, dfeat[idx]));
        }
        worst.insert("net_backward", m);
    }

    // (d) composite_backward
    {
        let mut rng = StdRng::seed_from_u64(205);
        let mut m = 0.0f64;
        for _ in 0..4 {
            let mut ts: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..1.9)).collect();
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let build = |rad: &[RadianceSample<f64>]| {
                let mut b = SampleBatch::new(ts.clone(), 2.0, 1).unwrap();
                b.renderable = vec![true; 8];
                b.radiance = rad.to_vec();
                b
            };
            let rad: Vec<RadianceSample<f64>> = (0..8)
                .map(|_| RadianceSample {
                    color: [
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                    ],
                    sigma: rng.random_range(0.0..2.5),
                })
                .collect();
            let bg = [0.15, 0.25, 0.05];
            let upstream = [0.9, -0.4, 0.6];
            let mut batch = build(&rad);
            composite(&mut batch, bg).unwrap();
            let grads = cnrf_core::composite_backward(&batch, upstream).unwrap();
            let eval = |rad: &[RadianceSample<f64>]| -> f64 {
                let mut b = build(rad);
                let est = composite(&mut b, bg).unwrap();
                (0..3).map(|c| est.rgb[c] * upstream[c]).sum()
            };
            let h = 1e-6;
            for i in 0..8 {
                let mut hi = rad.clone();
                hi[i].sigma += h;
                let mut lo = rad.clone();
                lo[i].sigma -= h;
                m = m.max(rel_err((eval(&hi) - eval(&lo)) / (2.0 * h), grads[i].1));
                for ch in 0..3 {
                    let mut hi = rad.clone();
                    hi[i].color[ch] += h;
                    let mut lo = rad.clone();
                    lo[i].color[ch] -= h;
                    m = m.max(rel_err((eval(&hi) - eval(&lo)) / (2.0 * h), grads[i].0[ch]));
                }
            }
        }
        worst.insert("composite_backward", m);
    }

    // (e) full chain: one 8-sample ray through both passes, gradients with
    // respect to volume features and net parameters
    {
        let desc = NetDescriptor::tiny(4);
        let params = RenderParams::<f64>::init(desc, 206).unwrap();
        let vol = FeatureVolume::<f64>::new([3, 3, 3], 4, unit_bounds(), 0.4, 207).unwrap();
        let ray = Ray::new(
            Vec3::new(0.05, -0.1, 2.2),
            Vec3::new(-0.05f64, 0.02, -1.0).normalized(),
            1.0,
            3.4,
        )
        .unwrap();
        let target = [0.6f64, 0.2, 0.4];
        let cfg = RenderConfig {
            n_coarse: 8,
            n_fine: 0, // fixed sample positions keep the estimator FD-differentiable
            background: [0.1, 0.1, 0.1],
            jitter: true,
        };
        let seed = 208;
        let rays = vec![(ray, target)];
        let (_, _, net_grads, vol_grad) =
            cnrf_core::train::reconstruction_loss(&vol, &params, &rays, &cfg, seed).unwrap();
        let loss_of = |v: &FeatureVolume<f64>, p: &RenderParams<f64>| -> f64 {
            cnrf_core::train::reconstruction_loss_value(v, p, &rays, &cfg, seed).unwrap()
        };
        let h = 1e-5;
        let mut m = 0.0f64;
        for cell in 0..vol.cell_count() {
            for f in 0..4 {
                let mut hi = vol.clone();
                hi.feature_mut(cell)[f] += h;
                let mut lo = vol.clone();
                lo.feature_mut(cell)[f] -= h;
                let fd = (loss_of(&hi, &params) - loss_of(&lo, &params)) / (2.0 * h);
                m = m.max(rel_err(fd, vol_grad.get(cell).map_or(0.0, |g| g[f])));
            }
        }
        let flat = net_grads.flat_tensors();
        for (tensor, g) in flat.iter().enumerate() {
            for idx in 0..g.len() {
                let mut hi = params.clone();
                let mut lo = params.clone();
                let (mut ti_h, mut ti_l) = (0usize, 0usize);
                hi.visit_mut(|t| {
                    if ti_h == tensor {
                        t[idx] += h;
                    }
                    ti_h += 1;
                });
                lo.visit_mut(|t| {
                    if ti_l == tensor {
                        t[idx] -= h;
                    }
                    ti_l += 1;
                });
                let fd = (loss_of(&vol, &hi) - loss_of(&vol, &lo)) / (2.0 * h);
                m = m.max(rel_err(fd, g[idx]));
            }
        }
        worst.insert("full_chain", m);
    }

    let elapsed = start.elapsed().as_secs_f64();
    let max = worst.values().cloned().fold(0.0f64, f64::max);
    let detail = worst
        .iter()
        .map(|(k, v)| format!("{k} {v:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    check(
        max <= 1e-4 && elapsed < 120.0,
        format!("{detail}; {elapsed:.1} s (budget 120 s)"),
    )
}

// ---------------------------------------------------------------------- 3

fn criterion_3_quadrature() -> C {
    let start = Instant::now();
    let sigma = 1.7f64;
    let color = [0.6, 0.5, 0.4];
    let analytic = 1.0 - (-sigma).exp();
    let opacity_at = |n: usize| -> f64 {
        let ts: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let mut batch = SampleBatch::new(ts, 1.0, 1).unwrap();
        batch.renderable = vec![true; n];
        batch.radiance = (0..n).map(|_| RadianceSample { color, sigma }).collect();
        composite(&mut batch, [0.0; 3]).unwrap().alpha_total
    };
    let errs: Vec<f64> = [32usize, 64, 128, 256]
        .iter()
        .map(|&n| (opacity_at(n) - analytic).abs())
        .collect();
    let within_1pct = errs[3] / analytic <= 0.01;
    let decays = errs.windows(2).all(|w| w[1] <= 0.6 * w[0]);
    let elapsed = start.elapsed().as_secs_f64();
    check(
        within_1pct && decays && elapsed < 10.0,
        format!(
            "errors at n=32..256: [{:.2e}, {:.2e}, {:.2e}, {:.2e}], rel err at 256 {:.3}%, {elapsed:.2} s",
            errs[0], errs[1], errs[2], errs[3], 100.0 * errs[3] / analytic
        ),
    )
}

// ---------------------------------------------------------------------- 4

fn criterion_4_importance() -> C {
    let start = Instant::now();
    let m = 64usize;
    let ts: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
    let weights: Vec<f64> = (0..m).map(|i| ((i as f64 * 0.37).sin() + 1.2).max(0.0)).collect();
    let total: f64 = weights.iter().map(|w| w + EPS_PDF).sum();
    let probs: Vec<f64> = weights.iter().map(|w| (w + EPS_PDF) / total).collect();
    // bin edges as the sampler defines them
    let mut edges = Vec::with_capacity(m + 1);
    edges.push(ts[0]);
    for i in 1..m {
        edges.push((ts[i - 1] + ts[i]) * 0.5);
    }
    edges.push(ts[m - 1]);

    let n_draws = 100_000usize;
    let mut rng = StdRng::seed_from_u64(401);
    let merged = importance_samples(&ts, &weights, n_draws, &mut rng).unwrap();
    let mut counts = vec![0usize; m];
    let mut drawn = 0usize;
    'outer: for &t in &merged {
        if ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()).is_ok() {
            continue; // original coarse sample
        }
        for b in 0..m {
            if t >= edges[b] && t <= edges[b + 1] {
                counts[b] += 1;
                drawn += 1;
                continue 'outer;
            }
        }
        return Err(format!("draw {t} escaped every bin"));
    }
    let chi2: f64 = (0..m)
        .map(|b| {
            let expected = drawn as f64 * probs[b];
            let d = counts[b] as f64 - expected;
            d * d / expected
        })
        .sum();
    // Wilson-Hilferty 0.99 quantile for dof = m - 1
    let dof = (m - 1) as f64;
    let z = 2.326_347_874_040_841; // N(0,1) 0.99 quantile
    let crit = dof * (1.0 - 2.0 / (9.0 * dof) + z * (2.0 / (9.0 * dof)).sqrt()).powi(3);

    // degenerate single-hot-bin PDF
    let mut hot = vec![0.0f64; m];
    hot[41] = 1e4; // dwarfs the eps floor so every stratified draw lands inside
    let merged_hot = importance_samples(&ts, &hot, 1000, &mut rng).unwrap();
    let mut all_in = true;
    for &t in &merged_hot {
        if ts.binary_search_by(|x| x.partial_cmp(&t).unwrap()).is_ok() {
            continue;
        }
        all_in &= t >= edges[41] && t <= edges[42];
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        drawn == n_draws && chi2 < crit && all_in && elapsed < 10.0,
        format!(
            "chi^2 {chi2:.1} < {crit:.1} (dof {dof}), hot-bin containment {all_in}, {elapsed:.2} s"
        ),
    )
}

// ---------------------------------------------------------------------- 5 & 9

struct NvsOutcome {
    heldout: EvalReport,
    train_psnr: f64,
    baseline_psnr: f64,
    metrics_json: String,
    train_secs: f64,
    total_secs: f64,
    /// Pearson correlation between per-cell feature norm and decoded
    /// density on the trained volume; an empirical tendency of trained
    /// volumes that max-norm fusion exploits, reported as a diagnostic.
    norm_density_corr: f64,
}

fn desk_nvs_config() -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.rays_per_batch = 256;
    cfg.n_coarse = 32;
    cfg.n_fine = 32;
    // stage budgets pinned from the first full run: 600 + 350 steps reach
    // ~30 dB held-out on the demo scene while keeping the train/heldout gap
    // under 3 dB; longer stage-2 budgets overfit train pixels past the gap
    // invariant without helping held-out quality
    cfg.schedule = vec![
        StageConfig {
            resolution: 16,
            steps: 600,
        },
        StageConfig {
            resolution: 32,
            steps: 350,
        },
    ];
    cfg.seed = 5001;
    cfg
}

fn run_desk_nvs() -> NvsOutcome {
    let started = Instant::now();
    let mut spec = demo_scene_spec(64, 64, 25);
    spec.heldout_count = Some(5);
    let (ds, _) = synthesize_scene::<f32>(&spec, 500).unwrap();
    assert_eq!(ds.train_idx.len(), 20);
    assert_eq!(ds.heldout_idx.len(), 5);
    let cfg = desk_nvs_config();
    let mut slots = vec![SceneSlot::new(ds, &cfg, 501).unwrap()];
    let mut params = RenderParams::<f32>::init(cfg.net, 502).unwrap();
    let mut logger = TrainLogger::disabled();
    let mut hooks = TrainHooks::none(&mut logger);
    train_multi_scene(&mut slots, &mut params, &cfg, &mut hooks).unwrap();
    let train_secs = started.elapsed().as_secs_f64();

    let slot = &slots[0];
    let rc = cfg.render_config::<f32>();
    let heldout = evaluate(
        &slot.volume,
        &params,
        &slot.dataset,
        &slot.dataset.heldout_idx,
        &rc,
        600,
    )
    .unwrap();
    // train PSNR on a 5-view subset for the generalization-gap check
    let train_views: Vec<usize> = slot.dataset.train_idx.iter().copied().take(5).collect();
    let train_report = evaluate(&slot.volume, &params, &slot.dataset, &train_views, &rc, 601).unwrap();
    // constant-background baseline on the held-out views
    let bg_img = Image::from_fn(64, 64, |_, _| {
        [
            cfg.background[0] as f32,
            cfg.background[1] as f32,
            cfg.background[2] as f32,
        ]
    });
    let baseline_psnr = slot
        .dataset
        .heldout_idx
        .iter()
        .map(|&vi| psnr(&bg_img, &slot.dataset.images[vi]).unwrap())
        .sum::<f64>()
        / slot.dataset.heldout_idx.len() as f64;
    let metrics_json = serde_json::to_string_pretty(&heldout).unwrap();
    let norm_density_corr = norm_density_correlation(&slot.volume, &params);
    NvsOutcome {
        heldout,
        train_psnr: train_report.mean_psnr,
        baseline_psnr,
        metrics_json,
        train_secs,
        total_secs: started.elapsed().as_secs_f64(),
        norm_density_corr,
    }
}

fn norm_density_correlation(
    volume: &FeatureVolume<f32>,
    params: &RenderParams<f32>,
) -> f64 {
    let enc = pos_encode(Vec3::new(0.0f32, 0.0, 1.0), params.descriptor().enc_levels).unwrap();
    let mut cache = ForwardCache::new(params.descriptor());
    let mut norms = Vec::new();
    let mut sigmas = Vec::new();
    for cell in 0..volume.cell_count() {
        let feat = volume.feature(cell);
        let norm = feat.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let out = params
            .forward(WhichNet::Fine, feat, &enc, &mut cache)
            .unwrap();
        norms.push(norm);
        sigmas.push(out.sigma as f64);
    }
    let n = norms.len() as f64;
    let (mx, my) = (
        norms.iter().sum::<f64>() / n,
        sigmas.iter().sum::<f64>() / n,
    );
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in norms.iter().zip(&sigmas) {
        cov += (x - mx) * (y - my);
        vx += (x - mx).powi(2);
        vy += (y - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt()).max(1e-12)
}

fn criterion_5_end_to_end(outcome: &NvsOutcome) -> C {
    let held = outcome.heldout.mean_psnr;
    let invariant = held >= outcome.train_psnr - 3.0 && held >= outcome.baseline_psnr + 10.0;
    check(
        held >= 22.0 && outcome.total_secs < 900.0 && invariant,
        format!(
            "heldout {held:.2} dB (>= 22), train {:.2} dB, baseline {:.2} dB, \
             {:.0} s train / {:.0} s total (budget 900 s); \
             norm/density corr {:.2} (diagnostic)",
            outcome.train_psnr, outcome.baseline_psnr, outcome.train_secs,
            outcome.total_secs, outcome.norm_density_corr
        ),
    )
}

fn criterion_9_determinism(first: &NvsOutcome) -> C {
    let second = run_desk_nvs();
    check(
        first.metrics_json == second.metrics_json,
        format!(
            "metric JSON identical across two full runs: {} ({} bytes)",
            first.metrics_json == second.metrics_json,
            first.metrics_json.len()
        ),
    )
}

// ---------------------------------------------------------------------- 6

fn family_spec(variant: u64, size: u32, count: usize) -> SyntheticSceneSpec {
    let mut rng = StdRng::seed_from_u64(6000 + variant);
    let mut spec = demo_scene_spec(size, size, count);
    spec.id = format!("fam{variant}");
    for prim in &mut spec.primitives {
        for c in &mut prim.center {
            *c += rng.random_range(-0.12..0.12);
        }
        let mut albedo = [0.0; 3];
        for a in &mut albedo {
            *a = rng.random_range(0.1..0.95);
        }
        prim.albedo = albedo;
        prim.density *= rng.random_range(0.8..1.3);
    }
    spec.samples_per_ray = 256;
    spec
}

fn gen_config(schedule: Vec<StageConfig>, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk();
    cfg.rays_per_batch = 128;
    cfg.n_coarse = 24;
    cfg.n_fine = 24;
    cfg.schedule = schedule;
    cfg.seed = seed;
    cfg
}

fn two_stage(steps0: u64, steps1: u64) -> Vec<StageConfig> {
    vec![
        StageConfig {
            resolution: 16,
            steps: steps0,
        },
        StageConfig {
            resolution: 32,
            steps: steps1,
        },
    ]
}

fn criterion_6_generalization() -> C {
    let start = Instant::now();
    let datasets: Vec<SceneDataset<f32>> = (0..4)
        .map(|i| synthesize_scene::<f32>(&family_spec(i, 32, 10), 610 + i).unwrap().0)
        .collect();
    let rc = gen_config(two_stage(1, 1), 0).render_config::<f32>();

    // joint training on scenes 0..3
    let cfg3 = gen_config(two_stage(450, 600), 620);
    let mut slots3: Vec<SceneSlot<f32>> = datasets[..3]
        .iter()
        .enumerate()
        .map(|(i, ds)| SceneSlot::new(ds.clone(), &cfg3, 630 + i as u64).unwrap())
        .collect();
    let mut params3 = RenderParams::<f32>::init(cfg3.net, 640).unwrap();
    let mut logger = TrainLogger::disabled();
    let mut hooks = TrainHooks::none(&mut logger);
    train_multi_scene(&mut slots3, &mut params3, &cfg3, &mut hooks).unwrap();

    // novel 4th scene against frozen weights; per-scene budget comparable to
    // the joint runs
    let cfg_novel = gen_config(two_stage(160, 220), 650);
    let bytes_before = params3.to_bytes();
    let mut logger = TrainLogger::disabled();
    let mut hooks = TrainHooks::none(&mut logger);
    let novel_volume =
        optimize_novel_scene(datasets[3].clone(), &params3, &cfg_novel, &mut hooks).unwrap();
    let frozen_ok = params3.to_bytes() == bytes_before;
    let frozen_report = evaluate(
        &novel_volume,
        &params3,
        &datasets[3],
        &datasets[3].heldout_idx,
        &rc,
        660,
    )
    .unwrap();

    // joint-from-scratch over all four scenes with the same per-scene budget
    let cfg4 = gen_config(two_stage(600, 800), 670);
    let mut slots4: Vec<SceneSlot<f32>> = datasets
        .iter()
        .enumerate()
        .map(|(i, ds)| SceneSlot::new(ds.clone(), &cfg4, 680 + i as u64).unwrap())
        .collect();
    let mut params4 = RenderParams::<f32>::init(cfg4.net, 690).unwrap();
    let mut logger = TrainLogger::disabled();
    let mut hooks = TrainHooks::none(&mut logger);
    train_multi_scene(&mut slots4, &mut params4, &cfg4, &mut hooks).unwrap();
    let joint_report = evaluate(
        &slots4[3].volume,
        &params4,
        &datasets[3],
        &datasets[3].heldout_idx,
        &rc,
        660,
    )
    .unwrap();

    let gap = (frozen_report.mean_psnr - joint_report.mean_psnr).abs();
    let elapsed = start.elapsed().as_secs_f64();
    check(
        frozen_ok && gap <= 2.0,
        format!(
            "frozen params bit-identical: {frozen_ok}; frozen {:.2} dB vs joint {:.2} dB \
             (gap {gap:.2} <= 2), {elapsed:.0} s",
            frozen_report.mean_psnr, joint_report.mean_psnr
        ),
    )
}

// ---------------------------------------------------------------------- 7

fn criterion_7_ablation() -> C {
    let start = Instant::now();
    let (ds, _) = synthesize_scene::<f32>(&family_spec(7, 32, 12), 700).unwrap();
    let rc = gen_config(two_stage(1, 1), 0).render_config::<f32>();
    let run = |schedule: Vec<StageConfig>, lambda: f64| -> f64 {
        let mut cfg = gen_config(schedule, 710);
        cfg.lambda_tv = lambda;
        let mut slots = vec![SceneSlot::new(ds.clone(), &cfg, 720).unwrap()];
        let mut params = RenderParams::<f32>::init(cfg.net, 730).unwrap();
        let mut logger = TrainLogger::disabled();
        let mut hooks = TrainHooks::none(&mut logger);
        train_multi_scene(&mut slots, &mut params, &cfg, &mut hooks).unwrap();
        evaluate(
            &slots[0].volume,
            &params,
            &ds,
            &ds.heldout_idx,
            &rc,
            740,
        )
        .unwrap()
        .mean_psnr
    };
    let full = run(two_stage(450, 600), 1e-4);
    let single_res = run(
        vec![StageConfig {
            resolution: 32,
            steps: 1050,
        }],
        1e-4,
    );
    let tv_off = run(two_stage(450, 600), 0.0);
    let elapsed = start.elapsed().as_secs_f64();
    check(
        full >= single_res - 0.5 && full >= tv_off - 0.5,
        format!(
            "full {full:.2} dB vs single-res {single_res:.2} dB vs tv-off {tv_off:.2} dB \
             (non-inferiority 0.5 dB), {elapsed:.0} s"
        ),
    )
}

// ---------------------------------------------------------------------- 8

fn criterion_8_edit_algebra() -> C {
    let start = Instant::now();
    let mut notes = Vec::new();

    // identity resample bit-exact
    let vol = FeatureVolume::<f64>::new([6, 6, 6], 3, unit_bounds(), 0.5, 801).unwrap();
    let identity = resample(&vol, &CoordField::identity(vol.dims())).unwrap();
    let id_exact = identity.data() == vol.data();
    notes.push(format!("identity bit-exact {id_exact}"));

    // integer shift == array shift
    let pitch = vol.pitch().x;
    let m = Affine3::translation(Vec3::new(pitch, 0.0, 0.0));
    let shifted = resample(&vol, &affine_coord_field(&vol, None, &m).unwrap()).unwrap();
    let mut shift_ok = true;
    for k in 0..6 {
        for j in 0..6 {
            for i in 0..6 {
                let cell = vol.cell_index(i, j, k);
                if i >= 1 {
                    let src = vol.cell_index(i - 1, j, k);
                    for (a, b) in shifted.feature(cell).iter().zip(vol.feature(src)) {
                        shift_ok &= (a - b).abs() < 1e-9;
                    }
                } else {
                    shift_ok &= shifted.is_empty_cell(cell);
                }
            }
        }
    }
    notes.push(format!("integer shift {shift_ok}"));

    // fuse(V, V) = V
    let fuse_ok = fuse_max_norm(&vol, &vol).unwrap().data() == vol.data();
    notes.push(format!("fuse self {fuse_ok}"));

    // erase whole volume renders pure background
    let desc = NetDescriptor::tiny(3);
    let params = RenderParams::<f32>::init(desc, 802).unwrap();
    let vol32 = vol.cast::<f32>();
    let erased = erase_region(&vol32, vol32.bounds());
    let cam_template = Camera::<f32>::new(
        64.0,
        64.0,
        32.0,
        32.0,
        64,
        64,
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        Vec3::zero(),
        1.0,
        5.2,
    )
    .unwrap();
    let cam = cnrf_core::camera::orbit_cameras(1, 2.6, 0.3, Vec3::zero(), &cam_template)
        .unwrap()
        .remove(0);
    let rc = RenderConfig {
        n_coarse: 24,
        n_fine: 24,
        background: [0.2f32, 0.05, 0.1],
        jitter: true,
    };
    let erased_img = render_image(&erased, &params, &cam, &rc, 803).unwrap();
    let bg_exact = erased_img
        .data()
        .chunks(3)
        .all(|px| px == [0.2, 0.05, 0.1]);
    notes.push(format!("erase-whole renders background {bg_exact}"));

    // extract + paste round trip at a cell-aligned box
    let big = FeatureVolume::<f64>::new([8, 8, 8], 3, unit_bounds(), 0.5, 804).unwrap();
    let p8 = big.pitch();
    let min = big.bounds().min;
    let aabb = Aabb::new(
        min + Vec3::new(p8.x * 2.0, p8.y * 2.0, p8.z * 2.0),
        min + Vec3::new(p8.x * 6.0, p8.y * 6.0, p8.z * 6.0),
    )
    .unwrap();
    let frag = extract_region(&big, aabb).unwrap();
    let restored = cnrf_core::edit::paste(
        &erase_region(&big, aabb),
        &frag,
        &Affine3::identity(),
        cnrf_core::PasteMode::Overwrite,
    )
    .unwrap();
    let mut paste_err = 0.0f64;
    for cell in 0..big.cell_count() {
        for (a, b) in restored.feature(cell).iter().zip(big.feature(cell)) {
            paste_err = paste_err.max((a - b).abs());
        }
    }
    notes.push(format!("extract+paste max err {paste_err:.1e}"));

    // replicate-object script: pixel diff concentrates inside the projected
    // paste box
    let mut scene = FeatureVolume::<f32>::zeros([16, 16, 16], 3, unit_bounds()).unwrap();
    for cell in 0..scene.cell_count() {
        scene.set_empty_cell(cell, true);
    }
    let mut rng = StdRng::seed_from_u64(805);
    // the "object": an occupied box of cells in the lower-left region
    let obj_aabb = Aabb::new(
        Vec3::new(-0.8f32, -0.35, -0.35),
        Vec3::new(-0.15, 0.35, 0.35),
    )
    .unwrap();
    for k in 0..16 {
        for j in 0..16 {
            for i in 0..16 {
                let w = scene.cell_center_world(i, j, k);
                if obj_aabb.contains(w) {
                    let cell = scene.cell_index(i, j, k);
                    scene.set_empty_cell(cell, false);
                    let feat: Vec<f32> = (0..3).map(|_| rng.random_range(0.4..1.0)).collect();
                    scene.feature_mut(cell).copy_from_slice(&feat);
                }
            }
        }
    }
    let offset = Vec3::new(0.9f32, 0.0, 0.0);
    let script = parse_script(
        r#"{
        "ops": [
            {"op": "extract", "target": "obj", "source": "scene",
             "aabb": [[-0.8, -0.35, -0.35], [-0.15, 0.35, 0.35]]},
            {"op": "paste", "target": "scene", "source": "obj",
             "matrix": [1,0,0,0.9, 0,1,0,0, 0,0,1,0, 0,0,0,1],
             "mode": "overwrite"}
        ]
    }"#,
    )
    .unwrap();
    let mut registry = BTreeMap::new();
    registry.insert("scene".to_string(), scene.clone());
    apply_edit_script(&mut registry, &script).unwrap();
    let edited = registry.remove("scene").unwrap();

    let before = render_image(&scene, &params, &cam, &rc, 806).unwrap();
    let after = render_image(&edited, &params, &cam, &rc, 806).unwrap();
    // projected bounding box of the pasted region
    let paste_box = Aabb::new(obj_aabb.min + offset, obj_aabb.max + offset).unwrap();
    let (mut px_lo, mut px_hi) = ((f32::INFINITY, f32::INFINITY), (0.0f32, 0.0f32));
    for corner in paste_box.corners() {
        // project: camera space then pinhole
        let rel = corner - cam.pos;
        let r = cam.rotation();
        // world-to-camera: transpose of the c2w rotation
        let xc = r[0][0] * rel.x + r[1][0] * rel.y + r[2][0] * rel.z;
        let yc = r[0][1] * rel.x + r[1][1] * rel.y + r[2][1] * rel.z;
        let zc = r[0][2] * rel.x + r[1][2] * rel.y + r[2][2] * rel.z;
        let px = cam.fx * (xc / -zc) + cam.cx;
        let py = cam.fy * (-yc / -zc) + cam.cy;
        px_lo.0 = px_lo.0.min(px);
        px_lo.1 = px_lo.1.min(py);
        px_hi.0 = px_hi.0.max(px);
        px_hi.1 = px_hi.1.max(py);
    }
    let margin = 1.5f32;
    let mut inside_mass = 0.0f64;
    let mut total_mass = 0.0f64;
    for y in 0..64 {
        for x in 0..64 {
            let a = before.pixel(x, y);
            let b = after.pixel(x, y);
            let d: f64 = (0..3).map(|c| (a[c] - b[c]).abs() as f64).sum();
            total_mass += d;
            let (xf, yf) = (x as f32, y as f32);
            if xf >= px_lo.0 - margin
                && xf <= px_hi.0 + margin
                && yf >= px_lo.1 - margin
                && yf <= px_hi.1 + margin
            {
                inside_mass += d;
            }
        }
    }
    let concentration = inside_mass / total_mass.max(1e-12);
    notes.push(format!(
        "replicate-script diff concentration {:.1}%",
        concentration * 100.0
    ));

    let elapsed = start.elapsed().as_secs_f64();
    notes.push(format!("{elapsed:.1} s (budget 120 s)"));
    check(
        id_exact
            && shift_ok
            && fuse_ok
            && bg_exact
            && paste_err <= 1e-5
            && total_mass > 0.5
            && concentration > 0.9
            && elapsed < 120.0,
        notes.join("; "),
    )
}

// ---------------------------------------------------------------------- 10

fn criterion_10_serialization() -> C {
    let dir = tempfile::tempdir().unwrap();
    let mut notes = Vec::new();

    let mut vol = FeatureVolume::<f32>::new([5, 4, 3], 6, unit_bounds(), 0.4, 1001).unwrap();
    vol.set_renderer_hash(0x1234_5678_9abc_def0);
    vol.set_empty_cell(11, true);
    let vpath = dir.path().join("v.cnrfvol");
    vol.save(&vpath).unwrap();
    let vol_back = FeatureVolume::<f32>::load(&vpath).unwrap();
    let vol_ok = vol_back.data() == vol.data()
        && vol_back.renderer_hash() == vol.renderer_hash()
        && vol_back.is_empty_cell(11)
        && vol_back.bounds() == vol.bounds();
    notes.push(format!("volume round-trip {vol_ok}"));

    let params = RenderParams::<f32>::init(NetDescriptor::desk(16), 1002).unwrap();
    let npath = dir.path().join("n.cnrfnet");
    params.save(&npath).unwrap();
    let net_back = RenderParams::<f32>::load(&npath).unwrap();
    let net_ok = net_back.to_bytes() == params.to_bytes();
    notes.push(format!("net round-trip {net_ok}"));

    // documented error classes
    let verify = |bytes: &[u8], expect_field: &str| -> bool {
        match FeatureVolume::<f32>::from_bytes(bytes) {
            Err(cnrf_core::Error::Format { field, .. }) => field == expect_field,
            _ => false,
        }
    };
    let bytes = std::fs::read(&vpath).unwrap();
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'Q';
    let magic_ok = verify(&bad_magic, "magic");
    let trunc_ok = verify(&bytes[..bytes.len() - 7], "payload");
    let mut bad_dims = bytes.clone();
    bad_dims[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    let dims_ok = verify(&bad_dims, "dims");
    let net_trunc = match RenderParams::<f32>::from_bytes(&params.to_bytes()[..100]) {
        Err(cnrf_core::Error::Format { .. }) => true,
        _ => false,
    };
    notes.push(format!(
        "errors: magic {magic_ok}, truncation {trunc_ok}, dims {dims_ok}, net {net_trunc}"
    ));

    check(
        vol_ok && net_ok && magic_ok && trunc_ok && dims_ok && net_trunc,
        notes.join("; "),
    )
}

// --------------------------------------------------------------------------

#[test]
fn acceptance() {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .expect("4-thread pool");
    let results: Vec<(String, C)> = pool.install(|| {
        fn exec(name: &str, f: impl FnOnce() -> C) -> (String, C) {
            let outcome = catch_unwind(AssertUnwindSafe(f))
                .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
            (name.to_string(), outcome)
        }
        let mut results = Vec::new();
        results.push(exec("1 interpolation oracle", criterion_1_interpolation));
        results.push(exec("2 gradient suite", criterion_2_gradients));
        results.push(exec("3 quadrature vs analytic", criterion_3_quadrature));
        results.push(exec("4 importance sampling", criterion_4_importance));
        match catch_unwind(AssertUnwindSafe(run_desk_nvs)) {
            Ok(outcome) => {
                results.push(exec("5 end-to-end synthetic NVS", || {
                    criterion_5_end_to_end(&outcome)
                }));
                results.push(exec("9 determinism", || criterion_9_determinism(&outcome)));
            }
            Err(p) => {
                results.push((
                    "5 end-to-end synthetic NVS".into(),
                    Err(format!("training panicked: {p:?}")),
                ));
                results.push(("9 determinism".into(), Err("training panicked".into())));
            }
        }
        results.push(exec("6 generalization", criterion_6_generalization));
        results.push(exec("7 multi-resolution ablation", criterion_7_ablation));
        results.push(exec("8 edit algebra", criterion_8_edit_algebra));
        results.push(exec("10 serialization", criterion_10_serialization));
        results
    });

    let mut all_ok = true;
    let mut summary = String::new();
    for (name, outcome) in &results {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                all_ok = false;
                ("FAIL", d)
            }
        };
        let line = format!("[{tag}] criterion {name}: {detail}");
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
    }
    assert!(all_ok, "acceptance criteria failed:\n{summary}");
}
