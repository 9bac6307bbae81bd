//! Scene datasets: loading calibrated multi-view captures from disk,
//! generating synthetic scenes with closed-form radiance oracles, and
//! importing LLFF-style pose files.
//!
//! Synthetic primitives are piecewise-constant media (spheres and axis-
//! aligned boxes with fixed density and albedo), so per-ray transmittance
//! has a closed form; [`AnalyticOracle::exact_pixel`] evaluates it and acts
//! as the independent reference for the rendering quadrature.

use std::fs;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_cameras, Camera, Ray};
use crate::error::{Error, Result};
use crate::image::{read_png, read_ppm, write_png, Image};
use crate::math::{derive_seed, Aabb, Affine3, Vec3};
use crate::scalar::Scalar;

/// Calibrated images of one scene plus the world box its volume spans.
#[derive(Debug, Clone)]
pub struct SceneDataset<T> {
    pub id: String,
    pub images: Vec<Image>,
    pub cameras: Vec<Camera<T>>,
    pub aabb: Aabb<T>,
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
}

impl<T: Scalar> SceneDataset<T> {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::invalid("dataset needs at least one image"));
        }
        if self.images.len() != self.cameras.len() {
            return Err(Error::invalid("image and camera counts differ"));
        }
        let (w, h) = (self.images[0].width, self.images[0].height);
        for (i, img) in self.images.iter().enumerate() {
            if img.width != w || img.height != h {
                return Err(Error::invalid(format!(
                    "image {i} resolution {}x{} differs from {}x{}",
                    img.width, img.height, w, h
                )));
            }
        }
        for cam in &self.cameras {
            if cam.width as usize != w || cam.height as usize != h {
                return Err(Error::invalid("camera size does not match images"));
            }
        }
        let mut seen = vec![false; self.images.len()];
        for &i in self.train_idx.iter().chain(&self.heldout_idx) {
            if i >= seen.len() || seen[i] {
                return Err(Error::invalid("splits must be disjoint and in range"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::invalid("splits must cover every view"));
        }
        Ok(())
    }

    /// Deterministic seeded split with `heldout` views held out.
    pub fn split(&mut self, heldout: usize, seed: u64) -> Result<()> {
        let n = self.images.len();
        if heldout >= n {
            return Err(Error::invalid("cannot hold out every view"));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, 0x5117));
        idx.shuffle(&mut rng);
        let mut held: Vec<usize> = idx[..heldout].to_vec();
        let mut train: Vec<usize> = idx[heldout..].to_vec();
        held.sort_unstable();
        train.sort_unstable();
        self.heldout_idx = held;
        self.train_idx = train;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IntrinsicsJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    w: u32,
    h: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameJson {
    file: String,
    c2w: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TransformsJson {
    intrinsics: IntrinsicsJson,
    near: f64,
    far: f64,
    aabb: [[f64; 3]; 2],
    frames: Vec<FrameJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heldout: Option<Vec<usize>>,
}

/// Loads a dataset directory containing `transforms.json` and the images it
/// references. Held-out views come from the optional `heldout` list, else
/// every eighth view.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<SceneDataset<T>> {
    let meta_path = dir.join("transforms.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| {
        Error::format(
            "transforms.json",
            format!("{}: {e}", meta_path.display()),
        )
    })?;
    let meta: TransformsJson = serde_json::from_str(&text)
        .map_err(|e| Error::format("transforms.json", e.to_string()))?;
    if meta.frames.is_empty() {
        return Err(Error::format("frames", "dataset lists no frames"));
    }
    let intr = &meta.intrinsics;
    let mut images = Vec::with_capacity(meta.frames.len());
    let mut cameras = Vec::with_capacity(meta.frames.len());
    for frame in &meta.frames {
        let img_path = dir.join(&frame.file);
        let img = match img_path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => read_ppm(&img_path)?,
            _ => read_png(&img_path)?,
        };
        if frame.c2w.len() != 16 {
            return Err(Error::format("c2w", "expected 16 matrix entries"));
        }
        let vals: Vec<T> = frame.c2w.iter().map(|&v| T::c(v)).collect();
        let c2w = Affine3::from_rows(&vals)
            .map_err(|e| Error::format("c2w", e.to_string()))?;
        let cam = Camera::from_c2w(
            T::c(intr.fx),
            T::c(intr.fy),
            T::c(intr.cx),
            T::c(intr.cy),
            intr.w,
            intr.h,
            &c2w,
            T::c(meta.near),
            T::c(meta.far),
        )?;
        images.push(img);
        cameras.push(cam);
    }
    let aabb = Aabb::new(
        Vec3::new(
            T::c(meta.aabb[0][0]),
            T::c(meta.aabb[0][1]),
            T::c(meta.aabb[0][2]),
        ),
        Vec3::new(
            T::c(meta.aabb[1][0]),
            T::c(meta.aabb[1][1]),
            T::c(meta.aabb[1][2]),
        ),
    )?;
    let n = images.len();
    let heldout_idx: Vec<usize> = match meta.heldout {
        Some(list) => list,
        None => (0..n).step_by(8).collect(),
    };
    let train_idx: Vec<usize> = (0..n).filter(|i| !heldout_idx.contains(i)).collect();
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("scene")
        .to_string();
    let ds = SceneDataset {
        id,
        images,
        cameras,
        aabb,
        train_idx,
        heldout_idx,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `transforms.json` plus one PNG per frame.
pub fn write_dataset<T: Scalar>(ds: &SceneDataset<T>, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir)?;
    let cam0 = &ds.cameras[0];
    let mut frames = Vec::with_capacity(ds.len());
    for (i, (img, cam)) in ds.images.iter().zip(&ds.cameras).enumerate() {
        let file = format!("frame_{i:03}.png");
        write_png(img, &dir.join(&file))?;
        frames.push(FrameJson {
            file,
            c2w: cam.c2w().to_rows().iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }
    let meta = TransformsJson {
        intrinsics: IntrinsicsJson {
            fx: cam0.fx.to_f64_lossy(),
            fy: cam0.fy.to_f64_lossy(),
            cx: cam0.cx.to_f64_lossy(),
            cy: cam0.cy.to_f64_lossy(),
            w: cam0.width,
            h: cam0.height,
        },
        near: cam0.near.to_f64_lossy(),
        far: cam0.far.to_f64_lossy(),
        aabb: [
            ds.aabb.min.cast::<f64>().to_array(),
            ds.aabb.max.cast::<f64>().to_array(),
        ],
        frames,
        heldout: Some(ds.heldout_idx.clone()),
    };
    fs::write(
        dir.join("transforms.json"),
        serde_json::to_string_pretty(&meta).expect("serializable metadata"),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// synthetic scenes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere,
    Box,
}

/// Piecewise-constant medium: fixed density and albedo inside the shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub center: [f64; 3],
    /// Sphere: `size[0]` is the radius. Box: full edge lengths.
    pub size: [f64; 3],
    pub albedo: [f64; 3],
    pub density: f64,
}

impl Primitive {
    fn contains(&self, p: Vec3<f64>) -> bool {
        let c = Vec3::from_array(self.center);
        match self.kind {
            PrimitiveKind::Sphere => (p - c).norm() <= self.size[0],
            PrimitiveKind::Box => {
                (p.x - c.x).abs() <= self.size[0] * 0.5
                    && (p.y - c.y).abs() <= self.size[1] * 0.5
                    && (p.z - c.z).abs() <= self.size[2] * 0.5
            }
        }
    }

    fn world_bounds(&self) -> ([f64; 3], [f64; 3]) {
        let half = match self.kind {
            PrimitiveKind::Sphere => [self.size[0]; 3],
            PrimitiveKind::Box => [
                self.size[0] * 0.5,
                self.size[1] * 0.5,
                self.size[2] * 0.5,
            ],
        };
        (
            [
                self.center[0] - half[0],
                self.center[1] - half[1],
                self.center[2] - half[2],
            ],
            [
                self.center[0] + half[0],
                self.center[1] + half[1],
                self.center[2] + half[2],
            ],
        )
    }

    /// Ray parameter interval clipped to `[t0, t1]`, or None on a miss.
    fn ray_interval(&self, ray: &Ray<f64>, t0: f64, t1: f64) -> Option<(f64, f64)> {
        let c = Vec3::from_array(self.center);
        let (mut lo, mut hi) = match self.kind {
            PrimitiveKind::Sphere => {
                let oc = ray.origin - c;
                let b = oc.dot(ray.dir);
                let disc = b * b - (oc.dot(oc) - self.size[0] * self.size[0]);
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                (-b - s, -b + s)
            }
            PrimitiveKind::Box => {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for a in 0..3 {
                    let (o, d) = match a {
                        0 => (ray.origin.x - c.x, ray.dir.x),
                        1 => (ray.origin.y - c.y, ray.dir.y),
                        _ => (ray.origin.z - c.z, ray.dir.z),
                    };
                    let half = match a {
                        0 => self.size[0] * 0.5,
                        1 => self.size[1] * 0.5,
                        _ => self.size[2] * 0.5,
                    };
                    if d.abs() < 1e-12 {
                        if o.abs() > half {
                            return None;
                        }
                        continue;
                    }
                    let (mut a0, mut a1) = ((-half - o) / d, (half - o) / d);
                    if a0 > a1 {
                        std::mem::swap(&mut a0, &mut a1);
                    }
                    lo = lo.max(a0);
                    hi = hi.min(a1);
                }
                (lo, hi)
            }
        };
        lo = lo.max(t0);
        hi = hi.min(t1);
        if lo < hi {
            Some((lo, hi))
        } else {
            None
        }
    }
}

fn default_elevation() -> f64 {
    20.0
}

/// Circular camera rig looking at a point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    pub look_at: [f64; 3],
    pub width: u32,
    pub height: u32,
    #[serde(default = "default_elevation")]
    pub elevation_deg: f64,
    /// Alternate consecutive cameras between `elevation_deg +/- span/2`;
    /// zero keeps a single ring.
    #[serde(default)]
    pub elevation_span_deg: f64,
    /// Focal length in pixels; defaults to the image width.
    #[serde(default)]
    pub focal_px: Option<f64>,
}

fn default_samples() -> usize {
    512
}

fn default_id() -> String {
    "synthetic".to_string()
}

/// Declarative synthetic scene: primitives, background, and a camera rig.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub rig: CameraRig,
    /// World box for the scene volume; derived from the primitives plus a
    /// margin when absent.
    #[serde(default)]
    pub aabb: Option<[[f64; 3]; 2]>,
    #[serde(default)]
    pub heldout_count: Option<usize>,
    #[serde(default = "default_samples")]
    pub samples_per_ray: usize,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rig.count == 0 {
            return Err(Error::invalid("camera rig needs at least one camera"));
        }
        for p in &self.primitives {
            if p.density < 0.0 {
                return Err(Error::invalid("primitive density must be >= 0"));
            }
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::invalid("albedo channels must lie in [0,1]"));
            }
        }
        Ok(())
    }

    fn world_aabb(&self) -> [[f64; 3]; 2] {
        if let Some(aabb) = self.aabb {
            return aabb;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.primitives {
            let (plo, phi) = p.world_bounds();
            for a in 0..3 {
                lo[a] = lo[a].min(plo[a]);
                hi[a] = hi[a].max(phi[a]);
            }
        }
        if self.primitives.is_empty() {
            return [[-1.0; 3], [1.0; 3]];
        }
        // a margin of 15% of the largest extent, at least 0.1 world units
        let spread = (0..3).map(|a| hi[a] - lo[a]).fold(0.0f64, f64::max);
        let margin = (spread * 0.15).max(0.1);
        [
            [lo[0] - margin, lo[1] - margin, lo[2] - margin],
            [hi[0] + margin, hi[1] + margin, hi[2] + margin],
        ]
    }
}

/// Closed-form radiance field of a synthetic scene. Overlapping primitives
/// resolve by list order: the first primitive containing a point wins.
#[derive(Debug, Clone)]
pub struct AnalyticOracle {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
}

impl AnalyticOracle {
    /// Density and color at a point.
    pub fn sigma_c(&self, p: Vec3<f64>) -> (f64, [f64; 3]) {
        for prim in &self.primitives {
            if prim.contains(p) {
                return (prim.density, prim.albedo);
            }
        }
        (0.0, [0.0; 3])
    }

    /// Exact expected color along a ray: the medium is piecewise constant,
    /// so transmittance integrates in closed form segment by segment.
    pub fn exact_pixel(&self, ray: &Ray<f64>) -> [f64; 3] {
        let mut cuts = vec![ray.t_near, ray.t_far];
        for prim in &self.primitives {
            if let Some((a, b)) = prim.ray_interval(ray, ray.t_near, ray.t_far) {
                cuts.push(a);
                cuts.push(b);
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        let mut trans = 1.0;
        let mut rgb = [0.0f64; 3];
        for seg in cuts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            if b <= a {
                continue;
            }
            let mid = ray.at((a + b) * 0.5);
            let (sigma, color) = self.sigma_c(mid);
            let t_out = trans * (-sigma * (b - a)).exp();
            for c in 0..3 {
                rgb[c] += color[c] * (trans - t_out);
            }
            trans = t_out;
        }
        for c in 0..3 {
            rgb[c] += self.background[c] * trans;
        }
        rgb
    }

    /// Independent quadrature used to synthesize ground-truth images:
    /// stratified jittered samples, front-to-back alpha accumulation.
    pub fn march_pixel(&self, ray: &Ray<f64>, n: usize, rng: &mut impl Rng) -> [f64; 3] {
        let width = (ray.t_far - ray.t_near) / n as f64;
        let mut trans = 1.0;
        let mut rgb = [0.0f64; 3];
        let mut prev_t = ray.t_near + width * rng.random::<f64>();
        let mut prev = self.sigma_c(ray.at(prev_t));
        for i in 1..=n {
            let t = if i < n {
                ray.t_near + width * (i as f64 + rng.random::<f64>())
            } else {
                ray.t_far
            };
            let alpha = 1.0 - (-prev.0 * (t - prev_t)).exp();
            let w = trans * alpha;
            for c in 0..3 {
                rgb[c] += prev.1[c] * w;
            }
            trans *= 1.0 - alpha;
            if i < n {
                prev = self.sigma_c(ray.at(t));
                prev_t = t;
            }
        }
        for c in 0..3 {
            rgb[c] += self.background[c] * trans;
        }
        rgb
    }
}

/// Renders a synthetic dataset and returns it with its oracle. Deterministic
/// for a fixed seed.
pub fn synthesize_scene<T: Scalar>(
    spec: &SyntheticSceneSpec,
    seed: u64,
) -> Result<(SceneDataset<T>, AnalyticOracle)> {
    spec.validate()?;
    let oracle = AnalyticOracle {
        primitives: spec.primitives.clone(),
        background: spec.background,
    };
    let aabb64 = spec.world_aabb();
    let look_at = Vec3::from_array(spec.rig.look_at);
    let half_diag = {
        let e = [
            aabb64[1][0] - aabb64[0][0],
            aabb64[1][1] - aabb64[0][1],
            aabb64[1][2] - aabb64[0][2],
        ];
        0.5 * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
    };
    let near = (spec.rig.radius - 1.2 * half_diag).max(0.05);
    let far = spec.rig.radius + 1.2 * half_diag;
    let focal = spec.rig.focal_px.unwrap_or(spec.rig.width as f64);
    let template = Camera::<f64>::new(
        focal,
        focal,
        spec.rig.width as f64 * 0.5,
        spec.rig.height as f64 * 0.5,
        spec.rig.width,
        spec.rig.height,
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        Vec3::zero(),
        near,
        far,
    )?;
    let cameras64: Vec<Camera<f64>> = if spec.rig.elevation_span_deg == 0.0 {
        let elevation = spec.rig.elevation_deg.to_radians();
        orbit_cameras(spec.rig.count, spec.rig.radius, elevation, look_at, &template)?
    } else {
        let mut cams = Vec::with_capacity(spec.rig.count);
        for i in 0..spec.rig.count {
            let angle = std::f64::consts::TAU * i as f64 / spec.rig.count as f64;
            let half = spec.rig.elevation_span_deg * 0.5;
            let elev = (spec.rig.elevation_deg + if i % 2 == 0 { -half } else { half })
                .to_radians();
            let horiz = spec.rig.radius * elev.cos();
            let eye = look_at
                + Vec3::new(
                    horiz * angle.cos(),
                    spec.rig.radius * elev.sin(),
                    horiz * angle.sin(),
                );
            let rot = crate::camera::look_at_rotation(eye, look_at);
            cams.push(template.with_pose(rot, eye)?);
        }
        cams
    };

    let (w, h) = (spec.rig.width as usize, spec.rig.height as usize);
    let images: Vec<Image> = cameras64
        .par_iter()
        .enumerate()
        .map(|(ci, cam)| -> Result<Image> {
            let mut img = Image::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let idx = (ci * w * h + y * w + x) as u64;
                    let mut rng = StdRng::seed_from_u64(derive_seed(seed, idx));
                    let ray = cam.generate_ray(x as f64, y as f64)?;
                    let rgb = oracle.march_pixel(&ray, spec.samples_per_ray, &mut rng);
                    img.set_pixel(
                        x,
                        y,
                        [rgb[0] as f32, rgb[1] as f32, rgb[2] as f32],
                    );
                }
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;

    let cameras: Vec<Camera<T>> = cameras64
        .iter()
        .map(|c| {
            Camera::new(
                T::c(c.fx),
                T::c(c.fy),
                T::c(c.cx),
                T::c(c.cy),
                c.width,
                c.height,
                {
                    let r = c.rotation();
                    let mut out = [[T::zero(); 3]; 3];
                    for i in 0..3 {
                        for j in 0..3 {
                            out[i][j] = T::c(r[i][j]);
                        }
                    }
                    out
                },
                c.pos.cast(),
                T::c(c.near),
                T::c(c.far),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let aabb = Aabb::new(
        Vec3::new(
            T::c(aabb64[0][0]),
            T::c(aabb64[0][1]),
            T::c(aabb64[0][2]),
        ),
        Vec3::new(
            T::c(aabb64[1][0]),
            T::c(aabb64[1][1]),
            T::c(aabb64[1][2]),
        ),
    )?;
    let mut ds = SceneDataset {
        id: spec.id.clone(),
        images,
        cameras,
        aabb,
        train_idx: (0..spec.rig.count).collect(),
        heldout_idx: Vec::new(),
    };
    let heldout = spec
        .heldout_count
        .unwrap_or_else(|| (spec.rig.count / 5).max(1).min(spec.rig.count - 1));
    ds.split(heldout, seed)?;
    ds.validate()?;
    Ok((ds, oracle))
}

// ---------------------------------------------------------------------------
// LLFF pose import

/// Minimal reader for little-endian float64 2-D `.npy` arrays.
fn read_npy_2d(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path)?;
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::format("npy", "bad magic"));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = std::str::from_utf8(&bytes[10..10 + header_len])
        .map_err(|_| Error::format("npy", "bad header"))?;
    if !header.contains("'descr': '<f8'") {
        return Err(Error::format("npy", "expected little-endian float64"));
    }
    if header.contains("'fortran_order': True") {
        return Err(Error::format("npy", "fortran order unsupported"));
    }
    let shape_part = header
        .split("'shape':")
        .nth(1)
        .and_then(|s| s.split('(').nth(1))
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::format("npy", "missing shape"))?;
    let dims: Vec<usize> = shape_part
        .split(',')
        .filter_map(|t| t.trim().parse().ok())
        .collect();
    if dims.len() != 2 {
        return Err(Error::format("npy", "expected a 2-D array"));
    }
    let (rows, cols) = (dims[0], dims[1]);
    let data_off = 10 + header_len;
    let need = rows * cols * 8;
    if bytes.len() < data_off + need {
        return Err(Error::format("npy", "payload truncated"));
    }
    let data = bytes[data_off..data_off + need]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((rows, cols, data))
}

/// Imports an LLFF capture: `poses_bounds.npy` plus an `images/` directory
/// of PNG files in frame order. Pose columns convert from LLFF's
/// (down, right, back) to (right, up, back).
pub fn import_llff<T: Scalar>(dir: &Path) -> Result<SceneDataset<T>> {
    let (rows, cols, data) = read_npy_2d(&dir.join("poses_bounds.npy"))?;
    if cols != 17 {
        return Err(Error::format("poses_bounds", "expected 17 columns"));
    }
    let img_dir = dir.join("images");
    let mut files: Vec<_> = fs::read_dir(&img_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    files.sort();
    if files.len() != rows {
        return Err(Error::format(
            "images",
            format!("{} pose rows but {} images", rows, files.len()),
        ));
    }
    let mut images = Vec::with_capacity(rows);
    let mut cameras = Vec::with_capacity(rows);
    let mut world_lo = [f64::INFINITY; 3];
    let mut world_hi = [f64::NEG_INFINITY; 3];
    for (i, file) in files.iter().enumerate() {
        let row = &data[i * 17..(i + 1) * 17];
        // 3x5 row-major: [R | t | (h, w, f)^T], then near/far
        let m = |r: usize, c: usize| row[r * 5 + c];
        let (h, w, f) = (m(0, 4), m(1, 4), m(2, 4));
        let (near, far) = (row[15], row[16]);
        let mut rot = [[0.0f64; 3]; 3];
        for r in 0..3 {
            // columns: right = col1, up = -col0, back = col2
            rot[r][0] = m(r, 1);
            rot[r][1] = -m(r, 0);
            rot[r][2] = m(r, 2);
        }
        let pos = Vec3::new(m(0, 3), m(1, 3), m(2, 3));
        let img = match file.extension().and_then(|e| e.to_str()) {
            Some("ppm") => read_ppm(file)?,
            _ => read_png(file)?,
        };
        let (iw, ih) = (img.width as u32, img.height as u32);
        // rescale focal if the stored images differ from the pose resolution
        let scale = iw as f64 / w;
        let cam64 = Camera::<f64>::new(
            f * scale,
            f * scale,
            iw as f64 * 0.5,
            ih as f64 * 0.5,
            iw,
            ih,
            rot,
            pos,
            (near * 0.9).max(1e-3),
            far * 1.1,
        )?;
        let _ = h;
        // frustum corners bound the world box
        for &(px, py) in &[
            (0.0, 0.0),
            (iw as f64 - 1.0, 0.0),
            (0.0, ih as f64 - 1.0),
            (iw as f64 - 1.0, ih as f64 - 1.0),
            (iw as f64 * 0.5 - 0.5, ih as f64 * 0.5 - 0.5),
        ] {
            let ray = cam64.generate_ray(px, py)?;
            for t in [cam64.near, cam64.far] {
                let p = ray.at(t);
                for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                    world_lo[a] = world_lo[a].min(v);
                    world_hi[a] = world_hi[a].max(v);
                }
            }
        }
        let rt = {
            let mut out = [[T::zero(); 3]; 3];
            for r in 0..3 {
                for c in 0..3 {
                    out[r][c] = T::c(rot[r][c]);
                }
            }
            out
        };
        cameras.push(Camera::new(
            T::c(cam64.fx),
            T::c(cam64.fy),
            T::c(cam64.cx),
            T::c(cam64.cy),
            iw,
            ih,
            rt,
            pos.cast(),
            T::c(cam64.near),
            T::c(cam64.far),
        )?);
        images.push(img);
    }
    let aabb = Aabb::new(
        Vec3::new(T::c(world_lo[0]), T::c(world_lo[1]), T::c(world_lo[2])),
        Vec3::new(T::c(world_hi[0]), T::c(world_hi[1]), T::c(world_hi[2])),
    )?;
    let n = images.len();
    let heldout_idx: Vec<usize> = (0..n).step_by(8).collect();
    let train_idx: Vec<usize> = (0..n).filter(|i| !heldout_idx.contains(i)).collect();
    let id = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("llff")
        .to_string();
    let ds = SceneDataset {
        id,
        images,
        cameras,
        aabb,
        train_idx,
        heldout_idx,
    };
    ds.validate()?;
    Ok(ds)
}

/// Rig pointing outward from the scene used in tests and demo specs.
pub fn demo_scene_spec(width: u32, height: u32, count: usize) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        id: "demo".to_string(),
        primitives: vec![
            Primitive {
                kind: PrimitiveKind::Sphere,
                center: [-0.35, 0.0, 0.05],
                size: [0.45, 0.0, 0.0],
                albedo: [0.85, 0.15, 0.1],
                density: 28.0,
            },
            Primitive {
                kind: PrimitiveKind::Box,
                center: [0.4, 0.12, -0.1],
                size: [0.55, 0.5, 0.5],
                albedo: [0.1, 0.75, 0.2],
                density: 24.0,
            },
            Primitive {
                kind: PrimitiveKind::Sphere,
                center: [0.1, -0.38, 0.35],
                size: [0.3, 0.0, 0.0],
                albedo: [0.15, 0.25, 0.9],
                density: 32.0,
            },
        ],
        background: [0.0, 0.0, 0.0],
        rig: CameraRig {
            count,
            radius: 2.6,
            look_at: [0.0, 0.0, 0.0],
            width,
            height,
            elevation_deg: 18.0,
            elevation_span_deg: 0.0,
            focal_px: None,
        },
        aabb: Some([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]),
        heldout_count: None,
        samples_per_ray: 512,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composite::{composite, RadianceSample, SampleBatch};
    use crate::metrics::psnr;

    fn tiny_spec() -> SyntheticSceneSpec {
        let mut spec = demo_scene_spec(24, 24, 6);
        spec.samples_per_ray = 192;
        spec
    }

    #[test]
    fn empty_spec_renders_background() {
        let spec = SyntheticSceneSpec {
            id: "empty".into(),
            primitives: vec![],
            background: [0.3, 0.1, 0.6],
            rig: CameraRig {
                count: 2,
                radius: 2.0,
                look_at: [0.0; 3],
                width: 8,
                height: 8,
                elevation_deg: 10.0,
                elevation_span_deg: 0.0,
                focal_px: None,
            },
            aabb: None,
            heldout_count: Some(1),
            samples_per_ray: 32,
        };
        let (ds, _) = synthesize_scene::<f32>(&spec, 3).unwrap();
        for img in &ds.images {
            for v in img.data().chunks(3) {
                assert!((v[0] - 0.3).abs() < 1e-6);
                assert!((v[1] - 0.1).abs() < 1e-6);
                assert!((v[2] - 0.6).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let spec = tiny_spec();
        let (a, _) = synthesize_scene::<f32>(&spec, 9).unwrap();
        let (b, _) = synthesize_scene::<f32>(&spec, 9).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.data(), y.data());
        }
        assert_eq!(a.train_idx, b.train_idx);
        assert_eq!(a.heldout_idx, b.heldout_idx);
    }

    #[test]
    fn splits_disjoint_and_covering() {
        let (ds, _) = synthesize_scene::<f32>(&tiny_spec(), 4).unwrap();
        ds.validate().unwrap();
        assert!(!ds.heldout_idx.is_empty());
        assert_eq!(ds.train_idx.len() + ds.heldout_idx.len(), ds.len());
    }

    #[test]
    fn opaque_sphere_silhouette_matches_projection() {
        let radius = 0.5;
        let dist = 3.0;
        let spec = SyntheticSceneSpec {
            id: "sphere".into(),
            primitives: vec![Primitive {
                kind: PrimitiveKind::Sphere,
                center: [0.0; 3],
                size: [radius, 0.0, 0.0],
                albedo: [1.0, 1.0, 1.0],
                density: 500.0,
            }],
            background: [0.0; 3],
            rig: CameraRig {
                count: 1,
                radius: dist,
                look_at: [0.0; 3],
                width: 96,
                height: 96,
                elevation_deg: 0.0,
                elevation_span_deg: 0.0,
                focal_px: Some(96.0),
            },
            aabb: None,
            heldout_count: Some(0),
            samples_per_ray: 512,
        };
        // heldout 0 is rejected by split(); bypass via direct synth w/ 1 held
        let mut spec = spec;
        spec.rig.count = 2;
        spec.heldout_count = Some(1);
        let (ds, _) = synthesize_scene::<f64>(&spec, 1).unwrap();
        let img = &ds.images[0];
        let lit = img
            .data()
            .chunks(3)
            .filter(|px| px[0] > 0.5)
            .count() as f64;
        let measured_radius = (lit / std::f64::consts::PI).sqrt();
        // pinhole: pixel radius = f * r / sqrt(d^2 - r^2)
        let expected = 96.0 * radius / (dist * dist - radius * radius).sqrt();
        assert!(
            (measured_radius - expected).abs() <= 1.0,
            "radius {measured_radius} vs {expected}"
        );
    }

    #[test]
    fn quadrature_through_composite_matches_synthesized_images() {
        let mut spec = tiny_spec();
        spec.rig.width = 32;
        spec.rig.height = 32;
        let (ds, oracle) = synthesize_scene::<f64>(&spec, 11).unwrap();
        for view in [0usize, 3] {
            let cam = &ds.cameras[view];
            let mut rendered = Image::new(32, 32);
            for y in 0..32 {
                for x in 0..32 {
                    let ray = cam.generate_ray(x as f64, y as f64).unwrap();
                    let n = 512;
                    let ts: Vec<f64> = (0..n)
                        .map(|i| {
                            ray.t_near
                                + (ray.t_far - ray.t_near) * (i as f64 + 0.5) / n as f64
                        })
                        .collect();
                    let mut batch = SampleBatch::new(ts, ray.t_far, 1).unwrap();
                    for i in 0..batch.len() {
                        let (sigma, color) = oracle.sigma_c(ray.at(batch.ts[i]));
                        batch.radiance[i] = RadianceSample {
                            color,
                            sigma,
                        };
                    }
                    let est = composite(&mut batch, oracle.background).unwrap();
                    rendered.set_pixel(
                        x,
                        y,
                        [est.rgb[0] as f32, est.rgb[1] as f32, est.rgb[2] as f32],
                    );
                }
            }
            let p = psnr(&rendered, &ds.images[view]).unwrap();
            assert!(p > 40.0, "view {view}: quadrature PSNR {p}");
        }
    }

    #[test]
    fn exact_pixel_agrees_with_dense_marching() {
        let spec = tiny_spec();
        let (ds, oracle) = synthesize_scene::<f64>(&spec, 5).unwrap();
        let cam = &ds.cameras[1];
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..40 {
            let px = rng.random_range(0.0..24.0);
            let py = rng.random_range(0.0..24.0);
            let ray = cam.generate_ray(px, py).unwrap();
            let exact = oracle.exact_pixel(&ray);
            let marched = oracle.march_pixel(&ray, 4096, &mut rng);
            for c in 0..3 {
                assert!(
                    (exact[c] - marched[c]).abs() < 5e-3,
                    "channel {c}: {} vs {}",
                    exact[c],
                    marched[c]
                );
            }
        }
    }

    #[test]
    fn dataset_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = synthesize_scene::<f32>(&tiny_spec(), 21).unwrap();
        let path = dir.path().join("scene");
        write_dataset(&ds, &path).unwrap();
        let back = load_dataset::<f32>(&path).unwrap();
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.train_idx, ds.train_idx);
        assert_eq!(back.heldout_idx, ds.heldout_idx);
        // images round-trip exactly after the initial 8-bit quantization
        for (a, b) in back.images.iter().zip(&ds.images) {
            assert_eq!(a.to_rgb8(), b.to_rgb8());
        }
        // a second write/read is a fixed point
        let path2 = dir.path().join("scene2");
        write_dataset(&back, &path2).unwrap();
        let again = load_dataset::<f32>(&path2).unwrap();
        for (a, b) in again.images.iter().zip(&back.images) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in again.cameras.iter().zip(&back.cameras) {
            assert_eq!(a.pos, b.pos);
        }
    }

    #[test]
    fn loader_rejects_bad_rotation() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = synthesize_scene::<f32>(&tiny_spec(), 2).unwrap();
        let path = dir.path().join("scene");
        write_dataset(&ds, &path).unwrap();
        let meta_path = path.join("transforms.json");
        let mut meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&meta_path).unwrap()).unwrap();
        // scale one rotation row well past the 1e-3 orthonormality gate
        meta["frames"][0]["c2w"][0] = serde_json::json!(1.2);
        fs::write(&meta_path, serde_json::to_string(&meta).unwrap()).unwrap();
        assert!(load_dataset::<f32>(&path).is_err());
    }

    #[test]
    fn loader_reports_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        match load_dataset::<f32>(dir.path()) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "transforms.json"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_single_image_dataset_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path();
        write_png(&Image::new(8, 8), &path.join("only.png")).unwrap();
        let meta = serde_json::json!({
            "intrinsics": {"fx": 8.0, "fy": 8.0, "cx": 4.0, "cy": 4.0, "w": 8, "h": 8},
            "near": 0.5,
            "far": 3.0,
            "aabb": [[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]],
            "frames": [{"file": "only.png",
                        "c2w": [1.0,0.0,0.0,0.0, 0.0,1.0,0.0,0.0, 0.0,0.0,1.0,2.0, 0.0,0.0,0.0,1.0]}],
            "heldout": []
        });
        fs::write(path.join("transforms.json"), meta.to_string()).unwrap();
        let ds = load_dataset::<f32>(path).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.train_idx, vec![0]);
    }

    fn write_npy_2d(path: &Path, rows: usize, cols: usize, data: &[f64]) {
        let header = format!(
            "{{'descr': '<f8', 'fortran_order': False, 'shape': ({rows}, {cols}), }}"
        );
        let mut padded = header.into_bytes();
        while (10 + padded.len() + 1) % 64 != 0 {
            padded.push(b' ');
        }
        padded.push(b'\n');
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"\x93NUMPY\x01\x00");
        bytes.extend_from_slice(&(padded.len() as u16).to_le_bytes());
        bytes.extend_from_slice(&padded);
        for v in data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes).unwrap();
    }

    #[test]
    fn llff_import_reads_poses_and_images() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("images")).unwrap();
        // two cameras looking along -z, LLFF (down, right, back) columns
        let mut rows = Vec::new();
        for i in 0..2 {
            let t = [0.2 * i as f64, 0.0, 2.0];
            // right=(1,0,0), up=(0,1,0), back=(0,0,1) in NeRF convention
            // => LLFF col0=down=(0,-1,0), col1=right=(1,0,0), col2=back
            let pose = [
                [0.0, 1.0, 0.0, t[0], 16.0],
                [-1.0, 0.0, 0.0, t[1], 16.0],
                [0.0, 0.0, 1.0, t[2], 20.0],
            ];
            for r in pose {
                rows.extend_from_slice(&r);
            }
            rows.push(1.0); // near
            rows.push(5.0); // far
            write_png(
                &Image::new(16, 16),
                &root.join(format!("images/frame_{i}.png")),
            )
            .unwrap();
        }
        write_npy_2d(&root.join("poses_bounds.npy"), 2, 17, &rows);
        let ds = import_llff::<f32>(root).unwrap();
        assert_eq!(ds.len(), 2);
        assert!((ds.cameras[0].pos.z - 2.0).abs() < 1e-6);
        // converted rotation is right-handed with back = +z
        let ray = ds.cameras[0].generate_ray(7.5, 7.5).unwrap();
        assert!((ray.dir.z + 1.0).abs() < 1e-5, "principal ray {:?}", ray.dir);
        ds.validate().unwrap();
    }
}
