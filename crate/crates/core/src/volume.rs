//! Dense differentiable 3D feature grids.
//!
//! A [`FeatureVolume`] stores a `W x H x D` lattice of `F`-dimensional
//! feature vectors spanning a world-space box. Grid coordinate `g` maps to
//! world position `min + g * pitch` with `pitch = extent / dims`, so cell
//! centers sit at integer grid coordinates and doubling the resolution puts
//! every old lattice node exactly on a new one. Points with any grid
//! coordinate outside `[0, axis-1]` are outside the volume and sample to the
//! zero feature.
//!
//! An optional per-cell empty mask marks cells that must render as vacuum
//! regardless of what the renderer maps zero features to; masked cells always
//! carry the zero feature vector.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::scalar::{axpy, Scalar};

/// Smoothing constant inside the total-variation square root.
pub const EPS_TV: f64 = 1e-8;

const VOLUME_MAGIC: &[u8; 8] = b"CNRFVOL1";
/// Cap on `W*H*D*F` accepted from files; rejects dimension overflow.
const MAX_VOLUME_SCALARS: u64 = 1 << 33;

/// Flags produced by a trilinear sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleFlags {
    /// Point lies within the grid's coordinate range.
    pub inside: bool,
    /// At least one contributing corner is a non-empty cell. Always false
    /// outside; equal to `inside` for volumes without an empty mask.
    pub occupied: bool,
}

impl SampleFlags {
    const OUTSIDE: SampleFlags = SampleFlags {
        inside: false,
        occupied: false,
    };
}

/// Contiguous cell-index subregion of a volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VolumeRegion {
    pub offset: [usize; 3],
    pub size: [usize; 3],
}

impl VolumeRegion {
    pub fn validate(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.size[a] < 1 {
                return Err(Error::invalid("region size must be >= 1 per axis"));
            }
            if self.offset[a] + self.size[a] > dims[a] {
                return Err(Error::invalid(format!(
                    "region exceeds volume: offset {:?} + size {:?} > dims {:?}",
                    self.offset, self.size, dims
                )));
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.size[0] * self.size[1] * self.size[2]
    }
}

/// Sparse additive gradient buffer mirroring a volume's shape.
///
/// Only touched cells hold entries; buffers from parallel workers merge by
/// addition in a caller-fixed order, which keeps reductions deterministic.
#[derive(Debug, Clone)]
pub struct VolumeGrad<T> {
    feat_len: usize,
    cell_count: usize,
    cells: HashMap<u32, Box<[T]>>,
}

impl<T: Scalar> VolumeGrad<T> {
    pub fn new(dims: [usize; 3], feat_len: usize) -> Self {
        Self {
            feat_len,
            cell_count: dims[0] * dims[1] * dims[2],
            cells: HashMap::new(),
        }
    }

    pub fn for_volume(vol: &FeatureVolume<T>) -> Self {
        Self::new(vol.dims(), vol.feat_len())
    }

    pub fn feat_len(&self) -> usize {
        self.feat_len
    }

    pub fn touched(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Adds `scale * upstream` into the cell's gradient entry.
    pub fn accumulate(&mut self, cell: usize, scale: T, upstream: &[T]) {
        debug_assert!(cell < self.cell_count);
        debug_assert_eq!(upstream.len(), self.feat_len);
        let entry = self
            .cells
            .entry(cell as u32)
            .or_insert_with(|| vec![T::zero(); self.feat_len].into_boxed_slice());
        axpy(entry, scale, upstream);
    }

    pub fn get(&self, cell: usize) -> Option<&[T]> {
        self.cells.get(&(cell as u32)).map(|b| &**b)
    }

    /// Merge-by-addition. Call in a fixed order for reproducible sums.
    pub fn merge(&mut self, other: VolumeGrad<T>) {
        debug_assert_eq!(self.feat_len, other.feat_len);
        debug_assert_eq!(self.cell_count, other.cell_count);
        for (cell, vec) in other.cells {
            match self.cells.entry(cell) {
                std::collections::hash_map::Entry::Occupied(mut e) => {
                    axpy(e.get_mut(), T::one(), &vec);
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(vec);
                }
            }
        }
    }

    /// Touched cell indices in ascending order; the deterministic iteration
    /// order for optimizer updates.
    pub fn sorted_cells(&self) -> Vec<u32> {
        let mut keys: Vec<u32> = self.cells.keys().copied().collect();
        keys.sort_unstable();
        keys
    }
}

/// Dense grid of learned feature vectors spanning a world-space box.
#[derive(Debug, Clone)]
pub struct FeatureVolume<T> {
    dims: [usize; 3],
    feat_len: usize,
    bounds: Aabb<T>,
    data: Vec<T>,
    empty: Option<Vec<bool>>,
    renderer_hash: u64,
}

impl<T: Scalar> FeatureVolume<T> {
    /// Creates a volume with features drawn i.i.d. uniform in
    /// `[-init_scale, init_scale]` from the seeded generator.
    pub fn new(
        dims: [usize; 3],
        feat_len: usize,
        bounds: Aabb<T>,
        init_scale: T,
        seed: u64,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!(
                "volume dims must be >= 2 per axis, got {dims:?}"
            )));
        }
        if feat_len < 1 {
            return Err(Error::invalid("feat_len must be >= 1"));
        }
        if !bounds.is_valid() {
            return Err(Error::invalid("volume bounds must satisfy min < max"));
        }
        if !init_scale.is_finite() || init_scale < T::zero() {
            return Err(Error::invalid("init_scale must be finite and >= 0"));
        }
        let n = dims[0] * dims[1] * dims[2] * feat_len;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let scale = init_scale.to_f64_lossy();
        let data: Vec<T> = (0..n)
            .map(|_| T::c((rng.random::<f64>() * 2.0 - 1.0) * scale))
            .collect();
        Ok(Self {
            dims,
            feat_len,
            bounds,
            data,
            empty: None,
            renderer_hash: 0,
        })
    }

    /// All-zero volume; used by edits and as a construction base in tests.
    pub fn zeros(dims: [usize; 3], feat_len: usize, bounds: Aabb<T>) -> Result<Self> {
        Self::new(dims, feat_len, bounds, T::zero(), 0)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn feat_len(&self) -> usize {
        self.feat_len
    }

    pub fn bounds(&self) -> Aabb<T> {
        self.bounds
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn renderer_hash(&self) -> u64 {
        self.renderer_hash
    }

    pub fn set_renderer_hash(&mut self, hash: u64) {
        self.renderer_hash = hash;
    }

    pub fn has_empty_mask(&self) -> bool {
        self.empty.is_some()
    }

    pub fn empty_cell_count(&self) -> usize {
        self.empty
            .as_ref()
            .map_or(0, |m| m.iter().filter(|&&e| e).count())
    }

    pub fn is_empty_cell(&self, cell: usize) -> bool {
        self.empty.as_ref().is_some_and(|m| m[cell])
    }

    /// Marks a cell empty (zeroing its features) or occupied.
    pub fn set_empty_cell(&mut self, cell: usize, empty: bool) {
        let mask = self
            .empty
            .get_or_insert_with(|| vec![false; self.dims[0] * self.dims[1] * self.dims[2]]);
        mask[cell] = empty;
        if empty {
            let f = self.feat_len;
            self.data[cell * f..(cell + 1) * f].fill(T::zero());
        }
    }

    /// Storage order: x fastest among the spatial axes, each cell's
    /// F-block contiguous.
    #[inline]
    pub fn cell_index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.dims[0] && j < self.dims[1] && k < self.dims[2]);
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize, usize) {
        let i = cell % self.dims[0];
        let rest = cell / self.dims[0];
        (i, rest % self.dims[1], rest / self.dims[1])
    }

    #[inline]
    pub fn feature(&self, cell: usize) -> &[T] {
        &self.data[cell * self.feat_len..(cell + 1) * self.feat_len]
    }

    pub fn feature_mut(&mut self, cell: usize) -> &mut [T] {
        &mut self.data[cell * self.feat_len..(cell + 1) * self.feat_len]
    }

    /// World-space distance between adjacent cell centers, per axis.
    pub fn pitch(&self) -> Vec3<T> {
        let e = self.bounds.extent();
        Vec3::new(
            e.x / T::c(self.dims[0] as f64),
            e.y / T::c(self.dims[1] as f64),
            e.z / T::c(self.dims[2] as f64),
        )
    }

    pub fn world_to_grid(&self, p: Vec3<T>) -> Vec3<T> {
        let pitch = self.pitch();
        let r = p - self.bounds.min;
        Vec3::new(r.x / pitch.x, r.y / pitch.y, r.z / pitch.z)
    }

    pub fn grid_to_world(&self, g: Vec3<T>) -> Vec3<T> {
        let pitch = self.pitch();
        self.bounds.min + Vec3::new(g.x * pitch.x, g.y * pitch.y, g.z * pitch.z)
    }

    pub fn cell_center_world(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        self.grid_to_world(Vec3::new(T::c(i as f64), T::c(j as f64), T::c(k as f64)))
    }

    #[inline]
    fn grid_inside(&self, g: Vec3<T>) -> bool {
        let lim = |d: usize| T::c((d - 1) as f64);
        g.x >= T::zero()
            && g.x <= lim(self.dims[0])
            && g.y >= T::zero()
            && g.y <= lim(self.dims[1])
            && g.z >= T::zero()
            && g.z <= lim(self.dims[2])
    }

    /// Base corner and fractional offsets for a grid coordinate known to be
    /// inside (possibly after clamping).
    #[inline]
    fn corner_setup(&self, g: Vec3<T>) -> ([usize; 3], [T; 3]) {
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for (a, ga) in [g.x, g.y, g.z].into_iter().enumerate() {
            let hi = self.dims[a] - 2;
            let fl = ga.floor().to_f64_lossy().max(0.0) as usize;
            let b = fl.min(hi);
            base[a] = b;
            frac[a] = ga - T::c(b as f64);
        }
        (base, frac)
    }

    #[inline]
    fn blend_corners(&self, base: [usize; 3], frac: [T; 3], out: &mut [T]) -> bool {
        let one = T::one();
        let wx = [one - frac[0], frac[0]];
        let wy = [one - frac[1], frac[1]];
        let wz = [one - frac[2], frac[2]];
        let mut occupied = self.empty.is_none();
        for dz in 0..2usize {
            for dy in 0..2usize {
                let wyz = wy[dy] * wz[dz];
                let row = ((base[2] + dz) * self.dims[1] + base[1] + dy) * self.dims[0] + base[0];
                for dx in 0..2usize {
                    let w = wx[dx] * wyz;
                    let cell = row + dx;
                    if !occupied && w > T::zero() && !self.is_empty_cell(cell) {
                        occupied = true;
                    }
                    axpy(out, w, self.feature(cell));
                }
            }
        }
        occupied
    }

    /// Trilinear sample at a world point. Fills `out` (length `F`) and
    /// reports inside/occupied flags; outside points yield the zero feature.
    pub fn sample_into(&self, p_world: Vec3<T>, out: &mut [T]) -> SampleFlags {
        debug_assert_eq!(out.len(), self.feat_len);
        out.fill(T::zero());
        if !p_world.is_finite() {
            return SampleFlags::OUTSIDE;
        }
        let g = self.world_to_grid(p_world);
        self.sample_grid_into(g, out)
    }

    /// Trilinear sample addressed directly in grid coordinates.
    pub fn sample_grid_into(&self, g: Vec3<T>, out: &mut [T]) -> SampleFlags {
        debug_assert_eq!(out.len(), self.feat_len);
        out.fill(T::zero());
        if !g.is_finite() || !self.grid_inside(g) {
            return SampleFlags::OUTSIDE;
        }
        let (base, frac) = self.corner_setup(g);
        let occupied = self.blend_corners(base, frac, out);
        SampleFlags {
            inside: true,
            occupied,
        }
    }

    /// Like [`sample_grid_into`](Self::sample_grid_into) but clamps to the
    /// lattice instead of reporting outside; used by resolution changes.
    fn sample_grid_clamped_into(&self, g: Vec3<T>, out: &mut [T]) -> SampleFlags {
        let lim = |d: usize| T::c((d - 1) as f64);
        let gc = Vec3::new(
            g.x.max(T::zero()).min(lim(self.dims[0])),
            g.y.max(T::zero()).min(lim(self.dims[1])),
            g.z.max(T::zero()).min(lim(self.dims[2])),
        );
        self.sample_grid_into(gc, out)
    }

    /// Allocating wrapper around [`sample_into`](Self::sample_into).
    pub fn sample(&self, p_world: Vec3<T>) -> (Vec<T>, bool) {
        let mut out = vec![T::zero(); self.feat_len];
        let flags = self.sample_into(p_world, &mut out);
        (out, flags.inside)
    }

    /// Adjoint of [`sample_into`](Self::sample_into): adds
    /// `w_corner * upstream` into each of the 8 corner cells of `grad`.
    /// No-op outside the grid; produces no gradient with respect to the
    /// sample position.
    pub fn sample_backward(&self, p_world: Vec3<T>, upstream: &[T], grad: &mut VolumeGrad<T>) {
        debug_assert_eq!(upstream.len(), self.feat_len);
        if !p_world.is_finite() {
            return;
        }
        let g = self.world_to_grid(p_world);
        if !self.grid_inside(g) {
            return;
        }
        let (base, frac) = self.corner_setup(g);
        let one = T::one();
        let wx = [one - frac[0], frac[0]];
        let wy = [one - frac[1], frac[1]];
        let wz = [one - frac[2], frac[2]];
        for dz in 0..2usize {
            for dy in 0..2usize {
                let wyz = wy[dy] * wz[dz];
                let row = ((base[2] + dz) * self.dims[1] + base[1] + dy) * self.dims[0] + base[0];
                for dx in 0..2usize {
                    grad.accumulate(row + dx, wx[dx] * wyz, upstream);
                }
            }
        }
    }

    /// Doubles every axis, keeping bounds. New lattice nodes at even indices
    /// coincide with old nodes exactly; odd nodes interpolate. Boundary
    /// nodes past the old lattice clamp to the edge.
    pub fn upsample_2x(&self) -> FeatureVolume<T> {
        let dims = [self.dims[0] * 2, self.dims[1] * 2, self.dims[2] * 2];
        let f = self.feat_len;
        let mut out = FeatureVolume {
            dims,
            feat_len: f,
            bounds: self.bounds,
            data: vec![T::zero(); dims[0] * dims[1] * dims[2] * f],
            empty: self
                .empty
                .as_ref()
                .map(|_| vec![false; dims[0] * dims[1] * dims[2]]),
            renderer_hash: self.renderer_hash,
        };
        let half = T::c(0.5);
        let mut buf = vec![T::zero(); f];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let g = Vec3::new(
                        T::c(i as f64) * half,
                        T::c(j as f64) * half,
                        T::c(k as f64) * half,
                    );
                    let flags = self.sample_grid_clamped_into(g, &mut buf);
                    let cell = out.cell_index(i, j, k);
                    out.data[cell * f..(cell + 1) * f].copy_from_slice(&buf);
                    if let Some(mask) = out.empty.as_mut() {
                        mask[cell] = !flags.occupied;
                        if !flags.occupied {
                            out.data[cell * f..(cell + 1) * f].fill(T::zero());
                        }
                    }
                }
            }
        }
        out
    }

    /// Draws the total-variation subregion: a quarter of each dimension
    /// (rounded up), uniformly placed. Volumes under 4 cells on any axis use
    /// the whole grid.
    pub fn tv_region_sample(&self, rng: &mut impl Rng) -> VolumeRegion {
        if self.dims.iter().any(|&d| d < 4) {
            return VolumeRegion {
                offset: [0, 0, 0],
                size: self.dims,
            };
        }
        let mut offset = [0usize; 3];
        let mut size = [0usize; 3];
        for a in 0..3 {
            size[a] = self.dims[a].div_ceil(4);
            offset[a] = rng.random_range(0..=self.dims[a] - size[a]);
        }
        VolumeRegion { offset, size }
    }

    /// Total-variation loss over a region, normalized by its cell count.
    ///
    /// Each region cell contributes the root of the summed squared forward
    /// differences of its full feature vector along +x, +y, +z; differences
    /// whose neighbor falls outside the full volume are omitted. The root is
    /// smoothed as `sqrt(s + EPS_TV)`. Gradients are accumulated into `grad`
    /// scaled by `grad_scale`; the returned loss is unscaled.
    pub fn tv_loss(&self, region: &VolumeRegion, grad_scale: T, grad: &mut VolumeGrad<T>) -> T {
        region
            .validate(self.dims)
            .expect("tv_loss requires a valid region");
        let f = self.feat_len;
        let eps = T::c(EPS_TV);
        let inv_count = T::one() / T::c(region.cell_count() as f64);
        let strides = [1usize, self.dims[0], self.dims[0] * self.dims[1]];
        let mut diffs = vec![T::zero(); 3 * f];
        let mut self_grad = vec![T::zero(); f];
        let mut neigh_grad = vec![T::zero(); f];
        let mut total = T::zero();
        for k in region.offset[2]..region.offset[2] + region.size[2] {
            for j in region.offset[1]..region.offset[1] + region.size[1] {
                for i in region.offset[0]..region.offset[0] + region.size[0] {
                    let cell = self.cell_index(i, j, k);
                    let here = self.feature(cell);
                    let present = [
                        i + 1 < self.dims[0],
                        j + 1 < self.dims[1],
                        k + 1 < self.dims[2],
                    ];
                    let mut s = eps;
                    for a in 0..3 {
                        if !present[a] {
                            continue;
                        }
                        let neigh = self.feature(cell + strides[a]);
                        for c in 0..f {
                            let d = neigh[c] - here[c];
                            diffs[a * f + c] = d;
                            s = s + d * d;
                        }
                    }
                    let root = s.sqrt();
                    total = total + root;
                    if grad_scale != T::zero() {
                        let coef = grad_scale * inv_count / root;
                        self_grad.fill(T::zero());
                        for a in 0..3 {
                            if !present[a] {
                                continue;
                            }
                            for c in 0..f {
                                let g = diffs[a * f + c] * coef;
                                neigh_grad[c] = g;
                                self_grad[c] = self_grad[c] - g;
                            }
                            grad.accumulate(cell + strides[a], T::one(), &neigh_grad);
                        }
                        grad.accumulate(cell, T::one(), &self_grad);
                    }
                }
            }
        }
        total * inv_count
    }

    /// Applies a dense update `data[i] += delta(i)` used by optimizer steps.
    pub fn apply_cell_update(&mut self, cell: usize, update: impl FnOnce(&mut [T])) {
        let f = self.feat_len;
        update(&mut self.data[cell * f..(cell + 1) * f]);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element type; used to move volumes between f32 storage and
    /// f64 test paths.
    pub fn cast<U: Scalar>(&self) -> FeatureVolume<U> {
        FeatureVolume {
            dims: self.dims,
            feat_len: self.feat_len,
            bounds: self.bounds.cast(),
            data: self.data.iter().map(|v| U::c(v.to_f64_lossy())).collect(),
            empty: self.empty.clone(),
            renderer_hash: self.renderer_hash,
        }
    }

    /// Serializes to the `CNRFVOL1` format: magic, `u32` dims and feature
    /// length, `f32` bounds, `u64` renderer hash, a one-byte mask flag plus
    /// the optional per-cell mask, then the `f32` feature payload in storage
    /// order. Everything little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let cells = self.cell_count();
        let mut bytes = Vec::with_capacity(57 + cells * (self.feat_len * 4 + 1));
        bytes.extend_from_slice(VOLUME_MAGIC);
        for v in [self.dims[0], self.dims[1], self.dims[2], self.feat_len] {
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [
            self.bounds.min.x,
            self.bounds.min.y,
            self.bounds.min.z,
            self.bounds.max.x,
            self.bounds.max.y,
            self.bounds.max.z,
        ] {
            bytes.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        bytes.extend_from_slice(&self.renderer_hash.to_le_bytes());
        match &self.empty {
            Some(mask) => {
                bytes.push(1);
                bytes.extend(mask.iter().map(|&e| e as u8));
            }
            None => bytes.push(0),
        }
        for v in &self.data {
            bytes.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<FeatureVolume<T>> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureVolume<T>> {
        let mut cur = Cursor::new(bytes);
        let magic = cur.take(8, "magic")?;
        if magic != VOLUME_MAGIC {
            return Err(Error::format("magic", "expected CNRFVOL1"));
        }
        let w = cur.u32("dims")? as u64;
        let h = cur.u32("dims")? as u64;
        let d = cur.u32("dims")? as u64;
        let f = cur.u32("feat_len")? as u64;
        if w < 2 || h < 2 || d < 2 {
            return Err(Error::format("dims", "axes must be >= 2"));
        }
        if f < 1 {
            return Err(Error::format("feat_len", "must be >= 1"));
        }
        let scalars = w
            .checked_mul(h)
            .and_then(|v| v.checked_mul(d))
            .and_then(|v| v.checked_mul(f))
            .filter(|&v| v <= MAX_VOLUME_SCALARS)
            .ok_or_else(|| Error::format("dims", "W*H*D*F overflows the supported range"))?;
        let mut b = [0f32; 6];
        for v in b.iter_mut() {
            *v = cur.f32("bounds")?;
        }
        let min = Vec3::new(T::from_f32c(b[0]), T::from_f32c(b[1]), T::from_f32c(b[2]));
        let max = Vec3::new(T::from_f32c(b[3]), T::from_f32c(b[4]), T::from_f32c(b[5]));
        let bounds = Aabb::new(min, max)
            .map_err(|_| Error::format("bounds", "must be finite with min < max"))?;
        let renderer_hash = cur.u64("renderer_hash")?;
        let mask_flag = cur.take(1, "mask_flag")?[0];
        let cells = (w * h * d) as usize;
        let empty = match mask_flag {
            0 => None,
            1 => {
                let raw = cur.take(cells, "mask")?;
                Some(raw.iter().map(|&v| v != 0).collect::<Vec<bool>>())
            }
            other => {
                return Err(Error::format(
                    "mask_flag",
                    format!("expected 0 or 1, got {other}"),
                ))
            }
        };
        let expected = cur.pos + scalars as usize * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                "payload",
                format!(
                    "file size must equal header size + 4*W*H*D*F = {expected} bytes, got {}",
                    bytes.len()
                ),
            ));
        }
        let mut data = Vec::with_capacity(scalars as usize);
        for _ in 0..scalars {
            let v = cur.f32("features")?;
            if !v.is_finite() {
                return Err(Error::format("features", "non-finite feature value"));
            }
            data.push(T::from_f32c(v));
        }
        let mut vol = FeatureVolume {
            dims: [w as usize, h as usize, d as usize],
            feat_len: f as usize,
            bounds,
            data,
            empty,
            renderer_hash,
        };
        // Masked cells carry the zero feature by construction; enforce on load.
        if vol.empty.is_some() {
            let fl = vol.feat_len;
            let mask = vol.empty.clone().unwrap();
            for (cell, &e) in mask.iter().enumerate() {
                if e {
                    vol.data[cell * fl..(cell + 1) * fl].fill(T::zero());
                }
            }
        }
        Ok(vol)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(field, "file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32(&mut self, field: &str) -> Result<f32> {
        let b = self.take(4, field)?;
        Ok(f32::from_le_bytes(b.try_into().unwrap()))
    }
}
