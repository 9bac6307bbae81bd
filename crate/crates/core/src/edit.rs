//! The volume editing algebra: coordinate-field resampling, affine warps by
//! inverse mapping, region extraction and erasure, cross-scene pasting, and
//! max-norm fusion. All operations are pure over their input volumes and
//! renderer-agnostic; cross-scene operations require matching renderer
//! hashes.
//!
//! Erased cells, vacated warp regions and out-of-source samples become
//! "empty": zero feature plus an explicit empty-mask entry, which the ray
//! engine renders as vacuum regardless of what the network maps zero
//! features to.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Affine3, Vec3};
use crate::scalar::Scalar;
use crate::volume::FeatureVolume;

/// Sentinel source coordinate far outside any grid; marks cells that map to
/// empty space. Finite so coordinate fields stay finite.
pub const FAR_OUT: f64 = -1.0e6;

/// Per-target-cell source positions in continuous grid coordinates of the
/// source volume.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordField<T> {
    dims: [usize; 3],
    coords: Vec<T>,
}

impl<T: Scalar> CoordField<T> {
    /// Field mapping every cell to itself.
    pub fn identity(dims: [usize; 3]) -> Self {
        let mut coords = Vec::with_capacity(dims[0] * dims[1] * dims[2] * 3);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    coords.push(T::c(i as f64));
                    coords.push(T::c(j as f64));
                    coords.push(T::c(k as f64));
                }
            }
        }
        Self { dims, coords }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn get(&self, cell: usize) -> Vec3<T> {
        let i = cell * 3;
        Vec3::new(self.coords[i], self.coords[i + 1], self.coords[i + 2])
    }

    pub fn set(&mut self, cell: usize, g: Vec3<T>) {
        debug_assert!(g.is_finite(), "coordinate fields must stay finite");
        let i = cell * 3;
        self.coords[i] = g.x;
        self.coords[i + 1] = g.y;
        self.coords[i + 2] = g.z;
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.coords.len() != self.cell_count() * 3 {
            return Err(Error::invalid("coordinate field length mismatch"));
        }
        if self.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coordinate field entries must be finite"));
        }
        Ok(())
    }
}

/// Resamples `source` through a coordinate field: every target cell takes
/// the trilinear sample of `source` at its field coordinate. Out-of-range
/// coordinates produce empty cells. Bounds and renderer hash copy from the
/// source.
pub fn resample<T: Scalar>(
    source: &FeatureVolume<T>,
    field: &CoordField<T>,
) -> Result<FeatureVolume<T>> {
    field.validate()?;
    let dims = field.dims();
    let f = source.feat_len();
    let mut out = FeatureVolume::zeros(dims, f, source.bounds())?;
    out.set_renderer_hash(source.renderer_hash());
    let mut buf = vec![T::zero(); f];
    for cell in 0..field.cell_count() {
        let flags = source.sample_grid_into(field.get(cell), &mut buf);
        if flags.inside && flags.occupied {
            out.feature_mut(cell).copy_from_slice(&buf);
        } else {
            out.set_empty_cell(cell, true);
        }
    }
    Ok(out)
}

/// Builds the coordinate field that shows the content of `region`
/// transformed by `m`, by inverse warping:
/// - cells inside the transformed region pull from `m^-1 * cell`;
/// - cells of the original region not covered by the transformed region are
///   vacated (empty);
/// - everything else keeps identity coordinates.
///
/// `region` of `None` warps the whole volume.
pub fn affine_coord_field<T: Scalar>(
    vol: &FeatureVolume<T>,
    region: Option<Aabb<T>>,
    m: &Affine3<T>,
) -> Result<CoordField<T>> {
    let inv = m.inverse()?;
    let region = match region {
        Some(r) => r,
        None => vol.bounds(),
    };
    let dims = vol.dims();
    let mut field = CoordField::identity(dims);
    let far = Vec3::splat(T::c(FAR_OUT));
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let cell = vol.cell_index(i, j, k);
                let w = vol.cell_center_world(i, j, k);
                let w_src = inv.apply(w);
                if region.contains(w_src) {
                    field.set(cell, vol.world_to_grid(w_src));
                } else if region.contains(w) {
                    field.set(cell, far);
                }
            }
        }
    }
    Ok(field)
}

/// Copies the content of a world-space box into a standalone fragment
/// volume at the source's cell pitch. Fragment bounds equal the box.
pub fn extract_region<T: Scalar>(
    vol: &FeatureVolume<T>,
    aabb: Aabb<T>,
) -> Result<FeatureVolume<T>> {
    if !aabb.intersects(&vol.bounds()) {
        return Err(Error::invalid(
            "extract region does not intersect the volume bounds",
        ));
    }
    let pitch = vol.pitch();
    let ext = aabb.extent();
    let dims = [
        (ext.x / pitch.x).to_f64_lossy().round().max(2.0) as usize,
        (ext.y / pitch.y).to_f64_lossy().round().max(2.0) as usize,
        (ext.z / pitch.z).to_f64_lossy().round().max(2.0) as usize,
    ];
    let mut out = FeatureVolume::zeros(dims, vol.feat_len(), aabb)?;
    out.set_renderer_hash(vol.renderer_hash());
    let mut buf = vec![T::zero(); vol.feat_len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let w = out.cell_center_world(i, j, k);
                let flags = vol.sample_into(w, &mut buf);
                let cell = out.cell_index(i, j, k);
                if flags.inside && flags.occupied {
                    out.feature_mut(cell).copy_from_slice(&buf);
                } else {
                    out.set_empty_cell(cell, true);
                }
            }
        }
    }
    Ok(out)
}

/// Marks every cell whose center lies in the box as empty; containment is
/// half-open on the upper faces so a box spanning lattice nodes `a..b`
/// erases exactly the cells an extraction of the same box copies. Pure:
/// returns a new volume.
pub fn erase_region<T: Scalar>(vol: &FeatureVolume<T>, aabb: Aabb<T>) -> FeatureVolume<T> {
    let mut out = vol.clone();
    let dims = vol.dims();
    let half_open = |p: Vec3<T>| {
        p.x >= aabb.min.x
            && p.x < aabb.max.x
            && p.y >= aabb.min.y
            && p.y < aabb.max.y
            && p.z >= aabb.min.z
            && p.z < aabb.max.z
    };
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if half_open(vol.cell_center_world(i, j, k)) {
                    out.set_empty_cell(vol.cell_index(i, j, k), true);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PasteMode {
    #[default]
    Overwrite,
    FuseMax,
}

/// Resamples `fragment` into `target`'s grid through the placement
/// transform (fragment world coordinates = `placement^-1` of target world
/// coordinates). Non-empty fragment samples either overwrite the target
/// cell or fuse by larger feature norm.
pub fn paste<T: Scalar>(
    target: &FeatureVolume<T>,
    fragment: &FeatureVolume<T>,
    placement: &Affine3<T>,
    mode: PasteMode,
) -> Result<FeatureVolume<T>> {
    if target.renderer_hash() != fragment.renderer_hash() {
        return Err(Error::IncompatibleScenes(format!(
            "paste requires matching renderer hashes ({:016x} vs {:016x})",
            target.renderer_hash(),
            fragment.renderer_hash()
        )));
    }
    if target.feat_len() != fragment.feat_len() {
        return Err(Error::invalid("paste requires equal feature lengths"));
    }
    let inv = placement.inverse()?;
    let mut out = target.clone();
    let dims = target.dims();
    let mut buf = vec![T::zero(); target.feat_len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let w = target.cell_center_world(i, j, k);
                let flags = fragment.sample_into(inv.apply(w), &mut buf);
                if !(flags.inside && flags.occupied) {
                    continue;
                }
                let cell = target.cell_index(i, j, k);
                match mode {
                    PasteMode::Overwrite => {
                        out.set_empty_cell(cell, false);
                        out.feature_mut(cell).copy_from_slice(&buf);
                    }
                    PasteMode::FuseMax => {
                        let cur = norm_sq(out.feature(cell), out.is_empty_cell(cell));
                        let new = norm_sq(&buf, false);
                        if new > cur {
                            out.set_empty_cell(cell, false);
                            out.feature_mut(cell).copy_from_slice(&buf);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn norm_sq<T: Scalar>(feat: &[T], empty: bool) -> T {
    if empty {
        return T::zero();
    }
    feat.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Cellwise merge keeping the feature vector of larger L2 norm; exact ties
/// keep the first operand. Empty cells count as norm zero. Requires equal
/// shapes, bounds and renderer hashes.
pub fn fuse_max_norm<T: Scalar>(
    a: &FeatureVolume<T>,
    b: &FeatureVolume<T>,
) -> Result<FeatureVolume<T>> {
    if a.dims() != b.dims() || a.feat_len() != b.feat_len() || a.bounds() != b.bounds() {
        return Err(Error::invalid(
            "fuse_max_norm requires equal dims, feature length and bounds",
        ));
    }
    if a.renderer_hash() != b.renderer_hash() {
        return Err(Error::IncompatibleScenes(format!(
            "fusion requires matching renderer hashes ({:016x} vs {:016x})",
            a.renderer_hash(),
            b.renderer_hash()
        )));
    }
    let mut out = a.clone();
    for cell in 0..a.cell_count() {
        let na = norm_sq(a.feature(cell), a.is_empty_cell(cell));
        let nb = norm_sq(b.feature(cell), b.is_empty_cell(cell));
        if nb > na {
            if b.is_empty_cell(cell) {
                out.set_empty_cell(cell, true);
            } else {
                out.set_empty_cell(cell, false);
                let src = b.feature(cell).to_vec();
                out.feature_mut(cell).copy_from_slice(&src);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// declarative edit scripts

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Resample,
    Extract,
    Erase,
    Paste,
    Affine,
    FuseMax,
}

/// One scripted edit. `target` names the binding that receives the result;
/// `source` names the operand (defaulting to `target` for single-operand
/// ops, required as the second operand for `paste` and `fuse_max`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditOp {
    pub op: OpKind,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aabb: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<PasteMode>,
}

/// Ordered list of edits over named volumes, with input and output files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditScript {
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    pub ops: Vec<EditOp>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
}

/// Parses a script, reporting line and column on malformed JSON.
pub fn parse_script(text: &str) -> Result<EditScript> {
    serde_json::from_str(text).map_err(|e| {
        Error::Script(format!(
            "parse error at line {} column {}: {e}",
            e.line(),
            e.column()
        ))
    })
}

fn op_aabb<T: Scalar>(op: &EditOp, idx: usize) -> Result<Aabb<T>> {
    let raw = op
        .aabb
        .ok_or_else(|| Error::Script(format!("op #{idx} ({:?}) needs an aabb", op.op)))?;
    Aabb::new(
        Vec3::new(T::c(raw[0][0]), T::c(raw[0][1]), T::c(raw[0][2])),
        Vec3::new(T::c(raw[1][0]), T::c(raw[1][1]), T::c(raw[1][2])),
    )
    .map_err(|e| Error::Script(format!("op #{idx}: {e}")))
}

fn op_matrix<T: Scalar>(op: &EditOp, idx: usize) -> Result<Affine3<T>> {
    match &op.matrix {
        None => Ok(Affine3::identity()),
        Some(vals) => {
            let cast: Vec<T> = vals.iter().map(|&v| T::c(v)).collect();
            Affine3::from_rows(&cast).map_err(|e| Error::Script(format!("op #{idx}: {e}")))
        }
    }
}

fn lookup<'a, T>(
    registry: &'a BTreeMap<String, FeatureVolume<T>>,
    name: &str,
    idx: usize,
) -> Result<&'a FeatureVolume<T>> {
    registry
        .get(name)
        .ok_or_else(|| Error::Script(format!("op #{idx}: unresolved volume `{name}`")))
}

/// Applies every op in order against a registry of named volumes. Inputs are
/// never mutated: each op binds a fresh volume under its target name.
pub fn apply_edit_script<T: Scalar>(
    registry: &mut BTreeMap<String, FeatureVolume<T>>,
    script: &EditScript,
) -> Result<()> {
    for (idx, op) in script.ops.iter().enumerate() {
        let source_name = op.source.as_deref().unwrap_or(&op.target);
        let result = match op.op {
            OpKind::Resample => {
                let src = lookup(registry, source_name, idx)?;
                let m = op_matrix::<T>(op, idx)?;
                let field = affine_coord_field(src, None, &m)?;
                resample(src, &field)?
            }
            OpKind::Affine => {
                let src = lookup(registry, source_name, idx)?;
                let m = op_matrix::<T>(op, idx)?;
                let region = match op.aabb {
                    Some(_) => Some(op_aabb::<T>(op, idx)?),
                    None => None,
                };
                let field = affine_coord_field(src, region, &m)?;
                resample(src, &field)?
            }
            OpKind::Extract => {
                let src = lookup(registry, source_name, idx)?;
                extract_region(src, op_aabb::<T>(op, idx)?)?
            }
            OpKind::Erase => {
                let src = lookup(registry, source_name, idx)?;
                erase_region(src, op_aabb::<T>(op, idx)?)
            }
            OpKind::Paste => {
                let frag_name = op.source.as_deref().ok_or_else(|| {
                    Error::Script(format!("op #{idx}: paste needs a source fragment"))
                })?;
                let tgt = lookup(registry, &op.target, idx)?;
                let frag = lookup(registry, frag_name, idx)?;
                let m = op_matrix::<T>(op, idx)?;
                paste(tgt, frag, &m, op.mode.unwrap_or_default())?
            }
            OpKind::FuseMax => {
                let other_name = op.source.as_deref().ok_or_else(|| {
                    Error::Script(format!("op #{idx}: fuse_max needs a source volume"))
                })?;
                let a = lookup(registry, &op.target, idx)?;
                let b = lookup(registry, other_name, idx)?;
                fuse_max_norm(a, b)?
            }
        };
        registry.insert(op.target.clone(), result);
    }
    Ok(())
}

/// Loads a script file, its input volumes (paths relative to the script),
/// applies the ops, and writes the outputs. Returns the output names.
pub fn run_script_file<T: Scalar>(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    let script = parse_script(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut registry: BTreeMap<String, FeatureVolume<T>> = BTreeMap::new();
    for (name, rel) in &script.inputs {
        let vol = FeatureVolume::load(&base.join(rel))?;
        registry.insert(name.clone(), vol);
    }
    apply_edit_script(&mut registry, &script)?;
    let mut written = Vec::new();
    for (name, rel) in &script.outputs {
        let vol = registry
            .get(name)
            .ok_or_else(|| Error::Script(format!("output `{name}` was never bound")))?;
        vol.save(&base.join(rel))?;
        written.push(name.clone());
    }
    Ok(written)
}
