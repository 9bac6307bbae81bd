//! Pinhole cameras and ray generation.
//!
//! Camera space looks down -z with x right and y up; pixel centers sit at
//! half-integer offsets, so pixel `(cx - 0.5, cy - 0.5)` maps to the
//! principal ray.

use crate::error::{Error, Result};
use crate::math::{Affine3, Vec3};
use crate::scalar::Scalar;

/// Calibrated pinhole camera with a rigid camera-to-world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    /// Camera-to-world rotation, row-major.
    rot: [[T; 3]; 3],
    /// Camera center in world space.
    pub pos: Vec3<T>,
    pub near: T,
    pub far: T,
}

/// Camera ray with integration bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub dir: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Scalar> Ray<T> {
    pub fn new(origin: Vec3<T>, dir: Vec3<T>, t_near: T, t_far: T) -> Result<Self> {
        if !(dir.norm().to_f64_lossy() - 1.0).abs().is_finite()
            || (dir.norm().to_f64_lossy() - 1.0).abs() > 1e-6
        {
            return Err(Error::invalid("ray direction must be unit length"));
        }
        if !(t_near < t_far) || t_near < T::zero() {
            return Err(Error::invalid("ray bounds must satisfy 0 <= near < far"));
        }
        Ok(Self {
            origin,
            dir,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.dir * t
    }
}

/// Max-abs deviation of `R^T R` from the identity.
fn orthonormality_error<T: Scalar>(rot: &[[T; 3]; 3]) -> f64 {
    let mut err = 0.0f64;
    for a in 0..3 {
        for b in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += rot[k][a].to_f64_lossy() * rot[k][b].to_f64_lossy();
            }
            let want = if a == b { 1.0 } else { 0.0 };
            err = err.max((s - want).abs());
        }
    }
    err
}

impl<T: Scalar> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: u32,
        height: u32,
        rot: [[T; 3]; 3],
        pos: Vec3<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(T::zero() < near && near < far) {
            return Err(Error::invalid("camera needs 0 < near < far"));
        }
        let err = orthonormality_error(&rot);
        if !err.is_finite() || err > 1e-3 {
            return Err(Error::invalid(format!(
                "rotation is not orthonormal (|R^T R - I| = {err:.2e})"
            )));
        }
        if !pos.is_finite() {
            return Err(Error::invalid("camera position must be finite"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rot,
            pos,
            near,
            far,
        })
    }

    /// Builds from a row-major 4x4 camera-to-world matrix.
    #[allow(clippy::too_many_arguments)]
    pub fn from_c2w(
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        width: u32,
        height: u32,
        c2w: &Affine3<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        let mut rot = [[T::zero(); 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                rot[r][c] = c2w.m[r][c];
            }
        }
        let pos = Vec3::new(c2w.m[0][3], c2w.m[1][3], c2w.m[2][3]);
        Self::new(fx, fy, cx, cy, width, height, rot, pos, near, far)
    }

    pub fn c2w(&self) -> Affine3<T> {
        let mut m = Affine3::identity();
        for r in 0..3 {
            for c in 0..3 {
                m.m[r][c] = self.rot[r][c];
            }
        }
        m.m[0][3] = self.pos.x;
        m.m[1][3] = self.pos.y;
        m.m[2][3] = self.pos.z;
        m
    }

    pub fn rotation(&self) -> &[[T; 3]; 3] {
        &self.rot
    }

    /// Ray through the center of pixel `(px, py)`; fractional coordinates
    /// are allowed within `[0, width) x [0, height)`.
    pub fn generate_ray(&self, px: T, py: T) -> Result<Ray<T>> {
        if px < T::zero()
            || px >= T::c(self.width as f64)
            || py < T::zero()
            || py >= T::c(self.height as f64)
        {
            return Err(Error::invalid(format!(
                "pixel ({px}, {py}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let half = T::c(0.5);
        let dc = Vec3::new(
            (px + half - self.cx) / self.fx,
            -(py + half - self.cy) / self.fy,
            -T::one(),
        );
        let world = Vec3::new(
            self.rot[0][0] * dc.x + self.rot[0][1] * dc.y + self.rot[0][2] * dc.z,
            self.rot[1][0] * dc.x + self.rot[1][1] * dc.y + self.rot[1][2] * dc.z,
            self.rot[2][0] * dc.x + self.rot[2][1] * dc.y + self.rot[2][2] * dc.z,
        );
        Ray::new(self.pos, world.normalized(), self.near, self.far)
    }

    /// Intrinsics-preserving copy with a new pose.
    pub fn with_pose(&self, rot: [[T; 3]; 3], pos: Vec3<T>) -> Result<Self> {
        Self::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            rot,
            pos,
            self.near,
            self.far,
        )
    }
}

/// Look-at pose: camera at `eye` viewing `target`, world up +y.
pub fn look_at_rotation<T: Scalar>(eye: Vec3<T>, target: Vec3<T>) -> [[T; 3]; 3] {
    let forward = (target - eye).normalized();
    let mut up_hint = Vec3::new(T::zero(), T::one(), T::zero());
    if forward.cross(up_hint).norm() < T::c(1e-6) {
        up_hint = Vec3::new(T::zero(), T::zero(), T::one());
    }
    let right = forward.cross(up_hint).normalized();
    let up = right.cross(forward);
    // columns: right, up, backward
    [
        [right.x, up.x, -forward.x],
        [right.y, up.y, -forward.y],
        [right.z, up.z, -forward.z],
    ]
}

/// `count` cameras evenly spaced on a circle of `radius` around `center`,
/// raised by `elevation` radians, all looking at `center`.
#[allow(clippy::too_many_arguments)]
pub fn orbit_cameras<T: Scalar>(
    count: usize,
    radius: T,
    elevation: T,
    center: Vec3<T>,
    template: &Camera<T>,
) -> Result<Vec<Camera<T>>> {
    if count == 0 {
        return Err(Error::invalid("orbit needs at least one camera"));
    }
    let mut out = Vec::with_capacity(count);
    let two_pi = T::c(std::f64::consts::TAU);
    for i in 0..count {
        let angle = two_pi * T::c(i as f64) / T::c(count as f64);
        let horiz = radius * elevation.cos();
        let eye = center
            + Vec3::new(
                horiz * angle.cos(),
                radius * elevation.sin(),
                horiz * angle.sin(),
            );
        let rot = look_at_rotation(eye, center);
        out.push(template.with_pose(rot, eye)?);
    }
    Ok(out)
}
