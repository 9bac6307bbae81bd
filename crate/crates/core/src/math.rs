//! Small geometric types: 3-vectors, axis-aligned boxes, affine transforms,
//! and the seed-mixing helper behind per-pixel rng streams.

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Scalar> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self { x: v, y: v, z: v }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::splat(T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        Self::new(self.x / n, self.y / n, self.z / n)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn cast<U: Scalar>(self) -> Vec3<U> {
        Vec3::new(
            U::c(self.x.to_f64_lossy()),
            U::c(self.y.to_f64_lossy()),
            U::c(self.z.to_f64_lossy()),
        )
    }
}

impl<T: Scalar> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Scalar> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Scalar> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Scalar> Div<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn div(self, s: T) -> Self {
        Self::new(self.x / s, self.y / s, self.z / s)
    }
}

impl<T: Scalar> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

/// Axis-aligned world-space box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Scalar> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        let b = Self { min, max };
        if !b.is_valid() {
            return Err(Error::invalid(format!(
                "aabb requires finite min < max per axis, got {min:?}..{max:?}"
            )));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * T::c(0.5)
    }

    /// Inclusive containment.
    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    pub fn intersects(&self, o: &Aabb<T>) -> bool {
        self.min.x <= o.max.x
            && o.min.x <= self.max.x
            && self.min.y <= o.max.y
            && o.min.y <= self.max.y
            && self.min.z <= o.max.z
            && o.min.z <= self.max.z
    }

    pub fn corners(&self) -> [Vec3<T>; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    pub fn cast<U: Scalar>(&self) -> Aabb<U> {
        Aabb {
            min: self.min.cast(),
            max: self.max.cast(),
        }
    }
}

/// Affine 3D transform stored as a row-major 4x4 matrix with last row
/// `(0, 0, 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine3<T> {
    pub m: [[T; 4]; 4],
}

impl<T: Scalar> Affine3<T> {
    pub fn identity() -> Self {
        let mut m = [[T::zero(); 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = T::one();
        }
        Self { m }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        let mut a = Self::identity();
        a.m[0][3] = t.x;
        a.m[1][3] = t.y;
        a.m[2][3] = t.z;
        a
    }

    /// Rotation about the z axis by `angle` radians, around `center`.
    pub fn rotation_z(angle: T, center: Vec3<T>) -> Self {
        let (s, c) = (angle.sin(), angle.cos());
        let mut a = Self::identity();
        a.m[0][0] = c;
        a.m[0][1] = -s;
        a.m[1][0] = s;
        a.m[1][1] = c;
        // rotate about center: T(center) * R * T(-center)
        a.m[0][3] = center.x - c * center.x + s * center.y;
        a.m[1][3] = center.y - s * center.x - c * center.y;
        a
    }

    /// Builds from 16 row-major values; the bottom row must be affine.
    pub fn from_rows(vals: &[T]) -> Result<Self> {
        if vals.len() != 16 {
            return Err(Error::invalid(format!(
                "affine matrix needs 16 values, got {}",
                vals.len()
            )));
        }
        let mut m = [[T::zero(); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                let v = vals[r * 4 + c];
                if !v.is_finite() {
                    return Err(Error::invalid("affine matrix entries must be finite"));
                }
                m[r][c] = v;
            }
        }
        let eps = T::c(1e-9);
        let bottom_ok = m[3][0].abs() < eps
            && m[3][1].abs() < eps
            && m[3][2].abs() < eps
            && (m[3][3] - T::one()).abs() < eps;
        if !bottom_ok {
            return Err(Error::invalid(
                "matrix bottom row must be (0, 0, 0, 1): not an affine transform",
            ));
        }
        Ok(Self { m })
    }

    pub fn to_rows(&self) -> [T; 16] {
        let mut out = [T::zero(); 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.m[r][c];
            }
        }
        out
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z + m[0][3],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z + m[1][3],
            m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z + m[2][3],
        )
    }

    /// Rotates/scales a direction (no translation).
    #[inline]
    pub fn apply_dir(&self, d: Vec3<T>) -> Vec3<T> {
        let m = &self.m;
        Vec3::new(
            m[0][0] * d.x + m[0][1] * d.y + m[0][2] * d.z,
            m[1][0] * d.x + m[1][1] * d.y + m[1][2] * d.z,
            m[2][0] * d.x + m[2][1] * d.y + m[2][2] * d.z,
        )
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn compose(&self, inner: &Affine3<T>) -> Affine3<T> {
        let mut out = [[T::zero(); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                let mut s = T::zero();
                for k in 0..4 {
                    s = s + self.m[r][k] * inner.m[k][c];
                }
                out[r][c] = s;
            }
        }
        Affine3 { m: out }
    }

    /// Inverse via the 3x3 adjugate; fails on singular matrices.
    pub fn inverse(&self) -> Result<Affine3<T>> {
        let det = self.det();
        if det.abs() <= T::c(1e-9) {
            return Err(Error::invalid(format!(
                "singular affine matrix (|det| = {})",
                det.abs()
            )));
        }
        let m = &self.m;
        let inv_det = T::one() / det;
        let mut r = [[T::zero(); 4]; 4];
        r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        let t = Vec3::new(m[0][3], m[1][3], m[2][3]);
        r[0][3] = -(r[0][0] * t.x + r[0][1] * t.y + r[0][2] * t.z);
        r[1][3] = -(r[1][0] * t.x + r[1][1] * t.y + r[1][2] * t.z);
        r[2][3] = -(r[2][0] * t.x + r[2][1] * t.y + r[2][2] * t.z);
        r[3][3] = T::one();
        Ok(Affine3 { m: r })
    }

    pub fn cast<U: Scalar>(&self) -> Affine3<U> {
        let mut m = [[U::zero(); 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                m[r][c] = U::c(self.m[r][c].to_f64_lossy());
            }
        }
        Affine3 { m }
    }
}

/// splitmix64 step; decorrelates derived seeds.
#[inline]
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic per-item stream seed from a master seed and an item index.
#[inline]
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x51ed_2701)))
}

/// Standard normal draw via Box-Muller.
pub fn normal_sample(rng: &mut impl rand::Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// FNV-1a over a byte stream; used for renderer content hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}
