//! Scalar abstraction over `f32` and `f64`.
//!
//! Storage and training default to `f32`; gradient checks and quadrature
//! references instantiate the same code paths with `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, NumCast};

/// Floating-point element type for volumes, network weights and rendering.
pub trait Scalar: Float + NumCast + Debug + Display + Send + Sync + 'static {
    /// Lossy conversion from an `f64` constant.
    #[inline]
    fn c(v: f64) -> Self {
        NumCast::from(v).expect("finite constant")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("scalar convertible to f64")
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        num_traits::ToPrimitive::to_f32(&self).expect("scalar convertible to f32")
    }

    #[inline]
    fn from_f32c(v: f32) -> Self {
        NumCast::from(v).expect("f32 convertible to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product with a fixed four-way accumulation order.
///
/// The summation order never depends on thread schedule or slice alignment,
/// which keeps training runs bit-reproducible.
#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..chunks {
        let j = i * 4;
        s0 = s0 + a[j] * b[j];
        s1 = s1 + a[j + 1] * b[j + 1];
        s2 = s2 + a[j + 2] * b[j + 2];
        s3 = s3 + a[j + 3] * b[j + 3];
    }
    let mut tail = T::zero();
    for j in chunks * 4..n {
        tail = tail + a[j] * b[j];
    }
    ((s0 + s1) + (s2 + s3)) + tail
}

/// `y += alpha * x`, elementwise.
#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi = *yi + alpha * *xi;
    }
}
