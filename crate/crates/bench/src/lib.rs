//! Shared fixtures for the kernel benchmarks.

use cnrf_core::math::{Aabb, Vec3};
use cnrf_core::net::NetDescriptor;
use cnrf_core::{FeatureVolume, RenderParams};

pub fn bench_volume(res: usize, feat_len: usize) -> FeatureVolume<f32> {
    let bounds = Aabb::new(
        Vec3::new(-1.0f32, -1.0, -1.0),
        Vec3::new(1.0, 1.0, 1.0),
    )
    .unwrap();
    FeatureVolume::new([res, res, res], feat_len, bounds, 0.05, 42).unwrap()
}

pub fn bench_params(feat_len: usize) -> RenderParams<f32> {
    RenderParams::init(NetDescriptor::desk(feat_len), 42).unwrap()
}
