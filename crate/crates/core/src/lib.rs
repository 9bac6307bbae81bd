//! Editable neural feature volumes for scene rendering.
//!
//! A scene is represented as a dense 3D grid of learned feature vectors
//! ([`FeatureVolume`]) paired with a scene-agnostic radiance network
//! ([`RenderParams`]) that maps sampled features and an encoded view
//! direction to color and density. Images are formed by the volume-rendering
//! quadrature in [`composite`], trained end to end by the loops in [`train`],
//! and edited after training by the grid operations in [`edit`] without
//! touching the renderer.
//!
//! All numeric kernels are generic over [`Scalar`] so production paths run in
//! `f32` while gradient checks and quadrature references run in `f64`.

// index loops are the natural idiom for the fixed-dimension grid and matrix
// math throughout this crate
#![allow(clippy::needless_range_loop)]

pub mod camera;
pub mod composite;
pub mod edit;
pub mod error;
pub mod image;
pub mod math;
pub mod metrics;
pub mod net;
pub mod render;
pub mod sampling;
pub mod scalar;
pub mod scene;
pub mod train;
pub mod volume;

pub use camera::{Camera, Ray};
pub use composite::{composite, composite_backward, PixelEstimate, RadianceSample, SampleBatch};
pub use edit::{CoordField, EditScript, PasteMode};
pub use error::{Error, Result};
pub use image::Image;
pub use math::{Aabb, Affine3, Vec3};
pub use net::{DirEncoding, NetDescriptor, RenderParams, WhichNet};
pub use render::{render_image, render_pixel, RenderConfig};
pub use scalar::Scalar;
pub use scene::{AnalyticOracle, SceneDataset, SyntheticSceneSpec};
pub use train::{evaluate, optimize_novel_scene, train_multi_scene, SceneSlot, TrainConfig};
pub use volume::{FeatureVolume, VolumeGrad, VolumeRegion};
