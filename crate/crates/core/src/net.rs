//! The shared radiance network: a ReLU trunk over the sampled feature vector
//! with a skip concatenation, a softplus density head, and a sigmoid color
//! branch conditioned on the positionally encoded view direction. Density is
//! produced before the direction branch, so it cannot depend on the view.
//!
//! Coarse and fine networks share one architecture descriptor but carry
//! independent weights. Forward passes fill a reusable [`ForwardCache`];
//! [`RenderParams::backward`] replays it for exact reverse-mode gradients of
//! every parameter and of the input feature.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{fnv1a64, Vec3};
use crate::scalar::{axpy, dot, Scalar};

const NET_MAGIC: &[u8; 8] = b"CNRFNET1";

/// Architecture of one radiance network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDescriptor {
    /// Input feature length `F`.
    pub feat_len: usize,
    /// Positional-encoding order `L` for the view direction (6·L scalars).
    pub enc_levels: usize,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    /// Trunk layer whose input is the concatenation of the previous hidden
    /// state and the raw feature. Must lie in `1..trunk_depth`.
    pub skip_layer: usize,
    pub bottleneck: usize,
    pub branch_width: usize,
}

impl NetDescriptor {
    /// Full-scale preset: 8x256 trunk with skip at 4, 256 bottleneck,
    /// 128-wide direction branch, F=64, L=4.
    pub fn full(feat_len: usize) -> Self {
        Self {
            feat_len,
            enc_levels: 4,
            trunk_depth: 8,
            trunk_width: 256,
            skip_layer: 4,
            bottleneck: 256,
            branch_width: 128,
        }
    }

    /// Desk-scale preset: 4x64 trunk with skip at 2, 32-wide branch.
    pub fn desk(feat_len: usize) -> Self {
        Self {
            feat_len,
            enc_levels: 4,
            trunk_depth: 4,
            trunk_width: 64,
            skip_layer: 2,
            bottleneck: 64,
            branch_width: 32,
        }
    }

    /// Minimal preset for finite-difference gradient checks.
    pub fn tiny(feat_len: usize) -> Self {
        Self {
            feat_len,
            enc_levels: 1,
            trunk_depth: 2,
            trunk_width: 8,
            skip_layer: 1,
            bottleneck: 8,
            branch_width: 8,
        }
    }

    pub fn enc_len(&self) -> usize {
        6 * self.enc_levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.feat_len < 1
            || self.enc_levels < 1
            || self.trunk_depth < 2
            || self.trunk_width < 1
            || self.bottleneck < 1
            || self.branch_width < 1
        {
            return Err(Error::invalid("net descriptor fields must be positive"));
        }
        if self.skip_layer == 0 || self.skip_layer >= self.trunk_depth {
            return Err(Error::invalid(format!(
                "skip_layer must lie in 1..trunk_depth, got {} of {}",
                self.skip_layer, self.trunk_depth
            )));
        }
        Ok(())
    }

    fn trunk_in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.feat_len
        } else if layer == self.skip_layer {
            self.trunk_width + self.feat_len
        } else {
            self.trunk_width
        }
    }

    /// Parameters of one network under this descriptor.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        for l in 0..self.trunk_depth {
            n += self.trunk_in_dim(l) * self.trunk_width + self.trunk_width;
        }
        n += self.trunk_width + 1; // sigma head
        n += self.trunk_width * self.bottleneck + self.bottleneck;
        let dir_in = self.bottleneck + self.enc_len();
        n += dir_in * self.branch_width + self.branch_width;
        n += self.branch_width * 3 + 3;
        n
    }
}

/// Selects the coarse or fine network of a [`RenderParams`] pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WhichNet {
    Coarse,
    Fine,
}

/// Radiance output at one sample: color in `[0,1]^3` and density >= 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadianceSample<T> {
    pub color: [T; 3],
    pub sigma: T,
}

impl<T: Scalar> RadianceSample<T> {
    pub fn vacuum() -> Self {
        Self {
            color: [T::zero(); 3],
            sigma: T::zero(),
        }
    }
}

/// Sin/cos frequency lift of a unit direction: for each of x, y, z the
/// pairs `(sin(2^l pi d), cos(2^l pi d))` for `l` in `0..L`, dimension-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DirEncoding<T>(pub Vec<T>);

impl<T: Scalar> DirEncoding<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Positional encoding of a unit view direction.
pub fn pos_encode<T: Scalar>(d: Vec3<T>, levels: usize) -> Result<DirEncoding<T>> {
    let norm = d.norm().to_f64_lossy();
    if !(norm - 1.0).abs().is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!(
            "direction must be unit length (|d| = {norm})"
        )));
    }
    let pi = T::c(std::f64::consts::PI);
    let mut out = Vec::with_capacity(6 * levels);
    for comp in [d.x, d.y, d.z] {
        let mut freq = pi;
        for _ in 0..levels {
            let arg = freq * comp;
            out.push(arg.sin());
            out.push(arg.cos());
            freq = freq + freq;
        }
    }
    Ok(DirEncoding(out))
}

#[derive(Debug, Clone)]
struct Linear<T> {
    w: Vec<T>, // row-major [out][in]
    b: Vec<T>,
    in_dim: usize,
    out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    fn init(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // He-style fan-in scaled uniform; biases start at zero.
        let limit = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| T::c((rng.random::<f64>() * 2.0 - 1.0) * limit))
            .collect();
        Self {
            w,
            b: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    #[inline]
    fn forward(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for (o, (row, bias)) in out
            .iter_mut()
            .zip(self.w.chunks_exact(self.in_dim).zip(&self.b))
        {
            *o = *bias + dot(row, x);
        }
    }

    /// Accumulates dW += delta (x) x, db += delta and writes dx = W^T delta.
    fn backward(&self, x: &[T], delta: &[T], gw: &mut [T], gb: &mut [T], dx: &mut [T]) {
        debug_assert_eq!(delta.len(), self.out_dim);
        dx.fill(T::zero());
        for (o, &d) in delta.iter().enumerate() {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let grow = &mut gw[o * self.in_dim..(o + 1) * self.in_dim];
            axpy(grow, d, x);
            gb[o] = gb[o] + d;
            axpy(dx, d, row);
        }
    }
}

/// One radiance network (trunk + heads).
#[derive(Debug, Clone)]
struct Mlp<T> {
    trunk: Vec<Linear<T>>,
    sigma: Linear<T>,
    bottleneck: Linear<T>,
    dir: Linear<T>,
    rgb: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    fn init(desc: &NetDescriptor, rng: &mut impl Rng) -> Self {
        let trunk = (0..desc.trunk_depth)
            .map(|l| Linear::init(desc.trunk_in_dim(l), desc.trunk_width, rng))
            .collect();
        Self {
            trunk,
            sigma: Linear::init(desc.trunk_width, 1, rng),
            bottleneck: Linear::init(desc.trunk_width, desc.bottleneck, rng),
            dir: Linear::init(desc.bottleneck + desc.enc_len(), desc.branch_width, rng),
            rgb: Linear::init(desc.branch_width, 3, rng),
        }
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a [T])) {
        for layer in &self.trunk {
            f(&layer.w);
            f(&layer.b);
        }
        for layer in [&self.sigma, &self.bottleneck, &self.dir, &self.rgb] {
            f(&layer.w);
            f(&layer.b);
        }
    }

    fn visit_mut(&mut self, f: &mut impl FnMut(&mut [T])) {
        for layer in &mut self.trunk {
            f(&mut layer.w);
            f(&mut layer.b);
        }
        for layer in [
            &mut self.sigma,
            &mut self.bottleneck,
            &mut self.dir,
            &mut self.rgb,
        ] {
            f(&mut layer.w);
            f(&mut layer.b);
        }
    }
}

/// Gradient buffer mirroring one network's tensors, in declaration order.
#[derive(Debug, Clone)]
pub struct MlpGrads<T> {
    tensors: Vec<Vec<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    fn zeros_like(mlp: &Mlp<T>) -> Self {
        let mut tensors = Vec::new();
        mlp.visit(&mut |t| tensors.push(vec![T::zero(); t.len()]));
        Self { tensors }
    }

    pub fn merge(&mut self, other: &MlpGrads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            axpy(a, T::one(), b);
        }
    }

    pub fn zero(&mut self) {
        for t in &mut self.tensors {
            t.fill(T::zero());
        }
    }

    pub fn tensors(&self) -> &[Vec<T>] {
        &self.tensors
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.iter().all(|v| *v == T::zero()))
    }
}

/// Gradients for the coarse/fine pair.
#[derive(Debug, Clone)]
pub struct NetGrads<T> {
    pub coarse: MlpGrads<T>,
    pub fine: MlpGrads<T>,
}

impl<T: Scalar> NetGrads<T> {
    pub fn zeros_like(params: &RenderParams<T>) -> Self {
        Self {
            coarse: MlpGrads::zeros_like(&params.coarse),
            fine: MlpGrads::zeros_like(&params.fine),
        }
    }

    pub fn merge(&mut self, other: &NetGrads<T>) {
        self.coarse.merge(&other.coarse);
        self.fine.merge(&other.fine);
    }

    pub fn zero(&mut self) {
        self.coarse.zero();
        self.fine.zero();
    }

    pub fn side_mut(&mut self, which: WhichNet) -> &mut MlpGrads<T> {
        match which {
            WhichNet::Coarse => &mut self.coarse,
            WhichNet::Fine => &mut self.fine,
        }
    }

    /// Every gradient tensor, coarse first then fine, in the same order the
    /// parameter visitors walk.
    pub fn flat_tensors(&self) -> Vec<&[T]> {
        self.coarse
            .tensors
            .iter()
            .chain(self.fine.tensors.iter())
            .map(|v| v.as_slice())
            .collect()
    }
}

/// Cached activations of one forward pass, reusable across samples.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    which: Option<WhichNet>,
    feature: Vec<T>,
    enc: Vec<T>,
    trunk_out: Vec<Vec<T>>, // post-relu per trunk layer
    skip_input: Vec<T>,     // concat fed to the skip layer
    sigma_pre: T,
    bneck: Vec<T>,
    dir_in: Vec<T>,
    dir_hidden: Vec<T>, // post-relu
    rgb_pre: [T; 3],
    // scratch for backward
    buf_a: Vec<T>,
    buf_b: Vec<T>,
    buf_c: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn new(desc: &NetDescriptor) -> Self {
        let w = desc.trunk_width;
        let max_in = w + desc.feat_len + desc.enc_len() + desc.bottleneck;
        Self {
            which: None,
            feature: vec![T::zero(); desc.feat_len],
            enc: vec![T::zero(); desc.enc_len()],
            trunk_out: (0..desc.trunk_depth).map(|_| vec![T::zero(); w]).collect(),
            skip_input: vec![T::zero(); w + desc.feat_len],
            sigma_pre: T::zero(),
            bneck: vec![T::zero(); desc.bottleneck],
            dir_in: vec![T::zero(); desc.bottleneck + desc.enc_len()],
            dir_hidden: vec![T::zero(); desc.branch_width],
            rgb_pre: [T::zero(); 3],
            buf_a: vec![T::zero(); max_in],
            buf_b: vec![T::zero(); max_in],
            buf_c: vec![T::zero(); max_in],
        }
    }
}

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + exp(-|x|)) is stable for large |x|
    x.max(T::zero()) + (T::one() + (-x.abs()).exp()).ln()
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Weights of the coarse/fine radiance network pair.
#[derive(Debug, Clone)]
pub struct RenderParams<T> {
    desc: NetDescriptor,
    coarse: Mlp<T>,
    fine: Mlp<T>,
}

impl<T: Scalar> RenderParams<T> {
    pub fn init(desc: NetDescriptor, seed: u64) -> Result<Self> {
        desc.validate()?;
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let coarse = Mlp::init(&desc, &mut rng);
        let fine = Mlp::init(&desc, &mut rng);
        Ok(Self { desc, coarse, fine })
    }

    pub fn descriptor(&self) -> &NetDescriptor {
        &self.desc
    }

    fn side(&self, which: WhichNet) -> &Mlp<T> {
        match which {
            WhichNet::Coarse => &self.coarse,
            WhichNet::Fine => &self.fine,
        }
    }

    /// Total scalar parameters across both networks.
    pub fn param_count(&self) -> usize {
        2 * self.desc.param_count()
    }

    /// Copies the fine network's weights into the coarse slot (or back);
    /// used by tests that need an identical pair.
    pub fn tie_networks(&mut self) {
        self.coarse = self.fine.clone();
    }

    pub fn visit(&self, mut f: impl FnMut(&[T])) {
        self.coarse.visit(&mut f);
        self.fine.visit(&mut f);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [T])) {
        self.coarse.visit_mut(&mut f);
        self.fine.visit_mut(&mut f);
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    /// Evaluates one network on a sampled feature and encoded direction.
    pub fn forward(
        &self,
        which: WhichNet,
        feature: &[T],
        enc: &DirEncoding<T>,
        cache: &mut ForwardCache<T>,
    ) -> Result<RadianceSample<T>> {
        self.forward_noisy(which, feature, enc, T::zero(), cache)
    }

    /// Forward pass with additive noise on the density pre-activation
    /// (training-time regularization; zero noise is the plain forward).
    /// The cache stores the noisy pre-activation, so the backward pass is
    /// exact for the perturbed output.
    pub fn forward_noisy(
        &self,
        which: WhichNet,
        feature: &[T],
        enc: &DirEncoding<T>,
        sigma_noise: T,
        cache: &mut ForwardCache<T>,
    ) -> Result<RadianceSample<T>> {
        let desc = &self.desc;
        if feature.len() != desc.feat_len {
            return Err(Error::invalid(format!(
                "feature length {} does not match descriptor F={}",
                feature.len(),
                desc.feat_len
            )));
        }
        if enc.len() != desc.enc_len() {
            return Err(Error::invalid(format!(
                "encoding length {} does not match 6L={}",
                enc.len(),
                desc.enc_len()
            )));
        }
        let mlp = self.side(which);
        cache.which = Some(which);
        cache.feature.copy_from_slice(feature);
        cache.enc.copy_from_slice(enc.as_slice());

        mlp.trunk[0].forward(feature, &mut cache.trunk_out[0]);
        relu_inplace(&mut cache.trunk_out[0]);
        for l in 1..desc.trunk_depth {
            if l == desc.skip_layer {
                let w = desc.trunk_width;
                let (prev, rest) = cache.trunk_out.split_at_mut(l);
                cache.skip_input[..w].copy_from_slice(&prev[l - 1]);
                cache.skip_input[w..].copy_from_slice(feature);
                mlp.trunk[l].forward(&cache.skip_input, &mut rest[0]);
            } else {
                let (prev, rest) = cache.trunk_out.split_at_mut(l);
                mlp.trunk[l].forward(&prev[l - 1], &mut rest[0]);
            }
            relu_inplace(&mut cache.trunk_out[l]);
        }
        let h_last = &cache.trunk_out[desc.trunk_depth - 1];

        let mut sig = [T::zero()];
        mlp.sigma.forward(h_last, &mut sig);
        cache.sigma_pre = sig[0] + sigma_noise;
        let sigma = softplus(cache.sigma_pre);

        mlp.bottleneck.forward(h_last, &mut cache.bneck);
        cache.dir_in[..desc.bottleneck].copy_from_slice(&cache.bneck);
        cache.dir_in[desc.bottleneck..].copy_from_slice(enc.as_slice());
        mlp.dir.forward(&cache.dir_in, &mut cache.dir_hidden);
        relu_inplace(&mut cache.dir_hidden);
        let mut rgb_pre = [T::zero(); 3];
        mlp.rgb.forward(&cache.dir_hidden, &mut rgb_pre);
        cache.rgb_pre = rgb_pre;

        Ok(RadianceSample {
            color: [
                sigmoid(rgb_pre[0]),
                sigmoid(rgb_pre[1]),
                sigmoid(rgb_pre[2]),
            ],
            sigma,
        })
    }

    /// Reverse pass for the forward call that filled `cache`. Parameter
    /// gradients accumulate into `grads`; the feature gradient accumulates
    /// into `d_feature`. The cache's scratch buffers are reused, so the same
    /// cache serves forward/backward pairs without allocation.
    pub fn backward(
        &self,
        which: WhichNet,
        cache: &mut ForwardCache<T>,
        d_color: [T; 3],
        d_sigma: T,
        grads: &mut NetGrads<T>,
        d_feature: &mut [T],
    ) -> Result<()> {
        if cache.which != Some(which) {
            return Err(Error::invalid(
                "backward cache does not match the requested network",
            ));
        }
        if d_feature.len() != self.desc.feat_len {
            return Err(Error::invalid("d_feature length must equal F"));
        }
        let desc = &self.desc;
        let mlp = self.side(which);
        let g = grads.side_mut(which);
        let ForwardCache {
            feature,
            trunk_out,
            skip_input,
            sigma_pre,
            dir_in,
            dir_hidden,
            rgb_pre,
            buf_a,
            buf_b,
            buf_c,
            ..
        } = cache;

        // rgb head: c = sigmoid(pre), dc/dpre = c (1 - c)
        let mut delta_rgb = [T::zero(); 3];
        for i in 0..3 {
            let c = sigmoid(rgb_pre[i]);
            delta_rgb[i] = d_color[i] * c * (T::one() - c);
        }
        let (gw, gb) = grad_pair(g, desc.trunk_depth + 3); // rgb tensors
        let d_dir_hidden = &mut buf_a[..desc.branch_width];
        mlp.rgb.backward(dir_hidden, &delta_rgb, gw, gb, d_dir_hidden);
        for (d, h) in d_dir_hidden.iter_mut().zip(dir_hidden.iter()) {
            if *h <= T::zero() {
                *d = T::zero();
            }
        }
        let (gw, gb) = grad_pair(g, desc.trunk_depth + 2); // dir tensors
        let d_dir_in = &mut buf_b[..desc.bottleneck + desc.enc_len()];
        mlp.dir.backward(dir_in, d_dir_hidden, gw, gb, d_dir_in);
        // bottleneck part flows back; the encoding part is discarded
        let d_bneck = &d_dir_in[..desc.bottleneck];

        // h_last accumulates from the bottleneck and the sigma head
        let d_hidden = &mut buf_c[..desc.trunk_width];
        let (gw, gb) = grad_pair(g, desc.trunk_depth + 1); // bottleneck tensors
        let h_last = &trunk_out[desc.trunk_depth - 1];
        mlp.bottleneck.backward(h_last, d_bneck, gw, gb, d_hidden);

        let delta_sigma = [d_sigma * sigmoid(*sigma_pre)];
        let (gw, gb) = grad_pair(g, desc.trunk_depth); // sigma tensors
        let d_from_sigma = &mut buf_a[..desc.trunk_width];
        mlp.sigma.backward(h_last, &delta_sigma, gw, gb, d_from_sigma);
        for (c, a) in d_hidden.iter_mut().zip(d_from_sigma.iter()) {
            *c = *c + *a;
        }

        // trunk, last layer to first; d_hidden holds the gradient of the
        // current layer's post-activation output
        for l in (0..desc.trunk_depth).rev() {
            for (d, h) in d_hidden.iter_mut().zip(trunk_out[l].iter()) {
                if *h <= T::zero() {
                    *d = T::zero();
                }
            }
            let input: &[T] = if l == 0 {
                feature
            } else if l == desc.skip_layer {
                skip_input
            } else {
                &trunk_out[l - 1]
            };
            let (gw, gb) = grad_pair(g, l);
            let dx = &mut buf_b[..input.len()];
            mlp.trunk[l].backward(input, d_hidden, gw, gb, dx);
            if l == 0 {
                axpy(d_feature, T::one(), dx);
            } else if l == desc.skip_layer {
                let w = desc.trunk_width;
                d_hidden.copy_from_slice(&dx[..w]);
                axpy(d_feature, T::one(), &dx[w..]);
            } else {
                d_hidden.copy_from_slice(dx);
            }
        }
        Ok(())
    }

    /// Serializes both networks: magic, descriptor as `u32`s, then every
    /// tensor as little-endian `f32` in declaration order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(NET_MAGIC);
        for v in [
            self.desc.feat_len,
            self.desc.enc_levels,
            self.desc.trunk_depth,
            self.desc.trunk_width,
            self.desc.skip_layer,
            self.desc.bottleneck,
            self.desc.branch_width,
        ] {
            bytes.extend_from_slice(&(v as u32).to_le_bytes());
        }
        self.visit(|t| {
            for v in t {
                bytes.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
        });
        bytes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != NET_MAGIC {
            return Err(Error::format("magic", "expected CNRFNET1"));
        }
        if bytes.len() < 8 + 7 * 4 {
            return Err(Error::format("descriptor", "file truncated"));
        }
        let mut fields = [0usize; 7];
        for (i, f) in fields.iter_mut().enumerate() {
            let off = 8 + i * 4;
            let raw = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if raw > 1 << 20 {
                return Err(Error::format("descriptor", "field out of range"));
            }
            *f = raw as usize;
        }
        let desc = NetDescriptor {
            feat_len: fields[0],
            enc_levels: fields[1],
            trunk_depth: fields[2],
            trunk_width: fields[3],
            skip_layer: fields[4],
            bottleneck: fields[5],
            branch_width: fields[6],
        };
        desc.validate()
            .map_err(|e| Error::format("descriptor", e.to_string()))?;
        let expected = 8 + 7 * 4 + 2 * desc.param_count() * 4;
        if bytes.len() != expected {
            return Err(Error::format(
                "tensors",
                format!("expected {expected} bytes, got {}", bytes.len()),
            ));
        }
        let mut params = Self::init(desc, 0)?;
        let mut off = 8 + 7 * 4;
        params.visit_mut(|t| {
            for v in t.iter_mut() {
                let raw = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                *v = T::from_f32c(raw);
                off += 4;
            }
        });
        if !params.all_finite() {
            return Err(Error::format("tensors", "non-finite weight"));
        }
        Ok(params)
    }

    /// Content hash of the serialized weights; volumes trained against these
    /// weights carry it for cross-scene compatibility checks.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(&self.to_bytes())
    }
}

#[inline]
fn relu_inplace<T: Scalar>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Tensor index layout per network: trunk layers (w, b) in order, then
/// sigma, bottleneck, dir, rgb pairs.
fn grad_pair<T: Scalar>(g: &mut MlpGrads<T>, tensor: usize) -> (&mut [T], &mut [T]) {
    let i = tensor * 2;
    let (a, b) = g.tensors.split_at_mut(i + 1);
    (&mut a[i], &mut b[0])
}


#[cfg(test)]
mod noise_tests {
    use super::*;

    #[test]
    fn sigma_noise_moves_density_only() {
        let params = RenderParams::<f64>::init(NetDescriptor::tiny(4), 90).unwrap();
        let feature = [0.3, -0.2, 0.6, 0.1];
        let enc = pos_encode(Vec3::new(0.0, 0.0, 1.0), 1).unwrap();
        let mut cache = ForwardCache::new(params.descriptor());
        let clean = params
            .forward(WhichNet::Coarse, &feature, &enc, &mut cache)
            .unwrap();
        let noisy = params
            .forward_noisy(WhichNet::Coarse, &feature, &enc, 1.5, &mut cache)
            .unwrap();
        assert_eq!(clean.color, noisy.color, "noise must not touch color");
        assert!(noisy.sigma > clean.sigma, "positive noise raises softplus");
        let damped = params
            .forward_noisy(WhichNet::Coarse, &feature, &enc, -50.0, &mut cache)
            .unwrap();
        assert!(damped.sigma < 1e-12, "large negative noise kills density");
        assert!(damped.sigma >= 0.0);
    }
}
