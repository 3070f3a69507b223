//! Per-pixel embedding encoder trained without labels.
//!
//! A stack of stride-1 dilated 3x3 blocks gathers global context while a
//! parallel 1x1 branch keeps the pixel's own appearance; both are
//! concatenated, projected to `D` channels and L2-normalised per pixel.

mod patches;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::tensor::checkpoint::{Checkpoint, CheckpointError};
use crate::tensor::init::{he_normal, uniform};
use crate::tensor::ops::Conv2dParams;
use crate::tensor::{Graph, ParamSet, Tensor, TensorError, Var};
use crate::thermio::{AugmentConfig, RenderKind, RenderedImage, MIN_FRAME_SIZE};

pub use patches::{contrastive_loss, sample_patches, PatchSet, PixelRef};
pub use train::{contrastive_graph_loss, train_encoder, EncoderTraining};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("encoder training needs at least one image")]
    EmptyDataset,
    #[error("negative sampling needs at least 2 images in the pool, got {0}")]
    InsufficientPool(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} renderings, got {found}")]
    WrongRenderKind { expected: RenderKind, found: RenderKind },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("input vector norm {norm} is not unit")]
    NonUnitInput { norm: f64 },
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<TensorError> for EncoderError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(op) => EncoderError::NonFiniteActivation(op),
            TensorError::ShapeMismatch { op, detail } => EncoderError::ShapeMismatch(format!("{op}: {detail}")),
            other => EncoderError::Tensor(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    /// Output channels of each dilated block.
    pub channels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub local_channels: usize,
    /// Chebyshev radius, in source pixels, within which a positive lies.
    pub positive_radius: usize,
    pub negatives: usize,
    pub temperature: f64,
    pub anchors_per_image: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub render_kind: RenderKind,
    pub augment: AugmentConfig,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 128,
            channels: vec![32; 6],
            dilations: vec![1, 1, 2, 4, 8, 16],
            local_channels: 32,
            positive_radius: 2,
            negatives: 16,
            temperature: 0.1,
            anchors_per_image: 64,
            batch_size: 8,
            epochs: 10,
            learning_rate: 1e-3,
            seed: 0,
            render_kind: RenderKind::Grayscale,
            augment: AugmentConfig::default(),
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.to_string()));
        if self.embedding_dim < 8 {
            return bad("embedding_dim must be >= 8");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be > 0");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if self.positive_radius < 1 {
            return bad("positive_radius must be >= 1");
        }
        if self.dilations.is_empty() || self.dilations.len() != self.channels.len() {
            return bad("dilations and channels must be non-empty and of equal length");
        }
        if self.dilations.contains(&0) || self.channels.contains(&0) || self.local_channels == 0 {
            return bad("dilations and channel widths must be positive");
        }
        if self.anchors_per_image < 1 || self.epochs < 1 {
            return bad("anchors_per_image and epochs must be >= 1");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be >= 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        self.augment
            .validate()
            .map_err(|e| EncoderError::InvalidConfig(e.to_string()))
    }
}

/// `H x W x D` embedding field, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMap<T> {
    height: usize,
    width: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Real> EmbeddingMap<T> {
    pub fn new(height: usize, width: usize, dim: usize, values: Vec<T>) -> Result<Self, EncoderError> {
        if values.len() != height * width * dim {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{dim} map",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// Sample `n` of a `[N, D, H, W]` tensor.
    pub fn from_tensor(t: &Tensor<T>, n: usize) -> Result<Self, EncoderError> {
        let (batch, dim, height, width) = t.dims4("embedding")?;
        if n >= batch {
            return Err(EncoderError::ShapeMismatch(format!("sample {n} of {batch}")));
        }
        let plane = height * width;
        let src = &t.data()[n * dim * plane..(n + 1) * dim * plane];
        let mut values = vec![T::zero(); dim * plane];
        for d in 0..dim {
            for p in 0..plane {
                values[p * dim + d] = src[d * plane + p];
            }
        }
        Self::new(height, width, dim, values)
    }

    /// `[1, D, H, W]`.
    pub fn to_tensor(&self) -> Tensor<T> {
        let plane = self.height * self.width;
        Tensor::from_fn(&[1, self.dim, self.height, self.width], |i| {
            let (d, p) = (i / plane, i % plane);
            self.values[p * self.dim + d]
        })
    }
}

const META_RENDER_KIND: &str = "render_kind";
const META_DIM: &str = "embedding_dim";
const META_DILATIONS: &str = "dilations";

#[derive(Debug, Clone, PartialEq)]
pub struct CutsEncoder<T> {
    params: ParamSet<T>,
    dilations: Vec<usize>,
    render_kind: RenderKind,
    dim: usize,
}

impl<T: Real> CutsEncoder<T> {
    /// He-initialised weights drawn from the config seed.
    pub fn new(cfg: &EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "cuts_encoder/init"));
        let mut params = ParamSet::new();
        let mut in_ch = 3;
        for (i, &c) in cfg.channels.iter().enumerate() {
            params.insert(format!("global.{i}.weight"), he_normal(&[c, in_ch, 3, 3], in_ch * 9, &mut rng));
            params.insert(format!("global.{i}.bias"), Tensor::zeros(&[c]));
            in_ch = c;
        }
        let lc = cfg.local_channels;
        params.insert("local.weight", he_normal(&[lc, 3, 1, 1], 3, &mut rng));
        params.insert("local.bias", Tensor::zeros(&[lc]));
        let cat = in_ch + lc;
        let d = cfg.embedding_dim;
        params.insert("proj.weight", he_normal(&[d, cat, 1, 1], cat, &mut rng));
        params.insert("proj.bias", uniform(&[d], 0.1, &mut rng));
        Ok(Self {
            params,
            dilations: cfg.dilations.clone(),
            render_kind: cfg.render_kind,
            dim: d,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn dilations(&self) -> &[usize] {
        &self.dilations
    }

    /// Rendering type the encoder was trained on.
    pub fn render_kind(&self) -> RenderKind {
        self.render_kind
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    /// Side of the square input window seen by one output pixel.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.dilations.iter().sum::<usize>()
    }

    /// `[N, 3, H, W]` images to `[N, D, H, W]` unit-norm embeddings.
    /// `params` are graph nodes holding [`params`](Self::params), in order.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var, TensorError> {
        let mut h = input;
        for (i, &d) in self.dilations.iter().enumerate() {
            let padded = g.pad_reflect(h, d)?;
            let conv = g.conv2d(
                padded,
                params[2 * i],
                Some(params[2 * i + 1]),
                Conv2dParams::dilated(d),
            )?;
            h = g.relu(conv)?;
        }
        let k = 2 * self.dilations.len();
        let local = g.conv2d(input, params[k], Some(params[k + 1]), Conv2dParams::default())?;
        let local = g.relu(local)?;
        let cat = g.concat(h, local, 1)?;
        let proj = g.conv2d(cat, params[k + 2], Some(params[k + 3]), Conv2dParams::default())?;
        g.l2_normalize(proj, 1, T::lit(1e-12))
    }

    fn check_image(&self, image: &RenderedImage) -> Result<(), EncoderError> {
        if image.height() < MIN_FRAME_SIZE || image.width() < MIN_FRAME_SIZE {
            return Err(EncoderError::ShapeMismatch(format!(
                "{}x{} image is below the {MIN_FRAME_SIZE}x{MIN_FRAME_SIZE} minimum",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Embeds one rendering of either kind; grayscale is replicated to
    /// three channels.
    pub fn embed(&self, image: &RenderedImage) -> Result<EmbeddingMap<T>, EncoderError> {
        Ok(self.embed_batch(std::slice::from_ref(image))?.remove(0))
    }

    /// Embeds equally sized renderings in one pass.
    pub fn embed_batch(&self, images: &[RenderedImage]) -> Result<Vec<EmbeddingMap<T>>, EncoderError> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        for img in images {
            self.check_image(img)?;
            if (img.height(), img.width()) != (images[0].height(), images[0].width()) {
                return Err(EncoderError::ShapeMismatch("batch images differ in size".into()));
            }
        }
        let input = stack_images(images);
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let x = g.constant(input);
        let out = self.forward(&mut g, bound.vars(), x)?;
        (0..images.len())
            .map(|n| EmbeddingMap::from_tensor(g.value(out), n))
            .collect()
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, CheckpointError> {
        let mut ck = Checkpoint::new();
        ck.push_scalar(META_RENDER_KIND, self.render_kind.code())?;
        ck.push_scalar(META_DIM, self.dim as f64)?;
        let dil: Vec<f32> = self.dilations.iter().map(|&d| d as f32).collect();
        ck.push_tensor(META_DILATIONS, &Tensor::new(vec![dil.len()], dil).expect("rank-1"))?;
        ck.push_params(&self.params)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, EncoderError> {
        let bad = |m: String| {
            EncoderError::Checkpoint(CheckpointError::BadEntry {
                name: "encoder".into(),
                detail: m,
            })
        };
        let kind = RenderKind::from_code(ck.scalar(META_RENDER_KIND)?)
            .ok_or_else(|| bad("unknown render_kind".into()))?;
        let dim = ck.scalar(META_DIM)? as usize;
        let dilations: Vec<usize> = ck
            .tensor::<f64>(META_DILATIONS)?
            .data()
            .iter()
            .map(|&d| d as usize)
            .collect();
        let mut channels = Vec::with_capacity(dilations.len());
        for i in 0..dilations.len() {
            let w = ck.tensor::<T>(&format!("global.{i}.weight"))?;
            channels.push(w.shape()[0]);
        }
        let local = ck.tensor::<T>("local.weight")?.shape()[0];
        let cfg = EncoderConfig {
            embedding_dim: dim,
            channels,
            dilations,
            local_channels: local,
            render_kind: kind,
            ..EncoderConfig::default()
        };
        let mut enc = Self::new(&cfg).map_err(|e| bad(e.to_string()))?;
        enc.params = ck.load_params(&enc.params)?;
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<(), EncoderError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// `[N, 3, H, W]` stack of equally sized renderings.
pub(crate) fn stack_images<T: Real>(images: &[RenderedImage]) -> Tensor<T> {
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend_from_slice(img.to_rgb_tensor::<T>().data());
    }
    Tensor::new(vec![images.len(), 3, h, w], data).expect("stacked shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermio::RenderKind;

    fn small() -> EncoderConfig {
        EncoderConfig {
            embedding_dim: 8,
            channels: vec![4; 6],
            local_channels: 4,
            ..EncoderConfig::default()
        }
    }

    fn image(kind: RenderKind, h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f32) -> RenderedImage {
        let c = kind.channels();
        let px = (0..c * h * w).map(|i| f(i / (h * w), (i / w) % h, i % w)).collect();
        RenderedImage::new(kind, h, w, px).unwrap()
    }

    #[test]
    fn output_shape_and_unit_norm() {
        let enc = CutsEncoder::<f32>::new(&small()).unwrap();
        let img = image(RenderKind::Heatmap, 64, 64, |c, y, x| ((c * 7 + y * 3 + x * 5) % 17) as f32 / 16.0);
        let e = enc.embed(&img).unwrap();
        assert_eq!((e.height(), e.width(), e.dim()), (64, 64, 8));
        for y in 0..64 {
            for x in 0..64 {
                let n: f32 = e.pixel(y, x).iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5, "{n} at {y},{x}");
            }
        }
    }

    #[test]
    fn constant_image_gives_constant_embedding() {
        let enc = CutsEncoder::<f64>::new(&small()).unwrap();
        let e = enc.embed(&image(RenderKind::Grayscale, 20, 24, |_, _, _| 0.4)).unwrap();
        let first = e.pixel(0, 0).to_vec();
        for y in 0..20 {
            for x in 0..24 {
                for (a, b) in e.pixel(y, x).iter().zip(&first) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn grayscale_matches_replicated_heatmap() {
        let enc = CutsEncoder::<f64>::new(&small()).unwrap();
        let g = image(RenderKind::Grayscale, 16, 16, |_, y, x| (y * 16 + x) as f32 / 255.0);
        let h = image(RenderKind::Heatmap, 16, 16, |_, y, x| (y * 16 + x) as f32 / 255.0);
        assert_eq!(enc.embed(&g).unwrap(), enc.embed(&h).unwrap());
    }

    #[test]
    fn receptive_field_covers_64() {
        let enc = CutsEncoder::<f32>::new(&EncoderConfig::default()).unwrap();
        assert_eq!(enc.receptive_field(), 65);
    }

    #[test]
    fn too_small_image_rejected() {
        let enc = CutsEncoder::<f32>::new(&small()).unwrap();
        let img = image(RenderKind::Grayscale, 15, 32, |_, _, _| 0.0);
        assert!(matches!(enc.embed(&img), Err(EncoderError::ShapeMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut cfg = small();
        cfg.render_kind = RenderKind::Heatmap;
        cfg.dilations = vec![1, 2, 3, 1, 1, 1];
        let enc = CutsEncoder::<f32>::new(&cfg).unwrap();
        let ck = enc.to_checkpoint().unwrap();
        assert_eq!(ck.scalar("render_kind").unwrap(), RenderKind::Heatmap.code());
        assert_eq!(ck.scalar("embedding_dim").unwrap(), 8.0);
        let back = CutsEncoder::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.to_checkpoint().unwrap().to_bytes(), ck.to_bytes());
    }

    #[test]
    fn config_validation() {
        let mut c = small();
        c.embedding_dim = 7;
        assert!(c.validate().is_err());
        let mut c = small();
        c.temperature = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.negatives = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.positive_radius = 0;
        assert!(c.validate().is_err());
        assert!(small().validate().is_ok());
    }
}
