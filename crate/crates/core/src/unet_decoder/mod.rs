//! Supervised UNet decoders over frozen embedding maps.

mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts_encoder::{EmbeddingMap, EncoderError};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::tensor::checkpoint::{Checkpoint, CheckpointError};
use crate::tensor::init::he_normal;
use crate::tensor::ops::{softmax, Conv2dParams};
use crate::tensor::{Graph, ParamSet, Tensor, TensorError, Var};
use crate::thermio::{ClassLabel, RenderKind, RenderedImage, SegMask, NUM_CLASSES};

pub use train::{train_decoder, DecoderTraining, LabeledSample};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("invalid decoder configuration: {0}")]
    InvalidConfig(String),
    #[error("decoder training needs at least one sample")]
    EmptyDataset,
    #[error("sample {0} lacks the label required by the task")]
    MissingLabel(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected {expected} renderings, got {found}")]
    WrongRenderKind { expected: RenderKind, found: RenderKind },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<TensorError> for DecoderError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite(op) => DecoderError::NonFiniteActivation(op),
            TensorError::ShapeMismatch { op, detail } => DecoderError::ShapeMismatch(format!("{op}: {detail}")),
            other => DecoderError::Tensor(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Segmentation,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Classification, Task::Segmentation];

    pub fn name(self) -> &'static str {
        match self {
            Task::Classification => "classification",
            Task::Segmentation => "segmentation",
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Task::Classification => 0.0,
            Task::Segmentation => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code {
            c if c == 0.0 => Some(Task::Classification),
            c if c == 1.0 => Some(Task::Segmentation),
            _ => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "classification" => Ok(Task::Classification),
            "segmentation" => Ok(Task::Segmentation),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub task: Task,
    pub depth: usize,
    pub base_width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Rendering type fed through the frozen encoder.
    pub render_kind: RenderKind,
    /// Append the 3-channel rendering to the embedding channels.
    pub concat_rendering: bool,
    pub shuffle: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            task: Task::Segmentation,
            depth: 3,
            base_width: 32,
            epochs: 60,
            learning_rate: 1e-3,
            batch_size: 4,
            seed: 0,
            render_kind: RenderKind::Grayscale,
            concat_rendering: false,
            shuffle: true,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        let bad = |m: &str| Err(DecoderError::InvalidConfig(m.to_string()));
        if self.depth < 2 {
            return bad("depth must be >= 2");
        }
        if self.base_width < 8 {
            return bad("base_width must be >= 8");
        }
        if self.epochs < 1 || self.batch_size < 1 {
            return bad("epochs and batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

/// Benign/malignant scores; index 0 is benign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassLogits<T> {
    pub values: [T; 2],
}

impl<T: Real> ClassLogits<T> {
    pub fn probabilities(&self) -> [T; 2] {
        let t = Tensor::new(vec![2], self.values.to_vec()).expect("two logits");
        let p = softmax(&t, 0).expect("axis 0");
        [p.data()[0], p.data()[1]]
    }

    /// Ties go to benign.
    pub fn predicted(&self) -> ClassLabel {
        if self.values[1] > self.values[0] {
            ClassLabel::Malignant
        } else {
            ClassLabel::Benign
        }
    }
}

/// `H x W x 8` scores, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegLogits<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Real> SegLogits<T> {
    /// Sample `n` of a `[N, 8, H, W]` tensor.
    fn from_tensor(t: &Tensor<T>, n: usize) -> Result<Self, DecoderError> {
        let emb = EmbeddingMap::from_tensor(t, n)?;
        Ok(Self {
            height: emb.height(),
            width: emb.width(),
            values: emb.values().to_vec(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let start = (y * self.width + x) * NUM_CLASSES;
        &self.values[start..start + NUM_CLASSES]
    }

    /// Per-pixel argmax; ties go to the lower label.
    pub fn argmax(&self) -> SegMask {
        let labels = self
            .values
            .chunks(NUM_CLASSES)
            .map(|px| {
                let mut best = 0;
                for k in 1..NUM_CLASSES {
                    if px[k] > px[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        SegMask::new(self.height, self.width, labels).expect("argmax labels are in range")
    }
}

const META_TASK: &str = "task";
const META_ENCODER_KIND: &str = "encoder_render_kind";
const META_DECODER_KIND: &str = "decoder_render_kind";
const META_DEPTH: &str = "depth";
const META_CONCAT: &str = "concat_rendering";

#[derive(Debug, Clone, PartialEq)]
pub struct UNet<T> {
    params: ParamSet<T>,
    task: Task,
    depth: usize,
    in_channels: usize,
    concat_rendering: bool,
    encoder_render_kind: RenderKind,
    decoder_render_kind: RenderKind,
}

fn double_conv<T: Real, R: rand::Rng>(params: &mut ParamSet<T>, prefix: &str, cin: usize, cout: usize, rng: &mut R) {
    params.insert(format!("{prefix}.conv1"), he_normal(&[cout, cin, 3, 3], cin * 9, rng));
    params.insert(format!("{prefix}.gamma1"), Tensor::full(&[cout], T::one()));
    params.insert(format!("{prefix}.beta1"), Tensor::zeros(&[cout]));
    params.insert(format!("{prefix}.conv2"), he_normal(&[cout, cout, 3, 3], cout * 9, rng));
    params.insert(format!("{prefix}.gamma2"), Tensor::full(&[cout], T::one()));
    params.insert(format!("{prefix}.beta2"), Tensor::zeros(&[cout]));
}

struct Cursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Cursor<'_> {
    fn take(&mut self) -> Var {
        self.next += 1;
        self.vars[self.next - 1]
    }
}

fn double_conv_forward<T: Real>(g: &mut Graph<T>, p: &mut Cursor<'_>, x: Var) -> Result<Var, TensorError> {
    let mut h = x;
    for _ in 0..2 {
        let padded = g.pad_reflect(h, 1)?;
        let conv = g.conv2d(padded, p.take(), None, Conv2dParams::default())?;
        let norm = g.instance_norm(conv, T::lit(1e-5))?;
        let (gamma, beta) = (p.take(), p.take());
        let affine = g.channel_affine(norm, gamma, beta)?;
        h = g.relu(affine)?;
    }
    Ok(h)
}

impl<T: Real> UNet<T> {
    /// Fresh decoder for `embedding_dim`-channel embeddings produced by an
    /// encoder trained on `encoder_render_kind`.
    pub fn new(cfg: &DecoderConfig, embedding_dim: usize, encoder_render_kind: RenderKind) -> Result<Self, DecoderError> {
        cfg.validate()?;
        let in_channels = embedding_dim + if cfg.concat_rendering { 3 } else { 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("unet_decoder/{}/init", cfg.task)));
        let mut params = ParamSet::new();
        let widths: Vec<usize> = (0..=cfg.depth).map(|i| cfg.base_width << i).collect();
        let mut cin = in_channels;
        for (i, &w) in widths[..cfg.depth].iter().enumerate() {
            double_conv(&mut params, &format!("down.{i}"), cin, w, &mut rng);
            cin = w;
        }
        double_conv(&mut params, "bottleneck", cin, widths[cfg.depth], &mut rng);
        match cfg.task {
            Task::Segmentation => {
                let mut below = widths[cfg.depth];
                for i in (0..cfg.depth).rev() {
                    double_conv(&mut params, &format!("up.{i}"), below + widths[i], widths[i], &mut rng);
                    below = widths[i];
                }
                params.insert("head.weight", he_normal(&[NUM_CLASSES, below, 1, 1], below, &mut rng));
                params.insert("head.bias", Tensor::zeros(&[NUM_CLASSES]));
            }
            Task::Classification => {
                let c = widths[cfg.depth];
                params.insert("fc.weight", he_normal(&[2, c], c, &mut rng));
                params.insert("fc.bias", Tensor::zeros(&[2]));
            }
        }
        Ok(Self {
            params,
            task: cfg.task,
            depth: cfg.depth,
            in_channels,
            concat_rendering: cfg.concat_rendering,
            encoder_render_kind,
            decoder_render_kind: cfg.render_kind,
        })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn concat_rendering(&self) -> bool {
        self.concat_rendering
    }

    pub fn encoder_render_kind(&self) -> RenderKind {
        self.encoder_render_kind
    }

    pub fn decoder_render_kind(&self) -> RenderKind {
        self.decoder_render_kind
    }

    /// `[N, C, H, W]` input to `[N, 8, H, W]` segmentation logits or
    /// `[N, 2]` class logits. Inputs whose sides are not multiples of
    /// `2^depth` are reflect-padded and the logits cropped back.
    pub fn forward(&self, g: &mut Graph<T>, params: &[Var], input: Var) -> Result<Var, TensorError> {
        let (_, _, h, w) = g.value(input).dims4("unet")?;
        let m = 1usize << self.depth;
        let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let x = if (ph, pw) == (h, w) {
            input
        } else {
            g.pad_reflect_asym(input, 0, ph - h, 0, pw - w)?
        };
        let mut p = Cursor { vars: params, next: 0 };
        let mut skips = Vec::with_capacity(self.depth);
        let mut cur = x;
        for _ in 0..self.depth {
            let f = double_conv_forward(g, &mut p, cur)?;
            skips.push(f);
            cur = g.maxpool2(f)?;
        }
        cur = double_conv_forward(g, &mut p, cur)?;
        match self.task {
            Task::Classification => {
                let pooled = g.global_avg_pool(cur)?;
                let (wt, b) = (p.take(), p.take());
                g.linear(pooled, wt, Some(b))
            }
            Task::Segmentation => {
                for skip in skips.into_iter().rev() {
                    let up = g.upsample_bilinear(cur, 2)?;
                    let cat = g.concat(up, skip, 1)?;
                    cur = double_conv_forward(g, &mut p, cat)?;
                }
                let (wt, b) = (p.take(), p.take());
                let logits = g.conv2d(cur, wt, Some(b), Conv2dParams::default())?;
                if (ph, pw) == (h, w) {
                    Ok(logits)
                } else {
                    g.crop(logits, h, w)
                }
            }
        }
    }

    /// `[1, C, H, W]` decoder input for one sample.
    pub fn input_tensor(&self, emb: &EmbeddingMap<T>, image: Option<&RenderedImage>) -> Result<Tensor<T>, DecoderError> {
        if emb.dim() + if self.concat_rendering { 3 } else { 0 } != self.in_channels {
            return Err(DecoderError::ShapeMismatch(format!(
                "decoder expects {} input channels, embedding has {}",
                self.in_channels,
                emb.dim()
            )));
        }
        let t = emb.to_tensor();
        if !self.concat_rendering {
            return Ok(t);
        }
        let img = image.ok_or_else(|| DecoderError::ShapeMismatch("decoder needs the rendering as input".into()))?;
        if (img.height(), img.width()) != (emb.height(), emb.width()) {
            return Err(DecoderError::ShapeMismatch("rendering and embedding differ in size".into()));
        }
        Ok(crate::tensor::ops::concat(&t, &img.to_rgb_tensor(), 1)?)
    }

    fn run(&self, input: Tensor<T>) -> Result<Tensor<T>, DecoderError> {
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let x = g.constant(input);
        let out = self.forward(&mut g, bound.vars(), x)?;
        Ok(g.value(out).clone())
    }

    fn expect_task(&self, task: Task) -> Result<(), DecoderError> {
        if self.task != task {
            return Err(DecoderError::InvalidConfig(format!("decoder was built for {}", self.task)));
        }
        Ok(())
    }

    pub fn segment(&self, emb: &EmbeddingMap<T>, image: Option<&RenderedImage>) -> Result<SegLogits<T>, DecoderError> {
        self.expect_task(Task::Segmentation)?;
        let out = self.run(self.input_tensor(emb, image)?)?;
        SegLogits::from_tensor(&out, 0)
    }

    pub fn classify(&self, emb: &EmbeddingMap<T>, image: Option<&RenderedImage>) -> Result<ClassLogits<T>, DecoderError> {
        self.expect_task(Task::Classification)?;
        let out = self.run(self.input_tensor(emb, image)?)?;
        Ok(ClassLogits {
            values: [out.data()[0], out.data()[1]],
        })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint, CheckpointError> {
        let mut ck = Checkpoint::new();
        ck.push_scalar(META_TASK, self.task.code())?;
        ck.push_scalar(META_ENCODER_KIND, self.encoder_render_kind.code())?;
        ck.push_scalar(META_DECODER_KIND, self.decoder_render_kind.code())?;
        ck.push_scalar(META_DEPTH, self.depth as f64)?;
        ck.push_scalar(META_CONCAT, if self.concat_rendering { 1.0 } else { 0.0 })?;
        ck.push_params(&self.params)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, DecoderError> {
        let bad = |detail: &str| {
            DecoderError::Checkpoint(CheckpointError::BadEntry {
                name: "decoder".into(),
                detail: detail.into(),
            })
        };
        let task = Task::from_code(ck.scalar(META_TASK)?).ok_or_else(|| bad("unknown task"))?;
        let enc_kind = RenderKind::from_code(ck.scalar(META_ENCODER_KIND)?).ok_or_else(|| bad("unknown render kind"))?;
        let dec_kind = RenderKind::from_code(ck.scalar(META_DECODER_KIND)?).ok_or_else(|| bad("unknown render kind"))?;
        let depth = ck.scalar(META_DEPTH)? as usize;
        let concat = ck.scalar(META_CONCAT)? != 0.0;
        let first = ck.tensor::<T>("down.0.conv1")?;
        let (base, in_channels) = (first.shape()[0], first.shape()[1]);
        let embedding_dim = in_channels
            .checked_sub(if concat { 3 } else { 0 })
            .ok_or_else(|| bad("too few input channels"))?;
        let cfg = DecoderConfig {
            task,
            depth,
            base_width: base,
            render_kind: dec_kind,
            concat_rendering: concat,
            ..DecoderConfig::default()
        };
        let mut net = Self::new(&cfg, embedding_dim, enc_kind).map_err(|e| bad(&e.to_string()))?;
        net.params = ck.load_params(&net.params)?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<(), DecoderError> {
        Ok(self.to_checkpoint()?.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DecoderError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check::{grad_check, GradCheckOptions};

    fn cfg(task: Task) -> DecoderConfig {
        DecoderConfig {
            task,
            depth: 2,
            base_width: 8,
            ..DecoderConfig::default()
        }
    }

    fn emb(h: usize, w: usize, d: usize) -> EmbeddingMap<f64> {
        let v = (0..h * w * d).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
        EmbeddingMap::new(h, w, d, v).unwrap()
    }

    #[test]
    fn segmentation_shape() {
        let mut c = cfg(Task::Segmentation);
        c.depth = 3;
        let net = UNet::<f64>::new(&c, 8, RenderKind::Grayscale).unwrap();
        let out = net.segment(&emb(64, 64, 8), None).unwrap();
        assert_eq!((out.height(), out.width(), out.values().len()), (64, 64, 64 * 64 * 8));
        assert!(out.argmax().labels().iter().all(|&l| l < 8));
    }

    #[test]
    fn odd_sizes_are_padded_and_cropped() {
        let net = UNet::<f64>::new(&cfg(Task::Segmentation), 4, RenderKind::Grayscale).unwrap();
        let out = net.segment(&emb(18, 21, 4), None).unwrap();
        assert_eq!((out.height(), out.width()), (18, 21));
        let cls = UNet::<f64>::new(&cfg(Task::Classification), 4, RenderKind::Grayscale).unwrap();
        assert!(cls.classify(&emb(18, 21, 4), None).is_ok());
    }

    #[test]
    fn classification_logits() {
        let net = UNet::<f64>::new(&cfg(Task::Classification), 8, RenderKind::Heatmap).unwrap();
        let out = net.classify(&emb(16, 16, 8), None).unwrap();
        assert!(out.values.iter().all(|v| v.is_finite()));
        let p = out.probabilities();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-6);
        assert!(net.segment(&emb(16, 16, 8), None).is_err());
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let net = UNet::<f64>::new(&cfg(Task::Segmentation), 8, RenderKind::Heatmap).unwrap();
        assert!(matches!(net.segment(&emb(16, 16, 4), None), Err(DecoderError::ShapeMismatch(_))));
    }

    #[test]
    fn config_limits() {
        let mut c = cfg(Task::Segmentation);
        c.depth = 1;
        assert!(c.validate().is_err());
        let mut c = cfg(Task::Segmentation);
        c.base_width = 7;
        assert!(c.validate().is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        for task in Task::ALL {
            let mut c = cfg(task);
            c.render_kind = RenderKind::Heatmap;
            c.concat_rendering = task == Task::Classification;
            let net = UNet::<f32>::new(&c, 8, RenderKind::Grayscale).unwrap();
            let ck = net.to_checkpoint().unwrap();
            assert_eq!(ck.scalar("task").unwrap(), task.code());
            assert_eq!(ck.scalar("encoder_render_kind").unwrap(), RenderKind::Grayscale.code());
            assert_eq!(ck.scalar("decoder_render_kind").unwrap(), RenderKind::Heatmap.code());
            let back = UNet::<f32>::from_checkpoint(&ck).unwrap();
            assert_eq!(back, net);
        }
    }

    fn full_graph_error(task: Task, seed: u64) -> f64 {
        let net = UNet::<f64>::new(&cfg(task), 8, RenderKind::Grayscale).unwrap();
        let x = emb(16, 16, 8).to_tensor();
        let mut inputs = vec![x];
        inputs.extend(net.params().tensors().iter().cloned());
        let targets: Vec<usize> = match task {
            Task::Segmentation => (0..256).map(|i| (i * 7 + seed as usize) % 8).collect(),
            Task::Classification => vec![seed as usize % 2],
        };
        let report = grad_check(
            |g, v| {
                let out = net.forward(g, &v[1..], v[0])?;
                g.cross_entropy(out, 1, targets.clone(), None)
            },
            &inputs,
            GradCheckOptions {
                max_coords_per_input: Some(6),
                seed,
                ..GradCheckOptions::default()
            },
        )
        .unwrap();
        assert!(report.checked > 0);
        report.max_rel_error
    }

    #[test]
    fn segment_graph_gradients() {
        let e = full_graph_error(Task::Segmentation, 1);
        assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn classify_graph_gradients() {
        let e = full_graph_error(Task::Classification, 2);
        assert!(e < 1e-5, "{e}");
    }
}
