//! Label-free training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::patches::{sample_patches, PatchSet, PixelRef};
use super::{stack_images, CutsEncoder, EncoderConfig, EncoderError};
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::tensor::ops::shape::PixelIndex;
use crate::tensor::optim::Adam;
use crate::tensor::{Graph, TensorError, Var};
use crate::thermio::{RenderedImage, SpatialTransform};

#[derive(Debug, Clone)]
pub struct EncoderTraining<T> {
    pub encoder: CutsEncoder<T>,
    /// Mean loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Splits `n` items into `max(1, n / size)` near-equal consecutive batches,
/// so that no batch is smaller than `size` when `n >= size`.
fn batch_bounds(n: usize, size: usize) -> Vec<(usize, usize)> {
    let count = (n / size).max(1);
    (0..count).map(|i| (i * n / count, (i + 1) * n / count)).collect()
}

fn numeric(step: usize) -> impl Fn(TensorError) -> EncoderError {
    move |e| match e {
        TensorError::NonFinite(_) => EncoderError::NonFiniteLoss { step },
        other => other.into(),
    }
}

/// Mean InfoNCE over `patches` on a `[2B, D, H, W]` embedding node whose
/// first `B` samples are the originals and last `B` their augmented views.
pub fn contrastive_graph_loss<T: Real>(
    g: &mut Graph<T>,
    emb: Var,
    patches: &[PatchSet],
    originals: usize,
    scale: T,
) -> Result<Var, TensorError> {
    let d = g.value(emb).shape()[1];
    let k = patches.first().map_or(0, |p| p.negatives.len());
    if patches.iter().any(|p| p.negatives.len() != k) {
        return Err(TensorError::InvalidArgument {
            op: "contrastive_loss",
            detail: "patch sets differ in negative count".into(),
        });
    }
    let px = |r: &PixelRef, offset: usize| PixelIndex {
        sample: r.image + offset,
        y: r.y,
        x: r.x,
    };
    let anchors = patches.iter().map(|p| px(&p.anchor, 0)).collect();
    let mut candidates = Vec::with_capacity(patches.len() * (1 + k));
    for p in patches {
        candidates.push(px(&p.positive, originals));
        candidates.extend(p.negatives.iter().map(|n| px(n, 0)));
    }
    let m = patches.len();
    let a = g.gather_pixels(emb, anchors)?;
    let c = g.gather_pixels(emb, candidates)?;
    let c = g.reshape(c, &[m, 1 + k, d])?;
    let logits = g.pair_logits(a, c, scale)?;
    g.cross_entropy(logits, 1, vec![0; m], None)
}

/// Trains an encoder on renderings of `cfg.render_kind`. Only pixel data
/// is consumed.
pub fn train_encoder<T: Real>(dataset: &[RenderedImage], cfg: &EncoderConfig) -> Result<EncoderTraining<T>, EncoderError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(EncoderError::EmptyDataset);
    }
    if dataset.len() < 2 {
        return Err(EncoderError::InsufficientPool(dataset.len()));
    }
    let (h, w) = (dataset[0].height(), dataset[0].width());
    for img in dataset {
        if img.kind() != cfg.render_kind {
            return Err(EncoderError::WrongRenderKind {
                expected: cfg.render_kind,
                found: img.kind(),
            });
        }
        if (img.height(), img.width()) != (h, w) {
            return Err(EncoderError::ShapeMismatch("training images differ in size".into()));
        }
    }
    let mut encoder = CutsEncoder::<T>::new(cfg)?;
    encoder.check_image(&dataset[0])?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "cuts_encoder/train"));
    let mut adam = Adam::new(cfg.learning_rate);
    let scale = T::lit(1.0 / cfg.temperature);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let batches = batch_bounds(order.len(), cfg.batch_size);
        for &(lo, hi) in &batches {
            let members = &order[lo..hi];
            let b = members.len();
            let views: Vec<SpatialTransform> = (0..b)
                .map(|_| SpatialTransform::sample(&mut rng, &cfg.augment, h, w))
                .collect();
            let mut images: Vec<RenderedImage> = members.iter().map(|&i| dataset[i].clone()).collect();
            for (j, v) in views.iter().enumerate() {
                images.push(v.apply_image(&dataset[members[j]]));
            }
            let mut patches = Vec::with_capacity(b * cfg.anchors_per_image);
            for j in 0..b {
                patches.extend(sample_patches(j, &views, cfg, &mut rng)?);
            }

            let mut g = Graph::new();
            let bound = encoder.params().bind(&mut g);
            let x = g.constant(stack_images(&images));
            let loss = (|| {
                let emb = encoder.forward(&mut g, bound.vars(), x)?;
                contrastive_graph_loss(&mut g, emb, &patches, b, scale)
            })()
            .map_err(numeric(step))?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(EncoderError::NonFiniteLoss { step });
            }
            let mut grads = g.backward(loss).map_err(numeric(step))?;
            let grads = encoder.params().collect_grads(&bound, &mut grads);
            adam.step(encoder.params_mut().tensors_mut(), &grads)
                .map_err(numeric(step))?;
            total += value;
            step += 1;
        }
        let mean = total / batches.len() as f64;
        log::debug!("encoder epoch {epoch}: loss {mean:.5}");
        history.push(mean);
    }
    Ok(EncoderTraining {
        encoder,
        loss_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermio::{render, synth_generate, NormalizeStrategy, RenderKind};

    #[test]
    fn batches_cover_everything() {
        for n in 2..40 {
            for size in 2..9 {
                let b = batch_bounds(n, size);
                assert_eq!(b[0].0, 0);
                assert_eq!(b.last().unwrap().1, n);
                assert!(b.windows(2).all(|p| p[0].1 == p[1].0));
                if n >= size {
                    assert!(b.iter().all(|&(lo, hi)| hi - lo >= size));
                }
            }
        }
    }

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            embedding_dim: 8,
            channels: vec![4; 6],
            local_channels: 4,
            anchors_per_image: 8,
            batch_size: 2,
            epochs: 2,
            ..EncoderConfig::default()
        }
    }

    fn data(n: usize, kind: RenderKind) -> Vec<RenderedImage> {
        synth_generate(3, n, 32, 32)
            .unwrap()
            .iter()
            .map(|p| render(&p.frame, kind, NormalizeStrategy::PerFrameMinmax).unwrap())
            .collect()
    }

    #[test]
    fn deterministic_history() {
        let d = data(4, RenderKind::Grayscale);
        let a = train_encoder::<f32>(&d, &tiny()).unwrap();
        let b = train_encoder::<f32>(&d, &tiny()).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.loss_history.len(), 2);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(train_encoder::<f32>(&[], &tiny()), Err(EncoderError::EmptyDataset)));
        let d = data(2, RenderKind::Heatmap);
        assert!(matches!(
            train_encoder::<f32>(&d, &tiny()),
            Err(EncoderError::WrongRenderKind { .. })
        ));
    }
}
