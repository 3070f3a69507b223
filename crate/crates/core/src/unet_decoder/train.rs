//! Decoder training over a frozen encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DecoderConfig, DecoderError, Task, UNet};
use crate::cuts_encoder::CutsEncoder;
use crate::rng::derive_seed;
use crate::scalar::Real;
use crate::tensor::optim::Adam;
use crate::tensor::{Graph, Tensor, TensorError};
use crate::thermio::{ClassLabel, RenderedImage, SegMask};

/// One supervised example: a rendering plus whichever labels it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: RenderedImage,
    pub label: Option<ClassLabel>,
    pub mask: Option<SegMask>,
}

#[derive(Debug, Clone)]
pub struct DecoderTraining<T> {
    pub decoder: UNet<T>,
    /// Mean loss of each epoch.
    pub loss_history: Vec<f64>,
}

fn numeric(step: usize) -> impl Fn(TensorError) -> DecoderError {
    move |e| match e {
        TensorError::NonFinite(_) => DecoderError::NonFiniteLoss { step },
        other => other.into(),
    }
}

const EMBED_CHUNK: usize = 8;

/// Trains a decoder for `cfg.task` on embeddings from `encoder`, which is
/// only read. Samples are processed in id order before any shuffling.
pub fn train_decoder<T: Real>(
    encoder: &CutsEncoder<T>,
    samples: &[LabeledSample],
    cfg: &DecoderConfig,
) -> Result<DecoderTraining<T>, DecoderError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(DecoderError::EmptyDataset);
    }
    let mut sorted: Vec<&LabeledSample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let (h, w) = (sorted[0].image.height(), sorted[0].image.width());
    for s in &sorted {
        let missing = match cfg.task {
            Task::Classification => s.label.is_none(),
            Task::Segmentation => s.mask.is_none(),
        };
        if missing {
            return Err(DecoderError::MissingLabel(s.id.clone()));
        }
        if s.image.kind() != cfg.render_kind {
            return Err(DecoderError::WrongRenderKind {
                expected: cfg.render_kind,
                found: s.image.kind(),
            });
        }
        if (s.image.height(), s.image.width()) != (h, w) {
            return Err(DecoderError::ShapeMismatch("training images differ in size".into()));
        }
        if let (Task::Segmentation, Some(m)) = (cfg.task, &s.mask) {
            if (m.height(), m.width()) != (h, w) {
                return Err(DecoderError::ShapeMismatch(format!("mask of {} differs from its image", s.id)));
            }
        }
    }

    let mut decoder = UNet::<T>::new(cfg, encoder.embedding_dim(), encoder.render_kind())?;
    let mut inputs: Vec<Tensor<T>> = Vec::with_capacity(sorted.len());
    for chunk in sorted.chunks(EMBED_CHUNK) {
        let images: Vec<RenderedImage> = chunk.iter().map(|s| s.image.clone()).collect();
        for (emb, s) in encoder.embed_batch(&images)?.iter().zip(chunk) {
            inputs.push(decoder.input_tensor(emb, Some(&s.image))?);
        }
    }
    let targets: Vec<Vec<usize>> = sorted
        .iter()
        .map(|s| match cfg.task {
            Task::Classification => vec![s.label.expect("checked above").index()],
            Task::Segmentation => s
                .mask
                .as_ref()
                .expect("checked above")
                .labels()
                .iter()
                .map(|&l| l as usize)
                .collect(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("unet_decoder/{}/train", cfg.task)));
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let c = decoder.in_channels();
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * c * h * w);
            let mut t = Vec::new();
            for &i in batch {
                data.extend_from_slice(inputs[i].data());
                t.extend_from_slice(&targets[i]);
            }
            let x = Tensor::new(vec![batch.len(), c, h, w], data)?;
            let mut g = Graph::new();
            let bound = decoder.params().bind(&mut g);
            let xv = g.constant(x);
            let loss = (|| {
                let out = decoder.forward(&mut g, bound.vars(), xv)?;
                g.cross_entropy(out, 1, t, None)
            })()
            .map_err(numeric(step))?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(DecoderError::NonFiniteLoss { step });
            }
            let mut grads = g.backward(loss).map_err(numeric(step))?;
            let grads = decoder.params().collect_grads(&bound, &mut grads);
            adam.step(decoder.params_mut().tensors_mut(), &grads)
                .map_err(numeric(step))?;
            total += value;
            batches += 1;
            step += 1;
        }
        let mean = total / batches as f64;
        log::debug!("{} decoder epoch {epoch}: loss {mean:.5}", cfg.task);
        history.push(mean);
    }
    Ok(DecoderTraining {
        decoder,
        loss_history: history,
    })
}
