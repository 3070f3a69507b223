//! Manifest-backed datasets and the single-model entry points.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, segmentation_metrics, MetricsError, MetricsReport};
use super::{io_err, PipelineError};
use crate::cuts_encoder::CutsEncoder;
use crate::thermio::manifest::write_manifest;
use crate::thermio::{
    load_manifest, render, synth_generate, NormalizeStrategy, RenderKind, RenderedImage, SampleRecord, SegMask, Split,
    ThermalFrame, ThermioError,
};
use crate::unet_decoder::{ClassLogits, LabeledSample, Task, UNet};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub record: SampleRecord,
    pub frame: ThermalFrame,
    pub mask: Option<SegMask>,
}

/// Reads every frame and mask listed in the manifest; relative paths are
/// taken from the manifest's directory.
pub fn load_dataset(manifest: &Path) -> Result<Vec<DatasetSample>, PipelineError> {
    let records = load_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    records
        .into_iter()
        .map(|record| {
            let frame = ThermalFrame::read(&SampleRecord::resolve(base, &record.frame_path))?;
            let mask = match &record.mask_path {
                Some(p) => {
                    let m = SegMask::read(&SampleRecord::resolve(base, p))?;
                    if (m.height(), m.width()) != (frame.height(), frame.width()) {
                        return Err(ThermioError::ShapeMismatch(format!(
                            "mask of {} is {}x{}, frame is {}x{}",
                            record.id,
                            m.height(),
                            m.width(),
                            frame.height(),
                            frame.width()
                        ))
                        .into());
                    }
                    Some(m)
                }
                None => None,
            };
            Ok(DatasetSample { record, frame, mask })
        })
        .collect()
}

/// Renderings of every training-split frame; supervision is not read.
pub fn encoder_images(
    samples: &[DatasetSample],
    kind: RenderKind,
    normalize: NormalizeStrategy,
) -> Result<Vec<RenderedImage>, PipelineError> {
    samples
        .iter()
        .filter(|s| s.record.split == Split::Train)
        .map(|s| Ok(render(&s.frame, kind, normalize)?))
        .collect()
}

/// Samples of `split` carrying the supervision `task` needs.
pub fn labeled_samples(
    samples: &[DatasetSample],
    split: Split,
    task: Task,
    kind: RenderKind,
    normalize: NormalizeStrategy,
) -> Result<Vec<LabeledSample>, PipelineError> {
    samples
        .iter()
        .filter(|s| s.record.split == split)
        .filter(|s| match task {
            Task::Classification => s.record.class_label.is_some(),
            Task::Segmentation => s.mask.is_some(),
        })
        .map(|s| {
            Ok(LabeledSample {
                id: s.record.id.clone(),
                image: render(&s.frame, kind, normalize)?,
                label: s.record.class_label,
                mask: s.mask.clone(),
            })
        })
        .collect()
}

const EMBED_CHUNK: usize = 8;

/// Output of one decoder on one rendering.
#[derive(Debug, Clone, PartialEq)]
pub enum Inference {
    Class(ClassLogits<f32>),
    Mask(SegMask),
}

fn predict(
    encoder: &CutsEncoder<f32>,
    decoder: &UNet<f32>,
    images: &[RenderedImage],
) -> Result<Vec<Inference>, PipelineError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EMBED_CHUNK) {
        for (emb, img) in encoder.embed_batch(chunk)?.iter().zip(chunk) {
            out.push(match decoder.task() {
                Task::Classification => Inference::Class(decoder.classify(emb, Some(img))?),
                Task::Segmentation => Inference::Mask(decoder.segment(emb, Some(img))?.argmax()),
            });
        }
    }
    Ok(out)
}

/// Runs the frame, rendered as the decoder's input type, through both
/// stages.
pub fn infer(
    frame: &ThermalFrame,
    encoder: &CutsEncoder<f32>,
    decoder: &UNet<f32>,
    normalize: NormalizeStrategy,
) -> Result<Inference, PipelineError> {
    let img = render(frame, decoder.decoder_render_kind(), normalize)?;
    Ok(predict(encoder, decoder, &[img])?.remove(0))
}

/// Scores the decoder on `samples`, which must carry its task's labels.
pub fn evaluate(
    encoder: &CutsEncoder<f32>,
    decoder: &UNet<f32>,
    samples: &[LabeledSample],
) -> Result<MetricsReport, PipelineError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyInput.into());
    }
    let images: Vec<RenderedImage> = samples.iter().map(|s| s.image.clone()).collect();
    let preds = predict(encoder, decoder, &images)?;
    let missing = |s: &LabeledSample| PipelineError::Decoder(crate::unet_decoder::DecoderError::MissingLabel(s.id.clone()));
    match decoder.task() {
        Task::Classification => {
            let mut p = Vec::with_capacity(samples.len());
            let mut l = Vec::with_capacity(samples.len());
            for (s, pred) in samples.iter().zip(&preds) {
                let Inference::Class(c) = pred else { unreachable!() };
                p.push(c.predicted().index());
                l.push(s.label.ok_or_else(|| missing(s))?.index());
            }
            Ok(classification_metrics(&p, &l)?)
        }
        Task::Segmentation => {
            let mut p = Vec::with_capacity(samples.len());
            let mut g = Vec::with_capacity(samples.len());
            for (s, pred) in samples.iter().zip(preds) {
                let Inference::Mask(m) = pred else { unreachable!() };
                p.push(m);
                g.push(s.mask.clone().ok_or_else(|| missing(s))?);
            }
            Ok(segmentation_metrics(&p, &g)?)
        }
    }
}

/// Layout of a synthetic dataset. Phantoms are assigned in generation
/// order: labeled training samples, then test samples, then the unlabeled
/// remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    /// Defaults to `min(52, (count - test) / 2)`.
    pub labeled: Option<usize>,
    /// Defaults to `max(1, count / 5)`.
    pub test: Option<usize>,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 60,
            labeled: None,
            test: None,
            height: 64,
            width: 64,
        }
    }
}

impl SynthSpec {
    /// `(labeled, test)` counts.
    pub fn split_counts(&self) -> Result<(usize, usize), PipelineError> {
        let test = self.test.unwrap_or((self.count / 5).max(1));
        let labeled = self
            .labeled
            .unwrap_or_else(|| 52.min(self.count.saturating_sub(test) / 2));
        if labeled + test > self.count {
            return Err(PipelineError::Config(format!(
                "{labeled} labeled + {test} test phantoms exceed the count of {}",
                self.count
            )));
        }
        Ok((labeled, test))
    }
}

/// Writes phantoms as frame files, PGM masks and `manifest.json` under
/// `out`; returns the manifest path.
pub fn synth_dataset(out: &Path, spec: &SynthSpec) -> Result<PathBuf, PipelineError> {
    let (labeled, test) = spec.split_counts()?;
    let phantoms = synth_generate(spec.seed, spec.count, spec.height, spec.width)?;
    for dir in ["frames", "masks"] {
        fs::create_dir_all(out.join(dir)).map_err(io_err(out.join(dir)))?;
    }
    let mut records = Vec::with_capacity(phantoms.len());
    for (i, p) in phantoms.iter().enumerate() {
        let id = format!("phantom-{i:04}");
        let frame_path = PathBuf::from(format!("frames/{id}.txt"));
        p.frame.write(&out.join(&frame_path))?;
        let (split, supervised) = if i < labeled {
            (Split::Train, true)
        } else if i < labeled + test {
            (Split::Test, true)
        } else {
            (Split::Train, false)
        };
        let mask_path = if supervised {
            let mp = PathBuf::from(format!("masks/{id}.pgm"));
            p.mask.write(&out.join(&mp))?;
            Some(mp)
        } else {
            None
        };
        records.push(SampleRecord {
            patient_id: id.clone(),
            id,
            frame_path,
            class_label: supervised.then_some(p.label),
            mask_path,
            split,
        });
    }
    let manifest = out.join("manifest.json");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            seed: 4,
            count: 10,
            height: 32,
            width: 32,
            ..SynthSpec::default()
        };
        assert_eq!(spec.split_counts().unwrap(), (4, 2));
        let manifest = synth_dataset(dir.path(), &spec).unwrap();
        let data = load_dataset(&manifest).unwrap();
        assert_eq!(data.len(), 10);
        let test = data.iter().filter(|s| s.record.split == Split::Test).count();
        let masked = data.iter().filter(|s| s.mask.is_some()).count();
        assert_eq!((test, masked), (2, 6));
        let enc = encoder_images(&data, RenderKind::Grayscale, NormalizeStrategy::PerFrameMinmax).unwrap();
        assert_eq!(enc.len(), 8);
        let seg = labeled_samples(
            &data,
            Split::Train,
            Task::Segmentation,
            RenderKind::Heatmap,
            NormalizeStrategy::PerFrameMinmax,
        )
        .unwrap();
        assert_eq!(seg.len(), 4);
        assert!(seg.iter().all(|s| s.image.kind() == RenderKind::Heatmap));
    }

    #[test]
    fn oversized_split_rejected() {
        let spec = SynthSpec {
            count: 5,
            labeled: Some(5),
            test: Some(1),
            ..SynthSpec::default()
        };
        assert!(spec.split_counts().is_err());
    }
}
