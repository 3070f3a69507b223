//! The 2x2 encoder/decoder representation grid with an on-disk cache.
//!
//! Cache layout: `<cache>/runs/<hash>/{encoder.thrm, decoder-<task>.thrm,
//! metrics.json}` with one directory per `(encoder kind, decoder kind)`
//! row. A row directory is guarded by `<cache>/runs/<hash>.lock` while it
//! is being filled.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::data::{encoder_images, evaluate, labeled_samples, load_dataset, DatasetSample, Inference};
use super::metrics::MetricsReport;
use super::overlay::compare_overlay;
use super::report::{GridResult, GridRow};
use super::{io_err, PipelineError};
use crate::cuts_encoder::{train_encoder, CutsEncoder, EncoderConfig};
use crate::thermio::{manifest::manifest_to_string, NormalizeStrategy, RenderKind, Split};
use crate::unet_decoder::{train_decoder, DecoderConfig, Task, UNet};

/// Environment variable that overrides the cache root.
pub const CACHE_ENV: &str = "THERMOLAT_CACHE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Defaults to `output_dir`.
    pub cache_dir: Option<PathBuf>,
    pub normalize: NormalizeStrategy,
    pub encoder: EncoderConfig,
    pub classification: DecoderConfig,
    pub segmentation: DecoderConfig,
    /// Write a prediction/ground-truth overlay of the first test sample of
    /// each row.
    pub overlays: bool,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            output_dir: PathBuf::from("grid-out"),
            cache_dir: None,
            normalize: NormalizeStrategy::FixedRange { lo: 24.0, hi: 36.0 },
            encoder: EncoderConfig::default(),
            classification: DecoderConfig {
                task: Task::Classification,
                ..DecoderConfig::default()
            },
            segmentation: DecoderConfig::default(),
            overlays: true,
        }
    }
}

impl GridConfig {
    pub fn cache_root(&self) -> &Path {
        self.cache_dir.as_deref().unwrap_or(&self.output_dir)
    }

    fn decoder(&self, task: Task, kind: RenderKind) -> DecoderConfig {
        let base = match task {
            Task::Classification => &self.classification,
            Task::Segmentation => &self.segmentation,
        };
        DecoderConfig {
            task,
            render_kind: kind,
            ..base.clone()
        }
    }

    fn encoder(&self, kind: RenderKind) -> EncoderConfig {
        EncoderConfig {
            render_kind: kind,
            ..self.encoder.clone()
        }
    }
}

/// First 16 hex digits of the SHA-256 of the canonical (key-sorted,
/// compact) JSON form of `value`.
pub fn cell_hash(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    hex::encode(&digest[..8])
}

fn hash_frames<'a>(samples: impl Iterator<Item = &'a DatasetSample>) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.record.id.as_bytes());
        h.update((s.frame.height() as u64).to_le_bytes());
        h.update((s.frame.width() as u64).to_le_bytes());
        for t in s.frame.temps() {
            h.update(t.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn hash_supervision(samples: &[DatasetSample]) -> String {
    let mut h = Sha256::new();
    let records: Vec<_> = samples.iter().map(|s| s.record.clone()).collect();
    h.update(manifest_to_string(&records).as_bytes());
    for s in samples {
        if let Some(m) = &s.mask {
            h.update(s.record.id.as_bytes());
            h.update(m.labels());
        }
    }
    hex::encode(h.finalize())
}

struct CellLock(PathBuf);

impl CellLock {
    fn acquire(path: PathBuf) -> Result<Self, PipelineError> {
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self(path)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PipelineError::Locked(path)),
            Err(e) => Err(io_err(path)(e)),
        }
    }
}

impl Drop for CellLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Writes through a temporary sibling so readers never see partial files.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellMetrics {
    classification: MetricsReport,
    segmentation: MetricsReport,
}

struct Grid<'a> {
    cfg: &'a GridConfig,
    data: Vec<DatasetSample>,
    runs: PathBuf,
    encoders: HashMap<RenderKind, CutsEncoder<f32>>,
    row_dirs: HashMap<(RenderKind, RenderKind), PathBuf>,
}

impl Grid<'_> {
    fn encoder(&mut self, kind: RenderKind) -> Result<CutsEncoder<f32>, PipelineError> {
        if let Some(e) = self.encoders.get(&kind) {
            return Ok(e.clone());
        }
        let cached = RenderKind::ALL
            .iter()
            .map(|&d| self.row_dirs[&(kind, d)].join("encoder.thrm"))
            .find(|p| p.exists());
        let enc = match cached {
            Some(p) => CutsEncoder::load(&p)?,
            None => {
                log::info!("training {} encoder", kind.letter());
                let images = encoder_images(&self.data, kind, self.cfg.normalize)?;
                train_encoder::<f32>(&images, &self.cfg.encoder(kind))?.encoder
            }
        };
        self.encoders.insert(kind, enc.clone());
        Ok(enc)
    }

    fn decoder(
        &self,
        dir: &Path,
        encoder: &CutsEncoder<f32>,
        task: Task,
        kind: RenderKind,
    ) -> Result<UNet<f32>, PipelineError> {
        let path = dir.join(format!("decoder-{task}.thrm"));
        if path.exists() {
            return Ok(UNet::load(&path)?);
        }
        log::info!("training {task} decoder ({} enc, {} dec)", encoder.render_kind().letter(), kind.letter());
        let samples = labeled_samples(&self.data, Split::Train, task, kind, self.cfg.normalize)?;
        let trained = train_decoder(encoder, &samples, &self.cfg.decoder(task, kind))?.decoder;
        write_atomic(&path, &trained.to_checkpoint()?.to_bytes())?;
        Ok(trained)
    }

    fn row(&mut self, enc_kind: RenderKind, dec_kind: RenderKind) -> GridRow {
        let mut row = GridRow {
            encoder: enc_kind,
            decoder: dec_kind,
            classification: None,
            segmentation: None,
            errors: Vec::new(),
        };
        if let Err(e) = self.fill_row(&mut row) {
            row.errors.push(e.to_string());
        }
        if !row.errors.is_empty() {
            log::warn!("{} incomplete: {}", row.label(), row.errors.join("; "));
        }
        row
    }

    fn fill_row(&mut self, row: &mut GridRow) -> Result<(), PipelineError> {
        let dir = self.row_dirs[&(row.encoder, row.decoder)].clone();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let _lock = CellLock::acquire(dir.with_extension("lock"))?;
        let metrics_path = dir.join("metrics.json");
        if metrics_path.exists() && !self.cfg.overlays {
            let text = fs::read_to_string(&metrics_path).map_err(io_err(&metrics_path))?;
            if let Ok(m) = serde_json::from_str::<CellMetrics>(&text) {
                row.classification = Some(m.classification);
                row.segmentation = Some(m.segmentation);
                return Ok(());
            }
        }
        let encoder = self.encoder(row.encoder)?;
        let enc_path = dir.join("encoder.thrm");
        if !enc_path.exists() {
            write_atomic(&enc_path, &encoder.to_checkpoint()?.to_bytes())?;
        }
        for task in Task::ALL {
            let result = self.decoder(&dir, &encoder, task, row.decoder).and_then(|dec| {
                let test = labeled_samples(&self.data, Split::Test, task, row.decoder, self.cfg.normalize)?;
                let report = evaluate(&encoder, &dec, &test)?;
                if task == Task::Segmentation && self.cfg.overlays {
                    self.write_overlay(row, &encoder, &dec)?;
                }
                Ok(report)
            });
            match (task, result) {
                (Task::Classification, Ok(r)) => row.classification = Some(r),
                (Task::Segmentation, Ok(r)) => row.segmentation = Some(r),
                (_, Err(e)) => row.errors.push(format!("{task}: {e}")),
            }
        }
        if let (Some(c), Some(s)) = (&row.classification, &row.segmentation) {
            let m = CellMetrics {
                classification: c.clone(),
                segmentation: s.clone(),
            };
            let mut text = serde_json::to_string_pretty(&m).expect("metrics serialise");
            text.push('\n');
            write_atomic(&metrics_path, text.as_bytes())?;
        }
        Ok(())
    }

    fn write_overlay(&self, row: &GridRow, encoder: &CutsEncoder<f32>, dec: &UNet<f32>) -> Result<(), PipelineError> {
        let test = labeled_samples(&self.data, Split::Test, Task::Segmentation, row.decoder, self.cfg.normalize)?;
        let Some(first) = test.first() else {
            return Ok(());
        };
        let emb = encoder.embed(&first.image)?;
        let pred = Inference::Mask(dec.segment(&emb, Some(&first.image))?.argmax());
        let Inference::Mask(pred) = pred else { unreachable!() };
        let truth = first.mask.as_ref().expect("segmentation samples carry masks");
        let dir = self.cfg.output_dir.join("overlays");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let name = format!("{}{}-{}.png", row.encoder.letter(), row.decoder.letter(), first.id);
        compare_overlay(&first.image, &pred, truth)?.write_png(&dir.join(name))?;
        Ok(())
    }
}

/// Trains or loads the two encoders and eight decoders, evaluates every
/// row on the test split and writes `grid.json` and `grid.md` to the
/// output directory. Failed cells are reported in their row.
pub fn run_grid(cfg: &GridConfig) -> Result<GridResult, PipelineError> {
    cfg.encoder.validate()?;
    cfg.classification.validate()?;
    cfg.segmentation.validate()?;
    cfg.normalize.validate()?;
    let data = load_dataset(&cfg.manifest)?;
    let enc_data = hash_frames(data.iter().filter(|s| s.record.split == Split::Train));
    let all_data = hash_supervision(&data);
    let runs = cfg.cache_root().join("runs");
    fs::create_dir_all(&runs).map_err(io_err(&runs))?;
    let mut row_dirs = HashMap::new();
    for e in RenderKind::ALL {
        let enc_key = json!({
            "encoder": cfg.encoder(e),
            "normalize": cfg.normalize,
            "data": enc_data,
        });
        for d in RenderKind::ALL {
            let key = json!({
                "encoder": enc_key,
                "classification": cfg.decoder(Task::Classification, d),
                "segmentation": cfg.decoder(Task::Segmentation, d),
                "data": all_data,
            });
            row_dirs.insert((e, d), runs.join(cell_hash(&key)));
        }
    }
    let mut grid = Grid {
        cfg,
        data,
        runs,
        encoders: HashMap::new(),
        row_dirs,
    };
    let mut rows = Vec::with_capacity(4);
    for e in RenderKind::ALL {
        for d in RenderKind::ALL {
            rows.push(grid.row(e, d));
        }
    }
    debug_assert!(grid.runs.exists());
    let result = GridResult::new(rows)?;
    fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    write_atomic(&cfg.output_dir.join("grid.json"), result.to_json().as_bytes())?;
    write_atomic(&cfg.output_dir.join("grid.md"), result.to_markdown().as_bytes())?;
    Ok(result)
}
