//! Run configuration: defaults, then the `--config` file, then `--set`
//! overrides, then explicit flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thermolat::pipeline::{GridConfig, SynthSpec};
use thermolat::thermio::NormalizeStrategy;
use thermolat::{DecoderConfig, EncoderConfig, Task};

use crate::error::CliError;

pub const RESOLVED_CONFIG: &str = "resolved-config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream; copied into each stage's seed.
    pub seed: u64,
    pub deterministic: bool,
    pub jobs: Option<usize>,
    pub output_dir: PathBuf,
    pub manifest: PathBuf,
    pub normalize: NormalizeStrategy,
    pub cache_dir: Option<PathBuf>,
    pub overlays: bool,
    pub synth: SynthSpec,
    pub encoder: EncoderConfig,
    pub classification: DecoderConfig,
    pub segmentation: DecoderConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridConfig::default();
        Self {
            seed: 0,
            deterministic: false,
            jobs: None,
            output_dir: PathBuf::from("out"),
            manifest: grid.manifest,
            normalize: grid.normalize,
            cache_dir: None,
            overlays: grid.overlays,
            synth: SynthSpec::default(),
            encoder: grid.encoder,
            classification: grid.classification,
            segmentation: grid.segmentation,
        }
    }
}

/// Recursively overlays `top` on `base`. Objects carrying a `kind` tag
/// replace rather than merge, so switching variants drops stale fields.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) if !t.contains_key("kind") => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON when possible and
/// taken as a string otherwise.
fn apply_set(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("--set expects key=value, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::config(format!("--set {path}: {} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            let slot = obj
                .get_mut(*key)
                .ok_or_else(|| CliError::config(format!("--set {path}: unknown key {key:?}")))?;
            merge(slot, value);
            return Ok(());
        }
        node = obj
            .get_mut(*key)
            .ok_or_else(|| CliError::config(format!("--set {path}: unknown key {key:?}")))?;
    }
    unreachable!("split yields at least one key")
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut root = serde_json::to_value(RunConfig::default()).expect("defaults serialise");
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
            if !v.is_object() {
                return Err(CliError::config(format!("config {} must be a JSON object", path.display())));
            }
            merge(&mut root, v);
        }
        for s in sets {
            apply_set(&mut root, s)?;
        }
        serde_json::from_value(root).map_err(|e| CliError::config(format!("config: {e}")))
    }

    /// Copies the root seed into every stage and pins worker count in
    /// deterministic mode.
    pub fn finalize(&mut self) {
        self.synth.seed = self.seed;
        self.encoder.seed = self.seed;
        self.classification.seed = self.seed;
        self.segmentation.seed = self.seed;
        self.classification.task = Task::Classification;
        self.segmentation.task = Task::Segmentation;
        if self.deterministic {
            self.jobs = Some(1);
        }
    }

    pub fn grid(&self) -> GridConfig {
        GridConfig {
            manifest: self.manifest.clone(),
            output_dir: self.output_dir.clone(),
            cache_dir: self.cache_dir.clone(),
            normalize: self.normalize,
            encoder: self.encoder.clone(),
            classification: self.classification.clone(),
            segmentation: self.segmentation.clone(),
            overlays: self.overlays,
        }
    }

    /// Writes the resolved configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))?;
        let mut text = serde_json::to_string_pretty(self).expect("config serialises");
        text.push('\n');
        let path = dir.join(RESOLVED_CONFIG);
        fs::write(&path, text).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_overrides_nested_fields() {
        let c = RunConfig::resolve(
            None,
            &["encoder.embedding_dim=16".into(), "manifest=x/m.json".into(), "encoder.channels=[4,4]".into()],
        )
        .unwrap();
        assert_eq!(c.encoder.embedding_dim, 16);
        assert_eq!(c.manifest, PathBuf::from("x/m.json"));
        assert_eq!(c.encoder.channels, vec![4, 4]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::resolve(None, &["encoder.nope=1".into()]).is_err());
        assert!(RunConfig::resolve(None, &["noequals".into()]).is_err());
    }

    #[test]
    fn tagged_values_replace() {
        let c = RunConfig::resolve(None, &[r#"normalize={"kind":"per_frame_minmax"}"#.into()]).unwrap();
        assert_eq!(c.normalize, NormalizeStrategy::PerFrameMinmax);
    }

    #[test]
    fn file_then_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"seed": 3, "encoder": {"epochs": 2}}"#).unwrap();
        let mut c = RunConfig::resolve(Some(&p), &["encoder.epochs=5".into()]).unwrap();
        c.finalize();
        assert_eq!((c.seed, c.encoder.epochs, c.encoder.seed, c.segmentation.seed), (3, 5, 3, 3));
        assert_eq!(c.encoder.embedding_dim, EncoderConfig::default().embedding_dim);
    }
}
