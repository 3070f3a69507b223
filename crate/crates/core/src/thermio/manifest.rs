use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, ThermioError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Benign,
    Malignant,
}

impl ClassLabel {
    /// Class index: benign 0, malignant 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Benign => 0,
            ClassLabel::Malignant => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Benign),
            1 => Some(ClassLabel::Malignant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One manifest row. Paths are stored as written and resolved against the
/// manifest's directory by [`SampleRecord::resolve`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    #[serde(rename = "frame")]
    pub frame_path: PathBuf,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    pub class_label: Option<ClassLabel>,
    #[serde(rename = "mask", default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<PathBuf>,
    pub split: Split,
    #[serde(rename = "patient")]
    pub patient_id: String,
}

impl SampleRecord {
    pub fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    /// Same record with the supervision fields removed.
    pub fn without_labels(&self) -> Self {
        Self {
            class_label: None,
            mask_path: None,
            ..self.clone()
        }
    }
}

/// Checks id uniqueness and patient-level split consistency, then sorts by
/// id.
pub fn validate_records(mut records: Vec<SampleRecord>) -> Result<Vec<SampleRecord>, ThermioError> {
    let mut ids = HashSet::new();
    let mut patient_split: HashMap<&str, Split> = HashMap::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(ThermioError::DuplicateId(r.id.clone()));
        }
        match patient_split.get(r.patient_id.as_str()) {
            Some(&s) if s != r.split => return Err(ThermioError::SplitLeak(r.patient_id.clone())),
            _ => {
                patient_split.insert(&r.patient_id, r.split);
            }
        }
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<SampleRecord>, ThermioError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let records: Vec<SampleRecord> = serde_json::from_str(text).map_err(|e| ThermioError::ParseError {
        path: origin.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    validate_records(records)
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>, ThermioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_manifest(&text, path)
}

pub fn manifest_to_string(records: &[SampleRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("records serialise");
    s.push('\n');
    s
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<(), ThermioError> {
    fs::write(path, manifest_to_string(records)).map_err(io_err(path))
}
