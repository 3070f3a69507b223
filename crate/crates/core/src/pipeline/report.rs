//! Four-row representation grid report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::MetricsReport;
use crate::thermio::RenderKind;

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("grid must have exactly 4 rows, got {0}")]
    RowCount(usize),
    #[error("duplicate grid row {0}")]
    DuplicateRow(String),
    #[error("malformed report: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRow {
    pub encoder: RenderKind,
    pub decoder: RenderKind,
    #[serde(default)]
    pub classification: Option<MetricsReport>,
    #[serde(default)]
    pub segmentation: Option<MetricsReport>,
    /// Non-empty when any cell of the row failed.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl GridRow {
    /// "G Enc. /w H Dec."
    pub fn label(&self) -> String {
        format!("{} Enc. /w {} Dec.", self.encoder.letter(), self.decoder.letter())
    }

    pub fn is_complete(&self) -> bool {
        self.errors.is_empty() && self.classification.is_some() && self.segmentation.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    rows: Vec<GridRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    rows: Vec<GridRow>,
}

impl<'de> Deserialize<'de> for GridResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawGrid::deserialize(d)?;
        GridResult::new(raw.rows).map_err(serde::de::Error::custom)
    }
}

pub const SEGMENTATION_NOTE: &str = "Segmentation uses an 8-class confusion matrix with background as a class; \
precision and F1 are macro-averaged over classes present in prediction or ground truth.";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

impl GridResult {
    /// Rows are stored in `(encoder, decoder)` order G/G, G/H, H/G, H/H.
    pub fn new(mut rows: Vec<GridRow>) -> Result<Self, ReportError> {
        if rows.len() != 4 {
            return Err(ReportError::RowCount(rows.len()));
        }
        rows.sort_by_key(|r| (r.encoder.code() as u8, r.decoder.code() as u8));
        for pair in rows.windows(2) {
            if (pair[0].encoder, pair[0].decoder) == (pair[1].encoder, pair[1].decoder) {
                return Err(ReportError::DuplicateRow(pair[0].label()));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[GridRow] {
        &self.rows
    }

    pub fn row(&self, encoder: RenderKind, decoder: RenderKind) -> &GridRow {
        self.rows
            .iter()
            .find(|r| r.encoder == encoder && r.decoder == decoder)
            .expect("all four rows are present")
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Method | Classification Accuracy | Classification Precision | Classification F1-Score ");
        s.push_str("| Segmentation Accuracy | Segmentation Precision | Segmentation F1-Score | Segmentation mIoU |\n");
        s.push_str("|---|---|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let c = r.classification.as_ref();
            let g = r.segmentation.as_ref();
            let mut label = r.label();
            if !r.is_complete() {
                label.push_str(" (incomplete)");
            }
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} | {} | {} |\n",
                label,
                cell(c.map(|m| m.accuracy)),
                cell(c.map(|m| m.precision)),
                cell(c.map(|m| m.f1)),
                cell(g.map(|m| m.accuracy)),
                cell(g.map(|m| m.precision)),
                cell(g.map(|m| m.f1)),
                cell(g.and_then(|m| m.miou)),
            ));
        }
        s.push('\n');
        s.push_str(SEGMENTATION_NOTE);
        s.push('\n');
        for r in self.rows.iter().filter(|r| !r.errors.is_empty()) {
            for e in &r.errors {
                s.push_str(&format!("\n- {}: {}", r.label(), e));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::metrics::{classification_metrics, segmentation_metrics};
    use crate::thermio::SegMask;

    fn row(e: RenderKind, d: RenderKind) -> GridRow {
        let m = SegMask::new(2, 2, vec![0, 1, 2, 2]).unwrap();
        let p = SegMask::new(2, 2, vec![0, 1, 1, 2]).unwrap();
        GridRow {
            encoder: e,
            decoder: d,
            classification: Some(classification_metrics(&[1, 0, 1], &[1, 0, 0]).unwrap()),
            segmentation: Some(segmentation_metrics(&[p], &[m]).unwrap()),
            errors: Vec::new(),
        }
    }

    fn grid() -> GridResult {
        use RenderKind::*;
        GridResult::new(vec![
            row(Heatmap, Heatmap),
            row(Grayscale, Heatmap),
            row(Heatmap, Grayscale),
            row(Grayscale, Grayscale),
        ])
        .unwrap()
    }

    #[test]
    fn rows_sorted_and_labelled() {
        let labels: Vec<String> = grid().rows().iter().map(GridRow::label).collect();
        assert_eq!(
            labels,
            ["G Enc. /w G Dec.", "G Enc. /w H Dec.", "H Enc. /w G Dec.", "H Enc. /w H Dec."]
        );
    }

    #[test]
    fn json_round_trip() {
        let g = grid();
        let back = GridResult::from_json(&g.to_json()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), g.to_json());
    }

    #[test]
    fn invariants_enforced() {
        use RenderKind::*;
        assert_eq!(GridResult::new(vec![row(Heatmap, Heatmap)]).unwrap_err(), ReportError::RowCount(1));
        let dup = vec![
            row(Heatmap, Heatmap),
            row(Heatmap, Heatmap),
            row(Grayscale, Grayscale),
            row(Grayscale, Heatmap),
        ];
        assert!(matches!(GridResult::new(dup), Err(ReportError::DuplicateRow(_))));
        let mut v: serde_json::Value = serde_json::from_str(&grid().to_json()).unwrap();
        v["rows"].as_array_mut().unwrap().pop();
        assert!(GridResult::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn markdown_layout() {
        let md = grid().to_markdown();
        let header: Vec<&str> = md.lines().next().unwrap().split('|').map(str::trim).filter(|s| !s.is_empty()).collect();
        assert_eq!(
            header,
            [
                "Method",
                "Classification Accuracy",
                "Classification Precision",
                "Classification F1-Score",
                "Segmentation Accuracy",
                "Segmentation Precision",
                "Segmentation F1-Score",
                "Segmentation mIoU"
            ]
        );
        assert_eq!(md.lines().filter(|l| l.contains(" Enc. /w ")).count(), 4);
    }

    #[test]
    fn incomplete_rows_marked() {
        use RenderKind::*;
        let mut bad = row(Heatmap, Heatmap);
        bad.segmentation = None;
        bad.errors.push("segmentation: no test masks".into());
        let g = GridResult::new(vec![bad, row(Heatmap, Grayscale), row(Grayscale, Grayscale), row(Grayscale, Heatmap)]).unwrap();
        let md = g.to_markdown();
        assert!(md.contains("H Enc. /w H Dec. (incomplete)"));
        assert!(md.contains("n/a"));
        assert_eq!(GridResult::from_json(&g.to_json()).unwrap(), g);
    }
}
