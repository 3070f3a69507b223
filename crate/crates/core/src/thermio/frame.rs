use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, ThermioError, MIN_FRAME_SIZE};

/// Raw temperature matrix in degrees Celsius, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFrame {
    height: usize,
    width: usize,
    temps: Vec<f64>,
}

impl ThermalFrame {
    pub fn new(height: usize, width: usize, temps: Vec<f64>) -> Result<Self, ThermioError> {
        if height < MIN_FRAME_SIZE || width < MIN_FRAME_SIZE {
            return Err(ThermioError::InvalidFrame(format!(
                "{}x{} is below the {}x{} minimum",
                height, width, MIN_FRAME_SIZE, MIN_FRAME_SIZE
            )));
        }
        if temps.len() != height * width {
            return Err(ThermioError::InvalidFrame(format!(
                "{} values for a {}x{} frame",
                temps.len(),
                height,
                width
            )));
        }
        if let Some(i) = temps.iter().position(|t| !t.is_finite()) {
            return Err(ThermioError::InvalidFrame(format!("non-finite temperature at index {}", i)));
        }
        Ok(Self { height, width, temps })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn temps(&self) -> &[f64] {
        &self.temps
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.temps[y * self.width + x]
    }

    /// Parses the text format: a `H W` header line followed by `H` lines of
    /// `W` whitespace-separated temperatures.
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ThermioError> {
        let perr = |line: usize, message: String| ThermioError::ParseError {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty frame file".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| perr(hline + 1, format!("bad header: {}", e)))?;
        let [height, width] = dims[..] else {
            return Err(perr(hline + 1, "header must be `H W`".into()));
        };
        let mut temps = Vec::with_capacity(height * width);
        let mut rows = 0;
        for (i, line) in lines {
            if rows == height {
                return Err(perr(i + 1, format!("more than {} rows", height)));
            }
            let before = temps.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| perr(i + 1, format!("bad temperature {:?}", tok)))?;
                temps.push(v);
            }
            if temps.len() - before != width {
                return Err(perr(
                    i + 1,
                    format!("expected {} values, found {}", width, temps.len() - before),
                ));
            }
            rows += 1;
        }
        if rows != height {
            return Err(perr(text.lines().count(), format!("expected {} rows, found {}", height, rows)));
        }
        Self::new(height, width, temps)
    }

    pub fn read(path: &Path) -> Result<Self, ThermioError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.height, self.width);
        for row in self.temps.chunks(self.width) {
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write!(out, "{}", v).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ThermioError> {
        fs::write(path, self.to_text()).map_err(io_err(path))
    }
}

/// How temperatures are mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizeStrategy {
    /// Frame minimum to 0, maximum to 1; constant frames map to 0.5.
    PerFrameMinmax,
    /// `lo` to 0 and `hi` to 1, clamping outside values.
    FixedRange { lo: f64, hi: f64 },
}

impl Default for NormalizeStrategy {
    fn default() -> Self {
        NormalizeStrategy::PerFrameMinmax
    }
}

impl NormalizeStrategy {
    pub fn validate(&self) -> Result<(), ThermioError> {
        match *self {
            NormalizeStrategy::FixedRange { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                Err(ThermioError::InvalidRange { lo, hi })
            }
            _ => Ok(()),
        }
    }
}

/// Row-major normalised values in `[0, 1]`.
pub fn normalize_frame(frame: &ThermalFrame, strategy: NormalizeStrategy) -> Result<Vec<f64>, ThermioError> {
    strategy.validate()?;
    let temps = frame.temps();
    Ok(match strategy {
        NormalizeStrategy::PerFrameMinmax => {
            let lo = temps.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = temps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                temps.iter().map(|t| ((t - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
            } else {
                vec![0.5; temps.len()]
            }
        }
        NormalizeStrategy::FixedRange { lo, hi } => {
            temps.iter().map(|t| ((t - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Pads a short row out to a valid 16x16 frame by repetition.
    fn frame_from_row(row: &[f64]) -> ThermalFrame {
        let w = 16;
        let temps = (0..16 * w).map(|i| row[(i % w) % row.len()]).collect();
        ThermalFrame::new(16, w, temps).unwrap()
    }

    #[test]
    fn minmax_endpoints() {
        let f = frame_from_row(&[30.0, 40.0]);
        let n = normalize_frame(&f, NormalizeStrategy::PerFrameMinmax).unwrap();
        assert_eq!(&n[..2], &[0.0, 1.0]);
    }

    #[test]
    fn constant_frame_maps_to_half() {
        let f = frame_from_row(&[33.0]);
        let n = normalize_frame(&f, NormalizeStrategy::PerFrameMinmax).unwrap();
        assert!(n.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn fixed_range_clamps() {
        let f = ThermalFrame::new(16, 16, (0..256).map(|i| [25.0, 35.0, 45.0][i % 3]).collect()).unwrap();
        let n = normalize_frame(&f, NormalizeStrategy::FixedRange { lo: 30.0, hi: 40.0 }).unwrap();
        assert_eq!(&n[..3], &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn inverted_range_rejected() {
        let f = frame_from_row(&[30.0]);
        let err = normalize_frame(&f, NormalizeStrategy::FixedRange { lo: 40.0, hi: 40.0 }).unwrap_err();
        assert!(matches!(err, ThermioError::InvalidRange { .. }));
    }

    #[test]
    fn frame_invariants_enforced() {
        assert!(ThermalFrame::new(8, 16, vec![0.0; 128]).is_err());
        let mut t = vec![30.0; 256];
        t[7] = f64::NAN;
        assert!(ThermalFrame::new(16, 16, t).is_err());
    }

    #[test]
    fn text_round_trip() {
        let f = ThermalFrame::new(16, 17, (0..16 * 17).map(|i| 30.0 + i as f64 * 0.013).collect()).unwrap();
        let back = ThermalFrame::parse(&f.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn parse_reports_line_numbers() {
        let mut text = String::from("16 16\n");
        for r in 0..16 {
            let row = if r == 3 { "1 2 x".to_string() } else { vec!["30"; 16].join(" ") };
            text.push_str(&row);
            text.push('\n');
        }
        match ThermalFrame::parse(&text, Path::new("f.txt")) {
            Err(ThermioError::ParseError { line, .. }) => assert_eq!(line, 5),
            other => panic!("{:?}", other),
        }
    }
}
