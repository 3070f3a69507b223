use std::fs;
use std::path::Path;

use super::{io_err, ThermioError};

/// Background plus the seven anatomical regions.
pub const NUM_CLASSES: usize = 8;

pub const REGION_NAMES: [&str; NUM_CLASSES] = [
    "background",
    "left breast",
    "right breast",
    "left nipple",
    "right nipple",
    "left armpit",
    "right armpit",
    "neck",
];

/// Per-pixel label field, row-major, labels in `0..8`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl SegMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self, ThermioError> {
        if labels.len() != height * width {
            return Err(ThermioError::ShapeMismatch(format!(
                "{} labels for a {}x{} mask",
                labels.len(),
                height,
                width
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(ThermioError::InvalidFrame(format!("mask label {} outside 0..=7", bad)));
        }
        Ok(Self { height, width, labels })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Labels present in the mask, ascending.
    pub fn present(&self) -> Vec<u8> {
        let mut seen = [false; NUM_CLASSES];
        self.labels.iter().for_each(|&l| seen[l as usize] = true);
        (0..NUM_CLASSES as u8).filter(|&l| seen[l as usize]).collect()
    }

    /// Nearest-neighbour resampling.
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            let sy = (((y as f64 + 0.5) * self.height as f64 / height as f64) as usize).min(self.height - 1);
            for x in 0..width {
                let sx = (((x as f64 + 0.5) * self.width as f64 / width as f64) as usize).min(self.width - 1);
                labels.push(self.labels[sy * self.width + sx]);
            }
        }
        Self { height, width, labels }
    }

    /// Binary PGM (P5), maxval 255, label values stored verbatim.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.labels);
        out
    }

    pub fn from_pgm(bytes: &[u8], origin: &Path) -> Result<Self, ThermioError> {
        let perr = |message: &str| ThermioError::ParseError {
            path: origin.to_path_buf(),
            line: 1,
            message: message.to_string(),
        };
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                match bytes[pos] {
                    b'#' => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    c if c.is_ascii_whitespace() => pos += 1,
                    _ => break,
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(perr("truncated PGM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| perr("bad header"))?);
        }
        if fields[0] != "P5" {
            return Err(perr("expected P5 magic"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| perr("bad header number"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(perr("maxval must be 255"));
        }
        // exactly one whitespace byte separates header and raster
        pos += 1;
        let raster = bytes.get(pos..).ok_or_else(|| perr("missing raster"))?;
        if raster.len() != width * height {
            return Err(perr(&format!("raster has {} bytes, expected {}", raster.len(), width * height)));
        }
        Self::new(height, width, raster.to_vec())
    }

    pub fn read(path: &Path) -> Result<Self, ThermioError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_pgm(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<(), ThermioError> {
        fs::write(path, self.to_pgm()).map_err(io_err(path))
    }
}
