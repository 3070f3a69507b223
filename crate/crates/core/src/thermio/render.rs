use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::frame::{normalize_frame, NormalizeStrategy, ThermalFrame};
use super::{io_err, ThermioError};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderKind {
    Grayscale,
    Heatmap,
}

impl RenderKind {
    pub const ALL: [RenderKind; 2] = [RenderKind::Grayscale, RenderKind::Heatmap];

    pub fn channels(self) -> usize {
        match self {
            RenderKind::Grayscale => 1,
            RenderKind::Heatmap => 3,
        }
    }

    /// One-letter tag used in report row labels.
    pub fn letter(self) -> char {
        match self {
            RenderKind::Grayscale => 'G',
            RenderKind::Heatmap => 'H',
        }
    }

    /// Numeric code stored in checkpoint metadata.
    pub fn code(self) -> f64 {
        match self {
            RenderKind::Grayscale => 0.0,
            RenderKind::Heatmap => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Option<Self> {
        match code as i64 {
            0 => Some(RenderKind::Grayscale),
            1 => Some(RenderKind::Heatmap),
            _ => None,
        }
    }
}

impl fmt::Display for RenderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RenderKind::Grayscale => "grayscale",
            RenderKind::Heatmap => "heatmap",
        })
    }
}

impl std::str::FromStr for RenderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "grayscale" | "gray" | "g" => Ok(RenderKind::Grayscale),
            "heatmap" | "h" => Ok(RenderKind::Heatmap),
            other => Err(format!("unknown render kind {:?}", other)),
        }
    }
}

/// Jet-like palette control points `(t, r, g, b)`.
pub const COLORMAP: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Piecewise-linear colour for `t` in `[0, 1]` (clamped).
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    for pair in COLORMAP.windows(2) {
        let ((t0, c0), (t1, c1)) = (pair[0], pair[1]);
        if t <= t1 {
            let a = (t - t0) / (t1 - t0);
            return [0, 1, 2].map(|k| c0[k] + (c1[k] - c0[k]) * a);
        }
    }
    COLORMAP[COLORMAP.len() - 1].1
}

/// Planar `[C, H, W]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    kind: RenderKind,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl RenderedImage {
    pub fn new(kind: RenderKind, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, ThermioError> {
        if pixels.len() != kind.channels() * height * width {
            return Err(ThermioError::ShapeMismatch(format!(
                "{} values for a {}-channel {}x{} image",
                pixels.len(),
                kind.channels(),
                height,
                width
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ThermioError::InvalidFrame("rendered values must lie in [0, 1]".into()));
        }
        Ok(Self {
            kind,
            height,
            width,
            pixels,
        })
    }

    pub fn kind(&self) -> RenderKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    /// RGB value of one pixel; grayscale is replicated.
    pub fn rgb(&self, y: usize, x: usize) -> [f32; 3] {
        let i = y * self.width + x;
        let n = self.height * self.width;
        match self.kind {
            RenderKind::Grayscale => [self.pixels[i]; 3],
            RenderKind::Heatmap => [self.pixels[i], self.pixels[n + i], self.pixels[2 * n + i]],
        }
    }

    /// Three-channel `[1, 3, H, W]` tensor; grayscale is replicated.
    pub fn to_rgb_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.height * self.width;
        let data: Vec<T> = (0..3)
            .flat_map(|c| {
                let plane = match self.kind {
                    RenderKind::Grayscale => self.plane(0),
                    RenderKind::Heatmap => self.plane(c),
                };
                plane.iter().map(|&v| T::lit(v as f64))
            })
            .collect();
        debug_assert_eq!(data.len(), 3 * n);
        Tensor::new(vec![1, 3, self.height, self.width], data).expect("image shape")
    }

    /// Bilinear resampling to `height x width` (half-pixel centres).
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut pixels = Vec::with_capacity(self.channels() * height * width);
        for c in 0..self.channels() {
            let plane = self.plane(c);
            for y in 0..height {
                for x in 0..width {
                    let fy = (y as f64 + 0.5) * sy - 0.5;
                    let fx = (x as f64 + 0.5) * sx - 0.5;
                    pixels.push(bilinear(plane, self.height, self.width, fy, fx));
                }
            }
        }
        Self {
            kind: self.kind,
            height,
            width,
            pixels,
        }
    }

    /// Interleaved 8-bit samples (`round(v * 255)`).
    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let c = self.channels();
        let mut out = Vec::with_capacity(n * c);
        for i in 0..n {
            for k in 0..c {
                out.push(quantize(self.pixels[k * n + i]));
            }
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ThermioError> {
        let color = match self.kind {
            RenderKind::Grayscale => png::ColorType::Grayscale,
            RenderKind::Heatmap => png::ColorType::Rgb,
        };
        write_png(path, self.width, self.height, color, &self.to_u8_interleaved())
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Bilinear sample with edge clamping.
pub(crate) fn bilinear(plane: &[f32], h: usize, w: usize, fy: f64, fx: f64) -> f32 {
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ay, ax) = (fy - y0 as f64, fx - x0 as f64);
    let at = |y: usize, x: usize| plane[y * w + x] as f64;
    let top = at(y0, x0) * (1.0 - ax) + at(y0, x1) * ax;
    let bottom = at(y1, x0) * (1.0 - ax) + at(y1, x1) * ax;
    ((top * (1.0 - ay) + bottom * ay) as f32).clamp(0.0, 1.0)
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<(), ThermioError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| ThermioError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(data).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Normalises `frame` and renders it as grayscale or heatmap.
pub fn render(frame: &ThermalFrame, kind: RenderKind, strategy: NormalizeStrategy) -> Result<RenderedImage, ThermioError> {
    let t = normalize_frame(frame, strategy)?;
    let pixels = match kind {
        RenderKind::Grayscale => t.iter().map(|&v| v as f32).collect(),
        RenderKind::Heatmap => {
            let colors: Vec<[f64; 3]> = t.iter().map(|&v| colormap(v)).collect();
            (0..3)
                .flat_map(|k| colors.iter().map(move |c| c[k] as f32))
                .collect()
        }
    };
    RenderedImage::new(kind, frame.height(), frame.width(), pixels)
}
