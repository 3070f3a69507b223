//! Seeded spatial augmentation applied jointly to an image and its mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{bilinear, RenderedImage};
use super::{SegMask, ThermioError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Inclusive range of the crop side as a fraction of the image side.
    pub crop_fraction_range: [f64; 2],
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            crop_fraction_range: [0.8, 1.0],
            max_rotation_deg: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self {
            hflip_prob: 0.0,
            crop_fraction_range: [1.0, 1.0],
            max_rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ThermioError> {
        let [lo, hi] = self.crop_fraction_range;
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(ThermioError::InvalidConfig(format!("hflip_prob {} outside [0, 1]", self.hflip_prob)));
        }
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(ThermioError::InvalidConfig(format!("crop_fraction_range [{}, {}] outside (0, 1]", lo, hi)));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(ThermioError::InvalidConfig(format!("max_rotation_deg {}", self.max_rotation_deg)));
        }
        Ok(())
    }
}

/// Map from output pixel coordinates to source coordinates: rotate about
/// the image centre, scale into the crop window, then mirror horizontally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialTransform {
    pub height: usize,
    pub width: usize,
    pub flip: bool,
    pub scale: f64,
    pub crop_center: (f64, f64),
    pub angle_rad: f64,
}

impl SpatialTransform {
    pub fn identity(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            flip: false,
            scale: 1.0,
            crop_center: ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0),
            angle_rad: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, cfg: &AugmentConfig, height: usize, width: usize) -> Self {
        let flip = rng.random::<f64>() < cfg.hflip_prob;
        let [lo, hi] = cfg.crop_fraction_range;
        let scale = lo + (hi - lo) * rng.random::<f64>();
        let angle = (2.0 * rng.random::<f64>() - 1.0) * cfg.max_rotation_deg.to_radians();
        let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        let slack_y = (1.0 - scale) * cy;
        let slack_x = (1.0 - scale) * cx;
        let oy = (2.0 * rng.random::<f64>() - 1.0) * slack_y;
        let ox = (2.0 * rng.random::<f64>() - 1.0) * slack_x;
        Self {
            height,
            width,
            flip,
            scale,
            crop_center: (cy + oy, cx + ox),
            angle_rad: angle,
        }
    }

    fn center(&self) -> (f64, f64) {
        ((self.height as f64 - 1.0) / 2.0, (self.width as f64 - 1.0) / 2.0)
    }

    fn is_rigid_grid(&self) -> bool {
        self.scale == 1.0 && self.angle_rad == 0.0 && self.crop_center == self.center()
    }

    pub fn is_identity(&self) -> bool {
        !self.flip && self.is_rigid_grid()
    }

    /// Source coordinate `(y, x)` sampled by output pixel `(y, x)`.
    pub fn to_source(&self, y: f64, x: f64) -> (f64, f64) {
        let (cy, cx) = self.center();
        let (dy, dx) = (y - cy, x - cx);
        let (s, c) = self.angle_rad.sin_cos();
        let ry = c * dy - s * dx;
        let rx = s * dy + c * dx;
        let sy = self.scale * ry + self.crop_center.0;
        let mut sx = self.scale * rx + self.crop_center.1;
        if self.flip {
            sx = (self.width as f64 - 1.0) - sx;
        }
        (sy, sx)
    }

    /// Output coordinate that samples source `(y, x)`; inverse of
    /// [`to_source`](Self::to_source).
    pub fn from_source(&self, y: f64, x: f64) -> (f64, f64) {
        let (cy, cx) = self.center();
        let x = if self.flip { (self.width as f64 - 1.0) - x } else { x };
        let ry = (y - self.crop_center.0) / self.scale;
        let rx = (x - self.crop_center.1) / self.scale;
        let (s, c) = self.angle_rad.sin_cos();
        let dy = c * ry + s * rx;
        let dx = -s * ry + c * rx;
        (dy + cy, dx + cx)
    }

    pub fn apply_image(&self, img: &RenderedImage) -> RenderedImage {
        if self.is_identity() {
            return img.clone();
        }
        let (h, w) = (img.height(), img.width());
        let mut pixels = Vec::with_capacity(img.pixels().len());
        for c in 0..img.channels() {
            let plane = img.plane(c);
            for y in 0..h {
                for x in 0..w {
                    if self.is_rigid_grid() {
                        pixels.push(plane[y * w + (w - 1 - x)]);
                    } else {
                        let (sy, sx) = self.to_source(y as f64, x as f64);
                        pixels.push(bilinear(plane, h, w, sy, sx));
                    }
                }
            }
        }
        RenderedImage::new(img.kind(), h, w, pixels).expect("resampled values stay in [0, 1]")
    }

    pub fn apply_mask(&self, mask: &SegMask) -> SegMask {
        if self.is_identity() {
            return mask.clone();
        }
        let (h, w) = (mask.height(), mask.width());
        let mut labels = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = self.to_source(y as f64, x as f64);
                let sy = sy.round().clamp(0.0, (h - 1) as f64) as usize;
                let sx = sx.round().clamp(0.0, (w - 1) as f64) as usize;
                labels.push(mask.at(sy, sx));
            }
        }
        SegMask::new(h, w, labels).expect("labels copied from a valid mask")
    }
}

/// Applies one random spatial transform, drawn from `seed`, to the image
/// and (nearest-neighbour) to the mask.
pub fn augment(
    img: &RenderedImage,
    mask: Option<&SegMask>,
    seed: u64,
    config: &AugmentConfig,
) -> Result<(RenderedImage, Option<SegMask>), ThermioError> {
    config.validate()?;
    if let Some(m) = mask {
        if m.height() != img.height() || m.width() != img.width() {
            return Err(ThermioError::ShapeMismatch(format!(
                "mask {}x{} vs image {}x{}",
                m.height(),
                m.width(),
                img.height(),
                img.width()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = SpatialTransform::sample(&mut rng, config, img.height(), img.width());
    Ok((t.apply_image(img), mask.map(|m| t.apply_mask(m))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermio::RenderKind;

    fn image() -> RenderedImage {
        let (h, w) = (16, 20);
        let px = (0..3 * h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        RenderedImage::new(RenderKind::Heatmap, h, w, px).unwrap()
    }

    fn mask() -> SegMask {
        SegMask::new(16, 20, (0..320).map(|i| (i % 8) as u8).collect()).unwrap()
    }

    #[test]
    fn identity_config_is_exact_identity() {
        let (i, m) = augment(&image(), Some(&mask()), 3, &AugmentConfig::identity()).unwrap();
        assert_eq!(i, image());
        assert_eq!(m.unwrap(), mask());
    }

    #[test]
    fn double_flip_restores() {
        let cfg = AugmentConfig {
            hflip_prob: 1.0,
            ..AugmentConfig::identity()
        };
        let (once, m1) = augment(&image(), Some(&mask()), 1, &cfg).unwrap();
        assert_ne!(once, image());
        let (twice, m2) = augment(&once, m1.as_ref(), 2, &cfg).unwrap();
        assert_eq!(twice, image());
        assert_eq!(m2.unwrap(), mask());
    }

    #[test]
    fn same_seed_same_output() {
        let cfg = AugmentConfig::default();
        let a = augment(&image(), Some(&mask()), 42, &cfg).unwrap();
        let b = augment(&image(), Some(&mask()), 42, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.0.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn inverse_map_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let t = SpatialTransform::sample(&mut rng, &AugmentConfig::default(), 32, 40);
            let (sy, sx) = t.to_source(5.0, 17.0);
            let (y, x) = t.from_source(sy, sx);
            assert!((y - 5.0).abs() < 1e-9 && (x - 17.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = AugmentConfig {
            crop_fraction_range: [0.0, 1.0],
            ..AugmentConfig::identity()
        };
        assert!(augment(&image(), None, 0, &bad).is_err());
        let bad = AugmentConfig {
            hflip_prob: 1.5,
            ..AugmentConfig::identity()
        };
        assert!(bad.validate().is_err());
    }
}
