//! Anchor/positive/negative pixel sampling and the InfoNCE objective.

use rand::Rng;

use super::{EncoderConfig, EncoderError};
use crate::scalar::Real;
use crate::thermio::SpatialTransform;

/// Pixel of image `image` in the batch pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRef {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// One contrastive tuple. `anchor` and `negatives` address original
/// images; `positive` addresses the augmented view of the anchor's image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSet {
    pub anchor: PixelRef,
    pub positive: PixelRef,
    pub negatives: Vec<PixelRef>,
}

fn chebyshev(ay: f64, ax: f64, by: f64, bx: f64) -> f64 {
    (ay - by).abs().max((ax - bx).abs())
}

impl PatchSet {
    /// Chebyshev distance, in original-image pixels, between the anchor and
    /// the source location of the positive under `view`.
    pub fn positive_distance(&self, view: &SpatialTransform) -> f64 {
        let (sy, sx) = view.to_source(self.positive.y as f64, self.positive.x as f64);
        chebyshev(self.anchor.y as f64, self.anchor.x as f64, sy, sx)
    }

    /// Whether `n` fails the positive criterion for this anchor.
    pub fn is_valid_negative(&self, n: &PixelRef, radius: usize) -> bool {
        n.image != self.anchor.image
            || chebyshev(self.anchor.y as f64, self.anchor.x as f64, n.y as f64, n.x as f64) > (4 * radius) as f64
    }
}

const MAX_TRIES: usize = 256;

/// Draws `anchors_per_image` tuples for image `image`. `views[i]` is the
/// augmentation applied to pool image `i`; it also fixes the image size.
pub fn sample_patches<R: Rng + ?Sized>(
    image: usize,
    views: &[SpatialTransform],
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<Vec<PatchSet>, EncoderError> {
    if views.len() < 2 {
        return Err(EncoderError::InsufficientPool(views.len()));
    }
    let view = views
        .get(image)
        .ok_or_else(|| EncoderError::ShapeMismatch(format!("image {image} not in a pool of {}", views.len())))?;
    let (h, w) = (view.height, view.width);
    let r = cfg.positive_radius;
    if h <= 2 * r || w <= 2 * r {
        return Err(EncoderError::InvalidConfig(format!(
            "positive radius {r} leaves no interior in a {h}x{w} image"
        )));
    }
    let reach = (r - 1) as i64;
    let mut out = Vec::with_capacity(cfg.anchors_per_image);
    while out.len() < cfg.anchors_per_image {
        let mut found = None;
        for _ in 0..MAX_TRIES {
            let ay = rng.random_range(r..h - r);
            let ax = rng.random_range(r..w - r);
            let qy = ay as f64 + rng.random_range(-reach..=reach) as f64;
            let qx = ax as f64 + rng.random_range(-reach..=reach) as f64;
            let (vy, vx) = view.from_source(qy, qx);
            let (vy, vx) = (vy.round(), vx.round());
            if vy < 0.0 || vx < 0.0 || vy >= h as f64 || vx >= w as f64 {
                continue;
            }
            let (sy, sx) = view.to_source(vy, vx);
            if chebyshev(ay as f64, ax as f64, sy, sx) <= r as f64 {
                found = Some((
                    PixelRef { image, y: ay, x: ax },
                    PixelRef {
                        image,
                        y: vy as usize,
                        x: vx as usize,
                    },
                ));
                break;
            }
        }
        let Some((anchor, positive)) = found else {
            return Err(EncoderError::InvalidConfig(
                "could not place a positive inside the augmented view".into(),
            ));
        };
        let far = (4 * r) as f64;
        let same_has_room = h as f64 > 2.0 * far + 1.0 || w as f64 > 2.0 * far + 1.0;
        let mut negatives = Vec::with_capacity(cfg.negatives);
        while negatives.len() < cfg.negatives {
            if same_has_room && rng.random_bool(0.5) {
                let y = rng.random_range(0..h);
                let x = rng.random_range(0..w);
                if chebyshev(anchor.y as f64, anchor.x as f64, y as f64, x as f64) > far {
                    negatives.push(PixelRef { image, y, x });
                }
            } else {
                let mut other = rng.random_range(0..views.len() - 1);
                if other >= image {
                    other += 1;
                }
                let ov = &views[other];
                negatives.push(PixelRef {
                    image: other,
                    y: rng.random_range(0..ov.height),
                    x: rng.random_range(0..ov.width),
                });
            }
        }
        out.push(PatchSet {
            anchor,
            positive,
            negatives,
        });
    }
    Ok(out)
}

fn check_unit<T: Real>(v: &[T]) -> Result<(), EncoderError> {
    let norm = v.iter().map(|x| x.as_f64().powi(2)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-3 {
        return Err(EncoderError::NonUnitInput { norm });
    }
    Ok(())
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// InfoNCE: `-log(exp(<a,p>/tau) / (exp(<a,p>/tau) + sum_k exp(<a,n_k>/tau)))`.
pub fn contrastive_loss<T: Real>(anchor: &[T], positive: &[T], negatives: &[&[T]], tau: T) -> Result<T, EncoderError> {
    if !(tau > T::zero()) {
        return Err(EncoderError::InvalidConfig("temperature must be > 0".into()));
    }
    if negatives.is_empty() {
        return Err(EncoderError::InvalidConfig("at least one negative is required".into()));
    }
    check_unit(anchor)?;
    check_unit(positive)?;
    for n in negatives {
        check_unit(n)?;
    }
    if positive.len() != anchor.len() || negatives.iter().any(|n| n.len() != anchor.len()) {
        return Err(EncoderError::ShapeMismatch("vectors differ in length".into()));
    }
    let pos = dot(anchor, positive) / tau;
    let logits: Vec<T> = negatives.iter().map(|n| dot(anchor, n) / tau).collect();
    let max = logits.iter().fold(pos, |m, &l| m.max(l));
    let sum = (pos - max).exp() + logits.iter().map(|&l| (l - max).exp()).sum::<T>();
    Ok(max + sum.ln() - pos)
}
