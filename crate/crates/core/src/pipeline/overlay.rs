//! Label overlays for visual inspection.

use crate::thermio::{RenderKind, RenderedImage, SegMask, ThermioError, NUM_CLASSES};

/// Blend weight of the label colour.
pub const OVERLAY_ALPHA: f32 = 0.5;

/// Colours of labels 1..=7.
pub const PALETTE: [[f32; 3]; NUM_CLASSES - 1] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.35, 0.90],
    [1.00, 0.85, 0.10],
    [0.10, 0.85, 0.85],
    [0.20, 0.80, 0.20],
    [0.85, 0.20, 0.85],
    [1.00, 0.55, 0.00],
];

pub const LEGEND_HEIGHT: usize = 8;

fn rgb_image(height: usize, width: usize, px: impl Fn(usize, usize) -> [f32; 3]) -> RenderedImage {
    let mut planes = vec![0.0f32; 3 * height * width];
    for y in 0..height {
        for x in 0..width {
            let c = px(y, x);
            for (k, v) in c.iter().enumerate() {
                planes[k * height * width + y * width + x] = *v;
            }
        }
    }
    RenderedImage::new(RenderKind::Heatmap, height, width, planes).expect("overlay values stay in [0, 1]")
}

/// Labels 1..=7 blended over the rendering at [`OVERLAY_ALPHA`], with a
/// legend strip of the seven colours appended below.
pub fn render_overlay(image: &RenderedImage, mask: &SegMask) -> Result<RenderedImage, ThermioError> {
    let (h, w) = (image.height(), image.width());
    if (mask.height(), mask.width()) != (h, w) {
        return Err(ThermioError::ShapeMismatch(format!(
            "image {h}x{w}, mask {}x{}",
            mask.height(),
            mask.width()
        )));
    }
    Ok(rgb_image(h + LEGEND_HEIGHT, w, |y, x| {
        if y >= h {
            return PALETTE[x * (NUM_CLASSES - 1) / w];
        }
        let base = image.rgb(y, x);
        match mask.at(y, x) {
            0 => base,
            l => {
                let c = PALETTE[l as usize - 1];
                [0, 1, 2].map(|k| (1.0 - OVERLAY_ALPHA) * base[k] + OVERLAY_ALPHA * c[k])
            }
        }
    }))
}

/// `left` and `right` next to each other, separated by a white column.
pub fn side_by_side(left: &RenderedImage, right: &RenderedImage) -> Result<RenderedImage, ThermioError> {
    if left.height() != right.height() {
        return Err(ThermioError::ShapeMismatch("panels differ in height".into()));
    }
    let (h, lw, rw) = (left.height(), left.width(), right.width());
    Ok(rgb_image(h, lw + 1 + rw, |y, x| match x {
        x if x < lw => left.rgb(y, x),
        x if x == lw => [1.0; 3],
        x => right.rgb(y, x - lw - 1),
    }))
}

/// Prediction overlay (left) beside ground-truth overlay (right).
pub fn compare_overlay(image: &RenderedImage, predicted: &SegMask, truth: &SegMask) -> Result<RenderedImage, ThermioError> {
    side_by_side(&render_overlay(image, predicted)?, &render_overlay(image, truth)?)
}
