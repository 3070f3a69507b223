//! Synthetic torso phantoms: a smooth background temperature field with
//! seven warm elliptical regions. Malignant phantoms carry an extra hot
//! focus inside one breast.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ClassLabel, SegMask, ThermalFrame, ThermioError};

/// Smallest phantom extent.
pub const MIN_PHANTOM_SIZE: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub frame: ThermalFrame,
    pub mask: SegMask,
    pub label: ClassLabel,
}

struct Region {
    label: u8,
    /// centre `(u, v)` and radii in unit image coordinates
    cu: f64,
    cv: f64,
    ru: f64,
    rv: f64,
    /// temperature rise over the background at the region centre
    rise: f64,
}

// (label, cu, cv, ru, rv, rise); later entries paint over earlier ones.
const LAYOUT: [(u8, f64, f64, f64, f64, f64); 7] = [
    (7, 0.50, 0.13, 0.11, 0.09, 2.8),
    (5, 0.12, 0.36, 0.07, 0.09, 4.0),
    (6, 0.88, 0.36, 0.07, 0.09, 4.0),
    (1, 0.31, 0.66, 0.15, 0.15, 2.0),
    (2, 0.69, 0.66, 0.15, 0.15, 2.0),
    (3, 0.31, 0.71, 0.05, 0.05, 3.2),
    (4, 0.69, 0.71, 0.05, 0.05, 3.2),
];

/// Bound of the per-pixel sensor noise, degrees.
const NOISE: f64 = 0.2;

impl Region {
    /// Squared elliptical radius of unit point `(u, v)`.
    fn d2(&self, u: f64, v: f64) -> f64 {
        ((u - self.cu) / self.ru).powi(2) + ((v - self.cv) / self.rv).powi(2)
    }
}

fn phantom<R: Rng>(rng: &mut R, height: usize, width: usize) -> Phantom {
    let base = rng.random_range(27.0..=28.0);
    let grad_u = rng.random_range(-0.5..=0.5);
    let grad_v = rng.random_range(-0.5..=0.5);
    let shift_u = rng.random_range(-0.03..=0.03);
    let shift_v = rng.random_range(-0.03..=0.03);
    let zoom = rng.random_range(0.95..=1.05);
    let regions: Vec<Region> = LAYOUT
        .iter()
        .map(|&(label, cu, cv, ru, rv, rise)| {
            let size = rng.random_range(0.9..=1.1);
            Region {
                label,
                cu: 0.5 + (cu - 0.5) * zoom + shift_u + rng.random_range(-0.015..=0.015),
                cv: 0.5 + (cv - 0.5) * zoom + shift_v + rng.random_range(-0.015..=0.015),
                ru: ru * zoom * size,
                rv: rv * zoom * size,
                rise: rise + rng.random_range(-0.25..=0.25),
            }
        })
        .collect();
    let label = if rng.random_bool(0.5) {
        ClassLabel::Malignant
    } else {
        ClassLabel::Benign
    };

    let n = height * width;
    let mut labels = vec![0u8; n];
    let mut temps = vec![0.0; n];
    for y in 0..height {
        let v = (y as f64 + 0.5) / height as f64;
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64;
            let mut t = base + grad_u * (u - 0.5) + grad_v * (v - 0.5);
            let mut lab = 0;
            let mut rise = 0.0;
            for r in &regions {
                let d2 = r.d2(u, v);
                if d2 <= 1.0 {
                    lab = r.label;
                    rise = r.rise * (0.85 + 0.15 * (1.0 - d2));
                }
            }
            t += rise;
            labels[y * width + x] = lab;
            temps[y * width + x] = t;
        }
    }

    // Focal hot spot centred on a breast pixel away from the nipple.
    let focus = rng.random_range(5.0..=6.0);
    let focus_radius = rng.random_range(0.06..=0.08);
    let side = rng.random_range(0..2usize);
    let breast = &regions[3 + side];
    let nipple = &regions[5 + side];
    let unit = |i: usize| (((i % width) as f64 + 0.5) / width as f64, ((i / width) as f64 + 0.5) / height as f64);
    let in_breast: Vec<usize> = (0..n).filter(|&i| labels[i] == breast.label).collect();
    let away: Vec<usize> = in_breast
        .iter()
        .copied()
        .filter(|&i| {
            let (u, v) = unit(i);
            breast.d2(u, v) <= 0.7 && ((u - nipple.cu).powi(2) + (v - nipple.cv).powi(2)).sqrt() > nipple.ru + 0.5 * focus_radius
        })
        .collect();
    let candidates = if away.is_empty() { &in_breast } else { &away };
    let pick = rng.random_range(0..candidates.len().max(1));
    if label == ClassLabel::Malignant {
        let (fu, fv) = candidates.get(pick).map_or((breast.cu, breast.cv), |&c| unit(c));
        for i in 0..n {
            let (u, v) = unit(i);
            if labels[i] == breast.label && ((u - fu).powi(2) + (v - fv).powi(2)).sqrt() <= focus_radius {
                temps[i] += focus;
            }
        }
    }

    for t in temps.iter_mut() {
        *t += rng.random_range(-NOISE..=NOISE);
    }
    Phantom {
        frame: ThermalFrame::new(height, width, temps).expect("phantom frame is valid"),
        mask: SegMask::new(height, width, labels).expect("phantom labels are valid"),
        label,
    }
}

/// Generates `n` phantoms from a single seeded stream.
pub fn synth_generate(seed: u64, n: usize, height: usize, width: usize) -> Result<Vec<Phantom>, ThermioError> {
    if n == 0 {
        return Err(ThermioError::InvalidConfig("phantom count must be >= 1".into()));
    }
    if height < MIN_PHANTOM_SIZE || width < MIN_PHANTOM_SIZE {
        return Err(ThermioError::InvalidConfig(format!(
            "phantoms need at least {}x{} pixels",
            MIN_PHANTOM_SIZE, MIN_PHANTOM_SIZE
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| phantom(&mut rng, height, width)).collect())
}
