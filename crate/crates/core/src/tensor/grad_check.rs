//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Tensor, TensorError, Var};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many randomly chosen coordinates per input.
    pub max_coords_per_input: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            max_coords_per_input: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Worst [`relative_error_beyond`] the difference noise.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose perturbation flipped a ReLU or max-pool decision;
    /// the loss is not differentiable across them.
    pub skipped_kinks: usize,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Rounding budget, in ulps of the loss, allowed for each loss evaluation.
pub const ROUNDOFF_ULPS: f64 = 16.0;

/// Cancellation error of a central difference of losses near `magnitude`.
pub fn difference_noise(magnitude: f64, eps: f64) -> f64 {
    ROUNDOFF_ULPS * f64::EPSILON * magnitude.max(1.0) / eps
}

/// [`relative_error`] after forgiving up to `noise` of absolute
/// disagreement.
pub fn relative_error_beyond(analytic: f64, numeric: f64, noise: f64) -> f64 {
    let excess = ((analytic - numeric).abs() - noise).max(0.0);
    excess / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn evaluate<T, F>(build: &F, inputs: &[Tensor<T>]) -> Result<(f64, Option<u64>), TensorError>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::with_branch_tracking();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok((g.value(loss).item().as_f64(), g.branch_fingerprint()))
}

/// Compares the tape gradient of the scalar produced by `build` against
/// central differences for every input tensor.
pub fn grad_check<T, F>(build: F, inputs: &[Tensor<T>], opts: GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    T: Real,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var, TensorError>,
{
    let mut g = Graph::with_branch_tracking();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    let base_print = g.branch_fingerprint();
    let grads = g.backward(loss)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eps = T::lit(opts.eps);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: None,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let zeros = Tensor::zeros(input.shape());
        let analytic = grads.get(vars[i]).unwrap_or(&zeros);
        let coords: Vec<usize> = match opts.max_coords_per_input {
            Some(k) if k < input.numel() => {
                let mut c = sample(&mut rng, input.numel(), k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..input.numel()).collect(),
        };
        for c in coords {
            let original = input.data()[c];
            work[i].data_mut()[c] = original + eps;
            let (plus, print_plus) = evaluate(&build, &work)?;
            work[i].data_mut()[c] = original - eps;
            let (minus, print_minus) = evaluate(&build, &work)?;
            work[i].data_mut()[c] = original;
            if print_plus != base_print || print_minus != base_print {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let noise = difference_noise(plus.abs().max(minus.abs()), opts.eps);
            let err = relative_error_beyond(analytic.data()[c].as_f64(), numeric, noise);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((i, c));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_only_forgives_cancellation() {
        let noise = difference_noise(213.0, 1e-5);
        assert!(noise < 1e-6);
        assert_eq!(relative_error_beyond(1e-3, 1e-3 + noise / 2.0, noise), 0.0);
        assert!(relative_error_beyond(1e-3, 1.1e-3, noise) > 0.04);
        assert_eq!(relative_error_beyond(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1.0, 1.1) - 0.1 / 2.1).abs() < 1e-15);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // weighted_sum of a relu is exact; doubling the input through a
        // concat with itself is also exact, so an error here means the
        // harness itself is broken.
        let x = Tensor::<f64>::new(vec![1, 1, 1, 3], vec![0.3, -0.7, 1.1]).unwrap();
        let report = grad_check(
            |g, v| {
                let c = g.concat(v[0], v[0], 1)?;
                let r = g.relu(c)?;
                g.weighted_sum(r, Tensor::from_fn(&[1, 2, 1, 3], |i| i as f64 - 2.0))
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.checked, 3);
        assert!(report.max_rel_error < 1e-8);
    }
}
