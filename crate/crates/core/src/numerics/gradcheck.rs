use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Matrix;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Coordinates sampled per tensor; `None` checks every coordinate.
    pub samples_per_tensor: Option<usize>,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-5, samples_per_tensor: None, floor: 1e-6, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(tensor index, flat coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares analytic gradients against `(f(θ+eps) − f(θ−eps)) / 2eps`.
///
/// `loss_and_grad` must be deterministic. It returns the loss and one gradient
/// per tensor in `params`; only its loss is used at perturbed points.
pub fn finite_difference_grad_check<F>(params: &[Matrix], mut loss_and_grad: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: FnMut(&[Matrix]) -> (f64, Vec<Matrix>),
{
    let (_, analytic) = loss_and_grad(params);
    assert_eq!(analytic.len(), params.len(), "one gradient per parameter tensor");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Matrix> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0 };
    for t in 0..params.len() {
        assert_eq!(analytic[t].shape(), params[t].shape(), "gradient shape for tensor {t}");
        let n = params[t].len();
        let coords: Vec<usize> = match opts.samples_per_tensor {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for c in coords {
            let orig = work[t].data()[c];
            work[t].data_mut()[c] = orig + opts.eps;
            let (up, _) = loss_and_grad(&work);
            work[t].data_mut()[c] = orig - opts.eps;
            let (down, _) = loss_and_grad(&work);
            work[t].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * opts.eps);
            let a = analytic[t].data()[c];
            let denom = a.abs().max(numeric.abs()).max(opts.floor);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((t, c, a, numeric));
            }
        }
    }
    report
}
