use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::f1_report;
use crate::corpus::DiscourseLabel;
use crate::error::{Error, Result};

pub const MIN_TRIALS: usize = 1000;
pub const DEFAULT_TRIALS: usize = 10_000;

/// Approximate randomisation test on the weighted-F1 difference between two
/// systems. Each trial swaps the two systems' predictions on every item
/// with probability 1/2; the p-value is the fraction of trials whose
/// absolute difference reaches the observed one.
pub fn significance(
    preds_a: &[DiscourseLabel],
    preds_b: &[DiscourseLabel],
    truths: &[DiscourseLabel],
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if preds_a.len() != truths.len() || preds_b.len() != truths.len() {
        return Err(Error::Shape(format!(
            "prediction lists of {} and {} items for {} truths",
            preds_a.len(),
            preds_b.len(),
            truths.len()
        )));
    }
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!("need at least {MIN_TRIALS} trials, got {trials}")));
    }
    let observed = (f1_report(preds_a, truths)?.weighted_f1 - f1_report(preds_b, truths)?.weighted_f1).abs();
    if preds_a == preds_b {
        return Ok(1.0);
    }
    // Tolerance absorbs summation-order noise between equal differences.
    let threshold = observed - 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = preds_a.to_vec();
    let mut b = preds_b.to_vec();
    let mut hits = 0usize;
    for _ in 0..trials {
        for i in 0..truths.len() {
            let swap = rng.random_bool(0.5);
            let (x, y) = if swap { (preds_b[i], preds_a[i]) } else { (preds_a[i], preds_b[i]) };
            a[i] = x;
            b[i] = y;
        }
        let diff = (f1_report(&a, truths)?.weighted_f1 - f1_report(&b, truths)?.weighted_f1).abs();
        if diff >= threshold {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
