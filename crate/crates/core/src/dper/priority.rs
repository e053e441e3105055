use crate::numerics::{softmax, Scalar};
use crate::{Error, Result};

/// Default rescale range for raw priorities before the temperature softmax.
pub const PRIORITY_RANGE: (f64, f64) = (0.0, 20.0);

/// Min-max maps `raw` linearly onto `[lo, hi]`; all-equal input maps to the
/// midpoint.
pub fn rescale_priorities<F: Scalar>(raw: &[F], lo: F, hi: F) -> Vec<F> {
    let min = raw.iter().copied().fold(F::infinity(), F::min);
    let max = raw.iter().copied().fold(F::neg_infinity(), F::max);
    let span = max - min;
    if !(span > F::zero()) {
        let mid = (lo + hi) / F::lit(2.0);
        return vec![mid; raw.len()];
    }
    raw.iter().map(|&p| lo + (p - min) / span * (hi - lo)).collect()
}

/// Rescales raw episode priorities onto `[lo, hi]` and applies a softmax with
/// temperature `alpha`. Large `alpha` tends to uniform; small `alpha` puts all
/// mass on the best trajectory.
pub fn reshape_priorities<F: Scalar>(raw: &[F], alpha: F, lo: F, hi: F) -> Result<Vec<F>> {
    if raw.is_empty() {
        return Err(Error::InvalidArgument("no priorities to reshape".into()));
    }
    if !(alpha > F::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {alpha}")));
    }
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("empty rescale range [{lo}, {hi}]")));
    }
    let scaled: Vec<F> = rescale_priorities(raw, lo, hi).into_iter().map(|x| x / alpha).collect();
    Ok(softmax(&scaled)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reshape(raw: &[f64], alpha: f64) -> Vec<f64> {
        reshape_priorities(raw, alpha, 0.0, 20.0).unwrap()
    }

    #[test]
    fn equal_raw_gives_uniform() {
        let p = reshape(&[3.0; 4], 0.2);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(rescale_priorities(&[1.0f64, 1.0], 0.0, 20.0), vec![10.0, 10.0]);
    }

    #[test]
    fn huge_temperature_is_uniform() {
        // The rescaled spread is 20 / 1e6, so max - min is about 2e-5 / K;
        // the bound needs a bucket of a few dozen trajectories.
        let raw: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let p = reshape(&raw, 1e6);
        let max = p.iter().copied().fold(f64::MIN, f64::max);
        let min = p.iter().copied().fold(f64::MAX, f64::min);
        assert!(max - min <= 1e-6);
    }

    #[test]
    fn tiny_temperature_picks_the_top() {
        let p = reshape(&[0.3, 0.1, 0.9, 0.5], 1e-3);
        assert!(p[2] >= 0.999);
    }

    #[test]
    fn two_point_case_against_reference() {
        // p = [1, e^100] / (1 + e^100); low entry = 1/(1+e^100), computed with
        // 50-digit arithmetic.
        let p = reshape(&[0.0, 20.0], 0.2);
        let low = 3.720_075_976_020_835_963e-44;
        assert!(((p[0] - low) / low).abs() < 1e-12, "{}", p[0]);
        assert!(p[1] >= 1.0 - 1e-40);
    }

    #[test]
    fn bad_arguments() {
        assert!(reshape_priorities::<f64>(&[], 0.2, 0.0, 20.0).is_err());
        assert!(reshape_priorities(&[1.0f64], 0.0, 0.0, 20.0).is_err());
        assert!(reshape_priorities(&[1.0f64], 0.2, 5.0, 5.0).is_err());
    }

    proptest! {
        #[test]
        fn shift_invariant(raw in prop::collection::vec(-50.0f64..50.0, 1..40), c in -100.0f64..100.0) {
            let a = reshape(&raw, 0.2);
            let shifted: Vec<f64> = raw.iter().map(|x| x + c).collect();
            let b = reshape(&shifted, 0.2);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn monotone_and_normalized(raw in prop::collection::vec(-5.0f64..5.0, 2..40)) {
            let p = reshape(&raw, 1.0);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for i in 0..raw.len() {
                for j in 0..raw.len() {
                    if raw[i] > raw[j] {
                        prop_assert!(p[i] >= p[j]);
                        // strictly larger whenever the exponent gap is representable
                        let span = raw.iter().cloned().fold(f64::MIN, f64::max)
                            - raw.iter().cloned().fold(f64::MAX, f64::min);
                        if (raw[i] - raw[j]) / span * 20.0 > 1e-9 {
                            prop_assert!(p[i] > p[j]);
                        }
                    }
                }
            }
        }
    }
}
