use super::{NumericsError, Scalar};

/// Numerically stable softmax (max-subtracted).
pub fn softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty("softmax"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite("softmax logits"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: F = out.iter().copied().sum();
    for v in &mut out {
        *v = *v / total;
    }
    Ok(out)
}

pub fn log_softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>, NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::Empty("log_softmax"));
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite("log_softmax logits"));
    }
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = logits.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
    Ok(logits.iter().map(|&x| x - lse).collect())
}

/// Vector-Jacobian product of softmax: given `p = softmax(z)` and `dL/dp`,
/// returns `dL/dz`.
pub fn softmax_backward<F: Scalar>(p: &[F], dp: &[F]) -> Vec<F> {
    let inner: F = p.iter().zip(dp).map(|(&pi, &di)| pi * di).sum();
    p.iter().zip(dp).map(|(&pi, &di)| pi * (di - inner)).collect()
}

/// Gradient of `-w * log softmax(z)[target]` with respect to `z`.
pub fn nll_backward<F: Scalar>(probs: &[F], target: usize, weight: F) -> Vec<F> {
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let onehot = if k == target { F::one() } else { F::zero() };
            weight * (p - onehot)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_for_equal_logits() {
        let p = softmax(&[0.7f64, 0.7, 0.7]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_logit_does_not_overflow() {
        let p = softmax(&[0.0f64, 1e6]).unwrap();
        assert!(p[0] < 1e-300);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn matches_high_precision_reference() {
        // e^1, e^2, e^3 normalized; reference computed with 50-digit arithmetic.
        let expected = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_89,
        ];
        let p = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        for (a, b) in p.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(softmax::<f64>(&[]), Err(NumericsError::Empty(_))));
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let z = [0.3f64, -1.2, 4.0, 2.5];
        let p = softmax(&z).unwrap();
        let lp = log_softmax(&z).unwrap();
        for (a, b) in p.iter().zip(lp) {
            assert!((a.ln() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let p = softmax(&[1.0f32, 2.0, 3.0]).unwrap();
        let s: f32 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
