use super::{NumericsError, Parameterized, Scalar};

/// RMSProp: `v <- decay * v + (1 - decay) * g^2`, `p <- p - lr * g / (sqrt(v) + eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp<F> {
    pub lr: F,
    pub decay: F,
    pub eps: F,
    /// Running average of squared gradients, one array per parameter array.
    pub square_avg: Vec<Vec<F>>,
}

pub const RMS_DECAY: f64 = 0.99;
pub const RMS_EPS: f64 = 1e-8;

impl<F: Scalar> RmsProp<F> {
    pub fn new<P: Parameterized<F>>(model: &P, lr: F) -> Self {
        Self::with_constants(model, lr, F::lit(RMS_DECAY), F::lit(RMS_EPS))
    }

    pub fn with_constants<P: Parameterized<F>>(model: &P, lr: F, decay: F, eps: F) -> Self {
        let square_avg = model
            .params()
            .iter()
            .map(|p| vec![F::zero(); p.len()])
            .collect();
        Self {
            lr,
            decay,
            eps,
            square_avg,
        }
    }

    /// Applies one update. A non-finite gradient aborts before anything is
    /// modified.
    pub fn step<P: Parameterized<F>>(&mut self, model: &mut P, grads: &P) -> Result<(), NumericsError> {
        let g = grads.params();
        if g.iter().any(|a| a.iter().any(|v| !v.is_finite())) {
            return Err(NumericsError::NonFinite("gradient"));
        }
        let params = model.params_mut();
        if params.len() != g.len() || params.len() != self.square_avg.len() {
            return Err(NumericsError::Shape {
                layer: 0,
                expected: self.square_avg.len(),
                got: g.len(),
            });
        }
        let one = F::one();
        for ((p, g), v) in params.into_iter().zip(g).zip(self.square_avg.iter_mut()) {
            for ((pi, &gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = self.decay * *vi + (one - self.decay) * gi * gi;
                *pi = *pi - self.lr * gi / (vi.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so the global L2 norm is at most `max_norm`; returns the
/// norm before clipping. Norms within a relative 1e-12 of the limit are left
/// alone, which makes clipping idempotent.
pub fn clip_gradients<F: Scalar, P: Parameterized<F>>(grads: &mut P, max_norm: F) -> F {
    assert!(max_norm > F::zero(), "max_norm must be positive");
    let norm = grads.global_norm();
    if norm > max_norm * (F::one() + F::lit(1e-12)) {
        let scale = max_norm / norm;
        for p in grads.params_mut() {
            for v in p.iter_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dense;

    fn scalar_layer(w: f64) -> Dense<f64> {
        let mut d = Dense::zeros(1, 1, false);
        d.weight[0] = w;
        d
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_state() {
        let mut p = scalar_layer(0.5);
        let mut opt = RmsProp::new(&p, 1e-3);
        opt.square_avg[0][0] = 4.0;
        opt.step(&mut p, &scalar_layer(0.0)).unwrap();
        assert_eq!(p.weight[0], 0.5);
        assert!((opt.square_avg[0][0] - 3.96).abs() < 1e-15);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // v = 0.01 * 1 = 0.01, step = 1e-4 / (0.1 + 1e-8)
        let mut p = scalar_layer(0.0);
        let mut opt = RmsProp::new(&p, 1e-4);
        opt.step(&mut p, &scalar_layer(1.0)).unwrap();
        let expected = -1e-4 / (0.1 + 1e-8);
        assert!((p.weight[0] - expected).abs() < 1e-18);
        assert!((opt.square_avg[0][0] - 0.01).abs() < 1e-17);
    }

    #[test]
    fn constant_gradient_step_tends_to_lr() {
        let mut p = scalar_layer(0.0);
        let mut opt = RmsProp::new(&p, 1e-3);
        let g = scalar_layer(-2.5);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.weight[0];
            opt.step(&mut p, &g).unwrap();
            last = p.weight[0] - before;
        }
        // sign(g) = -1, so each step moves by +lr.
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar_layer(1.0);
        let mut opt = RmsProp::new(&p, 1e-3);
        assert!(opt.step(&mut p, &scalar_layer(f64::NAN)).is_err());
        assert_eq!(p.weight[0], 1.0);
    }

    fn two_vec(a: f64, b: f64) -> Dense<f64> {
        let mut d = Dense::zeros(2, 1, false);
        d.weight = vec![a, b];
        d
    }

    #[test]
    fn clip_below_limit_is_noop() {
        let mut g = two_vec(3.0, 4.0);
        let n = clip_gradients(&mut g, 10.0);
        assert_eq!(n, 5.0);
        assert_eq!(g.weight, vec![3.0, 4.0]);
    }

    #[test]
    fn clip_above_limit_scales() {
        let mut g = two_vec(12.0, 16.0);
        clip_gradients(&mut g, 10.0);
        assert!((g.weight[0] - 6.0).abs() < 1e-12);
        assert!((g.weight[1] - 8.0).abs() < 1e-12);
    }
}
