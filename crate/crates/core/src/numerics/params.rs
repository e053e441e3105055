use super::Scalar;

/// Anything that owns trainable parameter arrays.
///
/// The same type doubles as its own gradient buffer: a gradient is a clone of
/// the model with every array zeroed, so shapes always line up.
pub trait Parameterized<F: Scalar> {
    fn params(&self) -> Vec<&[F]>;
    fn params_mut(&mut self) -> Vec<&mut [F]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn fill_zero(&mut self) {
        for p in self.params_mut() {
            p.fill(F::zero());
        }
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill_zero();
        z
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Global L2 norm over every array.
    fn global_norm(&self) -> F {
        self.params()
            .iter()
            .flat_map(|p| p.iter())
            .map(|&v| v * v)
            .sum::<F>()
            .sqrt()
    }

    /// Copies every array from `other`, which must have identical shapes.
    fn copy_from(&mut self, other: &Self) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            dst.copy_from_slice(src);
        }
    }

    /// `self += scale * other`
    fn add_scaled(&mut self, other: &Self, scale: F) {
        for (dst, src) in self.params_mut().into_iter().zip(other.params()) {
            super::axpy(scale, src, dst);
        }
    }
}

/// Flattens every parameter into one vector (stable order).
pub fn flatten<F: Scalar, P: Parameterized<F> + ?Sized>(p: &P) -> Vec<F> {
    p.params().iter().flat_map(|s| s.iter().copied()).collect()
}
