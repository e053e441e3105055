use rand::Rng;

use super::{axpy, dot, NumericsError, Parameterized, Scalar};

/// Fully connected layer `y = W x + b`, with `W` stored row-major (out x in).
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<F> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<F>,
    pub bias: Option<Vec<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn zeros(in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![F::zero(); in_dim * out_dim],
            bias: bias.then(|| vec![F::zero(); out_dim]),
        }
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and bias.
    pub fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = || F::lit(rng.gen_range(-bound..=bound));
        let weight = (0..in_dim * out_dim).map(|_| draw()).collect();
        let bias = bias.then(|| (0..out_dim).map(|_| draw()).collect());
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut d = Self::zeros(dim, dim, true);
        for i in 0..dim {
            d.weight[i * dim + i] = F::one();
        }
        d
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.weight[r * self.in_dim..(r + 1) * self.in_dim]
    }

    pub fn check_input(&self, x: &[F], layer: usize) -> Result<(), NumericsError> {
        if x.len() != self.in_dim {
            return Err(NumericsError::Shape {
                layer,
                expected: self.in_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward_into(&self, x: &[F], y: &mut [F]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(y.len(), self.out_dim);
        for (r, out) in y.iter_mut().enumerate() {
            let b = self.bias.as_ref().map_or(F::zero(), |b| b[r]);
            *out = dot(self.row(r), x) + b;
        }
    }

    pub fn forward(&self, x: &[F]) -> Vec<F> {
        let mut y = vec![F::zero(); self.out_dim];
        self.forward_into(x, &mut y);
        y
    }

    /// Accumulates `dL/dW`, `dL/db` into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[F], dy: &[F], grad: &mut Dense<F>) -> Vec<F> {
        let mut dx = vec![F::zero(); self.in_dim];
        self.backward_into(x, dy, grad, Some(&mut dx));
        dx
    }

    pub fn backward_into(&self, x: &[F], dy: &[F], grad: &mut Dense<F>, dx: Option<&mut [F]>) {
        let in_dim = self.in_dim;
        for (r, &g) in dy.iter().enumerate() {
            if g == F::zero() {
                continue;
            }
            axpy(g, x, &mut grad.weight[r * in_dim..(r + 1) * in_dim]);
            if let Some(b) = grad.bias.as_mut() {
                b[r] = b[r] + g;
            }
        }
        if let Some(dx) = dx {
            for (r, &g) in dy.iter().enumerate() {
                if g != F::zero() {
                    axpy(g, self.row(r), dx);
                }
            }
        }
    }
}

impl<F: Scalar> Parameterized<F> for Dense<F> {
    fn params(&self) -> Vec<&[F]> {
        let mut v: Vec<&[F]> = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}
