use rand::Rng;

use super::{Dense, NumericsError, Parameterized, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(F::zero()),
        }
    }

    #[inline]
    pub fn derivative<F: Scalar>(self, pre: F) -> F {
        match self {
            Activation::Identity => F::one(),
            Activation::Relu => {
                if pre > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

/// Stack of dense layers with a hidden activation after every layer except
/// the last, which is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Dense<F>>,
    pub hidden_activation: Activation,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug, Default)]
pub struct MlpTape<F> {
    /// Input to each layer.
    inputs: Vec<Vec<F>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<F>>,
}

impl<F> MlpTape<F> {
    pub fn is_recorded(&self) -> bool {
        !self.inputs.is_empty()
    }
}

impl<F: Scalar> Mlp<F> {
    /// `dims = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let layers = dims
            .windows(2)
            .map(|w| Dense::uniform(w[0], w[1], true, rng))
            .collect();
        Self {
            layers,
            hidden_activation: Activation::Relu,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1], true)).collect(),
            hidden_activation: Activation::Relu,
        }
    }

    pub fn from_layers(layers: Vec<Dense<F>>, hidden_activation: Activation) -> Self {
        Self {
            layers,
            hidden_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    fn activation_for(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden_activation
        }
    }

    fn check(&self, x: &[F]) -> Result<(), NumericsError> {
        self.layers[0].check_input(x, 0)
    }

    /// Output only, nothing recorded.
    pub fn forward(&self, x: &[F]) -> Result<Vec<F>, NumericsError> {
        self.check(x)?;
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(l);
            let mut y = layer.forward(&h);
            for v in &mut y {
                *v = act.apply(*v);
            }
            h = y;
        }
        Ok(h)
    }

    pub fn forward_traced(&self, x: &[F]) -> Result<(Vec<F>, MlpTape<F>), NumericsError> {
        self.check(x)?;
        let mut tape = MlpTape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let act = self.activation_for(l);
            let pre = layer.forward(&h);
            let post: Vec<F> = pre.iter().map(|&v| act.apply(v)).collect();
            tape.inputs.push(std::mem::replace(&mut h, post));
            tape.pre.push(pre);
        }
        Ok((h, tape))
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(
        &self,
        tape: &MlpTape<F>,
        dy: &[F],
        grad: &mut Mlp<F>,
    ) -> Result<Vec<F>, NumericsError> {
        if !tape.is_recorded() {
            return Err(NumericsError::NoForward);
        }
        if dy.len() != self.out_dim() {
            return Err(NumericsError::Shape {
                layer: self.layers.len() - 1,
                expected: self.out_dim(),
                got: dy.len(),
            });
        }
        let mut g = dy.to_vec();
        for l in (0..self.layers.len()).rev() {
            let act = self.activation_for(l);
            if act != Activation::Identity {
                for (gi, &p) in g.iter_mut().zip(&tape.pre[l]) {
                    *gi = *gi * act.derivative(p);
                }
            }
            g = self.layers[l].backward(&tape.inputs[l], &g, &mut grad.layers[l]);
        }
        Ok(g)
    }
}

impl<F: Scalar> Parameterized<F> for Mlp<F> {
    fn params(&self) -> Vec<&[F]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [F]> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
