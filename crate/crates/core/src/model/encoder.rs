//! Feedforward building blocks for the recognition networks.

use rand::Rng;

use crate::ad::{AdError, Tape, Tensor};

/// Dense layer `x ↦ Wx + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: Tensor::uniform(vec![out_dim, in_dim], bound, rng),
            bias: Tensor::uniform(vec![out_dim], bound, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, AdError> {
        let wx = tape.matmul(&self.weight, x)?;
        tape.add(&wx, &self.bias)
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            weight: tape.watch(&self.weight),
            bias: tape.watch(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Fully connected net with tanh on hidden layers and a linear output layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for &w in hidden {
            layers.push(Linear::new(prev, w, rng));
            prev = w;
        }
        layers.push(Linear::new(prev, out_dim, rng));
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<Tensor, AdError> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, &h)?;
            if i != last {
                h = tape.tanh(&h)?;
            }
        }
        Ok(h)
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            layers: self.layers.iter().map(|l| l.watch(tape)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        for l in &self.layers {
            l.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.layers {
            l.visit_mut(f);
        }
    }
}

/// Recognition network producing the mean and log-variance of a diagonal
/// Gaussian posterior: a tanh trunk with two linear heads.
#[derive(Clone, Debug)]
pub struct GaussianEncoder {
    pub trunk: Vec<Linear>,
    pub mean_head: Linear,
    pub logvar_head: Linear,
}

impl GaussianEncoder {
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut prev = in_dim;
        for &w in hidden {
            trunk.push(Linear::new(prev, w, rng));
            prev = w;
        }
        Self {
            trunk,
            mean_head: Linear::new(prev, latent_dim, rng),
            logvar_head: Linear::new(prev, latent_dim, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<(Tensor, Tensor), AdError> {
        let mut h = x.clone();
        for layer in &self.trunk {
            h = layer.forward(tape, &h)?;
            h = tape.tanh(&h)?;
        }
        let mean = self.mean_head.forward(tape, &h)?;
        let logvar = self.logvar_head.forward(tape, &h)?;
        Ok((mean, logvar))
    }

    /// Posterior parameters on plain values.
    pub fn forward_vec(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::new();
        let (m, lv) = self
            .forward(&mut tape, &Tensor::from_slice(x))
            .expect("encoder shapes are fixed at construction");
        (m.data().to_vec(), lv.data().to_vec())
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            trunk: self.trunk.iter().map(|l| l.watch(tape)).collect(),
            mean_head: self.mean_head.watch(tape),
            logvar_head: self.logvar_head.watch(tape),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        for l in &self.trunk {
            l.visit(f);
        }
        self.mean_head.visit(f);
        self.logvar_head.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for l in &mut self.trunk {
            l.visit_mut(f);
        }
        self.mean_head.visit_mut(f);
        self.logvar_head.visit_mut(f);
    }
}
