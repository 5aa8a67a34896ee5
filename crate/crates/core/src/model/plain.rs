//! The single-prior model: standard normal latent, Gaussian recognition
//! network, inverse-Lipschitz Brenier decoder.

use rand::RngCore;

use super::{
    draw_standard_normal, ensure_finite, gaussian_kl_taped, Decoder, ElboTerms, GaussComponent,
    GaussianEncoder, ModelConfig, ModelError, Sample, VaeModel,
};
use crate::ad::{Tape, Tensor};
use crate::expfam::ExpFamily;

#[derive(Debug)]
pub struct IlLidVae {
    pub encoder: GaussianEncoder,
    pub decoder: Decoder,
    pub likelihood: ExpFamily,
}

impl IlLidVae {
    pub fn from_config(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        let encoder = GaussianEncoder::new(
            cfg.data_dim,
            &cfg.encoder.widths(),
            cfg.latent_dim,
            rng,
        );
        let decoder = Decoder::from_config(cfg, rng)?;
        Ok(Self {
            encoder,
            decoder,
            likelihood: cfg.likelihood(),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn data_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.data_dim() {
            return Err(ModelError::DimensionMismatch {
                expected: self.data_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Single-sample reparameterized ELBO
    /// `E_q[log p(x|z)] − KL(q(z|x)‖N(0,I))` with `z = μ + σ⊙ε`.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        x: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<ElboTerms, ModelError> {
        let eps = draw_standard_normal(self.latent_dim(), rng);
        self.elbo_with_noise(tape, x, &eps)
    }

    /// ELBO with the reparameterization noise supplied by the caller; used by
    /// gradient checks, which need a deterministic objective.
    pub fn elbo_with_noise(
        &self,
        tape: &mut Tape,
        x: &[f64],
        eps: &[f64],
    ) -> Result<ElboTerms, ModelError> {
        self.check_input(x)?;
        let l = self.latent_dim();
        if eps.len() != l {
            return Err(ModelError::DimensionMismatch {
                expected: l,
                got: eps.len(),
            });
        }
        let x_t = Tensor::from_slice(x);
        let (mean, logvar) = self.encoder.forward(tape, &x_t)?;
        let std = {
            let half = tape.mul(&Tensor::scalar(0.5), &logvar)?;
            tape.exp(&half)?
        };
        let scaled_noise = tape.mul(&std, &Tensor::from_slice(eps))?;
        let z = tape.add(&mean, &scaled_noise)?;

        let (xi, stage1) = self.decoder.forward_with_stage1(tape, &z)?;
        let recon = self.likelihood.log_density_taped(tape, x, &xi)?;
        let zero = Tensor::zeros(vec![l]);
        let kl = gaussian_kl_taped(tape, &mean, &logvar, &zero, &zero)?;

        let reconstruction = ensure_finite(recon.item(), "reconstruction")?;
        let kl_value = ensure_finite(kl.item(), "kl")?;
        let value = tape.sub(&recon, &kl)?;
        Ok(ElboTerms {
            value,
            reconstruction,
            kl: kl_value,
            pairs: vec![(z.data().to_vec(), stage1)],
        })
    }

    /// Ancestral sampling: `z ~ N(0,I)`, `x ~ EF(x|f(z))`.
    pub fn generate(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let z = draw_standard_normal(self.latent_dim(), rng);
                let xi = self
                    .decoder
                    .forward_vec(&z)
                    .expect("latent dimension fixed by the model");
                Sample {
                    x: self.likelihood.sample(&xi, rng),
                    label: None,
                }
            })
            .collect()
    }

    pub fn prior_components(&self) -> Vec<GaussComponent> {
        vec![GaussComponent {
            weight: 1.0,
            mean: vec![0.0; self.latent_dim()],
            logvar: vec![0.0; self.latent_dim()],
        }]
    }

    pub fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent> {
        let (mean, logvar) = self.encoder.forward_vec(x);
        vec![GaussComponent {
            weight: 1.0,
            mean,
            logvar,
        }]
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            encoder: self.encoder.watch(tape),
            decoder: self.decoder.watch(tape),
            likelihood: self.likelihood.clone(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        self.encoder.visit(f);
        self.decoder.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

impl VaeModel for IlLidVae {
    fn latent_dim(&self) -> usize {
        IlLidVae::latent_dim(self)
    }

    fn data_dim(&self) -> usize {
        IlLidVae::data_dim(self)
    }

    fn likelihood(&self) -> &ExpFamily {
        &self.likelihood
    }

    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn prior_components(&self) -> Vec<GaussComponent> {
        IlLidVae::prior_components(self)
    }

    fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent> {
        IlLidVae::posterior_components(self, x)
    }
}
