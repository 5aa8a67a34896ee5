//! The Gaussian-mixture model: a uniform categorical class variable with
//! learnable per-class latent priors, a class posterior `q(y|x)`, and a
//! latent posterior `q(z|x,y)` conditioned on the one-hot class.

use rand::{Rng, RngCore};

use super::{
    draw_standard_normal, ensure_finite, gaussian_kl_taped, Decoder, ElboTerms, GaussComponent,
    GaussianEncoder, Mlp, ModelConfig, ModelError, Sample, VaeModel,
};
use crate::ad::{Tape, Tensor};
use crate::expfam::ExpFamily;
use crate::numeric;

#[derive(Debug)]
pub struct IlLidMVae {
    pub n_components: usize,
    /// `[c, l]` learnable prior means, initialized at the one-hot embeddings
    /// of the class labels into latent space.
    pub prior_means: Tensor,
    /// `[c, l]` learnable prior log-variances, initialized at zero.
    pub prior_logvars: Tensor,
    pub class_encoder: Mlp,
    pub latent_encoder: GaussianEncoder,
    pub decoder: Decoder,
    pub likelihood: ExpFamily,
}

impl IlLidMVae {
    pub fn from_config(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        let c = cfg.c;
        let l = cfg.latent_dim;
        let mut mean_init = vec![0.0; c * l];
        for y in 0..c.min(l) {
            mean_init[y * l + y] = 1.0;
        }
        Ok(Self {
            n_components: c,
            prior_means: Tensor::matrix(c, l, mean_init)?,
            prior_logvars: Tensor::zeros(vec![c, l]),
            class_encoder: Mlp::new(cfg.data_dim, &cfg.encoder.widths(), c, rng),
            latent_encoder: GaussianEncoder::new(
                cfg.data_dim + c,
                &cfg.encoder.widths(),
                l,
                rng,
            ),
            decoder: Decoder::from_config(cfg, rng)?,
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

    fn one_hot(&self, y: usize) -> Tensor {
        let mut v = vec![0.0; self.n_components];
        v[y] = 1.0;
        Tensor::from_vec(v)
    }

    /// Mixture ELBO with exact enumeration over the class variable:
    /// `Σ_y q(y|x)·[E log p(x|z) − KL(q(z|x,y)‖p(z|y))] − KL(q(y|x)‖U(c))`.
    pub fn elbo(
        &self,
        tape: &mut Tape,
        x: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<ElboTerms, ModelError> {
        let eps = draw_standard_normal(self.n_components * self.latent_dim(), rng);
        self.elbo_with_noise(tape, x, &eps)
    }

    /// As [`Self::elbo`] with one noise vector per enumerated class supplied
    /// by the caller (`c·l` values).
    pub fn elbo_with_noise(
        &self,
        tape: &mut Tape,
        x: &[f64],
        eps: &[f64],
    ) -> Result<ElboTerms, ModelError> {
        self.check_input(x)?;
        let c = self.n_components;
        let l = self.latent_dim();
        if eps.len() != c * l {
            return Err(ModelError::DimensionMismatch {
                expected: c * l,
                got: eps.len(),
            });
        }
        let x_t = Tensor::from_slice(x);

        let logits = self.class_encoder.forward(tape, &x_t)?;
        let log_q = log_softmax(tape, &logits)?;
        let q = tape.exp(&log_q)?;
        // KL(q(y|x) ‖ Uniform(c)) = Σ q·log q + log c; zero when q is uniform
        let qlq = tape.mul(&q, &log_q)?;
        let qlq_sum = tape.sum(&qlq)?;
        let cat_kl = tape.add(&qlq_sum, &Tensor::scalar((c as f64).ln()))?;
        let cat_kl_value = ensure_finite(cat_kl.item(), "categorical kl")?;

        let mut pairs = Vec::with_capacity(c);
        let mut expected: Option<Tensor> = None;
        let mut recon_log = 0.0;
        let mut kl_log = cat_kl_value;
        for y in 0..c {
            let enc_in = tape.concat(&x_t, &self.one_hot(y))?;
            let (mean, logvar) = self.latent_encoder.forward(tape, &enc_in)?;
            let std = {
                let half = tape.mul(&Tensor::scalar(0.5), &logvar)?;
                tape.exp(&half)?
            };
            let noise = Tensor::from_slice(&eps[y * l..(y + 1) * l]);
            let scaled = tape.mul(&std, &noise)?;
            let z = tape.add(&mean, &scaled)?;

            let (xi, stage1) = self.decoder.forward_with_stage1(tape, &z)?;
            let recon = self.likelihood.log_density_taped(tape, x, &xi)?;
            let prior_mean = tape.row(&self.prior_means, y)?;
            let prior_logvar = tape.row(&self.prior_logvars, y)?;
            let klz = gaussian_kl_taped(tape, &mean, &logvar, &prior_mean, &prior_logvar)?;

            ensure_finite(recon.item(), "reconstruction")?;
            ensure_finite(klz.item(), "kl")?;
            let weight = tape.element(&q, y)?;
            recon_log += weight.item() * recon.item();
            kl_log += weight.item() * klz.item();

            let comp = tape.sub(&recon, &klz)?;
            let weighted = tape.mul(&weight, &comp)?;
            expected = Some(match expected {
                Some(acc) => tape.add(&acc, &weighted)?,
                None => weighted,
            });
            pairs.push((z.data().to_vec(), stage1));
        }
        let expected = expected.expect("c ≥ 1");
        let value = tape.sub(&expected, &cat_kl)?;
        ensure_finite(value.item(), "elbo")?;
        Ok(ElboTerms {
            value,
            reconstruction: recon_log,
            kl: kl_log,
            pairs,
        })
    }

    /// `q(y|x)`, normalized to the simplex.
    pub fn posterior_responsibilities(&self, x: &[f64]) -> Vec<f64> {
        let mut tape = Tape::new();
        let logits = self
            .class_encoder
            .forward(&mut tape, &Tensor::from_slice(x))
            .expect("encoder shapes are fixed at construction");
        softmax_vec(logits.data())
    }

    /// Ancestral sampling: `y ~ Uniform(c)`, `z ~ N(m_y, diag e^{s_y})`,
    /// `x ~ EF(x|f(z))`.
    pub fn generate(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Sample> {
        let l = self.latent_dim();
        (0..n)
            .map(|_| {
                let y = rng.random_range(0..self.n_components);
                let comp = GaussComponent {
                    weight: 1.0,
                    mean: self.prior_means.data()[y * l..(y + 1) * l].to_vec(),
                    logvar: self.prior_logvars.data()[y * l..(y + 1) * l].to_vec(),
                };
                let z = comp.sample(rng);
                let xi = self
                    .decoder
                    .forward_vec(&z)
                    .expect("latent dimension fixed by the model");
                Sample {
                    x: self.likelihood.sample(&xi, rng),
                    label: Some(y),
                }
            })
            .collect()
    }

    /// The latent prior as a uniform mixture over the learned class priors.
    pub fn prior_components(&self) -> Vec<GaussComponent> {
        let c = self.n_components;
        let l = self.latent_dim();
        (0..c)
            .map(|y| GaussComponent {
                weight: 1.0 / c as f64,
                mean: self.prior_means.data()[y * l..(y + 1) * l].to_vec(),
                logvar: self.prior_logvars.data()[y * l..(y + 1) * l].to_vec(),
            })
            .collect()
    }

    /// `q(z|x) = Σ_y q(y|x)·q(z|x,y)` as mixture components.
    pub fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent> {
        let weights = self.posterior_responsibilities(x);
        let mut comps = Vec::with_capacity(self.n_components);
        for (y, weight) in weights.into_iter().enumerate() {
            let mut tape = Tape::new();
            let enc_in = tape
                .concat(&Tensor::from_slice(x), &self.one_hot(y))
                .expect("1-D inputs");
            let (mean, logvar) = self
                .latent_encoder
                .forward(&mut tape, &enc_in)
                .expect("encoder shapes are fixed at construction");
            comps.push(GaussComponent {
                weight,
                mean: mean.data().to_vec(),
                logvar: logvar.data().to_vec(),
            });
        }
        comps
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            n_components: self.n_components,
            prior_means: tape.watch(&self.prior_means),
            prior_logvars: tape.watch(&self.prior_logvars),
            class_encoder: self.class_encoder.watch(tape),
            latent_encoder: self.latent_encoder.watch(tape),
            decoder: self.decoder.watch(tape),
            likelihood: self.likelihood.clone(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        f(&self.prior_means);
        f(&self.prior_logvars);
        self.class_encoder.visit(f);
        self.latent_encoder.visit(f);
        self.decoder.visit(f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.prior_means);
        f(&mut self.prior_logvars);
        self.class_encoder.visit_mut(f);
        self.latent_encoder.visit_mut(f);
        self.decoder.visit_mut(f);
    }
}

impl VaeModel for IlLidMVae {
    fn latent_dim(&self) -> usize {
        IlLidMVae::latent_dim(self)
    }

    fn data_dim(&self) -> usize {
        IlLidMVae::data_dim(self)
    }

    fn likelihood(&self) -> &ExpFamily {
        &self.likelihood
    }

    fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    fn prior_components(&self) -> Vec<GaussComponent> {
        IlLidMVae::prior_components(self)
    }

    fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent> {
        IlLidMVae::posterior_components(self, x)
    }
}

/// `v − lse(v)` with the max shifted out as a constant; exact and
/// overflow-safe, and the shift does not perturb gradients.
fn log_softmax(tape: &mut Tape, logits: &Tensor) -> Result<Tensor, ModelError> {
    let max = logits
        .data()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let shifted = tape.sub(logits, &Tensor::scalar(max))?;
    let exps = tape.exp(&shifted)?;
    let total = tape.sum(&exps)?;
    let log_total = tape.log(&total)?;
    let lse = tape.add(&log_total, &Tensor::scalar(max))?;
    Ok(tape.sub(logits, &lse)?)
}

fn softmax_vec(logits: &[f64]) -> Vec<f64> {
    let lse = numeric::log_sum_exp(logits);
    logits.iter().map(|&v| (v - lse).exp()).collect()
}
