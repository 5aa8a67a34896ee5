//! Generative models: amortized Gaussian encoders in front of inverse-forward
//! Lipschitz Brenier-map decoders, in a plain and a Gaussian-mixture variant.

mod checkpoint;
mod encoder;
mod mixture;
mod plain;
#[cfg(test)]
mod tests;

pub use checkpoint::{load_model, save_model, CheckpointError, CHECKPOINT_MAGIC};
pub use encoder::{GaussianEncoder, Linear, Mlp};
pub use mixture::IlLidMVae;
pub use plain::IlLidVae;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ad::{AdError, Tape, Tensor};
use crate::expfam::{ExpFamError, ExpFamily};
use crate::icnn::{BrenierMap, IcnnError};
use crate::numeric;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite value in ELBO term `{term}`")]
    NonFinite { term: &'static str },
    #[error("input has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Icnn(#[from] IcnnError),
    #[error(transparent)]
    ExpFam(#[from] ExpFamError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    IlLidvae,
    IlLidmvae,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    #[default]
    Gaussian,
    Bernoulli,
}

/// Hidden-layer count and width of an MLP or ICNN stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub layers: usize,
    pub width: usize,
}

impl LayerSpec {
    pub fn widths(&self) -> Vec<usize> {
        vec![self.width; self.layers]
    }
}

fn default_components() -> usize {
    2
}

fn default_sigma() -> f64 {
    1.0
}

fn default_encoder_spec() -> LayerSpec {
    LayerSpec {
        layers: 2,
        width: 10,
    }
}

/// Complete architectural description of a model; stored in checkpoints so a
/// saved model can be rebuilt without external context.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub latent_dim: usize,
    pub data_dim: usize,
    #[serde(default = "default_components")]
    pub c: usize,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "L2", default)]
    pub l2: Option<f64>,
    pub icnn: LayerSpec,
    #[serde(default = "default_encoder_spec")]
    pub encoder: LayerSpec,
    #[serde(default = "default_sigma")]
    pub sigma_dec: f64,
    #[serde(default)]
    pub likelihood: LikelihoodKind,
}

impl ModelConfig {
    pub fn resolved_l2(&self) -> f64 {
        self.l2.unwrap_or(self.l1)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::BadConfig(msg));
        if self.latent_dim == 0 || self.data_dim == 0 {
            return fail("latent_dim and data_dim must be ≥ 1".into());
        }
        if self.latent_dim > self.data_dim {
            return fail(format!(
                "latent_dim {} exceeds data_dim {}",
                self.latent_dim, self.data_dim
            ));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return fail(format!("L1 must be finite and ≥ 0, got {}", self.l1));
        }
        let l2 = self.resolved_l2();
        if !(l2 >= 0.0 && l2.is_finite()) {
            return fail(format!("L2 must be finite and ≥ 0, got {l2}"));
        }
        if self.sigma_dec <= 0.0 {
            return fail(format!("sigma_dec must be > 0, got {}", self.sigma_dec));
        }
        if self.kind == ModelKind::IlLidmvae && self.c == 0 {
            return fail("mixture model needs c ≥ 1".into());
        }
        if self.icnn.width == 0 || self.encoder.width == 0 {
            return fail("layer widths must be ≥ 1".into());
        }
        Ok(())
    }

    pub fn likelihood(&self) -> ExpFamily {
        match self.likelihood {
            LikelihoodKind::Gaussian => ExpFamily::gaussian(self.sigma_dec, self.data_dim),
            LikelihoodKind::Bernoulli => ExpFamily::bernoulli(self.data_dim),
        }
    }
}

// ---------------------------------------------------------------------------
// decoder

/// The decoder map `z ↦ ξ`. With equal latent and data dimensions a single
/// Brenier map is used; otherwise two maps composed through a zero-padding
/// injection, `f₂(Bᵀ f₁(z))`.
#[derive(Clone, Debug)]
pub enum Decoder {
    Single(BrenierMap),
    Composed { inner: BrenierMap, outer: BrenierMap },
}

impl Decoder {
    pub fn from_config(cfg: &ModelConfig, rng: &mut dyn RngCore) -> Result<Self, ModelError> {
        let hidden = cfg.icnn.widths();
        if cfg.latent_dim == cfg.data_dim {
            Ok(Self::Single(BrenierMap::new(
                cfg.latent_dim,
                &hidden,
                cfg.l1,
                rng,
            )?))
        } else {
            Ok(Self::Composed {
                inner: BrenierMap::new(cfg.latent_dim, &hidden, cfg.l1, rng)?,
                outer: BrenierMap::new(cfg.data_dim, &hidden, cfg.resolved_l2(), rng)?,
            })
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Self::Single(m) => m.input_dim(),
            Self::Composed { inner, .. } => inner.input_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Self::Single(m) => m.input_dim(),
            Self::Composed { outer, .. } => outer.input_dim(),
        }
    }

    /// The annealed map: the single map, or the inner stage of a composition.
    pub fn first_stage(&self) -> &BrenierMap {
        match self {
            Self::Single(m) => m,
            Self::Composed { inner, .. } => inner,
        }
    }

    pub fn first_stage_mut(&mut self) -> &mut BrenierMap {
        match self {
            Self::Single(m) => m,
            Self::Composed { inner, .. } => inner,
        }
    }

    pub fn l1(&self) -> f64 {
        self.first_stage().strong_convexity()
    }

    pub fn l2(&self) -> f64 {
        match self {
            Self::Single(m) => m.strong_convexity(),
            Self::Composed { outer, .. } => outer.strong_convexity(),
        }
    }

    /// Inverse-Lipschitz constant of the whole map: `L` for a single map,
    /// `L₁·L₂` for a composition (the padding injection is an isometry).
    pub fn effective_inverse_lipschitz(&self) -> f64 {
        match self {
            Self::Single(m) => m.strong_convexity(),
            Self::Composed { inner, outer } => {
                inner.strong_convexity() * outer.strong_convexity()
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self.forward_with_stage1(tape, z)?.0)
    }

    /// Forward pass that also reports the first-stage output values, which
    /// the annealing monitor recycles.
    pub fn forward_with_stage1(
        &self,
        tape: &mut Tape,
        z: &Tensor,
    ) -> Result<(Tensor, Vec<f64>), ModelError> {
        match self {
            Self::Single(m) => {
                let out = m.forward(tape, z)?;
                let stage1 = out.data().to_vec();
                Ok((out, stage1))
            }
            Self::Composed { inner, outer } => {
                let u = inner.forward(tape, z)?;
                let stage1 = u.data().to_vec();
                let pad = outer.input_dim() - inner.input_dim();
                let padded = if pad > 0 {
                    tape.concat(&u, &Tensor::zeros(vec![pad]))?
                } else {
                    u
                };
                Ok((outer.forward(tape, &padded)?, stage1))
            }
        }
    }

    pub fn forward_vec(&self, z: &[f64]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        Ok(self.forward(&mut tape, &Tensor::from_slice(z))?.data().to_vec())
    }

    /// Central-difference Jacobian of the full map, `[out_dim × latent_dim]`.
    /// Square Jacobians (single map) are symmetrized, being Hessians.
    pub fn jacobian_fd(&self, z: &[f64], h: f64) -> Result<Tensor, ModelError> {
        match self {
            Self::Single(m) => Ok(m.jacobian_fd(z, h)?),
            Self::Composed { .. } => {
                let l = z.len();
                let t = self.out_dim();
                let mut data = vec![0.0; t * l];
                let mut probe = z.to_vec();
                for j in 0..l {
                    probe[j] = z[j] + h;
                    let plus = self.forward_vec(&probe)?;
                    probe[j] = z[j] - h;
                    let minus = self.forward_vec(&probe)?;
                    probe[j] = z[j];
                    for i in 0..t {
                        data[i * l + j] = (plus[i] - minus[i]) / (2.0 * h);
                    }
                }
                Ok(Tensor::matrix(t, l, data)?)
            }
        }
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        match self {
            Self::Single(m) => Self::Single(m.watch(tape)),
            Self::Composed { inner, outer } => Self::Composed {
                inner: inner.watch(tape),
                outer: outer.watch(tape),
            },
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        match self {
            Self::Single(m) => m.icnn.visit(f),
            Self::Composed { inner, outer } => {
                inner.icnn.visit(f);
                outer.icnn.visit(f);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            Self::Single(m) => m.icnn.visit_mut(f),
            Self::Composed { inner, outer } => {
                inner.icnn.visit_mut(f);
                outer.icnn.visit_mut(f);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// shared pieces

/// Result of one ELBO evaluation: the scalar objective on the tape plus plain
/// values for logging and for the annealing ring buffer.
#[derive(Debug)]
pub struct ElboTerms {
    pub value: Tensor,
    pub reconstruction: f64,
    pub kl: f64,
    /// `(z, first-stage decoder output)` for every latent sampled here.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One draw from the generative model.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: Option<usize>,
}

/// A diagonal-Gaussian component of a posterior or prior mixture.
#[derive(Clone, Debug)]
pub struct GaussComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl GaussComponent {
    pub fn log_density(&self, z: &[f64]) -> f64 {
        numeric::diag_gaussian_log_density(z, &self.mean, &self.logvar)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.logvar)
            .map(|(&m, &lv)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + (0.5 * lv).exp() * eps
            })
            .collect()
    }
}

/// Log density of a mixture of diagonal Gaussians.
pub fn mixture_log_density(components: &[GaussComponent], z: &[f64]) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .map(|c| c.weight.ln() + c.log_density(z))
        .collect();
    numeric::log_sum_exp(&terms)
}

/// Closed-form KL between diagonal Gaussians, as tape ops:
/// `½ Σ_d [lvₚ − lv_q + (σ_q² + (μ_q−μₚ)²)·e^{−lvₚ} − 1]`.
pub(crate) fn gaussian_kl_taped(
    tape: &mut Tape,
    mu_q: &Tensor,
    lv_q: &Tensor,
    mu_p: &Tensor,
    lv_p: &Tensor,
) -> Result<Tensor, AdError> {
    let d = tape.sub(mu_q, mu_p)?;
    let dsq = tape.square(&d)?;
    let var_q = tape.exp(lv_q)?;
    let num = tape.add(&var_q, &dsq)?;
    let neg_lv_p = tape.negate(lv_p)?;
    let inv_var_p = tape.exp(&neg_lv_p)?;
    let scaled = tape.mul(&num, &inv_var_p)?;
    let base = tape.sub(lv_p, lv_q)?;
    let with_ratio = tape.add(&base, &scaled)?;
    let terms = tape.sub(&with_ratio, &Tensor::scalar(1.0))?;
    let total = tape.sum(&terms)?;
    tape.mul(&Tensor::scalar(0.5), &total)
}

pub(crate) fn draw_standard_normal(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

pub(crate) fn ensure_finite(value: f64, term: &'static str) -> Result<f64, ModelError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonFinite { term })
    }
}

// ---------------------------------------------------------------------------
// the model abstraction used by diagnostics

/// What the posterior-collapse estimators need from a model: the decoder map
/// and its Jacobian, prior sampling and densities, and the variational
/// posterior as a mixture of diagonal Gaussians (a single component for the
/// plain model).
pub trait VaeModel {
    fn latent_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn likelihood(&self) -> &ExpFamily;
    fn decoder(&self) -> &Decoder;
    fn effective_inverse_lipschitz(&self) -> f64 {
        self.decoder().effective_inverse_lipschitz()
    }
    fn decode_vec(&self, z: &[f64]) -> Vec<f64> {
        self.decoder()
            .forward_vec(z)
            .expect("latent dimension fixed by the model")
    }
    fn prior_components(&self) -> Vec<GaussComponent>;
    fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent>;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let comps = self.prior_components();
        let idx = if comps.len() == 1 {
            0
        } else {
            // weights are uniform for the mixture prior
            rng.random_range(0..comps.len())
        };
        comps[idx].sample(rng)
    }

    fn prior_log_density(&self, z: &[f64]) -> f64 {
        mixture_log_density(&self.prior_components(), z)
    }

    fn posterior_log_density(&self, x: &[f64], z: &[f64]) -> f64 {
        mixture_log_density(&self.posterior_components(x), z)
    }
}

// ---------------------------------------------------------------------------
// AnyModel: config + either variant, the unit of training and checkpointing

#[derive(Debug)]
enum ModelInner {
    Plain(IlLidVae),
    Mixture(IlLidMVae),
}

/// A model paired with the configuration that built it.
#[derive(Debug)]
pub struct AnyModel {
    config: ModelConfig,
    inner: ModelInner,
}

impl AnyModel {
    pub fn from_config(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inner = match config.kind {
            ModelKind::IlLidvae => ModelInner::Plain(IlLidVae::from_config(config, &mut rng)?),
            ModelKind::IlLidmvae => {
                ModelInner::Mixture(IlLidMVae::from_config(config, &mut rng)?)
            }
        };
        Ok(Self {
            config: config.clone(),
            inner,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn as_plain(&self) -> Option<&IlLidVae> {
        match &self.inner {
            ModelInner::Plain(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_mixture(&self) -> Option<&IlLidMVae> {
        match &self.inner {
            ModelInner::Mixture(m) => Some(m),
            _ => None,
        }
    }

    pub fn elbo(
        &self,
        tape: &mut Tape,
        x: &[f64],
        rng: &mut dyn RngCore,
    ) -> Result<ElboTerms, ModelError> {
        match &self.inner {
            ModelInner::Plain(m) => m.elbo(tape, x, rng),
            ModelInner::Mixture(m) => m.elbo(tape, x, rng),
        }
    }

    pub fn generate(&self, n: usize, rng: &mut dyn RngCore) -> Vec<Sample> {
        match &self.inner {
            ModelInner::Plain(m) => m.generate(n, rng),
            ModelInner::Mixture(m) => m.generate(n, rng),
        }
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        let inner = match &self.inner {
            ModelInner::Plain(m) => ModelInner::Plain(m.watch(tape)),
            ModelInner::Mixture(m) => ModelInner::Mixture(m.watch(tape)),
        };
        Self {
            config: self.config.clone(),
            inner,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        match &self.inner {
            ModelInner::Plain(m) => m.visit(f),
            ModelInner::Mixture(m) => m.visit(f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match &mut self.inner {
            ModelInner::Plain(m) => m.visit_mut(f),
            ModelInner::Mixture(m) => m.visit_mut(f),
        }
    }

    pub fn decoder_ref(&self) -> &Decoder {
        match &self.inner {
            ModelInner::Plain(m) => &m.decoder,
            ModelInner::Mixture(m) => &m.decoder,
        }
    }

    /// Update the first-stage strong-convexity constant (annealing) and keep
    /// the stored configuration in sync.
    pub fn set_first_stage_l(&mut self, l: f64) {
        let decoder = match &mut self.inner {
            ModelInner::Plain(m) => &mut m.decoder,
            ModelInner::Mixture(m) => &mut m.decoder,
        };
        decoder.first_stage_mut().set_strong_convexity(l);
        self.config.l1 = l;
        if matches!(decoder, Decoder::Single(_)) {
            self.config.l2 = Some(l);
        }
    }

    /// Flattened parameter count, used by the checkpoint reader.
    pub fn param_len(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |t| n += t.numel());
        n
    }
}

impl VaeModel for AnyModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn data_dim(&self) -> usize {
        self.config.data_dim
    }

    fn likelihood(&self) -> &ExpFamily {
        match &self.inner {
            ModelInner::Plain(m) => &m.likelihood,
            ModelInner::Mixture(m) => &m.likelihood,
        }
    }

    fn decoder(&self) -> &Decoder {
        self.decoder_ref()
    }

    fn prior_components(&self) -> Vec<GaussComponent> {
        match &self.inner {
            ModelInner::Plain(m) => m.prior_components(),
            ModelInner::Mixture(m) => m.prior_components(),
        }
    }

    fn posterior_components(&self, x: &[f64]) -> Vec<GaussComponent> {
        match &self.inner {
            ModelInner::Plain(m) => m.posterior_components(x),
            ModelInner::Mixture(m) => m.posterior_components(x),
        }
    }
}
