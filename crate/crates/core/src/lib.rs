//! Inverse-Lipschitz latent-identifiable variational autoencoders.
//!
//! This crate trains VAEs whose decoders are Brenier maps of strongly convex
//! input-convex networks. The gradient of an `L`-strongly convex potential is
//! `L`-inverse Lipschitz (`‖f(x)−f(y)‖ ≥ L‖x−y‖`), which makes the latent
//! variable identifiable and puts a tunable floor under the discrepancy
//! between the variational posterior and the prior. The crate ships:
//!
//! * [`ad`] — a small reverse-mode autodiff engine over dense `f64` tensors,
//! * [`icnn`] — strongly convex input-convex networks and their Brenier maps,
//! * [`expfam`] — the exponential-family likelihoods used by decoders/priors,
//! * [`model`] — the plain and Gaussian-mixture VAE models,
//! * [`diagnostics`] — posterior-collapse metrics (relative Fisher divergence,
//!   KL, importance-weighted NLL, mutual information, active units,
//!   clustering accuracy),
//! * [`verify`] — a numerical harness that checks the theoretical guarantees
//!   on tractable instances,
//! * [`train`] — Adam training with the inverse-Lipschitz annealing scheme,
//! * [`data`] — the two-Gaussian toy dataset and IDX image loading.

pub mod ad;
pub mod data;
pub mod diagnostics;
pub mod expfam;
pub mod gradcheck;
pub mod icnn;
pub mod model;
pub mod train;
pub mod verify;

pub(crate) mod numeric;

pub use ad::{Tape, Tensor};
pub use expfam::ExpFamily;
pub use icnn::{BrenierMap, IcnnParams};
pub use model::{AnyModel, Decoder, IlLidMVae, IlLidVae, ModelConfig};
