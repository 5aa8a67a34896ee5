//! Posterior-collapse measurements.
//!
//! Every estimator here is a pure function of `(model snapshot, inputs,
//! seed)`; nothing mutates the model, so evaluation can run on read-only
//! snapshots between training epochs.

mod cluster;
mod fisher;
mod info;

pub use cluster::{assignment_accuracy, clustering_accuracy, ClusterError};
pub use fisher::{relative_fisher, theorem1_bound, theorem2_bound, Theorem2Report};
pub use info::{
    active_units, gaussian_kl, iw_log_likelihood, kl_posterior_prior, mutual_information,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::icnn;
use crate::model::{AnyModel, VaeModel};

/// A Monte-Carlo point estimate with its standard error.
#[derive(Clone, Copy, Debug)]
pub struct MonteCarloEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: usize,
}

/// Monte-Carlo budgets and thresholds for one evaluation pass.
#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Latent samples per Fisher-divergence estimate.
    pub n_z: usize,
    /// Evaluation points drawn from the provided dataset.
    pub n_eval_points: usize,
    /// Importance samples per NLL estimate.
    pub iw_samples: usize,
    /// Samples for the aggregate-posterior term of the mutual information.
    pub mi_samples: usize,
    /// Active-unit variance threshold.
    pub au_threshold: f64,
    /// Random pairs for the empirical inverse-Lipschitz estimate.
    pub ilc_pairs: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_z: 1024,
            n_eval_points: 256,
            iw_samples: 100,
            mi_samples: 1024,
            au_threshold: 0.01,
            ilc_pairs: 1000,
        }
    }
}

/// One bundle of metrics from a single evaluation pass.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    /// Importance-weighted negative log likelihood, nats per data point.
    pub nll: f64,
    /// Mean KL from the variational posterior to the prior.
    pub kl: f64,
    pub fisher: f64,
    pub fisher_se: f64,
    pub t1_bound: f64,
    pub t1_se: f64,
    pub mi: f64,
    pub au: f64,
    pub accuracy: Option<f64>,
    pub emp_inv_lip: f64,
    pub n_mc: usize,
    pub seed: u64,
}

pub const METRICS_CSV_HEADER: &str =
    "run_id,step,L1,L2,nll,kl,fisher,fisher_se,t1_bound,t1_se,mi,au,accuracy,emp_inv_lip,seed";

impl MetricsRecord {
    /// One CSV row under [`METRICS_CSV_HEADER`].
    pub fn csv_row(&self, run_id: &str, step: usize, l1: f64, l2: f64) -> String {
        let accuracy = self
            .accuracy
            .map(|a| a.to_string())
            .unwrap_or_default();
        format!(
            "{run_id},{step},{l1},{l2},{},{},{},{},{},{},{},{},{accuracy},{},{}",
            self.nll,
            self.kl,
            self.fisher,
            self.fisher_se,
            self.t1_bound,
            self.t1_se,
            self.mi,
            self.au,
            self.emp_inv_lip,
            self.seed,
        )
    }
}

/// Deterministic subset of at most `cap` points, evenly strided.
fn subsample(xs: &[Vec<f64>], cap: usize) -> Vec<Vec<f64>> {
    if xs.len() <= cap {
        return xs.to_vec();
    }
    let stride = xs.len() as f64 / cap as f64;
    (0..cap)
        .map(|i| xs[(i as f64 * stride) as usize].clone())
        .collect()
}

fn subsample_labels(labels: &[usize], cap: usize) -> Vec<usize> {
    if labels.len() <= cap {
        return labels.to_vec();
    }
    let stride = labels.len() as f64 / cap as f64;
    (0..cap)
        .map(|i| labels[(i as f64 * stride) as usize])
        .collect()
}

/// Run the full metric battery on an evaluation set. Deterministic given
/// `(model, xs, seed)`.
pub fn evaluate(
    model: &AnyModel,
    xs: &[Vec<f64>],
    labels: Option<&[usize]>,
    opts: &EvalOptions,
    seed: u64,
) -> MetricsRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval_xs = subsample(xs, opts.n_eval_points);

    let nll = -eval_xs
        .iter()
        .map(|x| iw_log_likelihood(model, x, opts.iw_samples, &mut rng))
        .sum::<f64>()
        / eval_xs.len() as f64;
    let kl = kl_posterior_prior(model, &eval_xs);
    let fisher = relative_fisher(model, &eval_xs, opts.n_z, &mut rng);

    let big_l = model.effective_inverse_lipschitz();
    let mut bound_sum = 0.0;
    let mut bound_var = 0.0;
    for x in &eval_xs {
        let b = theorem1_bound(model, x, big_l, opts.n_z, &mut rng);
        bound_sum += b.value;
        bound_var += b.stderr * b.stderr;
    }
    let t1_bound = bound_sum / eval_xs.len() as f64;
    let t1_se = bound_var.sqrt() / eval_xs.len() as f64;

    let mi = mutual_information(model, &eval_xs, opts.mi_samples, &mut rng);
    let au = active_units(model, &eval_xs, opts.au_threshold);

    let accuracy = labels.and_then(|labels| {
        model.as_mixture().map(|m| {
            clustering_accuracy(m, &eval_xs, &subsample_labels(labels, opts.n_eval_points))
                .expect("labels validated by the caller")
        })
    });

    let l = model.latent_dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.ilc_pairs)
        .map(|_| {
            (
                (0..l).map(|_| rng.random_range(-5.0..5.0)).collect(),
                (0..l).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
        })
        .collect();
    let emp_inv_lip = icnn::empirical_inverse_lipschitz(model.decoder().first_stage(), &pairs)
        .expect("random pairs are almost surely distinct");

    MetricsRecord {
        nll,
        kl,
        fisher: fisher.value,
        fisher_se: fisher.stderr,
        t1_bound,
        t1_se,
        mi,
        au,
        accuracy,
        emp_inv_lip,
        n_mc: opts.n_z,
        seed,
    }
}
