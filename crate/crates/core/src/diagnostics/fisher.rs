//! Monte-Carlo estimators of the relative Fisher information divergence
//! between prior and posterior, and of its inverse-Lipschitz lower bounds.
//!
//! The divergence `F(p(z)‖p(z|x)) = ∫‖∇_z log p(z|x) − ∇_z log p(z)‖² p(z) dz`
//! equals `∫‖∇_z log p(x|z)‖² p(z) dz` (the score identity), which is what
//! the estimators integrate: the latent score is
//! `∇f(z)ᵀ(T(x) − ∇A(f(z)))` with `∇f` taken by central finite differences.

use rand::RngCore;

use super::MonteCarloEstimate;
use crate::expfam::score_wrt_latent;
use crate::icnn::default_fd_step;
use crate::model::VaeModel;
use crate::numeric;

/// Mean over `xs` of the per-point relative Fisher divergence, each estimated
/// with `n_z` fresh prior samples.
pub fn relative_fisher(
    model: &dyn VaeModel,
    xs: &[Vec<f64>],
    n_z: usize,
    rng: &mut dyn RngCore,
) -> MonteCarloEstimate {
    assert!(!xs.is_empty(), "need at least one evaluation point");
    let ef = model.likelihood();
    let mut means = Vec::with_capacity(xs.len());
    let mut var_sum = 0.0;
    for x in xs {
        let mut vals = Vec::with_capacity(n_z);
        for _ in 0..n_z {
            let z = model.sample_prior(rng);
            let xi = model.decode_vec(&z);
            let jac = model
                .decoder()
                .jacobian_fd(&z, default_fd_step(&z))
                .expect("decoder dimensions are fixed");
            let score = score_wrt_latent(ef, x, &jac, &xi);
            vals.push(numeric::sq_norm(&score));
        }
        let (mean, se) = numeric::mean_and_se(&vals);
        means.push(mean);
        var_sum += se * se;
    }
    let value = means.iter().sum::<f64>() / means.len() as f64;
    MonteCarloEstimate {
        value,
        stderr: var_sum.sqrt() / means.len() as f64,
        n: n_z * xs.len(),
    }
}

/// Lower bound on the relative Fisher divergence at one data point:
/// `L²·E_{z~p(z)}‖T(x) − ∇A(f(z))‖²`.
pub fn theorem1_bound(
    model: &dyn VaeModel,
    x: &[f64],
    big_l: f64,
    n_z: usize,
    rng: &mut dyn RngCore,
) -> MonteCarloEstimate {
    let ef = model.likelihood();
    let tx = ef.sufficient_stat(x);
    let lsq = big_l * big_l;
    let mut vals = Vec::with_capacity(n_z);
    for _ in 0..n_z {
        let z = model.sample_prior(rng);
        let xi = model.decode_vec(&z);
        let ma = ef.mean_map(&xi);
        let diff: Vec<f64> = tx.iter().zip(&ma).map(|(a, b)| a - b).collect();
        vals.push(numeric::sq_norm(&diff));
    }
    let (mean, se) = numeric::mean_and_se(&vals);
    MonteCarloEstimate {
        value: lsq * mean,
        stderr: lsq * se,
        n: n_z,
    }
}

/// Both sides of the pooled-data inequality, sharing one set of prior draws,
/// plus the split of the bound into variance and bias parts.
pub struct Theorem2Report {
    /// `∫‖(1/n)Σᵢ ∇_z log p(z|xᵢ) − ∇_z log p(z)‖² p(z) dz`
    pub lhs: MonteCarloEstimate,
    /// `L²·∫‖T̄ − ∇A(f(z))‖² p(z) dz` with `T̄` the pooled sufficient statistic
    pub rhs: MonteCarloEstimate,
    /// In-sample variance of `∇A(f(z))` over the draws (times `L²`).
    pub variance_term: f64,
    /// `L²·‖T̄ − mean_z ∇A(f(z))‖²`.
    pub bias_term: f64,
}

/// Pooled (empirical) version of the Fisher bound over a dataset. With a
/// single data point this reduces exactly to
/// ([`relative_fisher`], [`theorem1_bound`]) under the same RNG stream.
pub fn theorem2_bound(
    model: &dyn VaeModel,
    xs: &[Vec<f64>],
    n_z: usize,
    rng: &mut dyn RngCore,
) -> Theorem2Report {
    assert!(!xs.is_empty(), "need at least one data point");
    let ef = model.likelihood();
    let t = model.data_dim();
    let mut pooled = vec![0.0; t];
    for x in xs {
        for (acc, v) in pooled.iter_mut().zip(ef.sufficient_stat(x)) {
            *acc += v;
        }
    }
    for v in &mut pooled {
        *v /= xs.len() as f64;
    }
    let big_l = model.effective_inverse_lipschitz();
    let lsq = big_l * big_l;

    let mut lhs_vals = Vec::with_capacity(n_z);
    let mut rhs_vals = Vec::with_capacity(n_z);
    let mut mean_maps: Vec<Vec<f64>> = Vec::with_capacity(n_z);
    for _ in 0..n_z {
        let z = model.sample_prior(rng);
        let xi = model.decode_vec(&z);
        let jac = model
            .decoder()
            .jacobian_fd(&z, default_fd_step(&z))
            .expect("decoder dimensions are fixed");
        // the mean of per-point scores is the score of the pooled statistic
        let ma = ef.mean_map(&xi);
        let diff: Vec<f64> = pooled.iter().zip(&ma).map(|(a, b)| a - b).collect();
        let cols = jac.shape()[1];
        let rows = jac.shape()[0];
        let mut s = vec![0.0; cols];
        for i in 0..rows {
            for j in 0..cols {
                s[j] += jac.data()[i * cols + j] * diff[i];
            }
        }
        lhs_vals.push(numeric::sq_norm(&s));
        rhs_vals.push(numeric::sq_norm(&diff));
        mean_maps.push(ma);
    }
    let (lhs_mean, lhs_se) = numeric::mean_and_se(&lhs_vals);
    let (rhs_mean, rhs_se) = numeric::mean_and_se(&rhs_vals);

    let mut centroid = vec![0.0; t];
    for ma in &mean_maps {
        for (c, v) in centroid.iter_mut().zip(ma) {
            *c += v;
        }
    }
    for c in &mut centroid {
        *c /= mean_maps.len() as f64;
    }
    let variance_term = lsq
        * mean_maps
            .iter()
            .map(|ma| {
                ma.iter()
                    .zip(&centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
        / mean_maps.len() as f64;
    let bias_term = lsq
        * pooled
            .iter()
            .zip(&centroid)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();

    Theorem2Report {
        lhs: MonteCarloEstimate {
            value: lhs_mean,
            stderr: lhs_se,
            n: n_z,
        },
        rhs: MonteCarloEstimate {
            value: lsq * rhs_mean,
            stderr: lsq * rhs_se,
            n: n_z,
        },
        variance_term,
        bias_term,
    }
}
