//! Information-theoretic posterior-collapse measurements: closed-form KL to
//! the prior, importance-weighted log likelihood, mutual information, and
//! active units.

use rand::{Rng, RngCore};

use crate::model::{mixture_log_density, GaussComponent, VaeModel};
use crate::numeric;

/// Closed-form KL between diagonal Gaussians.
pub fn gaussian_kl(
    mean_q: &[f64],
    logvar_q: &[f64],
    mean_p: &[f64],
    logvar_p: &[f64],
) -> f64 {
    mean_q
        .iter()
        .zip(logvar_q)
        .zip(mean_p.iter().zip(logvar_p))
        .map(|((mq, lq), (mp, lp))| {
            let d = mq - mp;
            0.5 * (lp - lq + (lq.exp() + d * d) * (-lp).exp() - 1.0)
        })
        .sum()
}

/// Mean over `xs` of the KL from the variational posterior to the prior.
///
/// For the plain model this is the closed-form Gaussian KL to `N(0, I)`. For
/// the mixture it is the standard decomposition: the responsibility-weighted
/// per-class Gaussian KLs plus the categorical KL of `q(y|x)` against the
/// uniform class prior.
pub fn kl_posterior_prior(model: &dyn VaeModel, xs: &[Vec<f64>]) -> f64 {
    assert!(!xs.is_empty(), "need at least one evaluation point");
    let priors = model.prior_components();
    let total: f64 = xs
        .iter()
        .map(|x| {
            let posts = model.posterior_components(x);
            debug_assert_eq!(posts.len(), priors.len());
            posts
                .iter()
                .zip(&priors)
                .map(|(q, p)| {
                    if q.weight == 0.0 {
                        0.0
                    } else {
                        q.weight
                            * ((q.weight / p.weight).ln()
                                + gaussian_kl(&q.mean, &q.logvar, &p.mean, &p.logvar))
                    }
                })
                .sum::<f64>()
        })
        .sum();
    total / xs.len() as f64
}

fn sample_component(comps: &[GaussComponent], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u < acc {
            return i;
        }
    }
    comps.len() - 1
}

/// Importance-weighted estimate of `log p(x)` with `K` proposals drawn from
/// the variational posterior; the negation is the NLL estimate.
///
/// For the mixture model the proposal is the joint `q(y|x)·q(z|x,y)` and the
/// weight targets `p(y)·p(z|y)·p(x|z)`, which is an unbiased estimate of the
/// marginal over both latents.
pub fn iw_log_likelihood(
    model: &dyn VaeModel,
    x: &[f64],
    k: usize,
    rng: &mut dyn RngCore,
) -> f64 {
    assert!(k >= 1, "need at least one importance sample");
    let ef = model.likelihood();
    let posts = model.posterior_components(x);
    let priors = model.prior_components();
    let mut log_ws = Vec::with_capacity(k);
    for _ in 0..k {
        let y = sample_component(&posts, rng);
        let z = posts[y].sample(rng);
        let xi = model.decode_vec(&z);
        let log_lik = ef
            .log_density(x, &xi)
            .expect("decoder output matches data dimension");
        let log_target = priors[y].weight.ln() + priors[y].log_density(&z) + log_lik;
        let log_proposal = posts[y].weight.ln() + posts[y].log_density(&z);
        log_ws.push(log_target - log_proposal);
    }
    numeric::log_sum_exp(&log_ws) - (k as f64).ln()
}

/// Mutual information between data and latents, estimated as
/// `E_x[KL(q(z|x)‖p(z))] − KL(q̄(z)‖p(z))` with the aggregate posterior
/// `q̄ = (1/n)Σ_j q(z|x_j)` scored by Monte Carlo.
///
/// The first term is closed-form when the posterior is a single Gaussian;
/// for mixture posteriors it shares the Monte-Carlo samples of the second
/// term, in which case the prior density cancels between the two.
pub fn mutual_information(
    model: &dyn VaeModel,
    xs: &[Vec<f64>],
    n_mc: usize,
    rng: &mut dyn RngCore,
) -> f64 {
    assert!(!xs.is_empty(), "need at least one evaluation point");
    let n = xs.len();
    let posteriors: Vec<Vec<GaussComponent>> =
        xs.iter().map(|x| model.posterior_components(x)).collect();
    let priors = model.prior_components();
    let single = posteriors.iter().all(|p| p.len() == 1);

    let mut term1_mc = Vec::new();
    let mut term2_mc = Vec::with_capacity(n_mc);
    for s in 0..n_mc {
        let i = s % n;
        let y = sample_component(&posteriors[i], rng);
        let z = posteriors[i][y].sample(rng);
        let log_p = mixture_log_density(&priors, &z);
        let log_qbar = {
            let terms: Vec<f64> = posteriors
                .iter()
                .map(|post| mixture_log_density(post, &z) - (n as f64).ln())
                .collect();
            numeric::log_sum_exp(&terms)
        };
        if !single {
            term1_mc.push(mixture_log_density(&posteriors[i], &z) - log_p);
        }
        term2_mc.push(log_qbar - log_p);
    }
    let term1 = if single {
        posteriors
            .iter()
            .map(|p| {
                p[0].weight
                    * gaussian_kl(&p[0].mean, &p[0].logvar, &priors[0].mean, &priors[0].logvar)
            })
            .sum::<f64>()
            / n as f64
    } else {
        term1_mc.iter().sum::<f64>() / term1_mc.len() as f64
    };
    let term2 = term2_mc.iter().sum::<f64>() / term2_mc.len() as f64;
    term1 - term2
}

/// Fraction of latent dimensions whose posterior-mean variance across the
/// data exceeds `threshold`.
pub fn active_units(model: &dyn VaeModel, xs: &[Vec<f64>], threshold: f64) -> f64 {
    assert!(xs.len() >= 2, "variance needs at least two data points");
    let l = model.latent_dim();
    let means: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let comps = model.posterior_components(x);
            let mut m = vec![0.0; l];
            for c in &comps {
                for (acc, v) in m.iter_mut().zip(&c.mean) {
                    *acc += c.weight * v;
                }
            }
            m
        })
        .collect();
    let n = means.len() as f64;
    let mut active = 0usize;
    for d in 0..l {
        let mean = means.iter().map(|m| m[d]).sum::<f64>() / n;
        let var = means.iter().map(|m| (m[d] - mean) * (m[d] - mean)).sum::<f64>() / (n - 1.0);
        if var > threshold {
            active += 1;
        }
    }
    active as f64 / l as f64
}
