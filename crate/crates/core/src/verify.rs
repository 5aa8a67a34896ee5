//! Numerical verification of the toolkit's theoretical guarantees on
//! tractable instances: the score identity linking posterior and likelihood
//! gradients, the exponential-family mean-map identity, the Hessian lower
//! bound of Brenier maps, the Fisher-divergence lower bounds (single-point,
//! pooled, and unequal-dimension forms), their monotonicity in `L`, and the
//! KL lower bound obtained through Gaussian smoothing.
//!
//! Inequalities are tested one-sided with a 3-stderr slack; identities on
//! closed forms use absolute tolerance `1e-9`, identities between Monte-Carlo
//! quantities a 4-stderr band.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diagnostics::{relative_fisher, theorem1_bound, theorem2_bound, MonteCarloEstimate};
use crate::expfam::ExpFamily;
use crate::icnn::{default_fd_step, min_symmetric_eigenvalue, BrenierMap};
use crate::model::{AnyModel, Decoder, LayerSpec, ModelConfig, ModelKind, VaeModel};
use crate::numeric;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The margin is negative beyond the slack but within twice of it; a
    /// larger Monte-Carlo budget could still resolve the check either way.
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Outcome of one check.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub check: String,
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub verdict: Verdict,
    pub seed: u64,
}

impl VerifyReport {
    /// Inequality `lhs ≥ rhs` with a 3-stderr slack.
    pub fn one_sided(
        check: &str,
        instance: &str,
        lhs: MonteCarloEstimate,
        rhs: MonteCarloEstimate,
        seed: u64,
    ) -> Self {
        let sigma = (lhs.stderr * lhs.stderr + rhs.stderr * rhs.stderr).sqrt();
        let margin = lhs.value - rhs.value;
        let verdict = if margin >= -3.0 * sigma {
            Verdict::Pass
        } else if sigma > 0.0 && margin >= -6.0 * sigma {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        Self {
            check: check.into(),
            instance: instance.into(),
            lhs: lhs.value,
            rhs: rhs.value,
            lhs_se: lhs.stderr,
            rhs_se: rhs.stderr,
            verdict,
            seed,
        }
    }

    /// Exact inequality `lhs ≥ rhs` (no Monte-Carlo error).
    pub fn exact_one_sided(check: &str, instance: &str, lhs: f64, rhs: f64, seed: u64) -> Self {
        Self::one_sided(
            check,
            instance,
            MonteCarloEstimate {
                value: lhs,
                stderr: 0.0,
                n: 0,
            },
            MonteCarloEstimate {
                value: rhs,
                stderr: 0.0,
                n: 0,
            },
            seed,
        )
    }

    /// Identity on closed forms: `|deviation| ≤ tol`.
    pub fn identity_within(check: &str, instance: &str, deviation: f64, tol: f64, seed: u64) -> Self {
        Self {
            check: check.into(),
            instance: instance.into(),
            lhs: deviation,
            rhs: tol,
            lhs_se: 0.0,
            rhs_se: 0.0,
            verdict: if deviation.abs() <= tol {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            seed,
        }
    }

    /// Identity between Monte-Carlo quantities: `|lhs − rhs| ≤ 4σ`.
    pub fn mc_identity(
        check: &str,
        instance: &str,
        lhs: MonteCarloEstimate,
        rhs: MonteCarloEstimate,
        seed: u64,
    ) -> Self {
        let sigma = (lhs.stderr * lhs.stderr + rhs.stderr * rhs.stderr).sqrt();
        let gap = (lhs.value - rhs.value).abs();
        let verdict = if gap <= 4.0 * sigma {
            Verdict::Pass
        } else if gap <= 8.0 * sigma {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        Self {
            check: check.into(),
            instance: instance.into(),
            lhs: lhs.value,
            rhs: rhs.value,
            lhs_se: lhs.stderr,
            rhs_se: rhs.stderr,
            verdict,
            seed,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.check,
            self.instance,
            self.lhs,
            self.rhs,
            self.lhs_se,
            self.rhs_se,
            self.verdict,
            self.seed
        )
    }
}

pub const REPORT_CSV_HEADER: &str = "check,instance,lhs,rhs,lhs_se,rhs_se,verdict,seed";

// ---------------------------------------------------------------------------
// Lemma 1: ‖∇_z log p(z|x) − ∇_z log p(z)‖ = ‖∇_z log p(x|z)‖

/// Conjugate linear-Gaussian fixture `p(x|z) = N(Wz, I)`, `p(z) = N(0, I)`,
/// whose posterior is Gaussian with precision `I + WᵀW` and mean
/// `(I + WᵀW)⁻¹Wᵀx` — every score is closed-form.
pub struct LinearGaussian {
    pub w: DMatrix<f64>,
    precision: DMatrix<f64>,
}

impl LinearGaussian {
    pub fn new(w: DMatrix<f64>) -> Self {
        let precision = DMatrix::identity(w.ncols(), w.ncols()) + w.transpose() * &w;
        Self { w, precision }
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.w.nrows()
    }

    /// `∇_z log p(z|x)` through the posterior's closed form.
    pub fn posterior_score(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        let mean = self
            .precision
            .clone()
            .lu()
            .solve(&(self.w.transpose() * x))
            .expect("posterior precision is positive definite");
        -(&self.precision * (z - mean))
    }

    pub fn prior_score(&self, z: &DVector<f64>) -> DVector<f64> {
        -z
    }

    /// `∇_z log p(x|z) = Wᵀ(x − Wz)` directly from the likelihood.
    pub fn likelihood_score(&self, x: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        self.w.transpose() * (x - &self.w * z)
    }

    /// Exact log marginal `log N(x; 0, I + WWᵀ)`, for estimator cross-checks.
    pub fn log_marginal(&self, x: &DVector<f64>) -> f64 {
        let m = self.data_dim();
        let cov = DMatrix::identity(m, m) + &self.w * self.w.transpose();
        let chol = cov.clone().cholesky().expect("covariance is PD");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let sol = chol.solve(x);
        -0.5 * (m as f64 * 1.837_877_066_409_345_5 + logdet + x.dot(&sol))
    }
}

/// Evaluate both sides of the score identity at random `(x, z)` and report
/// the largest absolute deviation against tolerance `1e-9`.
pub fn check_lemma1(instance: &str, w: DMatrix<f64>, n_points: usize, seed: u64) -> VerifyReport {
    let fixture = LinearGaussian::new(w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_points {
        let x = DVector::from_fn(fixture.data_dim(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            2.0 * v
        });
        let z = DVector::from_fn(fixture.latent_dim(), |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            2.0 * v
        });
        let lhs = (fixture.posterior_score(&x, &z) - fixture.prior_score(&z)).norm();
        let rhs = fixture.likelihood_score(&x, &z).norm();
        worst = worst.max((lhs - rhs).abs());
    }
    VerifyReport::identity_within("lemma1_score_identity", instance, worst, 1e-9, seed)
}

// ---------------------------------------------------------------------------
// Lemma 2: E[T(x)] = ∇A(ξ)

/// Monte-Carlo check of the mean-map identity; reports the worst z-score over
/// natural parameters and coordinates against a 4-stderr band.
pub fn check_lemma2(
    ef: &ExpFamily,
    instance: &str,
    n_params: usize,
    n_samples: usize,
    seed: u64,
) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = ef.dim();
    let mut worst_z = 0.0f64;
    for _ in 0..n_params {
        let xi: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let expected = ef.mean_map(&xi);
        let mut sums = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..n_samples {
            let t = ef.sufficient_stat(&ef.sample(&xi, &mut rng));
            for d in 0..dim {
                sums[d] += t[d];
                sq[d] += t[d] * t[d];
            }
        }
        for d in 0..dim {
            let mean = sums[d] / n_samples as f64;
            let var = (sq[d] / n_samples as f64 - mean * mean).max(0.0);
            let se = (var / n_samples as f64).sqrt().max(1e-300);
            worst_z = worst_z.max((mean - expected[d]).abs() / se);
        }
    }
    VerifyReport::identity_within("lemma2_mean_map", instance, worst_z, 4.0, seed)
}

// ---------------------------------------------------------------------------
// Lemma 3: ∇f(z) ⪰ L·I

/// Minimum eigenvalue of the finite-difference Jacobian over the given
/// points, against `L − 1e-3`.
pub fn check_lemma3(map: &BrenierMap, instance: &str, points: &[Vec<f64>], seed: u64) -> VerifyReport {
    let mut min_eig = f64::INFINITY;
    for z in points {
        let jac = map
            .jacobian_fd(z, default_fd_step(z))
            .expect("point dimension matches the map");
        min_eig = min_eig.min(min_symmetric_eigenvalue(&jac));
    }
    VerifyReport::exact_one_sided(
        "lemma3_hessian_bound",
        instance,
        min_eig,
        map.strong_convexity() - 1e-3,
        seed,
    )
}

// ---------------------------------------------------------------------------
// Theorems 1 and 2

/// Per-point Fisher-divergence inequality `F ≥ L²·E‖T(x)−∇A(f(z))‖²` on each
/// evaluation point.
pub fn check_theorem1(
    model: &AnyModel,
    instance: &str,
    xs: &[Vec<f64>],
    n_z: usize,
    seed: u64,
) -> Vec<VerifyReport> {
    let big_l = model.effective_inverse_lipschitz();
    let mut out = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let mut rng_f = ChaCha8Rng::seed_from_u64(numeric::split_seed(seed, 2 * i as u64));
        let mut rng_b = ChaCha8Rng::seed_from_u64(numeric::split_seed(seed, 2 * i as u64 + 1));
        let fisher = relative_fisher(model, std::slice::from_ref(x), n_z, &mut rng_f);
        let bound = theorem1_bound(model, x, big_l, n_z, &mut rng_b);
        out.push(VerifyReport::one_sided(
            "theorem1_fisher_bound",
            &format!("{instance}/x{i}"),
            fisher,
            bound,
            seed,
        ));
    }
    out
}

/// Monotonicity of the lower bound across a grid of `L` values: the worst
/// adjacent pair must be non-decreasing within the Monte-Carlo band.
pub fn check_corollary1(
    bounds_by_l: &[(f64, MonteCarloEstimate)],
    instance: &str,
    seed: u64,
) -> VerifyReport {
    assert!(bounds_by_l.len() >= 2, "need at least two grid points");
    let mut worst: Option<(MonteCarloEstimate, MonteCarloEstimate)> = None;
    let mut worst_margin = f64::INFINITY;
    for pair in bounds_by_l.windows(2) {
        let (lo, hi) = (pair[0].1, pair[1].1);
        let margin = hi.value - lo.value;
        if margin < worst_margin {
            worst_margin = margin;
            worst = Some((hi, lo));
        }
    }
    let (hi, lo) = worst.expect("non-empty windows");
    VerifyReport::one_sided("corollary1_monotone_in_l", instance, hi, lo, seed)
}

/// Pooled inequality plus the exact variance-plus-bias decomposition of its
/// right-hand side.
pub fn check_theorem2(
    model: &AnyModel,
    instance: &str,
    xs: &[Vec<f64>],
    n_z: usize,
    seed: u64,
) -> Vec<VerifyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = theorem2_bound(model, xs, n_z, &mut rng);
    let scale = report.rhs.value.abs().max(1.0);
    vec![
        VerifyReport::one_sided(
            "theorem2_pooled_bound",
            instance,
            report.lhs,
            report.rhs,
            seed,
        ),
        VerifyReport::identity_within(
            "theorem2_bias_variance",
            instance,
            report.rhs.value - (report.variance_term + report.bias_term),
            1e-9 * scale,
            seed,
        ),
    ]
}

// ---------------------------------------------------------------------------
// Theorem 3: unequal dimensions, bound in terms of the inner constant

/// Both sides of the unequal-dimension bound
/// `F ≥ L₁²·∫‖(T(x)−∇A(f(z)))ᵀ ∇f₂(Bᵀf₁(z)) Bᵀ‖² p(z) dz`
/// for a Gaussian likelihood, estimated with FD Jacobians over standard
/// normal latents.
pub fn check_theorem3(
    inner: &BrenierMap,
    outer: &BrenierMap,
    instance: &str,
    xs: &[Vec<f64>],
    n_z: usize,
    seed: u64,
) -> VerifyReport {
    let l = inner.input_dim();
    let t = outer.input_dim();
    assert!(l < t, "the unequal-dimension bound needs l < t");
    let decoder = Decoder::Composed {
        inner: inner.clone(),
        outer: outer.clone(),
    };
    let ef = ExpFamily::gaussian(1.0, t);
    let l1sq = inner.strong_convexity() * inner.strong_convexity();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut lhs_vals = Vec::with_capacity(n_z * xs.len());
    let mut rhs_vals = Vec::with_capacity(n_z * xs.len());
    for _ in 0..n_z {
        let z: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xi = decoder.forward_vec(&z).expect("dimensions fixed");
        let ma = ef.mean_map(&xi);
        // full-map Jacobian for the left side
        let jac_full = decoder
            .jacobian_fd(&z, default_fd_step(&z))
            .expect("dimensions fixed");
        // outer-stage Jacobian at the padded inner output for the right side
        let mut u = inner.forward_vec(&z).expect("dimensions fixed");
        u.resize(t, 0.0);
        let jac_outer = outer
            .jacobian_fd(&u, default_fd_step(&u))
            .expect("dimensions fixed");
        for x in xs {
            let tx = ef.sufficient_stat(x);
            let v: Vec<f64> = tx.iter().zip(&ma).map(|(a, b)| a - b).collect();
            // lhs: ‖J_fullᵀ v‖²
            let mut s = vec![0.0; l];
            for i in 0..t {
                for j in 0..l {
                    s[j] += jac_full.data()[i * l + j] * v[i];
                }
            }
            lhs_vals.push(numeric::sq_norm(&s));
            // rhs: L₁²·Σ_{j<l} (∇f₂ᵀ v)_j²
            let mut w = vec![0.0; l];
            for i in 0..t {
                for j in 0..l {
                    w[j] += jac_outer.data()[i * t + j] * v[i];
                }
            }
            rhs_vals.push(l1sq * numeric::sq_norm(&w));
        }
    }
    let (lhs_mean, lhs_se) = mean_se(&lhs_vals);
    let (rhs_mean, rhs_se) = mean_se(&rhs_vals);
    VerifyReport::one_sided(
        "theorem3_unequal_dims",
        instance,
        MonteCarloEstimate {
            value: lhs_mean,
            stderr: lhs_se,
            n: lhs_vals.len(),
        },
        MonteCarloEstimate {
            value: rhs_mean,
            stderr: rhs_se,
            n: rhs_vals.len(),
        },
        seed,
    )
}

fn mean_se(vals: &[f64]) -> (f64, f64) {
    numeric::mean_and_se(vals)
}

// ---------------------------------------------------------------------------
// Proposition 1: D(p‖q) ≥ ½δε under Gaussian smoothing

/// One-dimensional Gaussian, the closed-form playground for the
/// KL-versus-Fisher bound.
#[derive(Clone, Copy, Debug)]
pub struct Gaussian1 {
    pub mean: f64,
    pub var: f64,
}

impl Gaussian1 {
    /// Convolution with `N(0, t)`: variances add.
    pub fn smoothed(&self, t: f64) -> Self {
        Self {
            mean: self.mean,
            var: self.var + t,
        }
    }
}

/// Closed-form `D(p‖q)` for one-dimensional Gaussians.
pub fn kl_gaussian1(p: Gaussian1, q: Gaussian1) -> f64 {
    0.5 * ((q.var / p.var).ln() + (p.var + (p.mean - q.mean).powi(2)) / q.var - 1.0)
}

/// Closed-form relative Fisher divergence `F(p‖q)` for one-dimensional
/// Gaussians: with `∇log p − ∇log q = αx + β`, this is
/// `α²(σₚ²+μₚ²) + 2αβμₚ + β²`.
pub fn fisher_gaussian1(p: Gaussian1, q: Gaussian1) -> f64 {
    let alpha = 1.0 / q.var - 1.0 / p.var;
    let beta = p.mean / p.var - q.mean / q.var;
    alpha * alpha * (p.var + p.mean * p.mean) + 2.0 * alpha * beta * p.mean + beta * beta
}

/// `D(p‖q) ≥ ½δ·inf_{t∈[0,δ]} F(p_t‖q_t)`, with the infimum taken on a
/// 1000-point grid; everything closed-form, no Monte Carlo.
pub fn check_prop1(p: Gaussian1, q: Gaussian1, delta: f64, seed: u64) -> VerifyReport {
    assert!(delta > 0.0, "delta must be positive");
    const GRID: usize = 1000;
    let mut eps = f64::INFINITY;
    for i in 0..=GRID {
        let t = delta * i as f64 / GRID as f64;
        eps = eps.min(fisher_gaussian1(p.smoothed(t), q.smoothed(t)));
    }
    let kl = kl_gaussian1(p, q);
    VerifyReport::exact_one_sided(
        "prop1_kl_from_fisher",
        &format!("p=N({},{}), q=N({},{}), delta={delta}", p.mean, p.var, q.mean, q.var),
        kl,
        0.5 * delta * eps,
        seed,
    )
}

// ---------------------------------------------------------------------------
// default suite

fn random_single_model(l: usize, big_l: f64, seed: u64) -> AnyModel {
    let cfg = ModelConfig {
        kind: ModelKind::IlLidvae,
        latent_dim: l,
        data_dim: l,
        c: 1,
        l1: big_l,
        l2: Some(big_l),
        icnn: LayerSpec { layers: 2, width: 8 },
        encoder: LayerSpec { layers: 2, width: 8 },
        sigma_dec: 1.0,
        likelihood: Default::default(),
    };
    AnyModel::from_config(&cfg, seed).expect("valid fixed config")
}

fn sample_xs(model: &AnyModel, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.generate(n, &mut rng).into_iter().map(|s| s.x).collect()
}

/// The full battery on default instances. Deterministic given the seed; a
/// fresh checkout passes with zero failures.
pub fn default_suite(seed: u64) -> Vec<VerifyReport> {
    let sub = |k: u64| numeric::split_seed(seed, k);
    let mut reports = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(sub(0));

    // Lemma 1 on the conjugate fixture
    reports.push(check_lemma1(
        "W=0 (2x2)",
        DMatrix::zeros(2, 2),
        100,
        sub(1),
    ));
    reports.push(check_lemma1("W=I (1x1)", DMatrix::identity(1, 1), 100, sub(2)));
    let w = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.5..1.5));
    reports.push(check_lemma1("random W (3x2)", w, 100, sub(3)));

    // Lemma 2 for both families
    reports.push(check_lemma2(
        &ExpFamily::gaussian(1.3, 2),
        "gaussian sigma=1.3 dim=2",
        20,
        100_000,
        sub(4),
    ));
    reports.push(check_lemma2(
        &ExpFamily::bernoulli(3),
        "bernoulli dim=3",
        20,
        100_000,
        sub(5),
    ));

    // Lemma 3 across the L grid
    for (i, &big_l) in [0.0, 0.5, 1.5, 5.0].iter().enumerate() {
        let mut mrng = ChaCha8Rng::seed_from_u64(sub(10 + i as u64));
        let map = BrenierMap::new(3, &[8, 8], big_l, &mut mrng).expect("valid dims");
        let points: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..3).map(|_| mrng.random_range(-4.0..4.0)).collect())
            .collect();
        reports.push(check_lemma3(&map, &format!("L={big_l} l=3"), &points, sub(10 + i as u64)));
    }

    // Theorem 1 across the L grid, with the Corollary 1 monotonicity verdict
    let mut grid_bounds = Vec::new();
    for (i, &big_l) in [0.5, 1.5, 5.0].iter().enumerate() {
        let model = random_single_model(2, big_l, sub(20));
        let xs = sample_xs(&model, 8, sub(21));
        reports.extend(check_theorem1(
            &model,
            &format!("random L={big_l}"),
            &xs,
            512,
            sub(22 + i as u64),
        ));
        let mut brng = ChaCha8Rng::seed_from_u64(sub(25));
        let bound = theorem1_bound(&model, &xs[0], big_l, 1024, &mut brng);
        grid_bounds.push((big_l, bound));
    }
    reports.push(check_corollary1(&grid_bounds, "L grid {0.5,1.5,5.0}", sub(26)));

    // Theorem 1 equality on the affine fixture f(z) = L·z, σ = 1
    {
        let cfg = ModelConfig {
            kind: ModelKind::IlLidvae,
            latent_dim: 1,
            data_dim: 1,
            c: 1,
            l1: 1.0,
            l2: Some(1.0),
            icnn: LayerSpec { layers: 0, width: 1 },
            encoder: LayerSpec { layers: 1, width: 4 },
            sigma_dec: 1.0,
            likelihood: Default::default(),
        };
        let mut model = AnyModel::from_config(&cfg, sub(27)).expect("valid fixed config");
        zero_decoder(&mut model);
        let x = vec![0.0];
        let mut rng_f = ChaCha8Rng::seed_from_u64(sub(28));
        let mut rng_b = ChaCha8Rng::seed_from_u64(sub(29));
        let fisher = relative_fisher(&model, std::slice::from_ref(&x), 2048, &mut rng_f);
        let bound = theorem1_bound(&model, &x, 1.0, 2048, &mut rng_b);
        reports.push(VerifyReport::mc_identity(
            "theorem1_linear_equality",
            "f(z)=z, sigma=1, x=0",
            fisher,
            bound,
            sub(28),
        ));
    }

    // Theorem 2 pooled bound + exact bias-variance split
    for (i, &big_l) in [0.5, 1.5].iter().enumerate() {
        let model = random_single_model(2, big_l, sub(30 + i as u64));
        let xs = sample_xs(&model, 16, sub(32 + i as u64));
        reports.extend(check_theorem2(
            &model,
            &format!("random L={big_l} n=16"),
            &xs,
            512,
            sub(34 + i as u64),
        ));
    }

    // Theorem 3: linear equality fixture plus random nonlinear instances
    {
        let inner = BrenierMap::scaled_identity(1, &[4], 1.5).expect("valid dims");
        let outer = BrenierMap::scaled_identity(2, &[4], 0.8).expect("valid dims");
        let xs = vec![vec![0.5, -0.3], vec![1.0, 2.0]];
        reports.push(check_theorem3(
            &inner,
            &outer,
            "linear l=1 t=2",
            &xs,
            512,
            sub(40),
        ));
    }
    for i in 0..3u64 {
        let mut mrng = ChaCha8Rng::seed_from_u64(sub(41 + i));
        let inner = BrenierMap::new(1, &[6], 1.2, &mut mrng).expect("valid dims");
        let outer = BrenierMap::new(2, &[6], 0.7, &mut mrng).expect("valid dims");
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| mrng.random_range(-2.0..2.0)).collect())
            .collect();
        reports.push(check_theorem3(
            &inner,
            &outer,
            &format!("random l=1 t=2 #{i}"),
            &xs,
            512,
            sub(41 + i),
        ));
    }

    // Proposition 1: degenerate, textbook, and random instances
    reports.push(check_prop1(
        Gaussian1 { mean: 0.3, var: 1.0 },
        Gaussian1 { mean: 0.3, var: 1.0 },
        1.0,
        sub(50),
    ));
    reports.push(check_prop1(
        Gaussian1 { mean: 0.0, var: 1.0 },
        Gaussian1 { mean: 2.0, var: 1.0 },
        1.0,
        sub(51),
    ));
    let mut prng = ChaCha8Rng::seed_from_u64(sub(52));
    for _ in 0..10 {
        let p = Gaussian1 {
            mean: prng.random_range(-2.0..2.0),
            var: prng.random_range(0.3..3.0),
        };
        let q = Gaussian1 {
            mean: prng.random_range(-2.0..2.0),
            var: prng.random_range(0.3..3.0),
        };
        let delta = prng.random_range(0.1..2.0);
        reports.push(check_prop1(p, q, delta, sub(52)));
    }

    reports
}

/// Zero every decoder parameter so the map becomes exactly `f(z) = L·z`;
/// decoder tensors come last in visitation order.
fn zero_decoder(model: &mut AnyModel) {
    let mut decoder_tensors = 0;
    model.decoder_ref().visit(&mut |_| decoder_tensors += 1);
    let mut total = 0;
    model.visit(&mut |_| total += 1);
    let first_decoder = total - decoder_tensors;
    let mut index = 0;
    model.visit_mut(&mut |t| {
        if index >= first_decoder {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        index += 1;
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    #[test]
    fn lemma1_holds_on_fixtures() {
        assert_eq!(
            check_lemma1("w0", DMatrix::zeros(2, 2), 50, 1).verdict,
            Verdict::Pass
        );
        assert_eq!(
            check_lemma1("wI", DMatrix::identity(1, 1), 50, 2).verdict,
            Verdict::Pass
        );
    }

    #[test]
    fn lemma1_identity_at_unit_point() {
        // W = I in one dimension: both sides equal |x − z|
        let fixture = LinearGaussian::new(DMatrix::identity(1, 1));
        let x = DVector::from_vec(vec![1.0]);
        let z = DVector::from_vec(vec![0.0]);
        let lhs = (fixture.posterior_score(&x, &z) - fixture.prior_score(&z)).norm();
        let rhs = fixture.likelihood_score(&x, &z).norm();
        assert!((lhs - 1.0).abs() < 1e-12);
        assert!((rhs - 1.0).abs() < 1e-12);
    }

    #[test]
    fn prop1_textbook_instance() {
        let p = Gaussian1 { mean: 0.0, var: 1.0 };
        let q = Gaussian1 { mean: 2.0, var: 1.0 };
        assert!((kl_gaussian1(p, q) - 2.0).abs() < 1e-12);
        assert!((fisher_gaussian1(p, q) - 4.0).abs() < 1e-12);
        assert!((fisher_gaussian1(p.smoothed(1.0), q.smoothed(1.0)) - 1.0).abs() < 1e-12);
        let report = check_prop1(p, q, 1.0, 0);
        assert_eq!(report.verdict, Verdict::Pass);
        assert!((report.rhs - 0.5).abs() < 1e-9);
    }

    #[test]
    fn prop1_identical_distributions() {
        let p = Gaussian1 { mean: 0.7, var: 2.0 };
        let report = check_prop1(p, p, 0.5, 0);
        assert_eq!(report.lhs, 0.0);
        assert_eq!(report.rhs, 0.0);
        assert_eq!(report.verdict, Verdict::Pass);
    }

    #[test]
    fn prop1_vanishing_delta() {
        let p = Gaussian1 { mean: 0.0, var: 1.0 };
        let q = Gaussian1 { mean: 1.0, var: 1.0 };
        let report = check_prop1(p, q, 1e-6, 0);
        assert!(report.rhs < 1e-5);
        assert_eq!(report.verdict, Verdict::Pass);
    }

    #[test]
    fn smoothing_satisfies_de_bruijn_identity() {
        // d/dt D(p_t‖q_t) = −½·F(p_t‖q_t), checked by finite differences
        let p = Gaussian1 { mean: -0.4, var: 0.8 };
        let q = Gaussian1 { mean: 1.1, var: 1.7 };
        for &t in &[0.0, 0.3, 1.0] {
            let d = gradcheck::central_diff_grad(
                |tt| kl_gaussian1(p.smoothed(tt[0]), q.smoothed(tt[0])),
                &[t],
            )[0];
            let f = fisher_gaussian1(p.smoothed(t), q.smoothed(t));
            assert!(
                (d + 0.5 * f).abs() < 1e-6,
                "derivative {d} vs -F/2 {}",
                -0.5 * f
            );
        }
    }

    #[test]
    fn verdict_rules() {
        let mk = |v, s| MonteCarloEstimate {
            value: v,
            stderr: s,
            n: 100,
        };
        // margin within 3σ slack passes
        let r = VerifyReport::one_sided("c", "i", mk(0.9, 0.05), mk(1.0, 0.05), 0);
        assert_eq!(r.verdict, Verdict::Pass);
        // margin between 3σ and 6σ is inconclusive
        let r = VerifyReport::one_sided("c", "i", mk(0.7, 0.05), mk(1.0, 0.05), 0);
        assert_eq!(r.verdict, Verdict::Inconclusive);
        // margin beyond 6σ fails
        let r = VerifyReport::one_sided("c", "i", mk(0.0, 0.05), mk(1.0, 0.05), 0);
        assert_eq!(r.verdict, Verdict::Fail);
        // deterministic violation fails outright
        let r = VerifyReport::exact_one_sided("c", "i", 0.9, 1.0, 0);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn lemma3_on_zero_strong_convexity_still_psd() {
        let map = BrenierMap::scaled_identity(2, &[4], 0.0).unwrap();
        let points = vec![vec![0.0, 0.0], vec![1.0, -1.0]];
        let report = check_lemma3(&map, "L=0", &points, 0);
        assert_eq!(report.verdict, Verdict::Pass);
    }

    #[test]
    fn lemma3_on_affine_map() {
        let map = BrenierMap::affine(&[1.0, 2.0], 2.5).unwrap();
        let points = vec![vec![0.3, 0.3]];
        let report = check_lemma3(&map, "affine", &points, 0);
        assert_eq!(report.verdict, Verdict::Pass);
        assert!((report.lhs - 2.5).abs() < 1e-6);
    }

    #[test]
    fn theorem1_vacuous_at_zero_l() {
        let model = random_single_model(2, 0.0, 7);
        let xs = sample_xs(&model, 2, 8);
        for report in check_theorem1(&model, "L=0", &xs, 256, 9) {
            assert!(report.rhs.abs() < 1e-12);
            assert_eq!(report.verdict, Verdict::Pass);
        }
    }

    #[test]
    fn default_suite_has_no_failures() {
        let reports = default_suite(1234);
        for r in &reports {
            assert!(
                r.passed(),
                "{} [{}] failed: lhs={} rhs={} ±({},{})",
                r.check,
                r.instance,
                r.lhs,
                r.rhs,
                r.lhs_se,
                r.rhs_se
            );
        }
        assert!(reports.len() >= 25);
    }
}
