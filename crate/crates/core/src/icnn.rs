//! Strongly convex input-convex networks and their Brenier maps.
//!
//! An input-convex network `G(z)` with non-negative hidden-to-hidden weights
//! and convex non-decreasing activations is convex in `z`; adding the
//! regularizer `(L/2)‖z‖²` makes it `L`-strongly convex. Its gradient
//! `f(z) = ∇G(z)` (a Brenier map) is then `L`-inverse Lipschitz:
//! `‖f(x)−f(y)‖ ≥ L‖x−y‖` for all `x, y`, and the Jacobian `∇f` — the
//! Hessian of `G` — satisfies `∇f(z) ⪰ L·I`.
//!
//! The gradient is computed by an explicit forward Jacobian recursion rather
//! than nested autodiff, expressed in tape ops so that parameter gradients
//! flow through it during training.

use rand::Rng;
use thiserror::Error;

use crate::ad::{AdError, Tape, Tensor};
use crate::numeric;

#[derive(Debug, Error)]
pub enum IcnnError {
    #[error("input has dimension {got}, network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("composed decoder needs inner dim ≤ outer dim, got {inner} > {outer}")]
    BadComposition { inner: usize, outer: usize },
    #[error("no usable pairs: all inputs closer than 1e-12")]
    NoUsablePairs,
    #[error("invalid network configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// One layer of the convex network. `wy_raw` is absent on the first layer
/// (there is no previous hidden state); the effective hidden-to-hidden
/// weights are `softplus(wy_raw)`, entrywise strictly positive for any
/// finite raw values, so the optimizer stays unconstrained.
#[derive(Clone, Debug)]
pub struct IcnnLayer {
    pub wy_raw: Option<Tensor>,
    pub wz: Tensor,
    pub bias: Tensor,
}

/// Parameters of an `L`-strongly convex input-convex network
/// `G(z) = y_k + (L/2)‖z‖²`, with `y_{i+1} = g_i(Wy_i·y_i + Wz_i·z + b_i)`.
/// Hidden activations are softplus; the final scalar layer is linear.
#[derive(Clone, Debug)]
pub struct IcnnParams {
    pub layers: Vec<IcnnLayer>,
    pub input_dim: usize,
    pub strong_convexity: f64,
}

impl IcnnParams {
    /// Random initialization: `Wz, b ~ U(−1/√fan_in, 1/√fan_in)`, and raw
    /// hidden weights set so the effective weights start at `1/fan_in`.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        strong_convexity: f64,
        rng: &mut R,
    ) -> Result<Self, IcnnError> {
        Self::build(input_dim, hidden, strong_convexity, Some(rng))
    }

    /// All `Wz` and biases zero: `G` is constant up to the strong-convexity
    /// term, so `f(z) = L·z` exactly.
    pub fn zeroed(
        input_dim: usize,
        hidden: &[usize],
        strong_convexity: f64,
    ) -> Result<Self, IcnnError> {
        Self::build::<rand::rngs::ThreadRng>(input_dim, hidden, strong_convexity, None)
    }

    fn build<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        strong_convexity: f64,
        mut rng: Option<&mut R>,
    ) -> Result<Self, IcnnError> {
        if input_dim == 0 {
            return Err(IcnnError::BadConfig("input_dim must be ≥ 1".into()));
        }
        if strong_convexity < 0.0 || !strong_convexity.is_finite() {
            return Err(IcnnError::BadConfig(format!(
                "strong convexity must be finite and ≥ 0, got {strong_convexity}"
            )));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(IcnnError::BadConfig("hidden widths must be ≥ 1".into()));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev: Option<usize> = None;
        for &width in hidden.iter().chain(std::iter::once(&1usize)) {
            let fan_in = input_dim + prev.unwrap_or(0);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (wz, bias) = match rng.as_deref_mut() {
                Some(r) => (
                    Tensor::uniform(vec![width, input_dim], bound, r),
                    Tensor::uniform(vec![width], bound, r),
                ),
                None => (
                    Tensor::zeros(vec![width, input_dim]),
                    Tensor::zeros(vec![width]),
                ),
            };
            let wy_raw = prev.map(|p| {
                Tensor::full(vec![width, p], numeric::softplus_inv(1.0 / fan_in as f64))
            });
            layers.push(IcnnLayer { wy_raw, wz, bias });
            prev = Some(width);
        }
        Ok(Self {
            layers,
            input_dim,
            strong_convexity,
        })
    }

    /// Tracked copy whose tensors are leaves on `tape`.
    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| IcnnLayer {
                    wy_raw: l.wy_raw.as_ref().map(|w| tape.watch(w)),
                    wz: tape.watch(&l.wz),
                    bias: tape.watch(&l.bias),
                })
                .collect(),
            input_dim: self.input_dim,
            strong_convexity: self.strong_convexity,
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Tensor)) {
        for layer in &self.layers {
            if let Some(wy) = &layer.wy_raw {
                f(wy);
            }
            f(&layer.wz);
            f(&layer.bias);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        for layer in &mut self.layers {
            if let Some(wy) = &mut layer.wy_raw {
                f(wy);
            }
            f(&mut layer.wz);
            f(&mut layer.bias);
        }
    }

    fn check_dim(&self, z: &Tensor) -> Result<(), IcnnError> {
        if z.shape() != [self.input_dim] {
            return Err(IcnnError::DimensionMismatch {
                expected: self.input_dim,
                got: z.numel(),
            });
        }
        Ok(())
    }

    /// `G(z) = y_k + (L/2)‖z‖²`, as a scalar tensor.
    pub fn eval(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor, IcnnError> {
        self.check_dim(z)?;
        let k = self.layers.len();
        let mut y: Option<Tensor> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = tape.matmul(&layer.wz, z)?;
            if let (Some(prev), Some(wy_raw)) = (&y, &layer.wy_raw) {
                let wy = tape.softplus(wy_raw)?;
                let through = tape.matmul(&wy, prev)?;
                pre = tape.add(&pre, &through)?;
            }
            pre = tape.add(&pre, &layer.bias)?;
            y = Some(if i + 1 == k {
                pre
            } else {
                tape.softplus(&pre)?
            });
        }
        let out = y.expect("at least one layer");
        let g0 = tape.reshape(&out, vec![])?;
        let reg_coeff = Tensor::scalar(0.5 * self.strong_convexity);
        let znorm = tape.sq_norm(z)?;
        let reg = tape.mul(&reg_coeff, &znorm)?;
        Ok(tape.add(&g0, &reg)?)
    }

    /// Forward pass returning the final pre-activation (width 1) and the
    /// Jacobian `∂y_k/∂z` as a `[1, l]` tensor, via
    /// `J_{i+1} = diag(g'_i(a_i))·(Wy_i·J_i + Wz_i)`.
    fn forward_with_jacobian(
        &self,
        tape: &mut Tape,
        z: &Tensor,
    ) -> Result<(Tensor, Tensor), IcnnError> {
        self.check_dim(z)?;
        let k = self.layers.len();
        let mut y: Option<Tensor> = None;
        let mut jac: Option<Tensor> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut pre = tape.matmul(&layer.wz, z)?;
            let jpart = match (&y, &jac, &layer.wy_raw) {
                (Some(prev_y), Some(prev_j), Some(wy_raw)) => {
                    let wy = tape.softplus(wy_raw)?;
                    let through = tape.matmul(&wy, prev_y)?;
                    pre = tape.add(&pre, &through)?;
                    let chained = tape.matmul(&wy, prev_j)?;
                    tape.add(&chained, &layer.wz)?
                }
                _ => layer.wz.clone(),
            };
            pre = tape.add(&pre, &layer.bias)?;
            if i + 1 == k {
                return Ok((pre, jpart));
            }
            let slope = tape.sigmoid(&pre)?;
            jac = Some(tape.scale_rows(&slope, &jpart)?);
            y = Some(tape.softplus(&pre)?);
        }
        unreachable!("loop returns on the final layer")
    }
}

/// The gradient map `f(z) = ∇G(z)` of a strongly convex ICNN.
#[derive(Clone, Debug)]
pub struct BrenierMap {
    pub icnn: IcnnParams,
}

impl BrenierMap {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        strong_convexity: f64,
        rng: &mut R,
    ) -> Result<Self, IcnnError> {
        Ok(Self {
            icnn: IcnnParams::new(input_dim, hidden, strong_convexity, rng)?,
        })
    }

    /// `f(z) = L·z` exactly (zero weights).
    pub fn scaled_identity(
        input_dim: usize,
        hidden: &[usize],
        strong_convexity: f64,
    ) -> Result<Self, IcnnError> {
        Ok(Self {
            icnn: IcnnParams::zeroed(input_dim, hidden, strong_convexity)?,
        })
    }

    /// Single linear potential `G(z) = wᵀz + (L/2)‖z‖²`, so `f(z) = w + L·z`.
    pub fn affine(weights: &[f64], strong_convexity: f64) -> Result<Self, IcnnError> {
        let l = weights.len();
        let mut icnn = IcnnParams::zeroed(l, &[], strong_convexity)?;
        icnn.layers[0].wz = Tensor::matrix(1, l, weights.to_vec())?;
        Ok(Self { icnn })
    }

    pub fn input_dim(&self) -> usize {
        self.icnn.input_dim
    }

    pub fn strong_convexity(&self) -> f64 {
        self.icnn.strong_convexity
    }

    pub fn set_strong_convexity(&mut self, l: f64) {
        assert!(l >= 0.0 && l.is_finite(), "strong convexity must be ≥ 0");
        self.icnn.strong_convexity = l;
    }

    pub fn watch(&self, tape: &mut Tape) -> Self {
        Self {
            icnn: self.icnn.watch(tape),
        }
    }

    /// The potential `G(z)`.
    pub fn potential(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor, IcnnError> {
        self.icnn.eval(tape, z)
    }

    /// `f(z) = ∇G(z)`, differentiable in the parameters.
    pub fn forward(&self, tape: &mut Tape, z: &Tensor) -> Result<Tensor, IcnnError> {
        let (_, jac) = self.icnn.forward_with_jacobian(tape, z)?;
        let l = self.icnn.input_dim;
        let grad = tape.reshape(&jac, vec![l])?;
        let coeff = Tensor::scalar(self.icnn.strong_convexity);
        let lz = tape.mul(&coeff, z)?;
        Ok(tape.add(&grad, &lz)?)
    }

    /// `f(z)` on plain slices.
    pub fn forward_vec(&self, z: &[f64]) -> Result<Vec<f64>, IcnnError> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &Tensor::from_slice(z))?;
        Ok(out.data().to_vec())
    }

    /// Central-difference Jacobian of `f` at `z`, symmetrized as `(J+Jᵀ)/2`
    /// (the true Jacobian is the Hessian of `G`, hence symmetric).
    pub fn jacobian_fd(&self, z: &[f64], h: f64) -> Result<Tensor, IcnnError> {
        let raw = self.jacobian_fd_raw(z, h)?;
        let l = z.len();
        let mut sym = vec![0.0; l * l];
        for i in 0..l {
            for j in 0..l {
                sym[i * l + j] = 0.5 * (raw.data()[i * l + j] + raw.data()[j * l + i]);
            }
        }
        Ok(Tensor::matrix(l, l, sym)?)
    }

    /// Central-difference Jacobian before symmetrization.
    pub fn jacobian_fd_raw(&self, z: &[f64], h: f64) -> Result<Tensor, IcnnError> {
        assert!(h > 0.0, "finite-difference step must be positive");
        let l = z.len();
        let mut cols = Vec::with_capacity(l);
        let mut probe = z.to_vec();
        for j in 0..l {
            probe[j] = z[j] + h;
            let plus = self.forward_vec(&probe)?;
            probe[j] = z[j] - h;
            let minus = self.forward_vec(&probe)?;
            probe[j] = z[j];
            cols.push(
                plus.iter()
                    .zip(&minus)
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect::<Vec<_>>(),
            );
        }
        let mut data = vec![0.0; l * l];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..l {
                data[i * l + j] = col[i];
            }
        }
        Ok(Tensor::matrix(l, l, data)?)
    }
}

/// Default finite-difference step for Jacobians: `1e-4·(1 + ‖z‖∞)`.
pub fn default_fd_step(z: &[f64]) -> f64 {
    1e-4 * (1.0 + z.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
}

/// Smallest eigenvalue of a symmetric matrix given as a square tensor.
pub fn min_symmetric_eigenvalue(mat: &Tensor) -> f64 {
    let n = mat.shape()[0];
    assert_eq!(mat.shape(), [n, n], "square matrix expected");
    let m = nalgebra::DMatrix::from_row_slice(n, n, mat.data());
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `min ‖f(x)−f(y)‖ / ‖x−y‖` over the given input pairs, skipping pairs with
/// `‖x−y‖ < 1e-12`. Errors when no usable pair remains.
pub fn empirical_inverse_lipschitz(
    map: &BrenierMap,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<f64, IcnnError> {
    let mut best: Option<f64> = None;
    for (x, y) in pairs {
        let dz = numeric::distance(x, y);
        if dz < 1e-12 {
            continue;
        }
        let fx = map.forward_vec(x)?;
        let fy = map.forward_vec(y)?;
        let ratio = numeric::distance(&fx, &fy) / dz;
        best = Some(best.map_or(ratio, |b: f64| b.min(ratio)));
    }
    best.ok_or(IcnnError::NoUsablePairs)
}

/// `f₂(Bᵀ f₁(z))` where `Bᵀ` zero-pads from the inner dimension to the outer
/// one. With equal dimensions the maps compose directly.
pub fn composed_decoder(
    f1: &BrenierMap,
    f2: &BrenierMap,
    tape: &mut Tape,
    z: &Tensor,
) -> Result<Tensor, IcnnError> {
    let inner = f1.input_dim();
    let outer = f2.input_dim();
    if inner > outer {
        return Err(IcnnError::BadComposition { inner, outer });
    }
    let u = f1.forward(tape, z)?;
    let padded = if outer > inner {
        tape.concat(&u, &Tensor::zeros(vec![outer - inner]))?
    } else {
        u
    };
    f2.forward(tape, &padded)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn eval_g(map: &BrenierMap, z: &[f64]) -> f64 {
        let mut tape = Tape::new();
        map.potential(&mut tape, &Tensor::from_slice(z))
            .unwrap()
            .item()
    }

    #[test]
    fn zero_weight_network_is_constant_in_z() {
        let map = BrenierMap::scaled_identity(2, &[4], 0.0).unwrap();
        let g1 = eval_g(&map, &[0.0, 0.0]);
        let g2 = eval_g(&map, &[3.0, -7.0]);
        let g3 = eval_g(&map, &[100.0, 42.0]);
        assert_eq!(g1, g2);
        assert_eq!(g1, g3);
    }

    #[test]
    fn strong_convexity_term_shows_in_potential() {
        let map = BrenierMap::scaled_identity(2, &[4], 2.0).unwrap();
        let diff = eval_g(&map, &[1.0, 1.0]) - eval_g(&map, &[0.0, 0.0]);
        assert_eq!(diff, 2.0);
    }

    #[test]
    fn zeroed_map_is_scaled_identity() {
        let map = BrenierMap::scaled_identity(2, &[4], 2.0).unwrap();
        let f = map.forward_vec(&[1.0, 1.0]).unwrap();
        assert_eq!(f, vec![2.0, 2.0]);
    }

    #[test]
    fn affine_fixture_gradient() {
        let map = BrenierMap::affine(&[0.5, -1.0, 2.0], 1.5).unwrap();
        let z = [1.0, 2.0, -3.0];
        let f = map.forward_vec(&z).unwrap();
        let expected = [0.5 + 1.5, -1.0 + 3.0, 2.0 - 4.5];
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn strong_convexity_inequality_on_random_triples() {
        let mut r = rng(11);
        for trial in 0..50 {
            let l_const = [0.0, 0.7, 2.5][trial % 3];
            let map = BrenierMap::new(3, &[6, 6], l_const, &mut r).unwrap();
            let draw = |r: &mut ChaCha8Rng| {
                (0..3).map(|_| r.random_range(-3.0..3.0)).collect::<Vec<f64>>()
            };
            let (x, y) = (draw(&mut r), draw(&mut r));
            let alpha: f64 = r.random_range(0.0..1.0);
            let mid: Vec<f64> = x
                .iter()
                .zip(&y)
                .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
                .collect();
            let gap = alpha * eval_g(&map, &x) + (1.0 - alpha) * eval_g(&map, &y)
                - 0.5 * l_const * alpha * (1.0 - alpha) * numeric::sq_norm(
                    &x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>(),
                );
            assert!(
                eval_g(&map, &mid) <= gap + 1e-9,
                "strong convexity violated at trial {trial}"
            );
        }
    }

    #[test]
    fn brenier_forward_matches_fd_of_potential() {
        let mut r = rng(5);
        for _ in 0..20 {
            let map = BrenierMap::new(3, &[5, 5], 1.2, &mut r).unwrap();
            let z: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            let f = map.forward_vec(&z).unwrap();
            let fd = gradcheck::central_diff_grad(|p| eval_g(&map, p), &z);
            assert!(
                gradcheck::max_rel_err(&f, &fd) < 1e-5,
                "gradient of potential mismatch"
            );
        }
    }

    #[test]
    fn jacobian_of_affine_map_is_scaled_identity() {
        let map = BrenierMap::affine(&[1.0, -2.0], 1.5).unwrap();
        let jac = map.jacobian_fd(&[0.3, 0.4], 1e-4).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.5 } else { 0.0 };
                assert!((jac.data()[i * 2 + j] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_eigenvalues_respect_strong_convexity() {
        let mut r = rng(3);
        let map = BrenierMap::new(4, &[8, 8], 1.5, &mut r).unwrap();
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| r.random_range(-4.0..4.0)).collect();
            let jac = map.jacobian_fd(&z, default_fd_step(&z)).unwrap();
            let min_eig = min_symmetric_eigenvalue(&jac);
            assert!(min_eig >= 1.5 - 1e-3, "min eigenvalue {min_eig} below bound");
        }
    }

    #[test]
    fn fd_jacobian_is_nearly_symmetric_before_symmetrization() {
        let mut r = rng(17);
        let map = BrenierMap::new(3, &[6], 0.8, &mut r).unwrap();
        let z = [0.5, -1.0, 0.25];
        let raw = map.jacobian_fd_raw(&z, default_fd_step(&z)).unwrap();
        let mut asym = 0.0;
        let mut norm = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let a = raw.data()[i * 3 + j];
                let b = raw.data()[j * 3 + i];
                asym += (a - b) * (a - b);
                norm += a * a;
            }
        }
        assert!((asym / norm).sqrt() < 1e-4);
    }

    #[test]
    fn empirical_constant_of_pure_scaling() {
        let map = BrenierMap::scaled_identity(2, &[3], 3.0).unwrap();
        let pairs = vec![
            (vec![0.0, 0.0], vec![1.0, 0.0]),
            (vec![-2.0, 1.0], vec![0.5, 0.5]),
        ];
        let c = empirical_inverse_lipschitz(&map, &pairs).unwrap();
        assert!((c - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_constant_of_affine_single_pair() {
        let map = BrenierMap::affine(&[0.7, -0.3], 2.0).unwrap();
        let pairs = vec![(vec![0.0, 0.0], vec![1.0, 0.0])];
        let c = empirical_inverse_lipschitz(&map, &pairs).unwrap();
        assert!((c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_constant_never_below_strong_convexity() {
        let mut r = rng(23);
        let map = BrenierMap::new(2, &[6, 6], 1.5, &mut r).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
            .map(|_| {
                (
                    (0..2).map(|_| r.random_range(-5.0..5.0)).collect(),
                    (0..2).map(|_| r.random_range(-5.0..5.0)).collect(),
                )
            })
            .collect();
        let c = empirical_inverse_lipschitz(&map, &pairs).unwrap();
        assert!(c >= 1.5 - 1e-9, "ratio {c} dips below L");
    }

    #[test]
    fn degenerate_pairs_are_rejected() {
        let map = BrenierMap::scaled_identity(2, &[3], 1.0).unwrap();
        let pairs = vec![(vec![1.0, 1.0], vec![1.0, 1.0])];
        assert!(matches!(
            empirical_inverse_lipschitz(&map, &pairs),
            Err(IcnnError::NoUsablePairs)
        ));
    }

    #[test]
    fn composition_pads_with_zeros() {
        let f1 = BrenierMap::scaled_identity(2, &[3], 1.0).unwrap();
        let f2 = BrenierMap::scaled_identity(3, &[3], 1.0).unwrap();
        let mut tape = Tape::new();
        let out = composed_decoder(&f1, &f2, &mut tape, &Tensor::from_slice(&[1.0, 2.0])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn composition_of_scalings_multiplies() {
        let f1 = BrenierMap::scaled_identity(2, &[3], 2.0).unwrap();
        let f2 = BrenierMap::scaled_identity(2, &[3], 3.0).unwrap();
        let mut tape = Tape::new();
        let out = composed_decoder(&f1, &f2, &mut tape, &Tensor::from_slice(&[1.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[6.0, 0.0]);
    }

    #[test]
    fn composition_stages_are_individually_inverse_lipschitz() {
        let mut r = rng(31);
        let f1 = BrenierMap::new(2, &[5], 1.5, &mut r).unwrap();
        let f2 = BrenierMap::new(4, &[5], 0.5, &mut r).unwrap();
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| r.random_range(-4.0..4.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| r.random_range(-4.0..4.0)).collect();
            let dz = numeric::distance(&x, &y);
            if dz < 1e-12 {
                continue;
            }
            let fx = f1.forward_vec(&x).unwrap();
            let fy = f1.forward_vec(&y).unwrap();
            assert!(numeric::distance(&fx, &fy) >= 1.5 * dz - 1e-9);
            let (mut px, mut py) = (fx, fy);
            px.extend_from_slice(&[0.0, 0.0]);
            py.extend_from_slice(&[0.0, 0.0]);
            let gx = f2.forward_vec(&px).unwrap();
            let gy = f2.forward_vec(&py).unwrap();
            assert!(
                numeric::distance(&gx, &gy) >= 0.5 * numeric::distance(&px, &py) - 1e-9
            );
        }
    }

    #[test]
    fn parameter_gradients_flow_through_jacobian_recursion() {
        let mut r = rng(41);
        let map = BrenierMap::new(2, &[4, 3], 1.1, &mut r).unwrap();
        let z = Tensor::from_slice(&[0.6, -0.9]);

        let mut tape = Tape::new();
        let watched = map.watch(&mut tape);
        let f = watched.forward(&mut tape, &z).unwrap();
        let loss = tape.sq_norm(&f).unwrap();
        let grads = tape.backward(&loss).unwrap();

        let mut analytic: Vec<f64> = Vec::new();
        watched.icnn.visit(&mut |t| {
            analytic.extend_from_slice(grads.wrt(t).unwrap().data());
        });

        let flat: Vec<f64> = {
            let mut v = Vec::new();
            map.icnn.visit(&mut |t| v.extend_from_slice(t.data()));
            v
        };
        let loss_of = |params: &[f64]| -> f64 {
            let mut m = map.clone();
            let mut offset = 0;
            m.icnn.visit_mut(&mut |t| {
                let n = t.numel();
                t.data_mut().copy_from_slice(&params[offset..offset + n]);
                offset += n;
            });
            let out = m.forward_vec(z.data()).unwrap();
            numeric::sq_norm(&out)
        };
        gradcheck::assert_grad_matches(loss_of, &flat, &analytic, 1e-4, "‖f(z)‖² params");
    }
}
