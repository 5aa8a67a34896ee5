//! Property tests for the autodiff engine and the inverse-Lipschitz
//! construction. The gradient oracle is central finite differences with step
//! `1e-5·(1+|x|)`, compared at relative tolerance `1e-4`.

use ilvae_core::gradcheck;
use ilvae_core::icnn::{self, BrenierMap};
use ilvae_core::{Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A scalar composition exercising every differentiable op at least once
/// across the three variants.
fn composite(tape: &mut Tape, x: &Tensor, w: &Tensor, variant: usize) -> Tensor {
    let h = tape.matmul(w, x).unwrap();
    match variant {
        0 => {
            let a = tape.softplus(&h).unwrap();
            let b = tape.mul(&a, &Tensor::scalar(0.3)).unwrap();
            let c = tape.exp(&b).unwrap();
            let d = tape.sub(&c, &a).unwrap();
            tape.sq_norm(&d).unwrap()
        }
        1 => {
            let a = tape.softplus(&h).unwrap();
            let shifted = tape.add(&a, &Tensor::scalar(1.0)).unwrap();
            let b = tape.log(&shifted).unwrap();
            let c = tape.square(&b).unwrap();
            tape.mean(&c).unwrap()
        }
        _ => {
            let a = tape.tanh(&h).unwrap();
            let b = tape.sigmoid(&h).unwrap();
            let c = tape.mul(&a, &b).unwrap();
            let d = tape.negate(&c).unwrap();
            let s = tape.sum(&d).unwrap();
            tape.square(&s).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradients_of_random_compositions_match_finite_differences(
        xs in prop::collection::vec(-2.0f64..2.0, 4),
        ws in prop::collection::vec(-1.5f64..1.5, 12),
        variant in 0usize..3,
    ) {
        let w = Tensor::matrix(3, 4, ws.clone()).unwrap();
        let mut tape = Tape::new();
        let tracked = tape.watch(&Tensor::from_slice(&xs));
        let out = composite(&mut tape, &tracked, &w, variant);
        let grads = tape.backward(&out).unwrap();
        let analytic = grads.wrt(&tracked).unwrap();

        let fd = gradcheck::central_diff_grad(
            |p| {
                let mut t = Tape::new();
                composite(&mut t, &Tensor::from_slice(p), &w, variant).item()
            },
            &xs,
        );
        let err = gradcheck::max_rel_err(analytic.data(), &fd);
        prop_assert!(err <= 1e-4, "variant {variant}: rel err {err}");
    }

    #[test]
    fn forward_is_identical_with_and_without_tracking(
        xs in prop::collection::vec(-3.0f64..3.0, 4),
        ws in prop::collection::vec(-1.0f64..1.0, 12),
        variant in 0usize..3,
    ) {
        let w = Tensor::matrix(3, 4, ws.clone()).unwrap();
        let mut tape = Tape::new();
        let plain = composite(&mut tape, &Tensor::from_slice(&xs), &w, variant).item();
        prop_assert!(tape.is_empty());
        let mut tape = Tape::new();
        let watched = tape.watch(&Tensor::from_slice(&xs));
        let tracked = composite(&mut tape, &watched, &w, variant).item();
        prop_assert_eq!(plain.to_bits(), tracked.to_bits());
    }

    #[test]
    fn brenier_maps_never_contract_below_their_constant(
        seed in 0u64..10_000,
        l_times_ten in 0u32..40,
    ) {
        let big_l = l_times_ten as f64 / 10.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = BrenierMap::new(2, &[5, 5], big_l, &mut rng).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..50)
            .map(|_| {
                (
                    (0..2).map(|_| rng.random_range(-5.0..5.0)).collect(),
                    (0..2).map(|_| rng.random_range(-5.0..5.0)).collect(),
                )
            })
            .collect();
        let ratio = icnn::empirical_inverse_lipschitz(&map, &pairs).unwrap();
        prop_assert!(ratio >= big_l - 1e-9, "ratio {ratio} below {big_l}");
    }

    #[test]
    fn potentials_are_convex_along_random_segments(
        seed in 0u64..10_000,
        alpha in 0.0f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = BrenierMap::new(3, &[6], 0.0, &mut rng).unwrap();
        let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()
        };
        let (x, y) = (draw(&mut rng), draw(&mut rng));
        let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let g = |z: &[f64]| {
            let mut tape = Tape::new();
            map.potential(&mut tape, &Tensor::from_slice(z)).unwrap().item()
        };
        prop_assert!(g(&mid) <= alpha * g(&x) + (1.0 - alpha) * g(&y) + 1e-9);
    }
}
