use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::diagnostics::gaussian_kl;
use crate::gradcheck;
use crate::icnn::BrenierMap;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn toy_config(kind: ModelKind, latent: usize, data: usize, big_l: f64) -> ModelConfig {
    ModelConfig {
        kind,
        latent_dim: latent,
        data_dim: data,
        c: 2,
        l1: big_l,
        l2: Some(big_l),
        icnn: LayerSpec { layers: 1, width: 4 },
        encoder: LayerSpec { layers: 1, width: 4 },
        sigma_dec: 1.0,
        likelihood: LikelihoodKind::Gaussian,
    }
}

fn zero_params<F>(visit_mut: F)
where
    F: FnOnce(&mut dyn FnMut(&mut Tensor)),
{
    visit_mut(&mut |t: &mut Tensor| {
        for v in t.data_mut() {
            *v = 0.0;
        }
    });
}

#[test]
fn collapsed_encoder_elbo_equals_conditional_log_density() {
    // encoder forced to q = N(0, I); decoder constant ξ₀ regardless of z
    let mut r = rng(1);
    let xi0 = [0.7, -0.4];
    let mut model = IlLidVae {
        encoder: GaussianEncoder::new(2, &[4], 2, &mut r),
        decoder: Decoder::Single(BrenierMap::affine(&xi0, 0.0).unwrap()),
        likelihood: ExpFamily::gaussian(1.0, 2),
    };
    zero_params(|f| model.encoder.visit_mut(f));
    let x = [1.0, 2.0];
    for seed in 0..5 {
        let mut tape = Tape::new();
        let terms = model.elbo(&mut tape, &x, &mut rng(seed)).unwrap();
        let expected = model.likelihood.log_density(&x, &xi0).unwrap();
        assert!((terms.value.item() - expected).abs() < 1e-12);
        assert_eq!(terms.kl, 0.0);
    }
}

#[test]
fn unit_mean_shift_contributes_half_nat() {
    assert!((gaussian_kl(&[1.0], &[0.0], &[0.0], &[0.0]) - 0.5).abs() < 1e-12);
    assert!((gaussian_kl(&[1.0, 0.0], &[0.0; 2], &[0.0; 2], &[0.0; 2]) - 0.5).abs() < 1e-12);
}

#[test]
fn elbo_is_below_importance_weighted_bound() {
    let cfg = toy_config(ModelKind::IlLidvae, 2, 2, 1.0);
    let model = AnyModel::from_config(&cfg, 3).unwrap();
    let x = vec![0.5, -0.5];
    let mut r = rng(10);
    let n = 200;
    let mut elbos = Vec::with_capacity(n);
    let mut iws = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tape = Tape::new();
        elbos.push(model.elbo(&mut tape, &x, &mut r).unwrap().value.item());
        iws.push(crate::diagnostics::iw_log_likelihood(&model, &x, 100, &mut r));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let se = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64 / v.len() as f64)
            .sqrt()
    };
    let combined = (se(&elbos).powi(2) + se(&iws).powi(2)).sqrt();
    assert!(
        mean(&elbos) <= mean(&iws) + 3.0 * combined,
        "single-sample bound {} should not exceed the K=100 bound {}",
        mean(&elbos),
        mean(&iws)
    );
}

/// Straight-line re-evaluation of the mixture objective from plain floats,
/// independent of the tape.
fn mixture_elbo_oracle(model: &IlLidMVae, x: &[f64], eps: &[f64]) -> (f64, Vec<f64>) {
    let c = model.n_components;
    let l = model.latent_dim();
    let mut tape = Tape::new();
    let logits = model
        .class_encoder
        .forward(&mut tape, &Tensor::from_slice(x))
        .unwrap();
    let lse = {
        let mx = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        mx + logits.data().iter().map(|v| (v - mx).exp()).sum::<f64>().ln()
    };
    let q: Vec<f64> = logits.data().iter().map(|v| (v - lse).exp()).collect();
    let cat_kl: f64 =
        q.iter().map(|&w| if w > 0.0 { w * w.ln() } else { 0.0 }).sum::<f64>() + (c as f64).ln();
    let mut total = -cat_kl;
    let mut comps = Vec::with_capacity(c);
    for y in 0..c {
        let mut input = x.to_vec();
        let mut onehot = vec![0.0; c];
        onehot[y] = 1.0;
        input.extend_from_slice(&onehot);
        let (mu, lv) = model.latent_encoder.forward_vec(&input);
        let z: Vec<f64> = (0..l)
            .map(|d| mu[d] + (0.5 * lv[d]).exp() * eps[y * l + d])
            .collect();
        let xi = model.decoder.forward_vec(&z).unwrap();
        let recon = model.likelihood.log_density(x, &xi).unwrap();
        let pm = &model.prior_means.data()[y * l..(y + 1) * l];
        let plv = &model.prior_logvars.data()[y * l..(y + 1) * l];
        let klz = gaussian_kl(&mu, &lv, pm, plv);
        comps.push(recon - klz);
        total += q[y] * (recon - klz);
    }
    (total, comps)
}

#[test]
fn mixture_elbo_matches_independent_formula_evaluation() {
    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 1, 1, 0.8)
    };
    let mut r = rng(5);
    let model = IlLidMVae::from_config(&cfg, &mut r).unwrap();
    let x = [0.3];
    let eps = [0.7, -1.1];
    let mut tape = Tape::new();
    let terms = model.elbo_with_noise(&mut tape, &x, &eps).unwrap();
    let (expected, comps) = mixture_elbo_oracle(&model, &x, &eps);
    assert!(
        (terms.value.item() - expected).abs() < 1e-10,
        "tape {} vs oracle {expected}",
        terms.value.item()
    );
    // enumeration bound: never above the best component plus log c
    let best = comps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert!(terms.value.item() <= best + (2.0_f64).ln() + 1e-9);
}

#[test]
fn single_component_mixture_reduces_to_shifted_plain_elbo() {
    let cfg = ModelConfig {
        c: 1,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 1.0)
    };
    let mut r = rng(6);
    let model = IlLidMVae::from_config(&cfg, &mut r).unwrap();
    let x = [0.2, -0.9];
    let eps = [0.4, -0.6];
    let mut tape = Tape::new();
    let terms = model.elbo_with_noise(&mut tape, &x, &eps).unwrap();

    // expected: E log p − KL(q(z|x,y₀) ‖ N(prior mean₀, I)), no categorical term
    let mut input = x.to_vec();
    input.push(1.0);
    let (mu, lv) = model.latent_encoder.forward_vec(&input);
    let z: Vec<f64> = (0..2).map(|d| mu[d] + (0.5 * lv[d]).exp() * eps[d]).collect();
    let xi = model.decoder.forward_vec(&z).unwrap();
    let recon = model.likelihood.log_density(&x, &xi).unwrap();
    let klz = gaussian_kl(&mu, &lv, &model.prior_means.data()[..2], &[0.0, 0.0]);
    assert!((terms.value.item() - (recon - klz)).abs() < 1e-10);
}

#[test]
fn uniform_responsibilities_have_zero_categorical_kl() {
    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 1.0)
    };
    let mut r = rng(7);
    let mut model = IlLidMVae::from_config(&cfg, &mut r).unwrap();
    zero_params(|f| model.class_encoder.visit_mut(f));
    let resp = model.posterior_responsibilities(&[0.4, 0.1]);
    assert!((resp[0] - 0.5).abs() < 1e-12 && (resp[1] - 0.5).abs() < 1e-12);

    let x = [0.4, 0.1];
    let eps = [0.0; 4];
    let mut tape = Tape::new();
    let terms = model.elbo_with_noise(&mut tape, &x, &eps).unwrap();
    let (expected, _) = mixture_elbo_oracle(&model, &x, &eps);
    // with q uniform the categorical KL vanishes inside both paths
    assert!((terms.value.item() - expected).abs() < 1e-10);
}

#[test]
fn responsibilities_sum_to_one_and_match_plain_softmax() {
    let cfg = ModelConfig {
        c: 3,
        encoder: LayerSpec { layers: 0, width: 1 },
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 0.5)
    };
    let mut r = rng(8);
    let model = IlLidMVae::from_config(&cfg, &mut r).unwrap();
    let x = [0.9, -0.2];
    let resp = model.posterior_responsibilities(&x);
    assert!((resp.iter().sum::<f64>() - 1.0).abs() < 1e-9);

    // zero hidden layers: logits are exactly Wx + b
    let w = model.class_encoder.layers[0].weight.data();
    let b = model.class_encoder.layers[0].bias.data();
    let logits: Vec<f64> = (0..3)
        .map(|i| w[i * 2] * x[0] + w[i * 2 + 1] * x[1] + b[i])
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
    for (got, lg) in resp.iter().zip(&logits) {
        assert!((got - (lg - mx).exp() / total).abs() < 1e-12);
    }
}

#[test]
fn generation_from_constant_decoder_centers_on_its_output() {
    let mut r = rng(9);
    let xi0 = [1.5, -2.0];
    let model = IlLidVae {
        encoder: GaussianEncoder::new(2, &[4], 2, &mut r),
        decoder: Decoder::Single(BrenierMap::affine(&xi0, 0.0).unwrap()),
        likelihood: ExpFamily::gaussian(1.0, 2),
    };
    let n = 100_000;
    let samples = model.generate(n, &mut r);
    for d in 0..2 {
        let mean = samples.iter().map(|s| s.x[d]).sum::<f64>() / n as f64;
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - xi0[d]).abs() < 4.0 * se, "dim {d}: {mean} vs {}", xi0[d]);
    }
}

#[test]
fn mixture_generation_labels_are_uniform() {
    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 1.0)
    };
    let model = AnyModel::from_config(&cfg, 11).unwrap();
    let n = 100_000;
    let samples = model.generate(n, &mut rng(12));
    let ones = samples.iter().filter(|s| s.label == Some(1)).count() as f64;
    let se = (0.25 * n as f64).sqrt();
    assert!((ones - n as f64 / 2.0).abs() < 4.0 * se);
}

#[test]
fn generation_is_deterministic_given_seed() {
    let cfg = toy_config(ModelKind::IlLidvae, 2, 2, 1.5);
    let model = AnyModel::from_config(&cfg, 13).unwrap();
    let a = model.generate(16, &mut rng(99));
    let b = model.generate(16, &mut rng(99));
    assert_eq!(a, b);
}

fn elbo_gradient_check(model: &AnyModel, x: &[f64], eps: &[f64]) {
    let mut tape = Tape::new();
    let watched = model.watch(&mut tape);
    let terms = match (watched.as_plain(), watched.as_mixture()) {
        (Some(m), _) => m.elbo_with_noise(&mut tape, x, eps).unwrap(),
        (_, Some(m)) => m.elbo_with_noise(&mut tape, x, eps).unwrap(),
        _ => unreachable!(),
    };
    let grads = tape.backward(&terms.value).unwrap();
    let mut analytic = Vec::new();
    watched.visit(&mut |t| analytic.extend_from_slice(grads.wrt(t).unwrap().data()));

    let mut flat = Vec::new();
    model.visit(&mut |t| flat.extend_from_slice(t.data()));
    let config = model.config().clone();
    let objective = |params: &[f64]| -> f64 {
        let mut m = AnyModel::from_config(&config, 0).unwrap();
        let mut offset = 0;
        m.visit_mut(&mut |t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&params[offset..offset + n]);
            offset += n;
        });
        let mut tape = Tape::new();
        match (m.as_plain(), m.as_mixture()) {
            (Some(p), _) => p.elbo_with_noise(&mut tape, x, eps).unwrap().value.item(),
            (_, Some(p)) => p.elbo_with_noise(&mut tape, x, eps).unwrap().value.item(),
            _ => unreachable!(),
        }
    };
    gradcheck::assert_grad_matches(objective, &flat, &analytic, 1e-4, "elbo params");
}

#[test]
fn elbo_parameter_gradients_match_finite_differences() {
    let cfg = toy_config(ModelKind::IlLidvae, 2, 2, 1.2);
    let model = AnyModel::from_config(&cfg, 21).unwrap();
    elbo_gradient_check(&model, &[0.4, -0.7], &[0.3, -0.2]);

    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 0.7)
    };
    let model = AnyModel::from_config(&cfg, 22).unwrap();
    elbo_gradient_check(&model, &[0.4, -0.7], &[0.3, -0.2, 1.0, 0.5]);
}

#[test]
fn composed_decoder_elbo_gradients_match_finite_differences() {
    let cfg = toy_config(ModelKind::IlLidvae, 1, 3, 1.0);
    let model = AnyModel::from_config(&cfg, 23).unwrap();
    assert!(matches!(model.decoder_ref(), Decoder::Composed { .. }));
    elbo_gradient_check(&model, &[0.1, 0.6, -0.4], &[0.9]);
}

#[test]
fn non_finite_elbo_names_the_offending_term() {
    let cfg = toy_config(ModelKind::IlLidvae, 2, 2, 1.0);
    let mut model = AnyModel::from_config(&cfg, 31).unwrap();
    // blow up the log-variance head bias so exp(logvar) overflows in the KL
    let mut index = 0;
    let mut target = None;
    model.visit(&mut |t| {
        if t.shape() == [2] {
            target = target.or(Some(index));
        }
        index += 1;
    });
    let mut index = 0;
    model.visit_mut(&mut |t| {
        // logvar head bias is the last [2]-shaped encoder tensor: poke them all
        if t.shape() == [2] {
            for v in t.data_mut() {
                *v = 1e4;
            }
        }
        index += 1;
    });
    let mut tape = Tape::new();
    let err = model.elbo(&mut tape, &[0.0, 0.0], &mut rng(1)).unwrap_err();
    match err {
        ModelError::NonFinite { term } => {
            assert!(term == "kl" || term == "reconstruction", "term {term}")
        }
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 1.5)
    };
    let model = AnyModel::from_config(&cfg, 41).unwrap();
    save_model(&path, &model).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    let flat = |m: &AnyModel| {
        let mut v = Vec::new();
        m.visit(&mut |t| v.extend_from_slice(t.data()));
        v
    };
    assert_eq!(flat(&loaded), flat(&model));
}

#[test]
fn checkpoint_rejects_bad_magic() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bogus.ckpt");
    std::fs::write(&path, b"NOTILV__garbage").unwrap();
    assert!(matches!(
        load_model(&path).unwrap_err(),
        CheckpointError::BadMagic { .. }
    ));
}

#[test]
fn strict_config_rejects_unknown_keys_and_bad_values() {
    let err = serde_json::from_str::<ModelConfig>(
        r#"{"kind":"il-lidvae","latent_dim":2,"data_dim":2,"L1":1.0,
            "icnn":{"layers":1,"width":4},"bogus":3}"#,
    )
    .unwrap_err();
    assert!(err.to_string().contains("bogus"));

    let cfg = ModelConfig {
        latent_dim: 3,
        data_dim: 2,
        ..toy_config(ModelKind::IlLidvae, 3, 2, 1.0)
    };
    assert!(cfg.validate().is_err());
}

#[test]
fn config_round_trips_through_json() {
    let cfg = toy_config(ModelKind::IlLidmvae, 2, 4, 2.5);
    let text = serde_json::to_string(&cfg).unwrap();
    assert!(text.contains("\"il-lidmvae\""));
    let back: ModelConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn prior_components_use_one_hot_initialization() {
    let cfg = ModelConfig {
        c: 2,
        ..toy_config(ModelKind::IlLidmvae, 2, 2, 1.0)
    };
    let model = AnyModel::from_config(&cfg, 51).unwrap();
    let comps = model.prior_components();
    assert_eq!(comps.len(), 2);
    assert_eq!(comps[0].mean, vec![1.0, 0.0]);
    assert_eq!(comps[1].mean, vec![0.0, 1.0]);
    for c in comps {
        assert!((c.weight - 0.5).abs() < 1e-15);
        assert_eq!(c.logvar, vec![0.0, 0.0]);
    }
}

#[test]
fn left_inverse_of_reparameterized_sample_is_reachable() {
    // smoke check that the reparameterized latent actually moves with ε
    let cfg = toy_config(ModelKind::IlLidvae, 2, 2, 1.0);
    let model = AnyModel::from_config(&cfg, 61).unwrap();
    let plain = model.as_plain().unwrap();
    let mut t1 = Tape::new();
    let a = plain.elbo_with_noise(&mut t1, &[0.1, 0.1], &[0.0, 0.0]).unwrap();
    let mut t2 = Tape::new();
    let b = plain.elbo_with_noise(&mut t2, &[0.1, 0.1], &[2.0, -2.0]).unwrap();
    assert_ne!(a.pairs[0].0, b.pairs[0].0);
}
