//! Minibatch ELBO maximization with Adam, evaluation scheduling, and the
//! inverse-Lipschitz annealing controller.
//!
//! Annealing relaxes the constraint when the optimizer presses against it:
//! whenever the decoder's empirical inverse-Lipschitz constant — estimated by
//! recycling latents and first-stage outputs captured during the epoch —
//! comes within `trigger_ratio` of the imposed `L`, the constant is shrunk by
//! the configured decay factor. Only the first decoder stage is annealed.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ad::{AdError, Tape, Tensor};
use crate::diagnostics::{self, EvalOptions, MetricsRecord};
use crate::icnn;
use crate::model::{save_model, AnyModel, CheckpointError, ModelError};
use crate::numeric;

const RING_CAPACITY: usize = 4096;
const MIN_RECYCLED_PAIRS: usize = 32;
const RECYCLED_WINDOW: usize = 512;
const FRESH_CHECK_PAIRS: usize = 64;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
    #[error("non-finite `{term}` at epoch {epoch}{}", checkpoint_note(.checkpoint))]
    NonFinite {
        term: String,
        epoch: usize,
        checkpoint: Option<PathBuf>,
    },
    #[error(
        "empirical inverse-Lipschitz constant {emp} fell below the constructed bound {bound} at epoch {epoch}"
    )]
    InvariantViolated { epoch: usize, emp: f64, bound: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn checkpoint_note(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(", last-good checkpoint at {}", p.display()),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// Adam

/// Adam with the standard bias-corrected moment estimates
/// (`β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`).
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Advance the shared step counter; call once per optimizer step, before
    /// updating the parameters.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Gradient-descent update of one parameter slot. Slots are identified by
    /// visitation index, which is stable across steps.
    pub fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        while self.m.len() <= slot {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        if self.m[slot].is_empty() {
            self.m[slot] = vec![0.0; param.len()];
            self.v[slot] = vec![0.0; param.len()];
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..param.len() {
            let g = grad[i];
            let m = &mut self.m[slot][i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = &mut self.v[slot][i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            param[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// configuration

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealConfig {
    /// Multiplicative decrease applied to `L` on each trigger.
    pub decay: f64,
    /// Trigger when the empirical constant is within this factor of `L`.
    pub trigger_ratio: f64,
    /// Floor below which `L` is never annealed.
    pub min_l: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            decay: 0.85,
            trigger_ratio: 1.1,
            min_l: 0.0,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(TrainError::BadConfig(format!(
                "anneal decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if self.trigger_ratio < 1.0 {
            return Err(TrainError::BadConfig(format!(
                "anneal trigger_ratio must be ≥ 1, got {}",
                self.trigger_ratio
            )));
        }
        if self.min_l < 0.0 {
            return Err(TrainError::BadConfig("anneal min_L must be ≥ 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Evaluate metrics every this many epochs; 0 evaluates only after the
    /// final epoch. Evaluation requires eval data to be passed to [`train`].
    pub eval_every: usize,
    pub seed: u64,
    pub anneal: Option<AnnealConfig>,
    /// Where to store the last-good checkpoint on a non-finite abort.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(TrainError::BadConfig(format!(
                "learning_rate must be finite and ≥ 0, got {}",
                self.learning_rate
            )));
        }
        if let Some(a) = &self.anneal {
            a.validate()?;
        }
        Ok(())
    }
}

/// Deterministic seed for the evaluation at a given epoch, derivable without
/// replaying training; a standalone `eval` of a checkpoint reproduces the
/// in-training metrics row exactly.
pub fn eval_seed(train_seed: u64, epoch: usize) -> u64 {
    numeric::split_seed(train_seed, 0x45564100 + epoch as u64)
}

// ---------------------------------------------------------------------------
// annealing state

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnealEvent {
    pub epoch: usize,
    pub old_l: f64,
    pub new_l: f64,
    pub emp_l: f64,
}

/// Ring buffer of `(z, f¹(z))` pairs captured during forward passes, plus the
/// current annealed constant and the event log.
pub struct AnnealState {
    pub current_l: f64,
    pub initial_l: f64,
    recycled: VecDeque<(Vec<f64>, Vec<f64>)>,
    pub events: Vec<AnnealEvent>,
}

impl AnnealState {
    pub fn new(initial_l: f64) -> Self {
        Self {
            current_l: initial_l,
            initial_l,
            recycled: VecDeque::with_capacity(RING_CAPACITY),
            events: Vec::new(),
        }
    }

    pub fn push_pair(&mut self, z: Vec<f64>, stage1: Vec<f64>) {
        if self.recycled.len() == RING_CAPACITY {
            self.recycled.pop_front();
        }
        self.recycled.push_back((z, stage1));
    }

    pub fn pairs_available(&self) -> usize {
        self.recycled.len()
    }

    /// Empirical inverse-Lipschitz estimate of `map` over the latents seen
    /// during training: consecutive recycled inputs from the most recent
    /// window, re-evaluated under the current parameters. Outputs captured
    /// under stale parameter snapshots are not compared against each other --
    /// a cross-snapshot minimum can collapse to zero whenever training moves
    /// the map, which would fire the annealing trigger unconditionally.
    pub fn recycled_estimate(&self, map: &icnn::BrenierMap) -> Option<f64> {
        let n = self.recycled.len().min(RECYCLED_WINDOW);
        if n < 2 {
            return None;
        }
        let start = self.recycled.len() - n;
        let inputs: Vec<&Vec<f64>> = self.recycled.iter().skip(start).map(|(z, _)| z).collect();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = inputs
            .windows(2)
            .map(|w| (w[0].clone(), w[1].clone()))
            .collect();
        icnn::empirical_inverse_lipschitz(map, &pairs).ok()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AnnealOutcome {
    Annealed(AnnealEvent),
    Held { emp_l: f64 },
    InsufficientPairs { have: usize },
}

/// One annealing check: when the recycled estimate of the first stage's
/// inverse-Lipschitz constant is within `trigger_ratio` of the imposed value,
/// shrink it (never below `min_l`) and rebuild the decoder's
/// strong-convexity constant.
pub fn anneal_step(
    state: &mut AnnealState,
    cfg: &AnnealConfig,
    model: &mut AnyModel,
    epoch: usize,
) -> AnnealOutcome {
    if state.pairs_available() < MIN_RECYCLED_PAIRS {
        return AnnealOutcome::InsufficientPairs {
            have: state.pairs_available(),
        };
    }
    let emp_l = state
        .recycled_estimate(model.decoder_ref().first_stage())
        .expect("enough pairs checked above");
    if emp_l <= cfg.trigger_ratio * state.current_l {
        let old_l = state.current_l;
        let new_l = (cfg.decay * old_l).max(cfg.min_l);
        if new_l < old_l {
            model.set_first_stage_l(new_l);
            state.current_l = new_l;
            let event = AnnealEvent {
                epoch,
                old_l,
                new_l,
                emp_l,
            };
            state.events.push(event);
            return AnnealOutcome::Annealed(event);
        }
    }
    AnnealOutcome::Held { emp_l }
}

// ---------------------------------------------------------------------------
// training loop

#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_elbo: f64,
    /// Standard error of the per-example ELBO values in this epoch.
    pub elbo_se: f64,
    pub current_l: f64,
    pub emp_l: Option<f64>,
}

impl EpochLog {
    /// The progress line emitted by the CLI.
    pub fn line(&self) -> String {
        format!(
            "epoch={} elbo={} L={} emp_L={}",
            self.epoch,
            self.mean_elbo,
            self.current_l,
            self.emp_l.unwrap_or(f64::NAN)
        )
    }
}

#[derive(Clone, Debug)]
pub struct EvalPoint {
    pub epoch: usize,
    pub record: MetricsRecord,
}

#[derive(Debug)]
pub struct TrainReport {
    pub epoch_logs: Vec<EpochLog>,
    pub history: Vec<EvalPoint>,
    pub anneal_events: Vec<AnnealEvent>,
    pub final_l: f64,
}

/// Held-out data and options for in-training evaluation.
pub struct EvalData<'a> {
    pub xs: &'a [Vec<f64>],
    pub labels: Option<&'a [usize]>,
    pub opts: EvalOptions,
}

fn snapshot(model: &AnyModel) -> Vec<f64> {
    let mut flat = Vec::new();
    model.visit(&mut |t| flat.extend_from_slice(t.data()));
    flat
}

fn restore(model: &mut AnyModel, flat: &[f64]) {
    let mut offset = 0;
    model.visit_mut(&mut |t| {
        let n = t.numel();
        t.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    });
}

/// Maximize the mean ELBO over minibatches. Deterministic given the config
/// seed: shuffling, reparameterization noise, and evaluation all derive from
/// it. On a non-finite objective the model is rolled back to the last epoch
/// boundary, saved when a checkpoint directory is configured, and an error
/// naming the offending term is returned.
pub fn train(
    model: &mut AnyModel,
    xs: &[Vec<f64>],
    cfg: &TrainConfig,
    eval: Option<&EvalData>,
) -> Result<TrainReport, TrainError> {
    if xs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut state = AnnealState::new(model.decoder_ref().l1());
    let mut epoch_logs = Vec::with_capacity(cfg.epochs);
    let mut history = Vec::new();
    let mut last_good = snapshot(model);

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.shuffle(&mut rng);

        let mut elbo_values: Vec<f64> = Vec::with_capacity(xs.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let watched = model.watch(&mut tape);
            let mut total: Option<Tensor> = None;
            for &i in batch {
                let terms = match watched.elbo(&mut tape, &xs[i], &mut rng) {
                    Ok(t) => t,
                    Err(ModelError::NonFinite { term }) => {
                        let checkpoint = abort(model, &last_good, cfg)?;
                        return Err(TrainError::NonFinite {
                            term: term.to_string(),
                            epoch,
                            checkpoint,
                        });
                    }
                    Err(e) => return Err(e.into()),
                };
                elbo_values.push(terms.value.item());
                for (z, stage1) in terms.pairs {
                    state.push_pair(z, stage1);
                }
                total = Some(match total {
                    Some(acc) => tape.add(&acc, &terms.value)?,
                    None => terms.value,
                });
            }
            let total = total.expect("non-empty batch");
            let mean = tape.mul(&Tensor::scalar(1.0 / batch.len() as f64), &total)?;
            let loss = tape.negate(&mean)?;
            let grads = tape.backward(&loss)?;
            let mut grad_list = Vec::new();
            watched.visit(&mut |t| {
                grad_list.push(grads.wrt(t).expect("all parameters are watched"));
            });
            adam.begin_step();
            let mut slot = 0;
            model.visit_mut(&mut |t| {
                adam.update(slot, t.data_mut(), grad_list[slot].data());
                slot += 1;
            });
        }

        let emp_l = state.recycled_estimate(model.decoder_ref().first_stage());
        if let Some(acfg) = &cfg.anneal {
            anneal_step(&mut state, acfg, model, epoch);
        }

        // The construction guarantees the bound for the *current* constant;
        // verify on fresh pairs so a regression cannot pass silently.
        let bound = model.decoder_ref().l1();
        let fresh = fresh_pair_estimate(model, &mut rng)?;
        if fresh < bound - 1e-9 {
            return Err(TrainError::InvariantViolated {
                epoch,
                emp: fresh,
                bound,
            });
        }

        let (mean_elbo, elbo_se) = numeric::mean_and_se(&elbo_values);
        epoch_logs.push(EpochLog {
            epoch,
            mean_elbo,
            elbo_se,
            current_l: model.decoder_ref().l1(),
            emp_l,
        });
        last_good = snapshot(model);

        if let Some(ev) = eval {
            let due = (cfg.eval_every > 0 && epoch % cfg.eval_every == 0) || epoch == cfg.epochs;
            if due {
                let record =
                    diagnostics::evaluate(model, ev.xs, ev.labels, &ev.opts, eval_seed(cfg.seed, epoch));
                history.push(EvalPoint { epoch, record });
            }
        }
    }

    Ok(TrainReport {
        epoch_logs,
        history,
        anneal_events: state.events,
        final_l: model.decoder_ref().l1(),
    })
}

fn fresh_pair_estimate(model: &AnyModel, rng: &mut ChaCha8Rng) -> Result<f64, TrainError> {
    let l = model.decoder_ref().latent_dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..FRESH_CHECK_PAIRS)
        .map(|_| {
            (
                (0..l).map(|_| rng.random_range(-5.0..5.0)).collect(),
                (0..l).map(|_| rng.random_range(-5.0..5.0)).collect(),
            )
        })
        .collect();
    icnn::empirical_inverse_lipschitz(model.decoder_ref().first_stage(), &pairs)
        .map_err(|e| TrainError::Model(e.into()))
}

fn abort(
    model: &mut AnyModel,
    last_good: &[f64],
    cfg: &TrainConfig,
) -> Result<Option<PathBuf>, TrainError> {
    restore(model, last_good);
    match &cfg.checkpoint_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(CheckpointError::Io)?;
            let path = dir.join("last_good.ckpt");
            save_model(&path, model)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}
