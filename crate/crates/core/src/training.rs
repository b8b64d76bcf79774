//! Composite regression + pairwise ranking loss, gradient verification and
//! the day-by-day optimizer loop.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Weight of the pairwise ranking term.
    pub eta: f64,
    pub mse_weight: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Epochs without a validation IC improvement before stopping.
    pub patience: usize,
    pub optimizer: Optimizer,
    /// Sample this many ordered pairs per day instead of all `N²`.
    pub pair_sampling: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            eta: 5.0,
            mse_weight: 1.0,
            learning_rate: 0.01,
            max_epochs: 30,
            seed: 0,
            patience: 5,
            optimizer: Optimizer::Adam,
            pair_sampling: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Config(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(self.mse_weight >= 0.0) || !self.mse_weight.is_finite() {
            return Err(Error::Config(format!("mse_weight must be non-negative, got {}", self.mse_weight)));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.pair_sampling == Some(0) {
            return Err(Error::Config("pair_sampling must be positive".into()));
        }
        Ok(())
    }
}

/// Ordered pairs drawn uniformly with replacement; `weight` rescales the
/// sampled sum into an unbiased estimate of the full double sum.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub pairs: Vec<(usize, usize)>,
    pub weight: f64,
}

impl PairSample {
    pub fn draw<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Self {
        let pairs = (0..count)
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .collect();
        Self {
            pairs,
            weight: (n * n) as f64 / count as f64,
        }
    }
}

fn check_inputs(y: &[f64], r: &[f64]) -> Result<()> {
    if y.len() != r.len() {
        return Err(Error::Shape(format!("{} predictions for {} returns", y.len(), r.len())));
    }
    if y.iter().chain(r).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(())
}

/// `Σ_i Σ_j max(0, −(y_i−y_j)(r_i−r_j))` over all ordered pairs.
pub fn ranking_term(y: &[f64], r: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..y.len() {
        for j in 0..y.len() {
            acc += (-(y[i] - y[j]) * (r[i] - r[j])).max(0.0);
        }
    }
    acc
}

/// One day's loss `Σ (y−r)² + η · ranking_term`.
pub fn composite_loss(y: &[f64], r: &[f64], eta: f64) -> Result<f64> {
    Ok(day_loss_and_grad(y, r, 1.0, eta, None)?.0)
}

/// One day's loss and its gradient with respect to `y`. The hinge has
/// subgradient 0 at its kink.
pub fn day_loss_and_grad(
    y: &[f64],
    r: &[f64],
    mse_weight: f64,
    eta: f64,
    sample: Option<&PairSample>,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(y, r)?;
    let n = y.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let d = y[i] - r[i];
        loss += mse_weight * d * d;
        grad[i] += 2.0 * mse_weight * d;
    }
    if eta != 0.0 {
        let mut pair = |i: usize, j: usize, w: f64| {
            let dr = r[i] - r[j];
            let v = -(y[i] - y[j]) * dr;
            if v > 0.0 {
                loss += w * v;
                grad[i] -= w * dr;
                grad[j] += w * dr;
            }
        };
        match sample {
            None => {
                for i in 0..n {
                    for j in 0..n {
                        pair(i, j, eta);
                    }
                }
            }
            Some(s) => {
                for &(i, j) in &s.pairs {
                    pair(i, j, eta * s.weight);
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Appends the day loss of an `N × 1` prediction column to the tape.
pub fn loss_on(tape: &mut Tape, y: Var, r: &[f64], cfg: &LossConfig, sample: Option<&PairSample>) -> Result<Var> {
    let yv: Vec<f64> = tape.value(y).column(0).to_vec();
    let (loss, grad) = day_loss_and_grad(&yv, r, cfg.mse_weight, cfg.eta, sample)?;
    let local = Array2::from_shape_vec((grad.len(), 1), grad).expect("column");
    Ok(tape.scalar_fn(y, loss, local))
}

/// Loss of one day and its gradient flattened in [`Model::flatten`] order.
pub fn loss_and_grad(
    model: &Model,
    batch: &WindowBatch,
    cfg: &LossConfig,
    sample: Option<&PairSample>,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let y = model.forward_on(&mut tape, &bound, &batch.x)?;
    let r = batch.r.to_vec();
    let loss = loss_on(&mut tape, y, &r, cfg, sample)?;
    let value = tape.scalar(loss);
    let grads = tape.backward(loss);
    let flat = bound
        .vars()
        .into_iter()
        .flat_map(|v| grads.wrt(v).iter().copied().collect::<Vec<_>>())
        .collect();
    Ok((value, flat))
}

pub fn loss_value(model: &Model, batch: &WindowBatch, cfg: &LossConfig) -> Result<f64> {
    let y = model.predict(&batch.x)?;
    day_loss_and_grad(&y.to_vec(), &batch.r.to_vec(), cfg.mse_weight, cfg.eta, None).map(|(l, _)| l)
}

/// `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Central-difference check of `analytic` against `f` around `theta`.
/// Returns the worst relative error and the index where it occurred.
pub fn finite_difference_check<F>(theta: &[f64], analytic: &[f64], eps: f64, mut f: F) -> Result<(f64, usize)>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(theta.len(), analytic.len(), "gradient length");
    let mut probe = theta.to_vec();
    let mut worst = (0.0, 0);
    for k in 0..theta.len() {
        probe[k] = theta[k] + eps;
        let up = f(&probe)?;
        probe[k] = theta[k] - eps;
        let down = f(&probe)?;
        probe[k] = theta[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let err = relative_error(analytic[k], (up - down) / (2.0 * eps));
        if err > worst.0 {
            worst = (err, k);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter tensor and flat offset within it of the worst entry.
    pub worst: (String, usize),
    pub n_params: usize,
}

/// Compares the analytic gradient of the day loss against central
/// differences for every parameter.
pub fn grad_check(model: &Model, batch: &WindowBatch, cfg: &LossConfig, eps: f64) -> Result<GradCheckReport> {
    let (loss, analytic) = loss_and_grad(model, batch, cfg, None)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let theta = model.flatten();
    let mut probe = model.clone();
    let (err, k) = finite_difference_check(&theta, &analytic, eps, |p| {
        probe.unflatten(p)?;
        loss_value(&probe, batch, cfg)
    })?;
    let mut offset = k;
    let mut name = String::new();
    for spec in model.param_specs() {
        if offset < spec.len() {
            name = spec.name.to_string();
            break;
        }
        offset -= spec.len();
    }
    Ok(GradCheckReport {
        max_rel_error: err,
        worst: (name, offset),
        n_params: theta.len(),
    })
}

/// First- and second-moment state for Adam.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for k in 0..theta.len() {
            self.m[k] = Self::BETA1 * self.m[k] + (1.0 - Self::BETA1) * grad[k];
            self.v[k] = Self::BETA2 * self.v[k] + (1.0 - Self::BETA2) * grad[k] * grad[k];
            theta[k] -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ic: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best validation IC.
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochLog>,
    /// Loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Mean daily Pearson IC of the model's scores over `windows`; NaN if no
/// day has a defined IC.
pub fn validation_ic(model: &Model, windows: &[WindowBatch]) -> Result<f64> {
    let mut days = Vec::with_capacity(windows.len());
    for w in windows {
        days.push((model.predict(&w.x)?.to_vec(), w.r.to_vec()));
    }
    Ok(evaluation::ranking_metrics_ragged(&days).ic)
}

/// Trains `model` one day per step, shuffling days each epoch with a seeded
/// generator, and keeps the parameters with the best validation IC.
pub fn fit(model: Model, train: &[WindowBatch], valid: &[WindowBatch], cfg: &LossConfig) -> Result<FitOutcome> {
    fit_with(model, train, valid, cfg, |_| {})
}

/// [`fit`] with a callback after each epoch.
pub fn fit_with<F>(
    mut model: Model,
    train: &[WindowBatch],
    valid: &[WindowBatch],
    cfg: &LossConfig,
    mut on_epoch: F,
) -> Result<FitOutcome>
where
    F: FnMut(&EpochLog),
{
    cfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty splits, got {} train and {} validation days",
            train.len(),
            valid.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = model.flatten();
    let mut adam = Adam::new(theta.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step_losses = Vec::new();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stale = 0;
    let mut step = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &d in &order {
            let sample = cfg
                .pair_sampling
                .map(|k| PairSample::draw(train[d].n_stocks(), k, &mut rng));
            let (loss, grad) = loss_and_grad(&model, &train[d], cfg, sample.as_ref())?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { epoch, step, loss });
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.step(&mut theta, &grad, cfg.learning_rate),
                Optimizer::Sgd => theta
                    .iter_mut()
                    .zip(&grad)
                    .for_each(|(t, g)| *t -= cfg.learning_rate * g),
            }
            model.unflatten(&theta)?;
            step_losses.push(loss);
            total += loss;
            step += 1;
        }

        let valid_ic = validation_ic(&model, valid)?;
        let log = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            valid_ic,
        };
        on_epoch(&log);
        epochs.push(log);

        let score = if valid_ic.is_nan() { f64::NEG_INFINITY } else { valid_ic };
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            let mut metrics = BTreeMap::new();
            metrics.insert("valid_ic".to_string(), valid_ic);
            metrics.insert("train_loss".to_string(), total / train.len() as f64);
            best = Some((
                score,
                Checkpoint {
                    model: model.clone(),
                    epoch,
                    metrics,
                },
            ));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let checkpoint = match best {
        Some((_, c)) => c,
        None => Checkpoint {
            model,
            epoch: 0,
            metrics: BTreeMap::new(),
        },
    };
    Ok(FitOutcome {
        checkpoint,
        epochs,
        step_losses,
    })
}
