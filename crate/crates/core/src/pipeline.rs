//! Glue between windows, trained models and the backtester: chronological
//! splits, label shuffling for placebo runs, and day × stock score matrices.

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::evaluation::{self, BacktestResult, MetricsReport};
use crate::model::Model;

#[derive(Debug, Clone, Default)]
pub struct Split {
    pub train: Vec<WindowBatch>,
    pub valid: Vec<WindowBatch>,
    pub test: Vec<WindowBatch>,
}

/// Chronological split by fraction of windows; the test split gets the rest.
pub fn split_by_fraction(windows: &[WindowBatch], train: f64, valid: f64) -> Result<Split> {
    if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
        return Err(Error::Config(format!(
            "split fractions train={train}, valid={valid} must be positive and sum below 1"
        )));
    }
    let n = windows.len();
    let a = (n as f64 * train).round() as usize;
    let b = (n as f64 * (train + valid)).round() as usize;
    if a == 0 || b <= a || b >= n {
        return Err(Error::Config(format!("{n} windows are too few for a three-way split")));
    }
    Ok(Split {
        train: windows[..a].to_vec(),
        valid: windows[a..b].to_vec(),
        test: windows[b..].to_vec(),
    })
}

/// Chronological split by first validation and first test date.
pub fn split_by_dates(windows: &[WindowBatch], valid_start: NaiveDate, test_start: NaiveDate) -> Result<Split> {
    if valid_start >= test_start {
        return Err(Error::Config(format!(
            "validation start {valid_start} must precede test start {test_start}"
        )));
    }
    let mut s = Split::default();
    for w in windows {
        if w.date < valid_start {
            s.train.push(w.clone());
        } else if w.date < test_start {
            s.valid.push(w.clone());
        } else {
            s.test.push(w.clone());
        }
    }
    if s.train.is_empty() || s.valid.is_empty() || s.test.is_empty() {
        return Err(Error::Config(format!(
            "date split leaves {} train, {} validation, {} test days",
            s.train.len(),
            s.valid.len(),
            s.test.len()
        )));
    }
    Ok(s)
}

/// Permutes each day's labels across stocks, destroying any link between
/// features and returns while keeping every day's return distribution.
pub fn shuffle_labels(windows: &mut [WindowBatch], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for w in windows {
        w.r.as_slice_mut().expect("contiguous labels").shuffle(&mut rng);
    }
}

/// `days × n_stocks` matrices of model scores and realized returns, NaN
/// where a stock is absent from a day's cross-section.
pub fn score_windows(model: &Model, windows: &[WindowBatch], n_stocks: usize) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut scores = Array2::from_elem((windows.len(), n_stocks), f64::NAN);
    let mut returns = scores.clone();
    for (t, w) in windows.iter().enumerate() {
        let y = model.predict(&w.x)?;
        for (k, &j) in w.stocks.iter().enumerate() {
            scores[[t, j]] = y[k];
            returns[[t, j]] = w.r[k];
        }
    }
    Ok((scores, returns))
}

/// Perfect-foresight scores: each day's realized returns.
pub fn oracle_scores(windows: &[WindowBatch], n_stocks: usize) -> (Array2<f64>, Array2<f64>) {
    let mut returns = Array2::from_elem((windows.len(), n_stocks), f64::NAN);
    for (t, w) in windows.iter().enumerate() {
        for (k, &j) in w.stocks.iter().enumerate() {
            returns[[t, j]] = w.r[k];
        }
    }
    (returns.clone(), returns)
}

/// Strategy parameters for the backtest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Strategy {
    pub m: usize,
    pub n_drop: usize,
    pub cost: f64,
}

impl Strategy {
    pub fn for_universe(n_stocks: usize) -> Self {
        let (m, n_drop) = evaluation::default_strategy_sizes(n_stocks);
        Self {
            m,
            n_drop,
            cost: evaluation::DEFAULT_COST,
        }
    }
}

/// Scores the windows with `model` and runs the backtest and metrics.
pub fn evaluate_model(
    model: &Model,
    windows: &[WindowBatch],
    n_stocks: usize,
    strategy: Strategy,
) -> Result<(MetricsReport, BacktestResult)> {
    let (scores, returns) = score_windows(model, windows, n_stocks)?;
    evaluation::evaluate(&scores, &returns, strategy.m, strategy.n_drop, strategy.cost)
}
