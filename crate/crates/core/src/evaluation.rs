//! Topk-Drop portfolio simulation and the ranking / portfolio metrics.
//!
//! Stocks are identified by their column index. Every ranking breaks ties
//! by index, ascending, so results are reproducible.

use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TRADING_DAYS: f64 = 252.0;
pub const DEFAULT_TOP_FRACTION: f64 = 0.10;
pub const DEFAULT_DROP_FRACTION: f64 = 0.03;
pub const DEFAULT_COST: f64 = 0.001;

/// `m = max(1, round(0.10·N))`, `n_drop = max(1, round(0.03·N))`.
pub fn default_strategy_sizes(n_stocks: usize) -> (usize, usize) {
    let m = ((DEFAULT_TOP_FRACTION * n_stocks as f64).round() as usize).max(1);
    let n_drop = ((DEFAULT_DROP_FRACTION * n_stocks as f64).round() as usize).max(1);
    (m, n_drop.min(m))
}

/// Scorable stock indices, best first.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rebalance {
    pub holdings: BTreeSet<usize>,
    /// Positions sold and bought this day (a fresh portfolio counts all `m`).
    pub replaced: usize,
    /// Fewer than `m` stocks were scorable; the previous portfolio was kept.
    pub flagged: bool,
}

/// Next Topk-Drop portfolio.
///
/// The first day (empty `prev`) buys the plain top `m`. Afterwards the
/// up-to-`n_drop` worst-ranked incumbents outside today's top `m` are sold
/// and replaced by the best-ranked stocks not currently held.
pub fn topk_drop_rebalance(prev: &BTreeSet<usize>, scores: &[f64], m: usize, n_drop: usize) -> Result<Rebalance> {
    if m == 0 || m > scores.len() {
        return Err(Error::Config(format!("portfolio size {m} must be in 1..={}", scores.len())));
    }
    if n_drop > m {
        return Err(Error::Config(format!("drop budget {n_drop} exceeds portfolio size {m}")));
    }
    let order = rank_order(scores);
    if order.len() < m {
        return Ok(Rebalance {
            holdings: prev.clone(),
            replaced: 0,
            flagged: true,
        });
    }
    if prev.is_empty() {
        return Ok(Rebalance {
            holdings: order[..m].iter().copied().collect(),
            replaced: m,
            flagged: false,
        });
    }

    let mut position = vec![usize::MAX; scores.len()];
    for (rank, &i) in order.iter().enumerate() {
        position[i] = rank;
    }
    let mut outside: Vec<usize> = prev.iter().copied().filter(|&i| position[i] >= m).collect();
    outside.sort_by(|&a, &b| position[b].cmp(&position[a]).then(b.cmp(&a)));
    let k = n_drop.min(outside.len());

    let mut holdings = prev.clone();
    for i in &outside[..k] {
        holdings.remove(i);
    }
    let mut replaced = k;
    let mut newcomers = order.iter().copied().filter(|i| !prev.contains(i));
    for _ in 0..k {
        holdings.insert(newcomers.next().expect("top m holds at least k non-incumbents"));
    }
    // Only reachable when `prev` was smaller than `m`.
    while holdings.len() < m {
        match newcomers.next() {
            Some(i) => {
                holdings.insert(i);
                replaced += 1;
            }
            None => break,
        }
    }
    Ok(Rebalance {
        holdings,
        replaced,
        flagged: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioState {
    pub holdings: BTreeSet<usize>,
    pub equity: f64,
    /// Daily returns net of costs.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DayFlag {
    /// Fewer than `m` stocks were scorable; holdings carried over.
    Unscorable,
    /// A held stock had a non-finite return; counted as 0.
    MissingReturn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestResult {
    pub state: PortfolioState,
    /// Starts at 1.0 and has one more entry than there are days.
    pub equity_curve: Vec<f64>,
    pub daily_returns: Vec<f64>,
    /// Equal-weight portfolio of every stock with a finite return, no costs.
    pub benchmark_returns: Vec<f64>,
    pub benchmark_equity: Vec<f64>,
    pub holdings_by_day: Vec<Vec<usize>>,
    pub turnover: Vec<usize>,
    pub flags: Vec<(usize, DayFlag)>,
}

/// Daily Topk-Drop loop. Row `t` of `scores` must be computed from data
/// available before day `t`; row `t` of `returns` is realized on day `t`.
///
/// Each replaced position pays `cost` on both the sell and the buy leg,
/// scaled by its `1/m` portfolio weight.
pub fn run_backtest(
    scores: &Array2<f64>,
    returns: &Array2<f64>,
    m: usize,
    n_drop: usize,
    cost: f64,
) -> Result<BacktestResult> {
    if scores.dim() != returns.dim() {
        return Err(Error::Shape(format!(
            "scores {:?} vs returns {:?}",
            scores.dim(),
            returns.dim()
        )));
    }
    if !(cost >= 0.0) {
        return Err(Error::Config(format!("cost must be non-negative, got {cost}")));
    }
    let days = scores.nrows();
    let mut holdings = BTreeSet::new();
    let mut equity = 1.0;
    let mut bench = 1.0;
    let mut out = BacktestResult {
        state: PortfolioState {
            holdings: BTreeSet::new(),
            equity: 1.0,
            history: Vec::with_capacity(days),
        },
        equity_curve: vec![1.0],
        daily_returns: Vec::with_capacity(days),
        benchmark_returns: Vec::with_capacity(days),
        benchmark_equity: vec![1.0],
        holdings_by_day: Vec::with_capacity(days),
        turnover: Vec::with_capacity(days),
        flags: Vec::new(),
    };

    for t in 0..days {
        let row: Vec<f64> = scores.row(t).to_vec();
        let step = topk_drop_rebalance(&holdings, &row, m, n_drop)?;
        if step.flagged {
            out.flags.push((t, DayFlag::Unscorable));
        }
        holdings = step.holdings;

        let mut missing = false;
        let gross = if holdings.is_empty() {
            0.0
        } else {
            holdings
                .iter()
                .map(|&i| {
                    let r = returns[[t, i]];
                    if r.is_finite() {
                        r
                    } else {
                        missing = true;
                        0.0
                    }
                })
                .sum::<f64>()
                / holdings.len() as f64
        };
        if missing {
            out.flags.push((t, DayFlag::MissingReturn));
        }
        let net = gross - cost * (step.replaced as f64 / m as f64) * 2.0;
        equity *= 1.0 + net;

        let finite: Vec<f64> = returns.row(t).iter().copied().filter(|r| r.is_finite()).collect();
        let b = if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        bench *= 1.0 + b;

        out.daily_returns.push(net);
        out.equity_curve.push(equity);
        out.benchmark_returns.push(b);
        out.benchmark_equity.push(bench);
        out.holdings_by_day.push(holdings.iter().copied().collect());
        out.turnover.push(step.replaced);
    }
    out.state = PortfolioState {
        holdings,
        equity,
        history: out.daily_returns.clone(),
    };
    Ok(out)
}

/// Pearson correlation; `None` when either side has zero variance or fewer
/// than two points.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n < 2 || n != b.len() {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va <= 0.0 || vb <= 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(&average_ranks(a), &average_ranks(b))
}

/// Pearson IC of one cross-section over the stocks where both values are finite.
pub fn daily_ic(pred: &[f64], actual: &[f64]) -> Option<f64> {
    let (p, a) = finite_pairs(pred, actual);
    if p.len() < 3 {
        return None;
    }
    pearson(&p, &a)
}

pub fn daily_rank_ic(pred: &[f64], actual: &[f64]) -> Option<f64> {
    let (p, a) = finite_pairs(pred, actual);
    if p.len() < 3 {
        return None;
    }
    spearman(&p, &a)
}

fn finite_pairs(pred: &[f64], actual: &[f64]) -> (Vec<f64>, Vec<f64>) {
    pred.iter()
        .zip(actual)
        .filter(|(p, a)| p.is_finite() && a.is_finite())
        .map(|(p, a)| (*p, *a))
        .unzip()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation, with spreads far below the mean's own
/// rounding error reported as exactly 0.
fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt();
    if sd <= 1e-12 * m.abs() {
        0.0
    } else {
        sd
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub ic: f64,
    pub icir: f64,
    pub rank_ic: f64,
    pub rank_icir: f64,
    pub daily_ic: Vec<f64>,
    pub daily_rank_ic: Vec<f64>,
    /// Days whose IC was undefined (too few stocks or zero variance).
    pub skipped_days: Vec<usize>,
}

/// Mean and mean/std of daily cross-sectional Pearson and Spearman
/// correlations. Non-finite entries are treated as missing.
pub fn ranking_metrics(preds: &Array2<f64>, actuals: &Array2<f64>) -> Result<RankingMetrics> {
    if preds.dim() != actuals.dim() {
        return Err(Error::Shape(format!("preds {:?} vs actuals {:?}", preds.dim(), actuals.dim())));
    }
    if preds.nrows() < 2 || preds.ncols() < 3 {
        return Err(Error::Config(format!(
            "ranking metrics need at least 2 days and 3 stocks, got {:?}",
            preds.dim()
        )));
    }
    let days: Vec<(Vec<f64>, Vec<f64>)> = preds
        .rows()
        .into_iter()
        .zip(actuals.rows())
        .map(|(p, a)| (p.to_vec(), a.to_vec()))
        .collect();
    Ok(ranking_metrics_ragged(&days))
}

/// [`ranking_metrics`] over cross-sections of varying size.
pub fn ranking_metrics_ragged(days: &[(Vec<f64>, Vec<f64>)]) -> RankingMetrics {
    let mut daily = Vec::new();
    let mut daily_rank = Vec::new();
    let mut skipped = Vec::new();
    for (t, (p, a)) in days.iter().enumerate() {
        match (daily_ic(p, a), daily_rank_ic(p, a)) {
            (Some(ic), Some(ric)) => {
                daily.push(ic);
                daily_rank.push(ric);
            }
            _ => skipped.push(t),
        }
    }
    let summarize = |x: &[f64]| {
        if x.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = mean(x);
            (m, ratio(m, std_dev(x)))
        }
    };
    let (ic, icir) = summarize(&daily);
    let (rank_ic, rank_icir) = summarize(&daily_rank);
    RankingMetrics {
        ic,
        icir,
        rank_ic,
        rank_icir,
        daily_ic: daily,
        daily_rank_ic: daily_rank,
        skipped_days: skipped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortfolioMetrics {
    pub arr: f64,
    pub avol: f64,
    pub mdd: f64,
    pub asr: f64,
    pub ir: f64,
}

/// Worst peak-to-trough relative decline of an equity curve (≤ 0).
pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut mdd = 0.0f64;
    for &e in equity {
        peak = peak.max(e);
        mdd = mdd.min((e - peak) / peak);
    }
    mdd
}

/// Annualized portfolio statistics. `benchmark` holds the daily returns the
/// information ratio is measured against. ASR and IR are NaN when the
/// corresponding volatility is zero.
pub fn portfolio_metrics(daily_returns: &[f64], equity: &[f64], benchmark: &[f64]) -> Result<PortfolioMetrics> {
    if daily_returns.len() < 2 {
        return Err(Error::Config("portfolio metrics need at least 2 days".into()));
    }
    if benchmark.len() != daily_returns.len() {
        return Err(Error::Shape(format!(
            "{} benchmark returns for {} days",
            benchmark.len(),
            daily_returns.len()
        )));
    }
    let arr = mean(daily_returns) * TRADING_DAYS;
    let avol = std_dev(daily_returns) * TRADING_DAYS.sqrt();
    let excess: Vec<f64> = daily_returns.iter().zip(benchmark).map(|(r, b)| r - b).collect();
    Ok(PortfolioMetrics {
        arr,
        avol,
        mdd: max_drawdown(equity),
        asr: ratio(arr, avol),
        ir: ratio(mean(&excess), std_dev(&excess)) * TRADING_DAYS.sqrt(),
    })
}

/// The nine evaluation statistics plus the equity curve. Undefined values
/// serialize as JSON `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ic: f64,
    pub icir: f64,
    pub rank_ic: f64,
    pub rank_icir: f64,
    pub arr: f64,
    pub avol: f64,
    pub mdd: f64,
    pub asr: f64,
    pub ir: f64,
    pub equity_curve: Vec<f64>,
}

impl MetricsReport {
    pub fn new(ranking: &RankingMetrics, portfolio: &PortfolioMetrics, equity_curve: Vec<f64>) -> Self {
        Self {
            ic: ranking.ic,
            icir: ranking.icir,
            rank_ic: ranking.rank_ic,
            rank_icir: ranking.rank_icir,
            arr: portfolio.arr,
            avol: portfolio.avol,
            mdd: portfolio.mdd,
            asr: portfolio.asr,
            ir: portfolio.ir,
            equity_curve,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub const TABLE_HEADER: &'static str = "IC\tICIR\tRankIC\tRankICIR\tARR\tAVol\tMDD\tASR\tIR";

    /// Tab-separated values in the column order of [`MetricsReport::TABLE_HEADER`].
    pub fn table_row(&self) -> String {
        [
            self.ic,
            self.icir,
            self.rank_ic,
            self.rank_icir,
            self.arr,
            self.avol,
            self.mdd,
            self.asr,
            self.ir,
        ]
        .iter()
        .map(|v| format!("{v:.3}"))
        .collect::<Vec<_>>()
        .join("\t")
    }
}

/// Backtest plus metrics for aligned `days × N` score and return matrices.
pub fn evaluate(
    scores: &Array2<f64>,
    returns: &Array2<f64>,
    m: usize,
    n_drop: usize,
    cost: f64,
) -> Result<(MetricsReport, BacktestResult)> {
    let ranking = ranking_metrics(scores, returns)?;
    let bt = run_backtest(scores, returns, m, n_drop, cost)?;
    let pm = portfolio_metrics(&bt.daily_returns, &bt.equity_curve, &bt.benchmark_returns)?;
    Ok((MetricsReport::new(&ranking, &pm, bt.equity_curve.clone()), bt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn set(v: &[usize]) -> BTreeSet<usize> {
        v.iter().copied().collect()
    }

    #[test]
    fn strategy_sizes() {
        assert_eq!(default_strategy_sizes(500), (50, 15));
        assert_eq!(default_strategy_sizes(20), (2, 1));
        assert_eq!(default_strategy_sizes(3), (1, 1));
    }

    #[test]
    fn worked_rebalance_example() {
        // Ranking C > D > A > B with A=0, B=1, C=2, D=3 and six filler stocks.
        let mut scores = vec![0.0; 10];
        scores[2] = 10.0;
        scores[3] = 9.0;
        scores[0] = 8.0;
        scores[1] = 7.0;
        for (k, s) in scores.iter_mut().enumerate().skip(4) {
            *s = -(k as f64);
        }
        let r = topk_drop_rebalance(&set(&[0, 1]), &scores, 2, 1).unwrap();
        assert_eq!(r.holdings, set(&[0, 2]));
        assert_eq!(r.replaced, 1);
    }

    #[test]
    fn already_top_is_unchanged() {
        let scores = [0.5, 0.9, 0.1, 0.8, 0.2];
        let r = topk_drop_rebalance(&set(&[1, 3]), &scores, 2, 2).unwrap();
        assert_eq!(r.holdings, set(&[1, 3]));
        assert_eq!(r.replaced, 0);
    }

    #[test]
    fn zero_drop_budget_freezes_portfolio() {
        let first = topk_drop_rebalance(&BTreeSet::new(), &[0.1, 0.9, 0.5, 0.7], 2, 0).unwrap();
        assert_eq!(first.holdings, set(&[1, 3]));
        let later = topk_drop_rebalance(&first.holdings, &[0.9, 0.1, 0.8, 0.0], 2, 0).unwrap();
        assert_eq!(later.holdings, first.holdings);
    }

    #[test]
    fn unscorable_day_keeps_portfolio() {
        let prev = set(&[0, 1]);
        let r = topk_drop_rebalance(&prev, &[f64::NAN, 1.0, f64::NAN], 2, 1).unwrap();
        assert!(r.flagged);
        assert_eq!(r.holdings, prev);
        assert!(topk_drop_rebalance(&prev, &[1.0, 2.0], 3, 1).is_err());
        assert!(topk_drop_rebalance(&prev, &[1.0, 2.0], 1, 2).is_err());
    }

    #[test]
    fn cost_model_single_day() {
        let scores = array![[1.0, 0.0, -1.0]];
        let returns = array![[0.02, 0.5, 0.5]];
        let bt = run_backtest(&scores, &returns, 1, 1, 0.001).unwrap();
        assert!((bt.daily_returns[0] - 0.018).abs() < 1e-15);
    }

    #[test]
    fn zero_market_stable_portfolio() {
        let scores = Array2::from_elem((30, 5), 1.0);
        let returns = Array2::zeros((30, 5));
        let bt = run_backtest(&scores, &returns, 2, 1, 0.0).unwrap();
        assert_eq!(bt.state.equity, 1.0);
        // With costs only the opening purchase is paid.
        let bt = run_backtest(&scores, &returns, 2, 1, 0.001).unwrap();
        assert_eq!(bt.turnover.iter().skip(1).sum::<usize>(), 0);
        assert!(bt.equity_curve[1..].windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn missing_return_of_held_stock_counts_as_zero() {
        let scores = array![[1.0, 0.0, -1.0], [1.0, 0.0, -1.0]];
        let returns = array![[0.01, 0.0, 0.0], [f64::NAN, 0.0, 0.0]];
        let bt = run_backtest(&scores, &returns, 1, 1, 0.0).unwrap();
        assert_eq!(bt.daily_returns[1], 0.0);
        assert_eq!(bt.flags, vec![(1, DayFlag::MissingReturn)]);
    }

    #[test]
    fn ranking_metric_identities() {
        let a = array![[0.1, -0.2, 0.3, 0.05], [0.0, 0.2, -0.1, 0.4], [0.3, 0.1, 0.2, -0.3]];
        let m = ranking_metrics(&a, &a).unwrap();
        assert!((m.ic - 1.0).abs() < 1e-12);
        assert!((m.rank_ic - 1.0).abs() < 1e-12);
        let neg = ranking_metrics(&a.mapv(|v| -v), &a).unwrap();
        assert!((neg.ic + 1.0).abs() < 1e-12);
        assert!(ranking_metrics(&a.slice(ndarray::s![..1, ..]).to_owned(), &a.slice(ndarray::s![..1, ..]).to_owned()).is_err());
    }

    #[test]
    fn zero_variance_day_is_skipped() {
        let preds = array![[1.0, 1.0, 1.0], [0.1, 0.2, 0.3]];
        let actual = array![[0.1, 0.2, 0.3], [0.1, 0.2, 0.3]];
        let m = ranking_metrics(&preds, &actual).unwrap();
        assert_eq!(m.skipped_days, vec![0]);
        assert_eq!(m.daily_ic.len(), 1);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn portfolio_closed_forms() {
        let daily = vec![0.001; 252];
        let mut equity = vec![1.0];
        for r in &daily {
            equity.push(equity.last().unwrap() * (1.0 + r));
        }
        let pm = portfolio_metrics(&daily, &equity, &vec![0.0; 252]).unwrap();
        assert!((pm.arr - 0.252).abs() < 1e-12);
        assert_eq!(pm.avol, 0.0);
        assert_eq!(pm.mdd, 0.0);
        assert!(pm.asr.is_nan());

        assert!((max_drawdown(&[1.0, 1.2, 0.9, 1.1]) + 0.25).abs() < 1e-15);

        let zero = portfolio_metrics(&[0.0; 10], &[1.0; 11], &[0.0; 10]).unwrap();
        assert_eq!(zero.arr, 0.0);
        assert_eq!(zero.mdd, 0.0);
        assert!(portfolio_metrics(&[0.0], &[1.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn report_json_has_nine_metrics_and_curve() {
        let report = MetricsReport {
            ic: 0.1,
            icir: f64::NAN,
            rank_ic: 0.2,
            rank_icir: 1.0,
            arr: 0.3,
            avol: 0.1,
            mdd: -0.05,
            asr: 3.0,
            ir: 0.5,
            equity_curve: vec![1.0, 1.01],
        };
        let v: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            ["arr", "asr", "avol", "equity_curve", "ic", "icir", "ir", "mdd", "rank_ic", "rank_icir"]
        );
        assert!(obj["icir"].is_null());
    }

    proptest! {
        #[test]
        fn mdd_zero_iff_non_decreasing(steps in proptest::collection::vec(-0.1f64..0.1, 1..40)) {
            let mut eq = vec![1.0];
            for s in &steps {
                eq.push(eq.last().unwrap() * (1.0 + s));
            }
            let monotone = eq.windows(2).all(|w| w[1] >= w[0]);
            prop_assert_eq!(max_drawdown(&eq) == 0.0, monotone);
            prop_assert!(max_drawdown(&eq) <= 0.0);
        }

        #[test]
        fn rank_ic_invariant_under_monotone_map(x in proptest::collection::vec(-3.0f64..3.0, 12), seed in 0u64..100) {
            let preds = Array2::from_shape_vec((3, 4), x).unwrap();
            let actual = Array2::from_shape_fn((3, 4), |(i, j)| ((i * 7 + j * 3 + seed as usize) % 11) as f64);
            let a = ranking_metrics(&preds, &actual).unwrap();
            let b = ranking_metrics(&preds.mapv(f64::exp), &actual).unwrap();
            prop_assert_eq!(a.daily_rank_ic, b.daily_rank_ic);
            let c = ranking_metrics(&preds.mapv(|v| 2.5 * v - 1.0), &actual).unwrap();
            for (u, v) in a.daily_ic.iter().zip(&c.daily_ic) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}
