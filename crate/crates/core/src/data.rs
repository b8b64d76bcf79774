//! Market panels: CSV ingestion, one-day returns, lookback windows and a
//! seeded synthetic generator with planted lead-lag structure.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use ndarray::{s, Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 6;
pub const OPEN: usize = 0;
pub const HIGH: usize = 1;
pub const LOW: usize = 2;
pub const CLOSE: usize = 3;
pub const TURNOVER: usize = 4;
pub const VOLUME: usize = 5;

pub const FEATURE_NAMES: [&str; N_FEATURES] = ["open", "high", "low", "close", "turnover", "volume"];

/// Default lookback window length.
pub const DEFAULT_LOOKBACK: usize = 20;

/// Dates × symbols × features market data.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub dates: Vec<NaiveDate>,
    pub symbols: Vec<String>,
    /// `days × N × F`, features in [`FEATURE_NAMES`] order.
    pub values: Array3<f64>,
    /// `days × N`; false where a row was filled rather than observed.
    pub valid: Array2<bool>,
}

impl Panel {
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.symbols.len()
    }

    pub fn close(&self) -> Array2<f64> {
        self.values.slice(s![.., .., CLOSE]).to_owned()
    }
}

/// One training example: the lookback window before `date` and the
/// realized returns on `date`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub date: NaiveDate,
    /// Index of `date` in the source panel.
    pub day: usize,
    /// Panel stock indices included in this cross-section.
    pub stocks: Vec<usize>,
    /// `N × L × F`, z-scored per stock per feature.
    pub x: Array3<f64>,
    pub r: Array1<f64>,
}

impl WindowBatch {
    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn lookback(&self) -> usize {
        self.x.dim().1
    }
}

/// Column names for the CSV reader.
#[derive(Debug, Clone)]
pub struct CsvFormat {
    pub date: String,
    pub symbol: String,
    /// Column names for each feature, in [`FEATURE_NAMES`] order.
    pub features: [String; N_FEATURES],
    /// Minimum number of distinct dates (L + 2 for lookback L).
    pub min_days: usize,
}

impl Default for CsvFormat {
    fn default() -> Self {
        Self {
            date: "date".into(),
            symbol: "symbol".into(),
            features: FEATURE_NAMES.map(String::from),
            min_days: DEFAULT_LOOKBACK + 2,
        }
    }
}

impl CsvFormat {
    pub fn with_lookback(lookback: usize) -> Self {
        Self {
            min_days: lookback + 2,
            ..Self::default()
        }
    }
}

/// Reads a long-format CSV (`date,symbol,open,high,low,close,turnover,volume`).
///
/// The panel covers every date seen in the file. A stock with no row on some
/// date is forward-filled from its previous row (or back-filled before its
/// first row) and marked invalid there.
pub fn load_panel(path: impl AsRef<Path>, format: &CsvFormat) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    read_panel(&mut reader, format)
}

pub fn read_panel<R: std::io::Read>(reader: &mut csv::Reader<R>, format: &CsvFormat) -> Result<Panel> {
    let headers = reader.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let date_col = column(&format.date)?;
    let symbol_col = column(&format.symbol)?;
    let mut feature_cols = [0usize; N_FEATURES];
    for (slot, name) in feature_cols.iter_mut().zip(format.features.iter()) {
        *slot = column(name)?;
    }

    let mut rows: BTreeMap<NaiveDate, BTreeMap<String, [f64; N_FEATURES]>> = BTreeMap::new();
    let mut symbols = BTreeSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field {}", col + 1),
            })
        };
        let date_str = field(date_col)?;
        let date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d").map_err(|e| Error::Parse {
            line,
            message: format!("bad date `{date_str}`: {e}"),
        })?;
        let symbol = field(symbol_col)?.to_string();
        if symbol.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty symbol".into(),
            });
        }
        let mut feats = [0.0; N_FEATURES];
        for (k, &col) in feature_cols.iter().enumerate() {
            let raw = field(col)?;
            let v: f64 = raw.parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad number `{raw}` in column `{}`", format.features[k]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("non-finite value in column `{}`", format.features[k]),
                });
            }
            feats[k] = v;
        }
        if feats[CLOSE] <= 0.0 {
            return Err(Error::Data {
                symbol,
                date: date.to_string(),
                message: format!("non-positive close {}", feats[CLOSE]),
            });
        }
        symbols.insert(symbol.clone());
        if rows.entry(date).or_default().insert(symbol.clone(), feats).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate row for {symbol} on {date}"),
            });
        }
    }

    if rows.len() < format.min_days {
        return Err(Error::InsufficientHistory {
            needed: format.min_days,
            available: rows.len(),
        });
    }

    let symbols: Vec<String> = symbols.into_iter().collect();
    let dates: Vec<NaiveDate> = rows.keys().copied().collect();
    let (d, n) = (dates.len(), symbols.len());
    let mut values = Array3::<f64>::zeros((d, n, N_FEATURES));
    let mut valid = Array2::from_elem((d, n), false);
    for (j, sym) in symbols.iter().enumerate() {
        let mut last: Option<[f64; N_FEATURES]> = None;
        let mut first_seen = None;
        for (t, day) in rows.values().enumerate() {
            if let Some(f) = day.get(sym) {
                last = Some(*f);
                valid[[t, j]] = true;
                first_seen.get_or_insert(t);
            }
            if let Some(f) = last {
                values.slice_mut(s![t, j, ..]).assign(&Array1::from(f.to_vec()));
            }
        }
        // Back-fill the leading gap with the first observation.
        if let Some(t0) = first_seen {
            let first = values.slice(s![t0, j, ..]).to_owned();
            for t in 0..t0 {
                values.slice_mut(s![t, j, ..]).assign(&first);
            }
        }
    }

    Ok(Panel {
        dates,
        symbols,
        values,
        valid,
    })
}

/// Writes a panel in the long CSV schema read by [`load_panel`]. Only
/// observed (valid) rows are written.
pub fn write_panel_csv(panel: &Panel, mut out: impl Write) -> Result<()> {
    writeln!(out, "date,symbol,{}", FEATURE_NAMES.join(","))?;
    for (t, date) in panel.dates.iter().enumerate() {
        for (j, sym) in panel.symbols.iter().enumerate() {
            if !panel.valid[[t, j]] {
                continue;
            }
            write!(out, "{date},{sym}")?;
            for k in 0..N_FEATURES {
                write!(out, ",{}", panel.values[[t, j, k]])?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// `(days − 1) × N` close-to-close returns; row `t − 1` is the return on day `t`.
pub fn compute_returns(panel: &Panel) -> Array2<f64> {
    let close = panel.close();
    let d = panel.n_days();
    let prev = close.slice(s![..d - 1, ..]);
    let next = close.slice(s![1.., ..]);
    (&next - &prev) / prev
}

/// Z-scores every (stock, feature) series of an `N × L × F` window in place.
/// Zero-variance series become all zeros.
pub fn normalize_window(x: &mut Array3<f64>) {
    let (n, l, f) = x.dim();
    for i in 0..n {
        for k in 0..f {
            let mut series = x.slice_mut(s![i, .., k]);
            let mean = series.sum() / l as f64;
            let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / l as f64;
            let std = var.sqrt();
            if std <= 1e-12 * (1.0 + mean.abs()) {
                series.fill(0.0);
            } else {
                series.mapv_inplace(|v| (v - mean) / std);
            }
        }
    }
}

/// One [`WindowBatch`] per day `t` in `L+1..days`: features from days
/// `t−L..t−1`, labels are day-`t` returns. Day 0 only serves as the return
/// base for day 1, so `days − L − 1` windows come out of a complete panel.
///
/// Stocks not observed on every day of `t−L..=t` are left out of that day's
/// cross-section. Days with fewer than two remaining stocks are skipped.
pub fn make_windows(panel: &Panel, lookback: usize) -> Result<Vec<WindowBatch>> {
    if lookback == 0 {
        return Err(Error::Config("lookback must be positive".into()));
    }
    let d = panel.n_days();
    if d < lookback + 2 {
        return Err(Error::InsufficientHistory {
            needed: lookback + 2,
            available: d,
        });
    }
    let returns = compute_returns(panel);
    let out = (lookback + 1..d)
        .filter_map(|t| {
            let stocks: Vec<usize> = (0..panel.n_stocks())
                .filter(|&j| (t - lookback..=t).all(|u| panel.valid[[u, j]]))
                .collect();
            if stocks.len() < 2 {
                return None;
            }
            let mut x = Array3::zeros((stocks.len(), lookback, N_FEATURES));
            for (row, &j) in stocks.iter().enumerate() {
                x.slice_mut(s![row, .., ..])
                    .assign(&panel.values.slice(s![t - lookback..t, j, ..]));
            }
            normalize_window(&mut x);
            let r = stocks.iter().map(|&j| returns[[t - 1, j]]).collect();
            Some(WindowBatch {
                date: panel.dates[t],
                day: t,
                stocks,
                x,
                r,
            })
        })
        .collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerSpec {
    pub follower: usize,
    pub leader: usize,
    pub lag: usize,
    pub beta: f64,
}

/// Parameters of a synthetic panel. Stocks that are not followers draw
/// i.i.d. Gaussian returns; each follower's return is `beta` times its
/// leader's return `lag` days earlier plus independent noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_stocks: usize,
    pub n_days: usize,
    pub leaders: Vec<usize>,
    pub followers: Vec<FollowerSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_stocks: 20,
            n_days: 1000,
            leaders: vec![0],
            followers: vec![FollowerSpec {
                follower: 1,
                leader: 0,
                lag: 1,
                beta: 0.8,
            }],
            noise_sigma: 0.01,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_stocks < 2 {
            return Err(Error::Spec("need at least 2 stocks".into()));
        }
        if self.n_days < 2 {
            return Err(Error::Spec("need at least 2 days".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Spec(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if let Some(&l) = self.leaders.iter().find(|&&l| l >= self.n_stocks) {
            return Err(Error::Spec(format!("leader {l} out of range")));
        }
        let mut seen = BTreeSet::new();
        for f in &self.followers {
            if f.follower >= self.n_stocks || f.leader >= self.n_stocks {
                return Err(Error::Spec(format!("follower edge {}<-{} out of range", f.follower, f.leader)));
            }
            if f.follower == f.leader {
                return Err(Error::Spec(format!("stock {} cannot follow itself", f.follower)));
            }
            if !self.leaders.is_empty() && !self.leaders.contains(&f.leader) {
                return Err(Error::Spec(format!("{} is not a declared leader", f.leader)));
            }
            if !(1..=5).contains(&f.lag) {
                return Err(Error::Spec(format!("lag {} outside 1..=5", f.lag)));
            }
            // beta = 0 is accepted as the "no coupling" control.
            if !(f.beta == 0.0 || (0.2..=1.0).contains(&f.beta)) {
                return Err(Error::Spec(format!("beta {} outside [0.2, 1.0]", f.beta)));
            }
            if !seen.insert(f.follower) {
                return Err(Error::Spec(format!("stock {} has more than one leader", f.follower)));
            }
        }
        Ok(())
    }
}

fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Synthetic `n_days × n_stocks` panel; a pure function of `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Panel> {
    spec.validate()?;
    let (d, n) = (spec.n_days, spec.n_stocks);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Spec(e.to_string()))?;

    let mut returns = Array2::<f64>::zeros((d, n));
    for t in 1..d {
        for i in 0..n {
            returns[[t, i]] = normal.sample(&mut rng);
        }
    }
    for t in 1..d {
        for f in &spec.followers {
            if t > f.lag {
                let lead = returns[[t - f.lag, f.leader]];
                returns[[t, f.follower]] += f.beta * lead;
            }
        }
    }
    returns.mapv_inplace(|r| r.max(-0.95));

    let mut values = Array3::<f64>::zeros((d, n, N_FEATURES));
    for i in 0..n {
        let mut prev = 100.0;
        for t in 0..d {
            let close = if t == 0 { 100.0 } else { prev * (1.0 + returns[[t, i]]) };
            let row = [prev, 1.01 * close, 0.99 * close, close, 1.0e8, 1.0e6];
            values.slice_mut(s![t, i, ..]).assign(&Array1::from(row.to_vec()));
            prev = close;
        }
    }

    let start = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    Ok(Panel {
        dates: business_days(start, d),
        symbols: (0..n).map(|i| format!("S{i:03}")).collect(),
        values,
        valid: Array2::from_elem((d, n), true),
    })
}
