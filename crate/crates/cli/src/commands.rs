use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ssgraph::checkpoint::{load_checkpoint_for, save_checkpoint};
use ssgraph::data::{generate_synthetic, load_panel, make_windows, write_panel_csv, CsvFormat, Panel, WindowBatch};
use ssgraph::evaluation::{self, BacktestResult, MetricsReport, RankingMetrics};
use ssgraph::model::{Model, ModelConfig};
use ssgraph::pipeline::{self, Split};
use ssgraph::training::{self, LossConfig};

use crate::config::RunConfig;
use crate::Coded;

pub const PANEL_FILE: &str = "panel.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const BENCHMARK_FILE: &str = "benchmark_report.json";
pub const DAILY_FILE: &str = "daily.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const METRICS_FILE: &str = "metrics.json";

fn out_path(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output.dir).with_context(|| format!("creating {}", cfg.output.dir.display()))?;
    Ok(cfg.output.dir.join(name))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let spec = cfg.synthetic.spec();
    let panel = generate_synthetic(&spec)?;
    let path = out_path(cfg, PANEL_FILE)?;
    write_panel_csv(&panel, create(&path)?)?;
    println!(
        "wrote {}: {} stocks x {} days ({} rows)",
        path.display(),
        panel.n_stocks(),
        panel.n_days(),
        panel.n_stocks() * panel.n_days()
    );
    println!("planted edges: {}", spec.followers.len());
    for f in &spec.followers {
        println!(
            "  {} <- {} lag {} beta {}",
            panel.symbols[f.follower], panel.symbols[f.leader], f.lag, f.beta
        );
    }
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<Panel> {
    Ok(match &cfg.data.panel {
        Some(p) => load_panel(p, &CsvFormat::with_lookback(cfg.data.lookback))?,
        None => generate_synthetic(&cfg.synthetic.spec())?,
    })
}

fn split(cfg: &RunConfig, panel: &Panel) -> Result<Split> {
    let windows = make_windows(panel, cfg.data.lookback)?;
    Ok(match (cfg.split.valid_start, cfg.split.test_start) {
        (Some(v), Some(t)) => pipeline::split_by_dates(&windows, v, t)?,
        _ => pipeline::split_by_fraction(&windows, cfg.split.train_fraction, cfg.split.valid_fraction)?,
    })
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let panel = load_data(cfg)?;
    let split = split(cfg, &panel)?;
    let loss = cfg.loss_config()?;
    let model = Model::init(cfg.model_config()?, loss.seed)?;
    let out = training::fit_with(model, &split.train, &split.valid, &loss, |e| {
        eprintln!("epoch {} train_loss {:.6e} valid_ic {:.4}", e.epoch, e.train_loss, e.valid_ic);
    })?;

    let ckpt_path = out_path(cfg, CHECKPOINT_FILE)?;
    save_checkpoint(&out.checkpoint, &ckpt_path)?;
    let log_path = out_path(cfg, TRAIN_LOG_FILE)?;
    let mut log = create(&log_path)?;
    writeln!(log, "epoch,train_loss,valid_ic")?;
    for e in &out.epochs {
        writeln!(log, "{},{},{}", e.epoch, e.train_loss, e.valid_ic)?;
    }
    println!(
        "best epoch {} valid_ic {:.6} ({} parameters, fingerprint {})",
        out.checkpoint.epoch,
        out.checkpoint.metrics.get("valid_ic").copied().unwrap_or(f64::NAN),
        out.checkpoint.model.n_params(),
        out.checkpoint.fingerprint()
    );
    println!("wrote {} and {}", ckpt_path.display(), log_path.display());
    Ok(())
}

pub fn backtest(cfg: &RunConfig, checkpoint: Option<&Path>, oracle: bool) -> Result<()> {
    let panel = load_data(cfg)?;
    let split = split(cfg, &panel)?;
    let n = panel.n_stocks();
    let (scores, returns) = if oracle {
        pipeline::oracle_scores(&split.test, n)
    } else {
        let path = match checkpoint {
            Some(p) => p.to_path_buf(),
            None => cfg.output.dir.join(CHECKPOINT_FILE),
        };
        let ckpt = load_checkpoint_for(&path, &cfg.model_config()?)
            .with_context(|| format!("loading {}", path.display()))?;
        pipeline::score_windows(&ckpt.model, &split.test, n)?
    };
    let strategy = cfg.strategy.resolve(n);
    let (report, bt) = evaluation::evaluate(&scores, &returns, strategy.m, strategy.n_drop, strategy.cost)?;
    let bench = benchmark_report(&bt)?;

    let report_path = out_path(cfg, REPORT_FILE)?;
    fs::write(&report_path, report.to_json()? + "\n")?;
    fs::write(out_path(cfg, BENCHMARK_FILE)?, bench.to_json()? + "\n")?;
    write_daily(&out_path(cfg, DAILY_FILE)?, &split.test, &panel, &bt)?;
    write_scores(&out_path(cfg, SCORES_FILE)?, &split.test, &panel, &scores, &returns)?;

    println!(
        "backtest over {} days, m={} n_drop={} cost={}: final equity {:.4} vs benchmark {:.4}",
        split.test.len(),
        strategy.m,
        strategy.n_drop,
        strategy.cost,
        bt.state.equity,
        bt.benchmark_equity.last().copied().unwrap_or(1.0)
    );
    println!("wrote {}", report_path.display());
    if cfg.output.table {
        print_table(&report);
    }
    Ok(())
}

/// Metrics of the equal-weight benchmark; ranking fields are undefined.
fn benchmark_report(bt: &BacktestResult) -> Result<MetricsReport> {
    let pm = evaluation::portfolio_metrics(&bt.benchmark_returns, &bt.benchmark_equity, &bt.benchmark_returns)?;
    let undefined = RankingMetrics {
        ic: f64::NAN,
        icir: f64::NAN,
        rank_ic: f64::NAN,
        rank_icir: f64::NAN,
        daily_ic: Vec::new(),
        daily_rank_ic: Vec::new(),
        skipped_days: Vec::new(),
    };
    Ok(MetricsReport::new(&undefined, &pm, bt.benchmark_equity.clone()))
}

fn print_table(report: &MetricsReport) {
    println!("{}", MetricsReport::TABLE_HEADER);
    println!("{}", report.table_row());
}

fn write_daily(path: &Path, test: &[WindowBatch], panel: &Panel, bt: &BacktestResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["date", "return", "benchmark_return", "equity", "benchmark_equity", "replaced", "holdings"])?;
    for (t, day) in test.iter().enumerate() {
        let holdings: Vec<&str> = bt.holdings_by_day[t].iter().map(|&i| panel.symbols[i].as_str()).collect();
        w.write_record([
            day.date.to_string(),
            bt.daily_returns[t].to_string(),
            bt.benchmark_returns[t].to_string(),
            bt.equity_curve[t + 1].to_string(),
            bt.benchmark_equity[t + 1].to_string(),
            bt.turnover[t].to_string(),
            holdings.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_scores(
    path: &Path,
    test: &[WindowBatch],
    panel: &Panel,
    scores: &Array2<f64>,
    returns: &Array2<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["date", "symbol", "score", "return"])?;
    for (t, day) in test.iter().enumerate() {
        for &j in &day.stocks {
            w.write_record([
                day.date.to_string(),
                panel.symbols[j].clone(),
                scores[[t, j]].to_string(),
                returns[[t, j]].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
struct ScoreRow {
    date: String,
    symbol: String,
    score: f64,
    #[serde(rename = "return")]
    ret: f64,
}

/// Metrics from a long-format `date,symbol,score,return` file.
pub fn eval_metrics(cfg: &RunConfig, scores_path: &Path) -> Result<()> {
    let mut reader = csv::Reader::from_path(scores_path).with_context(|| format!("reading {}", scores_path.display()))?;
    let rows: Vec<ScoreRow> = reader.deserialize().collect::<Result<_, _>>()?;
    let mut dates: Vec<&str> = rows.iter().map(|r| r.date.as_str()).collect();
    dates.sort_unstable();
    dates.dedup();
    let mut symbols: Vec<&str> = rows.iter().map(|r| r.symbol.as_str()).collect();
    symbols.sort_unstable();
    symbols.dedup();
    let mut scores = Array2::from_elem((dates.len(), symbols.len()), f64::NAN);
    let mut returns = scores.clone();
    for r in &rows {
        let t = dates.binary_search(&r.date.as_str()).expect("collected above");
        let j = symbols.binary_search(&r.symbol.as_str()).expect("collected above");
        scores[[t, j]] = r.score;
        returns[[t, j]] = r.ret;
    }
    let strategy = cfg.strategy.resolve(symbols.len());
    let (report, _) = evaluation::evaluate(&scores, &returns, strategy.m, strategy.n_drop, strategy.cost)?;
    let path = out_path(cfg, METRICS_FILE)?;
    fs::write(&path, report.to_json()? + "\n")?;
    println!(
        "{} days x {} stocks: ic {:.4} rank_ic {:.4} arr {:.4} asr {:.4}",
        dates.len(),
        symbols.len(),
        report.ic,
        report.rank_ic,
        report.arr,
        report.asr
    );
    println!("wrote {}", path.display());
    if cfg.output.table {
        print_table(&report);
    }
    Ok(())
}

/// Gradient check on a small random fixture (N=4, L=8, n=2, F=3, D=4).
pub fn grad_check(cfg: &RunConfig, epsilon: f64, tolerance: f64) -> Result<()> {
    let loss = cfg.loss_config()?;
    let config = ModelConfig {
        features: 3,
        lookback: 8,
        n_patches: 2,
        hidden: 4,
        ffn_hidden: 4,
        use_wdn: cfg.model.use_wdn,
        use_ssgl: cfg.model.use_ssgl,
        ..ModelConfig::default()
    };
    let model = Model::init(config, loss.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(loss.seed);
    let d = Normal::new(0.0, 1.0).expect("valid normal");
    let batch = WindowBatch {
        date: chrono::NaiveDate::from_ymd_opt(2020, 1, 2).expect("valid date"),
        day: 0,
        stocks: (0..4).collect(),
        x: Array3::from_shape_fn((4, 8, 3), |_| d.sample(&mut rng)),
        r: Array1::from_shape_fn(4, |_| 0.05 * d.sample(&mut rng)),
    };
    let rep = training::grad_check(&model, &batch, &LossConfig { ..loss }, epsilon)?;
    println!(
        "max relative error {:.3e} at {}[{}] over {} parameters",
        rep.max_rel_error, rep.worst.0, rep.worst.1, rep.n_params
    );
    if !(rep.max_rel_error < tolerance) {
        return Err(Coded::new(
            "E_GRADCHECK",
            format!("relative error {:.3e} exceeds tolerance {tolerance:e}", rep.max_rel_error),
        )
        .into());
    }
    Ok(())
}
