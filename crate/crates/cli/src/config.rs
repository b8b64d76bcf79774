//! Run configuration: TOML file, then `SSGRAPH__SECTION__KEY` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use ssgraph::autodiff::Bandwidth;
use ssgraph::data::{FollowerSpec, SyntheticSpec};
use ssgraph::model::ModelConfig;
use ssgraph::pipeline::Strategy;
use ssgraph::training::{LossConfig, Optimizer};

pub const ENV_PREFIX: &str = "SSGRAPH__";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub split: SplitSection,
    pub strategy: StrategySection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV panel; the synthetic generator is used when absent.
    pub panel: Option<PathBuf>,
    pub lookback: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            panel: None,
            lookback: ssgraph::data::DEFAULT_LOOKBACK,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSection {
    pub n_stocks: usize,
    pub n_days: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub followers: Vec<FollowerSpec>,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            n_stocks: s.n_stocks,
            n_days: s.n_days,
            noise_sigma: s.noise_sigma,
            seed: s.seed,
            followers: s.followers,
        }
    }
}

impl SyntheticSection {
    pub fn spec(&self) -> SyntheticSpec {
        let mut leaders: Vec<usize> = self.followers.iter().map(|f| f.leader).collect();
        leaders.sort_unstable();
        leaders.dedup();
        SyntheticSpec {
            n_stocks: self.n_stocks,
            n_days: self.n_days,
            leaders,
            followers: self.followers.clone(),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_patches: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub kernel_width: usize,
    /// `"median"` or a fixed positive sigma.
    pub bandwidth: BandwidthSetting,
    pub gamma_init: f64,
    pub use_wdn: bool,
    pub use_ssgl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSetting {
    Sigma(f64),
    Named(String),
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            n_patches: m.n_patches,
            hidden: m.hidden,
            ffn_hidden: m.ffn_hidden,
            kernel_width: m.kernel_width,
            bandwidth: BandwidthSetting::Named("median".into()),
            gamma_init: m.gamma_init,
            use_wdn: m.use_wdn,
            use_ssgl: m.use_ssgl,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub eta: f64,
    pub mse_weight: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// `"adam"` or `"sgd"`.
    pub optimizer: String,
    pub pair_sampling: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let l = LossConfig::default();
        Self {
            eta: l.eta,
            mse_weight: l.mse_weight,
            learning_rate: l.learning_rate,
            max_epochs: l.max_epochs,
            patience: l.patience,
            seed: l.seed,
            optimizer: "adam".into(),
            pair_sampling: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub valid_fraction: f64,
    /// Date splits take precedence over fractions when both are set.
    #[serde(deserialize_with = "date_or_string")]
    pub valid_start: Option<NaiveDate>,
    #[serde(deserialize_with = "date_or_string")]
    pub test_start: Option<NaiveDate>,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            train_fraction: 0.6,
            valid_fraction: 0.2,
            valid_start: None,
            test_start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    pub top_fraction: f64,
    pub drop_fraction: f64,
    pub cost: f64,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            top_fraction: ssgraph::evaluation::DEFAULT_TOP_FRACTION,
            drop_fraction: ssgraph::evaluation::DEFAULT_DROP_FRACTION,
            cost: ssgraph::evaluation::DEFAULT_COST,
        }
    }
}

impl StrategySection {
    /// `m = max(1, round(top·N))`, `n_drop = max(1, round(drop·N))`, capped at `m`.
    pub fn resolve(&self, n_stocks: usize) -> Strategy {
        let m = ((self.top_fraction * n_stocks as f64).round() as usize).max(1);
        let n_drop = ((self.drop_fraction * n_stocks as f64).round() as usize).max(1).min(m);
        Strategy {
            m,
            n_drop,
            cost: self.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also print the metrics as a tab-separated table.
    pub table: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            table: false,
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any) and applies environment overrides from `env`.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let Some((section, field)) = rest.split_once("__") else {
                bail!("environment override {key} must look like {ENV_PREFIX}SECTION__KEY");
            };
            let section = table
                .entry(section.to_ascii_lowercase())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let Some(section) = section.as_table_mut() else {
                bail!("config entry `{}` is not a section", rest);
            };
            section.insert(field.to_ascii_lowercase(), parse_env_value(&value));
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config()?.validate()?;
        self.loss_config()?.validate()?;
        match (self.split.valid_start, self.split.test_start) {
            (Some(v), Some(t)) if v >= t => bail!("split.valid_start {v} must precede split.test_start {t}"),
            (Some(_), None) | (None, Some(_)) => bail!("set both split.valid_start and split.test_start, or neither"),
            _ => {}
        }
        let s = &self.split;
        if !(s.train_fraction > 0.0 && s.valid_fraction > 0.0 && s.train_fraction + s.valid_fraction < 1.0) {
            bail!("split fractions must be positive and leave room for a test split");
        }
        let st = &self.strategy;
        if !(st.top_fraction > 0.0 && st.top_fraction <= 1.0) || !(st.drop_fraction >= 0.0) || !(st.cost >= 0.0) {
            bail!("strategy fractions must lie in (0, 1] and cost must be non-negative");
        }
        Ok(())
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let m = &self.model;
        let bandwidth = match &m.bandwidth {
            BandwidthSetting::Sigma(s) => Bandwidth::Fixed(*s),
            BandwidthSetting::Named(n) if n == "median" => Bandwidth::Median,
            BandwidthSetting::Named(n) => match n.parse::<f64>() {
                Ok(s) => Bandwidth::Fixed(s),
                Err(_) => bail!("model.bandwidth must be \"median\" or a positive number, got {n:?}"),
            },
        };
        Ok(ModelConfig {
            features: ssgraph::data::N_FEATURES,
            lookback: self.data.lookback,
            n_patches: m.n_patches,
            hidden: m.hidden,
            ffn_hidden: m.ffn_hidden,
            kernel_width: m.kernel_width,
            bandwidth,
            gamma_init: m.gamma_init,
            use_wdn: m.use_wdn,
            use_ssgl: m.use_ssgl,
        })
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let t = &self.train;
        let optimizer = match t.optimizer.as_str() {
            "adam" => Optimizer::Adam,
            "sgd" => Optimizer::Sgd,
            other => bail!("train.optimizer must be \"adam\" or \"sgd\", got {other:?}"),
        };
        Ok(LossConfig {
            eta: t.eta,
            mse_weight: t.mse_weight,
            learning_rate: t.learning_rate,
            max_epochs: t.max_epochs,
            seed: t.seed,
            patience: t.patience,
            optimizer,
            pair_sampling: t.pair_sampling,
        })
    }
}

/// Accepts a TOML date or a `YYYY-MM-DD` string.
fn date_or_string<'de, D>(de: D) -> std::result::Result<Option<NaiveDate>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    let raw: Option<toml::Value> = Option::deserialize(de)?;
    raw.map(|v| {
        let text = match v {
            toml::Value::String(s) => s,
            other => other.to_string(),
        };
        NaiveDate::parse_from_str(&text, "%Y-%m-%d").map_err(serde::de::Error::custom)
    })
    .transpose()
}

/// Environment values are read as TOML when they parse, else as strings.
fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
