//! End-to-end model: denoise → patch → embed → slice graphs → recurrence →
//! graph aggregation → score.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::{Bandwidth, Tape, Var};
use crate::error::{Error, Result};
use crate::graphconstruct::{self, BoundEmbed, EmbedParams};
use crate::predictor::{self, BoundPredictor, PredictorParams};
use crate::ssgl::{self, BoundSsm, SsmParams};
use crate::wdn::{self, BoundWdn, WdnParams};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub features: usize,
    pub lookback: usize,
    pub n_patches: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub kernel_width: usize,
    pub bandwidth: Bandwidth,
    pub gamma_init: f64,
    pub use_wdn: bool,
    pub use_ssgl: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            features: crate::data::N_FEATURES,
            lookback: crate::data::DEFAULT_LOOKBACK,
            n_patches: graphconstruct::DEFAULT_PATCHES,
            hidden: 16,
            ffn_hidden: 16,
            kernel_width: wdn::DEFAULT_KERNEL_WIDTH,
            bandwidth: Bandwidth::Median,
            gamma_init: wdn::DEFAULT_GAMMA,
            use_wdn: true,
            use_ssgl: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("features", self.features),
            ("lookback", self.lookback),
            ("hidden", self.hidden),
            ("ffn_hidden", self.ffn_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        graphconstruct::patch_len(self.lookback, self.n_patches)?;
        graphconstruct::check_bandwidth(self.bandwidth)?;
        if self.use_wdn {
            if self.kernel_width < 2 {
                return Err(Error::Config("kernel_width must be at least 2".into()));
            }
            if self.kernel_width > self.lookback {
                return Err(Error::Config(format!(
                    "kernel_width {} exceeds lookback {}",
                    self.kernel_width, self.lookback
                )));
            }
            if !(self.gamma_init > 0.0) {
                return Err(Error::Config("gamma_init must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.lookback / self.n_patches
    }

    /// Canonical `key=value` lines; parsed back by [`ModelConfig::from_canonical`].
    pub fn canonical(&self) -> String {
        let bandwidth = match self.bandwidth {
            Bandwidth::Median => "median".to_string(),
            Bandwidth::Fixed(s) => format!("fixed:{s}"),
        };
        let mut out = String::new();
        let _ = writeln!(out, "features={}", self.features);
        let _ = writeln!(out, "lookback={}", self.lookback);
        let _ = writeln!(out, "n_patches={}", self.n_patches);
        let _ = writeln!(out, "hidden={}", self.hidden);
        let _ = writeln!(out, "ffn_hidden={}", self.ffn_hidden);
        let _ = writeln!(out, "kernel_width={}", self.kernel_width);
        let _ = writeln!(out, "bandwidth={bandwidth}");
        let _ = writeln!(out, "gamma_init={}", self.gamma_init);
        let _ = writeln!(out, "use_wdn={}", self.use_wdn);
        let _ = writeln!(out, "use_ssgl={}", self.use_ssgl);
        out
    }

    pub fn from_canonical(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.split_once('=').ok_or_else(|| Error::Config(format!("bad config line `{l}`"))))
            .collect::<Result<_>>()?;
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Config(format!("missing `{k}`")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))
        }
        let bandwidth = match get("bandwidth")? {
            "median" => Bandwidth::Median,
            other => match other.strip_prefix("fixed:") {
                Some(s) => Bandwidth::Fixed(num("bandwidth", s)?),
                None => return Err(Error::Config(format!("bad bandwidth `{other}`"))),
            },
        };
        Ok(Self {
            features: num("features", get("features")?)?,
            lookback: num("lookback", get("lookback")?)?,
            n_patches: num("n_patches", get("n_patches")?)?,
            hidden: num("hidden", get("hidden")?)?,
            ffn_hidden: num("ffn_hidden", get("ffn_hidden")?)?,
            kernel_width: num("kernel_width", get("kernel_width")?)?,
            bandwidth,
            gamma_init: num("gamma_init", get("gamma_init")?)?,
            use_wdn: num("use_wdn", get("use_wdn")?)?,
            use_ssgl: num("use_ssgl", get("use_ssgl")?)?,
        })
    }

    /// Short hex digest of [`ModelConfig::canonical`].
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub wdn: Option<WdnParams>,
    pub embed: EmbedParams,
    pub ssm: Option<SsmParams>,
    pub predictor: PredictorParams,
}

/// All parameters registered on one tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundModel {
    pub wdn: Option<BoundWdn>,
    pub embed: BoundEmbed,
    pub ssm: Option<BoundSsm>,
    pub predictor: BoundPredictor,
}

impl BoundModel {
    /// Leaves in [`Model::param_specs`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        if let Some(w) = &self.wdn {
            v.extend([w.conv_weight, w.conv_bias, w.log_gamma]);
        }
        v.extend([self.embed.weight, self.embed.bias]);
        if let Some(s) = &self.ssm {
            v.extend([s.weight, s.bias]);
        }
        let p = &self.predictor;
        v.extend([p.gnn_weight, p.gnn_bias, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2]);
        v
    }
}

/// Name and shape of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wdn = if config.use_wdn {
            let mut p = WdnParams::init(config.features, config.kernel_width, &mut rng)?;
            p.log_gamma = config.gamma_init.ln();
            Some(p)
        } else {
            None
        };
        let embed = EmbedParams::init(config.features * config.patch_len(), config.hidden, &mut rng);
        let ssm = config.use_ssgl.then(|| SsmParams::init(config.hidden, &mut rng));
        let predictor = PredictorParams::init(config.hidden, config.ffn_hidden, &mut rng);
        Ok(Self {
            config,
            wdn,
            embed,
            ssm,
            predictor,
        })
    }

    fn tensors(&self) -> Vec<(&'static str, Array2<f64>)> {
        let mut t = Vec::new();
        if let Some(w) = &self.wdn {
            t.push(("wdn.conv_weight", w.conv_weight.clone()));
            t.push(("wdn.conv_bias", w.conv_bias.clone()));
            t.push(("wdn.log_gamma", Array2::from_elem((1, 1), w.log_gamma)));
        }
        t.push(("embed.weight", self.embed.weight.clone()));
        t.push(("embed.bias", self.embed.bias.clone()));
        if let Some(s) = &self.ssm {
            t.push(("ssm.weight", s.weight.clone()));
            t.push(("ssm.bias", s.bias.clone()));
        }
        let p = &self.predictor;
        t.push(("gnn.weight", p.gnn_weight.clone()));
        t.push(("gnn.bias", p.gnn_bias.clone()));
        t.push(("ffn.w1", p.ffn_w1.clone()));
        t.push(("ffn.b1", p.ffn_b1.clone()));
        t.push(("ffn.w2", p.ffn_w2.clone()));
        t.push(("ffn.b2", p.ffn_b2.clone()));
        t
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        self.tensors()
            .into_iter()
            .map(|(name, a)| ParamSpec {
                name,
                rows: a.nrows(),
                cols: a.ncols(),
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::len).sum()
    }

    /// Named tensors in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, Array2<f64>)> {
        self.tensors()
    }

    /// All parameters concatenated in [`Model::param_specs`] order, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, a)| a.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut values = flat.iter().copied();
        let mut fill = |t: &mut Array2<f64>| t.iter_mut().for_each(|d| *d = values.next().expect("length checked"));
        if let Some(w) = &mut self.wdn {
            fill(&mut w.conv_weight);
            fill(&mut w.conv_bias);
            let mut g = Array2::from_elem((1, 1), 0.0);
            fill(&mut g);
            w.log_gamma = g[[0, 0]];
        }
        fill(&mut self.embed.weight);
        fill(&mut self.embed.bias);
        if let Some(s) = &mut self.ssm {
            fill(&mut s.weight);
            fill(&mut s.bias);
        }
        let p = &mut self.predictor;
        for t in [
            &mut p.gnn_weight,
            &mut p.gnn_bias,
            &mut p.ffn_w1,
            &mut p.ffn_b1,
            &mut p.ffn_w2,
            &mut p.ffn_b2,
        ] {
            fill(t);
        }
        Ok(())
    }

    /// Rebuilds a model from named tensors, checking names and shapes against
    /// a freshly initialized model of the same configuration.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Array2<f64>)>) -> Result<Self> {
        let mut model = Self::init(config, 0)?;
        let specs = model.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut flat = Vec::with_capacity(model.n_params());
        for (spec, (name, t)) in specs.iter().zip(&tensors) {
            if spec.name != name || (spec.rows, spec.cols) != t.dim() {
                return Err(Error::Shape(format!(
                    "tensor `{name}` {:?} does not match expected `{}` {:?}",
                    t.dim(),
                    spec.name,
                    (spec.rows, spec.cols)
                )));
            }
            flat.extend(t.iter().copied());
        }
        model.unflatten(&flat)?;
        Ok(model)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            wdn: self.wdn.as_ref().map(|w| w.bind(tape)),
            embed: self.embed.bind(tape),
            ssm: self.ssm.as_ref().map(|s| s.bind(tape)),
            predictor: self.predictor.bind(tape),
        }
    }

    /// Builds the forward pass for one `N × L × F` window; returns the
    /// `N × 1` score column.
    pub fn forward_on(&self, tape: &mut Tape, bound: &BoundModel, x: &Array3<f64>) -> Result<Var> {
        let (n, l, f) = x.dim();
        let cfg = &self.config;
        if l != cfg.lookback || f != cfg.features {
            return Err(Error::Shape(format!(
                "window {:?} does not match lookback {} / features {}",
                x.dim(),
                cfg.lookback,
                cfg.features
            )));
        }
        if n < 2 {
            return Err(Error::Shape("a cross-section needs at least 2 stocks".into()));
        }
        let stacked = x.to_shape((n * l, f)).expect("contiguous reshape").to_owned();
        let xv = tape.leaf(stacked);
        let q = match &bound.wdn {
            Some(w) => wdn::denoise_on(tape, xv, w, n, l)?,
            None => xv,
        };
        let patches = graphconstruct::patch_on(tape, q, n, l, cfg.n_patches)?;
        let tokens = graphconstruct::embed_on(tape, patches, &bound.embed)?;
        let slices: Vec<Var> = (0..cfg.n_patches)
            .map(|p| graphconstruct::slice_on(tape, tokens, p, n))
            .collect();
        let graphs: Vec<Var> = slices
            .iter()
            .map(|&s| tape.gaussian_kernel(s, cfg.bandwidth))
            .collect();
        let a_hat = match &bound.ssm {
            Some(s) => ssgl::run_ssgl_on(tape, &graphs, &slices, s)?,
            None => *graphs.last().expect("at least one patch"),
        };
        let last = *slices.last().expect("at least one patch");
        let z = predictor::gnn_aggregate_on(tape, a_hat, last, &bound.predictor)?;
        Ok(predictor::score_on(tape, z, &bound.predictor))
    }

    /// Scores for one window.
    pub fn predict(&self, x: &Array3<f64>) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let y = self.forward_on(&mut tape, &bound, x)?;
        Ok(tape.value(y).column(0).to_owned())
    }
}
