//! Learnable wavelet-style denoiser.
//!
//! A shared 1-D convolution along the time axis maps the `F` input channels
//! to `2F` output channels. The first `F` are the high-frequency branch `H`,
//! the last `F` the low-frequency branch. `H` is soft-thresholded by a
//! learned `γ = exp(θ) > 0` and the two branches are summed back to `F`
//! channels.
//!
//! Padding replicates the edge steps so the output keeps one row per input
//! time step. With kernel width `w` the taps cover offsets
//! `−(w−1)/2 ..= w − 1 − (w−1)/2` around each step.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_KERNEL_WIDTH: usize = 4;
pub const DEFAULT_GAMMA: f64 = 0.1;

/// Convolution filter bank plus the log of the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct WdnParams {
    /// `(w·F) × 2F`; row `k·F + f` is tap `k` on input feature `f`.
    pub conv_weight: Array2<f64>,
    /// `1 × 2F`.
    pub conv_bias: Array2<f64>,
    /// `γ = exp(log_gamma)`.
    pub log_gamma: f64,
    pub kernel_width: usize,
}

impl WdnParams {
    pub fn features(&self) -> usize {
        self.conv_bias.ncols() / 2
    }

    pub fn gamma(&self) -> f64 {
        self.log_gamma.exp()
    }

    pub fn zeros(features: usize, kernel_width: usize) -> Self {
        Self {
            conv_weight: Array2::zeros((kernel_width * features, 2 * features)),
            conv_bias: Array2::zeros((1, 2 * features)),
            log_gamma: DEFAULT_GAMMA.ln(),
            kernel_width,
        }
    }

    /// Exact Haar pair: high = (x_t − x_{t+1})/2, low = (x_t + x_{t+1})/2,
    /// so that `low + high` reconstructs `x_t` when nothing is thresholded.
    pub fn haar(features: usize, kernel_width: usize) -> Result<Self> {
        if kernel_width < 2 {
            return Err(Error::Config(format!(
                "kernel width {kernel_width} too small for a Haar pair"
            )));
        }
        let mut p = Self::zeros(features, kernel_width);
        let here = (kernel_width - 1) / 2;
        for f in 0..features {
            p.conv_weight[[here * features + f, f]] = 0.5;
            p.conv_weight[[(here + 1) * features + f, f]] = -0.5;
            p.conv_weight[[here * features + f, features + f]] = 0.5;
            p.conv_weight[[(here + 1) * features + f, features + f]] = 0.5;
        }
        Ok(p)
    }

    /// Haar initialization with a small Gaussian perturbation on every tap.
    pub fn init<R: Rng + ?Sized>(features: usize, kernel_width: usize, rng: &mut R) -> Result<Self> {
        let mut p = Self::haar(features, kernel_width)?;
        let noise = Normal::new(0.0, 0.01).expect("valid normal");
        p.conv_weight.mapv_inplace(|w| w + noise.sample(rng));
        Ok(p)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundWdn {
        BoundWdn {
            conv_weight: tape.leaf(self.conv_weight.clone()),
            conv_bias: tape.leaf(self.conv_bias.clone()),
            log_gamma: tape.leaf_scalar(self.log_gamma),
            kernel_width: self.kernel_width,
        }
    }
}

/// [`WdnParams`] registered on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundWdn {
    pub conv_weight: Var,
    pub conv_bias: Var,
    pub log_gamma: Var,
    pub kernel_width: usize,
}

/// Index map from an `(N·L) × F` matrix to its `(N·L) × (w·F)` im2col
/// expansion with replicate padding. Each stock's `L` rows are convolved
/// independently.
pub fn conv_gather_index(n: usize, l: usize, f: usize, width: usize) -> Vec<usize> {
    let left = (width - 1) / 2;
    let mut index = Vec::with_capacity(n * l * width * f);
    for stock in 0..n {
        for t in 0..l {
            for k in 0..width {
                let src = (t + k).saturating_sub(left).min(l - 1);
                for feat in 0..f {
                    index.push((stock * l + src) * f + feat);
                }
            }
        }
    }
    index
}

/// Convolution on the tape: `x` is `(N·L) × F` with stocks stacked in
/// blocks of `L` rows. Returns `(H, L_low)`, each `(N·L) × F`.
pub fn decompose_on(tape: &mut Tape, x: Var, wdn: &BoundWdn, n: usize, l: usize) -> Result<(Var, Var)> {
    let f = tape.value(x).ncols();
    if l < wdn.kernel_width {
        return Err(Error::Config(format!(
            "series length {l} shorter than kernel width {}",
            wdn.kernel_width
        )));
    }
    if tape.value(wdn.conv_weight).nrows() != wdn.kernel_width * f {
        return Err(Error::Shape(format!(
            "conv weight has {} rows, expected {}",
            tape.value(wdn.conv_weight).nrows(),
            wdn.kernel_width * f
        )));
    }
    let cols = tape.gather(x, conv_gather_index(n, l, f, wdn.kernel_width), n * l, wdn.kernel_width * f);
    let conv = tape.matmul(cols, wdn.conv_weight);
    let conv = tape.add_row(conv, wdn.conv_bias);
    let high = tape.columns(conv, 0, f);
    let low = tape.columns(conv, f, f);
    Ok((high, low))
}

/// `Q = L_low + soft_threshold(H, γ)` on the tape.
pub fn denoise_on(tape: &mut Tape, x: Var, wdn: &BoundWdn, n: usize, l: usize) -> Result<Var> {
    let (high, low) = decompose_on(tape, x, wdn, n, l)?;
    let shrunk = tape.soft_threshold(high, wdn.log_gamma);
    Ok(tape.add(low, shrunk))
}

/// Splits one `L × F` series into its high and low branches.
pub fn decompose(x: &Array2<f64>, params: &WdnParams) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (h, low) = decompose_on(&mut tape, xv, &bound, 1, x.nrows())?;
    Ok((tape.value(h).clone(), tape.value(low).clone()))
}

/// Elementwise `sign(h)·max(|h| − γ, 0)`.
pub fn soft_threshold(h: &Array2<f64>, gamma: f64) -> Array2<f64> {
    h.mapv(|v| v.signum() * (v.abs() - gamma).max(0.0))
}

/// Denoised series `Q` for one `L × F` input.
pub fn wdn_forward(x: &Array2<f64>, params: &WdnParams) -> Result<Array2<f64>> {
    let (h, low) = decompose(x, params)?;
    Ok(low + soft_threshold(&h, params.gamma()))
}

/// Identity used when the denoiser is ablated.
pub fn wdn_bypass(x: &Array2<f64>) -> Array2<f64> {
    x.clone()
}
