//! Temporal patching, patch embedding and per-slice Gaussian-kernel graphs.
//!
//! On the tape, patches and tokens are stored as `(n·N) × ·` matrices in
//! patch-major order (row `p·N + i` is stock `i` in slice `p`) so every
//! slice is a contiguous row block.

use ndarray::{s, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use crate::autodiff::Bandwidth;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_PATCHES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTokens {
    /// `N × n × D`.
    pub tokens: Array3<f64>,
    pub n_patches: usize,
    pub patch_len: usize,
    pub hidden: usize,
}

impl PatchTokens {
    pub fn slice(&self, p: usize) -> Array2<f64> {
        self.tokens.slice(s![.., p, ..]).to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceGraph {
    /// `N × N`, symmetric, unit diagonal, entries in (0, 1].
    pub adjacency: Array2<f64>,
    pub slice_index: usize,
}

/// Linear patch embedding `tokens = patches · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    /// `(F·P) × D`.
    pub weight: Array2<f64>,
    /// `1 × D`.
    pub bias: Array2<f64>,
}

impl EmbedParams {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let d = Normal::new(0.0, (1.0 / input as f64).sqrt()).expect("valid normal");
        Self {
            weight: Array2::from_shape_fn((input, hidden), |_| d.sample(rng)),
            bias: Array2::zeros((1, hidden)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEmbed {
        BoundEmbed {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundEmbed {
    pub weight: Var,
    pub bias: Var,
}

/// Patch length for `n_patches` patches over `l` steps.
pub fn patch_len(l: usize, n_patches: usize) -> Result<usize> {
    if n_patches == 0 || n_patches > l {
        return Err(Error::Config(format!(
            "patch count {n_patches} must be in 1..={l}"
        )));
    }
    Ok(l / n_patches)
}

/// Index map from an `(N·L) × F` series matrix to `(n·N) × (F·P)` patches.
/// The oldest `L − n·P` steps are dropped; each patch is flattened time-major.
pub fn patch_gather_index(n_stocks: usize, l: usize, f: usize, n_patches: usize) -> Result<Vec<usize>> {
    let p_len = patch_len(l, n_patches)?;
    let start = l - n_patches * p_len;
    let mut index = Vec::with_capacity(n_patches * n_stocks * p_len * f);
    for p in 0..n_patches {
        for stock in 0..n_stocks {
            for tau in 0..p_len {
                let t = start + p * p_len + tau;
                for feat in 0..f {
                    index.push((stock * l + t) * f + feat);
                }
            }
        }
    }
    Ok(index)
}

pub fn patch_on(tape: &mut Tape, q: Var, n_stocks: usize, l: usize, n_patches: usize) -> Result<Var> {
    let f = tape.value(q).ncols();
    let p_len = patch_len(l, n_patches)?;
    let index = patch_gather_index(n_stocks, l, f, n_patches)?;
    Ok(tape.gather(q, index, n_patches * n_stocks, f * p_len))
}

pub fn embed_on(tape: &mut Tape, patches: Var, embed: &BoundEmbed) -> Result<Var> {
    let (input, got) = (tape.value(embed.weight).nrows(), tape.value(patches).ncols());
    if input != got {
        return Err(Error::Shape(format!(
            "patch width {got} does not match embedding input {input}"
        )));
    }
    let lin = tape.matmul(patches, embed.weight);
    Ok(tape.add_row(lin, embed.bias))
}

/// Slice `p`'s `N × D` token block.
pub fn slice_on(tape: &mut Tape, tokens: Var, p: usize, n_stocks: usize) -> Var {
    tape.rows(tokens, p * n_stocks, n_stocks)
}

pub fn check_bandwidth(bandwidth: Bandwidth) -> Result<()> {
    match bandwidth {
        Bandwidth::Fixed(sigma) if !(sigma > 0.0 && sigma.is_finite()) => {
            Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}")))
        }
        _ => Ok(()),
    }
}

fn stack_series(q: &Array3<f64>) -> Array2<f64> {
    let (n, l, f) = q.dim();
    q.to_shape((n * l, f)).expect("contiguous reshape").to_owned()
}

/// `N × L × F` → `N × n × (F·P)`.
pub fn patch(q: &Array3<f64>, n_patches: usize) -> Result<Array3<f64>> {
    let (n, l, _) = q.dim();
    let mut tape = Tape::new();
    let qv = tape.leaf(stack_series(q));
    let pv = patch_on(&mut tape, qv, n, l, n_patches)?;
    let width = tape.value(pv).ncols();
    Ok(unstack_patch_major(tape.value(pv), n, n_patches, width))
}

fn unstack_patch_major(m: &Array2<f64>, n: usize, n_patches: usize, width: usize) -> Array3<f64> {
    Array3::from_shape_fn((n, n_patches, width), |(i, p, k)| m[[p * n + i, k]])
}

/// Applies the embedding to `N × n × (F·P)` patches of length `patch_len`.
pub fn embed(patches: &Array3<f64>, patch_len: usize, params: &EmbedParams) -> Result<PatchTokens> {
    let (n, n_patches, width) = patches.dim();
    let stacked = Array2::from_shape_fn((n_patches * n, width), |(r, k)| patches[[r % n, r / n, k]]);
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let pv = tape.leaf(stacked);
    let tv = embed_on(&mut tape, pv, &b)?;
    let hidden = params.weight.ncols();
    Ok(PatchTokens {
        tokens: unstack_patch_major(tape.value(tv), n, n_patches, hidden),
        n_patches,
        patch_len,
        hidden,
    })
}

/// Gaussian-kernel similarity graph over the rows of an `N × D` token matrix.
pub fn gaussian_graph(tokens_slice: &Array2<f64>, bandwidth: Bandwidth) -> Result<SliceGraph> {
    check_bandwidth(bandwidth)?;
    if tokens_slice.nrows() < 2 {
        return Err(Error::Config("a graph needs at least 2 stocks".into()));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(tokens_slice.clone());
    let a = tape.gaussian_kernel(x, bandwidth);
    Ok(SliceGraph {
        adjacency: tape.value(a).clone(),
        slice_index: 0,
    })
}

/// One graph per temporal slice, in slice order.
pub fn build_slice_graphs(tokens: &PatchTokens, bandwidth: Bandwidth) -> Result<Vec<SliceGraph>> {
    (0..tokens.n_patches)
        .map(|p| {
            let mut g = gaussian_graph(&tokens.slice(p), bandwidth)?;
            g.slice_index = p;
            Ok(g)
        })
        .collect()
}
