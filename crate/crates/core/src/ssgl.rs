//! State-space recurrence over a sequence of slice graphs.
//!
//! For slice `i` with observed adjacency `A_i`:
//!
//! ```text
//! h_i      = ā_i ⊙ h_{i−1} + b̄_i ⊙ A_i          (h_0 = 0)
//! Â_{i+1}  = squash(c_i ⊙ h_i)
//! ```
//!
//! where `ā_i = sigmoid(·)`, `b̄_i` and `c_i` are scalars produced by an affine
//! projection of the slice's mean token, broadcast over the `N × N` state.
//! `squash` symmetrizes, applies a sigmoid and pins the diagonal to 1, so
//! the emitted matrix satisfies the same invariants as an observed graph.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graphconstruct::{PatchTokens, SliceGraph};

/// Latent `N × N` graph state.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmGraphState {
    pub h: Array2<f64>,
}

impl SsmGraphState {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: Array2::zeros((n, n)),
        }
    }
}

/// Coefficients for one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmCoeffs {
    pub a_bar: f64,
    pub b_bar: f64,
    pub c: f64,
}

/// Projection from the slice summary (length `D`) to the pre-activation
/// coefficients. Column 0 feeds `ā` (through a sigmoid), column 1 `b̄`,
/// column 2 `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    /// `D × 3`.
    pub weight: Array2<f64>,
    /// `1 × 3`.
    pub bias: Array2<f64>,
}

impl SsmParams {
    pub fn init<R: Rng + ?Sized>(hidden: usize, rng: &mut R) -> Self {
        let d = Normal::new(0.0, 0.1 / (hidden as f64).sqrt()).expect("valid normal");
        Self {
            weight: Array2::from_shape_fn((hidden, 3), |_| d.sample(rng)),
            bias: Array2::from_shape_vec((1, 3), vec![0.0, 1.0, 1.0]).expect("1x3"),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundSsm {
        BoundSsm {
            weight: tape.leaf(self.weight.clone()),
            bias: tape.leaf(self.bias.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundSsm {
    pub weight: Var,
    pub bias: Var,
}

/// Coefficient nodes for one slice; each is `1×1`.
#[derive(Debug, Clone, Copy)]
pub struct BoundCoeffs {
    pub a_bar: Var,
    pub b_bar: Var,
    pub c: Var,
}

pub fn derive_coeffs_on(tape: &mut Tape, tokens_slice: Var, ssm: &BoundSsm) -> BoundCoeffs {
    let summary = tape.mean_rows(tokens_slice);
    let pre = tape.matmul(summary, ssm.weight);
    let pre = tape.add_row(pre, ssm.bias);
    let a_pre = tape.columns(pre, 0, 1);
    BoundCoeffs {
        a_bar: tape.sigmoid(a_pre),
        b_bar: tape.columns(pre, 1, 1),
        c: tape.columns(pre, 2, 1),
    }
}

/// Transition without emission. `h_prev = None` stands for the zero state.
pub fn transition_on(tape: &mut Tape, h_prev: Option<Var>, adjacency: Var, coeffs: &BoundCoeffs) -> Var {
    let driven = tape.scale(coeffs.b_bar, adjacency);
    match h_prev {
        Some(h) => {
            let kept = tape.scale(coeffs.a_bar, h);
            tape.add(kept, driven)
        }
        None => driven,
    }
}

/// `c ⊙ h` before symmetrize and squash.
pub fn emission_raw_on(tape: &mut Tape, h: Var, c: Var) -> Var {
    tape.scale(c, h)
}

/// Symmetrize, sigmoid, unit diagonal.
pub fn squash_on(tape: &mut Tape, raw: Var) -> Var {
    let t = tape.transpose(raw);
    let sum = tape.add(raw, t);
    let sym = tape.scale_const(sum, 0.5);
    let sig = tape.sigmoid(sym);
    tape.set_diag_one(sig)
}

/// Runs the recurrence over all slices and returns the final emission.
pub fn run_ssgl_on(tape: &mut Tape, graphs: &[Var], slices: &[Var], ssm: &BoundSsm) -> Result<Var> {
    if graphs.is_empty() {
        return Err(Error::Config("state-space recurrence needs at least one slice graph".into()));
    }
    if graphs.len() != slices.len() {
        return Err(Error::Shape(format!(
            "{} graphs but {} token slices",
            graphs.len(),
            slices.len()
        )));
    }
    let mut h = None;
    let mut last_c = None;
    for (&a, &tokens) in graphs.iter().zip(slices) {
        let coeffs = derive_coeffs_on(tape, tokens, ssm);
        h = Some(transition_on(tape, h, a, &coeffs));
        last_c = Some(coeffs.c);
    }
    let (h, c) = (h.expect("non-empty"), last_c.expect("non-empty"));
    let raw = emission_raw_on(tape, h, c);
    Ok(squash_on(tape, raw))
}

/// Coefficients for one `N × D` token slice.
pub fn derive_coeffs(tokens_slice: &Array2<f64>, params: &SsmParams) -> SsmCoeffs {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let x = tape.leaf(tokens_slice.clone());
    let c = derive_coeffs_on(&mut tape, x, &b);
    SsmCoeffs {
        a_bar: tape.scalar(c.a_bar),
        b_bar: tape.scalar(c.b_bar),
        c: tape.scalar(c.c),
    }
}

/// One transition plus emission. Returns the new state and the squashed
/// predicted adjacency.
pub fn ssm_step(h_prev: &SsmGraphState, adjacency: &SliceGraph, coeffs: SsmCoeffs) -> (SsmGraphState, Array2<f64>) {
    let mut tape = Tape::new();
    let h = tape.leaf(h_prev.h.clone());
    let a = tape.leaf(adjacency.adjacency.clone());
    let bc = BoundCoeffs {
        a_bar: tape.leaf_scalar(coeffs.a_bar),
        b_bar: tape.leaf_scalar(coeffs.b_bar),
        c: tape.leaf_scalar(coeffs.c),
    };
    let h_next = transition_on(&mut tape, Some(h), a, &bc);
    let raw = emission_raw_on(&mut tape, h_next, bc.c);
    let out = squash_on(&mut tape, raw);
    (
        SsmGraphState {
            h: tape.value(h_next).clone(),
        },
        tape.value(out).clone(),
    )
}

/// Predicted adjacency after the last slice.
pub fn run_ssgl(graphs: &[SliceGraph], tokens: &PatchTokens, params: &SsmParams) -> Result<Array2<f64>> {
    if graphs.len() != tokens.n_patches {
        return Err(Error::Shape(format!(
            "{} graphs for {} token slices",
            graphs.len(),
            tokens.n_patches
        )));
    }
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let gv: Vec<Var> = graphs.iter().map(|g| tape.leaf(g.adjacency.clone())).collect();
    let sv: Vec<Var> = (0..tokens.n_patches).map(|p| tape.leaf(tokens.slice(p))).collect();
    let out = run_ssgl_on(&mut tape, &gv, &sv, &b)?;
    Ok(tape.value(out).clone())
}

/// Ablation: the last observed slice graph, unchanged.
pub fn ssgl_bypass(graphs: &[SliceGraph]) -> Result<Array2<f64>> {
    graphs
        .last()
        .map(|g| g.adjacency.clone())
        .ok_or_else(|| Error::Config("state-space bypass needs at least one slice graph".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 1.0).unwrap();
        Array2::from_shape_fn((rows, cols), |_| d.sample(&mut rng))
    }

    fn graph(a: Array2<f64>) -> SliceGraph {
        SliceGraph {
            adjacency: a,
            slice_index: 0,
        }
    }

    #[test]
    fn coefficient_values() {
        let zero = SsmParams {
            weight: Array2::zeros((3, 3)),
            bias: Array2::zeros((1, 3)),
        };
        let c = derive_coeffs(&Array2::zeros((4, 3)), &zero);
        assert_eq!(c.a_bar, 0.5);

        let mut hi = zero.clone();
        hi.bias[[0, 0]] = 20.0;
        assert!(derive_coeffs(&Array2::zeros((4, 3)), &hi).a_bar > 1.0 - 1e-8);
        hi.bias[[0, 0]] = -20.0;
        assert!(derive_coeffs(&Array2::zeros((4, 3)), &hi).a_bar < 1e-8);

        let tokens = array![[1.0, 2.0], [3.0, -2.0]];
        let params = SsmParams {
            weight: array![[0.5, -1.0, 0.25], [0.1, 0.2, -0.3]],
            bias: array![[0.3, 0.4, -0.5]],
        };
        // Summary (2, 0).
        let c = derive_coeffs(&tokens, &params);
        assert!((c.a_bar - sigmoid(2.0 * 0.5 + 0.3)).abs() < 1e-12);
        assert!((c.b_bar - (-2.0 + 0.4)).abs() < 1e-12);
        assert!((c.c - (2.0 * 0.25 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn step_limits() {
        let a = graph(array![[1.0, 0.3], [0.3, 1.0]]);
        let h = SsmGraphState {
            h: array![[0.2, -0.7], [-0.7, 0.9]],
        };
        let (obs, _) = ssm_step(&h, &a, SsmCoeffs { a_bar: 0.0, b_bar: 1.0, c: 1.0 });
        assert_eq!(obs.h, a.adjacency);
        let (mem, _) = ssm_step(&h, &a, SsmCoeffs { a_bar: 1.0, b_bar: 0.0, c: 1.0 });
        assert_eq!(mem.h, h.h);
    }

    #[test]
    fn scalar_fixture() {
        let mut tape = Tape::new();
        let h = tape.leaf(array![[0.4]]);
        let a = tape.leaf(array![[0.8]]);
        let coeffs = BoundCoeffs {
            a_bar: tape.leaf_scalar(0.5),
            b_bar: tape.leaf_scalar(0.5),
            c: tape.leaf_scalar(2.0),
        };
        let h1 = transition_on(&mut tape, Some(h), a, &coeffs);
        assert!((tape.scalar(h1) - 0.6).abs() < 1e-15);
        let raw = emission_raw_on(&mut tape, h1, coeffs.c);
        assert!((tape.scalar(raw) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn two_slice_fixture_matches_hand_unroll() {
        let a1 = array![[1.0, 0.4], [0.4, 1.0]];
        let a2 = array![[1.0, 0.9], [0.9, 1.0]];
        let tokens = PatchTokens {
            tokens: Array3::from_shape_vec((2, 2, 2), vec![0.1, 0.2, 0.5, -0.1, 0.3, 0.0, -0.2, 0.4]).unwrap(),
            n_patches: 2,
            patch_len: 1,
            hidden: 2,
        };
        let params = SsmParams {
            weight: array![[0.6, -0.3, 1.2], [-0.4, 0.8, 0.5]],
            bias: array![[0.1, 0.7, 1.5]],
        };
        let coeffs = |p: usize| {
            let s0 = (tokens.tokens[[0, p, 0]] + tokens.tokens[[1, p, 0]]) / 2.0;
            let s1 = (tokens.tokens[[0, p, 1]] + tokens.tokens[[1, p, 1]]) / 2.0;
            let pre = |k: usize| s0 * params.weight[[0, k]] + s1 * params.weight[[1, k]] + params.bias[[0, k]];
            (sigmoid(pre(0)), pre(1), pre(2))
        };
        let (_, b1, _) = coeffs(0);
        let (a2c, b2, c2) = coeffs(1);
        let off = {
            let h1 = b1 * a1[[0, 1]];
            let h2 = a2c * h1 + b2 * a2[[0, 1]];
            sigmoid(c2 * h2)
        };
        let out = run_ssgl(&[graph(a1), graph(a2)], &tokens, &params).unwrap();
        assert!((out[[0, 1]] - off).abs() < 1e-10);
        assert!((out[[1, 0]] - off).abs() < 1e-10);
        assert_eq!(out[[0, 0]], 1.0);
    }

    #[test]
    fn single_slice_unroll() {
        let a = array![[1.0, 0.2, 0.5], [0.2, 1.0, 0.7], [0.5, 0.7, 1.0]];
        let tokens = PatchTokens {
            tokens: Array3::zeros((3, 1, 2)),
            n_patches: 1,
            patch_len: 1,
            hidden: 2,
        };
        let params = SsmParams {
            weight: Array2::zeros((2, 3)),
            bias: array![[-30.0, 1.0, 0.05]],
        };
        let out = run_ssgl(&[graph(a.clone())], &tokens, &params).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { sigmoid(0.05 * a[[i, j]]) };
                assert!((out[[i, j]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_tokens_depend_only_on_biases() {
        let tokens = PatchTokens {
            tokens: Array3::zeros((3, 2, 2)),
            n_patches: 2,
            patch_len: 1,
            hidden: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = SsmParams::init(2, &mut rng);
        let g = |s: f64| graph(Array2::from_elem((3, 3), s));
        let a = run_ssgl(&[g(0.0), g(0.0)], &tokens, &params).unwrap();
        let b = run_ssgl(&[g(0.0), g(0.0)], &tokens, &params).unwrap();
        assert_eq!(a, b);
        // Zero graphs: the state stays 0 and every off-diagonal entry is sigmoid(0).
        assert!(a.iter().enumerate().all(|(k, &v)| if k % 4 == 0 { v == 1.0 } else { v == 0.5 }));
    }

    #[test]
    fn bypass_returns_last_graph() {
        let gs = vec![graph(Array2::eye(2)), graph(array![[1.0, 0.3], [0.3, 1.0]])];
        assert_eq!(ssgl_bypass(&gs).unwrap(), gs[1].adjacency);
        assert_eq!(ssgl_bypass(&gs[..1]).unwrap(), gs[0].adjacency);
        assert!(matches!(ssgl_bypass(&[]), Err(Error::Config(_))));
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = SsmParams::init(2, &mut rng).bind(&mut tape);
        assert!(run_ssgl_on(&mut tape, &[], &[], &b).is_err());
    }

    #[test]
    fn transition_is_linear_in_state_and_input() {
        let (h1, h2) = (random(4, 4, 1), random(4, 4, 2));
        let (a1, a2) = (random(4, 4, 3), random(4, 4, 4));
        let coeffs = SsmCoeffs { a_bar: 0.37, b_bar: -1.3, c: 0.8 };
        let (al, be) = (0.6, -2.1);
        let step = |h: &Array2<f64>, a: &Array2<f64>| {
            ssm_step(&SsmGraphState { h: h.clone() }, &graph(a.clone()), coeffs).0.h
        };
        let lhs = step(&(&h1 * al + &h2 * be), &(&a1 * al + &a2 * be));
        let rhs = step(&h1, &a1) * al + step(&h2, &a2) * be;
        for (u, v) in lhs.iter().zip(rhs.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn state_stays_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 5;
        let bound = 2.0;
        let mut h = SsmGraphState::zeros(n);
        for _ in 0..1000 {
            let a = graph(Array2::from_shape_fn((n, n), |_| rng.random::<f64>()));
            let coeffs = SsmCoeffs {
                a_bar: rng.random_range(0.0..0.999),
                b_bar: rng.random_range(-bound..bound),
                c: rng.random_range(-bound..bound),
            };
            let prev_norm = h.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let (next, out) = ssm_step(&h, &a, coeffs);
            let norm = next.h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(norm <= prev_norm * coeffs.a_bar + bound + 1e-12);
            assert!(norm <= bound / (1.0 - 0.999) + 1e-9);
            assert!(out.iter().all(|v| *v > 0.0 && *v <= 1.0));
            h = next;
        }
    }

    #[test]
    fn projection_gradients_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = SsmParams::init(3, &mut rng);
        params.weight = random(3, 3, 6);
        let tokens: Vec<Array2<f64>> = (0..3).map(|p| random(4, 3, 10 + p)).collect();
        let graphs: Vec<Array2<f64>> = tokens
            .iter()
            .map(|t| crate::graphconstruct::gaussian_graph(t, crate::autodiff::Bandwidth::Median).unwrap().adjacency)
            .collect();
        let probe = random(4, 4, 20);
        let f = |p: &SsmParams| {
            let mut t = Tape::new();
            let b = p.bind(&mut t);
            let gv: Vec<Var> = graphs.iter().map(|g| t.leaf(g.clone())).collect();
            let sv: Vec<Var> = tokens.iter().map(|x| t.leaf(x.clone())).collect();
            let out = run_ssgl_on(&mut t, &gv, &sv, &b).unwrap();
            let w = t.leaf(probe.clone());
            let m = t.mul(out, w);
            let r = t.row_sum(m);
            let rt = t.transpose(r);
            let s = t.row_sum(rt);
            let g = t.backward(s);
            (t.scalar(s), g.wrt(b.weight), g.wrt(b.bias))
        };
        let (_, gw, gb) = f(&params);
        let eps = 1e-5;
        for i in 0..3 {
            for j in 0..3 {
                let mut pp = params.clone();
                pp.weight[[i, j]] += eps;
                let mut pm = params.clone();
                pm.weight[[i, j]] -= eps;
                let num = (f(&pp).0 - f(&pm).0) / (2.0 * eps);
                assert!((num - gw[[i, j]]).abs() / num.abs().max(1e-6) < 1e-4);
            }
            let mut pp = params.clone();
            pp.bias[[0, i]] += eps;
            let mut pm = params.clone();
            pm.bias[[0, i]] -= eps;
            let num = (f(&pp).0 - f(&pm).0) / (2.0 * eps);
            assert!((num - gb[[0, i]]).abs() / num.abs().max(1e-6) < 1e-4);
        }
    }
}
