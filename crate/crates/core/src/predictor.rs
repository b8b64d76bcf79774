//! One-layer graph aggregation over the predicted adjacency followed by a
//! per-stock feed-forward scoring head.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    /// `D × D`.
    pub gnn_weight: Array2<f64>,
    /// `1 × D`.
    pub gnn_bias: Array2<f64>,
    /// `D × D_h`.
    pub ffn_w1: Array2<f64>,
    /// `1 × D_h`.
    pub ffn_b1: Array2<f64>,
    /// `D_h × 1`.
    pub ffn_w2: Array2<f64>,
    /// `1 × 1`.
    pub ffn_b2: Array2<f64>,
}

impl PredictorParams {
    pub fn init<R: Rng + ?Sized>(hidden: usize, ffn_hidden: usize, rng: &mut R) -> Self {
        let mut he = |rows: usize, cols: usize| {
            let d = Normal::new(0.0, (2.0 / rows as f64).sqrt()).expect("valid normal");
            Array2::from_shape_fn((rows, cols), |_| d.sample(rng))
        };
        let gnn_weight = he(hidden, hidden);
        let ffn_w1 = he(hidden, ffn_hidden);
        let ffn_w2 = he(ffn_hidden, 1) * 0.1;
        Self {
            gnn_weight,
            gnn_bias: Array2::from_elem((1, hidden), 0.01),
            ffn_w1,
            ffn_b1: Array2::from_elem((1, ffn_hidden), 0.01),
            ffn_w2,
            ffn_b2: Array2::zeros((1, 1)),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundPredictor {
        BoundPredictor {
            gnn_weight: tape.leaf(self.gnn_weight.clone()),
            gnn_bias: tape.leaf(self.gnn_bias.clone()),
            ffn_w1: tape.leaf(self.ffn_w1.clone()),
            ffn_b1: tape.leaf(self.ffn_b1.clone()),
            ffn_w2: tape.leaf(self.ffn_w2.clone()),
            ffn_b2: tape.leaf(self.ffn_b2.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundPredictor {
    pub gnn_weight: Var,
    pub gnn_bias: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row-sum degrees.
pub fn normalize_adjacency_on(tape: &mut Tape, a_hat: Var) -> Var {
    let deg = tape.row_sum(a_hat);
    let inv_sqrt = tape.powf(deg, -0.5);
    let inv_sqrt_t = tape.transpose(inv_sqrt);
    let outer = tape.matmul(inv_sqrt, inv_sqrt_t);
    tape.mul(a_hat, outer)
}

/// `relu(norm(Â) · X · W + b)`.
pub fn gnn_aggregate_on(tape: &mut Tape, a_hat: Var, node_feats: Var, p: &BoundPredictor) -> Result<Var> {
    let n = tape.value(a_hat).nrows();
    let (rows, d) = tape.value(node_feats).dim();
    if tape.value(a_hat).ncols() != n || rows != n || tape.value(p.gnn_weight).nrows() != d {
        return Err(Error::Shape(format!(
            "adjacency {:?}, features {:?}, gnn weight {:?}",
            tape.value(a_hat).dim(),
            (rows, d),
            tape.value(p.gnn_weight).dim()
        )));
    }
    let norm = normalize_adjacency_on(tape, a_hat);
    let msg = tape.matmul(norm, node_feats);
    let lin = tape.matmul(msg, p.gnn_weight);
    let lin = tape.add_row(lin, p.gnn_bias);
    Ok(tape.relu(lin))
}

/// Per-stock `relu(z·W1 + b1)·W2 + b2`, as an `N × 1` column.
pub fn score_on(tape: &mut Tape, z: Var, p: &BoundPredictor) -> Var {
    let h = tape.matmul(z, p.ffn_w1);
    let h = tape.add_row(h, p.ffn_b1);
    let h = tape.relu(h);
    let y = tape.matmul(h, p.ffn_w2);
    tape.add_row(y, p.ffn_b2)
}

pub fn normalize_adjacency(a_hat: &Array2<f64>) -> Array2<f64> {
    let mut tape = Tape::new();
    let a = tape.leaf(a_hat.clone());
    let out = normalize_adjacency_on(&mut tape, a);
    tape.value(out).clone()
}

pub fn gnn_aggregate(a_hat: &Array2<f64>, node_feats: &Array2<f64>, params: &PredictorParams) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let a = tape.leaf(a_hat.clone());
    let x = tape.leaf(node_feats.clone());
    let z = gnn_aggregate_on(&mut tape, a, x, &p)?;
    Ok(tape.value(z).clone())
}

pub fn score(z: &Array2<f64>, params: &PredictorParams) -> Array1<f64> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let zv = tape.leaf(z.clone());
    let y = score_on(&mut tape, zv, &p);
    tape.value(y).column(0).to_owned()
}
