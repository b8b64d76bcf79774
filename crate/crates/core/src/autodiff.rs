//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every value on the [`Tape`] is a 2-D array; scalars are `1×1`. Operations
//! append a node that records its parents, and [`Tape::backward`] walks the
//! nodes in reverse insertion order, which is a valid topological order
//! because a node can only reference nodes created before it.
//!
//! The op set is deliberately small: exactly what the denoiser, graph
//! builder, state-space recurrence, predictor and loss need.

use ndarray::{Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Kernel bandwidth selection for [`Tape::gaussian_kernel`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// σ² = median of the pairwise squared distances.
    Median,
    /// Fixed σ.
    Fixed(f64),
}

/// Below this the median bandwidth is treated as degenerate and replaced by 1.
const MIN_MEDIAN_BANDWIDTH: f64 = 1e-12;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    Transpose(Var),
    Sigmoid(Var),
    Relu(Var),
    Powf(Var, f64),
    RowSum(Var),
    MeanRows(Var),
    SetDiagOne(Var),
    Gather {
        src: Var,
        index: Vec<usize>,
    },
    SoftThreshold {
        input: Var,
        log_gamma: Var,
    },
    GaussianKernel {
        input: Var,
        s2: f64,
        /// Pairs whose squared distance determines s², with their weight.
        /// Empty when the bandwidth is fixed.
        median_pairs: Vec<((usize, usize), f64)>,
    },
    /// Scalar function of one input with a precomputed local gradient.
    ScalarFn {
        input: Var,
        local_grad: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` does not feed the root.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

fn shape(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(shape(a), (1, 1));
        a[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "add shape");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "sub shape");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(shape(self.value(a)), shape(self.value(b)), "mul shape");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).ncols(), self.value(b).nrows(), "matmul shape");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `m + row` with `row` (1×C) broadcast over the rows of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1×C row");
        assert_eq!(r.ncols(), self.value(m).ncols(), "add_row width");
        let v = self.value(m) + r;
        self.push(v, Op::AddRow(m, row))
    }

    /// `s · m` where `s` is a `1×1` node.
    pub fn scale(&mut self, s: Var, m: Var) -> Var {
        let k = self.scalar(s);
        let v = self.value(m) * k;
        self.push(v, Op::Scale(s, m))
    }

    pub fn scale_const(&mut self, m: Var, c: f64) -> Var {
        let v = self.value(m) * c;
        self.push(v, Op::ScaleConst(m, c))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let v = self.value(a).mapv(|x| x.powf(p));
        self.push(v, Op::Powf(a, p))
    }

    /// Row sums as an R×1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(v, Op::RowSum(a))
    }

    /// Column means as a 1×C row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let v = (x.sum_axis(Axis(0)) / n).insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Copy of a square matrix with its diagonal overwritten by 1.
    pub fn set_diag_one(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.nrows(), v.ncols(), "set_diag_one expects a square matrix");
        v.diag_mut().fill(1.0);
        self.push(v, Op::SetDiagOne(a))
    }

    /// Builds a `rows×cols` matrix whose k-th element (row-major) is the
    /// `index[k]`-th element (row-major) of `src`.
    pub fn gather(&mut self, src: Var, index: Vec<usize>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let s = self.value(src);
        let flat: Vec<f64> = {
            let src_flat = s.as_standard_layout();
            let sl = src_flat.as_slice().expect("standard layout");
            index.iter().map(|&i| sl[i]).collect()
        };
        let v = Array2::from_shape_vec((rows, cols), flat).expect("gather shape");
        self.push(v, Op::Gather { src, index })
    }

    /// Columns `start..start + len` of `a`.
    pub fn columns(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = shape(self.value(a));
        assert!(start + len <= c, "column range");
        let index = (0..r)
            .flat_map(|i| (start..start + len).map(move |j| i * c + j))
            .collect();
        self.gather(a, index, r, len)
    }

    /// Rows `start..start + len` of `a`.
    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (r, c) = shape(self.value(a));
        assert!(start + len <= r, "row range");
        let index = (start * c..(start + len) * c).collect();
        self.gather(a, index, len, c)
    }

    /// Elementwise `sign(h)·max(|h| − γ, 0)` with `γ = exp(log_gamma)`.
    pub fn soft_threshold(&mut self, input: Var, log_gamma: Var) -> Var {
        let gamma = self.scalar(log_gamma).exp();
        let v = self.value(input).mapv(|h| h.signum() * (h.abs() - gamma).max(0.0));
        self.push(v, Op::SoftThreshold { input, log_gamma })
    }

    /// Gaussian-kernel Gram matrix over the rows of `input`:
    /// `A_ij = exp(−‖x_i − x_j‖² / (2σ²))`, exactly symmetric with unit diagonal.
    pub fn gaussian_kernel(&mut self, input: Var, bandwidth: Bandwidth) -> Var {
        let x = self.value(input);
        let n = x.nrows();
        let mut d2 = Array2::<f64>::zeros((n, n));
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d: f64 = x
                    .row(i)
                    .iter()
                    .zip(x.row(j).iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2[[i, j]] = d;
                d2[[j, i]] = d;
                pairs.push((d, (i, j)));
            }
        }
        let (s2, median_pairs) = match bandwidth {
            Bandwidth::Fixed(sigma) => (sigma * sigma, Vec::new()),
            Bandwidth::Median => {
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let m = pairs.len();
                let chosen = if m == 0 {
                    Vec::new()
                } else if m % 2 == 1 {
                    vec![(pairs[m / 2].1, 1.0)]
                } else {
                    vec![(pairs[m / 2 - 1].1, 0.5), (pairs[m / 2].1, 0.5)]
                };
                let med: f64 = chosen.iter().map(|&((i, j), w)| w * d2[[i, j]]).sum();
                if med > MIN_MEDIAN_BANDWIDTH {
                    (med, chosen)
                } else {
                    (1.0, Vec::new())
                }
            }
        };
        let mut a = Array2::<f64>::ones((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let k = (-d2[[i, j]] / (2.0 * s2)).exp().max(f64::MIN_POSITIVE);
                a[[i, j]] = k;
                a[[j, i]] = k;
            }
        }
        self.push(
            a,
            Op::GaussianKernel {
                input,
                s2,
                median_pairs,
            },
        )
    }

    /// Appends a `1×1` node with value `value` whose gradient with respect
    /// to `input` is `local_grad` (same shape as `input`).
    pub fn scalar_fn(&mut self, input: Var, value: f64, local_grad: Array2<f64>) -> Var {
        assert_eq!(shape(&local_grad), shape(self.value(input)), "local_grad shape");
        self.push(
            Array2::from_elem((1, 1), value),
            Op::ScalarFn { input, local_grad },
        )
    }

    /// Reverse sweep from a `1×1` root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(shape(self.value(root)), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].clone() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, -&g);
                }
                Op::Mul(a, b) => {
                    accumulate(&mut grads, *a, &g * self.value(*b));
                    accumulate(&mut grads, *b, &g * self.value(*a));
                }
                Op::MatMul(a, b) => {
                    accumulate(&mut grads, *a, g.dot(&self.value(*b).t()));
                    accumulate(&mut grads, *b, self.value(*a).t().dot(&g));
                }
                Op::AddRow(m, row) => {
                    accumulate(&mut grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads, *m, g.clone());
                }
                Op::Scale(s, m) => {
                    let k = self.scalar(*s);
                    let ds = (&g * self.value(*m)).sum();
                    accumulate(&mut grads, *s, Array2::from_elem((1, 1), ds));
                    accumulate(&mut grads, *m, &g * k);
                }
                Op::ScaleConst(m, c) => accumulate(&mut grads, *m, &g * *c),
                Op::Transpose(a) => accumulate(&mut grads, *a, g.t().to_owned()),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let local = y.mapv(|s| s * (1.0 - s));
                    accumulate(&mut grads, *a, &g * &local);
                }
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Powf(a, p) => {
                    let local = self.value(*a).mapv(|x| p * x.powf(p - 1.0));
                    accumulate(&mut grads, *a, &g * &local);
                }
                Op::RowSum(a) => {
                    let (r, c) = shape(self.value(*a));
                    let full = Array2::from_shape_fn((r, c), |(i, _)| g[[i, 0]]);
                    accumulate(&mut grads, *a, full);
                }
                Op::MeanRows(a) => {
                    let (r, c) = shape(self.value(*a));
                    let inv = 1.0 / r as f64;
                    let full = Array2::from_shape_fn((r, c), |(_, j)| g[[0, j]] * inv);
                    accumulate(&mut grads, *a, full);
                }
                Op::SetDiagOne(a) => {
                    let mut ga = g.clone();
                    ga.diag_mut().fill(0.0);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gather { src, index } => {
                    let sshape = shape(self.value(*src));
                    let mut flat = vec![0.0; sshape.0 * sshape.1];
                    let gs = g.as_standard_layout();
                    for (k, &i) in index.iter().enumerate() {
                        flat[i] += gs.as_slice().expect("standard layout")[k];
                    }
                    let gsrc = Array2::from_shape_vec(sshape, flat).expect("gather grad shape");
                    accumulate(&mut grads, *src, gsrc);
                }
                Op::SoftThreshold { input, log_gamma } => {
                    let gamma = self.scalar(*log_gamma).exp();
                    let h = self.value(*input);
                    let mut dgamma_log = 0.0;
                    let dh = ndarray::Zip::from(h).and(&g).map_collect(|&h, &gv| {
                        if h.abs() > gamma {
                            dgamma_log -= gv * h.signum() * gamma;
                            gv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, *input, dh);
                    accumulate(&mut grads, *log_gamma, Array2::from_elem((1, 1), dgamma_log));
                }
                Op::GaussianKernel {
                    input,
                    s2,
                    median_pairs,
                } => {
                    let x = self.value(*input);
                    let a = &node.value;
                    let n = x.nrows();
                    let s2 = *s2;
                    // dL/d(d²_ij) for i<j, pooling the two symmetric entries.
                    let mut g_d2 = Array2::<f64>::zeros((n, n));
                    let mut g_s2 = 0.0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let gij = g[[i, j]] + g[[j, i]];
                            let aij = a[[i, j]];
                            let d2: f64 = x
                                .row(i)
                                .iter()
                                .zip(x.row(j).iter())
                                .map(|(p, q)| (p - q) * (p - q))
                                .sum();
                            g_d2[[i, j]] += gij * (-aij / (2.0 * s2));
                            g_s2 += gij * aij * d2 / (2.0 * s2 * s2);
                        }
                    }
                    for &((i, j), w) in median_pairs {
                        g_d2[[i, j]] += g_s2 * w;
                    }
                    let mut gx = Array2::<f64>::zeros(shape(x));
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let c = g_d2[[i, j]];
                            if c == 0.0 {
                                continue;
                            }
                            for k in 0..x.ncols() {
                                let diff = 2.0 * (x[[i, k]] - x[[j, k]]) * c;
                                gx[[i, k]] += diff;
                                gx[[j, k]] -= diff;
                            }
                        }
                    }
                    accumulate(&mut grads, *input, gx);
                }
                Op::ScalarFn { input, local_grad } => {
                    accumulate(&mut grads, *input, local_grad * g[[0, 0]]);
                }
            }
        }

        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| shape(&n.value)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
        let eps = 1e-6;
        Array2::from_shape_fn(x.dim(), |idx| {
            let mut p = x.clone();
            let mut m = x.clone();
            p[idx] += eps;
            m[idx] -= eps;
            (f(&p) - f(&m)) / (2.0 * eps)
        })
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    fn sum_all(t: &mut Tape, v: Var) -> Var {
        let (r, c) = t.value(v).dim();
        let ones_l = t.leaf(Array2::ones((1, r)));
        let ones_r = t.leaf(Array2::ones((c, 1)));
        let left = t.matmul(ones_l, v);
        t.matmul(left, ones_r)
    }

    #[test]
    fn matmul_chain_gradient() {
        let a0 = array![[0.3, -1.2], [0.7, 0.1], [2.0, -0.4]];
        let b0 = array![[1.5, 0.2, -0.3], [0.4, -0.9, 0.8]];
        let f = |a: &Array2<f64>| {
            let mut t = Tape::new();
            let a = t.leaf(a.clone());
            let b = t.leaf(b0.clone());
            let m = t.matmul(a, b);
            let s = t.sigmoid(m);
            let out = sum_all(&mut t, s);
            (t.scalar(out), t.backward(out).wrt(a))
        };
        let (_, analytic) = f(&a0);
        let numeric = numeric_grad(&a0, |a| f(a).0);
        assert_close(&analytic, &numeric, 1e-7);
    }

    #[test]
    fn gather_scatters_repeated_indices() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let g = t.gather(x, vec![0, 0, 3], 1, 3);
        assert_eq!(t.value(g), &array![[1.0, 1.0, 4.0]]);
        let w = t.leaf(array![[1.0], [10.0], [100.0]]);
        let out = t.matmul(g, w);
        let grads = t.backward(out);
        assert_eq!(grads.wrt(x), array![[11.0, 0.0], [0.0, 100.0]]);
    }

    #[test]
    fn gaussian_kernel_median_gradient_matches_differences() {
        let x0 = array![[0.1, 0.5], [-0.3, 0.2], [0.9, -0.7], [0.4, 0.4], [-1.1, 0.3]];
        let weights = array![
            [0.0, 1.0, -2.0, 0.5, 0.3],
            [0.2, 0.0, 0.7, -1.0, 0.9],
            [1.3, -0.4, 0.0, 0.6, -0.2],
            [0.8, 0.1, -0.6, 0.0, 1.1],
            [-0.5, 0.4, 0.3, 0.2, 0.0]
        ];
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let a = t.gaussian_kernel(xv, Bandwidth::Median);
            let w = t.leaf(weights.clone());
            let m = t.mul(a, w);
            let out = sum_all(&mut t, m);
            (t.scalar(out), t.backward(out).wrt(xv))
        };
        let (_, analytic) = f(&x0);
        let numeric = numeric_grad(&x0, |x| f(x).0);
        assert_close(&analytic, &numeric, 1e-6);
    }

    #[test]
    fn soft_threshold_gradient_wrt_log_gamma() {
        let h = array![[1.0, -0.2, -0.9, 0.45]];
        let f = |lg: &Array2<f64>| {
            let mut t = Tape::new();
            let hv = t.leaf(h.clone());
            let g = t.leaf(lg.clone());
            let s = t.soft_threshold(hv, g);
            let out = sum_all(&mut t, s);
            (t.scalar(out), t.backward(out).wrt(g))
        };
        let lg0 = array![[(0.3f64).ln()]];
        let (_, analytic) = f(&lg0);
        let numeric = numeric_grad(&lg0, |x| f(x).0);
        assert_close(&analytic, &numeric, 1e-7);
    }

    #[test]
    fn unreached_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf_scalar(2.0);
        let b = t.leaf(Array2::ones((2, 3)));
        let out = t.scale_const(a, 3.0);
        let grads = t.backward(out);
        assert_eq!(grads.wrt(a)[[0, 0]], 3.0);
        assert_eq!(grads.wrt(b), Array2::<f64>::zeros((2, 3)));
    }
}
