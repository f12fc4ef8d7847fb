//! Matrix-valued reverse-mode tape.
//!
//! Every node holds a 2-D array. Nodes are appended in evaluation order, so the tape is a
//! topologically sorted DAG by construction and cycles cannot be expressed. Only nodes that
//! depend on a parameter leaf carry gradients; constant subgraphs are skipped in the backward
//! sweep.

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + row`, where `row` is `1 x n` broadcast over the rows of `a`.
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    SliceCols(Var, usize, usize),
    /// Row `r` of the output is row `r / n` of the input.
    RepeatRows(Var, usize),
    /// Sums each row into a column vector.
    SumCols(Var),
    Sum(Var),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to the parameter leaves it depends on.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` if the root does not depend on it.
    pub fn wrt_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.wrt(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `tanh` through one `exp` call; absolute error stays at rounding level and it is noticeably
/// cheaper than the libm routine on hidden-layer sized batches.
pub(crate) fn tanh(x: f64) -> f64 {
    let e = (-2.0 * x.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

pub(crate) fn softplus_array(a: &Array2<f64>) -> Array2<f64> {
    a.mapv(softplus)
}

fn same_shape(ctx: &'static str, a: &Array2<f64>, b: &Array2<f64>) {
    assert_eq!(a.dim(), b.dim(), "{ctx}: shape mismatch {:?} vs {:?}", a.dim(), b.dim());
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

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 x n row");
        let v = self.value(a) + r;
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        same_shape("add", self.value(a), self.value(b));
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        same_shape("sub", self.value(a), self.value(b));
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        same_shape("mul", self.value(a), self.value(b));
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        same_shape("div", self.value(a), self.value(b));
        let v = self.value(a) / self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Div(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = softplus_array(self.value(a));
        let ng = self.ng(a);
        self.push(v, Op::Softplus(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let ng = self.ng(a);
        self.push(v, Op::Ln(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        let ng = self.ng(a);
        self.push(v, Op::Square(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let v = self.value(a).slice(s![.., lo..hi]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, lo, hi), ng)
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        let mut v = Array2::zeros((src.nrows() * n, src.ncols()));
        for (r, row) in src.rows().into_iter().enumerate() {
            for k in 0..n {
                v.row_mut(r * n + k).assign(&row);
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::RepeatRows(a, n), ng)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::ContractViolation(format!("root {} not on tape", root.0)))?;
        if node.value.dim() != (1, 1) {
            return Err(Error::ContractViolation(format!(
                "backward needs a scalar root, got shape {:?}",
                node.value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        if !node.needs_grad {
            return Ok(Gradients { grads });
        }
        grads[root.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = &node.value;
            match node.op {
                Op::Leaf => {
                    // leaves keep their gradient for the caller
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.ng(a) {
                        accumulate(&mut grads, a, g.dot(&self.value(b).t()));
                    }
                    if self.ng(b) {
                        accumulate(&mut grads, b, self.value(a).t().dot(&g));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(row) {
                        accumulate(&mut grads, row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(b) {
                        accumulate(&mut grads, b, g.clone());
                    }
                    if self.ng(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(b) {
                        accumulate(&mut grads, b, -&g);
                    }
                    if self.ng(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(a) {
                        accumulate(&mut grads, a, &g * self.value(b));
                    }
                    if self.ng(b) {
                        accumulate(&mut grads, b, &g * self.value(a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(b);
                    if self.ng(a) {
                        accumulate(&mut grads, a, &g / bv);
                    }
                    if self.ng(b) {
                        // d(a/b)/db = -(a/b)/b
                        accumulate(&mut grads, b, -(&g * out) / bv);
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, g * c),
                Op::AddScalar(a) => accumulate(&mut grads, a, g),
                Op::Tanh(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, a, d);
                }
                Op::Softplus(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(a))
                        .for_each(|d, &x| *d *= sigmoid(x));
                    accumulate(&mut grads, a, d);
                }
                Op::Exp(a) => accumulate(&mut grads, a, g * out),
                Op::Ln(a) => accumulate(&mut grads, a, g / self.value(a)),
                Op::Square(a) => accumulate(&mut grads, a, g * self.value(a) * 2.0),
                Op::SliceCols(a, lo, hi) => {
                    let mut d = Array2::zeros(self.value(a).raw_dim());
                    d.slice_mut(s![.., lo..hi]).assign(&g);
                    accumulate(&mut grads, a, d);
                }
                Op::RepeatRows(a, n) => {
                    let src = self.value(a);
                    let mut d = Array2::zeros(src.raw_dim());
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        for k in 0..n {
                            row += &g.row(r * n + k);
                        }
                    }
                    accumulate(&mut grads, a, d);
                }
                Op::SumCols(a) => {
                    let d = Array2::from_shape_fn(self.value(a).raw_dim(), |(r, _)| g[[r, 0]]);
                    accumulate(&mut grads, a, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.value(a).raw_dim(), g[[0, 0]]);
                    accumulate(&mut grads, a, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}
