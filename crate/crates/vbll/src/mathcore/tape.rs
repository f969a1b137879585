//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! The tape is a flat, eagerly evaluated expression record: every operation
//! appends one node holding its forward value, and `backward` runs a single
//! reverse sweep accumulating adjoints in creation order (which is already a
//! topological order, since an operation can only refer to nodes created
//! before it). Values are `ArrayD<f64>` so vectors, matrices and scalars all
//! travel through the same machinery; losses are built as whole-batch matrix
//! expressions rather than per-sample graphs, which keeps tapes short and the
//! arithmetic deterministic.
//!
//! Nodes created from [`Tape::leaf`] are differentiation roots identified by a
//! caller-chosen slot index; everything created via [`Tape::constant`] is
//! treated as data and the backward sweep skips adjoint work for subtrees that
//! contain no leaf, so wrapping a large design matrix as a constant costs
//! nothing at gradient time.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, Axis, Ix0, Ix1, Ix2};

use crate::error::{Error, Result};

/// Dense dynamic-rank array used for all tape values and gradients.
pub type Arr = ArrayD<f64>;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Differentiation root; `slot` keys the entry in [`Gradients`].
    Leaf { slot: usize },
    /// Data with no gradient.
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product of same-shaped arrays.
    Mul(Var, Var),
    /// Elementwise quotient of same-shaped arrays.
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    /// `x * c` for a fixed scalar `c`.
    Scale(Var, f64),
    /// `x + c` for a fixed scalar `c` (the constant is not needed backward).
    AddConst(Var),
    /// `max(x, slope * x)` applied elementwise.
    LeakyRelu(Var, f64),
    /// Sum of all elements, producing a scalar.
    Sum(Var),
    /// Inner product of two 1-d arrays, producing a scalar.
    Dot(Var, Var),
    /// Matrix (r x c) times vector (c), producing a 1-d array (r).
    MatVec(Var, Var),
    /// Matrix (r x k) times matrix (k x c), producing (r x c).
    MatMul(Var, Var),
    Transpose(Var),
    /// 1-d array (n) into an (n x n) matrix with the array on the diagonal.
    DiagEmbed(Var),
    /// Row sums of a 2-d array, producing a 1-d array.
    RowSums(Var),
    /// log(sum(exp(x))) over all elements of a 1-d array, producing a scalar.
    LogSumExp(Var),
    /// Row-wise log-sum-exp of a 2-d array, producing a 1-d array.
    RowLogSumExp(Var),
    /// Row selection: output row i is `input.row(idx[i])`.
    GatherRows(Var, Box<[usize]>),
    /// Element selection from a 1-d array: output[i] = input[idx[i]].
    GatherElems(Var, Box<[usize]>),
    /// 1-d arrays of equal length stacked as the columns of a matrix.
    StackCols(Box<[Var]>),
    /// Scalars stacked into a 1-d array.
    StackScalars(Box<[Var]>),
    /// 1-d array (c) repeated as identical rows of a (rows x c) matrix.
    BroadcastRow(Var),
    /// Scalar times array: `s * a` where `s` is 0-d.
    MulScalar(Var, Var),
}

struct Node {
    op: Op,
    value: Arr,
    /// True when the subtree rooted here contains at least one leaf.
    needs_grad: bool,
}

/// Gradients keyed by leaf slot, as produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    by_slot: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient for `slot`, if that leaf participated in the objective.
    pub fn get(&self, slot: usize) -> Option<&Arr> {
        self.by_slot.get(slot).and_then(|g| g.as_ref())
    }

    /// Remove and return the gradient for `slot`.
    pub fn take(&mut self, slot: usize) -> Option<Arr> {
        self.by_slot.get_mut(slot).and_then(|g| g.take())
    }
}

/// Expression tape. See the module docs for the execution model.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as1(a: &Arr) -> ArrayView1<'_, f64> {
    a.view()
        .into_dimensionality::<Ix1>()
        .expect("tape op requires a 1-d operand")
}

fn as2(a: &Arr) -> ArrayView2<'_, f64> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("tape op requires a 2-d operand")
}

fn as0(a: &Arr) -> f64 {
    *a.view()
        .into_dimensionality::<Ix0>()
        .expect("tape op requires a scalar operand")
        .into_scalar()
}

fn scalar_arr(x: f64) -> Arr {
    ArrayD::from_elem(ndarray::IxDyn(&[]), x)
}

/// Numerically stable log-sum-exp of a 1-d view (shift by the maximum).
fn lse_view(v: ArrayView1<'_, f64>) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !m.is_finite() {
        // All -inf (empty rows are rejected upstream): the sum is 0, log is -inf.
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of `v`.
    pub fn value(&self, v: Var) -> &Arr {
        &self.nodes[v.0].value
    }

    /// Forward value of a 0-d node as a plain `f64`.
    ///
    /// # Panics
    /// Panics if `v` is not scalar-shaped.
    pub fn scalar_value(&self, v: Var) -> f64 {
        as0(&self.nodes[v.0].value)
    }

    fn push(&mut self, op: Op, value: Arr) -> Var {
        let needs_grad = match &op {
            Op::Leaf { .. } => true,
            Op::Const => false,
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::Dot(a, b)
            | Op::MatVec(a, b)
            | Op::MatMul(a, b)
            | Op::MulScalar(a, b) => self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad,
            Op::Neg(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::LeakyRelu(a, _)
            | Op::Sum(a)
            | Op::Transpose(a)
            | Op::DiagEmbed(a)
            | Op::RowSums(a)
            | Op::LogSumExp(a)
            | Op::RowLogSumExp(a)
            | Op::GatherRows(a, _)
            | Op::GatherElems(a, _)
            | Op::BroadcastRow(a) => self.nodes[a.0].needs_grad,
            Op::StackCols(vs) | Op::StackScalars(vs) => {
                vs.iter().any(|v| self.nodes[v.0].needs_grad)
            }
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a differentiation root. `slot` keys its gradient in the result
    /// of [`Tape::backward`]; slots are chosen by the caller and need not be
    /// dense or unique (a repeated slot accumulates into one gradient).
    pub fn leaf(&mut self, slot: usize, value: Arr) -> Var {
        self.push(Op::Leaf { slot }, value)
    }

    /// Record data that never receives a gradient.
    pub fn constant(&mut self, value: Arr) -> Var {
        self.push(Op::Const, value)
    }

    /// Convenience: 1-d constant.
    pub fn constant1(&mut self, value: &Array1<f64>) -> Var {
        self.constant(value.clone().into_dyn())
    }

    /// Convenience: 2-d constant.
    pub fn constant2(&mut self, value: &Array2<f64>) -> Var {
        self.constant(value.clone().into_dyn())
    }

    /// Convenience: 0-d constant.
    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(scalar_arr(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        self.push(Op::Div(a, b), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        self.push(Op::Neg(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::ln);
        self.push(Op::Ln(a), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(Op::AddConst(a), v)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = scalar_arr(self.nodes[a.0].value.sum());
        self.push(Op::Sum(a), v)
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        assert!(n > 0, "mean of an empty array");
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of squared elements, as a scalar node.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let v = scalar_arr(as1(&self.nodes[a.0].value).dot(&as1(&self.nodes[b.0].value)));
        self.push(Op::Dot(a, b), v)
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Var {
        let v = as2(&self.nodes[m.0].value)
            .dot(&as1(&self.nodes[x.0].value))
            .into_dyn();
        self.push(Op::MatVec(m, x), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = as2(&self.nodes[a.0].value)
            .dot(&as2(&self.nodes[b.0].value))
            .into_dyn();
        self.push(Op::MatMul(a, b), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = as2(&self.nodes[a.0].value).t().to_owned().into_dyn();
        self.push(Op::Transpose(a), v)
    }

    pub fn diag_embed(&mut self, a: Var) -> Var {
        let d = as1(&self.nodes[a.0].value);
        let v = Array2::from_diag(&d).into_dyn();
        self.push(Op::DiagEmbed(a), v)
    }

    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = as2(&self.nodes[a.0].value).sum_axis(Axis(1)).into_dyn();
        self.push(Op::RowSums(a), v)
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        let v = scalar_arr(lse_view(as1(&self.nodes[a.0].value)));
        self.push(Op::LogSumExp(a), v)
    }

    pub fn row_logsumexp(&mut self, a: Var) -> Var {
        let m = as2(&self.nodes[a.0].value);
        let v = Array1::from_iter(m.rows().into_iter().map(lse_view)).into_dyn();
        self.push(Op::RowLogSumExp(a), v)
    }

    /// Output row `i` is row `idx[i]` of the input; rows may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let m = as2(&self.nodes[a.0].value);
        let mut out = Array2::zeros((idx.len(), m.ncols()));
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).assign(&m.row(j));
        }
        self.push(Op::GatherRows(a, idx.into()), out.into_dyn())
    }

    /// Output element `i` is element `idx[i]` of the 1-d input.
    pub fn gather_elems(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = as1(&self.nodes[a.0].value);
        let out = Array1::from_iter(idx.iter().map(|&j| x[j])).into_dyn();
        self.push(Op::GatherElems(a, idx.into()), out)
    }

    /// Stack equal-length 1-d nodes as the columns of a matrix.
    pub fn stack_cols(&mut self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty(), "stack_cols of zero columns");
        let n = as1(&self.nodes[cols[0].0].value).len();
        let mut out = Array2::zeros((n, cols.len()));
        for (k, c) in cols.iter().enumerate() {
            out.column_mut(k).assign(&as1(&self.nodes[c.0].value));
        }
        self.push(Op::StackCols(cols.into()), out.into_dyn())
    }

    /// Stack 0-d nodes into a 1-d array.
    pub fn stack_scalars(&mut self, xs: &[Var]) -> Var {
        let out = Array1::from_iter(xs.iter().map(|x| as0(&self.nodes[x.0].value))).into_dyn();
        self.push(Op::StackScalars(xs.into()), out)
    }

    /// Repeat a 1-d node as `rows` identical rows.
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Var {
        let r = as1(&self.nodes[a.0].value);
        let out = Array2::from_shape_fn((rows, r.len()), |(_, j)| r[j]).into_dyn();
        self.push(Op::BroadcastRow(a), out)
    }

    /// Scalar node times array node.
    pub fn mul_scalar(&mut self, s: Var, a: Var) -> Var {
        let sv = as0(&self.nodes[s.0].value);
        let v = self.nodes[a.0].value.mapv(|x| sv * x);
        self.push(Op::MulScalar(s, a), v)
    }

    /// Reverse sweep from a scalar `root`, returning gradients keyed by leaf
    /// slot. Fails if the root is not 0-d or its value is non-finite; the
    /// finiteness check lives here so optimizer steps can never consume NaN.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = &self.nodes[root.0].value;
        if root_val.ndim() != 0 {
            return Err(Error::shape(
                "tape backward",
                format!("root must be scalar, got shape {:?}", root_val.shape()),
            ));
        }
        let val = as0(root_val);
        if !val.is_finite() {
            return Err(Error::NonFinite {
                term: "objective".to_string(),
                value: val,
                context: "tape backward root".to_string(),
            });
        }

        let mut adj: Vec<Option<Arr>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(scalar_arr(1.0));

        let mut max_slot = 0usize;
        for node in &self.nodes {
            if let Op::Leaf { slot } = node.op {
                max_slot = max_slot.max(slot);
            }
        }
        let mut by_slot: Vec<Option<Arr>> = (0..=max_slot).map(|_| None).collect();

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { slot } => accumulate(&mut by_slot[*slot], &g),
                Op::Const => {}
                Op::Add(a, b) => {
                    self.accum(&mut adj, *a, g.clone());
                    self.accum(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut adj, *a, g.clone());
                    self.accum(&mut adj, *b, g.mapv(|x| -x));
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b.0].value;
                    let gb = &g * &self.nodes[a.0].value;
                    self.accum(&mut adj, *a, ga);
                    self.accum(&mut adj, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = &self.nodes[b.0].value;
                    let ga = &g / bv;
                    let gb = -&g * &self.nodes[i].value / bv;
                    self.accum(&mut adj, *a, ga);
                    self.accum(&mut adj, *b, gb);
                }
                Op::Neg(a) => self.accum(&mut adj, *a, g.mapv(|x| -x)),
                Op::Exp(a) => {
                    let ga = &g * &self.nodes[i].value;
                    self.accum(&mut adj, *a, ga);
                }
                Op::Ln(a) => {
                    let ga = &g / &self.nodes[a.0].value;
                    self.accum(&mut adj, *a, ga);
                }
                Op::Scale(a, c) => self.accum(&mut adj, *a, g.mapv(|x| x * c)),
                Op::AddConst(a) => self.accum(&mut adj, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let av = &self.nodes[a.0].value;
                    let mut ga = g;
                    ndarray::Zip::from(&mut ga).and(av).for_each(|gi, &xi| {
                        if xi <= 0.0 {
                            *gi *= slope;
                        }
                    });
                    self.accum(&mut adj, *a, ga);
                }
                Op::Sum(a) => {
                    let gv = as0(&g);
                    let ga = Arr::from_elem(self.nodes[a.0].value.raw_dim(), gv);
                    self.accum(&mut adj, *a, ga);
                }
                Op::Dot(a, b) => {
                    let gv = as0(&g);
                    let ga = self.nodes[b.0].value.mapv(|x| gv * x);
                    let gb = self.nodes[a.0].value.mapv(|x| gv * x);
                    self.accum(&mut adj, *a, ga);
                    self.accum(&mut adj, *b, gb);
                }
                Op::MatVec(m, x) => {
                    let gv = as1(&g);
                    let mv = as2(&self.nodes[m.0].value);
                    let xv = as1(&self.nodes[x.0].value);
                    if self.nodes[m.0].needs_grad {
                        // d/dM (g . Mx) = g x^T
                        let gm = gv
                            .insert_axis(Axis(1))
                            .dot(&xv.insert_axis(Axis(0)))
                            .into_dyn();
                        self.accum(&mut adj, *m, gm);
                    }
                    if self.nodes[x.0].needs_grad {
                        let gx = mv.t().dot(&gv).into_dyn();
                        self.accum(&mut adj, *x, gx);
                    }
                }
                Op::MatMul(a, b) => {
                    let gv = as2(&g);
                    if self.nodes[a.0].needs_grad {
                        let ga = gv.dot(&as2(&self.nodes[b.0].value).t()).into_dyn();
                        self.accum(&mut adj, *a, ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = as2(&self.nodes[a.0].value).t().dot(&gv).into_dyn();
                        self.accum(&mut adj, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    let ga = as2(&g).t().to_owned().into_dyn();
                    self.accum(&mut adj, *a, ga);
                }
                Op::DiagEmbed(a) => {
                    let gv = as2(&g);
                    let ga = Array1::from_iter((0..gv.nrows()).map(|k| gv[[k, k]])).into_dyn();
                    self.accum(&mut adj, *a, ga);
                }
                Op::RowSums(a) => {
                    let gv = as1(&g);
                    let (r, c) = as2(&self.nodes[a.0].value).dim();
                    let ga = Array2::from_shape_fn((r, c), |(ri, _)| gv[ri]).into_dyn();
                    self.accum(&mut adj, *a, ga);
                }
                Op::LogSumExp(a) => {
                    let gv = as0(&g);
                    let out = as0(&self.nodes[i].value);
                    let ga = self.nodes[a.0].value.mapv(|x| gv * (x - out).exp());
                    self.accum(&mut adj, *a, ga);
                }
                Op::RowLogSumExp(a) => {
                    let gv = as1(&g);
                    let out = as1(&self.nodes[i].value);
                    let av = as2(&self.nodes[a.0].value);
                    let ga = Array2::from_shape_fn(av.dim(), |(ri, ci)| {
                        gv[ri] * (av[[ri, ci]] - out[ri]).exp()
                    })
                    .into_dyn();
                    self.accum(&mut adj, *a, ga);
                }
                Op::GatherRows(a, idx) => {
                    let gv = as2(&g);
                    let mut ga = Array2::zeros(as2(&self.nodes[a.0].value).dim());
                    for (i_out, &j) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(j);
                        row += &gv.row(i_out);
                    }
                    self.accum(&mut adj, *a, ga.into_dyn());
                }
                Op::GatherElems(a, idx) => {
                    let gv = as1(&g);
                    let mut ga = Array1::zeros(as1(&self.nodes[a.0].value).len());
                    for (i_out, &j) in idx.iter().enumerate() {
                        ga[j] += gv[i_out];
                    }
                    self.accum(&mut adj, *a, ga.into_dyn());
                }
                Op::StackCols(cols) => {
                    let gv = as2(&g);
                    for (k, c) in cols.iter().enumerate() {
                        if self.nodes[c.0].needs_grad {
                            self.accum(&mut adj, *c, gv.column(k).to_owned().into_dyn());
                        }
                    }
                }
                Op::StackScalars(xs) => {
                    let gv = as1(&g);
                    for (k, x) in xs.iter().enumerate() {
                        if self.nodes[x.0].needs_grad {
                            self.accum(&mut adj, *x, scalar_arr(gv[k]));
                        }
                    }
                }
                Op::BroadcastRow(a) => {
                    let ga = as2(&g).sum_axis(Axis(0)).into_dyn();
                    self.accum(&mut adj, *a, ga);
                }
                Op::MulScalar(s, a) => {
                    if self.nodes[s.0].needs_grad {
                        let gs = scalar_arr((&g * &self.nodes[a.0].value).sum());
                        self.accum(&mut adj, *s, gs);
                    }
                    if self.nodes[a.0].needs_grad {
                        let sv = as0(&self.nodes[s.0].value);
                        self.accum(&mut adj, *a, g.mapv(|x| sv * x));
                    }
                }
            }
        }

        Ok(Gradients { by_slot })
    }

    fn accum(&self, adj: &mut [Option<Arr>], v: Var, g: Arr) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        accumulate(&mut adj[v.0], &g);
    }
}

fn accumulate(slot: &mut Option<Arr>, g: &Arr) {
    match slot {
        Some(acc) => *acc += g,
        None => *slot = Some(g.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gradient_of_summed_linear_map_is_column_sums() {
        // f(x) = sum(A x) has gradient A^T 1, the column sums of A.
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let x = array![1.0, 1.0];
        let mut tape = Tape::new();
        let av = tape.constant2(&a);
        let xv = tape.leaf(0, x.into_dyn());
        let y = tape.matvec(av, xv);
        let f = tape.sum(y);
        let mut grads = tape.backward(f).expect("backward");
        let g = grads.take(0).expect("gradient for slot 0");
        assert_eq!(g.shape(), &[2]);
        assert_eq!(g[[0]], 4.0, "column sum of [1, 3]");
        assert_eq!(g[[1]], 6.0, "column sum of [2, 4]");
    }

    #[test]
    fn constant_subtrees_receive_no_gradient() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let mut tape = Tape::new();
        let av = tape.constant2(&a);
        let xv = tape.leaf(3, array![1.0, -1.0].into_dyn());
        let y = tape.matvec(av, xv);
        let f = tape.sum_sq(y);
        let grads = tape.backward(f).expect("backward");
        assert!(grads.get(0).is_none(), "unused slots stay empty");
        assert!(grads.get(3).is_some());
    }

    #[test]
    fn repeated_slot_accumulates() {
        // Same parameter appearing twice (e.g. shared weights) sums adjoints.
        let mut tape = Tape::new();
        let x1 = tape.leaf(0, scalar_arr(3.0));
        let x2 = tape.leaf(0, scalar_arr(3.0));
        let f = tape.mul(x1, x2); // x^2 with x recorded twice: df/dx = 3 + 3
        let mut grads = tape.backward(f).expect("backward");
        let g = grads.take(0).unwrap();
        assert_eq!(as0(&g), 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(0, array![1.0, 2.0].into_dyn());
        let y = tape.scale(x, 2.0);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn backward_rejects_non_finite_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(0, scalar_arr(-1.0));
        let y = tape.ln(x); // ln(-1) = NaN
        let err = tape.backward(y).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "got: {msg}");
    }

    #[test]
    fn logsumexp_matches_direct_computation_and_is_stable() {
        let mut tape = Tape::new();
        let x = tape.constant1(&array![0.0, 0.0]);
        let l = tape.logsumexp(x);
        assert!((tape.scalar_value(l) - 2.0_f64.ln()).abs() < 1e-15);

        // Values that would overflow a naive implementation.
        let mut tape = Tape::new();
        let x = tape.constant1(&array![1000.0, 1000.0]);
        let l = tape.logsumexp(x);
        assert!((tape.scalar_value(l) - (1000.0 + 2.0_f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gather_rows_scatter_adds_in_backward() {
        // Two output rows pull from the same input row; adjoints must add.
        let mut tape = Tape::new();
        let m = tape.leaf(0, array![[1.0, 2.0], [3.0, 4.0]].into_dyn());
        let g = tape.gather_rows(m, &[1, 1]);
        let f = tape.sum(g);
        let mut grads = tape.backward(f).unwrap();
        let gm = grads.take(0).unwrap();
        assert_eq!(gm[[0, 0]], 0.0);
        assert_eq!(gm[[1, 0]], 2.0, "row 1 selected twice");
        assert_eq!(gm[[1, 1]], 2.0);
    }
}
