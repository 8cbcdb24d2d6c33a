//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! Every primitive application appends one node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and accumulates adjoints
//! without touching the recorded values, so it can be called repeatedly.

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::params::ParamSet;
use crate::error::{Error, Result};

/// Additive shift inside [`Primitive::Log`].
pub const LOG_SHIFT: f64 = 1e-30;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Hadamard,
    Scale(f64),
    Exp,
    /// `ln(x + LOG_SHIFT)`; negative inputs are rejected.
    Log,
    Relu,
    Sigmoid,
    /// m×n → m×1
    RowSum,
    /// m×n → 1×n
    ColSum,
    /// 1×n → rows×n
    BroadcastRow(usize),
    /// m×1 → m×cols
    BroadcastCol(usize),
    Transpose,
    Square,
    /// mean of all entries, → 1×1
    Mean,
    Softplus,
    ConcatRows,
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Leaf,
    Param,
    Apply(Primitive, Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Adjoints produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    params: BTreeMap<String, Var>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient wrt `v`; zeros if `v` did not influence the loss.
    pub fn wrt(&self, v: Var) -> Matrix {
        self.adjoints[v.0].clone().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Matrix::zeros(r, c)
        })
    }

    pub fn param(&self, name: &str) -> Option<Matrix> {
        self.params.get(name).map(|&v| self.wrt(v))
    }

    pub fn params(&self) -> BTreeMap<String, Matrix> {
        self.params
            .iter()
            .map(|(k, &v)| (k.clone(), self.wrt(v)))
            .collect()
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn row_sum(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), 1, |r, _| m.row(r).iter().sum())
}

fn col_sum(m: &Matrix) -> Matrix {
    let mut out = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (o, v) in out.iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    Matrix::row_vector(&out)
}

fn expect_shape(op: &'static str, ok: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::shape(op, detail()))
    }
}

/// Forward evaluation of one primitive on plain matrices.
pub fn evaluate(p: Primitive, inputs: &[&Matrix]) -> Result<Matrix> {
    let arity = match p {
        Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Hadamard => 2,
        Primitive::ConcatRows => inputs.len().max(1),
        _ => 1,
    };
    expect_shape("arity", inputs.len() == arity, || {
        format!("{p:?} takes {arity} inputs, got {}", inputs.len())
    })?;
    let a = inputs[0];
    Ok(match p {
        Primitive::MatMul => a.matmul(inputs[1])?,
        Primitive::Add => a.zip_map(inputs[1], |x, y| x + y)?,
        Primitive::Sub => a.zip_map(inputs[1], |x, y| x - y)?,
        Primitive::Hadamard => a.zip_map(inputs[1], |x, y| x * y)?,
        Primitive::Scale(s) => a.map(|x| x * s),
        Primitive::Exp => a.map(f64::exp),
        Primitive::Log => {
            if a.data().iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::Numeric("log of a negative or NaN value".into()));
            }
            a.map(|x| (x + LOG_SHIFT).ln())
        }
        Primitive::Relu => a.map(|x| if x > 0.0 { x } else { 0.0 }),
        Primitive::Sigmoid => a.map(sigmoid),
        Primitive::RowSum => row_sum(a),
        Primitive::ColSum => col_sum(a),
        Primitive::BroadcastRow(rows) => {
            expect_shape("broadcast-row", a.rows() == 1, || format!("{:?}", a.shape()))?;
            Matrix::from_fn(rows, a.cols(), |_, c| a.get(0, c))
        }
        Primitive::BroadcastCol(cols) => {
            expect_shape("broadcast-col", a.cols() == 1, || format!("{:?}", a.shape()))?;
            Matrix::from_fn(a.rows(), cols, |r, _| a.get(r, 0))
        }
        Primitive::Transpose => a.transpose(),
        Primitive::Square => a.map(|x| x * x),
        Primitive::Mean => {
            expect_shape("mean", !a.is_empty(), || "empty input".into())?;
            Matrix::scalar(a.mean())
        }
        Primitive::Softplus => a.map(softplus),
        Primitive::ConcatRows => Matrix::concat_rows(inputs)?,
    })
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

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// An input whose gradient can be read back from [`Gradients::wrt`].
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers (once per tape) the named parameter from `params`.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = params
            .get(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Records `p` applied to `inputs`.
    pub fn apply(&mut self, p: Primitive, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Matrix> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let value = evaluate(p, &vals)?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, Op::Apply(p, inputs.to_vec()), needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Hadamard, &[a, b])
    }
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Exp, &[a])
    }
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::RowSum, &[a])
    }
    pub fn col_sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::ColSum, &[a])
    }
    pub fn broadcast_row(&mut self, a: Var, rows: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastRow(rows), &[a])
    }
    pub fn broadcast_col(&mut self, a: Var, cols: usize) -> Result<Var> {
        self.apply(Primitive::BroadcastCol(cols), &[a])
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Transpose, &[a])
    }
    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Square, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[a])
    }
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softplus, &[a])
    }
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, parts)
    }

    /// Sum of all entries as 1×1.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let r = self.row_sum(a)?;
        self.col_sum(r)
    }

    /// `a + c` for a constant matrix `c`.
    pub fn add_const(&mut self, a: Var, c: Matrix) -> Result<Var> {
        let c = self.constant(c);
        self.add(a, c)
    }

    /// Adds a constant row vector to every row of `a`.
    pub fn add_row_const(&mut self, a: Var, row: Var) -> Result<Var> {
        let rows = self.value(a).rows();
        let b = self.broadcast_row(row, rows)?;
        self.add(a, b)
    }

    /// Reverse sweep from the 1×1 node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::shape("backward", format!("loss is {shape:?}, not scalar")));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Apply(p, inputs) = &node.op {
                let contribs = self.adjoint(*p, inputs, &node.value, &g)?;
                for (v, c) in inputs.iter().zip(contribs) {
                    if !self.nodes[v.0].needs_grad {
                        continue;
                    }
                    match &mut adj[v.0] {
                        Some(acc) => acc.add_assign(&c),
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            adj[i] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            params: self.params.clone(),
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Backward sweep writing parameter gradients into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let g = self.backward(loss)?;
        params.zero_grad();
        for (name, grad) in g.params() {
            params.set_grad(&name, grad)?;
        }
        Ok(())
    }

    fn adjoint(&self, p: Primitive, inputs: &[Var], out: &Matrix, g: &Matrix) -> Result<Vec<Matrix>> {
        let x = |k: usize| &self.nodes[inputs[k].0].value;
        Ok(match p {
            Primitive::MatMul => vec![
                g.matmul(&x(1).transpose())?,
                x(0).transpose().matmul(g)?,
            ],
            Primitive::Add => vec![g.clone(), g.clone()],
            Primitive::Sub => vec![g.clone(), g.map(|v| -v)],
            Primitive::Hadamard => vec![
                g.zip_map(x(1), |a, b| a * b)?,
                g.zip_map(x(0), |a, b| a * b)?,
            ],
            Primitive::Scale(s) => vec![g.map(|v| v * s)],
            Primitive::Exp => vec![g.zip_map(out, |a, b| a * b)?],
            Primitive::Log => vec![g.zip_map(x(0), |a, b| a / (b + LOG_SHIFT))?],
            Primitive::Relu => vec![g.zip_map(x(0), |a, b| if b > 0.0 { a } else { 0.0 })?],
            Primitive::Sigmoid => vec![g.zip_map(out, |a, s| a * s * (1.0 - s))?],
            Primitive::RowSum => {
                let (r, c) = x(0).shape();
                vec![Matrix::from_fn(r, c, |i, _| g.get(i, 0))]
            }
            Primitive::ColSum => {
                let (r, c) = x(0).shape();
                vec![Matrix::from_fn(r, c, |_, j| g.get(0, j))]
            }
            Primitive::BroadcastRow(_) => vec![col_sum(g)],
            Primitive::BroadcastCol(_) => vec![row_sum(g)],
            Primitive::Transpose => vec![g.transpose()],
            Primitive::Square => vec![g.zip_map(x(0), |a, b| 2.0 * a * b)?],
            Primitive::Mean => {
                let (r, c) = x(0).shape();
                let s = g.item() / (r * c) as f64;
                vec![Matrix::filled(r, c, s)]
            }
            Primitive::Softplus => vec![g.zip_map(x(0), |a, b| a * sigmoid(b))?],
            Primitive::ConcatRows => {
                let mut start = 0;
                inputs
                    .iter()
                    .map(|v| {
                        let rows = self.nodes[v.0].value.rows();
                        let idx: Vec<usize> = (start..start + rows).collect();
                        start += rows;
                        g.select_rows(&idx)
                    })
                    .collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = t.constant(Matrix::identity(2));
        let p = t.matmul(i, a).unwrap();
        assert_eq!(t.value(p), t.value(a));
        let v = t.constant(Matrix::row_vector(&[-1.0, 2.0]));
        let r = t.relu(v).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 2.0]);
        let ones = t.constant(Matrix::filled(2, 3, 1.0));
        let s = t.row_sum(ones).unwrap();
        assert_eq!(t.value(s), &Matrix::column(&[3.0, 3.0]));
    }

    #[test]
    fn analytic_gradients() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::scalar(0.0));
        let s = t.sigmoid(x).unwrap();
        assert_eq!(t.backward(s).unwrap().wrt(x).item(), 0.25);

        let mut t = Tape::new();
        let x = t.leaf(Matrix::column(&[1.0, 2.0]));
        let xt = t.transpose(x).unwrap();
        let q = t.matmul(xt, x).unwrap();
        assert_eq!(t.backward(q).unwrap().wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn errors() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 3));
        assert!(matches!(t.matmul(a, b), Err(Error::Shape { .. })));
        assert!(t.backward(a).is_err());
        let neg = t.leaf(Matrix::scalar(-1.0));
        assert!(t.log(neg).is_err());
        let zero = t.leaf(Matrix::scalar(0.0));
        let l = t.log(zero).unwrap();
        assert!(t.value(l).item().is_finite());
    }

    #[test]
    fn repeated_backward_is_stable() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_rows(&[vec![0.3, -1.2], vec![2.0, 0.7]]));
        let e = t.exp(x).unwrap();
        let h = t.hadamard(e, x).unwrap();
        let m = t.mean(h).unwrap();
        let before = t.value(e).clone();
        let g1 = t.backward(m).unwrap().wrt(x);
        let g2 = t.backward(m).unwrap().wrt(x);
        assert!(g1.bit_eq(&g2));
        assert!(t.value(e).bit_eq(&before));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(3.0));
        let x = t.leaf(Matrix::scalar(2.0));
        let y = t.hadamard(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 3.0);
        assert_eq!(g.wrt(c).item(), 0.0);
    }
}
