//! Tape-based reverse-mode differentiation over a fixed set of matrix ops.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{dim_err, Error, Result};
use crate::gradnet::tensor::{ParamId, ParamStore, Tensor};
use crate::scalar::Scalar;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Reduce down each column (over rows).
    Rows,
    /// Reduce along each row (over columns).
    Cols,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Div(usize, usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Recip(usize),
    ClampMin(usize, T),
    Sum(usize),
    Mean(usize),
    SumCols(usize),
    Softmax(usize, Axis),
    Row(usize, usize),
    Cols(usize, usize),
    ConcatCols(Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    param: Option<ParamId>,
}

/// Records a forward computation so that gradients can be pulled back.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; `None` when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            param: None,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::Tape("variable belongs to a different tape".into()));
        }
        Ok(&self.nodes[v.index])
    }

    /// Records an input (differentiable leaf that is not a parameter).
    pub fn input(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Leaf)
    }

    pub fn input_matrix(&mut self, rows: usize, cols: usize, values: Vec<T>) -> Result<Var> {
        if rows * cols != values.len() {
            return Err(dim_err!("{rows}x{cols} input from {} values", values.len()));
        }
        Ok(self.push(rows, cols, values, Op::Leaf))
    }

    /// Records a parameter leaf; its gradient is routed back to the store.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let t = store.get(id);
        let v = self.push(t.rows(), t.cols(), t.values().to_vec(), Op::Leaf);
        self.nodes[v.index].param = Some(id);
        v
    }

    pub fn value(&self, v: Var) -> &[T] {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.index];
        (n.rows, n.cols)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.index];
        Tensor::matrix(n.rows, n.cols, n.value.clone()).expect("node shape is consistent")
    }

    pub fn scalar_value(&self, v: Var) -> Result<T> {
        let n = self.node(v)?;
        if n.value.len() != 1 {
            return Err(dim_err!("expected a scalar, found {}x{}", n.rows, n.cols));
        }
        Ok(n.value[0])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(dim_err!(
                "{what}: {}x{} vs {}x{}",
                na.rows,
                na.cols,
                nb.rows,
                nb.cols
            ));
        }
        Ok((na.rows, na.cols))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (r, c) = self.same_shape(a, b, what)?;
        let value = self.nodes[a.index]
            .value
            .iter()
            .zip(&self.nodes[b.index].value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(r, c, value, op))
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let value = n.value.iter().map(|&x| f(x)).collect();
        Ok(self.push(r, c, value, op))
    }

    /// `a (n x k) . b (k x m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.rows {
            return Err(dim_err!(
                "matmul {}x{} by {}x{}",
                na.rows,
                na.cols,
                nb.rows,
                nb.cols
            ));
        }
        let value = matmul_nn(&na.value, &nb.value, na.rows, na.cols, nb.cols);
        let (r, c) = (na.rows, nb.cols);
        Ok(self.push(r, c, value, Op::MatMul(a.index, b.index)))
    }

    /// `a (n x k) . b^T` with `b` stored as `m x k`; the linear-layer product.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.cols {
            return Err(dim_err!(
                "matmul_nt {}x{} by ({}x{})^T",
                na.rows,
                na.cols,
                nb.rows,
                nb.cols
            ));
        }
        let value = matmul_nt(&na.value, &nb.value, na.rows, na.cols, nb.rows);
        let (r, c) = (na.rows, nb.rows);
        Ok(self.push(r, c, value, Op::MatMulNt(a.index, b.index)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", Op::Add(a.index, b.index), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", Op::Sub(a.index, b.index), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", Op::Mul(a.index, b.index), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "div", Op::Div(a.index, b.index), |x, y| x / y)
    }

    fn row_broadcast(&self, a: Var, row: Var, what: &str) -> Result<(usize, usize)> {
        let (na, nr) = (self.node(a)?, self.node(row)?);
        if nr.rows != 1 || nr.cols != na.cols {
            return Err(dim_err!(
                "{what}: row operand {}x{} against {}x{}",
                nr.rows,
                nr.cols,
                na.rows,
                na.cols
            ));
        }
        Ok((na.rows, na.cols))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_broadcast(a, row, "add_row")?;
        let rv = &self.nodes[row.index].value;
        let value = self.nodes[a.index]
            .value
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x + y))
            .collect();
        Ok(self.push(r, c, value, Op::AddRow(a.index, row.index)))
    }

    /// Multiplies every row of `a` elementwise by a `1 x cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (r, c) = self.row_broadcast(a, row, "mul_row")?;
        let rv = &self.nodes[row.index].value;
        let value = self.nodes[a.index]
            .value
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| x * y))
            .collect();
        Ok(self.push(r, c, value, Op::MulRow(a.index, row.index)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        self.map(a, Op::Scale(a.index, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: T) -> Result<Var> {
        self.map(a, Op::AddScalar(a.index, k), |x| x + k)
    }

    /// ReLU with subgradient 0 at the kink.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a.index), |x| {
            if x > T::zero() {
                x
            } else {
                T::zero()
            }
        })
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a.index), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Log(a.index), T::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Square(a.index), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sqrt(a.index), T::sqrt)
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Recip(a.index), T::recip)
    }

    /// `max(a, floor)`; gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: T) -> Result<Var> {
        self.map(a, Op::ClampMin(a.index, floor), |x| x.max(floor))
    }

    /// Sum of all entries, as a 1x1 value.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?;
        let s = n.value.iter().fold(T::zero(), |acc, &x| acc + x);
        Ok(self.push(1, 1, vec![s], Op::Sum(a.index)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?;
        if n.value.is_empty() {
            return Err(Error::Empty("mean of an empty tensor".into()));
        }
        let s = n.value.iter().fold(T::zero(), |acc, &x| acc + x) / T::from_count(n.value.len());
        Ok(self.push(1, 1, vec![s], Op::Mean(a.index)))
    }

    /// Row sums as an `rows x 1` column.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let value = n
            .value
            .chunks(c.max(1))
            .map(|chunk| chunk.iter().fold(T::zero(), |acc, &x| acc + x))
            .collect();
        Ok(self.push(r, 1, value, Op::SumCols(a.index)))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let value = softmax_values(&n.value, r, c, axis);
        Ok(self.push(r, c, value, Op::Softmax(a.index, axis)))
    }

    /// Selects row `r` as a `1 x cols` value.
    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let n = self.node(a)?;
        if r >= n.rows {
            return Err(dim_err!("row {r} of a {}-row tensor", n.rows));
        }
        let c = n.cols;
        let value = n.value[r * c..(r + 1) * c].to_vec();
        Ok(self.push(1, c, value, Op::Row(a.index, r)))
    }

    /// Selects columns `start..start + len`.
    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.node(a)?;
        if start + len > n.cols {
            return Err(dim_err!(
                "columns {start}..{} of a {}-column tensor",
                start + len,
                n.cols
            ));
        }
        let c = n.cols;
        let value = n
            .value
            .chunks(c)
            .flat_map(|chunk| chunk[start..start + len].iter().copied())
            .collect();
        let r = n.rows;
        Ok(self.push(r, len, value, Op::Cols(a.index, start)))
    }

    /// Concatenates along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Empty("concat of zero tensors".into()))?;
        let rows = self.node(first)?.rows;
        let mut total = 0;
        for &p in parts {
            let n = self.node(p)?;
            if n.rows != rows {
                return Err(dim_err!("concat rows {} vs {rows}", n.rows));
            }
            total += n.cols;
        }
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let n = &self.nodes[p.index];
                value.extend_from_slice(&n.value[r * n.cols..(r + 1) * n.cols]);
            }
        }
        let idx = parts.iter().map(|p| p.index).collect();
        Ok(self.push(rows, total, value, Op::ConcatCols(idx)))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let n = self.node(loss).map_err(|_| {
            Error::Tape("backward called on a value that was not recorded on this tape".into())
        })?;
        if n.value.len() != 1 {
            return Err(Error::Tape(format!(
                "backward needs a scalar loss, found {}x{}",
                n.rows, n.cols
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.index + 1];
        grads[loss.index] = Some(vec![T::one()]);
        for i in (0..=loss.index).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.pull_back(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    /// Runs the reverse sweep and stores each parameter's gradient in `store`.
    ///
    /// Parameters that do not influence the loss receive a zero gradient.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<Gradients<T>> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (i, node) in self.nodes.iter().enumerate().take(grads.grads.len()) {
            if let (Some(id), Some(g)) = (node.param, &grads.grads[i]) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
        for t in store.tensors_mut() {
            if t.grad().is_none() {
                let zeros = vec![T::zero(); t.len()];
                t.set_grad(zeros).expect("matching length");
            }
        }
        Ok(grads)
    }

    fn pull_back(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |j: usize, contrib: Vec<T>| match &mut grads[j] {
            Some(existing) => existing
                .iter_mut()
                .zip(&contrib)
                .for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(contrib),
        };
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                let (n, k, m) = (na.rows, na.cols, nb.cols);
                // dA = G . B^T ; dB = A^T . G
                acc(a, matmul_nt(g, &nb.value, n, m, k));
                acc(b, matmul_tn(&na.value, g, n, k, m));
            }
            Op::MatMulNt(a, b) => {
                let (na, nb) = (&self.nodes[a], &self.nodes[b]);
                let (n, k, m) = (na.rows, na.cols, nb.rows);
                // C = A . B^T ; dA = G . B ; dB = G^T . A
                acc(a, matmul_nn(g, &nb.value, n, m, k));
                acc(b, matmul_tn(g, &na.value, n, m, k));
            }
            Op::Add(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(a, g.to_vec());
                acc(b, g.iter().map(|&x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                acc(a, g.iter().zip(vb).map(|(&x, &y)| x * y).collect());
                acc(b, g.iter().zip(va).map(|(&x, &y)| x * y).collect());
            }
            Op::Div(a, b) => {
                let vb = &self.nodes[b].value;
                acc(a, g.iter().zip(vb).map(|(&x, &y)| x / y).collect());
                acc(
                    b,
                    g.iter()
                        .zip(out)
                        .zip(vb)
                        .map(|((&x, &q), &y)| -x * q / y)
                        .collect(),
                );
            }
            Op::AddRow(a, row) => {
                let c = node.cols;
                acc(a, g.to_vec());
                acc(row, column_sums(g, c));
            }
            Op::MulRow(a, row) => {
                let c = node.cols;
                let (va, vr) = (&self.nodes[a].value, &self.nodes[row].value);
                acc(
                    a,
                    g.chunks(c)
                        .flat_map(|chunk| chunk.iter().zip(vr).map(|(&x, &y)| x * y))
                        .collect(),
                );
                let prod: Vec<T> = g.iter().zip(va).map(|(&x, &y)| x * y).collect();
                acc(row, column_sums(&prod, c));
            }
            Op::Scale(a, k) => acc(a, g.iter().map(|&x| x * k).collect()),
            Op::AddScalar(a, _) => acc(a, g.to_vec()),
            Op::Relu(a) => {
                let va = &self.nodes[a].value;
                acc(
                    a,
                    g.iter()
                        .zip(va)
                        .map(|(&x, &y)| if y > T::zero() { x } else { T::zero() })
                        .collect(),
                );
            }
            Op::Exp(a) => acc(a, g.iter().zip(out).map(|(&x, &y)| x * y).collect()),
            Op::Log(a) => {
                let va = &self.nodes[a].value;
                acc(a, g.iter().zip(va).map(|(&x, &y)| x / y).collect());
            }
            Op::Square(a) => {
                let va = &self.nodes[a].value;
                let two = T::lit(2.0);
                acc(a, g.iter().zip(va).map(|(&x, &y)| two * x * y).collect());
            }
            Op::Sqrt(a) => {
                let half = T::lit(0.5);
                acc(a, g.iter().zip(out).map(|(&x, &y)| half * x / y).collect());
            }
            Op::Recip(a) => acc(a, g.iter().zip(out).map(|(&x, &y)| -x * y * y).collect()),
            Op::ClampMin(a, floor) => {
                let va = &self.nodes[a].value;
                acc(
                    a,
                    g.iter()
                        .zip(va)
                        .map(|(&x, &y)| if y > floor { x } else { T::zero() })
                        .collect(),
                );
            }
            Op::Sum(a) => acc(a, vec![g[0]; self.nodes[a].value.len()]),
            Op::Mean(a) => {
                let n = self.nodes[a].value.len();
                acc(a, vec![g[0] / T::from_count(n); n]);
            }
            Op::SumCols(a) => {
                let c = self.nodes[a].cols;
                acc(
                    a,
                    g.iter().flat_map(|&x| std::iter::repeat_n(x, c)).collect(),
                );
            }
            Op::Softmax(a, axis) => {
                acc(a, softmax_backward(out, g, node.rows, node.cols, axis));
            }
            Op::Row(a, r) => {
                let na = &self.nodes[a];
                let mut d = vec![T::zero(); na.value.len()];
                d[r * na.cols..(r + 1) * na.cols].copy_from_slice(g);
                acc(a, d);
            }
            Op::Cols(a, start) => {
                let na = &self.nodes[a];
                let len = node.cols;
                let mut d = vec![T::zero(); na.value.len()];
                for (r, chunk) in g.chunks(len).enumerate() {
                    d[r * na.cols + start..r * na.cols + start + len].copy_from_slice(chunk);
                }
                acc(a, d);
            }
            Op::ConcatCols(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p].cols;
                    let d = g
                        .chunks(node.cols)
                        .flat_map(|chunk| chunk[offset..offset + c].iter().copied())
                        .collect();
                    acc(p, d);
                    offset += c;
                }
            }
        }
    }
}

fn column_sums<T: Scalar>(g: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for chunk in g.chunks(cols) {
        s.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
    }
    s
}

/// `a (n x k) . b (k x m)`.
pub(crate) fn matmul_nn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut c = vec![T::zero(); n * m];
    for i in 0..n {
        let ci = &mut c[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let bp = &b[p * m..(p + 1) * m];
            ci.iter_mut().zip(bp).for_each(|(x, &y)| *x += aip * y);
        }
    }
    c
}

/// `a (n x k) . b^T` with `b` stored `m x k`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut c = vec![T::zero(); n * m];
    for i in 0..n {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let bj = &b[j * k..(j + 1) * k];
            c[i * m + j] = ai
                .iter()
                .zip(bj)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
        }
    }
    c
}

/// `a^T . b` with `a` stored `n x k` and `b` stored `n x m`; result `k x m`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut c = vec![T::zero(); k * m];
    for i in 0..n {
        let bi = &b[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            let cp = &mut c[p * m..(p + 1) * m];
            cp.iter_mut().zip(bi).for_each(|(x, &y)| *x += aip * y);
        }
    }
    c
}

fn softmax_values<T: Scalar>(v: &[T], rows: usize, cols: usize, axis: Axis) -> Vec<T> {
    let mut out = vec![T::zero(); v.len()];
    let (groups, len, stride, step): (usize, usize, usize, usize) = match axis {
        Axis::Cols => (rows, cols, cols, 1),
        Axis::Rows => (cols, rows, 1, cols),
    };
    for gi in 0..groups {
        let at = |j: usize| gi * stride + j * step;
        let max = (0..len).map(|j| v[at(j)]).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for j in 0..len {
            let e = (v[at(j)] - max).exp();
            out[at(j)] = e;
            total += e;
        }
        for j in 0..len {
            out[at(j)] /= total;
        }
    }
    out
}

fn softmax_backward<T: Scalar>(s: &[T], g: &[T], rows: usize, cols: usize, axis: Axis) -> Vec<T> {
    let mut d = vec![T::zero(); s.len()];
    let (groups, len, stride, step): (usize, usize, usize, usize) = match axis {
        Axis::Cols => (rows, cols, cols, 1),
        Axis::Rows => (cols, rows, 1, cols),
    };
    for gi in 0..groups {
        let at = |j: usize| gi * stride + j * step;
        let dot = (0..len).fold(T::zero(), |acc, j| acc + g[at(j)] * s[at(j)]);
        for j in 0..len {
            d[at(j)] = s[at(j)] * (g[at(j)] - dot);
        }
    }
    d
}
