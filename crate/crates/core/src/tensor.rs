//! A small dense reverse-mode differentiation engine.
//!
//! All tensors are row-major matrices (`[rows, cols]`; a scalar is `[1, 1]`).
//! Operations are recorded on a [`Tape`] in evaluation order, so every node's
//! parents precede it and [`Tape::backward`] is a single reverse sweep.
//! Gradients are accumulated in that fixed order, which keeps repeated runs
//! bit-identical.
//!
//! Broadcasting is limited to adding a `[1, n]` row or an `[m, 1]` column to
//! an `[m, n]` matrix; anything else needs an explicit [`Tape::reshape`].

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 2],
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape {
                op: "tensor",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape: [rows, cols],
            values,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: [rows, cols],
            values: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor {
            shape: [rows, cols],
            values: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: [1, 1],
            values: vec![v],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(n, n);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Input("ragged rows".into()));
        }
        Ok(Tensor {
            shape: [rows.len(), cols],
            values: rows.concat(),
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.shape[1] + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.values[r * cols + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.get(r, c)).collect()
    }

    /// The single value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.values.len(), 1);
        self.values[0]
    }
}

/// `c = alpha·op(a)·op(b) + beta·c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    // row-major a is [m,k] (or [k,m] when transposed)
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    Row,
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Affine(Var, Var, Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxColumns(Var, f64),
    Sum(Var),
    Mean(Var),
    L2NormalizeRows(Var, f64),
    MaskedSumOfSquares(Var, Vec<f64>),
    Reshape(Var),
    Transpose(Var),
    MaxRows(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Guard used by [`Tape::l2_normalize_rows`] at the zero vector.
pub const NORMALIZE_EPS: f64 = 1e-12;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &self.value(a).values,
            false,
            &self.value(b).values,
            false,
            &mut out.values,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x·w + b` with `b` a `[1, n]` row; one fused node.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(x);
        let [k2, n] = self.shape(w);
        if k != k2 {
            return Err(self.mismatch("affine", x, w));
        }
        if self.shape(b) != [1, n] {
            return Err(self.mismatch("affine bias", w, b));
        }
        let bias = &self.value(b).values;
        let mut out = Tensor::zeros(m, n);
        for row in out.values.chunks_mut(n.max(1)) {
            row.copy_from_slice(bias);
        }
        gemm(
            m,
            k,
            n,
            &self.value(x).values,
            false,
            &self.value(w).values,
            false,
            &mut out.values,
            1.0,
        );
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::Affine(x, w, b), rg))
    }

    /// Elementwise sum. `b` may also be a `[1, n]` row or `[m, 1]` column.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, n] = self.shape(a);
        let bshape = self.shape(b);
        let mode = if bshape == [m, n] {
            Broadcast::None
        } else if bshape == [1, n] {
            Broadcast::Row
        } else if bshape == [m, 1] {
            Broadcast::Col
        } else {
            return Err(self.mismatch("add", a, b));
        };
        let av = &self.value(a).values;
        let bv = &self.value(b).values;
        let values = (0..m * n)
            .map(|i| {
                av[i]
                    + match mode {
                        Broadcast::None => bv[i],
                        Broadcast::Row => bv[i % n],
                        Broadcast::Col => bv[i / n],
                    }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor {
                shape: [m, n],
                values,
            },
            Op::Add(a, b, mode),
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            Err(self.mismatch(op, a, b))
        } else {
            Ok(())
        }
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        Tensor {
            shape: av.shape,
            values: av.values.iter().zip(&bv.values).map(|(x, y)| f(*x, *y)).collect(),
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_values(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_values(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        let out = Tensor {
            shape: av.shape,
            values: av.values.iter().map(|x| x * s).collect(),
        };
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let out = Tensor {
            shape: av.shape,
            values: av.values.iter().map(|x| x.max(0.0)).collect(),
        };
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Column-wise softmax of `scale · a`.
    pub fn softmax_columns(&mut self, a: Var, scale: f64) -> Var {
        let out = softmax_columns(self.value(a), scale);
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxColumns(a, scale), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).values.iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.values.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                lhs: av.shape.to_vec(),
                rhs: vec![],
            });
        }
        let s = av.values.iter().sum::<f64>() / av.values.len() as f64;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Mean(a), rg))
    }

    /// Each row divided by `max(‖row‖, NORMALIZE_EPS)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let n = av.cols();
        let mut values = av.values.clone();
        for row in values.chunks_mut(n.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORMALIZE_EPS);
            row.iter_mut().for_each(|x| *x /= norm);
        }
        let rg = self.rg(a);
        self.push(
            Tensor {
                shape: av.shape,
                values,
            },
            Op::L2NormalizeRows(a, NORMALIZE_EPS),
            rg,
        )
    }

    /// `Σ_i mask_i · Σ_j a_ij²` with one weight per row.
    pub fn masked_sum_of_squares(&mut self, a: Var, mask: &[f64]) -> Result<Var> {
        let [m, n] = self.shape(a);
        if mask.len() != m {
            return Err(Error::Shape {
                op: "masked_sum_of_squares",
                lhs: vec![m, n],
                rhs: vec![mask.len()],
            });
        }
        let av = &self.value(a).values;
        let mut s = 0.0;
        for (i, w) in mask.iter().enumerate() {
            if *w != 0.0 {
                s += w * av[i * n..(i + 1) * n].iter().map(|x| x * x).sum::<f64>();
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::MaskedSumOfSquares(a, mask.to_vec()), rg))
    }

    /// Same values, new `[rows, cols]`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let av = self.value(a);
        if av.len() != rows * cols {
            return Err(Error::Shape {
                op: "reshape",
                lhs: av.shape.to_vec(),
                rhs: vec![rows, cols],
            });
        }
        let out = Tensor {
            shape: [rows, cols],
            values: av.values.clone(),
        };
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = transpose(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    /// Column-wise maximum over rows: `[m, n] → [1, n]`. The gradient flows
    /// to the first maximal row of each column.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let [m, n] = av.shape;
        if m == 0 {
            return Err(Error::Shape {
                op: "max_rows",
                lhs: av.shape.to_vec(),
                rhs: vec![],
            });
        }
        let mut best = av.values[..n].to_vec();
        let mut arg = vec![0usize; n];
        for r in 1..m {
            let row = &av.values[r * n..(r + 1) * n];
            for c in 0..n {
                if row[c] > best[c] {
                    best[c] = row[c];
                    arg[c] = r;
                }
            }
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor {
                shape: [1, n],
                values: best,
            },
            Op::MaxRows(a, arg),
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Afterwards every node that
    /// requires a gradient has one; leaves the loss does not depend on get
    /// zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1, 1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(vec![0.0; node.value.len()]);
            }
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0)?.as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape,
            values: g.clone(),
        })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let [m, n] = node.value.shape;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let k = self.shape(*a)[1];
                if self.rg(*a) {
                    let ga = slot(grads, *a, m * k);
                    gemm(m, n, k, g, false, &self.value(*b).values, true, ga, 1.0);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, k * n);
                    gemm(k, m, n, &self.value(*a).values, true, g, false, gb, 1.0);
                }
            }
            Op::Affine(x, w, b) => {
                let k = self.shape(*x)[1];
                if self.rg(*x) {
                    let gx = slot(grads, *x, m * k);
                    gemm(m, n, k, g, false, &self.value(*w).values, true, gx, 1.0);
                }
                if self.rg(*w) {
                    let gw = slot(grads, *w, k * n);
                    gemm(k, m, n, &self.value(*x).values, true, g, false, gw, 1.0);
                }
                if self.rg(*b) {
                    let gb = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Add(a, b, mode) => {
                if self.rg(*a) {
                    accumulate(slot(grads, *a, m * n), g.iter().copied());
                }
                if self.rg(*b) {
                    match mode {
                        Broadcast::None => accumulate(slot(grads, *b, m * n), g.iter().copied()),
                        Broadcast::Row => {
                            let gb = slot(grads, *b, n);
                            for row in g.chunks(n) {
                                for (acc, v) in gb.iter_mut().zip(row) {
                                    *acc += v;
                                }
                            }
                        }
                        Broadcast::Col => {
                            let gb = slot(grads, *b, m);
                            for (acc, row) in gb.iter_mut().zip(g.chunks(n)) {
                                *acc += row.iter().sum::<f64>();
                            }
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    accumulate(slot(grads, *a, m * n), g.iter().copied());
                }
                if self.rg(*b) {
                    accumulate(slot(grads, *b, m * n), g.iter().map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let bv = &self.value(*b).values;
                    accumulate(slot(grads, *a, m * n), g.iter().zip(bv).map(|(g, y)| g * y));
                }
                if self.rg(*b) {
                    let av = &self.value(*a).values;
                    accumulate(slot(grads, *b, m * n), g.iter().zip(av).map(|(g, x)| g * x));
                }
            }
            Op::Scale(a, s) => {
                accumulate(slot(grads, *a, m * n), g.iter().map(|v| v * s));
            }
            Op::Relu(a) => {
                let av = &self.value(*a).values;
                accumulate(
                    slot(grads, *a, m * n),
                    g.iter().zip(av).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                );
            }
            Op::SoftmaxColumns(a, s) => {
                let y = &node.value.values;
                let ga = slot(grads, *a, m * n);
                for c in 0..n {
                    let dot: f64 = (0..m).map(|r| g[r * n + c] * y[r * n + c]).sum();
                    for r in 0..m {
                        let i = r * n + c;
                        ga[i] += s * y[i] * (g[i] - dot);
                    }
                }
            }
            Op::Sum(a) => {
                let len = self.value(*a).len();
                accumulate(slot(grads, *a, len), std::iter::repeat(g[0]).take(len));
            }
            Op::Mean(a) => {
                let len = self.value(*a).len();
                let v = g[0] / len as f64;
                accumulate(slot(grads, *a, len), std::iter::repeat(v).take(len));
            }
            Op::L2NormalizeRows(a, eps) => {
                let x = &self.value(*a).values;
                let y = &node.value.values;
                let ga = slot(grads, *a, m * n);
                for r in 0..m {
                    let xs = &x[r * n..(r + 1) * n];
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let norm = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let out = &mut ga[r * n..(r + 1) * n];
                    if norm > *eps {
                        let yg: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            out[c] += (gs[c] - ys[c] * yg) / norm;
                        }
                    } else {
                        for c in 0..n {
                            out[c] += gs[c] / eps;
                        }
                    }
                }
            }
            Op::MaskedSumOfSquares(a, mask) => {
                let x = &self.value(*a).values;
                let [am, an] = self.shape(*a);
                let ga = slot(grads, *a, am * an);
                for (r, w) in mask.iter().enumerate() {
                    if *w != 0.0 {
                        for c in 0..an {
                            let i = r * an + c;
                            ga[i] += 2.0 * w * x[i] * g[0];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                accumulate(slot(grads, *a, m * n), g.iter().copied());
            }
            Op::Transpose(a) => {
                // node is [m, n], parent is [n, m]
                let ga = slot(grads, *a, m * n);
                for r in 0..m {
                    for c in 0..n {
                        ga[c * m + r] += g[r * n + c];
                    }
                }
            }
            Op::MaxRows(a, arg) => {
                let [am, an] = self.shape(*a);
                let ga = slot(grads, *a, am * an);
                for (c, r) in arg.iter().enumerate() {
                    ga[r * an + c] += g[c];
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn transpose(t: &Tensor) -> Tensor {
    let [m, n] = t.shape;
    let mut values = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            values[c * m + r] = t.values[r * n + c];
        }
    }
    Tensor {
        shape: [n, m],
        values,
    }
}

/// Column-wise softmax of `scale · t`, stabilized by the column maximum.
pub fn softmax_columns(t: &Tensor, scale: f64) -> Tensor {
    let [m, n] = t.shape;
    let mut values = vec![0.0; m * n];
    for c in 0..n {
        let max = (0..m)
            .map(|r| scale * t.values[r * n + c])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in 0..m {
            let e = (scale * t.values[r * n + c] - max).exp();
            values[r * n + c] = e;
            total += e;
        }
        for r in 0..m {
            values[r * n + c] /= total;
        }
    }
    Tensor {
        shape: [m, n],
        values,
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for a list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of every parameter in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    opt: &Adam,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len(), state.m.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape != g.shape {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: p.shape.to_vec(),
                rhs: g.shape.to_vec(),
            });
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..p.values.len() {
            let gi = g.values[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p.values[i] -= opt.lr * mhat / (vhat.sqrt() + opt.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = t.constant(Tensor::identity(2));
        let y = t.matmul(a, i).unwrap();
        assert_eq!(t.value(y).values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(2, 3));
        let b = t.constant(Tensor::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_scale_zero_is_uniform() {
        let x = Tensor::from_rows(&[vec![1.0, -3.0], vec![5.0, 0.2], vec![-2.0, 9.0]]).unwrap();
        let y = softmax_columns(&x, 0.0);
        for v in y.values() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_columns_stochastic_even_when_saturated() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.01, 0.0], vec![0.5, 1.0]]).unwrap();
        for scale in [1.0, 10.0, 1e3, 1e6] {
            let y = softmax_columns(&x, scale);
            for c in 0..2 {
                let col = y.column(c);
                assert!(col.iter().all(|v| *v >= 0.0));
                assert_abs_diff_eq!(col.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn normalize_rows() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![3.0, 4.0, 0.0]]).unwrap());
        let y = t.l2_normalize_rows(a);
        assert_eq!(t.value(y).values(), &[0.6, 0.8, 0.0]);
        let z = t.constant(Tensor::zeros(1, 3));
        let y = t.l2_normalize_rows(z);
        assert_eq!(t.value(y).values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().values(), &[1.0, 1.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let sq = t.mul(x, x).unwrap();
        let s = t.sum(sq);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_grad() {
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(2, 2, 1.0));
        let unused = t.param(Tensor::filled(1, 3, 5.0));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(unused).unwrap().values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::filled(2, 2, 1.0));
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn max_rows_routes_to_first_max() {
        let mut t = Tape::new();
        let x = t.param(Tensor::from_rows(&[vec![1.0, 5.0], vec![1.0, 2.0]]).unwrap());
        let m = t.max_rows(x).unwrap();
        assert_eq!(t.value(m).values(), &[1.0, 5.0]);
        let s = t.sum(m);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().values(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn broadcast_add() {
        let mut t = Tape::new();
        let a = t.param(Tensor::zeros(2, 3));
        let row = t.param(Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let col = t.param(Tensor::new(2, 1, vec![10.0, 20.0]).unwrap());
        let y = t.add(a, row).unwrap();
        let y = t.add(y, col).unwrap();
        assert_eq!(t.value(y).values(), &[11.0, 12.0, 13.0, 21.0, 22.0, 23.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(row).unwrap().values(), &[2.0, 2.0, 2.0]);
        assert_eq!(t.grad(col).unwrap().values(), &[3.0, 3.0]);
        let bad = t.constant(Tensor::zeros(3, 2));
        assert!(t.add(a, bad).is_err());
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut params = vec![Tensor::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        let grads = vec![Tensor::zeros(1, 3)];
        for _ in 0..5 {
            adam_step(&mut params, &grads, &mut state, &Adam::default()).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = vec![Tensor::new(1, 3, vec![0.5, -1.0, 2.0]).unwrap()];
        let mut state = AdamState::new(&params);
        let grads = vec![Tensor::new(1, 3, vec![3.0, -0.2, 1e-3]).unwrap()];
        let opt = Adam {
            lr: 0.01,
            ..Adam::default()
        };
        adam_step(&mut params, &grads, &mut state, &opt).unwrap();
        // mhat = g and vhat = g², so the step is lr·g/(|g| + eps)
        let expect = [0.5 - 0.01, -1.0 + 0.01, 2.0 - 0.01];
        for (p, e) in params[0].values().iter().zip(expect) {
            assert_abs_diff_eq!(*p, e, epsilon = 1e-7);
        }
        assert_eq!(Adam::default().lr, 1e-4);
    }
}
