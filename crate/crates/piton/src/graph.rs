//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! A [`Graph`] records operations eagerly: every builder method computes its
//! value on construction and returns a [`NodeId`]. Calling [`Graph::backward`]
//! on a scalar node replays the tape in reverse and accumulates adjoints.
//! Losses are built by closures over a [`Bound`] parameter map, which is what
//! [`grad_params`] and [`fd_check`] consume.
//!
//! All values are `f64` matrices in row-major order. Reductions run in a
//! fixed order (full sums sort their addends first), so evaluation is
//! bitwise deterministic and sum nodes are invariant under permutation of
//! their input's elements.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    /// Constant or parameter leaf.
    Leaf,
    /// `[m,k] x [k,n]`.
    MatMul { a: NodeId, b: NodeId },
    /// `[m,k] x [n,k]^T`.
    MatMulTransB { a: NodeId, b: NodeId },
    /// `[m,n] + [1,n]` broadcast down rows.
    AddRow { a: NodeId, row: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    AddConst { a: NodeId, c: f64 },
    Tanh { a: NodeId },
    Square { a: NodeId },
    /// Signed power `sgn(x) |x|^m` (equals `x^m` for odd `m`).
    SignedPow { a: NodeId, m: i32 },
    /// Column-wise concatenation.
    ConcatCols { parts: Vec<NodeId> },
    /// Sum of all elements -> `[1,1]`, addends sorted before accumulation.
    Sum { a: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatMulTransB { .. } => "matmul_transb",
            Op::AddRow { .. } => "add_row",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddConst { .. } => "add_const",
            Op::Tanh { .. } => "tanh",
            Op::Square { .. } => "square",
            Op::SignedPow { .. } => "signed_pow",
            Op::ConcatCols { .. } => "concat_cols",
            Op::Sum { .. } => "sum",
        }
    }
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
}

/// Name -> leaf node map for one bound [`ParamSet`].
pub struct Bound {
    map: HashMap<String, NodeId>,
}

impl Bound {
    /// Node id of a bound parameter. Errors on unknown names.
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParam(name.into()))
    }
}

/// Adjoint buffers from one backward pass, indexed by node id.
pub struct Adjoints {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.bufs.get(id).and_then(|b| b.as_deref())
    }
}

/// Signed power and its derivative factor.
fn signed_pow(x: f64, m: i32) -> f64 {
    x.signum() * x.abs().powi(m)
}

fn signed_pow_deriv(x: f64, m: i32) -> f64 {
    m as f64 * x.abs().powi(m - 1)
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId, bool)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dims(&self, id: NodeId) -> (usize, usize) {
        (self.nodes[id].rows, self.nodes[id].cols)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Value of a `[1,1]` node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    pub fn value_tensor(&self, id: NodeId) -> Tensor {
        let n = &self.nodes[id];
        Tensor::from_vec(vec![n.rows, n.cols], n.value.clone()).expect("node shape consistent")
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
        });
        id
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<f64>) -> NodeId {
        assert_eq!(value.len(), rows * cols, "constant shape mismatch");
        self.push(Op::Leaf, rows, cols, value)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> NodeId {
        let (r, c) = t.matrix_dims();
        self.push(Op::Leaf, r, c, t.data().to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Leaf, 1, 1, vec![v])
    }

    /// Bind every entry of a parameter set as a leaf and remember which
    /// leaves are trainable.
    pub fn bind(&mut self, params: &ParamSet) -> Bound {
        let mut map = HashMap::with_capacity(params.len());
        for p in params.iter() {
            let (r, c) = p.value.matrix_dims();
            let id = self.push(Op::Leaf, r, c, p.value.data().to_vec());
            self.params.push((p.name.clone(), id, p.trainable));
            map.insert(p.name.clone(), id);
        }
        Bound { map }
    }

    fn shape_err(&self, context: &str, expected: String, a: NodeId) -> Error {
        Error::ShapeMismatch {
            context: context.into(),
            expected,
            actual: format!("{:?}", self.dims(a)),
        }
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", format!("[{m},{k}] x [{k},*]"), b));
        }
        let mut out = vec![0.0; m * n];
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.nodes[a].value.as_ptr(),
                k as isize,
                1,
                self.nodes[b].value.as_ptr(),
                n as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(self.push(Op::MatMul { a, b }, m, n, out))
    }

    /// `a [m,k]` times the transpose of `b [n,k]`.
    pub fn matmul_transb(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul_transb", format!("[{m},{k}] x [*,{k}]^T"), b));
        }
        let mut out = vec![0.0; m * n];
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.nodes[a].value.as_ptr(),
                k as isize,
                1,
                self.nodes[b].value.as_ptr(),
                1,
                k as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(self.push(Op::MatMulTransB { a, b }, m, n, out))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        let (r1, n2) = self.dims(row);
        if r1 != 1 || n != n2 {
            return Err(self.shape_err("add_row", format!("[1,{n}] row"), row));
        }
        let mut out = self.nodes[a].value.clone();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += self.nodes[row].value[j];
            }
        }
        Ok(self.push(Op::AddRow { a, row }, m, n, out))
    }

    fn elementwise(
        &mut self,
        ctx: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (m, n) = self.dims(a);
        if self.dims(b) != (m, n) {
            return Err(self.shape_err(ctx, format!("[{m},{n}]"), b));
        }
        let out: Vec<f64> = self.nodes[a]
            .value
            .iter()
            .zip(self.nodes[b].value.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(op, m, n, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.nodes[a].value.iter().map(|&x| x * c).collect();
        self.push(Op::Scale { a, c }, m, n, out)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.nodes[a].value.iter().map(|&x| x + c).collect();
        self.push(Op::AddConst { a, c }, m, n, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.nodes[a].value.iter().map(|&x| x.tanh()).collect();
        self.push(Op::Tanh { a }, m, n, out)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let (m, n) = self.dims(a);
        let out: Vec<f64> = self.nodes[a].value.iter().map(|&x| x * x).collect();
        self.push(Op::Square { a }, m, n, out)
    }

    /// `sgn(x) |x|^m` elementwise; `m >= 1`.
    pub fn signed_pow(&mut self, a: NodeId, m: i32) -> NodeId {
        assert!(m >= 1, "signed_pow requires m >= 1");
        let (r, c) = self.dims(a);
        let out: Vec<f64> = self.nodes[a].value.iter().map(|&x| signed_pow(x, m)).collect();
        self.push(Op::SignedPow { a, m }, r, c, out)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let m = self.dims(parts[0]).0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims(p);
            if r != m {
                return Err(self.shape_err("concat_cols", format!("{m} rows"), p));
            }
            total += c;
        }
        let mut out = vec![0.0; m * total];
        let mut col0 = 0;
        for &p in parts {
            let (_, c) = self.dims(p);
            let src = &self.nodes[p].value;
            for i in 0..m {
                out[i * total + col0..i * total + col0 + c]
                    .copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            col0 += c;
        }
        Ok(self.push(
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            m,
            total,
            out,
        ))
    }

    /// Sum of all elements. Addends are sorted by `total_cmp` before
    /// accumulation, so the value does not depend on element order.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let mut vals = self.nodes[a].value.clone();
        vals.sort_unstable_by(f64::total_cmp);
        let s = vals.iter().sum();
        self.push(Op::Sum { a }, 1, 1, vec![s])
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Reverse pass from a scalar node. Errors if the seed is not a finite
    /// scalar or if any adjoint buffer picks up a NaN.
    pub fn backward(&self, loss: NodeId) -> Result<Adjoints> {
        let seed = &self.nodes[loss];
        if seed.value.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "backward".into(),
                expected: "[1,1] scalar loss".into(),
                actual: format!("{:?}", (seed.rows, seed.cols)),
            });
        }
        if !seed.value[0].is_finite() {
            return Err(Error::NonFiniteLoss {
                value: seed.value[0],
            });
        }

        let mut bufs: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        bufs[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(adj) = bufs[id].take() else { continue };
            if adj.iter().any(|v| v.is_nan()) {
                return Err(Error::BackwardNaN {
                    op: self.nodes[id].op.name(),
                });
            }
            self.propagate(id, &adj, &mut bufs);
            bufs[id] = Some(adj);
        }
        Ok(Adjoints { bufs })
    }

    fn ensure(bufs: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
        bufs[id].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, id: NodeId, adj: &[f64], bufs: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                {
                    let da = Self::ensure(bufs, *a, m * k);
                    // dA += dC * B^T
                    unsafe {
                        matrixmultiply::dgemm(
                            m,
                            n,
                            k,
                            1.0,
                            adj.as_ptr(),
                            n as isize,
                            1,
                            self.nodes[*b].value.as_ptr(),
                            1,
                            n as isize,
                            1.0,
                            da.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                let db = Self::ensure(bufs, *b, k * n);
                // dB += A^T * dC
                unsafe {
                    matrixmultiply::dgemm(
                        k,
                        m,
                        n,
                        1.0,
                        self.nodes[*a].value.as_ptr(),
                        1,
                        k as isize,
                        adj.as_ptr(),
                        n as isize,
                        1,
                        1.0,
                        db.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
            Op::MatMulTransB { a, b } => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).0;
                {
                    let da = Self::ensure(bufs, *a, m * k);
                    // dA += dC * B
                    unsafe {
                        matrixmultiply::dgemm(
                            m,
                            n,
                            k,
                            1.0,
                            adj.as_ptr(),
                            n as isize,
                            1,
                            self.nodes[*b].value.as_ptr(),
                            k as isize,
                            1,
                            1.0,
                            da.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                let db = Self::ensure(bufs, *b, n * k);
                // dB += dC^T * A
                unsafe {
                    matrixmultiply::dgemm(
                        n,
                        m,
                        k,
                        1.0,
                        adj.as_ptr(),
                        1,
                        n as isize,
                        self.nodes[*a].value.as_ptr(),
                        k as isize,
                        1,
                        1.0,
                        db.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
            }
            Op::AddRow { a, row } => {
                let (m, n) = (node.rows, node.cols);
                {
                    let da = Self::ensure(bufs, *a, m * n);
                    for (d, &g) in da.iter_mut().zip(adj.iter()) {
                        *d += g;
                    }
                }
                let dr = Self::ensure(bufs, *row, n);
                for j in 0..n {
                    let mut s = dr[j];
                    for i in 0..m {
                        s += adj[i * n + j];
                    }
                    dr[j] = s;
                }
            }
            Op::Add { a, b } => {
                for &src in [a, b].iter() {
                    let d = Self::ensure(bufs, *src, adj.len());
                    for (x, &g) in d.iter_mut().zip(adj.iter()) {
                        *x += g;
                    }
                }
            }
            Op::Sub { a, b } => {
                {
                    let da = Self::ensure(bufs, *a, adj.len());
                    for (x, &g) in da.iter_mut().zip(adj.iter()) {
                        *x += g;
                    }
                }
                let db = Self::ensure(bufs, *b, adj.len());
                for (x, &g) in db.iter_mut().zip(adj.iter()) {
                    *x -= g;
                }
            }
            Op::Mul { a, b } => {
                {
                    let bv = &self.nodes[*b].value;
                    let da = Self::ensure(bufs, *a, adj.len());
                    for i in 0..adj.len() {
                        da[i] += adj[i] * bv[i];
                    }
                }
                let av = &self.nodes[*a].value;
                let db = Self::ensure(bufs, *b, adj.len());
                for i in 0..adj.len() {
                    db[i] += adj[i] * av[i];
                }
            }
            Op::Scale { a, c } => {
                let da = Self::ensure(bufs, *a, adj.len());
                for (x, &g) in da.iter_mut().zip(adj.iter()) {
                    *x += g * c;
                }
            }
            Op::AddConst { a, .. } => {
                let da = Self::ensure(bufs, *a, adj.len());
                for (x, &g) in da.iter_mut().zip(adj.iter()) {
                    *x += g;
                }
            }
            Op::Tanh { a } => {
                let y = &node.value;
                let da = Self::ensure(bufs, *a, adj.len());
                for i in 0..adj.len() {
                    da[i] += adj[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Square { a } => {
                let x = &self.nodes[*a].value;
                let da = Self::ensure(bufs, *a, adj.len());
                for i in 0..adj.len() {
                    da[i] += adj[i] * 2.0 * x[i];
                }
            }
            Op::SignedPow { a, m } => {
                let x = &self.nodes[*a].value;
                let da = Self::ensure(bufs, *a, adj.len());
                for i in 0..adj.len() {
                    da[i] += adj[i] * signed_pow_deriv(x[i], *m);
                }
            }
            Op::ConcatCols { parts } => {
                let total = node.cols;
                let m = node.rows;
                let mut col0 = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    let dp = Self::ensure(bufs, p, m * c);
                    for i in 0..m {
                        for j in 0..c {
                            dp[i * c + j] += adj[i * total + col0 + j];
                        }
                    }
                    col0 += c;
                }
            }
            Op::Sum { a } => {
                let g = adj[0];
                let da = Self::ensure(bufs, *a, self.nodes[*a].value.len());
                for x in da.iter_mut() {
                    *x += g;
                }
            }
        }
    }

    /// Gradient of the bound parameters, shaped like `params`. Non-trainable
    /// entries get zeros; trainable leaves that the loss never touched get
    /// zeros as well.
    pub fn param_grads(&self, adjoints: &Adjoints, params: &ParamSet) -> Result<ParamSet> {
        let mut grads = params.zeros_like();
        for (name, node, trainable) in &self.params {
            if !trainable {
                continue;
            }
            if let Some(adj) = adjoints.get(*node) {
                let entry = grads.get_mut(name)?;
                entry.value.data_mut().copy_from_slice(adj);
            }
        }
        Ok(grads)
    }
}

/// Evaluate a loss graph without differentiating.
pub fn eval_loss<F>(params: &ParamSet, build: F) -> Result<f64>
where
    F: FnOnce(&mut Graph, &Bound) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = build(&mut g, &bound)?;
    let (r, c) = g.dims(loss);
    if (r, c) != (1, 1) {
        return Err(Error::ShapeMismatch {
            context: "loss".into(),
            expected: "[1,1] scalar".into(),
            actual: format!("[{r},{c}]"),
        });
    }
    Ok(g.scalar_value(loss))
}

/// Loss value and its gradient with respect to every trainable parameter.
pub fn grad_params<F>(params: &ParamSet, build: F) -> Result<(f64, ParamSet)>
where
    F: FnOnce(&mut Graph, &Bound) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let bound = g.bind(params);
    let loss = build(&mut g, &bound)?;
    let (r, c) = g.dims(loss);
    if (r, c) != (1, 1) {
        return Err(Error::ShapeMismatch {
            context: "loss".into(),
            expected: "[1,1] scalar".into(),
            actual: format!("[{r},{c}]"),
        });
    }
    let value = g.scalar_value(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { value });
    }
    let adj = g.backward(loss)?;
    let grads = g.param_grads(&adj, params)?;
    Ok((value, grads))
}

/// Denominator floor for relative discrepancies.
pub const FD_EPS: f64 = 1e-12;

/// Max over trainable parameters of
/// `|analytic - central difference| / (|analytic| + 1e-12)`.
pub fn fd_check<F>(params: &ParamSet, h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<NodeId>,
{
    assert!(h > 0.0, "fd_check requires h > 0");
    let (_, grads) = grad_params(params, &build)?;
    let mut worst: f64 = 0.0;
    for p in params.iter().filter(|p| p.trainable) {
        for i in 0..p.value.len() {
            let analytic = grads.get(&p.name)?.value.data()[i];
            let mut plus = params.clone();
            plus.get_mut(&p.name)?.value.data_mut()[i] += h;
            let mut minus = params.clone();
            minus.get_mut(&p.name)?.value.data_mut()[i] -= h;
            let fd = (eval_loss(&plus, &build)? - eval_loss(&minus, &build)?) / (2.0 * h);
            let rel = (analytic - fd).abs() / (analytic.abs() + FD_EPS);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param_scalar(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v), true).unwrap();
        p
    }

    #[test]
    fn matmul_forward_and_grad() {
        // loss = sum(A*B) with A=[[1,2]], B=[[3],[4]] -> 11
        let mut params = ParamSet::new();
        params
            .insert("a", Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap(), true)
            .unwrap();
        params
            .insert("b", Tensor::from_vec(vec![2, 1], vec![3.0, 4.0]).unwrap(), true)
            .unwrap();
        let (v, grads) = grad_params(&params, |g, bound| {
            let a = bound.node("a")?;
            let b = bound.node("b")?;
            let c = g.matmul(a, b)?;
            Ok(g.sum(c))
        })
        .unwrap();
        assert_eq!(v, 11.0);
        assert_eq!(grads.get("a").unwrap().value.data(), &[3.0, 4.0]);
        assert_eq!(grads.get("b").unwrap().value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn hand_derived_quadratic() {
        // loss = (w*x - y)^2, w=1, x=2, y=1 -> dloss/dw = 2(w*x-y)*x = 4
        let params = param_scalar("w", 1.0);
        let (v, grads) = grad_params(&params, |g, bound| {
            let w = bound.node("w")?;
            let x = g.scalar(2.0);
            let wx = g.mul(w, x)?;
            let err = g.add_const(wx, -1.0);
            let sq = g.square(err);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(grads.get("w").unwrap().value.data(), &[4.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        // loss = sum w_i^2 at w=(1,-2) -> gradient (2,-4)
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap(), true)
            .unwrap();
        let (v, grads) = grad_params(&params, |g, bound| {
            let w = bound.node("w")?;
            let sq = g.square(w);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(v, 5.0);
        assert_eq!(grads.get("w").unwrap().value.data(), &[2.0, -4.0]);
    }

    #[test]
    fn independent_param_gets_zero_gradient() {
        let mut params = ParamSet::new();
        params.insert("used", Tensor::scalar(1.5), true).unwrap();
        params.insert("unused", Tensor::scalar(9.0), true).unwrap();
        params.insert("frozen", Tensor::scalar(2.0), false).unwrap();
        let (_, grads) = grad_params(&params, |g, bound| {
            let w = bound.node("used")?;
            let sq = g.square(w);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert_eq!(grads.get("unused").unwrap().value.data(), &[0.0]);
        assert_eq!(grads.get("frozen").unwrap().value.data(), &[0.0]);
        assert_eq!(grads.get("used").unwrap().value.data(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut params = ParamSet::new();
        params
            .insert("w", Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap(), true)
            .unwrap();
        let err = grad_params(&params, |g, bound| {
            let w = bound.node("w")?;
            Ok(g.square(w))
        });
        assert!(err.is_err());
    }

    #[test]
    fn fd_check_quadratic_is_nearly_exact() {
        let params = param_scalar("w", 0.7);
        let worst = fd_check(&params, 1e-5, |g, bound| {
            let w = bound.node("w")?;
            let sq = g.square(w);
            Ok(g.sum(sq))
        })
        .unwrap();
        assert!(worst < 1e-8, "quadratic fd discrepancy {worst}");
    }

    #[test]
    fn fd_check_zero_loss_is_zero() {
        let params = param_scalar("w", 0.3);
        let worst = fd_check(&params, 1e-5, |g, bound| {
            let w = bound.node("w")?;
            let z = g.scale(w, 0.0);
            Ok(g.sum(z))
        })
        .unwrap();
        assert_eq!(worst, 0.0);
    }

    #[test]
    fn signed_pow_matches_plain_power_for_odd() {
        let mut g = Graph::new();
        let x = g.constant(1, 3, vec![-2.0, 0.5, 3.0]);
        let y = g.signed_pow(x, 3);
        assert_eq!(g.value(y), &[-8.0, 0.125, 27.0]);
        let even = g.signed_pow(x, 2);
        assert_eq!(g.value(even), &[-4.0, 0.25, 9.0]);
    }

    #[test]
    fn sum_is_permutation_invariant_bitwise() {
        let vals = vec![0.1, -7.3, 2.2e-8, 1.0 / 3.0, -0.77, 123.456];
        let mut g1 = Graph::new();
        let a = g1.constant(1, 6, vals.clone());
        let s1 = g1.sum(a);
        let mut rev = vals.clone();
        rev.reverse();
        let mut g2 = Graph::new();
        let b = g2.constant(1, 6, rev);
        let s2 = g2.sum(b);
        assert_eq!(g1.scalar_value(s1).to_bits(), g2.scalar_value(s2).to_bits());
    }

    #[test]
    fn backward_nan_names_op() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(-1.0), true).unwrap();
        // signed_pow grad at interior is fine; force NaN via 0 * inf in mul
        let err = grad_params(&params, |g, bound| {
            let w = bound.node("w")?;
            let inf = g.scalar(f64::INFINITY);
            let z = g.scalar(0.0);
            let prod = g.mul(inf, z)?; // value NaN
            let masked = g.mul(prod, w)?; // loss value NaN -> caught as non-finite
            Ok(g.sum(masked))
        });
        assert!(matches!(
            err,
            Err(Error::NonFiniteLoss { .. }) | Err(Error::BackwardNaN { .. })
        ));
    }

    #[test]
    fn matmul_transb_matches_manual() {
        let mut g = Graph::new();
        let a = g.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = g.constant(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = g.matmul_transb(a, b).unwrap();
        // A * B^T: row0 = (1,2)·cols -> [1,2,3]; row1 = (3,4) -> [3,4,7]
        assert_eq!(g.value(c), &[1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
    }
}
