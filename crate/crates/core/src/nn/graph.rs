//! Tape-based reverse-mode differentiation over tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar node walks the tape in reverse and
//! returns the gradient of that scalar with respect to every parameter
//! the forward pass touched.
//!
//! Parameters are borrowed from a [`ParamStore`], never copied. A graph
//! built with [`Graph::frozen`] records no parameter gradients, which is
//! how stage-two training keeps the waypoint generator out of the update.

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::kernels;
use crate::nn::params::{Gradients, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    RmsNorm { x: Var, gain: Option<Var>, inv_rms: Vec<T> },
    Gelu(Var),
    Silu(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    SelectRow { table: Var, row: usize },
    MeanSquare(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A recording of tensor operations.
#[derive(Debug)]
pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    trainable: bool,
    nodes: Vec<Node<'p, T>>,
    param_vars: BTreeMap<String, Var>,
}

impl<'p, T: Scalar> Graph<'p, T> {
    /// A graph whose parameter reads are differentiable.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params: Some(params),
            trainable: true,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    /// A graph whose parameters are constants.
    pub fn frozen(params: &'p ParamStore<T>) -> Self {
        Self {
            trainable: false,
            ..Self::new(params)
        }
    }

    /// A graph without parameters; only constants.
    pub fn detached() -> Self {
        Self {
            params: None,
            trainable: false,
            nodes: Vec::new(),
            param_vars: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.params.is_some_and(|p| p.contains(name))
    }

    /// Reads a named parameter. Repeated reads return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let store = self
            .params
            .ok_or_else(|| Error::State("graph has no parameter store".into()))?;
        let value = store.get(name)?;
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Param,
            needs_grad: self.trainable,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x·w (+ b)` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let (d_in, d_out) = self.value(w).dims2()?;
        if xv.last_dim() != d_in {
            return Err(Error::Dimension(format!(
                "linear: input width {} vs weight {:?}",
                xv.last_dim(),
                [d_in, d_out]
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != d_out {
                return Err(Error::shape(&[d_out], self.shape(b)));
            }
        }
        let n = xv.rows();
        let y = kernels::linear_forward(
            xv.data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            n,
            d_in,
            d_out,
        );
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, y)?, Op::Linear { x, w, b }, &inputs))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.value(a).zip_map(self.value(b), f)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x + y)?;
        Ok(self.push(y, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x - y)?;
        Ok(self.push(y, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x * y)?;
        Ok(self.push(y, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, a: Var, row: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let av = self.value(a);
        let rv = self.value(row);
        let d = av.last_dim();
        if rv.len() != d {
            return Err(Error::Dimension(format!(
                "row broadcast: row of {} elements onto width {d}",
                rv.len()
            )));
        }
        let data = av
            .data()
            .chunks_exact(d)
            .flat_map(|r| r.iter().zip(rv.data()).map(|(&x, &y)| f(x, y)))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    /// Adds a row vector (any shape with `last_dim` elements) to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let y = self.row_broadcast(a, row, |x, y| x + y)?;
        Ok(self.push(y, Op::AddRow(a, row), &[a, row]))
    }

    /// Multiplies every row elementwise by a row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let y = self.row_broadcast(a, row, |x, y| x * y)?;
        Ok(self.push(y, Op::MulRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).scale(s);
        self.push(y, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let y = self.value(a).map(|v| v + s);
        self.push(y, Op::AddScalar(a), &[a])
    }

    /// RMS normalization over the last axis with an optional gain.
    pub fn rms_norm(&mut self, x: Var, gain: Option<Var>) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if let Some(g) = gain {
            if self.value(g).len() != d {
                return Err(Error::shape(&[d], self.shape(g)));
            }
        }
        let (y, inv_rms) = kernels::rms_norm_forward(xv.data(), d, gain.map(|g| self.value(g).data()));
        let shape = xv.shape().to_vec();
        let inputs: Vec<Var> = [Some(x), gain].into_iter().flatten().collect();
        Ok(self.push(Tensor::new(shape, y)?, Op::RmsNorm { x, gain, inv_rms }, &inputs))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(kernels::gelu);
        self.push(y, Op::Gelu(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let y = self.value(a).map(kernels::silu);
        self.push(y, Op::Silu(a), &[a])
    }

    /// Unmasked multi-head attention over rows of `[n, d]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, d) = self.value(q).dims2()?;
        for other in [k, v] {
            if self.shape(other) != [n, d] {
                return Err(Error::shape(&[n, d], self.shape(other)));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Dimension(format!("width {d} not divisible by {heads} heads")));
        }
        let (y, probs) = kernels::attention_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            n,
            d,
            heads,
        );
        Ok(self.push(
            Tensor::new(vec![n, d], y)?,
            Op::Attention { q, k, v, heads, probs },
            &[q, k, v],
        ))
    }

    /// Columns `start..start+len` of a rank-2 node.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if len == 0 || start + len > d {
            return Err(Error::Dimension(format!("slice {start}+{len} of width {d}")));
        }
        let src = self.value(x).data();
        let data = (0..n).flat_map(|i| src[i * d + start..i * d + start + len].iter().copied()).collect();
        Ok(self.push(Tensor::new(vec![n, len], data)?, Op::SliceCols { x, start }, &[x]))
    }

    /// Rows `start..start+len` of a rank-2 node.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if len == 0 || start + len > n {
            return Err(Error::Dimension(format!("slice {start}+{len} of {n} rows")));
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        Ok(self.push(Tensor::new(vec![len, d], data)?, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, d) = self.value(a).dims2()?;
        let (nb, db) = self.value(b).dims2()?;
        if d != db {
            return Err(Error::shape(&[nb, d], &[nb, db]));
        }
        let mut data = self.value(a).data().to_vec();
        data.extend_from_slice(self.value(b).data());
        Ok(self.push(Tensor::new(vec![na + nb, d], data)?, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, da) = self.value(a).dims2()?;
        let (nb, db) = self.value(b).dims2()?;
        if n != nb {
            return Err(Error::shape(&[n, db], &[nb, db]));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = (0..n)
            .flat_map(|i| av[i * da..(i + 1) * da].iter().chain(&bv[i * db..(i + 1) * db]).copied())
            .collect();
        Ok(self.push(Tensor::new(vec![n, da + db], data)?, Op::ConcatCols(a, b), &[a, b]))
    }

    /// Row `row` of a rank-2 table, as a `[1, d]` node.
    pub fn select_row(&mut self, table: Var, row: usize) -> Result<Var> {
        let (n, d) = self.value(table).dims2()?;
        if row >= n {
            return Err(Error::Dimension(format!("row {row} of {n}")));
        }
        let data = self.value(table).row(row).to_vec();
        Ok(self.push(Tensor::new(vec![1, d], data)?, Op::SelectRow { table, row }, &[table]))
    }

    /// `mean(x²)` as a one-element node.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.norm_sq() / T::of(xv.len() as f64);
        self.push(Tensor::scalar(m), Op::MeanSquare(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Gradients of the scalar `loss` with respect to every parameter read.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before the loss was computed".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }

        let mut out = Gradients::new();
        for (name, &v) in &self.param_vars {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            let shape = self.shape(v).to_vec();
            let g = match grads[v.0].take() {
                Some(g) => Tensor::new(shape, g)?,
                None => Tensor::zeros(&shape),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<'p, T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if self.wants(v) {
                let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
                f(buf);
            }
        };
        let add_scaled = |buf: &mut [T], src: &[T], s: T| {
            for (a, &g) in buf.iter_mut().zip(src) {
                *a = *a + s * g;
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Linear { x, w, b } => {
                let (d_in, d_out) = (self.shape(*w)[0], self.shape(*w)[1]);
                let n = self.value(*x).rows();
                acc(*x, &mut |dx| kernels::linear_backward_input(dy, val(*w), dx, n, d_in, d_out));
                acc(*w, &mut |dw| kernels::linear_backward_weight(val(*x), dy, dw, n, d_in, d_out));
                if let Some(b) = b {
                    acc(*b, &mut |db| kernels::colsum_into(dy, db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &mut |g| add_scaled(g, dy, T::one()));
                acc(*b, &mut |g| add_scaled(g, dy, T::one()));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |g| add_scaled(g, dy, T::one()));
                acc(*b, &mut |g| add_scaled(g, dy, -T::one()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |g| {
                    for ((gi, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *gi = *gi + d * o;
                    }
                });
                acc(*b, &mut |g| {
                    for ((gi, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *gi = *gi + d * o;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &mut |g| add_scaled(g, dy, T::one()));
                acc(*row, &mut |g| kernels::colsum_into(dy, g));
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (val(*a), val(*row));
                let d = rv.len();
                acc(*a, &mut |g| {
                    for (gr, dr) in g.chunks_exact_mut(d).zip(dy.chunks_exact(d)) {
                        for ((gi, &di), &ri) in gr.iter_mut().zip(dr).zip(rv) {
                            *gi = *gi + di * ri;
                        }
                    }
                });
                acc(*row, &mut |g| {
                    for (ar, dr) in av.chunks_exact(d).zip(dy.chunks_exact(d)) {
                        for ((gi, &di), &ai) in g.iter_mut().zip(dr).zip(ar) {
                            *gi = *gi + di * ai;
                        }
                    }
                });
            }
            Op::Scale(a, s) => acc(*a, &mut |g| add_scaled(g, dy, *s)),
            Op::AddScalar(a) => acc(*a, &mut |g| add_scaled(g, dy, T::one())),
            Op::RmsNorm { x, gain, inv_rms } => {
                let d = self.value(*x).last_dim();
                let gv = gain.map(|g| val(g));
                if self.wants(*x) {
                    let buf = grads[x.0].get_or_insert_with(|| vec![T::zero(); self.nodes[x.0].value.len()]);
                    kernels::rms_norm_backward(val(*x), dy, inv_rms, d, gv, Some(buf), None);
                }
                if let Some(g) = gain {
                    if self.wants(*g) {
                        let buf = grads[g.0].get_or_insert_with(|| vec![T::zero(); d]);
                        kernels::rms_norm_backward(val(*x), dy, inv_rms, d, gv, None, Some(buf));
                    }
                }
            }
            Op::Gelu(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, &d), &x) in g.iter_mut().zip(dy).zip(av) {
                        *gi = *gi + d * kernels::gelu_grad(x);
                    }
                });
            }
            Op::Silu(a) => {
                let av = val(*a);
                acc(*a, &mut |g| {
                    for ((gi, &d), &x) in g.iter_mut().zip(dy).zip(av) {
                        *gi = *gi + d * kernels::silu_grad(x);
                    }
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (n, d) = (self.shape(*q)[0], self.shape(*q)[1]);
                let mut dq = self.wants(*q).then(|| vec![T::zero(); n * d]);
                let mut dk = self.wants(*k).then(|| vec![T::zero(); n * d]);
                let mut dv = self.wants(*v).then(|| vec![T::zero(); n * d]);
                kernels::attention_backward(
                    val(*q),
                    val(*k),
                    val(*v),
                    probs,
                    dy,
                    n,
                    d,
                    *heads,
                    dq.as_deref_mut(),
                    dk.as_deref_mut(),
                    dv.as_deref_mut(),
                );
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(g) = g {
                        acc(var, &mut |buf| add_scaled(buf, &g, T::one()));
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let d = self.shape(*x)[1];
                let len = node.value.last_dim();
                acc(*x, &mut |g| {
                    for (gr, dr) in g.chunks_exact_mut(d).zip(dy.chunks_exact(len)) {
                        add_scaled(&mut gr[*start..*start + len], dr, T::one());
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let d = self.shape(*x)[1];
                acc(*x, &mut |g| add_scaled(&mut g[start * d..start * d + dy.len()], dy, T::one()));
            }
            Op::ConcatRows(a, b) => {
                let split = self.value(*a).len();
                acc(*a, &mut |g| add_scaled(g, &dy[..split], T::one()));
                acc(*b, &mut |g| add_scaled(g, &dy[split..], T::one()));
            }
            Op::ConcatCols(a, b) => {
                let (da, db) = (self.shape(*a)[1], self.shape(*b)[1]);
                acc(*a, &mut |g| {
                    for (gr, dr) in g.chunks_exact_mut(da).zip(dy.chunks_exact(da + db)) {
                        add_scaled(gr, &dr[..da], T::one());
                    }
                });
                acc(*b, &mut |g| {
                    for (gr, dr) in g.chunks_exact_mut(db).zip(dy.chunks_exact(da + db)) {
                        add_scaled(gr, &dr[da..], T::one());
                    }
                });
            }
            Op::SelectRow { table, row } => {
                let d = self.shape(*table)[1];
                acc(*table, &mut |g| add_scaled(&mut g[row * d..(row + 1) * d], dy, T::one()));
            }
            Op::MeanSquare(x) => {
                let xv = val(*x);
                let s = dy[0] * T::of(2.0) / T::of(xv.len() as f64);
                acc(*x, &mut |g| add_scaled(g, xv, s));
            }
            Op::Sum(x) => {
                let s = dy[0];
                acc(*x, &mut |g| g.iter_mut().for_each(|v| *v = *v + s));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, Tensor<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (k, v) in entries {
            s.insert(*k, v.clone()).unwrap();
        }
        s
    }

    #[test]
    fn quadratic_gradient_is_theta() {
        let theta = Tensor::vector(vec![1.5, -2.0, 0.25]);
        let s = store(&[("theta", theta.clone())]);
        let mut g = Graph::new(&s);
        let p = g.param("theta").unwrap();
        let sq = g.mul(p, p).unwrap();
        let sum = g.sum(sq);
        let loss = g.scale(sum, 0.5);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["theta"], theta);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let s = store(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut g = Graph::new(&s);
        let _ = g.param("w").unwrap();
        let c = g.constant(Tensor::vector(vec![3.0, 4.0]));
        let loss = g.mean_square(c);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads["w"], Tensor::zeros(&[2]));
    }

    #[test]
    fn backward_needs_forward_and_scalar() {
        let g = Graph::<f64>::detached();
        assert!(matches!(g.backward(Var(0)), Err(Error::State(_))));
        let mut g = Graph::<f64>::detached();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(c), Err(Error::Dimension(_))));
    }

    #[test]
    fn frozen_graph_records_no_gradients() {
        let s = store(&[("w", Tensor::vector(vec![1.0, 2.0]))]);
        let mut g = Graph::frozen(&s);
        let p = g.param("w").unwrap();
        let loss = g.mean_square(p);
        assert!(g.backward(loss).unwrap().is_empty());
    }

    #[test]
    fn repeated_param_reads_share_a_node() {
        let s = store(&[("w", Tensor::vector(vec![2.0]))]);
        let mut g = Graph::new(&s);
        let a = g.param("w").unwrap();
        let b = g.param("w").unwrap();
        assert_eq!(a, b);
        let y = g.mul(a, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads["w"].data(), &[4.0]);
    }
}
