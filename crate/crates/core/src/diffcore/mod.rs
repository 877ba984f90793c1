//! Minimal reverse-mode automatic differentiation over dense `f64` vectors
//! and matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass. Operations append nodes to the
//! tape and return [`Var`] handles; [`Tape::backward`] walks the tape in
//! reverse and returns the gradient of a scalar root with respect to every
//! node that requires one.
//!
//! ```
//! use rtgn_core::diffcore::{Tape, Value};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Value::vector(vec![1.0, 2.0]));
//! let y = tape.sq_dist(x, x).unwrap();
//! let s = tape.sum(x);
//! let root = tape.add(y, s).unwrap();
//! let grads = tape.backward(root).unwrap();
//! assert_eq!(grads.get(x), &[1.0, 1.0]);
//! ```

mod check;
mod optim;

pub use check::{compare_gradients, grad_check};
pub use optim::{Adam, AdamConfig, ParamSlot};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by tape construction, backward passes and the optimizer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} expects a 1-D vector, got shape {shape:?}")]
    NotAVector { op: &'static str, shape: Vec<usize> },
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("tape already consumed by a backward pass; rebuild the forward pass")]
    StaleTape,
    #[error("non-finite function value at probe {0}")]
    NonFinite(usize),
    #[error("{0}")]
    Invalid(String),
}

/// Dense row-major array of `f64` with an explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Value {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Value {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(DiffError::Invalid(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major `rows × cols` matrix. Panics if `data` has the wrong length.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn vec_len(&self, op: &'static str) -> Result<usize, DiffError> {
        match self.shape.as_slice() {
            [n] => Ok(*n),
            _ => Err(DiffError::NotAVector {
                op,
                shape: self.shape.clone(),
            }),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Cos(Var),
    Log(Var),
    Square(Var),
    Floor(Var, f64),
    Concat(Vec<Var>),
    SumN(Vec<Var>),
    SqDist(Var, Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Value,
    op: Op,
    requires_grad: bool,
}

/// Overflow-safe `log(1 + e^x)`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `out = w·x + b` for a row-major `w` of shape `m × n`.
pub fn affine_into(w: &[f64], x: &[f64], b: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (i, (o, bi)) in out.iter_mut().zip(b).enumerate() {
        let row = &w[i * n..(i + 1) * n];
        *o = bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
    }
}

/// Recording tape for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    zero: Vec<f64>,
}

impl Gradients {
    /// Gradient for `v`; all zeros when `v` does not influence the root.
    pub fn get(&self, v: Var) -> &[f64] {
        match &self.grads[v.0] {
            Some(g) => g,
            None => &self.zero[..self.lens[v.0]],
        }
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

    pub fn value(&self, v: Var) -> &Value {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    fn push(&mut self, value: Value, op: Op, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Value) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Value) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (&self.nodes[a.0].value.shape, &self.nodes[b.0].value.shape);
        if sa != sb {
            return Err(DiffError::ShapeMismatch {
                op,
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        Ok(())
    }

    /// `weight · x + bias` with `weight` of shape `m × n`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var, DiffError> {
        let xs = &self.nodes[x.0].value;
        let ws = &self.nodes[weight.0].value;
        let bs = &self.nodes[bias.0].value;
        let n = xs.vec_len("linear")?;
        let m = bs.vec_len("linear")?;
        if ws.shape != [m, n] {
            return Err(DiffError::ShapeMismatch {
                op: "linear",
                left: ws.shape.clone(),
                right: vec![m, n],
            });
        }
        let mut out = vec![0.0; m];
        affine_into(&ws.data, &xs.data, &bs.data, &mut out);
        let rg = self.rg(x) || self.rg(weight) || self.rg(bias);
        Ok(self.push(Value::vector(out), Op::Linear { x, w: weight, b: bias }, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        self.same_shape(name, a, b)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Value {
            shape: va.shape.clone(),
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let va = &self.nodes[a.0].value;
        let value = Value {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| f(x)).collect(),
        };
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, |x| k * x, Op::Scale(a, k))
    }

    /// Same data under a new shape with an equal element count.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        let value = Value::new(shape.to_vec(), self.nodes[a.0].value.data.clone())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    /// Elementwise `log(1 + e^x)`; returns `x` itself for `x > 30`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus_scalar, Op::Softplus(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// Elementwise `max(x, floor)`. The gradient is blocked where the floor binds.
    pub fn floor_at(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor), Op::Floor(a, floor))
    }

    /// Concatenation of two vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.concat_all(&[a, b])
    }

    /// Concatenation of any number of vectors, in order.
    pub fn concat_all(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            v.vec_len("concat")?;
            data.extend_from_slice(&v.data);
            rg |= self.nodes[p.0].requires_grad;
        }
        Ok(self.push(Value::vector(data), Op::Concat(parts.to_vec()), rg))
    }

    /// Elementwise sum of equally shaped values.
    pub fn sum_n(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| DiffError::Invalid("sum_n of empty list".into()))?;
        let mut acc = self.nodes[first.0].value.clone();
        let mut rg = self.rg(first);
        for &p in &parts[1..] {
            self.same_shape("sum_n", first, p)?;
            for (a, b) in acc.data.iter_mut().zip(&self.nodes[p.0].value.data) {
                *a += b;
            }
            rg |= self.rg(p);
        }
        Ok(self.push(acc, Op::SumN(parts.to_vec()), rg))
    }

    /// `Σ_m (a_m − b_m)²` as a scalar.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.same_shape("sq_dist", a, b)?;
        let d: f64 = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Value::scalar(d), Op::SqDist(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        let rg = self.rg(a);
        self.push(Value::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = &self.nodes[a.0].value;
        let s = v.data.iter().sum::<f64>() / v.data.len() as f64;
        let rg = self.rg(a);
        self.push(Value::scalar(s), Op::Mean(a), rg)
    }

    /// Standard GRU update:
    ///
    /// ```text
    /// r  = σ(W_r·msg + U_r·h + b_r)
    /// u  = σ(W_u·msg + U_u·h + b_u)
    /// n  = tanh(W_n·msg + r ⊙ (U_n·h + b_hn) + b_n)
    /// h' = u ⊙ h + (1 − u) ⊙ n
    /// ```
    pub fn gru_cell(&mut self, h_prev: Var, msg: Var, p: &GruVars) -> Result<Var, DiffError> {
        let zero_h = self.constant(Value::zeros(self.value(h_prev).shape()));
        let ri = self.linear(msg, p.w_r, p.b_r)?;
        let rh = self.linear(h_prev, p.u_r, zero_h)?;
        let ra = self.add(ri, rh)?;
        let r = self.sigmoid(ra);

        let ui = self.linear(msg, p.w_u, p.b_u)?;
        let uh = self.linear(h_prev, p.u_u, zero_h)?;
        let ua = self.add(ui, uh)?;
        let u = self.sigmoid(ua);

        let ni = self.linear(msg, p.w_n, p.b_n)?;
        let nh = self.linear(h_prev, p.u_n, p.b_hn)?;
        let rnh = self.mul(r, nh)?;
        let na = self.add(ni, rnh)?;
        let n = self.tanh(na);

        let keep = self.mul(u, h_prev)?;
        let un = self.mul(u, n)?;
        let blend = self.sub(n, un)?;
        self.add(keep, blend)
    }

    /// Reverse pass from a scalar `root`. A tape supports exactly one backward pass.
    pub fn backward(&mut self, root: Var) -> Result<Gradients, DiffError> {
        if self.consumed {
            return Err(DiffError::StaleTape);
        }
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(DiffError::NonScalarRoot(rv.shape.clone()));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let xd = &self.nodes[x.0].value.data;
                    let wd = &self.nodes[w.0].value.data;
                    let ncols = xd.len();
                    if self.rg(*x) {
                        let gx = slot(&mut grads, *x, ncols);
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &wd[i * ncols..(i + 1) * ncols];
                            for (a, wij) in gx.iter_mut().zip(row) {
                                *a += gi * wij;
                            }
                        }
                    }
                    if self.rg(*w) {
                        let gw = slot(&mut grads, *w, wd.len());
                        for (i, gi) in g.iter().enumerate() {
                            if *gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i * ncols..(i + 1) * ncols];
                            for (a, xj) in row.iter_mut().zip(xd) {
                                *a += gi * xj;
                            }
                        }
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.rg(*b) {
                        accumulate(&mut grads, *b, &g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &g);
                    }
                    if self.rg(*b) {
                        let s = slot(&mut grads, *b, g.len());
                        for (t, gi) in s.iter_mut().zip(&g) {
                            *t -= gi;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                    if self.rg(*a) {
                        let s = slot(&mut grads, *a, g.len());
                        for ((t, gi), bi) in s.iter_mut().zip(&g).zip(bd) {
                            *t += gi * bi;
                        }
                    }
                    if self.rg(*b) {
                        let s = slot(&mut grads, *b, g.len());
                        for ((t, gi), ai) in s.iter_mut().zip(&g).zip(ad) {
                            *t += gi * ai;
                        }
                    }
                }
                Op::Div(a, b) => {
                    let (ad, bd) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                    if self.rg(*a) {
                        let s = slot(&mut grads, *a, g.len());
                        for ((t, gi), bi) in s.iter_mut().zip(&g).zip(bd) {
                            *t += gi / bi;
                        }
                    }
                    if self.rg(*b) {
                        let s = slot(&mut grads, *b, g.len());
                        for (((t, gi), ai), bi) in s.iter_mut().zip(&g).zip(ad).zip(bd) {
                            *t -= gi * ai / (bi * bi);
                        }
                    }
                }
                Op::Scale(a, k) => {
                    let s = slot(&mut grads, *a, g.len());
                    for (t, gi) in s.iter_mut().zip(&g) {
                        *t += k * gi;
                    }
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, &g),
                Op::Tanh(a) => {
                    let out = &node.value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), y) in s.iter_mut().zip(&g).zip(out) {
                        *t += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let out = &node.value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), y) in s.iter_mut().zip(&g).zip(out) {
                        *t += gi * y * (1.0 - y);
                    }
                }
                Op::Softplus(a) => {
                    let xd = &self.nodes[a.0].value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), x) in s.iter_mut().zip(&g).zip(xd) {
                        *t += gi * sigmoid_scalar(*x);
                    }
                }
                Op::Cos(a) => {
                    let xd = &self.nodes[a.0].value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), x) in s.iter_mut().zip(&g).zip(xd) {
                        *t -= gi * x.sin();
                    }
                }
                Op::Log(a) => {
                    let xd = &self.nodes[a.0].value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), x) in s.iter_mut().zip(&g).zip(xd) {
                        *t += gi / x;
                    }
                }
                Op::Square(a) => {
                    let xd = &self.nodes[a.0].value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), x) in s.iter_mut().zip(&g).zip(xd) {
                        *t += 2.0 * gi * x;
                    }
                }
                Op::Floor(a, floor) => {
                    let xd = &self.nodes[a.0].value.data;
                    let s = slot(&mut grads, *a, g.len());
                    for ((t, gi), x) in s.iter_mut().zip(&g).zip(xd) {
                        if *x > *floor {
                            *t += gi;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.data.len();
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                Op::SumN(parts) => {
                    for p in parts {
                        if self.rg(*p) {
                            accumulate(&mut grads, *p, &g);
                        }
                    }
                }
                Op::SqDist(a, b) => {
                    let (ad, bd) = (&self.nodes[a.0].value.data, &self.nodes[b.0].value.data);
                    let diff: Vec<f64> = ad.iter().zip(bd).map(|(x, y)| 2.0 * g[0] * (x - y)).collect();
                    if self.rg(*a) {
                        accumulate(&mut grads, *a, &diff);
                    }
                    if self.rg(*b) {
                        let s = slot(&mut grads, *b, diff.len());
                        for (t, d) in s.iter_mut().zip(&diff) {
                            *t -= d;
                        }
                    }
                }
                Op::Sum(a) => {
                    let len = self.nodes[a.0].value.data.len();
                    let s = slot(&mut grads, *a, len);
                    for t in s.iter_mut() {
                        *t += g[0];
                    }
                }
                Op::Mean(a) => {
                    let len = self.nodes[a.0].value.data.len();
                    let s = slot(&mut grads, *a, len);
                    let k = g[0] / len as f64;
                    for t in s.iter_mut() {
                        *t += k;
                    }
                }
            }
            grads[idx] = Some(g);
        }

        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.data.len()).collect();
        let zero = vec![0.0; lens.iter().copied().max().unwrap_or(0)];
        Ok(Gradients { grads, lens, zero })
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    let s = slot(grads, v, g.len());
    for (t, gi) in s.iter_mut().zip(g) {
        *t += gi;
    }
}

/// GRU parameter handles on a tape. Input weights are `d × m`, hidden weights `d × d`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_u: Var,
    pub u_u: Var,
    pub b_u: Var,
    pub w_n: Var,
    pub u_n: Var,
    pub b_n: Var,
    pub b_hn: Var,
}
