//! Dense tensors on a Wengert tape.
//!
//! Every differentiable operation is recorded in forward order; `backward`
//! replays the tape in reverse and accumulates gradients into every node it
//! reaches. One tape per forward pass; a tape is never shared across threads.
//!
//! Reductions whose operand sets depend on graph structure (neighbor sums,
//! row means, softmax denominators) sum their terms in a canonical value
//! order, so a relabeling of the inputs reproduces bit-identical outputs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} does not describe {len} values")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        len: usize,
    },
    #[error("{op}: expected a vector, got shape {shape:?}")]
    NotAVector { op: &'static str, shape: Vec<usize> },
    #[error("softmax: mask length {mask} does not match input length {input}")]
    MaskLength { mask: usize, input: usize },
    #[error("softmax: every position is masked")]
    AllMasked,
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("dropout: probability {0} outside [0, 1)")]
    BadDropRate(f64),
    #[error("{op}: index {index} out of bounds for length {len}")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward: empty tape")]
    EmptyTape,
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Identifier of a tensor on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Whether dropout draws a mask or passes values through unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op<S: Scalar> {
    Leaf,
    Matmul { a: Var, b: Var },
    Dot { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    OneMinus { x: Var },
    Scale { x: Var, c: S },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Concat { parts: Vec<Var> },
    SumVars { parts: Vec<Var> },
    MeanRows { x: Var },
    Lookup { table: Var, row: usize },
    Dropout { x: Var, mask: Vec<S> },
    Softmax { x: Var, mask: Option<Vec<bool>> },
    LogSoftmax { x: Var, mask: Option<Vec<bool>> },
    Pick { x: Var, index: usize },
    Sum { x: Var },
}

/// A dense value on the tape, with its recorded origin and an optional
/// gradient accumulator of the same shape.
#[derive(Debug, Clone)]
pub struct Tensor<S: Scalar> {
    pub shape: Vec<usize>,
    pub values: Vec<S>,
    pub grad: Option<Vec<S>>,
    op: Op<S>,
}

/// Recording tape. Node order is the topological order; backward walks it
/// in exact reverse.
#[derive(Debug, Default)]
pub struct Tape<S: Scalar> {
    nodes: Vec<Tensor<S>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Sums values in a canonical order so the result does not depend on the
/// order the terms were produced in. Floating-point addition commutes but
/// does not associate; fixing the grouping by value order makes sums over
/// relabeled node sets bit-identical.
fn canonical_sum<S: Scalar>(terms: &mut [S]) -> S {
    terms.sort_by(|a, b| a.total_order(b));
    let mut acc = S::zero();
    for t in terms.iter() {
        acc += *t;
    }
    acc
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<S>, op: Op<S>) -> Var {
        debug_assert_eq!(numel(&shape), values.len());
        self.nodes.push(Tensor {
            shape,
            values,
            grad: None,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    // ── Node access ─────────────────────────────────────────────────

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].values.len()
    }

    /// Scalar value of a one-element tensor.
    pub fn scalar_value(&self, v: Var) -> S {
        debug_assert_eq!(self.numel(v), 1);
        self.nodes[v.0].values[0]
    }

    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient of a node, or zeros if no gradient reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<S> {
        match &self.nodes[v.0].grad {
            Some(g) => g.clone(),
            None => vec![S::zero(); self.numel(v)],
        }
    }

    // ── Leaves ──────────────────────────────────────────────────────

    pub fn leaf(&mut self, values: Vec<S>, shape: &[usize]) -> Result<Var> {
        if numel(shape) != values.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::BadShape {
                op: "leaf",
                shape: shape.to_vec(),
                len: values.len(),
            });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf))
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.push(shape.to_vec(), vec![S::zero(); numel(shape)], Op::Leaf)
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, out_shape) = match sb.as_slice() {
            [rows, cols] if *rows == k => (*cols, vec![m, *cols]),
            [rows] if *rows == k => (1, vec![m]),
            _ => return Err(mismatch()),
        };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                for j in 0..n {
                    out[i * n + j] += aip * bv[p * n + j];
                }
            }
        }
        Ok(self.push(out_shape, out, Op::Matmul { a, b }))
    }

    /// Inner product of two equal-length vectors, as a `[1]` tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 1 || sb.len() != 1 || sa[0] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "dot",
                lhs: sa,
                rhs: sb,
            });
        }
        let mut acc = S::zero();
        for (x, y) in self.value(a).iter().zip(self.value(b)) {
            acc += *x * *y;
        }
        Ok(self.push(vec![1], vec![acc], Op::Dot { a, b }))
    }

    // ── Elementwise ─────────────────────────────────────────────────

    fn binary_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok(sa.to_vec())
        } else if self.numel(b) == 1 {
            Ok(sa.to_vec())
        } else if self.numel(a) == 1 {
            Ok(sb.to_vec())
        } else {
            Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            })
        }
    }

    fn broadcast_zip(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Vec<S> {
        let av = self.value(a);
        let bv = self.value(b);
        if av.len() == bv.len() {
            av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
        } else if bv.len() == 1 {
            av.iter().map(|x| f(*x, bv[0])).collect()
        } else {
            bv.iter().map(|y| f(av[0], *y)).collect()
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("add", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x + y);
        Ok(self.push(shape, out, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("sub", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x - y);
        Ok(self.push(shape, out, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = self.binary_shape("mul", a, b)?;
        let out = self.broadcast_zip(a, b, |x, y| x * y);
        Ok(self.push(shape, out, Op::Mul { a, b }))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let out: Vec<S> = self.value(x).iter().map(|v| S::one() - *v).collect();
        self.push(self.shape(x).to_vec(), out, Op::OneMinus { x })
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        let out: Vec<S> = self.value(x).iter().map(|v| *v * c).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, c })
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -S::one())
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<S> = self
            .value(x)
            .iter()
            .map(|v| S::one() / (S::one() + (-*v).exp()))
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<S> = self.value(x).iter().map(|v| v.tanh()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Tanh { x })
    }

    // ── Structure ───────────────────────────────────────────────────

    /// Concatenates vectors into one longer vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "concat" });
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(TensorError::NotAVector {
                    op: "concat",
                    shape: self.shape(p).to_vec(),
                });
            }
            out.extend_from_slice(self.value(p));
        }
        let len = out.len();
        Ok(self.push(vec![len], out, Op::Concat { parts: parts.to_vec() }))
    }

    /// Elementwise sum of same-shaped tensors, in canonical term order.
    pub fn sum_vars(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "sum_vars" });
        }
        let shape = self.shape(parts[0]).to_vec();
        for &p in parts {
            if self.shape(p) != shape.as_slice() {
                return Err(TensorError::ShapeMismatch {
                    op: "sum_vars",
                    lhs: shape,
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let n = numel(&shape);
        let mut out = vec![S::zero(); n];
        let mut terms = vec![S::zero(); parts.len()];
        for (c, slot) in out.iter_mut().enumerate() {
            for (t, &p) in parts.iter().enumerate() {
                terms[t] = self.value(p)[c];
            }
            *slot = canonical_sum(&mut terms);
        }
        Ok(self.push(shape, out, Op::SumVars { parts: parts.to_vec() }))
    }

    /// Elementwise mean of same-shaped tensors.
    pub fn mean_vars(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::EmptyInput { op: "mean_vars" });
        }
        let inv = S::one() / S::from_f64(parts.len() as f64);
        let sum = self.sum_vars(parts)?;
        Ok(self.scale(sum, inv))
    }

    /// Mean over axis 0 of a matrix: `[n,d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotAVector {
                op: "mean_rows",
                shape,
            });
        }
        let (n, d) = (shape[0], shape[1]);
        if n == 0 {
            return Err(TensorError::EmptyInput { op: "mean_rows" });
        }
        let inv = S::one() / S::from_f64(n as f64);
        let xv = self.value(x);
        let mut out = vec![S::zero(); d];
        let mut terms = vec![S::zero(); n];
        for (c, slot) in out.iter_mut().enumerate() {
            for r in 0..n {
                terms[r] = xv[r * d + c];
            }
            *slot = canonical_sum(&mut terms) * inv;
        }
        Ok(self.push(vec![d], out, Op::MeanRows { x }))
    }

    /// Row of an embedding matrix; gradients flow back to that row.
    pub fn lookup(&mut self, table: Var, row: usize) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(TensorError::NotAVector {
                op: "lookup",
                shape,
            });
        }
        if row >= shape[0] {
            return Err(TensorError::IndexOutOfBounds {
                op: "lookup",
                index: row,
                len: shape[0],
            });
        }
        let d = shape[1];
        let out = self.value(table)[row * d..(row + 1) * d].to_vec();
        Ok(self.push(vec![d], out, Op::Lookup { table, row }))
    }

    /// Inverted dropout: surviving entries scale by `1/(1-p)` in train
    /// mode; eval mode and `p = 0` are the identity.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadDropRate(p));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.numel(x))
            .map(|_| {
                if rng.gen::<f64>() < p {
                    S::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let out: Vec<S> = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| *v * *m)
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }))
    }

    // ── Distributions ───────────────────────────────────────────────

    fn masked_stats(&self, x: Var, mask: Option<&[bool]>) -> Result<(S, S, Vec<bool>)> {
        let xv = self.value(x);
        let live: Vec<bool> = match mask {
            Some(m) => {
                if m.len() != xv.len() {
                    return Err(TensorError::MaskLength {
                        mask: m.len(),
                        input: xv.len(),
                    });
                }
                m.to_vec()
            }
            None => vec![true; xv.len()],
        };
        if !live.iter().any(|&b| b) {
            return Err(TensorError::AllMasked);
        }
        let mut mx = S::neg_infinity();
        for (v, &l) in xv.iter().zip(&live) {
            if l && *v > mx {
                mx = *v;
            }
        }
        let mut exps: Vec<S> = xv
            .iter()
            .zip(&live)
            .filter(|(_, &l)| l)
            .map(|(v, _)| (*v - mx).exp())
            .collect();
        let z = canonical_sum(&mut exps);
        Ok((mx, z, live))
    }

    /// Masked, max-stabilized softmax over a vector. Masked positions are
    /// exactly zero; unmasked outputs sum to one.
    pub fn softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(TensorError::NotAVector {
                op: "softmax",
                shape: self.shape(x).to_vec(),
            });
        }
        let (mx, z, live) = self.masked_stats(x, mask)?;
        let out: Vec<S> = self
            .value(x)
            .iter()
            .zip(&live)
            .map(|(v, &l)| if l { (*v - mx).exp() / z } else { S::zero() })
            .collect();
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::Softmax {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
        ))
    }

    /// Masked log-softmax; masked positions are negative infinity.
    pub fn log_softmax(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(TensorError::NotAVector {
                op: "log_softmax",
                shape: self.shape(x).to_vec(),
            });
        }
        let (mx, z, live) = self.masked_stats(x, mask)?;
        let lz = z.ln();
        let out: Vec<S> = self
            .value(x)
            .iter()
            .zip(&live)
            .map(|(v, &l)| {
                if l {
                    *v - mx - lz
                } else {
                    S::neg_infinity()
                }
            })
            .collect();
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LogSoftmax {
                x,
                mask: mask.map(|m| m.to_vec()),
            },
        ))
    }

    /// One entry of a vector, as a `[1]` tensor.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(TensorError::NotAVector {
                op: "pick",
                shape: self.shape(x).to_vec(),
            });
        }
        let len = self.numel(x);
        if index >= len {
            return Err(TensorError::IndexOutOfBounds {
                op: "pick",
                index,
                len,
            });
        }
        let v = self.value(x)[index];
        Ok(self.push(vec![1], vec![v], Op::Pick { x, index }))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = S::zero();
        for v in self.value(x) {
            acc += *v;
        }
        self.push(vec![1], vec![acc], Op::Sum { x })
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Each call computes a fresh flow
    /// seeded with 1 and adds it into the persistent `grad` accumulators,
    /// so repeated calls accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        if self.numel(loss) != 1 {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).to_vec(),
            });
        }
        let mut flow: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        flow[loss.0] = Some(vec![S::one()]);

        for id in (0..=loss.0).rev() {
            let Some(g) = flow[id].take() else { continue };
            self.backward_op(id, &g, &mut flow);
            // fold this node's flow into its persistent accumulator
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, gi) in acc.iter_mut().zip(&g) {
                        *a += *gi;
                    }
                }
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backward_op(&self, id: usize, g: &[S], flow: &mut [Option<Vec<S>>]) {
        let add_to = |flow: &mut [Option<Vec<S>>], v: Var, len: usize, f: &mut dyn FnMut(&mut [S])| {
            let slot = flow[v.0].get_or_insert_with(|| vec![S::zero(); len]);
            f(slot);
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = if self.shape(*b).len() == 2 {
                    self.shape(*b)[1]
                } else {
                    1
                };
                let av = self.value(*a);
                let bv = self.value(*b);
                add_to(flow, *a, m * k, &mut |da| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = S::zero();
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += acc;
                        }
                    }
                });
                add_to(flow, *b, k * n, &mut |db| {
                    for p in 0..k {
                        for j in 0..n {
                            let mut acc = S::zero();
                            for i in 0..m {
                                acc += av[i * k + p] * g[i * n + j];
                            }
                            db[p * n + j] += acc;
                        }
                    }
                });
            }
            Op::Dot { a, b } => {
                let av = self.value(*a).to_vec();
                let bv = self.value(*b).to_vec();
                let g0 = g[0];
                add_to(flow, *a, av.len(), &mut |da| {
                    for (d, y) in da.iter_mut().zip(&bv) {
                        *d += g0 * *y;
                    }
                });
                add_to(flow, *b, bv.len(), &mut |db| {
                    for (d, x) in db.iter_mut().zip(&av) {
                        *d += g0 * *x;
                    }
                });
            }
            Op::Add { a, b } => {
                self.backward_broadcast(*a, g, flow, |_other, gi| gi);
                self.backward_broadcast(*b, g, flow, |_other, gi| gi);
            }
            Op::Sub { a, b } => {
                self.backward_broadcast(*a, g, flow, |_other, gi| gi);
                self.backward_broadcast(*b, g, flow, |_other, gi| -gi);
            }
            Op::Mul { a, b } => {
                let bv = self.value(*b).to_vec();
                let av = self.value(*a).to_vec();
                self.backward_broadcast(*a, g, flow, |i, gi| {
                    gi * if bv.len() == 1 { bv[0] } else { bv[i] }
                });
                self.backward_broadcast(*b, g, flow, |i, gi| {
                    gi * if av.len() == 1 { av[0] } else { av[i] }
                });
            }
            Op::OneMinus { x } => {
                add_to(flow, *x, g.len(), &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d -= *gi;
                    }
                });
            }
            Op::Scale { x, c } => {
                let c = *c;
                add_to(flow, *x, g.len(), &mut |dx| {
                    for (d, gi) in dx.iter_mut().zip(g) {
                        *d += c * *gi;
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = &self.nodes[id].values;
                add_to(flow, *x, g.len(), &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += *gi * *yi * (S::one() - *yi);
                    }
                });
            }
            Op::Tanh { x } => {
                let y = &self.nodes[id].values;
                add_to(flow, *x, g.len(), &mut |dx| {
                    for ((d, gi), yi) in dx.iter_mut().zip(g).zip(y) {
                        *d += *gi * (S::one() - *yi * *yi);
                    }
                });
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.numel(p);
                    let slice = &g[offset..offset + len];
                    add_to(flow, p, len, &mut |dp| {
                        for (d, gi) in dp.iter_mut().zip(slice) {
                            *d += *gi;
                        }
                    });
                    offset += len;
                }
            }
            Op::SumVars { parts } => {
                for &p in parts {
                    add_to(flow, p, g.len(), &mut |dp| {
                        for (d, gi) in dp.iter_mut().zip(g) {
                            *d += *gi;
                        }
                    });
                }
            }
            Op::MeanRows { x } => {
                let shape = self.shape(*x);
                let (n, d) = (shape[0], shape[1]);
                let inv = S::one() / S::from_f64(n as f64);
                add_to(flow, *x, n * d, &mut |dx| {
                    for r in 0..n {
                        for c in 0..d {
                            dx[r * d + c] += g[c] * inv;
                        }
                    }
                });
            }
            Op::Lookup { table, row } => {
                let shape = self.shape(*table);
                let (rows, d) = (shape[0], shape[1]);
                let row = *row;
                add_to(flow, *table, rows * d, &mut |dt| {
                    for (c, gi) in g.iter().enumerate() {
                        dt[row * d + c] += *gi;
                    }
                });
            }
            Op::Dropout { x, mask } => {
                add_to(flow, *x, g.len(), &mut |dx| {
                    for ((d, gi), m) in dx.iter_mut().zip(g).zip(mask) {
                        *d += *gi * *m;
                    }
                });
            }
            Op::Softmax { x, mask } => {
                let y = &self.nodes[id].values;
                let live = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                let mut dot = S::zero();
                for i in 0..y.len() {
                    if live(i) {
                        dot += g[i] * y[i];
                    }
                }
                add_to(flow, *x, g.len(), &mut |dx| {
                    for i in 0..y.len() {
                        if live(i) {
                            dx[i] += y[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax { x, mask } => {
                let ls = &self.nodes[id].values;
                let live = |i: usize| mask.as_ref().map_or(true, |m| m[i]);
                let mut gsum = S::zero();
                for i in 0..ls.len() {
                    if live(i) {
                        gsum += g[i];
                    }
                }
                add_to(flow, *x, g.len(), &mut |dx| {
                    for i in 0..ls.len() {
                        if live(i) {
                            dx[i] += g[i] - ls[i].exp() * gsum;
                        }
                    }
                });
            }
            Op::Pick { x, index } => {
                let (index, len) = (*index, self.numel(*x));
                let g0 = g[0];
                add_to(flow, *x, len, &mut |dx| {
                    dx[index] += g0;
                });
            }
            Op::Sum { x } => {
                let len = self.numel(*x);
                let g0 = g[0];
                add_to(flow, *x, len, &mut |dx| {
                    for d in dx.iter_mut() {
                        *d += g0;
                    }
                });
            }
        }
    }

    /// Routes an output gradient to one operand of a broadcasting binary
    /// op: same-shaped operands receive it elementwise, a scalar operand
    /// receives the sum of the mapped gradient.
    fn backward_broadcast(
        &self,
        operand: Var,
        g: &[S],
        flow: &mut [Option<Vec<S>>],
        map: impl Fn(usize, S) -> S,
    ) {
        let len = self.numel(operand);
        let slot = flow[operand.0].get_or_insert_with(|| vec![S::zero(); len]);
        if len == g.len() {
            for (i, (d, gi)) in slot.iter_mut().zip(g).enumerate() {
                *d += map(i, *gi);
            }
        } else {
            debug_assert_eq!(len, 1);
            let mut acc = S::zero();
            for (i, gi) in g.iter().enumerate() {
                acc += map(i, *gi);
            }
            slot[0] += acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn matmul_identity_passthrough() {
        let mut t = tape();
        let i = t.leaf(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let x = t.leaf(vec![3.0, 4.0], &[2, 1]).unwrap();
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.value(y), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_row_by_column() {
        let mut t = tape();
        let a = t.leaf(vec![1.0, 2.0], &[1, 2]).unwrap();
        let b = t.leaf(vec![3.0, 4.0], &[2, 1]).unwrap();
        let y = t.matmul(a, b).unwrap();
        assert_eq!(t.value(y), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut t = tape();
        let a = t.leaf(vec![0.0; 6], &[2, 3]).unwrap();
        let b = t.leaf(vec![0.0; 4], &[2, 2]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 2],
            }
        );
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        let mut t = tape();
        let x = t.leaf(vec![0.0], &[1]).unwrap();
        let s = t.sigmoid(x);
        let h = t.tanh(x);
        assert_eq!(t.value(s), &[0.5]);
        assert_eq!(t.value(h), &[0.0]);
    }

    #[test]
    fn saturated_gate_passes_previous_state_exactly() {
        // (1 - z) .* u + z .* k with z = 1 must return k bit-exactly.
        let mut t = tape();
        let z = t.leaf(vec![1.0, 1.0, 1.0], &[3]).unwrap();
        let u = t.leaf(vec![0.3, -0.7, 2.0], &[3]).unwrap();
        let k = t.leaf(vec![0.11, -0.22, 0.33], &[3]).unwrap();
        let nz = t.one_minus(z);
        let a = t.mul(nz, u).unwrap();
        let b = t.mul(z, k).unwrap();
        let out = t.add(a, b).unwrap();
        assert_eq!(t.value(out), t.value(k));
    }

    #[test]
    fn softmax_uniform_and_single_slot() {
        let mut t = tape();
        let x = t.leaf(vec![0.0, 0.0, 0.0], &[3]).unwrap();
        let y = t.softmax(x, None).unwrap();
        assert_eq!(t.value(y), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);

        let x2 = t.leaf(vec![10.0, 10.0], &[2]).unwrap();
        let y2 = t.softmax(x2, Some(&[true, false])).unwrap();
        assert_eq!(t.value(y2), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_all_masked_is_an_error() {
        let mut t = tape();
        let x = t.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let err = t.softmax(x, Some(&[false, false])).unwrap_err();
        assert_eq!(err, TensorError::AllMasked);
    }

    #[test]
    fn mean_rows_example() {
        let mut t = tape();
        let x = t.leaf(vec![2.0, 4.0, 6.0, 8.0], &[2, 2]).unwrap();
        let m = t.mean_rows(x).unwrap();
        assert_eq!(t.value(m), &[4.0, 6.0]);
    }

    #[test]
    fn mean_over_empty_axis_is_an_error() {
        let mut t = tape();
        let err = t.mean_vars(&[]).unwrap_err();
        assert_eq!(err, TensorError::EmptyInput { op: "mean_vars" });
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut t = tape();
        let x = t.leaf(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let y0 = t.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(y0, x);
        let y1 = t.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(y1, x);
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = tape();
        let x = t.leaf(vec![1.0; 1000], &[1000]).unwrap();
        let y = t.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        for v in t.value(y) {
            assert!(*v == 0.0 || *v == 2.0);
        }
        let kept = t.value(y).iter().filter(|v| **v != 0.0).count();
        assert!(kept > 400 && kept < 600, "kept {kept} of 1000 at p=0.5");
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = tape();
        let x = t.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let err = t.backward(x).unwrap_err();
        assert_eq!(err, TensorError::NonScalarLoss { shape: vec![2] });
    }

    #[test]
    fn backward_of_detached_leaf_is_absent() {
        let mut t = tape();
        let p = t.leaf(vec![1.0, 2.0], &[2]).unwrap();
        let x = t.leaf(vec![3.0], &[1]).unwrap();
        let y = t.mul(x, x).unwrap();
        t.backward(y).unwrap();
        assert!(t.grad(p).is_none());
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn repeated_backward_doubles_grads() {
        let mut t = tape();
        let w = t.leaf(vec![1.0, -2.0, 0.5, 3.0], &[2, 2]).unwrap();
        let x = t.leaf(vec![0.3, 0.7], &[2]).unwrap();
        let y = t.matmul(w, x).unwrap();
        let s = t.sum(y);
        t.backward(s).unwrap();
        let once = t.grad(w).unwrap().to_vec();
        t.backward(s).unwrap();
        let twice = t.grad(w).unwrap().to_vec();
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn sum_vars_is_order_independent_bitwise() {
        let mut t = tape();
        let parts: Vec<Var> = (0..5)
            .map(|i| {
                let v = (i as f64 + 1.0) * 0.1234567;
                t.leaf(vec![v, -v * 3.7, v * v], &[3]).unwrap()
            })
            .collect();
        let fwd = t.sum_vars(&parts).unwrap();
        let mut rev_parts = parts.clone();
        rev_parts.reverse();
        let rev = t.sum_vars(&rev_parts).unwrap();
        assert_eq!(t.value(fwd), t.value(rev));
    }

    #[test]
    fn scalar_broadcast_add_mul() {
        let mut t = tape();
        let x = t.leaf(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        let c = t.scalar(2.0);
        let y = t.mul(x, c).unwrap();
        assert_eq!(t.value(y), &[2.0, 4.0, 6.0]);
        let z = t.add(x, c).unwrap();
        assert_eq!(t.value(z), &[3.0, 4.0, 5.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(c).unwrap(), &[6.0]);
    }
}
