//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Operations are evaluated eagerly and appended to a [`Tape`]. Calling
//! [`Tape::backward`] walks the records in exact reverse order and returns
//! one gradient per registered parameter. Constants never receive
//! gradients, and records that do not depend on any parameter are skipped.
//!
//! ```
//! use rapgnn_core::matrix::DenseMatrix;
//! use rapgnn_core::params::ParamId;
//! use rapgnn_core::tape::Tape;
//!
//! let w = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
//! let mut tape = Tape::new();
//! let v = tape.param(ParamId(0), &w);
//! let loss = tape.sum(v);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads[&ParamId(0)], DenseMatrix::filled(2, 2, 1.0));
//! ```

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dropout::DropoutMask;
use crate::error::{shape_err, Error, Result};
use crate::graph::{pool_rows, ReadoutKind, SparseOperator};
use crate::math;
use crate::matrix::DenseMatrix;
use crate::params::{Gradients, ParamId};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Channel-mixing weight used inside a fused propagation record.
#[derive(Debug, Clone)]
pub enum MixWeight {
    /// Trainable `d × d'` matrix living on the tape.
    Var(Var),
    /// Constant diagonal, applied as column scaling.
    Diagonal(Vec<f64>),
    /// Constant dense matrix.
    Dense(DenseMatrix),
    Identity,
}

#[derive(Debug)]
enum Op<'g> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    DiagScale(Var, Vec<f64>),
    Spmm(&'g SparseOperator, Var),
    Dropout(Var, DropoutMask),
    Readout {
        input: Var,
        assignment: &'g [usize],
        sizes: &'g [usize],
        kind: ReadoutKind,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<(usize, usize)>,
    },
    Mse {
        pred: Var,
        targets: Vec<(usize, f64)>,
    },
    /// Per-column standardization; stores the column scales.
    Standardize(Var, Vec<f64>),
    Sum(Var),
    SumSquares(Var),
    /// `out = [input +] D(σ(… σ(S·input·W₁) … W_k))` where `S` is a sparse
    /// operator, every `σ` is ReLU and `D` an optional dropout mask. Only the
    /// output and the final activation mask are stored; intermediate
    /// products are recomputed during the backward pass.
    Propagate {
        input: Var,
        op: &'g SparseOperator,
        weights: Vec<MixWeight>,
        residual: bool,
        active: DropoutMask,
    },
}

struct Node<'g> {
    value: Cow<'g, DenseMatrix>,
    op: Op<'g>,
    needs_grad: bool,
}

/// Recording of one forward computation.
#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Node<'g>>,
}

fn check_finite(m: DenseMatrix, what: &'static str) -> Result<DenseMatrix> {
    m.ensure_finite(what)
}

/// [`mix_forward`] reusing `h`'s buffer where the weight allows.
fn mix_forward_owned(mut h: DenseMatrix, w: &MixWeight, tape: &Tape<'_>) -> Result<DenseMatrix> {
    match w {
        MixWeight::Var(v) => h.matmul(tape.value(*v)),
        MixWeight::Diagonal(a) => {
            h.scale_columns_in_place(a)?;
            Ok(h)
        }
        MixWeight::Dense(m) => h.matmul(m),
        MixWeight::Identity => Ok(h),
    }
}

fn mix_forward(h: &DenseMatrix, w: &MixWeight, tape: &Tape<'_>) -> Result<DenseMatrix> {
    match w {
        MixWeight::Var(v) => h.matmul(tape.value(*v)),
        MixWeight::Diagonal(a) => h.scale_columns(a),
        MixWeight::Dense(m) => h.matmul(m),
        MixWeight::Identity => Ok(h.clone()),
    }
}

/// Gradient of `h·W` with respect to `h`, given the output gradient.
fn mix_backward_input(g: &DenseMatrix, w: &MixWeight, tape: &Tape<'_>) -> Result<DenseMatrix> {
    match w {
        MixWeight::Var(v) => g.matmul_nt(tape.value(*v)),
        MixWeight::Diagonal(a) => g.scale_columns(a),
        MixWeight::Dense(m) => g.matmul_nt(m),
        MixWeight::Identity => Ok(g.clone()),
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Floats held in values owned by the tape (borrowed inputs excluded),
    /// plus stored activation masks.
    pub fn retained_floats(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                let own = match &n.value {
                    Cow::Owned(m) => m.len(),
                    Cow::Borrowed(_) => 0,
                };
                let extra = match &n.op {
                    Op::Propagate { active, .. } => active.storage_floats(),
                    Op::Dropout(_, mask) => mask.storage_floats(),
                    _ => 0,
                };
                own + extra
            })
            .sum()
    }

    fn push(&mut self, value: Cow<'g, DenseMatrix>, op: Op<'g>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_owned(&mut self, value: DenseMatrix, op: Op<'g>, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, id: ParamId, value: &'g DenseMatrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(id), true)
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, value: &'g DenseMatrix) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check_finite(self.value(a).matmul(self.value(b))?, "matmul")?;
        Ok(self.push_owned(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = check_finite(self.value(a).add(self.value(b))?, "add")?;
        Ok(self.push_owned(out, Op::Add(a, b), &[a, b]))
    }

    /// `a + 1·bias` with `bias` of shape `1 × cols`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let out = check_finite(self.value(a).add_row_broadcast(self.value(bias))?, "add_row")?;
        Ok(self.push_owned(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).relu();
        self.push_owned(out, Op::Relu(a), &[a])
    }

    /// `a · diag(alpha)` with a constant diagonal.
    pub fn diag_scale(&mut self, a: Var, alpha: Vec<f64>) -> Result<Var> {
        let out = check_finite(self.value(a).scale_columns(&alpha)?, "diag_scale")?;
        Ok(self.push_owned(out, Op::DiagScale(a, alpha), &[a]))
    }

    /// Each column shifted to zero mean and scaled to unit variance over
    /// the rows. The statistics depend on `a` and are differentiated.
    pub fn standardize(&mut self, a: Var) -> Var {
        let (out, scale) = self.value(a).standardize_columns();
        self.push_owned(out, Op::Standardize(a, scale), &[a])
    }

    /// `op · a` for a constant sparse operator.
    pub fn spmm(&mut self, op: &'g SparseOperator, a: Var) -> Result<Var> {
        let out = check_finite(op.spmm(self.value(a))?, "spmm")?;
        Ok(self.push_owned(out, Op::Spmm(op, a), &[a]))
    }

    pub fn dropout(&mut self, a: Var, mask: DropoutMask) -> Result<Var> {
        let out = mask.apply(self.value(a))?;
        Ok(self.push_owned(out, Op::Dropout(a, mask), &[a]))
    }

    pub fn readout(
        &mut self,
        a: Var,
        assignment: &'g [usize],
        sizes: &'g [usize],
        kind: ReadoutKind,
    ) -> Result<Var> {
        let out = pool_rows(assignment, sizes, self.value(a), kind)?;
        Ok(self.push_owned(out, Op::Readout { input: a, assignment, sizes, kind }, &[a]))
    }

    /// Mean softmax cross-entropy over `(row, class)` pairs.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize)>) -> Result<Var> {
        let l = self.value(logits);
        if targets.is_empty() {
            return Err(Error::Invalid("cross-entropy over an empty set of rows".into()));
        }
        let mut total = 0.0;
        for &(r, c) in &targets {
            if r >= l.rows() || c >= l.cols() {
                return Err(shape_err!(
                    "target ({}, {}) outside logits {}x{}",
                    r,
                    c,
                    l.rows(),
                    l.cols()
                ));
            }
            let row = l.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(row.iter().map(|v| math::exp(v - max)).sum::<f64>());
            total += lse - row[c];
        }
        let loss = total / targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("cross_entropy"));
        }
        Ok(self.push_owned(DenseMatrix::filled(1, 1, loss), Op::CrossEntropy { logits, targets }, &[logits]))
    }

    /// Mean squared error of column 0 of `pred` against `(row, target)`.
    pub fn mse(&mut self, pred: Var, targets: Vec<(usize, f64)>) -> Result<Var> {
        let p = self.value(pred);
        if targets.is_empty() {
            return Err(Error::Invalid("mean squared error over an empty set of rows".into()));
        }
        if p.cols() != 1 {
            return Err(shape_err!("mse expects a single output column, got {}", p.cols()));
        }
        let mut total = 0.0;
        for &(r, t) in &targets {
            if r >= p.rows() {
                return Err(shape_err!("target row {} outside {} predictions", r, p.rows()));
            }
            let d = p.get(r, 0) - t;
            total += d * d;
        }
        let loss = total / targets.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("mse"));
        }
        Ok(self.push_owned(DenseMatrix::filled(1, 1, loss), Op::Mse { pred, targets }, &[pred]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push_owned(DenseMatrix::filled(1, 1, s), Op::Sum(a), &[a])
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().map(|v| v * v).sum();
        self.push_owned(DenseMatrix::filled(1, 1, s), Op::SumSquares(a), &[a])
    }

    /// Fused message-passing layer; see [`MixWeight`]. `dropout`, when
    /// given, is applied after the last activation.
    pub fn propagate(
        &mut self,
        input: Var,
        op: &'g SparseOperator,
        weights: Vec<MixWeight>,
        residual: bool,
        dropout: Option<&DropoutMask>,
    ) -> Result<Var> {
        if weights.is_empty() {
            return Err(Error::Invalid("propagation layer needs at least one weight".into()));
        }
        let h = self.value(input);
        let mut z = op.spmm(h)?;
        let last = weights.len() - 1;
        for (k, w) in weights.iter().enumerate() {
            z = mix_forward_owned(z, w, self)?;
            if k < last {
                z.relu_in_place();
            }
        }
        let (rows, cols) = z.shape();
        let mut active = match dropout {
            Some(m) => {
                if m.shape() != (rows, cols) {
                    return Err(shape_err!("dropout mask shape does not match layer output"));
                }
                m.clone()
            }
            None => DropoutMask::all(rows, cols, 1.0),
        };
        let scale = active.scale();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            if *v > 0.0 && active.kept(i) {
                *v *= scale;
            } else {
                *v = 0.0;
                active.clear(i);
            }
        }
        if residual {
            if z.shape() != h.shape() {
                return Err(shape_err!(
                    "residual of {}x{} onto {}x{}",
                    z.rows(),
                    z.cols(),
                    h.rows(),
                    h.cols()
                ));
            }
            for (o, x) in z.data_mut().iter_mut().zip(h.data()) {
                *o += x;
            }
        }
        let z = check_finite(z, "propagate")?;
        let mut inputs = vec![input];
        inputs.extend(weights.iter().filter_map(|w| match w {
            MixWeight::Var(v) => Some(*v),
            _ => None,
        }));
        Ok(self.push_owned(z, Op::Propagate { input, op, weights, residual, active }, &inputs))
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Invalid(format!("variable {} was never recorded on this tape", loss.0)))?;
        if node.value.shape() != (1, 1) {
            return Err(shape_err!(
                "backward needs a scalar loss, got {}x{}",
                node.value.rows(),
                node.value.cols()
            ));
        }
        let mut grads: Vec<Option<DenseMatrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(DenseMatrix::filled(1, 1, 1.0));
        let mut out = Gradients::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out)?;
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node<'g>,
        g: DenseMatrix,
        grads: &mut [Option<DenseMatrix>],
        out: &mut Gradients,
    ) -> Result<()> {
        let mut accum = |v: Var, delta: DenseMatrix| -> Result<()> {
            if !self.nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut grads[v.0] {
                Some(existing) => existing.axpy(1.0, &delta),
                slot @ None => {
                    *slot = Some(delta);
                    Ok(())
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match out.get_mut(id) {
                Some(existing) => existing.axpy(1.0, &g)?,
                None => {
                    out.insert(*id, g);
                }
            },
            Op::MatMul(a, b) => {
                if self.nodes[a.0].needs_grad {
                    accum(*a, g.matmul_nt(self.value(*b))?)?;
                }
                if self.nodes[b.0].needs_grad {
                    accum(*b, self.value(*a).matmul_tn(&g)?)?;
                }
            }
            Op::Add(a, b) => {
                accum(*b, g.clone())?;
                accum(*a, g)?;
            }
            Op::AddRow(a, bias) => {
                accum(*bias, g.column_sums())?;
                accum(*a, g)?;
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g;
                for (gi, xi) in d.data_mut().iter_mut().zip(x.data()) {
                    if *xi <= 0.0 {
                        *gi = 0.0;
                    }
                }
                accum(*a, d)?;
            }
            Op::DiagScale(a, alpha) => accum(*a, g.scale_columns(alpha)?)?,
            Op::Spmm(op, a) => accum(*a, op.spmm_transpose(&g)?)?,
            Op::Dropout(a, mask) => accum(*a, mask.apply(&g)?)?,
            Op::Readout { input, assignment, sizes, kind } => {
                let mut d = DenseMatrix::zeros(assignment.len(), g.cols());
                for (v, &gi) in assignment.iter().enumerate() {
                    let f = match kind {
                        ReadoutKind::Sum => 1.0,
                        ReadoutKind::Mean => 1.0 / sizes[gi] as f64,
                    };
                    for (o, x) in d.row_mut(v).iter_mut().zip(g.row(gi)) {
                        *o = f * x;
                    }
                }
                accum(*input, d)?;
            }
            Op::CrossEntropy { logits, targets } => {
                let l = self.value(*logits);
                let scale = g.get(0, 0) / targets.len() as f64;
                let mut d = DenseMatrix::zeros(l.rows(), l.cols());
                for &(r, c) in targets {
                    let row = l.row(r);
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| math::exp(v - max)).sum();
                    let drow = d.row_mut(r);
                    for (j, v) in row.iter().enumerate() {
                        drow[j] += scale * math::exp(v - max) / z;
                    }
                    drow[c] -= scale;
                }
                accum(*logits, d)?;
            }
            Op::Mse { pred, targets } => {
                let p = self.value(*pred);
                let scale = g.get(0, 0) * 2.0 / targets.len() as f64;
                let mut d = DenseMatrix::zeros(p.rows(), 1);
                for &(r, t) in targets {
                    let cur = d.get(r, 0);
                    d.set(r, 0, cur + scale * (p.get(r, 0) - t));
                }
                accum(*pred, d)?;
            }
            Op::Standardize(a, scale) => {
                // dx = s·(dy − mean(dy) − y·mean(dy·y)) per column.
                let y = &node.value;
                let n = y.rows().max(1) as f64;
                let mut mean_g = vec![0.0; y.cols()];
                let mut mean_gy = vec![0.0; y.cols()];
                for r in 0..y.rows() {
                    for (j, (gi, yi)) in g.row(r).iter().zip(y.row(r)).enumerate() {
                        mean_g[j] += gi / n;
                        mean_gy[j] += gi * yi / n;
                    }
                }
                let mut d = g;
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    for (j, di) in d.row_mut(r).iter_mut().enumerate() {
                        *di = scale[j] * (*di - mean_g[j] - yr[j] * mean_gy[j]);
                    }
                }
                accum(*a, d)?;
            }
            Op::Sum(a) => {
                let a_shape = self.value(*a).shape();
                accum(*a, DenseMatrix::filled(a_shape.0, a_shape.1, g.get(0, 0)))?;
            }
            Op::SumSquares(a) => accum(*a, self.value(*a).scale(2.0 * g.get(0, 0)))?,
            Op::Propagate { input, op, weights, residual, active } => {
                let h = self.value(*input);
                // Recompute the chain of pre-activations.
                let mut stages = Vec::with_capacity(weights.len() + 1);
                stages.push(op.spmm(h)?);
                let last = weights.len() - 1;
                for (k, w) in weights.iter().enumerate().take(last) {
                    let z = mix_forward(&stages[k], w, self)?.relu();
                    stages.push(z);
                }
                let mut dz = g.clone();
                let scale = active.scale();
                for (i, v) in dz.data_mut().iter_mut().enumerate() {
                    *v = if active.kept(i) { *v * scale } else { 0.0 };
                }
                for k in (0..weights.len()).rev() {
                    let x = &stages[k];
                    if let MixWeight::Var(wv) = &weights[k] {
                        if self.nodes[wv.0].needs_grad {
                            accum(*wv, x.matmul_tn(&dz)?)?;
                        }
                    }
                    let mut dx = mix_backward_input(&dz, &weights[k], self)?;
                    if k > 0 {
                        for (d, xi) in dx.data_mut().iter_mut().zip(x.data()) {
                            if *xi <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                    dz = dx;
                }
                if self.nodes[input.0].needs_grad {
                    let mut dh = op.spmm_transpose(&dz)?;
                    if *residual {
                        dh.axpy(1.0, &g)?;
                    }
                    accum(*input, dh)?;
                }
            }
        }
        Ok(())
    }
}
