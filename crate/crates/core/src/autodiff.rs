//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] records every operation of one forward pass as an append-only
//! list of nodes. Each node keeps its value and a closure that maps the
//! upstream gradient to one gradient per input. [`Tape::backward`] walks the
//! list once in reverse and accumulates gradients, so shared subexpressions
//! receive the sum of all their uses.
//!
//! Implicit layers (linear solves, scans) enter the tape through
//! [`Tape::custom`], which registers a forward value together with a
//! hand-derived backward rule instead of the decomposed operations.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;

use crate::tensor::{dim_err, Tensor, TensorError};

pub type NodeId = usize;

/// Maps the upstream gradient of a node to one gradient per declared input.
pub type BackwardRule = Box<dyn Fn(&Tensor) -> Result<Vec<Tensor>, TensorError>>;

struct Node {
    op: &'static str,
    inputs: Vec<NodeId>,
    value: Rc<Tensor>,
    requires_grad: bool,
    backward: Option<BackwardRule>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({})", self.id, self.tape.op_name(self.id))
    }
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zeros when `v` did not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes.borrow()[id].op
    }

    fn push(
        &self,
        op: &'static str,
        inputs: Vec<NodeId>,
        value: Tensor,
        backward: Option<BackwardRule>,
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: Rc::new(value),
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self, id }
    }

    /// Differentiable leaf (parameters, inputs under test).
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op: "leaf",
            inputs: Vec::new(),
            value: Rc::new(value),
            requires_grad: true,
            backward: None,
        });
        Var { tape: self, id }
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push("constant", Vec::new(), value, None)
    }

    /// Registers `value` as the result of an opaque operation on `inputs`.
    /// During backward, `rule` receives the upstream gradient and must return
    /// exactly one gradient per input, each shaped like that input.
    pub fn custom<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t>],
        value: Tensor,
        rule: impl Fn(&Tensor) -> Result<Vec<Tensor>, TensorError> + 'static,
    ) -> Var<'t> {
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(op, ids, value, Some(Box::new(rule)))
    }

    /// Runs the reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, TensorError> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(dim_err(
                "backward",
                format!(
                    "loss must be scalar, got {:?}",
                    nodes[loss.id].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape(), 1.0));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let input_grads = rule(&g)?;
            if input_grads.len() != node.inputs.len() {
                return Err(TensorError::Contract {
                    op: node.op,
                    detail: format!(
                        "backward rule returned {} gradients for {} inputs",
                        input_grads.len(),
                        node.inputs.len()
                    ),
                });
            }
            for (&input, gi) in node.inputs.iter().zip(input_grads) {
                let input_node = &nodes[input];
                if !input_node.requires_grad {
                    continue;
                }
                if gi.shape() != input_node.value.shape() {
                    return Err(TensorError::Contract {
                        op: node.op,
                        detail: format!(
                            "gradient shape {:?} does not match input shape {:?}",
                            gi.shape(),
                            input_node.value.shape()
                        ),
                    });
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&gi)?,
                    slot @ None => *slot = Some(gi),
                }
            }
            // Keep the gradient of leaves; drop intermediates.
            grads[id] = None;
        }
        Ok(Gradients { grads })
    }
}

#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    /// rhs is `1 × c`
    Row,
    /// rhs is `r × 1`
    Col,
    /// rhs has one element
    Scalar,
}

fn broadcast_kind(a: &Tensor, b: &Tensor, op: &'static str) -> Result<Broadcast, TensorError> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    if b.len() == 1 {
        return Ok(Broadcast::Scalar);
    }
    let (r, c) = a.dims2()?;
    match b.dims2()? {
        (1, bc) if bc == c => Ok(Broadcast::Row),
        (br, 1) if br == r => Ok(Broadcast::Col),
        _ => Err(dim_err(
            op,
            format!("cannot broadcast {:?} into {:?}", b.shape(), a.shape()),
        )),
    }
}

#[inline]
fn bidx(kind: Broadcast, cols: usize, i: usize) -> usize {
    match kind {
        Broadcast::Same => i,
        Broadcast::Row => i % cols,
        Broadcast::Col => i / cols,
        Broadcast::Scalar => 0,
    }
}

fn binary<'t>(
    op: &'static str,
    a: Var<'t>,
    b: Var<'t>,
    f: fn(f64, f64) -> f64,
    // partial derivatives (d/da, d/db) at (a, b)
    df: fn(f64, f64) -> (f64, f64),
) -> Result<Var<'t>, TensorError> {
    let av = a.value();
    let bv = b.value();
    let kind = broadcast_kind(&av, &bv, op)?;
    let cols = av.cols();
    let data: Vec<f64> = av
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bv.data()[bidx(kind, cols, i)]))
        .collect();
    let value = Tensor::new(av.shape().to_vec(), data)?;
    Ok(a.tape.custom(op, &[a, b], value, move |g| {
        let mut ga = Tensor::zeros(av.shape());
        let mut gb = Tensor::zeros(bv.shape());
        {
            let (gad, gbd) = (ga.data_mut(), gb.data_mut());
            for (i, (&x, &gi)) in av.data().iter().zip(g.data()).enumerate() {
                let j = bidx(kind, cols, i);
                let (da, db) = df(x, bv.data()[j]);
                gad[i] = gi * da;
                gbd[j] += gi * db;
            }
        }
        Ok(vec![ga, gb])
    }))
}

fn unary<'t>(
    op: &'static str,
    x: Var<'t>,
    f: impl Fn(f64) -> f64,
    // derivative given (input, output)
    df: impl Fn(f64, f64) -> f64 + 'static,
) -> Var<'t> {
    let xv = x.value();
    let out = xv.map(f);
    let yv = Rc::new(out.clone());
    x.tape.custom(op, &[x], out, move |g| {
        let data = xv
            .data()
            .iter()
            .zip(yv.data())
            .zip(g.data())
            .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
            .collect();
        Ok(vec![Tensor::new(xv.shape().to_vec(), data)?])
    })
}

/// `log(1 + e^x)`, switching to `x + log1p(e^{-x})` above 20.
pub fn softplus_f64(x: f64) -> f64 {
    if x > 20.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu_f64(x: f64) -> f64 {
    x * sigmoid_f64(x)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims2(&self) -> Result<(usize, usize), TensorError> {
        self.value().dims2()
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        binary("add", self, other, |a, b| a + b, |_, _| (1.0, 1.0))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        binary("sub", self, other, |a, b| a - b, |_, _| (1.0, -1.0))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        binary("mul", self, other, |a, b| a * b, |a, b| (b, a))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        binary(
            "div",
            self,
            other,
            |a, b| a / b,
            |a, b| (1.0 / b, -a / (b * b)),
        )
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        unary("scale", self, move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        unary("add_scalar", self, move |x| x + c, |_, _| 1.0)
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn softplus(self) -> Var<'t> {
        unary("softplus", self, softplus_f64, |x, _| sigmoid_f64(x))
    }

    pub fn relu(self) -> Var<'t> {
        unary(
            "relu",
            self,
            |x| x.max(0.0),
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
        )
    }

    pub fn silu(self) -> Var<'t> {
        unary("silu", self, silu_f64, |x, _| {
            let s = sigmoid_f64(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn tanh(self) -> Var<'t> {
        unary("tanh", self, f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn exp(self) -> Var<'t> {
        unary("exp", self, f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'t> {
        unary("ln", self, f64::ln, |x, _| 1.0 / x)
    }

    pub fn sqrt(self) -> Var<'t> {
        unary("sqrt", self, f64::sqrt, |_, y| 0.5 / y)
    }

    pub fn square(self) -> Var<'t> {
        unary("square", self, |x| x * x, |x, _| 2.0 * x)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero wherever the bound is active.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        unary(
            "clamp",
            self,
            move |x| x.clamp(lo, hi),
            move |x, _| if x > lo && x < hi { 1.0 } else { 0.0 },
        )
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, TensorError> {
        let av = self.value();
        let bv = other.value();
        let value = av.matmul(&bv)?;
        let (m, k) = av.dims2()?;
        let n = bv.cols();
        Ok(self.tape.custom("matmul", &[self, other], value, move |g| {
            // ga = g·bᵀ (m×k), gb = aᵀ·g (k×n)
            let mut ga = vec![0.0; m * k];
            crate::tensor::gemm(false, true, m, n, k, g.data(), bv.data(), 0.0, &mut ga);
            let mut gb = vec![0.0; k * n];
            crate::tensor::gemm(true, false, k, m, n, av.data(), g.data(), 0.0, &mut gb);
            Ok(vec![Tensor::matrix(m, k, ga)?, Tensor::matrix(k, n, gb)?])
        }))
    }

    pub fn transpose(self) -> Result<Var<'t>, TensorError> {
        let value = self.value().transpose()?;
        Ok(self
            .tape
            .custom("transpose", &[self], value, |g| Ok(vec![g.transpose()?])))
    }

    /// Sum of all elements as a `1 × 1` tensor.
    pub fn sum(self) -> Var<'t> {
        let xv = self.value();
        let shape = xv.shape().to_vec();
        self.tape
            .custom("sum", &[self], Tensor::scalar(xv.sum()), move |g| {
                Ok(vec![Tensor::full(&shape, g.data()[0])])
            })
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Row sums: `r × c → r × 1`.
    pub fn sum_rows(self) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        let data = (0..r).map(|i| xv.row(i).iter().sum()).collect();
        Ok(self
            .tape
            .custom("sum_rows", &[self], Tensor::column(data), move |g| {
                let mut out = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    let gi = g.data()[i];
                    out.data_mut()[i * c..(i + 1) * c].fill(gi);
                }
                Ok(vec![out])
            }))
    }

    /// Column sums: `r × c → 1 × c`.
    pub fn sum_cols(self) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, x) in data.iter_mut().zip(xv.row(i)) {
                *d += x;
            }
        }
        Ok(self
            .tape
            .custom("sum_cols", &[self], Tensor::matrix(1, c, data)?, move |g| {
                let mut out = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    out.data_mut()[i * c..(i + 1) * c].copy_from_slice(g.data());
                }
                Ok(vec![out])
            }))
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        if c == 0 {
            return Err(dim_err("softmax", "empty axis"));
        }
        let y = softmax_rows(&xv)?;
        let yv = Rc::new(y.clone());
        Ok(self.tape.custom("softmax", &[self], y, move |g| {
            let mut out = Tensor::zeros(&[r, c]);
            for i in 0..r {
                let yr = yv.row(i);
                let gr = g.row(i);
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for j in 0..c {
                    out.data_mut()[i * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            Ok(vec![out])
        }))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        if labels.len() != r {
            return Err(dim_err(
                "cross_entropy",
                format!("{} labels for {r} rows", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Index {
                op: "cross_entropy",
                index: bad,
                extent: c,
            });
        }
        let p = softmax_rows(&xv)?;
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(p.get(i, l).max(f64::MIN_POSITIVE)).ln())
            .sum::<f64>()
            / r.max(1) as f64;
        let labels = labels.to_vec();
        Ok(self
            .tape
            .custom("cross_entropy", &[self], Tensor::scalar(loss), move |g| {
                let scale = g.data()[0] / r.max(1) as f64;
                let mut out = p.clone();
                for (i, &l) in labels.iter().enumerate() {
                    out.data_mut()[i * c + l] -= 1.0;
                }
                for v in out.data_mut() {
                    *v *= scale;
                }
                Ok(vec![out])
            }))
    }

    /// Inclusive cumulative sum along `axis` (0 = down rows, 1 = along columns).
    pub fn cumsum(self, axis: usize) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        if axis > 1 {
            return Err(dim_err("cumsum", format!("axis {axis} on rank 2")));
        }
        let value = cumsum2(&xv, axis, false);
        Ok(self.tape.custom("cumsum", &[self], value, move |g| {
            Ok(vec![Tensor::new(
                vec![r, c],
                cumsum2(g, axis, true).into_data(),
            )?])
        }))
    }

    /// `out[k] = x[idx[k]]` over rows.
    pub fn gather_rows(self, idx: Arc<[usize]>) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        let value = gather_rows(&xv, &idx)?;
        Ok(self.tape.custom("gather_rows", &[self], value, move |g| {
            Ok(vec![scatter_add_rows(g, &idx, r, c)?])
        }))
    }

    /// `out[idx[k]] += x[k]` into an `n_rows × c` tensor.
    pub fn scatter_add_rows(
        self,
        idx: Arc<[usize]>,
        n_rows: usize,
    ) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (_, c) = xv.dims2()?;
        let value = scatter_add_rows(&xv, &idx, n_rows, c)?;
        Ok(self
            .tape
            .custom("scatter_add_rows", &[self], value, move |g| {
                Ok(vec![gather_rows(g, &idx)?])
            }))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let (r, c) = xv.dims2()?;
        if start + len > c {
            return Err(dim_err(
                "slice_cols",
                format!("{start}+{len} exceeds {c} columns"),
            ));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.tape.custom(
            "slice_cols",
            &[self],
            Tensor::matrix(r, len, data)?,
            move |g| {
                let mut out = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    out.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row(i));
                }
                Ok(vec![out])
            },
        ))
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Var<'t>, TensorError> {
        let xv = self.value();
        let orig = xv.shape().to_vec();
        let value = (*xv).clone().reshape(shape)?;
        Ok(self.tape.custom("reshape", &[self], value, move |g| {
            Ok(vec![g.clone().reshape(orig.clone())?])
        }))
    }
}

/// Concatenates rank-2 variables along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, TensorError> {
    let first = parts
        .first()
        .ok_or_else(|| dim_err("concat_cols", "no inputs"))?;
    let values: Vec<Rc<Tensor>> = parts.iter().map(Var::value).collect();
    let r = values[0].dims2()?.0;
    let mut widths = Vec::with_capacity(values.len());
    for v in &values {
        let (vr, vc) = v.dims2()?;
        if vr != r {
            return Err(dim_err("concat_cols", format!("row counts {r} and {vr}")));
        }
        widths.push(vc);
    }
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(r * total);
    for i in 0..r {
        for v in &values {
            data.extend_from_slice(v.row(i));
        }
    }
    let value = Tensor::matrix(r, total, data)?;
    Ok(first.tape.custom("concat_cols", parts, value, move |g| {
        let mut outs: Vec<Tensor> = widths.iter().map(|&w| Tensor::zeros(&[r, w])).collect();
        for i in 0..r {
            let row = g.row(i);
            let mut off = 0;
            for (o, &w) in outs.iter_mut().zip(&widths) {
                o.data_mut()[i * w..(i + 1) * w].copy_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        Ok(outs)
    }))
}

pub fn softmax_rows(x: &Tensor) -> Result<Tensor, TensorError> {
    let (r, c) = x.dims2()?;
    if c == 0 {
        return Err(dim_err("softmax", "empty axis"));
    }
    let mut out = Tensor::zeros(&[r, c]);
    for i in 0..r {
        let row = x.row(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out.data_mut()[i * c..(i + 1) * c];
        let mut z = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    Ok(out)
}

fn cumsum2(x: &Tensor, axis: usize, reverse: bool) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    let d = out.data_mut();
    if axis == 1 {
        for i in 0..r {
            let row = &mut d[i * c..(i + 1) * c];
            if reverse {
                for j in (0..c.saturating_sub(1)).rev() {
                    row[j] += row[j + 1];
                }
            } else {
                for j in 1..c {
                    row[j] += row[j - 1];
                }
            }
        }
    } else if reverse {
        for i in (0..r.saturating_sub(1)).rev() {
            for j in 0..c {
                d[i * c + j] += d[(i + 1) * c + j];
            }
        }
    } else {
        for i in 1..r {
            for j in 0..c {
                d[i * c + j] += d[(i - 1) * c + j];
            }
        }
    }
    out
}

pub(crate) fn gather_rows(x: &Tensor, idx: &[usize]) -> Result<Tensor, TensorError> {
    let (r, c) = x.dims2()?;
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= r {
            return Err(TensorError::Index {
                op: "gather_rows",
                index: i,
                extent: r,
            });
        }
        data.extend_from_slice(x.row(i));
    }
    Tensor::matrix(idx.len(), c, data)
}

pub(crate) fn scatter_add_rows(
    x: &Tensor,
    idx: &[usize],
    n_rows: usize,
    c: usize,
) -> Result<Tensor, TensorError> {
    if x.rows() != idx.len() || x.cols() != c {
        return Err(dim_err(
            "scatter_add_rows",
            format!("{:?} with {} indices", x.shape(), idx.len()),
        ));
    }
    let mut out = Tensor::zeros(&[n_rows, c]);
    let od = out.data_mut();
    for (k, &i) in idx.iter().enumerate() {
        if i >= n_rows {
            return Err(TensorError::Index {
                op: "scatter_add_rows",
                index: i,
                extent: n_rows,
            });
        }
        for (o, v) in od[i * c..(i + 1) * c].iter_mut().zip(x.row(k)) {
            *o += v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn softplus_values() {
        assert!((softplus_f64(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus_f64(50.0) - 50.0).abs() < 1e-12);
        let v = softplus_f64(-50.0);
        assert!(((v - (-50f64).exp()) / (-50f64).exp()).abs() < 1e-6);
        assert!(softplus_f64(-700.0) > 0.0);
    }

    #[test]
    fn matmul_gradient_scalar_case() {
        let tape = Tape::new();
        let a = tape.leaf(t(&[vec![1.0]]));
        let b = tape.leaf(t(&[vec![5.0]]));
        let loss = a.matmul(b).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(a).data(), &[5.0]);
        assert_eq!(g.wrt(b).data(), &[1.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.add(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn softmax_cumsum_clamp() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[vec![0.0, 0.0]]));
        assert_eq!(x.softmax().unwrap().value().data(), &[0.5, 0.5]);
        let c = tape.leaf(t(&[vec![1.0, 2.0, 3.0]]));
        assert_eq!(c.cumsum(1).unwrap().value().data(), &[1.0, 3.0, 6.0]);
        let s = tape.leaf(Tensor::scalar(7.0));
        let cl = s.clamp(-5.0, 5.0);
        assert_eq!(cl.value().data(), &[5.0]);
        let g = tape.backward(cl).unwrap();
        assert_eq!(g.wrt(s).data(), &[0.0]);
    }

    #[test]
    fn softmax_empty_axis_is_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 0]));
        assert!(matches!(x.softmax(), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn custom_rule_identity_and_arity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.custom("id", &[x], Tensor::scalar(2.0), |g| Ok(vec![g.clone()]));
        let g = tape.backward(y.scale(3.0)).unwrap();
        assert_eq!(g.wrt(x).data(), &[3.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.custom("bad", &[x], Tensor::scalar(2.0), |g| {
            Ok(vec![g.clone(), g.clone()])
        });
        assert!(matches!(
            tape.backward(y),
            Err(TensorError::Contract { .. })
        ));
    }

    #[test]
    fn custom_rule_doubling() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let y = tape.custom("double_grad", &[x], Tensor::scalar(1.5), |g| {
            Ok(vec![g.map(|v| 2.0 * v)])
        });
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = x.mul(c).unwrap();
        let g = tape.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn broadcasting_reduces_gradients() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[3, 2]));
        let row = tape.leaf(t(&[vec![1.0, 2.0]]));
        let col = tape.leaf(Tensor::column(vec![1.0, 1.0, 1.0]));
        let y = a.add(row).unwrap().mul(col).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(row).data(), &[3.0, 3.0]);
        assert_eq!(g.wrt(col).data(), &[3.0, 3.0, 3.0]);
    }
}
