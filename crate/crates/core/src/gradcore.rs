//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation as a node holding its forward value and
//! the parents it was computed from. Node ids are assigned in creation order,
//! so walking ids downward from the loss visits the graph in reverse
//! topological order. A fresh graph is built for every evaluation; nothing
//! outlives a single forward/backward pass.
//!
//! Binary operations require equal shapes, with one exception: an operand
//! holding exactly one element is broadcast against the other.
//!
//! Every forward value is checked for NaN/Inf and the operation that produced
//! a non-finite value is reported as an error.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberate defects in backward rules, used as negative controls for the
/// gradient checker.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradFault {
    /// tanh backward uses `1 - y` instead of `1 - y^2`.
    TanhBackward,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Sigmoid(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Scale(Var, f64),
    Shift(Var),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Transpose(Var),
}

impl Op {
    fn parents(&self) -> [Option<Var>; 2] {
        match *self {
            Op::Leaf | Op::Param(_) => [None, None],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                [Some(a), Some(b)]
            }
            Op::Neg(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Clamp(a, ..)
            | Op::Scale(a, _)
            | Op::Shift(a)
            | Op::Sum(a, _)
            | Op::Mean(a, _)
            | Op::Transpose(a) => [Some(a), None],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    /// Whether any parameter is an ancestor (or the node itself).
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<Vec<(String, Var)>>,
    fault: Option<GradFault>,
}

/// Gradients of a scalar loss with respect to every registered parameter, in
/// registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    /// Adds `other` entry by entry; both must come from graphs with the same
    /// parameter registrations.
    pub fn accumulate(&mut self, other: &Gradients) {
        for ((_, a), (_, b)) in self.entries.iter_mut().zip(&other.entries) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in &mut self.entries {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Named trainable tensors in a fixed order. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn as_slice(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<(String, Tensor)> {
        self.entries
    }

    /// Registers every tensor as a parameter of `g`, in order.
    pub fn bind(&self, g: &Graph) -> Result<Vec<Var>> {
        self.entries
            .iter()
            .map(|(name, t)| g.param(name, t.clone()))
            .collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// Output shape of a binary elementwise op, or an error if the shapes are
/// neither equal nor scalar-with-tensor.
fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.len() == 1 {
        Ok(a.shape().to_vec())
    } else if a.len() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(shape_err(op, a, b))
    }
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(op, a, b)?;
    let n: usize = shape.iter().product();
    let pick = |t: &Tensor, i: usize| {
        if t.len() == 1 {
            t.data()[0]
        } else {
            t.data()[i]
        }
    };
    let data = (0..n).map(|i| f(pick(a, i), pick(b, i))).collect();
    Tensor::new(shape, data)
}

/// Collapses a broadcast gradient back onto an operand's shape.
fn unbroadcast(grad: Tensor, target: &Tensor) -> Tensor {
    if grad.shape() == target.shape() {
        grad
    } else {
        Tensor::full(target.shape(), grad.sum())
    }
}

/// Splits a shape around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn reduce_sum(x: &Tensor, axis: Option<usize>) -> Result<Tensor> {
    match axis {
        None => Ok(Tensor::scalar(x.sum())),
        Some(axis) => {
            if axis >= x.rank() {
                return Err(Error::InvalidAxis {
                    axis,
                    rank: x.rank(),
                });
            }
            let (outer, extent, inner) = axis_split(x.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for a in 0..extent {
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[(o * extent + a) * inner + i];
                    }
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::new(shape, out)
        }
    }
}

/// Inverse of [`reduce_sum`]: copies `grad` along the reduced axis.
fn expand_sum(grad: &Tensor, input: &Tensor, axis: Option<usize>) -> Tensor {
    match axis {
        None => Tensor::full(input.shape(), grad.item()),
        Some(axis) => {
            let (outer, extent, inner) = axis_split(input.shape(), axis);
            let mut out = vec![0.0; input.len()];
            for o in 0..outer {
                for a in 0..extent {
                    for i in 0..inner {
                        out[(o * extent + a) * inner + i] = grad.data()[o * inner + i];
                    }
                }
            }
            Tensor::new(input.shape().to_vec(), out).expect("expand_sum preserves size")
        }
    }
}

fn reduced_count(x: &Tensor, axis: Option<usize>) -> usize {
    match axis {
        None => x.len(),
        Some(a) => x.shape()[a],
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

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[doc(hidden)]
    pub fn with_fault(fault: GradFault) -> Self {
        Self {
            fault: Some(fault),
            ..Self::default()
        }
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = matches!(op, Op::Param(_))
            || op.parents().iter().flatten().any(|p| nodes[p.0].needs_grad);
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(nodes.len() - 1))
    }

    fn with_value<R>(&self, v: Var, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    fn with_values<R>(&self, a: Var, b: Var, f: impl FnOnce(&Tensor, &Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.with_value(v, Tensor::clone)
    }

    /// The single entry of a one-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.with_value(v, |t| t.data()[0])
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.with_value(v, |t| t.shape().to_vec())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A non-trainable input.
    pub fn constant(&self, value: Tensor) -> Result<Var> {
        self.push("constant", value, Op::Leaf)
    }

    /// A trainable leaf. Names must be unique within the graph.
    pub fn param(&self, name: &str, value: Tensor) -> Result<Var> {
        if self.params.borrow().iter().any(|(n, _)| n == name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let index = self.params.borrow().len();
        let v = self.push("param", value, Op::Param(index))?;
        self.params.borrow_mut().push((name.to_string(), v));
        Ok(v)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_values(a, b, |x, y| x.matmul(y))?;
        self.push("matmul", value, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_values(a, b, |x, y| binary("add", x, y, |p, q| p + q))?;
        self.push("add", value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_values(a, b, |x, y| binary("sub", x, y, |p, q| p - q))?;
        self.push("sub", value, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_values(a, b, |x, y| binary("mul", x, y, |p, q| p * q))?;
        self.push("mul", value, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.with_values(a, b, |x, y| binary("div", x, y, |p, q| p / q))?;
        self.push("div", value, Op::Div(a, b))
    }

    pub fn neg(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(|p| -p));
        self.push("neg", value, Op::Neg(a))
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(f64::tanh));
        self.push("tanh", value, Op::Tanh(a))
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(f64::exp));
        self.push("exp", value, Op::Exp(a))
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| {
            if let Some(bad) = x.data().iter().find(|&&p| p <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive entry {bad}"),
                });
            }
            Ok(x.map(f64::ln))
        })?;
        self.push("log", value, Op::Log(a))
    }

    pub fn square(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(|p| p * p));
        self.push("square", value, Op::Square(a))
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(sigmoid));
        self.push("sigmoid", value, Op::Sigmoid(a))
    }

    pub fn softplus(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(softplus));
        self.push("softplus", value, Op::Softplus(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(|p| p.clamp(lo, hi)));
        self.push("clamp", value, Op::Clamp(a, lo, hi))
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&self, a: Var, factor: f64) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(|p| p * factor));
        self.push("scale", value, Op::Scale(a, factor))
    }

    /// Addition of a fixed constant.
    pub fn shift(&self, a: Var, offset: f64) -> Result<Var> {
        let value = self.with_value(a, |x| x.map(|p| p + offset));
        self.push("shift", value, Op::Shift(a))
    }

    pub fn sum(&self, a: Var, axis: Option<usize>) -> Result<Var> {
        let value = self.with_value(a, |x| reduce_sum(x, axis))?;
        self.push("sum", value, Op::Sum(a, axis))
    }

    pub fn mean(&self, a: Var, axis: Option<usize>) -> Result<Var> {
        let value = self.with_value(a, |x| {
            let n = reduced_count(x, axis) as f64;
            reduce_sum(x, axis).map(|s| s.map(|p| p / n))
        })?;
        self.push("mean", value, Op::Mean(a, axis))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let value = self.with_value(a, Tensor::transpose)?;
        self.push("transpose", value, Op::Transpose(a))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every registered parameter gets
    /// an entry; parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if !(loss_shape.is_empty() || loss_shape == [1]) {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }

        let params = self.params.borrow();
        let mut param_grads: Vec<Option<Tensor>> = vec![None; params.len()];
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));

        let accumulate = |grads: &mut Vec<Option<Tensor>>, target: Var, g: Tensor| {
            if !nodes[target.0].needs_grad {
                return;
            }
            match &mut grads[target.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let value = &node.value;
            let val = |v: Var| &nodes[v.0].value;
            match node.op {
                Op::Leaf => {}
                Op::Param(index) => param_grads[index] = Some(g),
                Op::MatMul(a, b) => {
                    if nodes[a.0].needs_grad {
                        accumulate(&mut grads, a, g.matmul(&val(b).transpose()?)?);
                    }
                    if nodes[b.0].needs_grad {
                        accumulate(&mut grads, b, val(a).transpose()?.matmul(&g)?);
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, unbroadcast(g.clone(), val(a)));
                    accumulate(&mut grads, b, unbroadcast(g, val(b)));
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, unbroadcast(g.clone(), val(a)));
                    accumulate(&mut grads, b, unbroadcast(g.map(|p| -p), val(b)));
                }
                Op::Mul(a, b) => {
                    let ga = binary("mul", &g, val(b), |p, q| p * q)?;
                    let gb = binary("mul", &g, val(a), |p, q| p * q)?;
                    accumulate(&mut grads, a, unbroadcast(ga, val(a)));
                    accumulate(&mut grads, b, unbroadcast(gb, val(b)));
                }
                Op::Div(a, b) => {
                    let ga = binary("div", &g, val(b), |p, q| p / q)?;
                    // d(a/b)/db = -(a/b)/b = -value/b
                    let gb = binary(
                        "div",
                        &binary("mul", &g, value, |p, q| p * q)?,
                        val(b),
                        |p, q| -p / q,
                    )?;
                    accumulate(&mut grads, a, unbroadcast(ga, val(a)));
                    accumulate(&mut grads, b, unbroadcast(gb, val(b)));
                }
                Op::Neg(a) => accumulate(&mut grads, a, g.map(|p| -p)),
                Op::Tanh(a) => {
                    let ga = match self.fault {
                        Some(GradFault::TanhBackward) => g.zip_map(value, |p, y| p * (1.0 - y)),
                        None => g.zip_map(value, |p, y| p * (1.0 - y * y)),
                    };
                    accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, a, g.zip_map(value, |p, y| p * y)),
                Op::Log(a) => accumulate(&mut grads, a, g.zip_map(val(a), |p, x| p / x)),
                Op::Square(a) => accumulate(&mut grads, a, g.zip_map(val(a), |p, x| 2.0 * p * x)),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, a, g.zip_map(value, |p, y| p * y * (1.0 - y)))
                }
                Op::Softplus(a) => {
                    accumulate(&mut grads, a, g.zip_map(val(a), |p, x| p * sigmoid(x)))
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = g.zip_map(val(a), |p, x| if (lo..=hi).contains(&x) { p } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::Scale(a, factor) => accumulate(&mut grads, a, g.map(|p| p * factor)),
                Op::Shift(a) => accumulate(&mut grads, a, g),
                Op::Sum(a, axis) => accumulate(&mut grads, a, expand_sum(&g, val(a), axis)),
                Op::Mean(a, axis) => {
                    let n = reduced_count(val(a), axis) as f64;
                    accumulate(&mut grads, a, expand_sum(&g, val(a), axis).map(|p| p / n));
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.transpose()?),
            }
        }

        let entries = params
            .iter()
            .zip(param_grads)
            .map(|((name, v), g)| {
                let g = g.unwrap_or_else(|| Tensor::zeros(nodes[v.0].value.shape()));
                (name.clone(), g)
            })
            .collect();
        Ok(Gradients { entries })
    }
}

/// Evaluates `f` on a fresh graph with `params` registered under their names,
/// returning the scalar value and its gradients.
pub fn value_and_grad<F>(f: &F, params: &[(String, Tensor)]) -> Result<(f64, Gradients)>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let graph = Graph::new();
    let vars = params
        .iter()
        .map(|(name, t)| graph.param(name, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&graph, &vars)?;
    let value = graph.item(loss);
    Ok((value, graph.backward(loss)?))
}

fn eval_scalar<F>(f: &F, params: &[(String, Tensor)]) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    let graph = Graph::new();
    let vars = params
        .iter()
        .map(|(name, t)| graph.param(name, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&graph, &vars)?;
    Ok(graph.item(loss))
}

/// Max error per parameter between backward-pass gradients and central
/// differences, measured as `|analytic - numeric| / max(1, |analytic|)`.
pub fn finite_diff_report<F>(
    f: F,
    params: &[(String, Tensor)],
    step: f64,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    finite_diff_report_with_fault(f, params, step, None)
}

/// [`finite_diff_report`] with the analytic pass run on a graph carrying
/// `fault`. Numeric differences are unaffected.
#[doc(hidden)]
pub fn finite_diff_report_with_fault<F>(
    f: F,
    params: &[(String, Tensor)],
    step: f64,
    fault: Option<GradFault>,
) -> Result<Vec<(String, f64)>>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let graph = match fault {
        Some(fault) => Graph::with_fault(fault),
        None => Graph::new(),
    };
    let vars = params
        .iter()
        .map(|(name, t)| graph.param(name, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&graph, &vars)?;
    let analytic = graph.backward(loss)?;
    let mut work = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    for (p, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = 0.0_f64;
        for i in 0..work[p].1.len() {
            let original = work[p].1.data()[i];
            work[p].1.data_mut()[i] = original + step;
            let plus = eval_scalar(&f, &work)?;
            work[p].1.data_mut()[i] = original - step;
            let minus = eval_scalar(&f, &work)?;
            work[p].1.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
        report.push((name.to_string(), worst));
    }
    Ok(report)
}

/// Largest entry of [`finite_diff_report`] (0 when there are no parameters).
pub fn finite_diff_check<F>(f: F, params: &[(String, Tensor)], step: f64) -> Result<f64>
where
    F: Fn(&Graph, &[Var]) -> Result<Var>,
{
    Ok(finite_diff_report(f, params, step)?
        .into_iter()
        .map(|(_, e)| e)
        .fold(0.0, f64::max))
}
