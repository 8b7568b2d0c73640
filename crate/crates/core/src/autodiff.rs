//! Scalar reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Tape`] records every elementary operation applied to its [`Var`]s in
//! topological order. [`Tape::gradient`] runs a plain floating-point backward
//! sweep. [`Tape::grad_graph`] runs the backward sweep *on the tape itself*,
//! so the returned derivatives are ordinary `Var`s that can be differentiated
//! again (reverse-over-reverse). This is what lets residuals containing
//! input-derivatives of a network be differentiated with respect to its
//! parameters.
//!
//! ```
//! use threat_pinn::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = x * x;
//! assert_eq!(y.value(), 9.0);
//! assert_eq!(tape.gradient(y, &[x]).unwrap(), vec![6.0]);
//! ```
//!
//! Domain errors (logarithm of a non-positive number, division by zero) and
//! non-finite results do not panic at the operator: the offending node is
//! remembered and every later derivative query on the tape fails with the
//! node index and the operation that produced it.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("variable recorded on a different tape passed to `{context}`")]
    CrossTape { context: &'static str },
    #[error("`{op}` expects {expected} argument(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("domain error in `{op}` at node {node} (argument {arg})")]
    Domain { op: &'static str, node: usize, arg: f64 },
    #[error("non-finite value {value} produced by `{op}` at node {node}")]
    NonFinite {
        op: &'static str,
        node: usize,
        value: f64,
    },
    #[error("node {node} (`{op}`) has no registered second derivative")]
    NoSecondDerivative { op: &'static str, node: usize },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// Elementary functions accepted by [`Tape::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementary {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Exp,
    Ln,
    Tanh,
    Sigmoid,
    /// `atan2(y, x)`, arguments in that order.
    Atan2,
    /// `pow(base, exponent)`; the base must be positive.
    Pow,
}

impl Elementary {
    pub fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Sub => "sub",
            Self::Mul => "mul",
            Self::Div => "div",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Exp => "exp",
            Self::Ln => "ln",
            Self::Tanh => "tanh",
            Self::Sigmoid => "sigmoid",
            Self::Atan2 => "atan2",
            Self::Pow => "pow",
        }
    }

    fn arity(self) -> usize {
        match self {
            Self::Add | Self::Sub | Self::Mul | Self::Div | Self::Atan2 | Self::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    AddConst,
    MulConst(f64),
    DivConst(f64),
    PowConst(f64),
    Pow,
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Tanh,
    Sigmoid,
    Atan2,
    /// User-supplied unary function with a fixed local slope and no
    /// second derivative.
    FirstOrder(&'static str, f64),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Neg => "neg",
            Op::AddConst => "add_const",
            Op::MulConst(_) => "mul_const",
            Op::DivConst(_) => "div_const",
            Op::PowConst(_) => "powf",
            Op::Pow => "pow",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Exp => "exp",
            Op::Ln => "ln",
            Op::Sqrt => "sqrt",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Atan2 => "atan2",
            Op::FirstOrder(name, _) => name,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    lhs: u32,
    rhs: u32,
}

#[derive(Debug, Default)]
struct TapeData {
    nodes: Vec<Node>,
    values: Vec<f64>,
    fault: Option<AutodiffError>,
}

/// Recording of a scalar computation. Single-threaded; independent tapes may
/// live on different threads.
#[derive(Debug, Default)]
pub struct Tape {
    data: RefCell<TapeData>,
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} = {})", self.index, self.value)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Self {
            data: RefCell::new(TapeData {
                nodes: Vec::with_capacity(nodes),
                values: Vec::with_capacity(nodes),
                fault: None,
            }),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.data.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node. Requires exclusive access, so no `Var` of the old
    /// generation can survive.
    pub fn clear(&mut self) {
        let data = self.data.get_mut();
        data.nodes.clear();
        data.values.clear();
        data.fault = None;
    }

    /// New independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, 0, 0, value)
    }

    /// Constant leaf; identical to [`Tape::var`] but documents intent.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, 0, 0, value)
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// First recorded fault (domain error or non-finite value), if any.
    pub fn fault(&self) -> Option<AutodiffError> {
        self.data.borrow().fault.clone()
    }

    /// Checked recording of an elementary function.
    pub fn record<'t>(&'t self, op: Elementary, args: &[Var<'t>]) -> Result<Var<'t>> {
        if args.len() != op.arity() {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: op.arity(),
                got: args.len(),
            });
        }
        for a in args {
            self.check_owner(*a, "record")?;
            if !a.value.is_finite() {
                return Err(AutodiffError::NonFinite {
                    op: "record",
                    node: a.index as usize,
                    value: a.value,
                });
            }
        }
        let before = self.fault();
        let out = match op {
            Elementary::Add => args[0] + args[1],
            Elementary::Sub => args[0] - args[1],
            Elementary::Mul => args[0] * args[1],
            Elementary::Div => args[0] / args[1],
            Elementary::Sin => args[0].sin(),
            Elementary::Cos => args[0].cos(),
            Elementary::Exp => args[0].exp(),
            Elementary::Ln => args[0].ln(),
            Elementary::Tanh => args[0].tanh(),
            Elementary::Sigmoid => args[0].sigmoid(),
            Elementary::Atan2 => args[0].atan2(args[1]),
            Elementary::Pow => args[0].pow(args[1]),
        };
        match (before, self.fault()) {
            (None, Some(err)) => Err(err),
            _ => Ok(out),
        }
    }

    /// Unary function with a caller-supplied value and slope. Usable with
    /// [`Tape::gradient`]; rejected by [`Tape::grad_graph`].
    pub fn first_order<'t>(
        &'t self,
        name: &'static str,
        arg: Var<'t>,
        value: f64,
        slope: f64,
    ) -> Var<'t> {
        self.assert_owner(arg);
        self.push(Op::FirstOrder(name, slope), arg.index, 0, value)
    }

    /// Derivatives of `output` with respect to each of `inputs`. Inputs the
    /// output does not depend on receive 0.
    pub fn gradient(&self, output: Var<'_>, inputs: &[Var<'_>]) -> Result<Vec<f64>> {
        let adj = self.adjoints(output)?;
        inputs
            .iter()
            .map(|v| {
                self.check_owner(*v, "gradient")?;
                Ok(adj.get(*v))
            })
            .collect()
    }

    /// Full backward sweep from `output`; query individual adjoints with
    /// [`Adjoints::get`].
    pub fn adjoints(&self, output: Var<'_>) -> Result<Adjoints> {
        self.check_owner(output, "gradient")?;
        let data = self.data.borrow();
        if let Some(err) = &data.fault {
            return Err(err.clone());
        }
        let end = output.index as usize + 1;
        let mut adj = vec![0.0; end];
        adj[end - 1] = 1.0;
        let values = &data.values;
        for i in (0..end).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            let node = data.nodes[i];
            let (l, r) = (node.lhs as usize, node.rhs as usize);
            let out = values[i];
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    adj[l] += g;
                    adj[r] += g;
                }
                Op::Sub => {
                    adj[l] += g;
                    adj[r] -= g;
                }
                Op::Mul => {
                    adj[l] += g * values[r];
                    adj[r] += g * values[l];
                }
                Op::Div => {
                    let b = values[r];
                    adj[l] += g / b;
                    adj[r] -= g * out / b;
                }
                Op::Neg => adj[l] -= g,
                Op::AddConst => adj[l] += g,
                Op::MulConst(c) => adj[l] += g * c,
                Op::DivConst(c) => adj[l] += g / c,
                Op::PowConst(k) => adj[l] += g * k * values[l].powf(k - 1.0),
                Op::Pow => {
                    let a = values[l];
                    let b = values[r];
                    adj[l] += g * b * a.powf(b - 1.0);
                    adj[r] += g * out * a.ln();
                }
                Op::Sin => adj[l] += g * values[l].cos(),
                Op::Cos => adj[l] -= g * values[l].sin(),
                Op::Exp => adj[l] += g * out,
                Op::Ln => adj[l] += g / values[l],
                Op::Sqrt => adj[l] += g * 0.5 / out,
                Op::Tanh => adj[l] += g * (1.0 - out * out),
                Op::Sigmoid => adj[l] += g * out * (1.0 - out),
                Op::Atan2 => {
                    let (y, x) = (values[l], values[r]);
                    let den = x * x + y * y;
                    adj[l] += g * x / den;
                    adj[r] -= g * y / den;
                }
                Op::FirstOrder(_, slope) => adj[l] += g * slope,
            }
        }
        Ok(Adjoints { adj })
    }

    /// Backward sweep recorded onto this tape: the returned derivatives are
    /// `Var`s and can be differentiated again.
    pub fn grad_graph<'t>(&'t self, output: Var<'t>, inputs: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        self.check_owner(output, "grad_graph")?;
        for v in inputs {
            self.check_owner(*v, "grad_graph")?;
        }
        if let Some(err) = self.fault() {
            return Err(err);
        }
        let end = output.index as usize + 1;
        let mut adj: Vec<Option<Var<'t>>> = vec![None; end];
        adj[end - 1] = Some(self.constant(1.0));

        fn acc<'t>(slot: &mut Option<Var<'t>>, contrib: Var<'t>) {
            *slot = Some(match *slot {
                Some(prev) => prev + contrib,
                None => contrib,
            });
        }

        for i in (0..end).rev() {
            let Some(g) = adj[i] else { continue };
            let node = self.data.borrow().nodes[i];
            let (l, r) = (node.lhs as usize, node.rhs as usize);
            let out = self.at(i);
            match node.op {
                Op::Leaf => {}
                Op::Add => {
                    acc(&mut adj[l], g);
                    acc(&mut adj[r], g);
                }
                Op::Sub => {
                    acc(&mut adj[l], g);
                    acc(&mut adj[r], -g);
                }
                Op::Mul => {
                    let (a, b) = (self.at(l), self.at(r));
                    acc(&mut adj[l], g * b);
                    acc(&mut adj[r], g * a);
                }
                Op::Div => {
                    let b = self.at(r);
                    acc(&mut adj[l], g / b);
                    acc(&mut adj[r], -(g * out / b));
                }
                Op::Neg => acc(&mut adj[l], -g),
                Op::AddConst => acc(&mut adj[l], g),
                Op::MulConst(c) => acc(&mut adj[l], g * c),
                Op::DivConst(c) => acc(&mut adj[l], g / c),
                Op::PowConst(k) => {
                    let a = self.at(l);
                    acc(&mut adj[l], g * (a.powf(k - 1.0) * k));
                }
                Op::Pow => {
                    let (a, b) = (self.at(l), self.at(r));
                    acc(&mut adj[l], g * b * a.pow(b - 1.0));
                    acc(&mut adj[r], g * out * a.ln());
                }
                Op::Sin => acc(&mut adj[l], g * self.at(l).cos()),
                Op::Cos => acc(&mut adj[l], -(g * self.at(l).sin())),
                Op::Exp => acc(&mut adj[l], g * out),
                Op::Ln => acc(&mut adj[l], g / self.at(l)),
                Op::Sqrt => acc(&mut adj[l], g * 0.5 / out),
                Op::Tanh => acc(&mut adj[l], g * (1.0 - out * out)),
                Op::Sigmoid => acc(&mut adj[l], g * out * (1.0 - out)),
                Op::Atan2 => {
                    let (y, x) = (self.at(l), self.at(r));
                    let den = x * x + y * y;
                    acc(&mut adj[l], g * x / den);
                    acc(&mut adj[r], -(g * y / den));
                }
                Op::FirstOrder(name, _) => {
                    return Err(AutodiffError::NoSecondDerivative { op: name, node: i });
                }
            }
        }
        Ok(inputs
            .iter()
            .map(|v| adj.get(v.index as usize).copied().flatten().unwrap_or_else(|| self.constant(0.0)))
            .collect())
    }

    fn at(&self, index: usize) -> Var<'_> {
        Var {
            tape: self,
            index: index as u32,
            value: self.data.borrow().values[index],
        }
    }

    fn push(&self, op: Op, lhs: u32, rhs: u32, value: f64) -> Var<'_> {
        let mut data = self.data.borrow_mut();
        let index = data.nodes.len();
        if data.fault.is_none() && !value.is_finite() {
            let arg = data.values.get(lhs as usize).copied().unwrap_or(f64::NAN);
            data.fault = Some(match op {
                Op::Ln | Op::Sqrt | Op::Pow if arg <= 0.0 => AutodiffError::Domain {
                    op: op.name(),
                    node: index,
                    arg,
                },
                Op::Div if data.values[rhs as usize] == 0.0 => AutodiffError::Domain {
                    op: op.name(),
                    node: index,
                    arg: 0.0,
                },
                _ => AutodiffError::NonFinite {
                    op: op.name(),
                    node: index,
                    value,
                },
            });
        }
        data.nodes.push(Node { op, lhs, rhs });
        data.values.push(value);
        Var {
            tape: self,
            index: index as u32,
            value,
        }
    }

    fn owns(&self, v: Var<'_>) -> bool {
        std::ptr::eq(self, v.tape)
    }

    fn check_owner(&self, v: Var<'_>, context: &'static str) -> Result<()> {
        if self.owns(v) {
            Ok(())
        } else {
            Err(AutodiffError::CrossTape { context })
        }
    }

    fn assert_owner(&self, v: Var<'_>) {
        assert!(self.owns(v), "{}", AutodiffError::CrossTape { context: "operator" });
    }
}

/// Adjoint vector produced by [`Tape::adjoints`].
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<f64>,
}

impl Adjoints {
    pub fn get(&self, v: Var<'_>) -> f64 {
        self.adj.get(v.index as usize).copied().unwrap_or(0.0)
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: f64) -> Self {
        self.tape.push(op, self.index, 0, value)
    }

    fn binary(self, other: Self, op: Op, value: f64) -> Self {
        self.tape.assert_owner(other);
        self.tape.push(op, self.index, other.index, value)
    }

    pub fn sin(self) -> Self {
        self.unary(Op::Sin, self.value.sin())
    }

    pub fn cos(self) -> Self {
        self.unary(Op::Cos, self.value.cos())
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp, self.value.exp())
    }

    pub fn ln(self) -> Self {
        let v = if self.value > 0.0 { self.value.ln() } else { f64::NAN };
        self.unary(Op::Ln, v)
    }

    pub fn sqrt(self) -> Self {
        let v = if self.value >= 0.0 { self.value.sqrt() } else { f64::NAN };
        self.unary(Op::Sqrt, v)
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh, self.value.tanh())
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid, sigmoid(self.value))
    }

    pub fn powf(self, k: f64) -> Self {
        self.unary(Op::PowConst(k), self.value.powf(k))
    }

    pub fn pow(self, exponent: Self) -> Self {
        let v = if self.value > 0.0 {
            self.value.powf(exponent.value)
        } else {
            f64::NAN
        };
        self.binary(exponent, Op::Pow, v)
    }

    /// `atan2(self, x)`.
    pub fn atan2(self, x: Self) -> Self {
        self.binary(x, Op::Atan2, self.value.atan2(x.value))
    }

    pub fn square(self) -> Self {
        self * self
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add, self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub, self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul, self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Div, self.value / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(Op::Neg, -self.value)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(Op::AddConst, self.value + rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(Op::AddConst, self.value - rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(Op::MulConst(rhs), self.value * rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(Op::DivConst(rhs), self.value / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::AddConst, self + rhs.value)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(Op::MulConst(self), self * rhs.value)
    }
}

/// Numeric type the physics code is written against: plain `f64` for
/// evaluation, [`Var`] when derivatives are needed.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn sigmoid(self) -> Self;
    fn powf(self, k: f64) -> Self;
    fn atan2(self, x: Self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> Self {
        c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    fn powf(self, k: f64) -> Self {
        f64::powf(self, k)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Self {
        self.tape.constant(c)
    }
    fn sin(self) -> Self {
        Var::sin(self)
    }
    fn cos(self) -> Self {
        Var::cos(self)
    }
    fn exp(self) -> Self {
        Var::exp(self)
    }
    fn ln(self) -> Self {
        Var::ln(self)
    }
    fn tanh(self) -> Self {
        Var::tanh(self)
    }
    fn sigmoid(self) -> Self {
        Var::sigmoid(self)
    }
    fn powf(self, k: f64) -> Self {
        Var::powf(self, k)
    }
    fn atan2(self, x: Self) -> Self {
        Var::atan2(self, x)
    }
}

/// Parameter gradient of an expression built from a function's
/// input-derivatives.
///
/// `inner(inputs, params)` is differentiated with respect to `inputs` on the
/// tape; `outer(inner, d_inner_d_inputs, inputs, params)` combines the results
/// into a scalar, which is then differentiated with respect to `params`.
pub fn gradient_nested<F, G>(inputs: &[f64], params: &[f64], inner: F, outer: G) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t>], &[Var<'t>]) -> Var<'t>,
    G: for<'t> Fn(Var<'t>, &[Var<'t>], &[Var<'t>], &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(inputs);
    let ps = tape.vars(params);
    let y = inner(&xs, &ps);
    let dy = tape.grad_graph(y, &xs)?;
    let z = outer(y, &dy, &xs, &ps);
    tape.gradient(z, &ps)
}
