//! Reverse-mode automatic differentiation on a flat tape, plus the [`Scalar`]
//! trait that lets the model code run unchanged on `f64` (sampling, metric
//! evaluation) or on tracked [`Var`]s (gradient of the bound).
//!
//! The tape records one node per arithmetic operation with at most two
//! parents and their local partials; the backward sweep is a single reverse
//! pass. Nodes are 24 bytes, so a bound evaluation of a few million
//! operations costs tens of megabytes and no allocation beyond the `Vec`
//! growth. Gradients of `max`-style clamps use the one-sided derivative.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    parent: [u32; 2],
    weight: [f64; 2],
}

/// Arena of recorded operations. One tape per gradient evaluation; tapes are
/// not thread-safe and not meant to outlive the evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape { nodes: RefCell::new(Vec::with_capacity(n)) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, parent: [u32; 2], weight: [f64; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < u32::MAX as usize, "tape overflow");
        nodes.push(Node { parent, weight });
        idx as u32
    }

    /// Introduce a leaf variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([0, 0], [0.0, 0.0]);
        Var { tape: self, idx, value }
    }

    /// Adjoints of `output` with respect to every node on the tape.
    pub fn gradient(&self, output: Var<'_>) -> Gradient {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0f64; nodes.len()];
        adjoint[output.idx as usize] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            if n.weight[0] != 0.0 {
                adjoint[n.parent[0] as usize] += n.weight[0] * a;
            }
            if n.weight[1] != 0.0 {
                adjoint[n.parent[1] as usize] += n.weight[1] * a;
            }
        }
        Gradient { adjoint }
    }
}

pub struct Gradient {
    adjoint: Vec<f64>,
}

impl Gradient {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoint[v.idx as usize]
    }

    pub fn wrt_slice(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(*v)).collect()
    }
}

/// A value tracked on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    value: f64,
}

impl<'t> Var<'t> {
    fn unary(self, value: f64, dv: f64) -> Var<'t> {
        let idx = self.tape.push([self.idx, 0], [dv, 0.0]);
        Var { tape: self.tape, idx, value }
    }

    fn binary(self, rhs: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.tape.push([self.idx, rhs.idx], [da, db]);
        Var { tape: self.tape, idx, value }
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

/// Numerically stable softplus, `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on positive inputs.
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv needs a positive argument");
    // ln(e^y - 1) = y + ln(1 - e^-y)
    y + (-(-y).exp()).ln_1p()
}

/// The scalar abstraction the model is written against. `f64` implements it
/// with plain arithmetic; [`Var`] implements it by recording on its tape.
///
/// `lift` turns a constant into a scalar of the same kind; for `Var` the
/// constant joins the tape as a leaf whose adjoint is discarded. Comparisons
/// always go through `val()`, so control flow is shared between both paths
/// and a finite-difference probe sees the same branches as the tape.
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
    fn val(self) -> f64;
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn softplus(self) -> Self;
    /// `max(self, floor)` with the one-sided derivative (0 below the floor).
    fn clamp_min(self, floor: f64) -> Self;
    fn recip(self) -> Self {
        self.lift(1.0) / self
    }
    fn powi2(self) -> Self {
        self * self
    }
}

impl Scalar for f64 {
    fn val(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn softplus(self) -> f64 {
        softplus(self)
    }
    fn clamp_min(self, floor: f64) -> f64 {
        self.max(floor)
    }
}

impl<'t> Scalar for Var<'t> {
    fn val(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Var<'t> {
        self.tape.var(c)
    }
    fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Var<'t> {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn sqrt(self) -> Var<'t> {
        let s = self.value.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn softplus(self) -> Var<'t> {
        self.unary(softplus(self.value), sigmoid(self.value))
    }
    fn clamp_min(self, floor: f64) -> Var<'t> {
        if self.value >= floor {
            self.unary(self.value, 1.0)
        } else {
            self.unary(floor, 0.0)
        }
    }
}

// ---- operator impls for Var ----

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let v = self.value / rhs.value;
        self.binary(rhs, v, 1.0 / rhs.value, -v / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.unary(self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let v = self / rhs.value;
        rhs.unary(v, -v / rhs.value)
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({} @ {})", self.value, self.idx)
    }
}
