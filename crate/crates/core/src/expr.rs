//! Scalar expression trees and their evaluation over plain floats and
//! first-order jets.
//!
//! One generic evaluator drives both value and derivative computation, so the
//! branch taken by a piecewise node is always the same in `eval` and in
//! `jacobian`.

use std::fmt;

use thiserror::Error;

/// Below this argument the flat function `e^{-1/t}` is returned as exactly 0,
/// together with its derivative.
const BUMP_FLOOR: f64 = 1e-300;

/// Square-root arguments in `[-SQRT_SLACK, 0)` are treated as 0. They only
/// arise from rounding in expressions such as `1 + 1/ln(e^{-1})`.
const SQRT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point lies on a branch boundary; pass one_sided to differentiate the closed side")]
    BranchBoundary,
}

/// Comparison used by a [`Expr::Guard`] condition against zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Side {
    /// `cond >= 0` selects the first branch.
    Closed,
    /// `cond > 0` selects the first branch.
    Open,
}

impl Side {
    fn accepts(self, c: f64) -> bool {
        match self {
            Side::Closed => c >= 0.0,
            Side::Open => c > 0.0,
        }
    }
}

/// Expression tree over variables `x1..xn` (stored zero-based).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
    Cbrt(Box<Expr>),
    /// Real `m`-th root, `m >= 2`; odd roots keep the sign of the argument.
    Root(Box<Expr>, u32),
    Abs(Box<Expr>),
    /// `e^{-1/t}` for `t > 0`, else 0.
    Bump(Box<Expr>),
    Guard {
        cond: Box<Expr>,
        side: Side,
        then: Box<Expr>,
        otherwise: Box<Expr>,
    },
}

// Small constructors keep the builtin catalogs readable.
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }
    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }
    pub fn neg(a: Expr) -> Expr {
        Expr::Neg(Box::new(a))
    }
    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }
    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }
    pub fn pow(a: Expr, n: u32) -> Expr {
        Expr::Pow(Box::new(a), n)
    }
    pub fn exp(a: Expr) -> Expr {
        Expr::Exp(Box::new(a))
    }
    pub fn ln(a: Expr) -> Expr {
        Expr::Ln(Box::new(a))
    }
    pub fn sqrt(a: Expr) -> Expr {
        Expr::Sqrt(Box::new(a))
    }
    pub fn cbrt(a: Expr) -> Expr {
        Expr::Cbrt(Box::new(a))
    }
    pub fn root(a: Expr, m: u32) -> Expr {
        Expr::Root(Box::new(a), m)
    }
    pub fn abs(a: Expr) -> Expr {
        Expr::Abs(Box::new(a))
    }
    pub fn bump(a: Expr) -> Expr {
        Expr::Bump(Box::new(a))
    }
    pub fn guard(cond: Expr, side: Side, then: Expr, otherwise: Expr) -> Expr {
        Expr::Guard { cond: Box::new(cond), side, then: Box::new(then), otherwise: Box::new(otherwise) }
    }

    /// Sum of the given terms, `0` when empty.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Const(0.0),
            Some(first) => it.fold(first, Expr::add),
        }
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut best = None;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                best = Some(best.map_or(*i, |b: usize| b.max(*i)));
            }
        });
        best
    }

    /// Structural check used at construction time.
    pub fn validate(&self) -> Result<(), String> {
        let mut err = None;
        self.visit(&mut |e| match e {
            Expr::Const(v) if !v.is_finite() => err = Some(format!("non-finite constant {v}")),
            Expr::Root(_, m) if *m < 2 => err = Some(format!("root order {m} < 2")),
            _ => {}
        });
        err.map_or(Ok(()), Err)
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Exp(a)
            | Expr::Ln(a)
            | Expr::Sqrt(a)
            | Expr::Cbrt(a)
            | Expr::Root(a, _)
            | Expr::Abs(a)
            | Expr::Bump(a) => a.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Guard { cond, then, otherwise, .. } => {
                cond.visit(f);
                then.visit(f);
                otherwise.visit(f);
            }
        }
    }

    /// Replaces every `Var(i)` with `args[i]`.
    pub fn substitute(&self, args: &[Expr]) -> Expr {
        let s = |e: &Expr| Box::new(e.substitute(args));
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Var(i) => args[*i].clone(),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Pow(a, n) => Expr::Pow(s(a), *n),
            Expr::Exp(a) => Expr::Exp(s(a)),
            Expr::Ln(a) => Expr::Ln(s(a)),
            Expr::Sqrt(a) => Expr::Sqrt(s(a)),
            Expr::Cbrt(a) => Expr::Cbrt(s(a)),
            Expr::Root(a, m) => Expr::Root(s(a), *m),
            Expr::Abs(a) => Expr::Abs(s(a)),
            Expr::Bump(a) => Expr::Bump(s(a)),
            Expr::Guard { cond, side, then, otherwise } => {
                Expr::Guard { cond: s(cond), side: *side, then: s(then), otherwise: s(otherwise) }
            }
        }
    }

    /// Rewrites `ln(bump(a))` as `-1/a` and guards on `bump(a)` as guards on
    /// `a`. Both are identities wherever the original is defined, and they
    /// keep compositions with logarithmic inverses accurate where `bump(a)`
    /// underflows.
    pub fn simplify(&self) -> Expr {
        let s = |e: &Expr| Box::new(e.simplify());
        match self {
            Expr::Ln(a) => match a.simplify() {
                Expr::Bump(inner) => Expr::neg(Expr::div(Expr::c(1.0), *inner)),
                other => Expr::Ln(Box::new(other)),
            },
            Expr::Guard { cond, side, then, otherwise } => match (cond.simplify(), side) {
                (Expr::Bump(_), Side::Closed) => then.simplify(),
                (Expr::Bump(inner), Side::Open) => {
                    Expr::Guard { cond: inner, side: Side::Open, then: s(then), otherwise: s(otherwise) }
                }
                (c, _) => Expr::Guard { cond: Box::new(c), side: *side, then: s(then), otherwise: s(otherwise) },
            },
            Expr::Const(v) => Expr::Const(*v),
            Expr::Var(i) => Expr::Var(*i),
            Expr::Neg(a) => Expr::Neg(s(a)),
            Expr::Add(a, b) => Expr::Add(s(a), s(b)),
            Expr::Sub(a, b) => Expr::Sub(s(a), s(b)),
            Expr::Mul(a, b) => Expr::Mul(s(a), s(b)),
            Expr::Div(a, b) => Expr::Div(s(a), s(b)),
            Expr::Pow(a, n) => Expr::Pow(s(a), *n),
            Expr::Exp(a) => Expr::Exp(s(a)),
            Expr::Sqrt(a) => Expr::Sqrt(s(a)),
            Expr::Cbrt(a) => Expr::Cbrt(s(a)),
            Expr::Root(a, m) => Expr::Root(s(a), *m),
            Expr::Abs(a) => Expr::Abs(s(a)),
            Expr::Bump(a) => Expr::Bump(s(a)),
        }
    }

    /// Evaluates at `x`.
    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        eval_generic(self, x, false, -1.0)
    }

    /// Evaluates at `x`, taking the opposite branch of every guard whose
    /// condition lies within `seam` of 0.
    pub fn eval_across_seams(&self, x: &[f64], seam: f64) -> Result<f64, EvalError> {
        eval_generic(self, x, false, seam)
    }

    /// Value and gradient at `x` via forward-mode jets.
    pub fn eval_jet(&self, x: &[Jet], one_sided: bool) -> Result<Jet, EvalError> {
        eval_generic(self, x, one_sided, -1.0)
    }

    /// Smallest `|cond|` over the guard conditions met on the path taken at
    /// `x`; `None` when no guard is evaluated.
    pub fn guard_margin(&self, x: &[f64]) -> Option<f64> {
        let mut margin: Option<f64> = None;
        self.guard_margin_into(x, &mut margin);
        margin
    }

    fn guard_margin_into(&self, x: &[f64], m: &mut Option<f64>) {
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Neg(a)
            | Expr::Pow(a, _)
            | Expr::Exp(a)
            | Expr::Ln(a)
            | Expr::Sqrt(a)
            | Expr::Cbrt(a)
            | Expr::Root(a, _)
            | Expr::Abs(a)
            | Expr::Bump(a) => a.guard_margin_into(x, m),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.guard_margin_into(x, m);
                b.guard_margin_into(x, m);
            }
            Expr::Guard { cond, side, then, otherwise } => {
                cond.guard_margin_into(x, m);
                if let Ok(c) = cond.eval(x) {
                    *m = Some(m.map_or(c.abs(), |v| v.min(c.abs())));
                    if side.accepts(c) {
                        then.guard_margin_into(x, m);
                    } else {
                        otherwise.guard_margin_into(x, m);
                    }
                }
            }
        }
    }
}

/// Value-plus-gradient carrier for forward-mode differentiation.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub partials: Vec<f64>,
}

impl Jet {
    pub fn constant(value: f64, n: usize) -> Jet {
        Jet { value, partials: vec![0.0; n] }
    }

    /// The `i`-th coordinate function of `R^n` at value `v`.
    pub fn variable(value: f64, i: usize, n: usize) -> Jet {
        let mut partials = vec![0.0; n];
        partials[i] = 1.0;
        Jet { value, partials }
    }

    /// Seeds all coordinates of `x`.
    pub fn seed(x: &[f64]) -> Vec<Jet> {
        let n = x.len();
        x.iter().enumerate().map(|(i, &v)| Jet::variable(v, i, n)).collect()
    }

    fn chain(&self, value: f64, slope: f64) -> Jet {
        Jet { value, partials: self.partials.iter().map(|d| slope * d).collect() }
    }

    fn has_direction(&self) -> bool {
        self.partials.iter().any(|d| *d != 0.0)
    }
}

/// Arithmetic needed by the evaluator. Implemented for `f64` and [`Jet`].
pub trait Scalar: Clone + fmt::Debug {
    const DIFFERENTIAL: bool;
    fn lift(&self, c: f64) -> Self;
    fn val(&self) -> f64;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn root(&self, m: u32) -> Result<Self, EvalError>;
    fn abs(&self, one_sided: bool) -> Result<Self, EvalError>;
    fn bump(&self) -> Self;

    /// Integer power by repeated squaring.
    fn powi(&self, n: u32) -> Self {
        let mut result = self.lift(1.0);
        let mut base = self.clone();
        let mut e = n;
        while e > 0 {
            if e & 1 == 1 {
                result = result.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base);
            }
        }
        result
    }
}

fn real_root(v: f64, m: u32) -> f64 {
    match m {
        2 => v.sqrt(),
        3 => v.cbrt(),
        _ if v < 0.0 => -(-v).powf(1.0 / m as f64),
        _ => v.powf(1.0 / m as f64),
    }
}

/// `(e^{-1/t}, d/dt e^{-1/t})` with both parts exactly 0 for `t <= BUMP_FLOOR`.
pub fn bump_with_slope(t: f64) -> (f64, f64) {
    if t <= BUMP_FLOOR {
        (0.0, 0.0)
    } else {
        let v = (-1.0 / t).exp();
        let slope = (-1.0 / t - 2.0 * t.ln()).exp();
        (v, slope)
    }
}

impl Scalar for f64 {
    const DIFFERENTIAL: bool = false;
    fn lift(&self, c: f64) -> Self {
        c
    }
    fn val(&self) -> f64 {
        *self
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn root(&self, m: u32) -> Result<Self, EvalError> {
        Ok(real_root(*self, m))
    }
    fn abs(&self, _one_sided: bool) -> Result<Self, EvalError> {
        Ok(f64::abs(*self))
    }
    fn bump(&self) -> Self {
        bump_with_slope(*self).0
    }
}

impl Scalar for Jet {
    const DIFFERENTIAL: bool = true;
    fn lift(&self, c: f64) -> Self {
        Jet::constant(c, self.partials.len())
    }
    fn val(&self) -> f64 {
        self.value
    }
    fn add(&self, o: &Self) -> Self {
        Jet {
            value: self.value + o.value,
            partials: self.partials.iter().zip(&o.partials).map(|(a, b)| a + b).collect(),
        }
    }
    fn sub(&self, o: &Self) -> Self {
        Jet {
            value: self.value - o.value,
            partials: self.partials.iter().zip(&o.partials).map(|(a, b)| a - b).collect(),
        }
    }
    fn mul(&self, o: &Self) -> Self {
        Jet {
            value: self.value * o.value,
            partials: self.partials.iter().zip(&o.partials).map(|(a, b)| a * o.value + self.value * b).collect(),
        }
    }
    fn div(&self, o: &Self) -> Self {
        let q = self.value / o.value;
        Jet { value: q, partials: self.partials.iter().zip(&o.partials).map(|(a, b)| (a - q * b) / o.value).collect() }
    }
    fn neg(&self) -> Self {
        self.chain(-self.value, -1.0)
    }
    fn exp(&self) -> Self {
        let v = self.value.exp();
        self.chain(v, v)
    }
    fn ln(&self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
    fn root(&self, m: u32) -> Result<Self, EvalError> {
        let r = real_root(self.value, m);
        if r == 0.0 {
            if self.has_direction() {
                return Err(EvalError::Domain(format!("root of order {m} is not differentiable at 0")));
            }
            return Ok(self.chain(0.0, 0.0));
        }
        Ok(self.chain(r, r / (m as f64 * self.value)))
    }
    fn abs(&self, one_sided: bool) -> Result<Self, EvalError> {
        if self.value == 0.0 && self.has_direction() && !one_sided {
            return Err(EvalError::BranchBoundary);
        }
        let s = if self.value < 0.0 { -1.0 } else { 1.0 };
        Ok(self.chain(self.value.abs(), s))
    }
    fn bump(&self) -> Self {
        let (v, slope) = bump_with_slope(self.value);
        self.chain(v, slope)
    }
}

fn eval_generic<T: Scalar>(e: &Expr, x: &[T], one_sided: bool, seam: f64) -> Result<T, EvalError> {
    let like = &x[0];
    let ev = |a: &Expr| eval_generic(a, x, one_sided, seam);
    Ok(match e {
        Expr::Const(v) => like.lift(*v),
        Expr::Var(i) => {
            x.get(*i).cloned().ok_or_else(|| EvalError::Domain(format!("variable x{} out of range", i + 1)))?
        }
        Expr::Neg(a) => ev(a)?.neg(),
        Expr::Add(a, b) => ev(a)?.add(&ev(b)?),
        Expr::Sub(a, b) => ev(a)?.sub(&ev(b)?),
        Expr::Mul(a, b) => ev(a)?.mul(&ev(b)?),
        Expr::Div(a, b) => {
            let den = ev(b)?;
            if den.val() == 0.0 {
                return Err(EvalError::Domain("division by zero".into()));
            }
            ev(a)?.div(&den)
        }
        Expr::Pow(a, n) => ev(a)?.powi(*n),
        Expr::Exp(a) => ev(a)?.exp(),
        Expr::Ln(a) => {
            let v = ev(a)?;
            if v.val() <= 0.0 {
                return Err(EvalError::Domain(format!("ln of non-positive value {}", v.val())));
            }
            v.ln()
        }
        Expr::Sqrt(a) => {
            let mut v = ev(a)?;
            if v.val() < 0.0 {
                if v.val() < -SQRT_SLACK {
                    return Err(EvalError::Domain(format!("sqrt of negative value {}", v.val())));
                }
                v = v.mul(&v.lift(0.0));
            }
            v.root(2)?
        }
        Expr::Cbrt(a) => ev(a)?.root(3)?,
        Expr::Root(a, m) => {
            let v = ev(a)?;
            if m % 2 == 0 && v.val() < 0.0 {
                return Err(EvalError::Domain(format!("even root of negative value {}", v.val())));
            }
            v.root(*m)?
        }
        Expr::Abs(a) => ev(a)?.abs(one_sided)?,
        Expr::Bump(a) => ev(a)?.bump(),
        Expr::Guard { cond, side, then, otherwise } => {
            let c = ev(cond)?.val();
            if T::DIFFERENTIAL && c == 0.0 && !one_sided {
                return Err(EvalError::BranchBoundary);
            }
            let flip = c.abs() <= seam;
            if side.accepts(c) != flip {
                ev(then)?
            } else {
                ev(otherwise)?
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplify_log_of_bump() {
        let a = Expr::sub(Expr::c(1.0), Expr::pow(Expr::var(0), 2));
        let e = Expr::guard(Expr::bump(a.clone()), Side::Open, Expr::ln(Expr::bump(a.clone())), Expr::c(0.0));
        let s = e.simplify();
        for x in [0.1, 0.5, 0.9, 0.99] {
            let (v, w) = (e.eval(&[x]).unwrap(), s.eval(&[x]).unwrap());
            assert!((v - w).abs() <= 1e-12 * v.abs(), "{x}: {v} {w}");
        }
        // bump(1 - x^2) underflows near x = 1; the rewrite stays exact.
        let x = 1.0 - 1e-6;
        assert_eq!(e.eval(&[x]).unwrap(), 0.0);
        assert!((s.eval(&[x]).unwrap() + 1.0 / (1.0 - x * x)).abs() < 1e-3);
        assert_eq!(s.eval(&[1.5]).unwrap(), 0.0);
    }

    #[test]
    fn bump_is_flat_left_of_zero() {
        for t in [-1.0, -1e-300, 0.0, 1e-310] {
            let j = Expr::bump(Expr::var(0)).eval_jet(&Jet::seed(&[t]), false).unwrap();
            assert_eq!(j.value, 0.0);
            assert_eq!(j.partials[0], 0.0);
        }
        let (v, s) = bump_with_slope(1.0);
        assert_eq!(v, (-1.0f64).exp());
        assert!((s - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn bump_slope_tiny_argument_is_finite() {
        let (v, s) = bump_with_slope(1e-200);
        assert_eq!(v, 0.0);
        assert!(s.is_finite() && s == 0.0);
    }

    #[test]
    fn powi_matches_repeated_multiplication() {
        let j = Jet::variable(1.5, 0, 1);
        let p = j.powi(7);
        assert!((p.value - 1.5f64.powi(7)).abs() < 1e-12);
        assert!((p.partials[0] - 7.0 * 1.5f64.powi(6)).abs() < 1e-11);
        assert_eq!(j.powi(0).value, 1.0);
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let e = Expr::div(Expr::c(1.0), Expr::var(0));
        assert!(matches!(e.eval(&[0.0]), Err(EvalError::Domain(_))));
    }

    #[test]
    fn sqrt_negative_is_domain_error() {
        let e = Expr::sqrt(Expr::var(0));
        assert!(matches!(e.eval(&[-1.0]), Err(EvalError::Domain(_))));
        assert_eq!(e.eval(&[-1e-15]).unwrap(), 0.0);
    }

    #[test]
    fn guard_boundary_needs_one_sided_flag() {
        let e =
            Expr::guard(Expr::var(0), Side::Closed, Expr::pow(Expr::var(0), 2), Expr::neg(Expr::pow(Expr::var(0), 2)));
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.0);
        let seed = Jet::seed(&[0.0]);
        assert_eq!(e.eval_jet(&seed, false), Err(EvalError::BranchBoundary));
        assert_eq!(e.eval_jet(&seed, true).unwrap().partials, vec![0.0]);
    }

    #[test]
    fn seam_flip_takes_other_branch() {
        let e = Expr::guard(Expr::var(0), Side::Closed, Expr::c(1.0), Expr::c(-1.0));
        assert_eq!(e.eval(&[1e-14]).unwrap(), 1.0);
        assert_eq!(e.eval_across_seams(&[1e-14], 1e-12).unwrap(), -1.0);
        assert_eq!(e.eval_across_seams(&[1e-3], 1e-12).unwrap(), 1.0);
    }

    #[test]
    fn odd_root_keeps_sign() {
        assert!((Expr::root(Expr::var(0), 5).eval(&[-32.0]).unwrap() + 2.0).abs() < 1e-14);
        assert!(Expr::root(Expr::var(0), 4).eval(&[-16.0]).is_err());
        assert_eq!(Expr::cbrt(Expr::var(0)).eval(&[-8.0]).unwrap(), -2.0);
    }

    #[test]
    fn substitution_composes() {
        // (x1 + x2) with x1 := x2^2, x2 := 3
        let e = Expr::add(Expr::var(0), Expr::var(1));
        let s = e.substitute(&[Expr::pow(Expr::var(1), 2), Expr::c(3.0)]);
        assert_eq!(s.eval(&[0.0, 2.0]).unwrap(), 7.0);
    }
}
