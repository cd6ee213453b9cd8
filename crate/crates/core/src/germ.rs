//! Map germs `f: (R^n, 0) -> (R^k, 0)` and the builtin example families.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::expr::{Expr, Jet};
use crate::parser;

/// Tolerance for the germ convention `f(0) = 0`.
const ORIGIN_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smoothness {
    Analytic,
    Smooth,
    /// Finitely differentiable, `C^l` with `l >= 1`.
    C(u32),
}

impl Smoothness {
    /// The weaker of two classes, e.g. for a composition.
    pub fn meet(self, other: Smoothness) -> Smoothness {
        use Smoothness::*;
        match (self, other) {
            (C(a), C(b)) => C(a.min(b)),
            (C(a), _) | (_, C(a)) => C(a),
            (Smooth, _) | (_, Smooth) => Smooth,
            _ => Analytic,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Smoothness::Analytic => "analytic".into(),
            Smoothness::Smooth => "smooth".into(),
            Smoothness::C(l) => format!("C^{l}"),
        }
    }
}

/// Identifies germs with a closed-form discriminant.
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `(sum a_i x_i^p, sum b_i x_i^q)`.
    Ldm {
        p: u32,
        q: u32,
        lambdas: Vec<(f64, f64)>,
    },
    /// The flat two-bump germ on `R^n`.
    Psi {
        n: usize,
    },
    Catalog(String),
    /// `h^{-1} o base` for a conic homeomorphism `h`.
    Modified {
        base: Box<MapGerm>,
        homeo: String,
        forward: Vec<Expr>,
        inverse: Vec<Expr>,
    },
}

impl Family {
    pub fn tag(&self) -> String {
        match self {
            Family::Ldm { .. } => "ldm".into(),
            Family::Psi { .. } => "psi".into(),
            Family::Catalog(name) => name.clone(),
            Family::Modified { base, homeo, .. } => {
                let inner = base.family.as_ref().map_or("custom".into(), |f| f.tag());
                format!("{inner}+{homeo}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapGerm {
    n: usize,
    names: Vec<String>,
    components: Vec<Expr>,
    smoothness: Smoothness,
    family: Option<Family>,
}

impl MapGerm {
    /// Validates indices, constants and the convention `f(0) = 0`.
    pub fn new(
        n: usize,
        names: Vec<String>,
        components: Vec<Expr>,
        smoothness: Smoothness,
        family: Option<Family>,
    ) -> Result<MapGerm> {
        if n < 1 {
            return Err(Error::InvalidGerm("domain dimension must be positive".into()));
        }
        if components.is_empty() {
            return Err(Error::InvalidGerm("a germ needs at least one component".into()));
        }
        if names.len() != components.len() {
            return Err(Error::InvalidGerm("one name per component required".into()));
        }
        for (name, c) in names.iter().zip(&components) {
            if let Some(i) = c.max_var() {
                if i >= n {
                    return Err(Error::Arity(format!("component `{name}` uses x{} but n = {n}", i + 1)));
                }
            }
            c.validate().map_err(Error::InvalidGerm)?;
        }
        let germ = MapGerm { n, names, components, smoothness, family };
        let at0 = germ.eval(&vec![0.0; n])?;
        if let Some(v) = at0.iter().find(|v| v.abs() > ORIGIN_TOL) {
            return Err(Error::InvalidGerm(format!("f(0) = {v} is not 0")));
        }
        Ok(germ)
    }

    /// Builds a germ with default names `u1..uk`.
    pub fn from_components(n: usize, components: Vec<Expr>, smoothness: Smoothness) -> Result<MapGerm> {
        let names = default_names(components.len());
        MapGerm::new(n, names, components, smoothness, None)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.components.len()
    }
    pub fn names(&self) -> &[String] {
        &self.names
    }
    pub fn components(&self) -> &[Expr] {
        &self.components
    }
    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }
    pub fn family(&self) -> Option<&Family> {
        self.family.as_ref()
    }

    /// Same components under a different family tag.
    pub fn with_family(mut self, family: Option<Family>) -> MapGerm {
        self.family = family;
        self
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Arity(format!("point has {} coordinates, germ expects {}", x.len(), self.n)));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.components.iter().map(|c| c.eval(x).map_err(Error::from)).collect()
    }

    /// Value and `k x n` Jacobian in one pass.
    pub fn eval_jacobian(&self, x: &[f64], one_sided: bool) -> Result<(Vec<f64>, DMatrix<f64>)> {
        self.check_dim(x)?;
        let seed = Jet::seed(x);
        let mut values = Vec::with_capacity(self.k());
        let mut jac = DMatrix::zeros(self.k(), self.n);
        for (r, c) in self.components.iter().enumerate() {
            let j = c.eval_jet(&seed, one_sided)?;
            values.push(j.value);
            for (col, d) in j.partials.iter().enumerate() {
                jac[(r, col)] = *d;
            }
        }
        Ok((values, jac))
    }

    pub fn jacobian(&self, x: &[f64], one_sided: bool) -> Result<DMatrix<f64>> {
        self.eval_jacobian(x, one_sided).map(|(_, j)| j)
    }

    /// Distance (in condition value) from the nearest guard boundary met at `x`.
    pub fn guard_margin(&self, x: &[f64]) -> Option<f64> {
        self.components.iter().filter_map(|c| c.guard_margin(x)).min_by(|a, b| a.total_cmp(b))
    }

    /// Composition `outer o self`, where `outer` is given by expressions in
    /// `k` variables.
    pub fn compose_outer(&self, outer: &[Expr]) -> Vec<Expr> {
        outer.iter().map(|e| e.substitute(&self.components)).collect()
    }
}

pub fn default_names(k: usize) -> Vec<String> {
    if k <= 3 {
        ["u", "v", "w"][..k].iter().map(|s| s.to_string()).collect()
    } else {
        (1..=k).map(|i| format!("u{i}")).collect()
    }
}

/// The germ `(sum a_i x_i^p, sum b_i x_i^q)` on `R^n`, `n = lambdas.len()`.
pub fn builtin_ldm(p: u32, q: u32, lambdas: &[(f64, f64)]) -> Result<MapGerm> {
    if p < 2 || q < 2 {
        return Err(Error::InvalidGerm(format!("exponents must be >= 2, got p={p}, q={q}")));
    }
    if lambdas.len() < 2 {
        return Err(Error::InvalidGerm("ldm needs at least two coefficient pairs".into()));
    }
    check_weak_hyperbolicity(lambdas)?;
    let n = lambdas.len();
    let row = |exp: u32, pick: fn(&(f64, f64)) -> f64| {
        Expr::sum(
            lambdas
                .iter()
                .enumerate()
                .filter(|(_, l)| pick(l) != 0.0)
                .map(|(i, l)| Expr::mul(Expr::c(pick(l)), Expr::pow(Expr::var(i), exp))),
        )
    };
    let f = row(p, |l| l.0);
    let g = row(q, |l| l.1);
    MapGerm::new(
        n,
        default_names(2),
        vec![f, g],
        Smoothness::Analytic,
        Some(Family::Ldm { p, q, lambdas: lambdas.to_vec() }),
    )
}

/// Rejects any pair `i < j` with `a_i b_j - a_j b_i = 0` (relative to 1e-12).
pub fn check_weak_hyperbolicity(lambdas: &[(f64, f64)]) -> Result<()> {
    for (i, a) in lambdas.iter().enumerate() {
        let na = a.0.hypot(a.1);
        if na == 0.0 {
            return Err(Error::HyperbolicityViolation { i: i + 1, j: i + 1 });
        }
        for (j, b) in lambdas.iter().enumerate().skip(i + 1) {
            let det = a.0 * b.1 - a.1 * b.0;
            if det.abs() <= 1e-12 * na * b.0.hypot(b.1) {
                return Err(Error::HyperbolicityViolation { i: i + 1, j: j + 1 });
            }
        }
    }
    Ok(())
}

/// `(bump(1 - |x - e1|^2), bump(4 - |x - 2 e1|^2))` on `R^n`.
pub fn builtin_psi(n: usize) -> Result<MapGerm> {
    if n < 2 {
        return Err(Error::InvalidGerm(format!("psi needs n >= 2, got {n}")));
    }
    let dist2 = |c: f64| {
        Expr::sum((0..n).map(|i| {
            if i == 0 {
                Expr::pow(Expr::sub(Expr::var(0), Expr::c(c)), 2)
            } else {
                Expr::pow(Expr::var(i), 2)
            }
        }))
    };
    let f = Expr::bump(Expr::sub(Expr::c(1.0), dist2(1.0)));
    let g = Expr::bump(Expr::sub(Expr::c(4.0), dist2(2.0)));
    MapGerm::new(n, default_names(2), vec![f, g], Smoothness::Smooth, Some(Family::Psi { n }))
}

/// Names accepted by [`builtin_catalog`].
pub const CATALOG: &[(&str, &str)] = &[
    ("nondreg4", "map 4 -> 3 { u = x1^2 - x2^2*x3; v = x2; w = x4; }"),
    ("ex6", "map 3 -> 2 { u = x1^2*x3 + x2^3; v = x1; }"),
    ("parabola", "map 3 -> 2 { u = x1 + x2; v = x1^2 + x2^2 + x3^3; }"),
    ("projection", "map 3 -> 2 { u = x1; v = x2; }"),
    ("first", "map 2 -> 1 { w = x1; }"),
];

pub fn builtin_catalog(name: &str) -> Result<MapGerm> {
    let (_, src) = CATALOG.iter().find(|(n, _)| *n == name).ok_or_else(|| Error::UnknownName(name.to_string()))?;
    let g = parser::parse(src)?;
    Ok(g.with_family(Some(Family::Catalog(name.to_string()))))
}
