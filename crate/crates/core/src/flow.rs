//! The Milnor vector field and its flow from the tube to the sphere, plus
//! Ehresmann connections: vertical and horizontal spaces, horizontal lifts,
//! fiber translation and the composed connection of `g o f`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::critical::{ball_seed, random_unit, BallConfig, RANK_TOL};
use crate::error::{Error, Result};
use crate::fiber::solve_on_fiber;
use crate::germ::MapGerm;
use crate::linalg;
use crate::ode::{self, OdeOptions, Stop};
use crate::par::{self, Exec};
use crate::regularity::{phi, Exclusions, RegularityReport, Verdict, PHI_FLOOR};

/// `<w, x> / |x|^2` at or below this is a degenerate projection.
pub const DEGENERATE_TOL: f64 = 1e-10;
/// Flows abort closer than this fraction of `eps` to sampled `W`.
pub const NEAR_W: f64 = 1e-3;
/// Allowed drift of `Phi` along a trace and between `x` and `tau(x)`.
pub const PHI_TOL: f64 = 1e-6;
/// Allowed projection error and vertical component of horizontal lifts.
pub const LIFT_TOL: f64 = 1e-6;
/// Initial-fiber tolerance for lift starting points.
pub const START_TOL: f64 = 1e-8;
/// Subspace decompositions worse than this are reported.
pub const CONDITION_LIMIT: f64 = 1e6;

fn jet(germ: &MapGerm, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    match germ.eval_jacobian(x, false) {
        Err(Error::BranchBoundary) => germ.eval_jacobian(x, true),
        r => r,
    }
}

fn sigma_min(m: &DMatrix<f64>) -> f64 {
    linalg::singular_values(m).last().copied().unwrap_or(0.0)
}

/// Rows of `j` and entries of `v` divided by the row norms of `j`.
fn normalized(j: &DMatrix<f64>, v: &[f64]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut jn = j.clone();
    let mut vs = v.to_vec();
    for (i, vi) in vs.iter_mut().enumerate() {
        let rn = linalg::row_norm(j, i);
        if rn < linalg::ROW_FLOOR || !rn.is_finite() {
            return Err(Error::NotSubmersion(0.0));
        }
        jn.row_mut(i).scale_mut(1.0 / rn);
        *vi /= rn;
    }
    if linalg::numerical_rank(&jn, RANK_TOL, 0.0) < j.nrows() {
        return Err(Error::NotSubmersion(sigma_min(&jn)));
    }
    Ok((jn, vs))
}

/// The radial vector projected onto `T_x E_theta`, scaled so that
/// `<w, x> = |x|^2`.
///
/// `T_x E_theta = ker (P Df)` with `P` the projection onto `f(x)^perp`. Rows
/// of `Df` are normalised first, with `f` scaled alike, which leaves the
/// kernel unchanged and keeps flat germs well conditioned.
pub fn milnor_vector_field(germ: &MapGerm, x: &[f64]) -> Result<Vec<f64>> {
    let (v, j) = jet(germ, x)?;
    let nv = linalg::norm(&v);
    if nv.is_nan() || nv <= PHI_FLOOR {
        return Err(Error::OnFiberV(nv));
    }
    let nx2 = linalg::dot(x, x);
    if nx2 == 0.0 {
        return Err(Error::DegenerateProjection { ratio: 0.0 });
    }
    let k = germ.k();
    let (jn, vs) = normalized(&j, &v)?;
    let theta = DVector::from_column_slice(&linalg::scale(&vs, 1.0 / linalg::norm(&vs)));
    let b = (DMatrix::identity(k, k) - &theta * theta.transpose()) * jn;
    let (basis, _) = linalg::right_singular(&b);
    let mut w = x.to_vec();
    for c in 0..k - 1 {
        let col = basis.column(c);
        let proj = col.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        for (wi, ci) in w.iter_mut().zip(col.iter()) {
            *wi -= proj * ci;
        }
    }
    let ratio = linalg::dot(&w, x) / nx2;
    if ratio.is_nan() || ratio <= DEGENERATE_TOL {
        return Err(Error::DegenerateProjection { ratio });
    }
    Ok(linalg::scale(&w, 1.0 / ratio))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ReachedSphere,
    StepFailure,
    DegenerateProjection,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::ReachedSphere => "reached_sphere",
            Termination::StepFailure => "step_failure",
            Termination::DegenerateProjection => "degenerate_projection",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub t: f64,
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub norm_x: f64,
    pub norm_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    pub eps: f64,
    pub states: Vec<FlowState>,
    pub termination: Termination,
    pub error: Option<String>,
    /// `max_t |Phi(x(t)) - Phi(x(0))|`.
    pub phi_drift: f64,
    pub radius_increasing: bool,
    pub norm_f_increasing: bool,
    pub steps: usize,
    pub rejected: usize,
}

impl FlowTrace {
    pub fn end(&self) -> &FlowState {
        self.states.last().expect("traces hold the initial state")
    }

    pub fn reached(&self) -> bool {
        self.termination == Termination::ReachedSphere
    }

    /// `| |x_end| - eps | / eps`.
    pub fn radius_error(&self) -> f64 {
        (self.end().norm_x - self.eps).abs() / self.eps
    }

    /// Whether the trace satisfies the drift and monotonicity invariants.
    pub fn invariants_hold(&self) -> bool {
        self.phi_drift <= PHI_TOL && self.radius_increasing
    }
}

fn flow_state(germ: &MapGerm, t: f64, x: &[f64]) -> Result<FlowState> {
    let v = germ.eval(x)?;
    Ok(FlowState { t, x: x.to_vec(), phi: phi(germ, x)?, norm_x: linalg::norm(x), norm_f: linalg::norm(&v) })
}

/// Integrates the Milnor field from `x0` until `|x| = eps`.
///
/// Aborts with a partial trace on integration failure, a degenerate
/// projection, or (when `guard` is given) on approaching a sampled point
/// of `W` closer than the guard distance.
pub fn flow_to_sphere(
    germ: &MapGerm,
    x0: &[f64],
    eps: f64,
    ode_opts: &OdeOptions,
    guard: Option<&Exclusions>,
) -> FlowTrace {
    let r0 = linalg::norm(x0);
    let mut trace = FlowTrace {
        eps,
        states: Vec::new(),
        termination: Termination::StepFailure,
        error: None,
        phi_drift: 0.0,
        radius_increasing: true,
        norm_f_increasing: true,
        steps: 0,
        rejected: 0,
    };
    if !(r0 > 0.0 && r0 < eps) {
        if let Ok(s) = flow_state(germ, 0.0, x0) {
            trace.states.push(s);
        }
        trace.error = Some(format!("start radius {r0:e} not in (0, {eps:e})"));
        return trace;
    }
    // |x(t)| = r0 e^t under the normalisation, so the sphere is reached at
    // t = ln(eps / r0); the horizon leaves room for rescaled fields.
    let t_end = 1.5 * (eps / r0).ln() + 1.0;
    let mut states: Vec<FlowState> = Vec::new();
    let sol = ode::integrate(
        |_, x| milnor_vector_field(germ, x),
        x0,
        0.0,
        t_end,
        ode_opts,
        Some(|x: &[f64]| (linalg::norm(x) - eps) / eps),
        |t, x| {
            if let Some(g) = guard {
                if g.excludes_point(x) {
                    return Err(Error::StepFailure(format!("within {:e} of sampled W at t = {t:e}", g.distance)));
                }
            }
            states.push(flow_state(germ, t, x)?);
            Ok(())
        },
    );
    trace.steps = sol.steps;
    trace.rejected = sol.rejected;
    trace.termination = match (&sol.stop, &sol.error) {
        (Stop::Event, _) => Termination::ReachedSphere,
        (_, Some(Error::DegenerateProjection { .. })) => Termination::DegenerateProjection,
        _ => Termination::StepFailure,
    };
    trace.error = match (sol.stop, sol.error) {
        (Stop::End, _) => Some(format!("horizon t = {t_end:e} reached before the sphere")),
        (_, e) => e.map(|e| e.to_string()),
    };
    if let Some(first) = states.first() {
        let p0 = first.phi.clone();
        trace.phi_drift = states.iter().map(|s| linalg::dist(&s.phi, &p0)).fold(0.0, f64::max);
    }
    trace.radius_increasing = states.windows(2).all(|w| w[1].norm_x > w[0].norm_x);
    trace.norm_f_increasing = states.windows(2).all(|w| w[1].norm_f > w[0].norm_f);
    trace.states = states;
    trace
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauOptions {
    /// Tube starting points.
    pub samples: usize,
    /// Attempts per starting point (target direction and seed).
    pub attempts: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
    pub ode: OdeOptions,
}

impl Default for TauOptions {
    fn default() -> Self {
        TauOptions { samples: 100, attempts: 32, seed: 0, exec: Exec::Parallel, ode: OdeOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSample {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub termination: Termination,
    /// `|Phi(tau(x)) - Phi(x)|`.
    pub phi_error: f64,
    /// Relative sphere residual of the endpoint.
    pub radius_error: f64,
    pub phi_drift: f64,
    pub radius_increasing: bool,
    pub norm_f_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauReport {
    pub verdict: Verdict,
    pub samples: Vec<TauSample>,
    /// Starting points that could not be placed in the tube.
    pub unplaced: usize,
    pub max_phi_error: f64,
    pub max_radius_error: f64,
    /// Endpoint pairs within `1e-6 eps` whose starts are `1e-3 eps` apart.
    pub collisions: usize,
    pub seed: u64,
    pub notes: Vec<String>,
}

/// Flows sampled tube points `x` (with `f(x)` on `S_delta` off the
/// discriminant directions) to the sphere and checks that `tau` preserves
/// `Phi` and is injective at sampling resolution.
///
/// Refuses to run unless `regularity` is a passing d-regularity report.
pub fn tau_equivalence_probe(
    germ: &MapGerm,
    cfg: &BallConfig,
    regularity: &RegularityReport,
    excl: &Exclusions,
    opts: &TauOptions,
) -> Result<TauReport> {
    if regularity.verdict != Verdict::Pass {
        return Err(Error::Precondition(format!(
            "tau probe needs a passing d-regularity report, got {}",
            regularity.verdict
        )));
    }
    let (n, k, eps, delta) = (germ.n(), germ.k(), cfg.eps, cfg.delta);
    let starts = par::map_indexed(opts.exec, opts.samples, |i| {
        let mut rng = par::task_rng(opts.seed, i as u64);
        for _ in 0..opts.attempts {
            let theta = random_unit(&mut rng, k);
            if excl.excludes_direction(&theta) {
                continue;
            }
            let x0 = ball_seed(&mut rng, n, eps);
            let y = linalg::scale(&theta, delta);
            if let Some(x) = solve_on_fiber(germ, &y, &x0, eps) {
                if linalg::norm(&x) < eps * (1.0 - 1e-6) && !excl.excludes_point(&x) {
                    return Some(x);
                }
            }
        }
        None
    });
    let unplaced = starts.iter().filter(|s| s.is_none()).count();
    let starts: Vec<Vec<f64>> = starts.into_iter().flatten().collect();
    let samples = par::map_slice(opts.exec, &starts, |x| {
        let trace = flow_to_sphere(germ, x, eps, &opts.ode, Some(excl));
        let phi0 = &trace.states.first().map(|s| s.phi.clone()).unwrap_or_default();
        let end = trace.end();
        TauSample {
            start: x.clone(),
            end: end.x.clone(),
            termination: trace.termination,
            phi_error: linalg::dist(&end.phi, phi0),
            radius_error: trace.radius_error(),
            phi_drift: trace.phi_drift,
            radius_increasing: trace.radius_increasing,
            norm_f_increasing: trace.norm_f_increasing,
        }
    });
    let mut collisions = 0;
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let (a, b) = (&samples[i], &samples[j]);
            if linalg::dist(&a.end, &b.end) < 1e-6 * eps && linalg::dist(&a.start, &b.start) > 1e-3 * eps {
                collisions += 1;
            }
        }
    }
    let max_phi_error = samples.iter().map(|s| s.phi_error).fold(0.0, f64::max);
    let max_radius_error = samples.iter().map(|s| s.radius_error).fold(0.0, f64::max);
    let mut notes = Vec::new();
    let failed = samples.iter().filter(|s| s.termination != Termination::ReachedSphere).count();
    if failed > 0 {
        notes.push(format!("{failed} traces did not reach the sphere"));
    }
    if unplaced > 0 {
        notes.push(format!("{unplaced} starting points could not be placed in the tube"));
    }
    let verdict = if samples.is_empty() {
        Verdict::Inconclusive
    } else if failed == 0 && max_phi_error <= PHI_TOL && max_radius_error <= 1e-8 && collisions == 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(TauReport { verdict, samples, unplaced, max_phi_error, max_radius_error, collisions, seed: opts.seed, notes })
}

/// A constant Riemannian metric on the total space.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Identity,
    Diagonal(Vec<f64>),
    Matrix(DMatrix<f64>),
}

impl Metric {
    fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        let g = match self {
            Metric::Identity => DMatrix::identity(n, n),
            Metric::Diagonal(d) => {
                if d.len() != n || d.iter().any(|v| v.is_nan() || *v <= 0.0) {
                    return Err(Error::InvalidConfig(format!("diagonal metric needs {n} positive entries")));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            Metric::Matrix(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(Error::InvalidConfig(format!("metric must be {n} x {n}")));
                }
                m.clone()
            }
        };
        Ok(g)
    }
}

/// Horizontal distribution given pointwise as an `n x k` spanning matrix.
pub type HorizontalField = Arc<dyn Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync>;

#[derive(Clone)]
pub enum HorizontalRule {
    /// Orthogonal complement of the vertical space under the metric.
    MetricOrthogonal,
    Field(HorizontalField),
}

impl fmt::Debug for HorizontalRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HorizontalRule::MetricOrthogonal => f.write_str("MetricOrthogonal"),
            HorizontalRule::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// An Ehresmann connection for a submersion.
#[derive(Debug, Clone)]
pub struct ConnectionSpec {
    pub submersion: MapGerm,
    pub rule: HorizontalRule,
    pub metric: Metric,
}

impl ConnectionSpec {
    /// Metric-orthogonal connection for the Euclidean metric.
    pub fn orthogonal(submersion: MapGerm) -> ConnectionSpec {
        ConnectionSpec { submersion, rule: HorizontalRule::MetricOrthogonal, metric: Metric::Identity }
    }

    pub fn with_metric(mut self, metric: Metric) -> ConnectionSpec {
        self.metric = metric;
        self
    }
}

/// Orthonormal bases of `V_x` and `H_x` and the condition number of `[V | H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub vertical: DMatrix<f64>,
    pub horizontal: DMatrix<f64>,
    pub condition: f64,
}

impl Decomposition {
    /// Coordinates of `u` in the basis `[V | H]`: (vertical, horizontal).
    pub fn split(&self, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (v, h) = (self.vertical.ncols(), self.horizontal.ncols());
        let mut m = DMatrix::zeros(u.len(), v + h);
        m.columns_mut(0, v).copy_from(&self.vertical);
        m.columns_mut(v, h).copy_from(&self.horizontal);
        let c = linalg::lstsq(&m, &DVector::from_column_slice(u), 1e-14);
        (c.rows(0, v).iter().copied().collect(), c.rows(v, h).iter().copied().collect())
    }
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let s = linalg::singular_values(m);
    match (s.first(), s.last()) {
        (Some(a), Some(b)) if *b > 0.0 => a / b,
        _ => f64::INFINITY,
    }
}

fn submersion_jacobian(conn: &ConnectionSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    let (v, j) = jet(&conn.submersion, x)?;
    normalized(&j, &v)?;
    Ok(j)
}

pub fn decompose(conn: &ConnectionSpec, x: &[f64]) -> Result<Decomposition> {
    let n = conn.submersion.n();
    let k = conn.submersion.k();
    let j = submersion_jacobian(conn, x)?;
    let vertical = linalg::null_space(&j, k);
    let spanning = match &conn.rule {
        HorizontalRule::MetricOrthogonal => {
            let g = conn.metric.matrix(n)?;
            let gi = g.try_inverse().ok_or_else(|| Error::InvalidConfig("metric is singular".into()))?;
            gi * j.transpose()
        }
        HorizontalRule::Field(h) => {
            let h = h(x)?;
            if h.nrows() != n || h.ncols() != k {
                return Err(Error::InvalidConfig(format!("horizontal field must be {n} x {k}")));
            }
            h
        }
    };
    let image = &j * &spanning;
    if linalg::numerical_rank(&image, RANK_TOL, 0.0) < k {
        return Err(Error::NotSubmersion(sigma_min(&image)));
    }
    let horizontal = linalg::orthonormalize(&spanning);
    let mut both = DMatrix::zeros(n, n);
    both.columns_mut(0, n - k).copy_from(&vertical);
    both.columns_mut(n - k, k).copy_from(&horizontal);
    Ok(Decomposition { condition: condition(&both), vertical, horizontal })
}

/// Orthonormal basis of `ker Df(x)`.
pub fn vertical_space(conn: &ConnectionSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    decompose(conn, x).map(|d| d.vertical)
}

/// Orthonormal basis of the horizontal space at `x`.
pub fn horizontal_space(conn: &ConnectionSpec, x: &[f64]) -> Result<DMatrix<f64>> {
    decompose(conn, x).map(|d| d.horizontal)
}

/// The horizontal vector over `alpha'`: `H (Df H)^-1 alpha'`.
fn horizontal_velocity(conn: &ConnectionSpec, x: &[f64], dalpha: &[f64]) -> Result<Vec<f64>> {
    let j = submersion_jacobian(conn, x)?;
    let h = decompose(conn, x)?.horizontal;
    let a = &j * &h;
    let c = a.lu().solve(&DVector::from_column_slice(dalpha)).ok_or(Error::NotSubmersion(0.0))?;
    Ok((h * c).iter().copied().collect())
}

/// Sectionally `C^1` curves in the base, parametrised by `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseCurve {
    Constant {
        at: Vec<f64>,
    },
    Segment {
        from: Vec<f64>,
        to: Vec<f64>,
    },
    /// `center + radius (cos 2 pi t, sin 2 pi t)` in the first two coordinates.
    Circle {
        center: Vec<f64>,
        radius: f64,
    },
    /// Vertices visited at equal parameter spacing.
    Polyline {
        vertices: Vec<Vec<f64>>,
    },
}

impl BaseCurve {
    pub fn dim(&self) -> usize {
        match self {
            BaseCurve::Constant { at } => at.len(),
            BaseCurve::Segment { from, .. } => from.len(),
            BaseCurve::Circle { center, .. } => center.len(),
            BaseCurve::Polyline { vertices } => vertices.first().map_or(0, |v| v.len()),
        }
    }

    fn validate(&self, k: usize) -> Result<()> {
        let ok = match self {
            BaseCurve::Constant { at } => at.len() == k,
            BaseCurve::Segment { from, to } => from.len() == k && to.len() == k,
            BaseCurve::Circle { center, radius } => center.len() == k && k >= 2 && radius.is_finite(),
            BaseCurve::Polyline { vertices } => vertices.len() >= 2 && vertices.iter().all(|v| v.len() == k),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("base curve does not fit a base of dimension {k}")))
        }
    }

    /// Parameter values where the curve may fail to be `C^1`.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            BaseCurve::Polyline { vertices } => {
                let m = vertices.len() - 1;
                (0..=m).map(|i| i as f64 / m as f64).collect()
            }
            _ => vec![0.0, 1.0],
        }
    }

    fn polyline_piece(vertices: &[Vec<f64>], t: f64) -> (usize, f64) {
        let m = vertices.len() - 1;
        let s = (t.clamp(0.0, 1.0) * m as f64).min(m as f64);
        let i = (s.floor() as usize).min(m - 1);
        (i, s - i as f64)
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            BaseCurve::Constant { at } => at.clone(),
            BaseCurve::Segment { from, to } => from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect(),
            BaseCurve::Circle { center, radius } => {
                let mut y = center.clone();
                let a = std::f64::consts::TAU * t;
                y[0] += radius * a.cos();
                y[1] += radius * a.sin();
                y
            }
            BaseCurve::Polyline { vertices } => {
                let (i, s) = Self::polyline_piece(vertices, t);
                vertices[i].iter().zip(&vertices[i + 1]).map(|(a, b)| a + s * (b - a)).collect()
            }
        }
    }

    /// Derivative, one-sided from the right at breakpoints.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        match self {
            BaseCurve::Constant { at } => vec![0.0; at.len()],
            BaseCurve::Segment { from, to } => from.iter().zip(to).map(|(a, b)| b - a).collect(),
            BaseCurve::Circle { center, radius } => {
                let mut d = vec![0.0; center.len()];
                let a = std::f64::consts::TAU * t;
                d[0] = -std::f64::consts::TAU * radius * a.sin();
                d[1] = std::f64::consts::TAU * radius * a.cos();
                d
            }
            BaseCurve::Polyline { vertices } => {
                let m = (vertices.len() - 1) as f64;
                let (i, _) = Self::polyline_piece(vertices, t);
                vertices[i].iter().zip(&vertices[i + 1]).map(|(a, b)| m * (b - a)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftOptions {
    pub ode: OdeOptions,
    /// Uniform output grid cells on `[0, 1]`; integration restarts at every
    /// grid node and breakpoint.
    pub grid: usize,
}

impl Default for LiftOptions {
    fn default() -> Self {
        LiftOptions { ode: OdeOptions::default(), grid: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedCurve {
    /// All accepted states.
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// States at the grid nodes `i / grid`.
    pub grid_x: Vec<Vec<f64>>,
    /// `sup_t |f(lift(t)) - alpha(t)|` over accepted states.
    pub projection_error: f64,
    /// Largest vertical component of the lift's velocity.
    pub max_vertical: f64,
    pub steps: usize,
}

impl LiftedCurve {
    pub fn end(&self) -> &[f64] {
        self.x.last().expect("lifts hold the initial point")
    }
}

/// Horizontal lift of `alpha` through `x0`, with `f(x0) = alpha(0)`.
pub fn horizontal_lift(
    conn: &ConnectionSpec,
    alpha: &BaseCurve,
    x0: &[f64],
    opts: &LiftOptions,
) -> Result<LiftedCurve> {
    let germ = &conn.submersion;
    alpha.validate(germ.k())?;
    let f0 = germ.eval(x0)?;
    let start_err = linalg::dist(&f0, &alpha.eval(0.0));
    if start_err > START_TOL {
        return Err(Error::Precondition(format!("start point is {start_err:e} from the initial fiber")));
    }
    let mut nodes: Vec<f64> = (0..=opts.grid.max(1)).map(|i| i as f64 / opts.grid.max(1) as f64).collect();
    nodes.extend(alpha.breakpoints());
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let grid_nodes = opts.grid.max(1);
    let mut out = LiftedCurve {
        t: vec![0.0],
        x: vec![x0.to_vec()],
        grid_x: vec![x0.to_vec()],
        projection_error: start_err,
        max_vertical: 0.0,
        steps: 0,
    };
    let mut x = x0.to_vec();
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        // Right derivative of the piece containing (a, b).
        let mid = 0.5 * (a + b);
        let sol = ode::integrate(
            |t, x| {
                let d = alpha.derivative(if t >= b { mid } else { t.max(a) });
                horizontal_velocity(conn, x, &d)
            },
            &x,
            a,
            b,
            &opts.ode,
            None::<fn(&[f64]) -> f64>,
            |_, _| Ok(()),
        );
        out.steps += sol.steps;
        if sol.stop == Stop::Failed {
            let (t, xf) = sol.last();
            let xf = xf.to_vec();
            let cause = sol.error.map(|e| e.to_string()).unwrap_or_default();
            return Err(Error::StepFailure(format!(
                "lift stopped at t = {t:.6} near x = {xf:?}, alpha = {:?}: {cause}",
                alpha.eval(t)
            )));
        }
        for (t, xs) in sol.t.iter().zip(&sol.x).skip(1) {
            let y = germ.eval(xs)?;
            out.projection_error = out.projection_error.max(linalg::dist(&y, &alpha.eval(*t)));
            let d = alpha.derivative(if *t >= b { mid } else { *t });
            if let Ok(dec) = decompose(conn, xs) {
                let vel = horizontal_velocity(conn, xs, &d)?;
                let (v, _) = dec.split(&vel);
                out.max_vertical = out.max_vertical.max(linalg::norm(&v));
            }
            out.t.push(*t);
            out.x.push(xs.clone());
        }
        x = sol.last().1.to_vec();
        let node = (b * grid_nodes as f64).round();
        if (b * grid_nodes as f64 - node).abs() < 1e-9 {
            out.grid_x.push(x.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    /// `(x, rho_alpha(x))`.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    /// Largest ratio of endpoint distance to start distance between each
    /// seed and its nearest neighbour.
    pub lipschitz: f64,
    pub max_projection_error: f64,
    #[serde(skip)]
    pub lifts: Vec<LiftedCurve>,
}

/// Translation of fibres along `alpha`, sampled at `seeds`.
pub fn fiber_translation(
    conn: &ConnectionSpec,
    alpha: &BaseCurve,
    seeds: &[Vec<f64>],
    opts: &LiftOptions,
    exec: Exec,
) -> Result<Translation> {
    let lifts = par::map_slice(exec, seeds, |x| horizontal_lift(conn, alpha, x, opts));
    let lifts: Vec<LiftedCurve> = lifts.into_iter().collect::<Result<_>>()?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> =
        seeds.iter().zip(&lifts).map(|(s, l)| (s.clone(), l.end().to_vec())).collect();
    let mut lipschitz: f64 = 0.0;
    for (i, (a, ea)) in pairs.iter().enumerate() {
        let nearest = pairs
            .iter()
            .enumerate()
            .filter(|(j, (b, _))| *j != i && linalg::dist(a, b) > 0.0)
            .min_by(|(_, (b, _)), (_, (c, _))| linalg::dist(a, b).total_cmp(&linalg::dist(a, c)));
        if let Some((_, (b, eb))) = nearest {
            lipschitz = lipschitz.max(linalg::dist(ea, eb) / linalg::dist(a, b));
        }
    }
    Ok(Translation {
        pairs,
        lipschitz,
        max_projection_error: lifts.iter().map(|l| l.projection_error).fold(0.0, f64::max),
        lifts,
    })
}

/// Splitting `T_x X = V^f + H~^f + H^{g o f}` of the composed connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedDecomposition {
    pub vertical_f: DMatrix<f64>,
    /// `H^f` part mapped onto `V^g` by `Df`.
    pub horizontal_tilde: DMatrix<f64>,
    /// `H^f` part mapped onto `H^g` by `Df`.
    pub horizontal_gf: DMatrix<f64>,
    /// `sigma_min` of `D(g o f)` restricted to `H^{g o f}`.
    pub sigma_min: f64,
}

impl ComposedDecomposition {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.vertical_f.ncols(), self.horizontal_tilde.ncols(), self.horizontal_gf.ncols())
    }

    /// Coordinates of `u` in `[V^f | H~^f | H^{g o f}]`.
    pub fn split(&self, u: &[f64]) -> [Vec<f64>; 3] {
        let (a, b, c) = self.dims();
        let mut m = DMatrix::zeros(u.len(), a + b + c);
        m.columns_mut(0, a).copy_from(&self.vertical_f);
        m.columns_mut(a, b).copy_from(&self.horizontal_tilde);
        m.columns_mut(a + b, c).copy_from(&self.horizontal_gf);
        let s = linalg::lstsq(&m, &DVector::from_column_slice(u), 1e-14);
        [
            s.rows(0, a).iter().copied().collect(),
            s.rows(a, b).iter().copied().collect(),
            s.rows(a + b, c).iter().copied().collect(),
        ]
    }
}

/// Pulls the `V^g / H^g` split at `f(x)` back through the isomorphism
/// `Df|_{H^f}`.
pub fn composed_connection(
    f_conn: &ConnectionSpec,
    g_conn: &ConnectionSpec,
    x: &[f64],
) -> Result<ComposedDecomposition> {
    let f = &f_conn.submersion;
    let g = &g_conn.submersion;
    if g.n() != f.k() {
        return Err(Error::Arity(format!("g expects {} inputs, f has {} outputs", g.n(), f.k())));
    }
    let dec_f = decompose(f_conn, x)?;
    let jf = submersion_jacobian(f_conn, x)?;
    let y = f.eval(x)?;
    let dec_g = decompose(g_conn, &y)?;
    let a = &jf * &dec_f.horizontal;
    let a_inv = a.try_inverse().ok_or(Error::NotSubmersion(0.0))?;
    let pull = &dec_f.horizontal * a_inv;
    let horizontal_tilde = linalg::orthonormalize(&(&pull * &dec_g.vertical));
    let horizontal_gf = linalg::orthonormalize(&(&pull * &dec_g.horizontal));
    let jg = submersion_jacobian(g_conn, &y)?;
    Ok(ComposedDecomposition {
        sigma_min: sigma_min(&(jg * jf * &horizontal_gf)),
        vertical_f: dec_f.vertical,
        horizontal_tilde,
        horizontal_gf,
    })
}

/// `g o f` with the horizontal distribution `H^{g o f}` of the composed
/// connection.
pub fn composed_spec(f_conn: &ConnectionSpec, g_conn: &ConnectionSpec) -> Result<ConnectionSpec> {
    let f = &f_conn.submersion;
    let gf = MapGerm::from_components(
        f.n(),
        f.compose_outer(g_conn.submersion.components()),
        f.smoothness().meet(g_conn.submersion.smoothness()),
    )?;
    let (fc, gc) = (f_conn.clone(), g_conn.clone());
    Ok(ConnectionSpec {
        submersion: gf,
        rule: HorizontalRule::Field(Arc::new(move |x: &[f64]| Ok(composed_connection(&fc, &gc, x)?.horizontal_gf))),
        metric: f_conn.metric.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub passed: bool,
    /// `sup_t |f(alpha_x(t)) - alpha_y(t)|` over the grid.
    pub sup_error: f64,
    /// `(dim V^f, dim H~^f, dim H^{g o f})` at every sampled point.
    pub dims: Vec<(usize, usize, usize)>,
    pub min_sigma: f64,
    /// Largest `V^f` or `H~^f` component of the `g o f` lift's velocity.
    pub max_off_component: f64,
    pub grid: usize,
}

/// Tolerance on `sup_t |f(alpha_x(t)) - alpha_y(t)|`.
pub const COMPOSITION_TOL: f64 = 1e-5;

/// Lifts `alpha` through `x0` with `H^{g o f}` and through `f(x0)` with
/// `H^g`, and compares `f` of the first with the second on the grid.
pub fn composition_lemma_probe(
    f_conn: &ConnectionSpec,
    g_conn: &ConnectionSpec,
    alpha: &BaseCurve,
    x0: &[f64],
    opts: &LiftOptions,
) -> Result<CompositionReport> {
    let f = &f_conn.submersion;
    let gf_conn = composed_spec(f_conn, g_conn)?;
    let lift_x = horizontal_lift(&gf_conn, alpha, x0, opts)?;
    let y0 = f.eval(x0)?;
    let lift_y = horizontal_lift(g_conn, alpha, &y0, opts)?;
    let mut sup_error: f64 = 0.0;
    for (xs, ys) in lift_x.grid_x.iter().zip(&lift_y.grid_x) {
        sup_error = sup_error.max(linalg::dist(&f.eval(xs)?, ys));
    }
    let mut dims = Vec::new();
    let mut min_sigma = f64::INFINITY;
    let mut max_off: f64 = 0.0;
    let grid = lift_x.grid_x.len() - 1;
    for (i, xs) in lift_x.grid_x.iter().enumerate() {
        let dec = composed_connection(f_conn, g_conn, xs)?;
        dims.push(dec.dims());
        min_sigma = min_sigma.min(dec.sigma_min);
        let t = i as f64 / grid.max(1) as f64;
        let vel = horizontal_velocity(&gf_conn, xs, &alpha.derivative(t.min(1.0 - 1e-12)))?;
        let [v, h, _] = dec.split(&vel);
        max_off = max_off.max(linalg::norm(&v)).max(linalg::norm(&h));
    }
    Ok(CompositionReport {
        passed: sup_error <= COMPOSITION_TOL && max_off <= LIFT_TOL && min_sigma > 1e-8,
        sup_error,
        dims,
        min_sigma,
        max_off_component: max_off,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::germ::{builtin_catalog, builtin_ldm};

    fn ldm22() -> MapGerm {
        builtin_ldm(2, 2, &[(2.0, 1.0), (-1.0, 1.0), (0.0, -1.0)]).unwrap()
    }

    fn projection() -> MapGerm {
        builtin_catalog("projection").unwrap()
    }

    #[test]
    fn homogeneous_field_is_radial() {
        let g = ldm22();
        let x = [0.3, -0.2, 0.5];
        let w = milnor_vector_field(&g, &x).unwrap();
        for (a, b) in w.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_field_is_normalised() {
        let g = projection();
        let x = [1.0, 0.0, 1.0];
        let w = milnor_vector_field(&g, &x).unwrap();
        assert!((linalg::dot(&w, &x) - 2.0).abs() < 1e-12);
        // Tangent to E_theta: Df w is parallel to f(x) = (1, 0).
        assert!(w[1].abs() < 1e-12);
    }

    #[test]
    fn ex6_bad_line_is_degenerate() {
        let g = builtin_catalog("ex6").unwrap();
        let e = milnor_vector_field(&g, &[0.2, 0.0, 0.2]).unwrap_err();
        assert!(matches!(e, Error::DegenerateProjection { .. }));
        assert!(matches!(milnor_vector_field(&g, &[0.0, 0.0, 0.3]), Err(Error::OnFiberV(_))));
    }

    #[test]
    fn homogeneous_flow_follows_the_ray() {
        let g = ldm22();
        let x0 = linalg::scale(&[0.6, -0.48, 0.64], 0.25);
        let tr = flow_to_sphere(&g, &x0, 1.0, &OdeOptions::default(), None);
        assert!(tr.reached(), "{:?}", tr.error);
        assert!(tr.radius_error() <= 1e-8);
        assert!(tr.invariants_hold() && tr.norm_f_increasing);
        let expect = linalg::scale(&x0, 1.0 / linalg::norm(&x0));
        assert!(linalg::dist(&tr.end().x, &expect) < 1e-6);
        assert!(tr.states.windows(2).all(|w| w[1].t > w[0].t));
    }

    #[test]
    fn projection_flow_keeps_phi() {
        let tr = flow_to_sphere(&projection(), &[0.1, 0.0, 0.2], 1.0, &OdeOptions::default(), None);
        assert!(tr.reached());
        assert!(tr.radius_error() <= 1e-8);
        assert!(tr.phi_drift <= PHI_TOL);
    }

    #[test]
    fn ex6_flow_from_bad_line_aborts() {
        let g = builtin_catalog("ex6").unwrap();
        let tr = flow_to_sphere(&g, &[0.1, 0.0, 0.1], 1.0, &OdeOptions::default(), None);
        assert_eq!(tr.termination, Termination::DegenerateProjection, "{:?}", tr.error);
    }

    #[test]
    fn tau_probe_needs_regularity() {
        let g = ldm22();
        let cfg = BallConfig::new(1.0, 0.1, None, 2.0).unwrap();
        let mut report = crate::regularity::d_regular_with(
            &g,
            &cfg,
            &crate::regularity::RegularityOptions {
                directions: 4,
                sphere_points: 4,
                radius_fractions: vec![1.0],
                ..Default::default()
            },
            &Exclusions::default(),
        );
        report.verdict = Verdict::Fail;
        let e = tau_equivalence_probe(&g, &cfg, &report, &Exclusions::default(), &TauOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn projection_spaces() {
        let c = ConnectionSpec::orthogonal(projection());
        let d = decompose(&c, &[0.3, 0.1, -0.2]).unwrap();
        assert_eq!((d.vertical.ncols(), d.horizontal.ncols()), (1, 2));
        assert!((d.vertical[(2, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(d.horizontal.row(2).abs().max() < 1e-12);
        assert!((d.condition - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ldm_spaces_have_expected_dimensions() {
        let c = ConnectionSpec::orthogonal(ldm22());
        let d = decompose(&c, &[0.3, -0.2, 0.5]).unwrap();
        assert_eq!((d.vertical.ncols(), d.horizontal.ncols()), (1, 2));
        assert!(d.condition < CONDITION_LIMIT);
        assert!(matches!(decompose(&c, &[0.0, 0.0, 0.0]), Err(Error::NotSubmersion(_))));
    }

    #[test]
    fn projection_lift_is_a_translate() {
        let c = ConnectionSpec::orthogonal(projection());
        let alpha = BaseCurve::Segment { from: vec![0.0, 0.0], to: vec![1.0, 0.0] };
        let l = horizontal_lift(&c, &alpha, &[0.0, 0.0, 0.7], &LiftOptions::default()).unwrap();
        assert!(linalg::dist(l.end(), &[1.0, 0.0, 0.7]) < 1e-12);
        assert!(l.projection_error < 1e-12 && l.max_vertical < 1e-12);
        assert_eq!(l.grid_x.len(), 65);
    }

    #[test]
    fn lift_needs_start_on_fiber() {
        let c = ConnectionSpec::orthogonal(projection());
        let alpha = BaseCurve::Constant { at: vec![0.0, 0.0] };
        let e = horizontal_lift(&c, &alpha, &[0.1, 0.0, 0.0], &LiftOptions::default()).unwrap_err();
        assert!(matches!(e, Error::Precondition(_)));
    }

    #[test]
    fn ldm_loop_lift_projects_exactly() {
        let g = ldm22();
        let c = ConnectionSpec::orthogonal(g.clone());
        let x0 = [0.3, -0.2, 0.5];
        let y0 = g.eval(&x0).unwrap();
        let r = 0.2 * linalg::norm(&y0);
        let alpha = BaseCurve::Circle { center: vec![y0[0] - r, y0[1]], radius: r };
        let l = horizontal_lift(&c, &alpha, &x0, &LiftOptions::default()).unwrap();
        assert!(l.projection_error <= LIFT_TOL, "{}", l.projection_error);
        assert!(l.max_vertical <= LIFT_TOL);
    }

    #[test]
    fn lift_leaving_the_image_fails() {
        let g = crate::parser::parse("map 3 -> 2 { u = x1^2 + x3^2; v = x2; }").unwrap();
        let c = ConnectionSpec::orthogonal(g);
        let alpha = BaseCurve::Segment { from: vec![0.25, 0.0], to: vec![-0.25, 0.0] };
        let e = horizontal_lift(&c, &alpha, &[0.5, 0.0, 0.0], &LiftOptions::default()).unwrap_err();
        assert!(matches!(e, Error::StepFailure(_)), "{e}");
    }

    #[test]
    fn constant_curve_translation_is_identity() {
        let c = ConnectionSpec::orthogonal(projection());
        let alpha = BaseCurve::Constant { at: vec![0.2, 0.1] };
        let seeds: Vec<Vec<f64>> = (0..5).map(|i| vec![0.2, 0.1, 0.1 * i as f64]).collect();
        let tr = fiber_translation(&c, &alpha, &seeds, &LiftOptions::default(), Exec::Sequential).unwrap();
        for (a, b) in &tr.pairs {
            assert_eq!(a, b);
        }
        assert!((tr.lipschitz - 1.0).abs() < 1e-12);
    }

    fn first() -> MapGerm {
        builtin_catalog("first").unwrap()
    }

    #[test]
    fn composed_projection_splits_axes() {
        let fc = ConnectionSpec::orthogonal(projection());
        let gc = ConnectionSpec::orthogonal(first());
        let d = composed_connection(&fc, &gc, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(d.dims(), (1, 1, 1));
        assert!((d.horizontal_gf[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((d.horizontal_tilde[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!(d.sigma_min > 1e-8);
    }

    #[test]
    fn composition_lemma_holds_for_diagonal_metric() {
        let fc = ConnectionSpec::orthogonal(projection()).with_metric(Metric::Diagonal(vec![1.0, 3.0, 0.5]));
        let gc = ConnectionSpec::orthogonal(first());
        let alpha = BaseCurve::Segment { from: vec![0.1], to: vec![0.6] };
        let r = composition_lemma_probe(&fc, &gc, &alpha, &[0.1, 0.2, 0.3], &LiftOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.dims.iter().all(|d| *d == (1, 1, 1)));
    }
}
