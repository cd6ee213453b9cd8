//! Transversality property and d-regularity, each decided numerically with
//! witnesses.
//!
//! Tangencies of `E_theta` with spheres form a thin set, so random samples
//! alone never land on them. Both d-regularity methods therefore refine every
//! sample by Gauss-Newton on a system whose zeros are exactly the tangency
//! points, and report a witness only when the refined point satisfies the
//! sphere constraint and has a near-zero diagnostic singular value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{
    self, combinations, fd_system, maximal_minors, random_unit, BallConfig, DiscriminantModel, Sampler, RANK_TOL,
};
use crate::error::{Error, Result};
use crate::germ::MapGerm;
use crate::linalg::{self, GnOptions};
use crate::par::{self, Exec};

/// Diagnostic singular values below this mark a tangency.
pub const SIGMA_TOL: f64 = 1e-6;
/// Constraint residual required of a witness.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Directions this close (radians) to the discriminant are skipped.
pub const ANGLE_TOL: f64 = 1e-3;
/// Points this close (relative to `eps`) to sampled critical points are skipped.
pub const W_TOL: f64 = 1e-3;
/// `|f(x)|` at or below this is treated as a point of `V(f)`.
pub const PHI_FLOOR: f64 = 1e-14;
/// Points with `|f(x)| <= V_REL * |x| * |Df(x)|` are treated as lying on `V(f)`.
const V_REL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rays,
    Submersion,
    Both,
    Transversality,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Rays => "rays",
            Method::Submersion => "submersion",
            Method::Both => "both",
            Method::Transversality => "transversality",
        }
    }
}

/// Unit vector in `R^k` naming the ray `L_theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayDirection(Vec<f64>);

impl RayDirection {
    /// Normalises `v`; fails for the zero vector.
    pub fn new(v: &[f64]) -> Result<RayDirection> {
        let n = linalg::norm(v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Domain("ray direction must be a nonzero finite vector".into()));
        }
        Ok(RayDirection(linalg::scale(v, 1.0 / n)))
    }

    pub fn angle(a: f64) -> RayDirection {
        RayDirection(vec![a.cos(), a.sin()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub method: Method,
    pub x: Vec<f64>,
    /// `theta = Phi(x)` for d-regularity, the target value for transversality.
    pub theta_or_y: Vec<f64>,
    pub radius: f64,
    pub sigma_min: f64,
    /// Relative sphere residual `| |x| - radius | / radius`.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub sigma: f64,
    pub residual: f64,
    pub angle: f64,
    pub w_distance: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { sigma: SIGMA_TOL, residual: RESIDUAL_TOL, angle: ANGLE_TOL, w_distance: W_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingCounts {
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub verdict: Verdict,
    pub method: Method,
    pub witnesses: Vec<Witness>,
    /// Per-method verdicts when several methods ran.
    pub method_verdicts: BTreeMap<String, Verdict>,
    pub sampling: SamplingCounts,
    pub tolerances: Tolerances,
    pub radii: Vec<f64>,
    pub notes: Vec<String>,
}

impl RegularityReport {
    fn from_witnesses(
        method: Method,
        witnesses: Vec<Witness>,
        counts: BTreeMap<String, usize>,
        opts: &RegularityOptions,
        radii: Vec<f64>,
    ) -> RegularityReport {
        let verdict = if witnesses.is_empty() { Verdict::Pass } else { Verdict::Fail };
        RegularityReport {
            verdict,
            method,
            witnesses,
            method_verdicts: BTreeMap::from([(method.label().to_string(), verdict)]),
            sampling: SamplingCounts { seed: opts.seed, counts },
            tolerances: opts.tol,
            radii,
            notes: Vec::new(),
        }
    }

    fn trivial(method: Method, opts: &RegularityOptions, note: &str) -> RegularityReport {
        let mut r = RegularityReport::from_witnesses(method, Vec::new(), BTreeMap::new(), opts, Vec::new());
        r.notes.push(note.to_string());
        r
    }
}

/// Sampling budgets for the regularity checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityOptions {
    /// Ray directions sampled by the rays method.
    pub directions: usize,
    /// Seeds per (direction, radius) pair.
    pub seeds_per_direction: usize,
    /// Points per sphere for the submersion method.
    pub sphere_points: usize,
    /// Radii as fractions of `eps`.
    pub radius_fractions: Vec<f64>,
    /// Targets in `B_delta` for the transversality property.
    pub targets: usize,
    /// Seeds per target for fibre-sphere solves.
    pub fiber_seeds: usize,
    pub seed: u64,
    pub exec: Exec,
    pub tol: Tolerances,
    /// Budget for the discriminant and boundary samples.
    pub sampler: Sampler,
}

impl Default for RegularityOptions {
    fn default() -> Self {
        RegularityOptions {
            directions: 64,
            seeds_per_direction: 4,
            sphere_points: 256,
            radius_fractions: vec![1.0, 0.5, 0.25, 0.125],
            targets: 48,
            fiber_seeds: 32,
            seed: 0,
            exec: Exec::default(),
            tol: Tolerances::default(),
            sampler: Sampler::default(),
        }
    }
}

impl RegularityOptions {
    fn radii(&self, eps: f64) -> Vec<f64> {
        self.radius_fractions.iter().map(|f| f * eps).collect()
    }
}

/// `Phi(x) = f(x) / |f(x)|`.
pub fn phi(germ: &MapGerm, x: &[f64]) -> Result<Vec<f64>> {
    let y = germ.eval(x)?;
    unit_or_fiber(&y)
}

fn unit_or_fiber(y: &[f64]) -> Result<Vec<f64>> {
    let n = linalg::norm(y);
    if n.is_nan() || n <= PHI_FLOOR {
        return Err(Error::OnFiberV(n));
    }
    Ok(linalg::scale(y, 1.0 / n))
}

/// The spherefication `|x| Phi(x)`.
pub fn spherefication(germ: &MapGerm, x: &[f64]) -> Result<Vec<f64>> {
    Ok(linalg::scale(&phi(germ, x)?, linalg::norm(x)))
}

/// Outcome of intersecting one fibre with a sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FiberSphere {
    Transverse { points: usize, sigma_min: f64 },
    Tangency(Witness),
    Empty { seeds: usize },
}

/// Solves `f(x) = y`, `|x| = eps` from `seeds` points on the sphere and
/// checks `rank [Df(x); x^T] = k + 1` at every solution.
pub fn fiber_sphere_transverse(germ: &MapGerm, y: &[f64], eps: f64, tol: f64, seeds: usize, seed: u64) -> FiberSphere {
    let (n, k) = (germ.n(), germ.k());
    let scale = linalg::norm(y).max(f64::MIN_POSITIVE);
    let system = |x: &[f64]| {
        let (v, j) = germ.eval_jacobian(x, false).ok()?;
        let mut r = nalgebra::DVector::zeros(k + 1);
        let mut jac = DMatrix::zeros(k + 1, n);
        for i in 0..k {
            r[i] = (v[i] - y[i]) / scale;
            for c in 0..n {
                jac[(i, c)] = j[(i, c)] / scale;
            }
        }
        r[k] = (linalg::dot(x, x) - eps * eps) / (eps * eps);
        for c in 0..n {
            jac[(k, c)] = 2.0 * x[c] / (eps * eps);
        }
        Some((r, jac))
    };
    let opts = GnOptions { max_iter: 40, tol: 1e-11, rcond: 1e-12 };
    let mut sigma_min = f64::INFINITY;
    let mut found = 0;
    for i in 0..seeds {
        let mut rng = par::task_rng(seed, i as u64);
        let x0 = linalg::scale(&random_unit(&mut rng, n), eps);
        let Some(out) = linalg::gauss_newton(system, &x0, opts) else {
            continue;
        };
        if !out.converged {
            continue;
        }
        let Some(s) = stacked_sigma(germ, &out.x) else {
            continue;
        };
        found += 1;
        if s < tol {
            return FiberSphere::Tangency(Witness {
                method: Method::Transversality,
                residual: (linalg::norm(&out.x) - eps).abs() / eps,
                x: out.x,
                theta_or_y: y.to_vec(),
                radius: eps,
                sigma_min: s,
            });
        }
        sigma_min = sigma_min.min(s);
    }
    if found == 0 {
        FiberSphere::Empty { seeds }
    } else {
        FiberSphere::Transverse { points: found, sigma_min }
    }
}

/// Smallest singular value of `[Df(x); x^T]` with unit rows.
fn stacked_sigma(germ: &MapGerm, x: &[f64]) -> Option<f64> {
    let j = germ.jacobian(x, false).ok()?;
    let (n, k) = (germ.n(), germ.k());
    let mut m = DMatrix::zeros(k + 1, n);
    m.view_mut((0, 0), (k, n)).copy_from(&j);
    m.row_mut(k).copy_from(&nalgebra::RowDVector::from_row_slice(x));
    let s = linalg::singular_values(&linalg::normalize_rows(&m));
    s.get(k).copied().or(Some(0.0))
}

/// Sets removed from the checks: discriminant directions and sampled
/// critical points.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    pub directions: Vec<Vec<f64>>,
    pub critical: Vec<Vec<f64>>,
    /// Angular tolerance in radians.
    pub angle: f64,
    /// Absolute distance to `critical`.
    pub distance: f64,
}

impl Exclusions {
    pub fn from_model(model: &DiscriminantModel, tol: &Tolerances) -> Exclusions {
        Exclusions {
            directions: model.directions(f64::INFINITY, 0.0),
            critical: model.points.iter().map(|p| p.x.clone()).collect(),
            angle: tol.angle,
            distance: tol.w_distance * model.eps,
        }
    }

    /// Adds unit directions (normalising them) to the excluded set.
    pub fn with_directions(mut self, dirs: &[Vec<f64>]) -> Exclusions {
        for d in dirs {
            if let Ok(u) = unit_or_fiber(d) {
                self.directions.push(u);
            }
        }
        self
    }

    pub fn excludes_direction(&self, theta: &[f64]) -> bool {
        self.directions.iter().any(|a| angle_between(a, theta) < self.angle)
    }

    pub fn excludes_point(&self, x: &[f64]) -> bool {
        self.critical.iter().any(|c| linalg::dist(c, x) < self.distance)
    }
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    2.0 * (linalg::dist(a, b) / 2.0).min(1.0).asin()
}

/// Discriminant sample for `germ` turned into exclusions.
pub fn exclusions_for(germ: &MapGerm, cfg: &BallConfig, opts: &RegularityOptions) -> Exclusions {
    let model = critical::discriminant_sample(germ, cfg, &opts.sampler);
    Exclusions::from_model(&model, &opts.tol)
}

/// Local data at a regular point off `V(f)`: `J` is `Df` with unit rows and
/// `b = P J` with `P` the projection onto `theta'^perp`, where `theta'` is
/// the direction of `f` in the same row scaling. The kernel of `b` is the
/// tangent space of `E_theta` at `x`.
struct Frame {
    theta: Vec<f64>,
    b: DMatrix<f64>,
    xhat: Vec<f64>,
}

fn frame(germ: &MapGerm, x: &[f64]) -> Option<Frame> {
    let (v, j) = germ.eval_jacobian(x, false).ok()?;
    let nx = linalg::norm(x);
    if nx == 0.0 || !v.iter().all(|c| c.is_finite()) {
        return None;
    }
    let theta = unit_or_fiber(&v).ok()?;
    let jf = j.norm();
    if !(jf.is_finite() && linalg::norm(&v) > V_REL * nx * jf) {
        return None;
    }
    let k = germ.k();
    let mut jn = j.clone();
    let mut scaled = v.clone();
    for (i, si) in scaled.iter_mut().enumerate().take(k) {
        let rn = linalg::row_norm(&j, i);
        if rn == 0.0 {
            return None;
        }
        jn.row_mut(i).scale_mut(1.0 / rn);
        *si /= rn;
    }
    if linalg::numerical_rank(&jn, RANK_TOL, 0.0) < k {
        return None;
    }
    let t = unit_or_fiber(&scaled).ok()?;
    let tm = nalgebra::DVector::from_column_slice(&t);
    let p = DMatrix::identity(k, k) - &tm * tm.transpose();
    Some(Frame { theta, b: p * jn, xhat: linalg::scale(x, 1.0 / nx) })
}

impl Frame {
    /// `sigma_min` of an orthonormal basis of the row space of `b` stacked
    /// on `xhat`: zero exactly when `E_theta` is tangent to the sphere.
    fn rays_sigma(&self) -> f64 {
        let k = self.b.nrows();
        let n = self.b.ncols();
        let (v, _) = linalg::right_singular(&self.b);
        let mut m = DMatrix::zeros(k, n);
        for r in 0..k - 1 {
            m.row_mut(r).copy_from(&v.column(r).transpose());
        }
        m.row_mut(k - 1).copy_from(&nalgebra::RowDVector::from_row_slice(&self.xhat));
        linalg::singular_values(&m).last().copied().unwrap_or(0.0)
    }

    /// `sigma_{k-1}` of `D Phi` restricted to `T_x S`, relative to the same
    /// singular value of `D Phi` on `R^n`.
    fn submersion_sigma(&self) -> f64 {
        let k = self.b.nrows();
        let bt = &self.b * tangent_projector(&self.xhat);
        let full = linalg::singular_values(&self.b);
        let restricted = linalg::singular_values(&bt);
        restricted[k - 2] / full[k - 2]
    }

    fn rays_minors(&self) -> Vec<f64> {
        let (k, n) = (self.b.nrows(), self.b.ncols());
        let mut out = Vec::new();
        for rows in combinations(k, k - 1) {
            let mut m = DMatrix::zeros(k, n);
            for (i, &r) in rows.iter().enumerate() {
                m.row_mut(i).copy_from(&self.b.row(r));
            }
            m.row_mut(k - 1).copy_from(&nalgebra::RowDVector::from_row_slice(&self.xhat));
            out.extend(maximal_minors(&m));
        }
        out
    }

    fn submersion_minors(&self) -> Vec<f64> {
        let k = self.b.nrows();
        let bt = &self.b * tangent_projector(&self.xhat);
        combinations(k, k - 1).into_iter().flat_map(|rows| maximal_minors(&bt.select_rows(&rows))).collect()
    }
}

fn tangent_projector(xhat: &[f64]) -> DMatrix<f64> {
    let u = nalgebra::DVector::from_column_slice(xhat);
    DMatrix::identity(xhat.len(), xhat.len()) - &u * u.transpose()
}

fn sphere_residual(x: &[f64], r: f64) -> f64 {
    (linalg::dot(x, x) - r * r) / (r * r)
}

const REFINE: GnOptions = GnOptions { max_iter: 40, tol: 1e-14, rcond: 1e-12 };

/// Gauss-Newton onto the tangency set of the given method on `S_r`.
fn refine_tangency(germ: &MapGerm, x0: &[f64], r: f64, method: Method) -> Option<Vec<f64>> {
    let res = |x: &[f64]| {
        let f = frame(germ, x)?;
        let mut v = vec![sphere_residual(x, r)];
        match method {
            Method::Submersion => v.extend(f.submersion_minors()),
            _ => v.extend(f.rays_minors()),
        }
        Some(v)
    };
    linalg::gauss_newton(|x| fd_system(res, x), x0, REFINE).map(|o| o.x)
}

/// Witness at `x` when it is a valid near-tangency outside the exclusions.
fn witness_at(
    germ: &MapGerm,
    x: &[f64],
    r: f64,
    method: Method,
    excl: &Exclusions,
    tol: &Tolerances,
) -> Option<Witness> {
    let f = frame(germ, x)?;
    let residual = (linalg::norm(x) - r).abs() / r;
    let sigma = match method {
        Method::Submersion => f.submersion_sigma(),
        _ => f.rays_sigma(),
    };
    let valid =
        residual < tol.residual && sigma < tol.sigma && !excl.excludes_direction(&f.theta) && !excl.excludes_point(x);
    valid.then(|| Witness { method, x: x.to_vec(), theta_or_y: f.theta, radius: r, sigma_min: sigma, residual })
}

fn dedup_witnesses(ws: Vec<Witness>, res: f64) -> Vec<Witness> {
    let mut seen = BTreeSet::new();
    ws.into_iter().filter(|w| seen.insert(w.x.iter().map(|v| (v / res).round() as i64).collect::<Vec<_>>())).collect()
}

/// Sampled ray directions: an equally spaced circle for `k = 2` (with a
/// seeded offset), uniform random directions otherwise.
fn sample_directions(k: usize, count: usize, seed: u64) -> Vec<RayDirection> {
    let mut rng = par::task_rng(seed, u64::MAX);
    if k == 2 {
        let offset: f64 = rng.random::<f64>() * std::f64::consts::TAU / count as f64;
        (0..count).map(|i| RayDirection::angle(offset + std::f64::consts::TAU * i as f64 / count as f64)).collect()
    } else {
        (0..count).map(|_| RayDirection(random_unit(&mut rng, k))).collect()
    }
}

/// Points of `E_theta ∩ S_r`: `|x| = r`, `P_theta Phi(x) = 0`, `<Phi, theta> > 0`.
pub fn e_theta_point(germ: &MapGerm, theta: &RayDirection, r: f64, x0: &[f64]) -> Option<Vec<f64>> {
    let th = theta.as_slice();
    let res = |x: &[f64]| {
        let p = phi(germ, x).ok()?;
        let c = linalg::dot(&p, th);
        let mut v = vec![sphere_residual(x, r)];
        v.extend(p.iter().zip(th).map(|(a, t)| a - c * t));
        Some(v)
    };
    let out = linalg::gauss_newton(|x| fd_system(res, x), x0, GnOptions::default())?;
    let on_ray = phi(germ, &out.x).map(|p| linalg::dot(&p, th) > 0.0).unwrap_or(false);
    (out.converged && on_ray).then_some(out.x)
}

/// d-regularity through the rays `E_theta` meeting the spheres `S_r`.
pub fn d_regular_via_rays(
    germ: &MapGerm,
    cfg: &BallConfig,
    opts: &RegularityOptions,
    excl: &Exclusions,
) -> RegularityReport {
    let (n, k) = (germ.n(), germ.k());
    if k < 2 {
        return RegularityReport::trivial(Method::Rays, opts, "k = 1: each E_theta is open in R^n");
    }
    let radii = opts.radii(cfg.eps);
    let dirs: Vec<RayDirection> = sample_directions(k, opts.directions, opts.seed)
        .into_iter()
        .filter(|d| !excl.excludes_direction(d.as_slice()))
        .collect();
    let per_dir = radii.len() * opts.seeds_per_direction;
    let tasks = dirs.len() * per_dir;
    let results = par::map_indexed(opts.exec, tasks, |i| {
        let (d, rest) = (i / per_dir, i % per_dir);
        let r = radii[rest / opts.seeds_per_direction];
        let mut rng = par::task_rng(opts.seed, i as u64);
        let x0 = linalg::scale(&random_unit(&mut rng, n), r);
        let x = e_theta_point(germ, &dirs[d], r, &x0)?;
        let direct = witness_at(germ, &x, r, Method::Rays, excl, &opts.tol);
        let refined = refine_tangency(germ, &x, r, Method::Rays)
            .and_then(|xr| witness_at(germ, &xr, r, Method::Rays, excl, &opts.tol));
        Some((direct, refined))
    });
    let solved = results.iter().filter(|r| r.is_some()).count();
    let witnesses: Vec<Witness> = results.into_iter().flatten().flat_map(|(a, b)| a.into_iter().chain(b)).collect();
    let witnesses = dedup_witnesses(witnesses, 1e-6 * cfg.eps);
    let counts = BTreeMap::from([
        ("directions".to_string(), dirs.len()),
        ("directions_excluded".to_string(), opts.directions - dirs.len()),
        ("tasks".to_string(), tasks),
        ("solved".to_string(), solved),
    ]);
    RegularityReport::from_witnesses(Method::Rays, witnesses, counts, opts, radii)
}

/// d-regularity through `Phi` restricted to each sphere being a submersion.
pub fn d_regular_via_submersion(
    germ: &MapGerm,
    cfg: &BallConfig,
    opts: &RegularityOptions,
    excl: &Exclusions,
) -> RegularityReport {
    let (n, k) = (germ.n(), germ.k());
    if k < 2 {
        return RegularityReport::trivial(Method::Submersion, opts, "k = 1: Phi is locally constant");
    }
    let radii = opts.radii(cfg.eps);
    let per_radius = opts.sphere_points;
    let tasks = radii.len() * per_radius;
    let stream0 = 1u64 << 40;
    let results = par::map_indexed(opts.exec, tasks, |i| {
        let r = radii[i / per_radius];
        let mut rng = par::task_rng(opts.seed, stream0 + i as u64);
        let x = linalg::scale(&random_unit(&mut rng, n), r);
        let f = frame(germ, &x)?;
        if excl.excludes_direction(&f.theta) || excl.excludes_point(&x) {
            return None;
        }
        let direct = witness_at(germ, &x, r, Method::Submersion, excl, &opts.tol);
        let refined = refine_tangency(germ, &x, r, Method::Submersion)
            .and_then(|xr| witness_at(germ, &xr, r, Method::Submersion, excl, &opts.tol));
        Some((direct, refined))
    });
    let checked = results.iter().filter(|r| r.is_some()).count();
    let witnesses: Vec<Witness> = results.into_iter().flatten().flat_map(|(a, b)| a.into_iter().chain(b)).collect();
    let witnesses = dedup_witnesses(witnesses, 1e-6 * cfg.eps);
    let counts = BTreeMap::from([
        ("sphere_points".to_string(), tasks),
        ("checked".to_string(), checked),
        ("excluded".to_string(), tasks - checked),
    ]);
    RegularityReport::from_witnesses(Method::Submersion, witnesses, counts, opts, radii)
}

/// Both characterisations; disagreement yields `Inconclusive`.
pub fn d_regular_with(
    germ: &MapGerm,
    cfg: &BallConfig,
    opts: &RegularityOptions,
    excl: &Exclusions,
) -> RegularityReport {
    let rays = d_regular_via_rays(germ, cfg, opts, excl);
    let sub = d_regular_via_submersion(germ, cfg, opts, excl);
    combine(rays, sub)
}

pub fn d_regular(germ: &MapGerm, cfg: &BallConfig, opts: &RegularityOptions) -> RegularityReport {
    let excl = exclusions_for(germ, cfg, opts);
    d_regular_with(germ, cfg, opts, &excl)
}

fn combine(rays: RegularityReport, sub: RegularityReport) -> RegularityReport {
    let verdict = if rays.verdict == sub.verdict { rays.verdict } else { Verdict::Inconclusive };
    let mut counts = BTreeMap::new();
    for (prefix, r) in [("rays", &rays), ("submersion", &sub)] {
        for (key, v) in &r.sampling.counts {
            counts.insert(format!("{prefix}.{key}"), *v);
        }
    }
    let mut notes: Vec<String> = rays.notes.iter().chain(&sub.notes).cloned().collect();
    notes.dedup();
    if verdict == Verdict::Inconclusive {
        notes.push(format!(
            "methods disagree (rays {}, submersion {}): tolerance or sampling problem",
            rays.verdict, sub.verdict
        ));
    }
    RegularityReport {
        verdict,
        method: Method::Both,
        method_verdicts: BTreeMap::from([("rays".to_string(), rays.verdict), ("submersion".to_string(), sub.verdict)]),
        sampling: SamplingCounts { seed: rays.sampling.seed, counts },
        tolerances: rays.tolerances,
        radii: rays.radii,
        witnesses: rays.witnesses.into_iter().chain(sub.witnesses).collect(),
        notes,
    }
}

/// Transversality property in the ball: fibres over `B_delta \ Delta` meet
/// `S_eps` transversally. Checked on sampled targets and, independently, on
/// the sampled apparent contour (critical values of `f|_{S_eps}`).
pub fn transversality_property(germ: &MapGerm, cfg: &BallConfig, opts: &RegularityOptions) -> RegularityReport {
    let model = critical::discriminant_sample(germ, cfg, &opts.sampler);
    transversality_with(germ, cfg, opts, &model)
}

pub fn transversality_with(
    germ: &MapGerm,
    cfg: &BallConfig,
    opts: &RegularityOptions,
    model: &DiscriminantModel,
) -> RegularityReport {
    let (k, delta) = (germ.k(), cfg.delta);
    let near_delta = |y: &[f64]| model.distance_to(y) < opts.tol.w_distance * delta;
    let mut rng = par::task_rng(opts.seed, u64::MAX - 1);
    let targets: Vec<Vec<f64>> = (0..opts.targets)
        .map(|_| {
            let r = delta * rng.random::<f64>().powf(1.0 / k as f64);
            linalg::scale(&random_unit(&mut rng, k), r)
        })
        .collect();
    let (targets, skipped): (Vec<_>, Vec<_>) = targets.into_iter().partition(|y| !near_delta(y));
    let outcomes = par::map_slice(opts.exec, &targets, |y| {
        fiber_sphere_transverse(germ, y, cfg.eps, opts.tol.sigma, opts.fiber_seeds, opts.seed)
    });
    let mut counts = BTreeMap::from([
        ("targets".to_string(), targets.len()),
        ("targets_near_discriminant".to_string(), skipped.len()),
        ("empty".to_string(), 0),
        ("transverse".to_string(), 0),
    ]);
    let mut witnesses = Vec::new();
    for o in outcomes {
        match o {
            FiberSphere::Empty { .. } => *counts.get_mut("empty").unwrap() += 1,
            FiberSphere::Transverse { .. } => *counts.get_mut("transverse").unwrap() += 1,
            FiberSphere::Tangency(w) => witnesses.push(w),
        }
    }
    let contour = critical::boundary_points(germ, cfg, &opts.sampler);
    counts.insert("contour_points".to_string(), contour.len());
    let mut contour_in_ball = 0;
    for p in &contour {
        if linalg::norm(&p.y) >= delta {
            continue;
        }
        contour_in_ball += 1;
        if near_delta(&p.y) {
            continue;
        }
        witnesses.push(Witness {
            method: Method::Transversality,
            x: p.x.clone(),
            theta_or_y: p.y.clone(),
            radius: cfg.eps,
            sigma_min: stacked_sigma(germ, &p.x).unwrap_or(0.0),
            residual: (linalg::norm(&p.x) - cfg.eps).abs() / cfg.eps,
        });
    }
    counts.insert("contour_in_target_ball".to_string(), contour_in_ball);
    let mut report = RegularityReport::from_witnesses(Method::Transversality, witnesses, counts, opts, vec![cfg.eps]);
    if report.sampling.counts["empty"] > 0 {
        report.notes.push("targets with no sampled fibre points count as transverse (empty intersection)".into());
    }
    report
}
