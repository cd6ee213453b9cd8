//! Critical set, discriminant and extended discriminant by sampling, plus the
//! closed-form discriminant branches of the builtin families.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::conic;
use crate::error::{Error, Result};
use crate::germ::{Family, MapGerm};
use crate::linalg::{self, GnOptions};
use crate::par::{self, Exec};

/// Default relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-8;
/// `sigma_max` below this means the Jacobian is numerically zero.
pub const RANK_FLOOR: f64 = 1e-12;
/// Acceptance threshold for refined critical points.
pub const REFINE_TOL: f64 = 1e-10;
/// Discriminant samples are deduplicated on a grid of `DEDUP * delta`.
pub const DEDUP: f64 = 1e-4;
/// Relative thresholds below which refined coordinates are snapped to zero.
const SNAP: [f64; 3] = [1e-12, 1e-8, 1e-4];
/// Perturbation scale, relative to `eps`, of the resampling pass.
const RESAMPLE_SPREAD: f64 = 0.05;
/// Oracle points count as covered when a sample lies within `COVER * delta`.
pub const COVER: f64 = 0.02;

/// Domain ball, target ball and radii of the local picture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallConfig {
    pub eps: f64,
    pub delta: f64,
    pub eta: Option<f64>,
    pub eps0: f64,
}

impl BallConfig {
    pub fn new(eps: f64, delta: f64, eta: Option<f64>, eps0: f64) -> Result<BallConfig> {
        if !(0.0 < delta && delta < eps && eps < eps0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < delta < eps < eps0, got delta={delta}, eps={eps}, eps0={eps0}"
            )));
        }
        if let Some(eta) = eta {
            if !(eta > 0.0 && eta <= delta) {
                return Err(Error::InvalidConfig(format!("need 0 < eta <= delta, got eta={eta}")));
            }
        }
        Ok(BallConfig { eps, delta, eta, eps0 })
    }

    /// `delta` from [`delta_heuristic`], `eps0 = 2 eps`, no `eta`.
    pub fn for_germ(germ: &MapGerm, eps: f64) -> Result<BallConfig> {
        BallConfig::new(eps, delta_heuristic(germ, eps), None, 2.0 * eps)
    }

    /// `eta` if given, else `delta`.
    pub fn eta_or_delta(&self) -> f64 {
        self.eta.unwrap_or(self.delta)
    }
}

/// `eps^2 / 10`, except for the bump germ where the sphere through the
/// intersection circle has `r^2 = 4 - eps^2`, so `g = e^{-1/(4 - r^2)}` there.
pub fn delta_heuristic(germ: &MapGerm, eps: f64) -> f64 {
    match germ.family() {
        Some(Family::Psi { .. }) => {
            let r2 = 4.0 - eps * eps;
            (-1.0 / (4.0 - r2)).exp()
        }
        _ => eps * eps / 10.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Random,
    Grid,
}

/// Seeding budget for the critical-set sampler.
///
/// `refine` seeds are pushed onto the critical set by Gauss-Newton; `scan`
/// points are only tested in place, which is what finds full-dimensional
/// critical regions such as the flat part of a bump germ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampler {
    pub kind: SamplerKind,
    pub refine: usize,
    pub scan: usize,
    pub seed: u64,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for Sampler {
    fn default() -> Self {
        Sampler { kind: SamplerKind::Random, refine: 4000, scan: 60000, seed: 0, exec: Exec::Parallel }
    }
}

/// `k` minus the numerical rank of `Df(x)` with unit-normalised rows.
///
/// Normalising rows makes the defect independent of positive rescaling of
/// components, which matters for flat germs whose rows differ by hundreds of
/// orders of magnitude.
pub fn rank_defect(germ: &MapGerm, x: &[f64], tol: f64) -> Result<usize> {
    let j = germ.jacobian(x, false)?;
    Ok(defect_of(&j, tol))
}

pub(crate) fn defect_of(j: &DMatrix<f64>, tol: f64) -> usize {
    let rows = j.nrows();
    rows - linalg::numerical_rank(&linalg::normalize_rows(j), tol, RANK_FLOOR).min(rows)
}

/// All increasing `k`-subsets of `0..n`.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Maximal minors of a `k x n` matrix, in [`combinations`] order.
pub(crate) fn maximal_minors(m: &DMatrix<f64>) -> Vec<f64> {
    let k = m.nrows();
    combinations(m.ncols(), k).iter().map(|cols| m.select_columns(cols).determinant()).collect()
}

/// Maximal minors of `Df(x)` (the gradient when `k = 1`), divided by `scale`.
pub fn minor_residual(germ: &MapGerm, x: &[f64], scale: f64) -> Option<Vec<f64>> {
    let j = germ.jacobian(x, true).ok()?;
    let raw = if germ.k() == 1 { j.iter().copied().collect() } else { maximal_minors(&j) };
    Some(raw.into_iter().map(|m| m / scale).collect())
}

/// Product of the row norms of `Df(x)`: the size of the maximal minors when
/// the rows are orthogonal.
fn minor_scale(germ: &MapGerm, x: &[f64]) -> Option<f64> {
    let j = germ.jacobian(x, true).ok()?;
    Some((0..j.nrows()).map(|i| linalg::row_norm(&j, i)).product())
}

pub fn fd_system<F>(res: F, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let r = res(x)?;
    let h = 1e-7 * (1.0 + linalg::norm(x));
    let j = linalg::fd_jacobian(&res, x, h)?;
    Some((DVector::from_vec(r), j))
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let nv = linalg::norm(&v);
        if nv > 1e-12 {
            return linalg::scale(&v, 1.0 / nv);
        }
    }
}

/// Point with uniform direction and radius uniform in `[0, eps]`, which
/// favours the neighbourhood of the origin.
pub(crate) fn radial_seed<R: Rng>(rng: &mut R, n: usize, eps: f64) -> Vec<f64> {
    let r = eps * rng.random::<f64>();
    linalg::scale(&random_unit(rng, n), r)
}

/// Point uniformly distributed in the ball `B_eps`.
pub(crate) fn ball_seed<R: Rng>(rng: &mut R, n: usize, eps: f64) -> Vec<f64> {
    let r = eps * rng.random::<f64>().powf(1.0 / n as f64);
    linalg::scale(&random_unit(rng, n), r)
}

fn grid_points(n: usize, eps: f64, count: usize) -> Vec<Vec<f64>> {
    let m = ((count.max(1) as f64).powf(1.0 / n as f64).ceil() as usize).max(2);
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = idx.iter().map(|&i| -eps + 2.0 * eps * (i as f64 + 0.5) / m as f64).collect();
        if linalg::norm(&x) <= eps {
            out.push(x);
        }
        let mut d = 0;
        while d < n {
            idx[d] += 1;
            if idx[d] < m {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == n {
            return out;
        }
    }
}

/// Gauss-Newton on the maximal minors from `x0`; `Some` only for accepted
/// critical points inside the ball.
///
/// The minors are divided by their size at the seed, so flat germs start
/// from an O(1) residual instead of one already below tolerance. The search
/// stays on the sphere through the seed: critical sets through the origin
/// would otherwise attract every run to 0.
pub fn refine_critical(germ: &MapGerm, x0: &[f64], eps: f64) -> Option<Vec<f64>> {
    let scale = minor_scale(germ, x0)?;
    if scale < RANK_FLOOR {
        return accept_critical(germ, x0, eps).then(|| x0.to_vec());
    }
    let r0 = linalg::norm(x0);
    let res = |x: &[f64]| {
        let mut r = minor_residual(germ, x, scale)?;
        r.push((linalg::dot(x, x) - r0 * r0) / (r0 * r0));
        Some(r)
    };
    // The minor residual only drives the iteration; acceptance is the rank
    // test itself, since minors of high-degree germs vanish to high order and
    // stall Gauss-Newton long after the rank has numerically dropped.
    let out = linalg::gauss_newton(|x| fd_system(res, x), x0, GnOptions::default())?;
    if accept_critical(germ, &out.x, eps) {
        return Some(out.x);
    }
    // Strata where a whole row of `Df` vanishes are invisible to the
    // normalised rank test at nearby points, and iterates approach them only
    // to rounding or stall short of them. Retry with small coordinates set to
    // exactly zero; a snapped point is returned only if it is itself critical.
    SNAP.iter().find_map(|&cut| {
        let snapped = snap_to_zero(&out.x, cut);
        (snapped != out.x && accept_critical(germ, &snapped, eps)).then_some(snapped)
    })
}

fn snap_to_zero(x: &[f64], rel: f64) -> Vec<f64> {
    let cut = rel * linalg::norm(x);
    x.iter().map(|&v| if v.abs() <= cut { 0.0 } else { v }).collect()
}

/// Inside the ball with a rank defect of at least 1.
fn accept_critical(germ: &MapGerm, x: &[f64], eps: f64) -> bool {
    linalg::norm(x) <= eps * (1.0 + 1e-12)
        && germ.jacobian(x, true).map(|j| defect_of(&j, RANK_TOL) >= 1).unwrap_or(false)
}

/// Counts from one sampling run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingMeta {
    pub seed: u64,
    pub refine_seeds: usize,
    pub scan_points: usize,
    pub accepted: usize,
    pub rejected: usize,
}

/// Critical points in `B_eps`, in deterministic seed order.
pub fn sample_critical_set(germ: &MapGerm, cfg: &BallConfig, sampler: &Sampler) -> Vec<Vec<f64>> {
    sample_critical_with_meta(germ, cfg, sampler).0
}

pub fn sample_critical_with_meta(germ: &MapGerm, cfg: &BallConfig, sampler: &Sampler) -> (Vec<Vec<f64>>, SamplingMeta) {
    let (n, eps) = (germ.n(), cfg.eps);
    let (refine_seeds, scan_points): (Vec<Vec<f64>>, Vec<Vec<f64>>) = match sampler.kind {
        SamplerKind::Random => {
            let refine =
                (0..sampler.refine).map(|i| radial_seed(&mut par::task_rng(sampler.seed, i as u64), n, eps)).collect();
            let scan = (0..sampler.scan)
                .map(|i| {
                    let stream = (sampler.refine + i) as u64;
                    ball_seed(&mut par::task_rng(sampler.seed, stream), n, eps)
                })
                .collect();
            (refine, scan)
        }
        SamplerKind::Grid => {
            let scan = grid_points(n, eps, sampler.scan.max(sampler.refine));
            let stride = (scan.len() / sampler.refine.max(1)).max(1);
            let refine = scan.iter().step_by(stride).cloned().collect();
            (refine, scan)
        }
    };
    let refined = par::map_slice(sampler.exec, &refine_seeds, |x0| refine_critical(germ, x0, eps));
    let scanned = par::map_slice(sampler.exec, &scan_points, |x| accept_critical(germ, x, eps).then(|| x.clone()));
    let total = refined.len() + scanned.len();
    let points: Vec<Vec<f64>> = refined.into_iter().chain(scanned).flatten().collect();
    let meta = SamplingMeta {
        seed: sampler.seed,
        refine_seeds: refine_seeds.len(),
        scan_points: scan_points.len(),
        accepted: points.len(),
        rejected: total - points.len(),
    };
    (points, meta)
}

/// A discriminant sample `y = f(x)` with its critical preimage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscPoint {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

/// Closed-form discriminant pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Branch {
    /// `t -> (a t^p, b t^q)`, `t` in `[-t_max, t_max]`.
    Power { a: f64, b: f64, p: u32, q: u32, t_max: f64 },
    /// `t -> t * dir`, `t` in `[t_min, t_max]`.
    Segment { dir: Vec<f64>, t_min: f64, t_max: f64 },
    /// `t -> (t, t^2/2)`, `|t| <= t_max`.
    Parabola { t_max: f64 },
    /// `s -> (e^{-1/(s(2-s))}, e^{-1/(s(4-s))})`, `s` in `(0, 2)`.
    PsiCurve,
    /// The isolated value 0.
    Origin { k: usize },
    /// Ordered samples of a pulled-back branch.
    Polyline { label: String, points: Vec<Vec<f64>> },
}

/// The psi curve at parameter `s`.
pub fn psi_curve(s: f64) -> [f64; 2] {
    let u = if s > 0.0 && s < 2.0 { (-1.0 / (s * (2.0 - s))).exp() } else { 0.0 };
    let v = if s > 0.0 && s < 4.0 { (-1.0 / (s * (4.0 - s))).exp() } else { 0.0 };
    [u, v]
}

impl Branch {
    pub fn label(&self) -> String {
        match self {
            Branch::Power { a, b, .. } => format!("power({a},{b})"),
            Branch::Segment { dir, .. } => {
                format!("segment({})", dir.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
            }
            Branch::Parabola { .. } => "parabola".into(),
            Branch::PsiCurve => "psi_curve".into(),
            Branch::Origin { .. } => "origin".into(),
            Branch::Polyline { label, .. } => label.clone(),
        }
    }

    /// Parameter interval.
    pub fn domain(&self) -> (f64, f64) {
        match self {
            Branch::Power { t_max, .. } | Branch::Parabola { t_max } => (-t_max, *t_max),
            Branch::Segment { t_min, t_max, .. } => (*t_min, *t_max),
            Branch::PsiCurve => (0.0, 2.0),
            Branch::Origin { .. } => (0.0, 0.0),
            Branch::Polyline { points, .. } => (0.0, points.len().saturating_sub(1) as f64),
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self {
            Branch::Power { a, b, p, q, .. } => vec![a * t.powi(*p as i32), b * t.powi(*q as i32)],
            Branch::Segment { dir, .. } => linalg::scale(dir, t),
            Branch::Parabola { .. } => vec![t, t * t / 2.0],
            Branch::PsiCurve => psi_curve(t).to_vec(),
            Branch::Origin { k } => vec![0.0; *k],
            Branch::Polyline { points, .. } => {
                let last = points.len() - 1;
                let t = t.clamp(0.0, last as f64);
                let i = (t.floor() as usize).min(last.saturating_sub(1));
                if last == 0 {
                    return points[0].clone();
                }
                let w = t - i as f64;
                points[i].iter().zip(&points[i + 1]).map(|(a, b)| a + w * (b - a)).collect()
            }
        }
    }

    /// Distance from `y` to the branch: dense scan then golden-section
    /// refinement (exact segment distances for polylines).
    pub fn distance(&self, y: &[f64]) -> (f64, f64) {
        match self {
            Branch::Origin { .. } => (0.0, linalg::norm(y)),
            Branch::Polyline { points, .. } => polyline_distance(points, y),
            _ => {
                let (lo, hi) = self.domain();
                let m = 4000;
                let at = |t: f64| linalg::dist(&self.eval(t), y);
                let mut best = (lo, at(lo));
                let mut best_i = 0;
                for i in 1..=m {
                    let t = lo + (hi - lo) * i as f64 / m as f64;
                    let d = at(t);
                    if d < best.1 {
                        best = (t, d);
                        best_i = i;
                    }
                }
                let h = (hi - lo) / m as f64;
                let a = lo + h * (best_i as f64 - 1.0).max(0.0);
                let b = (lo + h * (best_i as f64 + 1.0)).min(hi);
                let (t, d) = golden_min(at, a, b);
                if d < best.1 {
                    (t, d)
                } else {
                    best
                }
            }
        }
    }

    /// Points along the branch, evenly spaced in arc length, restricted to
    /// the closed ball of radius `radius`.
    pub fn discretize_in_ball(&self, radius: f64, count: usize) -> Vec<Vec<f64>> {
        if let Branch::Origin { k } = self {
            return vec![vec![0.0; *k]];
        }
        let dense: Vec<Vec<f64>> = match self {
            Branch::Polyline { points, .. } => densify(points, 50),
            _ => {
                let (lo, hi) = self.domain();
                let m = 200_000;
                (0..=m).map(|i| self.eval(lo + (hi - lo) * i as f64 / m as f64)).collect()
            }
        };
        let inside: Vec<&Vec<f64>> = dense.iter().filter(|p| linalg::norm(p) <= radius).collect();
        if inside.is_empty() {
            return Vec::new();
        }
        let mut arc = vec![0.0];
        for w in inside.windows(2) {
            // Jumps across the ball boundary do not count as arc length.
            let d = linalg::dist(w[0], w[1]);
            let step = if d > radius * 0.05 { 0.0 } else { d };
            arc.push(arc.last().unwrap() + step);
        }
        let total = *arc.last().unwrap();
        if total == 0.0 {
            return vec![inside[0].clone()];
        }
        let mut out = Vec::with_capacity(count);
        let mut j = 0;
        for i in 0..count {
            let target = total * i as f64 / (count - 1).max(1) as f64;
            while j + 1 < arc.len() && arc[j + 1] < target {
                j += 1;
            }
            out.push(inside[j].clone());
        }
        out
    }
}

fn densify(points: &[Vec<f64>], per: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        for i in 0..per {
            let t = i as f64 / per as f64;
            out.push(w[0].iter().zip(&w[1]).map(|(a, b)| a + t * (b - a)).collect());
        }
    }
    if let Some(last) = points.last() {
        out.push(last.clone());
    }
    out
}

fn polyline_distance(points: &[Vec<f64>], y: &[f64]) -> (f64, f64) {
    if points.len() == 1 {
        return (0.0, linalg::dist(&points[0], y));
    }
    let mut best = (0.0, f64::INFINITY);
    for (i, w) in points.windows(2).enumerate() {
        let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        let yv: Vec<f64> = y.iter().zip(&w[0]).map(|(b, a)| b - a).collect();
        let dd = linalg::dot(&d, &d);
        let t = if dd > 0.0 { (linalg::dot(&yv, &d) / dd).clamp(0.0, 1.0) } else { 0.0 };
        let p: Vec<f64> = w[0].iter().zip(&d).map(|(a, v)| a + t * v).collect();
        let dist = linalg::dist(&p, y);
        if dist < best.1 {
            best = (i as f64 + t, dist);
        }
    }
    best
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Sampled discriminant plus any closed-form branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantModel {
    pub k: usize,
    pub eps: f64,
    pub delta: f64,
    pub points: Vec<DiscPoint>,
    pub oracle: Option<Vec<Branch>>,
    pub meta: SamplingMeta,
}

impl DiscriminantModel {
    /// Unit directions of discriminant points (samples and oracle) inside
    /// `B_radius`, skipping values within `floor` of 0.
    pub fn directions(&self, radius: f64, floor: f64) -> Vec<Vec<f64>> {
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        let mut push = |y: &[f64]| {
            let n = linalg::norm(y);
            if n > floor && n <= radius {
                dirs.push(linalg::scale(y, 1.0 / n));
            }
        };
        for p in &self.points {
            push(&p.y);
        }
        if let Some(branches) = &self.oracle {
            for b in branches {
                for y in b.discretize_in_ball(radius, 400) {
                    push(&y);
                }
            }
        }
        dedup_directions(dirs, 1e-4)
    }
}

impl DiscriminantModel {
    /// Distance from `y` to the sampled and closed-form discriminant.
    pub fn distance_to(&self, y: &[f64]) -> f64 {
        let sampled = self.points.iter().map(|p| linalg::dist(&p.y, y)).fold(f64::INFINITY, f64::min);
        let closed = self.oracle.iter().flatten().map(|b| b.distance(y).1).fold(f64::INFINITY, f64::min);
        sampled.min(closed)
    }
}

fn dedup_directions(dirs: Vec<Vec<f64>>, res: f64) -> Vec<Vec<f64>> {
    let mut seen = BTreeSet::new();
    dirs.into_iter().filter(|d| seen.insert(grid_key(d, res))).collect()
}

fn grid_key(y: &[f64], res: f64) -> Vec<i64> {
    y.iter().map(|v| (v / res).round() as i64).collect()
}

/// Images of sampled critical points, deduplicated at `1e-4 delta`.
///
/// A second pass of `sampler.refine` seeds perturbs the critical points
/// already imaged into `B_delta \ {0}` and refines them again, densifying the
/// part of the critical set that feeds the target ball.
pub fn discriminant_sample(germ: &MapGerm, cfg: &BallConfig, sampler: &Sampler) -> DiscriminantModel {
    let (mut crit, mut meta) = sample_critical_with_meta(germ, cfg, sampler);
    let feeding: Vec<&Vec<f64>> = crit
        .iter()
        .filter(|x| germ.eval(x).is_ok_and(|y| (f64::MIN_POSITIVE..=cfg.delta).contains(&linalg::norm(&y))))
        .collect();
    if !feeding.is_empty() {
        let offset = (sampler.refine + sampler.scan) as u64;
        let spread = RESAMPLE_SPREAD * cfg.eps;
        let extra = par::map_indexed(sampler.exec, sampler.refine, |i| {
            let mut rng = par::task_rng(sampler.seed, offset + i as u64);
            let base = feeding[i % feeding.len()];
            let x0: Vec<f64> = base.iter().map(|v| v + spread * rng.sample::<f64, _>(StandardNormal)).collect();
            refine_critical(germ, &x0, cfg.eps)
        });
        meta.refine_seeds += extra.len();
        meta.rejected += extra.iter().filter(|x| x.is_none()).count();
        let found: Vec<Vec<f64>> = extra.into_iter().flatten().collect();
        meta.accepted += found.len();
        crit.extend(found);
    }
    let res = DEDUP * cfg.delta;
    let mut seen = BTreeSet::new();
    let mut points = Vec::new();
    for x in crit {
        if let Ok(y) = germ.eval(&x) {
            if seen.insert(grid_key(&y, res)) {
                points.push(DiscPoint { y, x });
            }
        }
    }
    DiscriminantModel {
        k: germ.k(),
        eps: cfg.eps,
        delta: cfg.delta,
        points,
        oracle: oracle_discriminant(germ, cfg.eps).ok(),
        meta,
    }
}

/// Closed-form discriminant branches for germs with a known family.
pub fn oracle_discriminant(germ: &MapGerm, eps: f64) -> Result<Vec<Branch>> {
    match germ.family() {
        Some(Family::Ldm { p, q, lambdas }) => Ok(ldm_branches(*p, *q, lambdas, eps)),
        Some(Family::Psi { .. }) => {
            Ok(vec![Branch::PsiCurve, Branch::Segment { dir: vec![0.0, 1.0], t_min: 0.0, t_max: (-0.25f64).exp() }])
        }
        Some(Family::Catalog(name)) => match name.as_str() {
            "ex6" => Ok(vec![Branch::Origin { k: 2 }]),
            "parabola" => Ok(vec![Branch::Parabola { t_max: std::f64::consts::SQRT_2 * eps }]),
            // Critical set {x = y = 0}, image the w-axis.
            "nondreg4" => Ok(vec![Branch::Segment { dir: vec![0.0, 0.0, 1.0], t_min: -eps, t_max: eps }]),
            "projection" | "first" => Ok(Vec::new()),
            _ => Err(Error::NoOracle),
        },
        Some(Family::Modified { base, homeo, forward, inverse }) => {
            let branches = oracle_discriminant(base, eps)?;
            Ok(branches.iter().map(|b| pull_back_branch(b, forward, inverse, homeo)).collect())
        }
        None => Err(Error::NoOracle),
    }
}

/// Discriminant of `(sum a_i x_i^p, sum b_i x_i^q)`. On a support `S` the
/// columns of `Df` are parallel iff `a_i x_i^{p-q} / b_i` is constant over
/// `S`, so each critical stratum is a line `x = c t` whose image is the power
/// curve `(A t^p, B t^q)`. Singletons give the `lambda_i` curves; larger
/// supports appear only for `p != q`, with one real root per coordinate for
/// odd `p - q` and two (or none) for even `p - q`.
fn ldm_branches(p: u32, q: u32, lambdas: &[(f64, f64)], eps: f64) -> Vec<Branch> {
    let n = lambdas.len();
    let mut out = Vec::new();
    let mut push = |c: &[f64]| {
        let (a, b) = c
            .iter()
            .zip(lambdas)
            .fold((0.0, 0.0), |(a, b), (ci, l)| (a + l.0 * ci.powi(p as i32), b + l.1 * ci.powi(q as i32)));
        out.push(Branch::Power { a, b, p, q, t_max: eps / linalg::norm(c) });
    };
    for i in 0..n {
        let mut c = vec![0.0; n];
        c[i] = 1.0;
        push(&c);
    }
    if p == q || n > 12 {
        return out;
    }
    let d = p as i32 - q as i32;
    let even = d % 2 == 0;
    for size in 2..=n {
        for support in combinations(n, size) {
            if support.iter().any(|&i| lambdas[i].0 == 0.0 || lambdas[i].1 == 0.0) {
                continue;
            }
            let (a0, b0) = lambdas[support[0]];
            let mut roots = Vec::with_capacity(size - 1);
            for &i in &support[1..] {
                let ratio = (a0 * lambdas[i].1) / (b0 * lambdas[i].0);
                if even && ratio <= 0.0 {
                    break;
                }
                roots.push(ratio.signum() * ratio.abs().powf(1.0 / d as f64));
            }
            if roots.len() != size - 1 {
                continue;
            }
            let signs = if even { 1usize << (size - 1) } else { 1 };
            for mask in 0..signs {
                let mut c = vec![0.0; n];
                c[support[0]] = 1.0;
                for (j, (&i, r)) in support[1..].iter().zip(&roots).enumerate() {
                    c[i] = if mask >> j & 1 == 1 { -r } else { *r };
                }
                push(&c);
            }
        }
    }
    out
}

fn pull_back_branch(b: &Branch, forward: &[crate::expr::Expr], inverse: &[crate::expr::Expr], homeo: &str) -> Branch {
    let label = format!("{}@{homeo}", b.label());
    let raw: Vec<Vec<f64>> = match b {
        Branch::Origin { k } => vec![vec![0.0; *k]],
        Branch::Polyline { points, .. } => points.clone(),
        _ => {
            let (lo, hi) = b.domain();
            let m = 8000;
            (0..=m).map(|i| b.eval(lo + (hi - lo) * i as f64 / m as f64)).collect()
        }
    };
    let points = raw.iter().filter_map(|y| conic::pull_back(forward, inverse, y).ok()).collect();
    Branch::Polyline { label, points }
}

/// Distances between samples and the oracle inside `B_delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    /// Largest distance from a sample in `B_delta` to the nearest branch.
    pub max_distance: f64,
    /// Fraction of discretised oracle points in `B_delta` with a sample
    /// within `COVER * delta`.
    pub coverage: f64,
    pub samples_in_ball: usize,
    pub oracle_points: usize,
    pub worst_sample: Option<Vec<f64>>,
}

pub fn compare_to_oracle(model: &DiscriminantModel) -> Result<OracleComparison> {
    let branches = model.oracle.as_ref().ok_or(Error::NoOracle)?;
    let delta = model.delta;
    let inside: Vec<&Vec<f64>> = model.points.iter().map(|p| &p.y).filter(|y| linalg::norm(y) <= delta).collect();
    let dists = par::map_slice(Exec::Parallel, &inside, |y| {
        branches.iter().map(|b| b.distance(y).1).fold(f64::INFINITY, f64::min)
    });
    let (mut max_distance, mut worst_sample) = (0.0, None);
    for (d, y) in dists.iter().zip(&inside) {
        if *d > max_distance {
            max_distance = *d;
            worst_sample = Some((*y).clone());
        }
    }
    let oracle_pts: Vec<Vec<f64>> = branches.iter().flat_map(|b| b.discretize_in_ball(delta, 200)).collect();
    let radius = COVER * delta;
    let covered = oracle_pts.iter().filter(|o| inside.iter().any(|y| linalg::dist(o, y) <= radius)).count();
    let coverage = if oracle_pts.is_empty() { 1.0 } else { covered as f64 / oracle_pts.len() as f64 };
    Ok(OracleComparison {
        max_distance,
        coverage,
        samples_in_ball: inside.len(),
        oracle_points: oracle_pts.len(),
        worst_sample,
    })
}

/// Discriminant plus the images of critical points of `f` restricted to `S_eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedDiscriminant {
    pub interior: DiscriminantModel,
    /// Boundary-critical points that are regular points of `f`.
    pub boundary: Vec<DiscPoint>,
}

impl ExtendedDiscriminant {
    /// Boundary contributions with `|y| <= radius`.
    pub fn boundary_in_ball(&self, radius: f64) -> Vec<&DiscPoint> {
        self.boundary.iter().filter(|p| linalg::norm(&p.y) <= radius).collect()
    }
}

/// Residual for critical points of `f|_{S_eps}`: sphere equation and the
/// maximal minors of `[Df; x^T]` with normalised rows.
fn boundary_residual(germ: &MapGerm, x: &[f64], eps: f64) -> Option<Vec<f64>> {
    let j = germ.jacobian(x, true).ok()?;
    let nx = linalg::norm(x);
    if nx == 0.0 {
        return None;
    }
    let mut m = DMatrix::zeros(germ.k() + 1, germ.n());
    m.view_mut((0, 0), (germ.k(), germ.n())).copy_from(&linalg::normalize_rows(&j));
    for (c, v) in x.iter().enumerate() {
        m[(germ.k(), c)] = v / nx;
    }
    let mut r = vec![(nx * nx - eps * eps) / (eps * eps)];
    r.extend(maximal_minors(&m));
    Some(r)
}

fn boundary_rank_deficient(germ: &MapGerm, x: &[f64]) -> bool {
    let Ok(j) = germ.jacobian(x, true) else {
        return false;
    };
    let nx = linalg::norm(x);
    let mut m = DMatrix::zeros(germ.k() + 1, germ.n());
    m.view_mut((0, 0), (germ.k(), germ.n())).copy_from(&j);
    for (c, v) in x.iter().enumerate() {
        m[(germ.k(), c)] = v / nx;
    }
    defect_of(&m, RANK_TOL) >= 1
}

pub fn boundary_critical(germ: &MapGerm, cfg: &BallConfig, sampler: &Sampler) -> ExtendedDiscriminant {
    ExtendedDiscriminant {
        interior: discriminant_sample(germ, cfg, sampler),
        boundary: boundary_points(germ, cfg, sampler),
    }
}

/// Critical points of `f|_{S_eps}` that are regular for `f`, with their
/// images, from `sampler.refine` seeds on the sphere.
pub fn boundary_points(germ: &MapGerm, cfg: &BallConfig, sampler: &Sampler) -> Vec<DiscPoint> {
    let (n, k, eps) = (germ.n(), germ.k(), cfg.eps);
    let mut boundary = Vec::new();
    if n <= k {
        return boundary;
    }
    let found = par::map_indexed(sampler.exec, sampler.refine, |i| {
        let mut rng = par::task_rng(sampler.seed ^ 0xB0_0B, i as u64);
        let x0 = linalg::scale(&random_unit(&mut rng, n), eps);
        let res = |x: &[f64]| boundary_residual(germ, x, eps);
        let out = linalg::gauss_newton(|x| fd_system(res, x), &x0, GnOptions::default())?;
        let ok = out.residual < REFINE_TOL
            && boundary_rank_deficient(germ, &out.x)
            && rank_defect(germ, &out.x, RANK_TOL).ok()? == 0;
        ok.then_some(out.x)
    });
    let res = DEDUP * cfg.delta;
    let mut seen = BTreeSet::new();
    for x in found.into_iter().flatten() {
        if let Ok(y) = germ.eval(&x) {
            if seen.insert(grid_key(&y, res)) {
                boundary.push(DiscPoint { y, x });
            }
        }
    }
    boundary
}

/// Numerical recovery of the tangency radius for the bump germ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiRadiusReport {
    pub eps: f64,
    /// `|x - 2e1|^2` over recovered points of `S_eps` meeting `S(e1; 1)`.
    pub r2_min: f64,
    pub r2_max: f64,
    pub r2_expected: f64,
    pub max_abs_error: f64,
    pub points: usize,
    /// `e^{-1/(4 - r^2)}`, the value of `g` on that sphere.
    pub delta_derived: f64,
    /// `e^{-1/(r(4 - r))}`, the exponent as printed in the source text.
    pub delta_printed: f64,
    pub exponent_discrepancy: bool,
    pub note: String,
}

/// Solves `|x| = eps`, `|x - e1| = 1` from random seeds and measures the
/// distance of the solutions from `2 e1`.
pub fn psi_radius_report(n: usize, eps: f64, seeds: usize, seed: u64) -> Result<PsiRadiusReport> {
    if n < 2 || !(eps > 0.0 && eps < 2.0) {
        return Err(Error::InvalidConfig(format!("need n >= 2 and 0 < eps < 2, got n={n}, eps={eps}")));
    }
    let sys = |x: &[f64]| {
        let mut c1 = x.to_vec();
        c1[0] -= 1.0;
        let r = DVector::from_vec(vec![linalg::dot(x, x) - eps * eps, linalg::dot(&c1, &c1) - 1.0]);
        let mut j = DMatrix::zeros(2, n);
        for i in 0..n {
            j[(0, i)] = 2.0 * x[i];
            j[(1, i)] = 2.0 * c1[i];
        }
        Some((r, j))
    };
    let opts = GnOptions { max_iter: 60, tol: 1e-14, rcond: 1e-14 };
    let mut r2s = Vec::new();
    for i in 0..seeds {
        let mut rng = par::task_rng(seed, i as u64);
        let x0 = linalg::scale(&random_unit(&mut rng, n), eps);
        if let Some(out) = linalg::gauss_newton(sys, &x0, opts) {
            if out.residual < 1e-12 {
                let mut c2 = out.x.clone();
                c2[0] -= 2.0;
                r2s.push(linalg::dot(&c2, &c2));
            }
        }
    }
    if r2s.is_empty() {
        return Err(Error::Domain("no intersection points recovered".into()));
    }
    let r2_expected = 4.0 - eps * eps;
    let r2_min = r2s.iter().copied().fold(f64::INFINITY, f64::min);
    let r2_max = r2s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_abs_error = r2s.iter().map(|r| (r - r2_expected).abs()).fold(0.0, f64::max);
    let r = r2_max.sqrt();
    let delta_derived = (-1.0 / (4.0 - r2_max)).exp();
    let delta_printed = (-1.0 / (r * (4.0 - r))).exp();
    let exponent_discrepancy = (delta_derived - delta_printed).abs() > 1e-12 * delta_derived.max(1e-300);
    Ok(PsiRadiusReport {
        eps,
        r2_min,
        r2_max,
        r2_expected,
        max_abs_error,
        points: r2s.len(),
        delta_derived,
        delta_printed,
        exponent_discrepancy,
        note: "g equals e^{-1/beta} on S(2e1; r) with beta = 4 - r^2 = eps^2; the printed exponent \
               1/(r(4-r)) does not match and is not used"
            .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::germ::{builtin_catalog, builtin_ldm, builtin_psi};

    const LAMBDA: [(f64, f64); 3] = [(2.0, 1.0), (-1.0, 1.0), (0.0, -1.0)];

    fn small() -> Sampler {
        Sampler { refine: 300, scan: 300, ..Sampler::default() }
    }

    #[test]
    fn combinations_are_lexicographic() {
        assert_eq!(combinations(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(combinations(4, 3).len(), 4);
        assert_eq!(combinations(2, 3).len(), 0);
    }

    #[test]
    fn ldm_defects() {
        let g = builtin_ldm(2, 2, &LAMBDA).unwrap();
        assert_eq!(rank_defect(&g, &[1.0, 0.0, 0.0], RANK_TOL).unwrap(), 1);
        assert_eq!(rank_defect(&g, &[1.0, 1.0, 1.0], RANK_TOL).unwrap(), 0);
        // Brute-force minor oracle at (1,1,1): rows (4,-2,0), (2,2,-2).
        let m = [4.0 * 2.0 - (-2.0) * 2.0, 4.0 * -2.0 - 0.0, -2.0 * -2.0 - 0.0];
        assert!(m.iter().any(|v: &f64| v.abs() > 1.0));
        assert_eq!(rank_defect(&g, &[0.0; 3], RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn psi_far_region_has_full_defect() {
        let g = builtin_psi(3).unwrap();
        for x in [[4.5, 0.0, 0.0], [2.0, 2.0, 0.3], [0.0, -1.0, 3.0]] {
            assert_eq!(rank_defect(&g, &x, RANK_TOL).unwrap(), 2);
        }
    }

    #[test]
    fn ldm_critical_points_lie_on_axes() {
        let g = builtin_ldm(2, 2, &LAMBDA).unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let pts = sample_critical_set(&g, &cfg, &small());
        assert!(pts.len() > 200);
        for x in &pts {
            let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
            a.sort_by(|p, q| q.total_cmp(p));
            assert!(a[1] < 1e-6, "{x:?}");
        }
    }

    #[test]
    fn mixed_exponent_samples_match_oracle() {
        for (p, q) in [(2, 3), (3, 2), (2, 4), (3, 5)] {
            let g = builtin_ldm(p, q, &LAMBDA).unwrap();
            let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
            let d = discriminant_sample(&g, &cfg, &Sampler::default());
            let cmp = compare_to_oracle(&d).unwrap();
            assert!(cmp.max_distance < 1e-5 * cfg.delta, "({p},{q}) {cmp:?}");
            assert!(cmp.coverage >= 0.95, "({p},{q}) {}", cmp.coverage);
        }
    }

    #[test]
    fn pair_branch_is_critical_image() {
        // (2,3): x2 = c x1 with 1/c = a1 b2 / (a2 b1) = -2. Columns at
        // (0.2, -0.1, 0) are (0.8, 0.12) and (0.2, 0.03); image (0.07, 0.007).
        let g = builtin_ldm(2, 3, &LAMBDA).unwrap();
        let x = [0.2, -0.1, 0.0];
        assert_eq!(rank_defect(&g, &x, RANK_TOL).unwrap(), 1);
        let y = g.eval(&x).unwrap();
        assert!((y[0] - 0.07).abs() < 1e-15 && (y[1] - 0.007).abs() < 1e-15);
        let branches = oracle_discriminant(&g, 1.0).unwrap();
        assert_eq!(branches.len(), 4);
        assert!(branches.iter().any(|b| b.distance(&y).1 < 1e-12));
    }

    #[test]
    fn ex6_critical_points_satisfy_minors() {
        let g = builtin_catalog("ex6").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let pts = sample_critical_set(&g, &cfg, &small());
        assert!(!pts.is_empty());
        for x in &pts {
            assert!(3.0 * x[1] * x[1] <= 1e-6 && x[0] * x[0] <= 1e-6, "{x:?}");
        }
    }

    #[test]
    fn projection_has_no_critical_points() {
        let g = builtin_catalog("projection").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        assert!(sample_critical_set(&g, &cfg, &small()).is_empty());
    }

    #[test]
    fn sampling_is_deterministic_across_policies() {
        let g = builtin_catalog("parabola").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let mut s = small();
        let a = sample_critical_set(&g, &cfg, &s);
        s.exec = Exec::Sequential;
        assert_eq!(a, sample_critical_set(&g, &cfg, &s));
    }

    #[test]
    fn parabola_discriminant_on_parabola() {
        let g = builtin_catalog("parabola").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let d = discriminant_sample(&g, &cfg, &small());
        assert!(!d.points.is_empty());
        for p in &d.points {
            assert!((p.y[1] - p.y[0] * p.y[0] / 2.0).abs() < 1e-8);
            assert_eq!(g.eval(&p.x).unwrap(), p.y);
        }
    }

    #[test]
    fn psi_curve_values() {
        let c = psi_curve(1.0);
        assert!((c[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((c[1] - (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        // At s = 0.05 the curve is still at (3.5e-5, 6.3e-3); it is below
        // 1e-8 in both coordinates from s = 0.01 on.
        let c05 = psi_curve(0.05);
        assert!((c05[0] - (-1.0 / (0.05 * 1.95f64)).exp()).abs() < 1e-18);
        assert!(c05[0] > 1e-5 && c05[1] > 1e-3);
        let near0 = psi_curve(0.01);
        assert!(near0[0] < 1e-8 && near0[1] < 1e-8);
        let near2 = psi_curve(2.0 - 1e-6);
        assert!(linalg::dist(&near2, &[0.0, (-0.25f64).exp()]) < 1e-4);
    }

    #[test]
    fn psi_curve_is_image_of_axis() {
        let g = builtin_psi(3).unwrap();
        for s in [0.1, 0.5, 1.0, 1.7] {
            let y = g.eval(&[s, 0.0, 0.0]).unwrap();
            let c = psi_curve(s);
            assert!((y[0] - c[0]).abs() < 1e-15 && (y[1] - c[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_sample_has_zero_coverage() {
        let g = builtin_ldm(2, 2, &LAMBDA).unwrap();
        let model = DiscriminantModel {
            k: 2,
            eps: 1.0,
            delta: 0.1,
            points: Vec::new(),
            oracle: oracle_discriminant(&g, 1.0).ok(),
            meta: SamplingMeta::default(),
        };
        assert_eq!(compare_to_oracle(&model).unwrap().coverage, 0.0);
    }

    #[test]
    fn no_oracle_for_custom_germ() {
        let g = crate::parser::parse("map 2 -> 1 { u = x1*x2; }").unwrap();
        assert_eq!(oracle_discriminant(&g, 1.0), Err(Error::NoOracle));
    }

    #[test]
    fn projection_boundary_is_unit_circle() {
        let g = builtin_catalog("projection").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let ext = boundary_critical(&g, &cfg, &small());
        assert!(ext.boundary.len() > 20);
        for p in &ext.boundary {
            assert!((linalg::norm(&p.y) - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn power_branch_distance() {
        let b = Branch::Power { a: 1.0, b: 1.0, p: 3, q: 2, t_max: 1.0 };
        let (t, d) = b.distance(&[0.125, 0.25]);
        assert!(d < 1e-12 && (t - 0.5).abs() < 1e-6);
    }

    #[test]
    fn radius_identity() {
        for eps in [0.1, 0.3, 0.5] {
            let r = psi_radius_report(3, eps, 16, 1).unwrap();
            assert!(r.max_abs_error <= 1e-8);
            assert!(r.exponent_discrepancy);
        }
    }
}
