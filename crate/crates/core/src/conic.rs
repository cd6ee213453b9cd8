//! Conic homeomorphisms `h` of `(R^k, 0)`, conic modifications
//! `f_h = h^{-1} o f`, linearization and d_h-regularity checks.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critical::{self, random_unit, BallConfig, DiscriminantModel};
use crate::error::{Error, Result};
use crate::expr::{Expr, Side};
use crate::germ::{Family, MapGerm, Smoothness};
use crate::linalg;
use crate::par;
use crate::parser::{self, HomeoSource};
use crate::regularity::{self, Exclusions, RegularityOptions, RegularityReport, Verdict};

/// Seam width for evaluating both sides of a piecewise inverse.
pub const SEAM: f64 = 1e-9;
/// Linearization passes when every ray fit residual is below this times `eta`.
pub const LINEARIZATION_TOL: f64 = 1e-4;
/// Pulled-back samples within this angle (radians) share a ray.
pub const CLUSTER_ANGLE: f64 = 0.1;

/// Where the round-trip identities of a homeomorphism are checked.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HomeoDomain {
    /// The closed ball `B_eta`.
    Ball,
    /// `[min, eta]^k`, for homeomorphisms of the positive quadrant whose
    /// values underflow below `min`.
    PositiveBox { min: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicHomeo {
    pub name: String,
    pub k: usize,
    pub forward: Vec<Expr>,
    pub inverse: Vec<Expr>,
    pub eta: f64,
    pub domain: HomeoDomain,
    /// Regularity of the paths `h(L_theta)`.
    pub forward_smoothness: Smoothness,
    /// Regularity of `h^{-1}` off the origin.
    pub inverse_smoothness: Smoothness,
    /// `h^{-1}` is a submersion off the origin.
    pub inverse_submersion: bool,
}

fn u() -> Expr {
    Expr::var(0)
}
fn v() -> Expr {
    Expr::var(1)
}

/// `sign(a) |a|^m`.
fn sgnpow(a: Expr, m: u32) -> Expr {
    if m % 2 == 1 {
        Expr::pow(a, m)
    } else {
        Expr::guard(a.clone(), Side::Closed, Expr::pow(a.clone(), m), Expr::neg(Expr::pow(a, m)))
    }
}

/// `sign(a) |a|^{1/m}`.
fn sgnroot(a: Expr, m: u32) -> Expr {
    if m % 2 == 1 {
        Expr::root(a, m)
    } else {
        Expr::guard(a.clone(), Side::Closed, Expr::root(a.clone(), m), Expr::neg(Expr::root(Expr::neg(a), m)))
    }
}

/// `c - sqrt(c^2 + 1/ln a)` for `a > 0`, else 0: inverse of
/// `s -> e^{1/(s(s - 2c))}` on `(0, c]`.
fn log_inverse(a: Expr, c: f64) -> Expr {
    Expr::guard(
        a.clone(),
        Side::Open,
        Expr::sub(Expr::c(c), Expr::sqrt(Expr::add(Expr::c(c * c), Expr::div(Expr::c(1.0), Expr::ln(a))))),
        Expr::c(0.0),
    )
}

/// Names accepted by [`catalog_homeo`]; `parity` takes `(p,q)`.
pub const HOMEO_CATALOG: &[&str] = &["identity", "cube", "inv_cube", "sqrt_sign", "parity(p,q)", "psi_exp"];

/// Catalog homeomorphisms; `parity(p,q)` (also `parity:p,q`) takes integers
/// `p, q >= 2`.
pub fn catalog_homeo(name: &str) -> Result<ConicHomeo> {
    let base = |name: &str, forward: Vec<Expr>, inverse: Vec<Expr>| ConicHomeo {
        name: name.to_string(),
        k: 2,
        forward,
        inverse,
        eta: 1.0,
        domain: HomeoDomain::Ball,
        forward_smoothness: Smoothness::Analytic,
        inverse_smoothness: Smoothness::Analytic,
        inverse_submersion: true,
    };
    let name = name.trim();
    if let Some(args) =
        name.strip_prefix("parity(").and_then(|r| r.strip_suffix(')')).or_else(|| name.strip_prefix("parity:"))
    {
        let (p, q) = parse_pair(args).ok_or_else(|| Error::UnknownName(name.to_string()))?;
        // h(u, v) = (u^{1/q}, v^{1/p}) with the sign split for even roots.
        let mut h = base(
            &format!("parity({p},{q})"),
            vec![sgnroot(u(), q), sgnroot(v(), p)],
            vec![sgnpow(u(), q), sgnpow(v(), p)],
        );
        h.inverse_smoothness = Smoothness::C(p.min(q) - 1);
        h.inverse_submersion = false;
        return Ok(h);
    }
    match name {
        "identity" => Ok(base("identity", vec![u(), v()], vec![u(), v()])),
        "cube" => {
            let mut h = base("cube", vec![u(), Expr::pow(v(), 3)], vec![u(), Expr::cbrt(v())]);
            h.inverse_smoothness = Smoothness::C(0);
            Ok(h)
        }
        "inv_cube" => {
            let mut h = base("inv_cube", vec![u(), Expr::cbrt(v())], vec![u(), Expr::pow(v(), 3)]);
            h.forward_smoothness = Smoothness::C(0);
            h.inverse_submersion = false;
            Ok(h)
        }
        "sqrt_sign" => {
            let mut h = base(
                "sqrt_sign",
                vec![sgnroot(u(), 2), Expr::div(v(), Expr::c(2.0))],
                vec![sgnpow(u(), 2), Expr::mul(Expr::c(2.0), v())],
            );
            h.forward_smoothness = Smoothness::C(0);
            h.inverse_smoothness = Smoothness::C(1);
            h.inverse_submersion = false;
            Ok(h)
        }
        "psi_exp" => {
            // h(u, v) = (e^{1/(u(u-2))}, e^{1/(v(v-4))}) = (bump(u(2-u)), bump(v(4-v))).
            let mut h = base(
                "psi_exp",
                vec![
                    Expr::bump(Expr::mul(u(), Expr::sub(Expr::c(2.0), u()))),
                    Expr::bump(Expr::mul(v(), Expr::sub(Expr::c(4.0), v()))),
                ],
                vec![log_inverse(u(), 1.0), log_inverse(v(), 2.0)],
            );
            h.domain = HomeoDomain::PositiveBox { min: 0.01 };
            h.forward_smoothness = Smoothness::Smooth;
            h.inverse_smoothness = Smoothness::C(1);
            Ok(h)
        }
        _ => Err(Error::UnknownName(name.to_string())),
    }
}

fn parse_pair(s: &str) -> Option<(u32, u32)> {
    let (a, b) = s.split_once(',')?;
    let (p, q) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (p >= 2 && q >= 2).then_some((p, q))
}

impl ConicHomeo {
    /// Homeomorphism from parsed DSL text; `eta` defaults to 1.
    pub fn from_source(name: &str, src: HomeoSource) -> Result<ConicHomeo> {
        if src.forward.len() != src.k || src.inverse.len() != src.k {
            return Err(Error::Arity(format!(
                "homeo of dimension {} needs {} forward and inverse components",
                src.k, src.k
            )));
        }
        let eta = src.eta.unwrap_or(1.0);
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {eta}")));
        }
        let zero = vec![0.0; src.k];
        for e in src.forward.iter().chain(&src.inverse) {
            let at0 = e.eval(&zero).map_err(Error::from)?;
            if at0.abs() > 1e-12 {
                return Err(Error::InvalidGerm(format!("homeo component is {at0} at the origin")));
            }
        }
        Ok(ConicHomeo {
            name: name.to_string(),
            k: src.k,
            forward_smoothness: parser::infer_smoothness(&src.forward),
            inverse_smoothness: parser::infer_smoothness(&src.inverse),
            inverse_submersion: true,
            forward: src.forward,
            inverse: src.inverse,
            eta,
            domain: HomeoDomain::Ball,
        })
    }

    /// Catalog name or homeo DSL text.
    pub fn resolve(spec: &str) -> Result<ConicHomeo> {
        if spec.trim_start().starts_with("homeo") {
            ConicHomeo::from_source("custom", parser::parse_homeo(spec)?)
        } else {
            catalog_homeo(spec)
        }
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.forward.iter().map(|e| e.eval(y).map_err(Error::from)).collect()
    }

    /// `h^{-1}(y)`, resolving seams by round-trip residual.
    pub fn invert(&self, y: &[f64]) -> Result<Vec<f64>> {
        pull_back(&self.forward, &self.inverse, y)
    }

    pub fn source(&self) -> HomeoSource {
        HomeoSource { k: self.k, forward: self.forward.clone(), inverse: self.inverse.clone(), eta: Some(self.eta) }
    }

    /// Random point of the domain, seeded per stream.
    pub fn sample_domain(&self, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = par::task_rng(seed, stream);
        match self.domain {
            HomeoDomain::Ball => {
                let r = self.eta * rng.random::<f64>().powf(1.0 / self.k as f64);
                linalg::scale(&random_unit(&mut rng, self.k), r)
            }
            HomeoDomain::PositiveBox { min } => {
                (0..self.k).map(|_| min + (self.eta - min) * rng.random::<f64>()).collect()
            }
        }
    }

    /// Largest round-trip error `max(|h^{-1}(h(z)) - z|, |h(h^{-1}(y)) - y|)`
    /// with `y = h(z)` over `count` domain samples.
    pub fn inverse_residual(&self, count: usize, seed: u64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..count {
            let z = self.sample_domain(seed, i as u64);
            let y = self.apply(&z)?;
            let z2 = self.invert(&y)?;
            let y2 = self.apply(&z2)?;
            worst = worst.max(linalg::dist(&z, &z2)).max(linalg::dist(&y, &y2));
        }
        Ok(worst)
    }
}

/// `h^{-1}(y)`; near a seam both branches are tried and the one with the
/// smaller round-trip residual `|h(h^{-1}(y)) - y|` is kept.
pub fn pull_back(forward: &[Expr], inverse: &[Expr], y: &[f64]) -> Result<Vec<f64>> {
    let eval_all = |exprs: &[Expr], p: &[f64], seam: f64| -> Result<Vec<f64>> {
        exprs.iter().map(|e| e.eval_across_seams(p, seam).map_err(Error::from)).collect()
    };
    let residual = |z: &[f64]| eval_all(forward, z, -1.0).map(|hy| linalg::dist(&hy, y));
    let plain = eval_all(inverse, y, -1.0);
    let flipped = eval_all(inverse, y, SEAM);
    match (plain, flipped) {
        (Ok(a), Ok(b)) if a != b => {
            let ra = residual(&a).unwrap_or(f64::INFINITY);
            let rb = residual(&b).unwrap_or(f64::INFINITY);
            Ok(if rb < ra { b } else { a })
        }
        (Ok(a), _) => Ok(a),
        (Err(_), Ok(b)) => Ok(b),
        (Err(e), Err(_)) => Err(e),
    }
}

fn weaker(a: Smoothness, b: Smoothness) -> Smoothness {
    let rank = |s: Smoothness| match s {
        Smoothness::Analytic => u32::MAX,
        Smoothness::Smooth => u32::MAX - 1,
        Smoothness::C(l) => l,
    };
    if rank(a) <= rank(b) {
        a
    } else {
        b
    }
}

/// The conic modification `f_h = h^{-1} o f`.
pub fn conic_modify(germ: &MapGerm, h: &ConicHomeo) -> Result<MapGerm> {
    if h.k != germ.k() {
        return Err(Error::Arity(format!("homeo acts on R^{}, germ maps to R^{}", h.k, germ.k())));
    }
    let comps: Vec<Expr> = germ.compose_outer(&h.inverse).iter().map(Expr::simplify).collect();
    let smooth = weaker(germ.smoothness(), parser::infer_smoothness(&comps));
    let family = Family::Modified {
        base: Box::new(germ.clone()),
        homeo: h.name.clone(),
        forward: h.forward.clone(),
        inverse: h.inverse.clone(),
    };
    MapGerm::new(germ.n(), germ.names().to_vec(), comps, smooth, Some(family))
}

/// [`conic_modify`] after checking at `samples` points of `B_eps` that the
/// image of the germ lies in the domain of `h^{-1}`.
pub fn conic_modify_checked(germ: &MapGerm, h: &ConicHomeo, eps: f64, samples: usize, seed: u64) -> Result<MapGerm> {
    let fh = conic_modify(germ, h)?;
    for i in 0..samples {
        let mut rng = par::task_rng(seed, i as u64);
        let r = eps * rng.random::<f64>().powf(1.0 / germ.n() as f64);
        let x = linalg::scale(&random_unit(&mut rng, germ.n()), r);
        let y = germ.eval(&x)?;
        h.invert(&y).map_err(|e| Error::Domain(format!("f({x:?}) = {y:?} is outside the domain of h^-1: {e}")))?;
    }
    Ok(fh)
}

/// `xi_h(y) = h(eta h^{-1}(y) / |h^{-1}(y)|)`.
pub fn xi_h(h: &ConicHomeo, y: &[f64]) -> Result<Vec<f64>> {
    let z = h.invert(y)?;
    let nz = linalg::norm(&z);
    if nz == 0.0 {
        return Err(Error::Domain("xi_h is undefined at h^{-1}(y) = 0".into()));
    }
    h.apply(&linalg::scale(&z, h.eta / nz))
}

/// Ray fitted to one cluster of pulled-back discriminant points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayFit {
    pub direction: Vec<f64>,
    /// Largest distance from a cluster point to the fitted ray.
    pub residual: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizationReport {
    pub verdict: Verdict,
    pub homeo: String,
    pub eta: f64,
    pub threshold: f64,
    pub branches: Vec<RayFit>,
    /// Pulled-back discriminant points in `B_eta`.
    pub pulled_back: Vec<Vec<f64>>,
    /// Samples that could not be pulled back.
    pub failed: usize,
    pub notes: Vec<String>,
}

/// Pulled-back discriminant points (samples and closed-form branches) with
/// `|h^{-1}(y)| <= eta`, plus the count of failed inversions.
pub fn pulled_back_discriminant(model: &DiscriminantModel, h: &ConicHomeo) -> (Vec<Vec<f64>>, usize) {
    let mut targets: Vec<Vec<f64>> = model.points.iter().map(|p| p.y.clone()).collect();
    for b in model.oracle.iter().flatten() {
        targets.extend(b.discretize_in_ball(model.delta, 400));
    }
    let mut failed = 0;
    let mut out = Vec::new();
    for y in targets {
        match h.invert(&y) {
            Ok(z) if linalg::norm(&z) <= h.eta => out.push(z),
            Ok(_) => {}
            Err(_) => failed += 1,
        }
    }
    (out, failed)
}

/// Whether `h` pulls the discriminant in `B_delta` back to a union of rays.
pub fn is_linearization(model: &DiscriminantModel, h: &ConicHomeo) -> Result<LinearizationReport> {
    if model.points.is_empty() && model.oracle.is_none() {
        return Err(Error::NoDiscriminant);
    }
    let (pulled, failed) = pulled_back_discriminant(model, h);
    let floor = 1e-12 * h.eta;
    let nonzero: Vec<&Vec<f64>> = pulled.iter().filter(|z| linalg::norm(z) > floor).collect();
    let branches = fit_rays(&nonzero);
    let threshold = LINEARIZATION_TOL * h.eta;
    let pass = branches.iter().all(|b| b.residual < threshold);
    let mut notes = Vec::new();
    if branches.is_empty() {
        notes.push("discriminant pulls back to the origin only (isolated critical value)".into());
    }
    Ok(LinearizationReport {
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        homeo: h.name.clone(),
        eta: h.eta,
        threshold,
        branches,
        pulled_back: pulled,
        failed,
        notes,
    })
}

/// Clusters points by direction, then fits a principal-direction ray through
/// 0 per cluster.
fn fit_rays(points: &[&Vec<f64>]) -> Vec<RayFit> {
    let clusters =
        if points.first().is_some_and(|z| z.len() == 2) { planar_clusters(points) } else { greedy_clusters(points) };
    clusters.into_iter().map(|members| fit_ray(&members)).collect()
}

/// Greedy clustering: each point joins the first cluster whose seed
/// direction is within [`CLUSTER_ANGLE`].
fn greedy_clusters<'a>(points: &[&'a Vec<f64>]) -> Vec<Vec<&'a Vec<f64>>> {
    let mut clusters: Vec<(Vec<f64>, Vec<&Vec<f64>>)> = Vec::new();
    for &z in points {
        let d = linalg::scale(z, 1.0 / linalg::norm(z));
        match clusters.iter_mut().find(|(rep, _)| linalg::dot(rep, &d).clamp(-1.0, 1.0).acos() < CLUSTER_ANGLE) {
            Some((_, members)) => members.push(z),
            None => clusters.push((d, vec![z])),
        }
    }
    clusters.into_iter().map(|(_, m)| m).collect()
}

/// Planar clustering on sorted angles: arcs separated by gaps above
/// [`CLUSTER_ANGLE`], each split further wherever a gap dwarfs the spread on
/// both sides (two nearby rays). A curve has no such gap and stays whole.
fn planar_clusters<'a>(points: &[&'a Vec<f64>]) -> Vec<Vec<&'a Vec<f64>>> {
    use std::f64::consts::TAU;
    let mut tagged: Vec<(f64, &Vec<f64>)> = points.iter().map(|z| (z[1].atan2(z[0]), *z)).collect();
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = tagged.len();
    if m == 0 {
        return Vec::new();
    }
    // Rotate so the sequence starts after the widest circular gap.
    let gap_after = |i: usize| {
        let next = if i + 1 == m { tagged[0].0 + TAU } else { tagged[i + 1].0 };
        next - tagged[i].0
    };
    let widest = (0..m).max_by(|&a, &b| gap_after(a).total_cmp(&gap_after(b))).unwrap_or(0);
    tagged.rotate_left((widest + 1) % m);
    let mut angles: Vec<f64> = Vec::with_capacity(m);
    for (i, (a, _)) in tagged.iter().enumerate() {
        let mut a = *a;
        if i > 0 {
            while a < angles[i - 1] {
                a += TAU;
            }
        }
        angles.push(a);
    }
    let mut arcs = Vec::new();
    let mut start = 0;
    for i in 1..=m {
        if i == m || angles[i] - angles[i - 1] > CLUSTER_ANGLE {
            arcs.push((start, i));
            start = i;
        }
    }
    let mut out = Vec::new();
    while let Some((lo, hi)) = arcs.pop() {
        match split_point(&angles[lo..hi]) {
            Some(cut) => {
                arcs.push((lo, lo + cut));
                arcs.push((lo + cut, hi));
            }
            None => out.push(tagged[lo..hi].iter().map(|(_, z)| *z).collect::<Vec<_>>()),
        }
    }
    out.reverse();
    out
}

/// Index of the largest gap in sorted `angles` if it exceeds ten times the
/// spread of either side.
fn split_point(angles: &[f64]) -> Option<usize> {
    if angles.len() < 2 {
        return None;
    }
    let (cut, gap) = (1..angles.len()).map(|i| (i, angles[i] - angles[i - 1])).max_by(|a, b| a.1.total_cmp(&b.1))?;
    let left = angles[cut - 1] - angles[0];
    let right = angles[angles.len() - 1] - angles[cut];
    (gap > 1e-9 && gap > 10.0 * left.max(right)).then_some(cut)
}

fn fit_ray(members: &[&Vec<f64>]) -> RayFit {
    let k = members[0].len();
    let mut mean = vec![0.0; k];
    let mut m = DMatrix::zeros(members.len(), k);
    for (i, z) in members.iter().enumerate() {
        let nz = linalg::norm(z);
        for c in 0..k {
            m[(i, c)] = z[c];
            mean[c] += z[c] / nz;
        }
    }
    let (vmat, _) = linalg::right_singular(&m);
    let mut dir: Vec<f64> = vmat.column(0).iter().copied().collect();
    if linalg::dot(&dir, &mean) < 0.0 {
        dir = linalg::scale(&dir, -1.0);
    }
    let residual = members
        .iter()
        .map(|z| {
            let t = linalg::dot(z, &dir);
            if t < 0.0 {
                linalg::norm(z)
            } else {
                linalg::dist(z, &linalg::scale(&dir, t))
            }
        })
        .fold(0.0, f64::max);
    RayFit { direction: dir, residual, points: members.len() }
}

/// Unit directions excluded by a compatibility subset `C = S^{k-1} \ excluded`.
pub fn angles_to_directions(angles: &[f64]) -> Vec<Vec<f64>> {
    angles.iter().map(|a| vec![a.cos(), a.sin()]).collect()
}

/// Outcome of a d_h-regularity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DhReport {
    pub linearization: LinearizationReport,
    pub regularity: RegularityReport,
    /// Directions removed from `S^{k-1}` by the compatibility subset.
    pub compatibility_excluded: Vec<Vec<f64>>,
}

/// d_h-regularity: d-regularity of `f_h`, excluding the pulled-back
/// discriminant directions and the complement of the compatibility subset.
///
/// Requires the linearization check to pass unless `excluded` (the
/// complement of `C`) is supplied.
pub fn d_h_regular(
    germ: &MapGerm,
    h: &ConicHomeo,
    cfg: &BallConfig,
    opts: &RegularityOptions,
    excluded: Option<&[Vec<f64>]>,
) -> Result<DhReport> {
    let model = critical::discriminant_sample(germ, cfg, &opts.sampler);
    let linearization = is_linearization(&model, h)?;
    if linearization.verdict != Verdict::Pass && excluded.is_none() {
        return Err(Error::Precondition(format!(
            "{} is not a linearization and no compatibility subset was given",
            h.name
        )));
    }
    let fh = conic_modify(germ, h)?;
    let (pulled, _) = pulled_back_discriminant(&model, h);
    let mut excl = Exclusions {
        directions: Vec::new(),
        critical: model.points.iter().map(|p| p.x.clone()).collect(),
        angle: opts.tol.angle,
        distance: opts.tol.w_distance * cfg.eps,
    }
    .with_directions(&pulled);
    excl.directions = dedup_dirs(excl.directions);
    let compat: Vec<Vec<f64>> = excluded.map(<[_]>::to_vec).unwrap_or_default();
    let excl = excl.with_directions(&compat);
    let mut regularity = regularity::d_regular_with(&fh, cfg, opts, &excl);
    regularity.notes.push(format!("checked on the conic modification by {}", h.name));
    Ok(DhReport { linearization, regularity, compatibility_excluded: compat })
}

fn dedup_dirs(dirs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut seen = BTreeMap::new();
    for d in dirs {
        let key: Vec<i64> = d.iter().map(|v| (v * 1e5).round() as i64).collect();
        seen.entry(key).or_insert(d);
    }
    seen.into_values().collect()
}

/// `h^{-1}(C(s))` for the bump germ's discriminant curve.
pub fn psi_curve_pullback(h: &ConicHomeo, s: f64) -> Result<Vec<f64>> {
    h.invert(&critical::psi_curve(s))
}

/// Point `h(eta (1, 1) / sqrt 2)`, the common image of the curve under `xi_h`.
pub fn psi_diagonal_anchor(h: &ConicHomeo) -> Result<Vec<f64>> {
    h.apply(&[h.eta * FRAC_1_SQRT_2, h.eta * FRAC_1_SQRT_2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::germ::{builtin_catalog, builtin_ldm, builtin_psi};

    #[test]
    fn cube_inverse() {
        let h = catalog_homeo("cube").unwrap();
        let z = h.invert(&[1.0, 8.0]).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-15 && (z[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn parity_odd_inverse_is_cube() {
        let h = catalog_homeo("parity(3,3)").unwrap();
        let z = h.invert(&[2.0, -0.5]).unwrap();
        assert!((z[0] - 8.0).abs() < 1e-12 && (z[1] + 0.125).abs() < 1e-15);
        let y = h.apply(&[8.0, -0.125]).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-12 && (y[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn catalog_round_trips() {
        for name in [
            "identity",
            "cube",
            "inv_cube",
            "sqrt_sign",
            "parity(3,5)",
            "parity(2,3)",
            "parity:3,2",
            "parity(2,4)",
            "psi_exp",
        ] {
            let h = catalog_homeo(name).unwrap();
            let r = h.inverse_residual(500, 7).unwrap();
            assert!(r <= 1e-10, "{name}: {r}");
            assert_eq!(h.apply(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        }
        assert!(matches!(catalog_homeo("nope"), Err(Error::UnknownName(_))));
        assert!(catalog_homeo("parity(1,3)").is_err());
    }

    #[test]
    fn psi_exp_straightens_curve() {
        let h = catalog_homeo("psi_exp").unwrap();
        for s in [0.25, 0.5, 0.75, 1.0] {
            let z = psi_curve_pullback(&h, s).unwrap();
            assert!((z[0] - s).abs() < 1e-8 && (z[1] - s).abs() < 1e-8, "{s}: {z:?}");
        }
    }

    #[test]
    fn ex6_modification_formula() {
        let g = builtin_catalog("ex6").unwrap();
        let fh = conic_modify(&g, &catalog_homeo("inv_cube").unwrap()).unwrap();
        for x in [[0.3, -0.2, 0.5], [-0.7, 0.1, 0.2]] {
            let v = fh.eval(&x).unwrap();
            assert!((v[0] - (x[0] * x[0] * x[2] + x[1].powi(3))).abs() < 1e-15);
            assert!((v[1] - x[0].powi(3)).abs() < 1e-15);
        }
    }

    #[test]
    fn modification_soundness() {
        let cases = [
            (builtin_catalog("parabola").unwrap(), "sqrt_sign"),
            (builtin_catalog("ex6").unwrap(), "inv_cube"),
            (builtin_ldm(2, 3, &[(2.0, 1.0), (-1.0, 1.0), (0.0, -1.0)]).unwrap(), "parity(2,3)"),
        ];
        for (g, name) in cases {
            let h = catalog_homeo(name).unwrap();
            let fh = conic_modify(&g, &h).unwrap();
            for i in 0..500 {
                let mut rng = par::task_rng(3, i);
                let x = linalg::scale(&random_unit(&mut rng, g.n()), 0.5 * rng.random::<f64>());
                let back = h.apply(&fh.eval(&x).unwrap()).unwrap();
                let err = linalg::dist(&back, &g.eval(&x).unwrap());
                assert!(err <= 1e-9, "{name}: {err}");
            }
        }
    }

    #[test]
    fn psi_modification_is_distance_map() {
        let g = builtin_psi(3).unwrap();
        let fh = conic_modify(&g, &catalog_homeo("psi_exp").unwrap()).unwrap();
        let x = [0.2, 0.1, -0.1];
        let d1 = ((0.8f64).powi(2) + 0.01 + 0.01).sqrt();
        let d2 = ((1.8f64).powi(2) + 0.01 + 0.01).sqrt();
        let v = fh.eval(&x).unwrap();
        assert!((v[0] - (1.0 - d1)).abs() < 1e-14 && (v[1] - (2.0 - d2)).abs() < 1e-14);
    }

    #[test]
    fn xi_identity_normalises() {
        let h = catalog_homeo("identity").unwrap();
        let y = xi_h(&h, &[3.0, 4.0]).unwrap();
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn parabola_pulls_back_to_diagonals() {
        let h = catalog_homeo("sqrt_sign").unwrap();
        for u in [0.1, 0.3] {
            let z = h.invert(&[u, u * u / 2.0]).unwrap();
            assert!((z[0] - u * u).abs() < 1e-15 && (z[1] - u * u).abs() < 1e-15);
            let z = h.invert(&[-u, u * u / 2.0]).unwrap();
            assert!((z[0] + u * u).abs() < 1e-15 && (z[1] - u * u).abs() < 1e-15);
        }
    }

    #[test]
    fn homeo_from_dsl() {
        let h = ConicHomeo::resolve("homeo 2 { fwd { u = x1; v = x2^3; } inv { u = x1; v = cbrt(x2); } eta = 0.3; }")
            .unwrap();
        assert_eq!(h.eta, 0.3);
        assert!(h.inverse_residual(100, 1).unwrap() < 1e-12);
    }

    fn ray(angle: f64, count: usize) -> Vec<Vec<f64>> {
        (1..=count)
            .map(|i| vec![angle.cos() * i as f64 / count as f64, angle.sin() * i as f64 / count as f64])
            .collect()
    }

    #[test]
    fn nearby_rays_are_separated() {
        let mut pts = ray(0.3, 50);
        pts.extend(ray(0.317, 50));
        pts.extend(ray(3.1, 50));
        pts.extend(ray(-3.1, 50));
        let refs: Vec<&Vec<f64>> = pts.iter().collect();
        let fits = fit_rays(&refs);
        assert_eq!(fits.len(), 4);
        assert!(fits.iter().all(|f| f.residual < 1e-12 && f.points == 50));
    }

    #[test]
    fn curve_stays_one_cluster() {
        let pts: Vec<Vec<f64>> = (1..=200)
            .map(|i| {
                let t = i as f64 / 200.0;
                vec![t, t * t]
            })
            .collect();
        let refs: Vec<&Vec<f64>> = pts.iter().collect();
        let fits = fit_rays(&refs);
        assert_eq!(fits.len(), 1);
        assert!(fits[0].residual > 1e-2);
    }
}
