//! Fiber sampling, connected components, sector scans and a local
//! surjectivity probe.

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::critical::{ball_seed, BallConfig, Branch, DiscriminantModel};
use crate::error::{Error, Result};
use crate::germ::MapGerm;
use crate::linalg::{self, GnOptions};
use crate::par::{self, Exec};

/// Accepted fiber points satisfy `|f(x) - t| <= FIBER_TOL`.
pub const FIBER_TOL: f64 = 1e-9;
/// Default linking radius is this multiple of the median nearest-neighbour
/// distance.
pub const LINK_FACTOR: f64 = 3.0;
/// Lower bound on the default linking radius, relative to `eps`; repeated
/// solves of an isolated fiber point agree to far better than this.
pub const LINK_FLOOR: f64 = 1e-6;
/// Upper bound on the densification step, relative to `eps`.
pub const DENSIFY_STEP: f64 = 0.02;
/// Normalised PCA eigenvalues above this count towards the local dimension.
pub const PCA_THRESHOLD: f64 = 0.1;
/// Neighbours used by the local dimension estimate.
const PCA_NEIGHBOURS: usize = 10;

/// Points of `f^{-1}(t) ∩ B_eps` found from random seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberCloud {
    pub target: Vec<f64>,
    pub eps: f64,
    pub points: Vec<Vec<f64>>,
    /// Radius used for deduplication and the default component count.
    pub linking_radius: f64,
    /// Seeds whose solve did not produce an accepted point.
    pub rejected: usize,
    pub seeds: usize,
    pub seed: u64,
}

impl FiberCloud {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Components at the cloud's own linking radius.
    pub fn components(&self) -> Result<usize> {
        component_count(self, self.linking_radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberOptions {
    pub seeds: usize,
    pub seed: u64,
    /// Fixed linking radius; the scale-free default when absent.
    pub linking_radius: Option<f64>,
    /// Grow the raw solutions along the fiber into a near-uniform net.
    pub densify: bool,
    /// Cap on the densified cloud.
    pub max_points: usize,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for FiberOptions {
    fn default() -> Self {
        FiberOptions {
            seeds: 2000,
            seed: 0,
            linking_radius: None,
            densify: true,
            max_points: 4000,
            exec: Exec::Parallel,
        }
    }
}

/// Gauss-Newton from `x0` onto `f(x) = t`; the solution if it lies in the
/// closed ball `B_eps` with residual at most [`FIBER_TOL`].
pub fn solve_on_fiber(germ: &MapGerm, t: &[f64], x0: &[f64], eps: f64) -> Option<Vec<f64>> {
    let system = |x: &[f64]| {
        let (v, j) = germ.eval_jacobian(x, true).ok()?;
        let r = DVector::from_iterator(v.len(), v.iter().zip(t).map(|(a, b)| a - b));
        Some((r, j))
    };
    let opts = GnOptions { max_iter: 60, tol: 1e-12, ..GnOptions::default() };
    let out = linalg::gauss_newton(system, x0, opts)?;
    let fx = germ.eval(&out.x).ok()?;
    let ok = linalg::dist(&fx, t) <= FIBER_TOL && linalg::norm(&out.x) <= eps;
    ok.then_some(out.x)
}

/// Solves from `opts.seeds` random seeds in `B_eps`, optionally densifies,
/// and deduplicates at a quarter of the linking radius.
///
/// Independent random solves leave gaps that grow like `ln N / N` against a
/// median spacing of `1 / N`, so no fixed multiple of the spacing links them
/// reliably. Densification walks the fiber from the raw solutions with
/// tangent steps of length `h` (the raw median spacing, at most
/// `DENSIFY_STEP * eps`) and projects back, which yields a net whose spacing
/// is uniform. Zero-dimensional fibers have no tangent steps and stay as
/// solved.
pub fn sample_fiber(germ: &MapGerm, t: &[f64], eps: f64, opts: &FiberOptions) -> FiberCloud {
    let n = germ.n();
    let found = par::map_indexed(opts.exec, opts.seeds, |i| {
        let x0 = ball_seed(&mut par::task_rng(opts.seed, i as u64), n, eps);
        solve_on_fiber(germ, t, &x0, eps)
    });
    let mut raw: Vec<Vec<f64>> = found.iter().flatten().cloned().collect();
    let rejected = found.len() - raw.len();
    if opts.densify && n > germ.k() && !raw.is_empty() {
        let spacing = default_linking_radius(&raw) / LINK_FACTOR;
        let h = if spacing > LINK_FLOOR * eps { spacing.min(DENSIFY_STEP * eps) } else { DENSIFY_STEP * eps };
        raw = densify(germ, t, eps, raw, h, opts);
    }
    let link = opts.linking_radius.unwrap_or_else(|| default_linking_radius(&raw).max(LINK_FLOOR * eps));
    let points = dedup(raw, link / 4.0);
    FiberCloud { target: t.to_vec(), eps, points, linking_radius: link, rejected, seeds: opts.seeds, seed: opts.seed }
}

/// Breadth-first continuation: every frontier point proposes `x ± h v` for
/// an orthonormal basis `v` of `ker Df(x)`, projected back onto the fiber;
/// proposals within `h / 2` of a kept point are dropped. Layers are solved
/// in parallel and merged in order.
fn densify(germ: &MapGerm, t: &[f64], eps: f64, start: Vec<Vec<f64>>, h: f64, opts: &FiberOptions) -> Vec<Vec<f64>> {
    let k = germ.k();
    let mut kept = dedup(start, 0.5 * h);
    let mut frontier: Vec<Vec<f64>> = kept.clone();
    while !frontier.is_empty() && kept.len() < opts.max_points {
        let proposals = par::map_slice(opts.exec, &frontier, |x| {
            let Ok(j) = germ.jacobian(x, true) else {
                return Vec::new();
            };
            if linalg::numerical_rank(&j, crate::critical::RANK_TOL, 0.0) < k {
                return Vec::new();
            }
            let tangent = linalg::null_space(&j, k);
            let mut out = Vec::new();
            for c in 0..tangent.ncols() {
                for sign in [1.0, -1.0] {
                    let x0: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + sign * h * tangent[(i, c)]).collect();
                    if let Some(p) = solve_on_fiber(germ, t, &x0, eps) {
                        out.push(p);
                    }
                }
            }
            out
        });
        let mut next = Vec::new();
        for p in proposals.into_iter().flatten() {
            if kept.len() >= opts.max_points {
                break;
            }
            if !kept.iter().any(|q| linalg::dist(q, &p) < 0.5 * h) {
                kept.push(p.clone());
                next.push(p);
            }
        }
        frontier = next;
    }
    kept
}

/// Greedy deduplication in input order: a point is dropped when it lies
/// within `radius` of an already kept point.
fn dedup(points: Vec<Vec<f64>>, radius: f64) -> Vec<Vec<f64>> {
    let mut kept: Vec<Vec<f64>> = Vec::new();
    for p in points {
        if !kept.iter().any(|q| linalg::dist(q, &p) <= radius) {
            kept.push(p);
        }
    }
    kept
}

fn nearest_distances(points: &[Vec<f64>]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| linalg::dist(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// [`LINK_FACTOR`] times the median nearest-neighbour distance; 0 for fewer
/// than two points.
pub fn default_linking_radius(points: &[Vec<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut d = nearest_distances(points);
    d.sort_by(f64::total_cmp);
    LINK_FACTOR * d[d.len() / 2]
}

/// Connected components of the graph joining points closer than
/// `linking_radius`.
pub fn component_count(cloud: &FiberCloud, linking_radius: f64) -> Result<usize> {
    components(&cloud.points, linking_radius).map(|labels| {
        let mut roots = labels;
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    })
}

/// Component label (a representative index) per point.
pub fn components(points: &[Vec<f64>], linking_radius: f64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut uf = UnionFind::<usize>::new(points.len());
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if linalg::dist(&points[i], &points[j]) < linking_radius {
                uf.union(i, j);
            }
        }
    }
    Ok(uf.into_labeling())
}

/// Median over points of the number of PCA eigenvalues of the
/// nearest-neighbour patch above [`PCA_THRESHOLD`] times the largest.
pub fn local_dimension(points: &[Vec<f64>]) -> Option<f64> {
    if points.len() <= PCA_NEIGHBOURS {
        return None;
    }
    let n = points[0].len();
    let mut dims: Vec<f64> = points
        .iter()
        .map(|p| {
            let mut by_dist: Vec<(f64, &Vec<f64>)> = points.iter().map(|q| (linalg::dist(p, q), q)).collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            let patch: Vec<&Vec<f64>> = by_dist.iter().take(PCA_NEIGHBOURS + 1).map(|(_, q)| *q).collect();
            let mut mean = vec![0.0; n];
            for q in &patch {
                for c in 0..n {
                    mean[c] += q[c] / patch.len() as f64;
                }
            }
            let m = DMatrix::from_fn(patch.len(), n, |r, c| patch[r][c] - mean[c]);
            let s = linalg::singular_values(&m);
            let top = s.first().map_or(0.0, |v| v * v);
            if top == 0.0 {
                return 0.0;
            }
            s.iter().filter(|v| *v * *v > PCA_THRESHOLD * top).count() as f64
        })
        .collect();
    dims.sort_by(f64::total_cmp);
    Some(dims[dims.len() / 2])
}

/// Sector guess for a planar target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Inside,
    Outside,
    /// Within the tagging tolerance of the discriminant.
    Boundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorEntry {
    pub base: Vec<f64>,
    pub sector: Option<Sector>,
    pub winding: Option<i64>,
    /// `None` for an empty fiber.
    pub components: Option<usize>,
    pub empty: bool,
    pub points: usize,
    pub linking_radius: f64,
    /// Advisory PCA estimate.
    pub local_dimension: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSummary {
    pub entries: Vec<SectorEntry>,
    /// Sectors whose nonempty fibers disagree on the component count.
    pub unstable_sectors: Vec<Sector>,
    pub seeds: usize,
    pub seed: u64,
}

/// Closed planar loop through the discriminant: oracle branches chained by
/// nearest endpoints when available, otherwise samples ordered by angle
/// about their centroid.
pub fn discriminant_loop(model: &DiscriminantModel) -> Vec<Vec<f64>> {
    if let Some(branches) = model.oracle.as_ref().filter(|b| !b.is_empty()) {
        return chain(branches.iter().map(|b| trace(b, 2000)).filter(|p| p.len() > 1).collect());
    }
    let pts: Vec<&Vec<f64>> = model.points.iter().map(|p| &p.y).collect();
    if pts.is_empty() {
        return Vec::new();
    }
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / pts.len() as f64;
    let mut sorted: Vec<Vec<f64>> = pts.into_iter().cloned().collect();
    sorted.sort_by(|a, b| (a[1] - cy).atan2(a[0] - cx).total_cmp(&(b[1] - cy).atan2(b[0] - cx)));
    sorted
}

fn trace(b: &Branch, m: usize) -> Vec<Vec<f64>> {
    if let Branch::Polyline { points, .. } = b {
        return points.clone();
    }
    let (lo, hi) = b.domain();
    (0..=m).map(|i| b.eval(lo + (hi - lo) * i as f64 / m as f64)).collect()
}

fn chain(mut pieces: Vec<Vec<Vec<f64>>>) -> Vec<Vec<f64>> {
    if pieces.is_empty() {
        return Vec::new();
    }
    let mut out = pieces.remove(0);
    while !pieces.is_empty() {
        let end = out.last().expect("nonempty").clone();
        let (idx, rev) = pieces
            .iter()
            .enumerate()
            .flat_map(|(i, p)| {
                [(i, false, linalg::dist(&p[0], &end)), (i, true, linalg::dist(p.last().expect("nonempty"), &end))]
            })
            .min_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(i, r, _)| (i, r))
            .expect("nonempty");
        let mut piece = pieces.remove(idx);
        if rev {
            piece.reverse();
        }
        out.extend(piece);
    }
    out
}

/// Winding number of the closed polygon `lp` around `p`.
pub fn winding_number(lp: &[Vec<f64>], p: &[f64]) -> i64 {
    let mut total = 0.0;
    for i in 0..lp.len() {
        let a = &lp[i];
        let b = &lp[(i + 1) % lp.len()];
        let a0 = (a[1] - p[1]).atan2(a[0] - p[0]);
        let b0 = (b[1] - p[1]).atan2(b[0] - p[0]);
        let mut d = b0 - a0;
        while d > std::f64::consts::PI {
            d -= std::f64::consts::TAU;
        }
        while d < -std::f64::consts::PI {
            d += std::f64::consts::TAU;
        }
        total += d;
    }
    (total / std::f64::consts::TAU).round() as i64
}

/// Fiber summaries at `base_points`, tagged inside/outside by winding number
/// for `k = 2` when a discriminant model is supplied. Points within
/// `1e-3 delta` of the loop are tagged as boundary.
pub fn sector_scan(
    germ: &MapGerm,
    cfg: &BallConfig,
    base_points: &[Vec<f64>],
    model: Option<&DiscriminantModel>,
    opts: &FiberOptions,
) -> SectorSummary {
    let lp = model.filter(|_| germ.k() == 2).map(discriminant_loop).unwrap_or_default();
    let entries: Vec<SectorEntry> = base_points
        .iter()
        .map(|t| {
            let (sector, winding) = if lp.len() > 2 {
                let w = winding_number(&lp, t);
                let near = model.is_some_and(|m| m.distance_to(t) <= 1e-3 * cfg.delta);
                let s = if near {
                    Sector::Boundary
                } else if w != 0 {
                    Sector::Inside
                } else {
                    Sector::Outside
                };
                (Some(s), Some(w))
            } else {
                (None, None)
            };
            let cloud = sample_fiber(germ, t, cfg.eps, opts);
            let link = cloud.linking_radius;
            SectorEntry {
                base: t.clone(),
                sector,
                winding,
                components: cloud.components().ok(),
                empty: cloud.is_empty(),
                points: cloud.points.len(),
                linking_radius: link,
                local_dimension: local_dimension(&cloud.points),
            }
        })
        .collect();
    let mut unstable = Vec::new();
    for s in [Sector::Inside, Sector::Outside, Sector::Boundary] {
        let mut counts: Vec<usize> =
            entries.iter().filter(|e| e.sector == Some(s)).filter_map(|e| e.components).collect();
        counts.dedup();
        if counts.len() > 1 {
            unstable.push(s);
        }
    }
    SectorSummary { entries, unstable_sectors: unstable, seeds: opts.seeds, seed: opts.seed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurjectivityReport {
    pub fraction: f64,
    pub hits: usize,
    pub targets: Vec<Vec<f64>>,
    pub hit: Vec<bool>,
}

/// Fraction of `targets` (uniform in `B_delta`, seeded) whose fiber in
/// `B_eps` is nonempty.
pub fn surjectivity_probe(germ: &MapGerm, cfg: &BallConfig, targets: usize, opts: &FiberOptions) -> SurjectivityReport {
    let k = germ.k();
    let ys: Vec<Vec<f64>> =
        (0..targets).map(|i| ball_seed(&mut par::task_rng(opts.seed ^ 0x5E_C7, i as u64), k, cfg.delta)).collect();
    let hit: Vec<bool> = ys
        .iter()
        .map(|y| {
            let inner = FiberOptions { exec: opts.exec, ..*opts };
            let found = par::map_indexed(inner.exec, inner.seeds, |i| {
                let x0 = ball_seed(&mut par::task_rng(inner.seed, i as u64), germ.n(), cfg.eps);
                solve_on_fiber(germ, y, &x0, cfg.eps).is_some()
            });
            found.into_iter().any(|b| b)
        })
        .collect();
    let hits = hit.iter().filter(|b| **b).count();
    SurjectivityReport {
        fraction: if targets == 0 { 0.0 } else { hits as f64 / targets as f64 },
        hits,
        targets: ys,
        hit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::germ::{builtin_catalog, builtin_psi};

    fn psi_interior() -> Vec<f64> {
        builtin_psi(3).unwrap().eval(&[1.0, 0.5, 0.0]).unwrap()
    }

    #[test]
    fn psi_interior_fibre_is_a_circle() {
        let g = builtin_psi(3).unwrap();
        let t = psi_interior();
        // Independent oracle: the fibre is the circle x1 = 1, x2^2 + x3^2 = 1/4.
        assert!((t[0] - (-4.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((t[1] - (-1.0f64 / 2.75).exp()).abs() < 1e-15);
        let cloud = sample_fiber(&g, &t, 3.0, &FiberOptions::default());
        assert!(cloud.points.len() > 20);
        for x in &cloud.points {
            assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] * x[1] + x[2] * x[2] - 0.25).abs() < 1e-6);
        }
        assert_eq!(cloud.components().unwrap(), 1);
    }

    #[test]
    fn psi_planar_interior_fibre_has_two_points() {
        let g = builtin_psi(2).unwrap();
        let t = g.eval(&[1.0, 0.5]).unwrap();
        let cloud = sample_fiber(&g, &t, 3.0, &FiberOptions::default());
        assert_eq!(cloud.points.len(), 2);
        assert_eq!(cloud.components().unwrap(), 2);
    }

    #[test]
    fn psi_axis_targets_are_empty() {
        let g = builtin_psi(3).unwrap();
        let cloud = sample_fiber(&g, &[0.1, 0.0], 3.0, &FiberOptions::default());
        assert!(cloud.is_empty());
    }

    #[test]
    fn single_point_is_one_component() {
        let cloud = FiberCloud {
            target: vec![0.0],
            eps: 1.0,
            points: vec![vec![0.5]],
            linking_radius: 0.0,
            rejected: 0,
            seeds: 1,
            seed: 0,
        };
        assert_eq!(component_count(&cloud, 0.0).unwrap(), 1);
    }

    #[test]
    fn empty_cloud_errors() {
        assert_eq!(components(&[], 1.0), Err(Error::EmptyCloud));
    }

    #[test]
    fn winding_of_square() {
        let sq = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0]];
        assert_eq!(winding_number(&sq, &[0.5, 0.5]).abs(), 1);
        assert_eq!(winding_number(&sq, &[2.0, 0.5]), 0);
    }

    #[test]
    fn projection_is_locally_surjective() {
        let g = builtin_catalog("projection").unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let opts = FiberOptions { seeds: 50, ..FiberOptions::default() };
        assert_eq!(surjectivity_probe(&g, &cfg, 20, &opts).fraction, 1.0);
    }

    #[test]
    fn clouds_are_deterministic() {
        let g = builtin_psi(3).unwrap();
        let t = psi_interior();
        let mut opts = FiberOptions { seeds: 500, ..FiberOptions::default() };
        let a = sample_fiber(&g, &t, 3.0, &opts);
        opts.exec = Exec::Sequential;
        assert_eq!(a, sample_fiber(&g, &t, 3.0, &opts));
    }
}
