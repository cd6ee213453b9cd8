//! Small dense linear algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Rows shorter than this are treated as zero. Only exact zeros and
/// subnormal noise qualify: flat germs have legitimate rows far below any
/// fixed absolute threshold.
pub const ROW_FLOOR: f64 = f64::MIN_POSITIVE;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Each row scaled to unit length; rows with norm below [`ROW_FLOOR`] become 0.
pub fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        let n = row_norm(m, i);
        let mut row = out.row_mut(i);
        if n < ROW_FLOOR {
            row.fill(0.0);
        } else {
            row /= n;
        }
    }
    out
}

/// Number of singular values above `tol * sigma_max`; 0 when `sigma_max` is
/// below `floor`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: f64, floor: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax >= floor => s.iter().filter(|v| **v > tol * smax).count(),
        _ => 0,
    }
}

/// Full right-singular basis: columns of the returned `n x n` matrix are the
/// right singular vectors sorted by decreasing singular value, together with
/// the singular values (padded with zeros to length `n`).
pub fn right_singular(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.ncols();
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut v = DMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (j, &i) in order.iter().enumerate() {
        v.set_column(j, &vt.row(i).transpose());
        s.push(svd.singular_values[i]);
    }
    (v, s)
}

/// Orthonormal basis of the kernel of `m`, assuming rank `r`.
pub fn null_space(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let (v, _) = right_singular(m);
    let n = m.ncols();
    v.columns(r, n - r).into_owned()
}

/// Orthonormal basis of the orthogonal complement of the column span of `b`
/// (assumed full column rank) in `R^n`.
pub fn orthogonal_complement(b: &DMatrix<f64>) -> DMatrix<f64> {
    let r = b.ncols();
    null_space(&b.transpose(), r)
}

/// Orthonormalises the columns of `b` (modified Gram-Schmidt, two passes).
pub fn orthonormalize(b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = b.clone();
    for j in 0..q.ncols() {
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).into_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let n = q.column(j).norm();
        if n > 0.0 {
            q.column_mut(j).scale_mut(1.0 / n);
        }
    }
    q
}

/// Minimum-norm least-squares solution of `a x = b`, discarding singular
/// values below `rcond * sigma_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (rcond * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Central-difference Jacobian of a vector function.
pub fn fd_jacobian<F>(f: F, x: &[f64], h: f64) -> Option<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let mut cols = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        cols.push(DVector::from_iterator(fp.len(), fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h))));
    }
    if cols.is_empty() {
        return None;
    }
    Some(DMatrix::from_columns(&cols))
}

#[derive(Debug, Clone, Copy)]
pub struct GnOptions {
    pub max_iter: usize,
    /// Converged once the residual norm falls below this.
    pub tol: f64,
    pub rcond: f64,
}

impl Default for GnOptions {
    fn default() -> Self {
        GnOptions { max_iter: 25, tol: 1e-10, rcond: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct GnOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Candidate step: point, residual, Jacobian and residual norm.
type Trial = (Vec<f64>, DVector<f64>, DMatrix<f64>, f64);

/// Damped Gauss-Newton with minimum-norm steps and backtracking.
///
/// `system(x)` returns the residual and its Jacobian, or `None` outside the
/// domain; such trial points are rejected by the line search.
pub fn gauss_newton<F>(system: F, x0: &[f64], opts: GnOptions) -> Option<GnOutcome>
where
    F: Fn(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut r, mut j) = system(&x)?;
    let mut norm = r.norm();
    let mut it = 0;
    while it < opts.max_iter && norm >= opts.tol {
        it += 1;
        let step = lstsq(&j, &(-&r), opts.rcond);
        let trial_at = |t: f64| {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, d)| a + t * d).collect();
            let (rt, jt) = system(&trial)?;
            let nt = rt.norm();
            (nt.is_finite() && nt < norm).then_some((trial, rt, jt, nt))
        };
        // Full, doubled and tripled steps first: zeros of multiplicity two or
        // three are reached in one extrapolated step instead of by halving.
        let mut accepted: Option<Trial> = None;
        for t in [1.0, 2.0, 3.0] {
            if let Some(c) = trial_at(t) {
                if accepted.as_ref().is_none_or(|a| c.3 < a.3) {
                    accepted = Some(c);
                }
            }
        }
        let mut t = 0.5;
        while accepted.is_none() && t > 1e-12 {
            accepted = trial_at(t);
            t *= 0.5;
        }
        match accepted {
            Some((xt, rt, jt, nt)) => {
                x = xt;
                r = rt;
                j = jt;
                norm = nt;
            }
            None => break,
        }
    }
    Some(GnOutcome { converged: norm < opts.tol, x, residual: norm, iterations: it })
}

/// Euclidean norm, rescaled by the largest entry so that vectors of flat
/// germs (entries near 1e-200) do not underflow.
pub fn norm(x: &[f64]) -> f64 {
    scaled_norm(x.iter().copied())
}

fn scaled_norm<I: Iterator<Item = f64> + Clone>(it: I) -> f64 {
    let amax = it.clone().fold(0.0, |m: f64, v| m.max(v.abs()));
    if amax == 0.0 || !amax.is_finite() {
        return amax;
    }
    amax * it.map(|v| (v / amax).powi(2)).sum::<f64>().sqrt()
}

/// Norm of row `i` of `m`, without underflow.
pub fn row_norm(m: &DMatrix<f64>, i: usize) -> f64 {
    scaled_norm((0..m.ncols()).map(|c| m[(i, c)]))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    scaled_norm(a.iter().zip(b).map(|(x, y)| x - y))
}

pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}
