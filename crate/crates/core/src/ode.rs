//! Adaptive Dormand-Prince 5(4) integration with a terminal event.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Tolerance on `|event(x)|` at a located event.
    pub event_tol: f64,
    /// Initial step; chosen from the interval when absent.
    pub h0: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-8, atol: 1e-10, max_steps: 100_000, event_tol: 1e-10, h0: None }
    }
}

impl OdeOptions {
    /// Both tolerances scaled by `factor`.
    pub fn scaled(self, factor: f64) -> OdeOptions {
        OdeOptions { rtol: self.rtol * factor, atol: self.atol * factor, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    /// The event function changed sign and was located.
    Event,
    /// Reached `t_end`.
    End,
    /// The right-hand side, the step control or the step observer failed.
    Failed,
}

/// Accepted states, including the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub stop: Stop,
    pub error: Option<Error>,
    pub steps: usize,
    pub rejected: usize,
}

impl OdeSolution {
    pub fn last(&self) -> (f64, &[f64]) {
        (*self.t.last().expect("nonempty"), self.x.last().expect("nonempty"))
    }
}

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand-Prince step: the fifth-order solution and the scaled error
/// norm (accept when `<= 1`).
fn dp_step<F>(rhs: &mut F, t: f64, x: &[f64], h: f64, opts: &OdeOptions) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let xs: Vec<f64> = (0..n).map(|i| x[i] + h * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>()).collect();
        let ks = rhs(t + C[s] * h, &xs)?;
        if ks.len() != n || ks.iter().any(|v| !v.is_finite()) {
            return Err(Error::StepFailure(format!("non-finite derivative at t = {t:e}")));
        }
        k.push(ks);
    }
    let x5: Vec<f64> = (0..n).map(|i| x[i] + h * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
    let err = (0..n)
        .map(|i| {
            let e = h * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
            let sc = opts.atol + opts.rtol * x[i].abs().max(x5[i].abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        / n.max(1) as f64;
    Ok((x5, err.sqrt()))
}

/// Integrates `x' = rhs(t, x)` from `t0` towards `t_end`.
///
/// Stops at the first accepted step across which `event` changes sign from
/// negative to non-negative; the crossing is located by bisection on the step
/// length until `|event| <= opts.event_tol`. `observe` sees every accepted
/// state and may abort the run by returning an error.
pub fn integrate<F, E, O>(
    mut rhs: F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    opts: &OdeOptions,
    event: Option<E>,
    mut observe: O,
) -> OdeSolution
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    E: Fn(&[f64]) -> f64,
    O: FnMut(f64, &[f64]) -> Result<()>,
{
    let mut sol =
        OdeSolution { t: vec![t0], x: vec![x0.to_vec()], stop: Stop::End, error: None, steps: 0, rejected: 0 };
    let span = t_end - t0;
    if span <= 0.0 {
        return sol;
    }
    let h_min = 1e-14 * span.max(t0.abs());
    let mut h = opts.h0.unwrap_or(1e-3 * span).min(span);
    let (mut t, mut x) = (t0, x0.to_vec());
    let mut g_prev = event.as_ref().map(|e| e(&x));
    let fail = |sol: &mut OdeSolution, e: Error| {
        sol.stop = Stop::Failed;
        sol.error = Some(e);
    };
    if let Err(e) = observe(t, &x) {
        fail(&mut sol, e);
        return sol;
    }
    while t < t_end {
        if sol.steps >= opts.max_steps {
            fail(&mut sol, Error::StepFailure(format!("step budget {} exhausted at t = {t:e}", opts.max_steps)));
            return sol;
        }
        let last = h >= t_end - t;
        if last {
            h = t_end - t;
        }
        let step = dp_step(&mut rhs, t, &x, h, opts);
        let (xn, err) = match step {
            Ok(v) => v,
            Err(e) => {
                // The right-hand side may be undefined past a boundary; shrink.
                sol.rejected += 1;
                h *= 0.25;
                if h < h_min {
                    fail(&mut sol, e);
                    return sol;
                }
                continue;
            }
        };
        if err > 1.0 {
            sol.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).max(0.2);
            if h < h_min {
                fail(&mut sol, Error::StepFailure(format!("step size underflow at t = {t:e}")));
                return sol;
            }
            continue;
        }
        sol.steps += 1;
        if let (Some(e), Some(gp)) = (event.as_ref(), g_prev) {
            let gn = e(&xn);
            if gp < 0.0 && gn >= 0.0 {
                return match locate(&mut rhs, e, t, &x, h, opts) {
                    Ok((te, xe)) => {
                        if let Err(err) = observe(te, &xe) {
                            fail(&mut sol, err);
                        } else {
                            sol.t.push(te);
                            sol.x.push(xe);
                            sol.stop = Stop::Event;
                        }
                        sol
                    }
                    Err(err) => {
                        fail(&mut sol, err);
                        sol
                    }
                };
            }
            g_prev = Some(gn);
        }
        t = if last { t_end } else { t + h };
        x = xn;
        if let Err(e) = observe(t, &x) {
            fail(&mut sol, e);
            return sol;
        }
        sol.t.push(t);
        sol.x.push(x.clone());
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    sol
}

/// Bisection on the step length from `(t, x)` for the event crossing.
fn locate<F, E>(rhs: &mut F, event: &E, t: f64, x: &[f64], h: f64, opts: &OdeOptions) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
    E: Fn(&[f64]) -> f64,
{
    let (mut lo, mut hi) = (0.0, h);
    let mut best = (h, dp_step(rhs, t, x, h, opts)?.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (xm, _) = dp_step(rhs, t, x, mid, opts)?;
        let g = event(&xm);
        if g.abs() <= opts.event_tol {
            return Ok((t + mid, xm));
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = (mid, xm);
        }
        if hi - lo <= f64::EPSILON * t.abs().max(h) {
            break;
        }
    }
    let g = event(&best.1);
    if g.abs() <= opts.event_tol {
        Ok((t + best.0, best.1))
    } else {
        Err(Error::StepFailure(format!("event not resolved below {:e} (|g| = {g:e})", opts.event_tol)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_growth() {
        let sol = integrate(
            |_, x: &[f64]| Ok(vec![x[0]]),
            &[1.0],
            0.0,
            1.0,
            &OdeOptions::default(),
            None::<fn(&[f64]) -> f64>,
            |_, _| Ok(()),
        );
        assert_eq!(sol.stop, Stop::End);
        let (t, x) = sol.last();
        assert_eq!(t, 1.0);
        assert!((x[0] - 1f64.exp()).abs() < 1e-7);
    }

    #[test]
    fn event_is_located() {
        // x' = x from 1: crosses 2 at t = ln 2.
        let sol = integrate(
            |_, x: &[f64]| Ok(vec![x[0]]),
            &[1.0],
            0.0,
            10.0,
            &OdeOptions::default(),
            Some(|x: &[f64]| x[0] - 2.0),
            |_, _| Ok(()),
        );
        assert_eq!(sol.stop, Stop::Event);
        let (t, x) = sol.last();
        assert!((x[0] - 2.0).abs() <= 1e-10);
        assert!((t - 2f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn rotation_conserves_radius() {
        let sol = integrate(
            |_, x: &[f64]| Ok(vec![-x[1], x[0]]),
            &[1.0, 0.0],
            0.0,
            std::f64::consts::TAU,
            &OdeOptions::default(),
            None::<fn(&[f64]) -> f64>,
            |_, _| Ok(()),
        );
        let (_, x) = sol.last();
        assert!((x[0] - 1.0).abs() < 1e-7 && x[1].abs() < 1e-7);
    }

    #[test]
    fn observer_aborts() {
        let sol = integrate(
            |_, x: &[f64]| Ok(vec![x[0]]),
            &[1.0],
            0.0,
            10.0,
            &OdeOptions::default(),
            None::<fn(&[f64]) -> f64>,
            |_, x| if x[0] > 3.0 { Err(Error::StepFailure("stop".into())) } else { Ok(()) },
        );
        assert_eq!(sol.stop, Stop::Failed);
        assert!(sol.x.last().unwrap()[0] <= 3.0);
    }

    #[test]
    fn tighter_tolerance_is_more_accurate() {
        let run = |o: OdeOptions| {
            let sol = integrate(
                |t, x: &[f64]| Ok(vec![-2.0 * t * x[0]]),
                &[1.0],
                0.0,
                2.0,
                &o,
                None::<fn(&[f64]) -> f64>,
                |_, _| Ok(()),
            );
            (sol.last().1[0] - (-4.0f64).exp()).abs()
        };
        let loose = OdeOptions::default().scaled(1e3);
        assert!(run(loose.scaled(1e-3)) < run(loose));
    }
}
