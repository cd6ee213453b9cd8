//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Run with `cargo test --release -p milnorlab-cli --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::Rng;

use milnorlab::conic::{angles_to_directions, conic_modify, d_h_regular, psi_curve_pullback, ConicHomeo};
use milnorlab::critical::{
    compare_to_oracle, discriminant_sample, psi_curve, psi_radius_report, BallConfig, Branch, Sampler,
};
use milnorlab::fiber::{sample_fiber, sector_scan, FiberOptions};
use milnorlab::flow::{
    composition_lemma_probe, BaseCurve, ConnectionSpec, LiftOptions, Metric, TauOptions, Termination, COMPOSITION_TOL,
};
use milnorlab::germ::CATALOG;
use milnorlab::regularity::{self, RegularityOptions, RegularityReport, Verdict};
use milnorlab::report::oracle_csv;
use milnorlab::{builtin_catalog, builtin_ldm, builtin_psi, linalg, par, MapGerm};

/// Diagonal coefficients used throughout.
const LAMBDAS: [(f64, f64); 3] = [(2.0, 1.0), (-1.0, 1.0), (0.0, -1.0)];
const LDM22: &str = "ldm:2,2:(2,1),(-1,1),(0,-1)";

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn ldm(p: u32, q: u32) -> MapGerm {
    builtin_ldm(p, q, &LAMBDAS).unwrap()
}

fn ball_point(seed: u64, i: usize, n: usize, radius: f64) -> Vec<f64> {
    let mut rng = par::task_rng(seed, i as u64);
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        if linalg::norm(&x) <= 1.0 {
            return linalg::scale(&x, radius);
        }
    }
}

/// Bump-argument margin for psi: central differences lose accuracy like
/// `h^2 / a^4` as the argument `a` approaches the flat boundary.
const BUMP_MARGIN: f64 = 0.1;

/// Bump arguments `1 - |x - e1|^2` and `4 - |x - 2 e1|^2` of the psi germ.
fn psi_args(x: &[f64]) -> [f64; 2] {
    let d2 = |c: f64| (x[0] - c).powi(2) + x[1..].iter().map(|v| v * v).sum::<f64>();
    [1.0 - d2(1.0), 4.0 - d2(2.0)]
}

/// Largest entry of `|AD - FD|` relative to the largest AD entry.
fn jacobian_error(g: &MapGerm, x: &[f64]) -> Option<f64> {
    let ad = g.jacobian(x, false).ok()?;
    let fd = linalg::fd_jacobian(|y| g.eval(y).ok(), x, 1e-6)?;
    let scale = ad.amax();
    let diff = (&ad - &fd).amax();
    Some(if scale > 0.0 { diff / scale } else { diff })
}

fn criterion_1() -> Outcome {
    let mut germs: Vec<(String, MapGerm)> =
        CATALOG.iter().map(|(name, _)| (name.to_string(), builtin_catalog(name).unwrap())).collect();
    for (p, q) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        germs.push((format!("ldm({p},{q})"), ldm(p, q)));
    }
    germs.push(("psi(2)".into(), builtin_psi(2).unwrap()));
    germs.push(("psi(3)".into(), builtin_psi(3).unwrap()));
    let ex6h = conic_modify(&builtin_catalog("ex6").unwrap(), &ConicHomeo::resolve("inv_cube").unwrap()).unwrap();
    germs.push(("ex6+inv_cube".into(), ex6h));
    let parh = conic_modify(&builtin_catalog("parabola").unwrap(), &ConicHomeo::resolve("sqrt_sign").unwrap()).unwrap();
    germs.push(("parabola+sqrt_sign".into(), parh));

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, g) in &germs {
        let psi = name.starts_with("psi");
        // Psi varies on B_2; keep clear of the exponential underflow band.
        let radius = if psi { 2.0 } else { 1.0 };
        for i in 0..1000 {
            let x = ball_point(11, i, g.n(), radius);
            if g.guard_margin(&x).is_some_and(|m| m <= 1e-3) {
                continue;
            }
            if psi && psi_args(&x).iter().any(|a| *a > 0.0 && *a < BUMP_MARGIN) {
                continue;
            }
            let e = jacobian_error(g, &x).ok_or_else(|| format!("{name}: evaluation failed at {x:?}"))?;
            ensure!(e <= 1e-6, "{name}: relative AD/FD error {e:.3e} at {x:?}");
            worst = worst.max(e);
            checked += 1;
        }
    }

    // Closed form of the first psi gradient: -(2 / a^2) f (x - e1), a the bump argument.
    let g = builtin_psi(3).unwrap();
    let mut closed: f64 = 0.0;
    for i in 0..1000 {
        let x = ball_point(12, i, 3, 2.0);
        let a = psi_args(&x)[0];
        if a < BUMP_MARGIN {
            continue;
        }
        let f = g.eval(&x).unwrap()[0];
        let j = g.jacobian(&x, false).unwrap();
        for c in 0..3 {
            let shift = if c == 0 { 1.0 } else { 0.0 };
            let expect = -2.0 / (a * a) * f * (x[c] - shift);
            let e = (j[(0, c)] - expect).abs();
            ensure!(e <= 1e-8, "psi closed-form gradient off by {e:.3e} at {x:?}");
            closed = closed.max(e);
        }
    }
    Ok(format!(
        "{} germs, {checked} points, worst relative error {worst:.2e}; psi closed form within {closed:.2e}",
        germs.len()
    ))
}

fn oracle_fit(g: &MapGerm, eps: f64, label: &str) -> Result<(f64, f64), String> {
    let cfg = BallConfig::for_germ(g, eps).map_err(|e| e.to_string())?;
    let model = discriminant_sample(g, &cfg, &Sampler::default());
    let c = compare_to_oracle(&model).map_err(|e| format!("{label}: {e}"))?;
    let rel = c.max_distance / cfg.delta;
    ensure!(rel <= 1e-5, "{label}: max distance {rel:.3e} delta at {:?}", c.worst_sample);
    ensure!(c.coverage >= 0.95, "{label}: coverage {:.3}", c.coverage);
    ensure!(c.samples_in_ball > 0, "{label}: no samples inside B_delta");
    Ok((rel, c.coverage))
}

fn criterion_2() -> Outcome {
    let mut out = Vec::new();
    for (label, g) in
        [("ldm(2,2)", ldm(2, 2)), ("parabola", builtin_catalog("parabola").unwrap()), ("psi", builtin_psi(3).unwrap())]
    {
        let (rel, cov) = oracle_fit(&g, 1.0, label)?;
        out.push(format!("{label} {rel:.1e}/{cov:.3}"));
    }
    // Exported psi curve: the s = 1 row is the corner (e^-1, e^-1/3).
    let csv = oracle_csv(&[Branch::PsiCurve], 2);
    let corner = [(-1.0f64).exp(), (-1.0f64 / 3.0).exp()];
    let hit = csv.lines().skip(1).any(|l| {
        let c: Vec<f64> = l.split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        c[0] == 1.0 && (c[1] - corner[0]).abs() <= 1e-9 && (c[2] - corner[1]).abs() <= 1e-9
    });
    ensure!(hit, "exported psi curve misses (e^-1, e^-1/3) at s = 1");
    let near0 = psi_curve(0.005);
    ensure!(near0[0] < 1e-8 && near0[1] < 1e-8, "C(0.005) = {near0:?}");
    let end = psi_curve(2.0 - 1e-6);
    ensure!(end[0].abs() < 1e-4 && (end[1] - (-0.25f64).exp()).abs() < 1e-4, "C(2 - 1e-6) = {end:?}");
    Ok(format!("max distance/coverage: {}; psi corner on the export", out.join(", ")))
}

fn methods_agree(r: &RegularityReport) -> bool {
    r.method_verdicts.len() == 2 && r.method_verdicts.values().all(|v| *v == r.verdict)
}

fn distance_to_bad_line(x: &[f64]) -> f64 {
    // Line {x = z, y = 0} through the origin with direction (1, 0, 1) / sqrt 2.
    let t = (x[0] + x[2]) / 2.0;
    linalg::dist(x, &[t, 0.0, t])
}

fn criterion_3() -> Outcome {
    let opts = RegularityOptions::default();
    let mut lines = Vec::new();
    for (p, q) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        let g = ldm(p, q);
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let h = ConicHomeo::resolve(&format!("parity({p},{q})")).unwrap();
        let r = d_h_regular(&g, &h, &cfg, &opts, None).map_err(|e| format!("ldm({p},{q}): {e}"))?;
        ensure!(r.linearization.verdict == Verdict::Pass, "ldm({p},{q}): linearization {}", r.linearization.verdict);
        ensure!(
            r.regularity.verdict == Verdict::Pass,
            "ldm({p},{q}): {} with {} witnesses",
            r.regularity.verdict,
            r.regularity.witnesses.len()
        );
        ensure!(methods_agree(&r.regularity), "ldm({p},{q}): {:?}", r.regularity.method_verdicts);
        lines.push(format!("ldm({p},{q}) pass"));
    }
    let expect = |name: &str, want: Verdict| -> Result<RegularityReport, String> {
        let g = builtin_catalog(name).unwrap();
        let cfg = BallConfig::for_germ(&g, 1.0).unwrap();
        let r = regularity::d_regular(&g, &cfg, &opts);
        ensure!(r.verdict == want, "{name}: {} (expected {want})", r.verdict);
        ensure!(methods_agree(&r), "{name}: methods disagree {:?}", r.method_verdicts);
        Ok(r)
    };
    expect("projection", Verdict::Pass)?;
    let ex6 = expect("ex6", Verdict::Fail)?;
    let near = ex6.witnesses.iter().map(|w| distance_to_bad_line(&w.x)).fold(f64::INFINITY, f64::min);
    ensure!(near <= 1e-2, "ex6: closest witness {near:.3e} from {{x = z, y = 0}}");
    let nd = expect("nondreg4", Verdict::Fail)?;
    Ok(format!(
        "{}, projection pass, ex6 fail ({} witnesses, closest {near:.1e} from the line), nondreg4 fail ({} witnesses), methods agree",
        lines.join(", "),
        ex6.witnesses.len(),
        nd.witnesses.len()
    ))
}

fn dh_case(name: &str, g: &MapGerm, homeo: &str, eps: f64, excluded: Option<Vec<Vec<f64>>>) -> Outcome {
    let cfg = BallConfig::for_germ(g, eps).unwrap();
    let h = ConicHomeo::resolve(homeo).unwrap();
    let r = d_h_regular(g, &h, &cfg, &RegularityOptions::default(), excluded.as_deref())
        .map_err(|e| format!("{name}: {e}"))?;
    let lin = &r.linearization;
    let worst = lin.branches.iter().map(|b| b.residual).fold(0.0, f64::max);
    ensure!(lin.verdict == Verdict::Pass, "{name}: linearization {}", lin.verdict);
    ensure!(worst < 1e-4 * lin.eta, "{name}: linearization residual {worst:.3e} vs eta {}", lin.eta);
    ensure!(
        r.regularity.verdict == Verdict::Pass,
        "{name}: {} with {} witnesses",
        r.regularity.verdict,
        r.regularity.witnesses.len()
    );
    ensure!(methods_agree(&r.regularity), "{name}: {:?}", r.regularity.method_verdicts);
    Ok(format!("{name} pass (residual {worst:.1e})"))
}

fn criterion_4() -> Outcome {
    let ex6 = builtin_catalog("ex6").unwrap();
    let fh = conic_modify(&ex6, &ConicHomeo::resolve("inv_cube").unwrap()).unwrap();
    for i in 0..200 {
        let x = ball_point(4, i, 3, 1.0);
        let want = [x[0] * x[0] * x[2] + x[1].powi(3), x[0].powi(3)];
        let got = fh.eval(&x).unwrap();
        ensure!(linalg::dist(&got, &want) <= 1e-12, "ex6 modification {got:?} != {want:?} at {x:?}");
    }
    let a = dh_case("ex6+inv_cube", &ex6, "inv_cube", 1.0, None)?;
    let b = dh_case(
        "parabola+sqrt_sign",
        &builtin_catalog("parabola").unwrap(),
        "sqrt_sign",
        1.0,
        Some(angles_to_directions(&[FRAC_PI_4, 3.0 * FRAC_PI_4])),
    )?;
    let c = dh_case("psi+psi_exp", &builtin_psi(3).unwrap(), "psi_exp", 0.5, None)?;
    let h = ConicHomeo::resolve("psi_exp").unwrap();
    let mut worst: f64 = 0.0;
    for s in [0.25, 0.5, 0.75, 1.0] {
        let y = psi_curve_pullback(&h, s).map_err(|e| e.to_string())?;
        let e = linalg::dist(&y, &[s, s]);
        ensure!(e <= 1e-8, "h^-1(C({s})) = {y:?}");
        worst = worst.max(e);
    }
    Ok(format!("{a}; {b}; {c}; h^-1(C(s)) = (s, s) within {worst:.1e}"))
}

fn criterion_5() -> Outcome {
    let g = ldm(2, 2);
    let eps = 1.0;
    let cfg = BallConfig::for_germ(&g, eps).unwrap();
    let opts = RegularityOptions::default();
    let excl = regularity::exclusions_for(&g, &cfg, &opts);
    let reg = regularity::d_regular_with(&g, &cfg, &opts, &excl);
    let tau = TauOptions { samples: 100, ..TauOptions::default() };
    let r = milnorlab::flow::tau_equivalence_probe(&g, &cfg, &reg, &excl, &tau).map_err(|e| e.to_string())?;
    ensure!(r.samples.len() == 100, "{} starting points placed, {} unplaced", r.samples.len(), r.unplaced);
    let (mut rad, mut drift, mut endpoint): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for s in &r.samples {
        ensure!(s.termination == Termination::ReachedSphere, "flow from {:?}: {}", s.start, s.termination);
        ensure!(s.radius_error <= 1e-8, "radius error {:.3e} from {:?}", s.radius_error, s.start);
        ensure!(s.phi_drift <= 1e-6, "Phi drift {:.3e} from {:?}", s.phi_drift, s.start);
        ensure!(s.radius_increasing, "radius not increasing from {:?}", s.start);
        let radial = linalg::scale(&s.start, eps / linalg::norm(&s.start));
        let e = linalg::dist(&s.end, &radial);
        ensure!(e <= 1e-6, "endpoint {:?} is {e:.3e} from the radial image", s.end);
        rad = rad.max(s.radius_error);
        drift = drift.max(s.phi_drift);
        endpoint = endpoint.max(e);
    }
    ensure!(r.verdict == Verdict::Pass, "probe verdict {}", r.verdict);
    Ok(format!(
        "100 traces reach the sphere; radius error {rad:.1e}, drift {drift:.1e}, radial endpoint error {endpoint:.1e}"
    ))
}

fn criterion_6() -> Outcome {
    let alpha = BaseCurve::Segment { from: vec![0.1], to: vec![0.6] };
    let mut out = Vec::new();
    for (label, metric) in [("identity", Metric::Identity), ("diag(1,3,0.5)", Metric::Diagonal(vec![1.0, 3.0, 0.5]))] {
        let fc = ConnectionSpec::orthogonal(builtin_catalog("projection").unwrap()).with_metric(metric);
        let gc = ConnectionSpec::orthogonal(builtin_catalog("first").unwrap());
        for x0 in [[0.1, 0.2, 0.3], [0.1, -0.4, 0.05]] {
            let r = composition_lemma_probe(&fc, &gc, &alpha, &x0, &LiftOptions::default())
                .map_err(|e| format!("{label}: {e}"))?;
            ensure!(r.sup_error <= COMPOSITION_TOL, "{label}: sup error {:.3e}", r.sup_error);
            ensure!(r.dims.iter().all(|d| *d == (1, 1, 1)), "{label}: dims {:?}", r.dims);
            ensure!(r.min_sigma > 1e-8, "{label}: smallest singular value {:.3e}", r.min_sigma);
            ensure!(r.passed, "{label}: off-horizontal component {:.3e}", r.max_off_component);
            out.push(format!("{label} {:.1e}", r.sup_error));
        }
    }
    Ok(format!("dims (1,1,1) everywhere; sup errors {}", out.join(", ")))
}

/// Sphere radii about `e1` and `2 e1` on which the psi components take the
/// values `t`; `None` when a value is outside `(0, 1)` or a radius is imaginary.
fn psi_radii(t: &[f64]) -> Option<(f64, f64)> {
    let r = |v: f64, a: f64| -> Option<f64> {
        (v > 0.0 && v < 1.0).then(|| a + 1.0 / v.ln()).filter(|r2| *r2 >= 0.0).map(f64::sqrt)
    };
    Some((r(t[0], 1.0)?, r(t[1], 4.0)?))
}

fn psi_fibre_nonempty(t: &[f64]) -> bool {
    psi_radii(t).is_some_and(|(a, b)| (b - a).abs() <= 1.0 && a + b >= 1.0)
}

fn criterion_7() -> Outcome {
    let g = builtin_psi(3).unwrap();
    let cfg = BallConfig::new(3.0, 1.0, None, 6.0).unwrap();
    let opts = FiberOptions { seeds: 10_000, ..FiberOptions::default() };
    let interior: Vec<Vec<f64>> = [(1.0, 0.5), (0.8, 0.3), (1.2, 0.4), (0.6, 0.2), (1.4, 0.6)]
        .iter()
        .map(|(a, b)| g.eval(&[*a, *b, 0.0]).unwrap())
        .collect();
    let exterior: Vec<Vec<f64>> = vec![
        vec![(-1.0f64).exp() / 2.0, (-3.0f64).exp()],
        vec![0.184, 0.9],
        vec![0.35, 0.5],
        vec![0.05, 0.9],
        vec![0.2, 0.2],
    ];
    for t in &exterior {
        ensure!(!psi_fibre_nonempty(t), "{t:?} is not an exterior target");
    }
    let axis = vec![vec![0.1, 0.0], vec![0.3, 0.0]];
    let scan = sector_scan(&g, &cfg, &interior, None, &opts);
    for e in &scan.entries {
        ensure!(e.components == Some(1), "interior {:?}: {:?} components", e.base, e.components);
    }
    let scan = sector_scan(&g, &cfg, &[exterior, axis].concat(), None, &opts);
    for e in &scan.entries {
        ensure!(e.empty, "target {:?}: {} points found", e.base, e.points);
    }
    let g2 = builtin_psi(2).unwrap();
    for (a, b) in [(1.0, 0.5), (0.7, 0.3), (1.3, 0.2)] {
        let t = g2.eval(&[a, b]).unwrap();
        let c = sample_fiber(&g2, &t, 3.0, &opts).components().map_err(|e| e.to_string())?;
        ensure!(c == 2, "n=2 target Psi({a}, {b}): {c} components");
    }
    Ok("5 interior targets connected, 5 exterior and 2 axis targets empty after 1e4 seeds, n=2 gives 2".into())
}

fn criterion_8() -> Outcome {
    let mut out = Vec::new();
    for eps in [0.1, 0.3, 0.5] {
        let r = psi_radius_report(3, eps, 64, 0).map_err(|e| e.to_string())?;
        ensure!(r.max_abs_error <= 1e-8, "eps {eps}: |r^2 - (4 - eps^2)| = {:.3e}", r.max_abs_error);
        ensure!(r.exponent_discrepancy, "eps {eps}: printed exponent not flagged");
        out.push(format!("{eps}: {:.1e}", r.max_abs_error));
    }
    Ok(format!("r^2 errors {}; exponent discrepancy flagged", out.join(", ")))
}

fn cli(args: &[&str], out: &Path) -> (i32, String) {
    let o =
        Command::new(env!("CARGO_BIN_EXE_milnorlab")).args(args).arg("--out").arg(out).output().expect("binary runs");
    let text = format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
    (o.status.code().unwrap_or(-1), text)
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .map(|it| {
            it.map(|e| {
                let e = e.unwrap();
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
            })
            .collect()
        })
        .unwrap_or_default()
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bad = tmp.path().join("bad.germ");
    std::fs::write(&bad, "map 2 -> 1 { w = x1 +; }").unwrap();
    let g = ldm(2, 2);
    let x0 = [0.1, 0.05, 0.02];
    let y0 = g.eval(&x0).unwrap();
    let constant = format!("constant:{},{}", y0[0], y0[1]);
    let bad = bad.to_string_lossy().into_owned();
    let matrix: Vec<(Vec<&str>, i32)> = vec![
        (vec!["describe", "--germ", "psi:3"], 0),
        (vec!["describe", "--germ", &bad], 2),
        (vec!["describe"], 2),
        (vec!["check", "dreg", "--germ", "catalog:ex6", "--budget", "quick"], 1),
        (vec!["check", "dreg", "--germ", LDM22, "--budget", "quick"], 0),
        (vec!["check", "linearization", "--germ", "catalog:parabola", "--homeo", "sqrt_sign"], 0),
        (vec!["check", "dhreg", "--germ", "catalog:parabola", "--homeo", "identity", "--budget", "quick"], 4),
        (vec!["flow", "--germ", LDM22, "--start", "0.1,0.05,0.02"], 0),
        (vec!["flow", "--germ", "catalog:ex6", "--start", "0.1,0,0.1"], 5),
        (vec!["lift", "--germ", LDM22, "--curve", &constant, "--start", "0.1,0.05,0.02"], 0),
        (vec!["discriminant", "--germ", "map 2 -> 1 { w = x1 + x2; }", "--budget", "quick"], 3),
    ];
    for (i, (args, want)) in matrix.iter().enumerate() {
        let (code, text) = cli(args, &tmp.path().join(format!("m{i}")));
        ensure!(code == *want, "`{}` exited {code}, expected {want}: {}", args.join(" "), text.trim());
    }
    let runs: [&[&str]; 3] = [
        &["discriminant", "--germ", "psi:3", "--budget", "quick"],
        &["check", "dreg", "--germ", "catalog:ex6", "--budget", "quick"],
        &["flow", "--germ", LDM22, "--start", "0.1,0.05,0.02", "--start", "-0.2,0.1,0.3"],
    ];
    let mut files = 0;
    for (i, args) in runs.iter().enumerate() {
        let (a, b) = (tmp.path().join(format!("a{i}")), tmp.path().join(format!("b{i}")));
        cli(args, &a);
        // The second run is single-threaded: results must not depend on scheduling.
        let mut seq = args.to_vec();
        seq.extend(["--jobs", "1"]);
        cli(&seq, &b);
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        ensure!(!sa.is_empty(), "`{}` wrote nothing", args.join(" "));
        ensure!(sa == sb, "`{}` outputs differ between runs", args.join(" "));
        files += sa.len();
    }
    Ok(format!("{} exit codes as specified; {files} files byte-identical across runs", matrix.len()))
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("Jacobian correctness", criterion_1),
        ("discriminant oracles", criterion_2),
        ("d-regularity verdicts", criterion_3),
        ("d_h-regularity", criterion_4),
        ("flow and tau probe", criterion_5),
        ("composition of connections", criterion_6),
        ("psi sector scan", criterion_7),
        ("psi tangency radius", criterion_8),
        ("determinism and exit codes", criterion_9),
    ];
    let filter: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
