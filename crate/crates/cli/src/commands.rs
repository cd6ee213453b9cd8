//! Command runners. Every report carries the run configuration and nothing
//! run-dependent (paths, timings, thread counts), so identical invocations
//! produce identical files.

use std::path::Path;

use serde::Serialize;

use milnorlab::conic::{self, ConicHomeo};
use milnorlab::critical::{
    self, compare_to_oracle, oracle_discriminant, psi_radius_report, BallConfig, Branch, OracleComparison,
    PsiRadiusReport, Sampler, SamplingMeta,
};
use milnorlab::fiber::{local_dimension, sample_fiber, FiberOptions};
use milnorlab::flow::{
    fiber_translation, flow_to_sphere, tau_equivalence_probe, ConnectionSpec, FlowTrace, LiftOptions, TauOptions,
    Termination, LIFT_TOL,
};
use milnorlab::linalg;
use milnorlab::ode::OdeOptions;
use milnorlab::regularity::{self, RegularityOptions, Verdict};
use milnorlab::report::{self, fmt_f64};
use milnorlab::{Exec, Family, MapGerm};

use crate::source;
use crate::{Budget, Cli, Cmd, Common, Failure, Format, Status, Which};

/// Configuration echoed into every report.
#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    germ: String,
    homeo: Option<String>,
    eps: f64,
    delta: f64,
    eta: Option<f64>,
    seed: u64,
    budget: Budget,
}

struct Ctx {
    germ: MapGerm,
    cfg: BallConfig,
    run: RunConfig,
    exec: Exec,
    common: Common,
}

struct Writer<'a> {
    dir: &'a Path,
    formats: &'a [Format],
    written: Vec<String>,
}

impl Writer<'_> {
    fn put(&mut self, format: Format, name: &str, content: &str) -> Result<(), Failure> {
        if !self.formats.contains(&format) {
            return Ok(());
        }
        std::fs::create_dir_all(self.dir)
            .map_err(|e| Failure::new(Status::Usage, format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(name);
        std::fs::write(&path, content).map_err(|e| Failure::new(Status::Usage, format!("{}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, kind: &str, body: &T) -> Result<(), Failure> {
        self.put(Format::Json, name, &report::json_report(kind, body))
    }
}

fn regularity_options(budget: Budget, seed: u64, exec: Exec) -> RegularityOptions {
    let base = RegularityOptions {
        seed,
        exec,
        sampler: Sampler { seed, exec, ..Sampler::default() },
        ..RegularityOptions::default()
    };
    match budget {
        Budget::Standard => base,
        Budget::Quick => RegularityOptions {
            directions: 24,
            seeds_per_direction: 2,
            sphere_points: 96,
            targets: 16,
            fiber_seeds: 16,
            sampler: Sampler { refine: 1000, scan: 15000, ..base.sampler },
            ..base
        },
        Budget::Thorough => RegularityOptions {
            directions: 128,
            seeds_per_direction: 6,
            sphere_points: 512,
            targets: 96,
            fiber_seeds: 48,
            sampler: Sampler { refine: 8000, scan: 120_000, ..base.sampler },
            ..base
        },
    }
}

fn fiber_seeds(budget: Budget) -> usize {
    match budget {
        Budget::Quick => 500,
        Budget::Standard => 2000,
        Budget::Thorough => 10_000,
    }
}

fn verdict_status(v: Verdict) -> Status {
    match v {
        Verdict::Pass => Status::Pass,
        Verdict::Fail => Status::Fail,
        Verdict::Inconclusive => Status::Inconclusive,
    }
}

fn parse_points(specs: &[String], n: usize) -> Result<Vec<Vec<f64>>, Failure> {
    specs
        .iter()
        .map(|s| {
            let p = source::parse_point(s)?;
            if p.len() != n {
                return Err(Failure::new(Status::Usage, format!("point `{s}` needs {n} coordinates")));
            }
            Ok(p)
        })
        .collect()
}

fn setup(common: &Common) -> Result<Ctx, Failure> {
    #[cfg(feature = "parallel")]
    if let Some(j) = common.jobs {
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    let exec = if common.jobs == Some(1) { Exec::Sequential } else { Exec::Parallel };
    let spec = common.germ.as_deref().ok_or_else(|| Failure::new(Status::Usage, "--germ is required"))?;
    let germ = source::load_germ(spec)?;
    let delta = match common.delta {
        Some(d) => d,
        None => critical::delta_heuristic(&germ, common.eps),
    };
    let cfg = BallConfig::new(common.eps, delta, common.eta, 2.0 * common.eps)?;
    Ok(Ctx {
        run: RunConfig {
            germ: spec.to_string(),
            homeo: common.homeo.clone(),
            eps: cfg.eps,
            delta: cfg.delta,
            eta: cfg.eta,
            seed: common.seed,
            budget: common.budget,
        },
        germ,
        cfg,
        exec,
        common: common.clone(),
    })
}

impl Ctx {
    fn homeo(&self) -> Result<ConicHomeo, Failure> {
        let spec = self
            .common
            .homeo
            .as_deref()
            .ok_or_else(|| Failure::new(Status::Usage, "--homeo is required for this check"))?;
        let mut h = source::load_homeo(spec)?;
        if let Some(eta) = self.common.eta {
            h.eta = eta;
        }
        Ok(h)
    }

    fn opts(&self) -> RegularityOptions {
        regularity_options(self.common.budget, self.common.seed, self.exec)
    }
}

pub fn run(cli: &Cli) -> Result<Status, Failure> {
    let ctx = setup(&cli.common)?;
    let mut w = Writer { dir: &cli.common.out, formats: &cli.common.format, written: Vec::new() };
    let (status, summary) = match &cli.cmd {
        Cmd::Describe => describe(&ctx, &mut w)?,
        Cmd::Discriminant => discriminant(&ctx, &mut w)?,
        Cmd::Check { which, exclude_degrees } => check(&ctx, &mut w, *which, exclude_degrees)?,
        Cmd::Flow { start, samples } => flow(&ctx, &mut w, start, *samples)?,
        Cmd::Lift { curve, start, metric, grid } => lift(&ctx, &mut w, curve, start, metric, *grid)?,
        Cmd::Fiber { target, seeds } => fiber(&ctx, &mut w, target, *seeds)?,
    };
    let files = if w.written.is_empty() { String::new() } else { format!(" [{}]", w.written.join(", ")) };
    println!("{summary}{files}");
    Ok(status)
}

type Outcome = Result<(Status, String), Failure>;

#[derive(Serialize)]
struct Describe<'a> {
    config: &'a RunConfig,
    n: usize,
    k: usize,
    names: &'a [String],
    smoothness: String,
    family: Option<String>,
    oracle: bool,
    hyperbolicity: Option<&'static str>,
    source: String,
}

fn describe(ctx: &Ctx, w: &mut Writer) -> Outcome {
    let g = &ctx.germ;
    let d = Describe {
        config: &ctx.run,
        n: g.n(),
        k: g.k(),
        names: g.names(),
        smoothness: g.smoothness().label(),
        family: g.family().map(Family::tag),
        oracle: oracle_discriminant(g, ctx.cfg.eps).is_ok(),
        // Builtin construction rejects violations, so a loaded ldm germ holds it.
        hyperbolicity: matches!(g.family(), Some(Family::Ldm { .. })).then_some("holds"),
        source: milnorlab::parser::pretty(g),
    };
    w.json("describe.json", "describe", &d)?;
    let summary = format!(
        "family {}, n={}, k={}, {}, oracle {}{}",
        d.family.as_deref().unwrap_or("custom"),
        d.n,
        d.k,
        d.smoothness,
        if d.oracle { "yes" } else { "no" },
        d.hyperbolicity.map_or(String::new(), |h| format!(", weak hyperbolicity {h}"))
    );
    Ok((Status::Pass, summary))
}

#[derive(Serialize)]
struct DiscriminantBody<'a> {
    config: &'a RunConfig,
    samples: usize,
    meta: SamplingMeta,
    oracle: Option<&'a [Branch]>,
    comparison: Option<OracleComparison>,
    radius_identity: Option<PsiRadiusReport>,
}

fn discriminant(ctx: &Ctx, w: &mut Writer) -> Outcome {
    let g = &ctx.germ;
    let opts = ctx.opts();
    let model = critical::discriminant_sample(g, &ctx.cfg, &opts.sampler);
    if model.points.is_empty() && model.oracle.is_none() {
        return Err(Failure::new(Status::Sampling, "no critical points sampled and no closed-form discriminant"));
    }
    let comparison = compare_to_oracle(&model).ok();
    let radius_identity = match g.family() {
        Some(Family::Psi { n }) if ctx.cfg.eps < 2.0 => psi_radius_report(*n, ctx.cfg.eps, 64, ctx.common.seed).ok(),
        _ => None,
    };
    if let Some(branches) = &model.oracle {
        w.put(Format::Csv, "discriminant_oracle.csv", &report::oracle_csv(branches, g.k()))?;
    }
    w.put(Format::Csv, "discriminant_samples.csv", &report::critical_csv(g, &model))?;
    let markers = if matches!(g.family(), Some(Family::Psi { .. })) { report::psi_markers() } else { Vec::new() };
    if let Some(svg) = report::discriminant_svg(&model, ctx.cfg.delta, &markers) {
        w.put(Format::Svg, "discriminant.svg", &svg)?;
    }
    let body = DiscriminantBody {
        config: &ctx.run,
        samples: model.points.len(),
        meta: model.meta,
        oracle: model.oracle.as_deref(),
        comparison: comparison.clone(),
        radius_identity,
    };
    w.json("discriminant.json", "discriminant", &body)?;
    let cmp = comparison.map_or(String::new(), |c| {
        format!(", oracle distance {:.3e} delta, coverage {:.3}", c.max_distance / ctx.cfg.delta, c.coverage)
    });
    Ok((Status::Pass, format!("discriminant: {} samples{cmp}", model.points.len())))
}

#[derive(Serialize)]
struct CheckBody<'a, T: Serialize> {
    config: &'a RunConfig,
    check: Which,
    report: T,
}

fn check(ctx: &Ctx, w: &mut Writer, which: Which, exclude_degrees: &[f64]) -> Outcome {
    let g = &ctx.germ;
    let opts = ctx.opts();
    let name = match which {
        Which::Transversality => "transversality",
        Which::Dreg => "dreg",
        Which::Dhreg => "dhreg",
        Which::Linearization => "linearization",
    };
    let file = format!("check_{name}.json");
    let kind = format!("check_{name}");
    let (verdict, detail) = match which {
        Which::Transversality | Which::Dreg => {
            let r = if which == Which::Dreg {
                regularity::d_regular(g, &ctx.cfg, &opts)
            } else {
                regularity::transversality_property(g, &ctx.cfg, &opts)
            };
            let detail = format!("{} witnesses", r.witnesses.len());
            let v = r.verdict;
            w.json(&file, &kind, &CheckBody { config: &ctx.run, check: which, report: r })?;
            (v, detail)
        }
        Which::Linearization => {
            let h = ctx.homeo()?;
            let model = critical::discriminant_sample(g, &ctx.cfg, &opts.sampler);
            let r = conic::is_linearization(&model, &h)?;
            let worst = r.branches.iter().map(|b| b.residual).fold(0.0, f64::max);
            let detail =
                format!("{} rays, worst residual {:.3e} (threshold {:.1e})", r.branches.len(), worst, r.threshold);
            let v = r.verdict;
            w.json(&file, &kind, &CheckBody { config: &ctx.run, check: which, report: r })?;
            (v, detail)
        }
        Which::Dhreg => {
            let h = ctx.homeo()?;
            let excluded: Vec<f64> = exclude_degrees.iter().map(|d| d.to_radians()).collect();
            let dirs = conic::angles_to_directions(&excluded);
            let r = conic::d_h_regular(g, &h, &ctx.cfg, &opts, (!dirs.is_empty()).then_some(dirs.as_slice()))?;
            let detail =
                format!("linearization {}, {} witnesses", r.linearization.verdict, r.regularity.witnesses.len());
            let v = r.regularity.verdict;
            w.json(&file, &kind, &CheckBody { config: &ctx.run, check: which, report: r })?;
            (v, detail)
        }
    };
    Ok((verdict_status(verdict), format!("check {name}: {verdict} ({detail})")))
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    start: &'a [f64],
    end: &'a [f64],
    termination: Termination,
    error: Option<&'a str>,
    radius_error: f64,
    phi_drift: f64,
    radius_increasing: bool,
    norm_f_increasing: bool,
    steps: usize,
    rejected: usize,
}

#[derive(Serialize)]
struct FlowBody<'a> {
    config: &'a RunConfig,
    traces: Vec<TraceSummary<'a>>,
}

fn flow(ctx: &Ctx, w: &mut Writer, starts: &[String], samples: usize) -> Outcome {
    let g = &ctx.germ;
    let opts = ctx.opts();
    let excl = regularity::exclusions_for(g, &ctx.cfg, &opts);
    if starts.is_empty() {
        let reg = regularity::d_regular_with(g, &ctx.cfg, &opts, &excl);
        let tau_opts = TauOptions { samples, seed: ctx.common.seed, exec: ctx.exec, ..TauOptions::default() };
        let r = tau_equivalence_probe(g, &ctx.cfg, &reg, &excl, &tau_opts)?;
        w.json("tau.json", "tau_probe", &CheckBody { config: &ctx.run, check: Which::Dreg, report: &r })?;
        let summary = format!(
            "tau probe: {} ({} traces, max phi error {:.3e}, {} collisions)",
            r.verdict,
            r.samples.len(),
            r.max_phi_error,
            r.collisions
        );
        return Ok((verdict_status(r.verdict), summary));
    }
    let points = parse_points(starts, g.n())?;
    let traces: Vec<FlowTrace> =
        points.iter().map(|x| flow_to_sphere(g, x, ctx.cfg.eps, &OdeOptions::default(), Some(&excl))).collect();
    for (i, t) in traces.iter().enumerate() {
        w.put(Format::Csv, &format!("flow_trace_{i}.csv"), &report::trace_csv(t))?;
    }
    let body = FlowBody {
        config: &ctx.run,
        traces: points
            .iter()
            .zip(&traces)
            .map(|(x, t)| TraceSummary {
                start: x,
                end: &t.end().x,
                termination: t.termination,
                error: t.error.as_deref(),
                radius_error: t.radius_error(),
                phi_drift: t.phi_drift,
                radius_increasing: t.radius_increasing,
                norm_f_increasing: t.norm_f_increasing,
                steps: t.steps,
                rejected: t.rejected,
            })
            .collect(),
    };
    w.json("flow.json", "flow", &body)?;
    let aborted = traces.iter().filter(|t| !t.reached()).count();
    let broken = traces.iter().filter(|t| t.reached() && !t.invariants_hold()).count();
    let status = if aborted > 0 {
        for t in traces.iter().filter(|t| !t.reached()) {
            eprintln!("milnorlab: flow aborted ({}): {}", t.termination, t.error.as_deref().unwrap_or(""));
        }
        Status::Aborted
    } else if broken > 0 {
        Status::Fail
    } else {
        Status::Pass
    };
    Ok((status, format!("flow: {} traces, {aborted} aborted, {broken} with invariant violations", traces.len())))
}

#[derive(Serialize)]
struct LiftSummary<'a> {
    start: &'a [f64],
    end: &'a [f64],
    projection_error: f64,
    max_vertical: f64,
    steps: usize,
}

#[derive(Serialize)]
struct LiftBody<'a> {
    config: &'a RunConfig,
    curve: &'a milnorlab::flow::BaseCurve,
    metric: &'a str,
    lifts: Vec<LiftSummary<'a>>,
    lipschitz: f64,
    max_projection_error: f64,
    /// `max |rho(x) - x|` over the seeds.
    max_displacement: f64,
}

fn lift(ctx: &Ctx, w: &mut Writer, curve: &str, starts: &[String], metric: &str, grid: usize) -> Outcome {
    let g = &ctx.germ;
    let alpha = source::parse_curve(curve)?;
    let conn = ConnectionSpec::orthogonal(g.clone()).with_metric(source::parse_metric(metric)?);
    let seeds = parse_points(starts, g.n())?;
    let opts = LiftOptions { grid: grid.max(1), ..LiftOptions::default() };
    let tr = fiber_translation(&conn, &alpha, &seeds, &opts, ctx.exec)?;
    for (i, l) in tr.lifts.iter().enumerate() {
        let mut csv = String::from("t");
        for j in 1..=g.n() {
            csv.push_str(&format!(",x{j}"));
        }
        csv.push('\n');
        for (t, x) in l.t.iter().zip(&l.x) {
            let cells: Vec<String> = std::iter::once(*t).chain(x.iter().copied()).map(fmt_f64).collect();
            csv.push_str(&cells.join(","));
            csv.push('\n');
        }
        w.put(Format::Csv, &format!("lift_{i}.csv"), &csv)?;
    }
    let max_displacement = tr.pairs.iter().map(|(a, b)| linalg::dist(a, b)).fold(0.0, f64::max);
    let body = LiftBody {
        config: &ctx.run,
        curve: &alpha,
        metric,
        lifts: tr
            .pairs
            .iter()
            .zip(&tr.lifts)
            .map(|((s, e), l)| LiftSummary {
                start: s,
                end: e,
                projection_error: l.projection_error,
                max_vertical: l.max_vertical,
                steps: l.steps,
            })
            .collect(),
        lipschitz: tr.lipschitz,
        max_projection_error: tr.max_projection_error,
        max_displacement,
    };
    w.json("lift.json", "lift", &body)?;
    let status = if tr.max_projection_error <= LIFT_TOL { Status::Pass } else { Status::Fail };
    Ok((
        status,
        format!(
            "lift: {} seeds, projection error {:.3e}, max displacement {:.6e}",
            seeds.len(),
            tr.max_projection_error,
            max_displacement
        ),
    ))
}

#[derive(Serialize)]
struct FiberBody<'a> {
    config: &'a RunConfig,
    target: &'a [f64],
    points: usize,
    rejected: usize,
    seeds: usize,
    linking_radius: f64,
    components: Option<usize>,
    local_dimension: Option<f64>,
}

fn fiber(ctx: &Ctx, w: &mut Writer, target: &str, seeds: Option<usize>) -> Outcome {
    let g = &ctx.germ;
    let t = source::parse_point(target)?;
    if t.len() != g.k() {
        return Err(Failure::new(Status::Usage, format!("target needs {} coordinates", g.k())));
    }
    let opts = FiberOptions {
        seeds: seeds.unwrap_or_else(|| fiber_seeds(ctx.common.budget)),
        seed: ctx.common.seed,
        exec: ctx.exec,
        ..FiberOptions::default()
    };
    let cloud = sample_fiber(g, &t, ctx.cfg.eps, &opts);
    let components = cloud.components().ok();
    w.put(Format::Csv, "fiber_cloud.csv", &report::cloud_csv(&cloud, g.n()))?;
    w.json(
        "fiber.json",
        "fiber",
        &FiberBody {
            config: &ctx.run,
            target: &t,
            points: cloud.points.len(),
            rejected: cloud.rejected,
            seeds: cloud.seeds,
            linking_radius: cloud.linking_radius,
            components,
            local_dimension: local_dimension(&cloud.points),
        },
    )?;
    let summary = match components {
        Some(c) => format!("fiber: {} points, {c} components", cloud.points.len()),
        None => format!("fiber: empty after {} seeds", cloud.seeds),
    };
    Ok((Status::Pass, summary))
}
