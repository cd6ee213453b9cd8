//! Deterministic exports: JSON reports, CSV tables and planar SVG plots.
//!
//! CSV floats use `{:.16e}` (17 significant digits); JSON floats use the
//! shortest round-trip representation. Object keys are sorted.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::critical::{rank_defect, Branch, DiscriminantModel, RANK_TOL};
use crate::fiber::FiberCloud;
use crate::flow::FlowTrace;
use crate::germ::MapGerm;
use crate::linalg;

pub const SCHEMA_VERSION: u64 = 1;

/// Wraps `body` in the shared envelope `{"milnorlab": 1, "kind": .., ..}`.
/// Non-object bodies land under `"data"`.
pub fn json_value<T: Serialize>(kind: &str, body: &T) -> Value {
    let mut map = Map::new();
    map.insert("milnorlab".into(), Value::from(SCHEMA_VERSION));
    map.insert("kind".into(), Value::from(kind));
    match serde_json::to_value(body).expect("report types serialise to JSON") {
        Value::Object(fields) => map.extend(fields),
        other => {
            map.insert("data".into(), other);
        }
    }
    Value::Object(map)
}

pub fn json_report<T: Serialize>(kind: &str, body: &T) -> String {
    let mut s = serde_json::to_string_pretty(&json_value(kind, body)).expect("values serialise");
    s.push('\n');
    s
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

fn row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let cells: Vec<String> = cells.into_iter().collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// Parameter samples per oracle branch in [`oracle_csv`].
pub const ORACLE_SAMPLES: usize = 400;

/// Oracle branches as `branch,s,u1..uk`, `ORACLE_SAMPLES + 1` uniform
/// parameter values per branch including both ends.
pub fn oracle_csv(branches: &[Branch], k: usize) -> String {
    let mut out = String::new();
    let mut head = vec!["branch".to_string(), "s".to_string()];
    head.extend(header("u", k));
    row(&mut out, head);
    for b in branches {
        let (lo, hi) = b.domain();
        let count = if lo == hi { 0 } else { ORACLE_SAMPLES };
        for i in 0..=count {
            let s = if count == 0 { lo } else { lo + (hi - lo) * i as f64 / count as f64 };
            let mut cells = vec![b.label().replace(',', ";"), fmt_f64(s)];
            cells.extend(b.eval(s).into_iter().map(fmt_f64));
            row(&mut out, cells);
        }
    }
    out
}

/// Sampled critical data as `x1..xn,u1..uk,defect`.
pub fn critical_csv(germ: &MapGerm, model: &DiscriminantModel) -> String {
    let mut out = String::new();
    let mut head = header("x", germ.n());
    head.extend(header("u", germ.k()));
    head.push("defect".into());
    row(&mut out, head);
    for p in &model.points {
        let defect = rank_defect(germ, &p.x, RANK_TOL).unwrap_or(0);
        let mut cells: Vec<String> = p.x.iter().chain(&p.y).copied().map(fmt_f64).collect();
        cells.push(defect.to_string());
        row(&mut out, cells);
    }
    out
}

/// `t,x1..xn,phi1..phik,norm_x,norm_f`.
pub fn trace_csv(trace: &FlowTrace) -> String {
    let mut out = String::new();
    let (n, k) = trace.states.first().map_or((0, 0), |s| (s.x.len(), s.phi.len()));
    let mut head = vec!["t".to_string()];
    head.extend(header("x", n));
    head.extend(header("phi", k));
    head.extend(["norm_x".to_string(), "norm_f".to_string()]);
    row(&mut out, head);
    for s in &trace.states {
        let mut cells = vec![fmt_f64(s.t)];
        cells.extend(s.x.iter().chain(&s.phi).copied().map(fmt_f64));
        cells.extend([fmt_f64(s.norm_x), fmt_f64(s.norm_f)]);
        row(&mut out, cells);
    }
    out
}

/// `x1..xn`, one row per cloud point.
pub fn cloud_csv(cloud: &FiberCloud, n: usize) -> String {
    points_csv(&cloud.points, "x", n)
}

/// Points with columns `{prefix}1..{prefix}dim`.
pub fn points_csv(points: &[Vec<f64>], prefix: &str, dim: usize) -> String {
    let mut out = String::new();
    row(&mut out, header(prefix, dim));
    for p in points {
        row(&mut out, p.iter().copied().map(fmt_f64));
    }
    out
}

/// A labelled point drawn as a cross.
#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub at: [f64; 2],
    pub label: String,
}

/// The corners of the psi discriminant loop.
pub fn psi_markers() -> Vec<Marker> {
    let e = |v: f64| v.exp();
    vec![
        Marker { at: [e(-1.0), 0.0], label: "(e^-1, 0)".into() },
        Marker { at: [0.0, e(-0.25)], label: "(0, e^-1/4)".into() },
        Marker { at: [e(-1.0), e(-1.0 / 3.0)], label: "(e^-1, e^-1/3)".into() },
    ]
}

const CANVAS: f64 = 640.0;
const MARGIN: f64 = 60.0;

/// Planar plot of discriminant samples (dots), oracle branches (blue
/// polylines clipped to `B_radius`) and markers. `None` unless `k = 2`.
pub fn discriminant_svg(model: &DiscriminantModel, radius: f64, markers: &[Marker]) -> Option<String> {
    if model.k != 2 {
        return None;
    }
    let branches: Vec<(bool, Vec<Vec<f64>>)> = model
        .oracle
        .iter()
        .flatten()
        .map(|b| (matches!(b, Branch::Origin { .. }), b.discretize_in_ball(radius, 600)))
        .collect();
    let all = model
        .points
        .iter()
        .map(|p| [p.y[0], p.y[1]])
        .chain(branches.iter().flat_map(|(_, pts)| pts.iter().map(|p| [p[0], p[1]])))
        .chain(markers.iter().map(|m| m.at))
        .chain(std::iter::once([0.0, 0.0]));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in all {
        for i in 0..2 {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
    let scale = (CANVAS - 2.0 * MARGIN) / span;
    let map = |p: [f64; 2]| (MARGIN + (p[0] - lo[0]) * scale, CANVAS - MARGIN - (p[1] - lo[1]) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{c}" height="{c}" viewBox="0 0 {c} {c}">"#,
        c = CANVAS
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (ox, oy) = map([0.0, 0.0]);
    let _ = writeln!(
        s,
        r##"<g stroke="#999" stroke-width="1"><line x1="{:.3}" y1="{oy:.3}" x2="{:.3}" y2="{oy:.3}"/><line x1="{ox:.3}" y1="{:.3}" x2="{ox:.3}" y2="{:.3}"/></g>"##,
        MARGIN / 2.0,
        CANVAS - MARGIN / 2.0,
        CANVAS - MARGIN / 2.0,
        MARGIN / 2.0
    );
    for (origin, pts) in &branches {
        if *origin || pts.len() < 2 {
            continue;
        }
        let mut d = String::new();
        let mut prev: Option<&Vec<f64>> = None;
        for p in pts {
            let (x, y) = map([p[0], p[1]]);
            // Break the path where clipping to the ball skipped a stretch.
            let jump = prev.is_none_or(|q| linalg::dist(q, p) > 0.05 * radius);
            let _ = write!(d, "{}{x:.3},{y:.3} ", if jump { "M" } else { "L" });
            prev = Some(p);
        }
        let _ = writeln!(s, r##"<path d="{}" fill="none" stroke="#1f4fd8" stroke-width="2"/>"##, d.trim_end());
    }
    let _ = writeln!(s, r##"<g fill="#d62728">"##);
    for p in &model.points {
        let (x, y) = map([p.y[0], p.y[1]]);
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{y:.3}" r="1.5"/>"#);
    }
    let _ = writeln!(s, "</g>");
    for m in markers {
        let (x, y) = map(m.at);
        let _ = writeln!(
            s,
            r##"<g stroke="black" stroke-width="1.5"><line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/><line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}"/></g><text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="13">{}</text>"##,
            x - 5.0,
            y - 5.0,
            x + 5.0,
            y + 5.0,
            x - 5.0,
            y + 5.0,
            x + 5.0,
            y - 5.0,
            x + 8.0,
            y - 8.0,
            m.label
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::psi_curve;

    #[test]
    fn envelope_has_version_and_sorted_keys() {
        #[derive(Serialize)]
        struct Body {
            zeta: f64,
            alpha: Vec<u8>,
        }
        let s = json_report("demo", &Body { zeta: 0.1, alpha: vec![1] });
        let v: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["milnorlab"], 1);
        assert_eq!(v["kind"], "demo");
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
        let wrapped = json_value("list", &vec![1, 2]);
        assert_eq!(wrapped["data"], serde_json::json!([1, 2]));
    }

    #[test]
    fn floats_keep_17_digits() {
        let s = fmt_f64(std::f64::consts::PI);
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
    }

    #[test]
    fn psi_oracle_csv_hits_the_corner() {
        let csv = oracle_csv(&[Branch::PsiCurve], 2);
        let corner = psi_curve(1.0);
        let hit = csv.lines().skip(1).any(|l| {
            let c: Vec<&str> = l.split(',').collect();
            let (s, u, v): (f64, f64, f64) = (c[1].parse().unwrap(), c[2].parse().unwrap(), c[3].parse().unwrap());
            s == 1.0 && (u - corner[0]).abs() < 1e-9 && (v - corner[1]).abs() < 1e-9
        });
        assert!(hit);
        assert!(csv.starts_with("branch,s,u1,u2\n"));
    }

    #[test]
    fn svg_draws_markers_and_branches() {
        let model = DiscriminantModel {
            k: 2,
            eps: 1.0,
            delta: 1.0,
            points: vec![],
            oracle: Some(vec![Branch::PsiCurve, Branch::Origin { k: 2 }]),
            meta: Default::default(),
        };
        let svg = discriminant_svg(&model, 1.0, &psi_markers()).unwrap();
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains("(e^-1, e^-1/3)"));
    }
}
