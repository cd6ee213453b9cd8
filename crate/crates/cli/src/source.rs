//! Parsing of germ, homeo, point and curve arguments.

use std::path::Path;

use milnorlab::conic::ConicHomeo;
use milnorlab::flow::{BaseCurve, Metric};
use milnorlab::{builtin_catalog, builtin_ldm, builtin_psi, parser, Error, MapGerm, Result};

/// `psi:N`, `ldm:P,Q:(a,b),(c,d),..`, `catalog:NAME`, a file holding germ
/// DSL, or inline DSL text.
pub fn load_germ(spec: &str) -> Result<MapGerm> {
    let spec = spec.trim();
    if let Some(n) = spec.strip_prefix("psi:") {
        let n = n.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad psi dimension `{n}`")))?;
        return builtin_psi(n);
    }
    if let Some(rest) = spec.strip_prefix("ldm:") {
        let (pq, lambdas) =
            rest.split_once(':').ok_or_else(|| Error::InvalidConfig("ldm needs `ldm:P,Q:(a,b),..`".into()))?;
        let (p, q) = pq
            .split_once(',')
            .and_then(|(p, q)| Some((p.trim().parse().ok()?, q.trim().parse().ok()?)))
            .ok_or_else(|| Error::InvalidConfig(format!("bad exponents `{pq}`")))?;
        return builtin_ldm(p, q, &parse_pairs(lambdas)?);
    }
    if let Some(name) = spec.strip_prefix("catalog:") {
        return builtin_catalog(name.trim());
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{spec}: {e}")))?;
        return parser::parse(&text);
    }
    if spec.starts_with("map") || spec.contains('(') {
        return parser::parse(spec);
    }
    Err(Error::InvalidConfig(format!("`{spec}` is neither a builtin nor a readable germ file")))
}

fn parse_pairs(s: &str) -> Result<Vec<(f64, f64)>> {
    let bad = || Error::InvalidConfig(format!("bad coefficient list `{s}`"));
    let mut out = Vec::new();
    for chunk in s.split(')') {
        let chunk = chunk.trim().trim_start_matches(',').trim();
        if chunk.is_empty() {
            continue;
        }
        let inner = chunk.strip_prefix('(').ok_or_else(bad)?;
        let v = parse_point(inner)?;
        if v.len() != 2 {
            return Err(bad());
        }
        out.push((v[0], v[1]));
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

/// Catalog name, a file holding homeo DSL, or inline DSL text.
pub fn load_homeo(spec: &str) -> Result<ConicHomeo> {
    let path = Path::new(spec.trim());
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{spec}: {e}")))?;
        return ConicHomeo::resolve(&text);
    }
    ConicHomeo::resolve(spec)
}

/// Comma-separated reals.
pub fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::InvalidConfig(format!("bad number `{}` in `{s}`", v.trim())))
        })
        .collect()
}

fn parse_points(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';').map(parse_point).collect()
}

/// `constant:a,b`, `segment:a,b;c,d`, `circle:cx,cy;r`, `polyline:p;q;..`.
pub fn parse_curve(spec: &str) -> Result<BaseCurve> {
    let (kind, body) =
        spec.split_once(':').ok_or_else(|| Error::InvalidConfig(format!("curve `{spec}` needs a `kind:` prefix")))?;
    let pts = parse_points(body)?;
    let bad = || Error::InvalidConfig(format!("curve `{spec}` has the wrong number of points"));
    match (kind.trim(), pts.len()) {
        ("constant", 1) => Ok(BaseCurve::Constant { at: pts[0].clone() }),
        ("segment", 2) => Ok(BaseCurve::Segment { from: pts[0].clone(), to: pts[1].clone() }),
        ("circle", 2) if pts[1].len() == 1 => Ok(BaseCurve::Circle { center: pts[0].clone(), radius: pts[1][0] }),
        ("polyline", m) if m >= 2 => Ok(BaseCurve::Polyline { vertices: pts }),
        ("constant" | "segment" | "circle" | "polyline", _) => Err(bad()),
        (other, _) => Err(Error::InvalidConfig(format!("unknown curve kind `{other}`"))),
    }
}

/// `identity` or `diag:d1,..,dn`.
pub fn parse_metric(spec: &str) -> Result<Metric> {
    match spec.trim() {
        "identity" => Ok(Metric::Identity),
        s => match s.strip_prefix("diag:") {
            Some(d) => Ok(Metric::Diagonal(parse_point(d)?)),
            None => Err(Error::InvalidConfig(format!("unknown metric `{s}`"))),
        },
    }
}
