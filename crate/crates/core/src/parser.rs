//! Text format for germs and conic homeomorphisms.
//!
//! ```text
//! # the germ (x^2 z + y^3, x)
//! map 3 -> 2 { u = x1^2*x3 + x2^3; v = x1; }
//! ldm(2,2; (2,1),(-1,1),(0,-1))
//! psi(3)
//! catalog("parabola")
//! homeo 2 { fwd { u = x1; v = cbrt(x2); } inv { u = x1; v = x2^3; } eta = 0.3; }
//! ```
//!
//! Binding strength: `^` (integer literal exponent, applied once), then unary
//! minus, then `*` `/`, then `+` `-`. A parenthesised negative literal such
//! as `(-2)` is a single constant.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expr::{Expr, Side};
use crate::germ::{self, Family, MapGerm, Smoothness};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &["->", ">=", ">", "{", "}", "(", ")", ";", ",", "=", "+", "-", "*", "/", "^", "?", ":"];

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let syntax = |line, col, expected: &str| Error::Syntax { line, col, expected: expected.to_string() };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v: f64 = s.parse().map_err(|_| syntax(tl, tc, "a decimal number"))?;
            Tok::Num(v)
        } else if c.is_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c == '"' {
            i += 1;
            while i < chars.len() && chars[i] != '"' && chars[i] != '\n' {
                i += 1;
            }
            if i >= chars.len() || chars[i] != '"' {
                return Err(syntax(tl, tc, "closing quote"));
            }
            i += 1;
            Tok::Str(chars[start + 1..i - 1].iter().collect())
        } else {
            let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = SYMBOLS.iter().find(|s| rest.starts_with(**s)).ok_or_else(|| syntax(tl, tc, "a token"))?;
            i += sym.chars().count();
            Tok::Sym(sym)
        };
        col += i - start;
        out.push(Token { tok, line: tl, col: tc });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Domain dimension, when known, for variable range checks.
    n: Option<usize>,
}

impl Parser {
    fn new(text: &str) -> Result<Parser> {
        Ok(Parser { toks: lex(text)?, pos: 0, n: None })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        &self.toks[(self.pos + off).min(self.toks.len() - 1)].tok
    }

    fn err(&self, expected: &str) -> Error {
        let t = &self.toks[self.pos];
        Error::Syntax { line: t.line, col: t.col, expected: expected.to_string() }
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(s) if *s == sym) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<()> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.err(&format!("`{sym}`")))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err(&format!("`{kw}`"))),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("an identifier")),
        }
    }

    fn uint(&mut self) -> Result<u32> {
        match *self.peek() {
            Tok::Num(v) if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 => {
                self.bump();
                Ok(v as u32)
            }
            _ => Err(self.err("a non-negative integer")),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let neg = self.eat("-");
        let v = match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                v
            }
            _ => return Err(self.err("a number")),
        };
        let v = if self.eat("/") {
            match *self.peek() {
                Tok::Num(d) if d != 0.0 => {
                    self.bump();
                    v / d
                }
                _ => return Err(self.err("a non-zero denominator")),
            }
        } else {
            v
        };
        Ok(if neg { -v } else { v })
    }

    fn at_eof(&self) -> Result<()> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.err("end of input"))
        }
    }

    // expr := term (("+" | "-") term)*
    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat("+") {
                lhs = Expr::add(lhs, self.term()?);
            } else if self.eat("-") {
                lhs = Expr::sub(lhs, self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    // term := unary (("*" | "/") unary)*
    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat("*") {
                lhs = Expr::mul(lhs, self.unary()?);
            } else if self.eat("/") {
                lhs = Expr::div(lhs, self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat("-") {
            Ok(Expr::neg(self.unary()?))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat("^") {
            let e = self.uint()?;
            if matches!(self.peek(), Tok::Sym("^")) {
                return Err(self.err("an operator other than a second `^` (parenthesise the base)"));
            }
            Ok(Expr::pow(base, e))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::c(v))
            }
            Tok::Sym("(") => {
                if let (Tok::Sym("-"), Tok::Num(v), Tok::Sym(")")) =
                    (self.peek_at(1).clone(), self.peek_at(2).clone(), self.peek_at(3).clone())
                {
                    self.pos += 4;
                    return Ok(Expr::c(-v));
                }
                self.bump();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(idx) = variable_index(&name) {
                    if let Some(n) = self.n {
                        if idx >= n {
                            return Err(Error::Arity(format!("variable {name} exceeds n = {n}")));
                        }
                    }
                    self.bump();
                    return Ok(Expr::var(idx));
                }
                self.bump();
                self.call(&name)
            }
            _ => Err(self.err("a number, variable, function call or `(`")),
        }
    }

    fn call(&mut self, name: &str) -> Result<Expr> {
        self.expect("(")?;
        let e = match name {
            "exp" | "ln" | "sqrt" | "cbrt" | "abs" | "bump" => {
                let a = self.expr()?;
                match name {
                    "exp" => Expr::exp(a),
                    "ln" => Expr::ln(a),
                    "sqrt" => Expr::sqrt(a),
                    "cbrt" => Expr::cbrt(a),
                    "abs" => Expr::abs(a),
                    _ => Expr::bump(a),
                }
            }
            "root" => {
                let a = self.expr()?;
                self.expect(",")?;
                let m = self.uint()?;
                if m < 2 {
                    return Err(Error::Arity(format!("root order must be >= 2, got {m}")));
                }
                Expr::root(a, m)
            }
            "piecewise" => {
                let cond = self.expr()?;
                let side = if self.eat(">=") {
                    Side::Closed
                } else if self.eat(">") {
                    Side::Open
                } else {
                    return Err(self.err("`>=` or `>`"));
                };
                match *self.peek() {
                    Tok::Num(0.0) => {
                        self.bump();
                    }
                    _ => return Err(self.err("`0` on the right of the condition")),
                }
                self.expect("?")?;
                let a = self.expr()?;
                self.expect(":")?;
                let b = self.expr()?;
                Expr::guard(cond, side, a, b)
            }
            _ => {
                self.pos -= 2;
                return Err(
                    self.err("a known function (exp, ln, sqrt, cbrt, root, abs, bump, piecewise) or variable x1..xn")
                );
            }
        };
        self.expect(")")?;
        Ok(e)
    }

    fn assignments(&mut self, k: usize) -> Result<(Vec<String>, Vec<Expr>)> {
        self.expect("{")?;
        let mut names = Vec::new();
        let mut comps = Vec::new();
        while !self.eat("}") {
            names.push(self.ident()?);
            self.expect("=")?;
            comps.push(self.expr()?);
            self.expect(";")?;
        }
        if comps.len() != k {
            return Err(Error::Arity(format!("header declares {k} components, found {}", comps.len())));
        }
        Ok((names, comps))
    }

    fn germ(&mut self) -> Result<MapGerm> {
        let head = self.ident()?;
        let g = match head.as_str() {
            "map" => {
                let n = self.uint()? as usize;
                self.expect("->")?;
                let k = self.uint()? as usize;
                if n == 0 || k == 0 {
                    return Err(Error::Arity("dimensions must be positive".into()));
                }
                self.n = Some(n);
                let (names, comps) = self.assignments(k)?;
                let smooth = infer_smoothness(&comps);
                MapGerm::new(n, names, comps, smooth, None)?
            }
            "ldm" => {
                self.expect("(")?;
                let p = self.uint()?;
                self.expect(",")?;
                let q = self.uint()?;
                self.expect(";")?;
                let mut lambdas = Vec::new();
                loop {
                    self.expect("(")?;
                    let a = self.number()?;
                    self.expect(",")?;
                    let b = self.number()?;
                    self.expect(")")?;
                    lambdas.push((a, b));
                    if !self.eat(",") {
                        break;
                    }
                }
                self.expect(")")?;
                germ::builtin_ldm(p, q, &lambdas)?
            }
            "psi" => {
                self.expect("(")?;
                let n = self.uint()? as usize;
                self.expect(")")?;
                germ::builtin_psi(n)?
            }
            "catalog" => {
                self.expect("(")?;
                let name = match self.bump() {
                    Tok::Str(s) => s,
                    _ => {
                        self.pos -= 1;
                        return Err(self.err("a quoted catalog name"));
                    }
                };
                self.expect(")")?;
                germ::builtin_catalog(&name)?
            }
            _ => {
                self.pos -= 1;
                return Err(self.err("`map`, `ldm`, `psi` or `catalog`"));
            }
        };
        self.at_eof()?;
        Ok(g)
    }
}

fn variable_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return None;
    }
    digits.parse::<usize>().ok().map(|i| i - 1)
}

pub fn infer_smoothness(comps: &[Expr]) -> Smoothness {
    let text: String = comps.iter().map(pretty_expr).collect();
    if text.contains("bump(") {
        Smoothness::Smooth
    } else if ["abs(", "piecewise(", "sqrt(", "cbrt(", "root("].iter().any(|f| text.contains(f)) {
        Smoothness::C(1)
    } else {
        Smoothness::Analytic
    }
}

/// Parses a germ from DSL text.
pub fn parse(text: &str) -> Result<MapGerm> {
    Parser::new(text)?.germ()
}

/// Parses a single expression in variables `x1..`.
pub fn parse_expr(text: &str) -> Result<Expr> {
    let mut p = Parser::new(text)?;
    let e = p.expr()?;
    p.at_eof()?;
    Ok(e)
}

/// A parsed `homeo` block; the conic module turns it into a homeomorphism.
#[derive(Debug, Clone, PartialEq)]
pub struct HomeoSource {
    pub k: usize,
    pub forward: Vec<Expr>,
    pub inverse: Vec<Expr>,
    pub eta: Option<f64>,
}

pub fn parse_homeo(text: &str) -> Result<HomeoSource> {
    let mut p = Parser::new(text)?;
    p.expect_keyword("homeo")?;
    let k = p.uint()? as usize;
    if k == 0 {
        return Err(Error::Arity("homeo dimension must be positive".into()));
    }
    p.n = Some(k);
    p.expect("{")?;
    p.expect_keyword("fwd")?;
    let (_, forward) = p.assignments(k)?;
    p.expect_keyword("inv")?;
    let (_, inverse) = p.assignments(k)?;
    let mut eta = None;
    if matches!(p.peek(), Tok::Ident(s) if s == "eta") {
        p.bump();
        p.expect("=")?;
        eta = Some(p.number()?);
        p.expect(";")?;
    }
    p.expect("}")?;
    p.at_eof()?;
    Ok(HomeoSource { k, forward, inverse, eta })
}

/// Canonical text for a germ. Builtins keep their builtin form.
pub fn pretty(g: &MapGerm) -> String {
    match g.family() {
        Some(Family::Ldm { p, q, lambdas }) => {
            let pairs: Vec<String> = lambdas.iter().map(|(a, b)| format!("({},{})", number(*a), number(*b))).collect();
            format!("ldm({p},{q}; {})", pairs.join(","))
        }
        Some(Family::Psi { n }) => format!("psi({n})"),
        Some(Family::Catalog(name)) => format!("catalog(\"{name}\")"),
        _ => pretty_map(g.n(), g.names(), g.components()),
    }
}

fn pretty_map(n: usize, names: &[String], comps: &[Expr]) -> String {
    let mut s = format!("map {n} -> {} {{\n", comps.len());
    for (name, c) in names.iter().zip(comps) {
        let _ = writeln!(s, "  {name} = {};", pretty_expr(c));
    }
    s.push('}');
    s
}

pub fn pretty_homeo(h: &HomeoSource) -> String {
    let block = |title: &str, comps: &[Expr]| {
        let names = germ::default_names(comps.len());
        let body: Vec<String> = names.iter().zip(comps).map(|(n, c)| format!("{n} = {};", pretty_expr(c))).collect();
        format!("  {title} {{ {} }}\n", body.join(" "))
    };
    let mut s = format!("homeo {} {{\n", h.k);
    s += &block("fwd", &h.forward);
    s += &block("inv", &h.inverse);
    if let Some(eta) = h.eta {
        let _ = writeln!(s, "  eta = {};", number(eta));
    }
    s.push('}');
    s
}

/// Shortest round-trip decimal, integers without a fractional part, very
/// small or large magnitudes in exponent form.
pub fn number(v: f64) -> String {
    let a = v.abs();
    if v.fract() == 0.0 && a < 1e15 {
        format!("{}", v as i64)
    } else if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

// Binding levels, loosest first.
const SUM: u8 = 0;
const PRODUCT: u8 = 1;
const UNARY: u8 = 2;
const POWER: u8 = 3;
const ATOM: u8 = 4;

fn level(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => SUM,
        Expr::Mul(..) | Expr::Div(..) => PRODUCT,
        Expr::Neg(_) => UNARY,
        Expr::Pow(..) => POWER,
        _ => ATOM,
    }
}

/// Prints an expression with the fewest parentheses that reparse to the same
/// tree.
pub fn pretty_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(&mut s, e, SUM);
    s
}

fn write_expr(s: &mut String, e: &Expr, min: u8) {
    if level(e) < min {
        s.push('(');
        if let Expr::Neg(inner) = e {
            s.push('-');
            match **inner {
                // `(-2)` would read back as a single constant.
                Expr::Const(c) if !c.is_sign_negative() => {
                    let _ = write!(s, "({})", number(c));
                }
                _ => write_expr(s, inner, UNARY),
            }
        } else {
            write_expr(s, e, SUM);
        }
        s.push(')');
        return;
    }
    let func = |s: &mut String, name: &str, a: &Expr| {
        s.push_str(name);
        s.push('(');
        write_expr(s, a, SUM);
        s.push(')');
    };
    match e {
        Expr::Const(v) => {
            if v.is_sign_negative() {
                let _ = write!(s, "(-{})", number(-v));
            } else {
                s.push_str(&number(*v));
            }
        }
        Expr::Var(i) => {
            let _ = write!(s, "x{}", i + 1);
        }
        Expr::Neg(a) => {
            s.push('-');
            write_expr(s, a, UNARY);
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            write_expr(s, a, SUM);
            s.push_str(if matches!(e, Expr::Add(..)) { " + " } else { " - " });
            write_expr(s, b, PRODUCT);
        }
        Expr::Mul(a, b) | Expr::Div(a, b) => {
            write_expr(s, a, PRODUCT);
            s.push(if matches!(e, Expr::Mul(..)) { '*' } else { '/' });
            write_expr(s, b, UNARY);
        }
        Expr::Pow(a, n) => {
            write_expr(s, a, ATOM);
            let _ = write!(s, "^{n}");
        }
        Expr::Exp(a) => func(s, "exp", a),
        Expr::Ln(a) => func(s, "ln", a),
        Expr::Sqrt(a) => func(s, "sqrt", a),
        Expr::Cbrt(a) => func(s, "cbrt", a),
        Expr::Abs(a) => func(s, "abs", a),
        Expr::Bump(a) => func(s, "bump", a),
        Expr::Root(a, m) => {
            s.push_str("root(");
            write_expr(s, a, SUM);
            let _ = write!(s, ", {m})");
        }
        Expr::Guard { cond, side, then, otherwise } => {
            s.push_str("piecewise(");
            write_expr(s, cond, SUM);
            s.push_str(if *side == Side::Closed { " >= 0 ? " } else { " > 0 ? " });
            write_expr(s, then, SUM);
            s.push_str(" : ");
            write_expr(s, otherwise, SUM);
            s.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::germ::{builtin_catalog, builtin_ldm};

    #[test]
    fn map_form_equals_catalog_ex6() {
        let g = parse("map 3 -> 2 { u = x1^2*x3 + x2^3; v = x1; }").unwrap();
        let c = builtin_catalog("ex6").unwrap();
        assert_eq!(g.components(), c.components());
        assert_eq!(g.family(), None);
    }

    #[test]
    fn missing_semicolon_is_syntax_error() {
        let e = parse("map 2 -> 2 { u = x1; v = x1 }").unwrap_err();
        assert_eq!(e, Error::Syntax { line: 1, col: 29, expected: "`;`".into() });
    }

    #[test]
    fn wrong_component_count_is_arity_error() {
        assert!(matches!(parse("map 2 -> 2 { u = x1; }"), Err(Error::Arity(_))));
        assert!(matches!(parse("map 2 -> 1 { u = x3; }"), Err(Error::Arity(_))));
    }

    #[test]
    fn ldm_builtin_matches_constructor() {
        let g = parse("ldm(2,2; (2,1),(-1,1),(0,-1))").unwrap();
        let b = builtin_ldm(2, 2, &[(2.0, 1.0), (-1.0, 1.0), (0.0, -1.0)]).unwrap();
        assert_eq!(g, b);
        assert_eq!(pretty(&g), "ldm(2,2; (2,1),(-1,1),(0,-1))");
    }

    #[test]
    fn builtins_print_in_builtin_form() {
        assert_eq!(pretty(&parse("psi(3)").unwrap()), "psi(3)");
        assert_eq!(pretty(&parse("catalog(\"ex6\")").unwrap()), "catalog(\"ex6\")");
    }

    #[test]
    fn zero_component_prints_as_zero() {
        let g = parse("map 2 -> 2 { u = 0; v = x1; }").unwrap();
        assert_eq!(pretty(&g), "map 2 -> 2 {\n  u = 0;\n  v = x1;\n}");
    }

    #[test]
    fn precedence() {
        assert_eq!(parse_expr("-x1^2").unwrap(), Expr::neg(Expr::pow(Expr::var(0), 2)));
        assert_eq!(parse_expr("x1 + x2*x3").unwrap(), Expr::add(Expr::var(0), Expr::mul(Expr::var(1), Expr::var(2))));
        assert_eq!(parse_expr("-x1*x2").unwrap(), Expr::mul(Expr::neg(Expr::var(0)), Expr::var(1)));
        assert_eq!(parse_expr("x1 - x2 - x3").unwrap(), Expr::sub(Expr::sub(Expr::var(0), Expr::var(1)), Expr::var(2)));
        assert!(parse_expr("x1^2^3").is_err());
    }

    #[test]
    fn golden_pretty_forms() {
        let cases = [
            ("x1 - (x2 - x3)", "x1 - (x2 - x3)"),
            ("(x1*x2)^3", "(x1*x2)^3"),
            ("(-x1)^2", "(-x1)^2"),
            ("(-2)*x1", "(-2)*x1"),
            ("-(2)", "-2"),
            ("(-(2))^2", "(-(2))^2"),
            ("x1/(x2*x3)", "x1/(x2*x3)"),
            ("piecewise(x1 > 0 ? 1 - sqrt(1 + 1/ln(x1)) : 0)", "piecewise(x1 > 0 ? 1 - sqrt(1 + 1/ln(x1)) : 0)"),
            ("root(x1, 4) + 1e-20", "root(x1, 4) + 1e-20"),
            ("0.5*x1", "0.5*x1"),
        ];
        for (src, want) in cases {
            let e = parse_expr(src).unwrap();
            assert_eq!(pretty_expr(&e), want, "{src}");
            assert_eq!(parse_expr(want).unwrap(), e);
        }
    }

    #[test]
    fn comments_and_whitespace() {
        let g = parse("# header\nmap 2 -> 1 {\n  w = x1   # first\n ;\n}\n").unwrap();
        assert_eq!(g.components(), &[Expr::var(0)]);
    }

    #[test]
    fn homeo_round_trip() {
        let src = "homeo 2 { fwd { u = x1; v = cbrt(x2); } inv { u = x1; v = x2^3; } eta = 0.3; }";
        let h = parse_homeo(src).unwrap();
        assert_eq!(h.eta, Some(0.3));
        assert_eq!(parse_homeo(&pretty_homeo(&h)).unwrap(), h);
    }

    #[test]
    fn smoothness_inferred() {
        assert_eq!(parse("map 2 -> 1 { u = bump(x1); }").unwrap().smoothness(), Smoothness::Smooth);
        assert_eq!(parse("map 2 -> 1 { u = x1*abs(x1); }").unwrap().smoothness(), Smoothness::C(1));
        assert_eq!(parse("map 2 -> 1 { u = x1*x2; }").unwrap().smoothness(), Smoothness::Analytic);
    }
}
