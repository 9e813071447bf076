//! A small expression language for user-defined vector fields.
//!
//! Grammar, loosest binding first:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' '-'? INTEGER)*
//! primary := NUMBER | IDENT | 'exp' '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers of the form `x<digits>` are state variables (1-based); any other
//! identifier is a parameter. `-x1^2` parses as `-(x1^2)`.
//!
//! ```
//! use std::collections::BTreeMap;
//! use coop2::modeldsl::{eval, parse};
//!
//! let e = parse("-a1*x1 + 1/(1+x2^2)").unwrap();
//! let params = BTreeMap::from([("a1".to_string(), 0.5)]);
//! assert_eq!(eval(&e, &[2.0, 1.0], &params).unwrap(), -0.5);
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;

/// Nesting limit for parentheses and unary minus.
pub const MAX_DEPTH: usize = 200;
/// Denominators (and bases of negative powers) smaller than this are rejected.
pub const DIVISION_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// 0-based state index.
    Var(usize),
    Param(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: expected {expected}")]
    SyntaxError {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("unknown identifier `{name}` at {line}:{column}")]
    UnknownIdentifier {
        name: String,
        line: usize,
        column: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by a value with magnitude below {DIVISION_FLOOR:e}")]
    DivisionNearZero,
    #[error("unbound identifier `{0}`")]
    UnboundIdentifier(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
    /// Raw text, kept so integer exponents can be checked.
    text: String,
}

fn syntax(line: usize, column: usize, expected: impl Into<String>) -> ParseError {
    ParseError::SyntaxError {
        line,
        column,
        expected: expected.into(),
    }
}

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            col = 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start_col = col;
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Spanned {
                tok,
                line,
                column: start_col,
                text: c.to_string(),
            });
            i += 1;
            col += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let value: f64 = text
                .parse()
                .map_err(|_| syntax(line, start_col, "a number"))?;
            if !value.is_finite() {
                return Err(syntax(line, start_col, "a finite number"));
            }
            out.push(Spanned {
                tok: Tok::Num(value),
                line,
                column: start_col,
                text,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            out.push(Spanned {
                tok: Tok::Ident(text.clone()),
                line,
                column: start_col,
                text,
            });
            continue;
        }
        return Err(syntax(line, start_col, "an operator, number, identifier or parenthesis"));
    }
    out.push(Spanned {
        tok: Tok::End,
        line,
        column: col,
        text: String::new(),
    });
    Ok(out)
}

/// `Some(i)` for identifiers `x<i+1>`.
fn variable_index(name: &str) -> Option<Result<usize, ()>> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    match digits.parse::<usize>() {
        Ok(k) if k >= 1 => Some(Ok(k - 1)),
        _ => Some(Err(())),
    }
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        let t = self.peek();
        Err(syntax(
            t.line,
            t.column,
            format!("{expected}, found {}", t.tok.describe()),
        ))
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return self.fail("shallower nesting");
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let mut base = self.primary()?;
        while self.peek().tok == Tok::Caret {
            self.bump();
            let negative = if self.peek().tok == Tok::Minus {
                self.bump();
                true
            } else {
                false
            };
            let t = self.peek().clone();
            let k = match t.tok {
                Tok::Num(_) if t.text.bytes().all(|b| b.is_ascii_digit()) => {
                    match t.text.parse::<i32>() {
                        Ok(k) => k,
                        Err(_) => return self.fail("an exponent that fits in 32 bits"),
                    }
                }
                _ => return self.fail("an integer exponent"),
            };
            self.bump();
            base = Expr::Pow(Box::new(base), if negative { -k } else { k });
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                self.enter()?;
                let inner = self.expr()?;
                self.depth -= 1;
                if self.peek().tok != Tok::RParen {
                    return self.fail("`)`");
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if self.peek().tok == Tok::LParen {
                    if name != "exp" {
                        return Err(ParseError::UnknownIdentifier {
                            name,
                            line: t.line,
                            column: t.column,
                        });
                    }
                    self.bump();
                    self.enter()?;
                    let inner = self.expr()?;
                    self.depth -= 1;
                    if self.peek().tok != Tok::RParen {
                        return self.fail("`)`");
                    }
                    self.bump();
                    return Ok(Expr::Exp(Box::new(inner)));
                }
                match variable_index(&name) {
                    Some(Ok(i)) => Ok(Expr::Var(i)),
                    Some(Err(())) => Err(ParseError::UnknownIdentifier {
                        name,
                        line: t.line,
                        column: t.column,
                    }),
                    None => Ok(Expr::Param(name)),
                }
            }
            _ => self.fail("a number, identifier or `(`"),
        }
    }
}

/// Parses one expression.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        depth: 0,
    };
    let e = p.expr()?;
    if p.peek().tok != Tok::End {
        return p.fail("an operator or end of input");
    }
    Ok(e)
}

/// Parses and checks every identifier against the state dimension and declared parameters.
pub fn parse_checked(
    src: &str,
    dim: usize,
    params: &BTreeSet<String>,
) -> Result<Expr, ParseError> {
    let e = parse(src)?;
    let mut bad = None;
    e.visit(&mut |node| {
        if bad.is_some() {
            return;
        }
        match node {
            Expr::Var(i) if *i >= dim => bad = Some(format!("x{}", i + 1)),
            Expr::Param(p) if !params.contains(p) => bad = Some(p.clone()),
            _ => {}
        }
    });
    match bad {
        None => Ok(e),
        Some(name) => {
            let (line, column) = locate(src, &name);
            Err(ParseError::UnknownIdentifier { name, line, column })
        }
    }
}

fn locate(src: &str, name: &str) -> (usize, usize) {
    for (li, text) in src.lines().enumerate() {
        let mut start = 0;
        while let Some(off) = text[start..].find(name) {
            let at = start + off;
            let before_ok = at == 0
                || !text[..at]
                    .chars()
                    .next_back()
                    .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
            let after = at + name.len();
            let after_ok = !text[after..]
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_');
            if before_ok && after_ok {
                return (li + 1, text[..at].chars().count() + 1);
            }
            start = after;
        }
    }
    (1, 1)
}

impl Expr {
    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Param(_) => {}
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Exp(a) => a.visit(f),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Replaces parameters by their values; unknown names are left in place.
    pub fn bind(&self, params: &BTreeMap<String, f64>) -> Expr {
        let b = |e: &Expr| Box::new(e.bind(params));
        match self {
            Expr::Param(p) => match params.get(p) {
                Some(&v) => Expr::Const(v),
                None => self.clone(),
            },
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Exp(a) => Expr::Exp(b(a)),
            Expr::Pow(a, k) => Expr::Pow(b(a), *k),
            Expr::Add(x, y) => Expr::Add(b(x), b(y)),
            Expr::Sub(x, y) => Expr::Sub(b(x), b(y)),
            Expr::Mul(x, y) => Expr::Mul(b(x), b(y)),
            Expr::Div(x, y) => Expr::Div(b(x), b(y)),
        }
    }

    /// Highest state index used, plus one.
    pub fn dim_used(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                n = n.max(i + 1);
            }
        });
        n
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) if *v < 0.0 => write!(f, "(-{})", -v),
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Param(p) => write!(f, "{p}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Exp(a) => write!(f, "exp({a})"),
        }
    }
}

/// Evaluates `e` at state `x`.
pub fn eval(e: &Expr, x: &[f64], params: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
    Ok(match e {
        Expr::Const(v) => *v,
        Expr::Var(i) => *x
            .get(*i)
            .ok_or_else(|| EvalError::UnboundIdentifier(format!("x{}", i + 1)))?,
        Expr::Param(p) => *params
            .get(p)
            .ok_or_else(|| EvalError::UnboundIdentifier(p.clone()))?,
        Expr::Neg(a) => -eval(a, x, params)?,
        Expr::Add(a, b) => eval(a, x, params)? + eval(b, x, params)?,
        Expr::Sub(a, b) => eval(a, x, params)? - eval(b, x, params)?,
        Expr::Mul(a, b) => eval(a, x, params)? * eval(b, x, params)?,
        Expr::Div(a, b) => {
            let den = eval(b, x, params)?;
            if den.abs() < DIVISION_FLOOR {
                return Err(EvalError::DivisionNearZero);
            }
            eval(a, x, params)? / den
        }
        Expr::Pow(a, k) => {
            let base = eval(a, x, params)?;
            if *k < 0 && base.abs() < DIVISION_FLOOR {
                return Err(EvalError::DivisionNearZero);
            }
            base.powi(*k)
        }
        Expr::Exp(a) => eval(a, x, params)?.exp(),
    })
}

/// Central-difference Jacobian of `field` at `x`.
///
/// `h` scales the step per column; the default is `eps^(1/3) * max(1, |x_j|)`.
pub fn jacobian_fd(
    field: &[Expr],
    x: &[f64],
    params: &BTreeMap<String, f64>,
    h: Option<f64>,
) -> Result<Mat, EvalError> {
    let n = x.len();
    let base = h.unwrap_or(f64::EPSILON.cbrt());
    let mut jac = Mat::zeros(field.len(), n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let step = base * x[j].abs().max(1.0);
        xp[j] = x[j] + step;
        let hi: Vec<f64> = field
            .iter()
            .map(|e| eval(e, &xp, params))
            .collect::<Result<_, _>>()?;
        xp[j] = x[j] - step;
        let lo: Vec<f64> = field
            .iter()
            .map(|e| eval(e, &xp, params))
            .collect::<Result<_, _>>()?;
        xp[j] = x[j];
        for i in 0..field.len() {
            jac[(i, j)] = (hi[i] - lo[i]) / (2.0 * step);
        }
    }
    Ok(jac)
}

/// Box given in a model config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// JSON model config: `{name, dim, params, field, box}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub field: Vec<String>,
    #[serde(rename = "box")]
    pub bounds: BoxSpec,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field[{index}]: {source}")]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed right-hand side with parameters already substituted.
#[derive(Debug, Clone, PartialEq)]
pub struct DslField {
    pub exprs: Vec<Expr>,
    pub source: Vec<String>,
}

impl DslField {
    pub fn dim(&self) -> usize {
        self.exprs.len()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let empty = BTreeMap::new();
        for (o, e) in out.iter_mut().zip(&self.exprs) {
            *o = eval(e, x, &empty)?;
        }
        Ok(())
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<Mat, EvalError> {
        jacobian_fd(&self.exprs, x, &BTreeMap::new(), None)
    }
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses every component and checks the declared dimensions.
    pub fn compile(&self) -> Result<DslField, ConfigError> {
        if self.dim == 0 {
            return Err(ConfigError::Invalid("dim must be positive".into()));
        }
        if self.field.len() != self.dim {
            return Err(ConfigError::Invalid(format!(
                "field has {} components but dim is {}",
                self.field.len(),
                self.dim
            )));
        }
        if self.bounds.lower.len() != self.dim || self.bounds.upper.len() != self.dim {
            return Err(ConfigError::Invalid("box bounds must have length dim".into()));
        }
        if let Some((name, _)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ConfigError::Invalid(format!("parameter `{name}` is not finite")));
        }
        let names: BTreeSet<String> = self.params.keys().cloned().collect();
        let mut exprs = Vec::with_capacity(self.dim);
        for (index, src) in self.field.iter().enumerate() {
            let e = parse_checked(src, self.dim, &names)
                .map_err(|source| ConfigError::Parse { index, source })?;
            exprs.push(e.bind(&self.params));
        }
        Ok(DslField {
            exprs,
            source: self.field.clone(),
        })
    }
}
