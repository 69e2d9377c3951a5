//! Expression language for engineered features.
//!
//! ```text
//! expr  := bool
//! bool  := cmp (("and" | "or") cmp)*        left-associative, equal precedence
//! cmp   := arith [cmpop arith]
//! arith := term (("+" | "-") term)*
//! term  := atom ("*" atom)*
//! atom  := number | "x" digits | "(" expr ")"
//! cmpop := ">" | ">=" | "≥" | "<" | "<=" | "≤" | "==" | "!=" | "≠"
//! ```
//!
//! Comparisons and boolean operators evaluate to `1.0` or `0.0`; a boolean
//! operand is true when it is non-zero. Aliases are one-based indices into
//! the feature vector passed to [`FeatureExpr::evaluate`].

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const MAX_DEPTH: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureExpr {
    /// One-based feature alias `x<i>`.
    Alias(usize),
    Const(f64),
    Add(Box<FeatureExpr>, Box<FeatureExpr>),
    Sub(Box<FeatureExpr>, Box<FeatureExpr>),
    Mul(Box<FeatureExpr>, Box<FeatureExpr>),
    Cmp(CmpOp, Box<FeatureExpr>, Box<FeatureExpr>),
    And(Box<FeatureExpr>, Box<FeatureExpr>),
    Or(Box<FeatureExpr>, Box<FeatureExpr>),
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum DslError {
    #[error("parse error at byte {offset}: expected one of {expected:?}")]
    ParseError { offset: usize, expected: Vec<String> },
    #[error("alias x{alias} is outside x1..x{n_features}")]
    UnknownAlias { alias: usize, n_features: usize },
    #[error("expression nests deeper than {MAX_DEPTH} levels")]
    DepthExceeded,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Alias(usize),
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Cmp(CmpOp),
    And,
    Or,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn err(&self, at: usize, expected: &[&str]) -> DslError {
        DslError::ParseError {
            offset: at,
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Returns the next token and its byte offset.
    fn next(&mut self) -> Result<(Tok, usize), DslError> {
        let rest = &self.src[self.pos..];
        let trimmed = rest.trim_start();
        self.pos += rest.len() - trimmed.len();
        let start = self.pos;
        let Some(c) = trimmed.chars().next() else {
            return Ok((Tok::End, start));
        };
        let two = trimmed.get(..2).unwrap_or("");
        let (tok, len) = match c {
            '+' => (Tok::Plus, 1),
            '-' => (Tok::Minus, 1),
            '*' => (Tok::Star, 1),
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '≥' => (Tok::Cmp(CmpOp::Ge), c.len_utf8()),
            '≤' => (Tok::Cmp(CmpOp::Le), c.len_utf8()),
            '≠' => (Tok::Cmp(CmpOp::Ne), c.len_utf8()),
            '>' | '<' | '=' | '!' => match two {
                ">=" => (Tok::Cmp(CmpOp::Ge), 2),
                "<=" => (Tok::Cmp(CmpOp::Le), 2),
                "==" => (Tok::Cmp(CmpOp::Eq), 2),
                "!=" => (Tok::Cmp(CmpOp::Ne), 2),
                _ if c == '>' => (Tok::Cmp(CmpOp::Gt), 1),
                _ if c == '<' => (Tok::Cmp(CmpOp::Lt), 1),
                _ => return Err(self.err(start, &["==", "!="])),
            },
            'x' | 'X' => {
                let digits: &str = {
                    let tail = &trimmed[1..];
                    let end = tail.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(tail.len());
                    &tail[..end]
                };
                if digits.is_empty() {
                    return Err(self.err(start + 1, &["digit"]));
                }
                let n = digits.parse().map_err(|_| self.err(start + 1, &["digit"]))?;
                (Tok::Alias(n), 1 + digits.len())
            }
            'a' | 'o' => {
                let word_end = trimmed
                    .find(|ch: char| !ch.is_ascii_alphanumeric() && ch != '_')
                    .unwrap_or(trimmed.len());
                match &trimmed[..word_end] {
                    "and" => (Tok::And, 3),
                    "or" => (Tok::Or, 2),
                    _ => return Err(self.err(start, &["number", "alias", "("])),
                }
            }
            c if c.is_ascii_digit() || c == '.' => {
                let end = trimmed
                    .find(|ch: char| !(ch.is_ascii_digit() || ch == '.'))
                    .unwrap_or(trimmed.len());
                let mut end = end;
                // Optional exponent, as produced by float formatting.
                let tail = &trimmed[end..];
                if tail.starts_with(['e', 'E']) {
                    let after = &tail[1..];
                    let sign = usize::from(after.starts_with(['+', '-']));
                    let digits = after[sign..]
                        .find(|ch: char| !ch.is_ascii_digit())
                        .unwrap_or(after.len() - sign);
                    if digits > 0 {
                        end += 1 + sign + digits;
                    }
                }
                let v: f64 = trimmed[..end].parse().map_err(|_| self.err(start, &["number"]))?;
                (Tok::Num(v), end)
            }
            _ => return Err(self.err(start, &["number", "alias", "("])),
        };
        self.pos += len;
        Ok((tok, start))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    tok: Tok,
    at: usize,
    n_features: usize,
    depth: usize,
}

type Res = Result<FeatureExpr, DslError>;

impl<'a> Parser<'a> {
    fn bump(&mut self) -> Result<(), DslError> {
        let (t, at) = self.lex.next()?;
        self.tok = t;
        self.at = at;
        Ok(())
    }

    fn expected(&self, what: &[&str]) -> DslError {
        self.lex.err(self.at, what)
    }

    fn expr(&mut self) -> Res {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(DslError::DepthExceeded);
        }
        let r = self.boolean();
        self.depth -= 1;
        r
    }

    fn boolean(&mut self) -> Res {
        let mut lhs = self.cmp()?;
        loop {
            let ctor: fn(Box<FeatureExpr>, Box<FeatureExpr>) -> FeatureExpr = match self.tok {
                Tok::And => FeatureExpr::And,
                Tok::Or => FeatureExpr::Or,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.cmp()?;
            lhs = ctor(Box::new(lhs), Box::new(rhs));
        }
    }

    fn cmp(&mut self) -> Res {
        let lhs = self.arith()?;
        if let Tok::Cmp(op) = self.tok {
            self.bump()?;
            let rhs = self.arith()?;
            return Ok(FeatureExpr::Cmp(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn arith(&mut self) -> Res {
        let mut lhs = self.term()?;
        loop {
            let ctor: fn(Box<FeatureExpr>, Box<FeatureExpr>) -> FeatureExpr = match self.tok {
                Tok::Plus => FeatureExpr::Add,
                Tok::Minus => FeatureExpr::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = ctor(Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Res {
        let mut lhs = self.atom()?;
        while self.tok == Tok::Star {
            self.bump()?;
            let rhs = self.atom()?;
            lhs = FeatureExpr::Mul(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Res {
        match self.tok.clone() {
            Tok::Num(v) => {
                self.bump()?;
                Ok(FeatureExpr::Const(v))
            }
            Tok::Alias(i) => {
                if i == 0 || i > self.n_features {
                    return Err(DslError::UnknownAlias {
                        alias: i,
                        n_features: self.n_features,
                    });
                }
                self.bump()?;
                Ok(FeatureExpr::Alias(i))
            }
            Tok::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                if self.tok != Tok::RParen {
                    return Err(self.expected(&[")"]));
                }
                self.bump()?;
                Ok(inner)
            }
            _ => Err(self.expected(&["number", "alias", "("])),
        }
    }
}

/// Parses one expression over aliases `x1..=x{n_features}`.
pub fn compile_expression(src: &str, n_features: usize) -> Result<FeatureExpr, DslError> {
    let mut p = Parser {
        lex: Lexer { src, pos: 0 },
        tok: Tok::End,
        at: 0,
        n_features,
        depth: 0,
    };
    p.bump()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return Err(p.expected(&["end of input", "operator"]));
    }
    Ok(e)
}

fn truth(v: f64) -> bool {
    v != 0.0
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

impl FeatureExpr {
    /// Value on one sample; `x[i - 1]` is the value of alias `x<i>`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        use FeatureExpr::*;
        match self {
            Alias(i) => x[i - 1],
            Const(c) => *c,
            Add(a, b) => a.evaluate(x) + b.evaluate(x),
            Sub(a, b) => a.evaluate(x) - b.evaluate(x),
            Mul(a, b) => a.evaluate(x) * b.evaluate(x),
            Cmp(op, a, b) => indicator(op.apply(a.evaluate(x), b.evaluate(x))),
            And(a, b) => indicator(truth(a.evaluate(x)) && truth(b.evaluate(x))),
            Or(a, b) => indicator(truth(a.evaluate(x)) || truth(b.evaluate(x))),
        }
    }

    /// Largest alias index used, or 0 for constant expressions.
    pub fn max_alias(&self) -> usize {
        use FeatureExpr::*;
        match self {
            Alias(i) => *i,
            Const(_) => 0,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Cmp(_, a, b) | And(a, b) | Or(a, b) => a.max_alias().max(b.max_alias()),
        }
    }

    pub fn uses_alias(&self) -> bool {
        self.max_alias() > 0
    }

    fn level(&self) -> u8 {
        use FeatureExpr::*;
        match self {
            And(..) | Or(..) => 1,
            Cmp(..) => 2,
            Add(..) | Sub(..) => 3,
            Mul(..) => 4,
            Alias(_) | Const(_) => 5,
        }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, min_level: u8) -> fmt::Result {
        if self.level() < min_level {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Canonical rendering: minimal parentheses, single spaces around binary
/// operators. Parsing the rendering yields an equal tree.
impl fmt::Display for FeatureExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use FeatureExpr::*;
        let (a, b, op, lvl) = match self {
            Alias(i) => return write!(f, "x{i}"),
            Const(c) => return write!(f, "{c}"),
            Add(a, b) => (a, b, "+", 3),
            Sub(a, b) => (a, b, "-", 3),
            Mul(a, b) => (a, b, "*", 4),
            Cmp(op, a, b) => (a, b, op.symbol(), 2),
            And(a, b) => (a, b, "and", 1),
            Or(a, b) => (a, b, "or", 1),
        };
        // A comparison operand cannot itself be a bare comparison.
        let left_min = if lvl == 2 { 3 } else { lvl };
        a.write_operand(f, left_min)?;
        write!(f, " {op} ")?;
        b.write_operand(f, lvl + 1)
    }
}

impl Serialize for FeatureExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FeatureExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        compile_expression(&s, usize::MAX).map_err(serde::de::Error::custom)
    }
}
