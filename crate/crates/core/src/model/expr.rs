//! Boolean expressions over identifiers: `AND`, `OR`, `NOT`, parentheses.
//!
//! Keywords are case-insensitive. `NOT` binds tightest, then `AND`, then `OR`;
//! binary operators associate to the left.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Var(String),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expression syntax error at offset {offset}: {message}")]
pub struct ExprError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unbound identifier {0:?}")]
pub struct EvalError(pub String);

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn and(l: Expr, r: Expr) -> Expr {
        Expr::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: Expr, r: Expr) -> Expr {
        Expr::Or(Box::new(l), Box::new(r))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    /// Left-folds `items` with `AND`; `None` when empty.
    pub fn all_of<I: IntoIterator<Item = Expr>>(items: I) -> Option<Expr> {
        items.into_iter().reduce(Expr::and)
    }

    /// Left-folds `items` with `OR`; `None` when empty.
    pub fn any_of<I: IntoIterator<Item = Expr>>(items: I) -> Option<Expr> {
        items.into_iter().reduce(Expr::or)
    }

    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, len: src.len() };
        let e = p.or_expr()?;
        match p.peek() {
            None => Ok(e),
            Some((off, t)) => Err(ExprError {
                offset: *off,
                message: format!("unexpected {}", t.describe()),
            }),
        }
    }

    pub fn identifiers(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_ids(&mut out);
        out
    }

    fn collect_ids<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.as_str());
            }
            Expr::Not(e) => e.collect_ids(out),
            Expr::And(l, r) | Expr::Or(l, r) => {
                l.collect_ids(out);
                r.collect_ids(out);
            }
        }
    }

    /// Evaluates both sides of every operator so an unbound identifier is
    /// always reported, whatever the other operand's value.
    pub fn eval_with<F>(&self, lookup: &F) -> Result<bool, EvalError>
    where
        F: Fn(&str) -> Option<bool>,
    {
        match self {
            Expr::Var(v) => lookup(v).ok_or_else(|| EvalError(v.clone())),
            Expr::Not(e) => Ok(!e.eval_with(lookup)?),
            Expr::And(l, r) => {
                let a = l.eval_with(lookup)?;
                let b = r.eval_with(lookup)?;
                Ok(a && b)
            }
            Expr::Or(l, r) => {
                let a = l.eval_with(lookup)?;
                let b = r.eval_with(lookup)?;
                Ok(a || b)
            }
        }
    }
}

pub fn eval_boolean(expr: &Expr, truth: &HashMap<String, bool>) -> Result<bool, EvalError> {
    expr.eval_with(&|id: &str| truth.get(id).copied())
}

impl FromStr for Expr {
    type Err = ExprError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    // Emits the minimum parentheses needed to reparse into the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(v) => f.write_str(v),
            Expr::Not(e) => match **e {
                Expr::Var(_) | Expr::Not(_) => write!(f, "NOT {e}"),
                _ => write!(f, "NOT ({e})"),
            },
            Expr::And(l, r) => {
                if matches!(**l, Expr::Or(..)) {
                    write!(f, "({l})")?;
                } else {
                    write!(f, "{l}")?;
                }
                f.write_str(" AND ")?;
                if matches!(**r, Expr::Or(..) | Expr::And(..)) {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
            Expr::Or(l, r) => {
                write!(f, "{l} OR ")?;
                if matches!(**r, Expr::Or(..)) {
                    write!(f, "({r})")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    And,
    Or,
    Not,
    LParen,
    RParen,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::And => "AND".into(),
            Tok::Or => "OR".into(),
            Tok::Not => "NOT".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
        }
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let mut out = Vec::new();
    let mut chars = src.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '(' {
            out.push((i, Tok::LParen));
            chars.next();
        } else if c == ')' {
            out.push((i, Tok::RParen));
            chars.next();
        } else if is_ident_char(c) {
            let mut end = i;
            while let Some(&(j, d)) = chars.peek() {
                if !is_ident_char(d) {
                    break;
                }
                end = j + d.len_utf8();
                chars.next();
            }
            let word = &src[i..end];
            let tok = match word.to_ascii_uppercase().as_str() {
                "AND" => Tok::And,
                "OR" => Tok::Or,
                "NOT" => Tok::Not,
                _ => Tok::Ident(word.to_string()),
            };
            out.push((i, tok));
        } else {
            return Err(ExprError {
                offset: i,
                message: format!("unexpected character {c:?}"),
            });
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Tok)>,
    pos: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek().map(|(_, x)| x) == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn or_expr(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.and_expr()?;
        while self.eat(&Tok::Or) {
            e = Expr::or(e, self.and_expr()?);
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, ExprError> {
        let mut e = self.unary()?;
        while self.eat(&Tok::And) {
            e = Expr::and(e, self.unary()?);
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat(&Tok::Not) {
            return Ok(Expr::not(self.unary()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.tokens.get(self.pos).cloned() {
            Some((_, Tok::Ident(s))) => {
                self.pos += 1;
                Ok(Expr::Var(s))
            }
            Some((off, Tok::LParen)) => {
                self.pos += 1;
                let e = self.or_expr()?;
                if !self.eat(&Tok::RParen) {
                    return Err(ExprError {
                        offset: self.peek().map(|t| t.0).unwrap_or(self.len),
                        message: format!("unclosed '(' opened at offset {off}"),
                    });
                }
                Ok(e)
            }
            Some((off, t)) => Err(ExprError {
                offset: off,
                message: format!("expected identifier, NOT or '(' but found {}", t.describe()),
            }),
            None => Err(ExprError {
                offset: self.len,
                message: "unexpected end of expression".into(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(pairs: &[(&str, bool)]) -> HashMap<String, bool> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn and_of_true_false() {
        let e: Expr = "m1 AND m2".parse().unwrap();
        assert!(!eval_boolean(&e, &truth(&[("m1", true), ("m2", false)])).unwrap());
    }

    #[test]
    fn not_binds_tighter_than_or() {
        let a: Expr = "NOT m1 OR m2".parse().unwrap();
        let b: Expr = "(NOT m1) OR m2".parse().unwrap();
        assert_eq!(a, b);
        for m1 in [false, true] {
            for m2 in [false, true] {
                let t = truth(&[("m1", m1), ("m2", m2)]);
                assert_eq!(eval_boolean(&a, &t).unwrap(), !m1 || m2);
            }
        }
    }

    #[test]
    fn and_binds_tighter_than_or() {
        let e: Expr = "a or b AND c".parse().unwrap();
        assert_eq!(e, Expr::or(Expr::var("a"), Expr::and(Expr::var("b"), Expr::var("c"))));
    }

    #[test]
    fn keywords_are_case_insensitive() {
        assert_eq!(
            "x and not y".parse::<Expr>().unwrap(),
            "x AND NOT y".parse::<Expr>().unwrap()
        );
    }

    #[test]
    fn unbound_identifier_errors_even_when_short_circuit_would_hide_it() {
        let e: Expr = "a OR ghost".parse().unwrap();
        assert_eq!(
            eval_boolean(&e, &truth(&[("a", true)])),
            Err(EvalError("ghost".into()))
        );
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        assert_eq!("a AND".parse::<Expr>().unwrap_err().offset, 5);
        assert_eq!("a b".parse::<Expr>().unwrap_err().offset, 2);
        assert_eq!("(a".parse::<Expr>().unwrap_err().offset, 2);
        assert_eq!("a & b".parse::<Expr>().unwrap_err().offset, 2);
        assert!("".parse::<Expr>().is_err());
    }

    #[test]
    fn display_round_trips_tricky_shapes() {
        for src in [
            "a AND (b AND c)",
            "(a OR b) AND c",
            "a OR (b OR c)",
            "NOT (a AND b)",
            "NOT NOT a",
            "request OR response",
        ] {
            let e: Expr = src.parse().unwrap();
            assert_eq!(e.to_string().parse::<Expr>().unwrap(), e, "{src}");
        }
    }
}
