//! A small model-formula language and its expansion into design matrices.
//!
//! Grammar: `formula := term ("+" term)*`, `term := NAME | NAME ":" NAME |
//! "t" | "t^2" | NAME ":" "t"`. The intercept is implicit. Interaction
//! operands are stored in sorted order, so `z:l0` and `l0:z` are the same
//! term, and `t:NAME` is read as `NAME:t`.
//!
//! The name `z` denotes the strategy indicator. With two strategies it is a
//! single 0/1 column; with k strategies it expands to k-1 one-hot columns.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulaError {
    #[error("syntax error at position {position}: {message}")]
    SyntaxError { position: usize, message: String },
    #[error("duplicate term `{0}`")]
    DuplicateTerm(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("formula uses `z` but no strategy encoding was supplied")]
    MissingGEncoding,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Intercept,
    Variable(String),
    /// Operands sorted; never contains `t`.
    Interaction(String, String),
    Time,
    TimeSquared,
    TimeInteraction(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => write!(f, "1"),
            Term::Variable(n) => write!(f, "{n}"),
            Term::Interaction(a, b) => write!(f, "{a}:{b}"),
            Term::Time => write!(f, "t"),
            Term::TimeSquared => write!(f, "t^2"),
            Term::TimeInteraction(n) => write!(f, "{n}:t"),
        }
    }
}

impl Term {
    /// Variable names (other than `t`) the term reads.
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Term::Variable(n) | Term::TimeInteraction(n) => vec![n.as_str()],
            Term::Interaction(a, b) => vec![a.as_str(), b.as_str()],
            _ => Vec::new(),
        }
    }

    pub fn uses_time(&self) -> bool {
        matches!(
            self,
            Term::Time | Term::TimeSquared | Term::TimeInteraction(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Formula {
    terms: Vec<Term>,
}

impl Formula {
    pub fn intercept_only() -> Self {
        Formula {
            terms: vec![Term::Intercept],
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn uses_time(&self) -> bool {
        self.terms.iter().any(Term::uses_time)
    }

    pub fn uses(&self, name: &str) -> bool {
        self.terms.iter().any(|t| t.variables().contains(&name))
    }

    /// Distinct variable names referenced, in first-use order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for term in &self.terms {
            for v in term.variables() {
                if !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }

    /// Formula with every time term removed.
    pub fn without_time(&self) -> Formula {
        Formula {
            terms: self.terms.iter().filter(|t| !t.uses_time()).cloned().collect(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.terms[1..].iter().map(Term::to_string).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

impl std::str::FromStr for Formula {
    type Err = FormulaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Name(String),
    Plus,
    Colon,
    Caret,
    Number(String),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, FormulaError> {
    let mut out = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' => {
                out.push((pos, Token::Plus));
                i += 1;
            }
            ':' => {
                out.push((pos, Token::Colon));
                i += 1;
            }
            '^' => {
                out.push((pos, Token::Caret));
                i += 1;
            }
            c if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].1.is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                out.push((pos, Token::Number(s)));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len()
                    && (chars[i].1.is_alphanumeric() || chars[i].1 == '_' || chars[i].1 == '.')
                {
                    i += 1;
                }
                let s: String = chars[start..i].iter().map(|(_, c)| c).collect();
                out.push((pos, Token::Name(s)));
            }
            other => {
                return Err(FormulaError::SyntaxError {
                    position: pos,
                    message: format!("unexpected character `{other}`"),
                })
            }
        }
    }
    Ok(out)
}

pub fn parse(text: &str) -> Result<Formula, FormulaError> {
    let tokens = tokenize(text)?;
    let end = text.len();
    let mut terms = vec![Term::Intercept];
    if tokens.is_empty() {
        return Ok(Formula { terms });
    }
    let mut i = 0;
    let syntax = |position: usize, message: &str| FormulaError::SyntaxError {
        position,
        message: message.to_string(),
    };
    loop {
        let (pos, first) = match tokens.get(i) {
            Some((p, Token::Name(n))) => (*p, n.clone()),
            Some((p, _)) => return Err(syntax(*p, "expected a variable name")),
            None => return Err(syntax(end, "expected a term after `+`")),
        };
        i += 1;
        let term = match tokens.get(i) {
            Some((_, Token::Colon)) => {
                i += 1;
                let second = match tokens.get(i) {
                    Some((_, Token::Name(n))) => n.clone(),
                    Some((p, _)) => return Err(syntax(*p, "expected a variable name after `:`")),
                    None => return Err(syntax(end, "expected a variable name after `:`")),
                };
                i += 1;
                match (first.as_str(), second.as_str()) {
                    ("t", "t") => return Err(syntax(pos, "`t:t` is not a term; use `t^2`")),
                    ("t", other) | (other, "t") => Term::TimeInteraction(other.to_string()),
                    (a, b) if a <= b => Term::Interaction(a.to_string(), b.to_string()),
                    (a, b) => Term::Interaction(b.to_string(), a.to_string()),
                }
            }
            Some((p, Token::Caret)) => {
                if first != "t" {
                    return Err(syntax(*p, "`^` is only allowed as `t^2`"));
                }
                i += 1;
                match tokens.get(i) {
                    Some((_, Token::Number(n))) if n == "2" => {
                        i += 1;
                        Term::TimeSquared
                    }
                    Some((p, _)) => return Err(syntax(*p, "only `t^2` is supported")),
                    None => return Err(syntax(end, "only `t^2` is supported")),
                }
            }
            _ if first == "t" => Term::Time,
            _ => Term::Variable(first),
        };
        if terms.contains(&term) {
            return Err(FormulaError::DuplicateTerm(term.to_string()));
        }
        terms.push(term);
        match tokens.get(i) {
            None => break,
            Some((_, Token::Plus)) => i += 1,
            Some((p, _)) => return Err(syntax(*p, "expected `+` between terms")),
        }
    }
    Ok(Formula { terms })
}

/// Named numeric columns over a set of rows. A variable may be a block of
/// several columns (the one-hot strategy indicator). The time index `t` is
/// always present.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    n: usize,
    columns: BTreeMap<String, Vec<Vec<f64>>>,
}

impl Frame {
    pub fn new(t: Vec<f64>) -> Self {
        let n = t.len();
        let mut columns = BTreeMap::new();
        columns.insert("t".to_string(), vec![t]);
        Frame { n, columns }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn has(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn insert(&mut self, name: String, values: Vec<f64>) {
        assert_eq!(values.len(), self.n, "column `{name}` has the wrong length");
        self.columns.insert(name, vec![values]);
    }

    pub fn insert_block(&mut self, name: String, block: Vec<Vec<f64>>) {
        for col in &block {
            assert_eq!(col.len(), self.n, "column `{name}` has the wrong length");
        }
        self.columns.insert(name, block);
    }

    /// Adds the strategy indicator `z` from per-row strategy indices.
    pub fn insert_strategy(&mut self, g: &[usize], n_strategies: usize) {
        assert_eq!(g.len(), self.n, "strategy column has the wrong length");
        let block = (1..n_strategies.max(2))
            .map(|k| g.iter().map(|&gi| if gi == k { 1.0 } else { 0.0 }).collect())
            .collect();
        self.columns.insert("z".to_string(), block);
    }

    pub fn get(&self, name: &str) -> Option<&[Vec<f64>]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    fn block(&self, name: &str) -> Result<&[Vec<f64>], FormulaError> {
        self.get(name).ok_or_else(|| {
            if name == "z" {
                FormulaError::MissingGEncoding
            } else {
                FormulaError::UnknownVariable(name.to_string())
            }
        })
    }
}

fn product_block(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ca in a {
        for cb in b {
            out.push(ca.iter().zip(cb).map(|(x, y)| x * y).collect());
        }
    }
    out
}

/// Number of design columns the formula expands to over `frame`.
pub fn n_columns(f: &Formula, frame: &Frame) -> Result<usize, FormulaError> {
    let mut k = 0;
    for term in &f.terms {
        k += match term {
            Term::Intercept | Term::Time | Term::TimeSquared => 1,
            Term::Variable(n) | Term::TimeInteraction(n) => frame.block(n)?.len(),
            Term::Interaction(a, b) => frame.block(a)?.len() * frame.block(b)?.len(),
        };
    }
    Ok(k)
}

/// Expands the formula over the frame, one column block per term in term
/// order.
pub fn design_matrix(f: &Formula, frame: &Frame) -> Result<DMatrix<f64>, FormulaError> {
    let n = frame.n;
    let t = &frame.block("t")?[0];
    let p = n_columns(f, frame)?;
    // Column-major storage, one column after another.
    let mut data: Vec<f64> = Vec::with_capacity(n * p);
    for term in &f.terms {
        match term {
            Term::Intercept => data.extend(std::iter::repeat_n(1.0, n)),
            Term::Time => data.extend_from_slice(t),
            Term::TimeSquared => data.extend(t.iter().map(|v| v * v)),
            Term::Variable(name) => {
                for col in frame.block(name)? {
                    data.extend_from_slice(col);
                }
            }
            Term::TimeInteraction(name) => {
                for col in product_block(frame.block(name)?, std::slice::from_ref(t)) {
                    data.extend(col);
                }
            }
            Term::Interaction(a, b) => {
                for col in product_block(frame.block(a)?, frame.block(b)?) {
                    data.extend(col);
                }
            }
        }
    }
    Ok(DMatrix::from_vec(n, p, data))
}
