//! Bounded LTL over finite boolean traces, evaluated by direct recursion on
//! the semantics. Kept free of any dependency on the block engine so that
//! it can serve as its reference.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LtlError {
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("interval [{0}, {1}] is empty")]
    Interval(usize, usize),
    #[error("unknown signal {0}")]
    Unknown(String),
    #[error("trace of length {len} is shorter than horizon {need}")]
    Short { len: usize, need: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    True,
    False,
    Atom(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Globally(usize, usize, Box<Formula>),
    Finally(usize, usize, Box<Formula>),
    Until(usize, usize, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(s: &str) -> Self {
        Formula::Atom(s.into())
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn globally(a: usize, b: usize, f: Formula) -> Self {
        Formula::Globally(a, b, Box::new(f))
    }

    pub fn finally(a: usize, b: usize, f: Formula) -> Self {
        Formula::Finally(a, b, Box::new(f))
    }

    pub fn until(a: usize, b: usize, p: Formula, q: Formula) -> Self {
        Formula::Until(a, b, Box::new(p), Box::new(q))
    }

    /// Largest upper bound of any temporal operator.
    pub fn max_bound(&self) -> usize {
        match self {
            Formula::True | Formula::False | Formula::Atom(_) => 0,
            Formula::Not(f) => f.max_bound(),
            Formula::And(a, b) | Formula::Implies(a, b) => a.max_bound().max(b.max_bound()),
            Formula::Globally(_, hi, f) | Formula::Finally(_, hi, f) => (*hi).max(f.max_bound()),
            Formula::Until(_, hi, p, q) => (*hi).max(p.max_bound()).max(q.max_bound()),
        }
    }

    pub fn atoms(&self) -> Vec<String> {
        fn go(f: &Formula, out: &mut Vec<String>) {
            match f {
                Formula::True | Formula::False => {}
                Formula::Atom(a) => {
                    if !out.contains(a) {
                        out.push(a.clone())
                    }
                }
                Formula::Not(f) => go(f, out),
                Formula::And(a, b) | Formula::Implies(a, b) | Formula::Until(_, _, a, b) => {
                    go(a, out);
                    go(b, out);
                }
                Formula::Globally(_, _, f) | Formula::Finally(_, _, f) => go(f, out),
            }
        }
        let mut out = vec![];
        go(self, &mut out);
        out
    }

    pub fn parse(src: &str) -> Result<Self, LtlError> {
        let mut p = Parser { s: src.as_bytes(), pos: 0 };
        let f = p.implication()?;
        p.ws();
        if p.pos != p.s.len() {
            return Err(p.err("trailing input"));
        }
        Ok(f)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::True => write!(f, "true"),
            Formula::False => write!(f, "false"),
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Not(x) => write!(f, "!{x}"),
            Formula::And(a, b) => write!(f, "({a} && {b})"),
            Formula::Implies(a, b) => write!(f, "({a} -> {b})"),
            Formula::Globally(lo, hi, x) => write!(f, "G[{lo},{hi}] {x}"),
            Formula::Finally(lo, hi, x) => write!(f, "F[{lo},{hi}] {x}"),
            Formula::Until(lo, hi, p, q) => write!(f, "({p} U[{lo},{hi}] {q})"),
        }
    }
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> LtlError {
        LtlError::Parse { pos: self.pos, msg: msg.into() }
    }

    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.ws();
        if self.s[self.pos..].starts_with(tok.as_bytes()) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    // implication := conj ('->' implication)?
    fn implication(&mut self) -> Result<Formula, LtlError> {
        let lhs = self.conj()?;
        if self.eat("->") {
            return Ok(Formula::implies(lhs, self.implication()?));
        }
        Ok(lhs)
    }

    // conj := until ('&&' until)*
    fn conj(&mut self) -> Result<Formula, LtlError> {
        let mut lhs = self.until()?;
        while self.eat("&&") {
            lhs = Formula::and(lhs, self.until()?);
        }
        Ok(lhs)
    }

    // until := unary ('U' interval unary)?
    fn until(&mut self) -> Result<Formula, LtlError> {
        let lhs = self.unary()?;
        self.ws();
        if self.s[self.pos..].starts_with(b"U[") {
            self.pos += 1;
            let (a, b) = self.interval()?;
            return Ok(Formula::until(a, b, lhs, self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, LtlError> {
        self.ws();
        if self.eat("!") {
            return Ok(Formula::not(self.unary()?));
        }
        if self.eat("(") {
            let f = self.implication()?;
            if !self.eat(")") {
                return Err(self.err("expected )"));
            }
            return Ok(f);
        }
        for (op, is_g) in [("G[", true), ("F[", false)] {
            if self.s[self.pos..].starts_with(op.as_bytes()) {
                self.pos += 1;
                let (a, b) = self.interval()?;
                let f = self.unary()?;
                return Ok(if is_g { Formula::globally(a, b, f) } else { Formula::finally(a, b, f) });
            }
        }
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || b"_.".contains(&self.s[self.pos])) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected formula"));
        }
        let name = std::str::from_utf8(&self.s[start..self.pos]).unwrap();
        Ok(match name {
            "true" => Formula::True,
            "false" => Formula::False,
            _ => Formula::atom(name),
        })
    }

    fn number(&mut self) -> Result<usize, LtlError> {
        self.ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.s[start..self.pos]).unwrap().parse().map_err(|_| self.err("expected integer"))
    }

    fn interval(&mut self) -> Result<(usize, usize), LtlError> {
        if !self.eat("[") {
            return Err(self.err("expected ["));
        }
        let a = self.number()?;
        if !self.eat(",") {
            return Err(self.err("expected ,"));
        }
        let b = self.number()?;
        if !self.eat("]") {
            return Err(self.err("expected ]"));
        }
        if a > b {
            return Err(LtlError::Interval(a, b));
        }
        Ok((a, b))
    }
}

/// Named boolean signals of equal length.
pub type BoolTrace = BTreeMap<String, Vec<bool>>;

fn holds(f: &Formula, tr: &BoolTrace, n: usize, i: usize) -> bool {
    let span = |a: usize, b: usize| (i + a)..=(i + b).min(n.saturating_sub(1));
    match f {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(a) => i < n && tr[a][i],
        Formula::Not(x) => !holds(x, tr, n, i),
        Formula::And(a, b) => holds(a, tr, n, i) && holds(b, tr, n, i),
        Formula::Implies(a, b) => !holds(a, tr, n, i) || holds(b, tr, n, i),
        Formula::Globally(a, b, x) => span(*a, *b).all(|j| holds(x, tr, n, j)),
        Formula::Finally(a, b, x) => span(*a, *b).any(|j| holds(x, tr, n, j)),
        Formula::Until(a, b, p, q) => span(*a, *b).any(|k| holds(q, tr, n, k) && (i..k).all(|j| holds(p, tr, n, j))),
    }
}

/// Truth of `f` at position 0. Windows running past the end are cut at
/// the last step.
pub fn ltl_oracle(f: &Formula, trace: &BoolTrace) -> Result<bool, LtlError> {
    let atoms = f.atoms();
    let mut lens = vec![];
    for a in &atoms {
        lens.push(trace.get(a).ok_or_else(|| LtlError::Unknown(a.clone()))?.len());
    }
    if atoms.is_empty() {
        lens.extend(trace.values().map(|v| v.len()));
    }
    let n = lens.into_iter().min().unwrap_or(0);
    let need = f.max_bound() + 1;
    if n < need {
        return Err(LtlError::Short { len: n, need });
    }
    Ok(holds(f, trace, n, 0))
}
