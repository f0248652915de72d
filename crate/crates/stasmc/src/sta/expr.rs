//! Expression language shared by guards, invariants, updates, rates and
//! query predicates.
//!
//! Text is parsed into [`Expr`] (names unresolved), then compiled against a
//! [`Scope`] into [`CExpr`] whose leaves are slot indices. Evaluation goes
//! through the [`Env`] trait so the same compiled tree works on a live
//! simulator state or on a stored snapshot.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("parse error at {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown identifier {0}")]
    Unknown(String),
    #[error("evaluation error: {0}")]
    Eval(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Real(f64),
}

impl Value {
    pub fn as_f64(self) -> f64 {
        match self {
            Value::Int(i) => i as f64,
            Value::Bool(b) => b as i64 as f64,
            Value::Real(r) => r,
        }
    }

    pub fn truthy(self) -> bool {
        match self {
            Value::Int(i) => i != 0,
            Value::Bool(b) => b,
            Value::Real(r) => r != 0.0,
        }
    }

    pub fn as_int(self) -> Result<i64, ExprError> {
        match self {
            Value::Int(i) => Ok(i),
            Value::Bool(b) => Ok(b as i64),
            Value::Real(r) if r.fract() == 0.0 => Ok(r as i64),
            Value::Real(r) => Err(ExprError::Eval(format!("{r} is not an integer index"))),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Real(r) => {
                if r.fract() == 0.0 && r.abs() < 1e15 {
                    write!(f, "{r:.1}")
                } else {
                    write!(f, "{r}")
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
    And,
    Or,
    Imply,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Ge => ">=",
            BinOp::Gt => ">",
            BinOp::And => "&&",
            BinOp::Or => "||",
            BinOp::Imply => "->",
        }
    }

    fn prec(self) -> u8 {
        match self {
            BinOp::Imply => 1,
            BinOp::Or => 2,
            BinOp::And => 3,
            BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne | BinOp::Ge | BinOp::Gt => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Eq | BinOp::Ne | BinOp::Ge | BinOp::Gt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Lit(Value),
    Ident(String),
    Index(String, Box<Expr>),
    /// `inst.member`: a clock, variable, location name or label of a named instance.
    Member(String, String),
    /// `any(Template, label)`: some live instance of the template sits at a
    /// location with that name or label.
    Any(String, String),
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Cond(Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn not(e: Expr) -> Expr {
        Expr::Not(Box::new(e))
    }

    /// Negation that cancels an outer negation instead of stacking a new one.
    pub fn negate(&self) -> Expr {
        match self {
            Expr::Not(inner) => (**inner).clone(),
            other => Expr::not(other.clone()),
        }
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn and_all(parts: Vec<Expr>) -> Expr {
        let mut it = parts.into_iter();
        match it.next() {
            None => Expr::Lit(Value::Bool(true)),
            Some(first) => it.fold(first, |acc, e| Expr::bin(BinOp::And, acc, e)),
        }
    }

    fn prec(&self) -> u8 {
        match self {
            Expr::Cond(..) => 0,
            Expr::Bin(op, ..) => op.prec(),
            Expr::Neg(_) | Expr::Not(_) => 7,
            _ => 8,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min: u8) -> fmt::Result {
            if e.prec() < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Ident(n) => write!(f, "{n}"),
            Expr::Index(n, i) => write!(f, "{n}[{i}]"),
            Expr::Member(a, b) => write!(f, "{a}.{b}"),
            Expr::Any(t, l) => write!(f, "any({t}, {l})"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                child(f, e, 7)
            }
            Expr::Not(e) => {
                write!(f, "!")?;
                child(f, e, 7)
            }
            Expr::Bin(op, a, b) => {
                let p = op.prec();
                // comparisons and implication do not chain; arithmetic and
                // logic are left-associative
                let (lp, rp) = match op {
                    BinOp::Imply => (p + 1, p),
                    _ if op.is_comparison() => (p + 1, p + 1),
                    _ => (p, p + 1),
                };
                child(f, a, lp)?;
                write!(f, " {} ", op.symbol())?;
                child(f, b, rp)
            }
            Expr::Cond(c, a, b) => {
                child(f, c, 1)?;
                write!(f, " ? ")?;
                child(f, a, 1)?;
                write!(f, " : ")?;
                child(f, b, 0)
            }
        }
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Sym(&'static str),
    End,
}

const SYMBOLS: [&str; 25] = [
    "&&", "||", "->", "==", "!=", "<=", ">=", "(", ")", "[", "]", ",", ".", "!", "?", ":", "<",
    ">", "+", "-", "*", "/", "%", "=", ";",
];

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut is_int = true;
            while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                is_int = false;
                i += 1;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let save = i;
                i += 1;
                if i < bytes.len() && (bytes[i] == b'-' || bytes[i] == b'+') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i].is_ascii_digit() {
                    is_int = false;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| ExprError::Parse { pos: start, msg: format!("bad number {text}") })?;
            out.push((start, Tok::Num(v, is_int)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(src[start..i].to_string())));
            continue;
        }
        let rest = &src[i..];
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                out.push((i, Tok::Sym(s)));
                i += s.len();
            }
            None => {
                return Err(ExprError::Parse { pos: i, msg: format!("unexpected character {c:?}") });
            }
        }
    }
    out.push((src.len(), Tok::End));
    Ok(out)
}

// ---------------------------------------------------------------- parser

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
}

impl Parser {
    fn new(src: &str) -> Result<Self, ExprError> {
        Ok(Parser { toks: lex(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn here(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Parse { pos: self.here(), msg: msg.into() })
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Tok::Sym(x) if *x == s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek(), Tok::Ident(x) if x == w) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ExprError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected '{s}'"))
        }
    }

    fn ident(&mut self) -> Result<String, ExprError> {
        match self.bump() {
            Tok::Ident(s) => Ok(s),
            _ => {
                self.pos -= 1;
                self.err("expected identifier")
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let c = self.imply()?;
        if self.eat_sym("?") {
            let a = self.expr()?;
            self.expect_sym(":")?;
            let b = self.expr()?;
            return Ok(Expr::Cond(Box::new(c), Box::new(a), Box::new(b)));
        }
        Ok(c)
    }

    fn imply(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.or()?;
        if self.eat_sym("->") || self.eat_word("imply") {
            let rhs = self.imply()?;
            return Ok(Expr::bin(BinOp::Imply, lhs, rhs));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.and()?;
        while self.eat_sym("||") || self.eat_word("or") {
            let rhs = self.and()?;
            lhs = Expr::bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.cmp()?;
        while self.eat_sym("&&") || self.eat_word("and") {
            let rhs = self.cmp()?;
            lhs = Expr::bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, ExprError> {
        let lhs = self.sum()?;
        let op = match self.peek() {
            Tok::Sym("<") => BinOp::Lt,
            Tok::Sym("<=") => BinOp::Le,
            Tok::Sym("==") => BinOp::Eq,
            Tok::Sym("!=") => BinOp::Ne,
            Tok::Sym(">=") => BinOp::Ge,
            Tok::Sym(">") => BinOp::Gt,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.sum()?;
        Ok(Expr::bin(op, lhs, rhs))
    }

    fn sum(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.prod()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("+") => BinOp::Add,
                Tok::Sym("-") => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.prod()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn prod(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym("*") => BinOp::Mul,
                Tok::Sym("/") => BinOp::Div,
                Tok::Sym("%") => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.eat_sym("-") {
            return Ok(match self.unary()? {
                Expr::Lit(Value::Int(i)) => Expr::Lit(Value::Int(-i)),
                Expr::Lit(Value::Real(r)) => Expr::Lit(Value::Real(-r)),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat_sym("!") || self.eat_word("not") {
            return Ok(Expr::not(self.unary()?));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        match self.bump() {
            Tok::Num(v, true) if v.abs() < 9.0e15 => Ok(Expr::Lit(Value::Int(v as i64))),
            Tok::Num(v, _) => Ok(Expr::Lit(Value::Real(v))),
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(w) if w == "true" => Ok(Expr::Lit(Value::Bool(true))),
            Tok::Ident(w) if w == "false" => Ok(Expr::Lit(Value::Bool(false))),
            Tok::Ident(w) if w == "any" && matches!(self.peek(), Tok::Sym("(")) => {
                self.bump();
                let t = self.ident()?;
                self.expect_sym(",")?;
                let l = self.ident()?;
                self.expect_sym(")")?;
                Ok(Expr::Any(t, l))
            }
            Tok::Ident(name) => {
                if self.eat_sym("[") {
                    let idx = self.expr()?;
                    self.expect_sym("]")?;
                    return Ok(Expr::Index(name, Box::new(idx)));
                }
                if self.eat_sym(".") {
                    let member = self.ident()?;
                    return Ok(Expr::Member(name, member));
                }
                Ok(Expr::Ident(name))
            }
            _ => {
                self.pos = self.pos.saturating_sub(1);
                self.err("expected expression")
            }
        }
    }

    fn finish(&self) -> Result<(), ExprError> {
        if matches!(self.peek(), Tok::End) {
            Ok(())
        } else {
            self.err("trailing input")
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    p.finish()?;
    Ok(e)
}

/// Left-hand side of an assignment.
#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Name(String),
    Index(String, Expr),
}

/// Parses `a = e1, b[i] = e2` (commas or semicolons separate).
pub fn parse_updates(src: &str) -> Result<Vec<(LValue, Expr)>, ExprError> {
    let mut p = Parser::new(src)?;
    let mut out = Vec::new();
    if matches!(p.peek(), Tok::End) {
        return Ok(out);
    }
    loop {
        let name = p.ident()?;
        let lv = if p.eat_sym("[") {
            let idx = p.expr()?;
            p.expect_sym("]")?;
            LValue::Index(name, idx)
        } else {
            LValue::Name(name)
        };
        p.expect_sym("=")?;
        let rhs = p.expr()?;
        out.push((lv, rhs));
        if !(p.eat_sym(",") || p.eat_sym(";")) {
            break;
        }
        if matches!(p.peek(), Tok::End) {
            break;
        }
    }
    p.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------- compiled form

/// What a name resolves to in some scope.
#[derive(Debug, Clone, PartialEq)]
pub enum Ref {
    Clock(usize),
    Local(usize),
    Param(usize),
    Global(usize),
    GlobalArray { base: usize, len: usize },
    InstClock(usize, usize),
    InstLocal(usize, usize),
    /// Instance sits at one of the flagged locations.
    InstAt(usize, Vec<bool>),
    /// Constant folded at compile time.
    Const(Value),
}

pub trait Scope {
    fn resolve(&self, name: &str) -> Option<Ref>;
    fn resolve_member(&self, _inst: &str, _member: &str) -> Option<Ref> {
        None
    }
    /// Template index plus per-location mask.
    fn resolve_any(&self, _template: &str, _label: &str) -> Option<(usize, Vec<bool>)> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CExpr {
    Const(Value),
    Clock(usize),
    Local(usize),
    Param(usize),
    Global(usize),
    GlobalAt { base: usize, len: usize, idx: Box<CExpr> },
    InstClock(usize, usize),
    InstLocal(usize, usize),
    InstAt(usize, Vec<bool>),
    AnyAt(usize, Vec<bool>),
    Neg(Box<CExpr>),
    Not(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Cond(Box<CExpr>, Box<CExpr>, Box<CExpr>),
}

pub fn compile(e: &Expr, scope: &dyn Scope) -> Result<CExpr, ExprError> {
    let leaf = |r: Ref, name: &str| -> Result<CExpr, ExprError> {
        Ok(match r {
            Ref::Clock(i) => CExpr::Clock(i),
            Ref::Local(i) => CExpr::Local(i),
            Ref::Param(i) => CExpr::Param(i),
            Ref::Global(i) => CExpr::Global(i),
            Ref::InstClock(a, b) => CExpr::InstClock(a, b),
            Ref::InstLocal(a, b) => CExpr::InstLocal(a, b),
            Ref::InstAt(a, m) => CExpr::InstAt(a, m),
            Ref::Const(v) => CExpr::Const(v),
            Ref::GlobalArray { .. } => {
                return Err(ExprError::Eval(format!("array {name} used without index")))
            }
        })
    };
    Ok(match e {
        Expr::Lit(v) => CExpr::Const(*v),
        Expr::Ident(n) => leaf(scope.resolve(n).ok_or_else(|| ExprError::Unknown(n.clone()))?, n)?,
        Expr::Index(n, i) => match scope.resolve(n) {
            Some(Ref::GlobalArray { base, len }) => {
                CExpr::GlobalAt { base, len, idx: Box::new(compile(i, scope)?) }
            }
            Some(_) => return Err(ExprError::Eval(format!("{n} is not an array"))),
            None => return Err(ExprError::Unknown(n.clone())),
        },
        Expr::Member(a, b) => {
            let r = scope
                .resolve_member(a, b)
                .ok_or_else(|| ExprError::Unknown(format!("{a}.{b}")))?;
            leaf(r, b)?
        }
        Expr::Any(t, l) => {
            let (ti, mask) = scope
                .resolve_any(t, l)
                .ok_or_else(|| ExprError::Unknown(format!("any({t}, {l})")))?;
            CExpr::AnyAt(ti, mask)
        }
        Expr::Neg(x) => CExpr::Neg(Box::new(compile(x, scope)?)),
        Expr::Not(x) => CExpr::Not(Box::new(compile(x, scope)?)),
        Expr::Bin(op, a, b) => CExpr::Bin(*op, Box::new(compile(a, scope)?), Box::new(compile(b, scope)?)),
        Expr::Cond(c, a, b) => CExpr::Cond(
            Box::new(compile(c, scope)?),
            Box::new(compile(a, scope)?),
            Box::new(compile(b, scope)?),
        ),
    })
}

/// Read access used by [`CExpr::eval`].
pub trait Env {
    fn clock(&self, i: usize) -> f64;
    fn local(&self, i: usize) -> Value;
    fn param(&self, i: usize) -> Value;
    fn global(&self, i: usize) -> Value;
    fn inst_clock(&self, inst: usize, i: usize) -> f64;
    fn inst_local(&self, inst: usize, i: usize) -> Value;
    fn inst_loc(&self, inst: usize) -> usize;
    fn any_at(&self, template: usize, mask: &[bool]) -> bool;
}

fn arith(op: BinOp, a: Value, b: Value) -> Result<Value, ExprError> {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return Ok(Value::Int(match op {
            BinOp::Add => x.wrapping_add(y),
            BinOp::Sub => x.wrapping_sub(y),
            BinOp::Mul => x.wrapping_mul(y),
            BinOp::Div | BinOp::Rem if y == 0 => {
                return Err(ExprError::Eval("integer division by zero".into()))
            }
            BinOp::Div => x / y,
            BinOp::Rem => x % y,
            _ => unreachable!(),
        }));
    }
    let (x, y) = (a.as_f64(), b.as_f64());
    Ok(Value::Real(match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
        BinOp::Rem => x % y,
        _ => unreachable!(),
    }))
}

fn compare(op: BinOp, a: Value, b: Value) -> bool {
    if let (Value::Int(x), Value::Int(y)) = (a, b) {
        return match op {
            BinOp::Lt => x < y,
            BinOp::Le => x <= y,
            BinOp::Eq => x == y,
            BinOp::Ne => x != y,
            BinOp::Ge => x >= y,
            BinOp::Gt => x > y,
            _ => unreachable!(),
        };
    }
    let (x, y) = (a.as_f64(), b.as_f64());
    match op {
        BinOp::Lt => x < y,
        BinOp::Le => x <= y,
        BinOp::Eq => x == y,
        BinOp::Ne => x != y,
        BinOp::Ge => x >= y,
        BinOp::Gt => x > y,
        _ => unreachable!(),
    }
}

impl CExpr {
    pub fn eval(&self, env: &dyn Env) -> Result<Value, ExprError> {
        Ok(match self {
            CExpr::Const(v) => *v,
            CExpr::Clock(i) => Value::Real(env.clock(*i)),
            CExpr::Local(i) => env.local(*i),
            CExpr::Param(i) => env.param(*i),
            CExpr::Global(i) => env.global(*i),
            CExpr::GlobalAt { base, len, idx } => {
                let k = idx.eval(env)?.as_int()?;
                if k < 0 || k as usize >= *len {
                    return Err(ExprError::Eval(format!("index {k} out of range 0..{len}")));
                }
                env.global(base + k as usize)
            }
            CExpr::InstClock(a, b) => Value::Real(env.inst_clock(*a, *b)),
            CExpr::InstLocal(a, b) => env.inst_local(*a, *b),
            CExpr::InstAt(a, mask) => Value::Bool(mask[env.inst_loc(*a)]),
            CExpr::AnyAt(t, mask) => Value::Bool(env.any_at(*t, mask)),
            CExpr::Neg(x) => match x.eval(env)? {
                Value::Int(i) => Value::Int(-i),
                v => Value::Real(-v.as_f64()),
            },
            CExpr::Not(x) => Value::Bool(!x.eval(env)?.truthy()),
            CExpr::Bin(op, a, b) => match op {
                BinOp::And => Value::Bool(a.eval(env)?.truthy() && b.eval(env)?.truthy()),
                BinOp::Or => Value::Bool(a.eval(env)?.truthy() || b.eval(env)?.truthy()),
                BinOp::Imply => Value::Bool(!a.eval(env)?.truthy() || b.eval(env)?.truthy()),
                op if op.is_comparison() => Value::Bool(compare(*op, a.eval(env)?, b.eval(env)?)),
                op => arith(*op, a.eval(env)?, b.eval(env)?)?,
            },
            CExpr::Cond(c, a, b) => {
                if c.eval(env)?.truthy() {
                    a.eval(env)?
                } else {
                    b.eval(env)?
                }
            }
        })
    }

    pub fn eval_bool(&self, env: &dyn Env) -> Result<bool, ExprError> {
        Ok(self.eval(env)?.truthy())
    }

    pub fn eval_f64(&self, env: &dyn Env) -> Result<f64, ExprError> {
        Ok(self.eval(env)?.as_f64())
    }

    /// True when the value can change while time passes.
    pub fn has_clock(&self) -> bool {
        match self {
            CExpr::Clock(_) | CExpr::InstClock(..) => true,
            CExpr::GlobalAt { idx, .. } => idx.has_clock(),
            CExpr::Neg(x) | CExpr::Not(x) => x.has_clock(),
            CExpr::Bin(_, a, b) => a.has_clock() || b.has_clock(),
            CExpr::Cond(c, a, b) => c.has_clock() || a.has_clock() || b.has_clock(),
            _ => false,
        }
    }

    /// Splits a top-level conjunction.
    pub fn conjuncts(&self) -> Vec<&CExpr> {
        match self {
            CExpr::Bin(BinOp::And, a, b) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            other => vec![other],
        }
    }

    pub fn is_const_true(&self) -> bool {
        matches!(self, CExpr::Const(v) if v.truthy())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Vars;
    impl Scope for Vars {
        fn resolve(&self, name: &str) -> Option<Ref> {
            match name {
                "x" => Some(Ref::Global(0)),
                "c" => Some(Ref::Clock(0)),
                "arr" => Some(Ref::GlobalArray { base: 1, len: 3 }),
                _ => None,
            }
        }
    }
    struct E;
    impl Env for E {
        fn clock(&self, _: usize) -> f64 {
            2.5
        }
        fn local(&self, _: usize) -> Value {
            Value::Int(0)
        }
        fn param(&self, _: usize) -> Value {
            Value::Int(0)
        }
        fn global(&self, i: usize) -> Value {
            Value::Int(i as i64 * 10)
        }
        fn inst_clock(&self, _: usize, _: usize) -> f64 {
            0.0
        }
        fn inst_local(&self, _: usize, _: usize) -> Value {
            Value::Int(0)
        }
        fn inst_loc(&self, _: usize) -> usize {
            0
        }
        fn any_at(&self, _: usize, _: &[bool]) -> bool {
            false
        }
    }

    fn ev(src: &str) -> Value {
        compile(&parse_expr(src).unwrap(), &Vars).unwrap().eval(&E).unwrap()
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(ev("1 + 2 * 3"), Value::Int(7));
        assert_eq!(ev("(1 + 2) * 3"), Value::Int(9));
        assert_eq!(ev("7 / 2"), Value::Int(3));
        assert_eq!(ev("7.0 / 2"), Value::Real(3.5));
        assert_eq!(ev("-3 % 2"), Value::Int(-1));
    }

    #[test]
    fn logic_and_indexing() {
        assert_eq!(ev("arr[1] == 20 && !(x > 0)"), Value::Bool(true));
        assert_eq!(ev("false -> x > 100"), Value::Bool(true));
        assert_eq!(ev("c >= 2.5 ? 1 : 2"), Value::Int(1));
        assert_eq!(ev("c < 2 or x == 0"), Value::Bool(true));
    }

    #[test]
    fn index_out_of_range_is_an_error() {
        let c = compile(&parse_expr("arr[3]").unwrap(), &Vars).unwrap();
        assert!(c.eval(&E).is_err());
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(compile(&parse_expr("y + 1").unwrap(), &Vars), Err(ExprError::Unknown("y".into())));
    }

    #[test]
    fn display_round_trips() {
        for src in [
            "a && (b || c)",
            "!(x > 1) -> y[2] == 3",
            "a - (b - c)",
            "p.fail || any(E2E, fail)",
            "x < 0 ? -x : x",
            "(a -> b) -> c",
        ] {
            let e = parse_expr(src).unwrap();
            assert_eq!(parse_expr(&e.to_string()).unwrap(), e, "{src}");
        }
    }

    #[test]
    fn updates_parse() {
        let u = parse_updates("x = 1, arr[x] = x + 1; c = 0").unwrap();
        assert_eq!(u.len(), 3);
        assert!(matches!(&u[1].0, LValue::Index(n, _) if n == "arr"));
        assert!(parse_updates("").unwrap().is_empty());
    }

    #[test]
    fn clock_detection_and_conjuncts() {
        let c = compile(&parse_expr("c >= 1 && x == 0 && arr[0] > 2").unwrap(), &Vars).unwrap();
        let parts = c.conjuncts();
        assert_eq!(parts.len(), 3);
        assert!(parts[0].has_clock());
        assert!(!parts[1].has_clock());
    }
}
