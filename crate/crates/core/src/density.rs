//! Closed-form density language for integrands `F(r, u, g)` and `G_j(r, u, g)`.
//!
//! ```text
//! expr      := term (("+" | "-") term)*
//! term      := unary (("*" | "/") unary)*
//! unary     := "-" NUMBER | "-" unary | primary
//! primary   := NUMBER | VAR | "(" expr ")" | call
//! call      := "pow(" expr "," signed ")" | "pos(" expr ")" | "neg(" expr ")"
//!            | "min(" expr "," expr ")" | "max(" expr "," expr ")"
//!            | "piecewise(" expr ";" signed ("," signed)* ";" poly ("," poly)* ")"
//! poly      := "[" signed ("," signed)* "]"
//! signed    := "-"? NUMBER
//! VAR       := "r" | "g" | "u1" .. "u9"
//! ```
//!
//! A fractional exponent is only accepted on a `pos(..)` or `neg(..)` base.
//! `piecewise(x; b1..bn; p0..pn)` evaluates `p0(x - b1)` for `x < b1` and
//! `p_i(x - b_i)` on `[b_i, b_{i+1})`; coefficients are in increasing degree.

use std::fmt;

use thiserror::Error;

pub const MAX_INPUT: usize = 64 * 1024;
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("syntax error at byte {pos}: expected {}", expected.join(" | "))]
    Syntax { pos: usize, expected: Vec<String> },
    #[error("unknown variable `{name}` at byte {pos} (field has {arity} component(s))")]
    UnknownVariable { name: String, pos: usize, arity: usize },
    #[error("`{func}` at byte {pos} takes {expected} argument(s), got {got}")]
    Arity { func: String, pos: usize, expected: String, got: usize },
    #[error("fractional exponent {exponent} at byte {pos} needs a pos(..) or neg(..) base")]
    Guard { pos: usize, exponent: f64 },
    #[error("evaluation left the domain in `{subtree}`")]
    Domain { subtree: String },
}

impl DensityError {
    pub fn code(&self) -> &'static str {
        match self {
            DensityError::Syntax { .. } => "syntax",
            DensityError::UnknownVariable { .. } => "unknown_variable",
            DensityError::Arity { .. } => "arity",
            DensityError::Guard { .. } => "guard",
            DensityError::Domain { .. } => "domain",
        }
    }

    /// Byte offset in the source text, for parse errors.
    pub fn position(&self) -> Option<usize> {
        match self {
            DensityError::Syntax { pos, .. }
            | DensityError::UnknownVariable { pos, .. }
            | DensityError::Arity { pos, .. }
            | DensityError::Guard { pos, .. } => Some(*pos),
            DensityError::Domain { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    R,
    G,
    /// Zero-based component index: `U(0)` is `u1`.
    U(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Pos(Box<Expr>),
    NegPart(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Piecewise { arg: Box<Expr>, knots: Vec<f64>, pieces: Vec<Vec<f64>> },
}

impl Expr {
    pub fn node_count(&self) -> usize {
        1 + self.children().iter().map(|c| c.node_count()).sum::<usize>()
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Pos(a) | Expr::NegPart(a) => vec![a],
            Expr::Piecewise { arg, .. } => vec![arg],
            Expr::Bin(_, a, b) | Expr::Min(a, b) | Expr::Max(a, b) => vec![a, b],
        }
    }

    pub fn visit_vars(&self, f: &mut impl FnMut(Var)) {
        if let Expr::Var(v) = self {
            f(*v);
        }
        for c in self.children() {
            c.visit_vars(f);
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, ..) => op.precedence(),
            _ => 3,
        }
    }

    /// Replaces variables for which `f` returns an expression.
    pub fn substitute(&self, f: &impl Fn(Var) -> Option<Expr>) -> Expr {
        let b = |e: &Expr| Box::new(e.substitute(f));
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(v) => f(*v).unwrap_or(Expr::Var(*v)),
            Expr::Neg(a) => Expr::Neg(b(a)),
            Expr::Bin(op, x, y) => Expr::Bin(*op, b(x), b(y)),
            Expr::Pow(a, e) => Expr::Pow(b(a), *e),
            Expr::Pos(a) => Expr::Pos(b(a)),
            Expr::NegPart(a) => Expr::NegPart(b(a)),
            Expr::Min(x, y) => Expr::Min(b(x), b(y)),
            Expr::Max(x, y) => Expr::Max(b(x), b(y)),
            Expr::Piecewise { arg, knots, pieces } => {
                Expr::Piecewise { arg: b(arg), knots: knots.clone(), pieces: pieces.clone() }
            }
        }
    }

    /// Convenience constructors used by the problem catalog.
    pub fn var(v: Var) -> Expr {
        Expr::Var(v)
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::R => write!(f, "r"),
            Var::G => write!(f, "g"),
            Var::U(i) => write!(f, "u{}", i + 1),
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", num(*c)),
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Neg(a) => write!(f, "-({a})"),
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                if a.precedence() < p {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                write!(f, " {} ", op.symbol())?;
                if b.precedence() <= p {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Pow(a, e) => write!(f, "pow({a}, {})", num(*e)),
            Expr::Pos(a) => write!(f, "pos({a})"),
            Expr::NegPart(a) => write!(f, "neg({a})"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Piecewise { arg, knots, pieces } => {
                let ks: Vec<String> = knots.iter().map(|k| num(*k)).collect();
                let ps: Vec<String> = pieces
                    .iter()
                    .map(|p| format!("[{}]", p.iter().map(|c| num(*c)).collect::<Vec<_>>().join(", ")))
                    .collect();
                write!(f, "piecewise({arg}; {}; {})", ks.join(", "), ps.join(", "))
            }
        }
    }
}

// ---------------------------------------------------------------- lexer

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer<'a> {
    src: &'a [u8],
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(text: &'a str) -> Result<Vec<(Tok, usize)>, DensityError> {
        let mut lx = Lexer { src: text.as_bytes(), toks: Vec::new() };
        let mut i = 0;
        while i < lx.src.len() {
            let c = lx.src[i];
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || c == b'.' {
                i = lx.number(i)?;
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < lx.src.len() && (lx.src[i].is_ascii_alphanumeric() || lx.src[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(text[start..i].to_string()), start));
            } else if b"+-*/(),;[]".contains(&c) {
                lx.toks.push((Tok::Sym(c as char), i));
                i += 1;
            } else {
                return Err(DensityError::Syntax { pos: i, expected: vec!["token".into()] });
            }
        }
        lx.toks.push((Tok::End, lx.src.len()));
        Ok(lx.toks)
    }

    fn number(&mut self, start: usize) -> Result<usize, DensityError> {
        let s = self.src;
        let mut i = start;
        let digits = |i: &mut usize| {
            let b = *i;
            while *i < s.len() && s[*i].is_ascii_digit() {
                *i += 1;
            }
            *i > b
        };
        let mut any = digits(&mut i);
        if i < s.len() && s[i] == b'.' {
            i += 1;
            any |= digits(&mut i);
        }
        if !any {
            return Err(DensityError::Syntax { pos: start, expected: vec!["digit".into()] });
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if !digits(&mut j) {
                return Err(DensityError::Syntax { pos: j, expected: vec!["exponent digits".into()] });
            }
            i = j;
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        let v: f64 = text
            .parse()
            .map_err(|_| DensityError::Syntax { pos: start, expected: vec!["number".into()] })?;
        if !v.is_finite() {
            return Err(DensityError::Syntax { pos: start, expected: vec!["finite number".into()] });
        }
        self.toks.push((Tok::Num(v), start));
        Ok(i)
    }
}

// ---------------------------------------------------------------- parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
    arity: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &[&str]) -> Result<T, DensityError> {
        Err(DensityError::Syntax { pos: self.pos(), expected: expected.iter().map(|s| s.to_string()).collect() })
    }

    fn eat(&mut self, c: char) -> bool {
        if *self.peek() == Tok::Sym(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), DensityError> {
        if self.eat(c) {
            Ok(())
        } else {
            self.fail(&[&format!("'{c}'")])
        }
    }

    fn expr(&mut self) -> Result<Expr, DensityError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return self.fail(&["shallower nesting"]);
        }
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('+') => BinOp::Add,
                Tok::Sym('-') => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, DensityError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Sym('*') => BinOp::Mul,
                Tok::Sym('/') => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, DensityError> {
        if self.eat('-') {
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return Ok(Expr::Const(-v));
            }
            self.depth += 1;
            if self.depth > MAX_DEPTH {
                return self.fail(&["shallower nesting"]);
            }
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary()
    }

    fn signed(&mut self) -> Result<f64, DensityError> {
        let neg = self.eat('-');
        match *self.peek() {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => self.fail(&["number"]),
        }
    }

    fn primary(&mut self) -> Result<Expr, DensityError> {
        let pos = self.pos();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Const(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::Sym('(') {
                    self.bump();
                    self.call(&name, pos)
                } else {
                    self.variable(&name, pos)
                }
            }
            _ => Err(DensityError::Syntax {
                pos,
                expected: ["number", "variable", "function", "'('", "'-'"].iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    fn variable(&self, name: &str, pos: usize) -> Result<Expr, DensityError> {
        let unknown = || DensityError::UnknownVariable { name: name.to_string(), pos, arity: self.arity };
        match name {
            "r" => Ok(Expr::Var(Var::R)),
            "g" => Ok(Expr::Var(Var::G)),
            _ => {
                let idx = name
                    .strip_prefix('u')
                    .filter(|d| d.len() == 1)
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&i| (1..=9).contains(&i))
                    .ok_or_else(unknown)?;
                if idx > self.arity {
                    return Err(unknown());
                }
                Ok(Expr::Var(Var::U(idx - 1)))
            }
        }
    }

    /// Comma-separated expression arguments up to the closing parenthesis.
    fn args(&mut self, func: &str, pos: usize, want: usize) -> Result<Vec<Expr>, DensityError> {
        let mut out = vec![self.expr()?];
        while self.eat(',') {
            out.push(self.expr()?);
        }
        if *self.peek() != Tok::Sym(')') {
            return self.fail(&["','", "')'"]);
        }
        self.bump();
        if out.len() != want {
            return Err(DensityError::Arity { func: func.into(), pos, expected: want.to_string(), got: out.len() });
        }
        Ok(out)
    }

    fn call(&mut self, name: &str, pos: usize) -> Result<Expr, DensityError> {
        match name {
            "pos" | "neg" => {
                let mut a = self.args(name, pos, 1)?;
                let a = Box::new(a.remove(0));
                Ok(if name == "pos" { Expr::Pos(a) } else { Expr::NegPart(a) })
            }
            "min" | "max" => {
                let mut a = self.args(name, pos, 2)?;
                let b = Box::new(a.remove(1));
                let a = Box::new(a.remove(0));
                Ok(if name == "min" { Expr::Min(a, b) } else { Expr::Max(a, b) })
            }
            "pow" => {
                let base = self.expr()?;
                if !self.eat(',') {
                    if self.eat(')') {
                        return Err(DensityError::Arity { func: "pow".into(), pos, expected: "2".into(), got: 1 });
                    }
                    return self.fail(&["','"]);
                }
                let epos = self.pos();
                let e = self.signed()?;
                if *self.peek() == Tok::Sym(',') {
                    return Err(DensityError::Arity { func: "pow".into(), pos, expected: "2".into(), got: 3 });
                }
                self.expect(')')?;
                let integral = e.fract() == 0.0 && e.abs() <= 64.0;
                if !integral && !matches!(base, Expr::Pos(_) | Expr::NegPart(_)) {
                    return Err(DensityError::Guard { pos: epos, exponent: e });
                }
                Ok(Expr::Pow(Box::new(base), e))
            }
            "piecewise" => {
                let arg = self.expr()?;
                self.expect(';')?;
                let mut knots = vec![self.signed()?];
                while self.eat(',') {
                    let kpos = self.pos();
                    let k = self.signed()?;
                    if k <= *knots.last().unwrap() {
                        return Err(DensityError::Syntax { pos: kpos, expected: vec!["increasing breakpoint".into()] });
                    }
                    knots.push(k);
                }
                self.expect(';')?;
                let mut pieces = vec![self.poly()?];
                while self.eat(',') {
                    pieces.push(self.poly()?);
                }
                self.expect(')')?;
                if pieces.len() != knots.len() + 1 {
                    return Err(DensityError::Arity {
                        func: "piecewise".into(),
                        pos,
                        expected: format!("{} pieces", knots.len() + 1),
                        got: pieces.len(),
                    });
                }
                Ok(Expr::Piecewise { arg: Box::new(arg), knots, pieces })
            }
            _ => Err(DensityError::Syntax {
                pos,
                expected: ["pow", "pos", "neg", "min", "max", "piecewise"].iter().map(|s| s.to_string()).collect(),
            }),
        }
    }

    fn poly(&mut self) -> Result<Vec<f64>, DensityError> {
        self.expect('[')?;
        let mut c = vec![self.signed()?];
        while self.eat(',') {
            c.push(self.signed()?);
        }
        self.expect(']')?;
        Ok(c)
    }
}

/// Parses `text` for a field with `arity` components (`u1..u{arity}`).
pub fn parse_expr(text: &str, arity: usize) -> Result<Expr, DensityError> {
    if text.len() > MAX_INPUT {
        return Err(DensityError::Syntax { pos: MAX_INPUT, expected: vec!["end of input (64 KiB limit)".into()] });
    }
    if !text.is_ascii() {
        let pos = text.bytes().position(|b| !b.is_ascii()).unwrap_or(0);
        return Err(DensityError::Syntax { pos, expected: vec!["ASCII".into()] });
    }
    let toks = Lexer::run(text)?;
    let mut p = Parser { toks, at: 0, arity, depth: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    Ok(e)
}

// ---------------------------------------------------------------- tape

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Var(Var),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    PowI(i32),
    PowF(f64),
    Pos,
    NegPart,
    Min,
    Max,
    Piecewise(usize),
}

#[derive(Debug, Clone)]
struct Table {
    knots: Vec<f64>,
    pieces: Vec<Vec<f64>>,
}

impl Table {
    /// Piece index for argument `x` (right-continuous at knots).
    fn piece(&self, x: f64) -> usize {
        self.knots.iter().take_while(|&&k| x >= k).count()
    }

    fn shift(&self, i: usize) -> f64 {
        self.knots[i.saturating_sub(1).min(self.knots.len() - 1)]
    }

    fn eval_piece(&self, i: usize, x: f64) -> (f64, f64) {
        let s = x - self.shift(i);
        let p = &self.pieces[i];
        let mut v = 0.0;
        let mut d = 0.0;
        for &c in p.iter().rev() {
            d = d * s + v;
            v = v * s + c;
        }
        (v, d)
    }
}

/// Result of a derivative evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Partials {
    pub value: f64,
    /// `de/du_c` for each component.
    pub du: Vec<f64>,
    pub dg: f64,
    /// Set when a kink was hit and the right-derivative convention was used.
    pub nondifferentiable: bool,
}

/// Reusable evaluation buffers.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    vals: Vec<f64>,
    ders: Vec<f64>,
}

/// A parsed density compiled to a postfix tape.
#[derive(Debug, Clone)]
pub struct DensityExpr {
    expr: Expr,
    arity: usize,
    tape: Vec<Op>,
    tables: Vec<Table>,
    max_stack: usize,
}

impl PartialEq for DensityExpr {
    fn eq(&self, other: &Self) -> bool {
        self.expr == other.expr && self.arity == other.arity
    }
}

impl fmt::Display for DensityExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)
    }
}

const KINK_TOL: f64 = 1e-10;

impl DensityExpr {
    pub fn parse(text: &str, arity: usize) -> Result<Self, DensityError> {
        Ok(Self::from_expr(parse_expr(text, arity)?, arity))
    }

    pub fn from_expr(expr: Expr, arity: usize) -> Self {
        let mut tape = Vec::new();
        let mut tables = Vec::new();
        compile(&expr, &mut tape, &mut tables);
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for op in &tape {
            depth = depth + 1 - op_arity(op);
            max_stack = max_stack.max(depth);
        }
        DensityExpr { expr, arity, tape, tables, max_stack }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn node_count(&self) -> usize {
        self.expr.node_count()
    }

    pub fn variables(&self) -> Vec<Var> {
        let mut vs = Vec::new();
        self.expr.visit_vars(&mut |v| {
            if !vs.contains(&v) {
                vs.push(v)
            }
        });
        vs.sort_by_key(|v| match v {
            Var::R => 0,
            Var::G => 1,
            Var::U(i) => 2 + i,
        });
        vs
    }

    pub fn uses(&self, v: Var) -> bool {
        let mut hit = false;
        self.expr.visit_vars(&mut |w| hit |= w == v);
        hit
    }

    /// Rebuilds the subtree that produced tape entry `end`.
    fn subtree(&self, end: usize) -> String {
        let mut stack: Vec<Expr> = Vec::new();
        for op in &self.tape[..=end] {
            let e = match *op {
                Op::Const(c) => Expr::Const(c),
                Op::Var(v) => Expr::Var(v),
                Op::Neg => Expr::Neg(Box::new(stack.pop().unwrap())),
                Op::Pos => Expr::Pos(Box::new(stack.pop().unwrap())),
                Op::NegPart => Expr::NegPart(Box::new(stack.pop().unwrap())),
                Op::PowI(k) => Expr::Pow(Box::new(stack.pop().unwrap()), k as f64),
                Op::PowF(e) => Expr::Pow(Box::new(stack.pop().unwrap()), e),
                Op::Piecewise(t) => Expr::Piecewise {
                    arg: Box::new(stack.pop().unwrap()),
                    knots: self.tables[t].knots.clone(),
                    pieces: self.tables[t].pieces.clone(),
                },
                Op::Add | Op::Sub | Op::Mul | Op::Div | Op::Min | Op::Max => {
                    let b = Box::new(stack.pop().unwrap());
                    let a = Box::new(stack.pop().unwrap());
                    match *op {
                        Op::Add => Expr::Bin(BinOp::Add, a, b),
                        Op::Sub => Expr::Bin(BinOp::Sub, a, b),
                        Op::Mul => Expr::Bin(BinOp::Mul, a, b),
                        Op::Div => Expr::Bin(BinOp::Div, a, b),
                        Op::Min => Expr::Min(a, b),
                        _ => Expr::Max(a, b),
                    }
                }
            };
            stack.push(e);
        }
        stack.pop().map(|e| e.to_string()).unwrap_or_default()
    }

    fn domain_err(&self, at: usize) -> DensityError {
        DensityError::Domain { subtree: self.subtree(at) }
    }

    /// Value only.
    pub fn eval_with(&self, r: f64, u: &[f64], g: f64, s: &mut Scratch) -> Result<f64, DensityError> {
        let st = &mut s.vals;
        st.clear();
        st.reserve(self.max_stack);
        for (i, op) in self.tape.iter().enumerate() {
            let v = match *op {
                Op::Const(c) => c,
                Op::Var(Var::R) => r,
                Op::Var(Var::G) => g,
                Op::Var(Var::U(c)) => u[c],
                Op::Neg => -st.pop().unwrap(),
                Op::Pos => st.pop().unwrap().max(0.0),
                Op::NegPart => (-st.pop().unwrap()).max(0.0),
                Op::PowI(k) => st.pop().unwrap().powi(k),
                Op::PowF(e) => st.pop().unwrap().powf(e),
                Op::Piecewise(t) => {
                    let x = st.pop().unwrap();
                    let tb = &self.tables[t];
                    tb.eval_piece(tb.piece(x), x).0
                }
                _ => {
                    let b = st.pop().unwrap();
                    let a = st.pop().unwrap();
                    match *op {
                        Op::Add => a + b,
                        Op::Sub => a - b,
                        Op::Mul => a * b,
                        Op::Div => {
                            if b == 0.0 {
                                return Err(self.domain_err(i));
                            }
                            a / b
                        }
                        Op::Min => a.min(b),
                        _ => a.max(b),
                    }
                }
            };
            if !v.is_finite() {
                return Err(self.domain_err(i));
            }
            st.push(v);
        }
        Ok(st.pop().unwrap_or(0.0))
    }

    pub fn eval(&self, r: f64, u: &[f64], g: f64) -> Result<f64, DensityError> {
        self.eval_with(r, u, g, &mut Scratch::default())
    }

    /// Value plus forward-mode derivatives along `u_1..u_m, g`, written to
    /// `du` (length m). Returns `(value, dg, nondifferentiable)`.
    pub fn partials_with(
        &self,
        r: f64,
        u: &[f64],
        g: f64,
        s: &mut Scratch,
        du: &mut [f64],
    ) -> Result<(f64, f64, bool), DensityError> {
        let m = u.len();
        let nd = m + 1;
        let vals = &mut s.vals;
        let ders = &mut s.ders;
        vals.clear();
        ders.clear();
        let mut kink = false;
        for (i, op) in self.tape.iter().enumerate() {
            match *op {
                Op::Const(c) => {
                    vals.push(c);
                    ders.extend(std::iter::repeat_n(0.0, nd));
                }
                Op::Var(v) => {
                    let base = ders.len();
                    ders.extend(std::iter::repeat_n(0.0, nd));
                    vals.push(match v {
                        Var::R => r,
                        Var::G => {
                            ders[base + m] = 1.0;
                            g
                        }
                        Var::U(c) => {
                            ders[base + c] = 1.0;
                            u[c]
                        }
                    });
                }
                Op::Neg | Op::Pos | Op::NegPart | Op::PowI(_) | Op::PowF(_) | Op::Piecewise(_) => {
                    let x = *vals.last().unwrap();
                    let base = ders.len() - nd;
                    let d = &mut ders[base..];
                    let (v, scale) = match *op {
                        Op::Neg => (-x, -1.0),
                        Op::Pos | Op::NegPart => {
                            let sgn = if matches!(op, Op::Pos) { 1.0 } else { -1.0 };
                            let y = sgn * x;
                            if y > 0.0 {
                                (y, sgn)
                            } else if y < 0.0 {
                                (0.0, 0.0)
                            } else {
                                // right derivative: max(y', 0) per direction
                                for di in d.iter_mut() {
                                    let yd = sgn * *di;
                                    if yd != 0.0 {
                                        kink = true;
                                    }
                                    *di = yd.max(0.0);
                                }
                                (0.0, 1.0)
                            }
                        }
                        Op::PowI(k) => {
                            let v = x.powi(k);
                            let sc = if k == 0 { 0.0 } else { k as f64 * x.powi(k - 1) };
                            (v, sc)
                        }
                        Op::PowF(e) => {
                            let v = x.powf(e);
                            let sc = if x > 0.0 {
                                e * x.powf(e - 1.0)
                            } else if e > 1.0 {
                                0.0
                            } else {
                                if d.iter().any(|di| *di != 0.0) {
                                    kink = true;
                                }
                                0.0
                            };
                            (v, sc)
                        }
                        Op::Piecewise(t) => {
                            let tb = &self.tables[t];
                            let k = tb.piece(x);
                            let (v, dv) = tb.eval_piece(k, x);
                            if k > 0 && x == tb.knots[k - 1] {
                                let (_, dl) = tb.eval_piece(k - 1, x);
                                if (dl - dv).abs() > KINK_TOL * (1.0 + dv.abs()) {
                                    kink = true;
                                }
                            }
                            (v, dv)
                        }
                        _ => unreachable!(),
                    };
                    if scale != 1.0 {
                        d.iter_mut().for_each(|di| *di *= scale);
                    }
                    if !v.is_finite() || d.iter().any(|di| !di.is_finite()) {
                        return Err(self.domain_err(i));
                    }
                    *vals.last_mut().unwrap() = v;
                }
                _ => {
                    let b = vals.pop().unwrap();
                    let a = *vals.last().unwrap();
                    let bb = ders.len() - nd;
                    let ab = bb - nd;
                    let v = match *op {
                        Op::Add => {
                            for j in 0..nd {
                                ders[ab + j] += ders[bb + j];
                            }
                            a + b
                        }
                        Op::Sub => {
                            for j in 0..nd {
                                ders[ab + j] -= ders[bb + j];
                            }
                            a - b
                        }
                        Op::Mul => {
                            for j in 0..nd {
                                ders[ab + j] = ders[ab + j] * b + a * ders[bb + j];
                            }
                            a * b
                        }
                        Op::Div => {
                            if b == 0.0 {
                                return Err(self.domain_err(i));
                            }
                            let q = a / b;
                            for j in 0..nd {
                                ders[ab + j] = (ders[ab + j] - q * ders[bb + j]) / b;
                            }
                            q
                        }
                        Op::Min | Op::Max => {
                            let is_min = matches!(op, Op::Min);
                            let pick_a = if is_min { a < b } else { a > b };
                            if a == b {
                                for j in 0..nd {
                                    let (da, db) = (ders[ab + j], ders[bb + j]);
                                    if da != db {
                                        kink = true;
                                    }
                                    ders[ab + j] = if is_min { da.min(db) } else { da.max(db) };
                                }
                            } else if !pick_a {
                                for j in 0..nd {
                                    ders[ab + j] = ders[bb + j];
                                }
                            }
                            if is_min { a.min(b) } else { a.max(b) }
                        }
                        _ => unreachable!(),
                    };
                    ders.truncate(bb);
                    if !v.is_finite() {
                        return Err(self.domain_err(i));
                    }
                    *vals.last_mut().unwrap() = v;
                }
            }
        }
        let value = vals.pop().unwrap_or(0.0);
        let base = ders.len().saturating_sub(nd);
        if ders.len() >= nd {
            du[..m].copy_from_slice(&ders[base..base + m]);
            Ok((value, ders[base + m], kink))
        } else {
            du.iter_mut().for_each(|d| *d = 0.0);
            Ok((value, 0.0, kink))
        }
    }

    pub fn partials(&self, r: f64, u: &[f64], g: f64) -> Result<Partials, DensityError> {
        let mut du = vec![0.0; u.len()];
        let (value, dg, nondifferentiable) = self.partials_with(r, u, g, &mut Scratch::default(), &mut du)?;
        Ok(Partials { value, du, dg, nondifferentiable })
    }
}

fn op_arity(op: &Op) -> usize {
    match op {
        Op::Const(_) | Op::Var(_) => 0,
        Op::Neg | Op::Pos | Op::NegPart | Op::PowI(_) | Op::PowF(_) | Op::Piecewise(_) => 1,
        _ => 2,
    }
}

fn compile(e: &Expr, tape: &mut Vec<Op>, tables: &mut Vec<Table>) {
    match e {
        Expr::Const(c) => tape.push(Op::Const(*c)),
        Expr::Var(v) => tape.push(Op::Var(*v)),
        Expr::Neg(a) => {
            compile(a, tape, tables);
            tape.push(Op::Neg);
        }
        Expr::Pos(a) => {
            compile(a, tape, tables);
            tape.push(Op::Pos);
        }
        Expr::NegPart(a) => {
            compile(a, tape, tables);
            tape.push(Op::NegPart);
        }
        Expr::Pow(a, ex) => {
            compile(a, tape, tables);
            if ex.fract() == 0.0 && ex.abs() <= 64.0 {
                tape.push(Op::PowI(*ex as i32));
            } else {
                tape.push(Op::PowF(*ex));
            }
        }
        Expr::Bin(op, a, b) => {
            compile(a, tape, tables);
            compile(b, tape, tables);
            tape.push(match op {
                BinOp::Add => Op::Add,
                BinOp::Sub => Op::Sub,
                BinOp::Mul => Op::Mul,
                BinOp::Div => Op::Div,
            });
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            compile(a, tape, tables);
            compile(b, tape, tables);
            tape.push(if matches!(e, Expr::Min(..)) { Op::Min } else { Op::Max });
        }
        Expr::Piecewise { arg, knots, pieces } => {
            compile(arg, tape, tables);
            tables.push(Table { knots: knots.clone(), pieces: pieces.clone() });
            tape.push(Op::Piecewise(tables.len() - 1));
        }
    }
}

/// Parses a density for an `arity`-component field.
pub fn parse_density(text: &str, arity: usize) -> Result<DensityExpr, DensityError> {
    DensityExpr::parse(text, arity)
}

pub fn eval_density(e: &DensityExpr, r: f64, u: &[f64], g: f64) -> Result<f64, DensityError> {
    e.eval(r, u, g)
}

pub fn eval_partials(e: &DensityExpr, r: f64, u: &[f64], g: f64) -> Result<Partials, DensityError> {
    e.partials(r, u, g)
}

/// Energy density plus constraint densities with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySet {
    pub energy: DensityExpr,
    pub constraints: Vec<(DensityExpr, f64)>,
}

impl DensitySet {
    pub fn new(energy: DensityExpr, constraints: Vec<(DensityExpr, f64)>) -> Result<Self, DensityError> {
        let m = energy.arity();
        if let Some((g, _)) = constraints.iter().find(|(g, _)| g.arity() != m) {
            return Err(DensityError::Arity {
                func: g.to_string(),
                pos: 0,
                expected: format!("{m} components"),
                got: g.arity(),
            });
        }
        Ok(DensitySet { energy, constraints })
    }

    pub fn parse(arity: usize, energy: &str, constraints: &[(&str, f64)]) -> Result<Self, DensityError> {
        let energy = DensityExpr::parse(energy, arity)?;
        let cs = constraints
            .iter()
            .map(|(t, l)| Ok((DensityExpr::parse(t, arity)?, *l)))
            .collect::<Result<Vec<_>, DensityError>>()?;
        Self::new(energy, cs)
    }

    pub fn arity(&self) -> usize {
        self.energy.arity()
    }

    pub fn k(&self) -> usize {
        self.constraints.len()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.constraints.iter().map(|c| c.1).collect()
    }

    pub fn uses_radius(&self) -> bool {
        self.energy.uses(Var::R) || self.constraints.iter().any(|(g, _)| g.uses(Var::R))
    }
}
