//! Closed-form expression grammar shared by exponent fields and nonlinearities.
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers are resolved against a caller-supplied variable table at parse
//! time, so evaluation is a tree walk over a flat slot array. `pi` is a
//! builtin constant. Functions: `sqrt exp ln abs sin cos min max`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sqrt,
    Exp,
    Ln,
    Abs,
    Sin,
    Cos,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sqrt" => (Func::Sqrt, 1),
            "exp" => (Func::Exp, 1),
            "ln" => (Func::Ln, 1),
            "abs" => (Func::Abs, 1),
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }
}

/// A parsed expression bound to a variable table.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    /// Parses `text`, resolving identifiers against `vars` (slot order).
    pub fn parse(text: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(text)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
        };
        let root = p.expr()?;
        if p.pos != tokens.len() {
            return Err(Error::Expr(format!(
                "unexpected trailing input in '{text}' at token {}",
                p.pos
            )));
        }
        Ok(Expr {
            source: text.to_string(),
            root,
        })
    }

    pub fn constant(value: f64) -> Expr {
        Expr {
            source: format!("{value}"),
            root: Node::Num(value),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates with `slots[i]` bound to the i-th variable of the table.
    pub fn eval(&self, slots: &[f64]) -> f64 {
        eval(&self.root, slots)
    }

    /// True when the expression references variable slot `idx`.
    pub fn uses(&self, idx: usize) -> bool {
        uses(&self.root, idx)
    }
}

fn uses(n: &Node, idx: usize) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(i) => *i == idx,
        Node::Neg(a) => uses(a, idx),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            uses(a, idx) || uses(b, idx)
        }
        Node::Call(_, args) => args.iter().any(|a| uses(a, idx)),
    }
}

fn eval(n: &Node, s: &[f64]) -> f64 {
    match n {
        Node::Num(v) => *v,
        Node::Var(i) => s[*i],
        Node::Neg(a) => -eval(a, s),
        Node::Add(a, b) => eval(a, s) + eval(b, s),
        Node::Sub(a, b) => eval(a, s) - eval(b, s),
        Node::Mul(a, b) => eval(a, s) * eval(b, s),
        Node::Div(a, b) => eval(a, s) / eval(b, s),
        Node::Pow(a, b) => eval(a, s).powf(eval(b, s)),
        Node::Call(f, args) => {
            let a = eval(&args[0], s);
            match f {
                Func::Sqrt => a.sqrt(),
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Abs => a.abs(),
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Min => a.min(eval(&args[1], s)),
                Func::Max => a.max(eval(&args[1], s)),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(text: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent suffix: 1e-3, 2.5E+2
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
            let v = s.parse::<f64>().map_err(|_| Error::Expr(format!("bad number '{s}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character '{c}' in '{text}'")));
        }
    }
    if out.is_empty() {
        return Err(Error::Expr("empty expression".into()));
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Tok],
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek_op(&self, c: char) -> bool {
        matches!(self.tokens.get(self.pos), Some(Tok::Op(o)) if *o == c)
    }

    fn expect_op(&mut self, c: char) -> Result<()> {
        if self.peek_op(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expr(format!("expected '{c}' at token {}", self.pos)))
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.peek_op('+') {
                self.pos += 1;
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.peek_op('-') {
                self.pos += 1;
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.peek_op('*') {
                self.pos += 1;
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.peek_op('/') {
                self.pos += 1;
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek_op('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.peek_op('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek_op('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = self
            .tokens
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Expr("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect_op(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if self.peek_op('(') {
                    let (f, arity) =
                        Func::lookup(&name).ok_or_else(|| Error::Expr(format!("unknown function '{name}'")))?;
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while self.peek_op(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect_op(')')?;
                    if args.len() != arity {
                        return Err(Error::Expr(format!(
                            "'{name}' takes {arity} argument(s), got {}",
                            args.len()
                        )));
                    }
                    return Ok(Node::Call(f, args));
                }
                if name == "pi" {
                    return Ok(Node::Num(std::f64::consts::PI));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(Error::Expr(format!(
                        "unknown identifier '{name}' (allowed: {})",
                        self.vars.join(", ")
                    ))),
                }
            }
            Tok::Op(c) => Err(Error::Expr(format!("unexpected '{c}'"))),
        }
    }
}
