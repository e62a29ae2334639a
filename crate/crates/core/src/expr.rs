//! Small arithmetic expression language used by config files.
//!
//! Precedence, loosest first: `+ -`, then `* /`, then unary `-`, then `^`
//! (right associative). `-x^2` therefore parses as `-(x^2)`. Functions:
//! `sin cos exp log sqrt abs` (one argument) and `min max` (two arguments).
//! The constant `pi` is predefined. Variables are resolved against a fixed
//! list at compile time so evaluation is a slice lookup.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func1 {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => vars[*i],
            Node::Neg(a) => -a.eval(vars),
            Node::Bin(op, a, b) => {
                let (a, b) = (a.eval(vars), b.eval(vars));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Node::Call1(f, a) => {
                let a = a.eval(vars);
                match f {
                    Func1::Sin => a.sin(),
                    Func1::Cos => a.cos(),
                    Func1::Exp => a.exp(),
                    Func1::Log => a.ln(),
                    Func1::Sqrt => a.sqrt(),
                    Func1::Abs => a.abs(),
                }
            }
            Node::Call2(f, a, b) => {
                let (a, b) = (a.eval(vars), b.eval(vars));
                match f {
                    Func2::Min => a.min(b),
                    Func2::Max => a.max(b),
                }
            }
        }
    }

    fn fold(self) -> Node {
        let folded = match self {
            Node::Neg(a) => Node::Neg(Box::new(a.fold())),
            Node::Bin(op, a, b) => Node::Bin(op, Box::new(a.fold()), Box::new(b.fold())),
            Node::Call1(f, a) => Node::Call1(f, Box::new(a.fold())),
            Node::Call2(f, a, b) => Node::Call2(f, Box::new(a.fold()), Box::new(b.fold())),
            leaf => return leaf,
        };
        if folded.is_constant() {
            Node::Const(folded.eval(&[]))
        } else {
            folded
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Node::Const(_) => true,
            Node::Var(_) => false,
            Node::Neg(a) | Node::Call1(_, a) => matches!(**a, Node::Const(_)),
            Node::Bin(_, a, b) | Node::Call2(_, a, b) => {
                matches!(**a, Node::Const(_)) && matches!(**b, Node::Const(_))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
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
            let text: String = chars[start..i].iter().collect();
            let value = text
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{text}` in `{src}`")))?;
            out.push(Token::Num(value));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            out.push(match c {
                '+' | '-' | '*' | '/' | '^' => Token::Op(c),
                '(' => Token::LParen,
                ')' => Token::RParen,
                ',' => Token::Comma,
                // U+2212 minus sign, as pasted from typeset formulas
                '\u{2212}' => Token::Op('-'),
                _ => {
                    return Err(Error::Expr(format!(
                        "unexpected character `{c}` in `{src}`"
                    )))
                }
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, msg: impl AsRef<str>) -> Error {
        Error::Expr(format!("{} in `{}`", msg.as_ref(), self.src))
    }

    fn expect(&mut self, want: Token) -> Result<()> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            other => Err(self.err(format!("expected {want:?}, found {other:?}"))),
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        match self.peek() {
            Some(Token::Op('-')) => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(Token::Op('+')) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Node::Const(v)),
            Some(Token::LParen) => {
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Some(Token::Ident(name)) => {
                if let Some(Token::LParen) = self.peek() {
                    self.pos += 1;
                    return self.call(&name);
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    _ => Err(self.err(format!(
                        "unknown symbol `{name}` (allowed variables: {})",
                        self.vars.join(", ")
                    ))),
                }
            }
            other => Err(self.err(format!("unexpected token {other:?}"))),
        }
    }

    fn call(&mut self, name: &str) -> Result<Node> {
        let f1 = match name {
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "exp" => Some(Func1::Exp),
            "log" => Some(Func1::Log),
            "sqrt" => Some(Func1::Sqrt),
            "abs" => Some(Func1::Abs),
            _ => None,
        };
        if let Some(f) = f1 {
            let a = self.expr()?;
            self.expect(Token::RParen)?;
            return Ok(Node::Call1(f, Box::new(a)));
        }
        let f2 = match name {
            "min" => Func2::Min,
            "max" => Func2::Max,
            _ => return Err(self.err(format!("unknown function `{name}`"))),
        };
        let a = self.expr()?;
        self.expect(Token::Comma)?;
        let b = self.expr()?;
        self.expect(Token::RParen)?;
        Ok(Node::Call2(f2, Box::new(a), Box::new(b)))
    }
}

/// A compiled expression over a fixed, ordered list of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
    source: String,
}

impl Expr {
    pub fn parse(src: &str, vars: &[&str]) -> Result<Self> {
        let tokens = tokenize(src)?;
        if tokens.is_empty() {
            return Err(Error::Expr("empty expression".into()));
        }
        let mut parser = Parser {
            tokens,
            pos: 0,
            vars,
            src,
        };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.err(format!("trailing input at token {}", parser.pos)));
        }
        Ok(Self {
            root: root.fold(),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            source: src.to_string(),
        })
    }

    pub fn constant(value: f64, vars: &[&str]) -> Self {
        Self {
            root: Node::Const(value),
            vars: vars.iter().map(|s| s.to_string()).collect(),
            source: format!("{value}"),
        }
    }

    /// Values must follow the variable order given at parse time.
    pub fn eval(&self, values: &[f64]) -> f64 {
        self.root.eval(values)
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }
}
