//! Arithmetic expressions over the coordinates `x1, y1, ..., xn, yn`, `r2 = |z|²`
//! and, in right-hand sides only, the solution value `t`.
//!
//! Precedence from tightest: `^` (right associative), unary `-`, `* /`, `+ -`.

use crate::error::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Var {
    X(usize),
    Y(usize),
    R2,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Exp,
    Log,
    Sqrt,
    Abs,
    Min,
    Max,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => Self::Exp,
            "log" => Self::Log,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            "min" => Self::Min,
            "max" => Self::Max,
            "pow" => Self::Pow,
            _ => return None,
        })
    }

    fn arity(self) -> usize {
        match self {
            Self::Min | Self::Max | Self::Pow => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    source: String,
    root: Node,
    t_offset: Option<usize>,
    max_complex_index: usize,
}

pub fn parse_expression(src: &str) -> Result<Expression, ExprError> {
    let tokens = tokenize(src)?;
    let mut p = Parser {
        tokens: &tokens,
        pos: 0,
        end: src.len(),
        t_offset: None,
        max_index: 0,
    };
    let root = p.expr()?;
    if let Some(tok) = p.peek() {
        return Err(ExprError::Syntax {
            offset: tok.offset,
            message: format!("unexpected {}", tok.kind.describe()),
        });
    }
    Ok(Expression {
        source: src.to_string(),
        root,
        t_offset: p.t_offset,
        max_complex_index: p.max_index,
    })
}

impl Expression {
    /// Parses an expression that must not depend on `t` (boundary data, densities).
    pub fn parse_field(src: &str) -> Result<Self, ExprError> {
        let e = parse_expression(src)?;
        e.require_no_t()?;
        Ok(e)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn uses_t(&self) -> bool {
        self.t_offset.is_some()
    }

    pub fn require_no_t(&self) -> Result<(), ExprError> {
        match self.t_offset {
            Some(offset) => Err(ExprError::SolutionValueNotAllowed { offset }),
            None => Ok(()),
        }
    }

    /// Largest complex index `j` referenced through `xj` or `yj`.
    pub fn max_complex_index(&self) -> usize {
        self.max_complex_index
    }

    /// Evaluates at solution value `t` and coordinates ordered `x1, y1, x2, y2, ...`.
    pub fn eval(&self, t: f64, coords: &[f64]) -> Result<f64, ExprError> {
        eval(&self.root, t, coords)
    }
}

impl std::fmt::Display for Expression {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.source)
    }
}

fn eval(node: &Node, t: f64, coords: &[f64]) -> Result<f64, ExprError> {
    Ok(match node {
        Node::Num(v) => *v,
        Node::Var(var) => match *var {
            Var::T => t,
            Var::R2 => coords.iter().map(|c| c * c).sum(),
            Var::X(j) | Var::Y(j) => {
                let axis = 2 * (j - 1) + usize::from(matches!(var, Var::Y(_)));
                *coords.get(axis).ok_or_else(|| {
                    ExprError::Domain(format!(
                        "coordinate index {j} exceeds the dimension {}",
                        coords.len() / 2
                    ))
                })?
            }
        },
        Node::Neg(a) => -eval(a, t, coords)?,
        Node::Bin(op, a, b) => {
            let (a, b) = (eval(a, t, coords)?, eval(b, t, coords)?);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
                BinOp::Pow => a.powf(b),
            }
        }
        Node::Call(func, args) => {
            let a = eval(&args[0], t, coords)?;
            match func {
                Func::Exp => a.exp(),
                Func::Log => {
                    if a <= 0.0 {
                        return Err(ExprError::Domain(format!("log of nonpositive value {a}")));
                    }
                    a.ln()
                }
                Func::Sqrt => {
                    if a < 0.0 {
                        return Err(ExprError::Domain(format!("sqrt of negative value {a}")));
                    }
                    a.sqrt()
                }
                Func::Abs => a.abs(),
                Func::Min => a.min(eval(&args[1], t, coords)?),
                Func::Max => a.max(eval(&args[1], t, coords)?),
                Func::Pow => a.powf(eval(&args[1], t, coords)?),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            Self::Num(v) => format!("number {v}"),
            Self::Ident(s) => format!("identifier '{s}'"),
            Self::Op(c) => format!("'{c}'"),
            Self::LParen => "'('".into(),
            Self::RParen => "')'".into(),
            Self::Comma => "','".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    offset: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("malformed number '{text}'"),
                })?;
                TokenKind::Num(v)
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                TokenKind::Ident(src[start..i].to_string())
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                i += 1;
                TokenKind::Op(c as char)
            }
            b'(' => {
                i += 1;
                TokenKind::LParen
            }
            b')' => {
                i += 1;
                TokenKind::RParen
            }
            b',' => {
                i += 1;
                TokenKind::Comma
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    offset: start,
                    message: format!("unexpected character '{ch}'"),
                });
            }
        };
        out.push(Token {
            kind,
            offset: start,
        });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    end: usize,
    t_offset: Option<usize>,
    max_index: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind) -> Result<(), ExprError> {
        match self.peek() {
            Some(tok) if tok.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(tok) => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("expected {}, found {}", kind.describe(), tok.kind.describe()),
            }),
            None => Err(ExprError::Syntax {
                offset: self.end,
                message: format!("expected {}, found end of input", kind.describe()),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.primary()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            // the exponent may carry its own sign: 2^-1
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax {
                offset: self.end,
                message: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Node::Num(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(inner)
            }
            TokenKind::Ident(name) => self.identifier(&name, tok.offset),
            other => Err(ExprError::Syntax {
                offset: tok.offset,
                message: format!("unexpected {}", other.describe()),
            }),
        }
    }

    fn identifier(&mut self, name: &str, offset: usize) -> Result<Node, ExprError> {
        if let Some(func) = Func::lookup(name) {
            self.expect(TokenKind::LParen)?;
            let mut args = vec![self.expr()?];
            while matches!(self.peek(), Some(Token { kind: TokenKind::Comma, .. })) {
                self.pos += 1;
                args.push(self.expr()?);
            }
            self.expect(TokenKind::RParen)?;
            if args.len() != func.arity() {
                return Err(ExprError::Arity {
                    name: name.to_string(),
                    expected: func.arity(),
                    found: args.len(),
                    offset,
                });
            }
            return Ok(Node::Call(func, args));
        }
        let var = match name {
            "t" => {
                self.t_offset.get_or_insert(offset);
                Var::T
            }
            "r2" => Var::R2,
            _ => {
                let parsed = name
                    .strip_prefix('x')
                    .map(|d| (false, d))
                    .or_else(|| name.strip_prefix('y').map(|d| (true, d)))
                    .and_then(|(is_y, digits)| {
                        let j: usize = digits.parse().ok().filter(|j| *j >= 1)?;
                        (!digits.starts_with('0')).then_some((is_y, j))
                    });
                let Some((is_y, j)) = parsed else {
                    return Err(ExprError::UnknownIdentifier {
                        name: name.to_string(),
                        offset,
                    });
                };
                self.max_index = self.max_index.max(j);
                if is_y {
                    Var::Y(j)
                } else {
                    Var::X(j)
                }
            }
        };
        Ok(Node::Var(var))
    }
}
