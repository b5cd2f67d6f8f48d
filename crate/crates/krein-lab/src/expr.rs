//! Arithmetic expressions of one real variable with exact symbolic
//! differentiation.
//!
//! Coefficient functions (`k`, `p`, `q1`, `q2`, gauges `h`, trial
//! functions) are entered as text and parsed into an immutable AST.
//! The grammar has the usual precedence (`^` above unary minus above
//! `*` `/` above `+` `-`), `^` right-associative, everything else
//! left-associative. Implicit multiplication is rejected.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },
    #[error("domain error at x = {x}: {what}")]
    Domain { x: f64, what: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Sqrt,
    Abs,
    // Not part of the documented input grammar; produced by
    // differentiating `abs` and accepted back by the parser so that
    // printed derivatives round-trip.
    Sign,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Var,
    Num(f64),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, Box<Ast>),
    Neg(Box<Ast>),
    Fun(Func, Box<Ast>),
}

/// A parsed, immutable expression. Safe to evaluate from many threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Ast,
}

impl Expression {
    pub fn parse(source: &str) -> Result<Expression, ExprError> {
        Parser::new(source).parse()
    }

    pub fn number(v: f64) -> Expression {
        Expression { root: Ast::Num(v) }
    }

    pub fn var() -> Expression {
        Expression { root: Ast::Var }
    }

    pub fn evaluate(&self, x: f64) -> Result<f64, ExprError> {
        let v = eval(&self.root, x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain {
                x,
                what: "non-finite result (overflow)".into(),
            })
        }
    }

    pub fn differentiate(&self) -> Expression {
        Expression {
            root: diff(&self.root),
        }
    }

    /// True when the expression is a literal constant equal to `v`.
    pub fn is_const(&self, v: f64) -> bool {
        matches!(self.root, Ast::Num(c) if c == v)
    }

    // Small algebra used when assembling symbolic residuals
    // (Jacobi identity, divergence form). Constant-folds the trivial
    // identities so that repeated differentiation stays tractable.
    pub fn add(&self, o: &Expression) -> Expression {
        Expression {
            root: add_e(self.root.clone(), o.root.clone()),
        }
    }
    pub fn sub(&self, o: &Expression) -> Expression {
        Expression {
            root: sub_e(self.root.clone(), o.root.clone()),
        }
    }
    pub fn mul(&self, o: &Expression) -> Expression {
        Expression {
            root: mul_e(self.root.clone(), o.root.clone()),
        }
    }
    pub fn div(&self, o: &Expression) -> Expression {
        Expression {
            root: div_e(self.root.clone(), o.root.clone()),
        }
    }
    pub fn neg(&self) -> Expression {
        Expression {
            root: neg_e(self.root.clone()),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_ast(f, &self.root, 0)
    }
}

fn eval(a: &Ast, x: f64) -> Result<f64, ExprError> {
    Ok(match a {
        Ast::Var => x,
        Ast::Num(v) => *v,
        Ast::Add(l, r) => eval(l, x)? + eval(r, x)?,
        Ast::Sub(l, r) => eval(l, x)? - eval(r, x)?,
        Ast::Mul(l, r) => eval(l, x)? * eval(r, x)?,
        Ast::Div(l, r) => {
            let d = eval(r, x)?;
            if d == 0.0 {
                return Err(ExprError::Domain {
                    x,
                    what: "division by zero".into(),
                });
            }
            eval(l, x)? / d
        }
        Ast::Pow(b, e) => {
            let base = eval(b, x)?;
            let ex = eval(e, x)?;
            if base > 0.0 {
                base.powf(ex)
            } else if base == 0.0 {
                if ex > 0.0 {
                    0.0
                } else if ex == 0.0 {
                    1.0
                } else {
                    return Err(ExprError::Domain {
                        x,
                        what: "zero raised to a negative power".into(),
                    });
                }
            } else {
                // Negative base: only integer exponents stay real.
                if ex.fract() == 0.0 && ex.abs() < 9.0e15 {
                    base.powf(ex)
                } else {
                    return Err(ExprError::Domain {
                        x,
                        what: "negative base with non-integer exponent".into(),
                    });
                }
            }
        }
        Ast::Neg(v) => -eval(v, x)?,
        Ast::Fun(f, arg) => {
            let v = eval(arg, x)?;
            match f {
                Func::Exp => v.exp(),
                Func::Log => {
                    if v <= 0.0 {
                        return Err(ExprError::Domain {
                            x,
                            what: "log of a non-positive value".into(),
                        });
                    }
                    v.ln()
                }
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Sinh => v.sinh(),
                Func::Cosh => v.cosh(),
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(ExprError::Domain {
                            x,
                            what: "sqrt of a negative value".into(),
                        });
                    }
                    v.sqrt()
                }
                Func::Abs => v.abs(),
                Func::Sign => {
                    if v > 0.0 {
                        1.0
                    } else if v < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    })
}

// ---- constant-folding constructors -------------------------------------

fn add_e(l: Ast, r: Ast) -> Ast {
    match (&l, &r) {
        (Ast::Num(a), Ast::Num(b)) => Ast::Num(a + b),
        (Ast::Num(z), _) if *z == 0.0 => r,
        (_, Ast::Num(z)) if *z == 0.0 => l,
        _ => Ast::Add(Box::new(l), Box::new(r)),
    }
}

fn sub_e(l: Ast, r: Ast) -> Ast {
    match (&l, &r) {
        (Ast::Num(a), Ast::Num(b)) => Ast::Num(a - b),
        (_, Ast::Num(z)) if *z == 0.0 => l,
        (Ast::Num(z), _) if *z == 0.0 => neg_e(r),
        _ => Ast::Sub(Box::new(l), Box::new(r)),
    }
}

fn mul_e(l: Ast, r: Ast) -> Ast {
    match (&l, &r) {
        (Ast::Num(a), Ast::Num(b)) => Ast::Num(a * b),
        (Ast::Num(z), _) | (_, Ast::Num(z)) if *z == 0.0 => Ast::Num(0.0),
        (Ast::Num(o), _) if *o == 1.0 => r,
        (_, Ast::Num(o)) if *o == 1.0 => l,
        _ => Ast::Mul(Box::new(l), Box::new(r)),
    }
}

fn div_e(l: Ast, r: Ast) -> Ast {
    match (&l, &r) {
        (Ast::Num(z), _) if *z == 0.0 => Ast::Num(0.0),
        (_, Ast::Num(o)) if *o == 1.0 => l,
        _ => Ast::Div(Box::new(l), Box::new(r)),
    }
}

fn neg_e(v: Ast) -> Ast {
    match v {
        Ast::Num(a) => Ast::Num(-a),
        Ast::Neg(inner) => *inner,
        _ => Ast::Neg(Box::new(v)),
    }
}

fn pow_e(b: Ast, e: Ast) -> Ast {
    match (&b, &e) {
        (_, Ast::Num(o)) if *o == 1.0 => b,
        (_, Ast::Num(z)) if *z == 0.0 => Ast::Num(1.0),
        _ => Ast::Pow(Box::new(b), Box::new(e)),
    }
}

fn diff(a: &Ast) -> Ast {
    match a {
        Ast::Var => Ast::Num(1.0),
        Ast::Num(_) => Ast::Num(0.0),
        Ast::Add(l, r) => add_e(diff(l), diff(r)),
        Ast::Sub(l, r) => sub_e(diff(l), diff(r)),
        Ast::Mul(l, r) => add_e(
            mul_e(diff(l), (**r).clone()),
            mul_e((**l).clone(), diff(r)),
        ),
        Ast::Div(l, r) => div_e(
            sub_e(
                mul_e(diff(l), (**r).clone()),
                mul_e((**l).clone(), diff(r)),
            ),
            pow_e((**r).clone(), Ast::Num(2.0)),
        ),
        Ast::Pow(b, e) => {
            let db = diff(b);
            match &**e {
                // f^n -> n f^(n-1) f'
                Ast::Num(n) => mul_e(
                    mul_e(Ast::Num(*n), pow_e((**b).clone(), Ast::Num(n - 1.0))),
                    db,
                ),
                // f^g -> f^g (g' log f + g f'/f)
                _ => mul_e(
                    Ast::Pow(b.clone(), e.clone()),
                    add_e(
                        mul_e(diff(e), Ast::Fun(Func::Log, b.clone())),
                        mul_e((**e).clone(), div_e(db, (**b).clone())),
                    ),
                ),
            }
        }
        Ast::Neg(v) => neg_e(diff(v)),
        Ast::Fun(f, arg) => {
            let da = diff(arg);
            let outer = match f {
                Func::Exp => Ast::Fun(Func::Exp, arg.clone()),
                Func::Log => return div_e(da, (**arg).clone()),
                Func::Sin => Ast::Fun(Func::Cos, arg.clone()),
                Func::Cos => neg_e(Ast::Fun(Func::Sin, arg.clone())),
                Func::Sinh => Ast::Fun(Func::Cosh, arg.clone()),
                Func::Cosh => Ast::Fun(Func::Sinh, arg.clone()),
                Func::Sqrt => {
                    return div_e(
                        da,
                        mul_e(Ast::Num(2.0), Ast::Fun(Func::Sqrt, arg.clone())),
                    )
                }
                Func::Abs => Ast::Fun(Func::Sign, arg.clone()),
                Func::Sign => return Ast::Num(0.0),
            };
            mul_e(outer, da)
        }
    }
}

// ---- printing -----------------------------------------------------------

// Precedence levels: 0 additive, 1 multiplicative, 2 unary, 3 power, 4 atom.
fn prec(a: &Ast) -> u8 {
    match a {
        Ast::Add(..) | Ast::Sub(..) => 0,
        Ast::Mul(..) | Ast::Div(..) => 1,
        Ast::Neg(..) => 2,
        Ast::Pow(..) => 3,
        Ast::Num(v) if *v < 0.0 => 2,
        _ => 4,
    }
}

fn write_ast(f: &mut fmt::Formatter<'_>, a: &Ast, min_prec: u8) -> fmt::Result {
    let p = prec(a);
    let parens = p < min_prec;
    if parens {
        write!(f, "(")?;
    }
    match a {
        Ast::Var => write!(f, "x")?,
        Ast::Num(v) => write!(f, "{:?}", v)?,
        Ast::Add(l, r) => {
            write_ast(f, l, 0)?;
            write!(f, " + ")?;
            write_ast(f, r, 1)?;
        }
        Ast::Sub(l, r) => {
            write_ast(f, l, 0)?;
            write!(f, " - ")?;
            write_ast(f, r, 1)?;
        }
        Ast::Mul(l, r) => {
            write_ast(f, l, 1)?;
            write!(f, "*")?;
            write_ast(f, r, 2)?;
        }
        Ast::Div(l, r) => {
            write_ast(f, l, 1)?;
            write!(f, "/")?;
            write_ast(f, r, 2)?;
        }
        Ast::Pow(b, e) => {
            write_ast(f, b, 4)?;
            write!(f, "^")?;
            write_ast(f, e, 2)?;
        }
        Ast::Neg(v) => {
            write!(f, "-")?;
            write_ast(f, v, 2)?;
        }
        Ast::Fun(func, arg) => {
            write!(f, "{}(", func.name())?;
            write_ast(f, arg, 0)?;
            write!(f, ")")?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

// ---- parser --------------------------------------------------------------

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
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn new(src: &str) -> Parser {
        // Tokenisation errors are deferred: an unknown byte becomes a
        // zero-length sentinel handled when the parser reaches it.
        Parser {
            toks: Vec::new(),
            pos: 0,
            end: src.len(),
        }
        .lex(src)
    }

    fn lex(mut self, src: &str) -> Parser {
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = match c {
                '+' => {
                    i += 1;
                    Tok::Plus
                }
                '-' => {
                    i += 1;
                    Tok::Minus
                }
                '*' => {
                    i += 1;
                    Tok::Star
                }
                '/' => {
                    i += 1;
                    Tok::Slash
                }
                '^' => {
                    i += 1;
                    Tok::Caret
                }
                '(' => {
                    i += 1;
                    Tok::LParen
                }
                ')' => {
                    i += 1;
                    Tok::RParen
                }
                '0'..='9' | '.' => {
                    let mut j = i;
                    while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                        let mut k = j + 1;
                        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                            k += 1;
                        }
                        if k < bytes.len() && bytes[k].is_ascii_digit() {
                            while k < bytes.len() && bytes[k].is_ascii_digit() {
                                k += 1;
                            }
                            j = k;
                        }
                    }
                    let text = &src[i..j];
                    i = j;
                    match text.parse::<f64>() {
                        Ok(v) => Tok::Num(v),
                        Err(_) => {
                            // Malformed number such as "1.2.3"; mark with
                            // an identifier token the parser will reject.
                            Tok::Ident(format!("\u{0}{}", text))
                        }
                    }
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    let mut j = i;
                    while j < bytes.len()
                        && ((bytes[j] as char).is_ascii_alphanumeric() || bytes[j] == b'_')
                    {
                        j += 1;
                    }
                    let text = src[i..j].to_string();
                    i = j;
                    Tok::Ident(text)
                }
                _ => {
                    i += 1;
                    Tok::Ident(format!("\u{0}{}", c))
                }
            };
            self.toks.push((start, tok));
        }
        self
    }

    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.pos)
    }

    fn offset(&self) -> usize {
        self.peek().map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn err(&self, expected: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.offset(),
            expected: expected.into(),
        }
    }

    fn parse(mut self) -> Result<Expression, ExprError> {
        let root = self.expr()?;
        if self.pos != self.toks.len() {
            return Err(self.err("end of input or operator"));
        }
        Ok(Expression { root })
    }

    fn expr(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some((_, Tok::Plus)) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Ast::Add(Box::new(lhs), Box::new(rhs));
                }
                Some((_, Tok::Minus)) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Ast, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some((_, Tok::Star)) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Ast::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some((_, Tok::Slash)) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Ast::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Ast, ExprError> {
        if let Some((_, Tok::Minus)) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Ast::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ExprError> {
        let base = self.atom()?;
        if let Some((_, Tok::Caret)) = self.peek() {
            self.pos += 1;
            // Right-associative; the exponent admits a leading unary minus.
            let exponent = self.unary()?;
            return Ok(Ast::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast, ExprError> {
        match self.peek().cloned() {
            Some((_, Tok::Num(v))) => {
                self.pos += 1;
                Ok(Ast::Num(v))
            }
            Some((off, Tok::Ident(name))) => {
                if name.starts_with('\u{0}') {
                    return Err(ExprError::Syntax {
                        offset: off,
                        expected: "number, variable, function, or '('".into(),
                    });
                }
                self.pos += 1;
                match name.as_str() {
                    "x" => Ok(Ast::Var),
                    "pi" => Ok(Ast::Num(std::f64::consts::PI)),
                    "e" => Ok(Ast::Num(std::f64::consts::E)),
                    _ => {
                        let func = Func::from_name(&name).ok_or(ExprError::Syntax {
                            offset: off,
                            expected: "known function or constant".into(),
                        })?;
                        match self.peek() {
                            Some((_, Tok::LParen)) => {
                                self.pos += 1;
                            }
                            _ => return Err(self.err("'(' after function name")),
                        }
                        let arg = self.expr()?;
                        match self.peek() {
                            Some((_, Tok::RParen)) => {
                                self.pos += 1;
                            }
                            _ => return Err(self.err("')'")),
                        }
                        Ok(Ast::Fun(func, Box::new(arg)))
                    }
                }
            }
            Some((_, Tok::LParen)) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some((_, Tok::RParen)) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(self.err("')'")),
                }
            }
            _ => Err(self.err("number, variable, function, or '('")),
        }
    }
}
