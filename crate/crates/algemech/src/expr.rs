//! Scalar expression parsing and evaluation with exact first and second
//! partial derivatives.
//!
//! Expressions are plain text over a declared variable list with operators
//! `+ - * / ^` (and unary minus) and the functions `sin cos tan exp log sqrt
//! abs tanh`. Precedence: `^` binds tightest and associates to the right,
//! then unary minus, then `* /`, then `+ -`. Numeric literals are decimal
//! with an optional exponent; there is no implicit multiplication.
//!
//! Derivatives are propagated by truncated second-order polynomial (dual
//! number) arithmetic, not finite differences, so downstream linear solves
//! that consume Hessians are noise-free.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::{Error, Result};

mod jet;
pub use jet::Jet2;

/// A parsed, immutable expression over a fixed variable list.
#[derive(Debug, Clone)]
pub struct Expr {
    vars: Vec<String>,
    ast: Node,
}

#[derive(Debug, Clone)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Func(Func, Box<Node>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "tan" => Some(Func::Tan),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            "abs" => Some(Func::Abs),
            "tanh" => Some(Func::Tanh),
            _ => None,
        }
    }
}

/// Parse `source` against a declared variable list.
///
/// Every identifier in the source that is not a function name must appear in
/// `variables`; the returned [`Expr`] evaluates against value slices in the
/// declared order.
pub fn parse(source: &str, variables: &[&str]) -> Result<Expr> {
    if source.trim().is_empty() {
        return Err(Error::Syntax {
            pos: 1,
            msg: "empty expression".into(),
        });
    }
    let vars: Vec<String> = variables.iter().map(|s| s.to_string()).collect();
    let tokens = lex(source)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        vars: &vars,
    };
    let ast = parser.expression()?;
    parser.expect_eof()?;
    Ok(Expr { vars, ast })
}

impl Expr {
    /// Declared variable names, in evaluation order.
    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// Indices of variables that actually occur in the tree.
    pub fn free_vars(&self) -> Vec<usize> {
        let mut used = vec![false; self.vars.len()];
        mark_vars(&self.ast, &mut used);
        used.iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i))
            .collect()
    }

    /// True when the tree references no variables at all.
    pub fn is_constant(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Evaluate against values in declared-variable order.
    pub fn eval(&self, env: &[f64]) -> Result<f64> {
        assert_eq!(
            env.len(),
            self.vars.len(),
            "environment length must match declared variables"
        );
        eval_node(&self.ast, env)
    }

    /// Evaluate against a name-to-value map.
    pub fn eval_map(&self, env: &HashMap<String, f64>) -> Result<f64> {
        let vals = self.env_from_map(env)?;
        self.eval(&vals)
    }

    /// Evaluate value, gradient and Hessian in one pass.
    pub fn eval_jet2(&self, env: &[f64]) -> Result<Jet2> {
        assert_eq!(
            env.len(),
            self.vars.len(),
            "environment length must match declared variables"
        );
        jet::eval_jet2(&self.ast, env)
    }

    /// [`Expr::eval_jet2`] with a name-to-value map.
    pub fn eval_jet2_map(&self, env: &HashMap<String, f64>) -> Result<Jet2> {
        let vals = self.env_from_map(env)?;
        self.eval_jet2(&vals)
    }

    fn env_from_map(&self, env: &HashMap<String, f64>) -> Result<Vec<f64>> {
        self.vars
            .iter()
            .map(|name| {
                env.get(name)
                    .copied()
                    .ok_or_else(|| Error::UnknownVariable(name.clone()))
            })
            .collect()
    }

    /// Render back to parseable text. Reparsing the result against the same
    /// variable list yields an expression with identical evaluation.
    pub fn render(&self) -> String {
        let mut out = String::new();
        render_node(&self.ast, &self.vars, 0, &mut out);
        out
    }
}

fn mark_vars(node: &Node, used: &mut [bool]) {
    match node {
        Node::Const(_) => {}
        Node::Var(i) => used[*i] = true,
        Node::Neg(a) | Node::Func(_, a) => mark_vars(a, used),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            mark_vars(a, used);
            mark_vars(b, used);
        }
    }
}

fn eval_node(node: &Node, env: &[f64]) -> Result<f64> {
    Ok(match node {
        Node::Const(c) => *c,
        Node::Var(i) => env[*i],
        Node::Neg(a) => -eval_node(a, env)?,
        Node::Add(a, b) => eval_node(a, env)? + eval_node(b, env)?,
        Node::Sub(a, b) => eval_node(a, env)? - eval_node(b, env)?,
        Node::Mul(a, b) => eval_node(a, env)? * eval_node(b, env)?,
        Node::Div(a, b) => {
            let den = eval_node(b, env)?;
            if den == 0.0 {
                return Err(Error::Domain("division by zero".into()));
            }
            eval_node(a, env)? / den
        }
        Node::Pow(a, b) => {
            let base = eval_node(a, env)?;
            let exp = eval_node(b, env)?;
            pow_value(base, exp)?
        }
        Node::Func(f, a) => {
            let u = eval_node(a, env)?;
            apply_func_value(*f, u)?
        }
    })
}

/// Integer-exponent powers stay valid for negative bases; everything else
/// requires a positive base.
fn pow_value(base: f64, exp: f64) -> Result<f64> {
    if let Some(n) = as_integer(exp) {
        if base == 0.0 && n < 0 {
            return Err(Error::Domain("zero raised to a negative power".into()));
        }
        Ok(base.powi(n))
    } else if base > 0.0 {
        Ok(base.powf(exp))
    } else {
        Err(Error::Domain(format!(
            "non-integer power of a non-positive base ({base:e})^({exp:e})"
        )))
    }
}

fn as_integer(v: f64) -> Option<i32> {
    if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 {
        Some(v as i32)
    } else {
        None
    }
}

fn apply_func_value(f: Func, u: f64) -> Result<f64> {
    Ok(match f {
        Func::Sin => u.sin(),
        Func::Cos => u.cos(),
        Func::Tan => {
            let t = u.tan();
            if !t.is_finite() {
                return Err(Error::Domain("tan at a pole".into()));
            }
            t
        }
        Func::Exp => u.exp(),
        Func::Log => {
            if u <= 0.0 {
                return Err(Error::Domain(format!("log of non-positive value {u:e}")));
            }
            u.ln()
        }
        Func::Sqrt => {
            if u < 0.0 {
                return Err(Error::Domain(format!("sqrt of negative value {u:e}")));
            }
            u.sqrt()
        }
        Func::Abs => u.abs(),
        Func::Tanh => u.tanh(),
    })
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

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
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize, // 1-based character position
}

fn lex(source: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let pos = i + 1;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                tokens.push(Token {
                    tok: Tok::Plus,
                    pos,
                });
                i += 1;
            }
            '-' => {
                tokens.push(Token {
                    tok: Tok::Minus,
                    pos,
                });
                i += 1;
            }
            '*' => {
                tokens.push(Token {
                    tok: Tok::Star,
                    pos,
                });
                i += 1;
            }
            '/' => {
                tokens.push(Token {
                    tok: Tok::Slash,
                    pos,
                });
                i += 1;
            }
            '^' => {
                tokens.push(Token {
                    tok: Tok::Caret,
                    pos,
                });
                i += 1;
            }
            '(' => {
                tokens.push(Token {
                    tok: Tok::LParen,
                    pos,
                });
                i += 1;
            }
            ')' => {
                tokens.push(Token {
                    tok: Tok::RParen,
                    pos,
                });
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if i < chars.len() && chars[i] == '.' {
                    i += 1;
                    if i >= chars.len() || !chars[i].is_ascii_digit() {
                        return Err(Error::Syntax {
                            pos: i + 1,
                            msg: "expected digits after decimal point".into(),
                        });
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
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
                let value = text.parse::<f64>().map_err(|_| Error::Syntax {
                    pos: start + 1,
                    msg: format!("invalid numeric literal `{text}`"),
                })?;
                tokens.push(Token {
                    tok: Tok::Num(value),
                    pos: start + 1,
                });
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                tokens.push(Token {
                    tok: Tok::Ident(text),
                    pos: start + 1,
                });
            }
            other => {
                return Err(Error::Syntax {
                    pos,
                    msg: format!("unexpected character `{other}`"),
                });
            }
        }
    }
    // Report end-of-input right after the last meaningful character.
    let eof_pos = source.trim_end().chars().count() + 1;
    tokens.push(Token {
        tok: Tok::Eof,
        pos: eof_pos.max(1),
    });
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Recursive-descent parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [String],
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_eof(&self) -> Result<()> {
        match self.peek().tok {
            Tok::Eof => Ok(()),
            _ => Err(self.unexpected("end of input")),
        }
    }

    fn unexpected(&self, wanted: &str) -> Error {
        let t = self.peek();
        let what = match &t.tok {
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Eof => "end of input".into(),
        };
        Error::Syntax {
            pos: t.pos,
            msg: format!("expected {wanted}, found {what}"),
        }
    }

    fn expression(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek().tok {
                Tok::Plus => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek().tok {
                Tok::Star => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary minus binds below `^`: -x^2 parses as -(x^2)
    fn factor(&mut self) -> Result<Node> {
        if matches!(self.peek().tok, Tok::Minus) {
            self.bump();
            return Ok(Node::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if matches!(self.peek().tok, Tok::Caret) {
            self.bump();
            // right-associative; the exponent may carry a unary minus
            let exp = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek().tok.clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expression()?;
                if !matches!(self.peek().tok, Tok::RParen) {
                    return Err(self.unexpected("`)`"));
                }
                self.bump();
                Ok(inner)
            }
            Tok::Ident(name) => {
                let ident_pos = self.peek().pos;
                self.bump();
                if matches!(self.peek().tok, Tok::LParen) {
                    let func = Func::from_name(&name).ok_or_else(|| Error::Syntax {
                        pos: ident_pos,
                        msg: format!("unknown function `{name}`"),
                    })?;
                    self.bump();
                    let arg = self.expression()?;
                    if !matches!(self.peek().tok, Tok::RParen) {
                        return Err(self.unexpected("`)`"));
                    }
                    self.bump();
                    Ok(Node::Func(func, Box::new(arg)))
                } else {
                    let idx = self
                        .vars
                        .iter()
                        .position(|v| v == &name)
                        .ok_or(Error::UnknownVariable(name))?;
                    Ok(Node::Var(idx))
                }
            }
            _ => Err(self.unexpected("a value")),
        }
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Parent precedence levels: 0 additive, 1 multiplicative, 2 unary, 3 power.
fn render_node(node: &Node, vars: &[String], parent: u8, out: &mut String) {
    let prec = match node {
        Node::Add(..) | Node::Sub(..) => 0,
        Node::Mul(..) | Node::Div(..) => 1,
        Node::Neg(..) => 2,
        Node::Pow(..) => 3,
        Node::Const(_) | Node::Var(_) | Node::Func(..) => 4,
    };
    let need_paren = prec < parent;
    if need_paren {
        out.push('(');
    }
    match node {
        Node::Const(c) => {
            let _ = write!(out, "{c:?}");
        }
        Node::Var(i) => out.push_str(&vars[*i]),
        Node::Neg(a) => {
            out.push('-');
            render_node(a, vars, 3, out);
        }
        Node::Add(a, b) => {
            render_node(a, vars, 0, out);
            out.push_str(" + ");
            render_node(b, vars, 1, out);
        }
        Node::Sub(a, b) => {
            render_node(a, vars, 0, out);
            out.push_str(" - ");
            render_node(b, vars, 1, out);
        }
        Node::Mul(a, b) => {
            render_node(a, vars, 1, out);
            out.push('*');
            render_node(b, vars, 2, out);
        }
        Node::Div(a, b) => {
            render_node(a, vars, 1, out);
            out.push('/');
            render_node(b, vars, 2, out);
        }
        Node::Pow(a, b) => {
            render_node(a, vars, 4, out);
            out.push('^');
            render_node(b, vars, 3, out);
        }
        Node::Func(f, a) => {
            out.push_str(f.name());
            out.push('(');
            render_node(a, vars, 0, out);
            out.push(')');
        }
    }
    if need_paren {
        out.push(')');
    }
}

/// Deterministic random expression/point generation for oracle-style tests
/// (finite-difference comparisons, round-trip checks).
#[doc(hidden)]
pub mod testing {
    use super::{parse, Expr};
    use crate::rng::Rng;

    fn random_expr_text(rng: &mut Rng, vars: &[&str], depth: usize) -> String {
        if depth == 0 {
            return match rng.next_u64() % 3 {
                0 => format!("{:?}", (rng.uniform(-2.0, 2.0) * 100.0).round() / 100.0),
                _ => vars[(rng.next_u64() as usize) % vars.len()].to_string(),
            };
        }
        match rng.next_u64() % 8 {
            0 => format!(
                "({} + {})",
                random_expr_text(rng, vars, depth - 1),
                random_expr_text(rng, vars, depth - 1)
            ),
            1 => format!(
                "({} - {})",
                random_expr_text(rng, vars, depth - 1),
                random_expr_text(rng, vars, depth - 1)
            ),
            2 => format!(
                "({})*({})",
                random_expr_text(rng, vars, depth - 1),
                random_expr_text(rng, vars, depth - 1)
            ),
            3 => format!("({})^2", random_expr_text(rng, vars, depth - 1)),
            4 => format!("sin({})", random_expr_text(rng, vars, depth - 1)),
            5 => format!("cos({})", random_expr_text(rng, vars, depth - 1)),
            6 => format!("tanh({})", random_expr_text(rng, vars, depth - 1)),
            _ => format!("log({} + 9)", random_expr_text(rng, vars, depth - 1)),
        }
    }

    /// Draw a random (expression, point) pair whose value, gradient and
    /// Hessian stay small enough for finite differences at step `1e-5` to be
    /// meaningful.
    pub fn random_checked_pair(rng: &mut Rng, vars: &[&str]) -> (Expr, Vec<f64>) {
        loop {
            let text = random_expr_text(rng, vars, 3);
            let env: Vec<f64> = (0..vars.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let Ok(e) = parse(&text, vars) else { continue };
            let Ok(jet) = e.eval_jet2(&env) else { continue };
            let small = jet.value.abs() < 3.0
                && jet.grad.iter().all(|g| g.abs() < 10.0)
                && jet.hess.iter().all(|h| h.abs() < 30.0);
            if small {
                return (e, env);
            }
        }
    }
}

#[cfg(test)]
mod tests;
