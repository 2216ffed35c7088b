//! Surface syntax for gains.
//!
//! ```text
//! gain    := sum
//! sum     := chain ('+' chain)*          '+' only inside 1 + s^q
//! chain   := product ('.' product)*      f . g is composition
//! product := power (('*' | '/') power)*
//! power   := atom ('^' power)?
//! atom    := number | 's' | '(' gain ')'
//!          | 'max' '(' gain (',' gain)+ ')'
//!          | 'compose' '(' gain (',' gain)+ ')'
//! ```
//!
//! Products are folded into the primitive families: `a*s` is linear,
//! `s^p` a power, `c*s^q/(1+s^q)` and `s^q/(d*(1+s^q))` saturating. A
//! scaled power `a*s^p` becomes `compose(a*s, s^p)`.

use crate::gain_algebra::{compose, compose_chain, pointwise_max, KFunction};

use super::lex::{describe, Cursor, Tok};
use super::ParseError;

#[derive(Debug)]
struct Node {
    ast: Ast,
    line: usize,
    column: usize,
}

#[derive(Debug)]
enum Ast {
    Num(f64),
    S,
    Add(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Max(Vec<Node>),
    Compose(Vec<Node>),
}

impl Node {
    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(self.line, self.column, message.into())
    }
}

struct Parser {
    cur: Cursor,
}

impl Parser {
    fn node(&self, ast: Ast, at: (usize, usize)) -> Node {
        Node { ast, line: at.0, column: at.1 }
    }

    fn here(&self) -> (usize, usize) {
        let t = self.cur.peek();
        (t.line, t.column)
    }

    fn sum(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.chain()?;
        while self.cur.is_sym('+') {
            let at = self.here();
            self.cur.next();
            let rhs = self.chain()?;
            lhs = self.node(Ast::Add(Box::new(lhs), Box::new(rhs)), at);
        }
        Ok(lhs)
    }

    fn chain(&mut self) -> Result<Node, ParseError> {
        let at = self.here();
        let mut parts = vec![self.product()?];
        while self.cur.eat('.') {
            parts.push(self.product()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { self.node(Ast::Compose(parts), at) })
    }

    fn product(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.power()?;
        loop {
            let at = self.here();
            if self.cur.eat('*') {
                let rhs = self.power()?;
                lhs = self.node(Ast::Mul(Box::new(lhs), Box::new(rhs)), at);
            } else if self.cur.eat('/') {
                let rhs = self.power()?;
                lhs = self.node(Ast::Div(Box::new(lhs), Box::new(rhs)), at);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        let at = self.here();
        if self.cur.eat('^') {
            let exp = self.power()?;
            return Ok(self.node(Ast::Pow(Box::new(base), Box::new(exp)), at));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let at = self.here();
        match self.cur.peek().tok.clone() {
            Tok::Num(v) => {
                self.cur.next();
                Ok(self.node(Ast::Num(v), at))
            }
            Tok::Ident(name) if name == "s" => {
                self.cur.next();
                Ok(self.node(Ast::S, at))
            }
            Tok::Ident(name) if name == "max" || name == "compose" => {
                self.cur.next();
                self.cur.expect('(')?;
                let mut args = vec![self.sum()?];
                while self.cur.eat(',') {
                    args.push(self.sum()?);
                }
                self.cur.expect(')')?;
                if args.len() < 2 {
                    return Err(ParseError::new(at.0, at.1, format!("{name} needs at least two arguments")));
                }
                Ok(self.node(if name == "max" { Ast::Max(args) } else { Ast::Compose(args) }, at))
            }
            Tok::Ident(name) => Err(self.cur.error(format!("unknown name '{name}'; gains are functions of 's'"))),
            Tok::Sym('(') => {
                self.cur.next();
                let inner = self.sum()?;
                self.cur.expect(')')?;
                Ok(inner)
            }
            Tok::Sym('-') => Err(self.cur.error("negative terms are not allowed in a class-K gain".into())),
            other => Err(self.cur.error(format!("expected a gain expression, found {}", describe(&other)))),
        }
    }
}

/// Intermediate value while folding a product into a primitive family.
#[derive(Debug, Clone)]
enum Base {
    S,
    Pow(f64),
    /// `s^q / (1 + s^q)`
    Sat(f64),
    /// `1 + s^q`; only meaningful as a denominator.
    OnePlus(f64),
    Gain(KFunction),
}

#[derive(Debug, Clone)]
enum Val {
    Const(f64),
    /// `coef * base`; `None` means no coefficient was written.
    Scaled(Option<f64>, Base),
}

fn exponent_of(base: &Base) -> Option<f64> {
    match base {
        Base::S => Some(1.0),
        Base::Pow(p) => Some(*p),
        _ => None,
    }
}

fn mul_coef(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, None) => None,
        (a, b) => Some(a.unwrap_or(1.0) * b.unwrap_or(1.0)),
    }
}

fn compile(node: &Node) -> Result<Val, ParseError> {
    match &node.ast {
        Ast::Num(v) => Ok(Val::Const(*v)),
        Ast::S => Ok(Val::Scaled(None, Base::S)),
        Ast::Add(a, b) => {
            let (a, b) = (compile(a)?, compile(b)?);
            match (&a, &b) {
                (Val::Const(one), Val::Scaled(None, base)) | (Val::Scaled(None, base), Val::Const(one))
                    if *one == 1.0 && exponent_of(base).is_some() =>
                {
                    Ok(Val::Scaled(None, Base::OnePlus(exponent_of(base).unwrap())))
                }
                (Val::Const(_), _) | (_, Val::Const(_)) => Err(node.err(
                    "constant term violates g(0) = 0; '+' is only allowed as 1 + s^q in a saturating denominator",
                )),
                _ => Err(node.err("sums of gains are not supported; use max(f, g)")),
            }
        }
        Ast::Mul(a, b) => match (compile(a)?, compile(b)?) {
            (Val::Const(x), Val::Const(y)) => Ok(Val::Const(x * y)),
            (Val::Const(c), Val::Scaled(k, base)) | (Val::Scaled(k, base), Val::Const(c)) => {
                Ok(Val::Scaled(mul_coef(Some(c), k), base))
            }
            (Val::Scaled(k1, b1), Val::Scaled(k2, b2)) => match (exponent_of(&b1), exponent_of(&b2)) {
                (Some(p), Some(q)) => Ok(Val::Scaled(mul_coef(k1, k2), Base::Pow(p + q))),
                _ => Err(node.err("products of gains are not supported; use compose(f, g) or max(f, g)")),
            },
        },
        Ast::Div(a, b) => match (compile(a)?, compile(b)?) {
            (_, Val::Const(0.0)) => Err(node.err("division by zero")),
            (Val::Const(x), Val::Const(y)) => Ok(Val::Const(x / y)),
            (Val::Scaled(k, base), Val::Const(c)) => Ok(Val::Scaled(Some(k.unwrap_or(1.0) / c), base)),
            (Val::Const(_), _) => Err(node.err("a constant divided by a function of s is decreasing, not class-K")),
            (Val::Scaled(kn, num), Val::Scaled(kd, Base::OnePlus(q))) => match exponent_of(&num) {
                Some(p) if p == q => {
                    let coef = match (kn, kd) {
                        (None, None) => None,
                        (kn, kd) => Some(kn.unwrap_or(1.0) / kd.unwrap_or(1.0)),
                    };
                    Ok(Val::Scaled(coef, Base::Sat(q)))
                }
                _ => Err(node.err(format!("saturating gains need the form c*s^q/(1+s^q) with matching exponents (denominator has q = {q})"))),
            },
            _ => Err(node.err("unsupported quotient; the only allowed form is c*s^q/(1+s^q)")),
        },
        Ast::Pow(base, exp) => {
            let p = match compile(exp)? {
                Val::Const(p) => p,
                _ => return Err(exp.err("exponent must be a number")),
            };
            if p <= 0.0 {
                return Err(exp.err(format!("exponent must be > 0, got {p}")));
            }
            match compile(base)? {
                Val::Const(c) => Ok(Val::Const(c.powf(p))),
                Val::Scaled(k, b) => match exponent_of(&b) {
                    Some(r) => Ok(Val::Scaled(k.map(|c| c.powf(p)), Base::Pow(r * p))),
                    None => Err(node.err("only powers of s are supported; use compose for powers of other gains")),
                },
            }
        }
        Ast::Max(args) => {
            let gains = args.iter().map(to_gain).collect::<Result<Vec<_>, _>>()?;
            let first = gains[0].clone();
            Ok(Val::Scaled(None, Base::Gain(gains[1..].iter().fold(first, |acc, g| pointwise_max(&acc, g)))))
        }
        Ast::Compose(args) => {
            let gains = args.iter().map(to_gain).collect::<Result<Vec<_>, _>>()?;
            Ok(Val::Scaled(None, Base::Gain(compose_chain(&gains).expect("at least two arguments"))))
        }
    }
}

fn to_gain(node: &Node) -> Result<KFunction, ParseError> {
    let checked = |r: Result<KFunction, crate::gain_algebra::GainError>| r.map_err(|e| node.err(e.to_string()));
    let scaled = |k: Option<f64>, g: KFunction| -> Result<KFunction, ParseError> {
        match k {
            None => Ok(g),
            Some(a) => Ok(compose(&checked(KFunction::linear(a))?, &g)),
        }
    };
    match compile(node)? {
        Val::Const(c) => Err(node.err(format!("the constant {c} is not a class-K function (violates g(0) = 0)"))),
        Val::Scaled(k, Base::S) => match k {
            None => Ok(KFunction::identity()),
            Some(a) => checked(KFunction::linear(a)),
        },
        Val::Scaled(k, Base::Pow(p)) => scaled(k, checked(KFunction::power(p))?),
        Val::Scaled(k, Base::Sat(q)) => checked(KFunction::saturating(k.unwrap_or(1.0), q)),
        Val::Scaled(_, Base::OnePlus(_)) => Err(node.err("constant term violates g(0) = 0")),
        Val::Scaled(k, Base::Gain(g)) => scaled(k, g),
    }
}

/// Parses a gain in surface syntax, for example `s^2/(2*(1+s^2))`.
pub fn parse_gain(text: &str) -> Result<KFunction, ParseError> {
    let mut parser = Parser { cur: Cursor::new(text)? };
    let node = parser.sum()?;
    parser.cur.expect_end()?;
    to_gain(&node)
}
