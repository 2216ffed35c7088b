//! Arithmetic expressions for right-hand sides and signals.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?        right associative
//! primary := number | var delay? | func '(' expr ')' | '(' expr ')'
//! var     := 't' | x_i | x_i_c | v_j | v_j_c | u_i | u_i_c
//! delay   := '[' '-' (name | number) ']'
//! func    := exp | sin | cos | sqrt | abs
//! ```
//!
//! `x_j` and `v_j` both read subsystem `j` (the interconnection is
//! `v_j = x_j`); the component suffix `_c` is 1-based and may be omitted for
//! scalar subsystems. `u_i` is the subsystem's own input.

use std::collections::{BTreeMap, BTreeSet};

use super::lex::{describe, Cursor, Tok};
use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sqrt => x.sqrt(),
            Func::Abs => x.abs(),
        }
    }
}

/// Compiled expression. Indices are 0-based for components, 1-based for
/// subsystems.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    State { sub: usize, comp: usize, delay: f64 },
    Input(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values an expression can read.
pub trait Env {
    fn time(&self) -> f64;
    fn state(&self, sub: usize, comp: usize, delay: f64) -> f64;
    fn input(&self, comp: usize) -> f64;
}

impl Expr {
    pub fn eval<E: Env + ?Sized>(&self, env: &E) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Time => env.time(),
            Expr::State { sub, comp, delay } => env.state(*sub, *comp, *delay),
            Expr::Input(c) => env.input(*c),
            Expr::Neg(e) => -e.eval(env),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(env), b.eval(env));
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => pow(a, b),
                }
            }
            Expr::Call(f, e) => f.apply(e.eval(env)),
        }
    }

    /// Subsystems read by the expression.
    pub fn references(&self, out: &mut BTreeSet<usize>) {
        self.visit(&mut |e| {
            if let Expr::State { sub, .. } = e {
                out.insert(*sub);
            }
        });
    }

    /// Delays read by the expression.
    pub fn delays(&self, out: &mut Vec<f64>) {
        self.visit(&mut |e| {
            if let Expr::State { delay, .. } = e {
                out.push(*delay);
            }
        });
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Neg(e) | Expr::Call(_, e) => e.visit(f),
            Expr::Bin(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }
}

/// `a^b`, using integer powers where possible so that negative bases work.
pub(crate) fn pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

/// Names an expression may refer to.
#[derive(Debug, Clone, Copy)]
pub struct Scope<'a> {
    /// Subsystem the expression belongs to (1-based); 0 when states are not
    /// available.
    pub own: usize,
    pub dims: &'a [usize],
    pub input_dim: usize,
    pub delays: &'a BTreeMap<String, f64>,
}

impl Scope<'_> {
    /// Only `t` may appear.
    pub fn time_only(delays: &BTreeMap<String, f64>) -> Scope<'_> {
        Scope { own: 0, dims: &[], input_dim: 0, delays }
    }
}

struct Parser<'a> {
    cur: Cursor,
    scope: Scope<'a>,
}

impl Parser<'_> {
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.cur.eat('+') {
                BinOp::Add
            } else if self.cur.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.cur.eat('*') {
                BinOp::Mul
            } else if self.cur.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.cur.eat('-') {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.cur.eat('^') {
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(self.unary()?)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.cur.peek().tok.clone() {
            Tok::Num(v) => {
                self.cur.next();
                Ok(Expr::Num(v))
            }
            Tok::Sym('(') => {
                self.cur.next();
                let e = self.expr()?;
                self.cur.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if let Some(f) = Func::from_name(&name) {
                    self.cur.next();
                    self.cur.expect('(')?;
                    let arg = self.expr()?;
                    self.cur.expect(')')?;
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                let var = self.variable(&name)?;
                self.cur.next();
                if self.cur.is_sym('[') {
                    let delay = self.delay()?;
                    return match var {
                        Expr::State { sub, comp, .. } => Ok(Expr::State { sub, comp, delay }),
                        _ => Err(self.cur.error(format!("'{name}' cannot be delayed; only states can"))),
                    };
                }
                Ok(var)
            }
            other => Err(self.cur.error(format!("expected an expression, found {}", describe(&other)))),
        }
    }

    fn delay(&mut self) -> Result<f64, ParseError> {
        self.cur.expect('[')?;
        let negative = self.cur.eat('-');
        let tok = self.cur.peek().clone();
        let value = match &tok.tok {
            Tok::Num(v) => {
                if !negative && *v != 0.0 {
                    return Err(self.cur.error("delays are written as [-theta]; future values cannot be read".into()));
                }
                let declared = self
                    .scope
                    .delays
                    .values()
                    .copied()
                    .find(|d| (d - v).abs() <= 1e-12 * d.max(1.0));
                match declared {
                    Some(d) => d,
                    None if *v == 0.0 => 0.0,
                    None => return Err(self.cur.error(format!("delay {v} is not declared (declared: {})", self.declared()))),
                }
            }
            Tok::Ident(name) => {
                if !negative {
                    return Err(self.cur.error(format!("write the delay as [-{name}]")));
                }
                match self.scope.delays.get(name) {
                    Some(d) => *d,
                    None => return Err(self.cur.error(format!("unknown delay '{name}' (declared: {})", self.declared()))),
                }
            }
            other => return Err(self.cur.error(format!("expected a delay, found {}", describe(other)))),
        };
        self.cur.next();
        self.cur.expect(']')?;
        Ok(value)
    }

    fn declared(&self) -> String {
        if self.scope.delays.is_empty() {
            return "none".into();
        }
        self.scope.delays.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join(", ")
    }

    /// Resolves a variable name without consuming it.
    fn variable(&self, name: &str) -> Result<Expr, ParseError> {
        if name == "t" {
            return Ok(Expr::Time);
        }
        let err = |msg: String| Err(self.cur.error(msg));
        let mut parts = name.split('_');
        let head = parts.next().unwrap_or_default();
        let idx: Vec<Option<usize>> = parts.map(|p| p.parse::<usize>().ok()).collect();
        if !matches!(head, "x" | "v" | "u") || idx.is_empty() || idx.len() > 2 || idx.iter().any(Option::is_none) {
            return err(format!("unknown name '{name}'"));
        }
        let sub = idx[0].unwrap();
        let comp = idx.get(1).map(|c| c.unwrap());
        if self.scope.own == 0 {
            return err(format!("'{name}' is not available here; only t may be used"));
        }
        if head == "u" {
            if sub != self.scope.own {
                return err(format!("subsystem {} can only read its own input u_{}", self.scope.own, self.scope.own));
            }
            let n = self.scope.input_dim;
            if n == 0 {
                return err(format!("subsystem {sub} declares no inputs"));
            }
            return match comp {
                None if n == 1 => Ok(Expr::Input(0)),
                None => err(format!("input of subsystem {sub} has dimension {n}; write u_{sub}_c")),
                Some(c) if (1..=n).contains(&c) => Ok(Expr::Input(c - 1)),
                Some(c) => err(format!("input component {c} out of range 1..={n}")),
            };
        }
        let k = self.scope.dims.len();
        if sub == 0 || sub > k {
            return err(format!("'{name}' refers to subsystem {sub}, but only 1..={k} are declared"));
        }
        let n = self.scope.dims[sub - 1];
        match comp {
            None if n == 1 => Ok(Expr::State { sub, comp: 0, delay: 0.0 }),
            None => err(format!("subsystem {sub} has dimension {n}; write {head}_{sub}_c")),
            Some(c) if (1..=n).contains(&c) => Ok(Expr::State { sub, comp: c - 1, delay: 0.0 }),
            Some(c) => err(format!("component {c} of subsystem {sub} out of range 1..={n}")),
        }
    }
}

/// Parses and resolves an expression against `scope`.
pub fn parse_expr(text: &str, scope: Scope<'_>) -> Result<Expr, ParseError> {
    let mut p = Parser { cur: Cursor::new(text)?, scope };
    let e = p.expr()?;
    p.cur.expect_end()?;
    Ok(e)
}
