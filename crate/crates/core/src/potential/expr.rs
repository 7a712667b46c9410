//! Expression trees with exact symbolic differentiation.
//!
//! Simplification is deliberately shallow: constant folding plus the usual
//! 0/1 identities. Everything else is left to the evaluator.

use std::fmt;
use std::sync::Arc;

use super::PotentialError;

/// Node of a scalar expression over variables `x1..xN` (stored 0-based).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Arc<Expr>, Arc<Expr>),
    Sub(Arc<Expr>, Arc<Expr>),
    Mul(Arc<Expr>, Arc<Expr>),
    Div(Arc<Expr>, Arc<Expr>),
    Pow(Arc<Expr>, i32),
    Neg(Arc<Expr>),
    Sin(Arc<Expr>),
    Cos(Arc<Expr>),
    Exp(Arc<Expr>),
    Log(Arc<Expr>),
    Sqrt(Arc<Expr>),
}

use Expr::*;

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Var(i)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x + y),
            (Some(x), _) if x == 0.0 => b,
            (_, Some(y)) if y == 0.0 => a,
            _ => Add(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x - y),
            (Some(x), _) if x == 0.0 => Expr::neg(b),
            (_, Some(y)) if y == 0.0 => a,
            _ => Sub(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        if a.is_zero() || b.is_zero() {
            return Const(0.0);
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) => Const(x * y),
            (Some(x), _) if x == 1.0 => b,
            (_, Some(y)) if y == 1.0 => a,
            (Some(x), _) if x == -1.0 => Expr::neg(b),
            (_, Some(y)) if y == -1.0 => Expr::neg(a),
            _ => Mul(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        if a.is_zero() && !b.is_zero() {
            return Const(0.0);
        }
        match (a.as_const(), b.as_const()) {
            (Some(x), Some(y)) if y != 0.0 => Const(x / y),
            (_, Some(y)) if y == 1.0 => a,
            _ => Div(Arc::new(a), Arc::new(b)),
        }
    }

    pub fn pow(a: Expr, n: i32) -> Expr {
        match n {
            0 => Const(1.0),
            1 => a,
            _ => match a.as_const() {
                Some(c) if n > 0 || c != 0.0 => Const(c.powi(n)),
                _ => Pow(Arc::new(a), n),
            },
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Const(c) => Const(-c),
            Neg(inner) => (*inner).clone(),
            other => Neg(Arc::new(other)),
        }
    }

    pub fn sin(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Const(c.sin()),
            None => Sin(Arc::new(a)),
        }
    }

    pub fn cos(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Const(c.cos()),
            None => Cos(Arc::new(a)),
        }
    }

    pub fn exp(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) => Const(c.exp()),
            None => Exp(Arc::new(a)),
        }
    }

    pub fn log(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) if c > 0.0 => Const(c.ln()),
            _ => Log(Arc::new(a)),
        }
    }

    pub fn sqrt(a: Expr) -> Expr {
        match a.as_const() {
            Some(c) if c >= 0.0 => Const(c.sqrt()),
            _ => Sqrt(Arc::new(a)),
        }
    }

    /// Largest variable index referenced, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Const(_) => 0,
            Var(i) => i + 1,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.arity().max(b.arity()),
            Pow(a, _) | Neg(a) | Sin(a) | Cos(a) | Exp(a) | Log(a) | Sqrt(a) => a.arity(),
        }
    }

    /// Exact partial derivative with respect to variable `i` (0-based).
    pub fn derivative(&self, i: usize) -> Expr {
        match self {
            Const(_) => Const(0.0),
            Var(j) => Const(if *j == i { 1.0 } else { 0.0 }),
            Add(a, b) => Expr::add(a.derivative(i), b.derivative(i)),
            Sub(a, b) => Expr::sub(a.derivative(i), b.derivative(i)),
            Mul(a, b) => Expr::add(
                Expr::mul(a.derivative(i), (**b).clone()),
                Expr::mul((**a).clone(), b.derivative(i)),
            ),
            Div(a, b) => {
                let da = a.derivative(i);
                let db = b.derivative(i);
                if db.is_zero() {
                    Expr::div(da, (**b).clone())
                } else {
                    Expr::div(
                        Expr::sub(
                            Expr::mul(da, (**b).clone()),
                            Expr::mul((**a).clone(), db),
                        ),
                        Expr::pow((**b).clone(), 2),
                    )
                }
            }
            Pow(a, n) => Expr::mul(
                Expr::mul(Const(*n as f64), Expr::pow((**a).clone(), n - 1)),
                a.derivative(i),
            ),
            Neg(a) => Expr::neg(a.derivative(i)),
            Sin(a) => Expr::mul(Expr::cos((**a).clone()), a.derivative(i)),
            Cos(a) => Expr::neg(Expr::mul(Expr::sin((**a).clone()), a.derivative(i))),
            Exp(a) => Expr::mul(self.clone(), a.derivative(i)),
            Log(a) => Expr::div(a.derivative(i), (**a).clone()),
            Sqrt(a) => Expr::div(a.derivative(i), Expr::mul(Const(2.0), self.clone())),
        }
    }

    /// Tree-walking evaluation; prefer [`Tape`] in hot loops.
    pub fn eval(&self, x: &[f64]) -> Result<f64, PotentialError> {
        let v = match self {
            Const(c) => *c,
            Var(i) => x[*i],
            Add(a, b) => a.eval(x)? + b.eval(x)?,
            Sub(a, b) => a.eval(x)? - b.eval(x)?,
            Mul(a, b) => a.eval(x)? * b.eval(x)?,
            Div(a, b) => {
                let d = b.eval(x)?;
                if d == 0.0 {
                    return Err(PotentialError::Domain("division by zero"));
                }
                a.eval(x)? / d
            }
            Pow(a, n) => {
                let base = a.eval(x)?;
                if base == 0.0 && *n < 0 {
                    return Err(PotentialError::Domain("division by zero"));
                }
                base.powi(*n)
            }
            Neg(a) => -a.eval(x)?,
            Sin(a) => a.eval(x)?.sin(),
            Cos(a) => a.eval(x)?.cos(),
            Exp(a) => a.eval(x)?.exp(),
            Log(a) => {
                let v = a.eval(x)?;
                if v <= 0.0 {
                    return Err(PotentialError::Domain("log of non-positive value"));
                }
                v.ln()
            }
            Sqrt(a) => {
                let v = a.eval(x)?;
                if v < 0.0 {
                    return Err(PotentialError::Domain("sqrt of negative value"));
                }
                v.sqrt()
            }
        };
        Ok(v)
    }

    /// Compile to a flat postfix program.
    pub fn compile(&self) -> Tape {
        let mut ops = Vec::new();
        self.emit(&mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            depth = (depth as isize + op.stack_delta()) as usize;
            max_depth = max_depth.max(depth);
        }
        Tape { ops, max_depth }
    }

    fn emit(&self, ops: &mut Vec<Op>) {
        match self {
            Const(c) => ops.push(Op::Const(*c)),
            Var(i) => ops.push(Op::Var(*i)),
            Add(a, b) => {
                a.emit(ops);
                b.emit(ops);
                ops.push(Op::Add);
            }
            Sub(a, b) => {
                a.emit(ops);
                b.emit(ops);
                ops.push(Op::Sub);
            }
            Mul(a, b) => {
                a.emit(ops);
                b.emit(ops);
                ops.push(Op::Mul);
            }
            Div(a, b) => {
                a.emit(ops);
                b.emit(ops);
                ops.push(Op::Div);
            }
            Pow(a, n) => {
                a.emit(ops);
                ops.push(Op::Pow(*n));
            }
            Neg(a) => {
                a.emit(ops);
                ops.push(Op::Neg);
            }
            Sin(a) => {
                a.emit(ops);
                ops.push(Op::Sin);
            }
            Cos(a) => {
                a.emit(ops);
                ops.push(Op::Cos);
            }
            Exp(a) => {
                a.emit(ops);
                ops.push(Op::Exp);
            }
            Log(a) => {
                a.emit(ops);
                ops.push(Op::Log);
            }
            Sqrt(a) => {
                a.emit(ops);
                ops.push(Op::Sqrt);
            }
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Add(..) | Sub(..) => 1,
        Mul(..) | Div(..) => 2,
        Neg(..) => 3,
        Pow(..) => 4,
        Const(c) if *c < 0.0 => 3,
        _ => 5,
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |f: &mut fmt::Formatter<'_>, e: &Expr, min: u8| -> fmt::Result {
            if precedence(e) < min {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match self {
            Const(c) => write!(f, "{c}"),
            Var(i) => write!(f, "x{}", i + 1),
            Add(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " + ")?;
                wrap(f, b, 2)
            }
            Sub(a, b) => {
                wrap(f, a, 1)?;
                write!(f, " - ")?;
                wrap(f, b, 2)
            }
            Mul(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "*")?;
                wrap(f, b, 3)
            }
            Div(a, b) => {
                wrap(f, a, 2)?;
                write!(f, "/")?;
                wrap(f, b, 3)
            }
            Pow(a, n) => {
                wrap(f, a, 5)?;
                write!(f, "^{n}")
            }
            Neg(a) => {
                write!(f, "-")?;
                wrap(f, a, 4)
            }
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Exp(a) => write!(f, "exp({a})"),
            Log(a) => write!(f, "log({a})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Add,
    Sub,
    Mul,
    Div,
    Pow(i32),
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Op {
    fn stack_delta(&self) -> isize {
        match self {
            Op::Const(_) | Op::Var(_) => 1,
            Op::Add | Op::Sub | Op::Mul | Op::Div => -1,
            _ => 0,
        }
    }
}

const INLINE_STACK: usize = 32;

/// Postfix program compiled from an [`Expr`].
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    max_depth: usize,
}

impl Tape {
    /// Evaluate; a domain violation yields `NaN`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.max_depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(x, &mut stack)
        } else {
            let mut stack = vec![0.0f64; self.max_depth];
            self.run(x, &mut stack)
        }
    }

    pub fn try_eval(&self, x: &[f64]) -> Result<f64, PotentialError> {
        let v = self.eval(x);
        if v.is_nan() {
            Err(PotentialError::Domain("expression undefined at point"))
        } else {
            Ok(v)
        }
    }

    #[inline]
    fn run(&self, x: &[f64], stack: &mut [f64]) -> f64 {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    stack[sp] = c;
                    sp += 1;
                }
                Op::Var(i) => {
                    stack[sp] = x[i];
                    sp += 1;
                }
                Op::Add => {
                    sp -= 1;
                    stack[sp - 1] += stack[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    stack[sp - 1] -= stack[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    stack[sp - 1] *= stack[sp];
                }
                Op::Div => {
                    sp -= 1;
                    let d = stack[sp];
                    stack[sp - 1] = if d == 0.0 { f64::NAN } else { stack[sp - 1] / d };
                }
                Op::Pow(n) => {
                    let b = stack[sp - 1];
                    stack[sp - 1] = if b == 0.0 && n < 0 { f64::NAN } else { b.powi(n) };
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Sin => stack[sp - 1] = stack[sp - 1].sin(),
                Op::Cos => stack[sp - 1] = stack[sp - 1].cos(),
                Op::Exp => stack[sp - 1] = stack[sp - 1].exp(),
                Op::Log => {
                    let v = stack[sp - 1];
                    stack[sp - 1] = if v <= 0.0 { f64::NAN } else { v.ln() };
                }
                Op::Sqrt => {
                    let v = stack[sp - 1];
                    stack[sp - 1] = if v < 0.0 { f64::NAN } else { v.sqrt() };
                }
            }
        }
        stack[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::var(0)
    }

    #[test]
    fn simplification_identities() {
        assert_eq!(Expr::add(x(), Expr::constant(0.0)), x());
        assert_eq!(Expr::mul(Expr::constant(1.0), x()), x());
        assert_eq!(Expr::mul(Expr::constant(0.0), x()), Expr::constant(0.0));
        assert_eq!(Expr::pow(x(), 1), x());
        assert_eq!(Expr::pow(x(), 0), Expr::constant(1.0));
        assert_eq!(Expr::neg(Expr::neg(x())), x());
        assert_eq!(
            Expr::add(Expr::constant(2.0), Expr::constant(3.0)),
            Expr::constant(5.0)
        );
    }

    #[test]
    fn derivative_of_square() {
        let f = Expr::pow(x(), 2);
        let d = f.derivative(0);
        assert_eq!(d.eval(&[3.0]).unwrap(), 6.0);
        assert_eq!(d.derivative(0), Expr::constant(2.0));
    }

    #[test]
    fn tape_matches_tree() {
        let f = Expr::add(
            Expr::mul(Expr::sin(x()), Expr::exp(Expr::var(1))),
            Expr::div(Expr::sqrt(Expr::var(1)), Expr::pow(x(), -2)),
        );
        let tape = f.compile();
        for p in [[0.3, 1.2], [-2.0, 0.5], [4.0, 9.0]] {
            assert_eq!(tape.eval(&p), f.eval(&p).unwrap());
        }
    }

    #[test]
    fn domain_errors() {
        let f = Expr::log(x());
        assert!(f.eval(&[-1.0]).is_err());
        assert!(f.compile().eval(&[0.0]).is_nan());
        let g = Expr::div(Expr::constant(1.0), x());
        assert!(g.eval(&[0.0]).is_err());
        assert!(Expr::sqrt(x()).compile().try_eval(&[-4.0]).is_err());
    }
}
