//! Potentials `F` on R^N with exact symbolic derivatives.
//!
//! A [`Potential`] owns the expression for `F` together with its gradient,
//! Hessian and Laplacian, all derived symbolically at construction time and
//! compiled to postfix tapes for fast evaluation along sample paths.

mod expr;
mod parser;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub use expr::{Expr, Tape};
pub use parser::parse_expr;

/// Threshold under which `F(x)` counts as zero when forming `W(x)/F(x)`.
pub const LAMBDA_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PotentialError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier '{name}' at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("variable x{index} at position {position} exceeds dimension {dim}")]
    VariableOutOfRange {
        index: usize,
        dim: usize,
        position: usize,
    },
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("domain error: {0}")]
    Domain(&'static str),
    #[error("lambda(x) undefined: |F(x)| = {value:e} below tolerance")]
    UndefinedLambda { value: f64 },
    #[error("point has dimension {got}, potential has dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Value and derivatives of a potential at one point.
#[derive(Debug, Clone, Serialize)]
pub struct DiffBundle {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub laplacian: f64,
    pub hessian: Vec<Vec<f64>>,
}

#[derive(Debug)]
struct Compiled {
    value: Tape,
    grad: Vec<Tape>,
    laplacian: Tape,
    hessian: Vec<Vec<Tape>>,
    /// `V_F = |grad F|^2 - lap F`
    schrodinger: Tape,
}

/// A C^2 potential `F : R^N -> R` and its exact derivatives.
#[derive(Debug, Clone)]
pub struct Potential {
    dim: usize,
    label: String,
    f: Expr,
    grad: Vec<Expr>,
    laplacian: Expr,
    hessian: Vec<Vec<Expr>>,
    schrodinger: Expr,
    normalization_shift: Option<f64>,
    compiled: Arc<Compiled>,
}

impl Potential {
    /// Build from an expression tree; derivatives are computed here.
    pub fn from_expr(f: Expr, dim: usize, label: impl Into<String>) -> Result<Self, PotentialError> {
        if dim == 0 {
            return Err(PotentialError::ZeroDimension);
        }
        if f.arity() > dim {
            return Err(PotentialError::VariableOutOfRange {
                index: f.arity(),
                dim,
                position: 0,
            });
        }
        let grad: Vec<Expr> = (0..dim).map(|i| f.derivative(i)).collect();
        let mut hessian = vec![vec![Expr::constant(0.0); dim]; dim];
        for i in 0..dim {
            for j in i..dim {
                let h = grad[i].derivative(j);
                hessian[j][i] = h.clone();
                hessian[i][j] = h;
            }
        }
        let laplacian = (0..dim).fold(Expr::constant(0.0), |acc, i| {
            Expr::add(acc, hessian[i][i].clone())
        });
        let grad_sq = grad.iter().fold(Expr::constant(0.0), |acc, g| {
            Expr::add(acc, Expr::pow(g.clone(), 2))
        });
        let schrodinger = Expr::sub(grad_sq, laplacian.clone());
        let compiled = Compiled {
            value: f.compile(),
            grad: grad.iter().map(Expr::compile).collect(),
            laplacian: laplacian.compile(),
            hessian: hessian
                .iter()
                .map(|row| row.iter().map(Expr::compile).collect())
                .collect(),
            schrodinger: schrodinger.compile(),
        };
        Ok(Potential {
            dim,
            label: label.into(),
            f,
            grad,
            laplacian,
            hessian,
            schrodinger,
            normalization_shift: None,
            compiled: Arc::new(compiled),
        })
    }

    /// Parse a potential from the public expression grammar.
    pub fn parse(text: &str, dim: usize) -> Result<Self, PotentialError> {
        if dim == 0 {
            return Err(PotentialError::ZeroDimension);
        }
        let f = parse_expr(text, dim)?;
        Self::from_expr(f, dim, text.trim())
    }

    /// The oscillating family `x^2 + beta * x * sin(x)` on R.
    ///
    /// `x sin x` is even, so the formula already equals its symmetric
    /// extension from the half line.
    pub fn example56(beta: f64) -> Self {
        let x = Expr::var(0);
        let f = Expr::add(
            Expr::pow(x.clone(), 2),
            Expr::mul(Expr::mul(Expr::constant(beta), x.clone()), Expr::sin(x)),
        );
        Self::from_expr(f, 1, format!("example56(beta={beta})"))
            .expect("one-dimensional builtin is well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn expr(&self) -> &Expr {
        &self.f
    }

    pub fn grad_exprs(&self) -> &[Expr] {
        &self.grad
    }

    pub fn laplacian_expr(&self) -> &Expr {
        &self.laplacian
    }

    pub fn hessian_exprs(&self) -> &[Vec<Expr>] {
        &self.hessian
    }

    pub fn schrodinger_expr(&self) -> &Expr {
        &self.schrodinger
    }

    /// Shift `s` such that `exp(-2(F+s))` integrates to one, once known.
    pub fn normalization_shift(&self) -> Option<f64> {
        self.normalization_shift
    }

    pub fn with_normalization_shift(mut self, shift: f64) -> Self {
        self.normalization_shift = Some(shift);
        self
    }

    /// `F + c` for a constant `c`. The normalization shift is adjusted so the
    /// normalized potential is unchanged.
    pub fn shifted(&self, c: f64) -> Self {
        let f = Expr::add(self.f.clone(), Expr::constant(c));
        let mut p = Self::from_expr(f, self.dim, format!("{} + {c}", self.label))
            .expect("shift keeps dimension");
        p.normalization_shift = self.normalization_shift.map(|s| s - c);
        p
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PotentialError> {
        if x.len() != self.dim {
            return Err(PotentialError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    // Fast NaN-signalling evaluators used in inner loops.

    #[inline]
    pub fn value_fast(&self, x: &[f64]) -> f64 {
        self.compiled.value.eval(x)
    }

    #[inline]
    pub fn grad_fast(&self, x: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.compiled.grad) {
            *o = t.eval(x);
        }
    }

    #[inline]
    pub fn grad_norm_sq_fast(&self, x: &[f64]) -> f64 {
        self.compiled
            .grad
            .iter()
            .map(|t| {
                let g = t.eval(x);
                g * g
            })
            .sum()
    }

    #[inline]
    pub fn laplacian_fast(&self, x: &[f64]) -> f64 {
        self.compiled.laplacian.eval(x)
    }

    #[inline]
    pub fn schrodinger_fast(&self, x: &[f64]) -> f64 {
        self.compiled.schrodinger.eval(x)
    }

    /// `W(x) = V_F(x) / 2`; NaN on domain errors.
    #[inline]
    pub fn well_fast(&self, x: &[f64]) -> f64 {
        0.5 * self.compiled.schrodinger.eval(x)
    }

    #[inline]
    pub fn hessian_entry_fast(&self, i: usize, j: usize, x: &[f64]) -> f64 {
        self.compiled.hessian[i][j].eval(x)
    }

    /// Normalized value `F(x) + s`; falls back to raw `F` when no shift is known.
    #[inline]
    pub fn normalized_value_fast(&self, x: &[f64]) -> f64 {
        self.value_fast(x) + self.normalization_shift.unwrap_or(0.0)
    }

    fn finite(v: f64) -> Result<f64, PotentialError> {
        if v.is_nan() {
            Err(PotentialError::Domain("expression undefined at point"))
        } else {
            Ok(v)
        }
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, PotentialError> {
        self.check_dim(x)?;
        Self::finite(self.value_fast(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, PotentialError> {
        self.check_dim(x)?;
        let mut g = vec![0.0; self.dim];
        self.grad_fast(x, &mut g);
        for v in &g {
            Self::finite(*v)?;
        }
        Ok(g)
    }

    pub fn laplacian(&self, x: &[f64]) -> Result<f64, PotentialError> {
        self.check_dim(x)?;
        Self::finite(self.laplacian_fast(x))
    }

    pub fn hessian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, PotentialError> {
        self.check_dim(x)?;
        let mut h = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in h.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = Self::finite(self.hessian_entry_fast(i, j, x))?;
            }
        }
        Ok(h)
    }

    pub fn bundle(&self, x: &[f64]) -> Result<DiffBundle, PotentialError> {
        Ok(DiffBundle {
            x: x.to_vec(),
            value: self.value(x)?,
            grad: self.gradient(x)?,
            laplacian: self.laplacian(x)?,
            hessian: self.hessian(x)?,
        })
    }
}

/// `W(x) = |grad F|^2 / 2 - lap F / 2`, the well term.
pub fn well_term(p: &Potential, x: &[f64]) -> Result<f64, PotentialError> {
    Ok(0.5 * schrodinger_potential(p, x)?)
}

/// `V_F(x) = |grad F|^2 - lap F`, the potential of the ground-state transformed
/// Schrodinger operator.
pub fn schrodinger_potential(p: &Potential, x: &[f64]) -> Result<f64, PotentialError> {
    p.check_dim(x)?;
    Potential::finite(p.schrodinger_fast(x))
}

/// `lambda(x) = W(x) / F(x)` with `F` normalized when a shift is known.
pub fn lambda_of_x(p: &Potential, x: &[f64]) -> Result<f64, PotentialError> {
    let w = well_term(p, x)?;
    let f = p.value(x)? + p.normalization_shift().unwrap_or(0.0);
    if f.abs() < LAMBDA_ZERO_TOL {
        return Err(PotentialError::UndefinedLambda { value: f });
    }
    Ok(w / f)
}

/// `psi(x) = log(1 + |x|^2)`, the default Lyapunov function.
pub fn default_lyapunov(dim: usize) -> Potential {
    let r2 = (0..dim).fold(Expr::constant(0.0), |acc, i| {
        Expr::add(acc, Expr::pow(Expr::var(i), 2))
    });
    Potential::from_expr(Expr::log(Expr::add(Expr::constant(1.0), r2)), dim, "log(1+|x|^2)")
        .expect("dimension is positive")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn parse_square() {
        let p = Potential::parse("x^2", 1).unwrap();
        assert_eq!(p.grad_exprs()[0].eval(&[1.5]).unwrap(), 3.0);
        assert_eq!(*p.laplacian_expr(), Expr::constant(2.0));
        assert_eq!(p.hessian(&[0.3]).unwrap(), vec![vec![2.0]]);
    }

    #[test]
    fn parse_example56_minus_two() {
        let p = Potential::parse("x^2 - 2*x*sin(x)", 1).unwrap();
        for &x in &[0.3, 1.0, -2.5, 7.0, 40.0] {
            let g = p.gradient(&[x]).unwrap()[0];
            let expected = (2.0 - 2.0 * x.cos()) * x - 2.0 * x.sin();
            assert!((g - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            let l = p.laplacian(&[x]).unwrap();
            let expected = 2.0 * x * x.sin() + 2.0 - 4.0 * x.cos();
            assert!((l - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn parse_quadratic_form_2d() {
        let p = Potential::parse("x1^2 + x2^2", 2).unwrap();
        assert_eq!(p.laplacian(&[0.7, -1.1]).unwrap(), 4.0);
        assert_eq!(
            p.hessian(&[0.7, -1.1]).unwrap(),
            vec![vec![2.0, 0.0], vec![0.0, 2.0]]
        );
    }

    #[test]
    fn example56_values() {
        let p = Potential::example56(0.0);
        assert_eq!(p.value(&[3.0]).unwrap(), 9.0);
        assert_eq!(p.gradient(&[2.0]).unwrap()[0], 4.0);

        let p = Potential::example56(-2.0);
        for &x in &[0.1f64, 2.0, 9.5, 123.0] {
            let expected = 2.0 * x * x.sin() + 2.0 - 4.0 * x.cos();
            let got = p.laplacian(&[x]).unwrap();
            assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }

        // F(pi) = pi^2 and F'(pi) = (2 + cos pi) pi + sin pi = pi, up to sin(pi) rounding
        let p = Potential::example56(1.0);
        assert!((p.value(&[PI]).unwrap() - PI * PI).abs() < 1e-12);
        assert!((p.gradient(&[PI]).unwrap()[0] - PI).abs() < 1e-12);
    }

    #[test]
    fn well_term_examples() {
        let p = Potential::parse("x^2", 1).unwrap();
        assert_eq!(well_term(&p, &[1.0]).unwrap(), 1.0);
        assert_eq!(well_term(&p, &[0.0]).unwrap(), -1.0);
        let lin = Potential::parse("3*x", 1).unwrap();
        for &x in &[-5.0, 0.0, 2.0] {
            assert_eq!(well_term(&lin, &[x]).unwrap(), 4.5);
        }
    }

    #[test]
    fn schrodinger_examples() {
        let p = Potential::parse("x^2", 1).unwrap();
        for &x in &[-1.0, 0.0, 2.5] {
            assert_eq!(schrodinger_potential(&p, &[x]).unwrap(), 4.0 * x * x - 2.0);
        }
        let zero = Potential::parse("0", 1).unwrap();
        assert_eq!(schrodinger_potential(&zero, &[1.3]).unwrap(), 0.0);

        // at x = 2k pi: F' = 0, F'' = -2, so V_F = 2
        let p = Potential::example56(-2.0);
        for k in 1..5 {
            let x = 2.0 * PI * k as f64;
            let v = schrodinger_potential(&p, &[x]).unwrap();
            assert!((v - 2.0).abs() < 1e-9, "k={k}: {v}");
        }
    }

    #[test]
    fn lambda_examples() {
        let p = Potential::parse("x^2", 1).unwrap();
        assert_eq!(lambda_of_x(&p, &[1.0]).unwrap(), 1.0);
        assert_eq!(lambda_of_x(&p, &[2.0]).unwrap(), 7.0 / 4.0);
        assert!(matches!(
            lambda_of_x(&p, &[0.0]),
            Err(PotentialError::UndefinedLambda { .. })
        ));
    }

    #[test]
    fn domain_error_propagates() {
        let p = Potential::parse("sqrt(x)", 1).unwrap();
        assert!(matches!(
            well_term(&p, &[-1.0]),
            Err(PotentialError::Domain(_))
        ));
        assert!(p.value(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn shift_moves_value_not_derivatives() {
        let p = Potential::parse("x^4 - x^2", 1).unwrap().with_normalization_shift(0.25);
        let q = p.shifted(3.0);
        assert_eq!(q.value(&[1.5]).unwrap(), p.value(&[1.5]).unwrap() + 3.0);
        assert_eq!(q.gradient(&[1.5]).unwrap(), p.gradient(&[1.5]).unwrap());
        assert_eq!(q.normalization_shift(), Some(-2.75));
    }
}
