//! Recursive-descent parser for potential expressions.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | base ('^' int)?
//! base   := number | 'x' | 'x1'..'xN' | '(' expr ')' | fn '(' expr ')'
//! fn     := sin | cos | exp | log | sqrt
//! ```
//!
//! `x` is an alias for `x1`. Exponents are (optionally signed) integers.

use super::expr::Expr;
use super::PotentialError;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(Token, usize)>, PotentialError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Token::Plus,
            '-' => Token::Minus,
            '*' => Token::Star,
            '/' => Token::Slash,
            '^' => Token::Caret,
            '(' => Token::LParen,
            ')' => Token::RParen,
            d if d.is_ascii_digit() || d == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // scientific notation: 1e-3, 2.5E+4
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
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| PotentialError::Syntax {
                    position: start,
                    message: format!("malformed number '{lit}'"),
                })?;
                out.push((Token::Number(v), start));
                continue;
            }
            a if a.is_ascii_alphabetic() || a == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Token::Ident(text[start..i].to_string()), start));
                continue;
            }
            other => {
                return Err(PotentialError::Syntax {
                    position: start,
                    message: format!("unexpected character '{other}'"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    dim: usize,
    text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, p)| *p)
            .unwrap_or(self.text.len())
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, PotentialError> {
        Err(PotentialError::Syntax {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<(), PotentialError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, PotentialError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    lhs = Expr::add(lhs, self.term()?);
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    lhs = Expr::sub(lhs, self.term()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, PotentialError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    lhs = Expr::mul(lhs, self.factor()?);
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    lhs = Expr::div(lhs, self.factor()?);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, PotentialError> {
        if self.peek() == Some(&Token::Minus) {
            self.pos += 1;
            return Ok(Expr::neg(self.factor()?));
        }
        let base = self.base()?;
        if self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            let negative = match self.peek() {
                Some(Token::Minus) => {
                    self.pos += 1;
                    true
                }
                Some(Token::Plus) => {
                    self.pos += 1;
                    false
                }
                _ => false,
            };
            let n = match self.peek() {
                Some(Token::Number(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                    *v as i32
                }
                _ => return self.syntax("exponent must be an integer"),
            };
            self.pos += 1;
            return Ok(Expr::pow(base, if negative { -n } else { n }));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, PotentialError> {
        let at = self.offset();
        match self.peek().cloned() {
            Some(Token::Number(v)) => {
                self.pos += 1;
                Ok(Expr::constant(v))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                let func: Option<fn(Expr) -> Expr> = match name.as_str() {
                    "sin" => Some(Expr::sin),
                    "cos" => Some(Expr::cos),
                    "exp" => Some(Expr::exp),
                    "log" => Some(Expr::log),
                    "sqrt" => Some(Expr::sqrt),
                    _ => None,
                };
                if let Some(func) = func {
                    self.expect(Token::LParen, "'(' after function name")?;
                    let arg = self.expr()?;
                    self.expect(Token::RParen, "')'")?;
                    return Ok(func(arg));
                }
                self.variable(&name, at)
            }
            Some(_) => self.syntax("expected number, variable, function or '('"),
            None => self.syntax("unexpected end of input"),
        }
    }

    fn variable(&self, name: &str, at: usize) -> Result<Expr, PotentialError> {
        if name == "x" {
            return Ok(Expr::var(0));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| PotentialError::UnknownIdentifier {
                    name: name.to_string(),
                    position: at,
                })?;
                if index == 0 || index > self.dim {
                    return Err(PotentialError::VariableOutOfRange {
                        index,
                        dim: self.dim,
                        position: at,
                    });
                }
                return Ok(Expr::var(index - 1));
            }
        }
        Err(PotentialError::UnknownIdentifier {
            name: name.to_string(),
            position: at,
        })
    }
}

/// Parse `text` as an expression in `dim` variables.
pub fn parse_expr(text: &str, dim: usize) -> Result<Expr, PotentialError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        dim,
        text,
    };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}
