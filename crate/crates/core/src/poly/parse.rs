//! Recursive-descent parser for polynomial text such as `1 + 2*x1 - 0.5*x1^2*x2`.
//!
//! Variables are `x1..xn` (1-based). Coefficients accept scientific notation.
//! Parentheses are accepted as well so that factored forms like
//! `x1*(1 - x1)` can be written directly.

use thiserror::Error;

use super::{MultiIndex, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("unexpected character '{found}' at position {pos}")]
    UnexpectedChar { pos: usize, found: char },
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("invalid number '{text}' at position {pos}")]
    InvalidNumber { pos: usize, text: String },
    #[error("variable x{index} at position {pos} is outside 1..={dim}")]
    VariableOutOfRange { pos: usize, index: usize, dim: usize },
    #[error("exponent at position {pos} must be a nonnegative integer")]
    BadExponent { pos: usize },
}

impl ParseError {
    pub fn position(&self) -> Option<usize> {
        match self {
            ParseError::UnexpectedChar { pos, .. }
            | ParseError::InvalidNumber { pos, .. }
            | ParseError::VariableOutOfRange { pos, .. }
            | ParseError::BadExponent { pos } => Some(*pos),
            ParseError::UnexpectedEnd => None,
        }
    }
}

pub(super) fn parse_polynomial(src: &str, dim: usize) -> Result<Polynomial, ParseError> {
    let mut parser = Parser {
        chars: src.char_indices().filter(|(_, c)| !c.is_whitespace()).collect(),
        pos: 0,
        dim,
    };
    let p = parser.expr()?;
    if let Some(&(pos, found)) = parser.chars.get(parser.pos) {
        return Err(ParseError::UnexpectedChar { pos, found });
    }
    Ok(p)
}

struct Parser {
    chars: Vec<(usize, char)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|&(p, _)| p)
            .unwrap_or_else(|| self.chars.last().map(|&(p, _)| p + 1).unwrap_or(0))
    }

    fn expr(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.term()?;
        while let Some(c) = self.peek() {
            match c {
                '+' => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                '-' => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<Polynomial, ParseError> {
        let mut acc = self.unary()?;
        while self.peek() == Some('*') {
            self.pos += 1;
            acc = &acc * &self.unary()?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial, ParseError> {
        match self.peek() {
            Some('-') => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, ParseError> {
        let base = self.atom()?;
        if self.peek() != Some('^') {
            return Ok(base);
        }
        self.pos += 1;
        let pos = self.offset();
        let digits = self.take_while(|c| c.is_ascii_digit());
        let k: u32 = digits.parse().map_err(|_| ParseError::BadExponent { pos })?;
        let mut out = Polynomial::one(self.dim);
        for _ in 0..k {
            out = &out * &base;
        }
        Ok(out)
    }

    fn atom(&mut self) -> Result<Polynomial, ParseError> {
        let pos = self.offset();
        match self.peek() {
            None => Err(ParseError::UnexpectedEnd),
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(')') => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    Some(found) => Err(ParseError::UnexpectedChar {
                        pos: self.offset(),
                        found,
                    }),
                    None => Err(ParseError::UnexpectedEnd),
                }
            }
            Some('x') | Some('X') => {
                self.pos += 1;
                let digits = self.take_while(|c| c.is_ascii_digit());
                let index: usize = digits.parse().map_err(|_| ParseError::UnexpectedChar {
                    pos,
                    found: 'x',
                })?;
                if index == 0 || index > self.dim {
                    return Err(ParseError::VariableOutOfRange {
                        pos,
                        index,
                        dim: self.dim,
                    });
                }
                Ok(Polynomial::monomial(
                    MultiIndex::unit(self.dim, index - 1),
                    1.0,
                ))
            }
            Some(c) if c.is_ascii_digit() || c == '.' => {
                let text = self.number_text();
                let value: f64 = text
                    .parse()
                    .map_err(|_| ParseError::InvalidNumber { pos, text })?;
                Ok(Polynomial::constant(self.dim, value))
            }
            Some(found) => Err(ParseError::UnexpectedChar { pos, found }),
        }
    }

    fn number_text(&mut self) -> String {
        let mut text = self.take_while(|c| c.is_ascii_digit() || c == '.');
        if matches!(self.peek(), Some('e') | Some('E')) {
            text.push('e');
            self.pos += 1;
            if let Some(sign @ ('+' | '-')) = self.peek() {
                text.push(sign);
                self.pos += 1;
            }
            text.push_str(&self.take_while(|c| c.is_ascii_digit()));
        }
        text
    }

    fn take_while(&mut self, pred: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if !pred(c) {
                break;
            }
            s.push(c);
            self.pos += 1;
        }
        s
    }
}
