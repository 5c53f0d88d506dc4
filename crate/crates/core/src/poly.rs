//! Sparse multivariate polynomials over `f64` with a graded monomial order.
//!
//! Monomials are ordered by total degree first and, within a degree,
//! lexicographically with `x1` largest, so the monomial basis of degree 2 in
//! two variables reads `1, x1, x2, x1^2, x1*x2, x2^2`. Every map keyed by
//! [`MultiIndex`] iterates in this order, which makes moment indexing and all
//! file output reproducible.

mod parse;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use parse::ParseError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize },
}

/// Exponent vector of a monomial `z^alpha`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    /// Unit exponent `e_i` (0-based `i`).
    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `x^alpha` evaluated at `point`.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(point)
            .fold(1.0, |acc, (&e, &x)| acc * x.powi(e as i32))
    }

    /// Tuple notation `(a1,...,an)` used as a JSON key.
    pub fn to_tuple_string(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        format!("({})", parts.join(","))
    }

    pub fn from_tuple_string(s: &str) -> Option<MultiIndex> {
        let inner = s.trim().strip_prefix('(')?.strip_suffix(')')?;
        if inner.trim().is_empty() {
            return Some(MultiIndex(Vec::new()));
        }
        inner
            .split(',')
            .map(|t| t.trim().parse::<u32>().ok())
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_tuple_string())
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All multi-indices of dimension `n` and total degree at most `d`, graded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialBasis {
    dim: usize,
    degree: u32,
    monomials: Vec<MultiIndex>,
}

impl MonomialBasis {
    pub fn new(n: usize, d: u32) -> Self {
        let mut monomials = Vec::with_capacity(binomial(n + d as usize, n));
        for k in 0..=d {
            let mut current = vec![0u32; n];
            push_exact_degree(&mut monomials, &mut current, 0, k);
        }
        MonomialBasis {
            dim: n,
            degree: d,
            monomials,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn monomials(&self) -> &[MultiIndex] {
        &self.monomials
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiIndex> {
        self.monomials.iter()
    }
}

/// Shorthand for [`MonomialBasis::new`].
pub fn basis(n: usize, d: u32) -> MonomialBasis {
    MonomialBasis::new(n, d)
}

// Emits exponent vectors of exact total degree `remaining + used` with the
// largest power of the earliest variable first (descending lex).
fn push_exact_degree(out: &mut Vec<MultiIndex>, current: &mut [u32], var: usize, remaining: u32) {
    let n = current.len();
    if n == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if var == n - 1 {
        current[var] = remaining;
        out.push(MultiIndex(current.to_vec()));
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        push_exact_degree(out, current, var + 1, remaining - e);
    }
    current[var] = 0;
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Sparse polynomial in `dim` variables.
#[derive(Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<MultiIndex, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::monomial(MultiIndex::zero(dim), c)
    }

    pub fn one(dim: usize) -> Self {
        Self::constant(dim, 1.0)
    }

    /// The coordinate `z_i` (0-based `i`).
    pub fn var(dim: usize, i: usize) -> Self {
        Self::monomial(MultiIndex::unit(dim, i), 1.0)
    }

    pub fn monomial(alpha: MultiIndex, coeff: f64) -> Self {
        let dim = alpha.dim();
        let mut terms = BTreeMap::new();
        if coeff != 0.0 {
            terms.insert(alpha, coeff);
        }
        Polynomial { dim, terms }
    }

    /// Builds from `(exponents, coefficient)` pairs, collecting like terms.
    pub fn from_terms<I>(dim: usize, terms: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = (MultiIndex, f64)>,
    {
        let mut p = Polynomial::zero(dim);
        for (alpha, c) in terms {
            if alpha.dim() != dim {
                return Err(PolyError::DimensionMismatch {
                    expected: dim,
                    got: alpha.dim(),
                });
            }
            p.add_term(alpha, c);
        }
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.terms.iter().map(|(a, &c)| (a, c))
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> f64 {
        self.terms.get(alpha).copied().unwrap_or(0.0)
    }

    /// Largest absolute coefficient.
    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: f64) {
        use std::collections::btree_map::Entry;
        if c == 0.0 {
            return;
        }
        match self.terms.entry(alpha) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                v.insert(c);
            }
        }
    }

    fn check_dim(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.dim != other.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (a, c) in other.terms() {
            out.add_term(a.clone(), c);
        }
        Ok(out)
    }

    pub fn try_sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut out = self.clone();
        for (a, c) in other.terms() {
            out.add_term(a.clone(), -c);
        }
        Ok(out)
    }

    pub fn try_mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_dim(other)?;
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (a, ca) in self.terms() {
            for (b, cb) in other.terms() {
                *acc.entry(a.add(b)).or_insert(0.0) += ca * cb;
            }
        }
        acc.retain(|_, c| *c != 0.0);
        Ok(Polynomial {
            dim: self.dim,
            terms: acc,
        })
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut terms = BTreeMap::new();
        for (a, c) in self.terms() {
            let v = c * s;
            if v != 0.0 {
                terms.insert(a.clone(), v);
            }
        }
        Polynomial {
            dim: self.dim,
            terms,
        }
    }

    /// Formal partial derivative with respect to the 0-based variable `i`.
    pub fn partial(&self, i: usize) -> Result<Polynomial, PolyError> {
        if i >= self.dim {
            return Err(PolyError::VariableOutOfRange {
                index: i,
                dim: self.dim,
            });
        }
        let mut out = Polynomial::zero(self.dim);
        for (a, c) in self.terms() {
            let e = a.0[i];
            if e == 0 {
                continue;
            }
            let mut b = a.0.clone();
            b[i] -= 1;
            out.add_term(MultiIndex(b), c * e as f64);
        }
        Ok(out)
    }

    pub fn evaluate(&self, point: &[f64]) -> Result<f64, PolyError> {
        if point.len() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: point.len(),
            });
        }
        Ok(self.eval(point))
    }

    /// Unchecked evaluation; `point` must have length `dim`.
    pub fn eval(&self, point: &[f64]) -> f64 {
        self.terms().map(|(a, c)| c * a.eval(point)).sum()
    }

    /// Replaces every variable `z_k` by `factors[k] * z_k`.
    pub fn scale_variables(&self, factors: &[f64]) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (a, c) in self.terms() {
            let f: f64 = a
                .exponents()
                .iter()
                .zip(factors)
                .map(|(&e, &s)| s.powi(e as i32))
                .product();
            out.add_term(a.clone(), c * f);
        }
        out
    }

    pub fn parse(src: &str, dim: usize) -> Result<Polynomial, ParseError> {
        parse::parse_polynomial(src, dim)
    }
}

impl fmt::Debug for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Polynomial[{}]({})", self.dim, self)
    }
}

/// Writes the polynomial in the text grammar accepted by [`Polynomial::parse`],
/// with coefficients in shortest round-trip form.
impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (alpha, c)) in self.terms().enumerate() {
            let mono = format_monomial(alpha);
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            if k == 0 {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            match (mono.is_empty(), mag == 1.0) {
                (true, _) => write!(f, "{mag:?}")?,
                (false, true) => write!(f, "{mono}")?,
                (false, false) => write!(f, "{mag:?}*{mono}")?,
            }
        }
        Ok(())
    }
}

fn format_monomial(alpha: &MultiIndex) -> String {
    let parts: Vec<String> = alpha
        .exponents()
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > 0)
        .map(|(i, &e)| {
            if e == 1 {
                format!("x{}", i + 1)
            } else {
                format!("x{}^{}", i + 1, e)
            }
        })
        .collect();
    parts.join("*")
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        self.try_add(rhs).expect("polynomial dimension mismatch")
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self.try_sub(rhs).expect("polynomial dimension mismatch")
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        self.try_mul(rhs).expect("polynomial dimension mismatch")
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    #[test]
    fn basis_sizes() {
        assert_eq!(basis(1, 2).len(), 3);
        assert_eq!(basis(2, 2).len(), 6);
        assert_eq!(basis(2, 8).len(), 45);
        assert_eq!(basis(3, 8).len(), binomial(11, 3));
        let b = basis(1, 2);
        let exps: Vec<u32> = b.iter().map(|a| a.exponents()[0]).collect();
        assert_eq!(exps, vec![0, 1, 2]);
    }

    #[test]
    fn basis_order_is_graded_x1_first() {
        let b = basis(2, 2);
        let got: Vec<Vec<u32>> = b.iter().map(|a| a.exponents().to_vec()).collect();
        assert_eq!(
            got,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
        let mut sorted = b.monomials().to_vec();
        sorted.sort();
        assert_eq!(sorted, b.monomials());
    }

    #[test]
    fn arithmetic_examples() {
        let a = p("x1 + 1", 1);
        let b = p("x1 - 1", 1);
        assert_eq!(&a * &b, p("x1^2 - 1", 1));
        assert_eq!(&a + &Polynomial::zero(1), a);
        assert_eq!(&p("1 + 2*x1", 1) * &p("2*x1", 1), p("2*x1 + 4*x1^2", 1));
        let diff = &a - &a;
        assert!(diff.is_zero());
        assert_eq!(diff.num_terms(), 0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Polynomial::one(1);
        let b = Polynomial::one(2);
        assert!(matches!(
            a.try_mul(&b),
            Err(PolyError::DimensionMismatch { .. })
        ));
        assert!(a.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn partial_examples() {
        assert_eq!(p("x1^2*x2", 2).partial(0).unwrap(), p("2*x1*x2", 2));
        assert!(p("3", 1).partial(0).unwrap().is_zero());
        assert_eq!(p("x1^4", 1).partial(0).unwrap(), p("4*x1^3", 1));
        assert!(matches!(
            p("x1", 1).partial(1),
            Err(PolyError::VariableOutOfRange { .. })
        ));
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(p("x1^2", 1).evaluate(&[0.5]).unwrap(), 0.25);
        assert_eq!(Polynomial::zero(3).evaluate(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(p("1 + 2*x1", 1).evaluate(&[0.5]).unwrap(), 2.0);
    }

    #[test]
    fn degree_of_zero_is_zero() {
        assert_eq!(Polynomial::zero(2).degree(), 0);
        assert_eq!(p("x1*x2^3 + x1", 2).degree(), 4);
    }

    #[test]
    fn display_round_trips() {
        let q = p("1 + 2*x1 - 0.5*x1^2*x2 + 1e-3*x2^4", 2);
        let text = q.to_string();
        assert_eq!(Polynomial::parse(&text, 2).unwrap(), q);
    }

    #[test]
    fn tuple_keys() {
        let a = MultiIndex::new(vec![1, 0, 3]);
        assert_eq!(a.to_tuple_string(), "(1,0,3)");
        assert_eq!(MultiIndex::from_tuple_string(" (1, 0,3) "), Some(a));
        assert_eq!(MultiIndex::from_tuple_string("1,0"), None);
    }

    fn small_poly(n: usize) -> impl Strategy<Value = Polynomial> {
        prop::collection::vec((prop::collection::vec(0u32..4, n), -3.0f64..3.0), 0..6).prop_map(
            move |terms| {
                Polynomial::from_terms(n, terms.into_iter().map(|(e, c)| (MultiIndex::new(e), c)))
                    .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn product_evaluates_as_product(
            a in small_poly(2),
            b in small_poly(2),
            x in prop::collection::vec(-1.5f64..1.5, 2),
        ) {
            let lhs = (&a * &b).eval(&x);
            let rhs = a.eval(&x) * b.eval(&x);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs().max(lhs.abs())));
        }

        #[test]
        fn partials_commute(a in small_poly(3)) {
            let ij = a.partial(0).unwrap().partial(2).unwrap();
            let ji = a.partial(2).unwrap().partial(0).unwrap();
            prop_assert_eq!(ij, ji);
        }

        #[test]
        fn product_degree_adds(a in small_poly(2), b in small_poly(2)) {
            prop_assume!(!a.is_zero() && !b.is_zero());
            let prod = &a * &b;
            prop_assert_eq!(prod.degree(), a.degree() + b.degree());
        }

        #[test]
        fn basis_is_prefix_of_next(n in 1usize..4, d in 0u32..6) {
            let small = basis(n, d);
            let big = basis(n, d + 1);
            prop_assert_eq!(small.len(), binomial(n + d as usize, n));
            prop_assert_eq!(&big.monomials()[..small.len()], small.monomials());
        }
    }
}
