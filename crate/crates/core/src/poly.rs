//! Sparse polynomials over scheme coordinates with exact coefficients.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scheme::ResponseScheme;

/// Sorted list of flat coordinate indices; at most one per block.
pub type Monomial = Vec<u32>;

/// Canonical sparse polynomial: monomials in lexicographic order, no zero
/// coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolynomialExpr {
    terms: BTreeMap<Monomial, BigRational>,
}

impl PolynomialExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: BigRational) -> Self {
        let mut p = Self::zero();
        p.add_term(Vec::new(), c);
        p
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn variable(coord: usize) -> Self {
        let mut p = Self::zero();
        p.add_term(vec![coord as u32], BigRational::one());
        p
    }

    pub fn add_term(&mut self, mut mono: Monomial, coef: BigRational) {
        if coef.is_zero() {
            return;
        }
        mono.sort_unstable();
        match self.terms.entry(mono) {
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += coef;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(coef);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &BigRational)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Constant value if the polynomial has degree 0.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|m| m.len()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }

    pub fn scale(&self, k: &BigRational) -> Self {
        if k.is_zero() {
            return Self::zero();
        }
        Self { terms: self.terms.iter().map(|(m, c)| (m.clone(), c * k)).collect() }
    }

    /// Product; monomials are merged as coordinate multisets.
    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut m = ma.clone();
                m.extend_from_slice(mb);
                out.add_term(m, ca * cb);
            }
        }
        out
    }

    /// True when every monomial holds at most one coordinate per block.
    pub fn respects_blocks(&self, scheme: &ResponseScheme) -> bool {
        self.terms.keys().all(|m| {
            let mut blocks: Vec<usize> = m.iter().map(|&c| scheme.locate(c as usize).0).collect();
            let n = blocks.len();
            blocks.dedup();
            blocks.len() == n
        })
    }

    /// Canonical form modulo the simplex identities: the last coordinate of
    /// every block is replaced by one minus the others. Two polynomials agree
    /// on the product of simplices iff their reductions are equal.
    pub fn reduce(&self, scheme: &ResponseScheme) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            // expand each occurrence of a block's last coordinate
            let mut partial: Vec<(Monomial, BigRational)> = vec![(Vec::new(), c.clone())];
            for &coord in m {
                let (b, local) = scheme.locate(coord as usize);
                let blk = &scheme.blocks[b];
                if local + 1 == blk.dim {
                    let mut next = Vec::with_capacity(partial.len() * blk.dim);
                    for (pm, pc) in &partial {
                        next.push((pm.clone(), pc.clone()));
                        for other in blk.offset..blk.offset + blk.dim - 1 {
                            let mut nm = pm.clone();
                            nm.push(other as u32);
                            next.push((nm, -pc.clone()));
                        }
                    }
                    partial = next;
                } else {
                    for (pm, _) in partial.iter_mut() {
                        pm.push(coord);
                    }
                }
            }
            for (pm, pc) in partial {
                out.add_term(pm, pc);
            }
        }
        out
    }

    /// Evaluate at a point given in any scalar type.
    pub fn eval<S: Scalar>(&self, point: &[S]) -> S {
        let mut acc = S::zero();
        for (m, c) in &self.terms {
            let mut t = S::from_rational(c);
            for &i in m {
                t = t * point[i as usize].clone();
            }
            acc = acc + t;
        }
        acc
    }

    pub fn eval_f64(&self, point: &[f64]) -> f64 {
        self.eval::<f64>(point)
    }

    /// Coordinates appearing in any monomial.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.terms.keys().flatten().map(|&c| c as usize).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Gradient with respect to every coordinate in `point`'s index space.
    pub fn gradient_f64(&self, point: &[f64], out: &mut [f64]) {
        for (m, c) in &self.terms {
            let c = f64::from_rational(c);
            for (k, &i) in m.iter().enumerate() {
                let mut t = c;
                for (l, &j) in m.iter().enumerate() {
                    if l != k {
                        t *= point[j as usize];
                    }
                }
                out[i as usize] += t;
            }
        }
    }
}

impl fmt::Display for PolynomialExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(m, c)| {
                if m.is_empty() {
                    c.to_string()
                } else {
                    let vars: Vec<String> = m.iter().map(|i| format!("x{i}")).collect();
                    format!("{}*{}", c, vars.join("*"))
                }
            })
            .collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Serialized form: list of `[coefficient, [coords...]]` with the
/// coefficient as a `p/q` string.
impl Serialize for PolynomialExpr {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        let v: Vec<(String, &Monomial)> = self.terms.iter().map(|(m, c)| (c.to_string(), m)).collect();
        v.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolynomialExpr {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> std::result::Result<Self, De::Error> {
        let v: Vec<(String, Monomial)> = Vec::deserialize(d)?;
        let mut p = PolynomialExpr::zero();
        for (c, m) in v {
            let c: BigRational = c.parse().map_err(serde::de::Error::custom)?;
            p.add_term(m, c);
        }
        Ok(p)
    }
}

/// Ratio of two polynomials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationalExpr {
    pub numerator: PolynomialExpr,
    pub denominator: PolynomialExpr,
}

impl RationalExpr {
    pub fn new(numerator: PolynomialExpr, denominator: PolynomialExpr) -> Result<Self> {
        if denominator.is_zero() {
            return Err(Error::InconsistentEvent("denominator is identically zero".into()));
        }
        Ok(RationalExpr { numerator, denominator })
    }

    pub fn polynomial(p: PolynomialExpr) -> Self {
        RationalExpr { numerator: p, denominator: PolynomialExpr::one() }
    }

    pub fn is_polynomial(&self) -> bool {
        self.denominator.as_constant().is_some_and(|c| c.is_one())
    }

    /// `numerator / denominator`, refusing denominators below `eps_den`.
    pub fn eval<S: Scalar>(&self, point: &[S], eps_den: f64) -> Result<S> {
        let den = self.denominator.eval(point);
        let small = if S::is_exact() { den.is_zero() } else { den.to_f64() < eps_den };
        if small {
            return Err(Error::NullConditioning(den.to_f64()));
        }
        Ok(self.numerator.eval(point) / den)
    }
}

/// Default guard against conditioning on near-null events.
pub const EPS_DEN: f64 = 1e-9;

/// Numerator/denominator evaluation at `f64` points with the default guard.
pub fn evaluate(expr: &RationalExpr, point: &[f64]) -> Result<f64> {
    expr.eval(point, EPS_DEN)
}
