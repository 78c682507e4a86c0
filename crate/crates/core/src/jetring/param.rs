//! Exact parameter scalars: rational polynomials in `mu` and the formal
//! square root `s` (with `s^2 = 1 + mu^2`), plus optional free constants.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::binomial;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use super::JetError;

/// A parameter symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    Mu,
    /// Formal root of `1 + mu^2`.
    S,
    Beta,
    CStrip,
    /// Fresh constant, used for substitutions such as `u -> c E`.
    Free(u16),
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Mu => write!(f, "mu"),
            Param::S => write!(f, "s"),
            Param::Beta => write!(f, "beta"),
            Param::CStrip => write!(f, "C"),
            Param::Free(i) => write!(f, "c{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
struct PMono(Vec<(Param, u32)>);

impl PMono {
    fn mul(&self, other: &PMono) -> PMono {
        let (a, b) = (&self.0, &other.0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        PMono(out)
    }

    fn exponent(&self, p: Param) -> u32 {
        self.0.iter().find(|(q, _)| *q == p).map_or(0, |(_, e)| *e)
    }

    fn with_exponent(&self, p: Param, e: u32) -> PMono {
        let mut v: Vec<(Param, u32)> = self.0.iter().copied().filter(|(q, _)| *q != p).collect();
        if e > 0 {
            v.push((p, e));
            v.sort_by_key(|(q, _)| *q);
        }
        PMono(v)
    }
}

/// Numeric values for the parameter symbols. `s` always evaluates to
/// `+sqrt(1 + mu^2)`; branch signs live in the expressions themselves.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamValues {
    pub mu: f64,
    pub beta: f64,
    pub c_strip: f64,
    pub free: BTreeMap<u16, f64>,
}

impl ParamValues {
    pub fn with_mu(mu: f64) -> Self {
        Self {
            mu,
            ..Default::default()
        }
    }

    pub fn s(&self) -> f64 {
        (1.0 + self.mu * self.mu).sqrt()
    }
}

/// Exact rational values for the parameter symbols. `s` must be a rational
/// root of `1 + mu^2` (e.g. `mu = 3/4`, `s = 5/4`).
#[derive(Clone, Debug, PartialEq)]
pub struct ExactParams {
    pub mu: BigRational,
    pub s: BigRational,
    pub beta: BigRational,
    pub c_strip: BigRational,
    pub free: BTreeMap<u16, BigRational>,
}

impl ExactParams {
    pub fn new(mu: BigRational, s: BigRational) -> Result<Self, JetError> {
        if &s * &s != BigRational::one() + &mu * &mu {
            return Err(JetError::InconsistentRoot);
        }
        Ok(Self {
            mu,
            s,
            beta: BigRational::zero(),
            c_strip: BigRational::zero(),
            free: BTreeMap::new(),
        })
    }
}

/// Exact element of `Q[mu, s, ...] / (s^2 - 1 - mu^2)`.
#[derive(Clone, Debug, PartialEq, Eq, Default, Hash)]
pub struct ParamScalar {
    terms: BTreeMap<PMono, BigRational>,
}

impl ParamScalar {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::from_rational(BigRational::one())
    }

    pub fn from_int(n: i64) -> Self {
        Self::from_rational(BigRational::from_integer(BigInt::from(n)))
    }

    pub fn from_ratio(n: i64, d: i64) -> Self {
        Self::from_rational(BigRational::new(BigInt::from(n), BigInt::from(d)))
    }

    pub fn from_rational(r: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !r.is_zero() {
            terms.insert(PMono::default(), r);
        }
        Self { terms }
    }

    pub fn symbol(p: Param) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(PMono(vec![(p, 1)]), BigRational::one());
        Self { terms }
    }

    pub fn mu() -> Self {
        Self::symbol(Param::Mu)
    }

    pub fn s() -> Self {
        Self::symbol(Param::S)
    }

    /// `eta = mu + sign * s`.
    pub fn eta(sign: i8) -> Self {
        Self::mu() + Self::s().scale_int(sign as i64)
    }

    /// `eta^{-1} = sign * s - mu`, exact under `s^2 = 1 + mu^2`.
    pub fn eta_inv(sign: i8) -> Self {
        Self::s().scale_int(sign as i64) - Self::mu()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.as_rational().is_some_and(|r| r.is_one())
    }

    /// The value when the scalar is a pure rational constant.
    pub fn as_rational(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self
                .terms
                .get(&PMono::default())
                .cloned(),
            _ => None,
        }
    }

    /// Rational coefficient of the greatest parameter monomial.
    pub fn leading_rational(&self) -> Option<&BigRational> {
        self.terms.values().next_back()
    }

    pub fn scale(&self, r: &BigRational) -> Self {
        if r.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * r)).collect(),
        }
    }

    pub fn scale_int(&self, n: i64) -> Self {
        self.scale(&BigRational::from_integer(BigInt::from(n)))
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }

    /// Largest exponent of `s` over all terms; at most 1 by construction.
    pub fn s_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.exponent(Param::S)).max().unwrap_or(0)
    }

    pub fn symbols(&self) -> impl Iterator<Item = Param> + '_ {
        self.terms.keys().flat_map(|m| m.0.iter().map(|(p, _)| *p))
    }

    fn insert(&mut self, m: PMono, c: BigRational) {
        if c.is_zero() {
            return;
        }
        // s^e -> s^(e mod 2) (1 + mu^2)^(e / 2)
        let e = m.exponent(Param::S);
        if e >= 2 {
            let q = e / 2;
            let base = m.with_exponent(Param::S, e % 2);
            let mu_e = base.exponent(Param::Mu);
            for j in 0..=q {
                let b = BigRational::from_integer(binomial(BigInt::from(q), BigInt::from(j)));
                let mm = base.with_exponent(Param::Mu, mu_e + 2 * j);
                self.insert_raw(mm, &c * b);
            }
        } else {
            self.insert_raw(m, c);
        }
    }

    fn insert_raw(&mut self, m: PMono, c: BigRational) {
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    pub fn eval(&self, v: &ParamValues) -> f64 {
        let s = v.s();
        self.terms
            .iter()
            .map(|(m, c)| {
                let mut x = c.to_f64().unwrap_or(f64::NAN);
                for (p, e) in &m.0 {
                    let base = match p {
                        Param::Mu => v.mu,
                        Param::S => s,
                        Param::Beta => v.beta,
                        Param::CStrip => v.c_strip,
                        Param::Free(i) => v.free.get(i).copied().unwrap_or(f64::NAN),
                    };
                    x *= base.powi(*e as i32);
                }
                x
            })
            .sum()
    }

    pub fn eval_exact(&self, v: &ExactParams) -> Result<BigRational, JetError> {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut x = c.clone();
            for (p, e) in &m.0 {
                let base = match p {
                    Param::Mu => v.mu.clone(),
                    Param::S => v.s.clone(),
                    Param::Beta => v.beta.clone(),
                    Param::CStrip => v.c_strip.clone(),
                    Param::Free(i) => v
                        .free
                        .get(i)
                        .cloned()
                        .ok_or(JetError::UnboundSymbol(Param::Free(*i).to_string()))?,
                };
                x *= num_traits::pow(base, *e as usize);
            }
            acc += x;
        }
        Ok(acc)
    }
}

impl fmt::Display for ParamScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            let a = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            first = false;
            let body: Vec<String> = m
                .0
                .iter()
                .map(|(p, e)| if *e == 1 { p.to_string() } else { format!("{p}^{e}") })
                .collect();
            if body.is_empty() {
                write!(f, "{a}")?;
            } else if a.is_one() {
                write!(f, "{}", body.join("*"))?;
            } else {
                write!(f, "{a}*{}", body.join("*"))?;
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a ParamScalar> for &'a ParamScalar {
    type Output = ParamScalar;
    fn add(self, rhs: &ParamScalar) -> ParamScalar {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.insert_raw(m.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a ParamScalar> for &'a ParamScalar {
    type Output = ParamScalar;
    fn sub(self, rhs: &ParamScalar) -> ParamScalar {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.insert_raw(m.clone(), -c.clone());
        }
        out
    }
}

impl<'a> Mul<&'a ParamScalar> for &'a ParamScalar {
    type Output = ParamScalar;
    fn mul(self, rhs: &ParamScalar) -> ParamScalar {
        let mut out = ParamScalar::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.insert(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &ParamScalar {
    type Output = ParamScalar;
    fn neg(self) -> ParamScalar {
        ParamScalar {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c.clone())).collect(),
        }
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident, $t:ty) => {
        impl $tr<$t> for $t {
            type Output = $t;
            fn $m(self, rhs: $t) -> $t {
                (&self).$m(&rhs)
            }
        }
        impl<'a> $tr<&'a $t> for $t {
            type Output = $t;
            fn $m(self, rhs: &'a $t) -> $t {
                (&self).$m(rhs)
            }
        }
        impl<'a> $tr<$t> for &'a $t {
            type Output = $t;
            fn $m(self, rhs: $t) -> $t {
                self.$m(&rhs)
            }
        }
    };
}
pub(crate) use forward_owned;

forward_owned!(Add, add, ParamScalar);
forward_owned!(Sub, sub, ParamScalar);
forward_owned!(Mul, mul, ParamScalar);

impl Neg for ParamScalar {
    type Output = ParamScalar;
    fn neg(self) -> ParamScalar {
        -&self
    }
}
