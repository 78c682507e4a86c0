//! Sparse polynomials in jet variables with [`ParamScalar`] coefficients.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use super::param::{forward_owned, ExactParams, ParamScalar, ParamValues};
use super::JetError;

/// A jet coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum JetVar {
    /// `d^x_x d^t_t u` with `t <= 1`.
    U { x: u8, t: u8 },
    /// The exponential `e^x`; the only variable allowed a negative exponent.
    E,
    /// The pseudo-potential. Its derivatives are substituted, never stored.
    G,
}

impl JetVar {
    pub const fn u(x: u8) -> Self {
        JetVar::U { x, t: 0 }
    }

    pub const fn ut(x: u8) -> Self {
        JetVar::U { x, t: 1 }
    }
}

impl fmt::Display for JetVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            JetVar::U { x, t } => {
                if x == 0 && t == 0 {
                    return write!(f, "u");
                }
                write!(f, "u_")?;
                if x > 4 {
                    write!(f, "{{{x}x}}")?;
                } else {
                    for _ in 0..x {
                        write!(f, "x")?;
                    }
                }
                if t == 1 {
                    write!(f, "t")?;
                }
                Ok(())
            }
            JetVar::E => write!(f, "E"),
            JetVar::G => write!(f, "g"),
        }
    }
}

/// Direction of a total derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dir {
    X,
    T,
}

/// Power product of jet variables, sorted by variable, no zero exponents.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Monomial(Vec<(JetVar, i32)>);

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn var(v: JetVar, e: i32) -> Self {
        if e == 0 {
            Self::one()
        } else {
            Monomial(vec![(v, e)])
        }
    }

    pub fn factors(&self) -> &[(JetVar, i32)] {
        &self.0
    }

    pub fn exponent(&self, v: JetVar) -> i32 {
        self.0.iter().find(|(w, _)| *w == v).map_or(0, |(_, e)| *e)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
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
                    let e = a[i].1 + b[j].1;
                    if e != 0 {
                        out.push((a[i].0, e));
                    }
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Monomial(out)
    }

    fn with_exponent(&self, v: JetVar, e: i32) -> Monomial {
        let mut out: Vec<(JetVar, i32)> = self.0.iter().copied().filter(|(w, _)| *w != v).collect();
        if e != 0 {
            out.push((v, e));
            out.sort_by_key(|(w, _)| *w);
        }
        Monomial(out)
    }

    /// Total degree in the `u`-jets (ignores `E` and `g`).
    pub fn jet_degree(&self) -> i32 {
        self.0
            .iter()
            .filter(|(v, _)| matches!(v, JetVar::U { .. }))
            .map(|(_, e)| *e)
            .sum()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|(v, e)| if *e == 1 { v.to_string() } else { format!("{v}^{e}") })
            .collect();
        write!(f, "{}", parts.join("*"))
    }
}

/// Substitutions for the derivatives of the pseudo-potential `g`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GRule {
    pub gx: Option<DiffExpr>,
    pub gt: Option<DiffExpr>,
}

/// Exact polynomial in jet variables over the parameter ring.
#[derive(Clone, Debug, PartialEq, Eq, Default, Hash)]
pub struct DiffExpr {
    terms: BTreeMap<Monomial, ParamScalar>,
}

impl DiffExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn one() -> Self {
        Self::constant(ParamScalar::one())
    }

    pub fn int(n: i64) -> Self {
        Self::constant(ParamScalar::from_int(n))
    }

    pub fn ratio(n: i64, d: i64) -> Self {
        Self::constant(ParamScalar::from_ratio(n, d))
    }

    pub fn constant(c: ParamScalar) -> Self {
        Self::term(Monomial::one(), c)
    }

    pub fn term(m: Monomial, c: ParamScalar) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert(m, c);
        }
        Self { terms }
    }

    pub fn var(v: JetVar) -> Self {
        Self::term(Monomial::var(v, 1), ParamScalar::one())
    }

    /// `d^i_x u`.
    pub fn u(i: u8) -> Self {
        Self::var(JetVar::u(i))
    }

    /// `d^i_x d_t u`.
    pub fn ut(i: u8) -> Self {
        Self::var(JetVar::ut(i))
    }

    /// `E^n = e^{n x}`, any integer `n`.
    pub fn exp(n: i32) -> Self {
        Self::term(Monomial::var(JetVar::E, n), ParamScalar::one())
    }

    pub fn g() -> Self {
        Self::var(JetVar::G)
    }

    pub fn mu() -> Self {
        Self::constant(ParamScalar::mu())
    }

    pub fn s() -> Self {
        Self::constant(ParamScalar::s())
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &ParamScalar)> {
        self.terms.iter()
    }

    /// The constant coefficient if the expression has no jet variables.
    pub fn as_constant(&self) -> Option<ParamScalar> {
        match self.terms.len() {
            0 => Some(ParamScalar::zero()),
            1 => self.terms.get(&Monomial::one()).cloned(),
            _ => None,
        }
    }

    pub fn leading_term(&self) -> Option<(&Monomial, &ParamScalar)> {
        self.terms.iter().next_back()
    }

    pub fn variables(&self) -> std::collections::BTreeSet<JetVar> {
        self.terms
            .keys()
            .flat_map(|m| m.0.iter().map(|(v, _)| *v))
            .collect()
    }

    pub fn max_order(&self, t: u8) -> Option<u8> {
        self.variables()
            .into_iter()
            .filter_map(|v| match v {
                JetVar::U { x, t: tt } if tt == t => Some(x),
                _ => None,
            })
            .max()
    }

    /// Smallest exponent of `E` across all terms (0 for the zero polynomial).
    pub fn min_e_exponent(&self) -> i32 {
        self.terms
            .keys()
            .map(|m| m.exponent(JetVar::E))
            .min()
            .unwrap_or(0)
    }

    pub(crate) fn add_term(&mut self, m: Monomial, c: ParamScalar) {
        use std::collections::btree_map::Entry;
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let sum = o.get() + &c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn scale(&self, c: &ParamScalar) -> Self {
        let mut out = Self::zero();
        for (m, k) in &self.terms {
            out.add_term(m.clone(), k * c);
        }
        out
    }

    pub fn scale_int(&self, n: i64) -> Self {
        self.scale_rational(&big(n))
    }

    pub fn scale_rational(&self, r: &BigRational) -> Self {
        if r.is_zero() {
            return Self::zero();
        }
        Self {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c.scale(r))).collect(),
        }
    }

    pub fn mul_monomial(&self, m: &Monomial) -> Self {
        Self {
            terms: self.terms.iter().map(|(k, c)| (k.mul(m), c.clone())).collect(),
        }
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = &acc * &base;
            }
            n >>= 1;
            if n > 0 {
                base = &base * &base;
            }
        }
        acc
    }

    fn derive_var(v: JetVar, dir: Dir, g: Option<&GRule>) -> Result<DiffExpr, JetError> {
        match (v, dir) {
            (JetVar::U { x, t }, Dir::X) => Ok(DiffExpr::var(JetVar::U { x: x + 1, t })),
            (JetVar::U { x, t: 0 }, Dir::T) => Ok(DiffExpr::ut(x)),
            (JetVar::U { x, .. }, Dir::T) => Err(JetError::SecondTimeDerivative { x_order: x }),
            (JetVar::E, Dir::X) => Ok(DiffExpr::exp(1)),
            (JetVar::E, Dir::T) => Ok(DiffExpr::zero()),
            (JetVar::G, d) => {
                let rule = g.and_then(|r| match d {
                    Dir::X => r.gx.as_ref(),
                    Dir::T => r.gt.as_ref(),
                });
                rule.cloned().ok_or(JetError::MissingPseudoPotentialRule)
            }
        }
    }

    /// Total derivative; fails on `g` (use [`DiffExpr::total_derivative_with`]).
    pub fn total_derivative(&self, dir: Dir) -> Result<DiffExpr, JetError> {
        self.total_derivative_with(dir, None)
    }

    /// Total derivative with `g_x`, `g_t` substituted from `g`.
    pub fn total_derivative_with(&self, dir: Dir, g: Option<&GRule>) -> Result<DiffExpr, JetError> {
        let mut out = DiffExpr::zero();
        for (m, c) in &self.terms {
            for &(v, e) in &m.0 {
                if v == JetVar::E {
                    if dir == Dir::X {
                        out.add_term(m.clone(), c.scale_int(e as i64));
                    }
                    continue;
                }
                let dv = Self::derive_var(v, dir, g)?;
                if dv.is_zero() {
                    continue;
                }
                let rest = m.with_exponent(v, e - 1);
                let coeff = c.scale_int(e as i64);
                for (dm, dc) in &dv.terms {
                    out.add_term(rest.mul(dm), &coeff * dc);
                }
            }
        }
        Ok(out)
    }

    /// Repeated x-derivative.
    pub fn dx_n(&self, n: usize) -> DiffExpr {
        let mut e = self.clone();
        for _ in 0..n {
            e = e.total_derivative(Dir::X).expect("x-derivative of a g-free expression");
        }
        e
    }

    /// Partial derivative with respect to one jet variable.
    pub fn partial(&self, v: JetVar) -> DiffExpr {
        let mut out = DiffExpr::zero();
        for (m, c) in &self.terms {
            let e = m.exponent(v);
            if e != 0 {
                out.add_term(m.with_exponent(v, e - 1), c.scale_int(e as i64));
            }
        }
        out
    }

    /// Replace variables by expressions. `E` is never substituted; variables
    /// for which `f` returns `None` are kept.
    pub fn substitute<F>(&self, f: F) -> DiffExpr
    where
        F: Fn(JetVar) -> Option<DiffExpr>,
    {
        let mut cache: BTreeMap<JetVar, Option<DiffExpr>> = BTreeMap::new();
        let mut out = DiffExpr::zero();
        for (m, c) in &self.terms {
            let mut kept = Monomial::one();
            let mut prod = DiffExpr::constant(c.clone());
            for &(v, e) in &m.0 {
                let rep = if v == JetVar::E {
                    None
                } else {
                    cache.entry(v).or_insert_with(|| f(v)).clone()
                };
                match rep {
                    Some(r) => prod = &prod * &r.pow(e as u32),
                    None => kept = kept.mul(&Monomial::var(v, e)),
                }
            }
            out = out + prod.mul_monomial(&kept);
        }
        out
    }

    /// Floating point evaluation; `value` gives each non-`E` variable, and
    /// `E` is `exp(x)`.
    pub fn eval<F>(&self, x: f64, value: F, params: &ParamValues) -> f64
    where
        F: Fn(JetVar) -> f64,
    {
        let ex = x.exp();
        self.terms
            .iter()
            .map(|(m, c)| {
                let mut t = c.eval(params);
                for &(v, e) in &m.0 {
                    let b = if v == JetVar::E { ex } else { value(v) };
                    t *= b.powi(e);
                }
                t
            })
            .sum()
    }

    /// Exact evaluation with `E` supplied as a rational value.
    pub fn eval_exact<F>(&self, value: F, params: &ExactParams) -> Result<BigRational, JetError>
    where
        F: Fn(JetVar) -> BigRational,
    {
        let mut acc = BigRational::zero();
        for (m, c) in &self.terms {
            let mut t = c.eval_exact(params)?;
            for &(v, e) in &m.0 {
                let b = value(v);
                if e < 0 {
                    if b.is_zero() {
                        return Err(JetError::ZeroDenominator);
                    }
                    t *= num_traits::pow(b.recip(), (-e) as usize);
                } else {
                    t *= num_traits::pow(b, e as usize);
                }
            }
            acc += t;
        }
        Ok(acc)
    }

    /// Rational coefficient of the leading term's leading parameter monomial.
    pub(crate) fn leading_rational(&self) -> Option<BigRational> {
        self.leading_term().and_then(|(_, c)| c.leading_rational().cloned())
    }

    pub(crate) fn shift_e(&self, n: i32) -> DiffExpr {
        if n == 0 {
            return self.clone();
        }
        self.mul_monomial(&Monomial::var(JetVar::E, n))
    }
}

impl fmt::Display for DiffExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in self.terms.iter().rev() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let mono = m.to_string();
            if mono.is_empty() {
                write!(f, "({c})")?;
            } else if c.is_one() {
                write!(f, "{mono}")?;
            } else {
                write!(f, "({c})*{mono}")?;
            }
        }
        Ok(())
    }
}

impl<'a> Add<&'a DiffExpr> for &'a DiffExpr {
    type Output = DiffExpr;
    fn add(self, rhs: &DiffExpr) -> DiffExpr {
        let (big, small) = if self.terms.len() >= rhs.terms.len() {
            (self, rhs)
        } else {
            (rhs, self)
        };
        let mut out = big.clone();
        for (m, c) in &small.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a DiffExpr> for &'a DiffExpr {
    type Output = DiffExpr;
    fn sub(self, rhs: &DiffExpr) -> DiffExpr {
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c);
        }
        out
    }
}

impl<'a> Mul<&'a DiffExpr> for &'a DiffExpr {
    type Output = DiffExpr;
    fn mul(self, rhs: &DiffExpr) -> DiffExpr {
        let mut out = DiffExpr::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }
}

impl Neg for &DiffExpr {
    type Output = DiffExpr;
    fn neg(self) -> DiffExpr {
        DiffExpr {
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }
}

impl Neg for DiffExpr {
    type Output = DiffExpr;
    fn neg(self) -> DiffExpr {
        -&self
    }
}

forward_owned!(Add, add, DiffExpr);
forward_owned!(Sub, sub, DiffExpr);
forward_owned!(Mul, mul, DiffExpr);

impl From<ParamScalar> for DiffExpr {
    fn from(c: ParamScalar) -> Self {
        DiffExpr::constant(c)
    }
}

impl From<i64> for DiffExpr {
    fn from(n: i64) -> Self {
        DiffExpr::int(n)
    }
}

pub(crate) fn big(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}
