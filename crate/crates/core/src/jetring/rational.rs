//! Rational jet expressions with a factored denominator.
//!
//! The denominator is kept as a list of distinct normalized factors with
//! multiplicities. Powers of `E` are always moved into the numerator since
//! `E` is a unit. There is no gcd; equality is decided by cross-multiplication.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::BigRational;
use num_traits::{One, Zero};

use super::expr::{Dir, DiffExpr, GRule, JetVar};
use super::param::{forward_owned, ExactParams, ParamScalar, ParamValues};
use super::reduce::Ruleset;
use super::JetError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatExpr {
    num: DiffExpr,
    den: Vec<(DiffExpr, u32)>,
}

impl RatExpr {
    pub fn zero() -> Self {
        DiffExpr::zero().into()
    }

    pub fn one() -> Self {
        DiffExpr::one().into()
    }

    pub fn new(num: DiffExpr, den: DiffExpr) -> Result<Self, JetError> {
        let mut r = RatExpr {
            num,
            den: Vec::new(),
        };
        r.push_factor(den, 1)?;
        Ok(r)
    }

    /// `num / prod(factor^power)`.
    pub fn with_factors(num: DiffExpr, factors: &[(DiffExpr, u32)]) -> Result<Self, JetError> {
        let mut r = RatExpr {
            num,
            den: Vec::new(),
        };
        for (f, p) in factors {
            r.push_factor(f.clone(), *p)?;
        }
        Ok(r)
    }

    pub fn numerator(&self) -> &DiffExpr {
        &self.num
    }

    pub fn denominator_factors(&self) -> &[(DiffExpr, u32)] {
        &self.den
    }

    pub fn denominator(&self) -> DiffExpr {
        self.den
            .iter()
            .fold(DiffExpr::one(), |acc, (f, p)| acc * f.pow(*p))
    }

    pub fn is_polynomial(&self) -> bool {
        self.den.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// Multiply the denominator by `f^p`, normalizing `f`.
    fn push_factor(&mut self, f: DiffExpr, p: u32) -> Result<(), JetError> {
        if p == 0 {
            return Ok(());
        }
        if f.is_zero() {
            return Err(JetError::ZeroDenominator);
        }
        // Pull out E^m so the factor has minimal E-exponent zero.
        let m = f.min_e_exponent();
        let mut f = f.shift_e(-m);
        self.num = self.num.shift_e(-m * p as i32);
        // Pure constants (and E-monomials) with a rational coefficient go
        // to the numerator.
        if let Some(c) = f.as_constant() {
            if let Some(r) = c.as_rational() {
                self.num = self.num.scale_rational(&num_traits::pow(r.recip(), p as usize));
                return Ok(());
            }
        }
        let lr = f.leading_rational().expect("nonzero factor");
        if !lr.is_one() {
            f = f.scale_rational(&lr.recip());
            self.num = self.num.scale_rational(&num_traits::pow(lr.recip(), p as usize));
        }
        if let Some(slot) = self.den.iter_mut().find(|(g, _)| *g == f) {
            slot.1 += p;
        } else {
            self.den.push((f, p));
            self.den.sort_by(|a, b| a.0.cmp_key(&b.0));
        }
        Ok(())
    }

    fn renormalized(num: DiffExpr, den: Vec<(DiffExpr, u32)>) -> Result<Self, JetError> {
        RatExpr::with_factors(num, &den)
    }

    /// Bring two values over the common denominator `lcm`; returns the two
    /// rescaled numerators and the common factor list.
    fn common(a: &RatExpr, b: &RatExpr) -> (DiffExpr, DiffExpr, Vec<(DiffExpr, u32)>) {
        let mut lcm: Vec<(DiffExpr, u32)> = a.den.clone();
        for (f, p) in &b.den {
            match lcm.iter_mut().find(|(g, _)| g == f) {
                Some(slot) => slot.1 = slot.1.max(*p),
                None => lcm.push((f.clone(), *p)),
            }
        }
        let lift = |r: &RatExpr| {
            let mut n = r.num.clone();
            for (f, p) in &lcm {
                let have = r.den.iter().find(|(g, _)| g == f).map_or(0, |(_, q)| *q);
                if *p > have {
                    n = n * f.pow(p - have);
                }
            }
            n
        };
        let (na, nb) = (lift(a), lift(b));
        lcm.sort_by(|x, y| x.0.cmp_key(&y.0));
        (na, nb, lcm)
    }

    pub fn pow(&self, n: i32) -> Result<RatExpr, JetError> {
        if n >= 0 {
            let n = n as u32;
            Ok(RatExpr {
                num: self.num.pow(n),
                den: self.den.iter().map(|(f, p)| (f.clone(), p * n)).collect(),
            })
        } else {
            RatExpr::one().checked_div(&self.pow(-n)?)
        }
    }

    pub fn checked_div(&self, rhs: &RatExpr) -> Result<RatExpr, JetError> {
        if rhs.num.is_zero() {
            return Err(JetError::ZeroDenominator);
        }
        let mut num = self.num.clone();
        for (f, p) in &rhs.den {
            num = num * f.pow(*p);
        }
        let mut out = RatExpr {
            num,
            den: self.den.clone(),
        };
        out.push_factor(rhs.num.clone(), 1)?;
        Ok(out)
    }

    pub fn total_derivative(&self, dir: Dir) -> Result<RatExpr, JetError> {
        self.total_derivative_with(dir, None)
    }

    /// Quotient rule on the factored form: every factor exponent rises by one.
    pub fn total_derivative_with(&self, dir: Dir, g: Option<&GRule>) -> Result<RatExpr, JetError> {
        let dn = self.num.total_derivative_with(dir, g)?;
        let prod_all = self.den.iter().fold(DiffExpr::one(), |acc, (f, _)| acc * f);
        let mut num = dn * &prod_all;
        for (i, (f, p)) in self.den.iter().enumerate() {
            let df = f.total_derivative_with(dir, g)?;
            if df.is_zero() {
                continue;
            }
            let others = self
                .den
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .fold(DiffExpr::one(), |acc, (_, (h, _))| acc * h);
            num = num - (&self.num * &df).scale(&ParamScalar::from_int(*p as i64)) * others;
        }
        let den = self.den.iter().map(|(f, p)| (f.clone(), p + 1)).collect();
        RatExpr::renormalized(num, den)
    }

    pub fn reduce(&self, rules: Ruleset) -> Result<RatExpr, JetError> {
        let num = rules.apply(&self.num);
        let den = self
            .den
            .iter()
            .map(|(f, p)| (rules.apply(f), *p))
            .collect();
        RatExpr::renormalized(num, den)
    }

    pub fn substitute<F>(&self, f: F) -> Result<RatExpr, JetError>
    where
        F: Fn(JetVar) -> Option<DiffExpr>,
    {
        let num = self.num.substitute(&f);
        let den = self
            .den
            .iter()
            .map(|(d, p)| (d.substitute(&f), *p))
            .collect();
        RatExpr::renormalized(num, den)
    }

    /// Exact equality by cross-multiplication.
    pub fn equals(&self, other: &RatExpr) -> bool {
        (self - other).is_zero()
    }

    pub fn eval<F>(&self, x: f64, value: F, params: &ParamValues) -> f64
    where
        F: Fn(JetVar) -> f64,
    {
        let n = self.num.eval(x, &value, params);
        let d: f64 = self
            .den
            .iter()
            .map(|(f, p)| f.eval(x, &value, params).powi(*p as i32))
            .product();
        n / d
    }

    pub fn eval_exact<F>(&self, value: F, params: &ExactParams) -> Result<BigRational, JetError>
    where
        F: Fn(JetVar) -> BigRational,
    {
        let n = self.num.eval_exact(&value, params)?;
        let mut d = BigRational::one();
        for (f, p) in &self.den {
            d *= num_traits::pow(f.eval_exact(&value, params)?, *p as usize);
        }
        if d.is_zero() {
            return Err(JetError::ZeroDenominator);
        }
        Ok(n / d)
    }
}

impl DiffExpr {
    /// Deterministic ordering key for denominator factors.
    fn cmp_key(&self, other: &DiffExpr) -> std::cmp::Ordering {
        let a: Vec<_> = self.terms().map(|(m, _)| m.clone()).collect();
        let b: Vec<_> = other.terms().map(|(m, _)| m.clone()).collect();
        a.cmp(&b).then_with(|| self.to_string().cmp(&other.to_string()))
    }
}

impl From<DiffExpr> for RatExpr {
    fn from(num: DiffExpr) -> Self {
        RatExpr {
            num,
            den: Vec::new(),
        }
    }
}

impl fmt::Display for RatExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_empty() {
            return write!(f, "{}", self.num);
        }
        write!(f, "({}) / (", self.num)?;
        for (i, (d, p)) in self.den.iter().enumerate() {
            if i > 0 {
                write!(f, " * ")?;
            }
            if *p == 1 {
                write!(f, "({d})")?;
            } else {
                write!(f, "({d})^{p}")?;
            }
        }
        write!(f, ")")
    }
}

impl<'a> Add<&'a RatExpr> for &'a RatExpr {
    type Output = RatExpr;
    fn add(self, rhs: &RatExpr) -> RatExpr {
        let (a, b, den) = RatExpr::common(self, rhs);
        RatExpr { num: a + b, den }
    }
}

impl<'a> Sub<&'a RatExpr> for &'a RatExpr {
    type Output = RatExpr;
    fn sub(self, rhs: &RatExpr) -> RatExpr {
        let (a, b, den) = RatExpr::common(self, rhs);
        RatExpr { num: a - b, den }
    }
}

impl<'a> Mul<&'a RatExpr> for &'a RatExpr {
    type Output = RatExpr;
    fn mul(self, rhs: &RatExpr) -> RatExpr {
        let mut den = self.den.clone();
        for (f, p) in &rhs.den {
            match den.iter_mut().find(|(g, _)| g == f) {
                Some(slot) => slot.1 += p,
                None => den.push((f.clone(), *p)),
            }
        }
        den.sort_by(|x, y| x.0.cmp_key(&y.0));
        RatExpr {
            num: &self.num * &rhs.num,
            den,
        }
    }
}

/// Panics on division by the zero expression; see [`RatExpr::checked_div`].
impl<'a> Div<&'a RatExpr> for &'a RatExpr {
    type Output = RatExpr;
    fn div(self, rhs: &RatExpr) -> RatExpr {
        self.checked_div(rhs).expect("division by zero expression")
    }
}

impl Neg for &RatExpr {
    type Output = RatExpr;
    fn neg(self) -> RatExpr {
        RatExpr {
            num: -&self.num,
            den: self.den.clone(),
        }
    }
}

impl Neg for RatExpr {
    type Output = RatExpr;
    fn neg(self) -> RatExpr {
        -&self
    }
}

forward_owned!(Add, add, RatExpr);
forward_owned!(Sub, sub, RatExpr);
forward_owned!(Mul, mul, RatExpr);
forward_owned!(Div, div, RatExpr);
