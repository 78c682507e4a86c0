//! Compilation of jet expressions into flat numeric programs evaluated over
//! sampled jet fields.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jetring::{DiffExpr, JetVar, Param, ParamScalar, ParamValues, RatExpr};

pub const DEFAULT_DIV_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound symbol {0}")]
    UnboundSymbol(String),
    #[error("unsupported jet input {0}")]
    UnsupportedJet(String),
    #[error("guarded division: |denominator| = {value:e} < {eps:e} at sample {index} (x = {x})")]
    GuardedDivision { index: usize, x: f64, value: f64, eps: f64 },
    #[error("field length mismatch: {field} has {got} samples, expected {expected}")]
    LengthMismatch { field: &'static str, got: usize, expected: usize },
}

/// Numeric values for the parameter symbols. Unset symbols are unbound.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    pub mu: Option<f64>,
    pub beta: Option<f64>,
    pub c_strip: Option<f64>,
    #[serde(default)]
    pub free: BTreeMap<u16, f64>,
}

impl Bindings {
    pub fn with_mu(mu: f64) -> Self {
        Self {
            mu: Some(mu),
            ..Default::default()
        }
    }

    fn is_bound(&self, p: Param) -> bool {
        match p {
            Param::Mu | Param::S => self.mu.is_some(),
            Param::Beta => self.beta.is_some(),
            Param::CStrip => self.c_strip.is_some(),
            Param::Free(i) => self.free.contains_key(&i),
        }
    }

    fn values(&self) -> ParamValues {
        ParamValues {
            mu: self.mu.unwrap_or(f64::NAN),
            beta: self.beta.unwrap_or(f64::NAN),
            c_strip: self.c_strip.unwrap_or(f64::NAN),
            free: self.free.clone(),
        }
    }

    fn scalar(&self, c: &ParamScalar) -> Result<f64, EvalError> {
        if let Some(p) = c.symbols().find(|p| !self.is_bound(*p)) {
            return Err(EvalError::UnboundSymbol(p.to_string()));
        }
        Ok(c.eval(&self.values()))
    }
}

/// Jet values at one point, in the input order
/// `u, u_x, u_xx, u_xxx, u_t, u_xt, u_xxt`.
pub type JetPoint = [f64; 7];

/// Sampled jets on one time slice.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JetFields {
    pub u: Vec<f64>,
    pub u_x: Vec<f64>,
    pub u_xx: Vec<f64>,
    pub u_xxx: Vec<f64>,
    pub u_t: Vec<f64>,
    pub u_xt: Vec<f64>,
    pub u_xxt: Vec<f64>,
}

impl JetFields {
    pub fn zeros(n: usize) -> Self {
        let z = vec![0.0; n];
        Self {
            u: z.clone(),
            u_x: z.clone(),
            u_xx: z.clone(),
            u_xxx: z.clone(),
            u_t: z.clone(),
            u_xt: z.clone(),
            u_xxt: z,
        }
    }

    /// Fields of `u(x) = f(x)` with `u_t` and its derivatives taken from `ft`.
    pub fn from_fn<F, G>(xs: &[f64], f: F, ft: G) -> Self
    where
        F: Fn(f64) -> [f64; 4],
        G: Fn(f64) -> [f64; 3],
    {
        let mut out = Self::zeros(xs.len());
        for (i, &x) in xs.iter().enumerate() {
            let a = f(x);
            let b = ft(x);
            out.u[i] = a[0];
            out.u_x[i] = a[1];
            out.u_xx[i] = a[2];
            out.u_xxx[i] = a[3];
            out.u_t[i] = b[0];
            out.u_xt[i] = b[1];
            out.u_xxt[i] = b[2];
        }
        out
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn point(&self, i: usize) -> JetPoint {
        [
            self.u[i],
            self.u_x[i],
            self.u_xx[i],
            self.u_xxx[i],
            self.u_t[i],
            self.u_xt[i],
            self.u_xxt[i],
        ]
    }

    fn check(&self, n: usize) -> Result<(), EvalError> {
        let fields: [(&'static str, &Vec<f64>); 7] = [
            ("u", &self.u),
            ("u_x", &self.u_x),
            ("u_xx", &self.u_xx),
            ("u_xxx", &self.u_xxx),
            ("u_t", &self.u_t),
            ("u_xt", &self.u_xt),
            ("u_xxt", &self.u_xxt),
        ];
        for (field, v) in fields {
            if v.len() != n {
                return Err(EvalError::LengthMismatch {
                    field,
                    got: v.len(),
                    expected: n,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Jet(u8),
    /// `exp(n x)`.
    Exp(i32),
    Const(f64),
    Add(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    PowI(u32, i32),
}

/// A straight-line program; the value of the last register is the result.
#[derive(Clone, Debug, PartialEq)]
pub struct CompiledExpr {
    ops: Vec<Op>,
    div_eps: f64,
}

fn jet_slot(v: JetVar) -> Result<u8, EvalError> {
    match v {
        JetVar::U { x, t: 0 } if x <= 3 => Ok(x),
        JetVar::U { x, t: 1 } if x <= 2 => Ok(4 + x),
        JetVar::G => Err(EvalError::UnsupportedJet("g".into())),
        other => Err(EvalError::UnsupportedJet(other.to_string())),
    }
}

struct Builder<'a> {
    ops: Vec<Op>,
    powers: HashMap<(JetVar, i32), u32>,
    bindings: &'a Bindings,
}

impl Builder<'_> {
    fn emit(&mut self, op: Op) -> u32 {
        self.ops.push(op);
        (self.ops.len() - 1) as u32
    }

    fn power(&mut self, v: JetVar, e: i32) -> Result<u32, EvalError> {
        if let Some(&r) = self.powers.get(&(v, e)) {
            return Ok(r);
        }
        let r = if v == JetVar::E {
            self.emit(Op::Exp(e))
        } else {
            let base = match self.powers.get(&(v, 1)) {
                Some(&b) => b,
                None => {
                    let b = self.emit(Op::Jet(jet_slot(v)?));
                    self.powers.insert((v, 1), b);
                    b
                }
            };
            if e == 1 {
                base
            } else if e > 0 {
                self.emit(Op::PowI(base, e))
            } else {
                let pos = self.power(v, -e)?;
                let one = self.emit(Op::Const(1.0));
                self.emit(Op::Div(one, pos))
            }
        };
        self.powers.insert((v, e), r);
        Ok(r)
    }

    fn poly(&mut self, e: &DiffExpr) -> Result<u32, EvalError> {
        let mut acc: Option<u32> = None;
        for (m, c) in e.terms() {
            let c = self.bindings.scalar(c)?;
            let mut prod: Option<u32> = None;
            for &(v, k) in m.factors() {
                let r = self.power(v, k)?;
                prod = Some(match prod {
                    None => r,
                    Some(p) => self.emit(Op::Mul(p, r)),
                });
            }
            let term = match prod {
                None => self.emit(Op::Const(c)),
                Some(p) if c == 1.0 => p,
                Some(p) => {
                    let k = self.emit(Op::Const(c));
                    self.emit(Op::Mul(k, p))
                }
            };
            acc = Some(match acc {
                None => term,
                Some(a) => self.emit(Op::Add(a, term)),
            });
        }
        Ok(match acc {
            Some(a) => a,
            None => self.emit(Op::Const(0.0)),
        })
    }
}

pub fn compile(e: &DiffExpr, bindings: &Bindings) -> Result<CompiledExpr, EvalError> {
    let mut b = Builder {
        ops: Vec::new(),
        powers: HashMap::new(),
        bindings,
    };
    b.poly(e)?;
    Ok(CompiledExpr {
        ops: b.ops,
        div_eps: DEFAULT_DIV_EPS,
    })
}

pub fn compile_rational(e: &RatExpr, bindings: &Bindings) -> Result<CompiledExpr, EvalError> {
    let mut b = Builder {
        ops: Vec::new(),
        powers: HashMap::new(),
        bindings,
    };
    let num = b.poly(e.numerator())?;
    let mut den: Option<u32> = None;
    for (f, k) in e.denominator_factors() {
        let r = b.poly(f)?;
        let r = if *k == 1 { r } else { b.emit(Op::PowI(r, *k as i32)) };
        den = Some(match den {
            None => r,
            Some(d) => b.emit(Op::Mul(d, r)),
        });
    }
    if let Some(d) = den {
        b.emit(Op::Div(num, d));
    }
    Ok(CompiledExpr {
        ops: b.ops,
        div_eps: DEFAULT_DIV_EPS,
    })
}

impl CompiledExpr {
    pub fn with_div_eps(mut self, eps: f64) -> Self {
        self.div_eps = eps;
        self
    }

    pub fn div_eps(&self) -> f64 {
        self.div_eps
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn run(&self, x: f64, jets: &JetPoint, regs: &mut Vec<f64>) -> Result<f64, f64> {
        regs.clear();
        for op in &self.ops {
            let v = match *op {
                Op::Jet(i) => jets[i as usize],
                Op::Exp(n) => (n as f64 * x).exp(),
                Op::Const(c) => c,
                Op::Add(a, b) => regs[a as usize] + regs[b as usize],
                Op::Mul(a, b) => regs[a as usize] * regs[b as usize],
                Op::Div(a, b) => {
                    let d = regs[b as usize];
                    if !(d.abs() >= self.div_eps) {
                        return Err(d);
                    }
                    regs[a as usize] / d
                }
                Op::PowI(a, n) => regs[a as usize].powi(n),
            };
            regs.push(v);
        }
        Ok(*regs.last().unwrap_or(&0.0))
    }

    pub fn eval_point(&self, x: f64, jets: &JetPoint) -> Result<f64, EvalError> {
        let mut regs = Vec::with_capacity(self.ops.len());
        self.run(x, jets, &mut regs).map_err(|value| EvalError::GuardedDivision {
            index: 0,
            x,
            value,
            eps: self.div_eps,
        })
    }
}

/// Pointwise evaluation over a grid. On a guarded-division trip the error
/// carries the first offending sample.
pub fn eval_field(c: &CompiledExpr, jets: &JetFields, xs: &[f64]) -> Result<Vec<f64>, EvalError> {
    jets.check(xs.len())?;
    const CHUNK: usize = 256;
    let mut out = vec![0.0; xs.len()];
    let trips: Vec<(usize, f64)> = out
        .par_chunks_mut(CHUNK)
        .enumerate()
        .filter_map(|(ci, chunk)| {
            let mut regs = Vec::with_capacity(c.ops.len());
            for (j, slot) in chunk.iter_mut().enumerate() {
                let i = ci * CHUNK + j;
                match c.run(xs[i], &jets.point(i), &mut regs) {
                    Ok(v) => *slot = v,
                    Err(d) => return Some((i, d)),
                }
            }
            None
        })
        .collect();
    if let Some(&(index, value)) = trips.iter().min_by_key(|(i, _)| *i) {
        return Err(EvalError::GuardedDivision {
            index,
            x: xs[index],
            value,
            eps: c.div_eps,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetring::{pde_residual, ExactParams, Ruleset};
    use crate::pseudopot::{conservation_law, series_term, Expansion, Family};
    use crate::pssforms::{build_forms, Branch};
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::ToPrimitive;
    use proptest::prelude::*;

    fn pt(u: [f64; 4]) -> JetPoint {
        [u[0], u[1], u[2], u[3], 0.0, 0.0, 0.0]
    }

    #[test]
    fn gamma1_value() {
        let g1 = series_term(Expansion::Negative, 1).unwrap().term;
        let c = compile_rational(&g1, &Bindings::default()).unwrap();
        assert_eq!(c.eval_point(0.0, &pt([1.0, 3.0, 0.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn exponential() {
        let c = compile(&DiffExpr::exp(1), &Bindings::default()).unwrap();
        assert_eq!(c.eval_point(0.0, &pt([0.0; 4])).unwrap(), 1.0);
        let c = compile(&DiffExpr::exp(-2), &Bindings::default()).unwrap();
        assert!((c.eval_point(0.5, &pt([0.0; 4])).unwrap() - (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn residual_vanishes_on_exponential_solutions() {
        // u = f(t) e^x with f = 1 + t^2, sampled at t = 0.7
        let (f, fp) = (1.49, 1.4);
        let xs: Vec<f64> = (0..50).map(|i| -2.0 + 0.1 * i as f64).collect();
        let jets = JetFields::from_fn(
            &xs,
            |x| [f * x.exp(); 4],
            |x| [fp * x.exp(); 3],
        );
        let c = compile(&pde_residual(), &Bindings::default()).unwrap();
        for (i, r) in eval_field(&c, &jets, &xs).unwrap().iter().enumerate() {
            let scale = (f * xs[i].exp()).powi(3);
            assert!(r.abs() <= 1e-13 * (1.0 + scale), "{i}: {r}");
        }
    }

    #[test]
    fn constant_field() {
        let xs = vec![0.0, 1.0, 2.0];
        let c = compile(&DiffExpr::one(), &Bindings::default()).unwrap();
        assert_eq!(eval_field(&c, &JetFields::zeros(3), &xs).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn delta23_on_constant_u() {
        let spec = build_forms(Branch::Plus);
        let c = compile(&spec.delta(2, 3), &Bindings::with_mu(0.7)).unwrap();
        let xs = vec![0.0, 0.5, 1.0];
        let mut jets = JetFields::zeros(3);
        jets.u = vec![1.0; 3];
        assert!(eval_field(&c, &jets, &xs).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn density_at_origin() {
        let law = conservation_law(Family::Neg, 2).unwrap();
        let c = compile_rational(&law.density, &Bindings::default()).unwrap();
        assert_eq!(eval_field(&c, &JetFields::zeros(1), &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn errors() {
        let e = DiffExpr::mu();
        assert!(matches!(compile(&e, &Bindings::default()), Err(EvalError::UnboundSymbol(_))));
        let e = DiffExpr::var(JetVar::U { x: 4, t: 0 });
        assert!(matches!(compile(&e, &Bindings::default()), Err(EvalError::UnsupportedJet(_))));
        assert!(matches!(compile(&DiffExpr::g(), &Bindings::default()), Err(EvalError::UnsupportedJet(_))));
        // guarded division at u_x - u - 1 = 0, i.e. sample 2
        let g1 = series_term(Expansion::Negative, 1).unwrap().term;
        let c = compile_rational(&g1, &Bindings::default()).unwrap();
        let mut jets = JetFields::zeros(4);
        jets.u_x = vec![3.0, 0.0, 1.0, 1.0];
        match eval_field(&c, &jets, &[0.0, 1.0, 2.0, 3.0]) {
            Err(EvalError::GuardedDivision { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        let short = JetFields::zeros(2);
        assert!(matches!(eval_field(&c, &short, &[0.0]), Err(EvalError::LengthMismatch { .. })));
    }

    fn suite() -> Vec<RatExpr> {
        let mut v: Vec<RatExpr> = vec![
            pde_residual().into(),
            Ruleset::Pde.apply(&pde_residual().total_derivative(crate::jetring::Dir::X).unwrap()).into(),
        ];
        for b in [Branch::Plus, Branch::Minus] {
            let spec = build_forms(b);
            v.push(spec.delta(1, 2).into());
            v.push(spec.delta(1, 3).into());
            v.push(spec.f(2, 1).clone().into());
            v.push(spec.f(3, 2).clone().into());
        }
        for k in 1..=4 {
            v.push(series_term(Expansion::Negative, k).unwrap().term);
            v.push(series_term(Expansion::Positive, k).unwrap().term);
        }
        for k in 2..=4 {
            let law = conservation_law(Family::Neg, k).unwrap();
            v.push(law.density);
            v.push(law.flux);
        }
        v
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn compiled_matches_exact(
            idx in 0usize..32,
            nums in proptest::array::uniform7(-20i64..=20),
            den in 1i64..=8,
            eq in 1i64..=12,
        ) {
            let exprs = suite();
            let e = &exprs[idx % exprs.len()];
            let exact_params = ExactParams::new(rat(3, 4), rat(5, 4)).unwrap();
            let jets: Vec<BigRational> = nums.iter().map(|&n| rat(n, den)).collect();
            let e_val = rat(eq, 4);
            let value = |v: JetVar| match v {
                JetVar::E => e_val.clone(),
                JetVar::U { x, t: 0 } => jets[x as usize].clone(),
                JetVar::U { x, t: 1 } => jets[4 + x as usize].clone(),
                _ => unreachable!(),
            };
            let exact = match e.eval_exact(value, &exact_params) {
                Ok(r) => r.to_f64().unwrap(),
                Err(_) => return Ok(()),
            };
            let c = compile_rational(e, &Bindings::with_mu(0.75)).unwrap().with_div_eps(0.0);
            let mut p = [0.0; 7];
            for (i, j) in jets.iter().enumerate() {
                p[i] = j.to_f64().unwrap();
            }
            let x = (eq as f64 / 4.0).ln();
            let got = c.eval_point(x, &p).unwrap();
            prop_assert!((got - exact).abs() <= 1e-12 * (1.0 + exact.abs()), "{} vs {}", got, exact);
        }

        #[test]
        fn deterministic(u in proptest::array::uniform4(-2.0f64..2.0), x in -1.0f64..1.0) {
            let c = compile(&pde_residual(), &Bindings::default()).unwrap();
            let p = pt(u);
            prop_assert_eq!(c.eval_point(x, &p).unwrap().to_bits(), c.eval_point(x, &p).unwrap().to_bits());
        }
    }
}
