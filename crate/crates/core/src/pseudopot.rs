//! Quadratic pseudo-potential of the equation, its conservation law and the
//! two series hierarchies derived from it.
//!
//! The pseudo-potential `g` is never integrated. Wherever a derivative of `g`
//! appears it is replaced by the right side of the Riccati system, and the
//! result is reduced modulo the equation (or modulo the first-order flow
//! `(u - u_x)_t = phi` where the identity needs it).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jetring::{
    flow_residual, flux_phi, pde_residual, Dir, DiffExpr, GRule, JetError, ParamScalar, RatExpr, Ruleset,
};
use crate::pssforms::{build_forms, Branch};
use crate::report::{CheckEntry, Report};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PseudoError {
    #[error("index k = {k} out of range for the {family} family (need k >= {min})")]
    KOutOfRange { family: &'static str, k: u32, min: u32 },
    #[error(transparent)]
    Jet(#[from] JetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RiccatiForm {
    /// Read off directly from `2 dg = w3 - w2 - 2 g w1 + g^2 (w3 + w2)`.
    Raw,
    /// After `g -> g + 1/eta`.
    Shifted,
}

/// `g_x = rhs_x`, `g_t = rhs_t`, both quadratic in `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSystem {
    pub branch: Branch,
    pub form: RiccatiForm,
    pub rhs_x: DiffExpr,
    pub rhs_t: DiffExpr,
}

impl RiccatiSystem {
    pub fn g_rule(&self) -> GRule {
        GRule {
            gx: Some(self.rhs_x.clone()),
            gt: Some(self.rhs_t.clone()),
        }
    }
}

/// `u - u_xx + 1`.
fn w_plus_one() -> DiffExpr {
    DiffExpr::u(0) - DiffExpr::u(2) + DiffExpr::one()
}

/// `u_x - u - 1`.
fn v_neg() -> DiffExpr {
    DiffExpr::u(1) - DiffExpr::u(0) - DiffExpr::one()
}

/// `u - u_x + 1`.
fn p_pos() -> DiffExpr {
    DiffExpr::u(0) - DiffExpr::u(1) + DiffExpr::one()
}

fn half() -> ParamScalar {
    ParamScalar::from_ratio(1, 2)
}

pub fn riccati_rhs(branch: Branch, form: RiccatiForm) -> RiccatiSystem {
    let spec = build_forms(branch);
    let g = DiffExpr::g();
    let g2 = g.pow(2);
    let side = |j: usize| {
        let (f1, f2, f3) = (spec.f(1, j), spec.f(2, j), spec.f(3, j));
        (f3 - f2 - (&g * f1).scale_int(2) + &g2 * &(f3 + f2)).scale(&half())
    };
    let (raw_x, raw_t) = (side(1), side(2));
    match form {
        RiccatiForm::Raw => RiccatiSystem {
            branch,
            form,
            rhs_x: raw_x,
            rhs_t: raw_t,
        },
        RiccatiForm::Shifted => {
            let shifted = DiffExpr::g() + DiffExpr::constant(ParamScalar::eta_inv(branch.sign()));
            let sub = |e: &DiffExpr| {
                e.substitute(|v| (v == crate::jetring::JetVar::G).then(|| shifted.clone()))
            };
            RiccatiSystem {
                branch,
                form,
                rhs_x: sub(&raw_x),
                rhs_t: sub(&raw_t),
            }
        }
    }
}

/// The closed form `g_x = g + g^2 eta (u - u_xx + 1)/2`,
/// `g_t = g^2 eta phi / 2`.
pub fn shifted_closed_form(branch: Branch) -> RiccatiSystem {
    let g = DiffExpr::g();
    let eta = DiffExpr::constant(ParamScalar::eta(branch.sign()));
    let q = (&g.pow(2) * &eta).scale(&half());
    RiccatiSystem {
        branch,
        form: RiccatiForm::Shifted,
        rhs_x: &g + &(&q * &w_plus_one()),
        rhs_t: &q * &flux_phi(),
    }
}

/// `D_t(g_x) - D_x(g_t)` on solutions; zero when the system is compatible.
pub fn check_integrability(branch: Branch) -> Result<DiffExpr, JetError> {
    let sys = shifted_closed_form(branch);
    let rule = sys.g_rule();
    let r = sys.rhs_x.total_derivative_with(Dir::T, Some(&rule))?
        - sys.rhs_t.total_derivative_with(Dir::X, Some(&rule))?;
    Ok(Ruleset::Pde.apply(&r))
}

/// `D_t[g (u - u_xx + 1)] - D_x[g phi]` before reduction.
pub fn conservation_residual_raw(branch: Branch) -> Result<DiffExpr, JetError> {
    let rule = shifted_closed_form(branch).g_rule();
    let g = DiffExpr::g();
    Ok((&g * &w_plus_one()).total_derivative_with(Dir::T, Some(&rule))?
        - (&g * &flux_phi()).total_derivative_with(Dir::X, Some(&rule))?)
}

pub fn check_conservation_identity(branch: Branch) -> Result<DiffExpr, JetError> {
    Ok(Ruleset::Pde.apply(&conservation_residual_raw(branch)?))
}

/// The one-form `-w1 + g (w3 + w2)` built from the raw system; its exterior
/// derivative, reduced on solutions.
pub fn check_closed_form(branch: Branch) -> Result<DiffExpr, JetError> {
    let spec = build_forms(branch);
    let rule = riccati_rhs(branch, RiccatiForm::Raw).g_rule();
    let g = DiffExpr::g();
    let a = &g * &(spec.f(2, 1) + spec.f(3, 1)) - spec.f(1, 1);
    let b = &g * &(spec.f(2, 2) + spec.f(3, 2)) - spec.f(1, 2);
    let d = b.total_derivative_with(Dir::X, Some(&rule))? - a.total_derivative_with(Dir::T, Some(&rule))?;
    Ok(Ruleset::Pde.apply(&d))
}

/// `D_x(L3) + L3 - R` with `L3 = u_t - u_xt - phi`, `R = u_t - u_xxt - phi - D_x phi`.
pub fn check_flow_implies_pde() -> Result<DiffExpr, JetError> {
    let l3 = flow_residual();
    Ok(l3.total_derivative(Dir::X)? + &l3 - pde_residual())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expansion {
    /// Powers `eta^{-k}`, `k >= 1`.
    Negative,
    /// Powers `eta^k`, `k >= 0`.
    Positive,
}

impl Expansion {
    fn min_k(self) -> u32 {
        match self {
            Expansion::Negative => 1,
            Expansion::Positive => 0,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Expansion::Negative => "negative",
            Expansion::Positive => "positive",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyTerm {
    pub expansion: Expansion,
    pub k: u32,
    pub term: RatExpr,
}

fn pow2(e: i32) -> ParamScalar {
    if e >= 0 {
        ParamScalar::from_int(1i64 << e)
    } else {
        ParamScalar::from_ratio(1, 1i64 << (-e))
    }
}

pub fn series_term(expansion: Expansion, k: u32) -> Result<HierarchyTerm, PseudoError> {
    if k < expansion.min_k() {
        return Err(PseudoError::KOutOfRange {
            family: expansion.label(),
            k,
            min: expansion.min_k(),
        });
    }
    let ki = k as i32;
    let term = match expansion {
        // 1 / (2^{k-2} E^{k-1} (u_x - u - 1)^k)
        Expansion::Negative => RatExpr::with_factors(
            DiffExpr::exp(1 - ki).scale(&pow2(2 - ki)),
            &[(v_neg(), k)],
        )?,
        // E^{k+1} (u - u_x + 1)^k / 2^k
        Expansion::Positive => (DiffExpr::exp(ki + 1) * p_pos().pow(k)).scale(&pow2(-ki)).into(),
    };
    Ok(HierarchyTerm { expansion, k, term })
}

/// `sum gamma_i gamma_{k+1-i}` (negative) or `sum Gamma_i Gamma_{k-1-i}` (positive).
fn convolution<F>(expansion: Expansion, k: u32, term: &F) -> Result<RatExpr, PseudoError>
where
    F: Fn(u32) -> Result<RatExpr, PseudoError>,
{
    let mut acc = RatExpr::zero();
    match expansion {
        Expansion::Negative => {
            for i in 1..=k {
                acc = &acc + &(&term(i)? * &term(k + 1 - i)?);
            }
        }
        Expansion::Positive => {
            for i in 0..k {
                acc = &acc + &(&term(i)? * &term(k - 1 - i)?);
            }
        }
    }
    Ok(acc)
}

/// Closed form of the convolution sum.
fn convolution_closed(expansion: Expansion, k: u32) -> Result<RatExpr, PseudoError> {
    let ki = k as i32;
    Ok(match expansion {
        // 8k / (2^k (u_x-u-1)^{k+1} E^{k-1})
        Expansion::Negative => RatExpr::with_factors(
            DiffExpr::exp(1 - ki).scale(&(ParamScalar::from_int(8 * k as i64) * pow2(-ki))),
            &[(v_neg(), k + 1)],
        )?,
        // k / 2^{k-1} E^{k+1} (u-u_x+1)^{k-1}
        Expansion::Positive => (DiffExpr::exp(ki + 1) * p_pos().pow(k - 1))
            .scale(&(ParamScalar::from_int(k as i64) * pow2(1 - ki)))
            .into(),
    })
}

/// Closed form of the time derivative written with `(u - u_x)_t` kept.
fn time_derivative_closed(expansion: Expansion, k: u32) -> Result<RatExpr, PseudoError> {
    let ki = k as i32;
    let u_minus_ux_t = DiffExpr::ut(0) - DiffExpr::ut(1);
    Ok(match expansion {
        // -4k (u_x - u)_t / (2^k (u_x-u-1)^{k+1} E^{k-1})
        Expansion::Negative => RatExpr::with_factors(
            (DiffExpr::exp(1 - ki) * u_minus_ux_t).scale(&(ParamScalar::from_int(4 * k as i64) * pow2(-ki))),
            &[(v_neg(), k + 1)],
        )?,
        // k/2^k E^{k+1} (u-u_x+1)^{k-1} (u-u_x)_t
        Expansion::Positive => (DiffExpr::exp(ki + 1) * p_pos().pow(k - 1) * u_minus_ux_t)
            .scale(&(ParamScalar::from_int(k as i64) * pow2(-ki)))
            .into(),
    })
}

/// Checks the x-recursions, convolution identities and time relations for
/// every `k <= kmax`, using the closed-form terms.
pub fn verify_hierarchy(expansion: Expansion, kmax: u32) -> Result<Report, PseudoError> {
    verify_hierarchy_with(expansion, kmax, |k| Ok(series_term(expansion, k)?.term))
}

/// As [`verify_hierarchy`] but with caller-supplied terms (used to confirm
/// that corrupted terms are caught).
pub fn verify_hierarchy_with<F>(expansion: Expansion, kmax: u32, term: F) -> Result<Report, PseudoError>
where
    F: Fn(u32) -> Result<RatExpr, PseudoError>,
{
    let tag = expansion.label();
    let anchor = format!("{tag}-hierarchy");
    let w1: RatExpr = w_plus_one().into();
    let phi: RatExpr = flux_phi().into();
    let half: RatExpr = DiffExpr::constant(half()).into();
    let mut rep = Report::new();
    for k in expansion.min_k()..=kmax {
        let t = term(k)?;
        let dx = t.total_derivative(Dir::X)?;
        let recursion = if expansion == Expansion::Positive && k == 0 {
            &dx - &t
        } else {
            let conv = convolution(expansion, k, &term)?;
            rep.push(CheckEntry::exact_rational(
                format!("{tag}_convolution_k{k}"),
                &anchor,
                &(&conv - &convolution_closed(expansion, k)?),
            ));
            let dt = t.total_derivative(Dir::T)?;
            rep.push(CheckEntry::exact_rational(
                format!("{tag}_time_closed_form_k{k}"),
                &anchor,
                &(&dt - &time_derivative_closed(expansion, k)?),
            ));
            rep.push(CheckEntry::exact_rational(
                format!("{tag}_time_relation_k{k}"),
                &anchor,
                &(&dt.reduce(Ruleset::Flow)? - &(&(&half * &conv) * &phi)),
            ));
            &(&dx - &t) - &(&(&half * &conv) * &w1)
        };
        rep.push(CheckEntry::exact_rational(
            format!("{tag}_x_recursion_k{k}"),
            &anchor,
            &recursion,
        ));
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Densities `(u - u_xx + 1) / (E^{k-1} (u_x - u - 1)^k)`, `k >= 2`.
    Neg,
    /// Densities `E^{k+1} (u - u_x + 1)^k (u - u_xx + 1)`, `k >= 1`.
    Pos,
}

impl Family {
    pub fn min_k(self) -> u32 {
        match self {
            Family::Neg => 2,
            Family::Pos => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Family::Neg => "neg",
            Family::Pos => "pos",
        }
    }

    pub fn check_k(self, k: u32) -> Result<(), PseudoError> {
        if k < self.min_k() {
            Err(PseudoError::KOutOfRange {
                family: self.label(),
                k,
                min: self.min_k(),
            })
        } else {
            Ok(())
        }
    }
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "neg" | "negative" => Ok(Family::Neg),
            "pos" | "positive" => Ok(Family::Pos),
            other => Err(format!("unknown family `{other}` (expected neg or pos)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConservationLaw {
    pub family: Family,
    pub k: u32,
    pub density: RatExpr,
    pub flux: RatExpr,
    pub potential: Option<RatExpr>,
}

pub fn conservation_law(family: Family, k: u32) -> Result<ConservationLaw, PseudoError> {
    family.check_k(k)?;
    let ki = k as i32;
    let (weight, potential) = match family {
        Family::Neg => (
            RatExpr::with_factors(DiffExpr::exp(1 - ki), &[(v_neg(), k)])?,
            RatExpr::with_factors(
                DiffExpr::exp(1 - ki).scale(&ParamScalar::from_ratio(1, (k - 1) as i64)),
                &[(v_neg(), k - 1)],
            )?,
        ),
        Family::Pos => (
            RatExpr::from(DiffExpr::exp(ki + 1) * p_pos().pow(k)),
            RatExpr::from(
                (DiffExpr::exp(ki + 1) * p_pos().pow(k + 1))
                    .scale(&ParamScalar::from_ratio(1, (k + 1) as i64)),
            ),
        ),
    };
    Ok(ConservationLaw {
        family,
        k,
        density: &weight * &RatExpr::from(w_plus_one()),
        flux: &weight * &RatExpr::from(flux_phi()),
        potential: Some(potential),
    })
}

/// Residuals of a conservation law and of its potential.
#[derive(Clone, Debug)]
pub struct ExactnessReport {
    pub family: Family,
    pub k: u32,
    /// `D_x(potential) - density`.
    pub density_residual: RatExpr,
    /// `reduce(D_t(potential), flow) - flux`.
    pub flux_residual: RatExpr,
    /// `reduce(D_t(density) - D_x(flux), flow)`.
    pub law_residual: RatExpr,
}

impl ExactnessReport {
    pub fn passes(&self) -> bool {
        self.density_residual.is_zero() && self.flux_residual.is_zero() && self.law_residual.is_zero()
    }

    pub fn entries(&self) -> Vec<CheckEntry> {
        let tag = format!("{}_k{}", self.family.label(), self.k);
        vec![
            CheckEntry::exact_rational(format!("potential_density_{tag}"), "trivial-conservation-laws", &self.density_residual),
            CheckEntry::exact_rational(format!("potential_flux_{tag}"), "trivial-conservation-laws", &self.flux_residual),
            CheckEntry::exact_rational(format!("conservation_law_{tag}"), "conservation-laws", &self.law_residual),
        ]
    }
}

pub fn check_exactness(family: Family, k: u32) -> Result<ExactnessReport, PseudoError> {
    let law = conservation_law(family, k)?;
    let pot = law.potential.as_ref().expect("both families carry a potential");
    let density_residual = &pot.total_derivative(Dir::X)? - &law.density;
    let flux_residual = &pot.total_derivative(Dir::T)?.reduce(Ruleset::Flow)? - &law.flux;
    let law_residual =
        (&law.density.total_derivative(Dir::T)? - &law.flux.total_derivative(Dir::X)?).reduce(Ruleset::Flow)?;
    Ok(ExactnessReport {
        family,
        k,
        density_residual,
        flux_residual,
        law_residual,
    })
}

/// Every exact check of this module.
pub fn verify(kmax: u32) -> Result<Report, PseudoError> {
    let mut rep = Report::new();
    for branch in [Branch::Plus, Branch::Minus] {
        let b = if branch == Branch::Plus { "+" } else { "-" };
        let shifted = riccati_rhs(branch, RiccatiForm::Shifted);
        let closed = shifted_closed_form(branch);
        rep.push(CheckEntry::exact(format!("riccati_shift_x[{b}]"), "pseudo-potential", &(&shifted.rhs_x - &closed.rhs_x)));
        rep.push(CheckEntry::exact(format!("riccati_shift_t[{b}]"), "pseudo-potential", &(&shifted.rhs_t - &closed.rhs_t)));
        rep.push(CheckEntry::exact(format!("riccati_integrability[{b}]"), "pseudo-potential", &check_integrability(branch)?));
        rep.push(CheckEntry::exact(format!("riccati_conservation_law[{b}]"), "pseudo-potential", &check_conservation_identity(branch)?));
        let equiv = conservation_residual_raw(branch)?
            - DiffExpr::g() * (DiffExpr::ut(0) - DiffExpr::ut(2) - flux_phi() - flux_phi().total_derivative(Dir::X)?);
        rep.push(CheckEntry::exact(format!("riccati_conservation_equivalent_form[{b}]"), "pseudo-potential", &equiv));
        rep.push(CheckEntry::exact(format!("riccati_closed_one_form[{b}]"), "pseudo-potential", &check_closed_form(branch)?));
    }
    rep.push(CheckEntry::exact("flow_implies_equation", "first-order-flow", &check_flow_implies_pde()?));
    rep.extend(verify_hierarchy(Expansion::Negative, kmax)?);
    rep.extend(verify_hierarchy(Expansion::Positive, kmax)?);
    for family in [Family::Neg, Family::Pos] {
        for k in family.min_k()..=kmax {
            for e in check_exactness(family, k)?.entries() {
                rep.push(e);
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetring::{JetVar, ParamValues};

    fn eval_at(e: &RatExpr, x: f64, jets: [f64; 3]) -> f64 {
        e.eval(
            x,
            |v| match v {
                JetVar::U { x, t: 0 } => jets[x as usize],
                _ => 0.0,
            },
            &ParamValues::default(),
        )
    }

    #[test]
    fn riccati_vanishes_at_g_zero() {
        for b in [Branch::Plus, Branch::Minus] {
            let sys = riccati_rhs(b, RiccatiForm::Shifted);
            let at0 = |e: &DiffExpr| e.substitute(|v| (v == JetVar::G).then(DiffExpr::zero));
            assert!(at0(&sys.rhs_x).is_zero());
            assert!(at0(&sys.rhs_t).is_zero());
        }
    }

    #[test]
    fn riccati_sample_point() {
        // (u, u_x, u_xx, g) = (1, 0, 0, 1) with eta = 1 (mu = 0, + branch)
        let sys = shifted_closed_form(Branch::Plus);
        let val = |e: &DiffExpr| {
            e.eval(
                0.0,
                |v| match v {
                    JetVar::U { x: 0, t: 0 } => 1.0,
                    JetVar::G => 1.0,
                    _ => 0.0,
                },
                &ParamValues::with_mu(0.0),
            )
        };
        assert_eq!(2.0 * val(&sys.rhs_x), 2.0 + 2.0);
        assert_eq!(val(&sys.rhs_t), 0.0);
    }

    #[test]
    fn shift_reproduces_closed_form() {
        for b in [Branch::Plus, Branch::Minus] {
            let s = riccati_rhs(b, RiccatiForm::Shifted);
            let p = shifted_closed_form(b);
            assert_eq!(s.rhs_x, p.rhs_x);
            assert_eq!(s.rhs_t, p.rhs_t);
        }
    }

    #[test]
    fn raw_x_equation_has_w_plus_one_in_quadratic_term() {
        let raw = riccati_rhs(Branch::Plus, RiccatiForm::Raw);
        let g2 = raw.rhs_x.partial(JetVar::G).partial(JetVar::G).scale(&half());
        let want = (DiffExpr::constant(ParamScalar::eta(1)) * w_plus_one()).scale(&half());
        assert_eq!(g2, want);
    }

    #[test]
    fn integrability_and_conservation() {
        for b in [Branch::Plus, Branch::Minus] {
            assert!(check_integrability(b).unwrap().is_zero());
            assert!(check_conservation_identity(b).unwrap().is_zero());
            assert!(check_closed_form(b).unwrap().is_zero());
            let raw = conservation_residual_raw(b).unwrap();
            assert!(!raw.is_zero());
        }
    }

    #[test]
    fn flow_bridge() {
        assert!(check_flow_implies_pde().unwrap().is_zero());
    }

    #[test]
    fn flow_bridge_numeric_spot() {
        // random rational jet point: D_x L3 + L3 and R agree
        let l3 = flow_residual();
        let lhs = l3.total_derivative(Dir::X).unwrap() + &l3;
        let rhs = pde_residual();
        let jets = [0.3, -1.7, 0.25, 2.0];
        let uts = [0.5, -0.125, 3.0];
        let val = |e: &DiffExpr| {
            e.eval(
                0.0,
                |v| match v {
                    JetVar::U { x, t: 0 } => jets[x as usize],
                    JetVar::U { x, t: 1 } => uts[x as usize],
                    _ => f64::NAN,
                },
                &ParamValues::default(),
            )
        };
        assert!((val(&lhs) - val(&rhs)).abs() < 1e-13);
        // u = 0 with u_t = u_xt = 0: both sides vanish
        let zero = |e: &DiffExpr| e.eval(0.0, |_| 0.0, &ParamValues::default());
        assert_eq!(zero(&l3), 0.0);
        assert_eq!(zero(&rhs), 0.0);
    }

    #[test]
    fn closed_form_series_terms() {
        let t = series_term(Expansion::Negative, 1).unwrap().term;
        let want = RatExpr::new(DiffExpr::int(2), v_neg()).unwrap();
        assert!(t.equals(&want));
        let t = series_term(Expansion::Positive, 0).unwrap().term;
        assert!(t.equals(&DiffExpr::exp(1).into()));
        let t = series_term(Expansion::Negative, 3).unwrap().term;
        let want = RatExpr::new(DiffExpr::one(), (DiffExpr::exp(2) * v_neg().pow(3)).scale_int(2)).unwrap();
        assert!(t.equals(&want));
        assert!(series_term(Expansion::Negative, 0).is_err());
        // gamma_1 at (u, u_x) = (1, 3) is 2
        assert_eq!(eval_at(&series_term(Expansion::Negative, 1).unwrap().term, 0.0, [1.0, 3.0, 0.0]), 2.0);
    }

    #[test]
    fn hierarchies_verify() {
        for e in [Expansion::Negative, Expansion::Positive] {
            let rep = verify_hierarchy(e, 5).unwrap();
            for c in &rep.entries {
                assert!(c.pass, "{}: {:?}", c.name, c.detail);
            }
        }
    }

    #[test]
    fn mutated_negative_term_is_caught() {
        // drop the E factor of gamma_2
        let rep = verify_hierarchy_with(Expansion::Negative, 2, |k| {
            if k == 2 {
                Ok(RatExpr::new(DiffExpr::one(), v_neg().pow(2)).unwrap())
            } else {
                Ok(series_term(Expansion::Negative, k)?.term)
            }
        })
        .unwrap();
        assert!(!rep.get("negative_x_recursion_k2").unwrap().pass);
        assert!(rep.get("negative_x_recursion_k1").unwrap().pass);
    }

    #[test]
    fn mutated_positive_term_is_caught() {
        // wrong power of two in Gamma_1
        let rep = verify_hierarchy_with(Expansion::Positive, 2, |k| {
            if k == 1 {
                Ok((DiffExpr::exp(2) * p_pos()).into())
            } else {
                Ok(series_term(Expansion::Positive, k)?.term)
            }
        })
        .unwrap();
        assert!(!rep.get("positive_x_recursion_k1").unwrap().pass);
    }

    #[test]
    fn exactness_low_orders() {
        let r = check_exactness(Family::Neg, 2).unwrap();
        assert!(r.passes());
        let law = conservation_law(Family::Neg, 2).unwrap();
        let want = RatExpr::new(DiffExpr::one(), DiffExpr::exp(1) * v_neg()).unwrap();
        assert!(law.potential.unwrap().equals(&want));
        let r = check_exactness(Family::Pos, 1).unwrap();
        assert!(r.passes());
        let law = conservation_law(Family::Pos, 1).unwrap();
        let dx = law.potential.unwrap().total_derivative(Dir::X).unwrap();
        let want: RatExpr = (DiffExpr::exp(2) * p_pos() * w_plus_one()).into();
        assert!(dx.equals(&want));
        assert!(check_exactness(Family::Neg, 1).is_err());
        assert!(check_exactness(Family::Pos, 0).is_err());
    }

    #[test]
    fn densities_on_zero_solution() {
        for k in 2..=5u32 {
            let law = conservation_law(Family::Neg, k).unwrap();
            let x = 0.4;
            let d = eval_at(&law.density, x, [0.0; 3]);
            let want = (-1f64).powi(k as i32) * (-((k - 1) as f64) * x).exp();
            assert!((d - want).abs() < 1e-14);
            assert_eq!(eval_at(&law.flux, x, [0.0; 3]), 0.0);
            let dt = law.potential.unwrap().total_derivative(Dir::T).unwrap();
            assert_eq!(eval_at(&dt, x, [0.0; 3]), 0.0);
        }
    }

    #[test]
    fn pde_alone_does_not_close_the_laws() {
        // The laws need the first-order flow; reducing only by the equation
        // leaves a multiple of (u_t - u_xt - phi).
        let law = conservation_law(Family::Neg, 2).unwrap();
        let r = (&law.density.total_derivative(Dir::T).unwrap() - &law.flux.total_derivative(Dir::X).unwrap())
            .reduce(Ruleset::Pde)
            .unwrap();
        assert!(!r.is_zero());
    }

    #[test]
    fn full_verification() {
        let rep = verify(5).unwrap();
        let bad: Vec<_> = rep.failures().map(|e| e.name.clone()).collect();
        assert!(bad.is_empty(), "{bad:?}");
    }
}
