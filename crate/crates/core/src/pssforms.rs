//! The one-forms `omega_1, omega_2, omega_3` attached to the equation, their
//! structure equations, and the determinants `Delta_ij` used for genericity.

use serde::{Deserialize, Serialize};

use crate::jetring::{flux_phi, pde_residual, Dir, DiffExpr, JetError, JetVar, Param, ParamScalar, RatExpr, Ruleset};
use crate::report::{CheckEntry, Report};

/// Choice of sign in front of `sqrt(1 + mu^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> i8 {
        match self {
            Branch::Plus => 1,
            Branch::Minus => -1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.sign() as f64
    }

    pub fn flipped(self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }

    /// `eps * s` as an expression.
    pub fn signed_s(self) -> DiffExpr {
        DiffExpr::s().scale_int(self.sign() as i64)
    }
}

impl std::str::FromStr for Branch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+" | "plus" | "+1" | "1" => Ok(Branch::Plus),
            "-" | "minus" | "-1" => Ok(Branch::Minus),
            other => Err(format!("unknown branch sign `{other}` (expected + or -)")),
        }
    }
}

/// `dx`-coefficient and `dt`-coefficient of a one-form.
#[derive(Clone, Debug, PartialEq)]
pub struct OneForm {
    pub dx: DiffExpr,
    pub dt: DiffExpr,
}

impl OneForm {
    /// `d(omega)` as the coefficient of `dx ^ dt`.
    pub fn exterior_derivative(&self) -> Result<DiffExpr, JetError> {
        Ok(self.dt.total_derivative(Dir::X)? - self.dx.total_derivative(Dir::T)?)
    }

    /// Coefficient of `dx ^ dt` in `self ^ other`.
    pub fn wedge(&self, other: &OneForm) -> DiffExpr {
        &self.dx * &other.dt - &self.dt * &other.dx
    }
}

/// The three one-forms for one branch, with the pairwise determinants.
#[derive(Clone, Debug, PartialEq)]
pub struct PsSpec {
    pub branch: Branch,
    pub omega: [OneForm; 3],
    pub delta12: DiffExpr,
    pub delta13: DiffExpr,
    pub delta23: DiffExpr,
}

impl PsSpec {
    /// Coefficient `f_ij`, `i` in 1..=3, `j` in 1..=2.
    pub fn f(&self, i: usize, j: usize) -> &DiffExpr {
        let w = &self.omega[i - 1];
        match j {
            1 => &w.dx,
            2 => &w.dt,
            _ => panic!("f_ij has j in 1..=2"),
        }
    }

    /// `Delta_ij = f_i1 f_j2 - f_j1 f_i2`.
    pub fn delta(&self, i: usize, j: usize) -> DiffExpr {
        self.f(i, 1) * self.f(j, 2) - self.f(j, 1) * self.f(i, 2)
    }
}

/// `f_11 = u - u_xx`.
pub fn f11() -> DiffExpr {
    DiffExpr::u(0) - DiffExpr::u(2)
}

pub fn build_forms(branch: Branch) -> PsSpec {
    let es = branch.signed_s();
    let mu = DiffExpr::mu();
    let a = f11();
    let phi = flux_phi();
    let omega = [
        OneForm {
            dx: a.clone(),
            dt: phi.clone(),
        },
        OneForm {
            dx: &mu * &a + &es,
            dt: &mu * &phi,
        },
        OneForm {
            dx: &es * &a + &mu,
            dt: &es * &phi,
        },
    ];
    let mut spec = PsSpec {
        branch,
        omega,
        delta12: DiffExpr::zero(),
        delta13: DiffExpr::zero(),
        delta23: DiffExpr::zero(),
    };
    spec.delta12 = spec.delta(1, 2);
    spec.delta13 = spec.delta(1, 3);
    spec.delta23 = spec.delta(2, 3);
    spec
}

/// Raw residuals of `d w1 = w3^w2`, `d w2 = w1^w3`, `d w3 = w1^w2`
/// (coefficients of `dx ^ dt`).
pub fn structure_residuals(spec: &PsSpec) -> Result<[DiffExpr; 3], JetError> {
    let [w1, w2, w3] = &spec.omega;
    Ok([
        w1.exterior_derivative()? - w3.wedge(w2),
        w2.exterior_derivative()? - w1.wedge(w3),
        w3.exterior_derivative()? - w1.wedge(w2),
    ])
}

pub fn genericity_exprs(spec: &PsSpec) -> (DiffExpr, DiffExpr, DiffExpr) {
    (spec.delta12.clone(), spec.delta13.clone(), spec.delta23.clone())
}

/// Data of the general family `u_t - u_xxt = lambda u^2 u_xxx + G`
/// specialised to this equation.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyData {
    pub lambda: ParamScalar,
    /// `f` as a function of the jets (`f(w)` with `w = u - u_xx`).
    pub f: DiffExpr,
    /// `f'(w)` expressed in jets.
    pub f_prime: DiffExpr,
    pub phi12: DiffExpr,
    pub c: ParamScalar,
    pub eta2: ParamScalar,
    pub mu2: ParamScalar,
}

pub fn family_data(branch: Branch) -> FamilyData {
    let (u, ux) = (DiffExpr::u(0), DiffExpr::u(1));
    let u2 = &u * &u;
    FamilyData {
        lambda: ParamScalar::one(),
        f: f11(),
        f_prime: DiffExpr::one(),
        phi12: (&u2 * &ux).scale_int(-2) + &u * &ux.pow(2) + &u2 * &u,
        c: ParamScalar::zero(),
        eta2: ParamScalar::s().scale_int(branch.sign() as i64),
        mu2: ParamScalar::mu(),
    }
}

/// `G = -u^2 u_xx - 3 u u_x^2 - 2 u^2 u_x + 4 u u_x u_xx + u_x^3`.
pub fn g_target() -> DiffExpr {
    let (u, ux, uxx) = (DiffExpr::u(0), DiffExpr::u(1), DiffExpr::u(2));
    let u2 = &u * &u;
    -(&u2 * &uxx) - (&u * &ux.pow(2)).scale_int(3) - (&u2 * &ux).scale_int(2)
        + (&u * &ux * &uxx).scale_int(4)
        + ux.pow(3)
}

/// Evaluates the family's `G` formula with the given data. The formula's
/// `±` is the branch sign; `1/sqrt(1 + mu^2)` is `1/s` held as a rational.
pub fn family_g(data: &FamilyData, branch: Branch) -> Result<RatExpr, JetError> {
    let sig = branch.sign() as i64;
    let (u, ux, uxx) = (DiffExpr::u(0), DiffExpr::u(1), DiffExpr::u(2));
    let lam = DiffExpr::constant(data.lambda.clone());
    let s: RatExpr = DiffExpr::s().into();
    let over_s = |e: DiffExpr| -> RatExpr { &RatExpr::from(e) / &s };
    let eta2 = DiffExpr::constant(data.eta2.clone());
    let c = DiffExpr::constant(data.c.clone());

    let poly = &ux * &data.phi12.partial(JetVar::u(0)) + &uxx * &data.phi12.partial(JetVar::u(1))
        - &lam * &u * &u * &ux * &data.f_prime;
    let mut bracket = RatExpr::from(poly);
    bracket = &bracket + &over_s((&eta2 * &data.phi12).scale_int(sig));
    let coeff_f = RatExpr::from((&lam * &u * &ux).scale_int(2))
        + over_s((&lam * &eta2 * &u * &u).scale_int(sig))
        + over_s(c.scale_int(sig));
    bracket = &bracket - &(&coeff_f * &RatExpr::from(data.f.clone()));
    bracket.checked_div(&RatExpr::from(data.f_prime.clone()))
}

/// The one-forms generated by the family's data, for comparison with
/// [`build_forms`].
pub fn family_forms(data: &FamilyData, branch: Branch) -> [(RatExpr, RatExpr); 3] {
    let sig = branch.sign() as i64;
    let u2 = DiffExpr::u(0).pow(2);
    let lam = DiffExpr::constant(data.lambda.clone());
    let mu2 = DiffExpr::constant(data.mu2.clone());
    let eta2 = DiffExpr::constant(data.eta2.clone());
    let c = DiffExpr::constant(data.c.clone());
    let f = &data.f;
    let phi = &data.phi12;
    let s: RatExpr = DiffExpr::s().into();
    let r = |e: DiffExpr| RatExpr::from(e);
    let w1 = (r(f.clone()), r(-(&lam * &u2 * f) + phi));
    let w2 = (
        r(&mu2 * f + &eta2),
        r(-(&lam * &mu2 * &u2 * f) + &mu2 * phi + &c),
    );
    let w3 = (
        r((DiffExpr::s() * f).scale_int(sig)) + &r((&mu2 * &eta2).scale_int(sig)) / &s,
        r((DiffExpr::s() * (-(&lam * &u2 * f) + phi)).scale_int(sig))
            + &r((&mu2 * &c).scale_int(sig)) / &s,
    );
    [w1, w2, w3]
}

#[derive(Clone, Debug)]
pub struct FamilyReport {
    pub difference: RatExpr,
    /// `(lambda eta_2)^2 + C^2`, required nonzero.
    pub constraint: ParamScalar,
    /// Differences between the family's forms and [`build_forms`].
    pub form_differences: Vec<RatExpr>,
}

impl FamilyReport {
    pub fn passes(&self) -> bool {
        self.difference.is_zero()
            && !self.constraint.is_zero()
            && self.form_differences.iter().all(RatExpr::is_zero)
    }
}

pub fn family_instantiation_check(branch: Branch) -> Result<FamilyReport, JetError> {
    let data = family_data(branch);
    let g = family_g(&data, branch)?;
    let difference = &g - &RatExpr::from(g_target());
    let le = &data.lambda * &data.eta2;
    let constraint = &le * &le + &data.c * &data.c;
    let spec = build_forms(branch);
    let mut form_differences = Vec::new();
    for (i, (dx, dt)) in family_forms(&data, branch).iter().enumerate() {
        form_differences.push(dx - &RatExpr::from(spec.f(i + 1, 1).clone()));
        form_differences.push(dt - &RatExpr::from(spec.f(i + 1, 2).clone()));
    }
    Ok(FamilyReport {
        difference,
        constraint,
        form_differences,
    })
}

/// Substitute `u(i,0) -> c0 E`, `u(i,1) -> c1 E`: the exact family `u = f(t) e^x`.
pub fn on_exponential_family(e: &DiffExpr) -> DiffExpr {
    let c0 = DiffExpr::constant(ParamScalar::symbol(Param::Free(0)));
    let c1 = DiffExpr::constant(ParamScalar::symbol(Param::Free(1)));
    e.substitute(|v| match v {
        JetVar::U { t: 0, .. } => Some(&c0 * &DiffExpr::exp(1)),
        JetVar::U { t: 1, .. } => Some(&c1 * &DiffExpr::exp(1)),
        _ => None,
    })
}

/// Runs every exact check of this module for one branch.
pub fn verify(branch: Branch) -> Result<Report, JetError> {
    let b = match branch {
        Branch::Plus => "+",
        Branch::Minus => "-",
    };
    let mut rep = Report::new();
    let spec = build_forms(branch);
    let r = structure_residuals(&spec)?;
    for (i, ri) in r.iter().enumerate() {
        rep.push(CheckEntry::exact(
            format!("structure_equation_{}[{b}]", i + 1),
            "structure-equations",
            &Ruleset::Pde.apply(ri),
        ));
    }
    let es = DiffExpr::constant(ParamScalar::s().scale_int(branch.sign() as i64));
    rep.push(CheckEntry::exact(
        format!("structure_r2_eq_mu_r1[{b}]"),
        "structure-equations",
        &(&r[1] - &(DiffExpr::mu() * &r[0])),
    ));
    rep.push(CheckEntry::exact(
        format!("structure_r3_eq_eps_s_r1[{b}]"),
        "structure-equations",
        &(&r[2] - &(&es * &r[0])),
    ));
    // r1 is minus the equation residual
    rep.push(CheckEntry::exact(
        format!("structure_r1_eq_minus_pde_residual[{b}]"),
        "structure-equations",
        &(&r[0] + &pde_residual()),
    ));
    let l1 = family_instantiation_check(branch)?;
    rep.push(CheckEntry::exact_rational(
        format!("family_G_matches_equation[{b}]"),
        "family-instantiation",
        &l1.difference,
    ));
    rep.push(CheckEntry::flag(
        format!("family_constraint_nonzero[{b}]"),
        "family-instantiation",
        !l1.constraint.is_zero(),
        Some(format!("(lambda eta2)^2 + C^2 = {}", l1.constraint)),
    ));
    let forms_ok = l1.form_differences.iter().all(RatExpr::is_zero);
    rep.push(CheckEntry::flag(
        format!("family_forms_match[{b}]"),
        "family-instantiation",
        forms_ok,
        None,
    ));
    for (name, (i, j)) in [("12", (1, 2)), ("13", (1, 3)), ("23", (2, 3))] {
        rep.push(CheckEntry::exact(
            format!("delta_antisymmetry_{name}[{b}]"),
            "genericity",
            &(spec.delta(i, j) + spec.delta(j, i)),
        ));
    }
    rep.push(CheckEntry::exact(
        format!("wedge12_vanishes_on_exponential_family[{b}]"),
        "exponential-family",
        &on_exponential_family(&spec.omega[0].wedge(&spec.omega[1])),
    ));
    rep.push(CheckEntry::exact(
        format!("pde_residual_vanishes_on_exponential_family[{b}]"),
        "exponential-family",
        &on_exponential_family(&pde_residual()),
    ));
    Ok(rep)
}
