//! Reduction of time derivatives modulo the equation.

use super::expr::{DiffExpr, JetVar};

/// Right side `F` of `u_t - u_xxt = F`:
/// `u^2 u_xxx - u^2 u_xx - 3 u u_x^2 - 2 u^2 u_x + 4 u u_x u_xx + u_x^3`.
pub fn pde_rhs() -> DiffExpr {
    let (u, ux, uxx, uxxx) = (DiffExpr::u(0), DiffExpr::u(1), DiffExpr::u(2), DiffExpr::u(3));
    let u2 = &u * &u;
    &u2 * &uxxx - &u2 * &uxx - (&u * &ux.pow(2)).scale_int(3) - (&u2 * &ux).scale_int(2)
        + (&u * &ux * &uxx).scale_int(4)
        + ux.pow(3)
}

/// The flux `phi = u^2 u_xx - 2 u^2 u_x + u u_x^2`, so that the equation reads
/// `(u - u_xx)_t = phi_x + phi`.
pub fn flux_phi() -> DiffExpr {
    let (u, ux, uxx) = (DiffExpr::u(0), DiffExpr::u(1), DiffExpr::u(2));
    let u2 = &u * &u;
    &u2 * &uxx - (&u2 * &ux).scale_int(2) + &u * &ux.pow(2)
}

/// `u_t - u_xxt - F`, zero exactly on solutions.
pub fn pde_residual() -> DiffExpr {
    DiffExpr::ut(0) - DiffExpr::ut(2) - pde_rhs()
}

/// Left side minus right side of `(u - u_x)_t = phi`.
pub fn flow_residual() -> DiffExpr {
    DiffExpr::ut(0) - DiffExpr::ut(1) - flux_phi()
}

/// Rewriting systems for mixed jets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ruleset {
    /// `u_xxt -> u_t - F` and its x-prolongations.
    Pde,
    /// `u_xt -> u_t - phi` and its x-prolongations.
    Flow,
}

impl Ruleset {
    fn first_reduced_order(self) -> u8 {
        match self {
            Ruleset::Pde => 2,
            Ruleset::Flow => 1,
        }
    }

    /// Fully reduced replacements for `u(i,1)`, `i = 0..=max`.
    fn table(self, max: u8) -> Vec<DiffExpr> {
        let mut red: Vec<DiffExpr> = Vec::with_capacity(max as usize + 1);
        match self {
            Ruleset::Pde => {
                let mut dfs = pde_rhs();
                for i in 0..=max {
                    if i < 2 {
                        red.push(DiffExpr::ut(i));
                    } else {
                        // u(i,1) = u(i-2,1) - D_x^{i-2} F
                        let e = &red[i as usize - 2] - &dfs;
                        red.push(e);
                        dfs = dfs.dx_n(1);
                    }
                }
            }
            Ruleset::Flow => {
                let mut dphi = flux_phi();
                for i in 0..=max {
                    if i == 0 {
                        red.push(DiffExpr::ut(0));
                    } else {
                        // u(i,1) = u(i-1,1) - D_x^{i-1} phi
                        let e = &red[i as usize - 1] - &dphi;
                        red.push(e);
                        dphi = dphi.dx_n(1);
                    }
                }
            }
        }
        red
    }

    /// Rewrite every reducible `u(i,1)`; the result contains none, so
    /// applying it twice changes nothing.
    pub fn apply(self, e: &DiffExpr) -> DiffExpr {
        let Some(max) = e.max_order(1) else {
            return e.clone();
        };
        let lo = self.first_reduced_order();
        if max < lo {
            return e.clone();
        }
        let table = self.table(max);
        e.substitute(|v| match v {
            JetVar::U { x, t: 1 } if x >= lo => Some(table[x as usize].clone()),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jetring::Dir;

    #[test]
    fn equation_has_conservation_form() {
        // F = phi_x + phi
        let lhs = pde_rhs();
        let rhs = flux_phi().dx_n(1) + flux_phi();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn reduce_uxxt_by_pde() {
        let r = Ruleset::Pde.apply(&DiffExpr::ut(2));
        assert_eq!(r, DiffExpr::ut(0) - pde_rhs());
    }

    #[test]
    fn reduce_leaves_ut_alone() {
        assert_eq!(Ruleset::Pde.apply(&DiffExpr::ut(0)), DiffExpr::ut(0));
        assert_eq!(Ruleset::Flow.apply(&DiffExpr::ut(0)), DiffExpr::ut(0));
    }

    #[test]
    fn reduce_uxxt_by_flow() {
        let r = Ruleset::Flow.apply(&DiffExpr::ut(2));
        let phi = flux_phi();
        assert_eq!(r, DiffExpr::ut(0) - &phi - phi.dx_n(1));
    }

    #[test]
    fn pde_residual_reduces_to_zero() {
        assert!(Ruleset::Pde.apply(&pde_residual()).is_zero());
        assert!(Ruleset::Flow.apply(&flow_residual()).is_zero());
    }

    #[test]
    fn high_order_reduction_is_idempotent() {
        let e = DiffExpr::ut(5) * DiffExpr::ut(3) + DiffExpr::ut(4).scale_int(7);
        for r in [Ruleset::Pde, Ruleset::Flow] {
            let once = r.apply(&e);
            assert_eq!(r.apply(&once), once);
            let lo = if r == Ruleset::Pde { 2 } else { 1 };
            assert!(once.max_order(1).unwrap_or(0) < lo);
        }
    }

    #[test]
    fn pde_reduction_commutes_with_dx_on_static_exprs() {
        let e = flux_phi() * DiffExpr::u(3) + DiffExpr::exp(2);
        let dx = e.total_derivative(Dir::X).unwrap();
        assert_eq!(Ruleset::Pde.apply(&dx), dx);
    }
}
