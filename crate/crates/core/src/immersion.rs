//! Second fundamental form coefficients `(a, b, c)(x)` of the local
//! isometric immersion into 3-space: the closed form at `mu = 0`, the ODE
//! branch at `mu != 0`, Codazzi residuals and curvature diagnostics.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalbridge::{compile, Bindings, CompiledExpr, EvalError, JetFields, JetPoint};
use crate::pssforms::{build_forms, Branch};
use crate::report::{CheckEntry, Report};

#[derive(Debug, Error)]
pub enum ImmersionError {
    #[error("parameter constraint violated: {0}")]
    Param(String),
    #[error("x = {x} lies outside the strip ({lo}, {hi})")]
    OutsideStrip { x: f64, lo: f64, hi: f64 },
    #[error("initial condition rejected: {0}")]
    InitialCondition(String),
    #[error("non-generic point: |Delta_12| = {value:e} below {eps:e}")]
    Masked { value: f64, eps: f64 },
    #[error("x = {x} outside the coefficient range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("jets have {got} samples, coefficients {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImmersionParams {
    pub mu: f64,
    pub beta: f64,
    /// The constant `C` of `Z(x) = C e^{2x} - beta^2 e^{4x} - 1`.
    pub c_strip: f64,
    /// Sign in front of the square root for `a`.
    pub a_sign: Branch,
    /// Branch of `s` in the one-forms.
    pub eps: Branch,
}

impl ImmersionParams {
    pub fn mu0(c_strip: f64, beta: f64, a_sign: Branch) -> Self {
        Self {
            mu: 0.0,
            beta,
            c_strip,
            a_sign,
            eps: Branch::Plus,
        }
    }

    pub fn munz(mu: f64, beta: f64, a_sign: Branch) -> Self {
        Self {
            mu,
            beta,
            c_strip: 0.0,
            a_sign,
            eps: Branch::Plus,
        }
    }

    pub fn validate(&self) -> Result<(), ImmersionError> {
        if !(self.mu.is_finite() && self.beta.is_finite() && self.c_strip.is_finite()) {
            return Err(ImmersionError::Param("non-finite parameter".into()));
        }
        if self.mu == 0.0 {
            check_strip_params(self.c_strip, self.beta)
        } else if self.beta == 0.0 {
            Err(ImmersionError::Param("beta must be nonzero when mu != 0".into()))
        } else {
            Ok(())
        }
    }
}

fn check_strip_params(c: f64, beta: f64) -> Result<(), ImmersionError> {
    if !(c > 0.0) {
        return Err(ImmersionError::Param(format!("C = {c} must be positive")));
    }
    if beta == 0.0 {
        return Err(ImmersionError::Param("beta must be nonzero".into()));
    }
    if c * c <= 4.0 * beta * beta {
        return Err(ImmersionError::Param(format!("need C^2 > 4 beta^2, got C = {c}, beta = {beta}")));
    }
    Ok(())
}

/// Open interval on which `Z(x) > 0`.
pub fn mu0_strip(c: f64, beta: f64) -> Result<(f64, f64), ImmersionError> {
    check_strip_params(c, beta)?;
    let root = (c * c - 4.0 * beta * beta).sqrt();
    let b2 = 2.0 * beta * beta;
    // the smaller root in a cancellation-free form
    let y_lo = 2.0 / (c + root);
    let y_hi = (c + root) / b2;
    Ok((0.5 * y_lo.ln(), 0.5 * y_hi.ln()))
}

/// `Z(x) = C e^{2x} - beta^2 e^{4x} - 1`.
pub fn strip_z(c: f64, beta: f64, x: f64) -> f64 {
    let y = (2.0 * x).exp();
    c * y - beta * beta * y * y - 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedMu0,
    OdeMunz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardReason {
    DeltaDegenerate,
    DenominatorVanishing,
    StepUnderflow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardStop {
    pub x: f64,
    pub reason: GuardReason,
}

/// Coefficients and their x-derivatives at one point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SffPoint {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub a_x: f64,
    pub b_x: f64,
    pub c_x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SffCoeffs {
    pub params: ImmersionParams,
    pub provenance: Provenance,
    pub xs: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a_x: Vec<f64>,
    pub b_x: Vec<f64>,
    pub c_x: Vec<f64>,
    /// `(mu - 1/mu) b - (beta/mu) e^{2x}` (ODE branch only).
    pub phi_aux: Option<Vec<f64>>,
    /// `phi_aux^2 - 4 (1 - b^2)` (ODE branch only).
    pub delta: Option<Vec<f64>>,
    /// Set when the ODE integration ended before the requested span.
    pub stop: Option<GuardStop>,
}

fn mu0_point(c: f64, beta: f64, sign: f64, x: f64) -> SffPoint {
    let y = (2.0 * x).exp();
    let z = c * y - beta * beta * y * y - 1.0;
    let a = sign * z.sqrt();
    let ap = (c * y - 2.0 * beta * beta * y * y) / a;
    let app = (c * y - 4.0 * beta * beta * y * y - ap * ap) / a;
    SffPoint {
        a,
        b: -beta * y,
        c: a - ap,
        a_x: ap,
        b_x: -2.0 * beta * y,
        c_x: ap - app,
    }
}

pub fn mu0_coeffs(c: f64, beta: f64, a_sign: Branch, xs: &[f64]) -> Result<SffCoeffs, ImmersionError> {
    let (lo, hi) = mu0_strip(c, beta)?;
    if let Some(&x) = xs.iter().find(|&&x| !(x > lo && x < hi && strip_z(c, beta, x) > 0.0)) {
        return Err(ImmersionError::OutsideStrip { x, lo, hi });
    }
    let pts: Vec<SffPoint> = xs.iter().map(|&x| mu0_point(c, beta, a_sign.as_f64(), x)).collect();
    Ok(assemble(
        ImmersionParams::mu0(c, beta, a_sign),
        Provenance::ClosedMu0,
        xs.to_vec(),
        &pts,
        None,
        None,
        None,
    ))
}

fn assemble(
    params: ImmersionParams,
    provenance: Provenance,
    xs: Vec<f64>,
    pts: &[SffPoint],
    phi_aux: Option<Vec<f64>>,
    delta: Option<Vec<f64>>,
    stop: Option<GuardStop>,
) -> SffCoeffs {
    let col = |f: fn(&SffPoint) -> f64| pts.iter().map(f).collect::<Vec<f64>>();
    SffCoeffs {
        params,
        provenance,
        xs,
        a: col(|p| p.a),
        b: col(|p| p.b),
        c: col(|p| p.c),
        a_x: col(|p| p.a_x),
        b_x: col(|p| p.b_x),
        c_x: col(|p| p.c_x),
        phi_aux,
        delta,
        stop,
    }
}

/// The explicit first-order ODE `b' = g(x, b)` of the `mu != 0` branch and
/// the algebra giving `a`, `c` from `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MunzOde {
    pub mu: f64,
    pub beta: f64,
    /// Sign of the square root in `a`.
    pub sigma: f64,
}

/// Numerator, denominator and `Delta` of `g(x, b)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeParts {
    pub phi_aux: f64,
    pub delta: f64,
    pub numerator: f64,
    pub denominator: f64,
}

impl MunzOde {
    pub fn new(params: &ImmersionParams) -> Self {
        Self {
            mu: params.mu,
            beta: params.beta,
            sigma: params.a_sign.as_f64(),
        }
    }

    pub fn phi_aux(&self, x: f64, b: f64) -> f64 {
        (self.mu - 1.0 / self.mu) * b - self.beta / self.mu * (2.0 * x).exp()
    }

    pub fn parts(&self, x: f64, b: f64) -> SlopeParts {
        let (mu, s) = (self.mu, self.sigma);
        let e2 = (2.0 * x).exp();
        let phi = self.phi_aux(x, b);
        let delta = phi * phi - 4.0 * (1.0 - b * b);
        let r = delta.max(0.0).sqrt();
        SlopeParts {
            phi_aux: phi,
            delta,
            numerator: 2.0 * (mu * mu + 1.0) * b * r + 2.0 * s * self.beta * phi * e2,
            denominator: s * (mu * mu - 1.0) * phi + 4.0 * s * mu * b + (mu * mu + 1.0) * r,
        }
    }

    pub fn slope(&self, x: f64, b: f64) -> f64 {
        let p = self.parts(x, b);
        p.numerator / p.denominator
    }

    /// `a`, `c` and their derivatives from `(x, b, b')`.
    pub fn point(&self, x: f64, b: f64, bp: f64) -> SffPoint {
        let (mu, s) = (self.mu, self.sigma);
        let phi = self.phi_aux(x, b);
        let delta = phi * phi - 4.0 * (1.0 - b * b);
        let r = delta.sqrt();
        let phi_x = (mu - 1.0 / mu) * bp - 2.0 * self.beta / mu * (2.0 * x).exp();
        let r_x = (2.0 * phi * phi_x + 8.0 * b * bp) / (2.0 * r);
        let a = (-phi + s * r) / 2.0;
        let a_x = (-phi_x + s * r_x) / 2.0;
        SffPoint {
            a,
            b,
            c: a + phi,
            a_x,
            b_x: bp,
            c_x: a_x + phi_x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub delta_eps: f64,
    pub den_eps: f64,
    /// Number of equally spaced output nodes including both ends.
    pub nodes: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-11,
            atol: 1e-12,
            delta_eps: 1e-9,
            den_eps: 1e-9,
            nodes: 201,
        }
    }
}

/// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One embedded step; `None` when a stage leaves the admissible region.
fn dp_step<F: Fn(f64, f64) -> Option<f64>>(f: &F, x: f64, y: f64, h: f64) -> Option<(f64, f64)> {
    let mut k = [0.0; 7];
    for i in 0..7 {
        let yi = y + h * (0..i).map(|j| DP_A[i][j] * k[j]).sum::<f64>();
        k[i] = f(x + DP_C[i] * h, yi)?;
    }
    let y5 = y + h * (0..7).map(|i| DP_B5[i] * k[i]).sum::<f64>();
    let y4 = y + h * (0..7).map(|i| DP_B4[i] * k[i]).sum::<f64>();
    Some((y5, (y5 - y4).abs()))
}

/// Integrates `b' = g(x, b)` from `(x0, b0)` over `span` (either sign) and
/// assembles `a`, `c`. Stops early with a reason when a guard trips.
pub fn munz_solve(
    params: &ImmersionParams,
    x0: f64,
    b0: f64,
    span: f64,
    opts: &OdeOptions,
) -> Result<SffCoeffs, ImmersionError> {
    params.validate()?;
    if params.mu == 0.0 {
        return Err(ImmersionError::Param("mu must be nonzero for the ODE branch".into()));
    }
    if opts.nodes < 2 || !(span.is_finite() && span != 0.0) {
        return Err(ImmersionError::Param("need a nonzero span and at least two nodes".into()));
    }
    let ode = MunzOde::new(params);
    let p0 = ode.parts(x0, b0);
    if !(p0.delta > opts.delta_eps) {
        return Err(ImmersionError::InitialCondition(format!("Delta(x0, b0) = {} is not positive", p0.delta)));
    }
    if !(p0.denominator.abs() > opts.den_eps) {
        return Err(ImmersionError::InitialCondition(format!(
            "slope denominator {} vanishes at x0",
            p0.denominator
        )));
    }
    let admissible = |x: f64, b: f64| -> Option<f64> {
        let p = ode.parts(x, b);
        (p.delta > opts.delta_eps && p.denominator.abs() > opts.den_eps).then(|| p.numerator / p.denominator)
    };
    let guard_reason = |x: f64, b: f64| {
        let p = ode.parts(x, b);
        if p.delta <= opts.delta_eps {
            GuardReason::DeltaDegenerate
        } else {
            GuardReason::DenominatorVanishing
        }
    };

    let dx = span / (opts.nodes - 1) as f64;
    let mut xs = vec![x0];
    let mut bs = vec![b0];
    let mut stop = None;
    let mut h = dx;
    let (mut x, mut b) = (x0, b0);
    'nodes: for i in 1..opts.nodes {
        let target = x0 + dx * i as f64;
        while (target - x) * dx.signum() > 0.0 {
            let remaining = target - x;
            if h.abs() > remaining.abs() {
                h = remaining;
            }
            if h.abs() < 1e-14 * (1.0 + x.abs()) {
                stop = Some(GuardStop { x, reason: GuardReason::StepUnderflow });
                break 'nodes;
            }
            match dp_step(&admissible, x, b, h) {
                Some((bn, err)) => {
                    let scale = opts.atol + opts.rtol * b.abs().max(bn.abs());
                    let ratio = err / scale;
                    if ratio <= 1.0 {
                        x = if (target - (x + h)).abs() < 1e-15 * (1.0 + target.abs()) { target } else { x + h };
                        b = bn;
                        let fac = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
                        h *= fac;
                    } else {
                        h *= (0.9 * ratio.powf(-0.25)).clamp(0.1, 0.9);
                    }
                }
                None => {
                    h *= 0.25;
                    if h.abs() < 1e-12 * dx.abs() {
                        stop = Some(GuardStop {
                            x,
                            reason: guard_reason(x + h, b),
                        });
                        break 'nodes;
                    }
                }
            }
        }
        if admissible(x, b).is_none() {
            stop = Some(GuardStop {
                x,
                reason: guard_reason(x, b),
            });
            break;
        }
        xs.push(target);
        bs.push(b);
        h = h.abs().min(dx.abs()) * dx.signum();
    }
    let pts: Vec<SffPoint> = xs
        .iter()
        .zip(&bs)
        .map(|(&x, &b)| ode.point(x, b, ode.slope(x, b)))
        .collect();
    let parts: Vec<SlopeParts> = xs.iter().zip(&bs).map(|(&x, &b)| ode.parts(x, b)).collect();
    Ok(assemble(
        *params,
        Provenance::OdeMunz,
        xs,
        &pts,
        Some(parts.iter().map(|p| p.phi_aux).collect()),
        Some(parts.iter().map(|p| p.delta).collect()),
        stop,
    ))
}

/// Solves from `(x0, b0)` backward to `lo` and forward to `hi` and joins the
/// halves in ascending order. `opts.nodes` is the total; it is split in
/// proportion to the side lengths, so spacing is uniform when `x0` falls on
/// the uniform grid over `[lo, hi]`. `stop` records the first guard met,
/// backward side first.
pub fn munz_solve_interval(
    params: &ImmersionParams,
    x0: f64,
    b0: f64,
    lo: f64,
    hi: f64,
    opts: &OdeOptions,
) -> Result<SffCoeffs, ImmersionError> {
    if !(lo <= x0 && x0 <= hi && lo < hi) {
        return Err(ImmersionError::Param(format!("need lo <= x0 <= hi, got [{lo}, {hi}] with x0 = {x0}")));
    }
    let intervals = opts.nodes.max(3) - 1;
    let n_back = (((x0 - lo) / (hi - lo)) * intervals as f64).round() as usize;
    let n_back = if x0 > lo { n_back.clamp(1, intervals - 1) } else { 0 };
    let n_fwd = intervals - n_back;
    let side = |n: usize| OdeOptions { nodes: n + 1, ..*opts };
    let fwd = (hi > x0).then(|| munz_solve(params, x0, b0, hi - x0, &side(n_fwd))).transpose()?;
    let back = (lo < x0).then(|| munz_solve(params, x0, b0, lo - x0, &side(n_back))).transpose()?;
    let (mut out, back) = match (fwd, back) {
        (Some(f), None) => return Ok(f),
        (None, Some(mut b)) => {
            reverse_coeffs(&mut b);
            return Ok(b);
        }
        (Some(f), Some(b)) => (f, b),
        (None, None) => unreachable!(),
    };
    let mut back = back;
    reverse_coeffs(&mut back);
    let n = back.len() - 1;
    let join = |head: &[f64], tail: &mut Vec<f64>| {
        let mut v = head[..n].to_vec();
        v.append(tail);
        *tail = v;
    };
    join(&back.xs, &mut out.xs);
    join(&back.a, &mut out.a);
    join(&back.b, &mut out.b);
    join(&back.c, &mut out.c);
    join(&back.a_x, &mut out.a_x);
    join(&back.b_x, &mut out.b_x);
    join(&back.c_x, &mut out.c_x);
    if let (Some(h), Some(t)) = (back.phi_aux.as_ref(), out.phi_aux.as_mut()) {
        join(h, t);
    }
    if let (Some(h), Some(t)) = (back.delta.as_ref(), out.delta.as_mut()) {
        join(h, t);
    }
    out.stop = back.stop.or(out.stop);
    Ok(out)
}

fn reverse_coeffs(c: &mut SffCoeffs) {
    for v in [&mut c.xs, &mut c.a, &mut c.b, &mut c.c, &mut c.a_x, &mut c.b_x, &mut c.c_x] {
        v.reverse();
    }
    for v in [c.phi_aux.as_mut(), c.delta.as_mut()].into_iter().flatten() {
        v.reverse();
    }
}

impl SffCoeffs {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn mean_curvature(&self) -> Vec<f64> {
        self.a.iter().zip(&self.c).map(|(a, c)| 0.5 * (a + c)).collect()
    }

    pub fn gauss_defect(&self) -> f64 {
        (0..self.len()).fold(0.0f64, |m, i| m.max((self.a[i] * self.c[i] - self.b[i] * self.b[i] + 1.0).abs()))
    }

    pub fn range(&self) -> (f64, f64) {
        let (p, q) = (self.xs[0], *self.xs.last().unwrap_or(&self.xs[0]));
        (p.min(q), p.max(q))
    }

    /// Coefficients at an arbitrary `x` in range: analytic for the closed
    /// form, cubic Hermite in `b` for the ODE branch (with `a`, `c` from the
    /// algebra, so the Gauss equation stays exact).
    pub fn at(&self, x: f64) -> Result<SffPoint, ImmersionError> {
        let (lo, hi) = self.range();
        let slack = 1e-12 * (1.0 + hi.abs().max(lo.abs()));
        if !(x >= lo - slack && x <= hi + slack) || self.is_empty() {
            return Err(ImmersionError::OutOfRange { x, lo, hi });
        }
        let p = &self.params;
        match self.provenance {
            Provenance::ClosedMu0 => Ok(mu0_point(p.c_strip, p.beta, p.a_sign.as_f64(), x)),
            Provenance::OdeMunz => {
                let ode = MunzOde::new(p);
                let n = self.len();
                if n == 1 {
                    return Ok(ode.point(x, self.b[0], self.b_x[0]));
                }
                let ascending = self.xs[n - 1] > self.xs[0];
                let pos = |i: usize| if ascending { self.xs[i] } else { self.xs[n - 1 - i] };
                let mut j = (0..n - 1).find(|&i| x <= pos(i + 1)).unwrap_or(n - 2);
                if !ascending {
                    j = n - 2 - j;
                }
                let (x0, x1) = (self.xs[j], self.xs[j + 1]);
                let h = x1 - x0;
                let t = (x - x0) / h;
                let (b0, b1, d0, d1) = (self.b[j], self.b[j + 1], self.b_x[j] * h, self.b_x[j + 1] * h);
                let t2 = t * t;
                let t3 = t2 * t;
                let b = (2.0 * t3 - 3.0 * t2 + 1.0) * b0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * b1 + (t3 - t2) * d1;
                let bp = ((6.0 * t2 - 6.0 * t) * b0 + (3.0 * t2 - 4.0 * t + 1.0) * d0 + (-6.0 * t2 + 6.0 * t) * b1 + (3.0 * t2 - 2.0 * t) * d1) / h;
                Ok(ode.point(x, b, bp))
            }
        }
    }
}

/// The one-form components and `Delta_ij` compiled for numeric use.
pub struct CompiledForms {
    pub mu: f64,
    pub eps: Branch,
    f: Vec<CompiledExpr>,
    delta12: CompiledExpr,
    delta13: CompiledExpr,
    delta23: CompiledExpr,
}

/// `f11, f12, f21, f22, f31, f32` at one point.
pub type FormValues = [f64; 6];

impl CompiledForms {
    pub fn new(mu: f64, eps: Branch) -> Result<Self, ImmersionError> {
        let spec = build_forms(eps);
        let b = Bindings::with_mu(mu);
        let mut f = Vec::with_capacity(6);
        for i in 1..=3 {
            for j in 1..=2 {
                f.push(compile(spec.f(i, j), &b)?);
            }
        }
        Ok(Self {
            mu,
            eps,
            f,
            delta12: compile(&spec.delta(1, 2), &b)?,
            delta13: compile(&spec.delta(1, 3), &b)?,
            delta23: compile(&spec.delta(2, 3), &b)?,
        })
    }

    pub fn values(&self, x: f64, jets: &JetPoint) -> Result<FormValues, ImmersionError> {
        let mut out = [0.0; 6];
        for (o, c) in out.iter_mut().zip(&self.f) {
            *o = c.eval_point(x, jets)?;
        }
        Ok(out)
    }

    pub fn delta12(&self, x: f64, jets: &JetPoint) -> Result<f64, ImmersionError> {
        Ok(self.delta12.eval_point(x, jets)?)
    }

    pub fn delta13(&self, x: f64, jets: &JetPoint) -> Result<f64, ImmersionError> {
        Ok(self.delta13.eval_point(x, jets)?)
    }

    pub fn delta23(&self, x: f64, jets: &JetPoint) -> Result<f64, ImmersionError> {
        Ok(self.delta23.eval_point(x, jets)?)
    }
}

/// First-order relations `a_x + mu b_x - (a - c + 2 mu b)` and
/// `b_x + mu c_x + (mu a - mu c - 2 b)` at one point.
pub fn first_order_relations(p: &SffPoint, mu: f64) -> (f64, f64) {
    (
        p.a_x + mu * p.b_x - (p.a - p.c + 2.0 * mu * p.b),
        p.b_x + mu * p.c_x + (mu * p.a - mu * p.c - 2.0 * p.b),
    )
}

/// Default tolerance for the first-order relations on the ODE branch.
pub const CODAZZI_TOL: f64 = 1e-8;

/// Fourth-order central differences with spacing `stride * h` at nodes that
/// have the full stencil (`None` elsewhere).
fn central_diff4(v: &[f64], h: f64, stride: usize) -> Vec<Option<f64>> {
    let s = stride;
    (0..v.len())
        .map(|i| {
            (i >= 2 * s && i + 2 * s < v.len()).then(|| {
                (v[i - 2 * s] - 8.0 * v[i - s] + 8.0 * v[i + s] - v[i + 2 * s]) / (12.0 * h * s as f64)
            })
        })
        .collect()
}

/// Codazzi residuals of a coefficient set. With `jets` (sampled at the
/// coefficient nodes) the full equations with `Delta_13`, `Delta_23` are
/// evaluated as well; coefficients depend on `x` only so their t-derivatives
/// vanish.
pub fn codazzi_residuals(coeffs: &SffCoeffs, jets: Option<&JetFields>, tol: f64) -> Result<Report, ImmersionError> {
    let mu = coeffs.params.mu;
    let mut r1 = 0.0f64;
    let mut r2 = 0.0f64;
    for i in 0..coeffs.len() {
        let p = SffPoint {
            a: coeffs.a[i],
            b: coeffs.b[i],
            c: coeffs.c[i],
            a_x: coeffs.a_x[i],
            b_x: coeffs.b_x[i],
            c_x: coeffs.c_x[i],
        };
        let (q1, q2) = first_order_relations(&p, mu);
        r1 = r1.max(q1.abs());
        r2 = r2.max(q2.abs());
    }
    let mut rep = Report::new();
    rep.push(CheckEntry::numeric("codazzi_first_relation", "codazzi", r1, tol));
    rep.push(CheckEntry::numeric("codazzi_second_relation", "codazzi", r2, tol));

    // The same relations with derivatives taken from the samples. The spread
    // between step-h and step-2h derivatives bounds the local truncation
    // error; each node's residual is scaled down by that allowance.
    if coeffs.len() >= 9 {
        let h = coeffs.xs[1] - coeffs.xs[0];
        let d1 = [&coeffs.a, &coeffs.b, &coeffs.c].map(|v| central_diff4(v, h, 1));
        let d2 = [&coeffs.a, &coeffs.b, &coeffs.c].map(|v| central_diff4(v, h, 2));
        let at = |i: usize, d: &[Vec<Option<f64>>; 3]| SffPoint {
            a: coeffs.a[i],
            b: coeffs.b[i],
            c: coeffs.c[i],
            a_x: d[0][i].unwrap_or(f64::NAN),
            b_x: d[1][i].unwrap_or(f64::NAN),
            c_x: d[2][i].unwrap_or(f64::NAN),
        };
        let (mut s1, mut s2, mut worst) = (0.0f64, 0.0f64, 0.0f64);
        for i in 4..coeffs.len() - 4 {
            let (q1, q2) = first_order_relations(&at(i, &d1), mu);
            let (w1, w2) = first_order_relations(&at(i, &d2), mu);
            let scale = tol / tol.max((q1 - w1).abs()).max((q2 - w2).abs());
            s1 = s1.max(q1.abs() * scale);
            s2 = s2.max(q2.abs() * scale);
            worst = worst.max(q1.abs()).max(q2.abs());
        }
        let detail = format!("unscaled max {worst:e}");
        rep.push(CheckEntry::numeric("codazzi_first_relation_sampled", "codazzi", s1, tol).with_detail(detail.clone()));
        rep.push(CheckEntry::numeric("codazzi_second_relation_sampled", "codazzi", s2, tol).with_detail(detail));
    }

    if let Some(j) = jets {
        if j.len() != coeffs.len() {
            return Err(ImmersionError::LengthMismatch {
                got: j.len(),
                expected: coeffs.len(),
            });
        }
        let forms = CompiledForms::new(mu, coeffs.params.eps)?;
        let mut full1 = 0.0f64;
        let mut full2 = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..coeffs.len() {
            let x = coeffs.xs[i];
            let pt = j.point(i);
            let f = forms.values(x, &pt)?;
            let (d13, d23) = (forms.delta13(x, &pt)?, forms.delta23(x, &pt)?);
            let (a, b, c) = (coeffs.a[i], coeffs.b[i], coeffs.c[i]);
            let (ax, bx, cx) = (coeffs.a_x[i], coeffs.b_x[i], coeffs.c_x[i]);
            let e6 = -f[1] * ax - f[3] * bx - 2.0 * b * d13 + (a - c) * d23;
            let e7 = -f[1] * bx - f[3] * cx + (a - c) * d13 + 2.0 * b * d23;
            full1 = full1.max(e6.abs());
            full2 = full2.max(e7.abs());
            scale = scale.max(f[1].abs());
        }
        let full_tol = tol * (1.0 + scale);
        rep.push(CheckEntry::numeric("codazzi_full_first", "codazzi", full1, full_tol));
        rep.push(CheckEntry::numeric("codazzi_full_second", "codazzi", full2, full_tol));
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureDiagnostics {
    pub h: Vec<f64>,
    pub report: Report,
}

pub fn curvature_diagnostics(coeffs: &SffCoeffs) -> CurvatureDiagnostics {
    let h = coeffs.mean_curvature();
    let mut report = Report::new();
    report.push(CheckEntry::numeric("gauss_equation", "gauss-equation", coeffs.gauss_defect(), 1e-10));
    if let Some(delta) = &coeffs.delta {
        let sigma = coeffs.params.a_sign.as_f64();
        let dev = h
            .iter()
            .zip(delta)
            .fold(0.0f64, |m, (hv, d)| m.max((hv - sigma * d.sqrt() / 2.0).abs()));
        report.push(CheckEntry::numeric("mean_curvature_root_form", "mean-curvature", dev, 1e-12));
        let positive = h.iter().filter(|v| **v > 0.0).count();
        let negative = h.iter().filter(|v| **v < 0.0).count();
        let constant = (positive == 0 || negative == 0) && h.iter().all(|v| *v != 0.0);
        report.push(CheckEntry::flag(
            "mean_curvature_sign_constant",
            "mean-curvature",
            constant,
            (!constant).then(|| format!("{positive} positive, {negative} negative samples")),
        ));
        let min_delta = delta.iter().cloned().fold(f64::INFINITY, f64::min);
        report.push(CheckEntry::flag(
            "delta_positive",
            "mean-curvature",
            min_delta > 0.0,
            Some(format!("min Delta = {min_delta:e}")),
        ));
    }
    CurvatureDiagnostics { h, report }
}

/// `Pi = a w1^2 + 2 b w1 w2 + c w2^2` in the `(dx, dt)` basis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondForm {
    pub xx: f64,
    pub xt: f64,
    pub tt: f64,
}

pub fn second_fundamental_form(
    abc: (f64, f64, f64),
    forms: &CompiledForms,
    x: f64,
    jets: &JetPoint,
    mask_eps: f64,
) -> Result<SecondForm, ImmersionError> {
    let d12 = forms.delta12(x, jets)?;
    if !(d12.abs() >= mask_eps) {
        return Err(ImmersionError::Masked {
            value: d12.abs(),
            eps: mask_eps,
        });
    }
    let f = forms.values(x, jets)?;
    let (a, b, c) = abc;
    let (f11, f12, f21, f22) = (f[0], f[1], f[2], f[3]);
    Ok(SecondForm {
        xx: a * f11 * f11 + 2.0 * b * f11 * f21 + c * f21 * f21,
        xt: a * f11 * f12 + b * (f11 * f22 + f21 * f12) + c * f21 * f22,
        tt: a * f12 * f12 + 2.0 * b * f12 * f22 + c * f22 * f22,
    })
}

/// CSV with a leading JSON parameter line (prefixed by `#`), then
/// `x,a,b,c,H,gauss[,delta]` rows.
pub fn write_coeffs_csv<W: Write>(mut w: W, coeffs: &SffCoeffs) -> Result<(), ImmersionError> {
    let header = serde_json::json!({
        "params": coeffs.params,
        "provenance": coeffs.provenance,
        "guard_stop": coeffs.stop,
    });
    writeln!(w, "# {header}")?;
    let ode = coeffs.delta.is_some();
    writeln!(w, "x,a,b,c,H,gauss{}", if ode { ",delta" } else { "" })?;
    for i in 0..coeffs.len() {
        let (a, b, c) = (coeffs.a[i], coeffs.b[i], coeffs.c[i]);
        write!(w, "{},{},{},{},{},{}", coeffs.xs[i], a, b, c, 0.5 * (a + c), a * c - b * b)?;
        if let Some(d) = &coeffs.delta {
            write!(w, ",{}", d[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_codazzi_catches_perturbed_coefficients() {
        let (lo, hi) = mu0_strip(5.0, 1.0).unwrap();
        let xs: Vec<f64> = (0..201).map(|i| lo + (hi - lo) * (0.001 + 0.998 * i as f64 / 200.0)).collect();
        let good = mu0_coeffs(5.0, 1.0, Branch::Plus, &xs).unwrap();
        let r = codazzi_residuals(&good, None, CODAZZI_TOL).unwrap();
        assert!(r.all_pass(), "{:?}", r.failures().collect::<Vec<_>>());
        let mut bad = good.clone();
        for (b, x) in bad.b.iter_mut().zip(&xs) {
            *b += 1e-4 * x.sin();
        }
        let r = codazzi_residuals(&bad, None, CODAZZI_TOL).unwrap();
        assert!(!r.get("codazzi_second_relation_sampled").unwrap().pass);
    }

    #[test]
    fn interval_solve_joins_both_sides() {
        let p = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let opts = OdeOptions { nodes: 101, ..Default::default() };
        let both = munz_solve_interval(&p, 0.0, 1.5, -0.2, 0.3, &opts).unwrap();
        assert!(both.stop.is_none());
        assert_eq!(both.len(), 101);
        assert!(both.xs.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(both.b[40], 1.5);
        let fwd = munz_solve(&p, 0.0, 1.5, 0.3, &OdeOptions { nodes: 61, ..opts }).unwrap();
        assert_eq!(both.xs[40], 0.0);
        assert_eq!(both.b[100], fwd.b[60]);
        let r = codazzi_residuals(&both, None, CODAZZI_TOL).unwrap();
        assert!(r.all_pass(), "{:?}", r.failures().collect::<Vec<_>>());
    }

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn strip_endpoints() {
        let (lo, hi) = mu0_strip(5.0, 1.0).unwrap();
        assert_close(hi, 0.783_399_618_486_205_4, 1e-12);
        assert_close(lo, -hi, 1e-12);
        let (lo, hi) = mu0_strip(3.0, 1.0).unwrap();
        assert_close(hi, 0.481_211_825_059_6, 1e-12);
        assert_close(lo, -hi, 1e-12);
        assert!(strip_z(3.0, 1.0, lo).abs() < 1e-12 && strip_z(3.0, 1.0, hi).abs() < 1e-12);
        assert!(mu0_strip(2.0, 1.0).is_err());
        assert!(mu0_strip(5.0, 0.0).is_err());
    }

    #[test]
    fn closed_form_at_origin() {
        let c = mu0_coeffs(5.0, 1.0, Branch::Plus, &[0.0]).unwrap();
        assert_close(c.a[0], 3f64.sqrt(), 1e-15);
        assert_close(c.b[0], -1.0, 0.0);
        assert_close(c.c[0], 0.0, 1e-15);
        assert_close(c.mean_curvature()[0], 3f64.sqrt() / 2.0, 1e-15);
        assert!(matches!(
            mu0_coeffs(5.0, 1.0, Branch::Plus, &[0.9]),
            Err(ImmersionError::OutsideStrip { .. })
        ));
    }

    #[test]
    fn closed_form_codazzi_is_exact() {
        let xs: Vec<f64> = (0..101).map(|i| -0.7 + 0.014 * i as f64).collect();
        for sign in [Branch::Plus, Branch::Minus] {
            let c = mu0_coeffs(5.0, 1.0, sign, &xs).unwrap();
            assert!(c.gauss_defect() <= 1e-10);
            let rep = codazzi_residuals(&c, None, 1e-12).unwrap();
            assert!(rep.get("codazzi_first_relation").unwrap().pass);
            assert!(rep.get("codazzi_second_relation").unwrap().pass);
        }
    }

    #[test]
    fn initial_slope() {
        let ode = MunzOde::new(&ImmersionParams::munz(1.0, 1.0, Branch::Plus));
        let p = ode.parts(0.0, 1.5);
        assert_close(p.phi_aux, -1.0, 0.0);
        assert_close(p.delta, 6.0, 1e-15);
        let want = (6.0 * 6f64.sqrt() - 2.0) / (6.0 + 2.0 * 6f64.sqrt());
        assert_close(ode.slope(0.0, 1.5), want, 1e-15);
    }

    #[test]
    fn ode_branch_accepted_run() {
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let c = munz_solve(&params, 0.0, 1.5, 0.5, &OdeOptions::default()).unwrap();
        assert!(c.stop.is_none());
        assert_eq!(c.len(), 201);
        assert!(c.gauss_defect() <= 1e-10);
        let rep = codazzi_residuals(&c, None, CODAZZI_TOL).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        let d = curvature_diagnostics(&c);
        assert!(d.report.all_pass(), "{:?}", d.report);
    }

    #[test]
    fn flipped_slope_sign_breaks_codazzi() {
        // flipping the sign of the beta term in the numerator
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let ode = MunzOde::new(&params);
        let x = 0.1;
        let b = 1.4;
        let p = ode.parts(x, b);
        let flipped = (p.numerator - 4.0 * params.beta * p.phi_aux * (2.0 * x).exp()) / p.denominator;
        let (good, _) = first_order_relations(&ode.point(x, b, ode.slope(x, b)), 1.0);
        let (bad, _) = first_order_relations(&ode.point(x, b, flipped), 1.0);
        assert!(good.abs() < 1e-13);
        assert!(bad.abs() > 1e-2);
    }

    #[test]
    fn tolerance_refinement() {
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let opts = OdeOptions { rtol: 1e-8, atol: 1e-8, ..Default::default() };
        let coarse = munz_solve(&params, 0.0, 1.5, 0.5, &opts).unwrap();
        let fine = munz_solve(&params, 0.0, 1.5, 0.5, &OdeOptions { rtol: 5e-9, atol: 5e-9, ..opts }).unwrap();
        let diff = coarse.b.iter().zip(&fine.b).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        assert!(diff < 10.0 * 1e-8, "{diff}");
    }

    #[test]
    fn beta_zero_rejected() {
        let params = ImmersionParams::munz(1.0, 0.0, Branch::Plus);
        assert!(matches!(
            munz_solve(&params, 0.0, 1.5, 0.5, &OdeOptions::default()),
            Err(ImmersionError::Param(_))
        ));
    }

    #[test]
    fn bad_initial_condition() {
        // Delta(0, 0) = 1 - 4 < 0
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        assert!(matches!(
            munz_solve(&params, 0.0, 0.0, 0.5, &OdeOptions::default()),
            Err(ImmersionError::InitialCondition(_))
        ));
    }

    #[test]
    fn guard_stop_is_reported() {
        // b shrinks towards the Delta = 0 boundary when integrating far enough
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let c = munz_solve(&params, 0.0, 1.5, -20.0, &OdeOptions::default()).unwrap();
        if let Some(stop) = c.stop {
            assert!(c.len() < 201);
            assert!(stop.x > -20.0);
        }
        let d = c.delta.as_ref().unwrap();
        assert!(d.iter().all(|v| *v > 1e-9));
    }

    #[test]
    fn hermite_sampling_matches_nodes() {
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let c = munz_solve(&params, 0.0, 1.5, 0.5, &OdeOptions::default()).unwrap();
        let p = c.at(c.xs[17]).unwrap();
        assert_close(p.b, c.b[17], 1e-15);
        let mid = c.at(0.5 * (c.xs[40] + c.xs[41])).unwrap();
        assert!((mid.a * mid.c - mid.b * mid.b + 1.0).abs() < 1e-12);
        assert!(c.at(0.6).is_err());
    }

    #[test]
    fn second_form_examples() {
        let forms = CompiledForms::new(0.0, Branch::Plus).unwrap();
        let jets = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let s3 = 3f64.sqrt();
        let pi = second_fundamental_form((s3, -1.0, 0.0), &forms, 0.0, &jets, 1e-12).unwrap();
        assert_close(pi.xx, s3 - 2.0, 1e-15);
        let zero = [0.0; 7];
        assert!(matches!(
            second_fundamental_form((s3, -1.0, 0.0), &forms, 0.0, &zero, 1e-12),
            Err(ImmersionError::Masked { .. })
        ));
        let pi = second_fundamental_form((s3, -1.0, 0.7), &forms, 0.0, &zero, 0.0).unwrap();
        assert_close(pi.xx, 0.7, 1e-15);
        let pi = second_fundamental_form((2.0, 0.0, 0.5), &forms, 0.0, &jets, 0.0).unwrap();
        assert_close(pi.xx, 2.0 + 0.5, 1e-15);
    }

    #[test]
    fn full_codazzi_on_smooth_jets() {
        // x-only coefficients against arbitrary jets: the full equations are
        // multiples of the first-order relations
        let xs: Vec<f64> = (0..41).map(|i| -0.4 + 0.02 * i as f64).collect();
        let coeffs = mu0_coeffs(5.0, 1.0, Branch::Plus, &xs).unwrap();
        let jets = JetFields::from_fn(
            &xs,
            |x| [1.0 + 0.3 * x.sin(), 0.3 * x.cos(), -0.3 * x.sin(), -0.3 * x.cos()],
            |x| [0.1 * x.cos(), -0.1 * x.sin(), -0.1 * x.cos()],
        );
        let rep = codazzi_residuals(&coeffs, Some(&jets), 1e-10).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        let params = ImmersionParams::munz(1.0, 1.0, Branch::Plus);
        let c = munz_solve(&params, 0.0, 1.5, 0.4, &OdeOptions { nodes: 41, ..Default::default() }).unwrap();
        let xs2 = c.xs.clone();
        let jets = JetFields::from_fn(&xs2, |x| [x.cos(), -x.sin(), -x.cos(), x.sin()], |_| [0.0; 3]);
        let rep = codazzi_residuals(&c, Some(&jets), CODAZZI_TOL).unwrap();
        assert!(rep.get("codazzi_full_first").unwrap().pass);
        assert!(rep.get("codazzi_full_second").unwrap().pass);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let c = mu0_coeffs(5.0, 1.0, Branch::Plus, &[0.0, 0.1]).unwrap();
        let mut buf = Vec::new();
        write_coeffs_csv(&mut buf, &c).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# {"));
        assert_eq!(lines[1], "x,a,b,c,H,gauss");
        assert_eq!(lines.len(), 4);
    }
}
