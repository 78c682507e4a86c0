//! Periodic pseudospectral solver for the momentum form `m_t = phi_x + phi`,
//! `m = u - u_xx`, with jet snapshots and pointwise conservation-law residuals.

use std::io::Write;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalbridge::{compile, compile_rational, eval_field, Bindings, CompiledExpr, EvalError};
pub use crate::evalbridge::JetFields;
use crate::jetring::{pde_residual, Dir, JetError, RatExpr};
use crate::pseudopot::{conservation_law, ConservationLaw, Family, PseudoError};

/// Field magnitude beyond which a run is declared blown up.
pub const BLOWUP_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid time step {0}")]
    InvalidTimeStep(f64),
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("blow-up guard tripped after t = {t_last} (|m|_inf = {sup:e})")]
    BlowUp { t_last: f64, sup: f64 },
    #[error("empty residual window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub length: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(length: f64, n: usize) -> Result<Self, SolverError> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(SolverError::InvalidGrid(format!("length {length} must be positive")));
        }
        if n < 16 || !n.is_power_of_two() {
            return Err(SolverError::InvalidGrid(format!("n = {n} must be a power of two >= 16")));
        }
        Ok(Self { length, n })
    }

    pub fn periodic_2pi(n: usize) -> Result<Self, SolverError> {
        Self::new(2.0 * std::f64::consts::PI, n)
    }

    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| j as f64 * self.h()).collect()
    }

    /// Integer wavenumber of FFT bin `j` (the Nyquist bin maps to `-n/2`).
    fn mode(&self, j: usize) -> i64 {
        if j < self.n / 2 {
            j as i64
        } else {
            j as i64 - self.n as i64
        }
    }
}

/// FFT plans and wavenumbers for one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid1D,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    kappa: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid1D) -> Self {
        let mut planner = FftPlanner::new();
        let scale = 2.0 * std::f64::consts::PI / grid.length;
        Self {
            grid,
            fwd: planner.plan_fft_forward(grid.n),
            inv: planner.plan_fft_inverse(grid.n),
            kappa: (0..grid.n).map(|j| scale * grid.mode(j) as f64).collect(),
        }
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn inverse(&self, spec: &[Complex64]) -> Vec<f64> {
        let mut buf = spec.to_vec();
        self.inv.process(&mut buf);
        let s = 1.0 / self.grid.n as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    fn nyquist(&self) -> usize {
        self.grid.n / 2
    }

    /// Multiplies by `(i kappa)^order`; odd orders drop the Nyquist bin.
    pub fn diff_spec(&self, spec: &[Complex64], order: u32) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = spec
            .iter()
            .zip(&self.kappa)
            .map(|(c, &k)| c * Complex64::new(0.0, k).powu(order))
            .collect();
        if order % 2 == 1 {
            out[self.nyquist()] = Complex64::new(0.0, 0.0);
        }
        out
    }

    pub fn derivative(&self, f: &[f64], order: u32) -> Vec<f64> {
        self.inverse(&self.diff_spec(&self.forward(f), order))
    }

    fn helmholtz_spec(&self, spec: &[Complex64]) -> Vec<Complex64> {
        spec.iter().zip(&self.kappa).map(|(c, &k)| c / (1.0 + k * k)).collect()
    }

    /// Solves `u - u_xx = m`.
    pub fn helmholtz_solve(&self, m: &[f64]) -> Vec<f64> {
        self.inverse(&self.helmholtz_spec(&self.forward(m)))
    }

    /// Zeroes every mode with `|mode| > n/3` and the Nyquist bin.
    fn dealias(&self, spec: &mut [Complex64]) {
        let cut = (self.grid.n / 3) as i64;
        for (j, c) in spec.iter_mut().enumerate() {
            if self.grid.mode(j).abs() > cut || j == self.nyquist() {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    /// Applies `1 + d/dx` to a spectrum, dropping the Nyquist bin.
    fn one_plus_dx(&self, spec: &[Complex64]) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = spec
            .iter()
            .zip(&self.kappa)
            .map(|(c, &k)| c * Complex64::new(1.0, k))
            .collect();
        out[self.nyquist()] = Complex64::new(0.0, 0.0);
        out
    }
}

/// `phi = u^2 u_xx - 2 u^2 u_x + u u_x^2`.
pub fn phi_pointwise(u: f64, ux: f64, uxx: f64) -> f64 {
    u * u * uxx - 2.0 * u * u * ux + u * ux * ux
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Forcing {
    #[default]
    None,
    /// Forcing that makes `u* = amplitude * sin(x - t)` an exact solution.
    Manufactured { amplitude: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Fixed step; `None` selects the stability heuristic at the start of
    /// each `advance` call.
    pub dt: Option<f64>,
    pub dealias: bool,
    pub forcing: Forcing,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: None,
            dealias: true,
            forcing: Forcing::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    /// `m = u - u_xx` at the grid nodes.
    pub m: Vec<f64>,
    pub t: f64,
}

/// One sine component `amplitude * sin(mode * 2 pi x / L + phase)`.
/// Mode 0 with phase `pi/2` gives a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineMode {
    pub mode: i64,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

impl SineMode {
    pub fn new(mode: i64, amplitude: f64, phase: f64) -> Self {
        Self { mode, amplitude, phase }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(0, value, std::f64::consts::FRAC_PI_2)
    }
}

pub fn sample_sines(grid: &Grid1D, modes: &[SineMode]) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI / grid.length;
    grid.nodes()
        .iter()
        .map(|&x| modes.iter().map(|s| s.amplitude * (s.mode as f64 * w * x + s.phase).sin()).sum())
        .collect()
}

pub struct Solver {
    spectral: Spectral,
    config: SolverConfig,
    xs: Vec<f64>,
    forcing_expr: Option<CompiledExpr>,
}

impl Solver {
    pub fn new(grid: Grid1D, config: SolverConfig) -> Result<Self, SolverError> {
        if let Some(dt) = config.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(SolverError::InvalidTimeStep(dt));
            }
        }
        let forcing_expr = match config.forcing {
            Forcing::None => None,
            Forcing::Manufactured { .. } => Some(compile(&pde_residual(), &Bindings::default())?),
        };
        Ok(Self {
            spectral: Spectral::new(grid),
            config,
            xs: grid.nodes(),
            forcing_expr,
        })
    }

    pub fn grid(&self) -> Grid1D {
        self.spectral.grid
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn helmholtz_solve(&self, m: &[f64]) -> Vec<f64> {
        self.spectral.helmholtz_solve(m)
    }

    /// State with `m = u0 - u0_xx`, evaluated spectrally.
    pub fn initial_state(&self, u0: &[f64], t0: f64) -> Result<SolverState, SolverError> {
        self.check_len(u0.len())?;
        let uxx = self.spectral.derivative(u0, 2);
        Ok(SolverState {
            m: u0.iter().zip(&uxx).map(|(u, d)| u - d).collect(),
            t: t0,
        })
    }

    pub fn state_from_sines(&self, modes: &[SineMode]) -> Result<SolverState, SolverError> {
        self.initial_state(&sample_sines(&self.grid(), modes), 0.0)
    }

    /// Exact solution of the manufactured problem at time `t` (zero when unforced).
    pub fn manufactured_u(&self, t: f64) -> Vec<f64> {
        match self.config.forcing {
            Forcing::Manufactured { amplitude } => self.xs.iter().map(|x| amplitude * (x - t).sin()).collect(),
            Forcing::None => vec![0.0; self.xs.len()],
        }
    }

    fn check_len(&self, n: usize) -> Result<(), SolverError> {
        if n != self.grid().n {
            return Err(SolverError::LengthMismatch {
                got: n,
                expected: self.grid().n,
            });
        }
        Ok(())
    }

    fn forcing(&self, t: f64) -> Option<Vec<f64>> {
        let (Forcing::Manufactured { amplitude: a }, Some(c)) = (self.config.forcing, &self.forcing_expr) else {
            return None;
        };
        Some(
            self.xs
                .iter()
                .map(|&x| {
                    let (s, co) = (x - t).sin_cos();
                    let jets = [a * s, a * co, -a * s, -a * co, -a * co, a * s, a * co];
                    c.eval_point(x, &jets).expect("polynomial residual has no division")
                })
                .collect(),
        )
    }

    /// `m_t = phi_x + phi` (plus forcing).
    pub fn rhs(&self, m: &[f64], t: f64) -> Vec<f64> {
        let sp = &self.spectral;
        let mut u_hat = sp.helmholtz_spec(&sp.forward(m));
        if self.config.dealias {
            sp.dealias(&mut u_hat);
        }
        let u = sp.inverse(&u_hat);
        let ux = sp.inverse(&sp.diff_spec(&u_hat, 1));
        let uxx = sp.inverse(&sp.diff_spec(&u_hat, 2));
        let phi: Vec<f64> = (0..u.len()).map(|i| phi_pointwise(u[i], ux[i], uxx[i])).collect();
        let mut phi_hat = sp.forward(&phi);
        if self.config.dealias {
            sp.dealias(&mut phi_hat);
        }
        let mut out = sp.inverse(&sp.one_plus_dx(&phi_hat));
        if let Some(g) = self.forcing(t) {
            for (o, gi) in out.iter_mut().zip(g) {
                *o += gi;
            }
        }
        out
    }

    /// `0.25 h / max(1, |u|_inf^2)`.
    pub fn default_dt(&self, state: &SolverState) -> f64 {
        let u = self.helmholtz_solve(&state.m);
        let sup = sup_norm(&u);
        0.25 * self.grid().h() / (sup * sup).max(1.0)
    }

    /// Classical RK4 steps.
    pub fn advance(&self, state: &mut SolverState, dt: f64, nsteps: usize) -> Result<(), SolverError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SolverError::InvalidTimeStep(dt));
        }
        self.check_len(state.m.len())?;
        let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
        for _ in 0..nsteps {
            let (m, t) = (&state.m, state.t);
            let k1 = self.rhs(m, t);
            let k2 = self.rhs(&axpy(m, &k1, 0.5 * dt), t + 0.5 * dt);
            let k3 = self.rhs(&axpy(m, &k2, 0.5 * dt), t + 0.5 * dt);
            let k4 = self.rhs(&axpy(m, &k3, dt), t + dt);
            let next: Vec<f64> = (0..m.len())
                .map(|i| m[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect();
            let sup = sup_norm(&next);
            if !sup.is_finite() || sup > BLOWUP_LIMIT {
                return Err(SolverError::BlowUp { t_last: state.t, sup });
            }
            state.m = next;
            state.t += dt;
        }
        Ok(())
    }

    /// Advances to `t_end` with the configured (or heuristic) step, shortening
    /// the last step to land exactly. Returns the number of steps taken.
    pub fn advance_to(&self, state: &mut SolverState, t_end: f64) -> Result<usize, SolverError> {
        let span = t_end - state.t;
        if span <= 0.0 {
            return Ok(0);
        }
        let dt = self.config.dt.unwrap_or_else(|| self.default_dt(state));
        let steps = (span / dt).ceil().max(1.0) as usize;
        self.advance(state, span / steps as f64, steps)?;
        state.t = t_end;
        Ok(steps)
    }

    /// Spatial jets by spectral differentiation and time jets from the equation.
    pub fn jet_snapshot(&self, state: &SolverState) -> JetFields {
        let sp = &self.spectral;
        let u_hat = sp.helmholtz_spec(&sp.forward(&state.m));
        let u = sp.inverse(&u_hat);
        let u_x = sp.inverse(&sp.diff_spec(&u_hat, 1));
        let u_xx = sp.inverse(&sp.diff_spec(&u_hat, 2));
        let u_xxx = sp.inverse(&sp.diff_spec(&u_hat, 3));
        let phi: Vec<f64> = (0..u.len()).map(|i| phi_pointwise(u[i], u_x[i], u_xx[i])).collect();
        let mut mt_hat = sp.one_plus_dx(&sp.forward(&phi));
        if let Some(g) = self.forcing(state.t) {
            for (c, gi) in mt_hat.iter_mut().zip(sp.forward(&g)) {
                *c += gi;
            }
        }
        let ut_hat = sp.helmholtz_spec(&mt_hat);
        JetFields {
            u,
            u_x,
            u_xx,
            u_xxx,
            u_t: sp.inverse(&ut_hat),
            u_xt: sp.inverse(&sp.diff_spec(&ut_hat, 1)),
            u_xxt: sp.inverse(&sp.diff_spec(&ut_hat, 2)),
        }
    }
}

pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| if x.is_nan() { f64::NAN } else { a.max(x.abs()) })
}

/// `|u_t - u_xt - phi|_inf` and `|phi|_inf` of a snapshot.
pub fn flow_identity_defect(jets: &JetFields) -> (f64, f64) {
    let mut defect = 0.0f64;
    let mut phi_sup = 0.0f64;
    for i in 0..jets.len() {
        let phi = phi_pointwise(jets.u[i], jets.u_x[i], jets.u_xx[i]);
        defect = defect.max((jets.u_t[i] - jets.u_xt[i] - phi).abs());
        phi_sup = phi_sup.max(phi.abs());
    }
    (defect, phi_sup)
}

/// Pointwise residual of `D_t(density) = D_x(flux)` on one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservationResidual {
    pub family: Family,
    pub k: u32,
    pub xs: Vec<f64>,
    pub field: Vec<f64>,
    pub sup_norm: f64,
    /// Sup-norm after dividing by the exponential weight of the family
    /// (`e^{-(k-1)x}` for neg, `e^{(k+1)x}` for pos).
    pub normalized_sup_norm: f64,
    /// Riemann sum of the residual over the window.
    pub integral_drift: f64,
}

/// `D_t(density) - D_x(flux)`, with both derivatives expanded symbolically.
pub fn law_residual_expr(law: &ConservationLaw) -> Result<RatExpr, JetError> {
    Ok(&law.density.total_derivative(Dir::T)? - &law.flux.total_derivative(Dir::X)?)
}

fn family_weight_exponent(family: Family, k: u32) -> f64 {
    match family {
        Family::Neg => -((k as f64) - 1.0),
        Family::Pos => k as f64 + 1.0,
    }
}

pub fn conservation_residual(
    xs: &[f64],
    jets: &JetFields,
    family: Family,
    k: u32,
    window: Option<(f64, f64)>,
) -> Result<ConservationResidual, SolverError> {
    let law = conservation_law(family, k)?;
    conservation_residual_for(xs, jets, &law, window)
}

/// As [`conservation_residual`] for an arbitrary density/flux pair.
pub fn conservation_residual_for(
    xs: &[f64],
    jets: &JetFields,
    law: &ConservationLaw,
    window: Option<(f64, f64)>,
) -> Result<ConservationResidual, SolverError> {
    if xs.len() != jets.len() {
        return Err(SolverError::LengthMismatch {
            got: jets.len(),
            expected: xs.len(),
        });
    }
    let (lo, hi) = window.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let idx: Vec<usize> = (0..xs.len()).filter(|&i| xs[i] >= lo && xs[i] <= hi).collect();
    if idx.is_empty() {
        return Err(SolverError::EmptyWindow(lo, hi));
    }
    let sub = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let wx = sub(&xs.to_vec());
    let wj = JetFields {
        u: sub(&jets.u),
        u_x: sub(&jets.u_x),
        u_xx: sub(&jets.u_xx),
        u_xxx: sub(&jets.u_xxx),
        u_t: sub(&jets.u_t),
        u_xt: sub(&jets.u_xt),
        u_xxt: sub(&jets.u_xxt),
    };
    let compiled = compile_rational(&law_residual_expr(law)?, &Bindings::default())?;
    let field = eval_field(&compiled, &wj, &wx)?;
    let p = family_weight_exponent(law.family, law.k);
    let normalized = field
        .iter()
        .zip(&wx)
        .fold(0.0f64, |a, (r, x)| a.max((r * (-p * x).exp()).abs()));
    let h = if wx.len() > 1 { wx[1] - wx[0] } else { 0.0 };
    Ok(ConservationResidual {
        family: law.family,
        k: law.k,
        sup_norm: sup_norm(&field),
        normalized_sup_norm: normalized,
        integral_drift: h * field.iter().sum::<f64>(),
        xs: wx,
        field,
    })
}

/// Jets of `u = c(t) e^x` at one instant, sampled at `xs`.
pub fn exponential_family_jets(xs: &[f64], c: f64, c_dot: f64) -> JetFields {
    JetFields::from_fn(xs, |x| [c * x.exp(); 4], |x| [c_dot * x.exp(); 3])
}

/// Run summary written next to CSV snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub length: f64,
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    pub t: f64,
    pub dealias: bool,
    pub forcing: Forcing,
    pub sup_u: f64,
    pub sup_m: f64,
    pub flow_identity_defect: f64,
}

/// CSV with columns `x,u,u_x,u_xx,u_t` followed by `extra` columns.
pub fn write_snapshot_csv<W: Write>(
    mut w: W,
    xs: &[f64],
    jets: &JetFields,
    extra: &[(String, Vec<f64>)],
) -> Result<(), SolverError> {
    write!(w, "x,u,u_x,u_xx,u_t")?;
    for (name, _) in extra {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for i in 0..xs.len() {
        write!(w, "{},{},{},{},{}", xs[i], jets.u[i], jets.u_x[i], jets.u_xx[i], jets.u_t[i])?;
        for (_, col) in extra {
            match col.get(i) {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}
