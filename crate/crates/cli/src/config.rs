//! Run configuration: a flat TOML table whose keys mirror the command-line
//! flags. Flags win over file values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use pss_core::chsolver::SineMode;
use pss_core::pseudopot::Family;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub length: f64,
    pub n: usize,
    pub dt: Option<f64>,
    pub t_end: f64,
    pub snapshots: usize,
    pub ic: Vec<SineMode>,
    pub dealias: bool,
    pub forcing: bool,
    pub forcing_amplitude: f64,

    pub mu: f64,
    pub eps: String,

    pub monitor_neg_k: Vec<u32>,
    pub monitor_pos_k: Vec<u32>,
    pub monitor_window: Option<[f64; 2]>,

    pub beta: f64,
    pub c_strip: f64,
    pub a_sign: String,
    pub x0: f64,
    pub b0: f64,
    pub span: f64,
    pub nodes: usize,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,

    pub surface_first: i64,
    pub surface_nx: usize,
    pub surface_nt: usize,
    pub surface_dt: f64,
    pub surface_stride: usize,

    pub kmax: u32,
    pub tol_conservation: f64,
    pub tol_flow: f64,
    pub tol_gauss: f64,
    pub tol_codazzi: f64,
    pub tol_metric: f64,
    pub curvature_band: [f64; 2],
    pub ode_rtol: f64,
    pub ode_atol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            length: 2.0 * std::f64::consts::PI,
            n: 256,
            dt: None,
            t_end: 1.0,
            snapshots: 1,
            ic: vec![SineMode::new(1, 0.05, 0.0)],
            dealias: true,
            forcing: false,
            forcing_amplitude: 0.05,
            mu: 0.0,
            eps: "+".into(),
            monitor_neg_k: vec![2, 3, 4, 5],
            monitor_pos_k: vec![1, 2, 3, 4, 5],
            monitor_window: None,
            beta: 1.0,
            c_strip: 5.0,
            a_sign: "+".into(),
            x0: 0.0,
            b0: 1.5,
            span: 0.5,
            nodes: 201,
            x_min: None,
            x_max: None,
            surface_first: -96,
            surface_nx: 193,
            surface_nt: 121,
            surface_dt: 0.0025,
            surface_stride: 1,
            kmax: 5,
            tol_conservation: 1e-6,
            tol_flow: 1e-11,
            tol_gauss: 1e-10,
            tol_codazzi: 1e-8,
            tol_metric: 0.01,
            curvature_band: [-1.05, -0.95],
            ode_rtol: 1e-11,
            ode_atol: 1e-12,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 16 || !self.n.is_power_of_two() {
            bail!("n = {} must be a power of two >= 16", self.n);
        }
        if !(self.length > 0.0) {
            bail!("length must be positive");
        }
        if !(self.t_end >= 0.0) {
            bail!("t_end must be non-negative");
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                bail!("dt must be positive");
            }
        }
        if self.snapshots == 0 {
            bail!("snapshots must be at least 1");
        }
        for &k in &self.monitor_neg_k {
            Family::Neg.check_k(k)?;
        }
        for &k in &self.monitor_pos_k {
            Family::Pos.check_k(k)?;
        }
        if self.kmax < 2 {
            bail!("kmax must be at least 2");
        }
        Ok(())
    }
}

/// Parses `mode:amplitude[:phase]`.
pub fn parse_sine(s: &str) -> Result<SineMode, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(format!("expected mode:amplitude[:phase], got `{s}`"));
    }
    let mode = parts[0].trim().parse::<i64>().map_err(|e| format!("mode: {e}"))?;
    let amplitude = parts[1].trim().parse::<f64>().map_err(|e| format!("amplitude: {e}"))?;
    let phase = match parts.get(2) {
        Some(p) => p.trim().parse::<f64>().map_err(|e| format!("phase: {e}"))?,
        None => 0.0,
    };
    Ok(SineMode::new(mode, amplitude, phase))
}
