mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pss_core::chsolver::{
    self, conservation_residual, flow_identity_defect, write_snapshot_csv, Forcing, Grid1D, RunMetadata, SineMode,
    Solver, SolverConfig, SolverError, SolverState,
};
use pss_core::evalbridge::{compile, Bindings};
use pss_core::immersion::{
    codazzi_residuals, curvature_diagnostics, mu0_coeffs, mu0_strip, munz_solve, munz_solve_interval,
    write_coeffs_csv, ImmersionParams, OdeOptions, SffCoeffs,
};
use pss_core::pseudopot::{self, Family};
use pss_core::pssforms::{self, Branch};
use pss_core::report::{CheckEntry, Report};
use pss_core::surface3d::{
    export_obj, integrate_frame, mesh_diagnostics, path_commutator, JetGrid, SurfaceError, SurfaceOptions,
};

use config::{parse_sine, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "pss", version, about = "Pseudospherical-surface checks, solver and immersion tools")]
struct Cli {
    /// TOML file with run settings; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    over: Overrides,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exact symbolic checks of the one-forms, pseudo-potentials and conservation laws.
    Verify {
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the periodic solver and write CSV snapshots into a directory.
    Solve {
        #[arg(long)]
        out: PathBuf,
    },
    /// As `solve`, with conservation-law residual columns and checks.
    Monitor {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Second-fundamental-form coefficients on an x-interval.
    Immerse {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Integrate the moving frame over a solver rectangle and export an OBJ mesh.
    Surface {
        #[arg(long)]
        out: PathBuf,
        /// Diagnostics JSON (defaults to the OBJ path with a `.json` extension).
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true)]
    length: Option<f64>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    #[arg(long, global = true)]
    snapshots: Option<usize>,
    /// Initial condition component `mode:amplitude[:phase]`; repeatable.
    #[arg(long, global = true, value_parser = parse_sine)]
    ic: Vec<SineMode>,
    #[arg(long = "no-dealias", global = true)]
    no_dealias: bool,
    /// Add the manufactured forcing and start from its exact solution.
    #[arg(long, global = true)]
    forcing: bool,
    #[arg(long, global = true, allow_negative_numbers = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    eps: Option<String>,
    #[arg(long = "neg-k", global = true, value_delimiter = ',')]
    neg_k: Option<Vec<u32>>,
    #[arg(long = "pos-k", global = true, value_delimiter = ',')]
    pos_k: Option<Vec<u32>>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long = "C", global = true, allow_negative_numbers = true)]
    c_strip: Option<f64>,
    /// Sign of the square root in `a`.
    #[arg(long, global = true)]
    sign: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    x0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    b0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    span: Option<f64>,
    #[arg(long, global = true)]
    nodes: Option<usize>,
    #[arg(long = "x-min", global = true, allow_negative_numbers = true)]
    x_min: Option<f64>,
    #[arg(long = "x-max", global = true, allow_negative_numbers = true)]
    x_max: Option<f64>,
    #[arg(long = "stride", global = true)]
    stride: Option<usize>,
    #[arg(long, global = true)]
    kmax: Option<u32>,
    #[arg(long = "tol-conservation", global = true)]
    tol_conservation: Option<f64>,
    #[arg(long = "tol-codazzi", global = true)]
    tol_codazzi: Option<f64>,
    #[arg(long = "tol-gauss", global = true)]
    tol_gauss: Option<f64>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident => $g:ident),* $(,)?) => {
                $(if let Some(v) = self.$f.clone() { c.$g = v; })*
            };
        }
        set!(
            length => length, n => n, t_end => t_end, snapshots => snapshots, mu => mu, eps => eps,
            neg_k => monitor_neg_k, pos_k => monitor_pos_k, beta => beta, c_strip => c_strip,
            sign => a_sign, x0 => x0, b0 => b0, span => span, nodes => nodes, stride => surface_stride,
            kmax => kmax, tol_conservation => tol_conservation, tol_codazzi => tol_codazzi,
            tol_gauss => tol_gauss,
        );
        if self.dt.is_some() {
            c.dt = self.dt;
        }
        if self.x_min.is_some() {
            c.x_min = self.x_min;
        }
        if self.x_max.is_some() {
            c.x_max = self.x_max;
        }
        if !self.ic.is_empty() {
            c.ic = self.ic.clone();
        }
        if self.no_dealias {
            c.dealias = false;
        }
        if self.forcing {
            c.forcing = true;
        }
    }
}

#[derive(Serialize)]
struct JsonReport<'a> {
    command: &'a str,
    all_pass: bool,
    entries: &'a [CheckEntry],
}

enum Outcome {
    Pass,
    Fail,
    Guard(String),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Ok(Outcome::Guard(msg)) => {
            eprintln!("guard stop: {msg}");
            ExitCode::from(3)
        }
        Err(e) => {
            let guard = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<SolverError>(), Some(SolverError::BlowUp { .. })));
            eprintln!("error: {e:#}");
            ExitCode::from(if guard { 3 } else { 2 })
        }
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PSS_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("PSS_THREADS = `{v}` is not a count"))?;
        if n == 0 {
            bail!("PSS_THREADS must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cli.over.apply(&mut cfg);
    cfg.validate()?;
    match &cli.cmd {
        Cmd::Verify { report } => cmd_verify(&cfg, report.as_deref()),
        Cmd::Solve { out } => cmd_solve(&cfg, out, false, None),
        Cmd::Monitor { out, report } => cmd_solve(&cfg, out, true, report.as_deref()),
        Cmd::Immerse { out, report } => cmd_immerse(&cfg, out, report.as_deref()),
        Cmd::Surface { out, report } => cmd_surface(&cfg, out, report.as_deref()),
    }
}

fn branch(s: &str, what: &str) -> Result<Branch> {
    s.parse::<Branch>().map_err(|e| anyhow::anyhow!("{what}: {e}"))
}

fn write_report(path: &Path, command: &str, report: &Report) -> Result<()> {
    let doc = JsonReport {
        command,
        all_pass: report.all_pass(),
        entries: &report.entries,
    };
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn summarize(command: &str, report: &Report) -> Outcome {
    let failed: Vec<&CheckEntry> = report.entries.iter().filter(|e| !e.pass).collect();
    println!("{command}: {} checks, {} failed", report.entries.len(), failed.len());
    for e in &failed {
        println!("  FAIL {} [{}] residual {:e} > {:e}", e.name, e.anchor, e.residual, e.tolerance);
    }
    if failed.is_empty() {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn cmd_verify(cfg: &RunConfig, report_path: Option<&Path>) -> Result<Outcome> {
    let mut report = Report::new();
    for b in [Branch::Plus, Branch::Minus] {
        report.extend(pssforms::verify(b)?);
    }
    report.extend(pseudopot::verify(cfg.kmax)?);

    // The exponential family solves the equation identically.
    let xs: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    let pde = compile(&pss_core::jetring::pde_residual(), &Bindings::default())?;
    let jets = chsolver::exponential_family_jets(&xs, 1.7, -0.4);
    let res = pss_core::evalbridge::eval_field(&pde, &jets, &xs)?;
    report.push(CheckEntry::numeric("exponential_family_residual", "exponential-family", chsolver::sup_norm(&res), 1e-12));

    if let Some(p) = report_path {
        write_report(p, "verify", &report)?;
    }
    Ok(summarize("verify", &report))
}

fn solver_from(cfg: &RunConfig) -> Result<(Solver, SolverState)> {
    let grid = Grid1D::new(cfg.length, cfg.n)?;
    let forcing = if cfg.forcing {
        Forcing::Manufactured { amplitude: cfg.forcing_amplitude }
    } else {
        Forcing::None
    };
    let solver = Solver::new(
        grid,
        SolverConfig {
            dt: cfg.dt,
            dealias: cfg.dealias,
            forcing,
        },
    )?;
    let state = if cfg.forcing {
        solver.initial_state(&solver.manufactured_u(0.0), 0.0)?
    } else {
        solver.state_from_sines(&cfg.ic)?
    };
    Ok((solver, state))
}

fn laws(cfg: &RunConfig) -> Vec<(Family, u32)> {
    let neg = cfg.monitor_neg_k.iter().map(|&k| (Family::Neg, k));
    let pos = cfg.monitor_pos_k.iter().map(|&k| (Family::Pos, k));
    neg.chain(pos).collect()
}

fn cmd_solve(cfg: &RunConfig, out: &Path, monitor: bool, report_path: Option<&Path>) -> Result<Outcome> {
    let (solver, mut state) = solver_from(cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let xs = solver.nodes().to_vec();
    let window = cfg.monitor_window.map(|[a, b]| (a, b));
    let mut report = Report::new();
    let mut meta = Vec::new();
    let mut total_steps = 0;

    for snap in 0..=cfg.snapshots {
        let target = cfg.t_end * snap as f64 / cfg.snapshots as f64;
        let dt = cfg.dt.unwrap_or_else(|| solver.default_dt(&state));
        total_steps += solver.advance_to(&mut state, target)?;
        let jets = solver.jet_snapshot(&state);

        let (defect, phi_sup) = flow_identity_defect(&jets);
        report.push(CheckEntry::numeric(
            format!("flow_identity_s{snap:03}"),
            "flow-identity",
            defect,
            cfg.tol_flow * (1.0 + phi_sup),
        ));

        let mut extra: Vec<(String, Vec<f64>)> = Vec::new();
        if cfg.forcing {
            extra.push(("u_exact".into(), solver.manufactured_u(state.t)));
        }
        if monitor {
            for (family, k) in laws(cfg) {
                let r = conservation_residual(&xs, &jets, family, k, window)?;
                let label = format!("{}{k}", family.label());
                report.push(
                    CheckEntry::numeric(
                        format!("conservation_{label}_s{snap:03}"),
                        "conservation-law",
                        r.normalized_sup_norm,
                        cfg.tol_conservation,
                    )
                    .with_detail(format!("raw sup {:e}, integral drift {:e}", r.sup_norm, r.integral_drift)),
                );
                let mut col = vec![f64::NAN; xs.len()];
                for (x, v) in r.xs.iter().zip(&r.field) {
                    if let Some(i) = xs.iter().position(|p| p == x) {
                        col[i] = *v;
                    }
                }
                extra.push((format!("res_{label}"), col));
            }
        }

        let path = out.join(format!("snapshot_{snap:03}.csv"));
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        write_snapshot_csv(&mut w, &xs, &jets, &extra)?;
        w.flush()?;

        meta.push(RunMetadata {
            length: cfg.length,
            n: cfg.n,
            dt,
            steps: total_steps,
            t: state.t,
            dealias: cfg.dealias,
            forcing: solver.config().forcing,
            sup_u: chsolver::sup_norm(&jets.u),
            sup_m: chsolver::sup_norm(&state.m),
            flow_identity_defect: defect,
        });
    }

    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    let command = if monitor { "monitor" } else { "solve" };
    write_report(&report_path.map(Path::to_path_buf).unwrap_or_else(|| out.join("report.json")), command, &report)?;
    Ok(summarize(command, &report))
}

fn immersion_params(cfg: &RunConfig) -> Result<ImmersionParams> {
    let p = ImmersionParams {
        mu: cfg.mu,
        beta: cfg.beta,
        c_strip: cfg.c_strip,
        a_sign: branch(&cfg.a_sign, "sign")?,
        eps: branch(&cfg.eps, "eps")?,
    };
    p.validate()?;
    Ok(p)
}

fn ode_options(cfg: &RunConfig, nodes: usize) -> OdeOptions {
    OdeOptions {
        rtol: cfg.ode_rtol,
        atol: cfg.ode_atol,
        nodes,
        ..Default::default()
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Coefficients on `[lo, hi]` (or the configured default interval).
fn coefficients(cfg: &RunConfig, params: &ImmersionParams, range: Option<(f64, f64)>, nodes: usize) -> Result<SffCoeffs> {
    if nodes < 2 {
        bail!("need at least two nodes");
    }
    if params.mu == 0.0 {
        let (slo, shi) = mu0_strip(params.c_strip, params.beta)?;
        let inset = 1e-3 * (shi - slo);
        let (lo, hi) = range.unwrap_or((cfg.x_min.unwrap_or(slo + inset), cfg.x_max.unwrap_or(shi - inset)));
        if !(lo < hi) {
            bail!("empty interval [{lo}, {hi}]");
        }
        Ok(mu0_coeffs(params.c_strip, params.beta, params.a_sign, &linspace(lo, hi, nodes))?)
    } else {
        let range = range.or(match (cfg.x_min, cfg.x_max) {
            (None, None) => None,
            (a, b) => Some((a.unwrap_or(cfg.x0), b.unwrap_or(cfg.x0))),
        });
        let opts = ode_options(cfg, nodes);
        Ok(match range {
            Some((lo, hi)) => munz_solve_interval(params, cfg.x0, cfg.b0, lo, hi, &opts)?,
            None => munz_solve(params, cfg.x0, cfg.b0, cfg.span, &opts)?,
        })
    }
}

fn retolerance(report: &mut Report, name: &str, tol: f64) {
    for e in report.entries.iter_mut().filter(|e| e.name == name) {
        e.tolerance = tol;
        e.pass = e.residual.is_finite() && e.residual <= tol;
    }
}

fn cmd_immerse(cfg: &RunConfig, out: &Path, report_path: Option<&Path>) -> Result<Outcome> {
    let params = immersion_params(cfg)?;
    let coeffs = coefficients(cfg, &params, None, cfg.nodes)?;
    let mut report = codazzi_residuals(&coeffs, None, cfg.tol_codazzi)?;
    let mut curv = curvature_diagnostics(&coeffs).report;
    retolerance(&mut curv, "gauss_equation", cfg.tol_gauss);
    report.extend(curv);

    let f = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(f);
    write_coeffs_csv(&mut w, &coeffs)?;
    w.flush()?;
    if let Some(p) = report_path {
        write_report(p, "immerse", &report)?;
    }
    let outcome = summarize("immerse", &report);
    if let Some(stop) = coeffs.stop {
        return Ok(Outcome::Guard(format!("{:?} at x = {}", stop.reason, stop.x)));
    }
    Ok(outcome)
}

#[derive(Serialize)]
struct SurfaceSummary<'a> {
    command: &'a str,
    all_pass: bool,
    vertices: usize,
    masked: usize,
    curvature_min: f64,
    curvature_max: f64,
    curvature_mean: f64,
    curvature_samples: usize,
    metric_mismatch: f64,
    orthonormality_drift: f64,
    commutator_position: f64,
    commutator_frame: f64,
    entries: &'a [CheckEntry],
}

fn cmd_surface(cfg: &RunConfig, out: &Path, report_path: Option<&Path>) -> Result<Outcome> {
    let params = immersion_params(cfg)?;
    let (solver, state) = solver_from(cfg)?;
    let grid = JetGrid::from_solver(
        &solver,
        &state,
        cfg.surface_first,
        cfg.surface_nx,
        cfg.surface_nt,
        cfg.surface_dt,
    )?;
    let (lo, hi) = (grid.xs[0], grid.xs[grid.xs.len() - 1]);
    let coeffs = coefficients(cfg, &params, Some((lo, hi)), grid.xs.len())?;
    if let Some(stop) = coeffs.stop {
        return Ok(Outcome::Guard(format!("{:?} at x = {}", stop.reason, stop.x)));
    }
    let opts = SurfaceOptions {
        stride_x: cfg.surface_stride,
        stride_t: cfg.surface_stride,
        gauss_tol: cfg.tol_gauss,
        ..Default::default()
    };
    let mesh = match integrate_frame(&grid, &coeffs, params.mu, params.eps, &opts) {
        Err(SurfaceError::GaussViolation { defect, tol }) => {
            let mut r = Report::new();
            r.push(CheckEntry::numeric("gauss_equation", "gauss-equation", defect, tol));
            return Ok(summarize("surface", &r));
        }
        other => other?,
    };
    let (cpos, cframe) = path_commutator(&grid, &coeffs, params.mu, params.eps, &opts)?;
    let diag = mesh_diagnostics(&mesh, (cfg.curvature_band[0], cfg.curvature_band[1]), cfg.tol_metric);
    if !diag.degenerate {
        export_obj(&mesh, out)?;
    }

    let report = &diag.report;
    let summary = SurfaceSummary {
        command: "surface",
        all_pass: report.all_pass(),
        vertices: mesh.positions.len(),
        masked: mesh.mask.iter().filter(|m| !**m).count(),
        curvature_min: diag.curvature_min,
        curvature_max: diag.curvature_max,
        curvature_mean: diag.curvature_mean,
        curvature_samples: diag.curvature_samples,
        metric_mismatch: diag.metric_mismatch,
        orthonormality_drift: diag.orthonormality_drift,
        commutator_position: cpos,
        commutator_frame: cframe,
        entries: &report.entries,
    };
    let json_path = report_path.map(Path::to_path_buf).unwrap_or_else(|| out.with_extension("json"));
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    Ok(summarize("surface", report))
}
