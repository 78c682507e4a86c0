//! Reconstruction of the immersed surface by transporting an orthonormal
//! frame along the one-forms, with mesh diagnostics and OBJ export.
//!
//! With `e1, e2` tangent and `e3` normal:
//! `dX = w1 e1 + w2 e2`, `de1 = w3 e2 + w13 e3`, `de2 = -w3 e1 + w23 e3`,
//! `de3 = -w13 e1 - w23 e2`, where `w13 = a w1 + b w2`, `w23 = b w1 + c w2`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chsolver::{Solver, SolverError, SolverState};
use crate::evalbridge::{JetFields, JetPoint};
use crate::immersion::{CompiledForms, FormValues, ImmersionError, SffCoeffs};
use crate::pssforms::Branch;
use crate::report::{CheckEntry, Report};

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("invalid rectangle: {0}")]
    Rectangle(String),
    #[error("coefficients fail the Gauss equation: defect {defect:e} > {tol:e}")]
    GaussViolation { defect: f64, tol: f64 },
    #[error("mesh has no unmasked quad")]
    EmptyMesh,
    #[error("malformed OBJ line {line}: {text}")]
    ObjParse { line: usize, text: String },
    #[error(transparent)]
    Immersion(#[from] ImmersionError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Jets sampled on a uniform `(x, t)` lattice. `jets[it]` holds the slice
/// at `ts[it]`, sampled at `xs`.
#[derive(Clone, Debug, PartialEq)]
pub struct JetGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    pub jets: Vec<JetFields>,
}

impl JetGrid {
    pub fn from_fn<F: Fn(f64, f64) -> JetPoint>(xs: &[f64], ts: &[f64], f: F) -> Self {
        let jets = ts
            .iter()
            .map(|&t| {
                let mut s = JetFields::zeros(xs.len());
                for (i, &x) in xs.iter().enumerate() {
                    let p = f(x, t);
                    s.u[i] = p[0];
                    s.u_x[i] = p[1];
                    s.u_xx[i] = p[2];
                    s.u_xxx[i] = p[3];
                    s.u_t[i] = p[4];
                    s.u_xt[i] = p[5];
                    s.u_xxt[i] = p[6];
                }
                s
            })
            .collect();
        Self {
            xs: xs.to_vec(),
            ts: ts.to_vec(),
            jets,
        }
    }

    /// Samples a periodic solver run at grid nodes `first + j` (`j < nx`,
    /// wrapped periodically, so `first` may be negative) and at times
    /// `t0 + k * dt_sample` (`k < nt`).
    pub fn from_solver(
        solver: &Solver,
        state: &SolverState,
        first: i64,
        nx: usize,
        nt: usize,
        dt_sample: f64,
    ) -> Result<Self, SurfaceError> {
        if nx == 0 || nt == 0 {
            return Err(SurfaceError::Rectangle("empty sample lattice".into()));
        }
        let grid = solver.grid();
        let n = grid.n as i64;
        if nx as i64 > n {
            return Err(SurfaceError::Rectangle(format!("{nx} x-samples exceed one period of {n} nodes")));
        }
        let idx: Vec<usize> = (0..nx as i64).map(|j| (first + j).rem_euclid(n) as usize).collect();
        let xs: Vec<f64> = (0..nx as i64).map(|j| (first + j) as f64 * grid.h()).collect();
        let mut st = state.clone();
        let t0 = st.t;
        let mut ts = Vec::with_capacity(nt);
        let mut jets = Vec::with_capacity(nt);
        for k in 0..nt {
            let t = t0 + k as f64 * dt_sample;
            solver.advance_to(&mut st, t)?;
            let full = solver.jet_snapshot(&st);
            let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            jets.push(JetFields {
                u: pick(&full.u),
                u_x: pick(&full.u_x),
                u_xx: pick(&full.u_xx),
                u_xxx: pick(&full.u_xxx),
                u_t: pick(&full.u_t),
                u_xt: pick(&full.u_xt),
                u_xxt: pick(&full.u_xxt),
            });
            ts.push(t);
        }
        Ok(Self { xs, ts, jets })
    }

    fn point(&self, it: usize, ix: usize) -> JetPoint {
        self.jets[it].point(ix)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceOptions {
    /// Mesh step in x is `2 * stride_x` lattice cells; the middle sample is
    /// the Runge-Kutta midpoint. Likewise in t.
    pub stride_x: usize,
    pub stride_t: usize,
    pub reortho_every: usize,
    /// Vertices with `|Delta_12|` below this are masked.
    pub mask_eps: f64,
    pub gauss_tol: f64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            stride_x: 1,
            stride_t: 1,
            reortho_every: 16,
            mask_eps: 1e-6,
            gauss_tol: 1e-10,
        }
    }
}

/// Position and frame; the rows of `frame` are `e1, e2, e3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameState {
    pub x: Vector3<f64>,
    pub frame: Matrix3<f64>,
}

impl FrameState {
    pub fn seed() -> Self {
        Self {
            x: Vector3::zeros(),
            frame: Matrix3::identity(),
        }
    }

    pub fn orthonormality_defect(&self) -> f64 {
        (self.frame * self.frame.transpose() - Matrix3::identity()).amax()
    }

    /// Nearest orthogonal matrix (polar factor).
    fn reorthonormalize(&mut self) {
        let svd = self.frame.svd(true, true);
        if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
            self.frame = u * v_t;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    /// Vertex coordinates along each axis.
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// Row-major over `(t, x)`: index `it * xs.len() + ix`.
    pub positions: Vec<Vector3<f64>>,
    pub frames: Vec<Matrix3<f64>>,
    /// `true` for generic (kept) vertices.
    pub mask: Vec<bool>,
    /// `f11, f12, f21, f22, f31, f32` at each vertex.
    pub forms: Vec<FormValues>,
}

impl SurfaceMesh {
    pub fn nx(&self) -> usize {
        self.xs.len()
    }

    pub fn nt(&self) -> usize {
        self.ts.len()
    }

    pub fn index(&self, it: usize, ix: usize) -> usize {
        it * self.nx() + ix
    }

    /// Quads whose four corners are unmasked, as lower-left `(it, ix)`.
    pub fn quads(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for it in 0..self.nt().saturating_sub(1) {
            for ix in 0..self.nx().saturating_sub(1) {
                let ok = [(it, ix), (it, ix + 1), (it + 1, ix), (it + 1, ix + 1)]
                    .iter()
                    .all(|&(a, b)| self.mask[self.index(a, b)]);
                if ok {
                    out.push((it, ix));
                }
            }
        }
        out
    }
}

/// Form components and coefficients needed for one transport step.
struct Transport<'a> {
    grid: &'a JetGrid,
    coeffs: &'a SffCoeffs,
    forms: CompiledForms,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    T,
}

impl Transport<'_> {
    /// Generator `(velocity in frame coordinates, connection matrix)` at a lattice point.
    fn generator(&self, it: usize, ix: usize, axis: Axis) -> Result<(Vector3<f64>, Matrix3<f64>), SurfaceError> {
        let x = self.grid.xs[ix];
        let f = self.forms.values(x, &self.grid.point(it, ix))?;
        let p = self.coeffs.at(x)?;
        let (w1, w2, w3) = match axis {
            Axis::X => (f[0], f[2], f[4]),
            Axis::T => (f[1], f[3], f[5]),
        };
        let w13 = p.a * w1 + p.b * w2;
        let w23 = p.b * w1 + p.c * w2;
        let conn = Matrix3::new(0.0, w3, w13, -w3, 0.0, w23, -w13, -w23, 0.0);
        Ok((Vector3::new(w1, w2, 0.0), conn))
    }

    /// One RK4 step between lattice points `p0` and `p0 + 2 s` along `axis`.
    fn step(&self, st: &FrameState, p0: (usize, usize), s: usize, axis: Axis) -> Result<FrameState, SurfaceError> {
        let (it, ix) = p0;
        let at = |k: usize| match axis {
            Axis::X => (it, ix + k),
            Axis::T => (it + k, ix),
        };
        let h = match axis {
            Axis::X => self.grid.xs[ix + 2 * s] - self.grid.xs[ix],
            Axis::T => self.grid.ts[it + 2 * s] - self.grid.ts[it],
        };
        let g0 = self.generator(at(0).0, at(0).1, axis)?;
        let g1 = self.generator(at(s).0, at(s).1, axis)?;
        let g2 = self.generator(at(2 * s).0, at(2 * s).1, axis)?;
        let rhs = |g: &(Vector3<f64>, Matrix3<f64>), y: &FrameState| -> FrameState {
            FrameState {
                x: y.frame.transpose() * g.0,
                frame: g.1 * y.frame,
            }
        };
        let add = |y: &FrameState, k: &FrameState, a: f64| FrameState {
            x: y.x + k.x * a,
            frame: y.frame + k.frame * a,
        };
        let k1 = rhs(&g0, st);
        let k2 = rhs(&g1, &add(st, &k1, 0.5 * h));
        let k3 = rhs(&g1, &add(st, &k2, 0.5 * h));
        let k4 = rhs(&g2, &add(st, &k3, h));
        Ok(FrameState {
            x: st.x + (k1.x + (k2.x + k3.x) * 2.0 + k4.x) * (h / 6.0),
            frame: st.frame + (k1.frame + (k2.frame + k3.frame) * 2.0 + k4.frame) * (h / 6.0),
        })
    }

    /// Transports `st` along `axis` from `p0` through `steps` steps,
    /// returning the state at every vertex including the start.
    fn path(
        &self,
        st: FrameState,
        p0: (usize, usize),
        s: usize,
        steps: usize,
        axis: Axis,
        reortho: usize,
    ) -> Result<Vec<FrameState>, SurfaceError> {
        let mut out = Vec::with_capacity(steps + 1);
        let mut cur = st;
        out.push(cur);
        let mut p = p0;
        for k in 1..=steps {
            cur = self.step(&cur, p, s, axis)?;
            if reortho > 0 && k % reortho == 0 {
                cur.reorthonormalize();
            }
            p = match axis {
                Axis::X => (p.0, p.1 + 2 * s),
                Axis::T => (p.0 + 2 * s, p.1),
            };
            out.push(cur);
        }
        Ok(out)
    }
}

fn vertex_counts(grid: &JetGrid, opts: &SurfaceOptions) -> Result<(usize, usize), SurfaceError> {
    if opts.stride_x == 0 || opts.stride_t == 0 {
        return Err(SurfaceError::Rectangle("strides must be positive".into()));
    }
    let (nx, nt) = (grid.xs.len(), grid.ts.len());
    if nx == 0 || nt == 0 {
        return Err(SurfaceError::Rectangle("empty lattice".into()));
    }
    let (cx, ct) = (2 * opts.stride_x, 2 * opts.stride_t);
    if (nx - 1) % cx != 0 || (nt - 1) % ct != 0 {
        return Err(SurfaceError::Rectangle(format!(
            "lattice {nx} x {nt} is not a whole number of {cx} x {ct} cells"
        )));
    }
    Ok(((nx - 1) / cx + 1, (nt - 1) / ct + 1))
}

fn transport<'a>(grid: &'a JetGrid, coeffs: &'a SffCoeffs, mu: f64, eps: Branch, opts: &SurfaceOptions) -> Result<Transport<'a>, SurfaceError> {
    let defect = coeffs.gauss_defect();
    if !(defect <= opts.gauss_tol) {
        return Err(SurfaceError::GaussViolation {
            defect,
            tol: opts.gauss_tol,
        });
    }
    Ok(Transport {
        grid,
        coeffs,
        forms: CompiledForms::new(mu, eps)?,
    })
}

/// Integrates along the first row, then up every column (columns in
/// parallel). The seed is the origin with the identity frame.
pub fn integrate_frame(
    grid: &JetGrid,
    coeffs: &SffCoeffs,
    mu: f64,
    eps: Branch,
    opts: &SurfaceOptions,
) -> Result<SurfaceMesh, SurfaceError> {
    let (nvx, nvt) = vertex_counts(grid, opts)?;
    let tr = transport(grid, coeffs, mu, eps, opts)?;
    let (sx, st) = (opts.stride_x, opts.stride_t);
    let row = tr.path(FrameState::seed(), (0, 0), sx, nvx - 1, Axis::X, opts.reortho_every)?;
    let columns: Vec<Vec<FrameState>> = row
        .par_iter()
        .enumerate()
        .map(|(j, seed)| tr.path(*seed, (0, 2 * sx * j), st, nvt - 1, Axis::T, opts.reortho_every))
        .collect::<Result<_, _>>()?;

    let xs: Vec<f64> = (0..nvx).map(|j| grid.xs[2 * sx * j]).collect();
    let ts: Vec<f64> = (0..nvt).map(|k| grid.ts[2 * st * k]).collect();
    let n = nvx * nvt;
    let mut positions = Vec::with_capacity(n);
    let mut frames = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    let mut forms = Vec::with_capacity(n);
    for k in 0..nvt {
        for (j, col) in columns.iter().enumerate() {
            let (it, ix) = (2 * st * k, 2 * sx * j);
            let pt = grid.point(it, ix);
            let x = grid.xs[ix];
            positions.push(col[k].x);
            frames.push(col[k].frame);
            mask.push(tr.forms.delta12(x, &pt)?.abs() >= opts.mask_eps);
            forms.push(tr.forms.values(x, &pt)?);
        }
    }
    Ok(SurfaceMesh {
        xs,
        ts,
        positions,
        frames,
        mask,
        forms,
    })
}

/// Distance between the far-corner positions reached by the two orders of
/// integration (x then t, and t then x), plus the frame discrepancy.
pub fn path_commutator(
    grid: &JetGrid,
    coeffs: &SffCoeffs,
    mu: f64,
    eps: Branch,
    opts: &SurfaceOptions,
) -> Result<(f64, f64), SurfaceError> {
    let (nvx, nvt) = vertex_counts(grid, opts)?;
    let tr = transport(grid, coeffs, mu, eps, opts)?;
    let (sx, st) = (opts.stride_x, opts.stride_t);
    let r = opts.reortho_every;
    let row = tr.path(FrameState::seed(), (0, 0), sx, nvx - 1, Axis::X, r)?;
    let xt = *tr.path(row[nvx - 1], (0, 2 * sx * (nvx - 1)), st, nvt - 1, Axis::T, r)?.last().unwrap();
    let col = tr.path(FrameState::seed(), (0, 0), st, nvt - 1, Axis::T, r)?;
    let tx = *tr.path(col[nvt - 1], (2 * st * (nvt - 1), 0), sx, nvx - 1, Axis::X, r)?.last().unwrap();
    Ok(((xt.x - tx.x).norm(), (xt.frame - tx.frame).amax()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshDiagnostics {
    pub degenerate: bool,
    /// Relative Frobenius mismatch between the mesh metric and `w1^2 + w2^2`.
    pub metric_mismatch: f64,
    pub curvature_min: f64,
    pub curvature_max: f64,
    pub curvature_mean: f64,
    pub curvature_samples: usize,
    pub orthonormality_drift: f64,
    pub report: Report,
}

/// Metric and curvature from central differences of vertex positions at
/// interior vertices whose 3x3 neighbourhood is unmasked.
pub fn mesh_diagnostics(mesh: &SurfaceMesh, k_band: (f64, f64), metric_tol: f64) -> MeshDiagnostics {
    let drift = mesh
        .frames
        .iter()
        .map(|f| (f * f.transpose() - Matrix3::identity()).amax())
        .fold(0.0f64, f64::max);
    let (nx, nt) = (mesh.nx(), mesh.nt());
    let mut num = 0.0;
    let mut den = 0.0;
    let mut ks = Vec::new();
    if nx >= 3 && nt >= 3 {
        let hx = mesh.xs[1] - mesh.xs[0];
        let ht = mesh.ts[1] - mesh.ts[0];
        for it in 1..nt - 1 {
            for ix in 1..nx - 1 {
                let nb = (0..3).all(|a| (0..3).all(|b| mesh.mask[mesh.index(it + a - 1, ix + b - 1)]));
                if !nb {
                    continue;
                }
                let p = |a: usize, b: usize| mesh.positions[mesh.index(a, b)];
                let c = p(it, ix);
                let xu = (p(it, ix + 1) - p(it, ix - 1)) / (2.0 * hx);
                let xv = (p(it + 1, ix) - p(it - 1, ix)) / (2.0 * ht);
                let xuu = (p(it, ix + 1) - c * 2.0 + p(it, ix - 1)) / (hx * hx);
                let xvv = (p(it + 1, ix) - c * 2.0 + p(it - 1, ix)) / (ht * ht);
                let xuv = (p(it + 1, ix + 1) - p(it + 1, ix - 1) - p(it - 1, ix + 1) + p(it - 1, ix - 1)) / (4.0 * hx * ht);
                let (e, f, g) = (xu.dot(&xu), xu.dot(&xv), xv.dot(&xv));
                let w = mesh.forms[mesh.index(it, ix)];
                let (e0, f0, g0) = (
                    w[0] * w[0] + w[2] * w[2],
                    w[0] * w[1] + w[2] * w[3],
                    w[1] * w[1] + w[3] * w[3],
                );
                num += (e - e0).powi(2) + 2.0 * (f - f0).powi(2) + (g - g0).powi(2);
                den += e0 * e0 + 2.0 * f0 * f0 + g0 * g0;
                let normal = xu.cross(&xv);
                let nn = normal.norm();
                if nn == 0.0 {
                    continue;
                }
                let n = normal / nn;
                let (l, m, nv) = (xuu.dot(&n), xuv.dot(&n), xvv.dot(&n));
                ks.push((l * nv - m * m) / (e * g - f * f));
            }
        }
    }
    let mut report = Report::new();
    report.push(CheckEntry::numeric("frame_orthonormality", "surface-frame", drift, 1e-8));
    if ks.is_empty() {
        report.push(CheckEntry::flag(
            "mesh_faces",
            "surface-frame",
            false,
            Some("degenerate, no faces".into()),
        ));
        return MeshDiagnostics {
            degenerate: true,
            metric_mismatch: f64::NAN,
            curvature_min: f64::NAN,
            curvature_max: f64::NAN,
            curvature_mean: f64::NAN,
            curvature_samples: 0,
            orthonormality_drift: drift,
            report,
        };
    }
    let mismatch = (num / den).sqrt();
    let kmin = ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kmean = ks.iter().sum::<f64>() / ks.len() as f64;
    report.push(CheckEntry::numeric("metric_mismatch", "metric", mismatch, metric_tol));
    let band_dev = (kmin - k_band.0).min(0.0).abs().max((kmax - k_band.1).max(0.0));
    report.push(
        CheckEntry::numeric("gaussian_curvature_band", "gaussian-curvature", band_dev, 0.0)
            .with_detail(format!("K in [{kmin:.6}, {kmax:.6}], mean {kmean:.6}, {} samples", ks.len())),
    );
    MeshDiagnostics {
        degenerate: false,
        metric_mismatch: mismatch,
        curvature_min: kmin,
        curvature_max: kmax,
        curvature_mean: kmean,
        curvature_samples: ks.len(),
        orthonormality_drift: drift,
        report,
    }
}

/// Wavefront OBJ text: unmasked vertices in row-major order, two triangles
/// per unmasked quad.
pub fn write_obj<W: Write>(mesh: &SurfaceMesh, mut w: W) -> Result<(), SurfaceError> {
    let quads = mesh.quads();
    if quads.is_empty() {
        return Err(SurfaceError::EmptyMesh);
    }
    let mut number = vec![0usize; mesh.positions.len()];
    let mut next = 1;
    for (i, p) in mesh.positions.iter().enumerate() {
        if mesh.mask[i] {
            writeln!(w, "v {:e} {:e} {:e}", p.x, p.y, p.z)?;
            number[i] = next;
            next += 1;
        }
    }
    for (it, ix) in quads {
        let a = number[mesh.index(it, ix)];
        let b = number[mesh.index(it, ix + 1)];
        let c = number[mesh.index(it + 1, ix + 1)];
        let d = number[mesh.index(it + 1, ix)];
        writeln!(w, "f {a} {b} {c}")?;
        writeln!(w, "f {a} {c} {d}")?;
    }
    Ok(())
}

pub fn export_obj(mesh: &SurfaceMesh, path: &Path) -> Result<(), SurfaceError> {
    let mut buf = Vec::new();
    write_obj(mesh, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl ObjData {
    /// Same line format as [`write_obj`], so a parsed export re-serializes
    /// to identical bytes.
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SurfaceError> {
        for v in &self.vertices {
            writeln!(w, "v {:e} {:e} {:e}", v[0], v[1], v[2])?;
        }
        for f in &self.faces {
            writeln!(w, "f {} {} {}", f[0], f[1], f[2])?;
        }
        Ok(())
    }
}

pub fn parse_obj(text: &str) -> Result<ObjData, SurfaceError> {
    let mut out = ObjData::default();
    for (n, line) in text.lines().enumerate() {
        let bad = || SurfaceError::ObjParse {
            line: n + 1,
            text: line.to_string(),
        };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it.map(|s| s.parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
                if v.len() != 3 {
                    return Err(bad());
                }
                out.vertices.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let f: Vec<usize> = it.map(|s| s.parse::<usize>()).collect::<Result<_, _>>().map_err(|_| bad())?;
                if f.len() != 3 || f.iter().any(|&i| i == 0) {
                    return Err(bad());
                }
                out.faces.push([f[0], f[1], f[2]]);
            }
            None => {}
            Some(s) if s.starts_with('#') => {}
            Some(_) => return Err(bad()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::immersion::mu0_coeffs;

    /// Jets of a smooth non-solution; only used where the structure
    /// equations are not needed.
    fn toy_grid(nx: usize, nt: usize) -> JetGrid {
        let xs: Vec<f64> = (0..nx).map(|i| -0.2 + 0.01 * i as f64).collect();
        let ts: Vec<f64> = (0..nt).map(|k| 0.01 * k as f64).collect();
        JetGrid::from_fn(&xs, &ts, |x, t| {
            let u = 1.0 + 0.3 * (x - t).sin();
            [u, 0.3 * (x - t).cos(), -0.3 * (x - t).sin(), -0.3 * (x - t).cos(), 0.0, 0.0, 0.0]
        })
    }

    fn coeffs_for(grid: &JetGrid) -> SffCoeffs {
        mu0_coeffs(5.0, 1.0, Branch::Plus, &grid.xs).unwrap()
    }

    #[test]
    fn single_point_mesh() {
        let g = toy_grid(1, 1);
        let c = coeffs_for(&g);
        let mesh = integrate_frame(&g, &c, 0.0, Branch::Plus, &SurfaceOptions::default()).unwrap();
        assert_eq!(mesh.positions.len(), 1);
        assert_eq!(mesh.positions[0], Vector3::zeros());
        assert_eq!(mesh.frames[0], Matrix3::identity());
        let d = mesh_diagnostics(&mesh, (-1.05, -0.95), 0.01);
        assert!(d.degenerate);
        assert_eq!(d.report.get("mesh_faces").unwrap().detail.as_deref(), Some("degenerate, no faces"));
    }

    #[test]
    fn rejects_bad_lattice_and_coefficients() {
        let g = toy_grid(4, 3);
        let c = coeffs_for(&g);
        assert!(matches!(
            integrate_frame(&g, &c, 0.0, Branch::Plus, &SurfaceOptions::default()),
            Err(SurfaceError::Rectangle(_))
        ));
        let g = toy_grid(3, 3);
        let mut c = coeffs_for(&g);
        c.c[0] += 1e-3;
        assert!(matches!(
            integrate_frame(&g, &c, 0.0, Branch::Plus, &SurfaceOptions::default()),
            Err(SurfaceError::GaussViolation { .. })
        ));
    }

    #[test]
    fn transport_stays_orthonormal() {
        let g = toy_grid(41, 21);
        let c = coeffs_for(&g);
        let opts = SurfaceOptions {
            reortho_every: 0,
            ..Default::default()
        };
        let mesh = integrate_frame(&g, &c, 0.0, Branch::Plus, &opts).unwrap();
        let d = mesh_diagnostics(&mesh, (-1.05, -0.95), 0.01);
        assert!(d.orthonormality_drift < 1e-8, "{}", d.orthonormality_drift);
    }

    fn flat_mesh(nx: usize, nt: usize) -> SurfaceMesh {
        let mut positions = Vec::new();
        for it in 0..nt {
            for ix in 0..nx {
                positions.push(Vector3::new(ix as f64 * 0.1, it as f64 / 3.0, 1e-7 * (ix * it) as f64));
            }
        }
        SurfaceMesh {
            xs: (0..nx).map(|i| i as f64).collect(),
            ts: (0..nt).map(|i| i as f64).collect(),
            frames: vec![Matrix3::identity(); nx * nt],
            mask: vec![true; nx * nt],
            forms: vec![[0.0; 6]; nx * nt],
            positions,
        }
    }

    #[test]
    fn obj_counts_and_round_trip() {
        let mesh = flat_mesh(2, 2);
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let obj = parse_obj(&text).unwrap();
        assert_eq!(obj.vertices.len(), 4);
        assert_eq!(obj.faces.len(), 2);
        for (v, p) in obj.vertices.iter().zip(&mesh.positions) {
            for k in 0..3 {
                assert_eq!(v[k].to_bits(), p[k].to_bits());
            }
        }
        let mut again = Vec::new();
        obj.write(&mut again).unwrap();
        assert_eq!(again, text.as_bytes());
    }

    #[test]
    fn masked_column_has_no_faces() {
        let mut mesh = flat_mesh(4, 3);
        for it in 0..3 {
            let i = mesh.index(it, 1);
            mesh.mask[i] = false;
        }
        let mut buf = Vec::new();
        write_obj(&mesh, &mut buf).unwrap();
        let obj = parse_obj(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(obj.vertices.len(), 9);
        // only the quads between columns 2 and 3 survive
        assert_eq!(obj.faces.len(), 2 * 2);
        for f in &obj.faces {
            assert!(f.iter().all(|&i| i <= obj.vertices.len()));
            let ps: Vec<[f64; 3]> = f.iter().map(|&i| obj.vertices[i - 1]).collect();
            let a = Vector3::from(ps[1]) - Vector3::from(ps[0]);
            let b = Vector3::from(ps[2]) - Vector3::from(ps[0]);
            assert!(a.cross(&b).norm() > 1e-6);
        }
        for i in 0..mesh.mask.len() {
            mesh.mask[i] = false;
        }
        assert!(matches!(write_obj(&mesh, Vec::new()), Err(SurfaceError::EmptyMesh)));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_obj("v 1 2\n").is_err());
        assert!(parse_obj("f 0 1 2\n").is_err());
        assert!(parse_obj("q\n").is_err());
        assert!(parse_obj("# comment\n\nv 1 2 3\n").is_ok());
    }
}
