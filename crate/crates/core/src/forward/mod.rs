//! Frequency-domain anisotropic Maxwell solver on a box, realizing the
//! impedance maps with and without an obstacle, plus the Helmholtz
//! fundamental solution and magnetic layer potentials.

pub mod krylov;
pub mod layer;
pub mod yee;

use crate::error::{OdemError, Result};
use crate::od::Variant;
use crate::tensor::{invert3_guarded, Medium};
use krylov::{minres, HermitianOp, SolveStats};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use yee::{curl_e, curl_f, material_apply, EdgeField, FaceField, StaggeredGrid};

const C0: C64 = C64::new(0.0, 0.0);

/// Obstacle geometry with analytic membership and support function.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObstacleSpec {
    Ball {
        center: [f64; 3],
        radius: f64,
    },
    Ellipsoid {
        center: [f64; 3],
        semiaxes: [f64; 3],
        /// intrinsic z-y-z Euler angles, radians
        #[serde(default)]
        rotation: [f64; 3],
    },
    Box {
        center: [f64; 3],
        halfwidths: [f64; 3],
    },
}

impl ObstacleSpec {
    pub fn rotation_matrix(angles: &[f64; 3]) -> Matrix3<f64> {
        let rz = |a: f64| {
            Matrix3::new(
                a.cos(),
                -a.sin(),
                0.0,
                a.sin(),
                a.cos(),
                0.0,
                0.0,
                0.0,
                1.0,
            )
        };
        let ry = |a: f64| {
            Matrix3::new(
                a.cos(),
                0.0,
                a.sin(),
                0.0,
                1.0,
                0.0,
                -a.sin(),
                0.0,
                a.cos(),
            )
        };
        rz(angles[0]) * ry(angles[1]) * rz(angles[2])
    }

    pub fn inside(&self, x: &Vector3<f64>) -> bool {
        match self {
            ObstacleSpec::Ball { center, radius } => {
                (x - Vector3::from(*center)).norm_squared() < radius * radius
            }
            ObstacleSpec::Ellipsoid {
                center,
                semiaxes,
                rotation,
            } => {
                let r = Self::rotation_matrix(rotation);
                let d = r.transpose() * (x - Vector3::from(*center));
                (d.x / semiaxes[0]).powi(2)
                    + (d.y / semiaxes[1]).powi(2)
                    + (d.z / semiaxes[2]).powi(2)
                    < 1.0
            }
            ObstacleSpec::Box { center, halfwidths } => {
                let d = x - Vector3::from(*center);
                d.x.abs() < halfwidths[0] && d.y.abs() < halfwidths[1] && d.z.abs() < halfwidths[2]
            }
        }
    }

    /// Analytic support function h_D(rho) = inf_{x in D} x . rho.
    pub fn support(&self, rho: &Vector3<f64>) -> f64 {
        match self {
            ObstacleSpec::Ball { center, radius } => Vector3::from(*center).dot(rho) - radius,
            ObstacleSpec::Ellipsoid {
                center,
                semiaxes,
                rotation,
            } => {
                let r = Self::rotation_matrix(rotation);
                let q = r.transpose() * rho;
                let s = (q.x * semiaxes[0]).powi(2)
                    + (q.y * semiaxes[1]).powi(2)
                    + (q.z * semiaxes[2]).powi(2);
                Vector3::from(*center).dot(rho) - s.sqrt()
            }
            ObstacleSpec::Box { center, halfwidths } => {
                Vector3::from(*center).dot(rho)
                    - halfwidths[0] * rho.x.abs()
                    - halfwidths[1] * rho.y.abs()
                    - halfwidths[2] * rho.z.abs()
            }
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        match self {
            ObstacleSpec::Ball { radius, .. } => *radius,
            ObstacleSpec::Ellipsoid { semiaxes, .. } => {
                semiaxes.iter().cloned().fold(0.0, f64::max)
            }
            ObstacleSpec::Box { halfwidths, .. } => {
                (halfwidths[0].powi(2) + halfwidths[1].powi(2) + halfwidths[2].powi(2)).sqrt()
            }
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            ObstacleSpec::Ball { center, .. }
            | ObstacleSpec::Ellipsoid { center, .. }
            | ObstacleSpec::Box { center, .. } => Vector3::from(*center),
        }
    }
}

/// Computational domain: a cube with grid resolution and optional obstacle.
#[derive(Debug, Clone)]
pub struct DomainSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub obstacle: Option<ObstacleSpec>,
    pub mode: Variant,
}

impl DomainSpec {
    pub fn grid(&self) -> StaggeredGrid {
        StaggeredGrid::new(self.n, self.lo, self.hi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(OdemError::Argument(format!(
                "grid must have at least 8 cells per axis, got {}",
                self.n
            )));
        }
        if !(self.hi > self.lo) {
            return Err(OdemError::Argument("empty domain box".into()));
        }
        if let Some(obs) = &self.obstacle {
            let h = (self.hi - self.lo) / self.n as f64;
            let c = obs.center();
            let r = obs.bounding_radius();
            let margin = 3.0 * h;
            for ax in 0..3 {
                if c[ax] - r < self.lo + margin || c[ax] + r > self.hi - margin {
                    return Err(OdemError::Geometry(format!(
                        "obstacle must stay {margin:.3} away from the boundary; \
                         axis {ax} extent [{:.3}, {:.3}] vs box [{:.3}, {:.3}]",
                        c[ax] - r,
                        c[ax] + r,
                        self.lo,
                        self.hi
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Assembled matrix-free curl-curl operator with masks and preconditioner.
pub struct CurlCurlSystem {
    pub grid: StaggeredGrid,
    pub k: f64,
    pub eps_inv_cells: Vec<Matrix3<f64>>,
    pub mu_x: Vec<f64>,
    pub mu_y: Vec<f64>,
    pub mu_z: Vec<f64>,
    pub free_x: Vec<bool>,
    pub free_y: Vec<bool>,
    pub free_z: Vec<bool>,
    pub diag: Vec<f64>,
    buffers: Mutex<Buffers>,
}

struct Buffers {
    v: FaceField,
    g: FaceField,
    cells: Vec<[C64; 3]>,
    u: EdgeField,
    au: EdgeField,
}

/// Classify edges: free (unknown), boundary (Dirichlet data), constrained
/// (edges of obstacle cells in impenetrable mode carry the ν x H = 0
/// condition on the staircased surface and decouple the interior).
fn build_masks(dom: &DomainSpec, g: &StaggeredGrid) -> (Vec<bool>, Vec<bool>, Vec<bool>) {
    let n = g.n;
    let mut fx = vec![false; g.ex_len()];
    let mut fy = vec![false; g.ex_len()];
    let mut fz = vec![false; g.ex_len()];
    let inside_cell = |ci: i64, cj: i64, ck: i64| -> bool {
        if dom.mode != Variant::Impenetrable {
            return false;
        }
        let Some(obs) = &dom.obstacle else {
            return false;
        };
        if ci < 0 || cj < 0 || ck < 0 || ci >= n as i64 || cj >= n as i64 || ck >= n as i64 {
            return false;
        }
        obs.inside(&g.cell_center(ci as usize, cj as usize, ck as usize))
    };
    for c in 0..n {
        for a in 0..=n {
            for b in 0..=n {
                let interior = a != 0 && a != n && b != 0 && b != n;
                let cx = c as i64;
                let (aa, bb) = (a as i64, b as i64);
                let touch = |p: fn(i64, i64, i64) -> (i64, i64, i64)| -> bool {
                    for da in 0..2 {
                        for db in 0..2 {
                            let (ci, cj, ck) = p(cx, aa - da, bb - db);
                            if inside_cell(ci, cj, ck) {
                                return true;
                            }
                        }
                    }
                    false
                };
                fx[g.ex(c, a, b)] = interior && !touch(|c, a, b| (c, a, b));
                fy[g.ey(a, c, b)] = interior && !touch(|c, a, b| (a, c, b));
                fz[g.ez(a, b, c)] = interior && !touch(|c, a, b| (a, b, c));
            }
        }
    }
    (fx, fy, fz)
}

/// Assemble the discrete system for a domain, medium and wavenumber.
pub fn assemble_system(dom: &DomainSpec, med: &Medium, k: f64) -> Result<CurlCurlSystem> {
    if !(k > 0.0) {
        return Err(OdemError::Argument(format!(
            "wavenumber must be positive, got {k}"
        )));
    }
    dom.validate()?;
    let g = dom.grid();
    let n = g.n;
    let mut eps_inv_cells = Vec::with_capacity(g.cells());
    for ci in 0..n {
        for cj in 0..n {
            for ck in 0..n {
                let x = g.cell_center(ci, cj, ck);
                let (_, eps) = med.check_point(&x)?;
                let use_eps = if dom.mode == Variant::Impenetrable {
                    med.eps0_at(&x)
                } else {
                    eps
                };
                eps_inv_cells.push(invert3_guarded(&use_eps)?);
            }
        }
    }
    let mut mu_x = vec![0.0; g.ex_len()];
    let mut mu_y = vec![0.0; g.ex_len()];
    let mut mu_z = vec![0.0; g.ex_len()];
    for c in 0..n {
        for a in 0..=n {
            for b in 0..=n {
                mu_x[g.ex(c, a, b)] = med.mu_at(&g.ex_center(c, a, b));
                mu_y[g.ey(a, c, b)] = med.mu_at(&g.ey_center(a, c, b));
                mu_z[g.ez(a, b, c)] = med.mu_at(&g.ez_center(a, b, c));
            }
        }
    }
    let (free_x, free_y, free_z) = build_masks(dom, &g);
    let mut sys = CurlCurlSystem {
        grid: g,
        k,
        eps_inv_cells,
        mu_x,
        mu_y,
        mu_z,
        free_x,
        free_y,
        free_z,
        diag: Vec::new(),
        buffers: Mutex::new(Buffers {
            v: FaceField::zeros(&g),
            g: FaceField::zeros(&g),
            cells: vec![[C0; 3]; g.cells()],
            u: EdgeField::zeros(&g),
            au: EdgeField::zeros(&g),
        }),
    };
    sys.diag = sys.compute_diagonal();
    Ok(sys)
}

impl CurlCurlSystem {
    pub fn n_edges(&self) -> usize {
        3 * self.grid.ex_len()
    }

    /// Raw operator (no masking): out = curl_F(M curl_E u) - k^2 mu u.
    pub fn apply_raw(&self, u: &EdgeField, out: &mut EdgeField) {
        let mut buf = self.buffers.lock().unwrap();
        let Buffers {
            v, g: gf, cells, ..
        } = &mut *buf;
        curl_e(&self.grid, u, v);
        material_apply(&self.grid, &self.eps_inv_cells, v, cells, gf);
        curl_f(&self.grid, gf, out);
        let k2 = self.k * self.k;
        for (i, o) in out.x.iter_mut().enumerate() {
            *o -= u.x[i] * (k2 * self.mu_x[i]);
        }
        for (i, o) in out.y.iter_mut().enumerate() {
            *o -= u.y[i] * (k2 * self.mu_y[i]);
        }
        for (i, o) in out.z.iter_mut().enumerate() {
            *o -= u.z[i] * (k2 * self.mu_z[i]);
        }
    }

    pub fn mask(&self, u: &mut EdgeField) {
        for (i, v) in u.x.iter_mut().enumerate() {
            if !self.free_x[i] {
                *v = C0;
            }
        }
        for (i, v) in u.y.iter_mut().enumerate() {
            if !self.free_y[i] {
                *v = C0;
            }
        }
        for (i, v) in u.z.iter_mut().enumerate() {
            if !self.free_z[i] {
                *v = C0;
            }
        }
    }

    /// E = (i/k) (material-averaged curl H), on faces.
    pub fn electric_faces(&self, h: &EdgeField) -> FaceField {
        let g = &self.grid;
        let mut curl = FaceField::zeros(g);
        curl_e(g, h, &mut curl);
        let mut e_faces = FaceField::zeros(g);
        let mut cells = vec![[C0; 3]; g.cells()];
        material_apply(g, &self.eps_inv_cells, &curl, &mut cells, &mut e_faces);
        let ik_inv = C64::new(0.0, 1.0 / self.k);
        for v in e_faces
            .x
            .iter_mut()
            .chain(e_faces.y.iter_mut())
            .chain(e_faces.z.iter_mut())
        {
            *v *= ik_inv;
        }
        e_faces
    }

    /// Diagonal of the masked operator by stencil-disjoint probing.
    fn compute_diagonal(&self) -> Vec<f64> {
        let g = &self.grid;
        let m = g.ex_len();
        let mut diag = vec![1.0; 3 * m];
        let stride = 4usize;
        let mut probe = EdgeField::zeros(g);
        let mut out = EdgeField::zeros(g);
        let n = g.n;
        for comp in 0..3 {
            for c0 in 0..stride.min(n) {
                for c1 in 0..stride.min(n + 1) {
                    for c2 in 0..stride.min(n + 1) {
                        for v in probe
                            .x
                            .iter_mut()
                            .chain(probe.y.iter_mut())
                            .chain(probe.z.iter_mut())
                        {
                            *v = C0;
                        }
                        for c in (c0..n).step_by(stride) {
                            for a in (c1..=n).step_by(stride) {
                                for b in (c2..=n).step_by(stride) {
                                    match comp {
                                        0 => probe.x[g.ex(c, a, b)] = C64::new(1.0, 0.0),
                                        1 => probe.y[g.ey(a, c, b)] = C64::new(1.0, 0.0),
                                        _ => probe.z[g.ez(a, b, c)] = C64::new(1.0, 0.0),
                                    }
                                }
                            }
                        }
                        self.apply_raw(&probe, &mut out);
                        for c in (c0..n).step_by(stride) {
                            for a in (c1..=n).step_by(stride) {
                                for b in (c2..=n).step_by(stride) {
                                    match comp {
                                        0 => {
                                            let i = g.ex(c, a, b);
                                            diag[i] = out.x[i].re;
                                        }
                                        1 => {
                                            let i = g.ey(a, c, b);
                                            diag[m + i] = out.y[i].re;
                                        }
                                        _ => {
                                            let i = g.ez(a, b, c);
                                            diag[2 * m + i] = out.z[i].re;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for d in diag.iter_mut() {
            let a = d.abs();
            *d = if a < 1e-12 { 1.0 } else { a };
        }
        diag
    }

    pub fn flat_to_edge(&self, x: &[C64], u: &mut EdgeField) {
        let m = self.grid.ex_len();
        u.x.copy_from_slice(&x[0..m]);
        u.y.copy_from_slice(&x[m..2 * m]);
        u.z.copy_from_slice(&x[2 * m..3 * m]);
    }

    pub fn edge_to_flat(&self, u: &EdgeField, x: &mut [C64]) {
        let m = self.grid.ex_len();
        x[0..m].copy_from_slice(&u.x);
        x[m..2 * m].copy_from_slice(&u.y);
        x[2 * m..3 * m].copy_from_slice(&u.z);
    }
}

impl HermitianOp for CurlCurlSystem {
    fn len(&self) -> usize {
        self.n_edges()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let (mut u, mut au) = {
            let mut buf = self.buffers.lock().unwrap();
            let u = std::mem::replace(&mut buf.u, EdgeField::zeros(&self.grid));
            let au = std::mem::replace(&mut buf.au, EdgeField::zeros(&self.grid));
            (u, au)
        };
        self.flat_to_edge(x, &mut u);
        self.mask(&mut u);
        self.apply_raw(&u, &mut au);
        self.mask(&mut au);
        self.edge_to_flat(&au, out);
        let mut buf = self.buffers.lock().unwrap();
        buf.u = u;
        buf.au = au;
    }
    fn precond(&self, r: &[C64], out: &mut [C64]) {
        for i in 0..r.len() {
            out[i] = r[i] / self.diag[i];
        }
    }
}

/// Result of one impedance solve.
#[derive(Debug, Clone)]
pub struct ImpedanceProbe {
    /// input tangential trace, realized as tangential H on the non-free edge
    /// set (ν . f = 0 holds by construction of the edge basis)
    pub f: EdgeField,
    /// solved magnetic field on all edges
    pub h: EdgeField,
    /// electric field on faces: the discrete realization of the ν x E trace
    /// lives on the boundary-adjacent faces of this field
    pub e_faces: FaceField,
    pub stats: SolveStats,
}

/// Solve with tangential-H Dirichlet data; `data` holds values on non-free
/// edges (free entries ignored).
pub fn solve(sys: &CurlCurlSystem, data: &EdgeField, tol: f64) -> Result<ImpedanceProbe> {
    let g = &sys.grid;
    let mut lift = data.clone();
    for (i, v) in lift.x.iter_mut().enumerate() {
        if sys.free_x[i] {
            *v = C0;
        }
    }
    for (i, v) in lift.y.iter_mut().enumerate() {
        if sys.free_y[i] {
            *v = C0;
        }
    }
    for (i, v) in lift.z.iter_mut().enumerate() {
        if sys.free_z[i] {
            *v = C0;
        }
    }
    let mut rhs_e = EdgeField::zeros(g);
    sys.apply_raw(&lift, &mut rhs_e);
    rhs_e.scale(C64::new(-1.0, 0.0));
    sys.mask(&mut rhs_e);
    let mut rhs = vec![C0; sys.n_edges()];
    sys.edge_to_flat(&rhs_e, &mut rhs);
    let (x, stats) = minres(sys, &rhs, tol, 20000);
    if !stats.converged {
        return Err(OdemError::Solver(format!(
            "MINRES did not converge: {} iterations, residual {:.3e}",
            stats.iterations, stats.residual
        )));
    }
    let mut h = EdgeField::zeros(g);
    sys.flat_to_edge(&x, &mut h);
    sys.mask(&mut h);
    h.axpy(C64::new(1.0, 0.0), &lift);
    let e_faces = sys.electric_faces(&h);
    Ok(ImpedanceProbe {
        f: lift,
        h,
        e_faces,
        stats,
    })
}

/// Apply the impedance map (a solve that keeps the trace realization).
pub fn impedance_apply(sys: &CurlCurlSystem, data: &EdgeField, tol: f64) -> Result<ImpedanceProbe> {
    solve(sys, data, tol)
}

/// Advisory spectral-margin report.
#[derive(Debug, Clone)]
pub struct GuardReport {
    pub sigma_min: f64,
    pub op_scale: f64,
    pub margin: f64,
    pub flagged: bool,
}

/// Smallest-singular-value estimate by a few inverse power iterations;
/// margins below 1e-6 of the operator scale flag a near-resonant wavenumber.
pub fn eigenvalue_guard(sys: &CurlCurlSystem, iters: usize) -> Result<GuardReport> {
    let n = sys.n_edges();
    let mut v: Vec<C64> = (0..n)
        .map(|i| C64::new(((i * 2654435761) % 1000) as f64 / 1000.0 - 0.5, 0.3))
        .collect();
    let mut av = vec![C0; n];
    let mut scale = 1.0;
    for _ in 0..12 {
        let nn = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nn == 0.0 {
            break;
        }
        for z in v.iter_mut() {
            *z /= nn;
        }
        let vin = v.clone();
        sys.apply(&vin, &mut av);
        scale = av.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        v.copy_from_slice(&av);
    }
    let mut w: Vec<C64> = (0..n)
        .map(|i| C64::new(0.5 - ((i * 40503) % 997) as f64 / 997.0, 0.1))
        .collect();
    // keep only free entries so the dummy identity rows do not pollute
    {
        let mut e = EdgeField::zeros(&sys.grid);
        sys.flat_to_edge(&w, &mut e);
        sys.mask(&mut e);
        sys.edge_to_flat(&e, &mut w);
    }
    let mut sigma = f64::INFINITY;
    for _ in 0..iters {
        let nn = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if nn == 0.0 {
            break;
        }
        for z in w.iter_mut() {
            *z /= nn;
        }
        let (sol, stats) = minres(sys, &w, 1e-8, 20000);
        if !stats.converged {
            sigma = 0.0;
            break;
        }
        let sn = sol.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        sigma = 1.0 / sn.max(1e-300);
        w = sol;
    }
    let margin = sigma / scale.max(1e-300);
    Ok(GuardReport {
        sigma_min: sigma,
        op_scale: scale,
        margin,
        flagged: margin < 1e-6,
    })
}

/// Interpolate a smooth vector field onto the outer-boundary edge set as
/// tangential Dirichlet data. Constrained obstacle edges stay zero.
pub fn boundary_data_from(
    sys: &CurlCurlSystem,
    mut f: impl FnMut(&Vector3<f64>) -> [C64; 3],
) -> EdgeField {
    let g = &sys.grid;
    let n = g.n;
    let mut out = EdgeField::zeros(g);
    for c in 0..n {
        for a in 0..=n {
            for b in 0..=n {
                if a != 0 && a != n && b != 0 && b != n {
                    continue;
                }
                out.x[g.ex(c, a, b)] = f(&g.ex_center(c, a, b))[0];
                out.y[g.ey(a, c, b)] = f(&g.ey_center(a, c, b))[1];
                out.z[g.ez(a, b, c)] = f(&g.ez_center(a, b, c))[2];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vacuum_domain(n: usize) -> DomainSpec {
        DomainSpec {
            lo: -1.0,
            hi: 1.0,
            n,
            obstacle: None,
            mode: Variant::Penetrable,
        }
    }

    fn plane_wave(k: f64) -> impl Fn(&Vector3<f64>) -> ([C64; 3], [C64; 3]) {
        let d = Vector3::new(1.0, 2.0, -0.5).normalize();
        let p0 = Vector3::new(0.3, -0.4, 1.0);
        let p = (p0 - d * p0.dot(&d)).normalize();
        let e = -d.cross(&p);
        move |x: &Vector3<f64>| {
            let ph = C64::new(0.0, k * d.dot(x)).exp();
            (
                [p.x * ph, p.y * ph, p.z * ph],
                [e.x * ph, e.y * ph, e.z * ph],
            )
        }
    }

    #[test]
    fn zero_data_zero_solution() {
        let dom = vacuum_domain(8);
        let med = Medium::vacuum();
        let sys = assemble_system(&dom, &med, 1.0).unwrap();
        let data = EdgeField::zeros(&sys.grid);
        let probe = solve(&sys, &data, 1e-8).unwrap();
        assert!(probe.h.norm() < 1e-12);
    }

    #[test]
    fn plane_wave_converges_second_order() {
        let med = Medium::vacuum();
        let k = 1.0;
        let pw = plane_wave(k);
        let mut errs = Vec::new();
        for n in [8usize, 16] {
            let dom = vacuum_domain(n);
            let sys = assemble_system(&dom, &med, k).unwrap();
            let g = sys.grid;
            let data = boundary_data_from(&sys, |x| pw(x).0);
            let probe = solve(&sys, &data, 1e-9).unwrap();
            let mut err2 = 0.0;
            let mut norm2 = 0.0;
            for c in 0..g.n {
                for a in 1..g.n {
                    for b in 1..g.n {
                        let exact = pw(&g.ex_center(c, a, b)).0[0];
                        let got = probe.h.x[g.ex(c, a, b)];
                        err2 += (got - exact).norm_sqr();
                        norm2 += exact.norm_sqr();
                        let exact = pw(&g.ey_center(a, c, b)).0[1];
                        let got = probe.h.y[g.ey(a, c, b)];
                        err2 += (got - exact).norm_sqr();
                        norm2 += exact.norm_sqr();
                        let exact = pw(&g.ez_center(a, b, c)).0[2];
                        let got = probe.h.z[g.ez(a, b, c)];
                        err2 += (got - exact).norm_sqr();
                        norm2 += exact.norm_sqr();
                    }
                }
            }
            errs.push((err2 / norm2).sqrt());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.8, "convergence order {order:.2}, errors {errs:?}");
    }

    #[test]
    fn linearity_of_solve() {
        let dom = vacuum_domain(8);
        let med = Medium::vacuum();
        let sys = assemble_system(&dom, &med, 1.0).unwrap();
        let g = sys.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_data = |rng: &mut ChaCha8Rng| {
            let mut d = EdgeField::zeros(&g);
            for (i, v) in d.x.iter_mut().enumerate() {
                if !sys.free_x[i] {
                    *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            d
        };
        let d1 = rand_data(&mut rng);
        let d2 = rand_data(&mut rng);
        let mut d12 = d1.clone();
        d12.axpy(C64::new(1.0, 0.0), &d2);
        let p1 = solve(&sys, &d1, 1e-10).unwrap();
        let p2 = solve(&sys, &d2, 1e-10).unwrap();
        let p12 = solve(&sys, &d12, 1e-10).unwrap();
        let mut sum = p1.h.clone();
        sum.axpy(C64::new(1.0, 0.0), &p2.h);
        sum.axpy(C64::new(-1.0, 0.0), &p12.h);
        let rel = sum.norm() / p12.h.norm();
        assert!(rel < 1e-7, "linearity defect {rel:.3e}");
    }

    #[test]
    fn impenetrable_constraint_enforced() {
        let dom = DomainSpec {
            lo: -1.0,
            hi: 1.0,
            n: 12,
            obstacle: Some(ObstacleSpec::Ball {
                center: [0.1, 0.0, 0.0],
                radius: 0.3,
            }),
            mode: Variant::Impenetrable,
        };
        let med = Medium::vacuum();
        let sys = assemble_system(&dom, &med, 1.0).unwrap();
        let g = sys.grid;
        let pw = plane_wave(1.0);
        let data = boundary_data_from(&sys, |x| pw(x).0);
        let probe = solve(&sys, &data, 1e-8).unwrap();
        let mut checked = 0;
        for c in 0..g.n {
            for a in 1..g.n {
                for b in 1..g.n {
                    let i = g.ex(c, a, b);
                    if !sys.free_x[i] {
                        assert_eq!(probe.h.x[i], C0);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0, "no constrained edges found");
    }

    #[test]
    fn geometry_margin_rejected() {
        let dom = DomainSpec {
            lo: -1.0,
            hi: 1.0,
            n: 8,
            obstacle: Some(ObstacleSpec::Ball {
                center: [0.8, 0.0, 0.0],
                radius: 0.3,
            }),
            mode: Variant::Impenetrable,
        };
        assert!(dom.validate().is_err());
    }

    #[test]
    fn support_functions() {
        let ball = ObstacleSpec::Ball {
            center: [0.3, 0.0, 0.0],
            radius: 0.2,
        };
        let rho = -Vector3::x();
        assert!((ball.support(&rho) - (-0.5)).abs() < 1e-14);
        let ell = ObstacleSpec::Ellipsoid {
            center: [0.0, 0.0, 0.0],
            semiaxes: [0.3, 0.2, 0.1],
            rotation: [0.0, 0.0, 0.0],
        };
        assert!((ell.support(&Vector3::x()) + 0.3).abs() < 1e-14);
        assert!((ell.support(&Vector3::z()) + 0.1).abs() < 1e-14);
    }
}
