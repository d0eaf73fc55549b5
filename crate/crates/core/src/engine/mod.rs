//! Indicator evaluation, (tau, t) sweeps, support-function estimation via
//! the decay/non-decay dichotomy, and convex-hull reconstruction.

pub mod hull;
pub mod suite;

pub use hull::{reconstruct_hull, HullReconstruction};

use crate::error::{OdemError, Result};
use crate::forward::yee::{curl_e, EdgeField, FaceField};
use crate::forward::{
    assemble_system, boundary_data_from, solve, CurlCurlSystem, DomainSpec, ImpedanceProbe,
};
use crate::numerics::decades_per_doubling;
use crate::od::{build_frame, suggest_amplitude, MaxwellEval, ODParams, OdBuilder};
use crate::tensor::Medium;
use nalgebra::Vector3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

const C0: C64 = C64::new(0.0, 0.0);

/// Indicator value: I = i k tau * B(f, conj((Lam_D - Lam_empty) f)) with the
/// mimetic boundary pairing B realized by pairing the curl of the
/// zero-extended trace against the electric face fields.
pub fn indicator(
    f: &EdgeField,
    probe_d: &ImpedanceProbe,
    probe_empty: &ImpedanceProbe,
    sys: &CurlCurlSystem,
    tau: f64,
) -> Result<C64> {
    if probe_d.e_faces.x.len() != probe_empty.e_faces.x.len() || f.x.len() != probe_d.h.x.len() {
        return Err(OdemError::Argument(
            "indicator: traces live on different boundary samplings".into(),
        ));
    }
    let g = &sys.grid;
    let mut cf = FaceField::zeros(g);
    curl_e(g, f, &mut cf);
    let mut acc = C0;
    for ((a, ed), ee) in cf
        .x
        .iter()
        .zip(&probe_d.e_faces.x)
        .zip(&probe_empty.e_faces.x)
    {
        acc += a * (ed - ee).conj();
    }
    for ((a, ed), ee) in cf
        .y
        .iter()
        .zip(&probe_d.e_faces.y)
        .zip(&probe_empty.e_faces.y)
    {
        acc += a * (ed - ee).conj();
    }
    for ((a, ed), ee) in cf
        .z
        .iter()
        .zip(&probe_d.e_faces.z)
        .zip(&probe_empty.e_faces.z)
    {
        acc += a * (ed - ee).conj();
    }
    let h3 = g.h * g.h * g.h;
    Ok(C64::new(0.0, sys.k * tau * h3) * acc)
}

/// Boundary-trace energy used to normalize indicator magnitudes.
pub fn trace_energy(f: &EdgeField, sys: &CurlCurlSystem) -> f64 {
    let h2 = sys.grid.h * sys.grid.h;
    let mut acc = 0.0;
    for v in f.x.iter().chain(&f.y).chain(&f.z) {
        acc += v.norm_sqr();
    }
    acc * h2
}

/// Tangential trace of the oscillating-decaying magnetic field on the outer
/// boundary, smoothly tapered to zero below the enlarged slicing level.
pub fn boundary_data_from_od(
    me: &MaxwellEval,
    sys: &CurlCurlSystem,
    taper_start: f64,
    taper_width: f64,
) -> Result<EdgeField> {
    let omega = me.sol.frame.omega;
    let data = boundary_data_from(sys, |x| {
        let s = x.dot(&omega);
        let u = ((s - taper_start) / taper_width).clamp(0.0, 1.0);
        let theta = u * u * (3.0 - 2.0 * u);
        if theta == 0.0 {
            return [C0; 3];
        }
        let (_, h) = me.eval(x);
        [h[0] * theta, h[1] * theta, h[2] * theta]
    });
    if data.x.iter().chain(&data.y).chain(&data.z).all(|v| *v == C0) {
        return Err(OdemError::Geometry(
            "oscillating-decaying trace vanished on the boundary: the slicing \
             plane does not intersect the domain"
                .into(),
        ));
    }
    Ok(data)
}

/// Classification of one tau sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Decaying,
    NonDecaying,
    Ambiguous,
}

/// One indicator curve: samples of I over the tau grid at fixed (rho, t).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndicatorCurve {
    pub rho: [f64; 3],
    pub t: f64,
    pub taus: Vec<f64>,
    pub values_re: Vec<f64>,
    pub values_im: Vec<f64>,
    /// normalized magnitudes |I| / (tau * trace energy)
    pub normalized: Vec<f64>,
    pub slope_decades_per_doubling: f64,
    pub classification: Classification,
}

/// Engine thresholds and probe parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub tau_grid: Vec<f64>,
    /// decaying when the fitted slope (decades of |I| per tau doubling) is
    /// at most -s0
    pub s0: f64,
    pub floor_factor: f64,
    pub solver_tol: f64,
    /// plane enlargement eta_0 in grid cells
    pub eta0_cells: f64,
    pub taper_cells: f64,
    /// cutoff radii along (eta, zeta): the eta radius should exceed the
    /// lateral half-width of the box so the patch crosses the walls
    /// tangential to the oscillation; the zeta radius should stay inside
    pub chi_radius: [f64; 2],
    pub chi_order: u32,
    pub corrector_depth: usize,
    pub od_grid_n: usize,
    pub od_panels: usize,
    pub m_constant: f64,
    pub xi_angle: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            tau_grid: vec![20.0, 40.0, 80.0, 160.0],
            s0: 0.5,
            floor_factor: 10.0,
            solver_tol: 1e-8,
            eta0_cells: 2.0,
            taper_cells: 2.0,
            chi_radius: [1.4, 0.75],
            chi_order: 4,
            corrector_depth: 3,
            od_grid_n: 25,
            od_panels: 14,
            m_constant: 1.0,
            xi_angle: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Shared state of an enclosure run: the two assembled systems and the
/// self-calibrated indicator floor.
pub struct EngineContext {
    pub dom: DomainSpec,
    pub med: Medium,
    pub med_empty: Medium,
    pub k: f64,
    pub cfg: SweepConfig,
    pub sys_d: CurlCurlSystem,
    pub sys_empty: CurlCurlSystem,
    /// normalized indicator floor from the obstacle-free self-calibration
    pub floor: f64,
}

impl EngineContext {
    pub fn new(dom: DomainSpec, med: Medium, k: f64, cfg: SweepConfig) -> Result<Self> {
        let med_empty = Medium {
            mu: med.mu.clone(),
            eps0: med.eps0.clone(),
            eps_d: med.eps_d.clone(),
            chi_d: Arc::new(|_| false),
        };
        let sys_d = assemble_system(&dom, &med, k)?;
        let dom_empty = DomainSpec {
            obstacle: None,
            ..dom.clone()
        };
        let sys_empty = assemble_system(&dom_empty, &med_empty, k)?;
        let mut ctx = EngineContext {
            dom,
            med,
            med_empty,
            k,
            cfg,
            sys_d,
            sys_empty,
            floor: 0.0,
        };
        ctx.floor = ctx.calibrate_floor()?;
        Ok(ctx)
    }

    /// Obstacle-free indicator magnitude at two solver tolerances: the
    /// normalized floor below which indicator values are solver noise.
    fn calibrate_floor(&self) -> Result<f64> {
        let tau = self.cfg.tau_grid[self.cfg.tau_grid.len() / 2];
        let rho = Vector3::x();
        let t_cal = self.dom.lo + 0.35 * (self.dom.hi - self.dom.lo);
        let f = self.od_trace(&rho, t_cal, tau)?;
        let loose = solve(&self.sys_empty, &f, self.cfg.solver_tol)?;
        let tight = solve(&self.sys_empty, &f, self.cfg.solver_tol * 1e-2)?;
        let i_noise = indicator(&f, &loose, &tight, &self.sys_empty, tau)?;
        let energy = trace_energy(&f, &self.sys_empty).max(1e-300);
        Ok(self.cfg.floor_factor * i_noise.norm() / (tau * energy) + 1e-250)
    }

    /// Tapered oscillating-decaying trace for one (rho, t, tau).
    pub fn od_trace(&self, rho: &Vector3<f64>, t: f64, tau: f64) -> Result<EdgeField> {
        let me = self.od_eval(rho, t, tau)?;
        let h = self.sys_d.grid.h;
        let eta0 = self.cfg.eta0_cells * h;
        let taper_w = self.cfg.taper_cells * h;
        boundary_data_from_od(&me, &self.sys_empty, t - eta0 + 1e-12, taper_w)
    }

    pub fn od_builder(&self, rho: &Vector3<f64>, t: f64, tau_min: f64) -> Result<OdBuilder> {
        let h = self.sys_d.grid.h;
        let eta0 = self.cfg.eta0_cells * h;
        let frame = build_frame(rho, t - eta0, self.cfg.xi_angle)?;
        let variant = self.dom.mode;
        let mut params = ODParams {
            tau: tau_min,
            corrector_depth: self.cfg.corrector_depth,
            // generic bootstrap datum, never parallel to a tangential xi
            b: [
                C64::new(0.577, 0.0),
                C64::new(0.0, 0.577),
                C64::new(0.577, 0.0),
            ],
            chi_center: [0.0, 0.0],
            chi_radius: self.cfg.chi_radius,
            chi_order: self.cfg.chi_order,
            m: self.cfg.m_constant,
            variant,
            grid_n: self.cfg.od_grid_n,
            panels: self.cfg.od_panels,
        };
        let builder = OdBuilder::new(
            frame.clone(),
            self.med_empty.clone(),
            params.clone(),
            self.k,
            tau_min,
        )?;
        let mut b = suggest_amplitude(&builder.sys, &frame, &self.med_empty, variant)?;
        {
            // keep the amplitude away from the degenerate xi-parallel ray
            let test = ODParams { b, ..params.clone() };
            if test.validate(&frame).is_err() {
                let mut mixed = b;
                mixed[2] += C64::new(0.2, 0.0);
                let n: f64 = mixed.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                for z in mixed.iter_mut() {
                    *z /= C64::new(n, 0.0);
                }
                b = mixed;
            }
        }
        params.b = b;
        params.validate(&frame)?;
        OdBuilder::new(frame, self.med_empty.clone(), params, self.k, tau_min)
    }

    fn od_eval(&self, rho: &Vector3<f64>, t: f64, tau: f64) -> Result<MaxwellEval> {
        let builder = self.od_builder(rho, t, tau)?;
        let sol = Arc::new(builder.build(tau)?);
        crate::od::od_to_maxwell(sol, &self.med_empty, self.k)
    }

    /// Run the full pipeline for one (rho, t) over a tau grid.
    pub fn tau_sweep(
        &self,
        rho: &Vector3<f64>,
        t: f64,
        tau_grid: &[f64],
    ) -> Result<IndicatorCurve> {
        let stage = |s: &'static str, e: OdemError, tau: f64| OdemError::Stage {
            stage: s,
            rho: format!("({:.3},{:.3},{:.3})", rho.x, rho.y, rho.z),
            t,
            tau,
            source: Box::new(e),
        };
        let mut taus = tau_grid.to_vec();
        taus.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let tau_min = taus[0];
        let builder = self
            .od_builder(rho, t, tau_min)
            .map_err(|e| stage("od-build", e, tau_min))?;
        let mut values = Vec::new();
        let mut normalized = Vec::new();
        for &tau in &taus {
            let sol = Arc::new(builder.build(tau).map_err(|e| stage("od-build", e, tau))?);
            let me = crate::od::od_to_maxwell(sol, &self.med_empty, self.k)
                .map_err(|e| stage("od-to-maxwell", e, tau))?;
            let h = self.sys_d.grid.h;
            let f = boundary_data_from_od(
                &me,
                &self.sys_empty,
                t - self.cfg.eta0_cells * h + 1e-12,
                self.cfg.taper_cells * h,
            )
            .map_err(|e| stage("boundary-data", e, tau))?;
            let probe_d = solve(&self.sys_d, &f, self.cfg.solver_tol)
                .map_err(|e| stage("solve-obstacle", e, tau))?;
            let probe_e = solve(&self.sys_empty, &f, self.cfg.solver_tol)
                .map_err(|e| stage("solve-empty", e, tau))?;
            let i = indicator(&f, &probe_d, &probe_e, &self.sys_empty, tau)
                .map_err(|e| stage("indicator", e, tau))?;
            let energy = trace_energy(&f, &self.sys_empty).max(1e-300);
            values.push(i);
            normalized.push(i.norm() / (tau * energy));
        }
        let mags: Vec<f64> = normalized.iter().map(|v| v.max(1e-300)).collect();
        let slope = decades_per_doubling(&taus, &mags);
        let min_norm = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        let classification = if slope <= -self.cfg.s0 {
            Classification::Decaying
        } else if slope >= -self.cfg.s0 / 4.0 && min_norm >= self.floor {
            Classification::NonDecaying
        } else if min_norm < self.floor {
            // all samples at solver-noise level: nothing reached the obstacle
            Classification::Decaying
        } else {
            Classification::Ambiguous
        };
        Ok(IndicatorCurve {
            rho: [rho.x, rho.y, rho.z],
            t,
            taus,
            values_re: values.iter().map(|v| v.re).collect(),
            values_im: values.iter().map(|v| v.im).collect(),
            normalized,
            slope_decades_per_doubling: slope,
            classification,
        })
    }

    /// Sweep with the configured tau grid; on an ambiguous outcome refine
    /// the grid once by extending it upward (resolution permitting).
    pub fn classify(&self, rho: &Vector3<f64>, t: f64) -> Result<IndicatorCurve> {
        let curve = self.tau_sweep(rho, t, &self.cfg.tau_grid.clone())?;
        if curve.classification != Classification::Ambiguous {
            return Ok(curve);
        }
        let tau_max = self.cfg.tau_grid.iter().cloned().fold(0.0, f64::max);
        let cap = 0.8 * std::f64::consts::PI / self.sys_d.grid.h;
        let mut extended = self.cfg.tau_grid.clone();
        for f in [1.5, 2.0] {
            if tau_max * f <= cap {
                extended.push(tau_max * f);
            }
        }
        if extended.len() == self.cfg.tau_grid.len() {
            return Ok(curve);
        }
        self.tau_sweep(rho, t, &extended)
    }
}

/// Support-function estimate for one direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub rho: [f64; 3],
    pub h_hat: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub curves: Vec<IndicatorCurve>,
}

/// Bisection on the decay/non-decay dichotomy over t.
pub fn estimate_support(
    ctx: &EngineContext,
    rho: &Vector3<f64>,
    t_range: (f64, f64),
    tolerance: f64,
) -> Result<SupportEstimate> {
    let mut curves = Vec::new();
    let (mut lo, mut hi) = t_range;
    if !(hi > lo) {
        return Err(OdemError::Argument("empty bisection bracket".into()));
    }
    let c_lo = ctx.classify(rho, lo)?;
    let c_hi = ctx.classify(rho, hi)?;
    let ok = c_lo.classification == Classification::Decaying
        && c_hi.classification == Classification::NonDecaying;
    curves.push(c_lo);
    curves.push(c_hi);
    if !ok {
        return Err(OdemError::Classification(format!(
            "no dichotomy sign change in bracket [{lo:.3}, {hi:.3}] for rho = \
             ({:.3},{:.3},{:.3}): endpoints {:?} / {:?}; curves: {}",
            rho.x,
            rho.y,
            rho.z,
            curves[0].classification,
            curves[1].classification,
            serde_json::to_string(&curves).unwrap_or_default()
        )));
    }
    while hi - lo > tolerance {
        let mid = 0.5 * (lo + hi);
        let c = ctx.classify(rho, mid)?;
        let class = c.classification;
        curves.push(c);
        match class {
            Classification::Decaying => lo = mid,
            Classification::NonDecaying => hi = mid,
            Classification::Ambiguous => {
                return Err(OdemError::Classification(format!(
                    "ambiguous classification persisted at t = {mid:.4} for rho = \
                     ({:.3},{:.3},{:.3}); curves: {}",
                    rho.x,
                    rho.y,
                    rho.z,
                    serde_json::to_string(&curves).unwrap_or_default()
                )));
            }
        }
    }
    Ok(SupportEstimate {
        rho: [rho.x, rho.y, rho.z],
        h_hat: 0.5 * (lo + hi),
        t_lo: lo,
        t_hi: hi,
        curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::ObstacleSpec;
    use crate::od::Variant;
    use nalgebra::Matrix3;

    fn small_ctx(mode: Variant) -> EngineContext {
        let obstacle = ObstacleSpec::Ball {
            center: [0.1, 0.0, 0.0],
            radius: 0.25,
        };
        let dom = DomainSpec {
            lo: -1.0,
            hi: 1.0,
            n: 16,
            obstacle: Some(obstacle.clone()),
            mode,
        };
        let eps0 = Matrix3::identity();
        let med = match mode {
            Variant::Penetrable => Medium {
                mu: Arc::new(|_| 1.0),
                eps0: Arc::new(move |_| eps0),
                eps_d: Arc::new(|_| Matrix3::identity() * 0.5),
                chi_d: Arc::new(move |x| obstacle.inside(x)),
            },
            Variant::Impenetrable => Medium::constant(1.0, eps0),
        };
        let cfg = SweepConfig {
            tau_grid: vec![8.0, 12.0, 18.0],
            od_grid_n: 21,
            od_panels: 10,
            corrector_depth: 2,
            ..SweepConfig::default()
        };
        EngineContext::new(dom, med, 1.0, cfg).unwrap()
    }

    #[test]
    fn indicator_zero_when_probes_identical() {
        let ctx = small_ctx(Variant::Penetrable);
        let rho = Vector3::x();
        let f = ctx.od_trace(&rho, -0.6, 8.0).unwrap();
        let p = solve(&ctx.sys_empty, &f, 1e-8).unwrap();
        let i = indicator(&f, &p, &p, &ctx.sys_empty, 8.0).unwrap();
        assert_eq!(i, C0);
    }

    #[test]
    fn indicator_sesquilinear_scaling() {
        let ctx = small_ctx(Variant::Penetrable);
        let rho = Vector3::x();
        let f = ctx.od_trace(&rho, -0.5, 8.0).unwrap();
        let mut f2 = f.clone();
        f2.scale(C64::new(2.0, 0.0));
        let pd1 = solve(&ctx.sys_d, &f, 1e-10).unwrap();
        let pe1 = solve(&ctx.sys_empty, &f, 1e-10).unwrap();
        let pd2 = solve(&ctx.sys_d, &f2, 1e-10).unwrap();
        let pe2 = solve(&ctx.sys_empty, &f2, 1e-10).unwrap();
        let i1 = indicator(&f, &pd1, &pe1, &ctx.sys_empty, 8.0).unwrap();
        let i2 = indicator(&f2, &pd2, &pe2, &ctx.sys_empty, 8.0).unwrap();
        assert!(
            (i2 - i1 * 4.0).norm() <= 1e-5 * i2.norm(),
            "i1 = {i1}, i2 = {i2}"
        );
    }

    #[test]
    fn trace_support_shrinks_with_cutoff() {
        let ctx = small_ctx(Variant::Penetrable);
        let rho = Vector3::x();
        let f_small = {
            let mut c = ctx.cfg.clone();
            c.chi_radius = [0.3, 0.2];
            let ctx2 = EngineContext::new(ctx.dom.clone(), ctx.med.clone(), ctx.k, c).unwrap();
            ctx2.od_trace(&rho, -0.5, 8.0).unwrap()
        };
        let f_big = ctx.od_trace(&rho, -0.5, 8.0).unwrap();
        let count = |f: &EdgeField| {
            f.x.iter()
                .chain(&f.y)
                .chain(&f.z)
                .filter(|v| v.norm() > 1e-12)
                .count()
        };
        assert!(count(&f_small) <= count(&f_big));
    }
}
