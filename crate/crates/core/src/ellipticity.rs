//! Strong-ellipticity functionals for the two reduced systems and the
//! certification pass that produces the constant c0 consumed by the
//! oscillating-decaying builder.

use crate::error::{OdemError, Result};
use crate::numerics::fibonacci_sphere;
use crate::tensor::Medium;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

fn check_unit(v: &Vector3<f64>, name: &str) -> Result<()> {
    if (v.norm() - 1.0).abs() > 1e-12 {
        return Err(OdemError::Argument(format!(
            "{name} must be a unit vector (|{name}| = {})",
            v.norm()
        )));
    }
    Ok(())
}

/// G(v, w) = tr(D^{-1}) - w^T D^{-1} w - v^T D^{-1} v - tr(D^{-1})(v.w)^2
///           + 2 (v.w)(w^T D^{-1} v),   D = diag(eigs).
pub fn g_value(eigs: (f64, f64, f64), v: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
    let di = [1.0 / eigs.0, 1.0 / eigs.1, 1.0 / eigs.2];
    let tr: f64 = di.iter().sum();
    let c = v.dot(w);
    let wdw: f64 = (0..3).map(|j| di[j] * w[j] * w[j]).sum();
    let vdv: f64 = (0..3).map(|j| di[j] * v[j] * v[j]).sum();
    let wdv: f64 = (0..3).map(|j| di[j] * w[j] * v[j]).sum();
    tr - wdw - vdv - tr * c * c + 2.0 * c * wdv
}

/// The per-eigenvalue split G = sum_j lambda_j^{-1} K_j with
/// K_j = 1 - w_j^2 - v_j^2 - (v.w)^2 + 2 (v.w) v_j w_j.
pub fn g_split(v: &Vector3<f64>, w: &Vector3<f64>) -> [f64; 3] {
    let c = v.dot(w);
    [0, 1, 2].map(|j| 1.0 - w[j] * w[j] - v[j] * v[j] - c * c + 2.0 * c * v[j] * w[j])
}

/// F(v, w) = G(v, w) + m (v.w)^2 for the first reduced system.
pub fn f_value(eigs: (f64, f64, f64), m: f64, v: &Vector3<f64>, w: &Vector3<f64>) -> Result<f64> {
    check_unit(v, "v")?;
    check_unit(w, "w")?;
    if eigs.0 <= 0.0 {
        return Err(OdemError::Argument(format!(
            "eigenvalues must be positive, got lambda_1 = {}",
            eigs.0
        )));
    }
    let c = v.dot(w);
    Ok(g_value(eigs, v, w) + m * c * c)
}

/// H(v, w) = m (v^T D w)^2 + (1 - (v.w)^2) for the second reduced system.
pub fn h_value(eigs: (f64, f64, f64), m: f64, v: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
    let c = v.dot(w);
    let vdw = eigs.0 * v[0] * w[0] + eigs.1 * v[1] * w[1] + eigs.2 * v[2] * w[2];
    m * vdw * vdw + (1.0 - c * c)
}

/// Checks the lower bound G >= lambda_3^{-1} (1 - (v.w)^2) and that every
/// K_j of the split is nonnegative (within 1e-12).
pub fn g_lower_bound_check(eigs: (f64, f64, f64), v: &Vector3<f64>, w: &Vector3<f64>) -> bool {
    let g = g_value(eigs, v, w);
    let c = v.dot(w);
    let bound = (1.0 - c * c) / eigs.2;
    let ks = g_split(v, w);
    g >= bound - 1e-12 && ks.iter().all(|&k| k >= -1e-12)
}

/// Certification report for one medium and one constant m.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub m: f64,
    pub min_f: f64,
    pub argmin_f: ([f64; 3], [f64; 3]),
    pub min_h: f64,
    pub argmin_h: ([f64; 3], [f64; 3]),
    pub certified_c0: f64,
    pub sample_count: usize,
    pub refinement_iters: usize,
    /// Worst-case x-sample that attained the infimum.
    pub argmin_x: [f64; 3],
    /// Analytic lower bound min(Lambda^{-1}, m) for F, for reference.
    pub f_analytic_floor: f64,
}

fn sorted_eigs(e: Vector3<f64>) -> (f64, f64, f64) {
    let mut v = [e.x, e.y, e.z];
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (v[0], v[1], v[2])
}

/// Projected-gradient minimization of a sphere-pair functional starting from
/// (v0, w0); 50 steps with halving on failure.
fn refine_pair<Ff>(f: &Ff, v0: Vector3<f64>, w0: Vector3<f64>) -> (f64, Vector3<f64>, Vector3<f64>)
where
    Ff: Fn(&Vector3<f64>, &Vector3<f64>) -> f64,
{
    let mut v = v0;
    let mut w = w0;
    let mut best = f(&v, &w);
    let mut step = 0.1;
    let eps = 1e-6;
    for _ in 0..50 {
        let mut gv = Vector3::zeros();
        let mut gw = Vector3::zeros();
        for ax in 0..3 {
            let mut dp = Vector3::zeros();
            dp[ax] = eps;
            gv[ax] = (f(&(v + dp).normalize(), &w) - f(&(v - dp).normalize(), &w)) / (2.0 * eps);
            gw[ax] = (f(&v, &(w + dp).normalize()) - f(&v, &(w - dp).normalize())) / (2.0 * eps);
        }
        let vn = (v - gv * step).normalize();
        let wn = (w - gw * step).normalize();
        let val = f(&vn, &wn);
        if val < best {
            best = val;
            v = vn;
            w = wn;
        } else {
            step *= 0.5;
            if step < 1e-10 {
                break;
            }
        }
    }
    (best, v, w)
}

/// Minimize F and H over x-samples and sphere pairs; coarse Fibonacci
/// lattice, stratified pairing, then projected-gradient refinement.
///
/// Deterministic given the budget; fails when the certified constant is not
/// positive.
pub fn certify_medium(
    med: &Medium,
    m: f64,
    x_samples: &[Vector3<f64>],
    sphere_budget: usize,
) -> Result<EllipticityReport> {
    if m <= 0.0 {
        return Err(OdemError::Argument(format!(
            "ellipticity constant m must be positive, got {m}"
        )));
    }
    if x_samples.is_empty() {
        return Err(OdemError::Argument("no x samples supplied".into()));
    }
    let n_sphere = sphere_budget.clamp(64, 4096);
    let dirs = fibonacci_sphere(n_sphere);

    let mut min_f = f64::INFINITY;
    let mut min_h = f64::INFINITY;
    let mut arg_f = (Vector3::x(), Vector3::x());
    let mut arg_h = (Vector3::x(), Vector3::x());
    let mut arg_x = Vector3::zeros();
    let mut lambda_max: f64 = 0.0;
    let mut samples = 0usize;

    for x in x_samples {
        let (_, eps) = med
            .check_point(x)
            .map_err(|e| OdemError::Data(format!("certify_medium: {e}")))?;
        let eigs = sorted_eigs(eps.symmetric_eigenvalues());
        lambda_max = lambda_max.max(eigs.2);
        // Stratified pairing: v_i against w_{i + n/2 mod n} plus aligned and
        // orthogonal-ish companions; this touches parallel, antiparallel and
        // generic geometry for every v.
        let shift = n_sphere / 2;
        let fx = |v: &Vector3<f64>, w: &Vector3<f64>| {
            g_value(eigs, v, w) + m * v.dot(w).powi(2)
        };
        let hx = |v: &Vector3<f64>, w: &Vector3<f64>| h_value(eigs, m, v, w);
        for (i, v) in dirs.iter().enumerate() {
            for w in [
                dirs[(i + shift) % n_sphere],
                dirs[(i + 1) % n_sphere],
                *v,
            ] {
                samples += 1;
                let cf = fx(v, &w);
                if cf < min_f {
                    min_f = cf;
                    arg_f = (*v, w);
                    arg_x = *x;
                }
                let ch = hx(v, &w);
                if ch < min_h {
                    min_h = ch;
                    arg_h = (*v, w);
                    arg_x = *x;
                }
            }
        }
        // Local refinement from the current minimizers.
        let (rf, vf, wf) = refine_pair(&fx, arg_f.0, arg_f.1);
        if rf < min_f {
            min_f = rf;
            arg_f = (vf, wf);
        }
        let (rh, vh, wh) = refine_pair(&hx, arg_h.0, arg_h.1);
        if rh < min_h {
            min_h = rh;
            arg_h = (vh, wh);
        }
    }

    // Refinement error margin: the lattice resolves the sphere to ~1/sqrt(N);
    // the functionals are smooth with O(1 + m) Lipschitz constants.
    let margin = 4.0 * (1.0 + m + 1.0 / lambda_max.max(1e-9)) / (n_sphere as f64).sqrt() * 0.05;
    let certified = (min_f.min(min_h) - margin).min(min_f).min(min_h);
    let report = EllipticityReport {
        m,
        min_f,
        argmin_f: (arg_f.0.into(), arg_f.1.into()),
        min_h,
        argmin_h: (arg_h.0.into(), arg_h.1.into()),
        certified_c0: certified,
        sample_count: samples,
        refinement_iters: 50,
        argmin_x: arg_x.into(),
        f_analytic_floor: (1.0 / lambda_max.max(1e-300)).min(m),
    };
    if report.certified_c0 <= 0.0 {
        return Err(OdemError::Ellipticity(format!(
            "certified c0 = {:.6e} is not positive (min F = {:.6e}, min H = {:.6e})",
            report.certified_c0, report.min_f, report.min_h
        )));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f_orthogonal_and_aligned() {
        let eigs = (1.0, 1.0, 1.0);
        let v = Vector3::x();
        let w = Vector3::y();
        assert!((f_value(eigs, 2.0, &v, &w).unwrap() - 1.0).abs() < 1e-14);
        // v = w collapses G, leaving m
        assert!((f_value(eigs, 2.0, &v, &v).unwrap() - 2.0).abs() < 1e-14);
        assert!(f_value(eigs, 1.0, &(v * 2.0), &w).is_err());
    }

    #[test]
    fn f_symmetry_and_sign_flip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let eigs = {
                let mut e = [
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(0.5..4.0),
                ];
                e.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (e[0], e[1], e[2])
            };
            let m = rng.gen_range(0.1..5.0);
            let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let f1 = f_value(eigs, m, &v, &w).unwrap();
            let f2 = f_value(eigs, m, &w, &v).unwrap();
            let f3 = f_value(eigs, m, &(-v), &(-w)).unwrap();
            assert!((f1 - f2).abs() < 1e-12);
            assert!((f1 - f3).abs() < 1e-12);
            // chain F >= lambda3^{-1} + (m - lambda3^{-1})(v.w)^2
            let c2 = v.dot(&w).powi(2);
            let chain = 1.0 / eigs.2 + (m - 1.0 / eigs.2) * c2;
            assert!(f1 - chain >= -1e-9, "F = {f1}, chain = {chain}");
        }
    }

    #[test]
    fn g_bound_cases() {
        let eigs = (1.0, 2.0, 4.0);
        let v = Vector3::x();
        let w = Vector3::y();
        assert!(g_lower_bound_check(eigs, &v, &w));
        assert!(g_value(eigs, &v, &w) >= 0.25);
        assert!(g_lower_bound_check(eigs, &v, &v));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let eigs = {
                let mut e = [
                    rng.gen_range(0.2..8.0),
                    rng.gen_range(0.2..8.0),
                    rng.gen_range(0.2..8.0),
                ];
                e.sort_by(|a, b| a.partial_cmp(b).unwrap());
                (e[0], e[1], e[2])
            };
            let v = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            assert!(g_lower_bound_check(eigs, &v, &w));
        }
    }

    #[test]
    fn h_cases() {
        let eigs = (1.0, 1.0, 1.0);
        let v = Vector3::x();
        assert!((h_value(eigs, 3.0, &v, &v) - 3.0).abs() < 1e-14);
        assert!((h_value(eigs, 3.0, &v, &Vector3::y()) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn certify_vacuum() {
        let med = Medium::vacuum();
        let rep = certify_medium(&med, 1.0, &[Vector3::zeros()], 2048).unwrap();
        assert!(rep.certified_c0 >= 0.9 && rep.certified_c0 <= 1.0, "{rep:?}");
        assert!((rep.min_f - 1.0).abs() < 1e-9);
        assert!((rep.min_h - 1.0).abs() < 1e-9);
    }

    #[test]
    fn certify_rejects_bad_m() {
        let med = Medium::vacuum();
        assert!(certify_medium(&med, 0.0, &[Vector3::zeros()], 256).is_err());
        assert!(certify_medium(&med, -1.0, &[Vector3::zeros()], 256).is_err());
    }

    #[test]
    fn certify_is_deterministic() {
        let e = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.5, 0.1, 0.0, 0.1, 0.8);
        let med = Medium::constant(1.2, e);
        let xs = [Vector3::zeros(), Vector3::new(0.3, -0.2, 0.5)];
        let r1 = certify_medium(&med, 0.7, &xs, 1024).unwrap();
        let r2 = certify_medium(&med, 0.7, &xs, 1024).unwrap();
        assert_eq!(r1.min_f.to_bits(), r2.min_f.to_bits());
        assert_eq!(r1.min_h.to_bits(), r2.min_h.to_bits());
        assert_eq!(r1.certified_c0.to_bits(), r2.certified_c0.to_bits());
    }

    #[test]
    fn certify_m_at_analytic_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let d = Matrix3::from_diagonal(&Vector3::new(
                rng.gen_range(0.5..1.0),
                rng.gen_range(1.0..2.0),
                rng.gen_range(2.0..4.0),
            ));
            let lam3 = d[(2, 2)];
            let med = Medium::constant(1.0, d);
            let rep = certify_medium(&med, 1.0 / lam3, &[Vector3::zeros()], 1024).unwrap();
            assert!(rep.min_f >= 1.0 / lam3 - 1e-9, "{}", rep.min_f);
        }
    }
}
