//! Oscillating-decaying solutions of the reduced elliptic systems and their
//! assembly into Maxwell fields.
//!
//! The construction works in rotated coordinates y = (x.eta, x.zeta,
//! x.omega - t) where the slicing plane becomes {y3 = 0} and the solution
//! lives on the half-space y3 > 0. The second-order system is conjugated by
//! the tangential oscillation exp(i tau y'.xi'), reduced to a first-order
//! 6x6 system in y3, split into decaying/growing spectral halves, and solved
//! level by level through a triangular Duhamel hierarchy.

pub mod assemble;
pub mod hierarchy;
pub mod symbol;

use crate::ellipticity::EllipticityReport;
use crate::error::{OdemError, Result};
use crate::numerics::orthonormal_complement;
use crate::numerics::schur::{reorder_schur, schur, sylvester, sylvester_separation};
use crate::tensor::{leading_coeff, Medium, System};
use nalgebra::{DMatrix, Matrix3, Vector3};
use num_complex::Complex64 as C64;

pub use assemble::{assemble_od, od_to_maxwell, suggest_amplitude, MaxwellEval, ODSolution, OdBuilder};
pub use hierarchy::{solve_hierarchy, CorrectorProfiles};

/// Orthonormal probing frame and slicing level.
#[derive(Debug, Clone)]
pub struct FrameDirections {
    pub omega: Vector3<f64>,
    pub eta: Vector3<f64>,
    pub zeta: Vector3<f64>,
    /// Unit tangential phase direction, in span{eta, zeta}.
    pub xi: Vector3<f64>,
    /// Components of xi in the (eta, zeta) basis.
    pub xi_prime: [f64; 2],
    /// Slicing level along omega.
    pub t: f64,
}

impl FrameDirections {
    /// Rotation matrix with rows (eta, zeta, omega): maps x to y-frame.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_rows(&[
            self.eta.transpose(),
            self.zeta.transpose(),
            self.omega.transpose(),
        ])
    }

    /// y-coordinates of a physical point.
    pub fn to_frame(&self, x: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(x.dot(&self.eta), x.dot(&self.zeta), x.dot(&self.omega) - self.t)
    }

    /// Physical point of y-coordinates.
    pub fn from_frame(&self, y: &Vector3<f64>) -> Vector3<f64> {
        self.eta * y.x + self.zeta * y.y + self.omega * (y.z + self.t)
    }
}

/// Deterministic frame construction: eta, zeta from the smallest-axis rule,
/// xi = cos(angle) eta + sin(angle) zeta.
pub fn build_frame(omega: &Vector3<f64>, t: f64, xi_angle: f64) -> Result<FrameDirections> {
    let n = omega.norm();
    if !(n > 1e-12) {
        return Err(OdemError::Argument("omega must be a nonzero vector".into()));
    }
    if (n - 1.0).abs() > 1e-12 {
        return Err(OdemError::Argument(format!(
            "omega must be a unit vector, |omega| = {n}"
        )));
    }
    let (eta, zeta) = orthonormal_complement(omega);
    let (c, s) = (xi_angle.cos(), xi_angle.sin());
    Ok(FrameDirections {
        omega: *omega,
        eta,
        zeta,
        xi: eta * c + zeta * s,
        xi_prime: [c, s],
        t,
    })
}

/// Which Maxwell potential carries the oscillating-decaying ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Variant {
    /// A-system probe, B = 0 (penetrable obstacles).
    Penetrable,
    /// B-system probe, A = 0 (impenetrable obstacles).
    Impenetrable,
}

impl Variant {
    pub fn system(self) -> System {
        match self {
            Variant::Penetrable => System::A,
            Variant::Impenetrable => System::B,
        }
    }
}

/// Build parameters of one oscillating-decaying solution.
#[derive(Debug, Clone)]
pub struct ODParams {
    pub tau: f64,
    /// Corrector depth N (levels 0..=N+1 are built).
    pub corrector_depth: usize,
    /// Constant amplitude vector, not parallel to xi.
    pub b: [C64; 3],
    /// Cutoff center in x'-coordinates.
    pub chi_center: [f64; 2],
    /// Cutoff support radii along the eta and zeta axes. An elongated
    /// support lets the oscillating patch reach the boundary walls that are
    /// tangential to the phase direction while vanishing before the walls
    /// normal to it.
    pub chi_radius: [f64; 2],
    /// Bump exponent: chi = (1 - r^2)^order in scaled coordinates.
    pub chi_order: u32,
    pub m: f64,
    pub variant: Variant,
    /// Transverse grid resolution (per axis) for the profile fields.
    pub grid_n: usize,
    /// Number of Gauss-Legendre panels along the decay axis.
    pub panels: usize,
}

impl Default for ODParams {
    fn default() -> Self {
        ODParams {
            tau: 20.0,
            corrector_depth: 3,
            b: [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
            chi_center: [0.0, 0.0],
            chi_radius: [0.35, 0.35],
            chi_order: 4,
            m: 1.0,
            variant: Variant::Penetrable,
            grid_n: 32,
            panels: 18,
        }
    }
}

impl ODParams {
    pub fn validate(&self, frame: &FrameDirections) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(OdemError::Argument(format!("tau must be positive, got {}", self.tau)));
        }
        if self.corrector_depth < 1 {
            return Err(OdemError::Argument("corrector depth N must be >= 1".into()));
        }
        let bn: f64 = self.b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if bn == 0.0 {
            return Err(OdemError::Argument("amplitude b must be nonzero".into()));
        }
        // b parallel to xi (as a complex multiple) degenerates the amplitude orders.
        let xi = [C64::new(frame.xi_prime[0], 0.0), C64::new(frame.xi_prime[1], 0.0), C64::new(0.0, 0.0)];
        let dot: C64 = (0..3).map(|i| self.b[i] * xi[i].conj()).sum();
        let cross_norm2: f64 = bn * bn - dot.norm_sqr();
        if cross_norm2 < 1e-20 * bn * bn {
            return Err(OdemError::Argument(
                "amplitude b must not be parallel to xi".into(),
            ));
        }
        if !(self.chi_radius[0] > 0.0 && self.chi_radius[1] > 0.0) || self.chi_order < 2 {
            return Err(OdemError::Argument(
                "cutoff needs positive radii and order >= 2".into(),
            ));
        }
        if !(self.m > 0.0) {
            return Err(OdemError::Argument("m must be positive".into()));
        }
        Ok(())
    }

    /// The cutoff value at x'.
    pub fn chi(&self, u: f64, v: f64) -> f64 {
        let r2 = ((u - self.chi_center[0]) / self.chi_radius[0]).powi(2)
            + ((v - self.chi_center[1]) / self.chi_radius[1]).powi(2);
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - r2).powi(self.chi_order as i32)
        }
    }
}

/// Pointwise spectral split of the companion symbol at one x'.
#[derive(Debug, Clone)]
pub struct SpectralSplit {
    pub k_mat: DMatrix<C64>,
    pub q_tilde: DMatrix<C64>,
    pub q_tilde_inv: DMatrix<C64>,
    pub k_plus: Matrix3<C64>,
    pub k_minus: Matrix3<C64>,
    /// Decay matrix A_t = -i K_plus.
    pub a_t: Matrix3<C64>,
    /// Guaranteed decay rate: min over spec(A_t) of the real part.
    pub decay_rate: f64,
    /// Block-diagonalization residual |Qinv K Q - blkdiag|.
    pub residual: f64,
    /// Separation-based conditioning estimate of the split.
    pub conditioning: f64,
    pub conditioning_warning: bool,
}

/// The 3x3 direction blocks of the quadratic symbol at a point of the
/// rotated frame: (Azz, Az_rho, Arho_z, Arho_rho) = (<e3,e3>, <e3,rho>,
/// <rho,e3>, <rho,rho>).
pub fn symbol_blocks(
    x_prime: [f64; 2],
    frame: &FrameDirections,
    med: &Medium,
    m: f64,
    which: System,
) -> Result<(Matrix3<f64>, Matrix3<f64>, Matrix3<f64>, Matrix3<f64>)> {
    let rot = frame.rotation();
    let med_rot = med.rotated(rot, frame.omega * frame.t);
    let y = Vector3::new(x_prime[0], x_prime[1], 0.0);
    let c = leading_coeff(which, &med_rot, m, &y)?;
    let e3 = Vector3::z();
    let rho = Vector3::new(frame.xi_prime[0], frame.xi_prime[1], 0.0);
    Ok((
        c.dir_matrix(&e3, &e3),
        c.dir_matrix(&e3, &rho),
        c.dir_matrix(&rho, &e3),
        c.dir_matrix(&rho, &rho),
    ))
}

fn to_c(m: &Matrix3<f64>) -> Matrix3<C64> {
    Matrix3::from_fn(|i, j| C64::new(m[(i, j)], 0.0))
}

/// Companion linearization of the quadratic symbol
/// <e3,e3> L^2 + (<e3,rho> + <rho,e3>) L + <rho,rho>:
/// eigenvalues of the returned 6x6 matrix are exactly its root pairs.
pub fn assemble_k(
    x_prime: [f64; 2],
    frame: &FrameDirections,
    med: &Medium,
    m: f64,
    which: System,
) -> Result<DMatrix<C64>> {
    let (azz, aze, aez, aee) = symbol_blocks(x_prime, frame, med, m, which)?;
    companion_from_blocks(&to_c(&azz), &to_c(&aze), &to_c(&aez), &to_c(&aee))
}

pub(crate) fn companion_from_blocks(
    azz: &Matrix3<C64>,
    aze: &Matrix3<C64>,
    aez: &Matrix3<C64>,
    aee: &Matrix3<C64>,
) -> Result<DMatrix<C64>> {
    let det = azz.determinant();
    if det.norm() < 1e-12 * azz.norm().powi(3).max(1e-300) {
        return Err(OdemError::Ellipticity(format!(
            "<e3,e3> block is singular (|det| = {:.3e}); strong ellipticity violated",
            det.norm()
        )));
    }
    let ainv = azz
        .try_inverse()
        .ok_or_else(|| OdemError::Ellipticity("<e3,e3> inversion failed".into()))?;
    let k11 = -ainv * aze;
    let k12 = -ainv;
    let k21 = aee - aez * ainv * aze;
    let k22 = -aez * ainv;
    let mut k = DMatrix::from_element(6, 6, C64::new(0.0, 0.0));
    for i in 0..3 {
        for j in 0..3 {
            k[(i, j)] = k11[(i, j)];
            k[(i, j + 3)] = k12[(i, j)];
            k[(i + 3, j)] = k21[(i, j)];
            k[(i + 3, j + 3)] = k22[(i, j)];
        }
    }
    Ok(k)
}

/// Ordered-Schur invariant-subspace split of a 6x6 companion matrix into its
/// upper/lower half-plane spectral halves.
pub fn spectral_split(k: &DMatrix<C64>) -> Result<SpectralSplit> {
    let margin = 1e-8;
    let scale = k.norm().max(1e-300);
    let mut dec = schur(k);
    for ev in dec.eigenvalues() {
        if ev.im.abs() < margin * scale {
            return Err(OdemError::Ellipticity(format!(
                "companion symbol has a near-real eigenvalue {ev}: oscillating-decaying split undefined"
            )));
        }
    }
    let nplus = reorder_schur(&mut dec, |z| z.im > 0.0);
    if nplus != 3 {
        return Err(OdemError::Ellipticity(format!(
            "expected 3 eigenvalues in the upper half plane, found {nplus}"
        )));
    }
    let t11 = DMatrix::from_fn(3, 3, |i, j| dec.t[(i, j)]);
    let t22 = DMatrix::from_fn(3, 3, |i, j| dec.t[(i + 3, j + 3)]);
    let t12 = DMatrix::from_fn(3, 3, |i, j| dec.t[(i, j + 3)]);
    let x = sylvester(&t11, &t22, &(-&t12));
    // q_tilde = U [[I, X], [0, I]] : leading columns span the C+ subspace.
    let mut shear = DMatrix::identity(6, 6);
    let mut shear_inv = DMatrix::identity(6, 6);
    for i in 0..3 {
        for j in 0..3 {
            shear[(i, j + 3)] = x[(i, j)];
            shear_inv[(i, j + 3)] = -x[(i, j)];
        }
    }
    let q_tilde = &dec.q * &shear;
    let q_tilde_inv = &shear_inv * dec.q.adjoint();
    let block = &q_tilde_inv * k * &q_tilde;
    let mut residual: f64 = 0.0;
    for i in 0..6 {
        for j in 0..6 {
            let in_block = (i < 3) == (j < 3);
            if !in_block {
                residual = residual.max(block[(i, j)].norm());
            }
        }
    }
    let k_plus = Matrix3::from_fn(|i, j| block[(i, j)]);
    let k_minus = Matrix3::from_fn(|i, j| block[(i + 3, j + 3)]);
    let a_t = k_plus * C64::new(0.0, -1.0);
    let decay_rate = (0..3).map(|i| t11[(i, i)].im).fold(f64::INFINITY, f64::min);
    let sep = sylvester_separation(&t11, &t22);
    let conditioning = (1.0 + x.norm() * x.norm()) * scale / sep.max(1e-300);
    Ok(SpectralSplit {
        k_mat: k.clone(),
        q_tilde,
        q_tilde_inv,
        k_plus,
        k_minus,
        a_t,
        decay_rate,
        residual,
        conditioning,
        conditioning_warning: conditioning > 1e8,
    })
}

/// Gate used by the builder: the medium must be certified before an OD
/// solution is constructed.
pub fn require_certified(report: Option<&EllipticityReport>) -> Result<&EllipticityReport> {
    report.ok_or_else(|| {
        OdemError::Ellipticity(
            "medium not certified: run certify_medium (check-ellipticity) first".into(),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frame_axis_case() {
        let f = build_frame(&Vector3::z(), 0.0, 0.0).unwrap();
        assert!((f.eta - Vector3::x()).norm() < 1e-14);
        assert!((f.zeta - Vector3::y()).norm() < 1e-14);
        assert!((f.xi - Vector3::x()).norm() < 1e-14);
        assert!(build_frame(&Vector3::zeros(), 0.0, 0.0).is_err());
    }

    #[test]
    fn frame_orthonormal_and_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let f1 = build_frame(&w, 0.3, 1.1).unwrap();
            let f2 = build_frame(&w, 0.3, 1.1).unwrap();
            // bitwise reproducibility
            assert_eq!(f1.eta, f2.eta);
            assert_eq!(f1.zeta, f2.zeta);
            let g = f1.rotation() * f1.rotation().transpose();
            assert!((g - Matrix3::identity()).norm() < 1e-14);
            assert!(f1.xi.dot(&w).abs() < 1e-14);
            assert!((f1.xi.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn isotropic_companion_eigenvalues() {
        let med = Medium::vacuum();
        let frame = build_frame(&Vector3::z(), 0.0, 0.0).unwrap();
        let k = assemble_k([0.1, -0.2], &frame, &med, 1.0, System::A).unwrap();
        let dec = schur(&k);
        for ev in dec.eigenvalues() {
            assert!((ev.norm() - 1.0).abs() < 1e-10, "|ev| = {}", ev.norm());
            assert!(ev.re.abs() < 1e-10);
        }
    }

    #[test]
    fn companion_eigenvalues_are_symbol_roots() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-0.6..0.6));
            let eps = a.transpose() * a + Matrix3::identity();
            let mu = rng.gen_range(0.5..2.0);
            let med = Medium::constant(mu, eps);
            let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let frame = build_frame(&w, 0.1, rng.gen_range(0.0..6.28)).unwrap();
            let which = if trial % 2 == 0 { System::A } else { System::B };
            let m = rng.gen_range(0.3..3.0);
            let k = assemble_k([0.0, 0.0], &frame, &med, m, which).unwrap();
            let (azz, aze, aez, aee) =
                symbol_blocks([0.0, 0.0], &frame, &med, m, which).unwrap();
            for ev in schur(&k).eigenvalues() {
                let s = to_c(&azz) * ev * ev + (to_c(&aze) + to_c(&aez)) * ev + to_c(&aee);
                let d = s.determinant().norm();
                // normalize by the symbol scale
                let scale = azz.norm().powi(3) * (1.0 + ev.norm()).powi(6);
                assert!(d < 1e-9 * scale, "det = {d:.3e}, scale = {scale:.3e}");
            }
            // scale invariance of the spectrum: both symbol coefficients scale together
            let k2 = &k * C64::new(1.0, 0.0);
            let mut e1 = schur(&k).eigenvalues();
            let mut e2 = schur(&k2).eigenvalues();
            let keyf = |z: &C64| (z.re, z.im);
            e1.sort_by(|x, y| keyf(x).partial_cmp(&keyf(y)).unwrap());
            e2.sort_by(|x, y| keyf(x).partial_cmp(&keyf(y)).unwrap());
            for (a, b) in e1.iter().zip(&e2) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn split_isotropic() {
        let med = Medium::vacuum();
        let frame = build_frame(&Vector3::z(), 0.0, 0.3).unwrap();
        let k = assemble_k([0.0, 0.0], &frame, &med, 1.0, System::A).unwrap();
        let s = spectral_split(&k).unwrap();
        assert!(s.residual < 1e-10);
        // K_plus similar to iI, A_t similar to I, decay rate 1.
        let kp = DMatrix::from_fn(3, 3, |i, j| s.k_plus[(i, j)]);
        for ev in schur(&kp).eigenvalues() {
            assert!((ev - C64::new(0.0, 1.0)).norm() < 1e-9);
        }
        assert!((s.decay_rate - 1.0).abs() < 1e-9);
        assert!(!s.conditioning_warning);
    }

    #[test]
    fn split_random_certified_media() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..20 {
            let a = Matrix3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
            let eps = a.transpose() * a + Matrix3::identity() * rng.gen_range(0.8..1.5);
            let med = Medium::constant(rng.gen_range(0.6..1.6), eps);
            let w = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)).normalize();
            let frame = build_frame(&w, -0.2, rng.gen_range(0.0..6.28)).unwrap();
            let which = if trial % 2 == 0 { System::A } else { System::B };
            let k = assemble_k([0.05, 0.0], &frame, &med, 1.0, which).unwrap();
            let s = spectral_split(&k).unwrap();
            assert!(s.residual < 1e-10, "residual = {:.3e}", s.residual);
            assert!(s.decay_rate > 0.0);
            // Re A_t > 0 in the spectral sense
            let at = DMatrix::from_fn(3, 3, |i, j| s.a_t[(i, j)]);
            for ev in schur(&at).eigenvalues() {
                assert!(ev.re > 0.0);
            }
        }
    }

    #[test]
    fn params_validation() {
        let frame = build_frame(&Vector3::z(), 0.0, 0.0).unwrap();
        let mut p = ODParams::default();
        p.b = [C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
        // xi = e1 at angle 0, b parallel to xi -> rejected
        assert!(p.validate(&frame).is_err());
        p.b = [C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        assert!(p.validate(&frame).is_ok());
        p.tau = -1.0;
        assert!(p.validate(&frame).is_err());
    }
}
