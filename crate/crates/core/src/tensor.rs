//! Coefficient algebra for the second-order operators obtained by reducing
//! the anisotropic Maxwell system, plus finite-difference application of the
//! reduced operators on sampled grids.
//!
//! Index convention throughout: `c[i][j][k][l]` multiplies the second
//! derivative `d_j d_l` of component `k` and contributes to result component
//! `i`. The permittivity is written `gamma` in a few places of the source
//! material; here every such occurrence is identified with `eps`.

use crate::error::{OdemError, Result};
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use std::sync::Arc;

/// Levi-Civita symbol; indices are 0-based.
pub fn levi_civita(i: usize, j: usize, k: usize) -> Result<i32> {
    if i > 2 || j > 2 || k > 2 {
        return Err(OdemError::Argument(format!(
            "levi_civita index out of range: ({i},{j},{k})"
        )));
    }
    Ok(match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1,
        _ => 0,
    })
}

/// Rank-4 coefficient tensor of a second-order 3-vector operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub c: [[[[f64; 3]; 3]; 3]; 3],
}

impl Tensor4 {
    pub fn zero() -> Self {
        Tensor4 {
            c: [[[[0.0; 3]; 3]; 3]; 3],
        }
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.c[i][j][k][l]
    }

    /// Largest violation of the pairwise symmetry c_{ijkl} = c_{klij}.
    pub fn symmetry_residual(&self) -> f64 {
        let mut r: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        r = r.max((self.c[i][j][k][l] - self.c[k][l][i][j]).abs());
                    }
                }
            }
        }
        r
    }

    /// Contraction sum_{ijkl} c_{ijkl} a_i a_k b_j b_l.
    pub fn contract(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        s += self.c[i][j][k][l] * a[i] * a[k] * b[j] * b[l];
                    }
                }
            }
        }
        s
    }

    /// The 3x3 matrix <a,b>_{ik} = sum_{jl} c_{ijkl} a_j b_l.
    pub fn dir_matrix(&self, a: &Vector3<f64>, b: &Vector3<f64>) -> Matrix3<f64> {
        Matrix3::from_fn(|i, k| {
            let mut s = 0.0;
            for j in 0..3 {
                for l in 0..3 {
                    s += self.c[i][j][k][l] * a[j] * b[l];
                }
            }
            s
        })
    }
}

/// Second-order coefficients of curl(M curl .): delta_{jl} M_{ki} +
/// delta_{ik} M_{lj} - delta_{jk} M_{li} - delta_{il} M_{kj} +
/// (delta_{il} delta_{jk} - delta_{ik} delta_{jl}) tr(M).
pub fn curl_coeff_tensor(m: &Matrix3<f64>) -> Tensor4 {
    let tr = m.trace();
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut t = Tensor4::zero();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t.c[i][j][k][l] = d(j, l) * m[(k, i)] + d(i, k) * m[(l, j)]
                        - d(j, k) * m[(l, i)]
                        - d(i, l) * m[(k, j)]
                        + (d(i, l) * d(j, k) - d(i, k) * d(j, l)) * tr;
                }
            }
        }
    }
    t
}

/// Invert a 3x3 SPD-ish matrix with a determinant guard.
pub fn invert3_guarded(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = m.determinant();
    let scale = m.norm();
    if det.abs() < 1e-14 * scale.powi(3).max(1e-300) {
        return Err(OdemError::Numeric(format!(
            "singular 3x3 matrix: |det| = {:.3e}, condition floor {:.3e}",
            det.abs(),
            1e-14 * scale.powi(3)
        )));
    }
    m.try_inverse()
        .ok_or_else(|| OdemError::Numeric("3x3 inversion failed".into()))
}

/// Scalar and tensor material data for the reduced elliptic systems.
///
/// `eps(x) = eps0(x) - eps_d(x) * chi_d(x)`; `mu` is a positive scalar.
#[derive(Clone)]
pub struct Medium {
    pub mu: Arc<dyn Fn(&Vector3<f64>) -> f64 + Send + Sync>,
    pub eps0: Arc<dyn Fn(&Vector3<f64>) -> Matrix3<f64> + Send + Sync>,
    pub eps_d: Arc<dyn Fn(&Vector3<f64>) -> Matrix3<f64> + Send + Sync>,
    pub chi_d: Arc<dyn Fn(&Vector3<f64>) -> bool + Send + Sync>,
}

impl std::fmt::Debug for Medium {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Medium{..}")
    }
}

impl Medium {
    /// Homogeneous background medium with no obstacle contrast.
    pub fn constant(mu: f64, eps0: Matrix3<f64>) -> Self {
        Medium {
            mu: Arc::new(move |_| mu),
            eps0: Arc::new(move |_| eps0),
            eps_d: Arc::new(|_| Matrix3::zeros()),
            chi_d: Arc::new(|_| false),
        }
    }

    pub fn vacuum() -> Self {
        Self::constant(1.0, Matrix3::identity())
    }

    pub fn mu_at(&self, x: &Vector3<f64>) -> f64 {
        (self.mu)(x)
    }

    /// Full permittivity including the obstacle contrast.
    pub fn eps_at(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        let mut e = (self.eps0)(x);
        if (self.chi_d)(x) {
            e -= (self.eps_d)(x);
        }
        e
    }

    /// Background permittivity (no obstacle).
    pub fn eps0_at(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        (self.eps0)(x)
    }

    /// Checks mu >= mu_c > 0 and eps SPD at a point; returns (mu, eps).
    pub fn check_point(&self, x: &Vector3<f64>) -> Result<(f64, Matrix3<f64>)> {
        let mu = self.mu_at(x);
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(OdemError::Data(format!(
                "mu(x) = {mu} not positive at x = ({:.4}, {:.4}, {:.4})",
                x.x, x.y, x.z
            )));
        }
        let eps = self.eps_at(x);
        let eig = eps.symmetric_eigenvalues();
        if eig.min() <= 0.0 {
            return Err(OdemError::Data(format!(
                "eps(x) not positive definite at x = ({:.4}, {:.4}, {:.4}): min eig {:.3e}",
                x.x, x.y, x.z,
                eig.min()
            )));
        }
        Ok((mu, eps))
    }

    /// Rotate the medium: the returned medium, evaluated at y, reports the
    /// tensors of `self` at x = rot^T y + shift, conjugated by the rotation.
    pub fn rotated(&self, rot: Matrix3<f64>, shift: Vector3<f64>) -> Medium {
        let rt = rot.transpose();
        let mu = self.mu.clone();
        let eps0 = self.eps0.clone();
        let eps_d = self.eps_d.clone();
        let chi_d = self.chi_d.clone();
        let back = move |y: &Vector3<f64>| rt * y + shift;
        let b1 = back;
        let b2 = back;
        let b3 = back;
        Medium {
            mu: Arc::new(move |y| mu(&back(y))),
            eps0: Arc::new(move |y| rot * eps0(&b1(y)) * rt),
            eps_d: Arc::new(move |y| rot * eps_d(&b2(y)) * rt),
            chi_d: Arc::new(move |y| chi_d(&b3(y))),
        }
    }
}

/// Which reduced elliptic system a coefficient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    /// mu grad tr(M^A grad A) - curl(eps^{-1} curl A) + k^2 mu A, M^A = m mu^{-1} I
    A,
    /// eps grad tr(M^B grad B) - curl(mu^{-1} curl B) + k^2 eps B, M^B = m mu^{-1} eps
    B,
}

/// Leading coefficients C^A_{ijkl} = mu delta_{ij} M^A_{lk} - Ctilde(eps^{-1}).
pub fn leading_coeff_a(med: &Medium, m: f64, x: &Vector3<f64>) -> Result<Tensor4> {
    let (mu, eps) = med.check_point(x)?;
    let eps_inv = invert3_guarded(&eps)?;
    let ct = curl_coeff_tensor(&eps_inv);
    // M^A = m mu^{-1} I, so mu delta_{ij} M^A_{lk} = m delta_{ij} delta_{lk}.
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut t = Tensor4::zero();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t.c[i][j][k][l] = mu * d(i, j) * (m / mu) * d(l, k) - ct.c[i][j][k][l];
                }
            }
        }
    }
    Ok(t)
}

/// Leading coefficients C^B_{ijkl} = eps_{ij} M^B_{lk} - mu^{-1}(d_il d_jk - d_ik d_jl).
pub fn leading_coeff_b(med: &Medium, m: f64, x: &Vector3<f64>) -> Result<Tensor4> {
    let (mu, eps) = med.check_point(x)?;
    let mb = eps * (m / mu);
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let mut t = Tensor4::zero();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    t.c[i][j][k][l] =
                        eps[(i, j)] * mb[(l, k)] - (d(i, l) * d(j, k) - d(i, k) * d(j, l)) / mu;
                }
            }
        }
    }
    Ok(t)
}

pub fn leading_coeff(which: System, med: &Medium, m: f64, x: &Vector3<f64>) -> Result<Tensor4> {
    match which {
        System::A => leading_coeff_a(med, m, x),
        System::B => leading_coeff_b(med, m, x),
    }
}

/// Grid staggering tag for sampled vector fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Staggering {
    Node,
    YeeEdge,
    YeeFace,
}

/// Uniform-grid complex 3-vector field.
#[derive(Debug, Clone)]
pub struct GridField {
    pub origin: Vector3<f64>,
    pub h: f64,
    /// Node counts per axis.
    pub dims: [usize; 3],
    pub staggering: Staggering,
    /// Row-major over (i, j, k), 3 complex components per node.
    pub data: Vec<[C64; 3]>,
}

impl GridField {
    pub fn zeros(origin: Vector3<f64>, h: f64, dims: [usize; 3], staggering: Staggering) -> Result<Self> {
        if dims.iter().any(|&d| d < 4) {
            return Err(OdemError::Argument(format!(
                "grid dims must be >= 4 per axis, got {dims:?}"
            )));
        }
        if !(h > 0.0) {
            return Err(OdemError::Argument(format!("grid spacing must be positive, got {h}")));
        }
        Ok(GridField {
            origin,
            h,
            dims,
            staggering,
            data: vec![[C64::new(0.0, 0.0); 3]; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn from_fn(
        origin: Vector3<f64>,
        h: f64,
        dims: [usize; 3],
        staggering: Staggering,
        mut f: impl FnMut(&Vector3<f64>) -> [C64; 3],
    ) -> Result<Self> {
        let mut g = Self::zeros(origin, h, dims, staggering)?;
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let x = g.point(i, j, k);
                    let idx = g.index(i, j, k);
                    g.data[idx] = f(&x);
                }
            }
        }
        Ok(g)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.h
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> [C64; 3] {
        self.data[self.index(i, j, k)]
    }

    pub fn same_shape(&self, other: &GridField) -> bool {
        self.dims == other.dims
            && (self.h - other.h).abs() < 1e-14
            && (self.origin - other.origin).norm() < 1e-12
    }

    /// Max norm over all components and nodes.
    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// 4th-order central first-derivative along axis `ax` at an interior node.
fn d1(g: &GridField, c: usize, ax: usize, i: usize, j: usize, k: usize) -> C64 {
    let sh = |d: i64| -> C64 {
        let (mut ii, mut jj, mut kk) = (i as i64, j as i64, k as i64);
        match ax {
            0 => ii += d,
            1 => jj += d,
            _ => kk += d,
        }
        g.data[g.index(ii as usize, jj as usize, kk as usize)][c]
    };
    (sh(-2) - sh(2) + (sh(1) - sh(-1)) * 8.0) / (12.0 * g.h)
}

/// Interior margin required by the 4th-order stencils.
pub const FD_MARGIN: usize = 2;

fn require_margin(g: &GridField, label: &str) -> Result<()> {
    if g.dims.iter().any(|&d| d < 2 * FD_MARGIN + 1) {
        return Err(OdemError::Argument(format!(
            "{label}: grid too small for 4th-order interior stencils: {:?}",
            g.dims
        )));
    }
    Ok(())
}

/// Curl of a node-centered field by 4th-order differences; the 2-node margin
/// of the output is left as zero.
pub fn curl_fd(g: &GridField) -> Result<GridField> {
    require_margin(g, "curl_fd")?;
    let mut out = GridField::zeros(g.origin, g.h, g.dims, g.staggering)?;
    for i in FD_MARGIN..g.dims[0] - FD_MARGIN {
        for j in FD_MARGIN..g.dims[1] - FD_MARGIN {
            for k in FD_MARGIN..g.dims[2] - FD_MARGIN {
                let cx = d1(g, 2, 1, i, j, k) - d1(g, 1, 2, i, j, k);
                let cy = d1(g, 0, 2, i, j, k) - d1(g, 2, 0, i, j, k);
                let cz = d1(g, 1, 0, i, j, k) - d1(g, 0, 1, i, j, k);
                let idx = out.index(i, j, k);
                out.data[idx] = [cx, cy, cz];
            }
        }
    }
    Ok(out)
}

fn map_pointwise(
    g: &GridField,
    mut f: impl FnMut(&Vector3<f64>, [C64; 3]) -> [C64; 3],
) -> GridField {
    let mut out = g.clone();
    for i in 0..g.dims[0] {
        for j in 0..g.dims[1] {
            for k in 0..g.dims[2] {
                let x = g.point(i, j, k);
                let idx = g.index(i, j, k);
                out.data[idx] = f(&x, g.data[idx]);
            }
        }
    }
    out
}

fn apply_mat(m: &Matrix3<f64>, v: [C64; 3]) -> [C64; 3] {
    let mut out = [C64::new(0.0, 0.0); 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += m[(i, j)] * v[j];
        }
    }
    out
}

/// Apply the reduced operator L_A or L_B to a node-centered grid field.
///
/// The composition differentiates the material coefficients implicitly: the
/// trace term is formed as a scalar field then differentiated, and the
/// double-curl nests two 4th-order curls around the pointwise material
/// action. Valid on the interior with a 4-node margin (two nested stencils).
pub fn apply_l(
    which: System,
    field: &GridField,
    med: &Medium,
    m: f64,
    k_wave: f64,
) -> Result<GridField> {
    if field.staggering != Staggering::Node {
        return Err(OdemError::Argument(
            "apply_l expects a node-centered field".into(),
        ));
    }
    require_margin(field, "apply_l")?;
    let g = field;
    // Scalar field s = tr(M grad F) = sum_{lk} M_{lk} d_l F_k.
    // Represent s as component 0 of a GridField for reuse of the stencils.
    let mut s = GridField::zeros(g.origin, g.h, g.dims, Staggering::Node)?;
    for i in FD_MARGIN..g.dims[0] - FD_MARGIN {
        for j in FD_MARGIN..g.dims[1] - FD_MARGIN {
            for k in FD_MARGIN..g.dims[2] - FD_MARGIN {
                let x = g.point(i, j, k);
                let (mu, eps) = med.check_point(&x)?;
                let mm = match which {
                    System::A => Matrix3::identity() * (m / mu),
                    System::B => eps * (m / mu),
                };
                let mut tr = C64::new(0.0, 0.0);
                for l in 0..3 {
                    for kc in 0..3 {
                        tr += mm[(l, kc)] * d1(g, kc, l, i, j, k);
                    }
                }
                let idx = s.index(i, j, k);
                s.data[idx] = [tr, C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
            }
        }
    }
    // curl F, then material^{-1} curl, then curl again.
    let curl1 = curl_fd(g)?;
    let weighted = map_pointwise(&curl1, |x, v| {
        let w = match which {
            System::A => invert3_guarded(&med.eps_at(x)).unwrap_or_else(|_| Matrix3::zeros()),
            System::B => Matrix3::identity() / med.mu_at(x),
        };
        apply_mat(&w, v)
    });
    let curl2 = curl_fd(&weighted)?;

    let mut out = GridField::zeros(g.origin, g.h, g.dims, Staggering::Node)?;
    let mg = 2 * FD_MARGIN;
    for i in mg..g.dims[0] - mg {
        for j in mg..g.dims[1] - mg {
            for k in mg..g.dims[2] - mg {
                let x = g.point(i, j, k);
                let (mu, eps) = med.check_point(&x)?;
                let front = match which {
                    System::A => Matrix3::identity() * mu,
                    System::B => eps,
                };
                let grad_s = [
                    d1(&s, 0, 0, i, j, k),
                    d1(&s, 0, 1, i, j, k),
                    d1(&s, 0, 2, i, j, k),
                ];
                let t1 = apply_mat(&front, grad_s);
                let c2 = curl2.get(i, j, k);
                let f = g.get(i, j, k);
                let zero_order = apply_mat(&(front * k_wave * k_wave), f);
                let idx = out.index(i, j, k);
                for c in 0..3 {
                    out.data[idx][c] = t1[c] - c2[c] + zero_order[c];
                }
            }
        }
    }
    Ok(out)
}

/// Residuals of the first-order Maxwell system on interior nodes:
/// (curl E - i k mu H, curl H + i k eps E).
pub fn apply_maxwell_residual(
    e: &GridField,
    h: &GridField,
    med: &Medium,
    k_wave: f64,
) -> Result<(GridField, GridField)> {
    if !e.same_shape(h) {
        return Err(OdemError::Argument(
            "apply_maxwell_residual: E and H grids differ in shape".into(),
        ));
    }
    let ik = C64::new(0.0, k_wave);
    let curl_e = curl_fd(e)?;
    let curl_h = curl_fd(h)?;
    let r1 = map_pointwise(&curl_e, |x, v| {
        let mu = med.mu_at(x);
        let hx = h.data[h.index_of(x, e.h)];
        let mut out = [C64::new(0.0, 0.0); 3];
        for c in 0..3 {
            out[c] = v[c] - ik * mu * hx[c];
        }
        out
    });
    let r2 = map_pointwise(&curl_h, |x, v| {
        let eps = med.eps_at(x);
        let ex = e.data[e.index_of(x, e.h)];
        let pe = apply_mat(&eps, ex);
        let mut out = [C64::new(0.0, 0.0); 3];
        for c in 0..3 {
            out[c] = v[c] + ik * pe[c];
        }
        out
    });
    // Zero the FD margin so norms only see valid interior values.
    let mut r1 = r1;
    let mut r2 = r2;
    zero_margin(&mut r1);
    zero_margin(&mut r2);
    Ok((r1, r2))
}

fn zero_margin(g: &mut GridField) {
    let dims = g.dims;
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let interior = (FD_MARGIN..dims[0] - FD_MARGIN).contains(&i)
                    && (FD_MARGIN..dims[1] - FD_MARGIN).contains(&j)
                    && (FD_MARGIN..dims[2] - FD_MARGIN).contains(&k);
                if !interior {
                    let idx = g.index(i, j, k);
                    g.data[idx] = [C64::new(0.0, 0.0); 3];
                }
            }
        }
    }
}

impl GridField {
    /// Index of the node at physical point x (must lie on the grid).
    fn index_of(&self, x: &Vector3<f64>, h: f64) -> usize {
        let i = ((x.x - self.origin.x) / h).round() as usize;
        let j = ((x.y - self.origin.y) / h).round() as usize;
        let k = ((x.z - self.origin.z) / h).round() as usize;
        self.index(i, j, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0))
    }

    fn rand_spd(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let a = rand_mat(rng);
        a.transpose() * a + Matrix3::identity() * 0.5
    }

    #[test]
    fn levi_civita_values() {
        assert_eq!(levi_civita(0, 1, 2).unwrap(), 1);
        assert_eq!(levi_civita(1, 0, 2).unwrap(), -1);
        assert_eq!(levi_civita(0, 0, 1).unwrap(), 0);
        assert!(levi_civita(3, 0, 0).is_err());
        // total antisymmetry
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let e = levi_civita(i, j, k).unwrap();
                    assert_eq!(levi_civita(j, i, k).unwrap(), -e);
                    assert_eq!(levi_civita(i, k, j).unwrap(), -e);
                }
            }
        }
    }

    #[test]
    fn curl_tensor_zero_and_identity() {
        let z = curl_coeff_tensor(&Matrix3::zeros());
        assert_eq!(z.symmetry_residual(), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert_eq!(z.c[i][j][k][l], 0.0);
                    }
                }
            }
        }
        // curl curl = grad div - laplace: the d_22 f_1 coefficient in
        // component 1 is -1.
        let t = curl_coeff_tensor(&Matrix3::identity());
        assert_eq!(t.get(0, 1, 0, 1), -1.0);
    }

    #[test]
    fn curl_tensor_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m1 = rand_mat(&mut rng);
        let m2 = rand_mat(&mut rng);
        let (al, be) = (0.7, -1.3);
        let lhs = curl_coeff_tensor(&(m1 * al + m2 * be));
        let t1 = curl_coeff_tensor(&m1);
        let t2 = curl_coeff_tensor(&m2);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let rhs = al * t1.c[i][j][k][l] + be * t2.c[i][j][k][l];
                        assert!((lhs.c[i][j][k][l] - rhs).abs() < 1e-12);
                    }
                }
            }
        }
    }

    /// Oracle: expand curl(M curl F) for quadratic F by exact central
    /// differences (exact on quadratics) and match against the tensor.
    #[test]
    fn curl_tensor_matches_bruteforce_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let m = rand_mat(&mut rng);
            let t = curl_coeff_tensor(&m);
            for j in 0..3 {
                for l in 0..3 {
                    for k in 0..3 {
                        // F = x_j x_l e_k; second-order part of curl(M curl F)
                        // is constant = C_{ijkl} + C_{ilkj} per component i.
                        let f = |x: &Vector3<f64>| {
                            let mut v = [0.0; 3];
                            v[k] = x[j] * x[l];
                            v
                        };
                        let h = 0.25;
                        let curl = |g: &dyn Fn(&Vector3<f64>) -> [f64; 3], x: &Vector3<f64>| {
                            let mut out = [0.0; 3];
                            let d = |c: usize, ax: usize| {
                                let mut xp = *x;
                                let mut xm = *x;
                                xp[ax] += h;
                                xm[ax] -= h;
                                (g(&xp)[c] - g(&xm)[c]) / (2.0 * h)
                            };
                            out[0] = d(2, 1) - d(1, 2);
                            out[1] = d(0, 2) - d(2, 0);
                            out[2] = d(1, 0) - d(0, 1);
                            out
                        };
                        let mg = |x: &Vector3<f64>| {
                            let c = curl(&f, x);
                            let mut v = [0.0; 3];
                            for a in 0..3 {
                                for b in 0..3 {
                                    v[a] += m[(a, b)] * c[b];
                                }
                            }
                            v
                        };
                        let x0 = Vector3::new(0.3, -0.2, 0.15);
                        let val = curl(&mg, &x0);
                        for i in 0..3 {
                            let expect = t.c[i][j][k][l] + t.c[i][l][k][j];
                            assert!(
                                (val[i] - expect).abs() < 1e-10,
                                "i={i} j={j} k={k} l={l}: {} vs {}",
                                val[i],
                                expect
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn leading_coeff_a_values_and_symmetry() {
        let med = Medium::vacuum();
        let t = leading_coeff_a(&med, 1.0, &Vector3::zeros()).unwrap();
        assert!((t.get(0, 0, 0, 0) - 1.0).abs() < 1e-15);
        assert_eq!(t.symmetry_residual(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let spd = rand_spd(&mut rng);
            let med = Medium::constant(rng.gen_range(0.5..2.0), spd);
            let m = rng.gen_range(0.1..5.0);
            let t = leading_coeff_a(&med, m, &Vector3::zeros()).unwrap();
            assert!(t.symmetry_residual() < 1e-13);
        }
    }

    #[test]
    fn leading_coeff_a_contraction_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..50 {
            let spd = rand_spd(&mut rng);
            let mu = rng.gen_range(0.5..2.0);
            let med = Medium::constant(mu, spd);
            let m = rng.gen_range(0.1..5.0);
            let t = leading_coeff_a(&med, m, &Vector3::zeros()).unwrap();
            let a = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let b = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let ei = spd.try_inverse().unwrap();
            let expect = ei.trace() * a.norm_squared() * b.norm_squared()
                - a.norm_squared() * (b.dot(&(ei * b)))
                - b.norm_squared() * (a.dot(&(ei * a)))
                - ei.trace() * a.dot(&b).powi(2)
                + 2.0 * a.dot(&b) * (b.dot(&(ei * a)))
                + mu * a.dot(&b) * (b.dot(&(Matrix3::identity() * (m / mu) * a)));
            let got = t.contract(&a, &b);
            assert!(
                (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                "got {got} expect {expect}"
            );
        }
    }

    #[test]
    fn leading_coeff_b_value_and_contraction() {
        let med = Medium::vacuum();
        let t = leading_coeff_b(&med, 1.0, &Vector3::zeros()).unwrap();
        // (i,j,k,l) = (0,1,1,0): eps_01 * M^B_01 - mu^{-1}(d00 d11 - d01 d10) = -1
        assert!((t.get(0, 1, 1, 0) + 1.0).abs() < 1e-15);
        assert_eq!(t.symmetry_residual(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let spd = rand_spd(&mut rng);
            let mu = rng.gen_range(0.5..2.0);
            let m = rng.gen_range(0.1..5.0);
            let med = Medium::constant(mu, spd);
            let t = leading_coeff_b(&med, m, &Vector3::zeros()).unwrap();
            assert!(t.symmetry_residual() < 1e-13);
            let a = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let b = Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let aeb = a.dot(&(spd * b));
            let expect = (m * aeb * aeb
                - (a.dot(&b).powi(2) - a.norm_squared() * b.norm_squared()))
                / mu;
            let got = t.contract(&a, &b);
            assert!(
                (got - expect).abs() <= 1e-12 * expect.abs().max(1.0),
                "got {got} expect {expect}"
            );
        }
    }

    #[test]
    fn apply_l_constant_field() {
        let med = Medium::vacuum();
        let k = 1.7;
        let g = GridField::from_fn(
            Vector3::new(-0.5, -0.5, -0.5),
            0.1,
            [11, 11, 11],
            Staggering::Node,
            |_| [C64::new(1.0, 0.0), C64::new(-2.0, 0.5), C64::new(0.3, 0.0)],
        )
        .unwrap();
        let out = apply_l(System::A, &g, &med, 1.0, k).unwrap();
        let v = out.get(5, 5, 5);
        assert!((v[0] - C64::new(k * k, 0.0)).norm() < 1e-10);
        assert!((v[1] - C64::new(-2.0 * k * k, 0.5 * k * k)).norm() < 1e-10);
    }

    #[test]
    fn apply_l_isotropic_plane_wave() {
        // L_A = laplace + k^2 at m = mu = eps = 1, so a plane wave maps to
        // (k^2 - |kappa|^2) times itself, up to h^4 stencil error.
        let med = Medium::vacuum();
        let k = 1.0;
        let kappa = Vector3::new(2.0, -1.0, 0.5);
        let b = [C64::new(0.7, 0.0), C64::new(0.0, -0.4), C64::new(1.1, 0.2)];
        let h = 0.05;
        let g = GridField::from_fn(
            Vector3::new(-0.5, -0.5, -0.5),
            h,
            [21, 21, 21],
            Staggering::Node,
            |x| {
                let ph = (C64::new(0.0, kappa.dot(x))).exp();
                [b[0] * ph, b[1] * ph, b[2] * ph]
            },
        )
        .unwrap();
        let out = apply_l(System::A, &g, &med, 1.0, k).unwrap();
        let factor = k * k - kappa.norm_squared();
        let mut max_rel: f64 = 0.0;
        for i in 5..16 {
            for j in 5..16 {
                for kk in 5..16 {
                    let got = out.get(i, j, kk);
                    let f = g.get(i, j, kk);
                    for c in 0..3 {
                        let expect = f[c] * factor;
                        if expect.norm() > 1e-9 {
                            max_rel = max_rel.max((got[c] - expect).norm() / expect.norm());
                        }
                    }
                }
            }
        }
        // 4th-order stencil at kappa*h ~ 0.1: error ~ (kappa h)^4
        assert!(max_rel < 2e-5, "max_rel={max_rel}");
    }

    #[test]
    fn maxwell_residual_zero_and_plane_wave() {
        let med = Medium::vacuum();
        let k = 2.0;
        let dims = [13, 13, 13];
        let h = 0.07;
        let origin = Vector3::new(-0.42, -0.42, -0.42);
        let e0 = GridField::zeros(origin, h, dims, Staggering::Node).unwrap();
        let h0 = GridField::zeros(origin, h, dims, Staggering::Node).unwrap();
        let (r1, r2) = apply_maxwell_residual(&e0, &h0, &med, k).unwrap();
        assert_eq!(r1.max_norm(), 0.0);
        assert_eq!(r2.max_norm(), 0.0);

        // vacuum plane wave E = p e^{ikx3}, H = (e3 x p) e^{ikx3}
        let p = Vector3::new(1.0, 0.0, 0.0);
        let e3 = Vector3::z();
        let hp = e3.cross(&p);
        let mk = |v: Vector3<f64>| {
            move |x: &Vector3<f64>| {
                let ph = C64::new(0.0, k * x.z).exp();
                [v.x * ph, v.y * ph, v.z * ph]
            }
        };
        let mut errs = Vec::new();
        for n in [13usize, 25] {
            let h = 0.84 / (n - 1) as f64;
            let e = GridField::from_fn(origin, h, [n, n, n], Staggering::Node, mk(p)).unwrap();
            let hh = GridField::from_fn(origin, h, [n, n, n], Staggering::Node, mk(hp)).unwrap();
            let (r1, r2) = apply_maxwell_residual(&e, &hh, &med, k).unwrap();
            errs.push(r1.max_norm().max(r2.max_norm()));
        }
        // 4th-order convergence: halving h divides the residual by ~16.
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 3.7, "rate={rate}, errs={errs:?}");
    }
}
