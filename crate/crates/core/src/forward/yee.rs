//! Staggered-grid discretization of the second-order curl-curl form in H.
//!
//! H components live on edges (tangential components on the boundary planes
//! carry the Dirichlet data), curls of edge fields live on faces, and the
//! anisotropic material acts through cell-collocated averaging, so the two
//! curls are exact transposes and the assembled operator is real symmetric.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

const C0: C64 = C64::new(0.0, 0.0);

/// Cubic staggered grid: n cells per axis on [lo, lo + n h]^3.
#[derive(Debug, Clone, Copy)]
pub struct StaggeredGrid {
    pub n: usize,
    pub lo: f64,
    pub h: f64,
}

impl StaggeredGrid {
    pub fn new(n: usize, lo: f64, hi: f64) -> Self {
        StaggeredGrid {
            n,
            lo,
            h: (hi - lo) / n as f64,
        }
    }

    #[inline]
    pub fn ex_len(&self) -> usize {
        self.n * (self.n + 1) * (self.n + 1)
    }
    #[inline]
    pub fn cells(&self) -> usize {
        self.n * self.n * self.n
    }

    // Edge indexing: Ex(ci, j, k) with ci in 0..n, j,k in 0..=n; similarly
    // rotated for Ey, Ez.
    #[inline]
    pub fn ex(&self, ci: usize, j: usize, k: usize) -> usize {
        (ci * (self.n + 1) + j) * (self.n + 1) + k
    }
    #[inline]
    pub fn ey(&self, i: usize, cj: usize, k: usize) -> usize {
        (cj * (self.n + 1) + i) * (self.n + 1) + k
    }
    #[inline]
    pub fn ez(&self, i: usize, j: usize, ck: usize) -> usize {
        (ck * (self.n + 1) + i) * (self.n + 1) + j
    }

    // Face indexing: Fx(i, cj, ck) with i in 0..=n, cj,ck in 0..n.
    #[inline]
    pub fn fx(&self, i: usize, cj: usize, ck: usize) -> usize {
        (i * self.n + cj) * self.n + ck
    }
    #[inline]
    pub fn fy(&self, ci: usize, j: usize, ck: usize) -> usize {
        (j * self.n + ci) * self.n + ck
    }
    #[inline]
    pub fn fz(&self, ci: usize, cj: usize, k: usize) -> usize {
        (k * self.n + ci) * self.n + cj
    }
    #[inline]
    pub fn fx_len(&self) -> usize {
        (self.n + 1) * self.n * self.n
    }

    #[inline]
    pub fn cell(&self, ci: usize, cj: usize, ck: usize) -> usize {
        (ci * self.n + cj) * self.n + ck
    }

    pub fn ex_center(&self, ci: usize, j: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + (ci as f64 + 0.5) * self.h,
            self.lo + j as f64 * self.h,
            self.lo + k as f64 * self.h,
        )
    }
    pub fn ey_center(&self, i: usize, cj: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + i as f64 * self.h,
            self.lo + (cj as f64 + 0.5) * self.h,
            self.lo + k as f64 * self.h,
        )
    }
    pub fn ez_center(&self, i: usize, j: usize, ck: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + i as f64 * self.h,
            self.lo + j as f64 * self.h,
            self.lo + (ck as f64 + 0.5) * self.h,
        )
    }
    pub fn fx_center(&self, i: usize, cj: usize, ck: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + i as f64 * self.h,
            self.lo + (cj as f64 + 0.5) * self.h,
            self.lo + (ck as f64 + 0.5) * self.h,
        )
    }
    pub fn fy_center(&self, ci: usize, j: usize, ck: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + (ci as f64 + 0.5) * self.h,
            self.lo + j as f64 * self.h,
            self.lo + (ck as f64 + 0.5) * self.h,
        )
    }
    pub fn fz_center(&self, ci: usize, cj: usize, k: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + (ci as f64 + 0.5) * self.h,
            self.lo + (cj as f64 + 0.5) * self.h,
            self.lo + k as f64 * self.h,
        )
    }
    pub fn cell_center(&self, ci: usize, cj: usize, ck: usize) -> Vector3<f64> {
        Vector3::new(
            self.lo + (ci as f64 + 0.5) * self.h,
            self.lo + (cj as f64 + 0.5) * self.h,
            self.lo + (ck as f64 + 0.5) * self.h,
        )
    }
}

/// Complex field on the edge degrees of freedom.
#[derive(Debug, Clone)]
pub struct EdgeField {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub z: Vec<C64>,
}

impl EdgeField {
    pub fn zeros(g: &StaggeredGrid) -> Self {
        EdgeField {
            x: vec![C0; g.ex_len()],
            y: vec![C0; g.ex_len()],
            z: vec![C0; g.ex_len()],
        }
    }
    pub fn len(&self) -> usize {
        self.x.len() * 3
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn axpy(&mut self, a: C64, other: &EdgeField) {
        for (d, s) in self.x.iter_mut().zip(&other.x) {
            *d += a * s;
        }
        for (d, s) in self.y.iter_mut().zip(&other.y) {
            *d += a * s;
        }
        for (d, s) in self.z.iter_mut().zip(&other.z) {
            *d += a * s;
        }
    }
    pub fn scale(&mut self, a: C64) {
        for d in self.x.iter_mut().chain(self.y.iter_mut()).chain(self.z.iter_mut()) {
            *d *= a;
        }
    }
    /// Hermitian inner product <self, other>.
    pub fn dot(&self, other: &EdgeField) -> C64 {
        let mut acc = C0;
        for (a, b) in self.x.iter().zip(&other.x) {
            acc += a.conj() * b;
        }
        for (a, b) in self.y.iter().zip(&other.y) {
            acc += a.conj() * b;
        }
        for (a, b) in self.z.iter().zip(&other.z) {
            acc += a.conj() * b;
        }
        acc
    }
    pub fn norm(&self) -> f64 {
        self.dot(self).re.max(0.0).sqrt()
    }
}

/// Complex field on the face degrees of freedom.
#[derive(Debug, Clone)]
pub struct FaceField {
    pub x: Vec<C64>,
    pub y: Vec<C64>,
    pub z: Vec<C64>,
}

impl FaceField {
    pub fn zeros(g: &StaggeredGrid) -> Self {
        FaceField {
            x: vec![C0; g.fx_len()],
            y: vec![C0; g.fx_len()],
            z: vec![C0; g.fx_len()],
        }
    }
}

/// curl of an edge field, on faces.
pub fn curl_e(g: &StaggeredGrid, u: &EdgeField, out: &mut FaceField) {
    let n = g.n;
    let hinv = 1.0 / g.h;
    out.x
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, v)| {
            let i = idx / (n * n);
            let cj = (idx / n) % n;
            let ck = idx % n;
            *v = (u.z[g.ez(i, cj + 1, ck)] - u.z[g.ez(i, cj, ck)] - u.y[g.ey(i, cj, ck + 1)]
                + u.y[g.ey(i, cj, ck)])
                * hinv;
        });
    out.y
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, v)| {
            let j = idx / (n * n);
            let ci = (idx / n) % n;
            let ck = idx % n;
            *v = (u.x[g.ex(ci, j, ck + 1)] - u.x[g.ex(ci, j, ck)] - u.z[g.ez(ci + 1, j, ck)]
                + u.z[g.ez(ci, j, ck)])
                * hinv;
        });
    out.z
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, v)| {
            let k = idx / (n * n);
            let ci = (idx / n) % n;
            let cj = idx % n;
            *v = (u.y[g.ey(ci + 1, cj, k)] - u.y[g.ey(ci, cj, k)] - u.x[g.ex(ci, cj + 1, k)]
                + u.x[g.ex(ci, cj, k)])
                * hinv;
        });
}

/// Transpose curl: face field to edges. Rows at boundary edges are left
/// untouched by the caller's masking; values computed only where all four
/// faces exist (interior edges).
pub fn curl_f(g: &StaggeredGrid, v: &FaceField, out: &mut EdgeField) {
    let n = g.n;
    let hinv = 1.0 / g.h;
    out.x
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let ci = idx / ((n + 1) * (n + 1));
            let j = (idx / (n + 1)) % (n + 1);
            let k = idx % (n + 1);
            if j == 0 || j == n || k == 0 || k == n {
                *o = C0;
                return;
            }
            *o = (v.z[g.fz(ci, j, k)] - v.z[g.fz(ci, j - 1, k)] - v.y[g.fy(ci, j, k)]
                + v.y[g.fy(ci, j, k - 1)])
                * hinv;
        });
    out.y
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let cj = idx / ((n + 1) * (n + 1));
            let i = (idx / (n + 1)) % (n + 1);
            let k = idx % (n + 1);
            if i == 0 || i == n || k == 0 || k == n {
                *o = C0;
                return;
            }
            *o = (v.x[g.fx(i, cj, k)] - v.x[g.fx(i, cj, k - 1)] - v.z[g.fz(i, cj, k)]
                + v.z[g.fz(i - 1, cj, k)])
                * hinv;
        });
    out.z
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let ck = idx / ((n + 1) * (n + 1));
            let i = (idx / (n + 1)) % (n + 1);
            let j = idx % (n + 1);
            if i == 0 || i == n || j == 0 || j == n {
                *o = C0;
                return;
            }
            *o = (v.y[g.fy(i, j, ck)] - v.y[g.fy(i - 1, j, ck)] - v.x[g.fx(i, j, ck)]
                + v.x[g.fx(i, j - 1, ck)])
                * hinv;
        });
}

/// Cell-collocated symmetric application of a 3x3 material tensor to a face
/// field: average faces to cells, multiply, scatter back with the adjoint
/// weights.
pub fn material_apply(
    g: &StaggeredGrid,
    mats: &[Matrix3<f64>],
    v: &FaceField,
    cells: &mut Vec<[C64; 3]>,
    out: &mut FaceField,
) {
    let n = g.n;
    cells
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, c)| {
            let ci = idx / (n * n);
            let cj = (idx / n) % n;
            let ck = idx % n;
            let ax = (v.x[g.fx(ci, cj, ck)] + v.x[g.fx(ci + 1, cj, ck)]) * 0.5;
            let ay = (v.y[g.fy(ci, cj, ck)] + v.y[g.fy(ci, cj + 1, ck)]) * 0.5;
            let az = (v.z[g.fz(ci, cj, ck)] + v.z[g.fz(ci, cj, ck + 1)]) * 0.5;
            let m = &mats[idx];
            for r in 0..3 {
                c[r] = m[(r, 0)] * ax + m[(r, 1)] * ay + m[(r, 2)] * az;
            }
        });
    let cref: &Vec<[C64; 3]> = cells;
    out.x
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let i = idx / (n * n);
            let cj = (idx / n) % n;
            let ck = idx % n;
            let mut acc = C0;
            if i > 0 {
                acc += cref[g.cell(i - 1, cj, ck)][0];
            }
            if i < n {
                acc += cref[g.cell(i, cj, ck)][0];
            }
            *o = acc * 0.5;
        });
    out.y
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let j = idx / (n * n);
            let ci = (idx / n) % n;
            let ck = idx % n;
            let mut acc = C0;
            if j > 0 {
                acc += cref[g.cell(ci, j - 1, ck)][1];
            }
            if j < n {
                acc += cref[g.cell(ci, j, ck)][1];
            }
            *o = acc * 0.5;
        });
    out.z
        .par_iter_mut()
        .enumerate()
        .for_each(|(idx, o)| {
            let k = idx / (n * n);
            let ci = (idx / n) % n;
            let cj = idx % n;
            let mut acc = C0;
            if k > 0 {
                acc += cref[g.cell(ci, cj, k - 1)][2];
            }
            if k < n {
                acc += cref[g.cell(ci, cj, k)][2];
            }
            *o = acc * 0.5;
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_edge(g: &StaggeredGrid, rng: &mut ChaCha8Rng) -> EdgeField {
        let mut e = EdgeField::zeros(g);
        for v in e.x.iter_mut().chain(e.y.iter_mut()).chain(e.z.iter_mut()) {
            *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        e
    }

    fn rand_face(g: &StaggeredGrid, rng: &mut ChaCha8Rng) -> FaceField {
        let mut f = FaceField::zeros(g);
        for v in f.x.iter_mut().chain(f.y.iter_mut()).chain(f.z.iter_mut()) {
            *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        f
    }

    /// <curl_E u, v>_F = <u, curl_F v>_E for u supported on interior edges:
    /// the discrete integration-by-parts identity behind the probes.
    #[test]
    fn curls_are_adjoint() {
        let g = StaggeredGrid::new(6, -1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut u = rand_edge(&g, &mut rng);
        // zero the boundary edges of each component family
        for c in 0..g.n {
            for a in 0..=g.n {
                for b in 0..=g.n {
                    if a == 0 || a == g.n || b == 0 || b == g.n {
                        u.x[g.ex(c, a, b)] = C0;
                        u.y[g.ey(a, c, b)] = C0;
                        u.z[g.ez(a, b, c)] = C0;
                    }
                }
            }
        }
        let v = rand_face(&g, &mut rng);
        let mut cu = FaceField::zeros(&g);
        curl_e(&g, &u, &mut cu);
        let mut cv = EdgeField::zeros(&g);
        curl_f(&g, &v, &mut cv);
        let mut lhs = C0;
        for (a, b) in cu.x.iter().zip(&v.x) {
            lhs += a * b;
        }
        for (a, b) in cu.y.iter().zip(&v.y) {
            lhs += a * b;
        }
        for (a, b) in cu.z.iter().zip(&v.z) {
            lhs += a * b;
        }
        let mut rhs = C0;
        for (a, b) in u.x.iter().zip(&cv.x) {
            rhs += a * b;
        }
        for (a, b) in u.y.iter().zip(&cv.y) {
            rhs += a * b;
        }
        for (a, b) in u.z.iter().zip(&cv.z) {
            rhs += a * b;
        }
        assert!(
            (lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0),
            "lhs {lhs}, rhs {rhs}"
        );
    }

    /// curl of a gradient-like edge field (difference of nodal potential)
    /// vanishes identically.
    #[test]
    fn curl_of_gradient_vanishes() {
        let g = StaggeredGrid::new(5, 0.0, 1.0);
        let n = g.n;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let node = |i: usize, j: usize, k: usize| (i * (n + 1) + j) * (n + 1) + k;
        let phi: Vec<C64> = (0..(n + 1) * (n + 1) * (n + 1))
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut u = EdgeField::zeros(&g);
        for ci in 0..n {
            for j in 0..=n {
                for k in 0..=n {
                    u.x[g.ex(ci, j, k)] = phi[node(ci + 1, j, k)] - phi[node(ci, j, k)];
                }
            }
        }
        for cj in 0..n {
            for i in 0..=n {
                for k in 0..=n {
                    u.y[g.ey(i, cj, k)] = phi[node(i, cj + 1, k)] - phi[node(i, cj, k)];
                }
            }
        }
        for ck in 0..n {
            for i in 0..=n {
                for j in 0..=n {
                    u.z[g.ez(i, j, ck)] = phi[node(i, j, ck + 1)] - phi[node(i, j, ck)];
                }
            }
        }
        let mut cu = FaceField::zeros(&g);
        curl_e(&g, &u, &mut cu);
        let m = cu
            .x
            .iter()
            .chain(&cu.y)
            .chain(&cu.z)
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        assert!(m < 1e-13, "max curl {m}");
    }
}
