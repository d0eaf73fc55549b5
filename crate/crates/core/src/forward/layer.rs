//! Helmholtz fundamental solution and the magnetic layer potential of the
//! exterior isotropic problem, evaluated by centroid-rule Nystrom
//! quadrature on a triangulated surface.

use crate::error::{OdemError, Result};
use nalgebra::Vector3;
use num_complex::Complex64 as C64;

type V3 = Vector3<C64>;

/// Phi_k(x, y) = -exp(i k |x-y|) / (4 pi |x-y|).
pub fn fundamental_solution(k: f64, x: &Vector3<f64>, y: &Vector3<f64>) -> Result<C64> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(OdemError::Argument(
            "fundamental solution evaluated on its singularity".into(),
        ));
    }
    Ok(-C64::new(0.0, k * r).exp() / (4.0 * std::f64::consts::PI * r))
}

/// Gradient in x of Phi_k.
pub fn fundamental_gradient(k: f64, x: &Vector3<f64>, y: &Vector3<f64>) -> Result<V3> {
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(OdemError::Argument("gradient at the singularity".into()));
    }
    let phi = fundamental_solution(k, x, y)?;
    // dPhi/dr = Phi * (i k - 1/r)
    let factor = phi * (C64::new(0.0, k) - C64::new(1.0 / r, 0.0));
    Ok(V3::new(
        factor * (d.x / r),
        factor * (d.y / r),
        factor * (d.z / r),
    ))
}

/// Hessian in x of Phi_k.
pub fn fundamental_hessian(k: f64, x: &Vector3<f64>, y: &Vector3<f64>) -> Result<[[C64; 3]; 3]> {
    let d = x - y;
    let r = d.norm();
    if r == 0.0 {
        return Err(OdemError::Argument("hessian at the singularity".into()));
    }
    let phi = fundamental_solution(k, x, y)?;
    let ik = C64::new(0.0, k);
    // f(r) = Phi(r); f' = Phi (ik - 1/r); f'' = Phi ((ik - 1/r)^2 + 1/r^2)
    let fp = phi * (ik - C64::new(1.0 / r, 0.0));
    let fpp = phi * ((ik - C64::new(1.0 / r, 0.0)) * (ik - C64::new(1.0 / r, 0.0))
        + C64::new(1.0 / (r * r), 0.0));
    let mut h = [[C64::new(0.0, 0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let rr = d[i] * d[j] / (r * r);
            let delta = if i == j { 1.0 } else { 0.0 };
            h[i][j] = fpp * rr + fp * ((delta - rr) / r);
        }
    }
    Ok(h)
}

/// Flat triangle panel with centroid and area.
#[derive(Debug, Clone)]
pub struct Panel {
    pub centroid: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub area: f64,
}

/// Icosphere triangulation of a sphere surface.
pub fn sphere_mesh(center: &Vector3<f64>, radius: f64, subdivisions: usize) -> Vec<Panel> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut midpoint = std::collections::HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                let m = ((verts[a] + verts[b]) * 0.5).normalize();
                verts.push(m);
                verts.len() - 1
            })
        };
        for t in &tris {
            let ab = mid(t[0], t[1], &mut verts);
            let bc = mid(t[1], t[2], &mut verts);
            let ca = mid(t[2], t[0], &mut verts);
            next.push([t[0], ab, ca]);
            next.push([t[1], bc, ab]);
            next.push([t[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }
    tris.iter()
        .map(|t| {
            let a = center + verts[t[0]] * radius;
            let b = center + verts[t[1]] * radius;
            let c = center + verts[t[2]] * radius;
            let centroid = (a + b + c) / 3.0;
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            let normal = (centroid - center).normalize();
            Panel {
                centroid,
                normal,
                area,
            }
        })
        .collect()
}

/// Magnetic layer potential H(x) = curl int Phi_k(x, y) f(y) ds(y) and the
/// companion E(x) = -(1/ik) curl H(x), both by the centroid rule with the
/// analytic curls pulled inside the integral.
pub struct LayerPotential {
    pub panels: Vec<Panel>,
    pub density: Vec<V3>,
    pub k: f64,
    mean_diameter: f64,
}

impl LayerPotential {
    pub fn new(panels: Vec<Panel>, density: Vec<V3>, k: f64) -> Result<Self> {
        if panels.len() != density.len() {
            return Err(OdemError::Argument(
                "density must have one value per panel".into(),
            ));
        }
        let mean_diameter = (panels.iter().map(|p| p.area).sum::<f64>()
            / panels.len().max(1) as f64)
            .sqrt();
        Ok(LayerPotential {
            panels,
            density,
            k,
            mean_diameter,
        })
    }

    fn check_distance(&self, x: &Vector3<f64>) -> Result<()> {
        let d = self
            .panels
            .iter()
            .map(|p| (x - p.centroid).norm())
            .fold(f64::INFINITY, f64::min);
        if d < 2.0 * self.mean_diameter {
            return Err(OdemError::Numeric(format!(
                "evaluation point too close to the surface for the centroid rule \
                 (distance {d:.3e}, panel scale {:.3e})",
                self.mean_diameter
            )));
        }
        Ok(())
    }

    /// H^{ex}(x) = sum grad_x Phi x f * area.
    pub fn eval_h(&self, x: &Vector3<f64>) -> Result<V3> {
        self.check_distance(x)?;
        let mut acc = V3::zeros();
        for (p, f) in self.panels.iter().zip(&self.density) {
            let g = fundamental_gradient(self.k, x, &p.centroid)?;
            // grad Phi x f
            acc += V3::new(
                g.y * f.z - g.z * f.y,
                g.z * f.x - g.x * f.z,
                g.x * f.y - g.y * f.x,
            ) * C64::new(p.area, 0.0);
        }
        Ok(acc)
    }

    /// E^{ex}(x) = -(1/ik) curl H^{ex} = -(1/ik) sum (k^2 Phi f + Hess(Phi) f) * area.
    pub fn eval_e(&self, x: &Vector3<f64>) -> Result<V3> {
        self.check_distance(x)?;
        let k2 = self.k * self.k;
        let inv_ik = -C64::new(0.0, -1.0 / self.k); // -(1/(ik)) = i/k
        let mut acc = V3::zeros();
        for (p, f) in self.panels.iter().zip(&self.density) {
            let phi = fundamental_solution(self.k, x, &p.centroid)?;
            let h = fundamental_hessian(self.k, x, &p.centroid)?;
            let mut v = V3::new(phi * k2 * f.x, phi * k2 * f.y, phi * k2 * f.z);
            for i in 0..3 {
                let mut s = C64::new(0.0, 0.0);
                for j in 0..3 {
                    s += h[i][j] * f[j];
                }
                v[i] += s;
            }
            acc += v * C64::new(p.area, 0.0) * inv_ik;
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::loglog_slope;

    #[test]
    fn fundamental_values() {
        let x = Vector3::new(1.0, 0.0, 0.0);
        let y = Vector3::zeros();
        let v = fundamental_solution(0.0, &x, &y).unwrap();
        assert!((v.re + 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!(v.im.abs() < 1e-15);
        // reciprocity
        let k = 2.3;
        let a = Vector3::new(0.3, -0.7, 0.2);
        let b = Vector3::new(-0.5, 0.1, 0.9);
        assert_eq!(
            fundamental_solution(k, &a, &b).unwrap(),
            fundamental_solution(k, &b, &a).unwrap()
        );
        assert!(fundamental_solution(k, &a, &a).is_err());
    }

    #[test]
    fn helmholtz_residual_small() {
        // (Laplace + k^2) Phi = 0 away from the source, by 4th-order FD
        let k = 1.7;
        let y = Vector3::zeros();
        let h = 1e-2;
        for x in [
            Vector3::new(0.6, 0.2, -0.3),
            Vector3::new(-0.5, 0.5, 0.5),
            Vector3::new(1.2, 0.0, 0.0),
        ] {
            let f = |p: &Vector3<f64>| fundamental_solution(k, p, &y).unwrap();
            let mut lap = C64::new(0.0, 0.0);
            for ax in 0..3 {
                let mut xs = [x; 4];
                xs[0][ax] -= 2.0 * h;
                xs[1][ax] -= h;
                xs[2][ax] += h;
                xs[3][ax] += 2.0 * h;
                lap += (-f(&xs[0]) + f(&xs[1]) * 16.0 - f(&x) * 30.0 + f(&xs[2]) * 16.0
                    - f(&xs[3]))
                    / C64::new(12.0 * h * h, 0.0);
            }
            let resid = (lap + f(&x) * k * k).norm() / f(&x).norm();
            assert!(resid < 1e-6, "residual {resid:.3e} at {x:?}");
        }
    }

    #[test]
    fn exterior_fields_satisfy_vacuum_maxwell() {
        let k = 1.3;
        let panels = sphere_mesh(&Vector3::zeros(), 0.4, 2);
        // tangential density
        let density: Vec<V3> = panels
            .iter()
            .map(|p| {
                let t = p.normal.cross(&Vector3::z());
                let t = if t.norm() < 1e-8 {
                    p.normal.cross(&Vector3::x())
                } else {
                    t
                };
                let t = t.normalize();
                V3::new(
                    C64::new(t.x, 0.2 * t.y),
                    C64::new(t.y, 0.0),
                    C64::new(t.z, -0.1 * t.x),
                )
            })
            .collect();
        let lp = LayerPotential::new(panels, density, k).unwrap();
        // curl E = ik H and curl H = -ik E at off-surface points, via FD
        let h = 1e-3;
        for x in [Vector3::new(1.0, 0.3, -0.2), Vector3::new(-0.8, 0.9, 0.4)] {
            let curl_of = |f: &dyn Fn(&Vector3<f64>) -> V3, p: &Vector3<f64>| -> V3 {
                let mut out = V3::zeros();
                let d = |c: usize, ax: usize| -> C64 {
                    let mut xp = *p;
                    let mut xm = *p;
                    xp[ax] += h;
                    xm[ax] -= h;
                    (f(&xp)[c] - f(&xm)[c]) / C64::new(2.0 * h, 0.0)
                };
                out[0] = d(2, 1) - d(1, 2);
                out[1] = d(0, 2) - d(2, 0);
                out[2] = d(1, 0) - d(0, 1);
                out
            };
            let fe = |p: &Vector3<f64>| lp.eval_e(p).unwrap();
            let fh = |p: &Vector3<f64>| lp.eval_h(p).unwrap();
            let ce = curl_of(&fe, &x);
            let ch = curl_of(&fh, &x);
            let e = lp.eval_e(&x).unwrap();
            let hh = lp.eval_h(&x).unwrap();
            let ik = C64::new(0.0, k);
            let r1 = (ce - hh * ik).norm() / hh.norm().max(1e-12);
            let r2 = (ch + e * ik).norm() / e.norm().max(1e-12);
            assert!(r1 < 1e-5, "curl E - ikH residual {r1:.3e}");
            assert!(r2 < 1e-5, "curl H + ikE residual {r2:.3e}");
        }
    }

    #[test]
    fn silver_mueller_defect_decays() {
        let k = 1.0;
        let panels = sphere_mesh(&Vector3::zeros(), 0.4, 2);
        let density: Vec<V3> = panels
            .iter()
            .map(|p| {
                let t = p.normal.cross(&Vector3::y());
                let t = if t.norm() < 1e-8 {
                    p.normal.cross(&Vector3::x())
                } else {
                    t
                };
                let t = t.normalize();
                V3::new(C64::new(t.x, 0.0), C64::new(t.y, 0.0), C64::new(t.z, 0.0))
            })
            .collect();
        let lp = LayerPotential::new(panels, density, k).unwrap();
        let radii = [4.0, 8.0, 16.0];
        let dirs = crate::numerics::fibonacci_sphere(32);
        let mut defects = Vec::new();
        for &r in &radii {
            let mut worst: f64 = 0.0;
            for d in &dirs {
                let x = d * r;
                let e = lp.eval_e(&x).unwrap();
                let hh = lp.eval_h(&x).unwrap();
                let xhat = [d.x, d.y, d.z];
                // defect: H x r_hat - E
                let hx = V3::new(
                    hh.y * xhat[2] - hh.z * xhat[1],
                    hh.z * xhat[0] - hh.x * xhat[2],
                    hh.x * xhat[1] - hh.y * xhat[0],
                );
                worst = worst.max((hx - e).norm());
            }
            defects.push(worst);
        }
        let slope = loglog_slope(&radii, &defects);
        assert!(slope <= -1.9, "Silver-Mueller defect slope {slope:.2}");
    }

    #[test]
    fn zero_density_zero_field() {
        let panels = sphere_mesh(&Vector3::zeros(), 0.3, 1);
        let density = vec![V3::zeros(); panels.len()];
        let lp = LayerPotential::new(panels, density, 1.0).unwrap();
        let x = Vector3::new(1.0, 0.0, 0.0);
        assert_eq!(lp.eval_h(&x).unwrap(), V3::zeros());
        assert_eq!(lp.eval_e(&x).unwrap(), V3::zeros());
    }
}
