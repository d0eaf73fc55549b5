//! Half-space intersection and Hausdorff distance for the reconstructed
//! convex hull.

use crate::error::{OdemError, Result};
use crate::forward::ObstacleSpec;
use crate::numerics::fibonacci_sphere;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// One estimated half-space {x . rho >= h}.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HalfSpace {
    pub rho: [f64; 3],
    pub h: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullReconstruction {
    pub halfspaces: Vec<HalfSpace>,
    pub vertices: Vec<[f64; 3]>,
    /// Hausdorff distance to the analytic ground truth, when known.
    pub hausdorff_to_truth: Option<f64>,
}

/// Intersect half-spaces {x . rho_i >= h_i} by vertex enumeration over plane
/// triples. Suitable for the few dozen directions of a reconstruction run.
pub fn reconstruct_hull(
    estimates: &[(Vector3<f64>, f64)],
    truth: Option<&ObstacleSpec>,
) -> Result<HullReconstruction> {
    if estimates.len() < 6 {
        return Err(OdemError::Argument(format!(
            "need at least 6 directions to bound a volume, got {}",
            estimates.len()
        )));
    }
    // the directions must positively span R^3, otherwise the slab is
    // unbounded
    for probe in fibonacci_sphere(64) {
        let best = estimates
            .iter()
            .map(|(r, _)| r.dot(&probe))
            .fold(f64::NEG_INFINITY, f64::max);
        if best <= 1e-9 {
            return Err(OdemError::Argument(format!(
                "directions do not positively span space: no rho has positive \
                 component along ({:.3}, {:.3}, {:.3}); intersection is unbounded",
                probe.x, probe.y, probe.z
            )));
        }
    }
    let m = estimates.len();
    let mut verts: Vec<Vector3<f64>> = Vec::new();
    let tol = 1e-9;
    for i in 0..m {
        for j in i + 1..m {
            for k in j + 1..m {
                let a = Matrix3::from_rows(&[
                    estimates[i].0.transpose(),
                    estimates[j].0.transpose(),
                    estimates[k].0.transpose(),
                ]);
                let det = a.determinant();
                if det.abs() < 1e-10 {
                    continue;
                }
                let b = Vector3::new(estimates[i].1, estimates[j].1, estimates[k].1);
                let Some(x) = a.lu().solve(&b) else { continue };
                if estimates
                    .iter()
                    .all(|(r, h)| x.dot(r) >= h - tol - 1e-12 * x.norm().max(1.0))
                {
                    if !verts.iter().any(|v| (v - x).norm() < 1e-8) {
                        verts.push(x);
                    }
                }
            }
        }
    }
    if verts.is_empty() {
        let offenders: Vec<String> = estimates
            .iter()
            .map(|(r, h)| format!("rho=({:.2},{:.2},{:.2}) h={:.4}", r.x, r.y, r.z, h))
            .collect();
        return Err(OdemError::Classification(format!(
            "half-space intersection is empty; estimates are inconsistent: {}",
            offenders.join("; ")
        )));
    }
    let hausdorff = truth.map(|obs| hausdorff_to_obstacle(&verts, estimates, obs));
    Ok(HullReconstruction {
        halfspaces: estimates
            .iter()
            .map(|(r, h)| HalfSpace {
                rho: [r.x, r.y, r.z],
                h: *h,
            })
            .collect(),
        vertices: verts.iter().map(|v| [v.x, v.y, v.z]).collect(),
        hausdorff_to_truth: hausdorff,
    })
}

/// Symmetric Hausdorff distance between the vertex-represented polytope and
/// an analytic obstacle, via support-function sampling.
fn hausdorff_to_obstacle(
    verts: &[Vector3<f64>],
    halfspaces: &[(Vector3<f64>, f64)],
    obs: &ObstacleSpec,
) -> f64 {
    // sup over polytope of distance to obstacle: attained at vertices for
    // convex targets
    let d_poly_to_obs = verts
        .iter()
        .map(|v| point_dist_to_obstacle(v, obs))
        .fold(0.0, f64::max);
    // sup over obstacle of distance to polytope: bounded via the support gap
    // max_u [ sup_D(u) - sup_P(u) ] over sampled directions
    let dirs = fibonacci_sphere(512);
    let mut d_obs_to_poly: f64 = 0.0;
    for u in &dirs {
        let sup_d = -obs.support(&(-u));
        let sup_p = verts.iter().map(|v| v.dot(u)).fold(f64::NEG_INFINITY, f64::max);
        d_obs_to_poly = d_obs_to_poly.max(sup_d - sup_p);
    }
    let _ = halfspaces;
    d_poly_to_obs.max(d_obs_to_poly.max(0.0))
}

fn point_dist_to_obstacle(p: &Vector3<f64>, obs: &ObstacleSpec) -> f64 {
    match obs {
        ObstacleSpec::Ball { center, radius } => {
            ((p - Vector3::from(*center)).norm() - radius).max(0.0)
        }
        _ => {
            // support-sampled outer bound
            let dirs = fibonacci_sphere(256);
            dirs.iter()
                .map(|u| p.dot(u) + obs.support(&(-u)))
                .fold(0.0, f64::max)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_ball_support_reconstructs() {
        let obs = ObstacleSpec::Ball {
            center: [0.1, 0.0, 0.0],
            radius: 0.2,
        };
        let mut dirs = Vec::new();
        // 26-direction set: axes, face diagonals, corner diagonals
        for x in -1i32..=1 {
            for y in -1i32..=1 {
                for z in -1i32..=1 {
                    if (x, y, z) != (0, 0, 0) {
                        dirs.push(Vector3::new(x as f64, y as f64, z as f64).normalize());
                    }
                }
            }
        }
        let est: Vec<(Vector3<f64>, f64)> =
            dirs.iter().map(|d| (*d, obs.support(d))).collect();
        let hull = reconstruct_hull(&est, Some(&obs)).unwrap();
        assert!(!hull.vertices.is_empty());
        // exact supports: Hausdorff bounded by the direction-set resolution
        let d = hull.hausdorff_to_truth.unwrap();
        assert!(d < 0.1, "hausdorff {d}");
        // every vertex lies outside or on the ball
        for v in &hull.vertices {
            let p = Vector3::from(*v);
            assert!((p - Vector3::new(0.1, 0.0, 0.0)).norm() >= 0.2 - 1e-9);
        }
    }

    #[test]
    fn single_direction_rejected() {
        let est = vec![(Vector3::x(), -0.5)];
        assert!(reconstruct_hull(&est, None).is_err());
        // six parallel-ish directions still do not span
        let est: Vec<_> = (0..6)
            .map(|i| (Vector3::new(1.0, 0.01 * i as f64, 0.0).normalize(), -0.5))
            .collect();
        assert!(reconstruct_hull(&est, None).is_err());
    }

    #[test]
    fn inconsistent_halfspaces_error() {
        // x . e1 >= 1 and x . (-e1) >= 1 cannot both hold
        let mut est = vec![
            (Vector3::x(), 1.0),
            (-Vector3::x(), 1.0),
            (Vector3::y(), -1.0),
            (-Vector3::y(), -1.0),
            (Vector3::z(), -1.0),
            (-Vector3::z(), -1.0),
        ];
        let err = reconstruct_hull(&est, None);
        assert!(err.is_err());
        // fixing the contradiction makes it succeed
        est[0].1 = -1.0;
        est[1].1 = -1.0;
        assert!(reconstruct_hull(&est, None).is_ok());
    }
}
