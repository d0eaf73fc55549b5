//! Shared numerical kernels: small-matrix spectral tools, quadrature,
//! regression fits, and FFT plumbing.

pub mod expm;
pub mod fft2;
pub mod schur;

use nalgebra::Vector3;

/// Nodes and weights of the 8-point Gauss-Legendre rule on [-1, 1].
pub const GL8_NODES: [f64; 8] = [
    -0.9602898564975363,
    -0.7966664774136267,
    -0.525532409916329,
    -0.18343464249564978,
    0.18343464249564978,
    0.525532409916329,
    0.7966664774136267,
    0.9602898564975363,
];
pub const GL8_WEIGHTS: [f64; 8] = [
    0.10122853629037669,
    0.22238103445337445,
    0.31370664587788744,
    0.362683783378362,
    0.362683783378362,
    0.31370664587788744,
    0.22238103445337445,
    0.10122853629037669,
];

/// Map GL8 nodes onto [a, b]; returns (nodes, weights).
pub fn gl8_on(a: f64, b: f64) -> ([f64; 8], [f64; 8]) {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut n = [0.0; 8];
    let mut w = [0.0; 8];
    for q in 0..8 {
        n[q] = mid + half * GL8_NODES[q];
        w[q] = half * GL8_WEIGHTS[q];
    }
    (n, w)
}

/// Deterministic quasi-uniform unit-sphere sample (Fibonacci lattice).
pub fn fibonacci_sphere(n: usize) -> Vec<Vector3<f64>> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2, "linear_fit needs at least two samples");
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

/// Slope of log(y) vs log(x); all y must be positive.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).ln()).collect();
    linear_fit(&lx, &ly).0
}

/// Slope in "decades of y per doubling of x" units, the classification
/// currency of the indicator sweeps.
pub fn decades_per_doubling(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.log2()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.max(1e-300).log10()).collect();
    linear_fit(&lx, &ly).0
}

/// Deterministic orthonormal completion of a unit vector: returns (eta, zeta)
/// with {eta, zeta, omega} right-handed orthonormal. The first leg is built
/// against the axis of smallest |omega| component, so the result is stable
/// and reproducible across runs.
pub fn orthonormal_complement(omega: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let a = [omega.x.abs(), omega.y.abs(), omega.z.abs()];
    let mut k = 0;
    if a[1] < a[k] {
        k = 1;
    }
    if a[2] < a[k] {
        k = 2;
    }
    let axis = match k {
        0 => Vector3::x(),
        1 => Vector3::y(),
        _ => Vector3::z(),
    };
    let eta = (axis - omega * axis.dot(omega)).normalize();
    let zeta = omega.cross(&eta);
    (eta, zeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl8_integrates_degree_15() {
        // \int_0^1 x^15 dx = 1/16
        let (n, w) = gl8_on(0.0, 1.0);
        let v: f64 = n.iter().zip(&w).map(|(x, w)| x.powi(15) * w).sum();
        assert!((v - 1.0 / 16.0).abs() < 1e-14);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -2.5 * v + 0.7).collect();
        let (s, b) = linear_fit(&x, &y);
        assert!((s + 2.5).abs() < 1e-12 && (b - 0.7).abs() < 1e-12);
    }

    #[test]
    fn slope_units() {
        // y = x^{-1}: one decade down per decade of x = -~0.301 decades per doubling
        let x = [20.0, 40.0, 80.0, 160.0];
        let y: Vec<f64> = x.iter().map(|v| 1.0 / v).collect();
        let d = decades_per_doubling(&x, &y);
        assert!((d + 2f64.log10()).abs() < 1e-12);
        assert!((loglog_slope(&x, &y) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthonormal() {
        for v in fibonacci_sphere(64) {
            let (e, z) = orthonormal_complement(&v);
            assert!(e.dot(&z).abs() < 1e-14);
            assert!(e.dot(&v).abs() < 1e-14);
            assert!((e.norm() - 1.0).abs() < 1e-14);
            assert!((z.cross(&v).norm() - 1.0).abs() < 1e-13);
        }
    }
}
