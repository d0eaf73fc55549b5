//! Matrix exponential by scaling-and-squaring with Pade(13) approximation
//! (Higham 2005), specialized to small dense complex matrices.

use nalgebra::{DMatrix, Matrix3};
use num_complex::Complex64 as C64;

const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &DMatrix<C64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(a) for a square complex matrix.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a1 = a * C64::new(0.5f64.powi(s), 0.0);
    let a2 = &a1 * &a1;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b: Vec<C64> = PADE13.iter().map(|&x| C64::new(x, 0.0)).collect();
    let u = &a1
        * (&a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
            + &a6 * b[7]
            + &a4 * b[5]
            + &a2 * b[3]
            + &id * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let num = &v + &u;
    let den = &v - &u;
    let mut r = den
        .lu()
        .solve(&num)
        .expect("expm: Pade denominator is singular");
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// exp(a) for a 3x3 complex matrix (the hot path in the corrector
/// hierarchy); same Pade(13) scheme without heap allocation.
pub fn expm3(a: &Matrix3<C64>) -> Matrix3<C64> {
    let norm = (0..3)
        .map(|j| (0..3).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let id = Matrix3::identity();
    let a1 = a * C64::new(0.5f64.powi(s), 0.0);
    let a2 = a1 * a1;
    let a4 = a2 * a2;
    let a6 = a2 * a4;
    let b: [C64; 14] = std::array::from_fn(|i| C64::new(PADE13[i], 0.0));
    let u = a1
        * (a6 * (a6 * b[13] + a4 * b[11] + a2 * b[9])
            + a6 * b[7]
            + a4 * b[5]
            + a2 * b[3]
            + id * b[1]);
    let v = a6 * (a6 * b[12] + a4 * b[10] + a2 * b[8])
        + a6 * b[6]
        + a4 * b[4]
        + a2 * b[2]
        + id * b[0];
    let num = v + u;
    let den = v - u;
    let mut r = den
        .try_inverse()
        .expect("expm3: Pade denominator is singular")
        * num;
    for _ in 0..s {
        r = r * r;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_diagonal() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::new(0.3, -1.2),
            C64::new(-2.0, 0.5),
            C64::new(1.0, 3.0),
        ]));
        let e = expm(&a);
        for i in 0..3 {
            assert!((e[(i, i)] - a[(i, i)].exp()).norm() < 1e-13);
        }
    }

    #[test]
    fn group_property() {
        let a = DMatrix::from_fn(3, 3, |i, j| {
            C64::new(((i * 3 + j) as f64).sin(), ((i + 2 * j) as f64).cos() * 0.4)
        });
        let e1 = expm(&a);
        let e2 = expm(&(&a * C64::new(0.5, 0.0)));
        let resid = (&e2 * &e2 - &e1).norm() / e1.norm();
        assert!(resid < 1e-12, "resid={resid}");
    }

    #[test]
    fn expm3_matches_general() {
        let a = Matrix3::from_fn(|i, j| {
            C64::new(
                (i as f64 - j as f64) * 0.7,
                ((i * 3 + j) as f64).sin() * 40.0,
            )
        });
        let e3 = expm3(&a);
        let d = DMatrix::from_fn(3, 3, |i, j| a[(i, j)]);
        let e = expm(&d);
        for i in 0..3 {
            for j in 0..3 {
                assert!((e3[(i, j)] - e[(i, j)]).norm() < 1e-10 * e.norm());
            }
        }
    }

    #[test]
    fn large_argument_scaling() {
        // exp(tau * N) with nilpotent-ish structure and large tau
        let tau = 160.0;
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[
                C64::new(0.0, -tau),
                C64::new(tau, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, -tau),
            ],
        );
        let e = expm(&a);
        // Block structure: exp gives e^{-i tau} on diag, tau*e^{-i tau} off-diag
        let d = C64::new(0.0, -tau).exp();
        assert!((e[(0, 0)] - d).norm() / d.norm() < 1e-11);
        assert!((e[(0, 1)] - C64::new(tau, 0.0) * d).norm() / (tau * d.norm()) < 1e-11);
    }
}
