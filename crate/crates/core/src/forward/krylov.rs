//! Preconditioned MINRES for the real-symmetric (Hermitian) curl-curl
//! system with complex right-hand sides.

use num_complex::Complex64 as C64;

/// Abstract Hermitian operator on interleaved complex vectors.
pub trait HermitianOp {
    fn len(&self) -> usize;
    fn apply(&self, x: &[C64], out: &mut [C64]);
    /// Inverse of the SPD preconditioner (diagonal here).
    fn precond(&self, r: &[C64], out: &mut [C64]);
}

#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub history: Vec<f64>,
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        acc += x.conj() * y;
    }
    acc
}

/// Preconditioned MINRES (Paige-Saunders recurrences).
pub fn minres(
    op: &dyn HermitianOp,
    b: &[C64],
    tol: f64,
    max_iter: usize,
) -> (Vec<C64>, SolveStats) {
    let n = op.len();
    let mut x = vec![C64::new(0.0, 0.0); n];
    let bnorm = dot(b, b).re.sqrt();
    if bnorm == 0.0 {
        return (
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
                history: vec![0.0],
            },
        );
    }
    // Lanczos vectors
    let mut r1 = b.to_vec();
    let mut y = vec![C64::new(0.0, 0.0); n];
    op.precond(&r1, &mut y);
    let mut beta1 = dot(&r1, &y).re;
    assert!(beta1 >= 0.0, "preconditioner lost positivity");
    beta1 = beta1.sqrt();
    if beta1 == 0.0 {
        return (
            x,
            SolveStats {
                iterations: 0,
                residual: 0.0,
                converged: true,
                history: vec![0.0],
            },
        );
    }

    let mut r2 = r1.clone();
    let mut beta = beta1;
    let mut beta_old = 0.0f64;
    let mut c = -1.0f64;
    let mut s = 0.0f64;
    let mut dbar = 0.0f64;
    let mut epsln = 0.0f64;
    let mut phibar = beta1;
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut w2 = vec![C64::new(0.0, 0.0); n];
    let mut v = vec![C64::new(0.0, 0.0); n];
    let mut av = vec![C64::new(0.0, 0.0); n];
    let mut history = Vec::with_capacity(64);
    history.push(1.0);
    let mut converged = false;
    let mut iters = 0;

    for it in 1..=max_iter {
        iters = it;
        // v = y / beta
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / beta;
        }
        op.apply(&v, &mut av);
        if it >= 2 {
            let f = beta / beta_old;
            for (a, r) in av.iter_mut().zip(&r1) {
                *a -= r * f;
            }
        }
        let alfa = dot(&v, &av).re;
        let f = alfa / beta;
        for (a, r) in av.iter_mut().zip(&r2) {
            *a -= r * f;
        }
        r1.copy_from_slice(&r2);
        r2.copy_from_slice(&av);
        op.precond(&r2, &mut y);
        beta_old = beta;
        let betsq = dot(&r2, &y).re;
        beta = betsq.max(0.0).sqrt();

        // QR via Givens
        let oldeps = epsln;
        let delta = c * dbar + s * alfa;
        let gbar = s * dbar - c * alfa;
        epsln = s * beta;
        dbar = -c * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(1e-300);
        c = gbar / gamma;
        s = beta / gamma;
        let phi = c * phibar;
        phibar *= s;

        // update solution
        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1i = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - w1i * oldeps - w2[i] * delta) * denom;
            x[i] += w[i] * phi;
        }
        let rel = phibar / beta1;
        history.push(rel);
        if rel < tol {
            converged = true;
            break;
        }
    }
    // true residual
    let mut ax = vec![C64::new(0.0, 0.0); n];
    op.apply(&x, &mut ax);
    let mut rnorm = 0.0;
    for i in 0..n {
        rnorm += (b[i] - ax[i]).norm_sqr();
    }
    let residual = rnorm.sqrt() / bnorm;
    (
        x,
        SolveStats {
            iterations: iters,
            residual,
            converged: converged && residual < 10.0 * tol,
            history,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct DenseSym {
        a: Vec<Vec<f64>>,
    }

    impl HermitianOp for DenseSym {
        fn len(&self) -> usize {
            self.a.len()
        }
        fn apply(&self, x: &[C64], out: &mut [C64]) {
            for (i, row) in self.a.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, &v) in row.iter().enumerate() {
                    acc += x[j] * v;
                }
                out[i] = acc;
            }
        }
        fn precond(&self, r: &[C64], out: &mut [C64]) {
            for (i, o) in out.iter_mut().enumerate() {
                *o = r[i] / self.a[i][i].abs().max(1e-12);
            }
        }
    }

    #[test]
    fn solves_indefinite_symmetric() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0) * 0.2;
                a[i][j] = v;
                a[j][i] = v;
            }
            // indefinite diagonal, well away from zero
            a[i][i] = if i % 3 == 0 { -3.0 } else { 4.0 } + rng.gen_range(-0.2..0.2);
        }
        let op = DenseSym { a };
        let b: Vec<C64> = (0..n)
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let (x, stats) = minres(&op, &b, 1e-10, 1000);
        assert!(stats.converged, "stats: {stats:?}");
        let mut ax = vec![C64::new(0.0, 0.0); n];
        op.apply(&x, &mut ax);
        let err: f64 = ax
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert!(err < 1e-8, "residual {err}");
    }
}
