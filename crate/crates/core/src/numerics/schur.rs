//! Complex Schur decomposition for small dense matrices, with eigenvalue
//! reordering and Sylvester solves for invariant-subspace splitting.
//!
//! The QR iteration follows the classic Hessenberg + single (Wilkinson) shift
//! scheme; matrices here are 6x6 at most, so no blocking or balancing is
//! attempted.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Result of `schur`: `a = q t q^H` with `q` unitary and `t` upper triangular.
#[derive(Debug, Clone)]
pub struct SchurDecomp {
    pub q: DMatrix<C64>,
    pub t: DMatrix<C64>,
}

impl SchurDecomp {
    pub fn eigenvalues(&self) -> Vec<C64> {
        (0..self.t.nrows()).map(|i| self.t[(i, i)]).collect()
    }
}

fn householder_reflect(col: &[C64]) -> (Vec<C64>, C64) {
    // Returns (v, beta) such that (I - beta v v^H) x = -sign(x0)*||x|| e1.
    let norm_x = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if norm_x == 0.0 {
        return (vec![ZERO; col.len()], ZERO);
    }
    let x0 = col[0];
    let phase = if x0.norm() > 0.0 { x0 / x0.norm() } else { ONE };
    let alpha = -phase * norm_x;
    let mut v: Vec<C64> = col.to_vec();
    v[0] -= alpha;
    let vn2 = v.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if vn2 == 0.0 {
        return (vec![ZERO; col.len()], ZERO);
    }
    (v, C64::new(2.0 / vn2, 0.0))
}

/// Reduce to upper Hessenberg form: a = q h q^H.
fn hessenberg(a: &DMatrix<C64>) -> (DMatrix<C64>, DMatrix<C64>) {
    let n = a.nrows();
    let mut h = a.clone();
    let mut q = DMatrix::identity(n, n);
    for k in 0..n.saturating_sub(2) {
        let col: Vec<C64> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let (v, beta) = householder_reflect(&col);
        if beta == ZERO {
            continue;
        }
        // h := P h P, q := q P with P = I - beta v v^H acting on rows/cols k+1..n
        for j in 0..n {
            let mut s = ZERO;
            for i in 0..v.len() {
                s += v[i].conj() * h[(k + 1 + i, j)];
            }
            s *= beta;
            for i in 0..v.len() {
                let upd = s * v[i];
                h[(k + 1 + i, j)] -= upd;
            }
        }
        for i in 0..n {
            let mut s = ZERO;
            for j in 0..v.len() {
                s += h[(i, k + 1 + j)] * v[j];
            }
            s *= beta;
            for j in 0..v.len() {
                let upd = s * v[j].conj();
                h[(i, k + 1 + j)] -= upd;
            }
        }
        for i in 0..n {
            let mut s = ZERO;
            for j in 0..v.len() {
                s += q[(i, k + 1 + j)] * v[j];
            }
            s *= beta;
            for j in 0..v.len() {
                let upd = s * v[j].conj();
                q[(i, k + 1 + j)] -= upd;
            }
        }
    }
    (q, h)
}

/// Complex Schur decomposition via shifted QR on the Hessenberg form.
pub fn schur(a: &DMatrix<C64>) -> SchurDecomp {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "schur: matrix must be square");
    let (mut q, mut h) = hessenberg(a);
    let eps = f64::EPSILON;
    let mut hi = n; // active block is 0..hi
    let mut iter_guard = 0usize;
    while hi > 1 {
        iter_guard += 1;
        assert!(
            iter_guard < 120 * n,
            "schur: QR iteration failed to converge"
        );
        // Deflate tiny subdiagonals.
        let mut lo = hi - 1;
        while lo > 0 {
            let s = h[(lo - 1, lo - 1)].norm() + h[(lo, lo)].norm();
            let s = if s == 0.0 { 1.0 } else { s };
            if h[(lo, lo - 1)].norm() <= eps * s {
                h[(lo, lo - 1)] = ZERO;
                break;
            }
            lo -= 1;
        }
        if lo == hi - 1 {
            hi -= 1;
            continue;
        }
        // Wilkinson shift from the trailing 2x2 of the active block.
        let m = hi - 1;
        let t11 = h[(m - 1, m - 1)];
        let t12 = h[(m - 1, m)];
        let t21 = h[(m, m - 1)];
        let t22 = h[(m, m)];
        let tr = t11 + t22;
        let det = t11 * t22 - t12 * t21;
        let disc = (tr * tr - 4.0 * det).sqrt();
        let r1 = (tr + disc) * 0.5;
        let r2 = (tr - disc) * 0.5;
        let shift = if (r1 - t22).norm() < (r2 - t22).norm() {
            r1
        } else {
            r2
        };
        // Implicit single-shift QR sweep on rows lo..hi via Givens rotations.
        let mut x = h[(lo, lo)] - shift;
        let mut y = h[(lo + 1, lo)];
        for k in lo..hi - 1 {
            let (c, s) = givens(x, y);
            // Apply G^H from the left to rows k,k+1
            for j in k.saturating_sub(1)..n {
                let a1 = h[(k, j)];
                let a2 = h[(k + 1, j)];
                h[(k, j)] = c.conj() * a1 + s.conj() * a2;
                h[(k + 1, j)] = -s * a1 + c * a2;
            }
            // Apply G from the right to cols k,k+1
            let top = (k + 2).min(hi - 1);
            for i in 0..=top {
                let a1 = h[(i, k)];
                let a2 = h[(i, k + 1)];
                h[(i, k)] = a1 * c + a2 * s;
                h[(i, k + 1)] = -a1 * s.conj() + a2 * c.conj();
            }
            for i in 0..n {
                let a1 = q[(i, k)];
                let a2 = q[(i, k + 1)];
                q[(i, k)] = a1 * c + a2 * s;
                q[(i, k + 1)] = -a1 * s.conj() + a2 * c.conj();
            }
            if k + 2 < hi {
                x = h[(k + 1, k)];
                y = h[(k + 2, k)];
            }
        }
    }
    // Clean the strictly-lower part (roundoff).
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = ZERO;
        }
    }
    SchurDecomp { q, t: h }
}

fn givens(a: C64, b: C64) -> (C64, C64) {
    // Unitary [c^H s^H; -s c] zeroing b against a (c real convention).
    if b == ZERO {
        return (ONE, ZERO);
    }
    let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
    if r == 0.0 {
        return (ONE, ZERO);
    }
    let c = C64::new(a.norm() / r, 0.0);
    let phase = if a.norm() > 0.0 { a / a.norm() } else { ONE };
    let s = phase * b.conj() / r;
    (c, s.conj())
}

/// Swap the diagonal entries t[(k,k)], t[(k+1,k+1)] of an upper-triangular t
/// by a unitary similarity, updating q accordingly.
fn swap_adjacent(t: &mut DMatrix<C64>, q: &mut DMatrix<C64>, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t12 = t[(k, k + 1)];
    let t22 = t[(k + 1, k + 1)];
    // Eigenvector of the 2x2 block for eigenvalue t22: (t11 - t22) x = -t12
    let (c, s) = givens(t12, t22 - t11);
    // Rotate columns then rows.
    for i in 0..n {
        let a1 = t[(i, k)];
        let a2 = t[(i, k + 1)];
        t[(i, k)] = a1 * c + a2 * s;
        t[(i, k + 1)] = -a1 * s.conj() + a2 * c.conj();
    }
    for j in 0..n {
        let a1 = t[(k, j)];
        let a2 = t[(k + 1, j)];
        t[(k, j)] = c.conj() * a1 + s.conj() * a2;
        t[(k + 1, j)] = -s * a1 + c * a2;
    }
    for i in 0..n {
        let a1 = q[(i, k)];
        let a2 = q[(i, k + 1)];
        q[(i, k)] = a1 * c + a2 * s;
        q[(i, k + 1)] = -a1 * s.conj() + a2 * c.conj();
    }
    t[(k + 1, k)] = ZERO;
    let _ = t22;
}

/// Reorder the Schur form so that eigenvalues selected by `select` occupy the
/// leading diagonal positions. Returns the number selected.
pub fn reorder_schur(
    dec: &mut SchurDecomp,
    select: impl Fn(C64) -> bool,
) -> usize {
    let n = dec.t.nrows();
    let mut nsel = 0;
    for i in 0..n {
        if select(dec.t[(i, i)]) {
            // Bubble position i up to position nsel.
            let mut j = i;
            while j > nsel {
                swap_adjacent(&mut dec.t, &mut dec.q, j - 1);
                j -= 1;
            }
            nsel += 1;
        }
    }
    nsel
}

/// Solve the Sylvester equation a x - x b = c for x (small dense, via
/// back-substitution on triangularized a and b).
pub fn sylvester(a: &DMatrix<C64>, b: &DMatrix<C64>, c: &DMatrix<C64>) -> DMatrix<C64> {
    let sa = schur(a);
    let sb = schur(b);
    // a = qa ta qa^H, b = qb tb qb^H:  ta y - y tb = qa^H c qb, x = qa y qb^H
    let ct = sa.q.adjoint() * c * &sb.q;
    let n = a.nrows();
    let m = b.nrows();
    let mut y = DMatrix::from_element(n, m, ZERO);
    // Solve column by column (tb upper triangular): ta y_j - y tb e_j = ct_j
    for j in 0..m {
        for i in (0..n).rev() {
            let mut rhs = ct[(i, j)];
            for l in i + 1..n {
                rhs -= sa.t[(i, l)] * y[(l, j)];
            }
            for l in 0..j {
                rhs += y[(i, l)] * sb.t[(l, j)];
            }
            let denom = sa.t[(i, i)] - sb.t[(j, j)];
            y[(i, j)] = rhs / denom;
        }
    }
    sa.q * y * sb.q.adjoint()
}

/// Smallest-singular-value estimate of the Sylvester operator x -> a x - x b,
/// used as a separation (conditioning) measure between spec(a) and spec(b).
pub fn sylvester_separation(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    let n = a.nrows();
    let m = b.nrows();
    // Inverse power iteration on the operator using `sylvester` as the solve.
    let mut x = DMatrix::from_fn(n, m, |i, j| C64::new(1.0 + (i + 2 * j) as f64, 0.3 * j as f64));
    let mut nrm = x.norm();
    for _ in 0..8 {
        x /= C64::new(nrm.max(1e-300), 0.0);
        x = sylvester(a, b, &x);
        nrm = x.norm();
        if !nrm.is_finite() {
            return 0.0;
        }
    }
    1.0 / nrm.max(1e-300)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| {
            C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    #[test]
    fn schur_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [2usize, 3, 5, 6, 8] {
            let a = rand_mat(n, &mut rng);
            let dec = schur(&a);
            let resid = (&dec.q * &dec.t * dec.q.adjoint() - &a).norm() / a.norm();
            assert!(resid < 1e-12, "n={n} resid={resid}");
            let unit = (dec.q.adjoint() * &dec.q - DMatrix::<C64>::identity(n, n)).norm();
            assert!(unit < 1e-12);
            for i in 0..n {
                for j in 0..i {
                    assert_eq!(dec.t[(i, j)], ZERO);
                }
            }
        }
    }

    #[test]
    fn reorder_moves_selected_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = rand_mat(6, &mut rng);
            let mut dec = schur(&a);
            let mut upper: Vec<C64> = dec
                .eigenvalues()
                .into_iter()
                .filter(|z| z.im > 0.0)
                .collect();
            let k = reorder_schur(&mut dec, |z| z.im > 0.0);
            assert_eq!(k, upper.len());
            let resid = (&dec.q * &dec.t * dec.q.adjoint() - &a).norm() / a.norm();
            assert!(resid < 1e-11, "resid={resid}");
            let mut lead: Vec<C64> = (0..k).map(|i| dec.t[(i, i)]).collect();
            let key = |z: &C64| (z.re * 1e3 + z.im, z.im);
            lead.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            upper.sort_by(|x, y| key(x).partial_cmp(&key(y)).unwrap());
            for (l, u) in lead.iter().zip(&upper) {
                assert!((l - u).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn sylvester_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = rand_mat(3, &mut rng) + DMatrix::identity(3, 3) * C64::new(0.0, 2.0);
            let b = rand_mat(3, &mut rng) - DMatrix::identity(3, 3) * C64::new(0.0, 2.0);
            let c = rand_mat(3, &mut rng);
            let x = sylvester(&a, &b, &c);
            let resid = (&a * &x - &x * &b - &c).norm() / c.norm();
            assert!(resid < 1e-10, "resid={resid}");
        }
    }
}
