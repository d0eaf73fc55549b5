//! 2D FFT helpers for spectral differentiation of compactly supported
//! transverse profiles.

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Planned 2D FFT on an (nu, nv) grid with spectral-derivative support.
pub struct SpectralGrid {
    pub nu: usize,
    pub nv: usize,
    /// Physical spacings.
    pub du: f64,
    pub dv: f64,
    fwd_u: Arc<dyn Fft<f64>>,
    inv_u: Arc<dyn Fft<f64>>,
    fwd_v: Arc<dyn Fft<f64>>,
    inv_v: Arc<dyn Fft<f64>>,
    ku: Vec<f64>,
    kv: Vec<f64>,
}

fn wavenumbers(n: usize, d: f64) -> Vec<f64> {
    let l = n as f64 * d;
    (0..n)
        .map(|i| {
            let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
            2.0 * std::f64::consts::PI * m / l
        })
        .collect()
}

impl SpectralGrid {
    pub fn new(nu: usize, nv: usize, du: f64, dv: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            nu,
            nv,
            du,
            dv,
            fwd_u: planner.plan_fft_forward(nu),
            inv_u: planner.plan_fft_inverse(nu),
            fwd_v: planner.plan_fft_forward(nv),
            inv_v: planner.plan_fft_inverse(nv),
            ku: wavenumbers(nu, du),
            kv: wavenumbers(nv, dv),
        }
    }

    fn fft2(&self, data: &mut [C64], inverse: bool) {
        assert_eq!(data.len(), self.nu * self.nv);
        // Rows (v-index fast): transform along v, then along u.
        let (fu, fv) = if inverse {
            (&self.inv_u, &self.inv_v)
        } else {
            (&self.fwd_u, &self.fwd_v)
        };
        for row in data.chunks_exact_mut(self.nv) {
            fv.process(row);
        }
        let mut col = vec![C64::new(0.0, 0.0); self.nu];
        for j in 0..self.nv {
            for i in 0..self.nu {
                col[i] = data[i * self.nv + j];
            }
            fu.process(&mut col);
            for i in 0..self.nu {
                data[i * self.nv + j] = col[i];
            }
        }
        if inverse {
            let scale = 1.0 / (self.nu * self.nv) as f64;
            for z in data.iter_mut() {
                *z *= scale;
            }
        }
    }

    /// Spectral partial derivative d^{a1}/du^{a1} d^{a2}/dv^{a2} of a scalar
    /// field stored row-major (u-index slow, v-index fast).
    pub fn derivative(&self, field: &[C64], a1: u32, a2: u32) -> Vec<C64> {
        let mut hat = field.to_vec();
        self.fft2(&mut hat, false);
        for i in 0..self.nu {
            for j in 0..self.nv {
                let mut f = C64::new(1.0, 0.0);
                for _ in 0..a1 {
                    f *= C64::new(0.0, self.ku[i]);
                }
                for _ in 0..a2 {
                    f *= C64::new(0.0, self.kv[j]);
                }
                hat[i * self.nv + j] *= f;
            }
        }
        self.fft2(&mut hat, true);
        hat
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn differentiates_gaussian_bump() {
        let n = 64;
        let l = 6.0;
        let d = l / n as f64;
        let g = SpectralGrid::new(n, n, d, d);
        let mut f = vec![C64::new(0.0, 0.0); n * n];
        let mut dfdu = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                let u = -l / 2.0 + i as f64 * d;
                let v = -l / 2.0 + j as f64 * d;
                let e = (-4.0 * (u * u + v * v)).exp();
                f[i * n + j] = C64::new(e, 0.0);
                dfdu[i * n + j] = C64::new(-8.0 * u * e, 0.0);
            }
        }
        let der = g.derivative(&f, 1, 0);
        let err: f64 = der
            .iter()
            .zip(&dfdu)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "err={err}");
    }
}
