use odem_core::forward::*;
use odem_core::od::Variant;
use odem_core::tensor::Medium;
use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64 as C64;
use std::time::Instant;

fn main() {
    for n in [24usize, 32] {
        let dom = DomainSpec { lo: -1.0, hi: 1.0, n, obstacle: None, mode: Variant::Penetrable };
        let med = Medium::constant(1.0, Matrix3::new(1.0,0.0,0.0, 0.0,1.1,0.0, 0.0,0.0,0.9));
        let t0 = Instant::now();
        let sys = assemble_system(&dom, &med, 1.0).unwrap();
        let t_asm = t0.elapsed();
        // oscillatory boundary data similar to OD traces at tau=27
        let tau = 27.0;
        let data = boundary_data_from(&sys, |x: &Vector3<f64>| {
            let ph = C64::new(0.0, tau * x.y).exp() * (-tau * (x.z + 1.0) * 0.5).exp();
            [ph, ph * 0.3, C64::new(0.0,0.0)]
        });
        let t1 = Instant::now();
        let probe = solve(&sys, &data, 1e-8).unwrap();
        let t_solve = t1.elapsed();
        println!("n={n}: assemble {:?}, solve {:?} ({} iters, resid {:.2e})",
                 t_asm, t_solve, probe.stats.iterations, probe.stats.residual);
    }
}
