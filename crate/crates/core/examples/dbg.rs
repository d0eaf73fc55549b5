fn main() {
    use odem_core::engine::*;
    use odem_core::forward::*;
    use odem_core::od::Variant;
    use odem_core::tensor::Medium;
    use nalgebra::{Matrix3, Vector3};
    use std::sync::Arc;
    use std::time::Instant;
    let obstacle = ObstacleSpec::Ball { center: [0.1, 0.0, 0.0], radius: 0.25 };
    for mode in [Variant::Penetrable, Variant::Impenetrable] {
        let dom = DomainSpec { lo: -1.0, hi: 1.0, n: 32, obstacle: Some(obstacle.clone()), mode };
        let eps0 = Matrix3::identity();
        let obs2 = obstacle.clone();
        let med = match mode {
            Variant::Penetrable => Medium {
                mu: Arc::new(|_| 1.0),
                eps0: Arc::new(move |_| eps0),
                eps_d: Arc::new(|_| Matrix3::identity() * 0.5),
                chi_d: Arc::new(move |x| obs2.inside(x)),
            },
            Variant::Impenetrable => Medium::constant(1.0, eps0),
        };
        let cfg = SweepConfig { tau_grid: vec![6.0, 9.0, 13.5, 19.0], od_grid_n: 25, od_panels: 10, corrector_depth: 2, ..SweepConfig::default() };
        let t0 = Instant::now();
        let ctx = EngineContext::new(dom, med, 1.0, cfg).unwrap();
        println!("[{mode:?}] ctx in {:.1?}, floor = {:.3e}", t0.elapsed(), ctx.floor);
        let rho = Vector3::x();
        // h_D = -0.15
        for t in [-0.6, -0.35, -0.15, -0.05] {
            match ctx.tau_sweep(&rho, t, &ctx.cfg.tau_grid.clone()) {
                Ok(c) => println!("  t={t:+.2}: {:?} slope={:+.3} |I|n={:?}",
                    c.classification, c.slope_decades_per_doubling,
                    c.normalized.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()),
                Err(e) => println!("  t={t:+.2}: ERROR {e}"),
            }
        }
    }
}
