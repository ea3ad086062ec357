use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::solver::{minimize_m, upsample_correction, SolverConfig};

fn main() {
    let p = build_polytope(
        vec![
            Point2::new(-1.0, -1.0),
            Point2::new(1.0, -1.0),
            Point2::new(1.0, 1.0),
            Point2::new(-1.0, 1.0),
        ],
        vec![1.0; 4],
        CurvatureSpec::Auto,
    )
    .unwrap();
    let mut prev: Option<abreu2d::PotentialField> = None;
    for n in [32usize, 64, 128] {
        let cfg = SolverConfig {
            grid_n: n,
            g_tol: 2e-8 * (64.0 / n as f64),
            max_iters: 400,
            ..SolverConfig::default()
        };
        let init = prev.as_ref().map(|c| upsample_correction(c, n));
        let t0 = std::time::Instant::now();
        let res = minimize_m(&p, &cfg, init).unwrap();
        println!(
            "N={n}: steps={} status={:?} gnorm={:.2e} maxres={:.4e} dt={:.1}s",
            res.m_history.len(),
            res.status,
            res.final_gradient_norm,
            res.max_residual,
            t0.elapsed().as_secs_f64()
        );
        prev = Some(res.potential);
    }
}
