use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::potential::DiscreteFunctional;
use abreu2d::solver::{minimize_m, Method, SolverConfig};

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
    // case 1: from zero, N=32
    for iters in [50usize, 200, 1000] {
        let cfg = SolverConfig {
            grid_n: 32,
            g_tol: 1e-7,
            max_iters: iters,
            method: Method::NewtonCg,
            ..SolverConfig::default()
        };
        let t0 = std::time::Instant::now();
        let res = minimize_m(&p, &cfg, None).unwrap();
        println!(
            "zero-start N=32 iters={}: status={:?} gnorm={:.3e} maxres={:.3e} steps={} dt={:.2}s",
            iters, res.status, res.final_gradient_norm, res.max_residual,
            res.m_history.len(), t0.elapsed().as_secs_f64()
        );
    }
    // case 2: perturbed start
    let cfg = SolverConfig {
        grid_n: 32,
        g_tol: 1e-7,
        max_iters: 4000,
        method: Method::NewtonCg,
        ..SolverConfig::default()
    };
    let disc = DiscreteFunctional::new(&p, 32);
    let n = disc.grid.nx * disc.grid.ny;
    let mut f0 = vec![0.0; n];
    for (i, j) in disc.grid.active_nodes() {
        let x = disc.grid.point(i, j);
        f0[disc.grid.idx(i, j)] = 0.05 * ((2.1 * x.x1 + 0.3).sin() * (1.7 * x.x2 - 0.2).cos());
    }
    let t0 = std::time::Instant::now();
    let res = minimize_m(&p, &cfg, Some(f0)).unwrap();
    let mut maxf: f64 = 0.0;
    // crude affine removal: subtract best fit via normalize at center
    let normed = abreu2d::solver::affine_normalize(&res.potential, Point2::new(0.0,0.0)).unwrap();
    let base = abreu2d::potential::PotentialField::from_zero(&p, 32);
    let based = abreu2d::solver::affine_normalize(&base, Point2::new(0.0,0.0)).unwrap();
    for (i, j) in res.potential.grid.interior_nodes() {
        let d = (normed.f[normed.grid.idx(i, j)] - based.f[based.grid.idx(i, j)]).abs();
        maxf = maxf.max(d);
    }
    println!(
        "perturbed N=32: status={:?} gnorm={:.3e} steps={} |f-f0|_norm={:.4e} maxres={:.3e} dt={:.2}s",
        res.status, res.final_gradient_norm, res.m_history.len(), maxf, res.max_residual,
        t0.elapsed().as_secs_f64()
    );
}
