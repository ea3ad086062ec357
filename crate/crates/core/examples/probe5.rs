use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::solver::{minimize_m, SolverConfig};

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
    for n in [16usize, 32, 64] {
        let cfg = SolverConfig {
            grid_n: n,
            g_tol: 1e-7,
            max_iters: 300,
            ..SolverConfig::default()
        };
        let t0 = std::time::Instant::now();
        let res = minimize_m(&p, &cfg, None).unwrap();
        // locate max residual
        let grid = &res.potential.grid;
        let mut max_v = 0.0f64;
        let mut max_at = (0usize, 0usize);
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let v = res.residual_field[grid.idx(i, j)];
                if v.is_finite() && v.abs() > max_v {
                    max_v = v.abs();
                    max_at = (i, j);
                }
            }
        }
        let pt = grid.point(max_at.0, max_at.1);
        // residual at center
        let ci = ((0.0 - grid.origin.x1) / grid.h).round() as usize;
        let cj = ((0.0 - grid.origin.x2) / grid.h).round() as usize;
        let center_res = res.residual_field[grid.idx(ci, cj)];
        // f extremes
        let mut fmax = 0.0f64;
        let mut fmax_at = (0, 0);
        for (i, j) in grid.active_nodes() {
            let v = res.potential.f[grid.idx(i, j)].abs();
            if v > fmax {
                fmax = v;
                fmax_at = (i, j);
            }
        }
        let fpt = grid.point(fmax_at.0, fmax_at.1);
        println!(
            "N={n}: steps={} status={:?} maxres={:.3e} at ({:.3},{:.3}); center_res={:.2e}; |f|max={:.3e} at ({:.3},{:.3}); dt={:.1}s",
            res.m_history.len(), res.status, res.max_residual, pt.x1, pt.x2, center_res, fmax, fpt.x1, fpt.x2,
            t0.elapsed().as_secs_f64()
        );
    }
}
