use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::potential::DiscreteFunctional;

// Dense damped Newton on the discrete functional, small grids only.
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
    for n in [8usize, 16] {
        let disc = DiscreteFunctional::new(&p, n);
        let grid = &disc.grid;
        let total = grid.nx * grid.ny;
        // DOF: active nodes
        let mut dof = Vec::new();
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                if grid.is_active(i, j) {
                    dof.push(grid.idx(i, j));
                }
            }
        }
        let nd = dof.len();
        let mut back = vec![usize::MAX; total];
        for (k, &idx) in dof.iter().enumerate() {
            back[idx] = k;
        }
        let mut f = vec![0.0; total];
        let fd_h = 1e-6;
        for it in 0..60 {
            let g_full = disc.gradient(&f).unwrap();
            let mut g = vec![0.0; nd];
            for (k, &idx) in dof.iter().enumerate() {
                g[k] = g_full[idx];
            }
            let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if gnorm < 1e-12 {
                println!("N={n}: converged at iter {it}, gnorm={gnorm:.2e}");
                break;
            }
            // Hessian by FD of gradient (columns): O(nd) gradient evals — ok for nd ~ 1.3k
            let mut hess = vec![0.0; nd * nd];
            for (k, &idx) in dof.iter().enumerate() {
                let mut fp = f.clone();
                fp[idx] += fd_h;
                let gp = disc.gradient(&fp).unwrap();
                let mut fm = f.clone();
                fm[idx] -= fd_h;
                let gm = disc.gradient(&fm).unwrap();
                for (l, &idx2) in dof.iter().enumerate() {
                    hess[l * nd + k] = (gp[idx2] - gm[idx2]) / (2.0 * fd_h);
                }
            }
            // regularize the affine nullspace: add tiny ridge
            for k in 0..nd {
                hess[k * nd + k] += 1e-9;
            }
            // solve H s = -g by Gaussian elimination with partial pivot
            let mut a = hess;
            let mut b: Vec<f64> = g.iter().map(|x| -x).collect();
            for col in 0..nd {
                let mut piv = col;
                for row in col + 1..nd {
                    if a[row * nd + col].abs() > a[piv * nd + col].abs() {
                        piv = row;
                    }
                }
                if piv != col {
                    for c in 0..nd {
                        a.swap(col * nd + c, piv * nd + c);
                    }
                    b.swap(col, piv);
                }
                let d = a[col * nd + col];
                if d.abs() < 1e-300 { continue; }
                for c in col..nd {
                    a[col * nd + c] /= d;
                }
                b[col] /= d;
                for row in 0..nd {
                    if row != col {
                        let m = a[row * nd + col];
                        if m != 0.0 {
                            for c in col..nd {
                                a[row * nd + c] -= m * a[col * nd + c];
                            }
                            b[row] -= m * b[col];
                        }
                    }
                }
            }
            // damped update
            let mut t = 1.0;
            let v0 = disc.value(&f).unwrap();
            loop {
                let mut cand = f.clone();
                for (k, &idx) in dof.iter().enumerate() {
                    cand[idx] += t * b[k];
                }
                if let Some(v) = disc.value(&cand) {
                    if v <= v0 {
                        f = cand;
                        break;
                    }
                }
                t *= 0.5;
                if t < 1e-12 {
                    break;
                }
            }
            if it % 5 == 0 {
                println!("N={n} it={it}: gnorm={gnorm:.3e} step={t:.1e}");
            }
        }
        // subtract affine part and report extremes
        // fit a + b x + c y over active
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for &idx in &dof {
            let (i, j) = (idx % grid.nx, idx / grid.nx);
            let pt = grid.point(i, j);
            let row = [1.0, pt.x1, pt.x2];
            for r in 0..3 {
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
                atb[r] += row[r] * f[idx];
            }
        }
        // solve 3x3
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d0 = det3(&ata);
        let mut coeff = [0.0; 3];
        for c in 0..3 {
            let mut m = ata;
            for r in 0..3 {
                m[r][c] = atb[r];
            }
            coeff[c] = det3(&m) / d0;
        }
        let mut max_f: f64 = 0.0;
        let mut max_at = (0usize, 0usize);
        let mut max_res: f64 = 0.0;
        for &idx in &dof {
            let (i, j) = (idx % grid.nx, idx / grid.nx);
            let pt = grid.point(i, j);
            let v = (f[idx] - coeff[0] - coeff[1] * pt.x1 - coeff[2] * pt.x2).abs();
            if v > max_f {
                max_f = v;
                max_at = (i, j);
            }
        }
        let field = abreu2d::potential::PotentialField::from_zero(&p, n).with_correction(f.clone());
        if let Ok((_, mr)) = abreu2d::solver::residual_field_of(&field) {
            max_res = mr;
        }
        println!("N={n}: |f*|_inf mod affine = {max_f:.4e} at {max_at:?}, max_residual = {max_res:.4e}");
    }
}
