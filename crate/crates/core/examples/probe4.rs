use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::potential::DiscreteFunctional;

// Dense damped Newton with vertex nodes pinned; print field structure.
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
    let n = 8usize;
    let disc = DiscreteFunctional::new(&p, n);
    let grid = &disc.grid;
    let total = grid.nx * grid.ny;
    let verts = p.polygon().vertices().to_vec();
    let mut dof = Vec::new();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if grid.is_active(i, j) {
                let pt = grid.point(i, j);
                if !verts.iter().any(|v| (*v - pt).norm() < 1e-9) {
                    dof.push(grid.idx(i, j));
                }
            }
        }
    }
    let nd = dof.len();
    let mut f = vec![0.0; total];
    for it in 0..80 {
        let g_full = disc.gradient(&f).unwrap();
        let mut g = vec![0.0; nd];
        for (k, &idx) in dof.iter().enumerate() {
            g[k] = g_full[idx];
        }
        let gnorm = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if gnorm < 1e-13 {
            println!("converged at iter {it} gnorm={gnorm:.2e}");
            break;
        }
        let fd_h = 1e-6;
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
        for k in 0..nd {
            hess[k * nd + k] += 1e-10;
        }
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
            if d.abs() < 1e-300 {
                continue;
            }
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
        let v0 = disc.value(&f).unwrap();
        let mut t = 1.0;
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
            if t < 1e-14 {
                break;
            }
        }
        if it % 10 == 0 {
            println!("it={it} gnorm={gnorm:.3e} step={t:.1e}");
        }
    }
    // report
    let field = abreu2d::potential::PotentialField::from_zero(&p, n).with_correction(f.clone());
    let (_, mr) = abreu2d::solver::residual_field_of(&field).unwrap();
    println!("max_residual = {mr:.3e}");
    // print f rows near the bottom edge (j = 2,3,4,5) full width
    for j in [2usize, 3, 4, 5, grid.ny / 2] {
        print!("row j={j}: ");
        for i in 0..grid.nx {
            if grid.is_active(i, j) {
                print!("{:+.3} ", f[grid.idx(i, j)]);
            } else {
                print!("   .   ");
            }
        }
        println!();
    }
}
