use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::potential::{DiscreteFunctional, NodeClass};

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
        let disc = DiscreteFunctional::new(&p, n);
        let grid = &disc.grid;
        let f = vec![0.0; grid.nx * grid.ny];
        let g = disc.gradient(&f).unwrap();
        // max |g| by class
        let mut max_by = [0.0f64; 4];
        let mut arg = [(0usize, 0usize); 4];
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                let c = match grid.class(i, j) {
                    NodeClass::Outside => 0,
                    NodeClass::Boundary => 1,
                    NodeClass::Collar => 2,
                    NodeClass::Interior => 3,
                };
                let v = g[grid.idx(i, j)].abs();
                if v > max_by[c] {
                    max_by[c] = v;
                    arg[c] = (i, j);
                }
            }
        }
        println!("N={n}: max|g| outside={:.3e} boundary={:.3e}@{:?} collar={:.3e}@{:?} interior={:.3e}@{:?}",
            max_by[0], max_by[1], arg[1], max_by[2], arg[2], max_by[3], arg[3]);
        // profile along the midline row j = ny/2 near the right edge
        let j = grid.ny / 2;
        print!("  row j={j} right-edge tail: ");
        for i in (grid.nx - 8)..grid.nx {
            print!("{:.2e} ", g[grid.idx(i, j)]);
        }
        println!();
        // corner region
        println!("  corner block (top-right):");
        for jj in (grid.ny - 6)..grid.ny {
            print!("   ");
            for ii in (grid.nx - 6)..grid.nx {
                print!("{:+.2e} ", g[grid.idx(ii, jj)]);
            }
            println!();
        }
    }
}
