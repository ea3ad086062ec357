//! Minimization of the discrete convex functional over grid corrections,
//! producing numerical solutions of the fourth-order curvature equation
//! with the canonical singular boundary behaviour.

use thiserror::Error;

use crate::geometry::{Point2, Polytope};
use crate::potential::{
    canonical_l_value, DiscreteFunctional, PotentialError, PotentialField,
};
use crate::stability::{determine_a_and_futaki, futaki_tolerance};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("initial correction is infeasible (Hessian not positive definite)")]
    InfeasibleStart,
    #[error("moment residual {residual:.3e} exceeds the compatibility tolerance {tolerance:.3e}; adjust weights before solving")]
    FutakiGate { residual: f64, tolerance: f64 },
    #[error("polytope is not Delzant: {0}")]
    NotDelzant(String),
    #[error(transparent)]
    Potential(#[from] PotentialError),
}

/// Line-search and stopping parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Grid nodes per unit length (`h = 1/n`).
    pub grid_n: usize,
    /// Stop when the largest gradient component falls below this.
    pub g_tol: f64,
    pub max_iters: usize,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    pub method: Method,
    /// Project the affine component out of the correction after each
    /// accepted step.
    pub project_affine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Plain gradient descent with backtracking: the baseline. Correct but
    /// slow on fine grids (the discrete operator conditions like N⁴).
    GradientDescent,
    /// Limited-memory quasi-Newton with the same backtracking and
    /// feasibility guard.
    Lbfgs,
    /// Inexact Newton with conjugate-gradient inner solves on the exact
    /// Hessian-vector product; the default (the barrier curvature range
    /// near the boundary defeats first-order methods on fine grids).
    NewtonCg,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grid_n: 64,
            g_tol: 1e-6,
            max_iters: 200,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            method: Method::NewtonCg,
            project_affine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIters,
}

/// Converged potential plus descent history and the curvature residual.
pub struct SolverResult {
    pub potential: PotentialField,
    /// Functional value per accepted step (strictly decreasing).
    pub m_history: Vec<f64>,
    /// Per-node curvature residual `u^{ij}_{ij} + A` (NaN where the stencil
    /// is unavailable), aligned with the grid.
    pub residual_field: Vec<f64>,
    pub max_residual: f64,
    pub status: SolverStatus,
    pub iterations: usize,
    pub final_gradient_norm: f64,
}

/// In-place Cholesky of a symmetric positive definite matrix in lower-band
/// storage (`band[r * (bw+1) + off] = A[r][r - off]`). Returns `None` when
/// a pivot is not positive.
fn band_cholesky_in_place(band: &mut [f64], n: usize, bw: usize) -> Option<()> {
    let stride = bw + 1;
    for r in 0..n {
        let c_lo = r.saturating_sub(bw);
        for c in c_lo..r {
            // L[r][c] = (A[r][c] - Σ_k L[r][k] L[c][k]) / L[c][c]
            let k_lo = c_lo.max(c.saturating_sub(bw));
            let mut s = band[r * stride + (r - c)];
            for k in k_lo..c {
                s -= band[r * stride + (r - k)] * band[c * stride + (c - k)];
            }
            band[r * stride + (r - c)] = s / band[c * stride];
        }
        let mut s = band[r * stride];
        for k in c_lo..r {
            let v = band[r * stride + (r - k)];
            s -= v * v;
        }
        if s <= 0.0 {
            return None;
        }
        band[r * stride] = s.sqrt();
    }
    Some(())
}

/// Solves `L Lᵀ x = b` in place given the banded Cholesky factor.
fn band_solve(band: &[f64], n: usize, bw: usize, b: &mut [f64]) {
    let stride = bw + 1;
    // forward: L y = b
    for r in 0..n {
        let c_lo = r.saturating_sub(bw);
        let mut s = b[r];
        for k in c_lo..r {
            s -= band[r * stride + (r - k)] * b[k];
        }
        b[r] = s / band[r * stride];
    }
    // backward: Lᵀ x = y
    for r in (0..n).rev() {
        let mut s = b[r];
        let hi = (r + bw).min(n - 1);
        for k in (r + 1)..=hi {
            s -= band[k * stride + (k - r)] * b[k];
        }
        b[r] = s / band[r * stride];
    }
}

fn solve3(m: [[f64; 3]; 3], r: [f64; 3]) -> [f64; 3] {
    let mut aug = [
        [m[0][0], m[0][1], m[0][2], r[0]],
        [m[1][0], m[1][1], m[1][2], r[1]],
        [m[2][0], m[2][1], m[2][2], r[2]],
    ];
    for col in 0..3 {
        let mut piv = col;
        for row in col + 1..3 {
            if aug[row][col].abs() > aug[piv][col].abs() {
                piv = row;
            }
        }
        aug.swap(col, piv);
        let d = aug[col][col];
        if d.abs() < 1e-300 {
            return [0.0; 3];
        }
        for k in col..4 {
            aug[col][k] /= d;
        }
        for row in 0..3 {
            if row != col {
                let s = aug[row][col];
                for k in col..4 {
                    aug[row][k] -= s * aug[col][k];
                }
            }
        }
    }
    [aug[0][3], aug[1][3], aug[2][3]]
}

fn affine_projection(field_grid: &crate::potential::Grid, f: &mut [f64]) -> [f64; 3] {
    // least-squares fit a + b x1 + c x2 over active nodes
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (i, j) in field_grid.active_nodes() {
        let p = field_grid.point(i, j);
        let row = [1.0, p.x1, p.x2];
        let v = f[field_grid.idx(i, j)];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] * v;
        }
    }
    // 3x3 solve by Cramer-free Gaussian elimination
    let mut m = [
        [ata[0][0], ata[0][1], ata[0][2], atb[0]],
        [ata[1][0], ata[1][1], ata[1][2], atb[1]],
        [ata[2][0], ata[2][1], ata[2][2], atb[2]],
    ];
    for col in 0..3 {
        let mut piv = col;
        for row in col + 1..3 {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        m.swap(col, piv);
        let d = m[col][col];
        for k in col..4 {
            m[col][k] /= d;
        }
        for row in 0..3 {
            if row != col {
                let s = m[row][col];
                for k in col..4 {
                    m[row][k] -= s * m[col][k];
                }
            }
        }
    }
    let coeffs = [m[0][3], m[1][3], m[2][3]];
    for (i, j) in field_grid.active_nodes() {
        let p = field_grid.point(i, j);
        f[field_grid.idx(i, j)] -= coeffs[0] + coeffs[1] * p.x1 + coeffs[2] * p.x2;
    }
    coeffs
}

/// Gradient descent / L-BFGS on node values of the correction, with exact
/// gradients of the discrete objective, a positive-definiteness guard in
/// the line search, and affine gauge projection after accepted steps.
pub fn minimize_m(
    polytope: &Polytope,
    config: &SolverConfig,
    initial_f: Option<Vec<f64>>,
) -> Result<SolverResult, SolverError> {
    let delzant = crate::geometry::is_delzant(polytope)
        .map_err(|e| SolverError::NotDelzant(e.to_string()))?;
    if !delzant.is_delzant {
        return Err(SolverError::NotDelzant(
            "edge normals do not form lattice bases at every vertex".into(),
        ));
    }
    let (_, futaki) = determine_a_and_futaki(polytope);
    let tol = futaki_tolerance(polytope);
    let residual = futaki[1].hypot(futaki[2]).max(futaki[0].abs());
    if residual > tol {
        return Err(SolverError::FutakiGate {
            residual,
            tolerance: tol,
        });
    }

    let disc = DiscreteFunctional::new(polytope, config.grid_n);
    let n = disc.grid.nx * disc.grid.ny;
    let mut f = initial_f.unwrap_or_else(|| vec![0.0; n]);
    assert_eq!(f.len(), n, "initial correction length mismatch");

    // The correction lives on active nodes only; everything outside the
    // closed polygon is pinned to zero by the extension convention.
    let active_mask: Vec<bool> = (0..n)
        .map(|idx| disc.grid.is_active(idx % disc.grid.nx, idx / disc.grid.nx))
        .collect();
    let mask = |v: &mut Vec<f64>| {
        for (x, &keep) in v.iter_mut().zip(&active_mask) {
            if !keep {
                *x = 0.0;
            }
        }
    };
    mask(&mut f);

    let objective = |f: &[f64]| -> Option<f64> { disc.value(f) };
    let gradient = |f: &[f64]| -> Option<Vec<f64>> { disc.gradient(f) };

    let mut value = objective(&f).ok_or(SolverError::InfeasibleStart)?;
    let mut grad = gradient(&f).ok_or(SolverError::InfeasibleStart)?;
    mask(&mut grad);
    let mut history = vec![value];

    // L-BFGS memory
    const MEMORY: usize = 12;
    let mut s_list: Vec<Vec<f64>> = Vec::new();
    let mut y_list: Vec<Vec<f64>> = Vec::new();
    let mut rho_list: Vec<f64> = Vec::new();
    let mut gamma = 1.0;

    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };

    // Newton direction by direct banded Cholesky of the assembled Hessian:
    // H s = -g, masked nodes clamped with identity rows, and a tiny ridge
    // absorbing the affine gauge nullspace.
    let newton_direction = |f: &[f64], grad: &[f64]| -> Option<Vec<f64>> {
        let (mut band, bw) = disc.hessian_band(f)?;
        let n = grad.len();
        let stride = bw + 1;
        // identity rows/columns for masked nodes
        for idx in 0..n {
            if !active_mask[idx] {
                for off in 0..=bw {
                    band[idx * stride + off] = 0.0;
                    let r = idx + off;
                    if off > 0 && r < n {
                        band[r * stride + off] = 0.0;
                    }
                }
                band[idx * stride] = 1.0;
            }
        }
        // ridge for the affine nullspace
        let mut scale: f64 = 0.0;
        for idx in 0..n {
            scale = scale.max(band[idx * stride]);
        }
        let ridge = 1e-12 * scale.max(1.0);
        for idx in 0..n {
            band[idx * stride] += ridge;
        }
        band_cholesky_in_place(&mut band, n, bw)?;
        let mut rhs: Vec<f64> = grad.iter().map(|g| -g).collect();
        for (v, &keep) in rhs.iter_mut().zip(&active_mask) {
            if !keep {
                *v = 0.0;
            }
        }
        band_solve(&band, n, bw, &mut rhs);
        for (v, &keep) in rhs.iter_mut().zip(&active_mask) {
            if !keep {
                *v = 0.0;
            }
        }
        if rhs.iter().all(|v| *v == 0.0) {
            None
        } else {
            Some(rhs)
        }
    };

    let mut iterations = 0;
    let mut gnorm = inf_norm(&grad);
    while gnorm > config.g_tol && iterations < config.max_iters {
        // descent direction
        let mut dir: Vec<f64> = match config.method {
            Method::GradientDescent => grad.iter().map(|g| -g).collect(),
            Method::NewtonCg => match newton_direction(&f, &grad) {
                Some(d) => d,
                None => grad.iter().map(|g| -g).collect(),
            },
            Method::Lbfgs => {
                let mut q: Vec<f64> = grad.clone();
                let k = s_list.len();
                let mut alpha = vec![0.0; k];
                for idx in (0..k).rev() {
                    alpha[idx] = rho_list[idx] * dot(&s_list[idx], &q);
                    for (qi, yi) in q.iter_mut().zip(&y_list[idx]) {
                        *qi -= alpha[idx] * yi;
                    }
                }
                for qi in q.iter_mut() {
                    *qi *= gamma;
                }
                for idx in 0..k {
                    let beta = rho_list[idx] * dot(&y_list[idx], &q);
                    for (qi, si) in q.iter_mut().zip(&s_list[idx]) {
                        *qi += (alpha[idx] - beta) * si;
                    }
                }
                q.iter_mut().for_each(|x| *x = -*x);
                q
            }
        };
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            // quasi-Newton direction lost descent; fall back to steepest
            dir = grad.iter().map(|g| -g).collect();
            slope = dot(&grad, &dir);
            s_list.clear();
            y_list.clear();
            rho_list.clear();
        }

        // backtracking with feasibility guard
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = f
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + step * d)
                .collect();
            if let Some(v) = objective(&cand) {
                if v <= value + config.sufficient_decrease * step * slope {
                    accepted = Some((cand, v));
                    break;
                }
            }
            step *= config.shrink;
        }
        let (mut new_f, mut new_value) = match accepted {
            Some(t) => t,
            None => break, // line search stalled at numerical precision
        };

        // gauge projection; skipped when it would break monotone descent
        if config.project_affine {
            let mut projected = new_f.clone();
            affine_projection(&disc.grid, &mut projected);
            if let Some(v) = objective(&projected) {
                if v < value {
                    new_f = projected;
                    new_value = v;
                }
            }
        }

        let mut new_grad = match gradient(&new_f) {
            Some(g) => g,
            None => break,
        };
        mask(&mut new_grad);

        // curvature pair update
        let s: Vec<f64> = new_f.iter().zip(&f).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * yy.sqrt() && yy > 0.0 {
            gamma = sy / yy;
            s_list.push(s);
            y_list.push(y);
            rho_list.push(1.0 / sy);
            if s_list.len() > MEMORY {
                s_list.remove(0);
                y_list.remove(0);
                rho_list.remove(0);
            }
        }

        f = new_f;
        value = new_value;
        grad = new_grad;
        history.push(value);
        gnorm = inf_norm(&grad);
        iterations += 1;
    }

    let status = if gnorm <= config.g_tol {
        SolverStatus::Converged
    } else {
        SolverStatus::MaxIters
    };

    let field = PotentialField::from_zero(polytope, config.grid_n).with_correction(f);
    let (residual_field, max_residual) = residual_field_of(&field)?;
    Ok(SolverResult {
        potential: field,
        m_history: history,
        residual_field,
        max_residual,
        status,
        iterations,
        final_gradient_norm: gnorm,
    })
}

/// Curvature residual `u^{ij}_{ij} + A` per node (NaN off-stencil), and its
/// maximum absolute value over stencil-complete interior nodes.
pub fn residual_field_of(field: &PotentialField) -> Result<(Vec<f64>, f64), PotentialError> {
    let grid = &field.grid;
    let a = field.polytope.a_constant();
    let mut out = vec![f64::NAN; grid.nx * grid.ny];
    let mut max_abs: f64 = 0.0;
    for (i, j) in grid.interior_nodes() {
        if grid.has_interior_ring(i, j) {
            let r = field.abreu_operator(i, j)? + a;
            out[grid.idx(i, j)] = r;
            max_abs = max_abs.max(r.abs());
        }
    }
    Ok((out, max_abs))
}

/// Summary identities of a converged run.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub max_residual: f64,
    /// `|L(u) - 2 Area(P)|`, the solution identity with n = 2.
    pub l_identity_slack: f64,
    pub l_of_u: f64,
    /// Maximum Euclidean norm of the first-order vector field diagnostic.
    pub max_v_norm: f64,
}

pub fn residual_report(result: &SolverResult) -> Result<ResidualReport, PotentialError> {
    let field = &result.potential;
    let polytope = &field.polytope;
    let disc = DiscreteFunctional::new(polytope, (1.0 / field.grid.h).round() as usize);
    let l_of_u = canonical_l_value(polytope) + disc.l_of_correction(&field.f);
    let target = 2.0 * polytope.polygon().area();
    Ok(ResidualReport {
        max_residual: result.max_residual,
        l_identity_slack: (l_of_u - target).abs(),
        l_of_u,
        max_v_norm: field.max_v_norm()?,
    })
}

/// Resamples a coarse correction onto the grid of a finer solve (bicubic
/// between coarse nodes, zero outside the coarse active set); used to warm
/// start mesh-refinement sequences.
pub fn upsample_correction(coarse: &PotentialField, fine_n: usize) -> Vec<f64> {
    let fine = PotentialField::from_zero(&coarse.polytope, fine_n);
    let grid = &fine.grid;
    let mut f = vec![0.0; grid.nx * grid.ny];
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            if grid.is_active(i, j) {
                let p = grid.point(i, j);
                f[grid.idx(i, j)] = coarse.correction_at(p);
            }
        }
    }
    f
}

/// Subtracts the supporting affine function at `p0`, yielding a potential
/// that vanishes at `p0` with zero gradient (hence nonnegative by
/// convexity).
pub fn affine_normalize(field: &PotentialField, p0: Point2) -> Result<PotentialField, PotentialError> {
    if !field.polytope.polygon().contains(p0) {
        return Err(PotentialError::OutsidePolygon(p0.x1, p0.x2));
    }
    let value = field.value_at(p0)?;
    let grad = field.gradient_at(p0)?;
    let grid = &field.grid;
    let mut f = field.f.clone();
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let x = grid.point(i, j);
            f[grid.idx(i, j)] -= value + grad.dot(x - p0);
        }
    }
    Ok(field.with_correction(f))
}
