//! C ABI for the toolkit: opaque handles, integer error codes, and flat
//! result structs. The generated header lives in `include/abreu2d.h`
//! (regenerate with the `generate-header` feature).
//!
//! Conventions: every function returns an [`AbreuStatus`]; outputs go
//! through pointers; handles are created and destroyed by matching
//! `*_new` / `*_free` pairs and are not thread-safe to mutate
//! concurrently (read-only use from several threads is fine).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::ptr;

use abreu2d::geometry::{build_polytope, CurvatureSpec, Point2};
use abreu2d::solver::{minimize_m, Method, SolverConfig, SolverStatus};
use abreu2d::stability::{
    determine_a_and_futaki, evaluate_l_hinge, scan_positivity, ScanConfig, StabilityStatus,
};
use abreu2d::{AffineFunction, Polytope};

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbreuStatus {
    Ok = 0,
    /// A pointer argument was null or a size was inconsistent.
    InvalidArgument = 1,
    /// Polygon validation failed (non-convex, degenerate, bad weights).
    InvalidPolytope = 2,
    /// The hinge has no positive part on the polygon.
    ZeroHinge = 3,
    /// Solver preconditions failed (not Delzant / incompatible moments).
    SolverPrecondition = 4,
    /// The solve stopped at the iteration cap.
    NotConverged = 5,
    /// Internal numerical failure.
    Numerical = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(clean).unwrap_or_default();
    });
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn abreu2d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn abreu2d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque polytope handle.
pub struct AbreuPolytope {
    inner: Polytope,
}

/// Builds a polytope from interleaved vertex coordinates
/// `[x1, y1, x2, y2, …]` (counter-clockwise) and per-edge weights. Pass a
/// NaN curvature constant to request the mass-matching automatic choice.
///
/// # Safety
/// `vertices_xy` must point to `2 * n_vertices` doubles, `weights` to
/// `n_vertices` doubles, and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_polytope_new(
    vertices_xy: *const f64,
    n_vertices: usize,
    weights: *const f64,
    a_constant: f64,
    out: *mut *mut AbreuPolytope,
) -> AbreuStatus {
    if vertices_xy.is_null() || weights.is_null() || out.is_null() || n_vertices < 3 {
        set_error("null pointer or fewer than 3 vertices");
        return AbreuStatus::InvalidArgument;
    }
    let coords = std::slice::from_raw_parts(vertices_xy, 2 * n_vertices);
    let w = std::slice::from_raw_parts(weights, n_vertices).to_vec();
    let vertices = coords
        .chunks_exact(2)
        .map(|c| Point2::new(c[0], c[1]))
        .collect();
    let spec = if a_constant.is_nan() {
        CurvatureSpec::Auto
    } else {
        CurvatureSpec::Given(a_constant)
    };
    match build_polytope(vertices, w, spec) {
        Ok(polytope) => {
            *out = Box::into_raw(Box::new(AbreuPolytope { inner: polytope }));
            AbreuStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            AbreuStatus::InvalidPolytope
        }
    }
}

/// Releases a polytope handle. Passing null is a no-op.
///
/// # Safety
/// `handle` must come from [`abreu2d_polytope_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_polytope_free(handle: *mut AbreuPolytope) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Scalar facts about a polytope.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AbreuPolytopeInfo {
    pub area: f64,
    pub boundary_mass: f64,
    pub a_constant: f64,
    pub futaki_mass: f64,
    pub futaki_x1: f64,
    pub futaki_x2: f64,
}

/// # Safety
/// `handle` must be a live polytope handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_polytope_info(
    handle: *const AbreuPolytope,
    out: *mut AbreuPolytopeInfo,
) -> AbreuStatus {
    let Some(p) = handle.as_ref() else {
        set_error("null handle");
        return AbreuStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output");
        return AbreuStatus::InvalidArgument;
    }
    let (a, futaki) = determine_a_and_futaki(&p.inner);
    *out = AbreuPolytopeInfo {
        area: p.inner.polygon().area(),
        boundary_mass: p.inner.boundary_mass(),
        a_constant: a,
        futaki_mass: futaki[0],
        futaki_x1: futaki[1],
        futaki_x2: futaki[2],
    };
    AbreuStatus::Ok
}

/// `L_{A,σ}(λ⁺)` for `λ = a1·x1 + a2·x2 + b`.
///
/// # Safety
/// `handle` must be a live polytope handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_evaluate_l_hinge(
    handle: *const AbreuPolytope,
    a1: f64,
    a2: f64,
    b: f64,
    out: *mut f64,
) -> AbreuStatus {
    let Some(p) = handle.as_ref() else {
        set_error("null handle");
        return AbreuStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output");
        return AbreuStatus::InvalidArgument;
    }
    match evaluate_l_hinge(&p.inner, &AffineFunction::new(a1, a2, b)) {
        Ok(v) => {
            *out = v;
            AbreuStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            AbreuStatus::ZeroHinge
        }
    }
}

/// Verdict of the positivity scan.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbreuVerdict {
    Stable = 0,
    Destabilized = 1,
    Inconclusive = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AbreuScanResult {
    pub verdict: AbreuVerdict,
    pub a_used: f64,
    pub min_l: f64,
    pub argmin_theta: f64,
    pub argmin_offset: f64,
    /// `1/min_l` when stable, NaN otherwise.
    pub c_estimate: f64,
}

/// Runs the positivity scan at the given resolution (`0` picks defaults).
///
/// # Safety
/// `handle` must be a live polytope handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_stability_scan(
    handle: *const AbreuPolytope,
    angles: usize,
    offsets: usize,
    out: *mut AbreuScanResult,
) -> AbreuStatus {
    let Some(p) = handle.as_ref() else {
        set_error("null handle");
        return AbreuStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output");
        return AbreuStatus::InvalidArgument;
    }
    let mut config = ScanConfig::default();
    if angles > 0 {
        config.angles = angles;
    }
    if offsets > 0 {
        config.offsets = offsets;
    }
    let report = scan_positivity(&p.inner, config);
    *out = AbreuScanResult {
        verdict: match report.status {
            StabilityStatus::Stable => AbreuVerdict::Stable,
            StabilityStatus::Destabilized => AbreuVerdict::Destabilized,
            StabilityStatus::Inconclusive => AbreuVerdict::Inconclusive,
        },
        a_used: report.a_used,
        min_l: report.min_l,
        argmin_theta: report.argmin_theta,
        argmin_offset: report.argmin_offset,
        c_estimate: report.c_estimate.unwrap_or(f64::NAN),
    };
    AbreuStatus::Ok
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AbreuSolveResult {
    pub m_final: f64,
    pub max_residual: f64,
    pub l_identity_slack: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes the potential functional from the canonical start
/// (`grid_n = 0`, `g_tol = 0`, `max_iters = 0` pick defaults).
///
/// # Safety
/// `handle` must be a live polytope handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_solve(
    handle: *const AbreuPolytope,
    grid_n: usize,
    g_tol: f64,
    max_iters: usize,
    out: *mut AbreuSolveResult,
) -> AbreuStatus {
    let Some(p) = handle.as_ref() else {
        set_error("null handle");
        return AbreuStatus::InvalidArgument;
    };
    if out.is_null() {
        set_error("null output");
        return AbreuStatus::InvalidArgument;
    }
    let mut config = SolverConfig {
        method: Method::Lbfgs,
        ..SolverConfig::default()
    };
    if grid_n > 0 {
        config.grid_n = grid_n;
    }
    if g_tol > 0.0 {
        config.g_tol = g_tol;
    }
    if max_iters > 0 {
        config.max_iters = max_iters;
    }
    match minimize_m(&p.inner, &config, None) {
        Ok(result) => {
            let slack = abreu2d::solver::residual_report(&result)
                .map(|r| r.l_identity_slack)
                .unwrap_or(f64::NAN);
            *out = AbreuSolveResult {
                m_final: *result.m_history.last().unwrap_or(&f64::NAN),
                max_residual: result.max_residual,
                l_identity_slack: slack,
                iterations: result.iterations,
                converged: result.status == SolverStatus::Converged,
            };
            if result.status == SolverStatus::Converged {
                AbreuStatus::Ok
            } else {
                set_error("iteration cap reached before the gradient tolerance");
                AbreuStatus::NotConverged
            }
        }
        Err(e) => {
            set_error(&e.to_string());
            AbreuStatus::SolverPrecondition
        }
    }
}

/// Fills `out_weights` (length `n_edges`) with the nearest compatible
/// weights (vanishing moment residuals) to the polytope's current ones.
///
/// # Safety
/// `handle` must be a live polytope handle; `out_weights` must point to
/// one double per edge.
#[no_mangle]
pub unsafe extern "C" fn abreu2d_project_compatible_weights(
    handle: *const AbreuPolytope,
    out_weights: *mut f64,
    n_edges: usize,
) -> AbreuStatus {
    let Some(p) = handle.as_ref() else {
        set_error("null handle");
        return AbreuStatus::InvalidArgument;
    };
    if out_weights.is_null() || n_edges != p.inner.edge_weights().len() {
        set_error("output length does not match the edge count");
        return AbreuStatus::InvalidArgument;
    }
    match abreu2d::stability::project_compatible_weights(&p.inner) {
        Ok(projected) => {
            let slice = std::slice::from_raw_parts_mut(out_weights, n_edges);
            slice.copy_from_slice(projected.edge_weights());
            AbreuStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            AbreuStatus::Numerical
        }
    }
}

/// Convenience check that a returned pointer-free struct can be zeroed.
#[no_mangle]
pub extern "C" fn abreu2d_scan_result_default() -> AbreuScanResult {
    AbreuScanResult {
        verdict: AbreuVerdict::Inconclusive,
        a_used: f64::NAN,
        min_l: f64::NAN,
        argmin_theta: f64::NAN,
        argmin_offset: f64::NAN,
        c_estimate: f64::NAN,
    }
}

// keep ptr imported for the doc examples of handle usage
const _: *const () = ptr::null();
