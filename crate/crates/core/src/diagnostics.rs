//! Numerical probes of the a-priori quantities: the edge gap `D(p)`, the
//! directional-derivative variation `V(p,q)`, vertex asymmetry profiles
//! `E(t)`, `Δ(t)`, `F_ε(t)` and the dyadic increments `δ_n`, the volume
//! ratio near a vertex, the convex-envelope inequality, sublevel-set
//! machinery, and Riemannian path length in the Hessian metric.

use thiserror::Error;

use crate::analytic::{joyce_potential, model_potential, JoyceParams, Model};
use crate::geometry::{Point2, Polytope};
use crate::potential::{PotentialField, Sym2};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("probe point ({0}, {1}) is outside the evaluable domain")]
    ProbeOutside(f64, f64),
    #[error("envelope base region contains no sample nodes")]
    EmptyX,
    #[error("path leaves the evaluable domain at ({0}, {1})")]
    PathOutside(f64, f64),
}

type DResult<T> = Result<T, DiagnosticsError>;

/// A potential that diagnostics can probe pointwise.
pub trait Surface {
    fn value(&self, x: Point2) -> Option<f64>;
    fn gradient(&self, x: Point2) -> Option<Point2>;
    fn hessian(&self, x: Point2) -> Option<Sym2>;
    /// True when the Hessian metric is singular at `x` (domain boundary);
    /// path integrals switch to the square-root substitution there.
    fn is_singular_at(&self, x: Point2) -> bool {
        self.hessian(x).is_none()
    }
}

/// Closed-form model as a probe target.
pub struct ModelSurface(pub Model);

impl Surface for ModelSurface {
    fn value(&self, x: Point2) -> Option<f64> {
        // values extend continuously to the domain boundary (0 log 0 = 0)
        match self.0 {
            Model::Flat => {
                if x.x1 < 0.0 || x.x2 < 0.0 {
                    None
                } else {
                    let t = |z: f64| if z > 0.0 { z * z.ln() } else { 0.0 };
                    Some(t(x.x1) + t(x.x2))
                }
            }
            Model::FlatEdge | Model::Shear(_) => {
                if x.x1 < 0.0 {
                    None
                } else if x.x1 == 0.0 {
                    let a = if let Model::Shear(a) = self.0 { a } else { 0.0 };
                    let s = x.x2 - a * x.x1;
                    Some(s * s)
                } else {
                    model_potential(self.0, x).ok().map(|j| j.value)
                }
            }
            Model::SquareProduct => {
                if x.x1.abs() > 1.0 || x.x2.abs() > 1.0 {
                    None
                } else {
                    let t = |z: f64| {
                        let a = 1.0 + z;
                        let b = 1.0 - z;
                        (if a > 0.0 { a * a.ln() } else { 0.0 })
                            + (if b > 0.0 { b * b.ln() } else { 0.0 })
                    };
                    Some(t(x.x1) + t(x.x2))
                }
            }
        }
    }

    fn gradient(&self, x: Point2) -> Option<Point2> {
        model_potential(self.0, x).ok().map(|j| j.gradient)
    }

    fn hessian(&self, x: Point2) -> Option<Sym2> {
        model_potential(self.0, x).ok().map(|j| j.hessian)
    }
}

/// Zero-scalar-curvature family as a probe target.
pub struct JoyceSurface(pub JoyceParams);

impl Surface for JoyceSurface {
    fn value(&self, x: Point2) -> Option<f64> {
        if x.x1 == 0.0 || x.x2 == 0.0 {
            // axes are fixed by the coordinate change; u extends by
            // y_i = x_i there with the 0 log 0 convention
            let t = |z: f64| if z > 0.0 { z * z.ln() } else { 0.0 };
            if x.x1 < 0.0 || x.x2 < 0.0 {
                return None;
            }
            let (y1, y2) = (x.x1, x.x2);
            return Some(
                t(y1) + t(y2) + 0.5 * (self.0.a2 * y1 * y1 + self.0.a1 * y2 * y2),
            );
        }
        joyce_potential(self.0, x).ok().map(|e| e.u)
    }

    fn gradient(&self, x: Point2) -> Option<Point2> {
        joyce_potential(self.0, x).ok().map(|e| e.xi)
    }

    fn hessian(&self, x: Point2) -> Option<Sym2> {
        joyce_potential(self.0, x).ok().map(|e| e.hessian)
    }
}

/// Grid-backed solver output as a probe target.
pub struct FieldSurface<'a>(pub &'a PotentialField);

impl Surface for FieldSurface<'_> {
    fn value(&self, x: Point2) -> Option<f64> {
        self.0.value_at(x).ok()
    }

    fn gradient(&self, x: Point2) -> Option<Point2> {
        self.0.gradient_at(x).ok()
    }

    fn hessian(&self, x: Point2) -> Option<Sym2> {
        self.0.hessian_at(x).ok()
    }

    fn is_singular_at(&self, x: Point2) -> bool {
        self.0.polytope.polygon().inradius_excess(x) < 1e-9 * self.0.grid.h
    }
}

/// `ũ(x) = u(λ x) / λ`; preserves the vertex profiles.
pub struct Rescaled<S: Surface> {
    pub inner: S,
    pub lambda: f64,
}

impl<S: Surface> Surface for Rescaled<S> {
    fn value(&self, x: Point2) -> Option<f64> {
        self.inner.value(x.scale(self.lambda)).map(|v| v / self.lambda)
    }

    fn gradient(&self, x: Point2) -> Option<Point2> {
        self.inner.gradient(x.scale(self.lambda))
    }

    fn hessian(&self, x: Point2) -> Option<Sym2> {
        self.inner.hessian(x.scale(self.lambda)).map(|h| {
            Sym2::new(
                h.a11 * self.lambda,
                h.a12 * self.lambda,
                h.a22 * self.lambda,
            )
        })
    }
}

/// `u + (a + b·x)`; leaves every profile quantity unchanged.
pub struct PlusAffine<S: Surface> {
    pub inner: S,
    pub constant: f64,
    pub slope: Point2,
}

impl<S: Surface> Surface for PlusAffine<S> {
    fn value(&self, x: Point2) -> Option<f64> {
        self.inner
            .value(x)
            .map(|v| v + self.constant + self.slope.dot(x))
    }

    fn gradient(&self, x: Point2) -> Option<Point2> {
        self.inner.gradient(x).map(|g| g + self.slope)
    }

    fn hessian(&self, x: Point2) -> Option<Sym2> {
        self.inner.hessian(x)
    }
}

// ---------------------------------------------------------------------------
// Edge probes: D(p)
// ---------------------------------------------------------------------------

/// A ray probe from an interior point to an edge.
#[derive(Debug, Clone, Copy)]
pub struct EdgeProbe {
    pub p: Point2,
    pub edge_index: usize,
    /// Unit outward transversal (the Euclidean normal).
    pub nu: Point2,
    /// Distance along `nu` from `p` to the edge point `q = p + s·nu`.
    pub s: f64,
}

/// Builds the probe from an interior point towards the given edge; fails if
/// the foot leaves the open edge or `p` is not strictly inside the ray side.
pub fn edge_probe(polytope: &Polytope, p: Point2, edge_index: usize) -> DResult<EdgeProbe> {
    let e = &polytope.polygon().edges()[edge_index];
    let nu = Point2::new(-e.inward_unit_normal.x1, -e.inward_unit_normal.x2);
    let s = e.inward_unit_normal.dot(p - e.start);
    if s <= 0.0 {
        return Err(DiagnosticsError::ProbeOutside(p.x1, p.x2));
    }
    let q = p + nu.scale(s);
    // foot must be interior to the edge segment
    let t = (q - e.start).dot(e.end - e.start) / (e.euclidean_length * e.euclidean_length);
    let tol = 1e-9;
    if !(tol..=1.0 - tol).contains(&t) {
        return Err(DiagnosticsError::ProbeOutside(q.x1, q.x2));
    }
    Ok(EdgeProbe {
        p,
        edge_index,
        nu,
        s,
    })
}

/// Normalized gap between the potential and its supporting plane at `p`,
/// evaluated at the edge foot:
/// `D(p) = (u(q) - u(p) - ∇u(p)·(q-p)) / s(p)`, nonnegative by convexity.
pub fn d_of_p(surface: &dyn Surface, probe: &EdgeProbe) -> DResult<f64> {
    let q = probe.p + probe.nu.scale(probe.s);
    let uq = surface
        .value(q)
        .ok_or(DiagnosticsError::ProbeOutside(q.x1, q.x2))?;
    let up = surface
        .value(probe.p)
        .ok_or(DiagnosticsError::ProbeOutside(probe.p.x1, probe.p.x2))?;
    let gp = surface
        .gradient(probe.p)
        .ok_or(DiagnosticsError::ProbeOutside(probe.p.x1, probe.p.x2))?;
    Ok((uq - up - gp.dot(q - probe.p)) / probe.s)
}

// ---------------------------------------------------------------------------
// M-condition scan: V(p, q)
// ---------------------------------------------------------------------------

/// Directional-derivative variation between admissible pairs on a
/// deterministic node lattice (stride in grid cells). A pair `(p, q)` is
/// admissible when the one-step extensions `p - dν` and `q + dν`, with
/// `d = |q - p|` and `ν = (q - p)/d`, stay inside the polygon.
#[derive(Debug, Clone, Copy)]
pub struct MConditionResult {
    pub max_v: f64,
    pub argmax_p: Point2,
    pub argmax_q: Point2,
    pub pairs_checked: usize,
}

pub fn m_condition_scan(field: &PotentialField, stride: usize) -> DResult<MConditionResult> {
    let grid = &field.grid;
    let polygon = field.polytope.polygon();
    let mut nodes: Vec<(Point2, Point2)> = Vec::new();
    for (i, j) in grid.interior_nodes() {
        if i % stride == 0 && j % stride == 0 {
            if let Ok(data) = field.eval_derivatives(i, j) {
                nodes.push((grid.point(i, j), data.xi));
            }
        }
    }
    let mut best = MConditionResult {
        max_v: 0.0,
        argmax_p: Point2::new(f64::NAN, f64::NAN),
        argmax_q: Point2::new(f64::NAN, f64::NAN),
        pairs_checked: 0,
    };
    for a in 0..nodes.len() {
        for b in (a + 1)..nodes.len() {
            let (p, gp) = nodes[a];
            let (q, gq) = nodes[b];
            let d = q - p;
            let dist = d.norm();
            if dist == 0.0 {
                continue;
            }
            let nu = d.scale(1.0 / dist);
            // one-step extensions: p - dν = 2p - q, q + dν = 2q - p
            if !polygon.contains(p - d) || !polygon.contains(q + d) {
                continue;
            }
            best.pairs_checked += 1;
            let v = (gq - gp).dot(nu);
            if v > best.max_v {
                best.max_v = v;
                best.argmax_p = p;
                best.argmax_q = q;
            }
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Vertex profiles: E(t), Δ(t), F_ε(t), δ_n
// ---------------------------------------------------------------------------

/// Unimodular chart at a polytope vertex: `x = vertex + y1 e1 + y2 e2` with
/// `e1, e2` the primitive edge directions leaving the vertex.
#[derive(Debug, Clone, Copy)]
pub struct VertexChart {
    pub vertex: Point2,
    pub e1: Point2,
    pub e2: Point2,
}

impl VertexChart {
    /// Identity chart for model potentials living on the quadrant.
    pub fn identity() -> Self {
        Self {
            vertex: Point2::new(0.0, 0.0),
            e1: Point2::new(1.0, 0.0),
            e2: Point2::new(0.0, 1.0),
        }
    }

    pub fn at_polytope_vertex(polytope: &Polytope, vertex_index: usize) -> Self {
        let polygon = polytope.polygon();
        let n = polygon.vertices().len();
        let vertex = polygon.vertices()[vertex_index];
        let edge_out = &polygon.edges()[vertex_index];
        let edge_in = &polygon.edges()[(vertex_index + n - 1) % n];
        let dir_of = |e: &crate::geometry::Edge, flip: bool| -> Point2 {
            let d = match e.primitive_direction {
                Some((p, q)) => Point2::new(p as f64, q as f64),
                None => {
                    let d = e.end - e.start;
                    d.scale(1.0 / d.norm())
                }
            };
            if flip {
                Point2::new(-d.x1, -d.x2)
            } else {
                d
            }
        };
        let mut e1 = dir_of(edge_out, false);
        let mut e2 = dir_of(edge_in, true);
        if e1.cross(e2) < 0.0 {
            std::mem::swap(&mut e1, &mut e2);
        }
        Self { vertex, e1, e2 }
    }

    pub fn map(&self, y: Point2) -> Point2 {
        self.vertex + self.e1.scale(y.x1) + self.e2.scale(y.x2)
    }

    pub fn det(&self) -> f64 {
        self.e1.cross(self.e2)
    }

    /// Chart-coordinate value.
    fn val(&self, s: &dyn Surface, y: Point2) -> Option<f64> {
        s.value(self.map(y))
    }

    /// Chart-coordinate gradient `(∇u)·e_i`.
    fn grad(&self, s: &dyn Surface, y: Point2) -> Option<Point2> {
        let g = s.gradient(self.map(y))?;
        Some(Point2::new(g.dot(self.e1), g.dot(self.e2)))
    }

    /// Chart-coordinate Hessian determinant (`det(MᵀHM) = det H · det(M)²`).
    fn jdet(&self, s: &dyn Surface, y: Point2) -> Option<f64> {
        let h = s.hessian(self.map(y))?;
        let d = self.det();
        Some(h.det() * d * d)
    }
}

/// One row of the vertex profile table.
#[derive(Debug, Clone)]
pub struct VertexProfileRow {
    pub t: f64,
    pub e_of_t: f64,
    pub delta_of_t: f64,
    /// `F_ε(t) = E(t) + ε Δ(t)` for each configured ε.
    pub f_eps: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct VertexProfile {
    pub rows: Vec<VertexProfileRow>,
    pub epsilons: Vec<f64>,
    pub e_max: f64,
    /// Dyadic derivative increments `δ_n = u'(2^{-n+1}) - u'(2^{-n})` of the
    /// diagonal restriction, for `n = 0, 1, …` down to the resolvable scale.
    pub delta_n: Vec<f64>,
}

/// Number of chord samples in the Δ(t) maximization (odd, includes the
/// midpoint).
pub const DELTA_CHORD_SAMPLES: usize = 41;

/// Vertex asymmetry `E(t) = t⁻¹(u(2t,0) + u(0,2t) - 2u(t,t))`, the chord
/// volume maximum `Δ(t) = t² max J` over `x1+x2 = 2t, |x1-x2| ≤ t/10`, and
/// their `F_ε` combinations, in the given chart.
pub fn vertex_profile(
    surface: &dyn Surface,
    chart: &VertexChart,
    ts: &[f64],
    epsilons: &[f64],
    dyadic_min_t: f64,
) -> DResult<VertexProfile> {
    let mut rows = Vec::with_capacity(ts.len());
    let mut e_max = f64::NEG_INFINITY;
    for &t in ts {
        let probe = |y: Point2| {
            chart
                .val(surface, y)
                .ok_or(DiagnosticsError::ProbeOutside(y.x1, y.x2))
        };
        let e = (probe(Point2::new(2.0 * t, 0.0))? + probe(Point2::new(0.0, 2.0 * t))?
            - 2.0 * probe(Point2::new(t, t))?)
            / t;
        let mut jmax = f64::NEG_INFINITY;
        for k in 0..DELTA_CHORD_SAMPLES {
            let spread = -0.1 * t + 0.2 * t * k as f64 / (DELTA_CHORD_SAMPLES - 1) as f64;
            // y1 + y2 = 2t, y1 - y2 = spread
            let y = Point2::new(t + 0.5 * spread, t - 0.5 * spread);
            let j = chart
                .jdet(surface, y)
                .ok_or(DiagnosticsError::ProbeOutside(y.x1, y.x2))?;
            jmax = jmax.max(j);
        }
        let delta = t * t * jmax;
        let f_eps = epsilons.iter().map(|&eps| e + eps * delta).collect();
        e_max = e_max.max(e);
        rows.push(VertexProfileRow {
            t,
            e_of_t: e,
            delta_of_t: delta,
            f_eps,
        });
    }
    // dyadic increments of the diagonal derivative
    let diag_d = |t: f64| -> DResult<f64> {
        let g = chart
            .grad(surface, Point2::new(t, t))
            .ok_or(DiagnosticsError::ProbeOutside(t, t))?;
        Ok(g.x1 + g.x2)
    };
    let mut delta_n = Vec::new();
    let mut n = 0u32;
    loop {
        let t_hi = 2f64.powi(1 - n as i32);
        let t_lo = 2f64.powi(-(n as i32));
        if t_lo < dyadic_min_t {
            break;
        }
        delta_n.push(diag_d(t_hi)? - diag_d(t_lo)?);
        n += 1;
        if n > 60 {
            break;
        }
    }
    Ok(VertexProfile {
        rows,
        epsilons: epsilons.to_vec(),
        e_max,
        delta_n,
    })
}

// ---------------------------------------------------------------------------
// Volume ratio near a vertex
// ---------------------------------------------------------------------------

/// Extrema of the vertex volume ratio `J e^{ξ1+ξ2}` over quadrant samples,
/// with the Legendre coordinates normalized so the flat model gives
/// exactly 1: subtract the constant +1 per component carried by the raw
/// gradient, giving `ξ_i = log x_i` there, so `J e^{ξ1+ξ2} = 1`
/// identically. (Equivalently `J e^{-(ξ'1+ξ'2)}` in the sign-flipped
/// coordinates `ξ' = -ξ` that grow towards the vertex.)
pub fn volume_bound_b(
    surface: &dyn Surface,
    chart: &VertexChart,
    samples: &[Point2],
) -> DResult<(f64, f64)> {
    let mut sup = f64::NEG_INFINITY;
    let mut inf = f64::INFINITY;
    for &y in samples {
        let j = chart
            .jdet(surface, y)
            .ok_or(DiagnosticsError::ProbeOutside(y.x1, y.x2))?;
        let g = chart
            .grad(surface, y)
            .ok_or(DiagnosticsError::ProbeOutside(y.x1, y.x2))?;
        let xi1 = g.x1 - 1.0;
        let xi2 = g.x2 - 1.0;
        let ratio = j * (xi1 + xi2).exp();
        sup = sup.max(ratio);
        inf = inf.min(ratio);
    }
    Ok((sup, inf))
}

// ---------------------------------------------------------------------------
// Convex envelope inequality
// ---------------------------------------------------------------------------

/// Both sides of the envelope inequality
/// `∫_P (u - ū_X) dμ ≤ n·Vol(P∖X) + ∫_P A (u - ū_X) dμ` with `n = 2`,
/// where `ū_X` is the supremum of supporting planes sampled at grid nodes
/// inside `X`.
#[derive(Debug, Clone, Copy)]
pub struct EnvelopeCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub vol_complement: f64,
}

pub fn convex_envelope_check8(
    field: &PotentialField,
    in_x: &dyn Fn(Point2) -> bool,
) -> Result<EnvelopeCheck, DiagnosticsError> {
    let grid = &field.grid;
    // supporting planes at nodes of X
    let mut planes: Vec<(f64, Point2, Point2)> = Vec::new(); // (u(p), grad, p)
    let mut vol_x = 0.0;
    for (i, j) in grid.interior_nodes().chain(grid.collar_nodes()) {
        let p = grid.point(i, j);
        if in_x(p) {
            if let (Ok(v), Ok(g)) = (field.value_at(p), field.gradient_at(p)) {
                planes.push((v, g, p));
            }
        }
    }
    if planes.is_empty() {
        return Err(DiagnosticsError::EmptyX);
    }
    let a = field.polytope.a_constant();
    let mut lhs = 0.0;
    let mut rhs_int = 0.0;
    let mut vol_total = 0.0;
    for (i, j) in grid.active_nodes() {
        let w = grid.mu_weight(i, j);
        if w <= 0.0 {
            continue;
        }
        let p = grid.point(i, j);
        let u = match field.value_at(p) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let mut env = f64::NEG_INFINITY;
        for &(v, g, q) in &planes {
            env = env.max(v + g.dot(p - q));
        }
        let gap = (u - env).max(0.0);
        lhs += w * gap;
        rhs_int += w * a * gap;
        vol_total += w;
        if in_x(p) {
            vol_x += w;
        }
    }
    let vol_complement = vol_total - vol_x;
    let rhs = 2.0 * vol_complement + rhs_int;
    Ok(EnvelopeCheck {
        lhs,
        rhs,
        slack: rhs - lhs,
        vol_complement,
    })
}

/// Envelope value `ū_X(x)` from node-sampled supporting planes (exposed for
/// the envelope-definition checks).
pub fn envelope_at(
    field: &PotentialField,
    in_x: &dyn Fn(Point2) -> bool,
    x: Point2,
) -> Result<f64, DiagnosticsError> {
    let grid = &field.grid;
    let mut env = f64::NEG_INFINITY;
    let mut any = false;
    for (i, j) in grid.interior_nodes().chain(grid.collar_nodes()) {
        let p = grid.point(i, j);
        if in_x(p) {
            if let (Ok(v), Ok(g)) = (field.value_at(p), field.gradient_at(p)) {
                env = env.max(v + g.dot(x - p));
                any = true;
            }
        }
    }
    if any {
        Ok(env)
    } else {
        Err(DiagnosticsError::EmptyX)
    }
}

// ---------------------------------------------------------------------------
// Sublevel machinery at a vertex
// ---------------------------------------------------------------------------

/// One sublevel slice `X(h) = {φ < h}`, `φ = u - x·∇u` in chart
/// coordinates, with the associated edge data and deficit integrals.
#[derive(Debug, Clone)]
pub struct SublevelSlice {
    pub h: f64,
    /// Edge tangency abscissae `ξ_i(h)` on the two chart axes.
    pub xi: [f64; 2],
    /// Zero crossings `D_i(h)` of the tangent lines.
    pub d_cross: [f64; 2],
    /// Deficit integrals `G_i(h) = ∫_0^{ξ_i} (u|edge - τ_{i,h})`.
    pub g: [f64; 2],
    /// Area of `Ω(h) = patch ∖ X(h)` by node counting.
    pub area_omega: f64,
    /// Area of `X(h)` within the patch (monotone increasing in h).
    pub area_x: f64,
    /// `J(h) = ∫_{Ω_h} (u - ū_{X(h)})` via the radial envelope formula.
    pub j_value: f64,
}

/// Edge restriction helpers: value and derivative of `û(t, 0)` or
/// `û(0, t)`.
fn edge_value(surface: &dyn Surface, chart: &VertexChart, axis: usize, t: f64) -> Option<f64> {
    let y = if axis == 0 {
        Point2::new(t, 0.0)
    } else {
        Point2::new(0.0, t)
    };
    chart.val(surface, y)
}

fn edge_phi(surface: &dyn Surface, chart: &VertexChart, axis: usize, t: f64) -> Option<f64> {
    // φ_edge(t) = U(t) - t U'(t); U' by a small centered difference of the
    // boundary restriction (robust for both analytic and grid fields)
    let step = (t * 1e-5).max(1e-9);
    let um = edge_value(surface, chart, axis, t - step)?;
    let up = edge_value(surface, chart, axis, t + step)?;
    let u = edge_value(surface, chart, axis, t)?;
    let du = (up - um) / (2.0 * step);
    Some(u - t * du)
}

fn edge_slope(surface: &dyn Surface, chart: &VertexChart, axis: usize, t: f64) -> Option<f64> {
    let step = (t * 1e-5).max(1e-9);
    let um = edge_value(surface, chart, axis, t - step)?;
    let up = edge_value(surface, chart, axis, t + step)?;
    Some((up - um) / (2.0 * step))
}

/// Solves `φ_edge(t) = h` for `t ∈ (t_lo, t_hi)` by bisection; `φ_edge` is
/// strictly decreasing for convex boundary restrictions.
fn solve_edge_xi(
    surface: &dyn Surface,
    chart: &VertexChart,
    axis: usize,
    h: f64,
    t_lo: f64,
    t_hi: f64,
) -> Option<f64> {
    let f = |t: f64| edge_phi(surface, chart, axis, t).map(|v| v - h);
    let mut a = t_lo;
    let mut b = t_hi;
    let fa = f(a)?;
    let fb = f(b)?;
    if fa.signum() == fb.signum() {
        return None;
    }
    let increasing = fb > fa;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 || (b - a) < 1e-14 * t_hi {
            return Some(m);
        }
        if (fm > 0.0) == increasing {
            b = m;
        } else {
            a = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Radius on the ray with direction `dir` where `φ_ray(r) = u - r ∂_r u`
/// reaches `h`.
fn solve_ray_radius(
    surface: &dyn Surface,
    chart: &VertexChart,
    dir: Point2,
    h: f64,
    r_lo: f64,
    r_hi: f64,
) -> Option<f64> {
    let phi = |r: f64| -> Option<f64> {
        let y = dir.scale(r);
        let u = chart.val(surface, y)?;
        let g = chart.grad(surface, y)?;
        Some(u - r * g.dot(dir) - h)
    };
    let mut a = r_lo;
    let mut b = r_hi;
    let fa = phi(a)?;
    let fb = phi(b)?;
    if fa.signum() == fb.signum() {
        return None;
    }
    let increasing = fb > fa;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = phi(m)?;
        if fm == 0.0 || (b - a) < 1e-13 * r_hi {
            return Some(m);
        }
        if (fm > 0.0) == increasing {
            b = m;
        } else {
            a = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Computes the sublevel machinery on a quadrant patch `[0, size]²` in
/// chart coordinates, at the given levels, with an `n × n` probe lattice
/// for the area and `J(h)` quadratures.
pub fn sublevel_profile(
    surface: &dyn Surface,
    chart: &VertexChart,
    levels: &[f64],
    patch_size: f64,
    resolution: usize,
) -> DResult<Vec<SublevelSlice>> {
    let cell = patch_size / resolution as f64;
    let t_min = 1e-7 * patch_size;
    let quad_pts = 4096;
    let mut out = Vec::with_capacity(levels.len());
    for &h in levels {
        let mut xi = [f64::NAN; 2];
        let mut dcross = [f64::NAN; 2];
        let mut g = [f64::NAN; 2];
        for axis in 0..2 {
            let x = solve_edge_xi(surface, chart, axis, h, t_min, patch_size)
                .ok_or(DiagnosticsError::ProbeOutside(h, axis as f64))?;
            xi[axis] = x;
            let slope = edge_slope(surface, chart, axis, x)
                .ok_or(DiagnosticsError::ProbeOutside(x, axis as f64))?;
            let uxi = edge_value(surface, chart, axis, x)
                .ok_or(DiagnosticsError::ProbeOutside(x, axis as f64))?;
            // tangent line τ(t) = u(ξ) + slope (t - ξ); τ(0) = h by
            // construction; zero crossing D = ξ - u(ξ)/slope
            dcross[axis] = x - uxi / slope;
            // deficit integral by trapezoid
            let mut acc = 0.0;
            for k in 0..=quad_pts {
                let t = x * k as f64 / quad_pts as f64;
                let u = if t < t_min {
                    edge_value(surface, chart, axis, t_min)
                } else {
                    edge_value(surface, chart, axis, t)
                }
                .ok_or(DiagnosticsError::ProbeOutside(t, axis as f64))?;
                let tau = uxi + slope * (t - x);
                let w = if k == 0 || k == quad_pts { 0.5 } else { 1.0 };
                acc += w * (u - tau);
            }
            g[axis] = acc * x / quad_pts as f64;
        }

        // node counting for areas and radial envelope for J(h)
        let mut area_omega = 0.0;
        let mut area_x = 0.0;
        let mut j_value = 0.0;
        for jrow in 0..resolution {
            for icol in 0..resolution {
                let y = Point2::new((icol as f64 + 0.5) * cell, (jrow as f64 + 0.5) * cell);
                let u = match chart.val(surface, y) {
                    Some(v) => v,
                    None => continue,
                };
                let grad = match chart.grad(surface, y) {
                    Some(v) => v,
                    None => continue,
                };
                let phi = u - y.dot(grad);
                if phi < h {
                    area_x += cell * cell;
                } else {
                    area_omega += cell * cell;
                    // radial envelope: ū on the ray = h + (r/R)(u(R) - h)
                    let r = y.norm();
                    let dir = y.scale(1.0 / r);
                    if let Some(big_r) =
                        solve_ray_radius(surface, chart, dir, h, r, 2.0 * patch_size)
                    {
                        if let Some(u_r) = chart.val(surface, dir.scale(big_r)) {
                            let env = h + (r / big_r) * (u_r - h);
                            j_value += cell * cell * (u - env);
                        }
                    }
                }
            }
        }
        out.push(SublevelSlice {
            h,
            xi,
            d_cross: dcross,
            g,
            area_omega,
            area_x,
            j_value,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Riemannian path length
// ---------------------------------------------------------------------------

/// Length of a polyline in the Hessian metric, composite Simpson with 2⁸
/// panels per segment. Segments with a singular endpoint substitute
/// `arc-parameter = τ²` so the inverse-square-root metric blowup integrates
/// cleanly.
pub fn riemannian_length(surface: &dyn Surface, path: &[Point2]) -> DResult<f64> {
    let mut total = 0.0;
    for seg in path.windows(2) {
        total += segment_length(surface, seg[0], seg[1], true)?;
    }
    Ok(total)
}

fn segment_length(surface: &dyn Surface, a: Point2, b: Point2, may_split: bool) -> DResult<f64> {
    const PANELS: usize = 256;
    let d = b - a;
    let speed = |s: f64| -> DResult<f64> {
        let x = a + d.scale(s);
        let h = surface
            .hessian(x)
            .ok_or(DiagnosticsError::PathOutside(x.x1, x.x2))?;
        Ok(h.quadratic_form(d).max(0.0).sqrt())
    };
    let sing_a = surface.is_singular_at(a);
    let sing_b = surface.is_singular_at(b);
    let clamp = 1e-10;
    let integrand: Box<dyn Fn(f64) -> DResult<f64>> = if sing_a && !sing_b {
        // clamp τ, not τ², so τ·speed(τ²) keeps its finite limit
        Box::new(move |tau: f64| {
            let t = tau.max(clamp);
            Ok(2.0 * t * speed(t * t)?)
        })
    } else if sing_b && !sing_a {
        Box::new(move |tau: f64| {
            let t = tau.max(clamp);
            Ok(2.0 * t * speed(1.0 - t * t)?)
        })
    } else if sing_a && sing_b {
        // split once at the midpoint; a segment lying inside the singular
        // set has no finite length in this metric
        let mid = a + d.scale(0.5);
        if !may_split || surface.is_singular_at(mid) {
            return Err(DiagnosticsError::PathOutside(mid.x1, mid.x2));
        }
        return Ok(segment_length(surface, a, mid, false)?
            + segment_length(surface, mid, b, false)?);
    } else {
        Box::new(move |s: f64| speed(s.clamp(clamp, 1.0 - clamp)))
    };
    // composite Simpson on [0, 1]
    let n = PANELS;
    let mut acc = integrand(0.0)? + integrand(1.0)?;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(k as f64 / n as f64)?;
    }
    Ok(acc / (3.0 * n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_polytope, CurvatureSpec};

    struct Quadratic;
    impl Surface for Quadratic {
        fn value(&self, x: Point2) -> Option<f64> {
            Some(0.5 * (x.x1 * x.x1 + x.x2 * x.x2))
        }
        fn gradient(&self, x: Point2) -> Option<Point2> {
            Some(x)
        }
        fn hessian(&self, _x: Point2) -> Option<Sym2> {
            Some(Sym2::new(1.0, 0.0, 1.0))
        }
    }

    fn half_plane_polytope() -> Polytope {
        // tall box standing in for the half-plane x1 > 0; edge 3 is x1 = 0
        build_polytope(
            vec![
                Point2::new(0.0, -6.0),
                Point2::new(12.0, -6.0),
                Point2::new(12.0, 6.0),
                Point2::new(0.0, 6.0),
            ],
            vec![1.0; 4],
            CurvatureSpec::Given(0.0),
        )
        .unwrap()
    }

    #[test]
    fn d_is_one_on_flat_edge_model() {
        let p = half_plane_polytope();
        let s = ModelSurface(Model::FlatEdge);
        for k in 0..20 {
            let probe = edge_probe(
                &p,
                Point2::new(0.1 + 0.15 * k as f64, -3.0 + 0.3 * k as f64),
                3,
            )
            .unwrap();
            let d = d_of_p(&s, &probe).unwrap();
            assert!((d - 1.0).abs() < 1e-8, "D = {d}");
        }
    }

    #[test]
    fn d_on_shear_model_is_a_squared_plus_one() {
        let p = half_plane_polytope();
        for &a in &[0.5, 2.0, 10.0] {
            let s = ModelSurface(Model::Shear(a));
            let probe = edge_probe(&p, Point2::new(1.0, 0.0), 3).unwrap();
            let d = d_of_p(&s, &probe).unwrap();
            assert!((d - (a * a + 1.0)).abs() < 1e-8, "a={a}: D={d}");
        }
    }

    #[test]
    fn d_nonnegative_on_convex_surfaces() {
        let p = half_plane_polytope();
        let s = ModelSurface(Model::Shear(1.3));
        for k in 1..30 {
            let probe = edge_probe(&p, Point2::new(0.05 * k as f64, 0.11 * k as f64 - 1.5), 3);
            if let Ok(pr) = probe {
                assert!(d_of_p(&s, &pr).unwrap() >= -1e-12);
            }
        }
    }

    #[test]
    fn v_for_quadratic_is_distance() {
        // u = |x|²/2 has V(p,q) = |q - p| for every admissible pair
        let sq = build_polytope(
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
        let q = Quadratic;
        let p = Point2::new(-0.1, 0.0);
        let r = Point2::new(0.2, 0.1);
        let nu = (r - p).scale(1.0 / (r - p).norm());
        let v = (q.gradient(r).unwrap() - q.gradient(p).unwrap()).dot(nu);
        assert!((v - (r - p).norm()).abs() < 1e-12);
        let _ = sq;
    }

    #[test]
    fn e_is_4log2_on_flat_model() {
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let prof = vertex_profile(&s, &chart, &[0.1, 1.0, 10.0], &[0.1], 1e-3).unwrap();
        for row in &prof.rows {
            assert!(
                (row.e_of_t - 4.0 * 2f64.ln()).abs() < 1e-10,
                "t={}: E={}",
                row.t,
                row.e_of_t
            );
        }
    }

    #[test]
    fn delta_on_flat_model_is_400_over_399() {
        // J = 1/(x1 x2); on the chord the max sits at the edge of the
        // |x1-x2| ≤ t/10 window: t²/((t+t/20)(t-t/20)) = 400/399
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let prof = vertex_profile(&s, &chart, &[0.5, 2.0], &[], 1e-3).unwrap();
        for row in &prof.rows {
            assert!(
                (row.delta_of_t - 400.0 / 399.0).abs() < 1e-12,
                "Δ = {}",
                row.delta_of_t
            );
        }
    }

    #[test]
    fn flat_dyadic_increments_are_2log2() {
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let prof = vertex_profile(&s, &chart, &[1.0], &[], 1e-4).unwrap();
        assert!(prof.delta_n.len() >= 10);
        for d in &prof.delta_n {
            assert!((d - 2.0 * 2f64.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn profile_invariances() {
        let ts = [0.3, 0.9, 2.1];
        let eps = [0.05, 0.2];
        let chart = VertexChart::identity();
        let base = vertex_profile(&ModelSurface(Model::Flat), &chart, &ts, &eps, 1e-2).unwrap();
        // affine shift
        let shifted = PlusAffine {
            inner: ModelSurface(Model::Flat),
            constant: 3.7,
            slope: Point2::new(-0.4, 0.9),
        };
        let p2 = vertex_profile(&shifted, &chart, &ts, &eps, 1e-2).unwrap();
        // rescale ũ(x) = u(λx)/λ
        let scaled = Rescaled {
            inner: JoyceSurface(JoyceParams::new(1.0, 2.0)),
            lambda: 1.0,
        };
        let joyce_base = vertex_profile(&scaled, &chart, &ts, &eps, 1e-2).unwrap();
        let joyce_scaled = vertex_profile(
            &Rescaled {
                inner: JoyceSurface(JoyceParams::new(1.0, 2.0)),
                lambda: 2.0,
            },
            &chart,
            &ts.iter().map(|t| t / 2.0).collect::<Vec<_>>(),
            &eps,
            1e-2,
        );
        for (r1, r2) in base.rows.iter().zip(&p2.rows) {
            assert!((r1.e_of_t - r2.e_of_t).abs() < 1e-8);
            assert!((r1.delta_of_t - r2.delta_of_t).abs() < 1e-8);
        }
        // rescaling invariance: E(t) of ũ at t equals E(λt) of u.
        let js = joyce_scaled.unwrap();
        for (k, row) in js.rows.iter().enumerate() {
            // ũ = u(2x)/2 at t = ts/2 matches u at ts
            assert!(
                (row.e_of_t - joyce_base.rows[k].e_of_t).abs() < 1e-7,
                "E mismatch {} vs {}",
                row.e_of_t,
                joyce_base.rows[k].e_of_t
            );
            assert!((row.delta_of_t - joyce_base.rows[k].delta_of_t).abs() < 1e-7);
        }
    }

    #[test]
    fn volume_ratio_flat_model_is_one() {
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let mut samples = Vec::new();
        for i in 1..20 {
            for j in 1..20 {
                samples.push(Point2::new(0.1 * i as f64, 0.1 * j as f64));
            }
        }
        let (sup, inf) = volume_bound_b(&s, &chart, &samples).unwrap();
        assert!((sup - 1.0).abs() < 1e-8 && (inf - 1.0).abs() < 1e-8);
    }

    #[test]
    fn riemannian_length_identity_metric() {
        let q = Quadratic;
        let l = riemannian_length(&q, &[Point2::new(0.0, 0.0), Point2::new(3.0, 4.0)]).unwrap();
        assert!((l - 5.0).abs() < 1e-9, "length {l}");
    }

    #[test]
    fn riemannian_length_edge_segment_flat_edge_model() {
        // u22 = 2 along the x2 axis for x1 log x1 + x2²: length = √2 (b - a)
        let s = ModelSurface(Model::FlatEdge);
        // a segment inside the singular set has no finite length here
        let on_axis = riemannian_length(&s, &[Point2::new(0.0, 0.2), Point2::new(0.0, 1.2)]);
        assert!(matches!(on_axis, Err(DiagnosticsError::PathOutside(_, _))));
        // probing just inside recovers the constant-metric value
        let l_in = riemannian_length(
            &s,
            &[Point2::new(1e-12, 0.2), Point2::new(1e-12, 1.2)],
        )
        .unwrap();
        assert!((l_in - 2f64.sqrt()).abs() < 1e-6, "length {l_in}");
    }

    #[test]
    fn riemannian_length_handles_singular_endpoint() {
        // segment hitting the edge x1 = 0 of the flat edge model: the metric
        // grows like 1/x1, integrable after the square-root substitution;
        // ∫_0^1 dx/√x = 2 exactly for the pure 1/ℓ part
        let s = ModelSurface(Model::FlatEdge);
        let got = riemannian_length(&s, &[Point2::new(0.0, 0.3), Point2::new(1.0, 0.3)]).unwrap();
        let want = 2.0; // ∫_0^1 x^{-1/2} dx
        assert!((got - want).abs() < 1e-4, "length {got}");
    }

    #[test]
    fn riemannian_length_refines_consistently() {
        let s = JoyceSurface(JoyceParams::new(1.0, 1.0));
        let a = Point2::new(0.5, 0.7);
        let b = Point2::new(2.5, 1.9);
        let one = riemannian_length(&s, &[a, b]).unwrap();
        let mid = Point2::new(1.5, 1.3);
        let two = riemannian_length(&s, &[a, mid, b]).unwrap();
        assert!((one - two).abs() < 1e-6 * one, "{one} vs {two}");
    }

    #[test]
    fn sublevel_flat_model_triangle() {
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let slices = sublevel_profile(&s, &chart, &[-1.0, -0.7], 3.0, 600).unwrap();
        for sl in &slices {
            // ξ_i(h) = -h and Ω is the triangle with legs -h
            let want_xi = -sl.h;
            assert!((sl.xi[0] - want_xi).abs() < 1e-6, "xi {}", sl.xi[0]);
            assert!((sl.xi[1] - want_xi).abs() < 1e-6);
            let want_area = 0.5 * want_xi * want_xi;
            assert!(
                (sl.area_omega - want_area).abs() < 0.02 * want_area.max(0.1),
                "area {} vs {}",
                sl.area_omega,
                want_area
            );
        }
        // monotonicity between the two levels
        assert!(slices[1].area_x >= slices[0].area_x);
        assert!(slices[1].g[0] <= slices[0].g[0] + 1e-9);
    }

    #[test]
    fn sublevel_tangent_line_identity_lemma() {
        // ξ(h) = D²/(D - h D') with D' by centered differences in h
        let s = ModelSurface(Model::Flat);
        let chart = VertexChart::identity();
        let h0 = -0.8;
        let dh = 1e-4;
        let slices = sublevel_profile(&s, &chart, &[h0 - dh, h0, h0 + dh], 3.0, 16).unwrap();
        let dprime = (slices[2].d_cross[0] - slices[0].d_cross[0]) / (2.0 * dh);
        let d = slices[1].d_cross[0];
        let want_xi = d * d / (d - h0 * dprime);
        assert!(
            (slices[1].xi[0] - want_xi).abs() < 1e-4 * want_xi.abs(),
            "xi {} vs {}",
            slices[1].xi[0],
            want_xi
        );
    }

    #[test]
    fn envelope_of_whole_polygon_is_u() {
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
        let field = PotentialField::from_zero(&p, 32);
        let check = convex_envelope_check8(&field, &|_p| true).unwrap();
        // the node-sampled envelope undercuts u between nodes by the
        // O(h²·curvature) tangent-plane gap; both sides vanish with h
        let area = field.polytope.polygon().area();
        assert!(check.lhs.abs() < 2e-3 * area, "lhs {}", check.lhs);
        assert!(check.vol_complement.abs() < 1e-9);
        assert!(check.slack >= -1e-3 * area, "slack {}", check.slack);
        // envelope never exceeds u, and matches u on X up to the same gap
        let probe = Point2::new(0.31, -0.22);
        let env = envelope_at(&field, &|_p| true, probe).unwrap();
        let u = field.value_at(probe).unwrap();
        assert!(env <= u + 1e-9);
        assert!((env - u).abs() < 5e-3, "env {env} vs u {u}");
        // empty X errors
        assert!(matches!(
            convex_envelope_check8(&field, &|_p| false),
            Err(DiagnosticsError::EmptyX)
        ));
    }
}
