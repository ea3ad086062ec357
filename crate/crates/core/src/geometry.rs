//! Exact geometric and integral primitives on convex polygons.
//!
//! Everything here is exact up to round-off: areas and moments come from
//! fan triangulation with closed-form simplex moments, boundary integrals
//! from per-edge monomial integrals, and half-plane clipping from a single
//! Sutherland-Hodgman pass.

use thiserror::Error;

/// Tolerance factor for vertex coincidence / convexity tests, relative to
/// the polygon diameter.
pub const VERTEX_TOL: f64 = 1e-12;

/// Tolerance for deciding that a unit direction is rational (denominator
/// capped at [`MAX_DENOMINATOR`]).
pub const RATIONAL_TOL: f64 = 1e-9;
pub const MAX_DENOMINATOR: i64 = 1_000_000;

/// Cap on primitive direction components for the lattice arc-length
/// normalization. Beyond this, double precision cannot distinguish a
/// rational direction from an irrational one and the boundary measure
/// falls back to Euclidean arc length.
pub const MAX_PRIMITIVE_MEASURE: i64 = 10_000;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("polygon is not strictly convex and counter-clockwise (vertex {0})")]
    NonConvex(usize),
    #[error("degenerate edge at vertex {0} (repeated vertex or zero length)")]
    DegenerateEdge(usize),
    #[error("edge weight {index} must be positive, got {value}")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("expected {edges} edge weights, got {weights}")]
    WeightCountMismatch { edges: usize, weights: usize },
    #[error("edge {0} normal is not within tolerance of a rational direction")]
    IrrationalNormal(usize),
    #[error("polygon needs at least 3 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("non-finite vertex coordinate at index {0}")]
    NonFiniteVertex(usize),
}

/// A point (or vector) in the polygon plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x1: f64,
    pub x2: f64,
}

impl Point2 {
    pub const fn new(x1: f64, x2: f64) -> Self {
        Self { x1, x2 }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x1 * o.x1 + self.x2 * o.x2
    }

    /// z-component of the cross product, positive when `o` is
    /// counter-clockwise from `self`.
    pub fn cross(self, o: Point2) -> f64 {
        self.x1 * o.x2 - self.x2 * o.x1
    }

    pub fn norm(self) -> f64 {
        self.x1.hypot(self.x2)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x1 * s, self.x2 * s)
    }

    pub fn is_finite(self) -> bool {
        self.x1.is_finite() && self.x2.is_finite()
    }
}

impl std::ops::Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x1 + o.x1, self.x2 + o.x2)
    }
}

impl std::ops::Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x1 - o.x1, self.x2 - o.x2)
    }
}

/// An affine function `λ(x) = a1·x1 + a2·x2 + b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFunction {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
}

impl AffineFunction {
    pub const fn new(a1: f64, a2: f64, b: f64) -> Self {
        Self { a1, a2, b }
    }

    pub fn eval(&self, p: Point2) -> f64 {
        self.a1 * p.x1 + self.a2 * p.x2 + self.b
    }

    pub fn gradient(&self) -> Point2 {
        Point2::new(self.a1, self.a2)
    }

    pub fn scale(&self, s: f64) -> AffineFunction {
        AffineFunction::new(self.a1 * s, self.a2 * s, self.b * s)
    }
}

/// Derived per-edge data. Edge `k` joins vertex `k` to vertex `k+1`.
#[derive(Debug, Clone)]
pub struct Edge {
    pub start: Point2,
    pub end: Point2,
    /// Unit inward normal (the polygon is counter-clockwise).
    pub inward_unit_normal: Point2,
    pub euclidean_length: f64,
    /// Primitive integer direction of the edge, when the direction is
    /// rational within tolerance.
    pub primitive_direction: Option<(i64, i64)>,
    /// Primitive integer inward normal, when rational within tolerance.
    pub primitive_normal: Option<(i64, i64)>,
    /// Arc length in lattice units (Euclidean length divided by the length
    /// of the primitive direction); falls back to Euclidean length for
    /// irrational directions.
    pub lattice_length: f64,
}

impl Edge {
    /// Affine function vanishing on the edge line, positive inside the
    /// polygon, with gradient the primitive integer normal when one exists
    /// (unit normal otherwise).
    pub fn defining_function(&self) -> AffineFunction {
        let n = match self.primitive_normal {
            Some((p, q)) => Point2::new(p as f64, q as f64),
            None => self.inward_unit_normal,
        };
        AffineFunction::new(n.x1, n.x2, -n.dot(self.start))
    }
}

/// A strictly convex counter-clockwise polygon.
#[derive(Debug, Clone)]
pub struct Polygon {
    vertices: Vec<Point2>,
    edges: Vec<Edge>,
    area: f64,
    centroid: Point2,
    diameter: f64,
}

impl Polygon {
    pub fn new(vertices: Vec<Point2>) -> Result<Self, GeometryError> {
        if vertices.len() < 3 {
            return Err(GeometryError::TooFewVertices(vertices.len()));
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.is_finite() {
                return Err(GeometryError::NonFiniteVertex(i));
            }
        }
        let (lo, hi) = bounding_box_of(&vertices);
        let diameter = (hi - lo).norm();
        if diameter <= 0.0 {
            return Err(GeometryError::DegenerateEdge(0));
        }
        let n = vertices.len();
        for i in 0..n {
            let d = vertices[(i + 1) % n] - vertices[i];
            if d.norm() <= VERTEX_TOL * diameter {
                return Err(GeometryError::DegenerateEdge(i));
            }
        }
        for i in 0..n {
            let prev = vertices[(i + n - 1) % n];
            let cur = vertices[i];
            let next = vertices[(i + 1) % n];
            let cr = (cur - prev).cross(next - cur);
            if cr <= VERTEX_TOL * diameter * diameter {
                return Err(GeometryError::NonConvex(i));
            }
        }
        let edges = (0..n)
            .map(|k| make_edge(vertices[k], vertices[(k + 1) % n]))
            .collect();
        let (area, centroid) = area_and_centroid(&vertices);
        Ok(Self {
            vertices,
            edges,
            area,
            centroid,
            diameter,
        })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn centroid(&self) -> Point2 {
        self.centroid
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn bounding_box(&self) -> (Point2, Point2) {
        bounding_box_of(&self.vertices)
    }

    /// Signed distance-like test: smallest value of all edge defining
    /// half-plane functions in the *unit-normal* normalization. Positive
    /// strictly inside, zero on the boundary, negative outside.
    pub fn inradius_excess(&self, p: Point2) -> f64 {
        self.edges
            .iter()
            .map(|e| e.inward_unit_normal.dot(p - e.start))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.inradius_excess(p) >= 0.0
    }

    /// Support value `max_{x in P} d·x` of the polygon in direction `d`.
    pub fn support(&self, d: Point2) -> f64 {
        self.vertices
            .iter()
            .map(|v| d.dot(*v))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn bounding_box_of(vertices: &[Point2]) -> (Point2, Point2) {
    let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in vertices {
        lo.x1 = lo.x1.min(v.x1);
        lo.x2 = lo.x2.min(v.x2);
        hi.x1 = hi.x1.max(v.x1);
        hi.x2 = hi.x2.max(v.x2);
    }
    (lo, hi)
}

fn area_and_centroid(vertices: &[Point2]) -> (f64, Point2) {
    let n = vertices.len();
    let mut a = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = vertices[i];
        let q = vertices[(i + 1) % n];
        let cr = p.cross(q);
        a += cr;
        cx += (p.x1 + q.x1) * cr;
        cy += (p.x2 + q.x2) * cr;
    }
    a *= 0.5;
    (a, Point2::new(cx / (6.0 * a), cy / (6.0 * a)))
}

fn make_edge(start: Point2, end: Point2) -> Edge {
    let d = end - start;
    let len = d.norm();
    let inward_unit_normal = Point2::new(-d.x2 / len, d.x1 / len);
    let primitive_direction = rational_direction_capped(d, MAX_PRIMITIVE_MEASURE);
    let primitive_normal = primitive_direction.map(|(p, q)| (-q, p));
    let lattice_length = match primitive_direction {
        Some((p, q)) => len / ((p * p + q * q) as f64).sqrt(),
        None => len,
    };
    Edge {
        start,
        end,
        inward_unit_normal,
        euclidean_length: len,
        primitive_direction,
        primitive_normal,
        lattice_length,
    }
}

/// Best rational approximation p/q to `t` with `q <= max_den`, by continued
/// fractions.
fn best_rational(t: f64, max_den: i64) -> (i64, i64) {
    let neg = t < 0.0;
    let mut x = t.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0i64, 1i64, 1i64, 0i64);
    for _ in 0..64 {
        let a = x.floor();
        if a > 1e15 {
            break;
        }
        let ai = a as i64;
        let p2 = ai.saturating_mul(p1).saturating_add(p0);
        let q2 = ai.saturating_mul(q1).saturating_add(q0);
        if q2 > max_den {
            break;
        }
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        let frac = x - a;
        if frac < 1e-15 {
            break;
        }
        x = 1.0 / frac;
    }
    if neg {
        (-p1, q1)
    } else {
        (p1, q1)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Primitive integer vector parallel to `d` (same orientation), if the unit
/// direction of `d` is within [`RATIONAL_TOL`] of a rational direction with
/// denominator at most [`MAX_DENOMINATOR`].
pub fn rational_direction(d: Point2) -> Option<(i64, i64)> {
    rational_direction_capped(d, MAX_DENOMINATOR)
}

/// [`rational_direction`] with an explicit component cap.
pub fn rational_direction_capped(d: Point2, cap: i64) -> Option<(i64, i64)> {
    let len = d.norm();
    if len == 0.0 {
        return None;
    }
    let u = d.scale(1.0 / len);
    let (mut p, mut q) = if u.x1.abs() >= u.x2.abs() {
        let (num, den) = best_rational(u.x2 / u.x1, cap);
        // direction proportional to (den, num), oriented along x1
        if u.x1 >= 0.0 {
            (den, num)
        } else {
            (-den, -num)
        }
    } else {
        let (num, den) = best_rational(u.x1 / u.x2, cap);
        if u.x2 >= 0.0 {
            (num, den)
        } else {
            (-num, -den)
        }
    };
    let g = gcd(p, q);
    if g == 0 {
        return None;
    }
    p /= g;
    q /= g;
    if p.abs() > cap || q.abs() > cap {
        return None;
    }
    let pn = ((p * p + q * q) as f64).sqrt();
    let err = (u.x1 - p as f64 / pn).hypot(u.x2 - q as f64 / pn);
    if err <= RATIONAL_TOL {
        Some((p, q))
    } else {
        None
    }
}

/// How the scalar curvature constant is supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CurvatureSpec {
    /// `A = σ(∂P) / Area(P)` (the mass-matching choice).
    Auto,
    Given(f64),
}

/// The problem datum: a convex polygon, per-edge boundary measure weights,
/// and the scalar curvature constant `A`.
#[derive(Debug, Clone)]
pub struct Polytope {
    polygon: Polygon,
    edge_weights: Vec<f64>,
    a_constant: f64,
    /// Set when some edge direction is irrational and the boundary measure
    /// fell back to Euclidean arc length on that edge.
    pub euclidean_fallback: bool,
}

impl Polytope {
    pub fn polygon(&self) -> &Polygon {
        &self.polygon
    }

    pub fn edge_weights(&self) -> &[f64] {
        &self.edge_weights
    }

    /// The scalar curvature constant `A`.
    pub fn a_constant(&self) -> f64 {
        self.a_constant
    }

    /// Total boundary measure `σ(∂P) = Σ_k w_k · lattice_length_k`.
    pub fn boundary_mass(&self) -> f64 {
        self.polygon
            .edges()
            .iter()
            .zip(&self.edge_weights)
            .map(|(e, w)| w * e.lattice_length)
            .sum()
    }

    /// Boundary measure of edge `k` per unit Euclidean length.
    pub fn sigma_density(&self, k: usize) -> f64 {
        let e = &self.polygon.edges()[k];
        self.edge_weights[k] * e.lattice_length / e.euclidean_length
    }

    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Polytope, GeometryError> {
        build_polytope(
            self.polygon.vertices().to_vec(),
            weights,
            CurvatureSpec::Auto,
        )
    }
}

/// Validates the polygon and weights and resolves the `A = auto` rule.
pub fn build_polytope(
    vertices: Vec<Point2>,
    weights: Vec<f64>,
    a: CurvatureSpec,
) -> Result<Polytope, GeometryError> {
    let polygon = Polygon::new(vertices)?;
    if weights.len() != polygon.edges().len() {
        return Err(GeometryError::WeightCountMismatch {
            edges: polygon.edges().len(),
            weights: weights.len(),
        });
    }
    for (i, &w) in weights.iter().enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            return Err(GeometryError::NonPositiveWeight { index: i, value: w });
        }
    }
    let euclidean_fallback = polygon.edges().iter().any(|e| e.primitive_direction.is_none());
    let mut polytope = Polytope {
        polygon,
        edge_weights: weights,
        a_constant: 0.0,
        euclidean_fallback,
    };
    polytope.a_constant = match a {
        CurvatureSpec::Given(v) => v,
        CurvatureSpec::Auto => polytope.boundary_mass() / polytope.polygon.area(),
    };
    Ok(polytope)
}

/// Bivariate monomial-basis polynomial `Σ c_ij x1^i x2^j`.
#[derive(Debug, Clone, Default)]
pub struct Poly2 {
    /// `(i, j, coefficient)` triples.
    pub terms: Vec<(u32, u32, f64)>,
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(0, 0, c)],
        }
    }

    pub fn monomial(i: u32, j: u32, c: f64) -> Self {
        Self {
            terms: vec![(i, j, c)],
        }
    }

    pub fn from_affine(l: &AffineFunction) -> Self {
        Self {
            terms: vec![(1, 0, l.a1), (0, 1, l.a2), (0, 0, l.b)],
        }
    }

    pub fn eval(&self, p: Point2) -> f64 {
        self.terms
            .iter()
            .map(|&(i, j, c)| c * p.x1.powi(i as i32) * p.x2.powi(j as i32))
            .sum()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|&(i, j, _)| i + j).max().unwrap_or(0)
    }
}

/// `∫_Δ s^a t^b ds dt` over the reference simplex `{s,t >= 0, s+t <= 1}`.
fn simplex_moment(a: u32, b: u32) -> f64 {
    // a! b! / (a+b+2)!
    let mut v = 1.0;
    for k in 1..=a {
        v *= k as f64;
    }
    for k in 1..=b {
        v *= k as f64;
    }
    for k in 1..=(a + b + 2) {
        v /= k as f64;
    }
    v
}

fn binom(n: u32, k: u32) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Exact `∫_T x1^i x2^j dμ` over the triangle `(p0, p1, p2)` (signed by
/// orientation).
fn triangle_monomial_moment(p0: Point2, p1: Point2, p2: Point2, i: u32, j: u32) -> f64 {
    let e1 = p1 - p0;
    let e2 = p2 - p0;
    let jac = e1.cross(e2);
    // Expand (p0 + s e1 + t e2) coordinates:
    // x1^i = Σ_{α+β+γ=i} i!/(α!β!γ!) p0x^α (e1x)^β (e2x)^γ s^β t^γ
    let mut total = 0.0;
    for bx in 0..=i {
        for gx in 0..=(i - bx) {
            let ax = i - bx - gx;
            let cx = binom(i, bx) * binom(i - bx, gx)
                * p0.x1.powi(ax as i32)
                * e1.x1.powi(bx as i32)
                * e2.x1.powi(gx as i32);
            for by in 0..=j {
                for gy in 0..=(j - by) {
                    let ay = j - by - gy;
                    let cy = binom(j, by) * binom(j - by, gy)
                        * p0.x2.powi(ay as i32)
                        * e1.x2.powi(by as i32)
                        * e2.x2.powi(gy as i32);
                    total += cx * cy * simplex_moment(bx + by, gx + gy);
                }
            }
        }
    }
    jac * total
}

/// Exact `∫_P p dμ` by fan triangulation from the centroid.
pub fn integrate_region_poly(polygon: &Polygon, p: &Poly2) -> f64 {
    let c = polygon.centroid();
    let vs = polygon.vertices();
    let n = vs.len();
    let mut total = 0.0;
    for &(i, j, coeff) in &p.terms {
        if coeff == 0.0 {
            continue;
        }
        let mut m = 0.0;
        for k in 0..n {
            m += triangle_monomial_moment(c, vs[k], vs[(k + 1) % n], i, j);
        }
        total += coeff * m;
    }
    total
}

/// Exact `∫ p ds` over the segment `[a, b]` against *unit-speed Euclidean*
/// parametrization, before any measure weighting.
fn segment_monomial_integral(a: Point2, b: Point2, i: u32, j: u32) -> f64 {
    // x(t) = a + t (b-a), t in [0,1]; ∫_0^1 x1^i x2^j dt  × |b-a|
    let d = b - a;
    // coefficients of (a1 + t d1)^i as polynomial in t
    let mut acc = 0.0;
    for bi in 0..=i {
        let ci = binom(i, bi) * a.x1.powi((i - bi) as i32) * d.x1.powi(bi as i32);
        for bj in 0..=j {
            let cj = binom(j, bj) * a.x2.powi((j - bj) as i32) * d.x2.powi(bj as i32);
            acc += ci * cj / (bi + bj + 1) as f64;
        }
    }
    acc * d.norm()
}

/// Exact `∫_{∂P} p dσ = Σ_k w_k ∫_{edge k} p ds_k`, with `ds_k` the
/// lattice-normalized arc length (Euclidean fallback for irrational edges).
pub fn integrate_boundary_poly(polytope: &Polytope, p: &Poly2) -> f64 {
    let mut total = 0.0;
    for (k, e) in polytope.polygon().edges().iter().enumerate() {
        let density = polytope.sigma_density(k);
        for &(i, j, c) in &p.terms {
            if c == 0.0 {
                continue;
            }
            total += c * density * segment_monomial_integral(e.start, e.end, i, j);
        }
    }
    total
}

/// `P ∩ {λ >= 0}` by a single Sutherland-Hodgman clip pass. Vertices on the
/// crease line are retained; the empty intersection is `None`.
pub fn clip_halfplane(polygon: &Polygon, l: &AffineFunction) -> Option<Polygon> {
    let vs = polygon.vertices();
    let n = vs.len();
    let tol = 0.0; // closed half-plane: keep λ == 0 points
    let mut out: Vec<Point2> = Vec::with_capacity(n + 2);
    for k in 0..n {
        let cur = vs[k];
        let nxt = vs[(k + 1) % n];
        let lc = l.eval(cur);
        let ln = l.eval(nxt);
        if lc >= tol {
            out.push(cur);
        }
        if (lc > 0.0 && ln < 0.0) || (lc < 0.0 && ln > 0.0) {
            let t = lc / (lc - ln);
            out.push(cur + (nxt - cur).scale(t));
        }
    }
    sanitize_clip_output(out, polygon.diameter())
}

/// Removes duplicate and collinear points produced by clipping, then
/// rebuilds a strict polygon; degenerate (measure-zero) results collapse to
/// `None`.
fn sanitize_clip_output(mut pts: Vec<Point2>, diameter: f64) -> Option<Polygon> {
    let tol = VERTEX_TOL.max(1e-14) * diameter;
    // dedupe consecutive
    let mut cleaned: Vec<Point2> = Vec::with_capacity(pts.len());
    for p in pts.drain(..) {
        if cleaned.last().map_or(true, |q| (p - *q).norm() > tol) {
            cleaned.push(p);
        }
    }
    while cleaned.len() >= 2
        && (cleaned[0] - *cleaned.last().unwrap()).norm() <= tol
    {
        cleaned.pop();
    }
    // drop collinear middles
    loop {
        let n = cleaned.len();
        if n < 3 {
            return None;
        }
        let mut removed = false;
        let mut keep: Vec<Point2> = Vec::with_capacity(n);
        for i in 0..n {
            let prev = cleaned[(i + n - 1) % n];
            let cur = cleaned[i];
            let next = cleaned[(i + 1) % n];
            if (cur - prev).cross(next - cur) <= tol * diameter {
                removed = true;
            } else {
                keep.push(cur);
            }
        }
        if !removed {
            break;
        }
        cleaned = keep;
    }
    if cleaned.len() < 3 {
        return None;
    }
    Polygon::new(cleaned).ok()
}

/// Per-vertex report of the lattice-basis test.
#[derive(Debug, Clone)]
pub struct DelzantReport {
    pub is_delzant: bool,
    /// Primitive inward normals per edge.
    pub normals: Vec<(i64, i64)>,
    /// `|det(n_k, n_{k+1})|` at each vertex joint (edge k meets edge k-1 at
    /// vertex k; stored per vertex index).
    pub vertex_determinants: Vec<i64>,
}

/// A polytope is Delzant when every edge has a primitive integer inward
/// normal and adjacent normals form a lattice basis (determinant ±1) at
/// every vertex.
pub fn is_delzant(polytope: &Polytope) -> Result<DelzantReport, GeometryError> {
    let edges = polytope.polygon().edges();
    let mut normals = Vec::with_capacity(edges.len());
    for (k, e) in edges.iter().enumerate() {
        // rationality for the lattice test allows denominators up to the
        // full cap, wider than the boundary-measure normalization
        match rational_direction(e.end - e.start).map(|(p, q)| (-q, p)) {
            Some(n) => normals.push(n),
            None => return Err(GeometryError::IrrationalNormal(k)),
        }
    }
    let n = normals.len();
    let mut dets = Vec::with_capacity(n);
    let mut ok = true;
    for v in 0..n {
        // vertex v joins edge v-1 and edge v
        let a = normals[(v + n - 1) % n];
        let b = normals[v];
        let det = (a.0 * b.1 - a.1 * b.0).abs();
        if det != 1 {
            ok = false;
        }
        dets.push(det);
    }
    Ok(DelzantReport {
        is_delzant: ok,
        normals,
        vertex_determinants: dets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_pm1() -> Polygon {
        Polygon::new(vec![
            Point2::new(-1.0, -1.0),
            Point2::new(1.0, -1.0),
            Point2::new(1.0, 1.0),
            Point2::new(-1.0, 1.0),
        ])
        .unwrap()
    }

    fn unit_square_polytope() -> Polytope {
        build_polytope(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(1.0, 1.0),
                Point2::new(0.0, 1.0),
            ],
            vec![1.0; 4],
            CurvatureSpec::Auto,
        )
        .unwrap()
    }

    #[test]
    fn unit_square_auto_a_is_four() {
        let p = unit_square_polytope();
        assert_eq!(p.polygon().edges().len(), 4);
        assert!((p.a_constant() - 4.0).abs() < 1e-14);
    }

    #[test]
    fn square_pm1_auto_a_is_two() {
        let p = build_polytope(
            square_pm1().vertices().to_vec(),
            vec![1.0; 4],
            CurvatureSpec::Auto,
        )
        .unwrap();
        assert!((p.a_constant() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn repeated_vertex_is_degenerate() {
        let r = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ]);
        assert!(matches!(r, Err(GeometryError::DegenerateEdge(_))));
    }

    #[test]
    fn clockwise_is_rejected() {
        let r = Polygon::new(vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 0.0),
        ]);
        assert!(matches!(r, Err(GeometryError::NonConvex(_))));
    }

    #[test]
    fn region_quadrature_hand_values() {
        let sq = square_pm1();
        assert!((integrate_region_poly(&sq, &Poly2::constant(1.0)) - 4.0).abs() < 1e-13);
        assert!(integrate_region_poly(&sq, &Poly2::monomial(1, 0, 1.0)).abs() < 1e-13);
        // ∫ x1^2 over [-1,1]^2 = 4/3 by hand integration
        assert!(
            (integrate_region_poly(&sq, &Poly2::monomial(2, 0, 1.0)) - 4.0 / 3.0).abs() < 1e-13
        );
        // degree-4 mixed: ∫ x1^2 x2^2 = (2/3)^2
        assert!(
            (integrate_region_poly(&sq, &Poly2::monomial(2, 2, 1.0)) - 4.0 / 9.0).abs() < 1e-13
        );
    }

    #[test]
    fn boundary_quadrature_hand_values() {
        let p = build_polytope(
            square_pm1().vertices().to_vec(),
            vec![1.0; 4],
            CurvatureSpec::Auto,
        )
        .unwrap();
        assert!((integrate_boundary_poly(&p, &Poly2::constant(1.0)) - 8.0).abs() < 1e-13);
        assert!(integrate_boundary_poly(&p, &Poly2::monomial(1, 0, 1.0)).abs() < 1e-13);
        // x1^2 x2^2 over all four edges: each edge contributes ∫_{-1}^{1} t^2 dt = 2/3
        assert!(
            (integrate_boundary_poly(&p, &Poly2::monomial(2, 2, 1.0)) - 4.0 * 2.0 / 3.0).abs()
                < 1e-13
        );
    }

    #[test]
    fn clip_halfplane_examples() {
        let sq = square_pm1();
        let right = clip_halfplane(&sq, &AffineFunction::new(1.0, 0.0, 0.0)).unwrap();
        assert!((right.area() - 2.0).abs() < 1e-13);

        assert!(clip_halfplane(&sq, &AffineFunction::new(1.0, 0.0, -2.0)).is_none());

        let tri = clip_halfplane(&sq, &AffineFunction::new(1.0, 1.0, 0.0)).unwrap();
        assert!((tri.area() - 2.0).abs() < 1e-13);
    }

    #[test]
    fn clip_keeps_whole_polygon_when_line_misses() {
        let sq = square_pm1();
        let whole = clip_halfplane(&sq, &AffineFunction::new(1.0, 0.0, 5.0)).unwrap();
        assert!((whole.area() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn delzant_examples() {
        let sq = build_polytope(
            square_pm1().vertices().to_vec(),
            vec![1.0; 4],
            CurvatureSpec::Auto,
        )
        .unwrap();
        assert!(is_delzant(&sq).unwrap().is_delzant);

        let tri = build_polytope(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            vec![1.0; 3],
            CurvatureSpec::Auto,
        )
        .unwrap();
        let rep = is_delzant(&tri).unwrap();
        assert!(rep.is_delzant);
        assert_eq!(rep.normals, vec![(0, 1), (-1, -1), (1, 0)]);

        // (0,0),(2,0),(0,1): hypotenuse normal (-1,-2); vertex determinant 2
        let bad = build_polytope(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(2.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            vec![1.0; 3],
            CurvatureSpec::Auto,
        )
        .unwrap();
        let rep = is_delzant(&bad).unwrap();
        assert!(!rep.is_delzant);
        assert!(rep.vertex_determinants.contains(&2));
    }

    #[test]
    fn delzant_triangle_hypotenuse_lattice_length_is_one() {
        let tri = build_polytope(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.0, 1.0),
            ],
            vec![1.0; 3],
            CurvatureSpec::Auto,
        )
        .unwrap();
        let hyp = &tri.polygon().edges()[1];
        assert!((hyp.euclidean_length - 2f64.sqrt()).abs() < 1e-14);
        assert!((hyp.lattice_length - 1.0).abs() < 1e-14);
        // A = σ(∂P)/Area = 3 / (1/2) = 6
        assert!((tri.a_constant() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn irrational_direction_flags_fallback() {
        let p = build_polytope(
            vec![
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(0.3, 1.0 + std::f64::consts::SQRT_2),
            ],
            vec![1.0; 3],
            CurvatureSpec::Auto,
        )
        .unwrap();
        assert!(p.euclidean_fallback);
    }
}
