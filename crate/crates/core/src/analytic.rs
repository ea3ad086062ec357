//! Closed-form oracle potentials: flat and sheared edge models, the square
//! product solution, the zero-scalar-curvature family generated from
//! axisymmetric harmonic pairs (Taub-NUT for equal parameters), and the
//! one-dimensional degenerating family.

use thiserror::Error;

use crate::geometry::Point2;
use crate::potential::Sym2;

#[derive(Debug, Error)]
pub enum AnalyticError {
    #[error("point ({0}, {1}) is outside the model domain")]
    OutsideDomain(f64, f64),
    #[error("F± is singular at the origin (H, r) = (0, 0)")]
    OriginSingular,
    #[error("Newton inversion failed to converge at ({0}, {1})")]
    NewtonDiverged(f64, f64),
}

/// Value, gradient and Hessian of a closed-form potential at a point.
#[derive(Debug, Clone, Copy)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: Point2,
    pub hessian: Sym2,
}

/// The closed-form model potentials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Model {
    /// `x1 log x1 + x2 log x2` on the open quadrant.
    Flat,
    /// `x1 log x1 + x2^2` on the half-plane `x1 > 0`.
    FlatEdge,
    /// `x1 log x1 + (x2 - a x1)^2` on the half-plane `x1 > 0`.
    Shear(f64),
    /// `Σ_i (1+x_i)log(1+x_i) + (1-x_i)log(1-x_i)` on the open square
    /// `(-1,1)^2`; solves the Abreu equation with `A = 2`.
    SquareProduct,
}

impl Model {
    pub fn contains(&self, x: Point2) -> bool {
        match self {
            Model::Flat => x.x1 > 0.0 && x.x2 > 0.0,
            Model::FlatEdge | Model::Shear(_) => x.x1 > 0.0,
            Model::SquareProduct => x.x1.abs() < 1.0 && x.x2.abs() < 1.0,
        }
    }
}

/// Closed-form evaluation of a [`Model`] potential.
pub fn model_potential(model: Model, x: Point2) -> Result<Jet2, AnalyticError> {
    if !model.contains(x) {
        return Err(AnalyticError::OutsideDomain(x.x1, x.x2));
    }
    let jet = match model {
        Model::Flat => Jet2 {
            value: x.x1 * x.x1.ln() + x.x2 * x.x2.ln(),
            gradient: Point2::new(x.x1.ln() + 1.0, x.x2.ln() + 1.0),
            hessian: Sym2::new(1.0 / x.x1, 0.0, 1.0 / x.x2),
        },
        Model::FlatEdge => Jet2 {
            value: x.x1 * x.x1.ln() + x.x2 * x.x2,
            gradient: Point2::new(x.x1.ln() + 1.0, 2.0 * x.x2),
            hessian: Sym2::new(1.0 / x.x1, 0.0, 2.0),
        },
        Model::Shear(a) => {
            let s = x.x2 - a * x.x1;
            Jet2 {
                value: x.x1 * x.x1.ln() + s * s,
                gradient: Point2::new(x.x1.ln() + 1.0 - 2.0 * a * s, 2.0 * s),
                hessian: Sym2::new(1.0 / x.x1 + 2.0 * a * a, -2.0 * a, 2.0),
            }
        }
        Model::SquareProduct => {
            let term = |t: f64| (1.0 + t) * (1.0 + t).ln() + (1.0 - t) * (1.0 - t).ln();
            let dterm = |t: f64| (1.0 + t).ln() - (1.0 - t).ln();
            let ddterm = |t: f64| 2.0 / (1.0 - t * t);
            Jet2 {
                value: term(x.x1) + term(x.x2),
                gradient: Point2::new(dterm(x.x1), dterm(x.x2)),
                hessian: Sym2::new(ddterm(x.x1), 0.0, ddterm(x.x2)),
            }
        }
    };
    Ok(jet)
}

/// The half-line potentials `F_±(H, r) = (±H + √(H² + r²)) / 2`, computed
/// cancellation-free: for `H > 0` the small branch is `F₋ = r²/(4 F₊)` and
/// symmetrically for `H < 0`.
pub fn f_plus_minus(h: f64, r: f64) -> Result<(f64, f64), AnalyticError> {
    if h == 0.0 && r == 0.0 {
        return Err(AnalyticError::OriginSingular);
    }
    let rho = h.hypot(r);
    if h >= 0.0 {
        let fp = 0.5 * (h + rho);
        let fm = if r == 0.0 { 0.0 } else { 0.25 * r * r / fp };
        Ok((fp, fm))
    } else {
        let fm = 0.5 * (-h + rho);
        let fp = if r == 0.0 { 0.0 } else { 0.25 * r * r / fm };
        Ok((fp, fm))
    }
}

/// Parameters of the zero-scalar-curvature family; both must be positive
/// (the degenerate `a_i = 0` cases are excluded).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoyceParams {
    pub a1: f64,
    pub a2: f64,
}

impl JoyceParams {
    pub fn new(a1: f64, a2: f64) -> Self {
        assert!(a1 > 0.0 && a2 > 0.0, "parameters must be positive");
        Self { a1, a2 }
    }

    pub fn is_taub_nut(&self) -> bool {
        self.a1 == self.a2
    }
}

/// Forward coordinate change `x_i = y_i + a_i y1 y2` on the closed quadrant.
pub fn joyce_map(p: JoyceParams, y1: f64, y2: f64) -> (f64, f64) {
    (y1 + p.a1 * y1 * y2, y2 + p.a2 * y1 * y2)
}

/// Closed-form inverse of [`joyce_map`], in the sheared coordinates
/// `σ = a2 x1 - a1 x2`, `τ = a2 x1 + a1 x2`:
/// `s = -1 + √(1 + σ² + 2τ)`, `y1 = (s + σ)/(2 a2)`, `y2 = (s - σ)/(2 a1)`.
pub fn joyce_inverse_closed_form(p: JoyceParams, x1: f64, x2: f64) -> (f64, f64) {
    let sigma = p.a2 * x1 - p.a1 * x2;
    let tau = p.a2 * x1 + p.a1 * x2;
    let s = 2.0 * (sigma * sigma + 2.0 * tau) / (1.0 + (1.0 + sigma * sigma + 2.0 * tau).sqrt());
    // s computed as (-1 + sqrt(1+q)) = q / (1 + sqrt(1+q)) to avoid cancellation
    let s = 0.5 * s;
    ((s + sigma) / (2.0 * p.a2), (s - sigma) / (2.0 * p.a1))
}

/// Primary inverse: damped Newton on the forward map starting from `y = x`.
pub fn joyce_inverse(p: JoyceParams, x1: f64, x2: f64) -> Result<(f64, f64), AnalyticError> {
    if x1 < 0.0 || x2 < 0.0 {
        return Err(AnalyticError::OutsideDomain(x1, x2));
    }
    let mut y1 = x1;
    let mut y2 = x2;
    let scale = 1.0 + x1.abs() + x2.abs();
    for _ in 0..100 {
        let (f1, f2) = joyce_map(p, y1, y2);
        let r1 = f1 - x1;
        let r2 = f2 - x2;
        if r1.abs() + r2.abs() <= 1e-12 * scale {
            return Ok((y1, y2));
        }
        // Jacobian of the forward map
        let j11 = 1.0 + p.a1 * y2;
        let j12 = p.a1 * y1;
        let j21 = p.a2 * y2;
        let j22 = 1.0 + p.a2 * y1;
        let det = j11 * j22 - j12 * j21;
        if det.abs() < 1e-300 {
            break;
        }
        let mut d1 = (j22 * r1 - j12 * r2) / det;
        let mut d2 = (-j21 * r1 + j11 * r2) / det;
        // damp to keep the iterate in the closed quadrant
        let mut t = 1.0;
        for _ in 0..60 {
            if y1 - t * d1 >= 0.0 && y2 - t * d2 >= 0.0 {
                break;
            }
            t *= 0.5;
        }
        d1 *= t;
        d2 *= t;
        y1 -= d1;
        y2 -= d2;
    }
    let (f1, f2) = joyce_map(p, y1, y2);
    if (f1 - x1).abs() + (f2 - x2).abs() <= 1e-10 * scale {
        Ok((y1, y2))
    } else {
        Err(AnalyticError::NewtonDiverged(x1, x2))
    }
}

/// Potential value and Legendre coordinates of the zero-scalar-curvature
/// family at a quadrant point:
/// `u = x1 log y1 + x2 log y2 + (a2 y1² + a1 y2²)/2`,
/// `ξ1 = log y1 + a2 (y1 - y2) + 1`, `ξ2 = log y2 + a1 (y2 - y1) + 1`.
#[derive(Debug, Clone, Copy)]
pub struct JoyceEval {
    pub u: f64,
    pub xi: Point2,
    pub y: (f64, f64),
    pub hessian: Sym2,
}

pub fn joyce_potential(p: JoyceParams, x: Point2) -> Result<JoyceEval, AnalyticError> {
    if x.x1 <= 0.0 || x.x2 <= 0.0 {
        return Err(AnalyticError::OutsideDomain(x.x1, x.x2));
    }
    let (y1, y2) = joyce_inverse(p, x.x1, x.x2)?;
    let u = x.x1 * y1.ln() + x.x2 * y2.ln() + 0.5 * (p.a2 * y1 * y1 + p.a1 * y2 * y2);
    let xi1 = y1.ln() + p.a2 * (y1 - y2) + 1.0;
    let xi2 = y2.ln() + p.a1 * (y2 - y1) + 1.0;
    // Hessian: dξ/dx = (dξ/dy) · (dx/dy)^{-1}
    let e11 = 1.0 / y1 + p.a2;
    let e12 = -p.a2;
    let e21 = -p.a1;
    let e22 = 1.0 / y2 + p.a1;
    let j11 = 1.0 + p.a1 * y2;
    let j12 = p.a1 * y1;
    let j21 = p.a2 * y2;
    let j22 = 1.0 + p.a2 * y1;
    let det = j11 * j22 - j12 * j21;
    let h11 = (e11 * j22 - e12 * j21) / det;
    let h12 = (-e11 * j12 + e12 * j11) / det;
    let h21 = (e21 * j22 - e22 * j21) / det;
    let h22 = (-e21 * j12 + e22 * j11) / det;
    debug_assert!((h12 - h21).abs() <= 1e-9 * (1.0 + h12.abs()));
    Ok(JoyceEval {
        u,
        xi: Point2::new(xi1, xi2),
        y: (y1, y2),
        hessian: Sym2::new(h11, 0.5 * (h12 + h21), h22),
    })
}

/// Slack of the Ricci-flat sum identity `ξ1 + ξ2 = 2 log(r/2) + 2` with the
/// cylindrical radius `r = 2 √(y1 y2)`; zero (to round-off) exactly when
/// `a1 = a2`.
pub fn taub_nut_identity_slack(p: JoyceParams, x: Point2) -> Result<f64, AnalyticError> {
    let ev = joyce_potential(p, x)?;
    let (y1, y2) = ev.y;
    let r = 2.0 * (y1 * y2).sqrt();
    Ok(ev.xi.x1 + ev.xi.x2 - (2.0 * (r / 2.0).ln() + 2.0))
}

/// Cylinder-coordinate scalar fields used by the harmonic checks.
pub type ScalarRH = dyn Fn(f64, f64) -> f64;

/// FD residual of the axisymmetric-harmonic equation
/// `∂²ξ/∂H² + r⁻¹ ∂/∂r (r ∂ξ/∂r) = 0` at `(r, h)` with step `step`.
pub fn axisym_harmonic_residual(xi: &ScalarRH, r: f64, h: f64, step: f64) -> f64 {
    let d2h = (xi(r, h + step) - 2.0 * xi(r, h) + xi(r, h - step)) / (step * step);
    // r^{-1} d/dr (r dξ/dr) evaluated by centered differences of the flux
    let flux = |rr: f64| rr * (xi(rr + step, h) - xi(rr - step, h)) / (2.0 * step);
    let radial = (flux(r + step) - flux(r - step)) / (2.0 * step) / r;
    d2h + radial
}

/// FD residual of the conjugate equation
/// `∂²x/∂H² + r ∂/∂r (r⁻¹ ∂x/∂r) = 0`.
pub fn conjugate_equation_residual(x: &ScalarRH, r: f64, h: f64, step: f64) -> f64 {
    let d2h = (x(r, h + step) - 2.0 * x(r, h) + x(r, h - step)) / (step * step);
    let flux = |rr: f64| (x(rr + step, h) - x(rr - step, h)) / (2.0 * step) / rr;
    let radial = r * (flux(r + step) - flux(r - step)) / (2.0 * step);
    d2h + radial
}

/// FD residual of the first-order conjugacy system
/// `∂x/∂r = c r ∂ξ/∂H`, `∂x/∂H = -c r ∂ξ/∂r` for a given coupling factor
/// `c` (the moment-map normalization used here carries `c = 1/2`).
pub fn conjugacy_residual(
    xi: &ScalarRH,
    x: &ScalarRH,
    factor: f64,
    r: f64,
    h: f64,
    step: f64,
) -> (f64, f64) {
    let dxdr = (x(r + step, h) - x(r - step, h)) / (2.0 * step);
    let dxdh = (x(r, h + step) - x(r, h - step)) / (2.0 * step);
    let dxidr = (xi(r + step, h) - xi(r - step, h)) / (2.0 * step);
    let dxidh = (xi(r, h + step) - xi(r, h - step)) / (2.0 * step);
    (dxdr - factor * r * dxidh, dxdh + factor * r * dxidr)
}

/// Statistics of residuals over a rectangular `(r, H)` patch.
#[derive(Debug, Clone, Copy, Default)]
pub struct ResidualStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub samples: usize,
}

pub fn residual_stats(mut f: impl FnMut(f64, f64) -> f64, patch: [f64; 4], n: usize) -> ResidualStats {
    let [r0, r1, h0, h1] = patch;
    let mut max_abs: f64 = 0.0;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        let r = r0 + (i as f64 + 0.5) / n as f64 * (r1 - r0);
        for j in 0..n {
            let h = h0 + (j as f64 + 0.5) / n as f64 * (h1 - h0);
            let v = f(r, h).abs();
            max_abs = max_abs.max(v);
            sum += v;
            count += 1;
        }
    }
    ResidualStats {
        max_abs,
        mean_abs: sum / count as f64,
        samples: count,
    }
}

// ---------------------------------------------------------------------------
// One-dimensional degenerating family
// ---------------------------------------------------------------------------

/// Where the one-dimensional family is normalized (`U = U' = 0` there).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OneDNormalization {
    AtZero,
    AtPlusHalf,
    AtMinusHalf,
}

impl OneDNormalization {
    fn base_point(self) -> f64 {
        match self {
            OneDNormalization::AtZero => 0.0,
            OneDNormalization::AtPlusHalf => 0.5,
            OneDNormalization::AtMinusHalf => -0.5,
        }
    }
}

/// The family `f_ε`: `x² + ε²` on `|x| ≤ 1/2`, `1 - |x|` on `|x| ≥ 3/4`,
/// joined by a quintic blend with C² matching at both junctions. The even
/// extension is used for `x < 0`.
#[derive(Debug, Clone)]
pub struct OneDFamily {
    pub epsilon: f64,
    normalization: OneDNormalization,
    /// Quintic blend coefficients on `[1/2, 3/4]` (monomial basis).
    blend: [f64; 6],
    /// `U'` at the positive junctions relative to the base point, cached.
    du_at_half: f64,
    du_at_34: f64,
    u_at_half: f64,
    u_at_34: f64,
}

fn solve6(mut a: [[f64; 7]; 6]) -> [f64; 6] {
    // Gaussian elimination with partial pivoting on the 6x7 augmented system.
    for col in 0..6 {
        let mut piv = col;
        for row in (col + 1)..6 {
            if a[row][col].abs() > a[piv][col].abs() {
                piv = row;
            }
        }
        a.swap(col, piv);
        let d = a[col][col];
        for k in col..7 {
            a[col][k] /= d;
        }
        for row in 0..6 {
            if row != col {
                let m = a[row][col];
                for k in col..7 {
                    a[row][k] -= m * a[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 6];
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = a[i][6];
    }
    out
}

fn quintic_blend(epsilon: f64) -> [f64; 6] {
    let x0 = 0.5_f64;
    let x1 = 0.75_f64;
    let rows: [(f64, u32, f64); 6] = [
        (x0, 0, x0 * x0 + epsilon * epsilon),
        (x0, 1, 2.0 * x0),
        (x0, 2, 2.0),
        (x1, 0, 1.0 - x1),
        (x1, 1, -1.0),
        (x1, 2, 0.0),
    ];
    let mut aug = [[0.0; 7]; 6];
    for (r, &(x, d, v)) in rows.iter().enumerate() {
        for k in 0..6u32 {
            aug[r][k as usize] = match d {
                0 => x.powi(k as i32),
                1 => {
                    if k >= 1 {
                        k as f64 * x.powi(k as i32 - 1)
                    } else {
                        0.0
                    }
                }
                _ => {
                    if k >= 2 {
                        (k * (k - 1)) as f64 * x.powi(k as i32 - 2)
                    } else {
                        0.0
                    }
                }
            };
        }
        aug[r][6] = v;
    }
    solve6(aug)
}

/// 32-point Gauss-Legendre nodes/weights on [-1, 1].
const GL32: [(f64, f64); 16] = [
    (0.048307665687738316, 0.09654008851472780),
    (0.144471961582796493, 0.09563872007927486),
    (0.239287362252137075, 0.09384439908080457),
    (0.331868602282127650, 0.09117387869576388),
    (0.421351276130635345, 0.08765209300440381),
    (0.506899908932229390, 0.08331192422694676),
    (0.587715757240762329, 0.07819389578707031),
    (0.663044266930215201, 0.07234579410884851),
    (0.732182118740289680, 0.06582222277636185),
    (0.794483795967942407, 0.05868409347853555),
    (0.849367613732569970, 0.05099805926237618),
    (0.896321155766052124, 0.04283589802222668),
    (0.934906075937739689, 0.03427386291302143),
    (0.964762255587506430, 0.02539206530926206),
    (0.985611511545268335, 0.01627439473090567),
    (0.997263861849481564, 0.00701861000947010),
];

fn gauss32(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut sum = 0.0;
    for &(x, w) in &GL32 {
        sum += w * (f(c + h * x) + f(c - h * x));
    }
    sum * h
}

impl OneDFamily {
    pub fn new(epsilon: f64, normalization: OneDNormalization) -> Self {
        assert!(epsilon > 0.0, "epsilon must be positive");
        let blend = quintic_blend(epsilon);
        let mut fam = Self {
            epsilon,
            normalization,
            blend,
            du_at_half: 0.0,
            du_at_34: 0.0,
            u_at_half: 0.0,
            u_at_34: 0.0,
        };
        // Cache cumulative pieces measured from 0 towards +1.
        let from0_to_half = fam.core_dint(0.0, 0.5);
        let half_to_34 = gauss32(0.5, 0.75, |t| 1.0 / fam.f_raw(t));
        fam.du_at_half = from0_to_half;
        fam.du_at_34 = from0_to_half + half_to_34;
        // u pieces: ∫ U' over the same ranges with U' measured from 0
        let u_half = fam.core_uint(0.0, 0.5);
        let u_34 = u_half
            + gauss32(0.5, 0.75, |t| fam.du_from0(t));
        fam.u_at_half = u_half;
        fam.u_at_34 = u_34;
        fam
    }

    /// `f_ε(x)` on `[-1, 1]`.
    pub fn f(&self, x: f64) -> f64 {
        self.f_raw(x.abs())
    }

    fn f_raw(&self, x: f64) -> f64 {
        if x <= 0.5 {
            x * x + self.epsilon * self.epsilon
        } else if x < 0.75 {
            let mut v = 0.0;
            for &c in self.blend.iter().rev() {
                v = v * x + c;
            }
            v
        } else {
            1.0 - x
        }
    }

    /// `∫_a^b dt / (t² + ε²)` in closed form (core region only).
    fn core_dint(&self, a: f64, b: f64) -> f64 {
        let e = self.epsilon;
        ((b / e).atan() - (a / e).atan()) / e
    }

    /// `∫_0^x arctan-type antiderivative for U = ∫∫ 1/f`: closed form of
    /// `∫_0^x ε⁻¹ arctan(t/ε) dt` on the core region.
    fn core_uint(&self, a: f64, b: f64) -> f64 {
        let e = self.epsilon;
        let anti = |t: f64| {
            (t * (t / e).atan()) / e - 0.5 * (1.0 + t * t / (e * e)).ln()
        };
        anti(b) - anti(a)
    }

    /// `U'(x) - U'(0)` for `x >= 0`, i.e. `∫_0^x 1/f`.
    fn du_from0(&self, x: f64) -> f64 {
        if x <= 0.5 {
            self.core_dint(0.0, x)
        } else if x <= 0.75 {
            self.du_at_half + gauss32(0.5, x, |t| 1.0 / self.f_raw(t))
        } else {
            // ∫ dt/(1-t) = -ln(1-t)
            self.du_at_34 + (0.25f64.ln() - (1.0 - x).ln())
        }
    }

    /// `U(x) - U(0) - x U'(0)` for `x >= 0`: double integral of `1/f` from 0.
    fn u_from0(&self, x: f64) -> f64 {
        if x <= 0.5 {
            self.core_uint(0.0, x)
        } else if x <= 0.75 {
            self.u_at_half + gauss32(0.5, x, |t| self.du_from0(t))
        } else {
            // ∫_{3/4}^{x} [du_at_34 - ln(4(1-t))] dt, closed form for the log part
            let lin = self.du_at_34 * (x - 0.75);
            let anti = |t: f64| (1.0 - t) * (1.0 - (4.0 * (1.0 - t)).ln());
            self.u_at_34 + lin + (anti(x) - anti(0.75))
        }
    }

    /// Second derivative `U'' = 1/f_ε`.
    pub fn d2(&self, x: f64) -> f64 {
        1.0 / self.f(x)
    }

    /// First derivative under the chosen normalization.
    pub fn d1(&self, x: f64) -> f64 {
        let raw = if x >= 0.0 {
            self.du_from0(x)
        } else {
            -self.du_from0(-x)
        };
        let base = self.normalization.base_point();
        let base_raw = if base >= 0.0 {
            self.du_from0(base)
        } else {
            -self.du_from0(-base)
        };
        raw - base_raw
    }

    /// Value under the chosen normalization.
    pub fn value(&self, x: f64) -> f64 {
        let raw = |t: f64| {
            if t >= 0.0 {
                self.u_from0(t)
            } else {
                self.u_from0(-t)
            }
        };
        let base = self.normalization.base_point();
        raw(x) - raw(base) - self.d1_base_raw() * (x - base)
    }

    fn d1_base_raw(&self) -> f64 {
        let base = self.normalization.base_point();
        if base >= 0.0 {
            self.du_from0(base)
        } else {
            -self.du_from0(-base)
        }
    }

    /// Separation slope between the two one-sided normalizations:
    /// `n_ε = U'₋(x) - U'₊(x) = ∫_{-1/2}^{1/2} dt / f_ε(t)`, constant in `x`
    /// and equal to `2 ε⁻¹ arctan(1/(2ε))` in closed form (the blend and
    /// tail regions cancel exactly in the difference).
    pub fn n_epsilon(&self) -> f64 {
        self.core_dint(-0.5, 0.5)
    }

    /// `n_ε` measured from the two normalized derivative evaluators at `x`.
    pub fn n_epsilon_sampled(&self, x: f64) -> f64 {
        let plus = OneDFamily::new(self.epsilon, OneDNormalization::AtPlusHalf);
        let minus = OneDFamily::new(self.epsilon, OneDNormalization::AtMinusHalf);
        minus.d1(x) - plus.d1(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_value_at_inverse_e() {
        let x = Point2::new((-1.0f64).exp(), (-1.0f64).exp());
        let jet = model_potential(Model::Flat, x).unwrap();
        assert!((jet.value - (-2.0 / std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn outside_domain_is_rejected() {
        assert!(model_potential(Model::Flat, Point2::new(-0.1, 1.0)).is_err());
        assert!(model_potential(Model::SquareProduct, Point2::new(1.2, 0.0)).is_err());
    }

    #[test]
    fn square_product_inverse_hessian_factors() {
        // 1/u'' per factor is (1-x²)/2
        let jet = model_potential(Model::SquareProduct, Point2::new(0.3, -0.6)).unwrap();
        assert!((1.0 / jet.hessian.a11 - (1.0 - 0.09) / 2.0).abs() < 1e-14);
        assert!((1.0 / jet.hessian.a22 - (1.0 - 0.36) / 2.0).abs() < 1e-14);
    }

    #[test]
    fn f_pm_hand_values_and_product_identity() {
        let (fp, fm) = f_plus_minus(3.0, 4.0).unwrap();
        assert!((fp - 4.0).abs() < 1e-14);
        assert!((fm - 1.0).abs() < 1e-14);
        let (fp, fm) = f_plus_minus(0.0, 2.0).unwrap();
        assert!((fp - 1.0).abs() < 1e-14 && (fm - 1.0).abs() < 1e-14);
        // product identity on random-ish samples, including severe cancellation
        let mut h = -37.0;
        while h < 37.0 {
            let mut r = 0.001;
            while r < 40.0 {
                let (fp, fm) = f_plus_minus(h, r).unwrap();
                let rel = (fp * fm - 0.25 * r * r).abs() / (0.25 * r * r);
                assert!(rel < 1e-13, "H={h} r={r} rel={rel}");
                r *= 3.7;
            }
            h += 0.73;
        }
        assert!(f_plus_minus(0.0, 0.0).is_err());
    }

    #[test]
    fn joyce_axes_are_fixed() {
        let p = JoyceParams::new(1.3, 0.4);
        for t in [0.0, 0.5, 2.0, 11.0] {
            assert_eq!(joyce_map(p, 0.0, t), (0.0, t));
            assert_eq!(joyce_map(p, t, 0.0), (t, 0.0));
        }
    }

    #[test]
    fn joyce_newton_and_closed_form_agree() {
        let p = JoyceParams::new(1.0, 2.0);
        for i in 0..50 {
            for j in 0..50 {
                let y1 = 10.0 * i as f64 / 49.0;
                let y2 = 10.0 * j as f64 / 49.0;
                let (x1, x2) = joyce_map(p, y1, y2);
                let (n1, n2) = joyce_inverse(p, x1, x2).unwrap();
                assert!((n1 - y1).abs() < 1e-10 && (n2 - y2).abs() < 1e-10);
                let (c1, c2) = joyce_inverse_closed_form(p, x1, x2);
                assert!((c1 - n1).abs() < 1e-9 && (c2 - n2).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn joyce_gradient_matches_fd() {
        let p = JoyceParams::new(0.7, 1.9);
        let step = 1e-4;
        for &(x1, x2) in &[(0.8, 1.1), (2.5, 0.6), (4.0, 4.0)] {
            let ev = joyce_potential(p, Point2::new(x1, x2)).unwrap();
            let up = joyce_potential(p, Point2::new(x1 + step, x2)).unwrap().u;
            let um = joyce_potential(p, Point2::new(x1 - step, x2)).unwrap().u;
            let vp = joyce_potential(p, Point2::new(x1, x2 + step)).unwrap().u;
            let vm = joyce_potential(p, Point2::new(x1, x2 - step)).unwrap().u;
            assert!(((up - um) / (2.0 * step) - ev.xi.x1).abs() < 1e-7);
            assert!(((vp - vm) / (2.0 * step) - ev.xi.x2).abs() < 1e-7);
        }
    }

    #[test]
    fn taub_nut_identity_holds_for_equal_parameters() {
        let p = JoyceParams::new(0.5, 0.5);
        for &(x1, x2) in &[(0.5, 0.5), (1.0, 3.0), (4.9, 2.2)] {
            let s = taub_nut_identity_slack(p, Point2::new(x1, x2)).unwrap();
            assert!(s.abs() < 1e-12, "slack {s}");
        }
        // strict inequality for unequal parameters somewhere
        let q = JoyceParams::new(1.0, 2.0);
        let s = taub_nut_identity_slack(q, Point2::new(1.0, 1.0)).unwrap();
        assert!(s.abs() > 1e-3);
    }

    #[test]
    fn log_f_minus_is_harmonic() {
        let xi = |r: f64, h: f64| f_plus_minus(h, r).unwrap().1.ln();
        let stats = residual_stats(
            |r, h| axisym_harmonic_residual(&xi, r, h, 1e-4),
            [1.0, 2.0, 1.0, 2.0],
            20,
        );
        assert!(stats.max_abs < 1e-6, "max {}", stats.max_abs);
    }

    #[test]
    fn constants_are_harmonic() {
        let xi = |_r: f64, _h: f64| 3.25;
        let stats = residual_stats(
            |r, h| axisym_harmonic_residual(&xi, r, h, 1e-4),
            [1.0, 2.0, -1.0, 1.0],
            10,
        );
        assert!(stats.max_abs < 1e-9);
    }

    #[test]
    fn conjugate_coordinates_solve_their_equation() {
        let a1 = 0.8;
        let x1 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().1 + a1 * r * r / 4.0;
        let stats = residual_stats(
            |r, h| conjugate_equation_residual(&x1, r, h, 1e-4),
            [1.0, 2.0, 1.0, 2.0],
            20,
        );
        assert!(stats.max_abs < 1e-6, "max {}", stats.max_abs);
    }

    #[test]
    fn conjugacy_system_factor() {
        // crossed pairs of the generating data, under the r/2-normalized
        // first-order system: (ξ2, x1) couples with +1/2, (ξ1, x2) with
        // the opposite sign.
        let (a1, a2) = (0.8, 1.7);
        let xi1 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().1.ln() - a2 * h + 1.0;
        let xi2 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().0.ln() + a1 * h + 1.0;
        let x1 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().1 + a1 * r * r / 4.0;
        let x2 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().0 + a2 * r * r / 4.0;
        let stats_a = residual_stats(
            |r, h| {
                let (e1, e2) = conjugacy_residual(&xi2, &x1, 0.5, r, h, 1e-5);
                e1.abs().max(e2.abs())
            },
            [1.0, 2.0, 1.0, 2.0],
            10,
        );
        assert!(stats_a.max_abs < 1e-6, "pair (xi2, x1): {}", stats_a.max_abs);
        let stats_b = residual_stats(
            |r, h| {
                let (e1, e2) = conjugacy_residual(&xi1, &x2, -0.5, r, h, 1e-5);
                e1.abs().max(e2.abs())
            },
            [1.0, 2.0, 1.0, 2.0],
            10,
        );
        assert!(stats_b.max_abs < 1e-6, "pair (xi1, x2): {}", stats_b.max_abs);
    }

    #[test]
    fn one_d_derivative_closed_form_at_eps() {
        // U'(ε) with at_0 normalization = ε⁻¹ arctan(1) = π/(4ε)
        for &eps in &[0.1, 0.02] {
            let fam = OneDFamily::new(eps, OneDNormalization::AtZero);
            let got = fam.d1(eps);
            let want = std::f64::consts::FRAC_PI_4 / eps;
            assert!((got - want).abs() < 1e-12 * want.abs(), "eps {eps}");
        }
    }

    #[test]
    fn one_d_f_is_continuous_positive_and_even() {
        for &eps in &[0.003, 0.05, 0.4] {
            let fam = OneDFamily::new(eps, OneDNormalization::AtZero);
            let mut prev = fam.f(-1.0);
            assert!(prev.abs() < 1e-12); // f(±1) = 0
            let mut x: f64 = -1.0;
            while x < 1.0 {
                x += 1.0 / 512.0;
                let v = fam.f(x.min(1.0));
                assert!(v >= -1e-12, "negative f at {x}");
                assert!((v - prev).abs() < 0.02, "jump at {x}");
                assert!((fam.f(x) - fam.f(-x)).abs() < 1e-13);
                prev = v;
            }
        }
    }

    #[test]
    fn n_epsilon_constant_in_x_and_matches_core_integral() {
        for &eps in &[0.1, 0.01] {
            let fam = OneDFamily::new(eps, OneDNormalization::AtZero);
            let closed = 2.0 / eps * (1.0 / (2.0 * eps)).atan();
            assert!((fam.n_epsilon() - closed).abs() < 1e-10 * closed);
            let mut vals = Vec::new();
            for k in 0..100 {
                let x = -0.9 + 1.8 * k as f64 / 99.0;
                vals.push(fam.n_epsilon_sampled(x));
            }
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64)
                .sqrt();
            assert!(sd < 1e-9 * mean.abs(), "eps {eps}: sd {sd} mean {mean}");
            assert!((mean - closed).abs() < 1e-6 * closed, "eps {eps}");
        }
    }
}
