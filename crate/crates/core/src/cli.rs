//! Command-line entry points: problem-file parsing, the subcommand
//! dispatcher, deterministic text reports, and CSV artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analytic::{
    axisym_harmonic_residual, conjugate_equation_residual, f_plus_minus, joyce_inverse,
    joyce_inverse_closed_form, joyce_map, joyce_potential, residual_stats,
    taub_nut_identity_slack, JoyceParams, OneDFamily, OneDNormalization,
};
use crate::diagnostics::{
    convex_envelope_check8, d_of_p, edge_probe, m_condition_scan, vertex_profile,
    volume_bound_b, FieldSurface, VertexChart,
};
use crate::geometry::{build_polytope, CurvatureSpec, Point2, Polytope};
use crate::potential::fd_abreu_residual;
use crate::solver::{
    affine_normalize, minimize_m, residual_report, Method, SolverConfig, SolverStatus,
};
use crate::stability::{scan_positivity, ScanConfig, StabilityStatus};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("validation error: {0}")]
    Validation(String),
}

/// `A` field of the problem file: a number or the string `"auto"`.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum CurvatureField {
    Number(f64),
    Keyword(String2),
}

/// Newtype so the untagged branch only accepts the literal "auto".
#[derive(Debug, Clone, Copy)]
pub struct String2;

impl<'de> Deserialize<'de> for String2 {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let s = String::deserialize(deserializer)?;
        if s == "auto" {
            Ok(String2)
        } else {
            Err(serde::de::Error::custom(format!(
                "expected a number or \"auto\", got \"{s}\""
            )))
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub grid: Option<usize>,
    pub gtol: Option<f64>,
    pub max_iters: Option<usize>,
    pub method: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub angles: Option<usize>,
    pub offsets: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Interior probe points for the edge-gap diagnostic, as `[x1, x2]`.
    pub edge_probes: Option<Vec<[f64; 2]>>,
    /// Vertex profile sample radii.
    pub profile_ts: Option<Vec<f64>>,
    pub profile_epsilons: Option<Vec<f64>>,
}

/// Parsed problem file (schema version 1).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub schema: u32,
    pub vertices: Vec<[f64; 2]>,
    pub edge_weights: Vec<f64>,
    #[serde(rename = "A")]
    pub a: CurvatureField,
    pub solver: Option<SolverSection>,
    pub scan: Option<ScanSection>,
    pub diagnostics: Option<DiagnosticsSection>,
}

impl ProblemFile {
    pub fn to_polytope(&self) -> Result<Polytope, CliError> {
        if self.schema != 1 {
            return Err(CliError::Validation(format!(
                "unsupported schema version {}",
                self.schema
            )));
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| Point2::new(v[0], v[1]))
            .collect();
        let a = match self.a {
            CurvatureField::Number(v) => CurvatureSpec::Given(v),
            CurvatureField::Keyword(_) => CurvatureSpec::Auto,
        };
        build_polytope(vertices, self.edge_weights.clone(), a)
            .map_err(|e| CliError::Validation(e.to_string()))
    }
}

/// Reads and validates a problem file; returns it with the raw bytes (the
/// input digest hashes the bytes, not the parse).
pub fn parse_problem(path: &Path) -> Result<(ProblemFile, Vec<u8>), CliError> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8_lossy(&bytes);
    let parsed: ProblemFile = toml::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok((parsed, bytes))
}

/// Shared flags of the subcommands.
#[derive(Debug, Clone)]
pub struct RunFlags {
    pub grid: Option<usize>,
    pub gtol: Option<f64>,
    pub max_iters: Option<usize>,
    pub scan_angles: Option<usize>,
    pub scan_offsets: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    pub method: Option<String>,
}

impl Default for RunFlags {
    fn default() -> Self {
        Self {
            grid: None,
            gtol: None,
            max_iters: None,
            scan_angles: None,
            scan_offsets: None,
            out_dir: None,
            threads: None,
            method: None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Command {
    Stability { problem: PathBuf },
    Solve { problem: PathBuf },
    Diagnose { problem: PathBuf },
    JoyceVerify { a1: f64, a2: f64 },
    Oracle1d { epsilons: Vec<f64> },
}

/// Deterministic report body plus a timing footer (the footer is excluded
/// from the byte-identical determinism contract).
pub struct RunReport {
    pub body: String,
    pub timings: Vec<(String, f64)>,
    pub exit_code: i32,
}

impl RunReport {
    pub fn render(&self) -> String {
        let mut s = self.body.clone();
        s.push_str("# timing (non-deterministic)\n");
        for (stage, secs) in &self.timings {
            let _ = writeln!(s, "timing_ms {stage} = {:.1}", secs * 1e3);
        }
        s
    }
}

fn digest_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn scan_config(problem: Option<&ProblemFile>, flags: &RunFlags) -> ScanConfig {
    let section = problem.and_then(|p| p.scan.as_ref());
    ScanConfig {
        angles: flags
            .scan_angles
            .or(section.and_then(|s| s.angles))
            .unwrap_or(720),
        offsets: flags
            .scan_offsets
            .or(section.and_then(|s| s.offsets))
            .unwrap_or(256),
        refine_tol_factor: 1e-6,
    }
}

fn solver_config(problem: Option<&ProblemFile>, flags: &RunFlags) -> SolverConfig {
    let section = problem.and_then(|p| p.solver.as_ref());
    let method = flags
        .method
        .clone()
        .or(section.and_then(|s| s.method.clone()));
    SolverConfig {
        grid_n: flags.grid.or(section.and_then(|s| s.grid)).unwrap_or(64),
        g_tol: flags.gtol.or(section.and_then(|s| s.gtol)).unwrap_or(1e-6),
        max_iters: flags
            .max_iters
            .or(section.and_then(|s| s.max_iters))
            .unwrap_or(2000),
        method: match method.as_deref() {
            Some("gd") | Some("gradient-descent") => Method::GradientDescent,
            _ => Method::Lbfgs,
        },
        ..SolverConfig::default()
    }
}

fn write_artifact(out_dir: &Option<PathBuf>, name: &str, content: &str) -> std::io::Result<()> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), content)?;
    }
    Ok(())
}

fn stability_stage(
    polytope: &Polytope,
    cfg: ScanConfig,
    out_dir: &Option<PathBuf>,
    body: &mut String,
) -> Result<StabilityStatus, CliError> {
    let report = scan_positivity(polytope, cfg);
    let _ = writeln!(body, "[stability]");
    let _ = writeln!(body, "A_used = {:.12e}", report.a_used);
    let _ = writeln!(
        body,
        "futaki_residual = [{:.6e}, {:.6e}, {:.6e}]",
        report.futaki_residual[0], report.futaki_residual[1], report.futaki_residual[2]
    );
    let status = match report.status {
        StabilityStatus::Stable => "stable",
        StabilityStatus::Destabilized => "destabilized",
        StabilityStatus::Inconclusive => "inconclusive",
    };
    let _ = writeln!(body, "status = {status}");
    if report.status != StabilityStatus::Inconclusive {
        let _ = writeln!(body, "min_L = {:.12e}", report.min_l);
        let _ = writeln!(
            body,
            "argmin = {{ theta = {:.9}, offset = {:.9} }}",
            report.argmin_theta, report.argmin_offset
        );
        if let Some(c) = report.c_estimate {
            let _ = writeln!(body, "C_estimate = {:.9e}", c);
        }
    }
    let _ = writeln!(body, "note = \"{}\"", report.note);
    let _ = writeln!(body);

    // optional CSV of the scan grid
    if out_dir.is_some() {
        let mut csv = String::from("theta,offset,normalized_L\n");
        let angles = cfg.angles.min(720);
        let offsets = cfg.offsets.min(256);
        for ai in 0..angles {
            let theta = 2.0 * std::f64::consts::PI * ai as f64 / angles as f64;
            let d = Point2::new(theta.cos(), theta.sin());
            let lo = d.dot(polytope.polygon().centroid());
            let hi = polytope.polygon().support(d);
            for oi in 0..offsets {
                let c = lo + (oi as f64 + 0.5) / offsets as f64 * (hi - lo);
                let lam = crate::geometry::AffineFunction::new(d.x1, d.x2, -c);
                let mass = crate::stability::boundary_hinge_mass(polytope, &lam);
                if mass <= 0.0 {
                    continue;
                }
                if let Ok(raw) = crate::stability::evaluate_l_hinge(polytope, &lam) {
                    let _ = writeln!(csv, "{theta:.9},{c:.9},{:.12e}", raw / mass);
                }
            }
        }
        write_artifact(out_dir, "scan_grid.csv", &csv).map_err(|e| CliError::Io {
            path: out_dir.clone().unwrap_or_default(),
            source: e,
        })?;
    }
    Ok(report.status)
}

fn potential_csv(field: &crate::potential::PotentialField) -> String {
    let mut csv = String::from("x1,x2,u,xi1,xi2,J,abreu_residual\n");
    let a = field.polytope.a_constant();
    for (i, j) in field.grid.interior_nodes() {
        if let Ok(data) = field.eval_derivatives(i, j) {
            let p = field.grid.point(i, j);
            let u = field.value_at(p).unwrap_or(f64::NAN);
            let res = if field.grid.has_interior_ring(i, j) {
                field.abreu_operator(i, j).map(|r| r + a).unwrap_or(f64::NAN)
            } else {
                f64::NAN
            };
            let _ = writeln!(
                csv,
                "{:.9},{:.9},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
                p.x1, p.x2, u, data.xi.x1, data.xi.x2, data.j_det, res
            );
        }
    }
    csv
}

fn solve_stage(
    polytope: &Polytope,
    cfg: &SolverConfig,
    out_dir: &Option<PathBuf>,
    body: &mut String,
) -> Result<(Option<crate::solver::SolverResult>, i32), CliError> {
    let _ = writeln!(body, "[solve]");
    let _ = writeln!(body, "grid_n = {}", cfg.grid_n);
    let _ = writeln!(body, "g_tol = {:.3e}", cfg.g_tol);
    match minimize_m(polytope, cfg, None) {
        Ok(result) => {
            let status = match result.status {
                SolverStatus::Converged => "converged",
                SolverStatus::MaxIters => "max_iters",
            };
            let _ = writeln!(body, "status = {status}");
            let _ = writeln!(body, "iterations = {}", result.iterations);
            let _ = writeln!(body, "final_gradient_norm = {:.6e}", result.final_gradient_norm);
            let _ = writeln!(body, "M_final = {:.12e}", result.m_history.last().unwrap());
            let _ = writeln!(body, "max_residual = {:.6e}", result.max_residual);
            if let Ok(rep) = residual_report(&result) {
                let _ = writeln!(body, "L_of_u = {:.12e}", rep.l_of_u);
                let _ = writeln!(body, "L_identity_slack = {:.6e}", rep.l_identity_slack);
                let _ = writeln!(body, "max_V_norm = {:.6e}", rep.max_v_norm);
            }
            let _ = writeln!(body);
            if out_dir.is_some() {
                write_artifact(out_dir, "potential.csv", &potential_csv(&result.potential))
                    .map_err(|e| CliError::Io {
                        path: out_dir.clone().unwrap_or_default(),
                        source: e,
                    })?;
            }
            let code = if result.status == SolverStatus::Converged {
                0
            } else {
                3
            };
            Ok((Some(result), code))
        }
        Err(e) => {
            let _ = writeln!(body, "status = error");
            let _ = writeln!(body, "error = \"{e}\"");
            let _ = writeln!(body);
            Ok((None, 1))
        }
    }
}

fn diagnose_stage(
    problem: &ProblemFile,
    result: &crate::solver::SolverResult,
    out_dir: &Option<PathBuf>,
    body: &mut String,
) -> Result<(), CliError> {
    let field = affine_normalize(
        &result.potential,
        result.potential.polytope.polygon().centroid(),
    )
    .map_err(|e| CliError::Validation(e.to_string()))?;
    let polytope = &field.polytope;
    let surface = FieldSurface(&field);
    let section = problem.diagnostics.as_ref();
    let _ = writeln!(body, "[diagnostics]");

    // edge gap probes: configured points or edge midpoints pulled inward
    let probes: Vec<Point2> = section
        .and_then(|s| s.edge_probes.clone())
        .map(|v| v.iter().map(|p| Point2::new(p[0], p[1])).collect())
        .unwrap_or_else(|| {
            polytope
                .polygon()
                .edges()
                .iter()
                .map(|e| {
                    let mid = (e.start + e.end).scale(0.5);
                    mid + e.inward_unit_normal.scale(0.15 * polytope.polygon().diameter())
                })
                .collect()
        });
    for (k, p) in probes.iter().enumerate() {
        for (edge_idx, _) in polytope.polygon().edges().iter().enumerate() {
            if let Ok(pr) = edge_probe(polytope, *p, edge_idx) {
                if let Ok(d) = d_of_p(&surface, &pr) {
                    let _ = writeln!(
                        body,
                        "D_probe_{k} = {{ edge = {edge_idx}, p = [{:.6}, {:.6}], D = {:.9e} }}",
                        p.x1, p.x2, d
                    );
                }
            }
        }
    }

    // M-condition scan on the stride-2 lattice
    if let Ok(m) = m_condition_scan(&field, 2) {
        let _ = writeln!(
            body,
            "V_max = {{ value = {:.9e}, pairs = {} }}",
            m.max_v, m.pairs_checked
        );
    }

    // vertex profiles at each Delzant vertex
    let ts: Vec<f64> = section
        .and_then(|s| s.profile_ts.clone())
        .unwrap_or_else(|| vec![0.05, 0.1, 0.2, 0.4]);
    let epsilons: Vec<f64> = section
        .and_then(|s| s.profile_epsilons.clone())
        .unwrap_or_else(|| vec![0.1]);
    for v_idx in 0..polytope.polygon().vertices().len() {
        let chart = VertexChart::at_polytope_vertex(polytope, v_idx);
        match vertex_profile(&surface, &chart, &ts, &epsilons, field.grid.h * 4.0) {
            Ok(profile) => {
                let _ = writeln!(
                    body,
                    "vertex_{v_idx} = {{ E_max = {:.9e}, delta_n_count = {} }}",
                    profile.e_max,
                    profile.delta_n.len()
                );
                if out_dir.is_some() {
                    let mut csv = String::from("t,E,Delta");
                    for e in &profile.epsilons {
                        let _ = write!(csv, ",F_eps_{e}");
                    }
                    csv.push('\n');
                    for row in &profile.rows {
                        let _ = write!(csv, "{:.9},{:.12e},{:.12e}", row.t, row.e_of_t, row.delta_of_t);
                        for f in &row.f_eps {
                            let _ = write!(csv, ",{f:.12e}");
                        }
                        csv.push('\n');
                    }
                    write_artifact(out_dir, &format!("vertex_profile_{v_idx}.csv"), &csv)
                        .map_err(|e| CliError::Io {
                            path: out_dir.clone().unwrap_or_default(),
                            source: e,
                        })?;
                }
                // volume ratio near this vertex
                let mut samples = Vec::new();
                for a in 1..=10 {
                    for b in 1..=10 {
                        samples.push(Point2::new(0.04 * a as f64, 0.04 * b as f64));
                    }
                }
                if let Ok((sup, inf)) = volume_bound_b(&surface, &chart, &samples) {
                    let _ = writeln!(
                        body,
                        "volume_ratio_{v_idx} = {{ sup = {:.6e}, inf = {:.6e} }}",
                        sup, inf
                    );
                }
            }
            Err(e) => {
                let _ = writeln!(body, "vertex_{v_idx} = {{ error = \"{e}\" }}");
            }
        }
    }

    // envelope inequality with X = half polygon (left of the centroid)
    let cx = polytope.polygon().centroid().x1;
    if let Ok(check) = convex_envelope_check8(&field, &|p| p.x1 <= cx) {
        let _ = writeln!(
            body,
            "envelope = {{ lhs = {:.9e}, rhs = {:.9e}, slack = {:.9e} }}",
            check.lhs, check.rhs, check.slack
        );
    }
    let _ = writeln!(body);
    Ok(())
}

fn joyce_verify_stage(a1: f64, a2: f64, body: &mut String) -> i32 {
    if !(a1 > 0.0 && a2 > 0.0) {
        let _ = writeln!(body, "error = \"parameters must be positive\"");
        return 1;
    }
    let params = JoyceParams::new(a1, a2);
    let _ = writeln!(body, "[joyce-verify]");
    let _ = writeln!(body, "a1 = {a1}");
    let _ = writeln!(body, "a2 = {a2}");

    // curvature residual over the 50x50 verification patch
    let hessian = move |x: Point2| joyce_potential(params, x).unwrap().hessian;
    let mut max_abreu: f64 = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            let x = Point2::new(
                0.5 + 4.5 * i as f64 / 49.0,
                0.5 + 4.5 * j as f64 / 49.0,
            );
            max_abreu = max_abreu.max(fd_abreu_residual(&hessian, x, 1e-3).abs());
        }
    }
    let _ = writeln!(body, "max_abreu_residual = {max_abreu:.6e}");

    // round trip on the y-grid
    let mut max_rt: f64 = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            let y1 = 10.0 * i as f64 / 49.0;
            let y2 = 10.0 * j as f64 / 49.0;
            let (x1, x2) = joyce_map(params, y1, y2);
            if let Ok((b1, b2)) = joyce_inverse(params, x1, x2) {
                max_rt = max_rt.max((b1 - y1).abs().max((b2 - y2).abs()));
            }
            let (c1, c2) = joyce_inverse_closed_form(params, x1, x2);
            max_rt = max_rt.max((c1 - y1).abs().max((c2 - y2).abs()));
        }
    }
    let _ = writeln!(body, "max_roundtrip_error = {max_rt:.6e}");

    // Ricci-flat sum identity (exact when a1 = a2)
    let mut max_tn: f64 = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            let x = Point2::new(0.5 + 4.5 * i as f64 / 49.0, 0.5 + 4.5 * j as f64 / 49.0);
            if let Ok(s) = taub_nut_identity_slack(params, x) {
                max_tn = max_tn.max(s.abs());
            }
        }
    }
    if a1 == a2 {
        let _ = writeln!(body, "taub_nut_identity_max_slack = {max_tn:.6e}");
    } else {
        let _ = writeln!(body, "sum_identity_max_slack = {max_tn:.6e} # nonzero: a1 != a2");
    }

    // harmonic and conjugate residuals of the generating functions
    let xi1 = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().1.ln() - a2 * h + 1.0;
    let x1f = move |r: f64, h: f64| f_plus_minus(h, r).unwrap().1 + a1 * r * r / 4.0;
    let s1 = residual_stats(
        |r, h| axisym_harmonic_residual(&xi1, r, h, 1e-4),
        [1.0, 2.0, 1.0, 2.0],
        20,
    );
    let s2 = residual_stats(
        |r, h| conjugate_equation_residual(&x1f, r, h, 1e-4),
        [1.0, 2.0, 1.0, 2.0],
        20,
    );
    let _ = writeln!(body, "harmonic_residual_max = {:.6e}", s1.max_abs);
    let _ = writeln!(body, "conjugate_residual_max = {:.6e}", s2.max_abs);
    let _ = writeln!(body);
    0
}

fn oracle_1d_stage(epsilons: &[f64], out_dir: &Option<PathBuf>, body: &mut String) -> i32 {
    let _ = writeln!(body, "[oracle-1d]");
    let mut csv = String::from("epsilon,n_eps,closed_form,sample_stddev\n");
    let mut prev: Option<f64> = None;
    let mut monotone = true;
    for &eps in epsilons {
        let fam = OneDFamily::new(eps, OneDNormalization::AtZero);
        let closed = 2.0 / eps * (1.0 / (2.0 * eps)).atan();
        let mut vals = Vec::new();
        for k in 0..100 {
            let x = -0.9 + 1.8 * k as f64 / 99.0;
            vals.push(fam.n_epsilon_sampled(x));
        }
        let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        let _ = writeln!(
            body,
            "eps_{eps} = {{ n_eps = {mean:.9e}, closed_form = {closed:.9e}, stddev = {sd:.3e} }}"
        );
        let _ = writeln!(csv, "{eps},{mean:.12e},{closed:.12e},{sd:.3e}");
        if let Some(p) = prev {
            if mean <= p {
                monotone = false;
            }
        }
        prev = Some(mean);
    }
    let _ = writeln!(body, "monotone_increasing_as_eps_decreases = {monotone}");
    let _ = writeln!(body);
    let _ = write_artifact(out_dir, "oracle_1d.csv", &csv);
    0
}

/// Runs a command; the report body is deterministic for identical inputs.
pub fn run(command: &Command, flags: &RunFlags) -> Result<RunReport, CliError> {
    if let Some(threads) = flags.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let mut body = String::new();
    let mut timings = Vec::new();
    let exit_code;

    match command {
        Command::Stability { problem } => {
            let (parsed, bytes) = parse_problem(problem)?;
            let polytope = parsed.to_polytope()?;
            let _ = writeln!(body, "command = stability");
            let _ = writeln!(body, "input_digest = {}", digest_hex(&bytes));
            let t0 = Instant::now();
            let status = stability_stage(
                &polytope,
                scan_config(Some(&parsed), flags),
                &flags.out_dir,
                &mut body,
            )?;
            timings.push(("stability".into(), t0.elapsed().as_secs_f64()));
            exit_code = match status {
                StabilityStatus::Stable => 0,
                StabilityStatus::Destabilized => 2,
                StabilityStatus::Inconclusive => 1,
            };
        }
        Command::Solve { problem } => {
            let (parsed, bytes) = parse_problem(problem)?;
            let polytope = parsed.to_polytope()?;
            let _ = writeln!(body, "command = solve");
            let _ = writeln!(body, "input_digest = {}", digest_hex(&bytes));
            let cfg = solver_config(Some(&parsed), flags);
            let t0 = Instant::now();
            let (_, code) = solve_stage(&polytope, &cfg, &flags.out_dir, &mut body)?;
            timings.push(("solve".into(), t0.elapsed().as_secs_f64()));
            exit_code = code;
        }
        Command::Diagnose { problem } => {
            let (parsed, bytes) = parse_problem(problem)?;
            let polytope = parsed.to_polytope()?;
            let _ = writeln!(body, "command = diagnose");
            let _ = writeln!(body, "input_digest = {}", digest_hex(&bytes));
            let t0 = Instant::now();
            let _ = stability_stage(
                &polytope,
                scan_config(Some(&parsed), flags),
                &flags.out_dir,
                &mut body,
            )?;
            timings.push(("stability".into(), t0.elapsed().as_secs_f64()));
            let cfg = solver_config(Some(&parsed), flags);
            let t1 = Instant::now();
            let (result, code) = solve_stage(&polytope, &cfg, &flags.out_dir, &mut body)?;
            timings.push(("solve".into(), t1.elapsed().as_secs_f64()));
            exit_code = code;
            if let Some(result) = result {
                let t2 = Instant::now();
                diagnose_stage(&parsed, &result, &flags.out_dir, &mut body)?;
                timings.push(("diagnostics".into(), t2.elapsed().as_secs_f64()));
            }
        }
        Command::JoyceVerify { a1, a2 } => {
            let _ = writeln!(body, "command = joyce-verify");
            let t0 = Instant::now();
            exit_code = joyce_verify_stage(*a1, *a2, &mut body);
            timings.push(("joyce-verify".into(), t0.elapsed().as_secs_f64()));
        }
        Command::Oracle1d { epsilons } => {
            let _ = writeln!(body, "command = oracle-1d");
            let t0 = Instant::now();
            exit_code = oracle_1d_stage(epsilons, &flags.out_dir, &mut body);
            timings.push(("oracle-1d".into(), t0.elapsed().as_secs_f64()));
        }
    }

    Ok(RunReport {
        body,
        timings,
        exit_code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn square_toml() -> &'static str {
        r#"
schema = 1
vertices = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
edge_weights = [1.0, 1.0, 1.0, 1.0]
A = "auto"
"#
    }

    #[test]
    fn parse_square_fixture() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(square_toml().as_bytes()).unwrap();
        let (parsed, _) = parse_problem(f.path()).unwrap();
        let p = parsed.to_polytope().unwrap();
        assert!((p.a_constant() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn weight_arity_mismatch_is_validation_error() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(
            br#"
schema = 1
vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
edge_weights = [1.0, 1.0, 1.0]
A = "auto"
"#,
        )
        .unwrap();
        let (parsed, _) = parse_problem(f.path()).unwrap();
        assert!(matches!(
            parsed.to_polytope(),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(
            br#"
schema = 1
vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
edge_weights = [1.0, 1.0, 1.0, 1.0]
A = "auto"
surprise = 3
"#,
        )
        .unwrap();
        let r = parse_problem(f.path());
        assert!(matches!(r, Err(CliError::Parse { .. })));
    }

    #[test]
    fn auto_with_asymmetric_weights_parses_then_reports_futaki() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(
            br#"
schema = 1
vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
edge_weights = [2.0, 1.0, 1.0, 1.0]
A = "auto"
"#,
        )
        .unwrap();
        let (parsed, _) = parse_problem(f.path()).unwrap();
        let p = parsed.to_polytope().unwrap();
        let (_, res) = crate::stability::determine_a_and_futaki(&p);
        assert!(res[1].abs() + res[2].abs() > 1e-6);
    }
}
