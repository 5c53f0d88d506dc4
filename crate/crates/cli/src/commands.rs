//! Command implementations shared by the binary and the tests.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sosexit::certify::{self, CertificateJson, CertificateReport, CheckOptions, SosCertificate};
use sosexit::mc::{self, McEstimate, McError, McSettings};
use sosexit::model::ExitProblem;
use sosexit::poly::binomial;
use sosexit::relaxation::{assemble, RelaxationError, RelaxationInfo};
use sosexit_sdp::{sdpa, Sense, SolverSettings};
use thiserror::Error;

use crate::problem::{LoadedProblem, ProblemError};
use crate::report::{
    BoundReport, BoundRow, CertificateSummary, ProblemMeta, RowTiming, SideResult, SolveSettingsMeta, Timing,
};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status for unreadable or invalid input.
pub const EXIT_INPUT: i32 = 2;
/// Exit status when a solver or simulation fails.
pub const EXIT_SOLVER: i32 = 3;
/// Exit status when a certificate does not pass its checks.
pub const EXIT_CERTIFICATE: i32 = 4;

/// Absolute slack, scaled by `1 + |upper|`, allowed when comparing bounds.
const CONSISTENCY_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Relaxation(#[from] RelaxationError),
    #[error("solver failed: {0}")]
    Solver(String),
    #[error(transparent)]
    Certificate(#[from] certify::CertifyError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Problem(_) | CliError::Relaxation(_) | CliError::Io(_) | CliError::Usage(_) => EXIT_INPUT,
            CliError::Solver(_) | CliError::Mc(_) => EXIT_SOLVER,
            CliError::Certificate(certify::CertifyError::NotOptimal(_)) => EXIT_SOLVER,
            CliError::Certificate(_) => EXIT_CERTIFICATE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SenseChoice {
    Min,
    Max,
    Both,
}

impl SenseChoice {
    fn senses(self) -> Vec<Sense> {
        match self {
            SenseChoice::Min => vec![Sense::Min],
            SenseChoice::Max => vec![Sense::Max],
            SenseChoice::Both => vec![Sense::Min, Sense::Max],
        }
    }

    fn name(self) -> &'static str {
        match self {
            SenseChoice::Min => "min",
            SenseChoice::Max => "max",
            SenseChoice::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub degrees: Vec<u32>,
    pub sense: SenseChoice,
    pub solver: SolverSettings,
    /// Extract and check a certificate for every solve.
    pub certify: Option<CheckOptions>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            degrees: vec![2, 4, 6, 8, 10],
            sense: SenseChoice::Both,
            solver: SolverSettings::default(),
            certify: None,
        }
    }
}

/// Solver settings with both the feasibility and the gap tolerance set to `tol`.
pub fn solver_settings(tol: f64, max_iters: usize) -> SolverSettings {
    SolverSettings {
        feas_tol: tol,
        gap_tol: tol,
        max_iters,
        verbose: false,
    }
}

fn summarize(report: &CertificateReport, cert: &SosCertificate) -> CertificateSummary {
    CertificateSummary {
        pass: report.pass,
        certified_value: cert.bound,
        min_gram_eigenvalue: report.min_gram_eigenvalue,
        max_identity_residual: report.max_identity_residual,
        worst_interior_value: report.worst_interior_value,
        worst_boundary_value: report.worst_boundary_value,
    }
}

/// Assembles and solves one relaxation; never panics on solver trouble.
pub fn solve_one(
    problem: &ExitProblem,
    r: u32,
    sense: Sense,
    settings: &SolverSettings,
    certify: Option<&CheckOptions>,
) -> SideResult {
    let relax = match assemble(problem, r, sense) {
        Ok(relax) => relax,
        Err(e) => return SideResult::from_error(e.to_string()),
    };
    let sol = relax.solve(settings);
    let mut side = SideResult::from_status(
        sol.status,
        sol.primal_objective,
        sol.dual_objective,
        sol.iterations,
        sol.residuals,
    );
    if let (Some(opts), true) = (certify, sol.status.is_usable()) {
        match certify::extract(&relax, &sol).and_then(|c| Ok((certify::check(&c, problem, opts)?, c))) {
            Ok((report, cert)) => side.certificate = Some(summarize(&report, &cert)),
            Err(e) => side.error = Some(format!("certificate: {e}")),
        }
    }
    side
}

/// Solves every requested `(r, sense)` pair. Independent solves run in
/// parallel; rows come back in the order of `opts.degrees`.
pub fn cmd_solve(loaded: &LoadedProblem, path: &str, opts: &SolveOptions, seed: u64) -> BoundReport {
    let start = Instant::now();
    let senses = opts.sense.senses();
    let tasks: Vec<(usize, Sense)> = (0..opts.degrees.len())
        .flat_map(|i| senses.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<(SideResult, f64)> = tasks
        .par_iter()
        .map(|&(i, sense)| {
            let t = Instant::now();
            let side = solve_one(
                &loaded.problem,
                opts.degrees[i],
                sense,
                &opts.solver,
                opts.certify.as_ref(),
            );
            (side, t.elapsed().as_secs_f64())
        })
        .collect();

    let mut rows = Vec::new();
    let mut timing_rows = Vec::new();
    for (i, &r) in opts.degrees.iter().enumerate() {
        let mut lower = None;
        let mut upper = None;
        let mut timing = RowTiming {
            r,
            lower_seconds: None,
            upper_seconds: None,
        };
        for ((ti, sense), (side, secs)) in tasks.iter().zip(&results) {
            if *ti != i {
                continue;
            }
            match sense {
                Sense::Min => {
                    lower = Some(side.clone());
                    timing.lower_seconds = Some(*secs);
                }
                Sense::Max => {
                    upper = Some(side.clone());
                    timing.upper_seconds = Some(*secs);
                }
            }
        }
        let lo = lower.as_ref().and_then(|s| s.bound);
        let up = upper.as_ref().and_then(|s| s.bound);
        let gap = lo.zip(up).map(|(l, u)| u - l);
        let consistent = match (lo, up) {
            (Some(l), Some(u)) => l <= u + CONSISTENCY_SLACK * (1.0 + u.abs()),
            _ => true,
        };
        rows.push(BoundRow {
            r,
            lower,
            upper,
            gap,
            consistent,
        });
        timing_rows.push(timing);
    }
    BoundReport {
        tool: "sosexit".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        problem: ProblemMeta {
            path: path.to_string(),
            sha256: loaded.sha256.clone(),
        },
        settings: SolveSettingsMeta {
            degrees: opts.degrees.clone(),
            sense: opts.sense.name().into(),
            tol: opts.solver.feas_tol,
            max_iters: opts.solver.max_iters,
            certificate_samples: opts.certify.map(|c| c.samples),
            seed,
        },
        rows,
        timing: Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            rows: timing_rows,
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InfoReport {
    pub dimension: usize,
    pub boundary_pieces: usize,
    pub relaxation: RelaxationInfo,
    /// Moment count when the occupation measure is truncated at degree `r`
    /// and every exit measure at degree `r - 2`, a convention found in
    /// published tables.
    pub alternative_moment_count: usize,
}

pub fn cmd_info(problem: &ExitProblem, r: u32) -> Result<InfoReport, CliError> {
    let relax = assemble(problem, r, Sense::Min)?;
    let n = problem.dim();
    let pieces = problem.domain.boundary.len();
    let nu_degree = r.saturating_sub(2) as usize;
    Ok(InfoReport {
        dimension: n,
        boundary_pieces: pieces,
        relaxation: relax.info(),
        alternative_moment_count: binomial(n + r as usize, n) + pieces * binomial(n + nu_degree, n),
    })
}

impl InfoReport {
    pub fn to_text(&self) -> String {
        let info = &self.relaxation;
        let mut out = format!(
            "dimension {}, relaxation order r = {}, degree shift s = {}\n\n{:<8} {:>10} {:>10}\n",
            self.dimension, info.r, info.shift, "measure", "truncation", "variables"
        );
        for m in &info.measures {
            out.push_str(&format!("{:<8} {:>10} {:>10}\n", m.measure, m.truncation, m.variables));
        }
        out.push_str(&format!(
            "\ntotal moment variables: {}\nDynkin equality rows:   {}\n",
            info.variables, info.dynkin_rows
        ));
        out.push_str(&format!(
            "alternative count (mu to degree r, exit measures to degree r-2): {}\n\nPSD blocks:\n",
            self.alternative_moment_count
        ));
        for b in &info.blocks {
            out.push_str(&format!("  {:>4} x {:<4} {}\n", b.size, b.size, b.label));
        }
        out
    }
}

/// Solves one relaxation, extracts its certificate and checks it.
pub fn cmd_certify(
    problem: &ExitProblem,
    r: u32,
    sense: Sense,
    settings: &SolverSettings,
    opts: &CheckOptions,
) -> Result<(SosCertificate, CertificateReport), CliError> {
    let relax = assemble(problem, r, sense)?;
    let sol = relax.solve(settings);
    let cert = certify::extract(&relax, &sol)?;
    let report = certify::check(&cert, problem, opts)?;
    Ok((cert, report))
}

#[derive(Serialize)]
pub struct CertifyOutput<'a> {
    pub certificate: CertificateJson,
    pub report: &'a CertificateReport,
}

pub fn certify_text(cert: &SosCertificate, report: &CertificateReport) -> String {
    let mut out = format!(
        "sense {:?}, r = {}, solver status {:?}\ncertified bound <v, xi> = {:.10} (recomputed {:.10})\n",
        cert.sense, cert.r, cert.solver_status, cert.bound, report.recomputed_bound
    );
    out.push_str(&format!(
        "min Gram eigenvalue {:.3e} (tolerance -{:.1e})\n",
        report.min_gram_eigenvalue, report.tolerances.gram
    ));
    for id in &report.identities {
        out.push_str(&format!(
            "identity on {}: max residual {:.3e}, relative {:.3e} (tolerance {:.1e})\n",
            id.part, id.max_abs_residual, id.relative, report.tolerances.identity
        ));
    }
    for s in std::iter::once(&report.interior).chain(&report.boundary) {
        out.push_str(&format!(
            "sampled {} on {} points: worst value {:.3e} (tolerance -{:.1e})\n",
            s.part, s.points, s.worst_value, report.tolerances.sampling
        ));
    }
    out.push_str(if report.pass { "verdict: pass\n" } else { "verdict: FAIL\n" });
    out
}

pub fn cmd_mc(problem: &ExitProblem, settings: &McSettings) -> Result<McEstimate, CliError> {
    Ok(mc::simulate(problem, settings)?)
}

pub fn mc_text(est: &McEstimate) -> String {
    let (lo99, hi99) = est.ci99();
    format!(
        "paths {} (censored {}, fraction {:.3e}), step {:e}\n\
         E[g(X(tau))] = {:.6} +/- {:.2e} (standard error)\n\
         95% CI [{:.6}, {:.6}]   99% CI [{:.6}, {:.6}]\n\
         E[tau] = {:.6} +/- {:.2e}\n",
        est.paths,
        est.censored,
        est.censored_fraction,
        est.step,
        est.mean,
        est.std_error,
        est.ci95.0,
        est.ci95.1,
        lo99,
        hi99,
        est.exit_time_mean,
        est.exit_time_std_error
    )
}

/// Writes the relaxation in sparse SDPA format.
pub fn cmd_export(problem: &ExitProblem, r: u32, sense: Sense, out: &Path) -> Result<(), CliError> {
    let relax = assemble(problem, r, sense)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    sdpa::write_sdpa(&relax.to_conic(), &mut file)?;
    file.flush()?;
    Ok(())
}
