//! Dual certificates: the polynomial `v` and the Gram matrices of its
//! sum-of-squares multipliers, read off an interior-point dual solution.
//!
//! For a lower bound (`Sense::Min`) the certificate states
//!
//! ```text
//! -L v = sum_j p_j s_j      on the interior module,
//! g - v = sum_j p_j s_j     on every boundary piece,
//! ```
//!
//! so `v` is a subsolution and `<v, xi>` bounds `E[g(X(tau))]` from below.
//! For an upper bound both right-hand sides change sign (`L v` and `v - g`).

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sosexit_sdp::{Residuals, Sense, Solution, Status};
use thiserror::Error;

use crate::model::{ExitProblem, ModelError, SemialgebraicPiece};
use crate::poly::{MultiIndex, Polynomial};
use crate::relaxation::{MeasureId, SdpProblem};
use crate::sampling::sample_piece;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("solver status {0:?} carries no usable dual solution")]
    NotOptimal(Status),
    #[error("solution does not match the relaxation ({0})")]
    Shape(String),
    #[error("could not sample any point of {0}")]
    Sampling(String),
    #[error("the interior has no ball constraint to bound the sampling box")]
    NoSamplingBox,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One SOS multiplier `s_j = b' G b` attached to constraint `p_j`.
#[derive(Debug, Clone)]
pub struct GramMultiplier {
    pub measure: MeasureId,
    pub label: String,
    pub constraint: Polynomial,
    pub basis: Vec<MultiIndex>,
    pub gram: DMatrix<f64>,
}

impl GramMultiplier {
    /// `b(z)' G b(z)` as a polynomial.
    pub fn sos(&self) -> Polynomial {
        let dim = self.constraint.dim();
        let mut acc: BTreeMap<MultiIndex, f64> = BTreeMap::new();
        for (i, a) in self.basis.iter().enumerate() {
            for (j, b) in self.basis.iter().enumerate() {
                *acc.entry(a.add(b)).or_default() += self.gram[(i, j)];
            }
        }
        Polynomial::from_terms(dim, acc).expect("basis shares the dimension")
    }

    /// `p_j s_j`.
    pub fn term(&self) -> Polynomial {
        &self.constraint * &self.sos()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        crate::model::min_eigenvalue(&self.gram)
    }
}

#[derive(Debug, Clone)]
pub struct SosCertificate {
    pub sense: Sense,
    pub r: u32,
    pub v: Polynomial,
    pub multipliers: Vec<GramMultiplier>,
    /// `<v, xi>`, the certified bound.
    pub bound: f64,
    pub solver_status: Status,
    pub solver_residuals: Residuals,
}

/// Reads the certificate out of a solution of `relax`.
pub fn extract(relax: &SdpProblem, solution: &Solution) -> Result<SosCertificate, CertifyError> {
    if !solution.status.is_usable() {
        return Err(CertifyError::NotOptimal(solution.status));
    }
    if solution.eq_duals.len() != relax.equalities.len()
        || solution.block_duals.len() != relax.blocks.len()
    {
        return Err(CertifyError::Shape(format!(
            "{} row duals and {} block duals for {} rows and {} blocks",
            solution.eq_duals.len(),
            solution.block_duals.len(),
            relax.equalities.len(),
            relax.blocks.len()
        )));
    }
    let sign = match relax.sense {
        Sense::Min => 1.0,
        Sense::Max => -1.0,
    };
    let n = relax.indexing.dim();
    let v = Polynomial::from_terms(
        n,
        relax
            .test_monomials
            .iter()
            .zip(&solution.eq_duals)
            .map(|(a, l)| (a.clone(), sign * l)),
    )
    .expect("test monomials share the dimension");
    let bound = sign
        * relax
            .equalities
            .iter()
            .zip(&solution.eq_duals)
            .map(|(row, l)| row.rhs * l)
            .sum::<f64>();
    let multipliers = relax
        .blocks
        .iter()
        .zip(&solution.block_duals)
        .map(|(spec, z)| GramMultiplier {
            measure: spec.measure,
            label: spec.label.clone(),
            constraint: spec.multiplier.clone(),
            basis: spec.basis().monomials().to_vec(),
            gram: (z + z.transpose()) * 0.5,
        })
        .collect();
    Ok(SosCertificate {
        sense: relax.sense,
        r: relax.truncation.r,
        v,
        multipliers,
        bound,
        solver_status: solution.status,
        solver_residuals: solution.residuals,
    })
}

impl SosCertificate {
    /// Polynomial that must equal the interior module sum: `-Lv` or `Lv`.
    pub fn interior_target(&self, problem: &ExitProblem) -> Result<Polynomial, CertifyError> {
        let lv = problem.sde.apply_generator(&self.v)?;
        Ok(match self.sense {
            Sense::Min => -&lv,
            Sense::Max => lv,
        })
    }

    /// Polynomial that must equal the module sum on a boundary piece:
    /// `g - v` or `v - g`.
    pub fn boundary_target(&self, problem: &ExitProblem) -> Polynomial {
        match self.sense {
            Sense::Min => &problem.g - &self.v,
            Sense::Max => &self.v - &problem.g,
        }
    }

    /// `sum_j p_j s_j` over the multipliers of one measure.
    pub fn module_sum(&self, measure: MeasureId) -> Polynomial {
        let dim = self.v.dim();
        self.multipliers
            .iter()
            .filter(|m| m.measure == measure)
            .fold(Polynomial::zero(dim), |acc, m| &acc + &m.term())
    }

    pub fn to_json(&self) -> CertificateJson {
        CertificateJson {
            r: self.r,
            sense: self.sense,
            bound: self.bound,
            solver_status: format!("{:?}", self.solver_status),
            v: poly_json(&self.v),
            multipliers: self
                .multipliers
                .iter()
                .map(|m| MultiplierJson {
                    measure: m.measure.to_string(),
                    label: m.label.clone(),
                    constraint: m.constraint.to_string(),
                    basis: m.basis.iter().map(MultiIndex::to_tuple_string).collect(),
                    gram: (0..m.gram.nrows())
                        .map(|i| m.gram.row(i).iter().copied().collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

fn poly_json(p: &Polynomial) -> BTreeMap<String, f64> {
    p.terms().map(|(a, c)| (a.to_tuple_string(), c)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplierJson {
    pub measure: String,
    pub label: String,
    pub constraint: String,
    pub basis: Vec<String>,
    /// Row-major dense Gram matrix.
    pub gram: Vec<Vec<f64>>,
}

/// Serialized certificate: `v` keyed by exponent tuples plus all Grams.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateJson {
    pub r: u32,
    pub sense: Sense,
    pub bound: f64,
    pub solver_status: String,
    pub v: BTreeMap<String, f64>,
    pub multipliers: Vec<MultiplierJson>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Lowest accepted Gram eigenvalue is `-gram`.
    pub gram: f64,
    /// Identity residual, relative to `1 + max |target coefficient|`.
    pub identity: f64,
    /// Lowest accepted sampled value is `-sampling`.
    pub sampling: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gram: 1e-7,
            identity: 1e-6,
            sampling: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Tolerances {
            gram: tol,
            identity: tol,
            sampling: tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckOptions {
    pub samples: usize,
    pub seed: u64,
    pub tol: Tolerances,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            samples: 10_000,
            seed: 0,
            tol: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GramCheck {
    pub label: String,
    pub size: usize,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityCheck {
    /// `interior` or the boundary piece label.
    pub part: String,
    pub max_abs_residual: f64,
    pub scale: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleCheck {
    pub part: String,
    pub points: usize,
    /// Smallest sampled value of the target; negative values are violations.
    pub worst_value: f64,
    pub worst_point: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub sense: Sense,
    pub bound: f64,
    /// `<v, xi>` recomputed from the initial law.
    pub recomputed_bound: f64,
    pub grams: Vec<GramCheck>,
    pub identities: Vec<IdentityCheck>,
    pub interior: SampleCheck,
    pub boundary: Vec<SampleCheck>,
    pub tolerances: Tolerances,
    pub min_gram_eigenvalue: f64,
    pub max_identity_residual: f64,
    pub worst_interior_value: f64,
    pub worst_boundary_value: f64,
    pub pass: bool,
}

const BATCH: usize = 1024;

fn sample_check(
    part: &str,
    piece: &SemialgebraicPiece,
    half_width: f64,
    target: &Polynomial,
    samples: usize,
    seed: u64,
    stream_base: u64,
) -> Result<SampleCheck, CertifyError> {
    let batches = samples.div_ceil(BATCH).max(1);
    let results: Vec<(usize, f64, Vec<f64>)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_base + b as u64);
            let count = BATCH.min(samples - b * BATCH);
            let pts = sample_piece(piece, half_width, count, &mut rng);
            let mut worst = (f64::INFINITY, Vec::new());
            for z in &pts {
                let val = target.eval(z);
                if val < worst.0 {
                    worst = (val, z.clone());
                }
            }
            (pts.len(), worst.0, worst.1)
        })
        .collect();
    let points: usize = results.iter().map(|r| r.0).sum();
    if points == 0 {
        return Err(CertifyError::Sampling(part.to_string()));
    }
    let (worst_value, worst_point) = results
        .into_iter()
        .filter(|r| r.0 > 0)
        .map(|r| (r.1, r.2))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one batch has points");
    Ok(SampleCheck {
        part: part.to_string(),
        points,
        worst_value,
        worst_point,
    })
}

fn identity_check(part: &str, target: &Polynomial, module: &Polynomial) -> IdentityCheck {
    let residual = target - module;
    let max_abs_residual = residual.max_abs_coeff();
    let scale = target.max_abs_coeff();
    IdentityCheck {
        part: part.to_string(),
        max_abs_residual,
        scale,
        relative: max_abs_residual / (1.0 + scale),
    }
}

/// Verifies a certificate by Gram eigenvalues, coefficient identities and
/// sampling of the interior and of every boundary piece.
pub fn check(
    cert: &SosCertificate,
    problem: &ExitProblem,
    opts: &CheckOptions,
) -> Result<CertificateReport, CertifyError> {
    let half_width = problem
        .domain
        .enclosing_half_width()
        .ok_or(CertifyError::NoSamplingBox)?;
    let grams: Vec<GramCheck> = cert
        .multipliers
        .iter()
        .map(|m| GramCheck {
            label: m.label.clone(),
            size: m.gram.nrows(),
            min_eigenvalue: m.min_eigenvalue(),
        })
        .collect();

    let interior_target = cert.interior_target(problem)?;
    let boundary_target = cert.boundary_target(problem);
    let mut identities = vec![identity_check(
        "interior",
        &interior_target,
        &cert.module_sum(MeasureId::Occupation),
    )];
    for (i, piece) in problem.domain.boundary.iter().enumerate() {
        identities.push(identity_check(
            &piece_name(piece, i),
            &boundary_target,
            &cert.module_sum(MeasureId::Exit(i)),
        ));
    }

    let interior = sample_check(
        "interior",
        &problem.domain.interior,
        half_width,
        &interior_target,
        opts.samples,
        opts.seed,
        0,
    )?;
    let boundary = problem
        .domain
        .boundary
        .iter()
        .enumerate()
        .map(|(i, piece)| {
            sample_check(
                &piece_name(piece, i),
                piece,
                half_width,
                &boundary_target,
                opts.samples,
                opts.seed,
                ((i as u64) + 1) << 32,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let min_gram_eigenvalue = grams
        .iter()
        .map(|g| g.min_eigenvalue)
        .fold(f64::INFINITY, f64::min);
    let max_identity_residual = identities.iter().map(|c| c.relative).fold(0.0, f64::max);
    let worst_boundary_value = boundary
        .iter()
        .map(|b| b.worst_value)
        .fold(f64::INFINITY, f64::min);
    let tol = opts.tol;
    let pass = min_gram_eigenvalue >= -tol.gram
        && max_identity_residual <= tol.identity
        && interior.worst_value >= -tol.sampling
        && worst_boundary_value >= -tol.sampling;
    Ok(CertificateReport {
        sense: cert.sense,
        bound: cert.bound,
        recomputed_bound: problem.initial.integrate(&cert.v)?,
        grams,
        identities,
        worst_interior_value: interior.worst_value,
        interior,
        boundary,
        tolerances: tol,
        min_gram_eigenvalue,
        max_identity_residual,
        worst_boundary_value,
        pass,
    })
}

fn piece_name(piece: &SemialgebraicPiece, i: usize) -> String {
    if piece.label.is_empty() {
        format!("boundary piece {}", i + 1)
    } else {
        piece.label.clone()
    }
}
