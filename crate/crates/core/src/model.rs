//! Exit problem data: polynomial SDE, semialgebraic domain, boundary
//! functional and initial law, plus the generator `L`.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{MultiIndex, PolyError, Polynomial};
use crate::sampling;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Poly(#[from] PolyError),
    #[error("diffusion matrix must have {expected} rows, got {got}")]
    DiffusionRows { expected: usize, got: usize },
    #[error("diffusion row {row} has {got} columns, expected {expected}")]
    DiffusionCols {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("drift has {got} components, expected {expected}")]
    DriftLength { expected: usize, got: usize },
    #[error("moment {alpha} requested beyond stored degree {degree}")]
    MomentOutOfRange { alpha: String, degree: u32 },
    #[error("semialgebraic piece '{0}' has no defining polynomial")]
    EmptyPiece(String),
    #[error("{0}")]
    Invalid(String),
}

/// `dX = b(X) dt + B(X) dW` with polynomial coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SdeModel {
    dim: usize,
    noise_dim: usize,
    drift: Vec<Polynomial>,
    diffusion: Vec<Vec<Polynomial>>,
    a: Vec<Vec<Polynomial>>,
}

impl SdeModel {
    pub fn new(drift: Vec<Polynomial>, diffusion: Vec<Vec<Polynomial>>) -> Result<Self, ModelError> {
        let n = drift.len();
        if n == 0 {
            return Err(ModelError::Invalid("state dimension must be at least 1".into()));
        }
        if diffusion.len() != n {
            return Err(ModelError::DiffusionRows {
                expected: n,
                got: diffusion.len(),
            });
        }
        let m = diffusion[0].len();
        for (row, r) in diffusion.iter().enumerate() {
            if r.len() != m {
                return Err(ModelError::DiffusionCols {
                    row,
                    expected: m,
                    got: r.len(),
                });
            }
        }
        for p in drift.iter().chain(diffusion.iter().flatten()) {
            if p.dim() != n {
                return Err(PolyError::DimensionMismatch {
                    expected: n,
                    got: p.dim(),
                }
                .into());
            }
        }
        let a = derive_a(&diffusion, n);
        Ok(SdeModel {
            dim: n,
            noise_dim: m,
            drift,
            diffusion,
            a,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<Polynomial>] {
        &self.diffusion
    }

    /// `a = B B' / 2`.
    pub fn a(&self) -> &[Vec<Polynomial>] {
        &self.a
    }

    pub fn drift_degree(&self) -> u32 {
        self.drift.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn a_degree(&self) -> u32 {
        self.a.iter().flatten().map(Polynomial::degree).max().unwrap_or(0)
    }

    /// Degree increase `s` of the generator: `deg(Lf) <= deg(f) + s`.
    pub fn degree_shift(&self) -> u32 {
        let da = self.a_degree() as i64 - 2;
        let db = self.drift_degree() as i64 - 1;
        da.max(db).max(0) as u32
    }

    /// `Lf = -(sum a_ij d_i d_j f + sum b_i d_i f)`; note the minus sign.
    pub fn apply_generator(&self, f: &Polynomial) -> Result<Polynomial, ModelError> {
        if f.dim() != self.dim {
            return Err(PolyError::DimensionMismatch {
                expected: self.dim,
                got: f.dim(),
            }
            .into());
        }
        let mut acc = Polynomial::zero(self.dim);
        for i in 0..self.dim {
            let di = f.partial(i)?;
            if di.is_zero() {
                continue;
            }
            acc = &acc + &(&self.drift[i] * &di);
            for j in 0..self.dim {
                if self.a[i][j].is_zero() {
                    continue;
                }
                let dij = di.partial(j)?;
                acc = &acc + &(&self.a[i][j] * &dij);
            }
        }
        Ok(-&acc)
    }

    /// Numeric `a(z)` at a point.
    pub fn a_at(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.a[i][j].eval(z))
    }

    pub fn drift_at(&self, z: &[f64], out: &mut [f64]) {
        for (o, b) in out.iter_mut().zip(&self.drift) {
            *o = b.eval(z);
        }
    }

    pub fn diffusion_at(&self, z: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.noise_dim, |i, k| self.diffusion[i][k].eval(z))
    }

    /// Coefficients in the variables `w = z / factors`.
    pub fn rescaled(&self, factors: &[f64]) -> SdeModel {
        let drift = self
            .drift
            .iter()
            .zip(factors)
            .map(|(b, f)| b.scale_variables(factors).scale(1.0 / f))
            .collect();
        let diffusion = self
            .diffusion
            .iter()
            .zip(factors)
            .map(|(row, f)| {
                row.iter()
                    .map(|p| p.scale_variables(factors).scale(1.0 / f))
                    .collect()
            })
            .collect();
        SdeModel::new(drift, diffusion).expect("rescaling preserves shapes")
    }
}

/// `a_ij = 1/2 sum_k b_ik b_jk`, computed once per unordered pair so the
/// result is exactly symmetric.
pub fn derive_a(diffusion: &[Vec<Polynomial>], n: usize) -> Vec<Vec<Polynomial>> {
    let mut a = vec![vec![Polynomial::zero(n); n]; n];
    for i in 0..n {
        for j in i..n {
            let mut s = Polynomial::zero(n);
            for (bi, bj) in diffusion[i].iter().zip(&diffusion[j]) {
                s = &s + &(bi * bj);
            }
            let s = s.scale(0.5);
            a[j][i] = s.clone();
            a[i][j] = s;
        }
    }
    a
}

/// `{z : p(z) >= 0 for inequalities, p(z) = 0 for equalities}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemialgebraicPiece {
    pub label: String,
    pub inequalities: Vec<Polynomial>,
    pub equalities: Vec<Polynomial>,
}

impl SemialgebraicPiece {
    pub fn new(
        label: impl Into<String>,
        inequalities: Vec<Polynomial>,
        equalities: Vec<Polynomial>,
    ) -> Result<Self, ModelError> {
        let label = label.into();
        if inequalities.is_empty() && equalities.is_empty() {
            return Err(ModelError::EmptyPiece(label));
        }
        Ok(SemialgebraicPiece {
            label,
            inequalities,
            equalities,
        })
    }

    pub fn dim(&self) -> usize {
        self.inequalities
            .iter()
            .chain(&self.equalities)
            .next()
            .map(Polynomial::dim)
            .unwrap_or(0)
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        self.inequalities.iter().all(|p| p.eval(z) >= -tol)
            && self.equalities.iter().all(|p| p.eval(z).abs() <= tol)
    }

    /// Radius `R` if some inequality is a positive multiple of `R^2 - |z|^2`.
    pub fn ball_radius(&self) -> Option<f64> {
        self.inequalities.iter().find_map(ball_radius_of)
    }

    fn map_polys(&self, f: impl Fn(&Polynomial) -> Polynomial) -> SemialgebraicPiece {
        SemialgebraicPiece {
            label: self.label.clone(),
            inequalities: self.inequalities.iter().map(&f).collect(),
            equalities: self.equalities.iter().map(&f).collect(),
        }
    }
}

fn ball_radius_of(p: &Polynomial) -> Option<f64> {
    let n = p.dim();
    let c0 = p.coeff(&MultiIndex::zero(n));
    let mut lead = None;
    for (alpha, c) in p.terms() {
        if alpha.is_zero() {
            continue;
        }
        let is_square = alpha.degree() == 2 && alpha.exponents().iter().any(|&e| e == 2);
        if !is_square || c >= 0.0 {
            return None;
        }
        match lead {
            None => lead = Some(c),
            Some(l) if l == c => {}
            Some(_) => return None,
        }
    }
    let lead = lead?;
    if p.num_terms() != n + 1 || c0 <= 0.0 {
        return None;
    }
    Some((c0 / -lead).sqrt())
}

/// `R^2 - sum z_k^2`.
pub fn ball_polynomial(n: usize, radius: f64) -> Polynomial {
    let mut p = Polynomial::constant(n, radius * radius);
    for k in 0..n {
        let mut e = vec![0; n];
        e[k] = 2;
        p.add_term(MultiIndex::new(e), -1.0);
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub interior: SemialgebraicPiece,
    pub boundary: Vec<SemialgebraicPiece>,
}

impl Domain {
    pub fn new(interior: SemialgebraicPiece, boundary: Vec<SemialgebraicPiece>) -> Self {
        Domain { interior, boundary }
    }

    pub fn ball_radius(&self) -> Option<f64> {
        self.interior.ball_radius()
    }

    /// Appends `R^2 - |z|^2` to the interior unless a ball is already there.
    /// Boundary pieces are left alone: they are compact subsets of the closed
    /// interior already, and a ball localizer on a low-dimensional piece only
    /// adds a degenerate block.
    pub fn with_ball(&self, radius: f64) -> Domain {
        let n = self.interior.dim();
        let mut out = self.clone();
        if out.interior.ball_radius().is_none() {
            out.interior.inequalities.push(ball_polynomial(n, radius));
        }
        out
    }

    /// Half-width of a box enclosing the closed domain.
    pub fn enclosing_half_width(&self) -> Option<f64> {
        self.ball_radius()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLaw {
    Dirac(Vec<f64>),
    Moments {
        degree: u32,
        values: BTreeMap<MultiIndex, f64>,
    },
}

impl InitialLaw {
    /// `<z^alpha, xi>`.
    pub fn moment(&self, alpha: &MultiIndex) -> Result<f64, ModelError> {
        match self {
            InitialLaw::Dirac(x) => Ok(alpha.eval(x)),
            InitialLaw::Moments { degree, values } => {
                if alpha.degree() > *degree {
                    return Err(ModelError::MomentOutOfRange {
                        alpha: alpha.to_tuple_string(),
                        degree: *degree,
                    });
                }
                Ok(values.get(alpha).copied().unwrap_or(0.0))
            }
        }
    }

    /// `<p, xi>`.
    pub fn integrate(&self, p: &Polynomial) -> Result<f64, ModelError> {
        p.terms().map(|(a, c)| Ok(c * self.moment(a)?)).sum()
    }

    pub fn max_degree(&self) -> Option<u32> {
        match self {
            InitialLaw::Dirac(_) => None,
            InitialLaw::Moments { degree, .. } => Some(*degree),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitProblem {
    pub sde: SdeModel,
    pub domain: Domain,
    pub g: Polynomial,
    pub initial: InitialLaw,
}

impl ExitProblem {
    pub fn new(
        sde: SdeModel,
        domain: Domain,
        g: Polynomial,
        initial: InitialLaw,
    ) -> Result<Self, ModelError> {
        let n = sde.dim();
        let check = |p: &Polynomial| {
            if p.dim() != n {
                Err(ModelError::Poly(PolyError::DimensionMismatch {
                    expected: n,
                    got: p.dim(),
                }))
            } else {
                Ok(())
            }
        };
        check(&g)?;
        for piece in std::iter::once(&domain.interior).chain(&domain.boundary) {
            for p in piece.inequalities.iter().chain(&piece.equalities) {
                check(p)?;
            }
        }
        match &initial {
            InitialLaw::Dirac(x) if x.len() != n => {
                return Err(ModelError::Invalid(format!(
                    "initial point has dimension {}, expected {n}",
                    x.len()
                )))
            }
            InitialLaw::Moments { values, .. } => {
                if let Some(a) = values.keys().find(|a| a.dim() != n) {
                    return Err(ModelError::Invalid(format!(
                        "initial moment key {} has wrong dimension",
                        a.to_tuple_string()
                    )));
                }
            }
            _ => {}
        }
        Ok(ExitProblem {
            sde,
            domain,
            g,
            initial,
        })
    }

    pub fn dim(&self) -> usize {
        self.sde.dim()
    }

    /// Same problem in the variables `w_k = z_k / factors[k]`; the exit
    /// functional value is unchanged.
    pub fn rescaled(&self, factors: &[f64]) -> ExitProblem {
        let sub = |p: &Polynomial| p.scale_variables(factors);
        let initial = match &self.initial {
            InitialLaw::Dirac(x) => InitialLaw::Dirac(x.iter().zip(factors).map(|(x, f)| x / f).collect()),
            InitialLaw::Moments { degree, values } => InitialLaw::Moments {
                degree: *degree,
                values: values
                    .iter()
                    .map(|(a, v)| {
                        let s: f64 = a
                            .exponents()
                            .iter()
                            .zip(factors)
                            .map(|(&e, f)| f.powi(e as i32))
                            .product();
                        (a.clone(), v / s)
                    })
                    .collect(),
            },
        };
        ExitProblem {
            sde: self.sde.rescaled(factors),
            domain: Domain {
                interior: self.domain.interior.map_polys(sub),
                boundary: self.domain.boundary.iter().map(|b| b.map_polys(sub)).collect(),
            },
            g: sub(&self.g),
            initial,
        }
    }

    pub fn validate(&self, opts: &ValidationOptions) -> Vec<Diagnostic> {
        validate(self, opts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    MissingBall,
    EllipticityFailed,
    InitialNotInterior,
    InitialMass,
    InteriorNotSampled,
    BoundaryPieceEmpty,
    NoBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: DiagnosticCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

#[derive(Debug, Clone)]
pub struct ValidationOptions {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            samples: 200,
            seed: 0,
        }
    }
}

/// Structural and numerical sanity checks. Ellipticity is only tested at
/// sampled interior points; it is a smoke test, not a proof.
pub fn validate(problem: &ExitProblem, opts: &ValidationOptions) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |severity, code, message: String| {
        out.push(Diagnostic {
            severity,
            code,
            message,
        })
    };
    let n = problem.dim();
    let interior = &problem.domain.interior;

    let radius = problem.domain.ball_radius();
    if radius.is_none() {
        push(
            Severity::Error,
            DiagnosticCode::MissingBall,
            "interior description has no ball constraint R^2 - sum z_k^2 >= 0; rerun with --add-ball R"
                .into(),
        );
    }
    if problem.domain.boundary.is_empty() {
        push(
            Severity::Error,
            DiagnosticCode::NoBoundary,
            "no boundary pieces given".into(),
        );
    }

    match &problem.initial {
        InitialLaw::Dirac(x) => {
            let strictly_inside = interior.inequalities.iter().all(|p| p.eval(x) > 0.0)
                && interior.equalities.iter().all(|p| p.eval(x) == 0.0);
            if !strictly_inside {
                push(
                    Severity::Error,
                    DiagnosticCode::InitialNotInterior,
                    format!("initial point not interior: {x:?}"),
                );
            }
        }
        InitialLaw::Moments { values, .. } => {
            let mass = values.get(&MultiIndex::zero(n)).copied().unwrap_or(0.0);
            if mass != 1.0 {
                push(
                    Severity::Error,
                    DiagnosticCode::InitialMass,
                    format!("initial law must be a probability measure, got mass {mass}"),
                );
            }
        }
    }

    let Some(radius) = radius else {
        return out;
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let points = sampling::sample_piece(interior, radius, opts.samples, &mut rng);
    if points.is_empty() {
        push(
            Severity::Warning,
            DiagnosticCode::InteriorNotSampled,
            "could not sample interior points; ellipticity not checked".into(),
        );
    } else {
        let worst = points
            .iter()
            .map(|z| min_eigenvalue(&problem.sde.a_at(z)))
            .fold(f64::INFINITY, f64::min);
        if !(worst > 0.0) {
            push(
                Severity::Error,
                DiagnosticCode::EllipticityFailed,
                format!(
                    "ellipticity check failed: min eigenvalue of a(z) is {worst:e} over {} interior samples",
                    points.len()
                ),
            );
        }
    }

    for piece in &problem.domain.boundary {
        let found = sampling::sample_piece(piece, radius, 16, &mut rng);
        if found.is_empty() {
            push(
                Severity::Warning,
                DiagnosticCode::BoundaryPieceEmpty,
                format!("no points found on boundary piece '{}'", piece.label),
            );
        }
    }
    out
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigenvalues().min()
}
