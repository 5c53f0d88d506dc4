//! Problem files: JSON documents describing an exit problem.
//!
//! ```json
//! {
//!   "dimension": 1,
//!   "drift": ["1 + 2*x1"],
//!   "diffusion": [["1.4142135623730951*x1"]],
//!   "domain": {
//!     "interior": ["x1*(1-x1) >= 0", "1 - x1^2 >= 0"],
//!     "boundary": [{ "label": "ends", "eq": ["x1*(1-x1)"], "ineq": [] }]
//!   },
//!   "g": "x1^2",
//!   "initial": { "type": "dirac", "point": [0.5] }
//! }
//! ```
//!
//! Every polynomial may also be given as a coefficient map such as
//! `{"(2,0)": 1.0, "(0,0)": -1.0}`. Interior and boundary inequalities accept
//! `lhs >= rhs`, `lhs <= rhs` or a bare polynomial meaning `p >= 0`;
//! boundary equalities accept `lhs = rhs` or a bare polynomial meaning `p = 0`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sosexit::model::{
    has_errors, Diagnostic, Domain, ExitProblem, InitialLaw, ModelError, SdeModel, SemialgebraicPiece,
    ValidationOptions,
};
use sosexit::poly::{MultiIndex, Polynomial};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("{0}")]
    Model(#[from] ModelError),
    #[error("problem failed validation:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n")
}

fn field_error(field: impl Into<String>, message: impl ToString) -> ProblemError {
    ProblemError::Field {
        field: field.into(),
        message: message.to_string(),
    }
}

/// A polynomial written either in the text grammar or as a coefficient map
/// keyed by exponent tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolyText {
    Text(String),
    Coefficients(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceFile {
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub eq: Vec<PolyText>,
    #[serde(default)]
    pub ineq: Vec<PolyText>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainFile {
    pub interior: Vec<PolyText>,
    pub boundary: Vec<PieceFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialFile {
    Dirac {
        point: Vec<f64>,
    },
    Moments {
        degree: u32,
        values: BTreeMap<String, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    /// Free text, ignored by the tools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    pub dimension: usize,
    pub drift: Vec<PolyText>,
    pub diffusion: Vec<Vec<PolyText>>,
    pub domain: DomainFile,
    pub g: PolyText,
    pub initial: InitialFile,
}

#[derive(Clone, Copy, PartialEq)]
enum Relation {
    NonNegative,
    Zero,
}

fn parse_poly(text: &PolyText, n: usize, field: &str) -> Result<Polynomial, ProblemError> {
    match text {
        PolyText::Text(src) => Polynomial::parse(src, n).map_err(|e| field_error(field, format!("{e} in \"{src}\""))),
        PolyText::Coefficients(map) => {
            let mut p = Polynomial::zero(n);
            for (key, &c) in map {
                let alpha = MultiIndex::from_tuple_string(key)
                    .ok_or_else(|| field_error(field, format!("bad exponent tuple \"{key}\"")))?;
                if alpha.dim() != n {
                    return Err(field_error(
                        field,
                        format!("exponent tuple \"{key}\" has {} entries, expected {n}", alpha.dim()),
                    ));
                }
                p.add_term(alpha, c);
            }
            Ok(p)
        }
    }
}

/// Reads `lhs op rhs` as a single polynomial that must be `>= 0` or `= 0`.
fn parse_constraint(text: &PolyText, n: usize, field: &str, relation: Relation) -> Result<Polynomial, ProblemError> {
    let PolyText::Text(src) = text else {
        return parse_poly(text, n, field);
    };
    let sub = |lhs: &str, rhs: &str| -> Result<Polynomial, ProblemError> {
        let l = parse_poly(&PolyText::Text(lhs.to_string()), n, field)?;
        let r = parse_poly(&PolyText::Text(rhs.to_string()), n, field)?;
        Ok(&l - &r)
    };
    let has_ineq = src.contains(">=") || src.contains("<=");
    match relation {
        Relation::NonNegative => {
            if let Some((l, r)) = src.split_once(">=") {
                sub(l, r)
            } else if let Some((l, r)) = src.split_once("<=") {
                sub(r, l)
            } else if src.contains('=') || src.contains('>') || src.contains('<') {
                Err(field_error(field, format!("expected \"p >= q\" or \"p <= q\", got \"{src}\"")))
            } else {
                parse_poly(text, n, field)
            }
        }
        Relation::Zero => {
            if has_ineq || src.contains('>') || src.contains('<') {
                return Err(field_error(field, format!("expected an equality \"p = q\", got \"{src}\"")));
            }
            match src.split_once('=') {
                Some((l, r)) => sub(l.trim_end_matches('='), r.trim_start_matches('=')),
                None => parse_poly(text, n, field),
            }
        }
    }
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<ProblemFile, ProblemError> {
        serde_json::from_str(text).map_err(|e| ProblemError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    pub fn to_problem(&self) -> Result<ExitProblem, ProblemError> {
        let n = self.dimension;
        if n == 0 {
            return Err(field_error("dimension", "must be at least 1"));
        }
        if self.drift.len() != n {
            return Err(field_error(
                "drift",
                format!("dimension mismatch: {} components for dimension {n}", self.drift.len()),
            ));
        }
        if self.diffusion.len() != n {
            return Err(field_error(
                "diffusion",
                format!("dimension mismatch: {} rows for dimension {n}", self.diffusion.len()),
            ));
        }
        let drift = self
            .drift
            .iter()
            .enumerate()
            .map(|(i, t)| parse_poly(t, n, &format!("drift[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        let diffusion = self
            .diffusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(k, t)| parse_poly(t, n, &format!("diffusion[{i}][{k}]")))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let sde = SdeModel::new(drift, diffusion).map_err(|e| field_error("diffusion", e))?;

        let interior = self
            .domain
            .interior
            .iter()
            .enumerate()
            .map(|(j, t)| parse_constraint(t, n, &format!("domain.interior[{j}]"), Relation::NonNegative))
            .collect::<Result<Vec<_>, _>>()?;
        let interior = SemialgebraicPiece::new("interior", interior, vec![])
            .map_err(|e| field_error("domain.interior", e))?;
        let mut boundary = Vec::new();
        for (i, piece) in self.domain.boundary.iter().enumerate() {
            let at = |what: &str, j: usize| format!("domain.boundary[{i}].{what}[{j}]");
            let eq = piece
                .eq
                .iter()
                .enumerate()
                .map(|(j, t)| parse_constraint(t, n, &at("eq", j), Relation::Zero))
                .collect::<Result<Vec<_>, _>>()?;
            let ineq = piece
                .ineq
                .iter()
                .enumerate()
                .map(|(j, t)| parse_constraint(t, n, &at("ineq", j), Relation::NonNegative))
                .collect::<Result<Vec<_>, _>>()?;
            boundary.push(
                SemialgebraicPiece::new(piece.label.clone(), ineq, eq)
                    .map_err(|e| field_error(format!("domain.boundary[{i}]"), e))?,
            );
        }
        let g = parse_poly(&self.g, n, "g")?;
        let initial = match &self.initial {
            InitialFile::Dirac { point } => {
                if point.len() != n {
                    return Err(field_error(
                        "initial.point",
                        format!("dimension mismatch: {} coordinates for dimension {n}", point.len()),
                    ));
                }
                InitialLaw::Dirac(point.clone())
            }
            InitialFile::Moments { degree, values } => {
                let mut out = BTreeMap::new();
                for (key, &v) in values {
                    let alpha = MultiIndex::from_tuple_string(key)
                        .filter(|a| a.dim() == n)
                        .ok_or_else(|| field_error("initial.values", format!("bad exponent tuple \"{key}\"")))?;
                    out.insert(alpha, v);
                }
                InitialLaw::Moments {
                    degree: *degree,
                    values: out,
                }
            }
        };
        Ok(ExitProblem::new(sde, Domain::new(interior, boundary), g, initial)?)
    }

    /// Text form of `problem`; parsing the result gives back an identical problem.
    pub fn from_problem(problem: &ExitProblem) -> ProblemFile {
        let text = |p: &Polynomial| PolyText::Text(p.to_string());
        let nonneg = |p: &Polynomial| PolyText::Text(format!("{p} >= 0"));
        let initial = match &problem.initial {
            InitialLaw::Dirac(x) => InitialFile::Dirac { point: x.clone() },
            InitialLaw::Moments { degree, values } => InitialFile::Moments {
                degree: *degree,
                values: values.iter().map(|(a, v)| (a.to_tuple_string(), *v)).collect(),
            },
        };
        ProblemFile {
            comment: None,
            dimension: problem.dim(),
            drift: problem.sde.drift().iter().map(text).collect(),
            diffusion: problem
                .sde
                .diffusion()
                .iter()
                .map(|row| row.iter().map(text).collect())
                .collect(),
            domain: DomainFile {
                interior: problem.domain.interior.inequalities.iter().map(nonneg).collect(),
                boundary: problem
                    .domain
                    .boundary
                    .iter()
                    .map(|piece| PieceFile {
                        label: piece.label.clone(),
                        eq: piece.equalities.iter().map(|p| PolyText::Text(format!("{p} = 0"))).collect(),
                        ineq: piece.inequalities.iter().map(nonneg).collect(),
                    })
                    .collect(),
            },
            g: text(&problem.g),
            initial,
        }
    }
}

/// Adjustments applied after parsing and before validation.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Append `R^2 - |z|^2` to the interior when no ball constraint is present.
    pub add_ball: Option<f64>,
    /// Work in the variables `w_k = z_k / factor_k`.
    pub rescale: Option<Vec<f64>>,
    pub validation: ValidationOptions,
}

#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: ExitProblem,
    /// Non-fatal diagnostics.
    pub warnings: Vec<Diagnostic>,
    /// SHA-256 of the file contents, hex encoded.
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses problem text, applies `opts` and validates.
pub fn load_str(text: &str, opts: &LoadOptions) -> Result<LoadedProblem, ProblemError> {
    let mut problem = ProblemFile::from_json(text)?.to_problem()?;
    if let Some(r) = opts.add_ball {
        if !(r > 0.0) {
            return Err(field_error("--add-ball", "radius must be positive"));
        }
        problem.domain = problem.domain.with_ball(r);
    }
    if let Some(factors) = &opts.rescale {
        if factors.len() != problem.dim() {
            return Err(field_error(
                "--rescale",
                format!("{} factors for dimension {}", factors.len(), problem.dim()),
            ));
        }
        if factors.iter().any(|f| !(*f > 0.0)) {
            return Err(field_error("--rescale", "factors must be positive"));
        }
        problem = problem.rescaled(factors);
    }
    let diags = problem.validate(&opts.validation);
    if has_errors(&diags) {
        return Err(ProblemError::Validation(diags));
    }
    Ok(LoadedProblem {
        problem,
        warnings: diags,
        sha256: sha256_hex(text.as_bytes()),
    })
}

pub fn load(path: &Path, opts: &LoadOptions) -> Result<LoadedProblem, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_str(&text, opts)
}
