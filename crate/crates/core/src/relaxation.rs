//! Moment relaxations of the exit problem as linear matrix inequalities.
//!
//! The unknowns are truncated moment sequences of the occupation measure
//! `mu` and of one exit measure `nu_i` per boundary piece. Each test
//! monomial `z^alpha` with `|alpha| <= r` contributes one Dynkin row
//! `l_mu(L z^alpha) + sum_i l_nu_i(z^alpha) = <z^alpha, xi>`, and positivity
//! of the measures on their supports becomes PSD moment and localizing
//! matrices.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use sosexit_sdp::{ConicProgram, EqualityRow, LmiBlock, Sense, Solution, SolverSettings};
use thiserror::Error;

use crate::model::{ExitProblem, ModelError};

mod reduce;
use crate::poly::{basis, binomial, MonomialBasis, MultiIndex, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelaxationError {
    #[error("relaxation order {r} is below deg g = {deg_g}; the bound would ignore the top terms of g")]
    OrderBelowObjective { r: u32, deg_g: u32 },
    #[error("relaxation order must be at least 1")]
    OrderTooSmall,
    #[error("constraint {label} of degree {degree} does not fit in moments of degree {truncation}")]
    DegreeOverflow {
        label: String,
        degree: u32,
        truncation: u32,
    },
    #[error("the problem has no boundary piece, so there is no exit measure")]
    NoBoundary,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which measure a moment variable belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum MeasureId {
    Occupation,
    Exit(usize),
}

impl fmt::Display for MeasureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureId::Occupation => write!(f, "mu"),
            MeasureId::Exit(i) => write!(f, "nu{}", i + 1),
        }
    }
}

fn round_up_even(d: u32) -> u32 {
    d + d % 2
}

/// Truncation bookkeeping for one relaxation order. Moment degrees are
/// `r + shift` for `mu` and `r` for the exit measures, rounded up to even
/// and never below the degree of a constraint on that measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Truncation {
    pub r: u32,
    /// Degree shift of the generator.
    pub shift: u32,
    pub t_mu: u32,
    pub t_nu: u32,
}

pub fn truncation_degrees(problem: &ExitProblem, r: u32) -> Result<Truncation, RelaxationError> {
    if r == 0 {
        return Err(RelaxationError::OrderTooSmall);
    }
    let deg_g = problem.g.degree();
    if r < deg_g {
        return Err(RelaxationError::OrderBelowObjective { r, deg_g });
    }
    let shift = problem.sde.degree_shift();
    // every constraint must fit in at least an order-0 localizing block
    let max_deg = |ps: &mut dyn Iterator<Item = &Polynomial>| ps.map(|p| p.degree()).max().unwrap_or(0);
    let interior_deg = max_deg(&mut problem.domain.interior.inequalities.iter());
    let boundary_deg = max_deg(
        &mut problem
            .domain
            .boundary
            .iter()
            .flat_map(|piece| piece.inequalities.iter().chain(&piece.equalities)),
    );
    Ok(Truncation {
        r,
        shift,
        t_mu: round_up_even((r + shift).max(interior_deg)),
        t_nu: round_up_even(r.max(boundary_deg)),
    })
}

/// Column layout of all moment variables: measures in order
/// `mu, nu1, nu2, ...`, each followed by its graded monomial basis.
#[derive(Debug, Clone)]
pub struct MomentIndexing {
    dim: usize,
    measures: Vec<(MeasureId, u32, usize)>,
    columns: BTreeMap<(MeasureId, MultiIndex), usize>,
    labels: Vec<(MeasureId, MultiIndex)>,
}

impl MomentIndexing {
    fn new(dim: usize, layout: &[(MeasureId, u32)]) -> Self {
        let mut columns = BTreeMap::new();
        let mut labels = Vec::new();
        let mut measures = Vec::new();
        for &(m, t) in layout {
            measures.push((m, t, labels.len()));
            for alpha in basis(dim, t).iter() {
                columns.insert((m, alpha.clone()), labels.len());
                labels.push((m, alpha.clone()));
            }
        }
        MomentIndexing {
            dim,
            measures,
            columns,
            labels,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vars(&self) -> usize {
        self.labels.len()
    }

    /// `(measure, truncation degree, first column)` for every measure.
    pub fn measures(&self) -> &[(MeasureId, u32, usize)] {
        &self.measures
    }

    pub fn truncation(&self, m: MeasureId) -> Option<u32> {
        self.measures.iter().find(|e| e.0 == m).map(|e| e.1)
    }

    pub fn column(&self, m: MeasureId, alpha: &MultiIndex) -> Option<usize> {
        self.columns.get(&(m, alpha.clone())).copied()
    }

    pub fn label(&self, col: usize) -> &(MeasureId, MultiIndex) {
        &self.labels[col]
    }

    /// Number of variables belonging to measure `m`.
    pub fn count(&self, m: MeasureId) -> usize {
        self.truncation(m)
            .map_or(0, |t| binomial(self.dim + t as usize, self.dim))
    }

    /// Moments of measure `m` read out of a primal vector.
    pub fn moments_of(&self, m: MeasureId, x: &[f64]) -> BTreeMap<MultiIndex, f64> {
        self.columns
            .iter()
            .filter(|((mm, _), _)| *mm == m)
            .map(|((_, a), &c)| (a.clone(), x[c]))
            .collect()
    }
}

/// What a PSD block encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockKind {
    Moment,
    Localizing,
    /// The `+p` half of a boundary equality `p = 0`.
    EqualityPlus,
    /// The `-p` half, always placed right after its `+p` partner.
    EqualityMinus,
}

/// A PSD moment or localizing matrix together with where it came from.
#[derive(Debug, Clone)]
pub struct PsdBlockSpec {
    pub kind: BlockKind,
    pub measure: MeasureId,
    pub order: u32,
    /// Localizing polynomial; the constant 1 for a plain moment matrix.
    pub multiplier: Polynomial,
    pub label: String,
    pub block: LmiBlock,
}

impl PsdBlockSpec {
    pub fn size(&self) -> usize {
        self.block.size
    }

    pub fn basis(&self) -> MonomialBasis {
        basis(self.multiplier.dim(), self.order)
    }
}

/// Builds the matrix with entries `sum_gamma q_gamma y(alpha + beta + gamma)`.
pub fn moment_block(
    indexing: &MomentIndexing,
    measure: MeasureId,
    order: u32,
    q: &Polynomial,
    label: impl Into<String>,
) -> Result<PsdBlockSpec, RelaxationError> {
    let label = label.into();
    let t = indexing.truncation(measure).unwrap_or(0);
    if 2 * order + q.degree() > t {
        return Err(RelaxationError::DegreeOverflow {
            label,
            degree: q.degree(),
            truncation: t,
        });
    }
    let b = basis(indexing.dim(), order);
    let mut block = LmiBlock::new(b.len(), label.clone());
    for (i, a) in b.iter().enumerate() {
        for (j, c) in b.iter().enumerate().skip(i) {
            let ab = a.add(c);
            for (gamma, qg) in q.terms() {
                let col = indexing
                    .column(measure, &ab.add(gamma))
                    .expect("degree checked above");
                block.add_term(col, i, j, qg);
            }
        }
    }
    let kind = if q.degree() == 0 {
        BlockKind::Moment
    } else {
        BlockKind::Localizing
    };
    Ok(PsdBlockSpec {
        kind,
        measure,
        order,
        multiplier: q.clone(),
        label,
        block,
    })
}

/// One Dynkin row per test monomial of degree at most `r`.
pub fn dynkin_rows(
    problem: &ExitProblem,
    indexing: &MomentIndexing,
    r: u32,
) -> Result<Vec<EqualityRow>, RelaxationError> {
    let n = problem.dim();
    let pieces = problem.domain.boundary.len();
    let mut rows = Vec::new();
    for alpha in basis(n, r).iter() {
        let lz = problem
            .sde
            .apply_generator(&Polynomial::monomial(alpha.clone(), 1.0))?;
        let mut coeffs = Vec::with_capacity(lz.num_terms() + pieces);
        for (gamma, c) in lz.terms() {
            let col = indexing
                .column(MeasureId::Occupation, gamma)
                .expect("t_mu covers the generator degree shift");
            coeffs.push((col, c));
        }
        for i in 0..pieces {
            coeffs.push((indexing.column(MeasureId::Exit(i), alpha).unwrap(), 1.0));
        }
        rows.push(EqualityRow {
            coeffs,
            rhs: problem.initial.moment(alpha)?,
        });
    }
    Ok(rows)
}

/// The assembled relaxation of a given order and sense.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub sense: Sense,
    pub truncation: Truncation,
    pub indexing: MomentIndexing,
    pub objective: Vec<f64>,
    pub equalities: Vec<EqualityRow>,
    /// Test monomial of each equality row, in row order.
    pub test_monomials: Vec<MultiIndex>,
    pub blocks: Vec<PsdBlockSpec>,
}

impl SdpProblem {
    pub fn to_conic(&self) -> ConicProgram {
        ConicProgram {
            num_vars: self.indexing.num_vars(),
            sense: self.sense,
            objective: self.objective.clone(),
            equalities: self.equalities.clone(),
            blocks: self.blocks.iter().map(|b| b.block.clone()).collect(),
        }
    }

    /// Solves the relaxation. The solver works on an equivalent program with
    /// the boundary ideal factored out; the returned duals and residuals
    /// refer to the blocks and rows of [`SdpProblem::to_conic`].
    pub fn solve(&self, settings: &SolverSettings) -> Solution {
        let reduced = reduce::reduce(self);
        let sol = sosexit_sdp::solve(&reduced.program, settings);
        reduced.lift(&self.to_conic(), sol)
    }

    pub fn info(&self) -> RelaxationInfo {
        let measures = self
            .indexing
            .measures()
            .iter()
            .map(|&(m, t, _)| MeasureInfo {
                measure: m.to_string(),
                truncation: t,
                variables: self.indexing.count(m),
            })
            .collect();
        RelaxationInfo {
            r: self.truncation.r,
            shift: self.truncation.shift,
            measures,
            variables: self.indexing.num_vars(),
            dynkin_rows: self.equalities.len(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockInfo {
                    label: b.label.clone(),
                    measure: b.measure.to_string(),
                    order: b.order,
                    size: b.size(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureInfo {
    pub measure: String,
    pub truncation: u32,
    pub variables: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockInfo {
    pub label: String,
    pub measure: String,
    pub order: u32,
    pub size: usize,
}

/// Size statistics of a relaxation, as printed by `info`.
#[derive(Debug, Clone, Serialize)]
pub struct RelaxationInfo {
    pub r: u32,
    pub shift: u32,
    pub measures: Vec<MeasureInfo>,
    pub variables: usize,
    pub dynkin_rows: usize,
    pub blocks: Vec<BlockInfo>,
}

fn localizing_order(t: u32, p: &Polynomial, label: &str) -> Result<u32, RelaxationError> {
    let half = t / 2;
    let need = p.degree().div_ceil(2);
    if need > half {
        return Err(RelaxationError::DegreeOverflow {
            label: label.to_string(),
            degree: p.degree(),
            truncation: t,
        });
    }
    Ok(half - need)
}

/// Assembles the order-`r` moment relaxation. `Sense::Min` yields lower
/// bounds on `E[g(X(tau))]`, `Sense::Max` upper bounds.
pub fn assemble(problem: &ExitProblem, r: u32, sense: Sense) -> Result<SdpProblem, RelaxationError> {
    let trunc = truncation_degrees(problem, r)?;
    let pieces = &problem.domain.boundary;
    if pieces.is_empty() {
        return Err(RelaxationError::NoBoundary);
    }
    let n = problem.dim();
    let mut layout = vec![(MeasureId::Occupation, trunc.t_mu)];
    layout.extend((0..pieces.len()).map(|i| (MeasureId::Exit(i), trunc.t_nu)));
    let indexing = MomentIndexing::new(n, &layout);

    let mut objective = vec![0.0; indexing.num_vars()];
    for i in 0..pieces.len() {
        for (gamma, c) in problem.g.terms() {
            objective[indexing.column(MeasureId::Exit(i), gamma).unwrap()] += c;
        }
    }

    let one = Polynomial::one(n);
    let mut blocks = Vec::new();
    let mu = MeasureId::Occupation;
    blocks.push(moment_block(
        &indexing,
        mu,
        trunc.t_mu / 2,
        &one,
        format!("moment matrix of mu, order {}", trunc.t_mu / 2),
    )?);
    for p in &problem.domain.interior.inequalities {
        let label = format!("localizing {p} >= 0 on mu");
        let o = localizing_order(trunc.t_mu, p, &label)?;
        blocks.push(moment_block(&indexing, mu, o, p, label)?);
    }
    for (i, piece) in pieces.iter().enumerate() {
        let nu = MeasureId::Exit(i);
        let name = if piece.label.is_empty() {
            nu.to_string()
        } else {
            format!("{nu} ({})", piece.label)
        };
        blocks.push(moment_block(
            &indexing,
            nu,
            trunc.t_nu / 2,
            &one,
            format!("moment matrix of {name}, order {}", trunc.t_nu / 2),
        )?);
        for p in &piece.inequalities {
            let label = format!("localizing {p} >= 0 on {name}");
            let o = localizing_order(trunc.t_nu, p, &label)?;
            blocks.push(moment_block(&indexing, nu, o, p, label)?);
        }
        for p in &piece.equalities {
            for (sign, tag, kind) in [
                (1.0, "+", BlockKind::EqualityPlus),
                (-1.0, "-", BlockKind::EqualityMinus),
            ] {
                let label = format!("localizing {tag}({p}) >= 0 on {name}");
                let o = localizing_order(trunc.t_nu, p, &label)?;
                let mut spec = moment_block(&indexing, nu, o, &p.scale(sign), label)?;
                spec.kind = kind;
                blocks.push(spec);
            }
        }
    }

    let equalities = dynkin_rows(problem, &indexing, r)?;
    Ok(SdpProblem {
        sense,
        truncation: trunc,
        indexing,
        objective,
        equalities,
        test_monomials: basis(n, r).monomials().to_vec(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::scalar_problem;
    use crate::model::{Domain, InitialLaw, SdeModel, SemialgebraicPiece};
    use sosexit_sdp::{solve, SolverSettings, Status};

    fn p(s: &str, n: usize) -> Polynomial {
        Polynomial::parse(s, n).unwrap()
    }

    /// The scalar example without the redundant ball constraint.
    fn bare_scalar() -> ExitProblem {
        let sde = SdeModel::new(vec![p("1+2*x1", 1)], vec![vec![p("1.4142135623730951*x1", 1)]]).unwrap();
        let q = p("x1*(1-x1)", 1);
        let interior = SemialgebraicPiece::new("X", vec![q.clone()], vec![]).unwrap();
        let boundary = SemialgebraicPiece::new("ends", vec![], vec![q]).unwrap();
        ExitProblem::new(
            sde,
            Domain::new(interior, vec![boundary]),
            p("x1^2", 1),
            InitialLaw::Dirac(vec![0.5]),
        )
        .unwrap()
    }

    fn brownian_ball(n: usize) -> ExitProblem {
        let drift = vec![Polynomial::zero(n); n];
        let diffusion = (0..n)
            .map(|i| (0..n).map(|j| Polynomial::constant(n, if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        let ball = crate::model::ball_polynomial(n, 1.0);
        let interior = SemialgebraicPiece::new("ball", vec![ball.clone()], vec![]).unwrap();
        let sphere = SemialgebraicPiece::new("sphere", vec![], vec![ball]).unwrap();
        let mut g = Polynomial::zero(n);
        for k in 0..n {
            g.add_term(MultiIndex::unit(n, k).add(&MultiIndex::unit(n, k)), 1.0);
        }
        ExitProblem::new(
            SdeModel::new(drift, diffusion).unwrap(),
            Domain::new(interior, vec![sphere]),
            g,
            InitialLaw::Dirac(vec![0.0; n]),
        )
        .unwrap()
    }

    #[test]
    fn truncation_examples() {
        let t = truncation_degrees(&bare_scalar(), 10).unwrap();
        assert_eq!((t.shift, t.t_mu, t.t_nu), (0, 10, 10));
        let t = truncation_degrees(&brownian_ball(2), 5).unwrap();
        assert_eq!((t.shift, t.t_mu, t.t_nu), (0, 6, 6));

        let sde = SdeModel::new(vec![p("x1^3", 1)], vec![vec![p("x1", 1)]]).unwrap();
        let mut prob = bare_scalar();
        prob.sde = sde;
        let t = truncation_degrees(&prob, 8).unwrap();
        assert_eq!((t.shift, t.t_mu), (2, 10));
        assert_eq!(
            truncation_degrees(&bare_scalar(), 1),
            Err(RelaxationError::OrderBelowObjective { r: 1, deg_g: 2 })
        );
    }

    #[test]
    fn moment_block_examples() {
        let idx = MomentIndexing::new(1, &[(MeasureId::Occupation, 2)]);
        let b = moment_block(&idx, MeasureId::Occupation, 1, &Polynomial::one(1), "m").unwrap();
        assert_eq!(b.size(), 2);
        assert_eq!(b.block.evaluate(&[1.0, 2.0, 3.0]).as_slice(), &[1.0, 2.0, 2.0, 3.0]);

        let idx = MomentIndexing::new(1, &[(MeasureId::Occupation, 4)]);
        let b = moment_block(&idx, MeasureId::Occupation, 1, &p("x1*(1-x1)", 1), "l").unwrap();
        let y = [1.0, 0.5, 0.3, 0.2, 0.1];
        assert!((b.block.evaluate(&y)[(0, 0)] - (0.5 - 0.3)).abs() < 1e-15);

        let idx = MomentIndexing::new(2, &[(MeasureId::Occupation, 2)]);
        let ball = crate::model::ball_polynomial(2, 2.0);
        let b = moment_block(&idx, MeasureId::Occupation, 0, &ball, "ball").unwrap();
        // y indexed as 1, x1, x2, x1^2, x1x2, x2^2
        let y = [1.0, 0.0, 0.0, 0.7, 0.1, 0.2];
        assert!((b.block.evaluate(&y)[(0, 0)] - (4.0 - 0.7 - 0.2)).abs() < 1e-15);
        assert!(moment_block(&idx, MeasureId::Occupation, 1, &ball, "ball").is_err());
    }

    #[test]
    fn dynkin_row_examples() {
        let prob = bare_scalar();
        let relax = assemble(&prob, 4, Sense::Min).unwrap();
        let idx = &relax.indexing;
        let row0 = &relax.equalities[0];
        assert_eq!(row0.rhs, 1.0);
        assert_eq!(row0.coeffs, vec![(idx.column(MeasureId::Exit(0), &MultiIndex::zero(1)).unwrap(), 1.0)]);
        // nu(z) - mu(1 + 2z) = 0.5
        let row1 = &relax.equalities[1];
        assert_eq!(row1.rhs, 0.5);
        let mut coeffs: Vec<(String, f64)> = row1
            .coeffs
            .iter()
            .map(|&(c, v)| {
                let (m, a) = idx.label(c);
                (format!("{m}{}", a.to_tuple_string()), v)
            })
            .collect();
        coeffs.sort_by(|a, b| a.0.cmp(&b.0));
        assert_eq!(
            coeffs,
            vec![("mu(0)".into(), -1.0), ("mu(1)".into(), -2.0), ("nu1(1)".into(), 1.0)]
        );
    }

    #[test]
    fn brownian_ball_rows_sum_to_occupation_mass() {
        let n = 3;
        let relax = assemble(&brownian_ball(n), 2, Sense::Max).unwrap();
        let idx = &relax.indexing;
        // add rows of z_k^2: sum_k nu(z_k^2) - n mu(1) = 0
        let mut total: BTreeMap<usize, f64> = BTreeMap::new();
        let mut rhs = 0.0;
        for (row, alpha) in relax.equalities.iter().zip(&relax.test_monomials) {
            if alpha.degree() == 2 && alpha.exponents().iter().any(|&e| e == 2) {
                for &(c, v) in &row.coeffs {
                    *total.entry(c).or_default() += v;
                }
                rhs += row.rhs;
            }
        }
        assert_eq!(rhs, 0.0);
        let mu0 = idx.column(MeasureId::Occupation, &MultiIndex::zero(n)).unwrap();
        assert_eq!(total[&mu0], -(n as f64));
        assert_eq!(total.len(), n + 1);
    }

    #[test]
    fn scalar_order_ten_structure() {
        let relax = assemble(&bare_scalar(), 10, Sense::Min).unwrap();
        assert_eq!(relax.equalities.len(), 11);
        let sizes: Vec<(String, usize)> = relax
            .blocks
            .iter()
            .map(|b| (b.measure.to_string(), b.size()))
            .collect();
        assert_eq!(
            sizes,
            vec![
                ("mu".into(), 6),
                ("mu".into(), 5),
                ("nu1".into(), 6),
                ("nu1".into(), 5),
                ("nu1".into(), 5)
            ]
        );
        assert_eq!(relax.indexing.num_vars(), 22);
        let max = assemble(&bare_scalar(), 10, Sense::Max).unwrap();
        assert_eq!(max.equalities, relax.equalities);
        assert_eq!(max.objective, relax.objective);
        assert_eq!(max.to_conic().blocks, relax.to_conic().blocks);
    }

    #[test]
    fn every_variable_sits_in_a_block() {
        for prob in [bare_scalar(), scalar_problem(), brownian_ball(2)] {
            let relax = assemble(&prob, 4, Sense::Min).unwrap();
            let mut seen = vec![false; relax.indexing.num_vars()];
            for b in &relax.blocks {
                for &(k, ..) in &b.block.terms {
                    seen[k] = true;
                }
            }
            assert!(seen.iter().all(|&s| s));
        }
    }

    #[test]
    fn order_two_scalar_lower_bound() {
        let relax = assemble(&bare_scalar(), 2, Sense::Min).unwrap();
        let sol = solve(&relax.to_conic(), &SolverSettings::default());
        assert!(sol.status.is_usable(), "{:?}", sol.status);
        assert!((sol.primal_objective - 0.65).abs() < 1e-6, "{}", sol.primal_objective);
    }

    #[test]
    fn unit_ball_is_exact_and_forces_occupation_mass() {
        for n in 1..=3 {
            let prob = brownian_ball(n);
            for sense in [Sense::Min] {
                let relax = assemble(&prob, 2, sense).unwrap();
                let sol = solve(&relax.to_conic(), &SolverSettings::default());
                assert_eq!(sol.status, Status::Optimal);
                assert!((sol.primal_objective - 1.0).abs() < 1e-6);
                let mu0 = relax.indexing.column(MeasureId::Occupation, &MultiIndex::zero(n)).unwrap();
                assert!((sol.x[mu0] - 1.0 / n as f64).abs() < 1e-6, "n={n}: {}", sol.x[mu0]);
            }
        }
    }
}
