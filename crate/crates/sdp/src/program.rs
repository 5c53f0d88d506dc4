use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("objective has {got} entries, expected {expected}")]
    ObjectiveLength { expected: usize, got: usize },
    #[error("equality row {0} has no nonzero coefficient")]
    EmptyRow(usize),
    #[error("variable index {var} out of range ({num_vars} variables)")]
    VariableOutOfRange { var: usize, num_vars: usize },
    #[error("entry ({row}, {col}) outside block {block} of size {size}")]
    EntryOutOfRange {
        block: usize,
        row: usize,
        col: usize,
        size: usize,
    },
    #[error("block {0} has size zero")]
    EmptyBlock(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    pub(crate) fn sign(self) -> f64 {
        match self {
            Sense::Min => 1.0,
            Sense::Max => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualityRow {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl EqualityRow {
    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(k, a)| a * x[k]).sum()
    }
}

/// Affine symmetric matrix `F0 + sum_k y_k F_k` constrained to be PSD.
/// Entries are stored for the upper triangle only (`row <= col`); repeated
/// entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub size: usize,
    pub label: String,
    pub constant: Vec<(usize, usize, f64)>,
    /// `(variable, row, col, coefficient)`.
    pub terms: Vec<(usize, usize, usize, f64)>,
}

impl LmiBlock {
    pub fn new(size: usize, label: impl Into<String>) -> Self {
        LmiBlock {
            size,
            label: label.into(),
            constant: Vec::new(),
            terms: Vec::new(),
        }
    }

    pub fn add_constant(&mut self, row: usize, col: usize, value: f64) {
        if value != 0.0 {
            self.constant.push((row.min(col), row.max(col), value));
        }
    }

    pub fn add_term(&mut self, var: usize, row: usize, col: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push((var, row.min(col), row.max(col), coeff));
        }
    }

    pub fn constant_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for &(i, j, v) in &self.constant {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    /// `F0 + sum_k y_k F_k`.
    pub fn evaluate(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = self.constant_matrix();
        self.add_linear_part(y, 1.0, &mut m);
        m
    }

    /// `out += scale * sum_k y_k F_k`.
    pub(crate) fn add_linear_part(&self, y: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        for &(k, i, j, a) in &self.terms {
            let v = scale * a * y[k];
            out[(i, j)] += v;
            if i != j {
                out[(j, i)] += v;
            }
        }
    }

    /// `out[k] += scale * <F_k, Z>`.
    pub(crate) fn add_adjoint(&self, z: &DMatrix<f64>, scale: f64, out: &mut [f64]) {
        for &(k, i, j, a) in &self.terms {
            let w = if i == j { z[(i, j)] } else { z[(i, j)] + z[(j, i)] };
            out[k] += scale * a * w;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub num_vars: usize,
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub equalities: Vec<EqualityRow>,
    pub blocks: Vec<LmiBlock>,
}

impl ConicProgram {
    pub fn new(num_vars: usize, sense: Sense) -> Self {
        ConicProgram {
            num_vars,
            sense,
            objective: vec![0.0; num_vars],
            equalities: Vec::new(),
            blocks: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        if self.objective.len() != self.num_vars {
            return Err(ProgramError::ObjectiveLength {
                expected: self.num_vars,
                got: self.objective.len(),
            });
        }
        let check_var = |var: usize| {
            if var >= self.num_vars {
                Err(ProgramError::VariableOutOfRange {
                    var,
                    num_vars: self.num_vars,
                })
            } else {
                Ok(())
            }
        };
        for (r, row) in self.equalities.iter().enumerate() {
            if row.coeffs.iter().all(|&(_, a)| a == 0.0) {
                return Err(ProgramError::EmptyRow(r));
            }
            for &(k, _) in &row.coeffs {
                check_var(k)?;
            }
        }
        for (b, block) in self.blocks.iter().enumerate() {
            if block.size == 0 {
                return Err(ProgramError::EmptyBlock(b));
            }
            let check_entry = |row: usize, col: usize| {
                if row >= block.size || col >= block.size {
                    Err(ProgramError::EntryOutOfRange {
                        block: b,
                        row,
                        col,
                        size: block.size,
                    })
                } else {
                    Ok(())
                }
            };
            for &(i, j, _) in &block.constant {
                check_entry(i, j)?;
            }
            for &(k, i, j, _) in &block.terms {
                check_var(k)?;
                check_entry(i, j)?;
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Sum of block sizes (the barrier parameter of the cone).
    pub fn cone_degree(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    /// Relative primal/dual residual tolerance.
    pub feas_tol: f64,
    /// Relative duality gap tolerance.
    pub gap_tol: f64,
    pub max_iters: usize,
    pub verbose: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iters: 200,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    MaxIters,
}

impl Status {
    pub fn is_usable(self) -> bool {
        matches!(self, Status::Optimal | Status::NearOptimal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `||Ax - b||` combined with the PSD violation of `F(x)`.
    pub primal: f64,
    /// `||sign*c - A'lambda - F*(Z)||` combined with the PSD violation of `Z`.
    pub dual: f64,
    /// `|primal objective - dual objective|`.
    pub gap: f64,
    pub rel_primal: f64,
    pub rel_dual: f64,
    pub rel_gap: f64,
}

impl Residuals {
    pub fn max_rel_infeasibility(&self) -> f64 {
        self.rel_primal.max(self.rel_dual)
    }

    pub fn worst(&self) -> f64 {
        self.rel_primal.max(self.rel_dual).max(self.rel_gap)
    }
}

/// Primal-dual pair. The multipliers satisfy, at optimality,
/// `A' eq_duals + F*(block_duals) = s c` with `s = +1` for minimization and
/// `s = -1` for maximization, where `F*(Z)_k = <F_k, Z>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub eq_duals: Vec<f64>,
    pub block_duals: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub residuals: Residuals,
    pub iterations: usize,
}

/// Dual objective `s (b'lambda - sum_j <F0_j, Z_j>)` in the program's sense.
pub(crate) fn dual_objective(program: &ConicProgram, lam: &[f64], z: &[DMatrix<f64>]) -> f64 {
    let by: f64 = program
        .equalities
        .iter()
        .zip(lam)
        .map(|(r, l)| r.rhs * l)
        .sum();
    let f0z: f64 = program
        .blocks
        .iter()
        .zip(z)
        .map(|(b, zj)| {
            b.constant
                .iter()
                .map(|&(i, j, v)| if i == j { v * zj[(i, j)] } else { v * (zj[(i, j)] + zj[(j, i)]) })
                .sum::<f64>()
        })
        .sum();
    program.sense.sign() * (by - f0z)
}

fn negative_part_sq(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)].min(0.0).powi(2);
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .map(|&e| e.min(0.0).powi(2))
        .sum()
}

pub(crate) fn data_norms(program: &ConicProgram) -> (f64, f64, f64) {
    let b = program
        .equalities
        .iter()
        .map(|r| r.rhs * r.rhs)
        .sum::<f64>()
        .sqrt();
    let f0 = program
        .blocks
        .iter()
        .map(|bl| bl.constant_matrix().norm_squared())
        .sum::<f64>()
        .sqrt();
    let c = program.objective.iter().map(|c| c * c).sum::<f64>().sqrt();
    (b, f0, c)
}

pub(crate) fn residuals_at(
    program: &ConicProgram,
    x: &[f64],
    lam: &[f64],
    z: &[DMatrix<f64>],
) -> Residuals {
    let sign = program.sense.sign();
    let mut primal_sq = 0.0;
    for row in &program.equalities {
        primal_sq += (row.dot(x) - row.rhs).powi(2);
    }
    for block in &program.blocks {
        primal_sq += negative_part_sq(&block.evaluate(x));
    }
    let mut stat: Vec<f64> = program.objective.iter().map(|c| sign * c).collect();
    for (row, l) in program.equalities.iter().zip(lam) {
        for &(k, a) in &row.coeffs {
            stat[k] -= a * l;
        }
    }
    for (block, zj) in program.blocks.iter().zip(z) {
        block.add_adjoint(zj, -1.0, &mut stat);
    }
    let mut dual_sq: f64 = stat.iter().map(|v| v * v).sum();
    for zj in z {
        dual_sq += negative_part_sq(zj);
    }
    let pobj = program.objective_value(x);
    let dobj = dual_objective(program, lam, z);
    let (nb, nf0, nc) = data_norms(program);
    let primal = primal_sq.sqrt();
    let dual = dual_sq.sqrt();
    let gap = (pobj - dobj).abs();
    Residuals {
        primal,
        dual,
        gap,
        rel_primal: primal / (1.0 + nb.max(nf0)),
        rel_dual: dual / (1.0 + nc),
        rel_gap: gap / (1.0 + pobj.abs()),
    }
}

/// Residuals of a candidate solution, recomputed from the program data only.
pub fn residuals(program: &ConicProgram, solution: &Solution) -> Residuals {
    residuals_at(
        program,
        &solution.x,
        &solution.eq_duals,
        &solution.block_duals,
    )
}
