//! Exact facial reduction of an assembled relaxation before it is handed to
//! the interior-point solver.
//!
//! Exit measures live on the zero set of the boundary equalities, so their
//! moment matrices are singular and the `+p`/`-p` localizing pair admits no
//! strictly positive slack. Interior-point iterates then drift along an
//! unbounded dual face and accuracy stalls. This pass rewrites the program
//! into an equivalent one with strictly feasible points:
//!
//! * each `+p`/`-p` pair becomes the distinct linear rows
//!   `l_nu(p z^delta) = 0` read off the `+p` block;
//! * every other block of that exit measure is compressed to the orthogonal
//!   complement of the coefficient vectors of `p z^beta`, which the rows
//!   above force into its kernel.
//!
//! Solutions are lifted back so that the duals refer to the original blocks
//! and satisfy the original stationarity condition.

use nalgebra::{DMatrix, DVector};
use sosexit_sdp::{residuals, ConicProgram, EqualityRow, LmiBlock, Solution};

use super::{BlockKind, SdpProblem};
use crate::poly::{basis, MultiIndex, Polynomial};

/// Relative threshold below which a row is treated as linearly dependent.
const RANK_TOL: f64 = 1e-10;
/// Relative eigenvalue threshold when splitting off a kernel.
const KERNEL_TOL: f64 = 1e-12;

enum Lift {
    Keep(usize),
    Project { block: usize, basis: DMatrix<f64> },
    /// Whole block lies in the kernel; its dual is zero.
    Drop,
    /// `+p` half: `(reduced row, i, j)` for every entry that became a row.
    EqualityPlus { entries: Vec<(usize, usize, usize)> },
    EqualityMinus,
}

pub(crate) struct ReducedProgram {
    pub program: ConicProgram,
    row_map: Vec<Option<usize>>,
    lifts: Vec<Lift>,
}

/// Incremental orthonormal basis used to drop dependent rows.
struct RowSpace {
    dim: usize,
    basis: Vec<DVector<f64>>,
}

impl RowSpace {
    fn try_add(&mut self, coeffs: &[(usize, f64)]) -> bool {
        let mut v = DVector::zeros(self.dim);
        for &(k, a) in coeffs {
            v[k] += a;
        }
        let norm0 = v.norm();
        if norm0 == 0.0 {
            return false;
        }
        for _ in 0..2 {
            for q in &self.basis {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= RANK_TOL * norm0 {
            return false;
        }
        self.basis.push(v / norm);
        true
    }
}

fn coefficient_vector(p: &Polynomial, basis_index: &[MultiIndex]) -> DVector<f64> {
    let mut v = DVector::zeros(basis_index.len());
    for (alpha, c) in p.terms() {
        let pos = basis_index
            .iter()
            .position(|b| b == alpha)
            .expect("kernel polynomial fits the block basis");
        v[pos] = c;
    }
    v
}

/// Orthonormal basis of the complement of the column span of `k`.
fn complement(k: &DMatrix<f64>) -> DMatrix<f64> {
    let size = k.nrows();
    let gram = k * k.transpose();
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, &e| m.max(e));
    let mut cols: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &e)| e <= KERNEL_TOL * top)
        .map(|(i, &e)| (e, eig.eigenvectors.column(i).into_owned()))
        .collect();
    cols.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = DMatrix::zeros(size, cols.len());
    for (j, (_, c)) in cols.iter().enumerate() {
        out.set_column(j, c);
    }
    out
}

fn project_block(block: &LmiBlock, n: &DMatrix<f64>, num_vars: usize) -> LmiBlock {
    let r = n.ncols();
    let mut per_var: Vec<Option<DMatrix<f64>>> = vec![None; num_vars];
    for &(k, i, j, a) in &block.terms {
        let m = per_var[k].get_or_insert_with(|| DMatrix::zeros(r, r));
        let ni = n.row(i).transpose();
        let nj = n.row(j).transpose();
        if i == j {
            m.ger(a, &ni, &ni, 1.0);
        } else {
            m.ger(a, &ni, &nj, 1.0);
            m.ger(a, &nj, &ni, 1.0);
        }
    }
    let mut out = LmiBlock::new(r, format!("{} (reduced)", block.label));
    let f0 = n.transpose() * block.constant_matrix() * n;
    for i in 0..r {
        for j in i..r {
            out.add_constant(i, j, f0[(i, j)]);
        }
    }
    for (k, m) in per_var.iter().enumerate() {
        let Some(m) = m else { continue };
        let scale = m.amax();
        for i in 0..r {
            for j in i..r {
                if m[(i, j)].abs() > 1e-15 * scale {
                    out.add_term(k, i, j, m[(i, j)]);
                }
            }
        }
    }
    out
}

/// Kernel vectors of a block of `measure` at `order` with multiplier `q`,
/// implied by the equality rows of `+p` blocks `(p, order_p)`.
fn kernel(
    n_vars: usize,
    order: u32,
    q_degree: u32,
    equalities: &[(&Polynomial, u32)],
) -> Option<DMatrix<f64>> {
    let b = basis(n_vars, order);
    let mut cols = Vec::new();
    for &(p, op) in equalities {
        let dp = p.degree();
        if dp > order {
            continue;
        }
        let by_size = order - dp;
        let by_rows = (2 * op).checked_sub(q_degree + order);
        let Some(by_rows) = by_rows else { continue };
        for beta in basis(n_vars, by_size.min(by_rows)).iter() {
            let shifted = p
                .try_mul(&Polynomial::monomial(beta.clone(), 1.0))
                .expect("same dimension");
            cols.push(coefficient_vector(&shifted, b.monomials()));
        }
    }
    if cols.is_empty() {
        None
    } else {
        Some(DMatrix::from_columns(&cols))
    }
}

pub(crate) fn reduce(problem: &SdpProblem) -> ReducedProgram {
    let num_vars = problem.indexing.num_vars();
    let dim = problem.indexing.dim();
    let mut space = RowSpace {
        dim: num_vars,
        basis: Vec::new(),
    };
    let mut equalities = Vec::new();
    let mut row_map = Vec::new();
    for row in &problem.equalities {
        if space.try_add(&row.coeffs) {
            row_map.push(Some(equalities.len()));
            equalities.push(row.clone());
        } else {
            row_map.push(None);
        }
    }

    let mut blocks = Vec::new();
    let mut lifts = Vec::new();
    for spec in &problem.blocks {
        match spec.kind {
            BlockKind::EqualityPlus => {
                let mut by_entry: std::collections::BTreeMap<(usize, usize), Vec<(usize, f64)>> =
                    Default::default();
                for &(k, i, j, a) in &spec.block.terms {
                    by_entry.entry((i, j)).or_default().push((k, a));
                }
                let mut entries = Vec::new();
                for ((i, j), mut coeffs) in by_entry {
                    coeffs.sort_by_key(|e| e.0);
                    coeffs.dedup_by(|b, a| {
                        if a.0 == b.0 {
                            a.1 += b.1;
                            true
                        } else {
                            false
                        }
                    });
                    coeffs.retain(|e| e.1 != 0.0);
                    if space.try_add(&coeffs) {
                        entries.push((equalities.len(), i, j));
                        equalities.push(EqualityRow { coeffs, rhs: 0.0 });
                    }
                }
                lifts.push(Lift::EqualityPlus { entries });
            }
            BlockKind::EqualityMinus => lifts.push(Lift::EqualityMinus),
            BlockKind::Moment | BlockKind::Localizing => {
                let eqs: Vec<(&Polynomial, u32)> = problem
                    .blocks
                    .iter()
                    .filter(|b| b.kind == BlockKind::EqualityPlus && b.measure == spec.measure)
                    .map(|b| (&b.multiplier, b.order))
                    .collect();
                match kernel(dim, spec.order, spec.multiplier.degree(), &eqs) {
                    None => {
                        lifts.push(Lift::Keep(blocks.len()));
                        blocks.push(spec.block.clone());
                    }
                    Some(k) => {
                        let n = complement(&k);
                        if n.ncols() == 0 {
                            lifts.push(Lift::Drop);
                        } else {
                            lifts.push(Lift::Project {
                                block: blocks.len(),
                                basis: n.clone(),
                            });
                            blocks.push(project_block(&spec.block, &n, num_vars));
                        }
                    }
                }
            }
        }
    }

    ReducedProgram {
        program: ConicProgram {
            num_vars,
            sense: problem.sense,
            objective: problem.objective.clone(),
            equalities,
            blocks,
        },
        row_map,
        lifts,
    }
}

/// Splits a symmetric matrix into its positive and negative parts.
fn split(lambda: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = lambda.clone().symmetric_eigen();
    let q = &eig.eigenvectors;
    let pos = eig.eigenvalues.map(|e| e.max(0.0));
    let neg = eig.eigenvalues.map(|e| (-e).max(0.0));
    (
        q * DMatrix::from_diagonal(&pos) * q.transpose(),
        q * DMatrix::from_diagonal(&neg) * q.transpose(),
    )
}

impl ReducedProgram {
    /// Maps a solution of the reduced program back to the original blocks
    /// and rows; residuals are recomputed against `original`.
    pub fn lift(&self, original: &ConicProgram, reduced: Solution) -> Solution {
        let eq_duals = self
            .row_map
            .iter()
            .map(|r| r.map_or(0.0, |i| reduced.eq_duals[i]))
            .collect();
        let mut block_duals: Vec<DMatrix<f64>> = Vec::with_capacity(self.lifts.len());
        for (lift, block) in self.lifts.iter().zip(&original.blocks) {
            let size = block.size;
            let z = match lift {
                Lift::Keep(b) => reduced.block_duals[*b].clone(),
                Lift::Project { block, basis } => {
                    let z = basis * &reduced.block_duals[*block] * basis.transpose();
                    (&z + z.transpose()) * 0.5
                }
                Lift::Drop => DMatrix::zeros(size, size),
                Lift::EqualityPlus { entries } => {
                    let mut lam = DMatrix::zeros(size, size);
                    for &(row, i, j) in entries {
                        let l = reduced.eq_duals[row];
                        if i == j {
                            lam[(i, i)] += l;
                        } else {
                            lam[(i, j)] += 0.5 * l;
                            lam[(j, i)] += 0.5 * l;
                        }
                    }
                    let (plus, minus) = split(&lam);
                    block_duals.push(plus);
                    minus
                }
                Lift::EqualityMinus => continue,
            };
            block_duals.push(z);
        }
        let mut out = Solution {
            eq_duals,
            block_duals,
            ..reduced
        };
        out.residuals = residuals(original, &out);
        out
    }
}
