//! Small programs with known optima, used as solver smoke tests.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::{ConicProgram, LmiBlock, Sense};

pub struct Example {
    pub name: &'static str,
    pub program: ConicProgram,
    pub optimum: f64,
    /// Optimal point when it is unique.
    pub argmin: Option<Vec<f64>>,
}

/// `minimize x` subject to `[[x, 1], [1, x]] >= 0`; optimum `x = 1`.
pub fn two_by_two() -> Example {
    let mut p = ConicProgram::new(1, Sense::Min);
    p.objective = vec![1.0];
    let mut b = LmiBlock::new(2, "[[x,1],[1,x]]");
    b.add_constant(0, 1, 1.0);
    b.add_term(0, 0, 0, 1.0);
    b.add_term(0, 1, 1, 1.0);
    p.blocks.push(b);
    Example {
        name: "2x2 block",
        program: p,
        optimum: 1.0,
        argmin: Some(vec![1.0]),
    }
}

/// `minimize x` subject to `x - 3 >= 0` as a 1x1 block; optimum `x = 3`.
pub fn lp_bound() -> Example {
    let mut p = ConicProgram::new(1, Sense::Min);
    p.objective = vec![1.0];
    let mut b = LmiBlock::new(1, "x >= 3");
    b.add_constant(0, 0, -3.0);
    b.add_term(0, 0, 0, 1.0);
    p.blocks.push(b);
    Example {
        name: "1x1 LP",
        program: p,
        optimum: 3.0,
        argmin: Some(vec![3.0]),
    }
}

/// Single 3x3 block built around a strictly complementary pair
/// `S* = F(y*)`, `Z*` with `S* Z* = 0`, rank 1 and rank 2. The objective
/// `c_k = <F_k, Z*>` makes `y*` optimal with value `c'y*`; the three
/// entries of the kernel block of `F(y)` pin `y*` down uniquely.
pub fn planted() -> Example {
    // Householder reflection: an orthogonal eigenbasis with no zero entries.
    let v = Vector3::new(1.0, 2.0, 2.0) / 3.0;
    let q = Matrix3::identity() - v * v.transpose() * 2.0;
    let s_star = q * Matrix3::from_diagonal(&Vector3::new(1.5, 0.0, 0.0)) * q.transpose();
    let z_star = q * Matrix3::from_diagonal(&Vector3::new(0.0, 0.7, 1.2)) * q.transpose();
    let y_star = [0.3, -0.7, 0.5];
    let fs = [
        Matrix3::new(1.0, 0.2, -0.3, 0.2, 0.5, 0.1, -0.3, 0.1, -0.4),
        Matrix3::new(-0.2, 0.7, 0.0, 0.7, 0.3, -0.5, 0.0, -0.5, 0.9),
        Matrix3::new(0.4, -0.1, 0.6, -0.1, -0.8, 0.2, 0.6, 0.2, 0.1),
    ];
    let mut f0 = s_star;
    for (f, y) in fs.iter().zip(y_star) {
        f0 -= f * y;
    }
    let mut p = ConicProgram::new(3, Sense::Min);
    p.objective = fs.iter().map(|f| f.component_mul(&z_star).sum()).collect();
    let mut block = LmiBlock::new(3, "planted");
    for i in 0..3 {
        for j in i..3 {
            block.add_constant(i, j, f0[(i, j)]);
            for (k, f) in fs.iter().enumerate() {
                block.add_term(k, i, j, f[(i, j)]);
            }
        }
    }
    p.blocks.push(block);
    let optimum = p.objective_value(&y_star);
    Example {
        name: "planted 3x3",
        program: p,
        optimum,
        argmin: Some(y_star.to_vec()),
    }
}

pub fn all() -> Vec<Example> {
    vec![two_by_two(), lp_bound(), planted()]
}

/// Minimum eigenvalue of `F(y)` over all blocks.
pub fn min_slack_eigenvalue(program: &ConicProgram, y: &[f64]) -> f64 {
    program
        .blocks
        .iter()
        .map(|b| {
            let m: DMatrix<f64> = b.evaluate(y);
            let e: DVector<f64> = m.symmetric_eigenvalues();
            e.min()
        })
        .fold(f64::INFINITY, f64::min)
}
