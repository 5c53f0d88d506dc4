//! Point sampling on semialgebraic pieces: rejection in a box, plus Newton
//! projection for equality-defined pieces. In one dimension equality pieces
//! are finite sets and their points are enumerated from polynomial roots.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::model::SemialgebraicPiece;
use crate::poly::Polynomial;

const FEAS_TOL: f64 = 1e-9;

/// Up to `count` points of `piece` inside the box `[-half_width, half_width]^n`.
/// One-dimensional equality pieces return all their (finitely many) points.
pub fn sample_piece<R: Rng>(
    piece: &SemialgebraicPiece,
    half_width: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let n = piece.dim();
    if piece.equalities.is_empty() {
        return rejection(piece, n, half_width, count, rng);
    }
    if n == 1 {
        if let Some(points) = univariate_points(piece) {
            return points;
        }
    }
    projection(piece, n, half_width, count, rng)
}

fn rejection<R: Rng>(
    piece: &SemialgebraicPiece,
    n: usize,
    half_width: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(2000).max(10_000);
    let mut z = vec![0.0; n];
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        for zi in z.iter_mut() {
            *zi = rng.random_range(-half_width..=half_width);
        }
        if piece.inequalities.iter().all(|p| p.eval(&z) >= 0.0) {
            out.push(z.clone());
        }
    }
    out
}

fn projection<R: Rng>(
    piece: &SemialgebraicPiece,
    n: usize,
    half_width: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let grads: Vec<Vec<Polynomial>> = piece
        .equalities
        .iter()
        .map(|h| (0..n).map(|i| h.partial(i).expect("index in range")).collect())
        .collect();
    let mut out = Vec::with_capacity(count);
    let max_attempts = count.saturating_mul(200).max(1000);
    for _ in 0..max_attempts {
        if out.len() == count {
            break;
        }
        let start: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-half_width..=half_width))
            .collect();
        if let Some(z) = newton_project(&piece.equalities, &grads, start) {
            let in_box = z.iter().all(|x| x.abs() <= half_width * (1.0 + 1e-12));
            if in_box && piece.inequalities.iter().all(|p| p.eval(&z) >= -FEAS_TOL) {
                out.push(z);
            }
        }
    }
    out
}

/// Gauss-Newton projection onto `{h_j = 0}` using the minimum-norm step.
pub fn newton_project(
    eqs: &[Polynomial],
    grads: &[Vec<Polynomial>],
    mut z: Vec<f64>,
) -> Option<Vec<f64>> {
    let n = z.len();
    let m = eqs.len();
    for _ in 0..60 {
        let h = DVector::from_iterator(m, eqs.iter().map(|p| p.eval(&z)));
        let scale = 1.0 + z.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        if h.amax() <= 1e-13 * scale {
            return Some(z);
        }
        let jac = DMatrix::from_fn(m, n, |j, i| grads[j][i].eval(&z));
        let jjt = &jac * jac.transpose();
        let w = jjt.lu().solve(&h)?;
        let step = jac.transpose() * w;
        if !step.iter().all(|s| s.is_finite()) {
            return None;
        }
        for (zi, si) in z.iter_mut().zip(step.iter()) {
            *zi -= si;
        }
    }
    let h = eqs.iter().fold(0.0f64, |a, p| a.max(p.eval(&z).abs()));
    (h <= 1e-10).then_some(z)
}

fn univariate_points(piece: &SemialgebraicPiece) -> Option<Vec<Vec<f64>>> {
    let first = piece.equalities.iter().find(|p| !p.is_zero())?;
    let mut points = Vec::new();
    for root in real_roots(first) {
        let z = vec![root];
        if piece.contains(&z, 1e-9) {
            points.push(z);
        }
    }
    Some(points)
}

/// Real roots of a univariate polynomial, ascending, via companion-matrix
/// eigenvalues polished by Newton steps.
pub fn real_roots(p: &Polynomial) -> Vec<f64> {
    let d = p.degree() as usize;
    let mut coeffs = vec![0.0; d + 1];
    for (a, c) in p.terms() {
        coeffs[a.exponents()[0] as usize] = c;
    }
    // factor out roots at zero
    let low = coeffs.iter().position(|&c| c != 0.0).unwrap_or(0);
    let mut roots = Vec::new();
    if low > 0 {
        roots.push(0.0);
    }
    let reduced = &coeffs[low..];
    let k = reduced.len() - 1;
    if k >= 1 {
        let lead = reduced[k];
        let mut comp = DMatrix::<f64>::zeros(k, k);
        for i in 1..k {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..k {
            comp[(i, k - 1)] = -reduced[i] / lead;
        }
        let dp = p.partial(0).expect("univariate");
        for ev in comp.complex_eigenvalues().iter() {
            if ev.im.abs() > 1e-7 * (1.0 + ev.re.abs()) {
                continue;
            }
            let mut x = ev.re;
            for _ in 0..8 {
                let d = dp.eval(&[x]);
                if d == 0.0 {
                    break;
                }
                x -= p.eval(&[x]) / d;
            }
            roots.push(x);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    roots
}
