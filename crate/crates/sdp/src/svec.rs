use nalgebra::{DMatrix, DVector};

/// Isometric vectorization of a symmetric matrix: lower triangle stored
/// column by column, off-diagonal entries scaled by `sqrt(2)` so that
/// `<M, N>_F = svec(M) . svec(N)`.
pub fn svec(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "svec needs a square matrix");
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in j..n {
            debug_assert!(
                (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * (1.0 + m[(i, j)].abs()),
                "svec input must be symmetric"
            );
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(sqrt2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    DVector::from_vec(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> DMatrix<f64> {
    let len = v.len();
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    assert_eq!(n * (n + 1) / 2, len, "length is not triangular");
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                m[(i, j)] = v[k] * inv_sqrt2;
                m[(j, i)] = v[k] * inv_sqrt2;
            }
            k += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity() {
        let v = svec(&DMatrix::identity(2, 2));
        assert_eq!(v.as_slice(), &[1.0, 0.0, 1.0]);
    }

    proptest! {
        #[test]
        fn isometry_and_round_trip(
            n in 1usize..6,
            seed in prop::collection::vec(-5.0f64..5.0, 36),
            other in prop::collection::vec(-5.0f64..5.0, 36),
        ) {
            let sym = |data: &[f64]| {
                let a = DMatrix::from_fn(n, n, |i, j| data[i * 6 + j]);
                (&a + a.transpose()) * 0.5
            };
            let m = sym(&seed);
            let q = sym(&other);
            let back = smat(&svec(&m));
            prop_assert!((&back - &m).amax() <= 1e-15 * (1.0 + m.amax()));
            let frob = m.component_mul(&q).sum();
            prop_assert!((svec(&m).dot(&svec(&q)) - frob).abs() <= 1e-12 * (1.0 + frob.abs()));
            prop_assert!((svec(&m).norm_squared() - m.norm_squared()).abs() <= 1e-12 * (1.0 + m.norm_squared()));
        }
    }
}
