//! Small dense complex linear algebra on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)].re).sum()
}

/// Adds `factor * trace(a) / n` to the diagonal.
pub fn load_diagonal(a: &mut CMatrix, factor: f64) {
    let n = a.nrows();
    if n == 0 || factor == 0.0 {
        return;
    }
    let load = factor * trace_re(a) / n as f64;
    for i in 0..n {
        a[(i, i)] += Complex64::new(load, 0.0);
    }
}

/// Symmetrizes `a` to `(a + a^H) / 2`.
pub fn hermitize(a: &mut CMatrix) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)].im = 0.0;
        for j in (i + 1)..n {
            let v = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = v;
            a[(j, i)] = v.conj();
        }
    }
}

/// Solves `a x = b` for Hermitian `a`: Cholesky first, fully pivoted LU if
/// `a` is not numerically positive definite.
pub fn solve_hermitian(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    // nalgebra takes complex square roots of negative pivots, so an
    // indefinite matrix can "factor"; only accept real positive pivots.
    if let Some(chol) = Cholesky::new(a.clone()) {
        let l = chol.l_dirty();
        let pivots_ok = (0..a.nrows()).all(|i| {
            let d = l[(i, i)];
            d.re > 0.0 && d.im.abs() <= 1e-12 * d.re
        });
        if pivots_ok {
            let x = chol.solve(b);
            if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Ok(x);
            }
        }
    }
    let lu = a.clone().full_piv_lu();
    if !lu.is_invertible() {
        return Err(Error::numerical("singular system"));
    }
    let x = lu.solve(b).ok_or_else(|| Error::numerical("singular system"))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::numerical("non-finite solution"));
    }
    Ok(x)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let mut h = a.clone();
    hermitize(&mut h);
    let eig = h.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Principal eigenvector of a Hermitian matrix.
///
/// When the top eigenvalue is (numerically) repeated, the eigenvector with
/// the largest magnitude at `pivot` is taken, first index on ties.
pub fn principal_eigenvector(a: &CMatrix, pivot: usize) -> (f64, CVector) {
    let (values, vectors) = hermitian_eigen(a);
    let n = values.len();
    let top = values[n - 1];
    let tol = 1e-12 * values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut best = n - 1;
    let mut best_mag = -1.0;
    for i in 0..n {
        if top - values[i] <= tol {
            let mag = vectors[(pivot, i)].norm();
            if mag > best_mag + 1e-12 {
                best = i;
                best_mag = mag;
            }
        }
    }
    (values[best], vectors.column(best).into_owned())
}

/// Rebuilds a Hermitian matrix with eigenvalues clamped from below.
pub fn floor_eigenvalues(a: &CMatrix, floor: f64) -> CMatrix {
    let (values, vectors) = hermitian_eigen(a);
    if values.iter().all(|&v| v >= floor) {
        let mut h = a.clone();
        hermitize(&mut h);
        return h;
    }
    let n = values.len();
    let mut out = CMatrix::zeros(n, n);
    for (k, &v) in values.iter().enumerate() {
        let v = v.max(floor);
        let col = vectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += col[i] * col[j].conj() * v;
            }
        }
    }
    hermitize(&mut out);
    out
}

/// Quadratic form `x^H a x`, real part.
pub fn quad_form(a: &CMatrix, x: &CVector) -> f64 {
    (x.adjoint() * a * x)[(0, 0)].re
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pd(n: usize, seed: u64) -> CMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = CMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        &g * g.adjoint() + CMatrix::identity(n, n) * Complex64::new(0.1, 0.0)
    }

    #[test]
    fn eigen_reconstructs_complex_hermitian() {
        let a = random_pd(5, 1);
        let (vals, vecs) = hermitian_eigen(&a);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMatrix::from_diagonal(&CVector::from_iterator(5, vals.iter().map(|&v| Complex64::new(v, 0.0))));
        let rec = &vecs * d * vecs.adjoint();
        assert!((rec - &a).norm() < 1e-10 * a.norm());
    }

    #[test]
    fn solve_matches_product() {
        let a = random_pd(4, 2);
        let b = CMatrix::from_fn(4, 2, |i, j| Complex64::new(i as f64, j as f64 - 0.5));
        let x = solve_hermitian(&a, &b).unwrap();
        assert!((&a * x - b).norm() < 1e-10);
    }

    #[test]
    fn indefinite_falls_back_to_lu_and_singular_fails() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-2.0, 0.0),
        ]));
        let b = CMatrix::from_element(2, 1, Complex64::new(1.0, 0.0));
        let x = solve_hermitian(&a, &b).unwrap();
        assert!((x[(1, 0)].re + 0.5).abs() < 1e-14, "{x}");
        assert!(solve_hermitian(&CMatrix::zeros(2, 2), &b).is_err());
    }

    #[test]
    fn identity_principal_vector_follows_pivot() {
        let (_, v) = principal_eigenvector(&CMatrix::identity(3, 3), 2);
        assert!((v[2].norm() - 1.0).abs() < 1e-12);
    }
}
