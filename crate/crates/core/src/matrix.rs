//! Dense complex and Hermitian matrix kernels.
//!
//! Everything is stored as full `nalgebra` matrices; the sizes in this crate
//! stay below a few dozen rows, so nothing is packed or sparse.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type ComplexMatrix = DMatrix<C64>;
pub type ComplexVector = DVector<C64>;
pub type RealMatrix = DMatrix<f64>;

/// Relative PSD tolerance, measured against the spectral radius.
pub const PSD_TOL: f64 = 1e-10;

const EIG_MAX_ITER: usize = 10_000;

/// A square complex matrix that is exactly Hermitian: `m[(i,j)] == conj(m[(j,i)])`
/// and the diagonal is real.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    /// Wraps `m` after checking it is Hermitian to within `1e-9` relative
    /// asymmetry, then symmetrizes it exactly.
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "Hermitian matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite entry".into()));
        }
        let asym = (&m - m.adjoint()).camax();
        let scale = m.camax().max(f64::MIN_POSITIVE);
        if asym > 1e-9 * scale {
            return Err(Error::NotHermitian(asym));
        }
        Ok(Self::symmetrize(m))
    }

    /// Returns `(m + m^H) / 2` with the diagonal imaginary parts zeroed.
    pub fn symmetrize(m: ComplexMatrix) -> Self {
        let mut h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        for i in 0..h.nrows() {
            h[(i, i)].im = 0.0;
        }
        HermitianMatrix(h)
    }

    pub fn zeros(n: usize) -> Self {
        HermitianMatrix(ComplexMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        HermitianMatrix(ComplexMatrix::identity(n, n))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let mut m = ComplexMatrix::zeros(n, n);
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        HermitianMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_inner(self) -> ComplexMatrix {
        self.0
    }

    /// Real trace.
    pub fn trace_re(&self) -> f64 {
        (0..self.dim()).map(|i| self.0[(i, i)].re).sum()
    }

    /// `Tr{self * other}` for two Hermitian matrices, which is real.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        self.0
            .iter()
            .zip(other.0.transpose().iter())
            .map(|(a, b)| (a * b).re)
            .sum()
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(&self.0 * C64::new(s, 0.0))
    }

    pub fn add(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermitianMatrix) -> HermitianMatrix {
        HermitianMatrix(&self.0 - &other.0)
    }

    /// `A X A^H`, which is Hermitian whenever `X` is.
    pub fn congruence(&self, a: &ComplexMatrix) -> HermitianMatrix {
        HermitianMatrix::symmetrize(a * &self.0 * a.adjoint())
    }

    /// Smallest eigenvalue.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = hermitian_eig(self)?;
        Ok(*vals.last().unwrap_or(&0.0))
    }

    /// Clips negative eigenvalues to zero.
    pub fn psd_part(&self) -> Result<HermitianMatrix> {
        let (vals, vecs) = hermitian_eig(self)?;
        let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
        Ok(recompose(&clipped, &vecs))
    }
}

impl Deref for HermitianMatrix {
    type Target = ComplexMatrix;
    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

/// Column-stacking vectorization.
pub fn vec(m: &ComplexMatrix) -> ComplexVector {
    // nalgebra storage is column-major already
    ComplexVector::from_iterator(m.len(), m.iter().copied())
}

/// Inverse of [`vec`].
pub fn unvec(v: &ComplexVector, rows: usize, cols: usize) -> ComplexMatrix {
    assert_eq!(v.len(), rows * cols);
    ComplexMatrix::from_iterator(rows, cols, v.iter().copied())
}

pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    a.kronecker(b)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted in
/// descending order with matching unitary eigenvector columns.
pub fn hermitian_eig(m: &HermitianMatrix) -> Result<(Vec<f64>, ComplexMatrix)> {
    let n = m.dim();
    if n == 0 {
        return Ok((Vec::new(), ComplexMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.0.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = ComplexMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// Eigen-decomposition of a real symmetric matrix, descending order.
pub fn symmetric_eig(m: &RealMatrix) -> Result<(Vec<f64>, RealMatrix)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), RealMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = RealMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// `V diag(vals) V^H`.
pub fn recompose(vals: &[f64], vecs: &ComplexMatrix) -> HermitianMatrix {
    let mut scaled = vecs.clone();
    for (c, &v) in vals.iter().enumerate() {
        scaled.column_mut(c).scale_mut(v);
    }
    HermitianMatrix::symmetrize(scaled * vecs.adjoint())
}

/// Hermitian PSD square root. Negative eigenvalues down to
/// `-PSD_TOL * spectral_radius` are clipped to zero; anything more negative
/// is reported as [`Error::NotPsd`].
pub fn hermitian_sqrt(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    let (vals, vecs) = hermitian_eig(m)?;
    let max = vals.first().copied().unwrap_or(0.0);
    let min = vals.last().copied().unwrap_or(0.0);
    let radius = max.abs().max(min.abs());
    if min < -PSD_TOL * radius {
        return Err(Error::NotPsd {
            min_eig: min,
            max_eig: max,
        });
    }
    let roots: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    Ok(recompose(&roots, &vecs))
}

/// Maps a Hermitian `n x n` matrix to the real symmetric `2n x 2n` matrix
/// `[[Re, -Im], [Im, Re]]`.
pub fn real_embedding(m: &ComplexMatrix) -> RealMatrix {
    let n = m.nrows();
    let mut out = RealMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Reads a Hermitian matrix back out of a (not necessarily structured) real
/// `2n x 2n` symmetric matrix by averaging the two copies of each part:
/// `Re = (X11 + X22)/2`, `Im = (X21 - X12)/2`.
pub fn real_embedding_inverse(x: &RealMatrix) -> HermitianMatrix {
    let n = x.nrows() / 2;
    let m = ComplexMatrix::from_fn(n, n, |i, j| {
        C64::new(
            0.5 * (x[(i, j)] + x[(i + n, j + n)]),
            0.5 * (x[(i + n, j)] - x[(i, j + n)]),
        )
    });
    HermitianMatrix::symmetrize(m)
}

/// Cholesky-based inverse of a Hermitian positive definite matrix.
pub fn hpd_inverse(m: &HermitianMatrix) -> Result<HermitianMatrix> {
    let chol = m
        .0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SingularSystem("matrix is not positive definite".into()))?;
    Ok(HermitianMatrix::symmetrize(chol.inverse()))
}

/// Frobenius norm.
pub fn fro(m: &ComplexMatrix) -> f64 {
    m.norm()
}

/// Rows and columns of a random complex Gaussian helper used by tests and
/// scenario generation alike: entries are `CN(0, var)`.
pub fn complex_gaussian<R: rand::Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    var: f64,
) -> ComplexMatrix {
    use rand_distr::{Distribution, StandardNormal};
    let s = (var / 2.0).sqrt();
    ComplexMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(s * re, s * im)
    })
}

/// Singular values of a complex matrix, descending.
pub fn singular_values(m: &ComplexMatrix) -> Vec<f64> {
    let mut sv: Vec<f64> = if m.is_empty() {
        Vec::new()
    } else {
        m.clone().singular_values().iter().copied().collect()
    };
    sv.sort_by(|a, b| b.total_cmp(a));
    if m.ncols() > m.nrows() {
        // a wide matrix is never full column rank; append the structural zeros
        sv.extend(std::iter::repeat_n(0.0, m.ncols() - m.nrows()));
    }
    sv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let a = complex_gaussian(rng, n, n, 1.0);
        HermitianMatrix::symmetrize(&a * a.adjoint())
    }

    fn random_hermitian(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        HermitianMatrix::symmetrize(complex_gaussian(rng, n, n, 1.0))
    }

    #[test]
    fn vec_stacks_columns() {
        let z = ComplexMatrix::from_element(1, 1, c(2.0, -1.0));
        assert_eq!(vec(&z).as_slice(), &[c(2.0, -1.0)]);

        let (a, b, cc, d) = (c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0));
        let m = ComplexMatrix::from_row_slice(2, 2, &[a, b, cc, d]);
        assert_eq!(vec(&m).as_slice(), &[a, cc, b, d]);
    }

    #[test]
    fn vec_matches_index_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_psd(&mut rng, 2);
        let g = complex_gaussian(&mut rng, 2, 2, 1.0);
        let prod = q.adjoint() * g.adjoint();
        let v = vec(&prod);
        let mut idx = 0;
        for col in 0..2 {
            for row in 0..2 {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..2 {
                    acc += q[(t, row)].conj() * g[(col, t)].conj();
                }
                assert!((v[idx] - acc).norm() < 1e-14);
                idx += 1;
            }
        }
    }

    #[test]
    fn kron_identity_cases() {
        let q = ComplexMatrix::from_element(1, 1, c(3.0, 0.0));
        let k = kron(&ComplexMatrix::identity(2, 2), &q);
        assert_eq!(k, ComplexMatrix::from_diagonal_element(2, 2, c(3.0, 0.0)));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = complex_gaussian(&mut rng, 3, 3, 1.0);
        assert_eq!(kron(&ComplexMatrix::identity(1, 1), &a), a);
    }

    #[test]
    fn kron_trace_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = complex_gaussian(&mut rng, 2, 2, 1.0);
            let z = complex_gaussian(&mut rng, 2, 3, 1.0);
            let direct = (z.adjoint() * &a * &z).trace();
            let vz = vec(&z);
            let big = kron(&ComplexMatrix::identity(3, 3), &a);
            let quad = (vz.adjoint() * big * &vz)[(0, 0)];
            assert!((direct - quad).norm() < 1e-12, "{direct} vs {quad}");
        }
    }

    #[test]
    fn sqrt_known_cases() {
        let i = HermitianMatrix::identity(3);
        assert!((hermitian_sqrt(&i).unwrap().as_matrix() - i.as_matrix()).norm() < 1e-14);

        let d = HermitianMatrix::from_real_diagonal(&[4.0, 9.0]);
        let s = hermitian_sqrt(&d).unwrap();
        let expect = HermitianMatrix::from_real_diagonal(&[2.0, 3.0]);
        assert!((s.as_matrix() - expect.as_matrix()).norm() < 1e-14);
    }

    #[test]
    fn sqrt_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = random_psd(&mut rng, 3);
            let s = hermitian_sqrt(&m).unwrap();
            let back = s.as_matrix() * s.as_matrix();
            assert!((back - m.as_matrix()).norm() <= 1e-10 * m.norm());
            let (vals, _) = hermitian_eig(&s).unwrap();
            assert!(*vals.last().unwrap() >= -1e-12 * vals[0]);
        }
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        let m = HermitianMatrix::from_real_diagonal(&[1.0, -0.5]);
        assert!(matches!(hermitian_sqrt(&m), Err(Error::NotPsd { .. })));
        // tiny negative eigenvalue is clipped instead
        let m = HermitianMatrix::from_real_diagonal(&[1.0, -1e-13]);
        let s = hermitian_sqrt(&m).unwrap();
        assert_eq!(s[(1, 1)].re, 0.0);
    }

    #[test]
    fn embedding_cases() {
        let r = ComplexMatrix::from_element(1, 1, c(2.5, 0.0));
        assert_eq!(real_embedding(&r), RealMatrix::from_row_slice(2, 2, &[2.5, 0.0, 0.0, 2.5]));
        assert_eq!(
            real_embedding(&ComplexMatrix::identity(3, 3)),
            RealMatrix::identity(6, 6)
        );

        let m = ComplexMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, 1.0), c(0.0, -1.0), c(0.0, 0.0)]);
        let (cvals, _) = hermitian_eig(&HermitianMatrix::new(m.clone()).unwrap()).unwrap();
        assert!((cvals[0] - 1.0).abs() < 1e-14 && (cvals[1] + 1.0).abs() < 1e-14);
        let (rvals, _) = symmetric_eig(&real_embedding(&m)).unwrap();
        let expect = [1.0, 1.0, -1.0, -1.0];
        for (a, b) in rvals.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_doubles_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 1..5 {
            let h = random_hermitian(&mut rng, n);
            let (cv, _) = hermitian_eig(&h).unwrap();
            let (rv, _) = symmetric_eig(&real_embedding(&h)).unwrap();
            for (i, v) in cv.iter().enumerate() {
                assert!((rv[2 * i] - v).abs() < 1e-10);
                assert!((rv[2 * i + 1] - v).abs() < 1e-10);
            }
            let back = real_embedding_inverse(&real_embedding(&h));
            assert!((back.as_matrix() - h.as_matrix()).norm() < 1e-14);
        }
    }

    #[test]
    fn eig_known_cases() {
        let (v, _) = hermitian_eig(&HermitianMatrix::from_real_diagonal(&[1.0, 3.0])).unwrap();
        assert_eq!(v, vec![3.0, 1.0]);
        let (v, _) = hermitian_eig(&HermitianMatrix::identity(4)).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn eig_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let h = random_hermitian(&mut rng, 4);
            let (vals, vecs) = hermitian_eig(&h).unwrap();
            assert!(vals.windows(2).all(|w| w[0] >= w[1]));
            let back = recompose(&vals, &vecs);
            assert!((back.as_matrix() - h.as_matrix()).norm() <= 1e-10 * h.norm());
            let unit = vecs.adjoint() * &vecs;
            assert!((unit - ComplexMatrix::identity(4, 4)).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitian_constructor_validates() {
        let bad = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(HermitianMatrix::new(bad), Err(Error::NotHermitian(_))));
        let ok = ComplexMatrix::from_row_slice(2, 2, &[c(1.0, 1e-17), c(1.0, 2.0), c(1.0, -2.0), c(0.0, 0.0)]);
        let h = HermitianMatrix::new(ok).unwrap();
        assert_eq!(h[(0, 0)].im, 0.0);
    }

    #[test]
    fn singular_values_rank() {
        let wide = ComplexMatrix::from_element(2, 4, c(1.0, 0.0));
        let sv = singular_values(&wide);
        assert_eq!(sv.len(), 4);
        assert!(sv[3] == 0.0);
    }
}
