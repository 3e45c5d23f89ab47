//! Dense complex linear algebra used throughout the crate.
//!
//! Everything that exponentiates goes through [`Spectrum`], the eigendecomposition
//! of a Hermitian matrix. Real symmetric inputs take the real solver, which is
//! both faster and exact in its treatment of the imaginary part.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Result, ZenoError};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Eigendecomposition `H = V diag(values) V^dagger` of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Spectrum {
    values: DVector<f64>,
    vectors: CMatrix,
}

impl Spectrum {
    /// Diagonalizes `h`, which the caller guarantees to be Hermitian.
    pub fn of_hermitian(h: &CMatrix) -> Result<Self> {
        let dim = h.nrows();
        if dim == 0 {
            return Ok(Spectrum {
                values: DVector::zeros(0),
                vectors: CMatrix::zeros(0, 0),
            });
        }
        if h.iter().all(|z| z.im == 0.0) {
            let real = h.map(|z| z.re);
            let eig = SymmetricEigen::try_new(real, f64::EPSILON, 0)
                .ok_or(ZenoError::EigenFailure { dim })?;
            Ok(Spectrum {
                values: eig.eigenvalues,
                vectors: eig.eigenvectors.map(|x| Complex64::new(x, 0.0)),
            })
        } else {
            // symmetrize so round-off in the input cannot leak into the solver
            let sym = (h + h.adjoint()).scale(0.5);
            let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0)
                .ok_or(ZenoError::EigenFailure { dim })?;
            Ok(Spectrum {
                values: eig.eigenvalues,
                vectors: eig.eigenvectors,
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues in ascending order.
    pub fn sorted_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Eigenvector of the lowest eigenvalue.
    pub fn ground_state(&self) -> Option<CVector> {
        if self.dim() == 0 {
            return None;
        }
        Some(self.vectors.column(self.values.argmin().0).into_owned())
    }

    /// `exp(-i t H)` as a dense matrix.
    pub fn evolution(&self, t: f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phase(-self.values[j] * t);
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i t H) v` without forming the matrix.
    pub fn evolve(&self, t: f64, v: &CVector) -> CVector {
        let mut coeffs = self.vectors.ad_mul(v);
        for (c, &e) in coeffs.iter_mut().zip(self.values.iter()) {
            *c *= phase(-e * t);
        }
        &self.vectors * coeffs
    }
}

#[inline]
pub(crate) fn phase(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

/// Spectral norm, computed as the square root of the largest eigenvalue of `M^dagger M`.
pub fn operator_norm(m: &CMatrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let gram = m.ad_mul(m);
    let spectrum = Spectrum::of_hermitian(&gram)?;
    let top = spectrum.values.iter().copied().fold(0.0_f64, f64::max);
    Ok(top.max(0.0).sqrt())
}

/// Maximum entry of `|H - H^dagger|`.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

/// Sub-matrix on the rows and columns listed in `support`.
pub fn extract_block(m: &CMatrix, support: &[usize]) -> CMatrix {
    CMatrix::from_fn(support.len(), support.len(), |i, j| m[(support[i], support[j])])
}

/// Places an `r x r` block back into a zero `dim x dim` matrix.
pub fn embed_block(block: &CMatrix, support: &[usize], dim: usize) -> CMatrix {
    let mut out = CMatrix::zeros(dim, dim);
    for (i, &si) in support.iter().enumerate() {
        for (j, &sj) in support.iter().enumerate() {
            out[(si, sj)] = block[(i, j)];
        }
    }
    out
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// `<u|v>`, antilinear in the first slot.
pub fn inner(u: &CVector, v: &CVector) -> Complex64 {
    u.dotc(v)
}

/// `a^n` by repeated squaring; `n` must be a power of two.
pub(crate) fn power_of_two(a: &CMatrix, n: u64) -> CMatrix {
    debug_assert!(n.is_power_of_two());
    let mut acc = a.clone();
    let mut k = n;
    while k > 1 {
        acc = &acc * &acc;
        k >>= 1;
    }
    acc
}

/// `a^n` as a left-to-right chain of `n - 1` multiplications.
pub(crate) fn power_chain(a: &CMatrix, n: u64) -> CMatrix {
    let mut acc = a.clone();
    for _ in 1..n {
        acc = a * &acc;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn complex_hermitian_takes_complex_route() {
        let h = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let s = Spectrum::of_hermitian(&h).unwrap();
        let vals = s.sorted_values();
        assert!((vals[0] - 0.0).abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
        let u = s.evolution(0.7);
        assert!(max_abs(&(u.adjoint() * &u - identity(2))) < 1e-14);
    }

    #[test]
    fn evolve_matches_matrix() {
        let h = CMatrix::from_row_slice(2, 2, &[c(0.3, 0.0), c(0.5, 0.2), c(0.5, -0.2), c(-1.0, 0.0)]);
        let s = Spectrum::of_hermitian(&h).unwrap();
        let v = CVector::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        let direct = s.evolution(1.3) * &v;
        assert!((direct - s.evolve(1.3, &v)).norm() < 1e-14);
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![c(0.5, 0.0), c(0.0, -3.0)]));
        assert!((operator_norm(&m).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn powers_agree() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0.9, 0.1), c(0.2, 0.0), c(0.0, 0.3), c(0.7, -0.2)]);
        assert!(max_abs(&(power_of_two(&m, 16) - power_chain(&m, 16))) < 1e-13);
    }

    #[test]
    fn block_round_trip() {
        let m = CMatrix::from_fn(4, 4, |i, j| c((i * 4 + j) as f64, 0.0));
        let support = [1, 3];
        let b = extract_block(&m, &support);
        assert_eq!(b[(0, 1)], c(7.0, 0.0));
        let e = embed_block(&b, &support, 4);
        assert_eq!(e[(3, 1)], m[(3, 1)]);
        assert_eq!(e[(0, 0)], ZERO);
    }
}
