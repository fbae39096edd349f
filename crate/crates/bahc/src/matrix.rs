//! Returns, covariance and correlation matrices: data model, sample
//! estimators, rescaled Frobenius norms and the eigendecomposition contract.
//!
//! Conventions used throughout the crate:
//! - a returns matrix holds `n` objects (rows) observed over `t` features
//!   (columns);
//! - sample moments divide by `t`, not `t - 1`, so the variance estimator is
//!   biased by a factor `(t-1)/t`;
//! - rows are demeaned with the mean of the window they are estimated on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for positive-semidefiniteness checks: a matrix is
/// accepted as PSD when its smallest eigenvalue is at least `-1e-10 * trace/n`.
pub const PSD_TOL_FACTOR: f64 = 1e-10;

/// An `n x t` matrix of real-valued observations, one row per object.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsMatrix {
    data: DMatrix<f64>,
    labels: Vec<String>,
}

impl ReturnsMatrix {
    /// Builds a returns matrix, labelling objects `0..n` by index.
    ///
    /// Requires `n >= 2`, `t >= 2` and no missing (non-finite) values.
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let labels = (0..data.nrows()).map(|i| i.to_string()).collect();
        Self::with_labels(data, labels)
    }

    /// Builds a returns matrix with explicit object labels.
    pub fn with_labels(data: DMatrix<f64>, labels: Vec<String>) -> Result<Self> {
        if data.nrows() < 2 || data.ncols() < 2 {
            return Err(Error::InvalidInput(format!(
                "returns matrix must be at least 2x2, got {}x{}",
                data.nrows(),
                data.ncols()
            )));
        }
        if labels.len() != data.nrows() {
            return Err(Error::InvalidInput(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        if let Some((i, j)) = first_nonfinite(&data) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at row {i}, column {j}"
            )));
        }
        Ok(Self { data, labels })
    }

    /// Builds from a row-major buffer of `n * t` values.
    pub fn from_row_major(values: &[f64], n: usize, t: usize) -> Result<Self> {
        if values.len() != n * t {
            return Err(Error::InvalidInput(format!(
                "buffer holds {} values, expected {}",
                values.len(),
                n * t
            )));
        }
        Self::new(DMatrix::from_row_iterator(n, t, values.iter().copied()))
    }

    /// Number of objects (rows).
    pub fn n_objects(&self) -> usize {
        self.data.nrows()
    }

    /// Number of features (columns).
    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// True when every entry of row `i` is bitwise identical, i.e. the row's
    /// sample variance is exactly zero in exact arithmetic.
    pub fn row_is_constant(&self, i: usize) -> bool {
        let first = self.data[(i, 0)];
        (1..self.data.ncols()).all(|h| self.data[(i, h)] == first)
    }
}

/// Dense symmetric matrix; symmetry is exact by construction (entries are
/// mirrored on write, never recomputed per side).
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates squareness, finiteness and symmetry (within `1e-9` relative
    /// to the largest entry), then mirrors the lower triangle so the stored
    /// matrix is exactly symmetric.
    pub fn new(mut m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if let Some((i, j)) = first_nonfinite(&m) {
            return Err(Error::InvalidInput(format!(
                "non-finite value at ({i}, {j})"
            )));
        }
        let scale = m.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        mirror_lower(&mut m);
        Ok(Self(m))
    }

    /// Wraps a matrix the caller guarantees to be exactly symmetric.
    pub(crate) fn from_exact(m: DMatrix<f64>) -> Self {
        debug_assert!(m.nrows() == m.ncols());
        debug_assert!((0..m.nrows())
            .all(|i| (0..m.ncols()).all(|j| m[(i, j)] == m[(j, i)] && m[(i, j)].is_finite())));
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Elementwise difference, preserving exact symmetry.
    pub fn diff(&self, other: &SymmetricMatrix) -> Result<SymmetricMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(SymmetricMatrix::from_exact(&self.0 - &other.0))
    }

    /// PSD tolerance scaled to the matrix magnitude: `1e-10 * trace / n`.
    pub fn psd_tolerance(&self) -> f64 {
        PSD_TOL_FACTOR * self.trace().abs() / self.dim() as f64
    }
}

/// An `n x n` covariance matrix (units of return squared).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    inner: SymmetricMatrix,
}

impl CovarianceMatrix {
    /// Wraps a symmetric matrix as a covariance matrix; the diagonal must be
    /// nonnegative.
    pub fn new(inner: SymmetricMatrix) -> Result<Self> {
        for i in 0..inner.dim() {
            if inner.get(i, i) < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "negative variance {} at index {i}",
                    inner.get(i, i)
                )));
            }
        }
        Ok(Self { inner })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        self.inner.values()
    }

    pub fn as_sym(&self) -> &SymmetricMatrix {
        &self.inner
    }

    /// Per-object variances (the diagonal).
    pub fn variances(&self) -> DVector<f64> {
        self.inner.values().diagonal()
    }
}

/// An `n x n` correlation matrix; the diagonal is exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    inner: SymmetricMatrix,
}

impl CorrelationMatrix {
    /// Wraps a symmetric matrix as a correlation matrix, forcing the diagonal
    /// to exactly one. Off-diagonal magnitudes may exceed one only by
    /// rounding noise (`1e-8`).
    pub fn new(inner: SymmetricMatrix) -> Result<Self> {
        let mut m = inner.0;
        for i in 0..m.nrows() {
            for j in 0..i {
                if m[(i, j)].abs() > 1.0 + 1e-8 {
                    return Err(Error::InvalidInput(format!(
                        "correlation {} at ({i}, {j}) outside [-1, 1]",
                        m[(i, j)]
                    )));
                }
            }
            m[(i, i)] = 1.0;
        }
        Ok(Self {
            inner: SymmetricMatrix::from_exact(m),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        self.inner.values()
    }

    pub fn as_sym(&self) -> &SymmetricMatrix {
        &self.inner
    }
}

/// Spectral decomposition with eigenvalues sorted in descending order and a
/// deterministic eigenvector sign convention (the largest-magnitude component
/// of each eigenvector is positive).
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    /// Assembles a decomposition from an orthonormal column basis and
    /// non-increasing eigenvalues; both are validated.
    pub fn from_parts(eigenvectors: DMatrix<f64>, eigenvalues: DVector<f64>) -> Result<Self> {
        let n = eigenvectors.nrows();
        if eigenvectors.ncols() != n || eigenvalues.len() != n {
            return Err(Error::InvalidInput(format!(
                "basis {}x{} with {} eigenvalues",
                n,
                eigenvectors.ncols(),
                eigenvalues.len()
            )));
        }
        let gram = eigenvectors.transpose() * &eigenvectors;
        let max_dev = (gram - DMatrix::identity(n, n))
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        if max_dev > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "basis not orthonormal (max deviation {max_dev:.3e})"
            )));
        }
        if eigenvalues.iter().zip(eigenvalues.iter().skip(1)).any(|(a, b)| b > a) {
            return Err(Error::InvalidInput(
                "eigenvalues must be non-increasing".into(),
            ));
        }
        Ok(Self {
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    /// Eigenvalues, descending.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, ordered like the eigenvalues.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `U diag(lambda) U^T`, mirrored to exact symmetry.
    pub fn reconstruct(&self) -> SymmetricMatrix {
        reassemble(&self.eigenvectors, &self.eigenvalues)
    }
}

/// Sample covariance with divisor `t`: `sigma_ij = (1/t) sum_h (r_ih - rbar_i)(r_jh - rbar_j)`.
pub fn sample_covariance(r: &ReturnsMatrix) -> CovarianceMatrix {
    let x = r.data();
    let (n, t) = (x.nrows(), x.ncols());
    let mut centered = x.clone();
    for i in 0..n {
        let mean = x.row(i).sum() / t as f64;
        for h in 0..t {
            centered[(i, h)] -= mean;
        }
    }
    let mut s = &centered * centered.transpose();
    s /= t as f64;
    mirror_lower(&mut s);
    CovarianceMatrix {
        inner: SymmetricMatrix::from_exact(s),
    }
}

/// Pearson correlation matrix: `c_ij = sigma_ij / sqrt(sigma_ii sigma_jj)`.
///
/// Fails with [`Error::ZeroVariance`] if any row is constant.
pub fn sample_correlation(r: &ReturnsMatrix) -> Result<CorrelationMatrix> {
    for i in 0..r.n_objects() {
        if r.row_is_constant(i) {
            return Err(Error::ZeroVariance { row: i });
        }
    }
    let cov = sample_covariance(r);
    correlation_from_covariance(&cov)
}

pub(crate) fn correlation_from_covariance(cov: &CovarianceMatrix) -> Result<CorrelationMatrix> {
    renormalize_correlation(cov.as_sym())
}

/// Rescales a symmetric matrix with strictly positive diagonal to a
/// correlation matrix: `x_ij / sqrt(x_ii x_jj)`, diagonal exactly one.
pub fn renormalize_correlation(m: &SymmetricMatrix) -> Result<CorrelationMatrix> {
    let n = m.dim();
    for i in 0..n {
        if m.get(i, i) <= 0.0 {
            return Err(Error::NonpositiveDiagonal {
                index: i,
                value: m.get(i, i),
            });
        }
    }
    let scale: Vec<f64> = (0..n).map(|i| m.get(i, i).sqrt()).collect();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = m.get(i, j) / (scale[i] * scale[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    CorrelationMatrix::new(SymmetricMatrix::from_exact(out))
}

/// Symmetric eigendecomposition with descending eigenvalues and the sign
/// convention above. Deterministic: the same input yields bitwise-identical
/// output.
pub fn eigendecompose(m: &SymmetricMatrix) -> Result<EigenDecomposition> {
    let n = m.dim();
    let eig = nalgebra::SymmetricEigen::try_new(m.values().clone(), f64::EPSILON, 0).ok_or_else(
        || Error::ConvergenceFailure {
            detail: format!(
                "symmetric QL iteration stalled on a {n}x{n} matrix (max |entry| {:.3e})",
                m.values().iter().fold(0.0f64, |a, &v| a.max(v.abs()))
            ),
        },
    )?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).clone_owned();
        // Largest-magnitude component positive; first index wins ties.
        let mut lead = 0;
        for i in 1..n {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        vectors.set_column(dst, &col);
    }
    Ok(EigenDecomposition {
        eigenvalues: values,
        eigenvectors: vectors,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &SymmetricMatrix) -> Result<f64> {
    let eig = eigendecompose(m)?;
    Ok(eig.eigenvalues[m.dim() - 1])
}

/// Rescaled Frobenius norm for covariance comparisons, diagonal included:
/// `sqrt(sum_ij x_ij^2 / n^2)`.
pub fn frobenius_cov(x: &SymmetricMatrix) -> f64 {
    let n = x.dim() as f64;
    (x.values().iter().map(|v| v * v).sum::<f64>() / (n * n)).sqrt()
}

/// Rescaled Frobenius norm for correlation comparisons, diagonal excluded:
/// `sqrt(sum_{i>j} 2 x_ij^2 / (n (n-1)))`.
pub fn frobenius_corr(x: &SymmetricMatrix) -> f64 {
    let n = x.dim();
    assert!(n >= 2, "frobenius_corr requires n >= 2");
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..i {
            acc += 2.0 * x.get(i, j) * x.get(i, j);
        }
    }
    (acc / (n * (n - 1)) as f64).sqrt()
}

pub(crate) fn mirror_lower(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// `U diag(vals) U^T` with exact symmetry.
pub fn reassemble(u: &DMatrix<f64>, vals: &DVector<f64>) -> SymmetricMatrix {
    let mut scaled = u.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        col *= vals[k];
    }
    let mut m = scaled * u.transpose();
    mirror_lower(&mut m);
    SymmetricMatrix::from_exact(m)
}

fn first_nonfinite(m: &DMatrix<f64>) -> Option<(usize, usize)> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if !m[(i, j)].is_finite() {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn returns(rows: &[&[f64]]) -> ReturnsMatrix {
        let n = rows.len();
        let t = rows[0].len();
        ReturnsMatrix::new(DMatrix::from_fn(n, t, |i, j| rows[i][j])).unwrap()
    }

    pub(crate) fn random_returns(n: usize, t: usize, seed: u64) -> ReturnsMatrix {
        let mut rng = crate::seeding::rng_for(seed, &[99]);
        ReturnsMatrix::new(DMatrix::from_fn(n, t, |_, _| {
            rng.random_range(-1.0..1.0)
        }))
        .unwrap()
    }

    /// Independent two-pass loop estimator used as the covariance oracle.
    fn naive_covariance(r: &ReturnsMatrix) -> DMatrix<f64> {
        let x = r.data();
        let (n, t) = (x.nrows(), x.ncols());
        let means: Vec<f64> = (0..n)
            .map(|i| (0..t).map(|h| x[(i, h)]).sum::<f64>() / t as f64)
            .collect();
        DMatrix::from_fn(n, n, |i, j| {
            (0..t)
                .map(|h| (x[(i, h)] - means[i]) * (x[(j, h)] - means[j]))
                .sum::<f64>()
                / t as f64
        })
    }

    #[test]
    fn covariance_identical_rows() {
        let r = returns(&[&[1.0, -1.0], &[1.0, -1.0]]);
        let cov = sample_covariance(&r);
        for &(i, j) in &[(0, 0), (0, 1), (1, 1)] {
            assert_eq!(cov.values()[(i, j)], 1.0);
        }
    }

    #[test]
    fn covariance_sign_flipped_rows() {
        let r = returns(&[&[1.0, -1.0], &[-1.0, 1.0]]);
        assert_eq!(sample_covariance(&r).values()[(0, 1)], -1.0);
    }

    #[test]
    fn covariance_matches_naive_oracle() {
        let r = random_returns(4, 50, 11);
        let cov = sample_covariance(&r);
        let oracle = naive_covariance(&r);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(cov.values()[(i, j)], oracle[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn correlation_perfect_pair() {
        let r = returns(&[&[0.1, 0.2, 0.3], &[0.2, 0.4, 0.6]]);
        let c = sample_correlation(&r).unwrap();
        assert_abs_diff_eq!(c.values()[(0, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correlation_rejects_constant_row() {
        let r = returns(&[&[0.5, 0.5, 0.5], &[0.1, 0.2, 0.3]]);
        match sample_correlation(&r) {
            Err(Error::ZeroVariance { row }) => assert_eq!(row, 0),
            other => panic!("expected ZeroVariance, got {other:?}"),
        }
    }

    #[test]
    fn correlation_equals_normalized_covariance_oracle() {
        let r = random_returns(5, 40, 13);
        let c = sample_correlation(&r).unwrap();
        let s = naive_covariance(&r);
        for i in 0..5 {
            for j in 0..5 {
                let expected = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
                assert_abs_diff_eq!(c.values()[(i, j)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn renormalize_unit_diagonal_is_identity_map() {
        let m = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0])).unwrap();
        let c = renormalize_correlation(&m).unwrap();
        assert_eq!(c.values(), m.values());
    }

    #[test]
    fn renormalize_hand_case() {
        let m = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[4.0, 3.0, 3.0, 9.0])).unwrap();
        let c = renormalize_correlation(&m).unwrap();
        assert_eq!(c.values()[(0, 1)], 0.5);
        assert_eq!(c.values()[(0, 0)], 1.0);
        assert_eq!(c.values()[(1, 1)], 1.0);
    }

    #[test]
    fn renormalize_rejects_nonpositive_diagonal() {
        let m = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.1, 1.0])).unwrap();
        assert!(matches!(
            renormalize_correlation(&m),
            Err(Error::NonpositiveDiagonal { index: 0, .. })
        ));
    }

    #[test]
    fn eigen_identity() {
        let m = SymmetricMatrix::from_exact(DMatrix::identity(4, 4));
        let eig = eigendecompose(&m).unwrap();
        for v in eig.eigenvalues().iter() {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_two_by_two_closed_form() {
        let rho = 0.35;
        let m =
            SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])).unwrap();
        let eig = eigendecompose(&m).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues()[0], 1.0 + rho, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.eigenvalues()[1], 1.0 - rho, epsilon = 1e-12);
    }

    #[test]
    fn eigen_reconstruction_and_orthonormality() {
        let r = random_returns(6, 30, 17);
        let m = sample_covariance(&r);
        let eig = eigendecompose(m.as_sym()).unwrap();

        let gram = eig.eigenvectors().transpose() * eig.eigenvectors();
        let dev = (gram - DMatrix::identity(6, 6))
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(dev < 1e-8, "orthonormality deviation {dev}");

        let rec = eig.reconstruct();
        let num = (rec.values() - m.values()).norm();
        let den = m.values().norm();
        assert!(num / den < 1e-8, "reconstruction error {}", num / den);
    }

    #[test]
    fn eigen_is_bitwise_deterministic() {
        let r = random_returns(7, 25, 23);
        let m = sample_covariance(&r);
        let a = eigendecompose(m.as_sym()).unwrap();
        let b = eigendecompose(m.as_sym()).unwrap();
        assert_eq!(a.eigenvalues().as_slice(), b.eigenvalues().as_slice());
        assert_eq!(a.eigenvectors().as_slice(), b.eigenvectors().as_slice());
    }

    #[test]
    fn eigen_sign_convention() {
        let r = random_returns(5, 20, 29);
        let m = sample_covariance(&r);
        let eig = eigendecompose(m.as_sym()).unwrap();
        for col in eig.eigenvectors().column_iter() {
            let mut lead = 0;
            for i in 1..col.len() {
                if col[i].abs() > col[lead].abs() {
                    lead = i;
                }
            }
            assert!(col[lead] > 0.0);
        }
    }

    #[test]
    fn frobenius_cov_all_ones_is_one() {
        for n in [2, 3, 7] {
            let m = SymmetricMatrix::from_exact(DMatrix::from_element(n, n, 1.0));
            assert_abs_diff_eq!(frobenius_cov(&m), 1.0, epsilon = 1e-14);
        }
        let zero = SymmetricMatrix::from_exact(DMatrix::zeros(3, 3));
        assert_eq!(frobenius_cov(&zero), 0.0);
    }

    #[test]
    fn frobenius_corr_ignores_diagonal() {
        let diag = SymmetricMatrix::from_exact(DMatrix::from_diagonal(
            &DVector::from_vec(vec![3.0, -2.0, 5.0]),
        ));
        assert_eq!(frobenius_corr(&diag), 0.0);

        let c = -0.4;
        let mut m = DMatrix::from_element(4, 4, c);
        for i in 0..4 {
            m[(i, i)] = 9.0;
        }
        let m = SymmetricMatrix::from_exact(m);
        assert_abs_diff_eq!(frobenius_corr(&m), c.abs(), epsilon = 1e-14);
    }

    #[test]
    fn frobenius_norms_match_loop_oracles() {
        let r = random_returns(5, 12, 31);
        let m = sample_covariance(&r);
        let x = m.values();
        let n = 5usize;

        let mut full = 0.0;
        let mut lower = 0.0;
        for i in 0..n {
            for j in 0..n {
                full += x[(i, j)] * x[(i, j)];
                if i > j {
                    lower += 2.0 * x[(i, j)] * x[(i, j)];
                }
            }
        }
        assert_abs_diff_eq!(
            frobenius_cov(m.as_sym()),
            (full / (n * n) as f64).sqrt(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            frobenius_corr(m.as_sym()),
            (lower / (n * (n - 1)) as f64).sqrt(),
            epsilon = 1e-14
        );
    }

    proptest! {
        #[test]
        fn sample_covariance_is_psd(seed in 0u64..500, n in 2usize..8, t in 2usize..20) {
            let r = random_returns(n, t, seed);
            let cov = sample_covariance(&r);
            let min = min_eigenvalue(cov.as_sym()).unwrap();
            prop_assert!(min >= -cov.as_sym().psd_tolerance());
        }

        #[test]
        fn correlation_agrees_with_renormalized_covariance(seed in 0u64..500) {
            let r = random_returns(4, 15, seed);
            let direct = sample_correlation(&r).unwrap();
            let via_cov = renormalize_correlation(sample_covariance(&r).as_sym()).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((direct.values()[(i, j)] - via_cov.values()[(i, j)]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn frobenius_corr_invariant_to_diagonal_shifts(seed in 0u64..200, shift_a in -5.0f64..5.0, shift_b in -5.0f64..5.0) {
            let a = sample_covariance(&random_returns(4, 10, seed));
            let b = sample_covariance(&random_returns(4, 10, seed.wrapping_add(1)));
            let base = frobenius_corr(&a.as_sym().diff(b.as_sym()).unwrap());

            let mut am = a.values().clone();
            let mut bm = b.values().clone();
            for i in 0..4 {
                am[(i, i)] += shift_a;
                bm[(i, i)] += shift_b;
            }
            let shifted = SymmetricMatrix::from_exact(am)
                .diff(&SymmetricMatrix::from_exact(bm))
                .unwrap();
            prop_assert!((frobenius_corr(&shifted) - base).abs() < 1e-12);
        }
    }
}
