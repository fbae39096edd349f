//! Spectral diagnostics: the Oracle estimator built from a fixed eigenvector
//! basis, eigenvalue residues, and eigenvector-stability distances.
//!
//! Given a basis `U` (typically from an in-sample estimator) and an
//! out-of-sample matrix `M`, the Oracle keeps `U` and picks the diagonal that
//! best approximates `M` in Frobenius norm; the distance between `M` and the
//! Oracle therefore measures how well the basis carries over.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix::{
    frobenius_corr, frobenius_cov, reassemble, EigenDecomposition, SymmetricMatrix,
};

/// Oracle eigenvalues and matrix for one basis/out-of-sample pair.
#[derive(Debug, Clone)]
pub struct OracleResult {
    /// `z_i = u_i' M u_i`, in basis column order.
    pub oracle_eigenvalues: DVector<f64>,
    /// `U diag(z) U'`.
    pub oracle_matrix: SymmetricMatrix,
    /// The basis the Oracle was built in.
    pub basis: EigenDecomposition,
}

/// Builds the Oracle estimator of `m_out` in the eigenvector basis of
/// `basis`: `z = diag(U' M U)`, `Xi = U diag(z) U'`.
///
/// `Xi` minimizes `|M - U diag(d) U'|_F` over all diagonals `d`, and equals
/// `M` exactly when the basis diagonalizes `M`.
pub fn oracle(basis: &EigenDecomposition, m_out: &SymmetricMatrix) -> Result<OracleResult> {
    let n = m_out.dim();
    if basis.dim() != n {
        return Err(Error::InvalidInput(format!(
            "basis dimension {} does not match matrix dimension {n}",
            basis.dim()
        )));
    }
    let u = basis.eigenvectors();
    let z = DVector::from_fn(n, |i, _| {
        let ui = u.column(i);
        (ui.transpose() * m_out.values() * ui)[(0, 0)]
    });
    let oracle_matrix = reassemble(u, &z);
    Ok(OracleResult {
        oracle_eigenvalues: z,
        oracle_matrix,
        basis: basis.clone(),
    })
}

/// Rank-paired eigenvalue residues.
#[derive(Debug)]
pub struct Residues {
    /// `sqrt(mean((lambda_i - z_i)^2))`: weighs discrepancies of the largest
    /// eigenvalues.
    pub eps_hi: f64,
    /// `sqrt(mean((1/lambda_i - 1/z_i)^2))`: weighs the smallest eigenvalues;
    /// unavailable when any paired eigenvalue is nonpositive.
    pub eps_low: Result<f64>,
}

/// Residues between two eigenvalue sets, paired by descending rank.
///
/// Both sequences are sorted internally, so callers may pass them in any
/// order. `eps_hi` is always returned; `eps_low` fails with
/// [`Error::NonpositiveEigenvalue`] when a paired value is not positive.
pub fn residues(lambda: &[f64], z: &[f64]) -> Result<Residues> {
    if lambda.len() != z.len() || lambda.is_empty() {
        return Err(Error::InvalidInput(format!(
            "residues need equal-length nonempty sequences, got {} and {}",
            lambda.len(),
            z.len()
        )));
    }
    let n = lambda.len();
    let mut a = lambda.to_vec();
    let mut b = z.to_vec();
    a.sort_by(|x, y| y.total_cmp(x));
    b.sort_by(|x, y| y.total_cmp(x));

    let eps_hi = (a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64)
        .sqrt();

    let eps_low = match a
        .iter()
        .chain(&b)
        .enumerate()
        .find(|&(_, &v)| v <= 0.0)
    {
        Some((pos, &value)) => Err(Error::NonpositiveEigenvalue {
            rank: pos % n,
            value,
        }),
        None => Ok((a
            .iter()
            .zip(&b)
            .map(|(x, y)| {
                let d = 1.0 / x - 1.0 / y;
                d * d
            })
            .sum::<f64>()
            / n as f64)
            .sqrt()),
    };

    Ok(Residues { eps_hi, eps_low })
}

/// Norm selector for [`eigenvector_stability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityMode {
    /// Diagonal-inclusive rescaled Frobenius norm.
    Covariance,
    /// Diagonal-excluding rescaled Frobenius norm.
    Correlation,
}

/// Distance between `m_out` and its Oracle estimator in the given basis:
/// zero exactly when the basis eigenvectors diagonalize `m_out`.
pub fn eigenvector_stability(
    basis: &EigenDecomposition,
    m_out: &SymmetricMatrix,
    mode: StabilityMode,
) -> Result<f64> {
    let orc = oracle(basis, m_out)?;
    let diff = m_out.diff(&orc.oracle_matrix)?;
    Ok(match mode {
        StabilityMode::Covariance => frobenius_cov(&diff),
        StabilityMode::Correlation => frobenius_corr(&diff),
    })
}
