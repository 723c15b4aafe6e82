//! Dense complex linear-algebra kernels shared by the estimators and the
//! bound computations: Hermitian eigendecomposition, Moore-Penrose
//! pseudo-inverse, and the rank-1 generalized eigenvalue extraction used
//! by the Doppler estimator.
//!
//! Decompositions are backed by `nalgebra` and post-processed into a
//! deterministic form (ascending eigenvalues, fixed eigenvector phase) so
//! repeated runs are bit-identical.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Dense complex matrix in double precision.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex column vector in double precision.
pub type CVector = DVector<Complex64>;

/// Relative singular-value cutoff used when no explicit tolerance is given.
pub const DEFAULT_PINV_REL_TOL: f64 = 1e-12;

const HERMITIAN_REL_TOL: f64 = 1e-12;
const PENCIL_REL_TOL: f64 = 1e-14;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is empty")]
    Empty,
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian (relative asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },
    #[error("pencil matrices have mismatched dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("pencil dimension {0} is below the minimum of 2")]
    PencilTooSmall(usize),
    #[error("degenerate pencil: |v^H R12 v| = {magnitude:.3e} is below tolerance")]
    DegeneratePencil { magnitude: f64 },
}

/// Spectral decomposition of a Hermitian matrix.
///
/// Eigenvalues are real and sorted ascending; column `i` of `eigenvectors`
/// is the unit eigenvector paired with `eigenvalues[i]`, with its first
/// non-negligible component rotated to the positive real axis.
#[derive(Debug, Clone)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: CMatrix,
}

fn max_modulus(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn hermitian_asymmetry(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

fn check_square_hermitian(a: &CMatrix) -> Result<(), LinalgError> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(LinalgError::Empty);
    }
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    let scale = max_modulus(a);
    let asym = hermitian_asymmetry(a);
    if asym > HERMITIAN_REL_TOL * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
        return Err(LinalgError::NotHermitian {
            asymmetry: asym / scale,
        });
    }
    Ok(())
}

/// Full spectral decomposition of a Hermitian matrix.
///
/// The input must be square and Hermitian to `1e-12` relative tolerance;
/// anything else is a contract violation reported as an error.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEig, LinalgError> {
    check_square_hermitian(a)?;
    let n = a.nrows();
    // Symmetrize exactly before factoring so rounding in the caller cannot
    // leak into complex eigenvalues.
    let h = (a + a.adjoint()).scale(0.5);
    let se = h.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].total_cmp(&se.eigenvalues[j]));

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues.push(se.eigenvalues[src]);
        let mut col = se.eigenvectors.column(src).clone_owned();
        normalize_phase(&mut col);
        eigenvectors.set_column(dst, &col);
    }
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Rotate a vector so its first non-negligible component is real-positive.
fn normalize_phase(v: &mut CVector) {
    let peak = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return;
    }
    if let Some(lead) = v.iter().find(|z| z.norm() > 1e-12 * peak) {
        let phase = lead / lead.norm();
        let rot = phase.conj();
        for z in v.iter_mut() {
            *z *= rot;
        }
    }
}

/// Moore-Penrose pseudo-inverse with singular values below
/// `rel_tol * sigma_max` truncated to zero.
///
/// An all-zero input yields the all-zero (transposed-shape) result.
pub fn pseudo_inverse(a: &CMatrix, rel_tol: f64) -> CMatrix {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return CMatrix::zeros(cols, rows);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("SVD requested U");
    let v_t = svd.v_t.expect("SVD requested V^H");
    let sigma_max = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let cutoff = rel_tol * sigma_max;

    let k = svd.singular_values.len();
    let mut inv_sigma = CMatrix::zeros(k, k);
    for i in 0..k {
        let s = svd.singular_values[i];
        if s > cutoff && s > 0.0 {
            inv_sigma[(i, i)] = Complex64::new(1.0 / s, 0.0);
        }
    }
    v_t.adjoint() * inv_sigma * u.adjoint()
}

/// Rayleigh-quotient solution of the rank-1 generalized eigenproblem
/// `{R11, R12}`.
///
/// Returns `lambda = (v^H R11 v) / (v^H R12 v)` with `v` the dominant
/// eigenvector of the Hermitian PSD `R11`. On the noise-free rank-1
/// signal subspace this equals the generalized eigenvalue exactly, and it
/// is invariant to scaling both inputs by the same positive factor.
pub fn solve_rank1_pencil(r11: &CMatrix, r12: &CMatrix) -> Result<Complex64, LinalgError> {
    if r11.nrows() != r12.nrows() || r11.ncols() != r12.ncols() {
        return Err(LinalgError::DimensionMismatch(r11.nrows(), r12.nrows()));
    }
    if r12.nrows() != r12.ncols() {
        return Err(LinalgError::NotSquare {
            rows: r12.nrows(),
            cols: r12.ncols(),
        });
    }
    if r11.nrows() < 2 {
        return Err(LinalgError::PencilTooSmall(r11.nrows()));
    }
    let eig = hermitian_eig(r11)?;
    let v = eig.eigenvectors.column(eig.eigenvalues.len() - 1);

    let num = (v.adjoint() * r11 * v)[(0, 0)];
    let den = (v.adjoint() * r12 * v)[(0, 0)];
    let scale = r12.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if den.norm() <= PENCIL_REL_TOL * scale.max(f64::MIN_POSITIVE) {
        return Err(LinalgError::DegeneratePencil {
            magnitude: den.norm(),
        });
    }
    Ok(num / den)
}
