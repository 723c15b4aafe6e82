//! Closed-form Cramér-Rao bounds for the rough Doppler and angle
//! estimators, and the per-block prediction of the measurement-error
//! covariance that feeds the tracking filter.
//!
//! The bounds treat the aggregate path gain as a known deterministic
//! nuisance, so the Doppler information is a scalar and the angle
//! information a 2x2 matrix. Both depend on the angles and the gain
//! only, which is what makes the prediction step possible: evaluate the
//! formulas at the best available estimates.

use crate::channel::{array_response, ArrayGeometry, Combiner, PilotConfig, ReceivedBlock};
use crate::estimators::{self, EstimError, RoughEstimate};
use crate::geometry::MeasurementVector;
use crate::linalg::{self, CMatrix, CVector};
use nalgebra::Matrix2;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrlbError {
    #[error("noise shaping matrix is singular or indefinite")]
    SingularSigma,
    #[error("Fisher information is not positive ({0:.3e}); bound unbounded")]
    NonPositiveInformation(f64),
    #[error("angle Fisher matrix is singular (condition {0:.3e})")]
    SingularFim(f64),
    #[error("predicted variances are not finite")]
    NonFinitePrediction,
    #[error("gain estimation failed: {0}")]
    Estimation(#[from] EstimError),
}

/// Predicted diagonal measurement-error covariance for one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbPrediction {
    pub var_doppler: f64,
    pub var_elev: f64,
    pub var_azim: f64,
}

impl CrlbPrediction {
    pub fn is_finite(&self) -> bool {
        self.var_doppler.is_finite()
            && self.var_elev.is_finite()
            && self.var_azim.is_finite()
            && self.var_doppler > 0.0
            && self.var_elev > 0.0
            && self.var_azim > 0.0
    }
}

/// Symmetric 2x2 angle Fisher information (elevation first).
pub type FimAngles = Matrix2<f64>;

/// Analytic partial derivatives of the array response with respect to
/// elevation and azimuth, as column vectors over the antennas.
pub fn array_response_derivs(
    theta_e: f64,
    theta_a: f64,
    geom: &ArrayGeometry,
) -> (CVector, CVector) {
    let a = array_response(theta_e, theta_a, geom);
    // Chain rule through the virtual angles:
    //   vx = sin(az) sin(el), vy = cos(el).
    let dvx_de = theta_a.sin() * theta_e.cos();
    let dvy_de = -theta_e.sin();
    let dvx_da = theta_a.cos() * theta_e.sin();
    let m_y = geom.m_y;
    let j_pi = Complex64::new(0.0, PI);
    let mut d_elev = CVector::zeros(geom.antennas());
    let mut d_azim = CVector::zeros(geom.antennas());
    for i in 0..geom.antennas() {
        let p = (i / m_y) as f64;
        let q = (i % m_y) as f64;
        d_elev[i] = a[i] * j_pi * (p * dvx_de + q * dvy_de);
        d_azim[i] = a[i] * j_pi * (p * dvx_da);
    }
    (d_elev, d_azim)
}

/// Eigenvalue-floored inverse factors of the combiner's noise shaping
/// matrix, computed once per block and shared by the bound formulas.
struct SigmaFactors {
    inv_sqrt: CMatrix,
    inv: CMatrix,
}

fn sigma_inverse_factors(w: &Combiner) -> Result<SigmaFactors, CrlbError> {
    let sigma = w.sigma();
    let eig = linalg::hermitian_eig(&sigma).map_err(|_| CrlbError::SingularSigma)?;
    let lambda_max = *eig
        .eigenvalues
        .last()
        .expect("combiner has at least one RF chain");
    if !(lambda_max > 0.0) {
        return Err(CrlbError::SingularSigma);
    }
    let floor = 1e-12 * lambda_max;
    let n = eig.eigenvalues.len();
    let mut inv_sqrt = CMatrix::zeros(n, n);
    let mut inv = CMatrix::zeros(n, n);
    for i in 0..n {
        let lambda = eig.eigenvalues[i].max(floor);
        inv_sqrt[(i, i)] = Complex64::new(1.0 / lambda.sqrt(), 0.0);
        inv[(i, i)] = Complex64::new(1.0 / lambda, 0.0);
    }
    let v = &eig.eigenvectors;
    Ok(SigmaFactors {
        inv_sqrt: v * inv_sqrt * v.adjoint(),
        inv: v * inv * v.adjoint(),
    })
}

fn fim_doppler_with(
    factors: &SigmaFactors,
    theta_e: f64,
    theta_a: f64,
    c_tilde: Complex64,
    w: &Combiner,
    power: f64,
    noise_var: f64,
    n_pilots: usize,
    t_sym: f64,
    geom: &ArrayGeometry,
) -> f64 {
    let a = array_response(theta_e, theta_a, geom);
    let whitened = &factors.inv_sqrt * (w.matrix() * a);
    let n = n_pilots as f64;
    4.0 * PI * PI / (3.0 * noise_var)
        * power
        * t_sym
        * t_sym
        * n
        * (n - 1.0)
        * (2.0 * n - 1.0)
        * whitened.norm_squared()
        * c_tilde.norm_sqr()
}

/// Fisher information for the Doppler shift observed over one pilot
/// block:
/// `I_u = (4 pi^2 / 3 sigma_n^2) P T^2 N (N-1) (2N-1) |Sigma^{-1/2} W a|^2 |C|^2`.
#[allow(clippy::too_many_arguments)]
pub fn fim_doppler(
    theta_e: f64,
    theta_a: f64,
    c_tilde: Complex64,
    w: &Combiner,
    power: f64,
    noise_var: f64,
    n_pilots: usize,
    t_sym: f64,
    geom: &ArrayGeometry,
) -> Result<f64, CrlbError> {
    let factors = sigma_inverse_factors(w)?;
    Ok(fim_doppler_with(
        &factors, theta_e, theta_a, c_tilde, w, power, noise_var, n_pilots, t_sym, geom,
    ))
}

/// Doppler variance bound: the reciprocal Fisher information.
pub fn crlb_doppler(information: f64) -> Result<f64, CrlbError> {
    if !(information > 0.0) || !information.is_finite() {
        return Err(CrlbError::NonPositiveInformation(information));
    }
    Ok(1.0 / information)
}

/// Angle Fisher information matrix over one pilot block. Diagonals use
/// the whitened derivative responses, the off-diagonal couples the two
/// derivatives through `Sigma^{-1}`.
pub fn fim_angles(
    theta_e: f64,
    theta_a: f64,
    c_tilde: Complex64,
    w: &Combiner,
    power: f64,
    noise_var: f64,
    n_pilots: usize,
    geom: &ArrayGeometry,
) -> Result<FimAngles, CrlbError> {
    let (sigma_inv_sqrt, sigma_inv) = sigma_inverse_factors(w)?;
    let (d_elev, d_azim) = array_response_derivs(theta_e, theta_a, geom);
    let we = w.matrix() * d_elev;
    let wa = w.matrix() * d_azim;
    let scale = 2.0 * power * n_pilots as f64 / noise_var * c_tilde.norm_sqr();
    let i_ee = (&sigma_inv_sqrt * &we).norm_squared() * scale;
    let i_aa = (&sigma_inv_sqrt * &wa).norm_squared() * scale;
    let cross = (we.adjoint() * &sigma_inv * &wa)[(0, 0)].re * scale;
    Ok(FimAngles::new(i_ee, cross, cross, i_aa))
}

/// Diagonal of the inverse angle Fisher matrix: the elevation and
/// azimuth variance bounds.
pub fn crlb_angles(fim: &FimAngles) -> Result<(f64, f64), CrlbError> {
    let det = fim[(0, 0)] * fim[(1, 1)] - fim[(0, 1)] * fim[(1, 0)];
    let scale = fim.norm();
    if !(det.abs() > scale * scale / 1e12) || !det.is_finite() {
        return Err(CrlbError::SingularFim(scale * scale / det.abs().max(1e-300)));
    }
    Ok((fim[(1, 1)] / det, fim[(0, 0)] / det))
}

/// All three bounds evaluated at one parameter point. This is also the
/// "genie" evaluation when called with the true angles and gain.
pub fn crlb_at(
    theta_e: f64,
    theta_a: f64,
    c_tilde: Complex64,
    w: &Combiner,
    power: f64,
    noise_var: f64,
    n_pilots: usize,
    t_sym: f64,
    geom: &ArrayGeometry,
) -> Result<CrlbPrediction, CrlbError> {
    let i_u = fim_doppler(
        theta_e, theta_a, c_tilde, w, power, noise_var, n_pilots, t_sym, geom,
    )?;
    let var_doppler = crlb_doppler(i_u)?;
    let fim = fim_angles(theta_e, theta_a, c_tilde, w, power, noise_var, n_pilots, geom)?;
    let (var_elev, var_azim) = crlb_angles(&fim)?;
    let prediction = CrlbPrediction {
        var_doppler,
        var_elev,
        var_azim,
    };
    if !prediction.is_finite() {
        return Err(CrlbError::NonFinitePrediction);
    }
    Ok(prediction)
}

/// Per-block measurement-error prediction.
///
/// The evaluation point is the rough estimate on the first block and the
/// previous block's updated parameters afterwards. The aggregate gain is
/// re-estimated from the current block by least squares at that point,
/// then the three bounds are evaluated there.
#[allow(clippy::too_many_arguments)]
pub fn predict_measurement_cov(
    block_index: usize,
    rough: &RoughEstimate,
    prev_update: Option<&MeasurementVector>,
    block: &ReceivedBlock,
    w: &Combiner,
    power: f64,
    noise_var: f64,
    pilots: &PilotConfig,
    geom: &ArrayGeometry,
) -> Result<CrlbPrediction, CrlbError> {
    let eval = match (block_index, prev_update) {
        (0, _) | (_, None) => rough.measurement,
        (_, Some(prev)) => *prev,
    };
    let c_hat = estimators::ls_summation_term(
        block,
        w,
        eval.elevation,
        eval.azimuth,
        eval.doppler,
        power,
        pilots.t_sym,
        geom,
    )?;
    crlb_at(
        eval.elevation,
        eval.azimuth,
        c_hat,
        w,
        power,
        noise_var,
        pilots.n_pilots,
        pilots.t_sym,
        geom,
    )
}
