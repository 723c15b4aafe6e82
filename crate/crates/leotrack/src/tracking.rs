//! Per-block tracking: EKF prediction and update of the user's kinematic
//! state, parameter refresh through the measurement maps, and the
//! orchestration of one complete tracking step (combiner design, rough
//! estimation, bound-based covariance prediction, filtering, channel
//! recovery).
//!
//! The satellite state is propagated deterministically from ephemeris
//! and never filtered; only the six user-state components carry
//! uncertainty.

use crate::channel::{ArrayGeometry, ChannelVector, Combiner, PilotConfig, ReceivedBlock};
use crate::crlb::{self, CrlbPrediction};
use crate::estimators::{self, AngleGrid, EstimError, RoughEstimate};
use crate::geometry::{
    array_frame, jacobian_g, measurement_map, EvolutionMatrix, GeometryError,
    MeasurementVector, ProcessNoiseSpec, StateVector,
};
use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Estimation(#[from] EstimError),
    #[error("innovation covariance is singular; update skipped")]
    SingularInnovation,
}

/// Filter state carried between blocks: deterministic satellite state,
/// tracked user state, and the user-state error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub q_sat: StateVector,
    pub q_gu: StateVector,
    pub cov: Matrix6<f64>,
}

impl EkfState {
    /// Initial filter state from self-reported user kinematics. The
    /// covariance starts at the process-noise scale, matching the
    /// uncertainty of the initial report.
    pub fn initial(q_sat: StateVector, q_gu: StateVector, noise: &ProcessNoiseSpec) -> Self {
        Self {
            q_sat,
            q_gu,
            cov: noise.covariance(),
        }
    }
}

/// How the measurement-error covariance is obtained each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovPrediction {
    /// Evaluate the bounds at the rough estimates on the first block and
    /// at the previous block's updated parameters afterwards.
    #[default]
    Predicted,
    /// Evaluate the bounds at the current rough estimates every block.
    RoughEveryBlock,
    /// Evaluate the bounds at the true parameters and gain (supplied per
    /// block by the caller), isolating prediction mismatch.
    Genie,
}

/// Which analog combiner the tracking step designs each block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CombinerPolicy {
    /// Block 0: beam codebook; afterwards matched first row at the
    /// previous updated angles plus the least-correlated codebook rows.
    #[default]
    Proposed,
    /// Beam codebook every block.
    Dft,
    /// Fresh random unit-modulus combiner every block.
    Random,
}

/// Static configuration for one tracking chain.
#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub geom: ArrayGeometry,
    pub rf_chains: usize,
    pub grid: AngleGrid,
    pub pilots: PilotConfig,
    pub tx_power: f64,
    pub noise_var: f64,
    pub wavelength: f64,
    pub f_sat: EvolutionMatrix,
    pub f_gu: EvolutionMatrix,
    pub process_noise: ProcessNoiseSpec,
    pub cov_prediction: CovPrediction,
    pub combiner_policy: CombinerPolicy,
    /// Fallback measurement variances when prediction fails on the
    /// first block (there is no previous prediction to reuse).
    pub cov_floor: CrlbPrediction,
}

impl TrackerConfig {
    pub fn default_cov_floor() -> CrlbPrediction {
        CrlbPrediction {
            var_doppler: 1e4,  // (100 Hz)^2
            var_elev: 1e-4,    // (0.01 rad)^2
            var_azim: 1e-4,
        }
    }
}

/// Which fallbacks fired during a block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageFlags {
    pub doppler_estimation_failed: bool,
    pub cov_prediction_fell_back: bool,
    pub update_skipped: bool,
}

/// Everything produced by one tracking step.
#[derive(Debug, Clone)]
pub struct BlockResult {
    pub rough: RoughEstimate,
    pub predicted_cov: CrlbPrediction,
    pub updated_params: MeasurementVector,
    pub state: EkfState,
    pub csi: ChannelVector,
    pub combiner: Combiner,
    pub flags: StageFlags,
}

/// EKF prediction: rotate both states forward one block, inflate the
/// covariance by the process noise, and map the predicted states to the
/// expected measurement.
pub fn predict(
    state: &EkfState,
    f_sat: &EvolutionMatrix,
    f_gu: &EvolutionMatrix,
    process_noise: &ProcessNoiseSpec,
    wavelength: f64,
) -> Result<(EkfState, MeasurementVector), TrackError> {
    let q_sat = f_sat.apply(&state.q_sat);
    let q_gu = f_gu.apply(&state.q_gu);
    let f6 = f_gu.block_diagonal();
    let cov = f6 * state.cov * f6.transpose() + process_noise.covariance();
    let predicted = EkfState { q_sat, q_gu, cov };
    let frame = array_frame(&predicted.q_sat)?;
    let z_pred = measurement_map(&predicted.q_sat, &predicted.q_gu, &frame, wavelength)?;
    Ok((predicted, z_pred))
}

/// EKF update with the rough estimates as the measurement.
///
/// The gain weighs the innovation by the predicted measurement-error
/// covariance; the covariance update uses the plain `(I - KG) C` form
/// followed by symmetrization.
pub fn update(
    predicted: &EkfState,
    z_pred: &MeasurementVector,
    z_rough: &MeasurementVector,
    q_z: &CrlbPrediction,
    jacobian: &Matrix3x6<f64>,
) -> Result<EkfState, TrackError> {
    let r = Matrix3::from_diagonal(&Vector3::new(
        q_z.var_doppler,
        q_z.var_elev,
        q_z.var_azim,
    ));
    let innovation_cov = jacobian * predicted.cov * jacobian.transpose() + r;
    let inv = innovation_cov
        .try_inverse()
        .ok_or(TrackError::SingularInnovation)?;
    let gain = predicted.cov * jacobian.transpose() * inv;
    let innovation = z_rough.to_vector3() - z_pred.to_vector3();
    let delta = gain * innovation;
    let q_gu = StateVector::from_vector6(&(predicted.q_gu.to_vector6() + delta));
    let cov = (Matrix6::identity() - gain * jacobian) * predicted.cov;
    let cov = (cov + cov.transpose()) * 0.5;
    Ok(EkfState {
        q_sat: predicted.q_sat,
        q_gu,
        cov,
    })
}

/// Refresh the tracked parameters from the updated states.
pub fn update_parameters(
    state: &EkfState,
    wavelength: f64,
) -> Result<MeasurementVector, GeometryError> {
    let frame = array_frame(&state.q_sat)?;
    measurement_map(&state.q_sat, &state.q_gu, &frame, wavelength)
}

/// Inputs that vary per block: the index, the previous block's outputs,
/// and (for genie covariance prediction) the true parameters and gain.
#[derive(Debug, Clone, Copy, Default)]
pub struct BlockContext<'a> {
    pub index: usize,
    pub prev_params: Option<&'a MeasurementVector>,
    pub prev_cov: Option<&'a CrlbPrediction>,
    pub truth: Option<(&'a MeasurementVector, Complex64)>,
}

/// One full tracking step.
///
/// Designs the combiner, lets the caller materialize the de-spread block
/// through it, runs the rough estimators, predicts the measurement-error
/// covariance, filters the state, refreshes the parameters, and recovers
/// the channel with the updated Doppler. The observation is a callback
/// because the combiner must exist before the block can be received.
pub fn run_block<F, R>(
    state: &EkfState,
    ctx: BlockContext<'_>,
    observe: F,
    cfg: &TrackerConfig,
    rng: &mut R,
) -> Result<BlockResult, TrackError>
where
    F: FnOnce(&Combiner) -> ReceivedBlock,
    R: Rng,
{
    let mut flags = StageFlags::default();

    // Combiner for this block.
    let combiner = match cfg.combiner_policy {
        CombinerPolicy::Proposed => {
            let prev = if ctx.index == 0 {
                None
            } else {
                ctx.prev_params.map(|p| (p.elevation, p.azimuth))
            };
            estimators::design_combiner(prev, &cfg.geom, cfg.rf_chains)
        }
        CombinerPolicy::Dft => estimators::design_combiner(None, &cfg.geom, cfg.rf_chains),
        CombinerPolicy::Random => Combiner::random(cfg.rf_chains, cfg.geom.antennas(), rng),
    };

    let block = observe(&combiner);

    // Rough estimation. A degenerate Doppler pencil falls back to the
    // previous updated Doppler (zero on the first block).
    let doppler_rough = match estimators::esprit_doppler(&block, cfg.pilots.t_sym) {
        Ok(u) => u,
        Err(_) => {
            flags.doppler_estimation_failed = true;
            ctx.prev_params.map_or(0.0, |p| p.doppler)
        }
    };
    let angles = estimators::somp_angles(&block, &combiner, &cfg.grid, &cfg.geom)?;
    let rough = RoughEstimate {
        measurement: MeasurementVector::new(doppler_rough, angles.elevation, angles.azimuth),
        grid_indices: (angles.elev_index, angles.azim_index),
    };

    // Measurement-error covariance for the filter.
    let predicted_cov = {
        let attempt = match cfg.cov_prediction {
            CovPrediction::Genie => match ctx.truth {
                Some((z_true, c_true)) => crlb::crlb_at(
                    z_true.elevation,
                    z_true.azimuth,
                    c_true,
                    &combiner,
                    cfg.tx_power,
                    cfg.noise_var,
                    cfg.pilots.n_pilots,
                    cfg.pilots.t_sym,
                    &cfg.geom,
                ),
                None => Err(crlb::CrlbError::NonFinitePrediction),
            },
            CovPrediction::Predicted => crlb::predict_measurement_cov(
                ctx.index,
                &rough,
                ctx.prev_params,
                &block,
                &combiner,
                cfg.tx_power,
                cfg.noise_var,
                &cfg.pilots,
                &cfg.geom,
            ),
            CovPrediction::RoughEveryBlock => crlb::predict_measurement_cov(
                0,
                &rough,
                None,
                &block,
                &combiner,
                cfg.tx_power,
                cfg.noise_var,
                &cfg.pilots,
                &cfg.geom,
            ),
        };
        match attempt {
            Ok(p) if p.is_finite() => p,
            _ => {
                flags.cov_prediction_fell_back = true;
                ctx.prev_cov.copied().unwrap_or(cfg.cov_floor)
            }
        }
    };

    // State tracking. The initial report serves as the block-0 prior
    // directly; propagation starts with the following block.
    let (predicted, z_pred) = if ctx.index == 0 {
        let frame = array_frame(&state.q_sat)?;
        let z0 = measurement_map(&state.q_sat, &state.q_gu, &frame, cfg.wavelength)?;
        (state.clone(), z0)
    } else {
        predict(state, &cfg.f_sat, &cfg.f_gu, &cfg.process_noise, cfg.wavelength)?
    };

    let frame = array_frame(&predicted.q_sat)?;
    let jac = jacobian_g(&predicted.q_sat, &predicted.q_gu, &frame, cfg.wavelength)?;

    let updated = match update(&predicted, &z_pred, &rough.measurement, &predicted_cov, &jac) {
        Ok(s) => s,
        Err(TrackError::SingularInnovation) => {
            flags.update_skipped = true;
            predicted
        }
        Err(other) => return Err(other),
    };

    let updated_params = update_parameters(&updated, cfg.wavelength)?;

    // Channel recovery with the updated Doppler.
    let csi = estimators::ls_csi(
        &block,
        &combiner,
        updated_params.doppler,
        cfg.tx_power,
        cfg.pilots.t_sym,
    )?;

    Ok(BlockResult {
        rough,
        predicted_cov,
        updated_params,
        state: updated,
        csi,
        combiner,
        flags,
    })
}

/// Output of the benchmark (estimate-only) step.
#[derive(Debug, Clone)]
pub struct RoughBlockResult {
    pub rough: RoughEstimate,
    pub predicted_cov: CrlbPrediction,
    pub csi: ChannelVector,
    pub flags: StageFlags,
}

/// Benchmark step without state tracking: rough estimates are the final
/// parameters and the channel is recovered with the rough Doppler. The
/// proposed combiner points at the previous block's rough angles.
pub fn run_rough_block<F, R>(
    ctx: BlockContext<'_>,
    observe: F,
    cfg: &TrackerConfig,
    rng: &mut R,
) -> Result<RoughBlockResult, TrackError>
where
    F: FnOnce(&Combiner) -> ReceivedBlock,
    R: Rng,
{
    let mut flags = StageFlags::default();
    let combiner = match cfg.combiner_policy {
        CombinerPolicy::Proposed => {
            let prev = if ctx.index == 0 {
                None
            } else {
                ctx.prev_params.map(|p| (p.elevation, p.azimuth))
            };
            estimators::design_combiner(prev, &cfg.geom, cfg.rf_chains)
        }
        CombinerPolicy::Dft => estimators::design_combiner(None, &cfg.geom, cfg.rf_chains),
        CombinerPolicy::Random => Combiner::random(cfg.rf_chains, cfg.geom.antennas(), rng),
    };
    let block = observe(&combiner);

    let doppler_rough = match estimators::esprit_doppler(&block, cfg.pilots.t_sym) {
        Ok(u) => u,
        Err(_) => {
            flags.doppler_estimation_failed = true;
            ctx.prev_params.map_or(0.0, |p| p.doppler)
        }
    };
    let angles = estimators::somp_angles(&block, &combiner, &cfg.grid, &cfg.geom)?;
    let rough = RoughEstimate {
        measurement: MeasurementVector::new(doppler_rough, angles.elevation, angles.azimuth),
        grid_indices: (angles.elev_index, angles.azim_index),
    };

    // Bounds evaluated at the rough estimates: this is the predicted
    // error floor the benchmark curves are compared against.
    let predicted_cov = match crlb::predict_measurement_cov(
        0,
        &rough,
        None,
        &block,
        &combiner,
        cfg.tx_power,
        cfg.noise_var,
        &cfg.pilots,
        &cfg.geom,
    ) {
        Ok(p) if p.is_finite() => p,
        _ => {
            flags.cov_prediction_fell_back = true;
            ctx.prev_cov.copied().unwrap_or(cfg.cov_floor)
        }
    };

    let csi = estimators::ls_csi(
        &block,
        &combiner,
        rough.measurement.doppler,
        cfg.tx_power,
        cfg.pilots.t_sym,
    )?;

    Ok(RoughBlockResult {
        rough,
        predicted_cov,
        csi,
        flags,
    })
}
