//! Seeded Monte Carlo experiment runner: truth-side simulation of the
//! link, tracking chains over the frame, block-averaged error metrics,
//! parameter sweeps with common random numbers across sweep points, and
//! CSV emission.
//!
//! Determinism contract: a master seed expands to per-trial seeds with a
//! counter-based splitter, and every random quantity inside a trial is
//! drawn from its own (trial, block, purpose) stream. The same scenario
//! and seed therefore produce byte-identical CSV output, and sweep
//! points share their trial randomness, which tightens paired
//! comparisons between methods and between axis values.

use crate::channel::{
    self, complex_gaussian_matrix, ChannelVector, Combiner, PathSet, ReceivedBlock,
};
use crate::crlb::CrlbPrediction;
use crate::estimators::EstimError;
use crate::geometry::{
    array_frame, build_evolution, evolve_state, measurement_map, GeometryError,
    MeasurementVector, StateVector,
};
use crate::linalg::CMatrix;
use crate::scenario::{Scenario, ScenarioError};
use crate::tracking::{
    self, BlockContext, CombinerPolicy, CovPrediction, EkfState, TrackError, TrackerConfig,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::fmt;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Estimation(#[from] EstimError),
    #[error("sweep axis {axis}: {reason}")]
    Axis { axis: &'static str, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---- Seeding ---------------------------------------------------------

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed from the master seed; independent of the sweep point
/// so all points share their trial randomness.
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    splitmix64(master ^ splitmix64(trial.wrapping_add(1)))
}

fn stream_rng(seed: u64, block: usize, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(splitmix64(
        seed ^ splitmix64(((block as u64) << 8) | stream),
    ))
}

const STREAM_PROCESS: u64 = 0;
const STREAM_PATHS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_CHAIN_BASE: u64 = 16;

// ---- Truth-side simulation -------------------------------------------

/// Ground truth for one block: kinematic states, the parameter triple,
/// the aggregate gain and channel, and the (unit-variance) antenna noise
/// that every chain observes through its own combiner.
#[derive(Debug, Clone)]
pub struct BlockTruth {
    pub q_sat: StateVector,
    pub q_gu: StateVector,
    pub z: MeasurementVector,
    pub paths: PathSet,
    pub c_tilde: Complex64,
    pub channel: ChannelVector,
    pub noise_unit: CMatrix,
}

/// Truth for one frame.
#[derive(Debug, Clone)]
pub struct TruthRealization {
    pub blocks: Vec<BlockTruth>,
}

/// Simulate the truth side of one frame: deterministic satellite orbit,
/// noisy user orbit, per-block multipath, and per-block antenna noise.
pub fn generate_truth(scn: &Scenario, seed: u64) -> Result<TruthRealization, HarnessError> {
    let lb = scn.link_budget();
    let geom = scn.geometry();
    let t_block = scn.block_duration();
    let f_sat = build_evolution(&scn.sat_orbit(), t_block);
    let f_gu = build_evolution(&scn.gu_orbit(), t_block);
    let process = scn.process_noise();
    let (mut q_sat, mut q_gu) = scn.initial_states();
    let n_pilots = scn.frame.pilots;
    let subcarrier = scn.link.subcarrier_index;

    let mut blocks = Vec::with_capacity(scn.frame.blocks);
    for n in 0..scn.frame.blocks {
        if n > 0 {
            q_sat = f_sat.apply(&q_sat);
            let mut rng = stream_rng(seed, n, STREAM_PROCESS);
            q_gu = evolve_state(&q_gu, &f_gu, &process, &mut rng);
        }
        let frame = array_frame(&q_sat)?;
        let z = measurement_map(&q_sat, &q_gu, &frame, scn.wavelength())?;

        let distance = (q_sat.position - q_gu.position).norm();
        let beta = channel::large_scale_beta(distance, &lb);
        let mut rng_paths = stream_rng(seed, n, STREAM_PATHS);
        let paths = PathSet::draw(
            &mut rng_paths,
            scn.link.paths,
            lb.rician,
            beta,
            lb.sat_gain,
            lb.subcarrier_spacing_hz,
        );
        let c_tilde = channel::summation_term(&paths, &lb, subcarrier);
        let h = channel::array_response(z.elevation, z.azimuth, &geom) * c_tilde;

        let mut rng_noise = stream_rng(seed, n, STREAM_NOISE);
        let noise_unit = complex_gaussian_matrix(&mut rng_noise, geom.antennas(), n_pilots);

        blocks.push(BlockTruth {
            q_sat,
            q_gu,
            z,
            paths,
            c_tilde,
            channel: h,
            noise_unit,
        });
    }
    Ok(TruthRealization { blocks })
}

// ---- Methods and combiners --------------------------------------------

/// Estimation method run over a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Full tracking pipeline with bound-predicted measurement
    /// covariance.
    Jpct,
    /// Tracking with the covariance evaluated at the true parameters.
    JpctGenie,
    /// Rough per-block estimates only (no state tracking).
    Rough,
    /// Alias of `Rough` for channel-recovery comparisons; labeled
    /// separately in outputs.
    EspritLs,
}

impl Method {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jpct" => Some(Self::Jpct),
            "jpct-genie" | "genie" => Some(Self::JpctGenie),
            "rough" => Some(Self::Rough),
            "esprit+ls" | "esprit-ls" => Some(Self::EspritLs),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Jpct => "jpct",
            Self::JpctGenie => "jpct-genie",
            Self::Rough => "rough",
            Self::EspritLs => "esprit+ls",
        }
    }

    fn tracks_state(&self) -> bool {
        matches!(self, Self::Jpct | Self::JpctGenie)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Analog combiner family used by a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CombinerChoice {
    Proposed,
    Dft,
    Random,
}

impl CombinerChoice {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Some(Self::Proposed),
            "dft" => Some(Self::Dft),
            "random" => Some(Self::Random),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Proposed => "proposed",
            Self::Dft => "dft",
            Self::Random => "random",
        }
    }

    fn policy(&self) -> CombinerPolicy {
        match self {
            Self::Proposed => CombinerPolicy::Proposed,
            Self::Dft => CombinerPolicy::Dft,
            Self::Random => CombinerPolicy::Random,
        }
    }
}

impl fmt::Display for CombinerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn tracker_config(scn: &Scenario, method: Method, combiner: CombinerChoice) -> TrackerConfig {
    TrackerConfig {
        geom: scn.geometry(),
        rf_chains: scn.array.rf_chains,
        grid: scn.angle_grid(),
        pilots: scn.pilot_config(),
        tx_power: scn.tx_power_w(),
        noise_var: scn.noise_var(),
        wavelength: scn.wavelength(),
        f_sat: build_evolution(&scn.sat_orbit(), scn.block_duration()),
        f_gu: build_evolution(&scn.gu_orbit(), scn.block_duration()),
        process_noise: scn.process_noise(),
        cov_prediction: match method {
            Method::JpctGenie => CovPrediction::Genie,
            _ => CovPrediction::Predicted,
        },
        combiner_policy: combiner.policy(),
        cov_floor: TrackerConfig::default_cov_floor(),
    }
}

// ---- Chains ------------------------------------------------------------

/// Per-block outputs of one chain, reduced to what the metrics need.
#[derive(Debug, Clone)]
pub struct BlockRecord {
    pub rough: MeasurementVector,
    pub params: MeasurementVector,
    pub predicted: CrlbPrediction,
    pub csi_err_sq: f64,
    pub truth_norm_sq: f64,
}

/// One chain (method + combiner) run over one truth realization.
pub fn run_chain(
    scn: &Scenario,
    truth: &TruthRealization,
    method: Method,
    combiner: CombinerChoice,
    seed: u64,
    chain_index: u64,
) -> Result<Vec<BlockRecord>, HarnessError> {
    let cfg = tracker_config(scn, method, combiner);
    let sigma = cfg.noise_var.sqrt();
    let (q_sat0, q_gu0) = scn.initial_states();
    let mut state = EkfState::initial(q_sat0, q_gu0, &cfg.process_noise);
    let mut prev_params: Option<MeasurementVector> = None;
    let mut prev_cov: Option<CrlbPrediction> = None;
    let mut records = Vec::with_capacity(truth.blocks.len());

    for (n, block_truth) in truth.blocks.iter().enumerate() {
        let noise = block_truth.noise_unit.map(|z| z * sigma);
        let observe = |w: &Combiner| -> ReceivedBlock {
            channel::received_block_with_noise(
                &block_truth.channel,
                block_truth.z.doppler,
                w,
                &cfg.pilots,
                cfg.tx_power,
                &noise,
            )
        };
        let mut chain_rng = stream_rng(seed, n, STREAM_CHAIN_BASE + chain_index);
        let ctx = BlockContext {
            index: n,
            prev_params: prev_params.as_ref(),
            prev_cov: prev_cov.as_ref(),
            truth: Some((&block_truth.z, block_truth.c_tilde)),
        };

        let record = if method.tracks_state() {
            let r = tracking::run_block(&state, ctx, observe, &cfg, &mut chain_rng)?;
            state = r.state;
            BlockRecord {
                rough: r.rough.measurement,
                params: r.updated_params,
                predicted: r.predicted_cov,
                csi_err_sq: (&r.csi - &block_truth.channel).norm_squared(),
                truth_norm_sq: block_truth.channel.norm_squared(),
            }
        } else {
            let r = tracking::run_rough_block(ctx, observe, &cfg, &mut chain_rng)?;
            BlockRecord {
                rough: r.rough.measurement,
                params: r.rough.measurement,
                predicted: r.predicted_cov,
                csi_err_sq: (&r.csi - &block_truth.channel).norm_squared(),
                truth_norm_sq: block_truth.channel.norm_squared(),
            }
        };
        prev_params = Some(record.params);
        prev_cov = Some(record.predicted);
        records.push(record);
    }
    Ok(records)
}

/// One full trial of the default tracking pipeline: truth plus the
/// per-block chain outputs, fully deterministic in the seed.
pub struct TrialOutput {
    pub truth: TruthRealization,
    pub records: Vec<BlockRecord>,
}

pub fn run_trial(scn: &Scenario, seed: u64) -> Result<TrialOutput, HarnessError> {
    let truth = generate_truth(scn, seed)?;
    let records = run_chain(scn, &truth, Method::Jpct, CombinerChoice::Proposed, seed, 0)?;
    Ok(TrialOutput { truth, records })
}

// ---- Metrics -----------------------------------------------------------

/// Block-averaged root-mean-square error: for each block take the square
/// root of the trial-mean squared error, then average the roots over
/// blocks. `errors[trial][block]`.
pub fn rmse(errors: &[Vec<f64>]) -> f64 {
    let trials = errors.len();
    if trials == 0 {
        return 0.0;
    }
    let blocks = errors[0].len();
    if blocks == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 0..blocks {
        let mean_sq: f64 = errors.iter().map(|t| t[n] * t[n]).sum::<f64>() / trials as f64;
        total += mean_sq.sqrt();
    }
    total / blocks as f64
}

/// Block-averaged normalized channel error for one trial. Blocks whose
/// truth has zero norm are skipped (with a warning to stderr).
pub fn nmse(truth: &[ChannelVector], estimates: &[ChannelVector]) -> f64 {
    assert_eq!(truth.len(), estimates.len());
    let mut total = 0.0;
    let mut counted = 0usize;
    for (h, h_hat) in truth.iter().zip(estimates) {
        let den = h.norm_squared();
        if den == 0.0 {
            eprintln!("nmse: skipping block with zero-norm truth channel");
            continue;
        }
        total += (h_hat - h).norm_squared() / den;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        total / counted as f64
    }
}

// ---- Sweeps ------------------------------------------------------------

/// Sweep variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Target SNR in dB.
    Snr,
    /// Number of pilot symbols per block.
    Pilots,
    /// Position evolution noise (m).
    SigmaU,
    /// Velocity evolution noise (m/s).
    SigmaV,
    /// No re-configuration: report per-block metrics; values are block
    /// indices.
    Blocks,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snr" => Some(Self::Snr),
            "pilots" => Some(Self::Pilots),
            "sigma_u" | "sigma-u" => Some(Self::SigmaU),
            "sigma_v" | "sigma-v" => Some(Self::SigmaV),
            "blocks" => Some(Self::Blocks),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::Pilots => "pilots",
            Self::SigmaU => "sigma_u",
            Self::SigmaV => "sigma_v",
            Self::Blocks => "blocks",
        }
    }

    fn apply(&self, scn: &Scenario, value: f64) -> Result<Scenario, HarnessError> {
        let mut out = scn.clone();
        match self {
            Self::Snr => {
                out.link.snr_db = value;
                out.link.noise_var = None;
            }
            Self::Pilots => {
                let pilots = value as usize;
                if pilots < 3 || (value - pilots as f64).abs() > 0.0 {
                    return Err(HarnessError::Axis {
                        axis: "pilots",
                        reason: format!("value {value} is not an integer >= 3"),
                    });
                }
                out.frame.pilots = pilots;
            }
            Self::SigmaU => {
                if value < 0.0 {
                    return Err(HarnessError::Axis {
                        axis: "sigma_u",
                        reason: "must be non-negative".into(),
                    });
                }
                out.noise.sigma_pos_m = value;
            }
            Self::SigmaV => {
                if value < 0.0 {
                    return Err(HarnessError::Axis {
                        axis: "sigma_v",
                        reason: "must be non-negative".into(),
                    });
                }
                out.noise.sigma_vel_mps = value;
            }
            Self::Blocks => {
                let idx = value as usize;
                if (value - idx as f64).abs() > 0.0 || idx >= scn.frame.blocks {
                    return Err(HarnessError::Axis {
                        axis: "blocks",
                        reason: format!(
                            "block index {value} must be an integer below {}",
                            scn.frame.blocks
                        ),
                    });
                }
            }
        }
        out.validate()?;
        Ok(out)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One aggregated row of a sweep. The bound columns are reported in
/// root form (Hz and rad) so they overlay the RMSE columns directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub axis_value: f64,
    pub method: Method,
    pub combiner: CombinerChoice,
    pub rmse_doppler_hz: f64,
    pub rmse_elev_rad: f64,
    pub rmse_azim_rad: f64,
    pub nmse: f64,
    pub crlb_doppler: f64,
    pub crlb_elev: f64,
    pub crlb_azim: f64,
    pub trials: usize,
    pub failures: usize,
}

/// Aggregated sweep output.
pub type MetricSeries = Vec<SweepRow>;

#[derive(Default, Clone)]
struct ChainAccum {
    // indexed [block]
    err_sq: [Vec<f64>; 3],
    pred_var: [Vec<f64>; 3],
    nmse_sum: f64,
    trials: usize,
    failures: usize,
}

impl ChainAccum {
    fn new(blocks: usize) -> Self {
        Self {
            err_sq: [vec![0.0; blocks], vec![0.0; blocks], vec![0.0; blocks]],
            pred_var: [vec![0.0; blocks], vec![0.0; blocks], vec![0.0; blocks]],
            ..Default::default()
        }
    }

    fn add(&mut self, records: &[BlockRecord], truth: &TruthRealization) {
        let mut nmse_total = 0.0;
        let mut nmse_blocks = 0usize;
        for (n, r) in records.iter().enumerate() {
            let t = &truth.blocks[n];
            let errs = [
                r.params.doppler - t.z.doppler,
                r.params.elevation - t.z.elevation,
                r.params.azimuth - t.z.azimuth,
            ];
            let preds = [
                r.predicted.var_doppler,
                r.predicted.var_elev,
                r.predicted.var_azim,
            ];
            for k in 0..3 {
                self.err_sq[k][n] += errs[k] * errs[k];
                self.pred_var[k][n] += preds[k];
            }
            if r.truth_norm_sq > 0.0 {
                nmse_total += r.csi_err_sq / r.truth_norm_sq;
                nmse_blocks += 1;
            }
        }
        if nmse_blocks > 0 {
            self.nmse_sum += nmse_total / nmse_blocks as f64;
        }
        self.trials += 1;
    }

    fn finalize(
        &self,
        axis_value: f64,
        method: Method,
        combiner: CombinerChoice,
        block_index: Option<usize>,
    ) -> SweepRow {
        let trials = self.trials.max(1) as f64;
        let reduce = |per_block: &Vec<f64>| -> f64 {
            match block_index {
                Some(n) => (per_block[n] / trials).sqrt(),
                None => {
                    let blocks = per_block.len() as f64;
                    per_block.iter().map(|s| (s / trials).sqrt()).sum::<f64>() / blocks
                }
            }
        };
        SweepRow {
            axis_value,
            method,
            combiner,
            rmse_doppler_hz: reduce(&self.err_sq[0]),
            rmse_elev_rad: reduce(&self.err_sq[1]),
            rmse_azim_rad: reduce(&self.err_sq[2]),
            nmse: self.nmse_sum / trials,
            crlb_doppler: reduce(&self.pred_var[0]),
            crlb_elev: reduce(&self.pred_var[1]),
            crlb_azim: reduce(&self.pred_var[2]),
            trials: self.trials,
            failures: self.failures,
        }
    }
}

/// Run a sweep: for each axis value, `trials` independent frames are
/// simulated and every requested method/combiner chain is evaluated on
/// the same realizations. Chain failures are counted per point and do
/// not abort the sweep.
pub fn sweep(
    scn: &Scenario,
    axis: SweepAxis,
    values: &[f64],
    trials: usize,
    methods: &[Method],
    combiners: &[CombinerChoice],
) -> Result<MetricSeries, HarnessError> {
    if axis == SweepAxis::Blocks {
        return sweep_blocks(scn, values, trials, methods, combiners);
    }
    let mut rows = Vec::new();
    for &value in values {
        let point = axis.apply(scn, value)?;
        let mut accums =
            vec![ChainAccum::new(point.frame.blocks); methods.len() * combiners.len()];
        for trial in 0..trials {
            let seed = trial_seed(point.run.seed, trial as u64);
            let truth = generate_truth(&point, seed)?;
            let mut chain_index = 0u64;
            for (mi, &method) in methods.iter().enumerate() {
                for (ci, &comb) in combiners.iter().enumerate() {
                    let accum = &mut accums[mi * combiners.len() + ci];
                    match run_chain(&point, &truth, method, comb, seed, chain_index) {
                        Ok(records) => accum.add(&records, &truth),
                        Err(_) => accum.failures += 1,
                    }
                    chain_index += 1;
                }
            }
        }
        for (mi, &method) in methods.iter().enumerate() {
            for (ci, &comb) in combiners.iter().enumerate() {
                rows.push(accums[mi * combiners.len() + ci].finalize(value, method, comb, None));
            }
        }
    }
    Ok(rows)
}

/// Per-block-index report at a fixed configuration (the frame is run
/// once per trial; rows slice the metrics at the requested indices).
fn sweep_blocks(
    scn: &Scenario,
    values: &[f64],
    trials: usize,
    methods: &[Method],
    combiners: &[CombinerChoice],
) -> Result<MetricSeries, HarnessError> {
    for &v in values {
        SweepAxis::Blocks.apply(scn, v)?;
    }
    let mut accums = vec![ChainAccum::new(scn.frame.blocks); methods.len() * combiners.len()];
    for trial in 0..trials {
        let seed = trial_seed(scn.run.seed, trial as u64);
        let truth = generate_truth(scn, seed)?;
        let mut chain_index = 0u64;
        for (mi, &method) in methods.iter().enumerate() {
            for (ci, &comb) in combiners.iter().enumerate() {
                let accum = &mut accums[mi * combiners.len() + ci];
                match run_chain(scn, &truth, method, comb, seed, chain_index) {
                    Ok(records) => accum.add(&records, &truth),
                    Err(_) => accum.failures += 1,
                }
                chain_index += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for &value in values {
        for (mi, &method) in methods.iter().enumerate() {
            for (ci, &comb) in combiners.iter().enumerate() {
                rows.push(accums[mi * combiners.len() + ci].finalize(
                    value,
                    method,
                    comb,
                    Some(value as usize),
                ));
            }
        }
    }
    Ok(rows)
}

// ---- CSV ---------------------------------------------------------------

pub const CSV_HEADER: &str = "axis_value,method,combiner,rmse_doppler_hz,rmse_elev_rad,\
rmse_azim_rad,nmse,crlb_doppler,crlb_elev,crlb_azim,trials";

/// Serialize rows with 9 significant digits; output is deterministic for
/// a given series.
pub fn format_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:.8e},{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{}\n",
            r.axis_value,
            r.method,
            r.combiner,
            r.rmse_doppler_hz,
            r.rmse_elev_rad,
            r.rmse_azim_rad,
            r.nmse,
            r.crlb_doppler,
            r.crlb_elev,
            r.crlb_azim,
            r.trials,
        ));
    }
    out
}

pub fn emit_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(format_csv(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn quiet_scenario() -> Scenario {
        // Zero channel and process noise, small grid for speed.
        Scenario::from_toml_str(
            "[link]\nnoise_var = 0.0\n[noise]\nsigma_pos_m = 0.0\nsigma_vel_mps = 0.0\n\
             [grid]\nelevations = 48\nazimuths = 48\n",
        )
        .unwrap()
    }

    #[test]
    fn truth_has_expected_block_count_and_orbit_radii() {
        let scn = quiet_scenario();
        let truth = generate_truth(&scn, 7).unwrap();
        assert_eq!(truth.blocks.len(), 10);
        let r_sat = truth.blocks[0].q_sat.position.norm();
        let r_gu = truth.blocks[0].q_gu.position.norm();
        for b in &truth.blocks {
            assert_relative_eq!(b.q_sat.position.norm(), r_sat, max_relative = 1e-9);
            assert_relative_eq!(b.q_gu.position.norm(), r_gu, max_relative = 1e-9);
        }
    }

    #[test]
    fn same_seed_reproduces_identical_outputs() {
        let mut scn = quiet_scenario();
        scn.link.noise_var = Some(1e-1);
        scn.noise.sigma_pos_m = 10.0;
        scn.noise.sigma_vel_mps = 1.0;
        let a = run_trial(&scn, 42).unwrap();
        let b = run_trial(&scn, 42).unwrap();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.params, rb.params);
            assert_eq!(ra.rough, rb.rough);
            assert_eq!(ra.csi_err_sq.to_bits(), rb.csi_err_sq.to_bits());
        }
        let c = run_trial(&scn, 43).unwrap();
        assert_ne!(a.records[3].params, c.records[3].params);
    }

    #[test]
    fn zero_noise_trial_tracks_truth() {
        let scn = quiet_scenario();
        let out = run_trial(&scn, 5).unwrap();
        for (n, (r, t)) in out.records.iter().zip(&out.truth.blocks).enumerate() {
            let rel_u =
                (r.params.doppler - t.z.doppler).abs() / t.z.doppler.abs().max(1.0);
            let rel_e = (r.params.elevation - t.z.elevation).abs() / t.z.elevation.abs();
            let rel_a = (r.params.azimuth - t.z.azimuth).abs() / t.z.azimuth.abs();
            assert!(rel_u < 1e-6, "block {n} doppler {rel_u:.2e}");
            assert!(rel_e < 1e-6, "block {n} elevation {rel_e:.2e}");
            assert!(rel_a < 1e-6, "block {n} azimuth {rel_a:.2e}");
        }
    }

    #[test]
    fn rmse_block_averaged_form() {
        // Perfect estimates.
        assert_eq!(rmse(&[vec![0.0, 0.0], vec![0.0, 0.0]]), 0.0);
        // Constant error epsilon at every block and trial.
        assert_relative_eq!(rmse(&[vec![0.5, 0.5], vec![0.5, 0.5]]), 0.5);
        // Two blocks with per-block root-mean errors 3 and 4: the block
        // average of the roots is 3.5, not sqrt(12.5).
        assert_relative_eq!(rmse(&[vec![3.0, 4.0]]), 3.5);
    }

    #[test]
    fn nmse_reference_points() {
        let h = DVector::from_vec(vec![Complex64::new(1.0, 1.0), Complex64::new(0.5, -2.0)]);
        let zero = DVector::from_vec(vec![Complex64::new(0.0, 0.0); 2]);
        assert_eq!(nmse(&[h.clone()], &[h.clone()]), 0.0);
        assert_relative_eq!(nmse(&[h.clone()], &[zero]), 1.0);
        let double = h.map(|z| z * 2.0);
        assert_relative_eq!(nmse(&[h.clone()], &[double]), 1.0);
    }

    #[test]
    fn trial_seeds_do_not_depend_on_axis_position() {
        assert_eq!(trial_seed(9, 4), trial_seed(9, 4));
        assert_ne!(trial_seed(9, 4), trial_seed(9, 5));
        assert_ne!(trial_seed(9, 4), trial_seed(10, 4));
    }

    #[test]
    fn single_point_single_trial_sweep() {
        let mut scn = quiet_scenario();
        scn.link.noise_var = None;
        scn.link.snr_db = 10.0;
        let rows = sweep(
            &scn,
            SweepAxis::Snr,
            &[10.0],
            1,
            &[Method::Jpct, Method::Rough],
            &[CombinerChoice::Proposed],
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, Method::Jpct);
        assert_eq!(rows[0].trials, 1);
        assert!(rows[0].rmse_doppler_hz.is_finite());
        assert!(rows[1].nmse > 0.0);
    }

    #[test]
    fn csv_is_deterministic_and_round_trips() {
        let rows = vec![SweepRow {
            axis_value: -10.0,
            method: Method::Jpct,
            combiner: CombinerChoice::Proposed,
            rmse_doppler_hz: 123.456789123,
            rmse_elev_rad: 1.23456789e-3,
            rmse_azim_rad: 9.87654321e-4,
            nmse: 0.4567891234,
            crlb_doppler: 88.8888888,
            crlb_elev: 7.77777777e-4,
            crlb_azim: 6.66666666e-4,
            trials: 500,
            failures: 0,
        }];
        let text1 = format_csv(&rows);
        let text2 = format_csv(&rows);
        assert_eq!(text1, text2);
        let mut lines = text1.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 11);
        assert_eq!(fields[1], "jpct");
        assert_eq!(fields[2], "proposed");
        let back: f64 = fields[3].parse().unwrap();
        assert_relative_eq!(back, 123.456789123, max_relative = 1e-9);
        let nmse_back: f64 = fields[6].parse().unwrap();
        assert_relative_eq!(nmse_back, 0.4567891234, max_relative = 1e-9);
        assert_eq!(fields[10], "500");
        // Empty series: header only.
        assert_eq!(format_csv(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn blocks_axis_reports_per_block_rows() {
        let scn = quiet_scenario();
        let rows = sweep(
            &scn,
            SweepAxis::Blocks,
            &[0.0, 4.0, 9.0],
            2,
            &[Method::Jpct],
            &[CombinerChoice::Proposed],
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].axis_value, 0.0);
        assert_eq!(rows[2].axis_value, 9.0);
        for r in &rows {
            assert!(r.rmse_doppler_hz.is_finite());
        }
        let bad = sweep(
            &scn,
            SweepAxis::Blocks,
            &[10.0],
            1,
            &[Method::Jpct],
            &[CombinerChoice::Proposed],
        );
        assert!(bad.is_err());
    }
}
