//! Parametric uplink channel synthesis: link budget, Rician multipath
//! gains, planar-array response, pilot sequences, and the de-spread
//! pilot observations seen at the RF chains.
//!
//! The model works at the per-subcarrier symbol level. Within one block
//! the channel is a rank-1 vector `h = C * a(theta_E, theta_A)` where `C`
//! collapses all path gains and delays at the occupied subcarrier, and
//! consecutive pilot symbols only rotate by the Doppler phase.

use crate::linalg::{CMatrix, CVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;
use thiserror::Error;

/// De-spread pilot observations for one block; `rf_chains x n_pilots`,
/// column `b` holds the combined symbol-`b` snapshot.
pub type ReceivedBlock = CMatrix;

/// Complex channel vector over the array for one subcarrier and block.
pub type ChannelVector = CVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("Zadoff-Chu root {root} is not coprime with length {len}")]
    NonCoprimeRoot { root: usize, len: usize },
    #[error("combiner matrix is all-zero")]
    ZeroCombiner,
    #[error("combiner must be fat: got {rf_chains} RF chains and {antennas} antennas")]
    CombinerShape { rf_chains: usize, antennas: usize },
}

/// Link-level constants, all in linear units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    /// Carrier frequency (Hz).
    pub carrier_hz: f64,
    /// Subcarrier spacing (Hz).
    pub subcarrier_spacing_hz: f64,
    /// Channel bandwidth (Hz).
    pub bandwidth_hz: f64,
    /// Ground-user antenna gain over noise temperature (linear, 1/K).
    pub gain_over_temp: f64,
    /// Satellite receive antenna gain (linear).
    pub sat_gain: f64,
    /// Rician factor (linear).
    pub rician: f64,
    /// Boltzmann's constant (J/K).
    pub boltzmann: f64,
    /// Transmit power (W).
    pub tx_power: f64,
    /// Per-antenna noise variance (W).
    pub noise_var: f64,
    /// Propagation speed (m/s).
    pub light_speed: f64,
}

impl LinkBudget {
    /// Carrier wavelength (m).
    pub fn wavelength(&self) -> f64 {
        self.light_speed / self.carrier_hz
    }
}

/// Uniform planar array layout; `antennas = m_x * m_y` with half-wavelength
/// spacing on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayGeometry {
    pub m_x: usize,
    pub m_y: usize,
}

impl ArrayGeometry {
    pub fn new(m_x: usize, m_y: usize) -> Self {
        assert!(m_x >= 1 && m_y >= 1, "array axes must be at least 1");
        Self { m_x, m_y }
    }

    pub fn antennas(&self) -> usize {
        self.m_x * self.m_y
    }
}

/// Multipath for one block: raw gains, delays, large-scale factor, and the
/// equivalent gains after the Rician split. Index 0 is the line of sight.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub gains: Vec<Complex64>,
    pub delays: Vec<f64>,
    pub beta: f64,
    pub equivalent_gains: Vec<Complex64>,
}

impl PathSet {
    /// Assemble a path set from raw gains and delays.
    pub fn new(
        gains: Vec<Complex64>,
        delays: Vec<f64>,
        rician: f64,
        beta: f64,
        sat_gain: f64,
    ) -> Self {
        assert_eq!(gains.len(), delays.len());
        assert!(!gains.is_empty(), "at least the line-of-sight path");
        let equivalent_gains = equivalent_gains(&gains, rician, beta, sat_gain);
        Self {
            gains,
            delays,
            beta,
            equivalent_gains,
        }
    }

    /// Draw a block realization: unit-variance complex Gaussian gains and
    /// delays uniform over one subcarrier-spacing period.
    pub fn draw(
        rng: &mut impl Rng,
        count: usize,
        rician: f64,
        beta: f64,
        sat_gain: f64,
        subcarrier_spacing_hz: f64,
    ) -> Self {
        let gains: Vec<Complex64> = (0..count).map(|_| complex_gaussian_unit(rng)).collect();
        let delay_span = 1.0 / subcarrier_spacing_hz;
        let delays: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..delay_span)).collect();
        Self::new(gains, delays, rician, beta, sat_gain)
    }
}

/// Analog combining matrix (`rf_chains x antennas`), Frobenius-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    w: CMatrix,
}

impl Combiner {
    /// Wrap and Frobenius-normalize a combining matrix.
    pub fn new(w: CMatrix) -> Result<Self, ChannelError> {
        if w.nrows() > w.ncols() {
            return Err(ChannelError::CombinerShape {
                rf_chains: w.nrows(),
                antennas: w.ncols(),
            });
        }
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(ChannelError::ZeroCombiner);
        }
        Ok(Self {
            w: w.map(|z| z / norm),
        })
    }

    /// Unit-modulus random-phase combiner, Frobenius-normalized.
    pub fn random(rf_chains: usize, antennas: usize, rng: &mut impl Rng) -> Self {
        let w = CMatrix::from_fn(rf_chains, antennas, |_, _| {
            Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))
        });
        Self::new(w).expect("unit-modulus matrix is nonzero")
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.w
    }

    /// `Sigma = W W^H`, the post-combining noise shaping matrix.
    pub fn sigma(&self) -> CMatrix {
        &self.w * self.w.adjoint()
    }

    pub fn rf_chains(&self) -> usize {
        self.w.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.w.ncols()
    }
}

/// Pilot layout for one block: unit-modulus symbols sent on one subcarrier
/// over `n_pilots` consecutive OFDM symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotConfig {
    pub n_pilots: usize,
    pub t_sym: f64,
    pub subcarrier: usize,
    pub symbols: Vec<Complex64>,
}

impl PilotConfig {
    /// Zadoff-Chu pilot sequence with the given root.
    pub fn zadoff_chu(
        n_pilots: usize,
        root: usize,
        t_sym: f64,
        subcarrier: usize,
    ) -> Result<Self, ChannelError> {
        Ok(Self {
            n_pilots,
            t_sym,
            subcarrier,
            symbols: zc_pilots(n_pilots, root)?,
        })
    }
}

/// One complex sample with unit variance (real and imaginary parts are
/// independent `N(0, 1/2)`).
pub fn complex_gaussian_unit(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Matrix of independent unit-variance complex Gaussians, drawn column by
/// column so a wider matrix extends (not reshuffles) a narrower one.
pub fn complex_gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    let mut m = CMatrix::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_gaussian_unit(rng);
        }
    }
    m
}

/// Large-scale fading factor: free-space loss at `distance` times the
/// gain-to-noise-temperature ratio over `kappa * B_w`.
pub fn large_scale_beta(distance: f64, lb: &LinkBudget) -> f64 {
    let free_space = lb.light_speed / (4.0 * PI * lb.carrier_hz * distance);
    free_space * free_space * lb.gain_over_temp / (lb.boltzmann * lb.bandwidth_hz)
}

/// Split raw path gains into equivalent gains: the line of sight carries
/// the Rician fraction `lambda/(lambda+1)` of the power, the remaining
/// paths share the rest equally.
pub fn equivalent_gains(
    gains: &[Complex64],
    rician: f64,
    beta: f64,
    sat_gain: f64,
) -> Vec<Complex64> {
    let count = gains.len();
    let los_scale = sat_gain * (rician * beta / (rician + 1.0)).sqrt();
    let mut out = Vec::with_capacity(count);
    out.push(gains[0] * los_scale);
    if count > 1 {
        let nlos_scale =
            sat_gain * (beta / (rician + 1.0)).sqrt() * (1.0 / (count as f64 - 1.0)).sqrt();
        for g in &gains[1..] {
            out.push(g * nlos_scale);
        }
    }
    out
}

/// Unit-norm planar-array response `a = a_x (x) a_y` at the given
/// elevation and azimuth; element `p * m_y + q` pairs row `p` with
/// column `q`.
pub fn array_response(theta_e: f64, theta_a: f64, geom: &ArrayGeometry) -> CVector {
    let virt_x = theta_a.sin() * theta_e.sin();
    let virt_y = theta_e.cos();
    let scale = 1.0 / ((geom.m_x * geom.m_y) as f64).sqrt();
    CVector::from_fn(geom.antennas(), |i, _| {
        let p = (i / geom.m_y) as f64;
        let q = (i % geom.m_y) as f64;
        Complex64::from_polar(scale, PI * (p * virt_x + q * virt_y))
    })
}

/// Aggregate complex gain at one subcarrier:
/// `C = sum_l g_l * exp(-j 2 pi (f_c + m df) tau_l)`.
pub fn summation_term(paths: &PathSet, lb: &LinkBudget, subcarrier: usize) -> Complex64 {
    let freq = lb.carrier_hz + subcarrier as f64 * lb.subcarrier_spacing_hz;
    paths
        .equivalent_gains
        .iter()
        .zip(&paths.delays)
        .map(|(g, tau)| g * Complex64::from_polar(1.0, -2.0 * PI * freq * tau))
        .sum()
}

/// Channel vector for one block and subcarrier under the common-AoA
/// multipath model: `h = C * a(theta_E, theta_A)`.
pub fn synth_channel(
    paths: &PathSet,
    theta_e: f64,
    theta_a: f64,
    geom: &ArrayGeometry,
    lb: &LinkBudget,
    subcarrier: usize,
) -> ChannelVector {
    array_response(theta_e, theta_a, geom) * summation_term(paths, lb, subcarrier)
}

/// De-spread received block given an explicit per-antenna noise matrix
/// (`antennas x n_pilots`, already scaled to the noise variance):
/// `r(b) = sqrt(P) W h e^{j 2 pi u b T} + W n(b) s*(b)`.
pub fn received_block_with_noise(
    h: &ChannelVector,
    doppler_hz: f64,
    w: &Combiner,
    pilots: &PilotConfig,
    tx_power: f64,
    noise: &CMatrix,
) -> ReceivedBlock {
    let signal = w.matrix() * h * Complex64::new(tx_power.sqrt(), 0.0);
    let combined_noise = w.matrix() * noise;
    let mut block = CMatrix::zeros(w.rf_chains(), pilots.n_pilots);
    for b in 0..pilots.n_pilots {
        let phase = Complex64::from_polar(1.0, 2.0 * PI * doppler_hz * b as f64 * pilots.t_sym);
        let despread = pilots.symbols[b].conj();
        let col = &signal * phase + combined_noise.column(b) * despread;
        block.set_column(b, &col);
    }
    block
}

/// De-spread received block with freshly drawn white noise of variance
/// `lb.noise_var` per antenna.
pub fn synth_received_block(
    h: &ChannelVector,
    doppler_hz: f64,
    w: &Combiner,
    pilots: &PilotConfig,
    lb: &LinkBudget,
    rng: &mut impl Rng,
) -> ReceivedBlock {
    let sigma = lb.noise_var.sqrt();
    let noise = complex_gaussian_matrix(rng, w.antennas(), pilots.n_pilots)
        .map(|z| z * sigma);
    received_block_with_noise(h, doppler_hz, w, pilots, lb.tx_power, &noise)
}

/// Unit-modulus Zadoff-Chu sequence of length `n` with the given root,
/// which must be coprime with `n`.
pub fn zc_pilots(n: usize, root: usize) -> Result<Vec<Complex64>, ChannelError> {
    fn gcd(mut a: usize, mut b: usize) -> usize {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    }
    if n == 0 || gcd(root, n) != 1 {
        return Err(ChannelError::NonCoprimeRoot { root, len: n });
    }
    let nf = n as f64;
    let rf = root as f64;
    Ok((0..n)
        .map(|b| {
            let bf = b as f64;
            let arg = if n % 2 == 0 {
                -PI * rf * bf * bf / nf
            } else {
                -PI * rf * bf * (bf + 1.0) / nf
            };
            Complex64::from_polar(1.0, arg)
        })
        .collect())
}

/// Per-antenna noise variance that realizes a target pre-combining SNR
/// `P E[|h_i|^2] / sigma_n^2` given the mean aggregate-gain power.
pub fn noise_var_for_snr(
    snr_linear: f64,
    tx_power: f64,
    mean_ctilde_sq: f64,
    antennas: usize,
) -> f64 {
    tx_power * mean_ctilde_sq / (antennas as f64 * snr_linear)
}
