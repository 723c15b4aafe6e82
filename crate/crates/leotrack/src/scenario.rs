//! Scenario configuration: a flat TOML file with dotted sections, every
//! key optional with defaults matching the reference simulation setup
//! (L-band uplink, 8x8 array with 32 RF chains, 10-block frame, ground
//! user on a surface orbit crossing the satellite's field of view).
//!
//! Decibel quantities live only in the file; everything is linearized at
//! load time.

use crate::channel::{self, ArrayGeometry, LinkBudget, PilotConfig};
use crate::estimators::AngleGrid;
use crate::geometry::{OrbitSpec, ProcessNoiseSpec, StateVector, Vec3};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        key,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarriers: usize,
    pub subcarrier_index: usize,
    pub tx_power_dbm: f64,
    pub sat_gain_dbi: f64,
    pub rician_factor: f64,
    pub gain_over_temp_db: f64,
    pub boltzmann: f64,
    pub light_speed: f64,
    pub paths: usize,
    /// Target pre-combining per-antenna SNR; ignored when `noise_var`
    /// is set explicitly.
    pub snr_db: f64,
    pub noise_var: Option<f64>,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            carrier_hz: 1.91e9,
            bandwidth_hz: 4e6,
            subcarriers: 64,
            subcarrier_index: 1,
            tx_power_dbm: 30.0,
            sat_gain_dbi: 8.0,
            rician_factor: 8.0,
            gain_over_temp_db: 1.0,
            boltzmann: 1.38e-23,
            light_speed: 3e8,
            paths: 2,
            snr_db: 0.0,
            noise_var: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub blocks: usize,
    pub ofdm_symbols: usize,
    pub symbol_duration_s: f64,
    pub pilots: usize,
    pub zc_root: usize,
    /// Optional consistency check; must equal
    /// `ofdm_symbols * symbol_duration_s` when present.
    pub block_duration_s: Option<f64>,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self {
            blocks: 10,
            ofdm_symbols: 312_500,
            symbol_duration_s: 8e-6,
            pilots: 10,
            zc_root: 1,
            block_duration_s: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub m_x: usize,
    pub m_y: usize,
    pub rf_chains: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            m_x: 8,
            m_y: 8,
            rf_chains: 32,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub elevations: usize,
    pub azimuths: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            elevations: 100,
            azimuths: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OrbitSection {
    pub earth_radius_m: f64,
    pub satellite_altitude_m: f64,
    pub satellite_speed_mps: f64,
    pub satellite_node_angle_deg: f64,
    pub satellite_inclination_deg: f64,
    /// Defaults to `[earth_radius + altitude, 0, 0]`.
    pub satellite_initial_position_m: Option<[f64; 3]>,
    pub gu_initial_position_m: [f64; 3],
    pub gu_speed_mps: f64,
    /// Defaults to `[1, -1, (y - x) / z]` from the initial position.
    pub gu_orbit_normal: Option<[f64; 3]>,
}

impl Default for OrbitSection {
    fn default() -> Self {
        Self {
            earth_radius_m: 6.37e6,
            satellite_altitude_m: 6e5,
            satellite_speed_mps: 7.6e3,
            satellite_node_angle_deg: 0.0,
            satellite_inclination_deg: 53.0,
            satellite_initial_position_m: None,
            gu_initial_position_m: [5e6, 2.7908e6, 2.7908e6],
            gu_speed_mps: 100.0 / 3.6,
            gu_orbit_normal: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma_pos_m: f64,
    pub sigma_vel_mps: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma_pos_m: 10.0,
            sigma_vel_mps: 1.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub trials: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 500,
        }
    }
}

/// Full experiment description. An empty file (or `Scenario::default()`)
/// reproduces the reference setup.
#[derive(Debug, Clone, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub link: LinkSection,
    pub frame: FrameSection,
    pub array: ArraySection,
    pub grid: GridSection,
    pub orbit: OrbitSection,
    pub noise: NoiseSection,
    pub run: RunSection,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml_str(&text)
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let scn: Scenario = toml::from_str(text)?;
        scn.validate()?;
        Ok(scn)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let l = &self.link;
        if !(l.carrier_hz > 0.0) {
            return Err(invalid("link.carrier_hz", "must be positive"));
        }
        if !(l.bandwidth_hz > 0.0) {
            return Err(invalid("link.bandwidth_hz", "must be positive"));
        }
        if l.subcarriers == 0 {
            return Err(invalid("link.subcarriers", "must be positive"));
        }
        if l.subcarrier_index >= l.subcarriers {
            return Err(invalid(
                "link.subcarrier_index",
                format!("must be below link.subcarriers = {}", l.subcarriers),
            ));
        }
        if l.paths == 0 {
            return Err(invalid("link.paths", "at least the line-of-sight path"));
        }
        if l.rician_factor < 0.0 {
            return Err(invalid("link.rician_factor", "must be non-negative"));
        }
        if let Some(nv) = l.noise_var {
            if !(nv >= 0.0) {
                return Err(invalid("link.noise_var", "must be non-negative"));
            }
        }

        let f = &self.frame;
        if f.blocks == 0 {
            return Err(invalid("frame.blocks", "must be positive"));
        }
        if f.pilots < 3 {
            return Err(invalid(
                "frame.pilots",
                "Doppler estimation needs at least 3 pilot symbols",
            ));
        }
        if f.pilots > f.ofdm_symbols {
            return Err(invalid(
                "frame.pilots",
                "cannot exceed frame.ofdm_symbols",
            ));
        }
        if !(f.symbol_duration_s > 0.0) {
            return Err(invalid("frame.symbol_duration_s", "must be positive"));
        }
        if let Some(tb) = f.block_duration_s {
            let derived = f.ofdm_symbols as f64 * f.symbol_duration_s;
            if (tb - derived).abs() > 1e-9 * derived.max(1e-300) {
                return Err(invalid(
                    "frame.block_duration_s",
                    format!("must equal ofdm_symbols * symbol_duration_s = {derived}"),
                ));
            }
        }
        channel::zc_pilots(f.pilots, f.zc_root).map_err(|e| invalid("frame.zc_root", e.to_string()))?;

        let a = &self.array;
        if a.m_x == 0 || a.m_y == 0 {
            return Err(invalid("array.m_x", "array axes must be positive"));
        }
        if a.rf_chains == 0 || a.rf_chains > a.m_x * a.m_y {
            return Err(invalid(
                "array.rf_chains",
                "must satisfy 1 <= rf_chains <= m_x * m_y",
            ));
        }
        let factorizable = (1..=a.m_x.min(a.rf_chains))
            .any(|sx| a.rf_chains % sx == 0 && a.rf_chains / sx <= a.m_y);
        if !factorizable {
            return Err(invalid(
                "array.rf_chains",
                "must factor into a subarray of the panel for the beam codebook",
            ));
        }

        let g = &self.grid;
        if g.elevations < 2 || g.azimuths < 2 {
            return Err(invalid("grid.elevations", "grid sizes must be at least 2"));
        }

        let o = &self.orbit;
        if !(o.earth_radius_m > 0.0) {
            return Err(invalid("orbit.earth_radius_m", "must be positive"));
        }
        if !(o.satellite_altitude_m > 0.0) {
            return Err(invalid("orbit.satellite_altitude_m", "must be positive"));
        }
        let p_gu = Vec3::from(o.gu_initial_position_m);
        if p_gu.norm() == 0.0 {
            return Err(invalid("orbit.gu_initial_position_m", "must be nonzero"));
        }
        let normal = self.gu_normal();
        if normal.norm() == 0.0 {
            return Err(invalid("orbit.gu_orbit_normal", "must be nonzero"));
        }
        let cosine = normal.normalize().dot(&p_gu.normalize()).abs();
        if cosine > 1e-6 {
            return Err(invalid(
                "orbit.gu_orbit_normal",
                format!("must be orthogonal to the initial position (cos = {cosine:.3e})"),
            ));
        }
        let p_sat = self.sat_initial_position();
        if p_sat.norm() == 0.0 {
            return Err(invalid(
                "orbit.satellite_initial_position_m",
                "must be nonzero",
            ));
        }
        let sat_normal = self.sat_orbit().plane_normal();
        let sat_cos = sat_normal.dot(&p_sat.normalize()).abs();
        if sat_cos > 1e-6 {
            return Err(invalid(
                "orbit.satellite_initial_position_m",
                format!("must lie in the orbit plane (cos = {sat_cos:.3e})"),
            ));
        }

        let n = &self.noise;
        if n.sigma_pos_m < 0.0 || n.sigma_vel_mps < 0.0 {
            return Err(invalid("noise.sigma_pos_m", "sigmas must be non-negative"));
        }

        if self.run.trials == 0 {
            return Err(invalid("run.trials", "must be positive"));
        }
        Ok(())
    }

    // Derived quantities, all in linear units.

    pub fn wavelength(&self) -> f64 {
        self.link.light_speed / self.link.carrier_hz
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.link.bandwidth_hz / self.link.subcarriers as f64
    }

    pub fn tx_power_w(&self) -> f64 {
        10f64.powf((self.link.tx_power_dbm - 30.0) / 10.0)
    }

    pub fn sat_gain_linear(&self) -> f64 {
        10f64.powf(self.link.sat_gain_dbi / 10.0)
    }

    pub fn gain_over_temp_linear(&self) -> f64 {
        10f64.powf(self.link.gain_over_temp_db / 10.0)
    }

    pub fn block_duration(&self) -> f64 {
        self.frame.ofdm_symbols as f64 * self.frame.symbol_duration_s
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.array.m_x, self.array.m_y)
    }

    pub fn angle_grid(&self) -> AngleGrid {
        AngleGrid::new(self.grid.elevations, self.grid.azimuths)
    }

    pub fn process_noise(&self) -> ProcessNoiseSpec {
        ProcessNoiseSpec {
            sigma_pos: self.noise.sigma_pos_m,
            sigma_vel: self.noise.sigma_vel_mps,
        }
    }

    pub fn pilot_config(&self) -> PilotConfig {
        PilotConfig::zadoff_chu(
            self.frame.pilots,
            self.frame.zc_root,
            self.frame.symbol_duration_s,
            self.link.subcarrier_index,
        )
        .expect("validated at load time")
    }

    pub fn sat_initial_position(&self) -> Vec3 {
        match self.orbit.satellite_initial_position_m {
            Some(p) => Vec3::from(p),
            None => Vec3::new(
                self.orbit.earth_radius_m + self.orbit.satellite_altitude_m,
                0.0,
                0.0,
            ),
        }
    }

    pub fn sat_orbit(&self) -> OrbitSpec {
        let radius = self.sat_initial_position().norm();
        OrbitSpec {
            theta_z: self.orbit.satellite_node_angle_deg.to_radians(),
            theta_x: self.orbit.satellite_inclination_deg.to_radians(),
            omega: self.orbit.satellite_speed_mps / radius,
            radius,
        }
    }

    fn gu_normal(&self) -> Vec3 {
        match self.orbit.gu_orbit_normal {
            Some(n) => Vec3::from(n),
            None => {
                let [x, y, z] = self.orbit.gu_initial_position_m;
                Vec3::new(1.0, -1.0, (y - x) / z)
            }
        }
    }

    pub fn gu_orbit(&self) -> OrbitSpec {
        let p = Vec3::from(self.orbit.gu_initial_position_m);
        let radius = p.norm();
        OrbitSpec::from_plane_normal(self.gu_normal(), self.orbit.gu_speed_mps / radius, radius)
    }

    pub fn initial_states(&self) -> (StateVector, StateVector) {
        let p_sat = self.sat_initial_position();
        let q_sat = StateVector::new(p_sat, self.sat_orbit().velocity_at(&p_sat));
        let p_gu = Vec3::from(self.orbit.gu_initial_position_m);
        let q_gu = StateVector::new(p_gu, self.gu_orbit().velocity_at(&p_gu));
        (q_sat, q_gu)
    }

    /// Initial slant range between satellite and user.
    pub fn initial_distance(&self) -> f64 {
        (self.sat_initial_position() - Vec3::from(self.orbit.gu_initial_position_m)).norm()
    }

    /// Expected aggregate-gain power at the initial geometry, the
    /// reference level for SNR calibration.
    pub fn mean_ctilde_sq(&self) -> f64 {
        let lb_probe = self.link_budget_with_noise(0.0);
        let beta = channel::large_scale_beta(self.initial_distance(), &lb_probe);
        let gamma = self.sat_gain_linear();
        gamma * gamma * beta
    }

    /// Per-antenna noise variance: either the explicit override or the
    /// value calibrated to the target SNR at the initial geometry.
    pub fn noise_var(&self) -> f64 {
        match self.link.noise_var {
            Some(nv) => nv,
            None => channel::noise_var_for_snr(
                10f64.powf(self.link.snr_db / 10.0),
                self.tx_power_w(),
                self.mean_ctilde_sq(),
                self.geometry().antennas(),
            ),
        }
    }

    fn link_budget_with_noise(&self, noise_var: f64) -> LinkBudget {
        LinkBudget {
            carrier_hz: self.link.carrier_hz,
            subcarrier_spacing_hz: self.subcarrier_spacing(),
            bandwidth_hz: self.link.bandwidth_hz,
            gain_over_temp: self.gain_over_temp_linear(),
            sat_gain: self.sat_gain_linear(),
            rician: self.link.rician_factor,
            boltzmann: self.link.boltzmann,
            tx_power: self.tx_power_w(),
            noise_var,
            light_speed: self.link.light_speed,
        }
    }

    pub fn link_budget(&self) -> LinkBudget {
        self.link_budget_with_noise(self.noise_var())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_file_gives_reference_defaults() {
        let scn = Scenario::from_toml_str("").unwrap();
        assert_eq!(scn, Scenario::default());
        assert_relative_eq!(scn.link.carrier_hz, 1.91e9);
        assert_eq!(scn.geometry().antennas(), 64);
        assert_eq!(scn.frame.pilots, 10);
        assert_eq!(scn.frame.blocks, 10);
        assert_eq!(scn.grid.elevations, 100);
        assert_relative_eq!(scn.block_duration(), 2.5, max_relative = 1e-12);
        assert_relative_eq!(scn.wavelength(), 3e8 / 1.91e9, max_relative = 1e-15);
        assert_relative_eq!(scn.tx_power_w(), 1.0, max_relative = 1e-12);
        scn.validate().unwrap();
    }

    #[test]
    fn single_override_leaves_other_defaults() {
        let scn = Scenario::from_toml_str("[frame]\npilots = 20\n").unwrap();
        assert_eq!(scn.frame.pilots, 20);
        let mut expected = Scenario::default();
        expected.frame.pilots = 20;
        assert_eq!(scn, expected);
    }

    #[test]
    fn inconsistent_block_duration_is_rejected() {
        let err = Scenario::from_toml_str("[frame]\nblock_duration_s = 2.0\n").unwrap_err();
        match err {
            ScenarioError::Invalid { key, .. } => assert_eq!(key, "frame.block_duration_s"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = Scenario::from_toml_str("[frame]\npilot_count = 20\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("pilot_count"), "error was: {text}");
    }

    #[test]
    fn misaligned_gu_normal_is_rejected() {
        let err = Scenario::from_toml_str("[orbit]\ngu_orbit_normal = [1.0, 0.0, 0.0]\n")
            .unwrap_err();
        match err {
            ScenarioError::Invalid { key, .. } => assert_eq!(key, "orbit.gu_orbit_normal"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn default_geometry_is_consistent() {
        let scn = Scenario::default();
        // The default user sits on the surface and the default normal is
        // orthogonal to it.
        let (q_sat, q_gu) = scn.initial_states();
        assert_relative_eq!(q_gu.position.norm(), 6.37e6, max_relative = 1e-4);
        assert_relative_eq!(q_sat.position.norm(), 6.97e6, max_relative = 1e-12);
        assert_relative_eq!(q_gu.velocity.norm(), 100.0 / 3.6, max_relative = 1e-9);
        assert_relative_eq!(q_sat.velocity.norm(), 7.6e3, max_relative = 1e-9);
        // Satellite velocity points along +Y tipped by the inclination.
        let incl = 53.0_f64.to_radians();
        assert_relative_eq!(
            q_sat.velocity,
            Vec3::new(0.0, 7.6e3 * incl.cos(), 7.6e3 * incl.sin()),
            epsilon = 1e-6
        );
    }

    #[test]
    fn snr_calibration_matches_override_path() {
        let via_snr = Scenario::from_toml_str("[link]\nsnr_db = -10.0\n").unwrap();
        let nv = via_snr.noise_var();
        assert!(nv > 0.0);
        let toml = format!("[link]\nnoise_var = {nv}\n");
        let via_override = Scenario::from_toml_str(&toml).unwrap();
        assert_relative_eq!(via_override.noise_var(), nv, max_relative = 1e-12);
        // 10 dB less SNR means 10x the noise power.
        let louder = Scenario::from_toml_str("[link]\nsnr_db = -20.0\n").unwrap();
        assert_relative_eq!(louder.noise_var(), 10.0 * nv, max_relative = 1e-12);
    }
}
