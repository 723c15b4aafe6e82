//! Earth-centered-fixed geometry: rotation matrices, circular-orbit state
//! evolution for the satellite and the ground user, the measurement maps
//! from kinematic states to Doppler and angles of arrival, and the
//! measurement Jacobian consumed by the tracking filter.
//!
//! All positions are meters and velocities m/s in a fixed Cartesian frame
//! with origin at the earth's center. Orbits are uniform circular motion
//! about that origin; an orbit plane is described by the angle of its node
//! line to the X-axis and its inclination to the XOY plane.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Cartesian triple in the earth-centered fixed frame.
pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("satellite and user positions coincide")]
    CoincidentPositions,
    #[error("array frame undefined: position and velocity are parallel or zero")]
    DegenerateFrame,
    #[error("azimuth undefined: user projects onto the array boresight point")]
    BoresightAzimuth,
    #[error("measurement map undefined within the finite-difference stencil")]
    JacobianUndefined,
}

/// Kinematic state of one body: position (m) and velocity (m/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub position: Vec3,
    pub velocity: Vec3,
}

impl StateVector {
    pub fn new(position: Vec3, velocity: Vec3) -> Self {
        Self { position, velocity }
    }

    /// Stack as `[x, y, z, vx, vy, vz]`.
    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.position.x,
            self.position.y,
            self.position.z,
            self.velocity.x,
            self.velocity.y,
            self.velocity.z,
        )
    }

    pub fn from_vector6(q: &Vector6<f64>) -> Self {
        Self {
            position: Vec3::new(q[0], q[1], q[2]),
            velocity: Vec3::new(q[3], q[4], q[5]),
        }
    }
}

/// Circular earth-centered orbit: node-line angle to the X-axis, plane
/// inclination to XOY, signed angular velocity (positive spins
/// counterclockwise about the plane normal), and radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitSpec {
    pub theta_z: f64,
    pub theta_x: f64,
    pub omega: f64,
    pub radius: f64,
}

impl OrbitSpec {
    /// Unit normal of the orbit plane, i.e. the image of the Z-axis under
    /// the plane rotation.
    pub fn plane_normal(&self) -> Vec3 {
        rot_about_z(self.theta_z) * rot_about_x(self.theta_x) * Vec3::new(0.0, 0.0, 1.0)
    }

    /// Orbit whose plane has the given normal. The normal need not be
    /// normalized; positive `omega` spins counterclockwise about it.
    pub fn from_plane_normal(normal: Vec3, omega: f64, radius: f64) -> Self {
        let n = normal.normalize();
        let theta_x = n.z.clamp(-1.0, 1.0).acos();
        let sin_x = (1.0 - n.z * n.z).max(0.0).sqrt();
        let theta_z = if sin_x < 1e-15 {
            0.0
        } else {
            f64::atan2(n.x, -n.y)
        };
        Self {
            theta_z,
            theta_x,
            omega,
            radius,
        }
    }

    /// Velocity of a body at `position` moving on this orbit.
    pub fn velocity_at(&self, position: &Vec3) -> Vec3 {
        self.plane_normal().cross(position) * self.omega
    }
}

/// Per-block state transition: a 3x3 rotation applied to position and
/// velocity alike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolutionMatrix {
    per_vector: Matrix3<f64>,
}

impl EvolutionMatrix {
    pub fn identity() -> Self {
        Self {
            per_vector: Matrix3::identity(),
        }
    }

    /// The 3x3 rotation applied to each of position and velocity.
    pub fn per_vector(&self) -> &Matrix3<f64> {
        &self.per_vector
    }

    /// The 6x6 block-diagonal form acting on a stacked state.
    pub fn block_diagonal(&self) -> Matrix6<f64> {
        let mut f = Matrix6::zeros();
        f.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.per_vector);
        f.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.per_vector);
        f
    }

    pub fn apply(&self, q: &StateVector) -> StateVector {
        StateVector {
            position: self.per_vector * q.position,
            velocity: self.per_vector * q.velocity,
        }
    }
}

/// Orientation of the planar array: boresight normal plus the two
/// in-plane axes, pairwise orthonormal with `s_x x s_y = n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayFrame {
    pub normal: Vec3,
    pub s_x: Vec3,
    pub s_y: Vec3,
}

/// The tracked parameter triple: Doppler shift (Hz), elevation (rad) in
/// `[0, pi/2]`, azimuth (rad) in `[-pi/2, pi/2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementVector {
    pub doppler: f64,
    pub elevation: f64,
    pub azimuth: f64,
}

impl MeasurementVector {
    pub fn new(doppler: f64, elevation: f64, azimuth: f64) -> Self {
        Self {
            doppler,
            elevation,
            azimuth,
        }
    }

    pub fn to_vector3(&self) -> Vec3 {
        Vec3::new(self.doppler, self.elevation, self.azimuth)
    }

    pub fn is_finite(&self) -> bool {
        self.doppler.is_finite() && self.elevation.is_finite() && self.azimuth.is_finite()
    }
}

/// Per-axis standard deviations of the user's state evolution noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoiseSpec {
    pub sigma_pos: f64,
    pub sigma_vel: f64,
}

impl ProcessNoiseSpec {
    pub const ZERO: Self = Self {
        sigma_pos: 0.0,
        sigma_vel: 0.0,
    };

    /// Diagonal process-noise covariance on the stacked state.
    pub fn covariance(&self) -> Matrix6<f64> {
        let mut q = Matrix6::zeros();
        for i in 0..3 {
            q[(i, i)] = self.sigma_pos * self.sigma_pos;
            q[(i + 3, i + 3)] = self.sigma_vel * self.sigma_vel;
        }
        q
    }
}

/// Rotation by `theta` about the Z-axis.
pub fn rot_about_z(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation by `theta` about the X-axis.
pub fn rot_about_x(theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Per-block evolution matrix for a body on `spec`: rotate into the orbit
/// plane, advance by `omega * block_duration`, rotate back.
pub fn build_evolution(spec: &OrbitSpec, block_duration: f64) -> EvolutionMatrix {
    let p_z = rot_about_z(spec.theta_z);
    let p_x = rot_about_x(spec.theta_x);
    let p_b = rot_about_z(spec.omega * block_duration);
    EvolutionMatrix {
        per_vector: p_z * p_x * p_b * p_x.transpose() * p_z.transpose(),
    }
}

/// One state-evolution step with additive per-axis Gaussian noise.
///
/// Six standard normals are always drawn (then scaled by the sigmas), so
/// the generator advances identically whether or not the noise is zero;
/// sweeps over noise levels therefore share the same underlying draws.
pub fn evolve_state(
    q: &StateVector,
    f: &EvolutionMatrix,
    noise: &ProcessNoiseSpec,
    rng: &mut impl Rng,
) -> StateVector {
    let rotated = f.apply(q);
    let mut draws = [0.0f64; 6];
    for d in draws.iter_mut() {
        *d = rng.sample(StandardNormal);
    }
    StateVector {
        position: rotated.position + Vec3::new(draws[0], draws[1], draws[2]) * noise.sigma_pos,
        velocity: rotated.velocity + Vec3::new(draws[3], draws[4], draws[5]) * noise.sigma_vel,
    }
}

/// Array orientation for a satellite state: boresight to the earth's
/// center, in-plane x-axis along the orbit-plane normal (so the array
/// plane is perpendicular to the orbit plane).
pub fn array_frame(q_sat: &StateVector) -> Result<ArrayFrame, GeometryError> {
    let r = q_sat.position.norm();
    if r == 0.0 {
        return Err(GeometryError::DegenerateFrame);
    }
    let cross = q_sat.position.cross(&q_sat.velocity);
    let cn = cross.norm();
    if cn == 0.0 || cn <= 1e-12 * r * q_sat.velocity.norm() {
        return Err(GeometryError::DegenerateFrame);
    }
    let normal = -q_sat.position / r;
    let s_x = cross / cn;
    let s_y = normal.cross(&s_x);
    Ok(ArrayFrame { normal, s_x, s_y })
}

/// Orthogonal projection of `p_u` onto the plane through `p_s` with
/// normal `n` (the array plane), written out coordinate by coordinate.
pub fn project_onto_plane(p_u: &Vec3, p_s: &Vec3, n: &Vec3) -> Vec3 {
    let c_s = -n.dot(p_s);
    let nn = n.norm_squared();
    let (nx, ny, nz) = (n.x, n.y, n.z);
    Vec3::new(
        ((ny * ny + nz * nz) * p_u.x - nx * (ny * p_u.y + nz * p_u.z + c_s)) / nn,
        ((nx * nx + nz * nz) * p_u.y - ny * (nx * p_u.x + nz * p_u.z + c_s)) / nn,
        ((nx * nx + ny * ny) * p_u.z - nz * (nx * p_u.x + ny * p_u.y + c_s)) / nn,
    )
}

/// Doppler shift (Hz) from the relative radial motion:
/// `u = -[(v_s - v_u) . (p_s - p_u)] / (lambda_c |p_s - p_u|)`.
/// Positive when the link is closing.
pub fn measure_doppler(
    q_sat: &StateVector,
    q_user: &StateVector,
    lambda_c: f64,
) -> Result<f64, GeometryError> {
    let d = q_sat.position - q_user.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(GeometryError::CoincidentPositions);
    }
    let dv = q_sat.velocity - q_user.velocity;
    Ok(-dv.dot(&d) / (lambda_c * dist))
}

/// Elevation of arrival (rad): angle between the link direction and the
/// array plane, `arcsin(|n . d| / (|n| |d|))` with `d = p_s - p_u`.
pub fn measure_elevation(
    q_sat: &StateVector,
    q_user: &StateVector,
    normal: &Vec3,
) -> Result<f64, GeometryError> {
    let d = q_sat.position - q_user.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(GeometryError::CoincidentPositions);
    }
    let arg = (normal.dot(&d).abs() / (normal.norm() * dist)).clamp(-1.0, 1.0);
    Ok(arg.asin())
}

/// Azimuth of arrival (rad): `pi/2` minus the angle between the in-plane
/// x-axis and the vector from the satellite to the user's projection onto
/// the array plane.
pub fn measure_azimuth(
    q_sat: &StateVector,
    q_user: &StateVector,
    frame: &ArrayFrame,
) -> Result<f64, GeometryError> {
    let d = q_sat.position - q_user.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(GeometryError::CoincidentPositions);
    }
    let projected = project_onto_plane(&q_user.position, &q_sat.position, &frame.normal);
    let sp = projected - q_sat.position;
    let sp_norm = sp.norm();
    if sp_norm <= 1e-12 * dist {
        return Err(GeometryError::BoresightAzimuth);
    }
    let arg = (sp.dot(&frame.s_x) / (sp_norm * frame.s_x.norm())).clamp(-1.0, 1.0);
    Ok(std::f64::consts::FRAC_PI_2 - arg.acos())
}

/// The full state-to-measurement map `z = g(q_sat, q_user)`.
pub fn measurement_map(
    q_sat: &StateVector,
    q_user: &StateVector,
    frame: &ArrayFrame,
    lambda_c: f64,
) -> Result<MeasurementVector, GeometryError> {
    Ok(MeasurementVector {
        doppler: measure_doppler(q_sat, q_user, lambda_c)?,
        elevation: measure_elevation(q_sat, q_user, &frame.normal)?,
        azimuth: measure_azimuth(q_sat, q_user, frame)?,
    })
}

/// Measurement Jacobian `dz/dq_user` (rows: Doppler, elevation, azimuth;
/// columns: x, y, z, vx, vy, vz) by central finite differences at the
/// predicted user state.
pub fn jacobian_g(
    q_sat: &StateVector,
    q_user_pred: &StateVector,
    frame: &ArrayFrame,
    lambda_c: f64,
) -> Result<Matrix3x6<f64>, GeometryError> {
    let x0 = q_user_pred.to_vector6();
    let mut jac = Matrix3x6::zeros();
    for col in 0..6 {
        let h = 1e-6 * x0[col].abs().max(1.0);
        let mut plus = x0;
        let mut minus = x0;
        plus[col] += h;
        minus[col] -= h;
        let z_plus = measurement_map(q_sat, &StateVector::from_vector6(&plus), frame, lambda_c)
            .map_err(|_| GeometryError::JacobianUndefined)?;
        let z_minus = measurement_map(q_sat, &StateVector::from_vector6(&minus), frame, lambda_c)
            .map_err(|_| GeometryError::JacobianUndefined)?;
        let dz = (z_plus.to_vector3() - z_minus.to_vector3()) / (2.0 * h);
        jac.set_column(col, &dz);
    }
    Ok(jac)
}

/// Analytic gradient of the Doppler map with respect to the user state,
/// used to cross-check the finite-difference Jacobian.
pub fn doppler_gradient(
    q_sat: &StateVector,
    q_user: &StateVector,
    lambda_c: f64,
) -> Result<Vector6<f64>, GeometryError> {
    let d = q_sat.position - q_user.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(GeometryError::CoincidentPositions);
    }
    let unit = d / dist;
    let dv = q_sat.velocity - q_user.velocity;
    let dpos = (dv - unit * dv.dot(&unit)) / (lambda_c * dist);
    let dvel = unit / lambda_c;
    Ok(Vector6::new(dpos.x, dpos.y, dpos.z, dvel.x, dvel.y, dvel.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    const EARTH_RADIUS: f64 = 6.37e6;
    const SAT_RADIUS: f64 = 6.97e6;

    fn sat_table_orbit() -> OrbitSpec {
        OrbitSpec {
            theta_z: 0.0,
            theta_x: 53.0_f64.to_radians(),
            omega: 7600.0 / SAT_RADIUS,
            radius: SAT_RADIUS,
        }
    }

    fn on_orbit_state(spec: &OrbitSpec, phase: f64) -> StateVector {
        let rot = rot_about_z(spec.theta_z) * rot_about_x(spec.theta_x);
        let in_plane = Vec3::new(spec.radius * phase.cos(), spec.radius * phase.sin(), 0.0);
        let position = rot * in_plane;
        StateVector::new(position, spec.velocity_at(&position))
    }

    #[test]
    fn rotations_match_definitions() {
        assert_relative_eq!(rot_about_z(0.0), Matrix3::identity(), epsilon = 0.0);
        assert_relative_eq!(rot_about_x(0.0), Matrix3::identity(), epsilon = 0.0);
        let turned = rot_about_z(FRAC_PI_2) * Vec3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(turned, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
        let tipped = rot_about_x(FRAC_PI_2) * Vec3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(tipped, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn rotation_inverse_is_negation_and_transpose() {
        let round = rot_about_z(0.73) * rot_about_z(-0.73);
        assert_relative_eq!(round, Matrix3::identity(), epsilon = 1e-15);
        let r = rot_about_x(1.1);
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn zero_rate_evolution_is_identity() {
        let spec = OrbitSpec {
            omega: 0.0,
            ..sat_table_orbit()
        };
        let f = build_evolution(&spec, 2.5);
        assert_relative_eq!(*f.per_vector(), Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn in_plane_evolution_reduces_to_z_rotation() {
        let spec = OrbitSpec {
            theta_z: 0.0,
            theta_x: 0.0,
            omega: FRAC_PI_2,
            radius: 1.0,
        };
        let f = build_evolution(&spec, 1.0);
        assert_relative_eq!(*f.per_vector(), rot_about_z(FRAC_PI_2), epsilon = 1e-15);
    }

    #[test]
    fn table_settings_rotation_angle() {
        let f = build_evolution(&sat_table_orbit(), 2.5);
        let angle = ((f.per_vector().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        let expected = 7600.0 / SAT_RADIUS * 2.5;
        assert_relative_eq!(angle, expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 2.7259684e-3, max_relative = 1e-6);
    }

    #[test]
    fn evolution_is_orthogonal_with_unit_det() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let spec = OrbitSpec {
                theta_z: rng.gen_range(-PI..PI),
                theta_x: rng.gen_range(0.0..PI),
                omega: rng.gen_range(-1e-2..1e-2),
                radius: rng.gen_range(1e6..1e7),
            };
            let f = build_evolution(&spec, rng.gen_range(0.1..10.0));
            let m = f.per_vector();
            let gram = m.transpose() * m;
            assert_relative_eq!(gram, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn noiseless_identity_evolution_keeps_state() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let q = StateVector::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.1, 0.2, 0.4));
        let next = evolve_state(
            &q,
            &EvolutionMatrix::identity(),
            &ProcessNoiseSpec::ZERO,
            &mut rng,
        );
        assert_eq!(next, q);
    }

    #[test]
    fn noiseless_evolution_preserves_norms_over_ten_blocks() {
        let spec = sat_table_orbit();
        let f = build_evolution(&spec, 2.5);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut q = on_orbit_state(&spec, 0.0);
        let (r0, v0) = (q.position.norm(), q.velocity.norm());
        for _ in 0..10 {
            q = evolve_state(&q, &f, &ProcessNoiseSpec::ZERO, &mut rng);
        }
        assert_relative_eq!(q.position.norm(), r0, max_relative = 1e-9);
        assert_relative_eq!(q.velocity.norm(), v0, max_relative = 1e-9);
    }

    #[test]
    fn equatorial_quarter_turn_moves_x_to_y() {
        let spec = OrbitSpec {
            theta_z: 0.0,
            theta_x: 0.0,
            omega: FRAC_PI_2,
            radius: SAT_RADIUS,
        };
        let f = build_evolution(&spec, 1.0);
        let start = Vec3::new(SAT_RADIUS, 0.0, 0.0);
        let q = StateVector::new(start, spec.velocity_at(&start));
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let next = evolve_state(&q, &f, &ProcessNoiseSpec::ZERO, &mut rng);
        let err = (next.position - Vec3::new(0.0, SAT_RADIUS, 0.0)).norm() / SAT_RADIUS;
        assert!(err < 1e-6, "quarter-turn position error {err:.3e}");
    }

    proptest! {
        #[test]
        fn evolution_group_property(theta_z in -3.0..3.0f64, theta_x in 0.0..3.0f64,
                                    omega in -1e-2..1e-2f64, t1 in 0.1..5.0f64, t2 in 0.1..5.0f64) {
            let spec = OrbitSpec { theta_z, theta_x, omega, radius: 1.0e6 };
            let f1 = build_evolution(&spec, t1);
            let f2 = build_evolution(&spec, t2);
            let f12 = build_evolution(&spec, t1 + t2);
            let err = (f1.per_vector() * f2.per_vector() - f12.per_vector()).norm();
            prop_assert!(err < 1e-10, "group defect {err:.3e}");
        }
    }

    #[test]
    fn frame_of_axis_aligned_orbit() {
        let q = StateVector::new(
            Vec3::new(SAT_RADIUS, 0.0, 0.0),
            Vec3::new(0.0, 7600.0, 0.0),
        );
        let frame = array_frame(&q).unwrap();
        assert_relative_eq!(frame.normal, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(frame.s_x, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(frame.s_y, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn frame_is_orthonormal_for_random_states() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..100 {
            let spec = OrbitSpec {
                theta_z: rng.gen_range(-PI..PI),
                theta_x: rng.gen_range(0.0..PI),
                omega: rng.gen_range(1e-4..1e-2),
                radius: rng.gen_range(6.5e6..8e6),
            };
            let q = on_orbit_state(&spec, rng.gen_range(-PI..PI));
            let f = array_frame(&q).unwrap();
            assert_relative_eq!(f.normal.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(f.s_x.norm(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(f.s_y.norm(), 1.0, epsilon = 1e-12);
            assert!(f.normal.dot(&f.s_x).abs() < 1e-12);
            assert!(f.normal.dot(&f.s_y).abs() < 1e-12);
            assert!(f.s_x.dot(&f.s_y).abs() < 1e-12);
            assert_relative_eq!(f.s_x.cross(&f.s_y), f.normal, epsilon = 1e-10);
            // Boresight looks at the earth's center.
            assert_relative_eq!(
                f.normal.dot(&q.position),
                -q.position.norm(),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn radial_velocity_has_no_frame() {
        let q = StateVector::new(Vec3::new(SAT_RADIUS, 0.0, 0.0), Vec3::new(100.0, 0.0, 0.0));
        assert_eq!(array_frame(&q), Err(GeometryError::DegenerateFrame));
    }

    #[test]
    fn projection_axis_aligned_case() {
        let p = project_onto_plane(
            &Vec3::new(1.0, 2.0, 3.0),
            &Vec3::zeros(),
            &Vec3::new(0.0, 0.0, 1.0),
        );
        assert_relative_eq!(p, Vec3::new(1.0, 2.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn projection_fixes_in_plane_points_and_residual_is_normal() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if n.norm() < 1e-3 {
                continue;
            }
            let p_s = Vec3::new(
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-1e6..1e6),
            );
            let p_u = Vec3::new(
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-1e6..1e6),
                rng.gen_range(-1e6..1e6),
            );
            let proj = project_onto_plane(&p_u, &p_s, &n);
            // Projected point lies in the plane through p_s.
            let in_plane = n.dot(&(proj - p_s)).abs() / (n.norm() * (proj - p_s).norm().max(1.0));
            assert!(in_plane < 1e-9, "in-plane residual {in_plane:.3e}");
            // Residual direction is parallel to the normal.
            let residual = p_u - proj;
            if residual.norm() > 1e-6 {
                let cross = residual.cross(&n).norm() / (residual.norm() * n.norm());
                assert!(cross < 1e-9, "residual not parallel to normal: {cross:.3e}");
            }
            // A point already in the plane is a fixed point.
            let again = project_onto_plane(&proj, &p_s, &n);
            assert_relative_eq!(again, proj, max_relative = 1e-9, epsilon = 1e-6);
        }
    }

    #[test]
    fn doppler_zero_cases() {
        let q_s = StateVector::new(Vec3::new(1e6, 0.0, 0.0), Vec3::new(0.0, 500.0, 0.0));
        let q_u = StateVector::new(Vec3::zeros(), Vec3::new(0.0, 500.0, 0.0));
        assert_eq!(measure_doppler(&q_s, &q_u, 0.157).unwrap(), 0.0);
        // Relative velocity perpendicular to the line of sight.
        let q_u2 = StateVector::new(Vec3::zeros(), Vec3::new(0.0, 200.0, 0.0));
        assert_relative_eq!(
            measure_doppler(&q_s, &q_u2, 0.157).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn doppler_closing_at_table_speed() {
        let lambda_c = 3e8 / 1.91e9;
        let q_s = StateVector::new(Vec3::new(1e6, 0.0, 0.0), Vec3::new(-7600.0, 0.0, 0.0));
        let q_u = StateVector::new(Vec3::zeros(), Vec3::zeros());
        let u = measure_doppler(&q_s, &q_u, lambda_c).unwrap();
        let expected = 7600.0 * 1.91e9 / 3e8;
        assert_relative_eq!(u, expected, max_relative = 1e-12);
        assert!((u - 48386.67).abs() < 1.0, "u = {u}");
    }

    #[test]
    fn coincident_positions_error() {
        let q = StateVector::new(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros());
        assert_eq!(
            measure_doppler(&q, &q, 0.1),
            Err(GeometryError::CoincidentPositions)
        );
    }

    #[test]
    fn elevation_extremes_and_slant() {
        let n = Vec3::new(-1.0, 0.0, 0.0);
        let q_s = StateVector::new(Vec3::new(2e6, 0.0, 0.0), Vec3::zeros());
        // d parallel to the normal: boresight, pi/2.
        let below = StateVector::new(Vec3::new(1e6, 0.0, 0.0), Vec3::zeros());
        assert_relative_eq!(
            measure_elevation(&q_s, &below, &n).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        // d perpendicular to the normal: in-plane arrival, 0.
        let side = StateVector::new(Vec3::new(2e6, -1e6, 0.0), Vec3::zeros());
        assert_relative_eq!(
            measure_elevation(&q_s, &side, &n).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        // d at 30 degrees from the plane.
        let t = Vec3::new(0.0, 1.0, 0.0); // in-plane unit
        let d = t * FRAC_PI_6.cos() + n * FRAC_PI_6.sin();
        let slant = StateVector::new(q_s.position - d * 1e6, Vec3::zeros());
        assert_relative_eq!(
            measure_elevation(&q_s, &slant, &n).unwrap(),
            FRAC_PI_6,
            epsilon = 1e-12
        );
    }

    #[test]
    fn azimuth_cardinal_directions() {
        let q_s = StateVector::new(
            Vec3::new(SAT_RADIUS, 0.0, 0.0),
            Vec3::new(0.0, 7600.0, 0.0),
        );
        let frame = array_frame(&q_s).unwrap(); // s_x = +z, s_y = +y
        let along_sx = StateVector::new(Vec3::new(SAT_RADIUS - 1e5, 0.0, 5e5), Vec3::zeros());
        assert_relative_eq!(
            measure_azimuth(&q_s, &along_sx, &frame).unwrap(),
            FRAC_PI_2,
            epsilon = 1e-12
        );
        let along_sy = StateVector::new(Vec3::new(SAT_RADIUS - 1e5, 5e5, 0.0), Vec3::zeros());
        assert_relative_eq!(
            measure_azimuth(&q_s, &along_sy, &frame).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let against_sx = StateVector::new(Vec3::new(SAT_RADIUS - 1e5, 0.0, -5e5), Vec3::zeros());
        assert_relative_eq!(
            measure_azimuth(&q_s, &against_sx, &frame).unwrap(),
            -FRAC_PI_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn boresight_user_has_undefined_azimuth() {
        let q_s = StateVector::new(
            Vec3::new(SAT_RADIUS, 0.0, 0.0),
            Vec3::new(0.0, 7600.0, 0.0),
        );
        let frame = array_frame(&q_s).unwrap();
        let below = StateVector::new(Vec3::new(EARTH_RADIUS, 0.0, 0.0), Vec3::zeros());
        assert_eq!(
            measure_azimuth(&q_s, &below, &frame),
            Err(GeometryError::BoresightAzimuth)
        );
    }

    #[test]
    fn map_agrees_with_componentwise_calls() {
        let spec = sat_table_orbit();
        let q_s = on_orbit_state(&spec, 0.2);
        let q_u = StateVector::new(
            Vec3::new(5e6, 2.7908e6, 2.7908e6),
            Vec3::new(-10.0, 15.0, 20.0),
        );
        let frame = array_frame(&q_s).unwrap();
        let lambda_c = 3e8 / 1.91e9;
        let z = measurement_map(&q_s, &q_u, &frame, lambda_c).unwrap();
        assert_eq!(z.doppler, measure_doppler(&q_s, &q_u, lambda_c).unwrap());
        assert_eq!(
            z.elevation,
            measure_elevation(&q_s, &q_u, &frame.normal).unwrap()
        );
        assert_eq!(z.azimuth, measure_azimuth(&q_s, &q_u, &frame).unwrap());
        assert!(z.elevation >= 0.0 && z.elevation <= FRAC_PI_2);
        assert!(z.azimuth >= -FRAC_PI_2 && z.azimuth <= FRAC_PI_2);
    }

    #[test]
    fn zero_relative_velocity_gives_exactly_zero_doppler() {
        let v = Vec3::new(120.0, -40.0, 75.0);
        let q_s = StateVector::new(Vec3::new(SAT_RADIUS, 1e5, -2e5), v);
        let q_u = StateVector::new(Vec3::new(5e6, 2e6, 1e6), v);
        let frame =
            array_frame(&StateVector::new(q_s.position, Vec3::new(0.0, 7600.0, 0.0))).unwrap();
        let z = measurement_map(&q_s, &q_u, &frame, 0.157).unwrap();
        assert_eq!(z.doppler, 0.0);
    }

    #[test]
    fn angles_do_not_depend_on_velocities() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let spec = sat_table_orbit();
        let q_s = on_orbit_state(&spec, 0.1);
        let frame = array_frame(&q_s).unwrap();
        let p_u = Vec3::new(5e6, 2.7908e6, 2.7908e6);
        let lambda_c = 0.157;
        let base =
            measurement_map(&q_s, &StateVector::new(p_u, Vec3::zeros()), &frame, lambda_c).unwrap();
        for _ in 0..20 {
            let v_s = Vec3::new(
                rng.gen_range(-8e3..8e3),
                rng.gen_range(-8e3..8e3),
                rng.gen_range(-8e3..8e3),
            );
            let v_u = Vec3::new(
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
                rng.gen_range(-30.0..30.0),
            );
            let z = measurement_map(
                &StateVector::new(q_s.position, v_s),
                &StateVector::new(p_u, v_u),
                &frame,
                lambda_c,
            )
            .unwrap();
            assert_eq!(z.elevation, base.elevation);
            assert_eq!(z.azimuth, base.azimuth);
        }
    }

    #[test]
    fn jacobian_velocity_columns_of_angle_rows_are_zero() {
        let spec = sat_table_orbit();
        let q_s = on_orbit_state(&spec, 0.05);
        let frame = array_frame(&q_s).unwrap();
        let q_u = StateVector::new(
            Vec3::new(5e6, 2.7908e6, 2.7908e6),
            Vec3::new(-10.0, 15.0, 20.0),
        );
        let g = jacobian_g(&q_s, &q_u, &frame, 0.157).unwrap();
        for row in 1..3 {
            for col in 3..6 {
                assert_eq!(g[(row, col)], 0.0, "row {row} col {col}");
            }
        }
    }

    #[test]
    fn jacobian_doppler_row_matches_analytic_gradient() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let lambda_c = 3e8 / 1.91e9;
        for _ in 0..100 {
            let spec = OrbitSpec {
                theta_z: rng.gen_range(-PI..PI),
                theta_x: rng.gen_range(0.0..PI),
                omega: rng.gen_range(5e-4..2e-3),
                radius: rng.gen_range(6.8e6..7.2e6),
            };
            let q_s = on_orbit_state(&spec, rng.gen_range(-PI..PI));
            let frame = array_frame(&q_s).unwrap();
            // Ground user somewhere on the surface, away from boresight.
            let dir = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let q_u = StateVector::new(
                dir * EARTH_RADIUS,
                Vec3::new(
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-30.0..30.0),
                    rng.gen_range(-30.0..30.0),
                ),
            );
            let g = match jacobian_g(&q_s, &q_u, &frame, lambda_c) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let grad = doppler_gradient(&q_s, &q_u, lambda_c).unwrap();
            let fd_row = g.row(0).transpose();
            let err = (fd_row - grad).norm() / grad.norm();
            assert!(err < 1e-5, "Doppler row mismatch {err:.3e}");
        }
    }

    #[test]
    fn doppler_velocity_sensitivity_along_los() {
        let lambda_c = 0.157;
        let q_s = StateVector::new(Vec3::new(2e6, 0.0, 0.0), Vec3::new(0.0, 1000.0, 0.0));
        let q_u = StateVector::new(Vec3::new(1e6, 0.0, 0.0), Vec3::zeros());
        // Line of sight from user to satellite along +x.
        let grad = doppler_gradient(&q_s, &q_u, lambda_c).unwrap();
        assert_relative_eq!(grad[3], 1.0 / lambda_c, max_relative = 1e-12);
        assert_relative_eq!(grad[4], 0.0, epsilon = 1e-12);
        assert_relative_eq!(grad[5], 0.0, epsilon = 1e-12);
    }
}
