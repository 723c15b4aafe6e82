//! Link-level simulator for joint Doppler/angle-of-arrival and channel
//! tracking on a LEO satellite MIMO-OFDM uplink.
//!
//! A satellite with a uniform planar array receives pilot blocks from a
//! mobile ground user. Each block is processed by a tracking pipeline:
//!
//! 1. rough Doppler estimation (ESPRIT on shifted correlation matrices),
//! 2. rough angle estimation (one-atom SOMP over a steering-vector grid),
//! 3. measurement-error prediction from closed-form Cramér-Rao bounds,
//! 4. EKF tracking of the user's kinematic state on its orbit model,
//! 5. parameter update through the state-to-measurement maps, and
//! 6. least-squares channel recovery with the updated Doppler.
//!
//! The crate is organized as a library with runnable demos under
//! `examples/` and a thin batch CLI (`leotrack`) for scenario simulation
//! and Monte Carlo sweeps.

pub mod channel;
pub mod crlb;
pub mod estimators;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod scenario;
pub mod tracking;

pub use channel::{ArrayGeometry, ChannelVector, Combiner, LinkBudget, PathSet, PilotConfig};
pub use crlb::CrlbPrediction;
pub use estimators::{AngleGrid, RoughEstimate};
pub use geometry::{
    ArrayFrame, MeasurementVector, OrbitSpec, ProcessNoiseSpec, StateVector, Vec3,
};
pub use harness::{CombinerChoice, Method, MetricSeries, SweepAxis, SweepRow};
pub use scenario::{load_scenario, Scenario};
pub use tracking::{BlockResult, EkfState, TrackerConfig};
