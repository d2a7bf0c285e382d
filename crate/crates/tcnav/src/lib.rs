//! Tightly coupled GNSS-RTK / IMU / monocular-camera state estimation.
//!
//! The estimator is a sliding-window error-state Kalman filter over an
//! ECEF navigation state. Visual measurements enter through a pose-only
//! observation model that expresses feature depth as a closed-form
//! function of two camera poses, so no feature coordinates ever enter the
//! state vector. A classic MSCKF update (triangulation + left null-space
//! projection) is included as a baseline. GNSS enters as double-differenced
//! pseudorange and carrier phase against a short-baseline base station,
//! with integer ambiguities kept in the state and resolved by integer
//! least squares with decorrelation.
//!
//! The crate also ships a deterministic scenario simulator ([`sim`]) and
//! an evaluation pipeline ([`pipeline`], [`metrics`]) so every piece can
//! be exercised end to end against synthetic ground truth. See the
//! `examples/` directory for runnable entry points per capability and the
//! `tcnav` binary for the batch CLI (`simulate`, `run`, `evaluate`,
//! `plot`).

pub mod cli;
pub mod config;
pub mod dataset;
pub mod earth;
pub mod filter;
pub mod ins;
pub mod lambda;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod plot;
pub mod rtk;
pub mod sim;
pub mod stats;
pub mod vision;
