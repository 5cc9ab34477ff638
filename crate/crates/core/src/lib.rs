//! Learning-from-demonstration toolkit for bimanual tool manipulation.
//!
//! Multiple demonstrations are segmented into motion primitives, aligned with
//! DTW and encoded as GMMs; GMR produces a mean reference motion with a
//! variance envelope that drives a three-level speed plan. Reproduction runs
//! in a simulated look-and-move visual servo loop with a dual-rate,
//! latency-compensating Kalman filter.

pub mod context;
pub mod demo;
pub mod geometry;
pub mod kalman;
pub mod sim;
pub mod harness;
