//! Desk-scale test bench for online adaptation of a learned kart dynamics
//! model under sampling-based predictive control.
//!
//! The crate simulates a one-tenth-scale kart on an oval course whose
//! surface friction changes halfway around, learns a neural one-step
//! dynamics model from cement-floor driving, and closes the loop with an
//! MPPI controller while the model adapts online. Three update policies are
//! compared end to end: a frozen model, per-window gradient descent, and a
//! continual meta-learning scheme that restarts fast parameters from
//! learned meta parameters at every surface boundary.
//!
//! Modules, roughly bottom-up:
//!
//! - [`nn`]: flat-parameter 6-32-32-4 network with hand-rolled backprop,
//!   finite-difference Hessian-vector products, SGD and Adam.
//! - [`types`]: vehicle state, pose, commands, sample windows.
//! - [`model`]: the network as a discrete-time vehicle model plus the
//!   multi-step rollout loss and its gradient through time.
//! - [`sim`]: ground-truth plant (brush-tire bicycle model, friction map).
//! - [`costmap`]: oval-track cost field.
//! - [`mppi`]: the sampling controller.
//! - [`adapt`]: online update policies (fixed / gd / cmaml).
//! - [`pretrain`]: data collection, decimation, offline training, and the
//!   on-track fine-tuning pass.
//! - [`logfile`]: CSV schemas for trajectory, telemetry, and adaptation
//!   logs.
//! - [`harness`]: seeded inference and control experiments with JSON/CSV
//!   reports and SVG figures.
//! - [`config`]: the TOML experiment configuration.
//!
//! See the crate examples for runnable walkthroughs of each capability,
//! and the `kartlab` binary for the batch experiment pipeline.

pub mod adapt;
pub mod config;
pub mod costmap;
pub mod error;
pub mod harness;
pub mod logfile;
pub mod model;
pub mod mppi;
pub mod nn;
pub mod pretrain;
pub mod sim;
pub mod svg;
pub mod types;

pub use error::{Error, Result};
