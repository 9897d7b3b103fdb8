//! Decentralized online identification of the kinematic and dynamic
//! parameters of a rigid body manipulated cooperatively by several robots.
//!
//! Each robot measures, in its own body-fixed sensor frame, its twist
//! `(ω, v)`, proper acceleration, and the wrench it applies. From those
//! local measurements alone, and communication restricted to one-hop
//! network neighbours, every robot identifies:
//!
//! 1. the constant relative pose to each neighbour, estimated on unit dual
//!    quaternions with an exact constrained linear filter, and
//! 2. the payload's mass, mass center and inertia tensor, estimated with a
//!    recursive least-squares filter over linear pseudo-observation models,
//!    with the total applied wrench recovered by average consensus carried
//!    out in per-robot coordinates.
//!
//! The crate also ships a simulation harness (`scenario` + `driver`, plus the
//! `coop-ident` binary) that synthesizes ground truth, drives the two
//! identification phases, and emits CSV metric traces.
//!
//! Module map:
//! * [`dq`] — quaternion / dual-quaternion algebra and the twist adjoint.
//! * [`se3`] — poses, twists, wrenches, 6×6 adjoints.
//! * [`sim`] — rigid-body ground truth and noisy sensor synthesis.
//! * [`obs`] — linear observation builders for pose, angular acceleration,
//!   mass center, inertia, mass, and the combined model.
//! * [`filter`] — recursive least squares with forgetting, state-dependent
//!   observation covariance propagation, and the dual-quaternion pose filter.
//! * [`consensus`] — average consensus with per-edge coordinate transforms.
//! * [`scenario`] / [`driver`] — experiment configuration and execution.

pub mod consensus;
pub mod dq;
pub mod driver;
pub mod error;
pub mod filter;
pub mod linalg;
pub mod obs;
pub mod scenario;
pub mod se3;
pub mod sim;
pub mod test_util;

pub use error::{Error, Result};
