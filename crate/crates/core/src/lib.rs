//! Joint user-activity detection and channel estimation for grant-free
//! random access over a Rician land-mobile-satellite channel.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: devices, impairments, pilots and received-signal synthesis.
//! - [`bmp`]: the Bernoulli-Rician message-passing inner iterations.
//! - [`em`]: the EM outer loop that re-estimates the shared fading amplitude
//!   and phase shift, and the full BR-MP-EM driver ([`em::run`]).
//! - [`baselines`]: LS, LMMSE, OMP, genie-aided MMSE and an exhaustive
//!   enumeration oracle for small instances.
//! - [`metrics`]: NMSE, activity-detection error rate and friends.
//! - [`harness`]: seeded Monte-Carlo experiments, phase-transition search and
//!   CSV/JSON emission.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bmp;
pub mod em;
mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;

pub use error::{Error, Result};

pub use bmp::{DecisionState, HyperEstimate, InnerOptions, MessageState, PriorMoments};
pub use em::{EstimationResult, RunTrace};
pub use model::{
    ChannelRealization, DeviceProfile, EmVariant, Impairment, ImpairmentPrior, PilotMatrix,
    ProfileRanges, Scenario, ScenarioConfig,
};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
