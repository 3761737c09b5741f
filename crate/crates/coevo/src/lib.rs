//! Co-evolution of body morphology and neural control for planar walkers.
//!
//! The crate bundles everything the experiments need:
//!
//! - [`sim2d`]: deterministic planar rigid-body simulation of capsule trees
//!   with hinge joints, limits, motors, and ground contact;
//! - [`bauplan`]: body templates (walker2d, halfcheetah, chain-N) and the
//!   tanh-squashed morphological genotype encoding;
//! - [`policy`]: the feedforward controller with running observation
//!   normalization and motor noise;
//! - [`episode`]: one evaluation episode with reward shaping and
//!   termination rules;
//! - [`es`]: the mirrored-sampling evolution strategy with centered-rank
//!   shaping, Adam updates, L1 decay, and a freeze mask;
//! - [`harness`]: experiment orchestration, checkpointing, drift and
//!   statistics reporting, plus the file formats behind the `coevo` CLI.

pub mod bauplan;
pub mod episode;
pub mod es;
pub mod harness;
pub mod policy;
pub mod sim2d;
