//! Masked-diffusion decoding laboratory.
//!
//! Greedy confidence-ordered unmasking over a fixed answer scaffold, a
//! deliberation gate that delays the verdict slot, infilling interventions,
//! and drift analysis over decoding trajectories.

pub mod analysis;
pub mod constraints;
pub mod corpus;
pub mod decoder;
pub mod denoiser;
pub mod error;
pub mod interventions;
pub mod layout;
pub mod leak;
pub mod state;
pub mod vocab;

pub use error::{Error, Result};
