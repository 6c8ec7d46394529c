//! Dynamic Bayesian persuasion in optimal-stopping environments.
//!
//! A principal designs the information an agent receives over time; the
//! agent decides when to stop and act. This crate computes optimal joint
//! laws of stopping beliefs and stopping times on finite grids, certifies
//! them with Lagrangian duals, evaluates closed-form strategies for the
//! binary-state and tail-censorship applications, and turns commitment
//! solutions into dynamically consistent ones.
//!
//! The modules, roughly in dependency order:
//!
//! - [`model`]: primitives, indirect utilities, distributions and obedience residuals.
//! - [`oracle`]: exact linear programs for the relaxed problem and its variants.
//! - [`saddle`]: the min-max dual algorithm and the first-order verifier.
//! - [`binary`]: suspense and targeting strategies for two states.
//! - [`censorship`]: the continuum-state tail-censorship policy.
//! - [`consistency`]: zero interim surplus, the goalposts application and a two-period game.
//! - [`io`]: JSON and CSV formats used by the command-line tool.

pub mod error;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod binary;
pub mod saddle;
pub mod censorship;
pub mod consistency;
pub mod io;

pub use error::{Error, Result};
