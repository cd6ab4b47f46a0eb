//! POE-Δ change-engineering kernel: organisation model, `.poed` language,
//! derivation checking, impact analysis and the delegation workflow.

pub mod calculus;
pub mod dsl;
pub mod impact;
pub mod model;
pub mod workflow;
#[cfg(feature = "testkit")]
pub mod testkit;
