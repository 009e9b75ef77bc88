//! Verification and simulation lab for the instruction stream protocol.

pub mod bta;
pub mod cli;
pub mod composition;
pub mod corpus;
pub mod equivalence;
pub mod extraction;
pub mod lts;
pub mod protocol;
pub mod sim;
pub mod strategy;

pub use bta::{parse_spec, print_spec, ThreadHandle, ThreadSpec};
pub use composition::{compose, explore, CompositionConfig, Exploration};
pub use equivalence::{branching_bisim, check_thread, naive_bisim_oracle, normalize_termination, EquivConfig, EquivVerdict};
pub use extraction::extract_lts;
pub use lts::{Label, LabelKind, Lts};
pub use strategy::SelectionStrategy;
