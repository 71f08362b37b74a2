//! Elicit, fit and score the risk preferences of persona-conditioned decision
//! agents under prospect theory, and build alignment datasets from the results.
//!
//! The crate is organised bottom-up:
//!
//! * [`prospect`]: value/weighting functions, certainty equivalents, optimal decisions
//! * [`elicitation`]: sure-option ladders, the Study 3 prompt, answer parsing, empirical CEs
//! * [`fitting`]: bounded multi-start Nelder–Mead estimation of prospect-theory parameters
//! * [`metrics`]: Risk Disparity Score and tendency signs
//! * [`agents`]: synthetic, replay and HTTP chat-completion backends
//! * [`alignment`]: DPO preference pairs and in-context demonstrations
//! * [`pipeline`]: study orchestration, configuration and reports

pub mod agents;
pub mod alignment;
pub mod elicitation;
pub mod fitting;
pub mod metrics;
pub mod parallel;
pub mod persona;
pub mod pipeline;
pub mod prompts;
pub mod prospect;
pub mod stats;

pub use elicitation::{build_ladder, CeObservation, Censoring, SureOptionLadder};
pub use fitting::{fit_pt_params, FitConfig, FitResult};
pub use persona::{Attribute, Persona};
pub use prospect::{Decision, DecisionSequence, Prospect, PtParams};
