//! Two-alternative forced-choice bandit experiments end to end: task
//! simulation, Rescorla-Wagner model fitting, meta-RL in-context agents,
//! prompt harnessing, and report generation.

pub mod analysis;
pub mod cogmodel;
pub mod fitting;
pub mod llm_io;
pub mod stats;
pub mod tasks;
pub mod metarl;
pub mod pipeline;
