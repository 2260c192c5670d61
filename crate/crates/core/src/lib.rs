//! Natural-language corrections for control tasks from (student, expert) trajectory
//! pairs, via a trainable trajectory encoder feeding soft prompts to a frozen causal LM.

pub mod augment;
pub mod backbone;
pub mod encoder;
pub mod envs;
pub mod eval;
pub mod model;
pub mod prompt;
pub mod seed;
pub mod stats;
pub mod synthetic;
pub mod train;
pub mod traj;
