//! Command-line front end and HTTP service for `reward_lens`.
//!
//! Both front ends evaluate through [`model`], so any response from the
//! service can be reproduced with the matching subcommand on the same files.

mod cli;
pub mod model;
pub mod paths;
pub mod service;

pub use cli::{exit_code, run};
