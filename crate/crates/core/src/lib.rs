//! A rule-based reinforcement learning layer that sits on top of a frozen
//! sequence classifier and reassigns its labels so that transitions the
//! domain rules forbid disappear, while accuracy improves.
//!
//! The crate is organized bottom-up:
//!
//! - [`rules`]: label alphabets and the transition-impossibility relation
//! - [`data`] and [`synth`]: trajectories, the dataset file format and a
//!   synthetic frozen predictor
//! - [`env`]: state assembly, the two reward variants and episode replay
//! - [`nn`]: the policy and baseline networks, Adam and the learning-rate schedule
//! - [`train`]: REINFORCE with a learned baseline and a switch penalty
//! - [`metrics`] and [`report`]: evaluation quantities and report files
//!
//! The accompanying book in `book/` walks through each piece; its code
//! listings are compiled and run as doctests of this crate.

pub mod data;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod report;
pub mod rules;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/rules.md")]
    mod rules {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/mdp.md")]
    mod mdp {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
