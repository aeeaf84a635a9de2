//! Channel charting based beam tracking for mmWave links.
//!
//! The crate covers a synthetic sparse multipath channel, dominant-path CSI
//! features, an MLP channel chart trained with triplet loss, a hashed beam
//! map over chart coordinates, and a tracker that scans a small candidate set
//! per step.

// `!(x > 0.0)` style guards are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beam_map;
pub mod channel;
pub mod chart;
pub mod error;
pub mod features;
pub mod harness;
pub mod tracker;
pub mod trajectory;

pub use error::{Error, Result};
