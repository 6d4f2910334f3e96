//! Open-loop Stackelberg solutions of pursuit-evasion differential games.
//!
//! The leader's problem is transcribed by direct collocation with the
//! follower's costate equations, optimal-control law and terminal conditions
//! appended as equality constraints, then handed to a dense SQP solver. An
//! independent indirect shooting method integrates the full state-costate
//! system and serves as a cross-check.

pub mod error;
pub mod game;
pub mod integrate;
pub mod kepler;
pub mod nlp;
pub mod run;
pub mod shooting;
pub mod trajectory;
pub mod transcription;

pub use error::{Error, Result};
