//! Train-borne localization and compact track-map generation.
//!
//! The crate covers the whole offline workflow: synthesizing GNSS/IMU runs
//! over a known track ([`sim`]), estimating the train state with a plain EKF
//! or a three-model IMM that recognizes straights and circular arcs
//! ([`filters`]), turning the recognized segments into a continuous compact
//! map of straights, clothoids and arcs ([`trackmap`]), constraining the
//! position with that map ([`mapfusion`]) and scoring everything with
//! along/cross-track error CDFs ([`eval`]).

pub mod error;
pub mod eval;
pub mod filters;
pub mod geom;
pub mod mapfusion;
pub mod scenario;
pub mod sim;
pub mod trackmap;
pub mod workflow;

pub use error::{Error, Result};
