//! Deterministic, seedable BB84 quantum key distribution simulator.
//!
//! The crate models the full protocol round trip (prepare, optional
//! intercept-resend eavesdropping, depolarizing channel, measurement,
//! sifting, parameter estimation, attack decision) plus the source and
//! detector physics needed to reproduce published sifted-key rates. Runs
//! execute either in a single process or as two networked terminals speaking
//! a framed TCP protocol; with a shared master seed both modes produce
//! identical records.

pub mod attack;
pub mod bb84;
pub mod bits;
pub mod config;
pub mod error;
pub mod link;
pub mod randomness;
pub mod report;
pub mod runner;
pub mod transport;

pub use bits::BitString;
pub use config::SimConfig;
pub use error::{Error, Result};
