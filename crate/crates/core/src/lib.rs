//! Deterministic simulator of mono-static ISAC sensing in a 5G O-RAN cell.
//!
//! A communication RU transmits an OFDM downlink; a co-located, receive-only
//! sniffer RU captures the reflections. The crate models the whole sensing
//! chain around that setup:
//!
//! - [`waveform`]: downlink resource grids for stochastic data, reference
//!   lattices and Zadoff-Chu pilots, plus PAPR.
//! - [`channel`]: point-target reflections, sniffer beam pattern,
//!   self-interference leakage and thermal noise.
//! - [`processing`]: channel estimation, 2D periodogram, CA-CFAR.
//! - [`fronthaul`]: block-floating-point IQ compression, sealed range-Doppler
//!   map transport and per-occasion load accounting.
//! - [`adversary`]: fronthaul sniffer and over-the-air spoofer.
//! - [`control`]: sensing quality assessment, spoof/tamper detection and the
//!   E2-style control policy.
//! - [`harness`]: scenario files, end-to-end runs, comparison tables, reports.
//!
//! Every stochastic draw derives from a single master seed (see [`rng`]), so
//! a scenario file plus a seed fully determines every report byte.

pub mod adversary;
pub mod channel;
pub mod control;
pub mod fronthaul;
pub mod harness;
pub mod numerology;
pub mod processing;
pub mod rng;
pub mod waveform;

mod serde_db;

pub use num_complex::Complex64;

pub use numerology::{resolutions, Numerology, Resolutions};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
