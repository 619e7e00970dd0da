//! OFDM numerology and the resolution limits it implies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, PartialEq)]
pub enum NumerologyError {
    #[error("n_subcarriers must be at least 2, got {0}")]
    TooFewSubcarriers(usize),
    #[error("n_symbols must be at least 2, got {0}")]
    TooFewSymbols(usize),
    #[error("{field} must be positive and finite, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("symbol_duration {duration} s is shorter than the useful symbol 1/subcarrier_spacing = {useful} s")]
    SymbolTooShort { duration: f64, useful: f64 },
}

/// Grid dimensions and timing of one sensing occasion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerology {
    pub n_subcarriers: usize,
    /// OFDM symbols per sensing occasion.
    pub n_symbols: usize,
    /// Hz.
    pub subcarrier_spacing: f64,
    /// Hz.
    pub carrier_freq: f64,
    /// Total OFDM symbol duration including the cyclic prefix, s.
    pub symbol_duration: f64,
}

impl Numerology {
    pub fn validate(&self) -> Result<(), NumerologyError> {
        if self.n_subcarriers < 2 {
            return Err(NumerologyError::TooFewSubcarriers(self.n_subcarriers));
        }
        if self.n_symbols < 2 {
            return Err(NumerologyError::TooFewSymbols(self.n_symbols));
        }
        for (field, value) in [
            ("subcarrier_spacing", self.subcarrier_spacing),
            ("carrier_freq", self.carrier_freq),
            ("symbol_duration", self.symbol_duration),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(NumerologyError::NonPositive { field, value });
            }
        }
        let useful = 1.0 / self.subcarrier_spacing;
        // Tolerate rounding in hand-written configs (e.g. 33.33 µs vs 1/30 kHz).
        if self.symbol_duration < useful * (1.0 - 1e-9) {
            return Err(NumerologyError::SymbolTooShort { duration: self.symbol_duration, useful });
        }
        Ok(())
    }

    pub fn n_res(&self) -> usize {
        self.n_subcarriers * self.n_symbols
    }

    /// Occupied bandwidth N·Δf, Hz.
    pub fn bandwidth(&self) -> f64 {
        self.n_subcarriers as f64 * self.subcarrier_spacing
    }

    /// 5G NR numerology µ=1 carrier: 30 kHz spacing at 3.5 GHz, normal CP.
    pub fn nr_30khz(n_subcarriers: usize, n_symbols: usize) -> Self {
        Self {
            n_subcarriers,
            n_symbols,
            subcarrier_spacing: 30e3,
            carrier_freq: 3.5e9,
            symbol_duration: 35.68e-6,
        }
    }
}

/// Range/velocity bin spacing and unambiguous extents of a periodogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolutions {
    /// m per range bin.
    pub range: f64,
    /// m/s per Doppler bin.
    pub velocity: f64,
    /// m.
    pub max_range: f64,
    /// m/s, full span of the Doppler axis.
    pub max_velocity: f64,
}

/// ΔR = c/(2·N·Δf·pad), Δv = c/(2·f_c·M·T_o·pad), R_max = c/(2Δf),
/// v_max = c/(2·f_c·T_o).
pub fn resolutions(numerology: &Numerology, pad_factor: usize) -> Resolutions {
    let c = SPEED_OF_LIGHT;
    let pad = pad_factor as f64;
    let n = numerology.n_subcarriers as f64;
    let m = numerology.n_symbols as f64;
    let df = numerology.subcarrier_spacing;
    let fc = numerology.carrier_freq;
    let to = numerology.symbol_duration;
    Resolutions {
        range: c / (2.0 * n * df * pad),
        velocity: c / (2.0 * fc * m * to * pad),
        max_range: c / (2.0 * df),
        max_velocity: c / (2.0 * fc * to),
    }
}
