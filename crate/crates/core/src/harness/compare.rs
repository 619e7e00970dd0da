//! Placement and signal-type comparison tables built from full runs.

use serde::{Deserialize, Serialize};

use super::run::run_scenario;
use super::scenario::{AttackerConfig, Scenario, SniffConfig};
use super::HarnessError;
use crate::adversary::{KnowledgeLevel, SpoofAttempt};
use crate::channel::Target;
use crate::control::ProbeSchedule;
use crate::fronthaul::{CompressionConfig, Placement};
use crate::numerology::resolutions;
use crate::waveform::SignalType;

/// Mantissa widths swept for the placement table, widest first.
pub const MANTISSA_SWEEP: [u8; 4] = [12, 9, 6, 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub placement: Placement,
    pub mantissa_bits: u8,
    pub bits_per_occasion: u64,
    #[serde(with = "crate::serde_db::opt")]
    pub detection_probability: Option<f64>,
    /// dB, mean over matched detections
    #[serde(with = "crate::serde_db::opt")]
    pub mean_peak_snr: Option<f64>,
    /// Attacker map NMSE, or `no access` when only ciphertext crosses.
    pub attacker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRow {
    pub signal_type: SignalType,
    #[serde(with = "crate::serde_db::opt")]
    pub detection_probability: Option<f64>,
    /// m
    #[serde(with = "crate::serde_db::opt")]
    pub mean_abs_range_error: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub spoof_success_rate: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_papr_db: Option<f64>,
}

fn mean_bits(s: &Scenario) -> Result<(u64, super::run::Aggregate), HarnessError> {
    let report = run_scenario(s)?;
    let n = report.records.len().max(1) as u64;
    Ok((report.aggregate.fronthaul_bits / n, report.aggregate))
}

/// RU and DU placement at each mantissa width of [`MANTISSA_SWEEP`]. A
/// full-knowledge sniffer taps the fronthaul in every row; other attacks
/// are removed. RU rows do not depend on the mantissa width, so RU runs once.
pub fn compare_placements(base: &Scenario) -> Result<Vec<PlacementRow>, HarnessError> {
    let mut s = base.clone();
    s.attacker = Some(AttackerConfig {
        sniff: Some(SniffConfig { knowledge: KnowledgeLevel::FullWaveform }),
        ..Default::default()
    });
    let attacker_cell = |agg: &super::run::Aggregate| match agg.mean_attacker_nmse {
        Some(v) => format!("{v:.6e}"),
        None if agg.sniff_no_access > 0 => "no access".to_string(),
        None => "failed".to_string(),
    };

    let mut rows = Vec::new();
    s.placement = Placement::RuProcessing;
    let (ru_bits, ru) = mean_bits(&s)?;
    for &b in &MANTISSA_SWEEP {
        rows.push(PlacementRow {
            placement: Placement::RuProcessing,
            mantissa_bits: b,
            bits_per_occasion: ru_bits,
            detection_probability: ru.detection_probability,
            mean_peak_snr: ru.mean_matched_peak_snr,
            attacker: attacker_cell(&ru),
        });
    }
    s.placement = Placement::DuProcessing;
    for &b in &MANTISSA_SWEEP {
        s.compression = CompressionConfig { mantissa_bits: b, ..base.compression };
        let (bits, du) = mean_bits(&s)?;
        rows.push(PlacementRow {
            placement: Placement::DuProcessing,
            mantissa_bits: b,
            bits_per_occasion: bits,
            detection_probability: du.detection_probability,
            mean_peak_snr: du.mean_matched_peak_snr,
            attacker: attacker_cell(&du),
        });
    }
    Ok(rows)
}

/// Fake target used when the base scenario has no spoofer: a 1 m² point
/// at 60 % of the exported range extent, standing still, at equal power.
fn default_spoof(base: &Scenario) -> SpoofAttempt {
    let res = resolutions(&base.numerology, base.processing.pad_factor);
    let extent = base.export_dims().0 as f64 * res.range;
    SpoofAttempt {
        fake_target: Target { range: 0.6 * extent, radial_velocity: 0.0, rcs: 1.0, azimuth: base.beam.boresight() },
        tx_power_ratio: 1.0,
        knowledge: KnowledgeLevel::PilotSequence,
    }
}

/// One row per signal type. Detection, range error and PAPR come from a run
/// without attackers; spoof success from a second run in which a spoofer
/// knowing the publicly specified references and pilots attacks.
pub fn compare_signal_types(base: &Scenario) -> Result<Vec<SignalRow>, HarnessError> {
    let spoof = base.attacker.as_ref().and_then(|a| a.spoof).unwrap_or_else(|| default_spoof(base));
    let spoof = SpoofAttempt { knowledge: KnowledgeLevel::PilotSequence, ..spoof };
    let mut rows = Vec::new();
    for signal_type in SignalType::ALL {
        let mut s = base.clone();
        s.signal.signal_type = signal_type;
        s.signal.probe_schedule = ProbeSchedule::StochasticOnly;
        if signal_type == SignalType::StochasticData {
            s.signal.reference_density = Some(0.0);
        }
        s.control = None;
        s.attacker = None;
        let clean = run_scenario(&s)?.aggregate;
        s.attacker = Some(AttackerConfig { spoof: Some(spoof), ..Default::default() });
        let attacked = run_scenario(&s)?.aggregate;
        rows.push(SignalRow {
            signal_type,
            detection_probability: clean.detection_probability,
            mean_abs_range_error: clean.mean_abs_range_error,
            spoof_success_rate: attacked.fake_detection_rate,
            mean_papr_db: clean.mean_papr_db,
        });
    }
    Ok(rows)
}
