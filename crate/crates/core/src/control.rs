//! Sensing control loop: quality assessment, spoof/tamper detection and a
//! fixed-priority configuration policy emitted as E2-style commands.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::bins_match;
use crate::channel::N_BEAMS;
use crate::numerology::{resolutions, Numerology};
use crate::processing::{Detection, RangeDopplerMap};
use crate::waveform::SignalType;

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("beam selection is empty")]
    EmptySelection,
    #[error("beam index {0} must be below 64")]
    BeamIndexOutOfRange(usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
}

/// Targeted sensing quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityTarget {
    /// dB
    pub min_snr: f64,
    /// m
    pub max_range_resolution: f64,
    /// m/s
    pub max_velocity_resolution: f64,
}

impl Default for QualityTarget {
    fn default() -> Self {
        Self { min_snr: 15.0, max_range_resolution: 10.0, max_velocity_resolution: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AchievedResolution {
    pub range: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingQualityReport {
    pub occasion_id: u64,
    pub detections: Vec<Detection>,
    /// Mean over detections in dB; −∞ without detections.
    #[serde(with = "crate::serde_db")]
    pub mean_peak_snr: f64,
    pub detection_count: usize,
    pub achieved_resolution: AchievedResolution,
    pub target_quality: QualityTarget,
    pub quality_below_target: bool,
    /// Probe signal sent this occasion.
    pub signal_type: SignalType,
    /// REs the defender divided by.
    pub n_known: usize,
    /// REs in the grid, N·M.
    pub n_res: usize,
    pub noise_floor: f64,
    /// Range × Doppler bins of the map the detections refer to.
    pub map_dims: (usize, usize),
}

/// Quality of one occasion. Resolution is the unpadded ΔR, Δv of the
/// numerology, which zero-padding does not improve.
pub fn assess_quality(
    occasion_id: u64,
    detections: &[Detection],
    rd_map: &RangeDopplerMap,
    numerology: &Numerology,
    target: &QualityTarget,
) -> SensingQualityReport {
    let mean_peak_snr = if detections.is_empty() {
        f64::NEG_INFINITY
    } else {
        detections.iter().map(|d| d.peak_snr).sum::<f64>() / detections.len() as f64
    };
    let res = resolutions(numerology, 1);
    let quality_below_target = !(mean_peak_snr >= target.min_snr)
        || res.range > target.max_range_resolution
        || res.velocity > target.max_velocity_resolution;
    SensingQualityReport {
        occasion_id,
        detections: detections.to_vec(),
        mean_peak_snr,
        detection_count: detections.len(),
        achieved_resolution: AchievedResolution { range: res.range, velocity: res.velocity },
        target_quality: *target,
        quality_below_target,
        signal_type: SignalType::StochasticData,
        n_known: numerology.n_res(),
        n_res: numerology.n_res(),
        noise_floor: rd_map.noise_floor(),
        map_dims: rd_map.dims(),
    }
}

/// Report for an occasion whose map never arrived (failed to open).
pub fn assess_missing(occasion_id: u64, numerology: &Numerology, target: &QualityTarget) -> SensingQualityReport {
    let res = resolutions(numerology, 1);
    SensingQualityReport {
        occasion_id,
        detections: Vec::new(),
        mean_peak_snr: f64::NEG_INFINITY,
        detection_count: 0,
        achieved_resolution: AchievedResolution { range: res.range, velocity: res.velocity },
        target_quality: *target,
        quality_below_target: true,
        signal_type: SignalType::StochasticData,
        n_known: 0,
        n_res: numerology.n_res(),
        noise_floor: 0.0,
        map_dims: (0, 0),
    }
}

impl SensingQualityReport {
    pub fn with_probe(mut self, signal_type: SignalType, n_known: usize) -> Self {
        self.signal_type = signal_type;
        self.n_known = n_known;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyFlags {
    pub suspected_spoof: bool,
    pub quality_below_target: bool,
    pub integrity_failure: bool,
    pub details: String,
}

impl AnomalyFlags {
    fn note(&mut self, text: impl AsRef<str>) {
        if !self.details.is_empty() {
            self.details.push_str("; ");
        }
        self.details.push_str(text.as_ref());
    }
}

/// Spoof detector settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Deterministic/stochastic occasion pairs a ghost must persist over.
    pub window_pairs: usize,
    /// Minimum peak SNR (dB) of a ghost in the current occasion.
    pub min_ghost_snr: f64,
    /// Excess over the physical peak bound (dB) that flags a detection.
    pub plausibility_margin: f64,
    /// Largest radar cross-section considered physical, m².
    pub max_rcs: f64,
    /// A detection on the range row or Doppler column of one at least this
    /// many dB stronger is taken as its sidelobe and not scored.
    pub sidelobe_margin: f64,
    /// Calibration of the radar equation, copied from the scene.
    pub reference_range: f64,
    pub reference_amplitude: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_pairs: 3,
            min_ghost_snr: 15.0,
            plausibility_margin: 10.0,
            max_rcs: 100.0,
            sidelobe_margin: 10.0,
            reference_range: 100.0,
            reference_amplitude: 1.0,
        }
    }
}

/// Largest periodogram peak a physical target at `range` can produce when
/// `n_known` of `n_res` REs are divided by: `(a_max·n_known)² / n_res`.
pub fn max_plausible_peak(config: &DetectorConfig, range: f64, range_floor: f64, n_known: usize, n_res: usize) -> f64 {
    let r = range.max(range_floor);
    let ratio = config.reference_range / r;
    let a_max = config.reference_amplitude * config.max_rcs.sqrt() * ratio * ratio;
    (a_max * n_known as f64).powi(2) / n_res as f64
}

/// Detections of `report` at or above `min_ghost_snr` that are not
/// sidelobes of a stronger detection.
fn scored<'a>(report: &'a SensingQualityReport, config: &'a DetectorConfig) -> impl Iterator<Item = &'a Detection> + 'a {
    let nd = report.map_dims.1;
    let dets = &report.detections;
    // Same Doppler (range row) or same range (Doppler column), within a bin.
    let same_row = move |a: &Detection, b: &Detection| bins_match((0, a.doppler_bin), (0, b.doppler_bin), nd);
    let same_col = move |a: &Detection, b: &Detection| a.range_bin.abs_diff(b.range_bin) <= 1;
    dets.iter().filter(move |d| {
        d.peak_snr >= config.min_ghost_snr
            && !dets.iter().any(|s| {
                s.peak_snr >= d.peak_snr + config.sidelobe_margin && (same_row(s, d) || same_col(s, d))
            })
    })
}

/// Flags for the current occasion. `history` holds earlier reports, oldest
/// first.
///
/// A spoof is suspected when a strong detection of the current deterministic
/// occasion was also present in each of the last `window_pairs`
/// deterministic occasions but absent from every stochastic occasion
/// interleaved with them although it would have cleared `min_ghost_snr`
/// over their noise floors; or when any detection
/// at or above `min_ghost_snr` exceeds the physical peak bound by more than
/// `plausibility_margin`. Sidelobes of stronger detections are not scored.
pub fn detect_anomaly(
    history: &[SensingQualityReport],
    current: &SensingQualityReport,
    integrity_failure: bool,
    config: &DetectorConfig,
) -> AnomalyFlags {
    let mut flags = AnomalyFlags {
        quality_below_target: current.quality_below_target,
        integrity_failure,
        ..Default::default()
    };
    if integrity_failure {
        flags.note(format!("sealed map for occasion {} failed to open", current.occasion_id));
    }
    if current.quality_below_target {
        flags.note(format!("mean peak SNR {:.1} dB below target or resolution too coarse", current.mean_peak_snr));
    }

    if let Some(bin) = asymmetric_ghost(history, current, config) {
        flags.suspected_spoof = true;
        flags.note(format!(
            "detection at bin {bin:?} persists over {} deterministic probes and vanishes on stochastic data",
            config.window_pairs
        ));
    }

    if current.noise_floor > 0.0 {
        let range_floor = current.achieved_resolution.range;
        for d in scored(current, config) {
            let power = current.noise_floor * 10f64.powf(d.peak_snr / 10.0);
            let bound = max_plausible_peak(config, d.est_range, range_floor, current.n_known, current.n_res);
            if power > bound * 10f64.powf(config.plausibility_margin / 10.0) {
                flags.suspected_spoof = true;
                flags.note(format!(
                    "detection at {:.1} m is {:.1} dB above the physical bound",
                    d.est_range,
                    10.0 * (power / bound).log10()
                ));
            }
        }
    }
    flags
}

fn asymmetric_ghost(
    history: &[SensingQualityReport],
    current: &SensingQualityReport,
    config: &DetectorConfig,
) -> Option<(usize, usize)> {
    let pairs = config.window_pairs;
    if pairs == 0 || !current.signal_type.is_deterministic() || history.len() + 1 < 2 * pairs {
        return None;
    }
    let window: Vec<&SensingQualityReport> =
        history[history.len() + 1 - 2 * pairs..].iter().chain(std::iter::once(current)).collect();
    let (det, sto): (Vec<&SensingQualityReport>, Vec<&SensingQualityReport>) =
        window.iter().copied().partition(|r| r.signal_type.is_deterministic());
    if det.len() != pairs || sto.len() != pairs {
        return None;
    }
    if window.iter().any(|r| r.map_dims != current.map_dims) || current.noise_floor <= 0.0 {
        return None;
    }
    let nd = current.map_dims.1;
    let seen = |r: &SensingQualityReport, b: (usize, usize)| {
        r.detections.iter().any(|d| bins_match((d.range_bin, d.doppler_bin), b, nd))
    };
    // The ghost only counts as vanished where it would have cleared
    // `min_ghost_snr` over that occasion's own floor.
    let visible = |r: &SensingQualityReport, power: f64| {
        r.noise_floor > 0.0 && power >= r.noise_floor * 10f64.powf(config.min_ghost_snr / 10.0)
    };
    scored(current, config)
        .map(|d| ((d.range_bin, d.doppler_bin), current.noise_floor * 10f64.powf(d.peak_snr / 10.0)))
        .find(|&(b, power)| {
            det.iter().all(|r| seen(r, b)) && sto.iter().all(|r| visible(r, power) && !seen(r, b))
        })
        .map(|(b, _)| b)
}

/// Which probe signals the sniffer path schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeSchedule {
    StochasticOnly,
    /// Odd occasions carry the deterministic probe signal.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommandKind {
    BeamSelect { bitmap: u64 },
    TddPattern { dl_slots: u32, ul_slots: u32, period: u32 },
    BwpChange { start_rb: u32, n_rb: u32 },
    /// Ask the key manager to replace the map-sealing key.
    Rekey,
    SetProbeSchedule { schedule: ProbeSchedule },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub occasion_id: u64,
    #[serde(flatten)]
    pub kind: CommandKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Ok,
    /// Quality is below target and no knob is left to turn.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub commands: Vec<ControlCommand>,
    pub status: LoopStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlPolicy {
    pub quality: QualityTarget,
    pub detector: DetectorConfig,
    pub allow_bwp: bool,
    /// Largest bandwidth part, resource blocks of 12 subcarriers.
    pub max_n_rb: u32,
    pub bwp_step_rb: u32,
    pub allow_tdd: bool,
    /// Most downlink slots per TDD period usable for sensing.
    pub max_dl_slots: u32,
    pub tdd_period: u32,
    pub symbols_per_slot: u32,
    pub allow_beam: bool,
}

impl Default for ControlPolicy {
    fn default() -> Self {
        Self {
            quality: QualityTarget::default(),
            detector: DetectorConfig::default(),
            allow_bwp: true,
            max_n_rb: 273,
            bwp_step_rb: 24,
            allow_tdd: true,
            max_dl_slots: 4,
            tdd_period: 5,
            symbols_per_slot: 14,
            allow_beam: true,
        }
    }
}

impl ControlPolicy {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |s: &str| Err(ControlError::InvalidPolicy(s.into()));
        if self.max_n_rb == 0 || self.bwp_step_rb == 0 {
            return bad("max_n_rb and bwp_step_rb must be positive");
        }
        if self.tdd_period == 0 || self.max_dl_slots == 0 || self.max_dl_slots >= self.tdd_period {
            return bad("need 0 < max_dl_slots < tdd_period");
        }
        if self.symbols_per_slot == 0 {
            return bad("symbols_per_slot must be positive");
        }
        if self.detector.window_pairs == 0 {
            return bad("detector.window_pairs must be positive");
        }
        Ok(())
    }
}

/// Configuration the loop currently has in force.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopState {
    pub beam_bitmap: u64,
    pub bwp_start_rb: u32,
    pub bwp_n_rb: u32,
    pub dl_slots: u32,
    pub ul_slots: u32,
    pub tdd_period: u32,
    pub schedule: ProbeSchedule,
    /// Consecutive quality-driven beam rotations.
    pub rotations: u32,
}

impl LoopState {
    /// Applies the commands of a decision.
    pub fn apply(&mut self, decision: &Decision) {
        let mut rotated = false;
        for c in &decision.commands {
            match c.kind {
                CommandKind::BeamSelect { bitmap } => {
                    rotated = bitmap != self.beam_bitmap;
                    self.beam_bitmap = bitmap;
                }
                CommandKind::TddPattern { dl_slots, ul_slots, period } => {
                    self.dl_slots = dl_slots;
                    self.ul_slots = ul_slots;
                    self.tdd_period = period;
                }
                CommandKind::BwpChange { start_rb, n_rb } => {
                    self.bwp_start_rb = start_rb;
                    self.bwp_n_rb = n_rb;
                }
                CommandKind::Rekey => {}
                CommandKind::SetProbeSchedule { schedule } => self.schedule = schedule,
            }
        }
        if decision.commands.is_empty() {
            self.rotations = 0;
        } else if rotated {
            self.rotations += 1;
        }
    }
}

/// Deterministic priority ladder: integrity, then spoofing, then quality
/// (BWP, then TDD, then beam rotation).
pub fn decide(report: &SensingQualityReport, flags: &AnomalyFlags, policy: &ControlPolicy, state: &LoopState) -> Decision {
    let id = report.occasion_id;
    let cmd = |kind| ControlCommand { occasion_id: id, kind };
    let ok = |commands| Decision { commands, status: LoopStatus::Ok };

    if flags.integrity_failure {
        return ok(vec![cmd(CommandKind::Rekey), cmd(CommandKind::BeamSelect { bitmap: state.beam_bitmap })]);
    }
    if flags.suspected_spoof {
        return ok(vec![
            cmd(CommandKind::SetProbeSchedule { schedule: ProbeSchedule::StochasticOnly }),
            cmd(CommandKind::BeamSelect { bitmap: state.beam_bitmap.rotate_left(1) }),
        ]);
    }
    if !flags.quality_below_target {
        return ok(Vec::new());
    }
    if policy.allow_bwp && state.bwp_n_rb < policy.max_n_rb {
        let n_rb = (state.bwp_n_rb + policy.bwp_step_rb).min(policy.max_n_rb);
        return ok(vec![cmd(CommandKind::BwpChange { start_rb: state.bwp_start_rb, n_rb })]);
    }
    if policy.allow_tdd && state.dl_slots < policy.max_dl_slots && state.ul_slots > 0 {
        return ok(vec![cmd(CommandKind::TddPattern {
            dl_slots: state.dl_slots + 1,
            ul_slots: state.ul_slots - 1,
            period: state.tdd_period,
        })]);
    }
    if policy.allow_beam && (state.rotations as usize) < N_BEAMS {
        return ok(vec![cmd(CommandKind::BeamSelect { bitmap: state.beam_bitmap.rotate_left(1) })]);
    }
    Decision { commands: Vec::new(), status: LoopStatus::Degraded }
}

pub fn encode_beam_bitmap(indices: &[usize]) -> Result<u64, ControlError> {
    if indices.is_empty() {
        return Err(ControlError::EmptySelection);
    }
    indices.iter().try_fold(0u64, |acc, &i| {
        if i >= N_BEAMS {
            Err(ControlError::BeamIndexOutOfRange(i))
        } else {
            Ok(acc | 1 << i)
        }
    })
}

pub fn decode_beam_bitmap(bitmap: u64) -> Vec<usize> {
    (0..N_BEAMS).filter(|i| bitmap >> i & 1 == 1).collect()
}
