//! Attacker models: a passive fronthaul sniffer and an over-the-air spoofer,
//! both limited by how much of the victim waveform they can predict.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{beam_gain, doppler_shift, reflection_amplitude, round_trip_delay, BeamConfig, Scene, Target};
use crate::fronthaul::{decompress_bfp, CompressedIQ, FronthaulError};
use crate::numerology::Numerology;
use crate::processing::{estimate_channel, range_doppler_map, snr_db, Detection, ProcessingError, RangeDopplerMap};
use crate::rng;
use crate::waveform::{generate_grid, ReClass, ReMask, ResourceGrid, SignalPlan, WaveformError};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    #[error("tx_power_ratio must be positive and finite, got {0}")]
    InvalidPower(f64),
    #[error("fake target at {range} m is beyond the unambiguous range {max_range} m")]
    BeyondUnambiguousRange { range: f64, max_range: f64 },
    #[error("fake target: {0}")]
    InvalidTarget(String),
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Fronthaul(#[from] FronthaulError),
    #[error(transparent)]
    Processing(#[from] ProcessingError),
}

/// How much of the victim waveform the attacker can predict. Levels are
/// cumulative: each one knows everything the previous one does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeLevel {
    None,
    ReferenceOnly,
    PilotSequence,
    FullWaveform,
}

impl KnowledgeLevel {
    pub const ALL: [KnowledgeLevel; 4] =
        [KnowledgeLevel::None, KnowledgeLevel::ReferenceOnly, KnowledgeLevel::PilotSequence, KnowledgeLevel::FullWaveform];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeLevel::None => "none",
            KnowledgeLevel::ReferenceOnly => "reference_only",
            KnowledgeLevel::PilotSequence => "pilot_sequence",
            KnowledgeLevel::FullWaveform => "full_waveform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackerKnowledge {
    pub level: KnowledgeLevel,
    /// Always a subset of the victim's occupied REs.
    pub known_mask: ReMask,
}

impl AttackerKnowledge {
    pub fn derive(level: KnowledgeLevel, plan: &SignalPlan) -> Self {
        let (n, m) = plan.dims();
        let known_mask = match level {
            KnowledgeLevel::None => ReMask::new(n, m, false),
            KnowledgeLevel::ReferenceOnly => plan.mask_of(ReClass::Reference),
            KnowledgeLevel::PilotSequence => plan.mask_of(ReClass::Reference).union(&plan.mask_of(ReClass::Pilot)),
            KnowledgeLevel::FullWaveform => plan.occupied_mask(),
        };
        Self { level, known_mask }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpoofAttempt {
    pub fake_target: Target,
    /// Attacker power over the strongest legitimate reflection, linear.
    pub tx_power_ratio: f64,
    pub knowledge: KnowledgeLevel,
}

impl SpoofAttempt {
    pub fn validate(&self, numerology: &Numerology) -> Result<(), AdversaryError> {
        if !(self.tx_power_ratio.is_finite() && self.tx_power_ratio > 0.0) {
            return Err(AdversaryError::InvalidPower(self.tx_power_ratio));
        }
        let t = &self.fake_target;
        if !(t.range.is_finite() && t.range >= 0.0 && t.radial_velocity.is_finite()) {
            return Err(AdversaryError::InvalidTarget("range must be non-negative and velocity finite".into()));
        }
        let max_range = SPEED_OF_LIGHT / (2.0 * numerology.subcarrier_spacing);
        if t.range >= max_range {
            return Err(AdversaryError::BeyondUnambiguousRange { range: t.range, max_range });
        }
        Ok(())
    }
}

/// Power of the strongest legitimate reflection seen through `beam`, or the
/// calibration power when no target is visible.
pub fn legitimate_reflection_power(scene: &Scene, beam: &BeamConfig) -> f64 {
    let strongest = scene
        .targets
        .iter()
        .filter_map(|t| {
            let a = reflection_amplitude(t, scene.reference_range, scene.reference_amplitude).ok()?;
            Some((beam_gain(beam, t.azimuth) * a).powi(2))
        })
        .fold(0.0, f64::max);
    if strongest > 0.0 {
        strongest
    } else {
        scene.reference_amplitude.powi(2)
    }
}

/// Additive grid the spoofer puts on the sniffer's antenna port. Known REs
/// carry the victim symbol, unknown ones a random QPSK symbol, both under
/// the fake target's delay/Doppler ramps and amplitude
/// `sqrt(tx_power_ratio · reflection_power)`.
pub fn spoof_inject(
    victim_plan: &SignalPlan,
    attempt: &SpoofAttempt,
    numerology: &Numerology,
    reflection_power: f64,
    seed: u64,
) -> Result<ResourceGrid, AdversaryError> {
    attempt.validate(numerology)?;
    let knowledge = AttackerKnowledge::derive(attempt.knowledge, victim_plan);
    // Only symbols on known REs are ever read from this grid.
    let victim = generate_grid(victim_plan, numerology)?;
    let amplitude = (attempt.tx_power_ratio * reflection_power).sqrt();
    let tau = round_trip_delay(attempt.fake_target.range).map_err(|e| AdversaryError::InvalidTarget(e.to_string()))?;
    let fd = doppler_shift(attempt.fake_target.radial_velocity, numerology.carrier_freq);
    let (range_step, doppler_step) = (tau * numerology.subcarrier_spacing, fd * numerology.symbol_duration);

    let mut rng = rng::rng_from(seed);
    let qpsk = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = ResourceGrid::zeros(*numerology);
    for m in 0..numerology.n_symbols {
        let d = Complex64::from_polar(amplitude, 2.0 * std::f64::consts::PI * frac(m as f64 * doppler_step));
        for n in 0..numerology.n_subcarriers {
            // Drawn for every RE so the sequence does not depend on knowledge.
            let bits: u8 = rng.random_range(0..4);
            let s = Complex64::new(
                if bits & 2 == 0 { qpsk } else { -qpsk },
                if bits & 1 == 0 { qpsk } else { -qpsk },
            );
            let x = if knowledge.known_mask.get(n, m) { victim.get(n, m) } else { s };
            let r = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * frac(n as f64 * range_step));
            out.set(n, m, x * r * d);
        }
    }
    Ok(out)
}

fn frac(x: f64) -> f64 {
    x - x.round()
}

/// What a fronthaul eavesdropper can tap.
#[derive(Debug, Clone, Copy)]
pub enum FronthaulTap<'a> {
    /// DU placement: compressed IQ of the sniffer RX grid.
    Iq(&'a CompressedIQ),
    /// RU placement with sealing: only ciphertext crosses.
    SealedMap,
    /// RU placement without sealing: the map itself crosses in clear.
    PlainMap(&'a RangeDopplerMap),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SniffOutcome {
    NoAccess,
    /// The attacker knows no TX symbol and cannot form an estimate.
    Failed,
    Map { map: RangeDopplerMap, nmse: f64 },
}

impl SniffOutcome {
    pub fn nmse(&self) -> Option<f64> {
        match self {
            SniffOutcome::Map { nmse, .. } => Some(*nmse),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SniffOutcome::NoAccess => "no_access",
            SniffOutcome::Failed => "failed",
            SniffOutcome::Map { .. } => "map",
        }
    }
}

/// ‖a − b‖² / ‖b‖² over two maps of equal size.
pub fn map_nmse(attacker: &RangeDopplerMap, defender: &RangeDopplerMap) -> f64 {
    assert_eq!(attacker.dims(), defender.dims(), "maps must have equal size");
    let err: f64 = attacker.as_slice().iter().zip(defender.as_slice()).map(|(a, b)| (a - b).powi(2)).sum();
    let energy: f64 = defender.as_slice().iter().map(|b| b * b).sum();
    err / energy
}

/// Runs the attacker's processing on whatever it taps. `victim_tx` supplies
/// the symbols on `knowledge.known_mask`; `defender_map` is the
/// full-knowledge map of the uncompressed capture at the same padding.
pub fn sniff_fronthaul(
    tap: FronthaulTap<'_>,
    knowledge: &AttackerKnowledge,
    victim_tx: &ResourceGrid,
    pad_factor: usize,
    defender_map: &RangeDopplerMap,
) -> Result<SniffOutcome, AdversaryError> {
    match tap {
        FronthaulTap::SealedMap => Ok(SniffOutcome::NoAccess),
        FronthaulTap::PlainMap(map) => {
            Ok(SniffOutcome::Map { map: map.clone(), nmse: map_nmse(map, defender_map) })
        }
        FronthaulTap::Iq(compressed) => {
            if knowledge.known_mask.count() == 0 {
                return Ok(SniffOutcome::Failed);
            }
            let rx = decompress_bfp(compressed)?;
            let h = estimate_channel(&rx, victim_tx, &knowledge.known_mask)?;
            let map = range_doppler_map(&h, pad_factor)?;
            let nmse = map_nmse(&map, defender_map);
            Ok(SniffOutcome::Map { map, nmse })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Spoof,
    Sniff,
    Tamper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    #[serde(with = "crate::serde_db::opt")]
    pub attacker_map_nmse: Option<f64>,
    pub fake_target_detected: bool,
    #[serde(with = "crate::serde_db::opt")]
    pub fake_peak_snr: Option<f64>,
    pub true_targets_suppressed: usize,
}

impl AttackReport {
    pub fn null() -> Self {
        Self {
            kind: AttackKind::None,
            attacker_map_nmse: None,
            fake_target_detected: false,
            fake_peak_snr: None,
            true_targets_suppressed: 0,
        }
    }
}

/// Within one bin in range and one (wrapping) bin in Doppler.
pub fn bins_match(a: (usize, usize), b: (usize, usize), n_doppler: usize) -> bool {
    let dl = a.1.abs_diff(b.1);
    a.0.abs_diff(b.0) <= 1 && dl.min(n_doppler - dl) <= 1
}

fn detected(dets: &[Detection], bin: (usize, usize), n_doppler: usize) -> bool {
    dets.iter().any(|d| bins_match((d.range_bin, d.doppler_bin), bin, n_doppler))
}

/// Scores a spoofing attempt against the defender's detections with and
/// without it. Both detection sets must come from the same CFAR settings.
pub fn evaluate_attack(
    clean: &[Detection],
    attacked: &[Detection],
    attacked_map: &RangeDopplerMap,
    truth: &[Target],
    attempt: Option<&SpoofAttempt>,
) -> AttackReport {
    let Some(attempt) = attempt else {
        return AttackReport::null();
    };
    let nd = attacked_map.n_doppler();
    let true_bins: Vec<(usize, usize)> =
        truth.iter().filter_map(|t| attacked_map.bin_of(t.range, t.radial_velocity)).collect();
    let suppressed = true_bins.iter().filter(|&&b| detected(clean, b, nd) && !detected(attacked, b, nd)).count();

    let fake = &attempt.fake_target;
    let (fake_target_detected, fake_peak_snr) = match attacked_map.bin_of(fake.range, fake.radial_velocity) {
        None => (false, None),
        Some(fb) => {
            let hit = attacked.iter().any(|d| {
                let b = (d.range_bin, d.doppler_bin);
                bins_match(b, fb, nd) && !true_bins.iter().any(|&t| bins_match(b, t, nd))
            });
            let (nr, _) = attacked_map.dims();
            let mut peak: f64 = 0.0;
            for dk in [-1isize, 0, 1] {
                let k = fb.0 as isize + dk;
                if k < 0 || k >= nr as isize {
                    continue;
                }
                for dl in [nd - 1, 0, 1] {
                    peak = peak.max(attacked_map.power(k as usize, (fb.1 + dl) % nd));
                }
            }
            (hit, Some(snr_db(peak, attacked_map.noise_floor())))
        }
    };
    AttackReport {
        kind: AttackKind::Spoof,
        attacker_map_nmse: None,
        fake_target_detected,
        fake_peak_snr,
        true_targets_suppressed: suppressed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::apply_channel;
    use crate::fronthaul::compress_bfp;
    use crate::processing::{ca_cfar, CfarConfig};
    use crate::waveform::{build_signal_plan, SignalType, DEFAULT_REFERENCE_DENSITY};
    use crate::resolutions;

    fn beam() -> BeamConfig {
        BeamConfig { beam_index: 0, sector_start: 0.0, sector_width: 64.0, beamwidth: 10.0 }
    }

    fn full_mask(num: &Numerology) -> ReMask {
        ReMask::new(num.n_subcarriers, num.n_symbols, true)
    }

    #[test]
    fn knowledge_masks_are_nested() {
        let num = Numerology::nr_30khz(48, 12);
        for st in SignalType::ALL {
            let plan = build_signal_plan(&num, st, DEFAULT_REFERENCE_DENSITY, 1).unwrap();
            let masks: Vec<ReMask> = KnowledgeLevel::ALL.iter().map(|&l| AttackerKnowledge::derive(l, &plan).known_mask).collect();
            assert_eq!(masks[0].count(), 0);
            assert_eq!(masks[3], plan.occupied_mask());
            for w in masks.windows(2) {
                assert!(w[0].is_subset_of(&w[1]));
            }
        }
        let pilot = build_signal_plan(&num, SignalType::Pilot, 0.0, 1).unwrap();
        assert_eq!(
            AttackerKnowledge::derive(KnowledgeLevel::PilotSequence, &pilot).known_mask,
            AttackerKnowledge::derive(KnowledgeLevel::FullWaveform, &pilot).known_mask
        );
    }

    fn fake_bin_power(level: KnowledgeLevel, plan: &SignalPlan, num: &Numerology, seed: u64) -> f64 {
        let res = resolutions(num, 1);
        let attempt = SpoofAttempt {
            fake_target: Target { range: 10.0 * res.range, radial_velocity: 3.0 * res.velocity, rcs: 1.0, azimuth: 0.0 },
            tx_power_ratio: 1.0,
            knowledge: level,
        };
        let tx = generate_grid(plan, num).unwrap();
        let y = spoof_inject(plan, &attempt, num, 1.0, seed).unwrap();
        let h = estimate_channel(&y, &tx, &plan.occupied_mask()).unwrap();
        let map = range_doppler_map(&h, 1).unwrap();
        map.power(10, map.doppler_zero_bin() + 3)
    }

    #[test]
    fn full_knowledge_peak_is_coherent() {
        let num = Numerology::nr_30khz(48, 16);
        let plan = build_signal_plan(&num, SignalType::StochasticData, 0.0, 4).unwrap();
        // A²·N·M with A = 1
        let p = fake_bin_power(KnowledgeLevel::FullWaveform, &plan, &num, 9);
        assert!((p - 48.0 * 16.0).abs() < 1e-6, "{p}");
    }

    #[test]
    fn reference_only_peak_scales_with_density_squared() {
        let num = Numerology::nr_30khz(48, 32);
        let rho = DEFAULT_REFERENCE_DENSITY;
        let mut ratio = 0.0;
        let trials = 20;
        for s in 0..trials {
            let plan = build_signal_plan(&num, SignalType::StochasticData, rho, s).unwrap();
            let full = fake_bin_power(KnowledgeLevel::FullWaveform, &plan, &num, 100 + s);
            let refs = fake_bin_power(KnowledgeLevel::ReferenceOnly, &plan, &num, 100 + s);
            ratio += refs / full / trials as f64;
        }
        // coherent ρ²·NM plus an incoherent (1−ρ) term, over NM
        let nm = (48 * 32) as f64;
        let want = (rho * rho * nm + 1.0 - rho) / nm;
        assert!((ratio / want - 1.0).abs() < 0.35, "{ratio} vs {want}");
    }

    #[test]
    fn no_knowledge_has_no_coherent_peak() {
        let num = Numerology::nr_30khz(48, 16);
        let mut mean = 0.0;
        for s in 0..40 {
            let plan = build_signal_plan(&num, SignalType::StochasticData, 0.0, s).unwrap();
            mean += fake_bin_power(KnowledgeLevel::None, &plan, &num, 1000 + s) / 40.0;
        }
        // incoherent: E|Σ random phases|²/(NM) = A² = 1
        assert!(mean < 2.0, "{mean}");
    }

    #[test]
    fn invalid_attempts_rejected() {
        let num = Numerology::nr_30khz(16, 4);
        let plan = build_signal_plan(&num, SignalType::Pilot, 0.0, 1).unwrap();
        let mut a = SpoofAttempt {
            fake_target: Target { range: 10.0, radial_velocity: 0.0, rcs: 1.0, azimuth: 0.0 },
            tx_power_ratio: 0.0,
            knowledge: KnowledgeLevel::FullWaveform,
        };
        assert_eq!(spoof_inject(&plan, &a, &num, 1.0, 0), Err(AdversaryError::InvalidPower(0.0)));
        a.tx_power_ratio = 1.0;
        a.fake_target.range = 6000.0;
        assert!(matches!(spoof_inject(&plan, &a, &num, 1.0, 0), Err(AdversaryError::BeyondUnambiguousRange { .. })));
    }

    fn sniff_setup(seed: u64) -> (ResourceGrid, ResourceGrid, SignalPlan, RangeDopplerMap) {
        let num = Numerology::nr_30khz(64, 16);
        let plan = build_signal_plan(&num, SignalType::StochasticData, DEFAULT_REFERENCE_DENSITY, seed).unwrap();
        let tx = generate_grid(&plan, &num).unwrap();
        let mut scene = Scene::empty(seed);
        scene.noise_power = 1e-3;
        scene.targets.push(Target { range: 60.0, radial_velocity: 10.0, rcs: 1.0, azimuth: beam().boresight() });
        let rx = apply_channel(&tx, &scene, &beam()).unwrap();
        let defender = range_doppler_map(&estimate_channel(&rx, &tx, &plan.occupied_mask()).unwrap(), 1).unwrap();
        (tx, rx, plan, defender)
    }

    #[test]
    fn full_knowledge_sniffer_matches_defender() {
        let (tx, rx, plan, defender) = sniff_setup(1);
        let c = compress_bfp(&rx, 16, 12).unwrap();
        let k = AttackerKnowledge::derive(KnowledgeLevel::FullWaveform, &plan);
        let out = sniff_fronthaul(FronthaulTap::Iq(&c), &k, &tx, 1, &defender).unwrap();
        assert!(out.nmse().unwrap() < 1e-3, "{out:?}");
    }

    #[test]
    fn sniffer_outcomes() {
        let (tx, rx, plan, defender) = sniff_setup(2);
        let c = compress_bfp(&rx, 9, 12).unwrap();
        let none = AttackerKnowledge::derive(KnowledgeLevel::None, &plan);
        assert_eq!(sniff_fronthaul(FronthaulTap::Iq(&c), &none, &tx, 1, &defender).unwrap(), SniffOutcome::Failed);
        let full = AttackerKnowledge::derive(KnowledgeLevel::FullWaveform, &plan);
        assert_eq!(sniff_fronthaul(FronthaulTap::SealedMap, &full, &tx, 1, &defender).unwrap(), SniffOutcome::NoAccess);
        let plain = sniff_fronthaul(FronthaulTap::PlainMap(&defender), &none, &tx, 1, &defender).unwrap();
        assert_eq!(plain.nmse(), Some(0.0));
    }

    #[test]
    fn sniffer_nmse_grows_with_coarser_mantissas() {
        let mut worse = 0;
        let seeds = 50;
        for s in 0..seeds {
            let (tx, rx, plan, defender) = sniff_setup(100 + s);
            let k = AttackerKnowledge::derive(KnowledgeLevel::FullWaveform, &plan);
            let nmse = |b| {
                let c = compress_bfp(&rx, b, 12).unwrap();
                sniff_fronthaul(FronthaulTap::Iq(&c), &k, &tx, 1, &defender).unwrap().nmse().unwrap()
            };
            if nmse(4) > nmse(9) {
                worse += 1;
            }
        }
        assert_eq!(worse, seeds);
    }

    #[test]
    fn null_attack_report() {
        let num = Numerology::nr_30khz(16, 8);
        let h = crate::processing::ChannelGrid::new(ResourceGrid::zeros(num), full_mask(&num)).unwrap();
        let map = range_doppler_map(&h, 1).unwrap();
        assert_eq!(evaluate_attack(&[], &[], &map, &[], None), AttackReport::null());
    }

    #[test]
    fn full_waveform_spoof_is_detected() {
        let num = Numerology::nr_30khz(64, 32);
        let res = resolutions(&num, 1);
        let plan = build_signal_plan(&num, SignalType::StochasticData, 0.0, 5).unwrap();
        let tx = generate_grid(&plan, &num).unwrap();
        let real = Target { range: 3.0 * res.range, radial_velocity: -4.0 * res.velocity, rcs: 1.0, azimuth: beam().boresight() };
        let mut scene = Scene::empty(3);
        scene.noise_power = 1e-2;
        scene.targets.push(real);
        let clean_rx = apply_channel(&tx, &scene, &beam()).unwrap();
        let attempt = SpoofAttempt {
            fake_target: Target { range: 5.0 * res.range, radial_velocity: 6.0 * res.velocity, rcs: 1.0, azimuth: 0.0 },
            tx_power_ratio: 10.0,
            knowledge: KnowledgeLevel::FullWaveform,
        };
        let p = legitimate_reflection_power(&scene, &beam());
        let mut attacked_rx = clean_rx.clone();
        attacked_rx.add_assign(&spoof_inject(&plan, &attempt, &num, p, 77).unwrap());
        let cfar = CfarConfig { p_fa: 1e-4, n_training: 4, n_guard: 2 };
        let mask = plan.occupied_mask();
        let clean_map = range_doppler_map(&estimate_channel(&clean_rx, &tx, &mask).unwrap(), 1).unwrap();
        let attacked_map = range_doppler_map(&estimate_channel(&attacked_rx, &tx, &mask).unwrap(), 1).unwrap();
        let clean = ca_cfar(&clean_map, &cfar).unwrap();
        let attacked = ca_cfar(&attacked_map, &cfar).unwrap();
        let r = evaluate_attack(&clean, &attacked, &attacked_map, &[real], Some(&attempt));
        assert!(r.fake_target_detected, "{r:?}");
        assert!(r.fake_peak_snr.unwrap() > 20.0, "{r:?}");
        assert_eq!(r.true_targets_suppressed, 0);
    }

    #[test]
    fn doppler_matching_wraps() {
        assert!(bins_match((3, 0), (4, 15), 16));
        assert!(!bins_match((3, 0), (5, 0), 16));
        assert!(!bins_match((3, 0), (3, 2), 16));
    }

    #[test]
    fn reflection_power_falls_back_to_calibration() {
        let mut scene = Scene::empty(0);
        scene.reference_amplitude = 0.5;
        assert_eq!(legitimate_reflection_power(&scene, &beam()), 0.25);
        scene.targets.push(Target { range: 200.0, radial_velocity: 0.0, rcs: 1.0, azimuth: beam().boresight() });
        // (0.5 · (100/200)²)²
        assert!((legitimate_reflection_power(&scene, &beam()) - 0.015625).abs() < 1e-15);
    }
}
