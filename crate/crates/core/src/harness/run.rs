//! End-to-end execution of a scenario, one sensing occasion at a time.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::HarnessError;
use crate::adversary::{
    bins_match, evaluate_attack, sniff_fronthaul, spoof_inject, AttackKind, AttackReport, AttackerKnowledge,
    FronthaulTap, SniffOutcome,
};
use crate::channel::{apply_channel_with_gains, bitmap_gain, reflection_amplitude, Target};
use crate::control::{
    assess_missing, assess_quality, decide, detect_anomaly, CommandKind, ControlCommand, ControlPolicy, DetectorConfig,
    LoopState, LoopStatus, SensingQualityReport,
};
use crate::fronthaul::{
    compress_bfp, decompress_bfp, fronthaul_load, open_wire, AssociatedData, ChaChaCipher, CompressedIQ,
    FronthaulLoadReport, NonceSequence, Placement, Sealer,
};
use crate::numerology::{resolutions, Numerology};
use crate::processing::{ca_cfar, estimate_channel, range_doppler_map, Detection, RangeDopplerMap};
use crate::rng::{self, derive, occasion_seed, stream_seed, Stream};
use crate::waveform::{build_signal_plan, generate_grid, papr, ResourceGrid, SignalPlan, SignalType};

/// Fate of one ground-truth target in one occasion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub target_index: usize,
    /// Lit by the active beams, outside the blind zone and on the exported map.
    pub in_view: bool,
    pub detected: bool,
    pub expected_bin: Option<(usize, usize)>,
    pub range_bin_error: Option<i64>,
    pub doppler_bin_error: Option<i64>,
    /// m, estimate minus truth
    #[serde(with = "crate::serde_db::opt")]
    pub range_error: Option<f64>,
    /// m/s, estimate minus truth
    #[serde(with = "crate::serde_db::opt")]
    pub velocity_error: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub peak_snr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccasionRecord {
    pub occasion_id: u64,
    pub signal_type: SignalType,
    pub beam_bitmap: u64,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    #[serde(with = "crate::serde_db")]
    pub papr_db: f64,
    pub detections: Vec<Detection>,
    pub truth: Vec<TruthRecord>,
    /// Detections matching neither a target in view nor a spoofed target.
    pub false_alarms: usize,
    pub quality: SensingQualityReport,
    pub flags: crate::control::AnomalyFlags,
    pub commands: Vec<ControlCommand>,
    /// Loop status, when a control policy is configured.
    pub status: Option<LoopStatus>,
    pub load: FronthaulLoadReport,
    pub sniff_outcome: Option<String>,
    pub attacks: Vec<AttackReport>,
}

/// Run-level metrics; every field is a function of the records alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_occasions: u64,
    pub targets_in_view: u64,
    pub targets_detected: u64,
    #[serde(with = "crate::serde_db::opt")]
    pub detection_probability: Option<f64>,
    pub false_alarms: u64,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_abs_range_error: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_abs_velocity_error: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_matched_peak_snr: Option<f64>,
    pub fronthaul_bits: u64,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_papr_db: Option<f64>,
    pub spoof_attempts: u64,
    pub fake_targets_detected: u64,
    #[serde(with = "crate::serde_db::opt")]
    pub fake_detection_rate: Option<f64>,
    #[serde(with = "crate::serde_db::opt")]
    pub mean_attacker_nmse: Option<f64>,
    pub sniff_no_access: u64,
    pub integrity_failures: u64,
    pub spoof_flags: u64,
    pub degraded_occasions: u64,
    pub commands: u64,
    pub first_detection_occasion: Option<u64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0u64), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Aggregate {
    pub fn from_records(records: &[OccasionRecord]) -> Self {
        let truths = || records.iter().flat_map(|r| r.truth.iter());
        let in_view = truths().filter(|t| t.in_view).count() as u64;
        let detected = truths().filter(|t| t.in_view && t.detected).count() as u64;
        let spoofs = || records.iter().flat_map(|r| &r.attacks).filter(|a| a.kind == AttackKind::Spoof);
        let spoof_attempts = spoofs().count() as u64;
        let fake_targets_detected = spoofs().filter(|a| a.fake_target_detected).count() as u64;
        Self {
            n_occasions: records.len() as u64,
            targets_in_view: in_view,
            targets_detected: detected,
            detection_probability: ratio(detected, in_view),
            false_alarms: records.iter().map(|r| r.false_alarms as u64).sum(),
            mean_abs_range_error: mean(truths().filter_map(|t| t.range_error).map(f64::abs)),
            mean_abs_velocity_error: mean(truths().filter_map(|t| t.velocity_error).map(f64::abs)),
            mean_matched_peak_snr: mean(truths().filter_map(|t| t.peak_snr)),
            fronthaul_bits: records.iter().map(|r| r.load.bits_per_slot).sum(),
            mean_papr_db: mean(records.iter().map(|r| r.papr_db)),
            spoof_attempts,
            fake_targets_detected,
            fake_detection_rate: ratio(fake_targets_detected, spoof_attempts),
            mean_attacker_nmse: mean(
                records.iter().flat_map(|r| &r.attacks).filter(|a| a.kind == AttackKind::Sniff).filter_map(|a| a.attacker_map_nmse),
            ),
            sniff_no_access: records.iter().filter(|r| r.sniff_outcome.as_deref() == Some("no_access")).count() as u64,
            integrity_failures: records.iter().filter(|r| r.flags.integrity_failure).count() as u64,
            spoof_flags: records.iter().filter(|r| r.flags.suspected_spoof).count() as u64,
            degraded_occasions: records.iter().filter(|r| r.status == Some(LoopStatus::Degraded)).count() as u64,
            commands: records.iter().map(|r| r.commands.len() as u64).sum(),
            first_detection_occasion: records
                .iter()
                .find(|r| r.truth.iter().any(|t| t.in_view && t.detected))
                .map(|r| r.occasion_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub master_seed: u64,
    pub records: Vec<OccasionRecord>,
    pub aggregate: Aggregate,
}

/// Key material of one sealing epoch.
struct KeyEpoch {
    sealer: Sealer<ChaChaCipher>,
    nonces: NonceSequence,
}

impl KeyEpoch {
    fn new(master_seed: u64, epoch: u64) -> Self {
        let key_seed = derive(stream_seed(master_seed, Stream::Key), epoch);
        let salt_seed = derive(stream_seed(master_seed, Stream::Nonce), epoch);
        let salt = (salt_seed as u32).to_le_bytes();
        Self { sealer: Sealer::new(ChaChaCipher::from_seed(key_seed)), nonces: NonceSequence::new(salt) }
    }
}

/// What the defender front end produced from one RX grid.
struct FrontEnd {
    /// Map as exported over the fronthaul (cropped, and f32-rounded for RU).
    export: RangeDopplerMap,
    compressed: Option<CompressedIQ>,
}

struct Runner<'a> {
    sc: &'a Scenario,
    policy: ControlPolicy,
    state: LoopState,
    base_rb: u32,
    base_dl: u32,
    keys: KeyEpoch,
    epoch: u64,
    history: VecDeque<SensingQualityReport>,
}

fn rt(occasion: u64) -> impl Fn(&dyn std::fmt::Display) -> HarnessError {
    move |e| HarnessError::Runtime { occasion, message: e.to_string() }
}

macro_rules! at {
    ($occ:expr, $e:expr) => {
        $e.map_err(|e| rt($occ)(&e))?
    };
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let policy = sc.control.unwrap_or_default();
        let base_rb = (sc.numerology.n_subcarriers / 12) as u32;
        let base_dl = ((sc.numerology.n_symbols as u32) / policy.symbols_per_slot).max(1);
        let state = LoopState {
            beam_bitmap: 1u64 << sc.beam.beam_index,
            bwp_start_rb: 0,
            bwp_n_rb: base_rb,
            dl_slots: base_dl,
            ul_slots: policy.tdd_period.saturating_sub(base_dl),
            tdd_period: policy.tdd_period,
            schedule: sc.signal.probe_schedule,
            rotations: 0,
        };
        Self {
            sc,
            policy,
            state,
            base_rb,
            base_dl,
            keys: KeyEpoch::new(sc.master_seed, 0),
            epoch: 0,
            history: VecDeque::new(),
        }
    }

    /// Grid size under the bandwidth part and TDD pattern in force.
    fn numerology(&self) -> Numerology {
        let mut num = self.sc.numerology;
        let extra_rb = self.state.bwp_n_rb.saturating_sub(self.base_rb) as usize;
        let extra_dl = self.state.dl_slots.saturating_sub(self.base_dl) as usize;
        num.n_subcarriers += 12 * extra_rb;
        num.n_symbols += extra_dl * self.policy.symbols_per_slot as usize;
        num
    }

    fn export_dims(&self, num: &Numerology) -> (usize, usize) {
        let p = self.sc.processing.pad_factor;
        let (nr, nd) = (p * num.n_subcarriers, p * num.n_symbols);
        match self.sc.processing.export_window {
            Some((wr, wd)) => (wr.min(nr), wd.min(nd)),
            None => (nr, nd),
        }
    }

    fn front_end(
        &self,
        occ: u64,
        rx: &ResourceGrid,
        tx: &ResourceGrid,
        plan: &SignalPlan,
        dims: (usize, usize),
    ) -> Result<FrontEnd, HarnessError> {
        let mask = plan.occupied_mask();
        let pad = self.sc.processing.pad_factor;
        match self.sc.placement {
            Placement::DuProcessing => {
                let c = &self.sc.compression;
                let compressed = at!(occ, compress_bfp(rx, c.mantissa_bits, c.block_size));
                let rx_hat = at!(occ, decompress_bfp(&compressed));
                let h = at!(occ, estimate_channel(&rx_hat, tx, &mask));
                let map = at!(occ, range_doppler_map(&h, pad));
                let export = at!(occ, map.crop(dims.0, dims.1));
                Ok(FrontEnd { export, compressed: Some(compressed) })
            }
            Placement::RuProcessing => {
                let h = at!(occ, estimate_channel(rx, tx, &mask));
                let map = at!(occ, range_doppler_map(&h, pad));
                let crop = at!(occ, map.crop(dims.0, dims.1));
                let export = at!(occ, RangeDopplerMap::from_bytes(&crop.to_bytes()));
                Ok(FrontEnd { export, compressed: None })
            }
        }
    }

    fn detect(&self, occ: u64, map: &RangeDopplerMap, num: &Numerology) -> Result<Vec<Detection>, HarnessError> {
        let blind = self.sc.processing.blind_range_cells * resolutions(num, 1).range;
        let dets = at!(occ, ca_cfar(map, &self.sc.cfar));
        Ok(dets.into_iter().filter(|d| d.est_range >= blind).collect())
    }

    /// RU → DU transport of the exported map. `None` when the frame fails
    /// to open or parse.
    fn transport(
        &mut self,
        occ: u64,
        export: &RangeDopplerMap,
        tamper: Option<f64>,
    ) -> Result<(Option<RangeDopplerMap>, bool), HarnessError> {
        let aad = AssociatedData {
            cell_id: self.sc.security.cell_id,
            slot_counter: occ,
            beam_index: self.state.beam_bitmap.trailing_zeros(),
        };
        let plain = export.to_bytes();
        let mut wire = if self.sc.security.seal_maps {
            let nonce = self.keys.nonces.next_nonce();
            at!(occ, self.keys.sealer.seal(&plain, aad, nonce)).to_wire()
        } else {
            plain
        };
        let mut tampered = false;
        if let Some(p) = tamper {
            let mut rng = rng::rng_from(stream_seed(occasion_seed(self.sc.master_seed, occ), Stream::Tamper));
            if rng.random::<f64>() < p {
                let bit = rng.random_range(0..wire.len() * 8);
                wire[bit / 8] ^= 1 << (bit % 8);
                tampered = true;
            }
        }
        let opened = if self.sc.security.seal_maps {
            open_wire(&wire, self.keys.sealer.cipher(), &aad).ok()
        } else {
            Some(wire)
        };
        Ok((opened.and_then(|b| RangeDopplerMap::from_bytes(&b).ok()), tampered))
    }

    fn occasion(&mut self, occ: u64) -> Result<OccasionRecord, HarnessError> {
        let sc = self.sc;
        let seed = occasion_seed(sc.master_seed, occ);
        let num = self.numerology();
        let beam_bitmap = self.state.beam_bitmap;
        let dims = self.export_dims(&num);

        let signal_type = match self.state.schedule {
            crate::control::ProbeSchedule::Alternating if occ % 2 == 1 => sc.signal.probe_signal,
            _ => sc.signal.signal_type,
        };
        let density = sc.signal.density_for(signal_type);
        let plan = at!(occ, build_signal_plan(&num, signal_type, density, stream_seed(seed, Stream::Payload)))
            .with_modulation(sc.signal.modulation);
        let plan = at!(occ, plan.with_pilot_root(sc.signal.pilot_root));
        let tx = at!(occ, generate_grid(&plan, &num));
        let papr_db = at!(occ, papr(&tx));

        let scene = sc.scene.scene(stream_seed(seed, Stream::Noise));
        let gains: Vec<f64> =
            scene.targets.iter().map(|t| bitmap_gain(&sc.beam, self.state.beam_bitmap, t.azimuth)).collect();
        let rx_clean = at!(occ, apply_channel_with_gains(&tx, &scene, &gains));

        let attacker = sc.attacker.clone().unwrap_or_default();
        let rx = match &attacker.spoof {
            Some(attempt) => {
                let p_refl = scene
                    .targets
                    .iter()
                    .zip(&gains)
                    .filter_map(|(t, g)| {
                        reflection_amplitude(t, scene.reference_range, scene.reference_amplitude)
                            .ok()
                            .map(|a| (g * a).powi(2))
                    })
                    .fold(0.0, f64::max);
                let p_refl = if p_refl > 0.0 { p_refl } else { scene.reference_amplitude.powi(2) };
                let fake = at!(occ, spoof_inject(&plan, attempt, &num, p_refl, stream_seed(seed, Stream::Attacker)));
                let mut rx = rx_clean.clone();
                rx.add_assign(&fake);
                rx
            }
            None => rx_clean.clone(),
        };

        let fe = self.front_end(occ, &rx, &tx, &plan, dims)?;
        let mut attacks = Vec::new();

        // Fronthaul: RU maps cross the (optionally sealed) link, DU already has them.
        let (received, integrity_failure) = match sc.placement {
            Placement::RuProcessing => {
                let tamper = attacker.tamper.map(|t| t.probability);
                let (received, tampered) = self.transport(occ, &fe.export, tamper)?;
                if tampered {
                    attacks.push(AttackReport { kind: AttackKind::Tamper, ..AttackReport::null() });
                }
                let failed = received.is_none();
                (received, failed)
            }
            Placement::DuProcessing => (Some(fe.export.clone()), false),
        };
        let detections = match &received {
            Some(map) => self.detect(occ, map, &num)?,
            None => Vec::new(),
        };

        // Passive sniffer on the fronthaul.
        let mut sniff_outcome = None;
        if let Some(sniff) = attacker.sniff {
            let knowledge = AttackerKnowledge::derive(sniff.knowledge, &plan);
            let pad = sc.processing.pad_factor;
            let outcome = match (sc.placement, sc.security.seal_maps) {
                (Placement::RuProcessing, true) => SniffOutcome::NoAccess,
                (Placement::RuProcessing, false) => {
                    let h = at!(occ, estimate_channel(&rx, &tx, &plan.occupied_mask()));
                    let reference = at!(occ, at!(occ, range_doppler_map(&h, pad)).crop(dims.0, dims.1));
                    at!(occ, sniff_fronthaul(FronthaulTap::PlainMap(&fe.export), &knowledge, &tx, pad, &reference))
                }
                (Placement::DuProcessing, _) => {
                    let h = at!(occ, estimate_channel(&rx, &tx, &plan.occupied_mask()));
                    let reference = at!(occ, range_doppler_map(&h, pad));
                    let iq = fe.compressed.as_ref().expect("DU front end keeps the IQ");
                    at!(occ, sniff_fronthaul(FronthaulTap::Iq(iq), &knowledge, &tx, pad, &reference))
                }
            };
            attacks.push(AttackReport {
                kind: AttackKind::Sniff,
                attacker_map_nmse: outcome.nmse(),
                ..AttackReport::null()
            });
            sniff_outcome = Some(outcome.label().to_string());
        }

        // Ground truth against what the DU detected.
        let blind = sc.processing.blind_range_cells * resolutions(&num, 1).range;
        let nd = fe.export.n_doppler();
        let expected: Vec<Option<(usize, usize)>> = scene
            .targets
            .iter()
            .zip(&gains)
            .map(|(t, &g)| {
                if g > 0.0 && t.range >= blind {
                    fe.export.bin_of(t.range, t.radial_velocity)
                } else {
                    None
                }
            })
            .collect();
        let truth: Vec<TruthRecord> =
            scene.targets.iter().zip(&expected).enumerate().map(|(i, (t, &e))| truth_record(i, t, e, &detections, nd)).collect();
        let fake_bin = attacker
            .spoof
            .as_ref()
            .and_then(|a| fe.export.bin_of(a.fake_target.range, a.fake_target.radial_velocity));
        let false_alarms = detections
            .iter()
            .filter(|d| {
                let b = (d.range_bin, d.doppler_bin);
                !expected.iter().flatten().any(|&e| bins_match(b, e, nd))
                    && !fake_bin.is_some_and(|f| bins_match(b, f, nd))
            })
            .count();

        if let Some(attempt) = &attacker.spoof {
            let clean = self.front_end(occ, &rx_clean, &tx, &plan, dims)?;
            let clean_dets = self.detect(occ, &clean.export, &num)?;
            let visible: Vec<Target> =
                scene.targets.iter().zip(&expected).filter(|(_, e)| e.is_some()).map(|(t, _)| *t).collect();
            let map = received.as_ref().unwrap_or(&fe.export);
            attacks.push(evaluate_attack(&clean_dets, &detections, map, &visible, Some(attempt)));
        }

        // Control loop.
        let n_known = plan.occupied_mask().count();
        let quality = match &received {
            Some(map) => assess_quality(occ, &detections, map, &num, &self.policy.quality),
            None => assess_missing(occ, &num, &self.policy.quality),
        }
        .with_probe(signal_type, n_known);
        let detector = DetectorConfig {
            reference_range: scene.reference_range,
            reference_amplitude: scene.reference_amplitude,
            ..self.policy.detector
        };
        let history: Vec<SensingQualityReport> = self.history.iter().cloned().collect();
        let flags = detect_anomaly(&history, &quality, integrity_failure, &detector);
        self.history.push_back(quality.clone());
        while self.history.len() > 2 * detector.window_pairs {
            self.history.pop_front();
        }

        let (commands, status) = match sc.control {
            Some(policy) => {
                let decision = decide(&quality, &flags, &policy, &self.state);
                self.state.apply(&decision);
                if decision.commands.iter().any(|c| c.kind == CommandKind::Rekey) {
                    self.epoch += 1;
                    self.keys = KeyEpoch::new(sc.master_seed, self.epoch);
                }
                (decision.commands, Some(decision.status))
            }
            None => (Vec::new(), None),
        };

        let load = at!(occ, fronthaul_load(sc.placement, &num, &sc.compression, dims));
        Ok(OccasionRecord {
            occasion_id: occ,
            signal_type,
            beam_bitmap,
            n_subcarriers: num.n_subcarriers,
            n_symbols: num.n_symbols,
            papr_db,
            detections,
            truth,
            false_alarms,
            quality,
            flags,
            commands,
            status,
            load,
            sniff_outcome,
            attacks,
        })
    }
}

fn truth_record(
    index: usize,
    target: &Target,
    expected: Option<(usize, usize)>,
    detections: &[Detection],
    n_doppler: usize,
) -> TruthRecord {
    let mut rec = TruthRecord {
        target_index: index,
        in_view: expected.is_some(),
        detected: false,
        expected_bin: expected,
        range_bin_error: None,
        doppler_bin_error: None,
        range_error: None,
        velocity_error: None,
        peak_snr: None,
    };
    let Some(e) = expected else { return rec };
    let best = detections
        .iter()
        .filter(|d| bins_match((d.range_bin, d.doppler_bin), e, n_doppler))
        .max_by(|a, b| a.peak_snr.total_cmp(&b.peak_snr));
    if let Some(d) = best {
        let mut dl = d.doppler_bin as i64 - e.1 as i64;
        let n = n_doppler as i64;
        if dl > n / 2 {
            dl -= n;
        } else if dl < -n / 2 {
            dl += n;
        }
        rec.detected = true;
        rec.range_bin_error = Some(d.range_bin as i64 - e.0 as i64);
        rec.doppler_bin_error = Some(dl);
        rec.range_error = Some(d.est_range - target.range);
        rec.velocity_error = Some(d.est_velocity - target.radial_velocity);
        rec.peak_snr = Some(d.peak_snr);
    }
    rec
}

/// Runs every occasion of a validated scenario in order.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, HarnessError> {
    scenario.validate()?;
    let mut runner = Runner::new(scenario);
    let mut records = Vec::with_capacity(scenario.n_occasions as usize);
    for occ in 0..scenario.n_occasions {
        records.push(runner.occasion(occ)?);
    }
    let aggregate = Aggregate::from_records(&records);
    Ok(RunReport { scenario: scenario.name.clone(), master_seed: scenario.master_seed, records, aggregate })
}
