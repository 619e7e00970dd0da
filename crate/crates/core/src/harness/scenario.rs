//! Scenario files: strict JSON with every field defaulted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::{KnowledgeLevel, SpoofAttempt};
use crate::channel::{BeamConfig, Scene, Target, DEFAULT_LEAKAGE_GAIN, N_BEAMS};
use crate::control::{ControlPolicy, ProbeSchedule};
use crate::fronthaul::{CompressionConfig, Placement};
use crate::numerology::{resolutions, Numerology};
use crate::processing::{CfarConfig, PAD_FACTORS};
use crate::waveform::{build_signal_plan, Modulation, SignalType, DEFAULT_REFERENCE_DENSITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalConfig {
    pub signal_type: SignalType,
    /// Reference RE density. Unset means none for stochastic data and 1/12
    /// for reference-only transmission.
    pub reference_density: Option<f64>,
    pub modulation: Modulation,
    pub pilot_root: u64,
    pub probe_schedule: ProbeSchedule,
    /// Deterministic signal sent on odd occasions under an alternating schedule.
    pub probe_signal: SignalType,
}

impl Default for SignalConfig {
    fn default() -> Self {
        Self {
            signal_type: SignalType::StochasticData,
            reference_density: None,
            modulation: Modulation::Qpsk,
            pilot_root: 1,
            probe_schedule: ProbeSchedule::StochasticOnly,
            probe_signal: SignalType::Pilot,
        }
    }
}

impl SignalConfig {
    pub fn density_for(&self, signal_type: SignalType) -> f64 {
        match (signal_type, self.reference_density) {
            (SignalType::Pilot, _) => 0.0,
            (_, Some(d)) => d,
            (SignalType::ReferenceOnly, None) => DEFAULT_REFERENCE_DENSITY,
            (SignalType::StochasticData, None) => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub targets: Vec<Target>,
    /// Per-RE noise variance relative to unit TX symbol power.
    pub noise_power: f64,
    pub leakage_gain: f64,
    pub reference_range: f64,
    /// Reflection amplitude of a 1 m² target at `reference_range`.
    pub reference_amplitude: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            targets: Vec::new(),
            noise_power: 1e-3,
            leakage_gain: DEFAULT_LEAKAGE_GAIN,
            reference_range: 100.0,
            reference_amplitude: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn scene(&self, rng_seed: u64) -> Scene {
        Scene {
            targets: self.targets.clone(),
            noise_power: self.noise_power,
            leakage_gain: self.leakage_gain,
            rng_seed,
            reference_range: self.reference_range,
            reference_amplitude: self.reference_amplitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessingConfig {
    pub pad_factor: usize,
    /// Range × Doppler bins kept around zero velocity, or the whole map.
    pub export_window: Option<(usize, usize)>,
    /// Detections closer than this many unpadded range cells are attributed
    /// to self-interference and discarded.
    pub blind_range_cells: f64,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self { pad_factor: 8, export_window: Some((256, 64)), blind_range_cells: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SecurityConfig {
    /// Seal range-Doppler maps on the RU → DU link.
    pub seal_maps: bool,
    pub cell_id: u32,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        Self { seal_maps: true, cell_id: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SniffConfig {
    pub knowledge: KnowledgeLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamperConfig {
    /// Chance per occasion that one bit of the RU → DU map frame is flipped.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackerConfig {
    pub spoof: Option<SpoofAttempt>,
    pub sniff: Option<SniffConfig>,
    pub tamper: Option<TamperConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub numerology: Numerology,
    pub signal: SignalConfig,
    pub scene: SceneConfig,
    pub beam: BeamConfig,
    pub placement: Placement,
    pub processing: ProcessingConfig,
    pub compression: CompressionConfig,
    pub security: SecurityConfig,
    pub cfar: CfarConfig,
    pub attacker: Option<AttackerConfig>,
    pub control: Option<ControlPolicy>,
    pub n_occasions: u64,
    pub master_seed: u64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            numerology: Numerology::nr_30khz(3276, 14),
            signal: SignalConfig::default(),
            scene: SceneConfig::default(),
            beam: BeamConfig::default(),
            placement: Placement::RuProcessing,
            processing: ProcessingConfig::default(),
            compression: CompressionConfig::default(),
            security: SecurityConfig::default(),
            // Guard spans the 8x padded main lobe.
            cfar: CfarConfig { p_fa: 1e-4, n_training: 4, n_guard: 6 },
            attacker: None,
            control: None,
            n_occasions: 10,
            master_seed: 0,
        }
    }
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

impl Scenario {
    /// Map size before cropping at the configured numerology.
    pub fn full_map_dims(&self) -> (usize, usize) {
        let p = self.processing.pad_factor;
        (p * self.numerology.n_subcarriers, p * self.numerology.n_symbols)
    }

    pub fn export_dims(&self) -> (usize, usize) {
        let (nr, nd) = self.full_map_dims();
        match self.processing.export_window {
            Some((wr, wd)) => (wr.min(nr), wd.min(nd)),
            None => (nr, nd),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let num = &self.numerology;
        num.validate().map_err(|e| config_err("numerology", e))?;
        let d = self.signal.density_for(self.signal.signal_type);
        build_signal_plan(num, self.signal.signal_type, d, 0).map_err(|e| config_err("signal", e))?;
        if self.signal.probe_schedule == ProbeSchedule::Alternating {
            if !self.signal.probe_signal.is_deterministic() {
                return Err(config_err("signal.probe_signal", "must be reference_only or pilot"));
            }
            let d = self.signal.density_for(self.signal.probe_signal);
            build_signal_plan(num, self.signal.probe_signal, d, 0).map_err(|e| config_err("signal.probe_signal", e))?;
        }

        if self.beam.beam_index >= N_BEAMS {
            return Err(config_err("beam.beam_index", format!("{} must be below {N_BEAMS}", self.beam.beam_index)));
        }
        self.beam.validate().map_err(|e| config_err("beam", e))?;

        let max_range = resolutions(num, 1).max_range;
        let scene = self.scene.scene(0);
        scene.validate().map_err(|e| config_err("scene", e))?;
        for (i, t) in self.scene.targets.iter().enumerate() {
            t.validate(max_range).map_err(|e| config_err(&format!("scene.targets[{i}]"), e))?;
        }

        let p = self.processing.pad_factor;
        if !PAD_FACTORS.contains(&p) {
            return Err(config_err("processing.pad_factor", format!("{p} is not one of {PAD_FACTORS:?}")));
        }
        if let Some((wr, wd)) = self.processing.export_window {
            let (nr, nd) = self.full_map_dims();
            if wr == 0 || wd == 0 || wr > nr || wd > nd {
                return Err(config_err(
                    "processing.export_window",
                    format!("[{wr}, {wd}] must be non-empty and within the {nr}x{nd} map"),
                ));
            }
        }
        if !(self.processing.blind_range_cells.is_finite() && self.processing.blind_range_cells >= 0.0) {
            return Err(config_err("processing.blind_range_cells", "must be non-negative"));
        }
        let (er, ed) = self.export_dims();
        let w = self.cfar.window();
        if w > er || w > ed {
            return Err(config_err("cfar", format!("{w}-cell window exceeds the {er}x{ed} exported map")));
        }
        self.cfar.validate().map_err(|e| config_err("cfar", e))?;
        self.compression.validate().map_err(|e| config_err("compression", e))?;

        if let Some(a) = &self.attacker {
            if let Some(s) = &a.spoof {
                s.validate(num).map_err(|e| config_err("attacker.spoof", e))?;
            }
            if let Some(t) = &a.tamper {
                if !(0.0..=1.0).contains(&t.probability) {
                    return Err(config_err("attacker.tamper.probability", format!("{} outside [0, 1]", t.probability)));
                }
            }
        }
        if let Some(policy) = &self.control {
            policy.validate().map_err(|e| config_err("control", e))?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        // serde_json errors already end with "at line L column C".
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Reads, parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })?;
    Scenario::from_json(&text).map_err(|e| match e {
        HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let s = Scenario::from_json("{}").unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.numerology.n_subcarriers, 3276);
        assert_eq!(s.compression.mantissa_bits, 9);
        assert_eq!(s.placement, Placement::RuProcessing);
    }

    #[test]
    fn unknown_key_rejected() {
        let e = Scenario::from_json(r#"{"n_occasion": 3}"#).unwrap_err();
        assert!(e.to_string().contains("n_occasion"), "{e}");
        let e = Scenario::from_json(r#"{"beam": {"beam_index": 1, "sector_start": 0, "sector_width": 64, "beamwidth": 4, "tilt": 1}}"#)
            .unwrap_err();
        assert!(e.to_string().contains("tilt"), "{e}");
    }

    #[test]
    fn beam_index_64_names_the_field() {
        let e = Scenario::from_json(r#"{"beam": {"beam_index": 64, "sector_start": 0, "sector_width": 64, "beamwidth": 4}}"#)
            .unwrap_err();
        assert!(matches!(e, HarnessError::Config(_)));
        assert!(e.to_string().contains("beam.beam_index"), "{e}");
    }

    #[test]
    fn target_beyond_unambiguous_range_reports_bound() {
        let bound = resolutions(&Numerology::nr_30khz(3276, 14), 1).max_range;
        let json = r#"{"scene": {"targets": [{"range": 6000, "radial_velocity": 0, "rcs": 1, "azimuth": 0.5}]}}"#;
        let e = Scenario::from_json(json).unwrap_err().to_string();
        assert!(e.contains("scene.targets[0]"), "{e}");
        assert!(e.contains(&bound.to_string()), "{e} lacks {bound}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = Scenario::from_json("{\n  \"n_occasions\": ,\n}").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn export_window_must_fit() {
        let json = r#"{"processing": {"pad_factor": 1, "export_window": [4000, 14]}}"#;
        let e = Scenario::from_json(json).unwrap_err().to_string();
        assert!(e.contains("processing.export_window"), "{e}");
    }

    #[test]
    fn reference_only_gets_default_density() {
        let s = SignalConfig { signal_type: SignalType::ReferenceOnly, ..Default::default() };
        assert_eq!(s.density_for(SignalType::ReferenceOnly), DEFAULT_REFERENCE_DENSITY);
        assert_eq!(s.density_for(SignalType::StochasticData), 0.0);
    }

    #[test]
    fn json_round_trip() {
        let s = Scenario { n_occasions: 3, attacker: Some(AttackerConfig::default()), ..Default::default() };
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }
}
