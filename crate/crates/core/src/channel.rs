//! Mono-static reflective channel from the communication RU to the
//! co-located sniffer RU.
//!
//! The channel is applied per resource element in the frequency domain:
//!
//! ```text
//! Y[n,m] = Σ_t g_t·a_t·X[n,m]·exp(-j2π·n·Δf·τ_t)·exp(+j2π·m·T_o·f_d,t)
//!        + leakage·X[n,m] + w[n,m]
//! ```
//!
//! Positive radial velocity means the target approaches, which gives a
//! positive Doppler shift.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::waveform::ResourceGrid;
use crate::SPEED_OF_LIGHT;

/// Number of sniffer beams addressable by the beam bitmap.
pub const N_BEAMS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("range must be non-negative, got {0} m")]
    NegativeRange(f64),
    #[error("range must be positive, got {0} m")]
    ZeroRange(f64),
    #[error("target at {range} m is beyond the unambiguous range {max_range} m (τ·Δf = {delay_spacing_product})")]
    BeyondUnambiguousRange { range: f64, max_range: f64, delay_spacing_product: f64 },
    #[error("invalid target: {0}")]
    InvalidTarget(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid beam: {0}")]
    InvalidBeam(String),
    #[error("transmit grid contains non-finite values")]
    NonFiniteInput,
}

/// Point scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    /// m
    pub range: f64,
    /// m/s, positive = approaching
    pub radial_velocity: f64,
    /// m²
    pub rcs: f64,
    /// degrees in [0, 360)
    pub azimuth: f64,
}

impl Target {
    pub fn validate(&self, max_range: f64) -> Result<(), ChannelError> {
        if !(self.range.is_finite() && self.range > 0.0) {
            return Err(ChannelError::InvalidTarget(format!("range {} must be positive", self.range)));
        }
        if self.range >= max_range {
            return Err(ChannelError::BeyondUnambiguousRange {
                range: self.range,
                max_range,
                delay_spacing_product: self.range / max_range,
            });
        }
        if !(self.rcs.is_finite() && self.rcs > 0.0) {
            return Err(ChannelError::InvalidTarget(format!("rcs {} must be positive", self.rcs)));
        }
        if !self.radial_velocity.is_finite() {
            return Err(ChannelError::InvalidTarget("radial_velocity must be finite".into()));
        }
        if !(0.0..360.0).contains(&self.azimuth) {
            return Err(ChannelError::InvalidTarget(format!(
                "azimuth {} must be in [0, 360)",
                self.azimuth
            )));
        }
        Ok(())
    }
}

/// Ground truth of one sensing occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub targets: Vec<Target>,
    /// Per-RE complex noise variance (linear).
    pub noise_power: f64,
    /// Amplitude of the direct TX → sniffer coupling at zero delay.
    pub leakage_gain: f64,
    pub rng_seed: u64,
    /// Range at which a unit-RCS target reflects with `reference_amplitude`.
    pub reference_range: f64,
    pub reference_amplitude: f64,
}

/// Residual self-interference assumed for the co-located sniffer.
pub const DEFAULT_LEAKAGE_GAIN: f64 = 1e-3;

impl Scene {
    pub fn empty(rng_seed: u64) -> Self {
        Self {
            targets: Vec::new(),
            noise_power: 0.0,
            leakage_gain: 0.0,
            rng_seed,
            reference_range: 100.0,
            reference_amplitude: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.noise_power.is_finite() && self.noise_power >= 0.0) {
            return Err(ChannelError::InvalidScene(format!("noise_power {} < 0", self.noise_power)));
        }
        if !(0.0..1.0).contains(&self.leakage_gain) {
            return Err(ChannelError::InvalidScene(format!(
                "leakage_gain {} outside [0, 1)",
                self.leakage_gain
            )));
        }
        if !(self.reference_range.is_finite() && self.reference_range > 0.0) {
            return Err(ChannelError::InvalidScene("reference_range must be positive".into()));
        }
        if !(self.reference_amplitude.is_finite() && self.reference_amplitude >= 0.0) {
            return Err(ChannelError::InvalidScene("reference_amplitude must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sniffer beam: one of 64 equal slices of a sector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_index: usize,
    /// degrees
    pub sector_start: f64,
    /// degrees
    pub sector_width: f64,
    /// degrees; the pattern reaches zero at ±beamwidth from boresight
    pub beamwidth: f64,
}

impl Default for BeamConfig {
    /// 64 one-degree beams over 0..64° with a ±4° main lobe.
    fn default() -> Self {
        Self { beam_index: 0, sector_start: 0.0, sector_width: 64.0, beamwidth: 4.0 }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.beam_index >= N_BEAMS {
            return Err(ChannelError::InvalidBeam(format!(
                "beam_index {} must be below {N_BEAMS}",
                self.beam_index
            )));
        }
        if !(self.beamwidth.is_finite() && self.beamwidth > 0.0) {
            return Err(ChannelError::InvalidBeam(format!("beamwidth {} must be positive", self.beamwidth)));
        }
        if !(self.sector_width.is_finite() && self.sector_width > 0.0 && self.sector_width <= 360.0) {
            return Err(ChannelError::InvalidBeam(format!(
                "sector_width {} must be in (0, 360]",
                self.sector_width
            )));
        }
        if !self.sector_start.is_finite() {
            return Err(ChannelError::InvalidBeam("sector_start must be finite".into()));
        }
        Ok(())
    }

    pub fn with_index(&self, beam_index: usize) -> Self {
        Self { beam_index, ..*self }
    }

    pub fn boresight(&self) -> f64 {
        self.sector_start + (self.beam_index as f64 + 0.5) * self.sector_width / N_BEAMS as f64
    }
}

/// τ = 2R/c.
pub fn round_trip_delay(range: f64) -> Result<f64, ChannelError> {
    if range < 0.0 || range.is_nan() {
        return Err(ChannelError::NegativeRange(range));
    }
    Ok(2.0 * range / SPEED_OF_LIGHT)
}

/// f_d = 2·v·f_c/c.
pub fn doppler_shift(radial_velocity: f64, carrier_freq: f64) -> f64 {
    2.0 * radial_velocity * carrier_freq / SPEED_OF_LIGHT
}

/// Radar-equation amplitude calibrated at `(reference_range, reference_amplitude)`:
/// `A_ref·sqrt(σ)·(R_ref/R)²`, i.e. received power falls as R⁻⁴.
pub fn reflection_amplitude(
    target: &Target,
    reference_range: f64,
    reference_amplitude: f64,
) -> Result<f64, ChannelError> {
    if !(target.range > 0.0) {
        return Err(ChannelError::ZeroRange(target.range));
    }
    let ratio = reference_range / target.range;
    Ok(reference_amplitude * target.rcs.sqrt() * ratio * ratio)
}

/// Signed angular difference wrapped to (-180, 180].
fn wrap_degrees(delta: f64) -> f64 {
    let mut d = delta.rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Raised-cosine beam pattern: 1 at boresight, 0.5 at half the beamwidth,
/// 0 from ±beamwidth outwards.
pub fn beam_gain(beam: &BeamConfig, azimuth: f64) -> f64 {
    let delta = wrap_degrees(azimuth - beam.boresight()).abs();
    if delta >= beam.beamwidth {
        return 0.0;
    }
    0.5 * (1.0 + (std::f64::consts::PI * delta / beam.beamwidth).cos())
}

/// Gain when several beams of a bitmap are active: the best of them.
pub fn bitmap_gain(beam: &BeamConfig, bitmap: u64, azimuth: f64) -> f64 {
    (0..N_BEAMS)
        .filter(|i| bitmap >> i & 1 == 1)
        .map(|i| beam_gain(&beam.with_index(i), azimuth))
        .fold(0.0, f64::max)
}

/// Applies the scene with the sniffer steered by `beam`.
pub fn apply_channel(
    tx: &ResourceGrid,
    scene: &Scene,
    beam: &BeamConfig,
) -> Result<ResourceGrid, ChannelError> {
    beam.validate()?;
    let gains: Vec<f64> = scene.targets.iter().map(|t| beam_gain(beam, t.azimuth)).collect();
    apply_channel_with_gains(tx, scene, &gains)
}

/// Same as [`apply_channel`] with precomputed per-target beam gains.
pub fn apply_channel_with_gains(
    tx: &ResourceGrid,
    scene: &Scene,
    gains: &[f64],
) -> Result<ResourceGrid, ChannelError> {
    assert_eq!(gains.len(), scene.targets.len(), "one gain per target");
    scene.validate()?;
    if !tx.is_finite() {
        return Err(ChannelError::NonFiniteInput);
    }
    let num = *tx.numerology();
    let (n_sc, n_sym) = (num.n_subcarriers, num.n_symbols);

    let mut response = vec![Complex64::new(0.0, 0.0); n_sc * n_sym];
    for (target, &gain) in scene.targets.iter().zip(gains) {
        let tau = round_trip_delay(target.range)?;
        let product = tau * num.subcarrier_spacing;
        if product >= 1.0 {
            return Err(ChannelError::BeyondUnambiguousRange {
                range: target.range,
                max_range: SPEED_OF_LIGHT / (2.0 * num.subcarrier_spacing),
                delay_spacing_product: product,
            });
        }
        let amplitude = gain * reflection_amplitude(target, scene.reference_range, scene.reference_amplitude)?;
        if amplitude == 0.0 {
            continue;
        }
        let fd = doppler_shift(target.radial_velocity, num.carrier_freq);
        let range_ramp: Vec<Complex64> = (0..n_sc)
            .map(|n| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * unit_phase(n as f64 * product)))
            .collect();
        let doppler_step = fd * num.symbol_duration;
        for m in 0..n_sym {
            let d = Complex64::from_polar(amplitude, 2.0 * std::f64::consts::PI * unit_phase(m as f64 * doppler_step));
            let col = &mut response[m * n_sc..(m + 1) * n_sc];
            for (h, r) in col.iter_mut().zip(&range_ramp) {
                *h += r * d;
            }
        }
    }

    let mut out = ResourceGrid::zeros(num);
    let leak = scene.leakage_gain;
    for ((y, x), h) in out.as_mut_slice().iter_mut().zip(tx.as_slice()).zip(&response) {
        *y = x * h;
        if leak != 0.0 {
            *y += x * leak;
        }
    }
    if scene.noise_power > 0.0 {
        add_noise(&mut out, scene.noise_power, scene.rng_seed);
    }
    Ok(out)
}

/// Fractional part, keeping phases small before multiplication by 2π.
fn unit_phase(cycles: f64) -> f64 {
    cycles - cycles.round()
}

/// Adds circularly-symmetric complex Gaussian noise of variance `power`.
pub fn add_noise(grid: &mut ResourceGrid, power: f64, seed: u64) {
    let mut rng = rng::rng_from(seed);
    let sigma = (power / 2.0).sqrt();
    for y in grid.as_mut_slice() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *y += Complex64::new(re * sigma, im * sigma);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerology::Numerology;
    use crate::waveform::{build_signal_plan, generate_grid, SignalType};

    fn beam() -> BeamConfig {
        BeamConfig { beam_index: 0, sector_start: 0.0, sector_width: 64.0, beamwidth: 10.0 }
    }

    fn qpsk(num: Numerology, seed: u64) -> ResourceGrid {
        let plan = build_signal_plan(&num, SignalType::StochasticData, 0.0, seed).unwrap();
        generate_grid(&plan, &num).unwrap()
    }

    #[test]
    fn delay_examples() {
        assert_eq!(round_trip_delay(0.0).unwrap(), 0.0);
        assert!((round_trip_delay(149.896229).unwrap() - 1e-6).abs() < 1e-15);
        assert!((round_trip_delay(1500.0).unwrap() - 10.0069e-6).abs() < 1e-9);
        assert!(matches!(round_trip_delay(-1.0), Err(ChannelError::NegativeRange(_))));
    }

    #[test]
    fn doppler_examples() {
        assert_eq!(doppler_shift(0.0, 3.5e9), 0.0);
        assert!((doppler_shift(30.0, 3.5e9) - 700.48).abs() < 0.01);
        assert_eq!(doppler_shift(-30.0, 3.5e9), -doppler_shift(30.0, 3.5e9));
    }

    #[test]
    fn reflection_power_law() {
        let t = |range, rcs| Target { range, radial_velocity: 0.0, rcs, azimuth: 0.0 };
        assert!((reflection_amplitude(&t(100.0, 1.0), 100.0, 0.3).unwrap() - 0.3).abs() < 1e-15);
        let a1 = reflection_amplitude(&t(100.0, 1.0), 100.0, 1.0).unwrap();
        let a2 = reflection_amplitude(&t(200.0, 1.0), 100.0, 1.0).unwrap();
        assert!((a1 / a2 - 4.0).abs() < 1e-12);
        let a4 = reflection_amplitude(&t(100.0, 4.0), 100.0, 1.0).unwrap();
        assert!((a4 / a1 - 2.0).abs() < 1e-12);
        assert!(matches!(reflection_amplitude(&t(0.0, 1.0), 100.0, 1.0), Err(ChannelError::ZeroRange(_))));
    }

    #[test]
    fn beam_pattern_points() {
        let b = BeamConfig { beam_index: 10, sector_start: -32.0, sector_width: 64.0, beamwidth: 6.0 };
        let bore = b.boresight();
        assert!((bore - (-32.0 + 10.5)).abs() < 1e-12);
        assert!((beam_gain(&b, bore) - 1.0).abs() < 1e-15);
        assert_eq!(beam_gain(&b, bore + 6.0), 0.0);
        assert_eq!(beam_gain(&b, bore - 7.0), 0.0);
        // raised cosine at half width: (1 + cos(π/2)) / 2
        assert!((beam_gain(&b, bore + 3.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn beam_pattern_wraps_around_north() {
        let b = BeamConfig { beam_index: 0, sector_start: 359.0, sector_width: 64.0, beamwidth: 4.0 };
        // boresight at 359.5 ≡ -0.5 degrees
        assert!((beam_gain(&b, 0.5) - beam_gain(&b, 358.5)).abs() < 1e-12);
        assert!(beam_gain(&b, 0.5) > 0.5);
    }

    #[test]
    fn bitmap_gain_takes_best_beam() {
        let b = beam();
        let az = b.with_index(5).boresight();
        assert_eq!(bitmap_gain(&b, 1 << 5 | 1 << 40, az), 1.0);
        assert_eq!(bitmap_gain(&b, 1 << 40, az), 0.0);
    }

    #[test]
    fn beam_index_64_invalid() {
        assert!(beam().with_index(64).validate().is_err());
        assert!(beam().with_index(63).validate().is_ok());
    }

    #[test]
    fn empty_scene_is_silent() {
        let num = Numerology::nr_30khz(32, 8);
        let y = apply_channel(&qpsk(num, 1), &Scene::empty(0), &beam()).unwrap();
        assert!(y.is_all_zero());
    }

    #[test]
    fn near_zero_range_is_identity() {
        let num = Numerology::nr_30khz(32, 8);
        let x = qpsk(num, 1);
        let mut scene = Scene::empty(0);
        scene.targets.push(Target { range: 1e-9, radial_velocity: 0.0, rcs: 1.0, azimuth: beam().boresight() });
        scene.reference_range = 1e-9;
        let y = apply_channel(&x, &scene, &beam()).unwrap();
        for (a, b) in y.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn on_grid_phase_ramp() {
        let num = Numerology::nr_30khz(16, 4);
        let x = qpsk(num, 3);
        // τ·Δf·N = 8  ⇒  R = 8·c / (2·N·Δf)
        let range = 8.0 * SPEED_OF_LIGHT / (2.0 * 16.0 * num.subcarrier_spacing);
        let mut scene = Scene::empty(0);
        scene.targets.push(Target { range, radial_velocity: 0.0, rcs: 1.0, azimuth: beam().boresight() });
        scene.reference_range = 50.0;
        let a = reflection_amplitude(&scene.targets[0], 50.0, 1.0).unwrap();
        let y = apply_channel(&x, &scene, &beam()).unwrap();
        for m in 0..4 {
            for n in 0..16 {
                let ratio = y.get(n, m) / x.get(n, m);
                let expected = Complex64::from_polar(a, -2.0 * std::f64::consts::PI * n as f64 * 8.0 / 16.0);
                assert!((ratio - expected).norm() < 1e-12 * a.max(1.0), "({n},{m})");
            }
        }
    }

    #[test]
    fn beyond_unambiguous_range_rejected() {
        let num = Numerology::nr_30khz(16, 4);
        let mut scene = Scene::empty(0);
        scene.targets.push(Target { range: 6000.0, radial_velocity: 0.0, rcs: 1.0, azimuth: 0.0 });
        let err = apply_channel(&qpsk(num, 1), &scene, &beam()).unwrap_err();
        assert!(matches!(err, ChannelError::BeyondUnambiguousRange { .. }), "{err}");
    }

    #[test]
    fn zero_gain_target_is_bit_exact_noop() {
        let num = Numerology::nr_30khz(32, 8);
        let x = qpsk(num, 2);
        let b = beam();
        let visible = Target { range: 200.0, radial_velocity: 5.0, rcs: 1.0, azimuth: b.boresight() };
        let hidden = Target { range: 300.0, radial_velocity: -3.0, rcs: 10.0, azimuth: b.boresight() + 90.0 };
        let mut base = Scene::empty(11);
        base.noise_power = 1e-3;
        base.leakage_gain = 1e-3;
        base.targets.push(visible);
        let mut with_hidden = base.clone();
        with_hidden.targets.push(hidden);
        let y1 = apply_channel(&x, &base, &b).unwrap();
        let y2 = apply_channel(&x, &with_hidden, &b).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn noise_variance_matches() {
        let num = Numerology::nr_30khz(512, 256);
        let x = ResourceGrid::zeros(num);
        let mut scene = Scene::empty(99);
        scene.noise_power = 0.25;
        let y = apply_channel(&x, &scene, &beam()).unwrap();
        let n = y.as_slice().len() as f64;
        let mean: Complex64 = y.as_slice().iter().sum::<Complex64>() / n;
        let var = y.as_slice().iter().map(|z| (z - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
        assert!((var / 0.25 - 1.0).abs() < 0.02, "{var}");
    }
}
