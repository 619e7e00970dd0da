//! Downlink OFDM resource grids under the three signal plans the sniffer can
//! sense with: stochastic user data, communication reference signals on a
//! regular lattice, and dedicated Zadoff-Chu sensing pilots.
//!
//! Grids are stored symbol-major: RE `(n, m)` (subcarrier `n`, OFDM symbol
//! `m`) lives at index `m * n_subcarriers + n`, so each OFDM symbol is one
//! contiguous column.
//!
//! Payload constellations are Gray-mapped square QAM with unit average power:
//!
//! | order | per-axis levels | scale          |
//! |-------|-----------------|----------------|
//! | 4     | ±1              | 1/√2           |
//! | 16    | ±1, ±3          | 1/√10          |
//! | 64    | ±1 … ±7         | 1/√42          |
//! | 256   | ±1 … ±15        | 1/√170         |
//!
//! After generation every grid is rescaled so that the mean power over its
//! occupied REs is exactly one (random high-order QAM draws only average to
//! one in expectation).

use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerology::{Numerology, NumerologyError};
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum WaveformError {
    #[error(transparent)]
    Numerology(#[from] NumerologyError),
    #[error("reference density must be in (0, 1], got {0}")]
    InvalidDensity(f64),
    #[error("root {root} is not coprime with sequence length {length}")]
    NonCoprimeRoot { root: u64, length: usize },
    #[error("Zadoff-Chu length must be at least 1")]
    EmptySequence,
    #[error("unsupported modulation order {0} (expected 4, 16, 64 or 256)")]
    UnsupportedModulation(u32),
    #[error("plan is {plan_n}x{plan_m} but numerology is {num_n}x{num_m}")]
    DimensionMismatch { plan_n: usize, plan_m: usize, num_n: usize, num_m: usize },
    #[error("grid is all zero")]
    AllZero,
}

/// Which waveform the communication RU transmits during an occasion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalType {
    StochasticData,
    ReferenceOnly,
    Pilot,
}

impl SignalType {
    pub const ALL: [SignalType; 3] =
        [SignalType::StochasticData, SignalType::ReferenceOnly, SignalType::Pilot];

    pub fn as_str(self) -> &'static str {
        match self {
            SignalType::StochasticData => "stochastic_data",
            SignalType::ReferenceOnly => "reference_only",
            SignalType::Pilot => "pilot",
        }
    }

    /// True when every transmitted symbol is predictable by a third party.
    pub fn is_deterministic(self) -> bool {
        !matches!(self, SignalType::StochasticData)
    }
}

/// Content class of one resource element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReClass {
    Payload,
    Reference,
    Pilot,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Modulation {
    Qpsk,
    Qam16,
    Qam64,
    Qam256,
}

impl Modulation {
    pub fn order(self) -> u32 {
        match self {
            Modulation::Qpsk => 4,
            Modulation::Qam16 => 16,
            Modulation::Qam64 => 64,
            Modulation::Qam256 => 256,
        }
    }

    fn bits_per_axis(self) -> u32 {
        self.order().trailing_zeros() / 2
    }

    /// 1/sqrt(E|s|²) of the unscaled odd-integer constellation.
    pub fn scale(self) -> f64 {
        let m = self.order() as f64;
        (1.5 / (m - 1.0)).sqrt()
    }

    /// Gray-mapped symbol for `bits` (I bits in the high half).
    pub fn map(self, bits: u32) -> Complex64 {
        let b = self.bits_per_axis();
        let mask = (1u32 << b) - 1;
        let levels = 1i32 << b;
        let axis = |gray: u32| {
            let idx = gray_decode(gray & mask) as i32;
            (2 * idx - (levels - 1)) as f64
        };
        let i = axis(bits >> b);
        let q = axis(bits);
        Complex64::new(i, q) * self.scale()
    }
}

impl TryFrom<u32> for Modulation {
    type Error = WaveformError;

    fn try_from(order: u32) -> Result<Self, Self::Error> {
        match order {
            4 => Ok(Modulation::Qpsk),
            16 => Ok(Modulation::Qam16),
            64 => Ok(Modulation::Qam64),
            256 => Ok(Modulation::Qam256),
            other => Err(WaveformError::UnsupportedModulation(other)),
        }
    }
}

impl From<Modulation> for u32 {
    fn from(m: Modulation) -> u32 {
        m.order()
    }
}

fn gray_decode(mut g: u32) -> u32 {
    let mut n = g;
    while g > 0 {
        g >>= 1;
        n ^= g;
    }
    n
}

/// Boolean mask over the resource elements of an `N × M` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReMask {
    bits: Vec<bool>,
    n_subcarriers: usize,
    n_symbols: usize,
}

impl ReMask {
    pub fn new(n_subcarriers: usize, n_symbols: usize, value: bool) -> Self {
        Self { bits: vec![value; n_subcarriers * n_symbols], n_subcarriers, n_symbols }
    }

    pub fn from_fn(n_subcarriers: usize, n_symbols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(n_subcarriers * n_symbols);
        for m in 0..n_symbols {
            for n in 0..n_subcarriers {
                bits.push(f(n, m));
            }
        }
        Self { bits, n_subcarriers, n_symbols }
    }

    pub fn get(&self, n: usize, m: usize) -> bool {
        self.bits[m * self.n_subcarriers + n]
    }

    pub fn set(&mut self, n: usize, m: usize, value: bool) {
        self.bits[m * self.n_subcarriers + n] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_subcarriers, self.n_symbols)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn union(&self, other: &ReMask) -> ReMask {
        assert_eq!(self.dims(), other.dims());
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect();
        ReMask { bits, ..*self }
    }

    pub fn intersect(&self, other: &ReMask) -> ReMask {
        assert_eq!(self.dims(), other.dims());
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect();
        ReMask { bits, ..*self }
    }

    pub fn is_subset_of(&self, other: &ReMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Per-RE content assignment for one sensing occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPlan {
    pub signal_type: SignalType,
    classes: Vec<ReClass>,
    n_subcarriers: usize,
    n_symbols: usize,
    pub modulation: Modulation,
    pub pilot_root: u64,
    pub payload_seed: u64,
    /// Lattice period D of the reference REs (density 1/D), if any.
    pub reference_period: Option<usize>,
}

impl SignalPlan {
    pub fn class(&self, n: usize, m: usize) -> ReClass {
        self.classes[m * self.n_subcarriers + n]
    }

    pub fn classes(&self) -> &[ReClass] {
        &self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_subcarriers, self.n_symbols)
    }

    pub fn count(&self, class: ReClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    pub fn mask_of(&self, class: ReClass) -> ReMask {
        ReMask {
            bits: self.classes.iter().map(|&c| c == class).collect(),
            n_subcarriers: self.n_subcarriers,
            n_symbols: self.n_symbols,
        }
    }

    pub fn occupied_mask(&self) -> ReMask {
        ReMask {
            bits: self.classes.iter().map(|&c| c != ReClass::Empty).collect(),
            n_subcarriers: self.n_subcarriers,
            n_symbols: self.n_symbols,
        }
    }

    pub fn with_modulation(mut self, modulation: Modulation) -> Self {
        self.modulation = modulation;
        self
    }

    pub fn with_pilot_root(mut self, root: u64) -> Result<Self, WaveformError> {
        check_coprime(root, self.n_subcarriers)?;
        self.pilot_root = root;
        Ok(self)
    }
}

/// Default density of reference REs ("a marginal part" of the grid).
pub const DEFAULT_REFERENCE_DENSITY: f64 = 1.0 / 12.0;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn check_coprime(root: u64, length: usize) -> Result<(), WaveformError> {
    if gcd(root, length as u64) != 1 {
        return Err(WaveformError::NonCoprimeRoot { root, length });
    }
    Ok(())
}

/// Lattice period for a density, i.e. `round(1/density)`.
pub fn reference_period(density: f64) -> Result<usize, WaveformError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(WaveformError::InvalidDensity(density));
    }
    Ok((1.0 / density).round().max(1.0) as usize)
}

/// Staggered diagonal lattice: RE `(n, m)` is a reference RE iff
/// `(n + m) mod D == 0`.
fn on_lattice(n: usize, m: usize, period: usize) -> bool {
    (n + m).is_multiple_of(period)
}

/// Assigns a content class to every RE.
///
/// `reference_density` is required in (0, 1] for [`SignalType::ReferenceOnly`].
/// For [`SignalType::StochasticData`] a positive density embeds a reference
/// lattice among the payload (DMRS-like); zero means payload everywhere.
/// [`SignalType::Pilot`] ignores it.
pub fn build_signal_plan(
    numerology: &Numerology,
    signal_type: SignalType,
    reference_density: f64,
    seed: u64,
) -> Result<SignalPlan, WaveformError> {
    numerology.validate()?;
    let (n_sc, n_sym) = (numerology.n_subcarriers, numerology.n_symbols);
    let period = match signal_type {
        SignalType::ReferenceOnly => Some(reference_period(reference_density)?),
        SignalType::StochasticData if reference_density == 0.0 => None,
        SignalType::StochasticData => Some(reference_period(reference_density)?),
        SignalType::Pilot => None,
    };
    let mut classes = Vec::with_capacity(n_sc * n_sym);
    for m in 0..n_sym {
        for n in 0..n_sc {
            let lattice = period.is_some_and(|d| on_lattice(n, m, d));
            classes.push(match (signal_type, lattice) {
                (SignalType::Pilot, _) => ReClass::Pilot,
                (_, true) => ReClass::Reference,
                (SignalType::ReferenceOnly, false) => ReClass::Empty,
                (SignalType::StochasticData, false) => ReClass::Payload,
            });
        }
    }
    Ok(SignalPlan {
        signal_type,
        classes,
        n_subcarriers: n_sc,
        n_symbols: n_sym,
        modulation: Modulation::Qpsk,
        pilot_root: 1,
        payload_seed: seed,
        reference_period: period,
    })
}

/// Complex frequency-domain symbols of one sensing occasion.
#[derive(Debug, Clone, PartialEq)]
pub struct ResourceGrid {
    data: Vec<Complex64>,
    numerology: Numerology,
}

impl ResourceGrid {
    pub fn zeros(numerology: Numerology) -> Self {
        Self { data: vec![Complex64::new(0.0, 0.0); numerology.n_res()], numerology }
    }

    /// Wraps symbol-major data; panics if the length does not match.
    pub fn from_vec(numerology: Numerology, data: Vec<Complex64>) -> Self {
        assert_eq!(data.len(), numerology.n_res(), "grid data does not match numerology");
        Self { data, numerology }
    }

    pub fn from_fn(numerology: Numerology, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(numerology.n_res());
        for m in 0..numerology.n_symbols {
            for n in 0..numerology.n_subcarriers {
                data.push(f(n, m));
            }
        }
        Self { data, numerology }
    }

    pub fn numerology(&self) -> &Numerology {
        &self.numerology
    }

    pub fn n_subcarriers(&self) -> usize {
        self.numerology.n_subcarriers
    }

    pub fn n_symbols(&self) -> usize {
        self.numerology.n_symbols
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.data[m * self.numerology.n_subcarriers + n]
    }

    pub fn set(&mut self, n: usize, m: usize, value: Complex64) {
        let idx = m * self.numerology.n_subcarriers + n;
        self.data[idx] = value;
    }

    pub fn column(&self, m: usize) -> &[Complex64] {
        let n = self.numerology.n_subcarriers;
        &self.data[m * n..(m + 1) * n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|z| z.re == 0.0 && z.im == 0.0)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { data: self.data.iter().map(|z| z * factor).collect(), numerology: self.numerology }
    }

    /// Element-wise sum; panics on mismatched dimensions.
    pub fn add_assign(&mut self, other: &ResourceGrid) {
        assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn mean_power_over(&self, mask: &ReMask) -> f64 {
        let (sum, count) = self
            .data
            .iter()
            .zip(mask.as_slice())
            .filter(|(_, &k)| k)
            .fold((0.0, 0usize), |(s, c), (z, _)| (s + z.norm_sqr(), c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Debug dump: one row per subcarrier, `re,im` pairs per symbol.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.n_symbols())
            .flat_map(|m| [format!("re_{m}"), format!("im_{m}")])
            .collect();
        w.write_record(&header)?;
        for n in 0..self.n_subcarriers() {
            let row: Vec<String> = (0..self.n_symbols())
                .flat_map(|m| {
                    let z = self.get(n, m);
                    [z.re.to_string(), z.im.to_string()]
                })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Initialization of the scrambling generator behind the reference pattern.
pub const REFERENCE_SCRAMBLING_INIT: u32 = 0x1D3A_5F21 & 0x7FFF_FFFF;

/// Length-31 Gold sequence `c(n)` (the NR pseudo-random generator with
/// `N_c = 1600`), `len` bits.
fn gold_sequence(c_init: u32, len: usize) -> Vec<u8> {
    const NC: usize = 1600;
    let total = NC + len + 31;
    let mut x1 = vec![0u8; total];
    let mut x2 = vec![0u8; total];
    x1[0] = 1;
    for (i, bit) in x2.iter_mut().take(31).enumerate() {
        *bit = ((c_init >> i) & 1) as u8;
    }
    for n in 0..total - 31 {
        x1[n + 31] = (x1[n + 3] + x1[n]) % 2;
        x2[n + 31] = (x2[n + 3] + x2[n + 2] + x2[n + 1] + x2[n]) % 2;
    }
    (0..len).map(|n| (x1[n + NC] + x2[n + NC]) % 2).collect()
}

/// The fixed QPSK reference pattern, indexed by linear RE index.
pub fn reference_pattern(n_res: usize) -> Vec<Complex64> {
    let c = gold_sequence(REFERENCE_SCRAMBLING_INIT, 2 * n_res);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    (0..n_res)
        .map(|i| {
            Complex64::new(s * (1.0 - 2.0 * c[2 * i] as f64), s * (1.0 - 2.0 * c[2 * i + 1] as f64))
        })
        .collect()
}

/// Zadoff-Chu sequence: `exp(-jπ·u·k·(k+1)/L)` for odd `L`,
/// `exp(-jπ·u·k²/L)` for even `L`.
pub fn zadoff_chu(root: u64, length: usize) -> Result<Vec<Complex64>, WaveformError> {
    if length == 0 {
        return Err(WaveformError::EmptySequence);
    }
    check_coprime(root, length)?;
    let l = length as u128;
    let u = root as u128 % (2 * l);
    let odd = length % 2 == 1;
    Ok((0..length as u128)
        .map(|k| {
            let q = if odd { k * (k + 1) } else { k * k };
            // exact phase index modulo 2L, then angle -π·idx/L
            let idx = (u * (q % (2 * l))) % (2 * l);
            let angle = -std::f64::consts::PI * idx as f64 / length as f64;
            Complex64::from_polar(1.0, angle)
        })
        .collect())
}

/// Realizes a plan as symbols. Identical plans give bit-identical grids.
pub fn generate_grid(plan: &SignalPlan, numerology: &Numerology) -> Result<ResourceGrid, WaveformError> {
    let (n_sc, n_sym) = plan.dims();
    if n_sc != numerology.n_subcarriers || n_sym != numerology.n_symbols {
        return Err(WaveformError::DimensionMismatch {
            plan_n: n_sc,
            plan_m: n_sym,
            num_n: numerology.n_subcarriers,
            num_m: numerology.n_symbols,
        });
    }
    let mut grid = ResourceGrid::zeros(*numerology);
    let has = |class| plan.classes.contains(&class);
    let reference = if has(ReClass::Reference) { reference_pattern(numerology.n_res()) } else { vec![] };
    let pilot = if has(ReClass::Pilot) { zadoff_chu(plan.pilot_root, n_sc)? } else { vec![] };
    let mut payload_rng = rng::rng_from(plan.payload_seed);
    let bits = 2 * plan.modulation.bits_per_axis();

    for (idx, (class, out)) in plan.classes.iter().zip(grid.data.iter_mut()).enumerate() {
        *out = match class {
            ReClass::Payload => plan.modulation.map(payload_rng.random_range(0..1u32 << bits)),
            ReClass::Reference => reference[idx],
            ReClass::Pilot => pilot[idx % n_sc],
            ReClass::Empty => Complex64::new(0.0, 0.0),
        };
    }

    let occupied = plan.occupied_mask();
    let power = grid.mean_power_over(&occupied);
    if power > 0.0 && (power - 1.0).abs() > 1e-12 {
        let k = 1.0 / power.sqrt();
        for z in grid.data.iter_mut() {
            *z *= k;
        }
    }
    Ok(grid)
}

/// Oversampling of the zero-padded IDFT used for PAPR.
pub const PAPR_OVERSAMPLING: usize = 4;

/// Peak-to-average power ratio (dB) of the time-domain signal, each OFDM
/// symbol converted with a 4× zero-padded inverse DFT.
pub fn papr(grid: &ResourceGrid) -> Result<f64, WaveformError> {
    if grid.is_all_zero() {
        return Err(WaveformError::AllZero);
    }
    let n = grid.n_subcarriers();
    let len = n * PAPR_OVERSAMPLING;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(len);
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    let mut peak = 0.0f64;
    let mut sum = 0.0;
    for m in 0..grid.n_symbols() {
        buf.fill(Complex64::new(0.0, 0.0));
        buf[..n].copy_from_slice(grid.column(m));
        ifft.process(&mut buf);
        for z in &buf {
            let p = z.norm_sqr();
            peak = peak.max(p);
            sum += p;
        }
    }
    let mean = sum / (len * grid.n_symbols()) as f64;
    Ok(10.0 * (peak / mean).log10())
}
