//! Radar processing: channel estimation, range-Doppler periodogram and
//! CA-CFAR detection.
//!
//! Map axes: row `k` is range, `k·ΔR` from `range_origin`; column `l` is
//! Doppler, `(l − doppler_zero_bin)·Δv`. Positive radial velocity
//! (approaching target) lands above the zero bin.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerology::{resolutions, Numerology};
use crate::waveform::{ReMask, ResourceGrid};

/// Zero-padding factors accepted by [`range_doppler_map`].
pub const PAD_FACTORS: [usize; 4] = [1, 2, 4, 8];

/// TX symbols below this magnitude are not divided by.
pub const MIN_TX_MAGNITUDE: f64 = 1e-6;

/// Cells weaker than this fraction of the map maximum are treated as
/// numerical residue and never declared. −130 dB is far below any thermal
/// floor the simulator produces, so it only matters for noise-free maps.
pub const NUMERICAL_FLOOR: f64 = 1e-13;

#[derive(Debug, Error, PartialEq)]
pub enum ProcessingError {
    #[error("grid dimensions differ: expected {expected:?}, got {got:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("no known resource elements to estimate the channel from")]
    EmptyMask,
    #[error("pad_factor must be one of 1, 2, 4, 8, got {0}")]
    InvalidPadFactor(usize),
    #[error("p_fa must be in (0, 1), got {0}")]
    InvalidPfa(f64),
    #[error("CFAR window of {window} cells does not fit a {n_range}x{n_doppler} map")]
    WindowTooLarge { window: usize, n_range: usize, n_doppler: usize },
    #[error("CFAR needs at least one training cell")]
    NoTrainingCells,
    #[error("bin ({range_bin}, {doppler_bin}) outside a {n_range}x{n_doppler} map")]
    BinOutOfBounds { range_bin: usize, doppler_bin: usize, n_range: usize, n_doppler: usize },
    #[error("export window {want_range}x{want_doppler} exceeds map {n_range}x{n_doppler}")]
    InvalidWindow { want_range: usize, want_doppler: usize, n_range: usize, n_doppler: usize },
    #[error("malformed map bytes: {0}")]
    Malformed(String),
}

/// Channel estimate Ĥ with the mask of REs it was computed on.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelGrid {
    data: ResourceGrid,
    known_mask: ReMask,
    dropped: usize,
}

impl ChannelGrid {
    /// Wraps an estimate, zeroing everything outside `known_mask`.
    pub fn new(mut data: ResourceGrid, known_mask: ReMask) -> Result<Self, ProcessingError> {
        check_dims(&data, known_mask.dims())?;
        for (h, &k) in data.as_mut_slice().iter_mut().zip(known_mask.as_slice()) {
            if !k {
                *h = Complex64::new(0.0, 0.0);
            }
        }
        Ok(Self { data, known_mask, dropped: 0 })
    }

    pub fn data(&self) -> &ResourceGrid {
        &self.data
    }

    pub fn known_mask(&self) -> &ReMask {
        &self.known_mask
    }

    /// Masked REs removed because the TX symbol was (near) zero.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn numerology(&self) -> &Numerology {
        self.data.numerology()
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self { data: self.data.scaled(factor), ..self.clone() }
    }
}

fn check_dims(grid: &ResourceGrid, dims: (usize, usize)) -> Result<(), ProcessingError> {
    let got = (grid.n_subcarriers(), grid.n_symbols());
    if got != dims {
        return Err(ProcessingError::DimensionMismatch { expected: dims, got });
    }
    Ok(())
}

/// Ĥ = Y/X on `known_mask`, zero elsewhere.
pub fn estimate_channel(
    rx: &ResourceGrid,
    tx: &ResourceGrid,
    known_mask: &ReMask,
) -> Result<ChannelGrid, ProcessingError> {
    let dims = (tx.n_subcarriers(), tx.n_symbols());
    check_dims(rx, dims)?;
    if known_mask.dims() != dims {
        return Err(ProcessingError::DimensionMismatch { expected: dims, got: known_mask.dims() });
    }
    let mut mask = known_mask.clone();
    let mut data = ResourceGrid::zeros(*tx.numerology());
    let mut dropped = 0;
    for (i, h) in data.as_mut_slice().iter_mut().enumerate() {
        if !mask.as_slice()[i] {
            continue;
        }
        let x = tx.as_slice()[i];
        if x.norm() < MIN_TX_MAGNITUDE {
            mask.as_mut_slice()[i] = false;
            dropped += 1;
            continue;
        }
        *h = rx.as_slice()[i] / x;
    }
    if dropped > 0 {
        log::warn!("channel estimate: {dropped} masked REs had a near-zero TX symbol");
    }
    Ok(ChannelGrid { data, known_mask: mask, dropped })
}

/// Range-Doppler power map.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeDopplerMap {
    /// Row-major `[range][doppler]`.
    power: Vec<f64>,
    n_range: usize,
    n_doppler: usize,
    pad_factor: usize,
    doppler_zero_bin: usize,
    range_spacing: f64,
    velocity_spacing: f64,
    range_origin: f64,
    noise_floor: f64,
}

/// Bytes of the serialized map header.
pub const MAP_HEADER_BYTES: usize = 4 * 4 + 4 * 8;

impl RangeDopplerMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.n_range, self.n_doppler)
    }

    pub fn n_range(&self) -> usize {
        self.n_range
    }

    pub fn n_doppler(&self) -> usize {
        self.n_doppler
    }

    pub fn pad_factor(&self) -> usize {
        self.pad_factor
    }

    pub fn doppler_zero_bin(&self) -> usize {
        self.doppler_zero_bin
    }

    /// m per range bin.
    pub fn range_spacing(&self) -> f64 {
        self.range_spacing
    }

    /// m/s per Doppler bin.
    pub fn velocity_spacing(&self) -> f64 {
        self.velocity_spacing
    }

    /// Median power of the full (uncropped) map.
    pub fn noise_floor(&self) -> f64 {
        self.noise_floor
    }

    pub fn power(&self, range_bin: usize, doppler_bin: usize) -> f64 {
        self.power[range_bin * self.n_doppler + doppler_bin]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.power
    }

    pub fn range_of(&self, range_bin: usize) -> f64 {
        self.range_origin + range_bin as f64 * self.range_spacing
    }

    pub fn velocity_of(&self, doppler_bin: usize) -> f64 {
        (doppler_bin as f64 - self.doppler_zero_bin as f64) * self.velocity_spacing
    }

    /// Nearest bin to a physical point, if it falls on the map.
    pub fn bin_of(&self, range: f64, velocity: f64) -> Option<(usize, usize)> {
        let k = ((range - self.range_origin) / self.range_spacing).round();
        let l = (velocity / self.velocity_spacing).round() + self.doppler_zero_bin as f64;
        if k < 0.0 || l < 0.0 || k >= self.n_range as f64 || l >= self.n_doppler as f64 {
            return None;
        }
        Some((k as usize, l as usize))
    }

    pub fn total_power(&self) -> f64 {
        self.power.iter().sum()
    }

    pub fn max_power(&self) -> f64 {
        self.power.iter().copied().fold(0.0, f64::max)
    }

    /// Keeps the first `n_range` range bins and the `n_doppler` bins centred
    /// on zero velocity. The noise floor of the full map is carried over.
    pub fn crop(&self, n_range: usize, n_doppler: usize) -> Result<Self, ProcessingError> {
        let bad = || ProcessingError::InvalidWindow {
            want_range: n_range,
            want_doppler: n_doppler,
            n_range: self.n_range,
            n_doppler: self.n_doppler,
        };
        if n_range == 0 || n_doppler == 0 || n_range > self.n_range || n_doppler > self.n_doppler {
            return Err(bad());
        }
        let zero = n_doppler / 2;
        let start = self.doppler_zero_bin.checked_sub(zero).ok_or_else(bad)?;
        if start + n_doppler > self.n_doppler {
            return Err(bad());
        }
        let mut power = Vec::with_capacity(n_range * n_doppler);
        for k in 0..n_range {
            let row = &self.power[k * self.n_doppler..(k + 1) * self.n_doppler];
            power.extend_from_slice(&row[start..start + n_doppler]);
        }
        Ok(Self { power, n_range, n_doppler, doppler_zero_bin: zero, ..*self })
    }

    /// Little-endian wire layout: `u32 n_range, n_doppler, pad_factor,
    /// doppler_zero_bin`, `f64 range_spacing, velocity_spacing, range_origin,
    /// noise_floor`, then row-major `f32` power.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::serialized_len(self.n_range, self.n_doppler));
        for v in [self.n_range, self.n_doppler, self.pad_factor, self.doppler_zero_bin] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in [self.range_spacing, self.velocity_spacing, self.range_origin, self.noise_floor] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &p in &self.power {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn serialized_len(n_range: usize, n_doppler: usize) -> usize {
        MAP_HEADER_BYTES + 4 * n_range * n_doppler
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProcessingError> {
        if bytes.len() < MAP_HEADER_BYTES {
            return Err(ProcessingError::Malformed(format!("{} bytes is shorter than the header", bytes.len())));
        }
        let u = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let f = |i: usize| f64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap());
        let (n_range, n_doppler, pad_factor, doppler_zero_bin) = (u(0), u(1), u(2), u(3));
        let expected = n_range
            .checked_mul(n_doppler)
            .and_then(|c| c.checked_mul(4))
            .and_then(|c| c.checked_add(MAP_HEADER_BYTES));
        if expected != Some(bytes.len()) {
            return Err(ProcessingError::Malformed(format!(
                "{n_range}x{n_doppler} map needs {expected:?} bytes, got {}",
                bytes.len()
            )));
        }
        if n_range == 0 || n_doppler == 0 || doppler_zero_bin >= n_doppler {
            return Err(ProcessingError::Malformed("inconsistent dimensions".into()));
        }
        let (range_spacing, velocity_spacing, range_origin, noise_floor) = (f(0), f(1), f(2), f(3));
        if !(range_spacing > 0.0 && velocity_spacing > 0.0) {
            return Err(ProcessingError::Malformed("axis spacing must be positive".into()));
        }
        let power: Vec<f64> = bytes[MAP_HEADER_BYTES..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if power.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ProcessingError::Malformed("power values must be finite and non-negative".into()));
        }
        Ok(Self {
            power,
            n_range,
            n_doppler,
            pad_factor,
            doppler_zero_bin,
            range_spacing,
            velocity_spacing,
            range_origin,
            noise_floor,
        })
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Zero-padded 2D periodogram of Ĥ:
/// `|Σ_n Σ_m Ĥ[n,m]·e^{+j2πnk/(pN)}·e^{−j2πml/(pM)}|² / (N·M)`,
/// Doppler axis shifted so that zero velocity sits at bin `pM/2`.
pub fn range_doppler_map(channel: &ChannelGrid, pad_factor: usize) -> Result<RangeDopplerMap, ProcessingError> {
    if !PAD_FACTORS.contains(&pad_factor) {
        return Err(ProcessingError::InvalidPadFactor(pad_factor));
    }
    if channel.known_mask.count() == 0 {
        return Err(ProcessingError::EmptyMask);
    }
    let num = *channel.numerology();
    let (n_sc, n_sym) = (num.n_subcarriers, num.n_symbols);
    let (n_range, n_doppler) = (pad_factor * n_sc, pad_factor * n_sym);

    let mut planner = FftPlanner::<f64>::new();
    let range_ifft = planner.plan_fft_inverse(n_range);
    let doppler_fft = planner.plan_fft_forward(n_doppler);

    // Range transform per OFDM symbol, stored as [symbol][range].
    let mut cols = vec![Complex64::new(0.0, 0.0); n_sym * n_range];
    for m in 0..n_sym {
        let col = &mut cols[m * n_range..(m + 1) * n_range];
        col[..n_sc].copy_from_slice(channel.data.column(m));
        range_ifft.process(col);
    }

    let scale = 1.0 / (n_sc * n_sym) as f64;
    let zero = n_doppler / 2;
    let mut power = vec![0.0; n_range * n_doppler];
    let mut row = vec![Complex64::new(0.0, 0.0); n_doppler];
    for k in 0..n_range {
        row.fill(Complex64::new(0.0, 0.0));
        for m in 0..n_sym {
            row[m] = cols[m * n_range + k];
        }
        doppler_fft.process(&mut row);
        let out = &mut power[k * n_doppler..(k + 1) * n_doppler];
        for (l, z) in row.iter().enumerate() {
            out[(l + zero) % n_doppler] = z.norm_sqr() * scale;
        }
    }

    let res = resolutions(&num, pad_factor);
    let noise_floor = median(&power);
    Ok(RangeDopplerMap {
        power,
        n_range,
        n_doppler,
        pad_factor,
        doppler_zero_bin: zero,
        range_spacing: res.range,
        velocity_spacing: res.velocity,
        range_origin: 0.0,
        noise_floor,
    })
}

/// CA-CFAR window: square, `n_guard` guard cells and `n_training` training
/// cells on each side in both dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CfarConfig {
    pub p_fa: f64,
    pub n_training: usize,
    pub n_guard: usize,
}

impl Default for CfarConfig {
    fn default() -> Self {
        Self { p_fa: 1e-4, n_training: 4, n_guard: 2 }
    }
}

impl CfarConfig {
    pub fn validate(&self) -> Result<(), ProcessingError> {
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(ProcessingError::InvalidPfa(self.p_fa));
        }
        if self.n_training == 0 {
            return Err(ProcessingError::NoTrainingCells);
        }
        Ok(())
    }

    /// Side length of the full window.
    pub fn window(&self) -> usize {
        2 * (self.n_guard + self.n_training) + 1
    }

    pub fn n_training_cells(&self) -> usize {
        let outer = self.window();
        let inner = 2 * self.n_guard + 1;
        outer * outer - inner * inner
    }

    pub fn alpha(&self) -> f64 {
        cfar_alpha(self.p_fa, self.n_training_cells())
    }
}

/// α = N_t·(p_fa^(−1/N_t) − 1).
pub fn cfar_alpha(p_fa: f64, n_training_cells: usize) -> f64 {
    let nt = n_training_cells as f64;
    nt * (p_fa.powf(-1.0 / nt) - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range_bin: usize,
    pub doppler_bin: usize,
    /// m
    pub est_range: f64,
    /// m/s
    pub est_velocity: f64,
    /// dB over the map noise floor
    #[serde(with = "crate::serde_db")]
    pub peak_snr: f64,
}

/// Sum over the `[lo, hi]` offsets (inclusive, may be negative) around every
/// index of a cyclic sequence read with `stride`.
fn cyclic_offsets(n: usize, lo: isize, hi: isize) -> Vec<usize> {
    (lo..=hi).map(|d| d.rem_euclid(n as isize) as usize).collect()
}

/// Per-cell sum of the training ring. Every term is summed directly, never
/// obtained by subtracting an inner box, so weak rings next to strong peaks
/// keep full relative precision.
fn training_sums(map: &RangeDopplerMap, guard: usize, training: usize) -> Vec<f64> {
    let (nr, nd) = map.dims();
    let outer = (guard + training) as isize;
    let g = guard as isize;
    let p = &map.power;

    // Horizontal (Doppler) sums over the full width and over the two side bands.
    let full = cyclic_offsets(nd, -outer, outer);
    let sides: Vec<isize> = (-outer..-g).chain(g + 1..=outer).collect();
    let mut h_full = vec![0.0; nr * nd];
    let mut h_sides = vec![0.0; nr * nd];
    for k in 0..nr {
        let row = &p[k * nd..(k + 1) * nd];
        for l in 0..nd {
            h_full[k * nd + l] = full.iter().map(|&d| row[(l + d) % nd]).sum();
            h_sides[k * nd + l] =
                sides.iter().map(|&d| row[(l as isize + d).rem_euclid(nd as isize) as usize]).sum();
        }
    }

    // Vertical (range): full-width bands above/below the guard, side bands beside it.
    let bands: Vec<usize> = (-outer..-g)
        .chain(g + 1..=outer)
        .map(|d| d.rem_euclid(nr as isize) as usize)
        .collect();
    let middle = cyclic_offsets(nr, -g, g);
    let mut out = vec![0.0; nr * nd];
    for k in 0..nr {
        for l in 0..nd {
            let a: f64 = bands.iter().map(|&d| h_full[((k + d) % nr) * nd + l]).sum();
            let b: f64 = middle.iter().map(|&d| h_sides[((k + d) % nr) * nd + l]).sum();
            out[k * nd + l] = a + b;
        }
    }
    out
}

fn is_local_max(map: &RangeDopplerMap, k: usize, l: usize) -> bool {
    let (nr, nd) = map.dims();
    let here = map.power(k, l);
    let idx = k * nd + l;
    for dk in [nr - 1, 0, 1] {
        for dl in [nd - 1, 0, 1] {
            if dk == 0 && dl == 0 {
                continue;
            }
            let (kk, ll) = ((k + dk) % nr, (l + dl) % nd);
            let other = map.power(kk, ll);
            if other > here || (other == here && kk * nd + ll < idx) {
                return false;
            }
        }
    }
    true
}

/// Cell-averaging CFAR with toroidal wrap; only 8-neighbourhood local maxima
/// are reported, in row-major order.
pub fn ca_cfar(map: &RangeDopplerMap, config: &CfarConfig) -> Result<Vec<Detection>, ProcessingError> {
    config.validate()?;
    let (nr, nd) = map.dims();
    let window = config.window();
    if window > nr || window > nd {
        return Err(ProcessingError::WindowTooLarge { window, n_range: nr, n_doppler: nd });
    }
    let max = map.max_power();
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let floor = max * NUMERICAL_FLOOR;
    let nt = config.n_training_cells() as f64;
    let alpha = config.alpha();
    let sums = training_sums(map, config.n_guard, config.n_training);

    let mut out = Vec::new();
    for k in 0..nr {
        for l in 0..nd {
            let p = map.power(k, l);
            if p <= floor || p <= alpha * sums[k * nd + l] / nt {
                continue;
            }
            if !is_local_max(map, k, l) {
                continue;
            }
            out.push(Detection {
                range_bin: k,
                doppler_bin: l,
                est_range: map.range_of(k),
                est_velocity: map.velocity_of(l),
                peak_snr: snr_db(p, map.noise_floor),
            });
        }
    }
    Ok(out)
}

/// 10·log10(power/noise_floor), +∞ over a zero floor.
pub fn snr_db(power: f64, noise_floor: f64) -> f64 {
    if noise_floor > 0.0 {
        10.0 * (power / noise_floor).log10()
    } else if power > 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// Physical coordinates of a bin, read from the map axes.
pub fn bins_to_physical(
    range_bin: usize,
    doppler_bin: usize,
    map: &RangeDopplerMap,
) -> Result<(f64, f64), ProcessingError> {
    let (nr, nd) = map.dims();
    if range_bin >= nr || doppler_bin >= nd {
        return Err(ProcessingError::BinOutOfBounds { range_bin, doppler_bin, n_range: nr, n_doppler: nd });
    }
    Ok((map.range_of(range_bin), map.velocity_of(doppler_bin)))
}
