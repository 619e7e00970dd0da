//! Block-floating-point IQ compression.
//!
//! REs are taken in symbol-major order and cut into blocks of `block_size`;
//! the last block may be short. Each block shares one exponent `e`, the
//! smallest with `round(|c|/2^e) ≤ 2^(b−1) − 1` for every real and imaginary
//! component `c`. Blocks whose mantissas are all zero carry `i8::MIN`, which
//! makes `compress ∘ decompress` a fixed point.

use num_complex::Complex64;

use super::FronthaulError;
use crate::numerology::Numerology;
use crate::waveform::ResourceGrid;

/// Exponent field width on the wire.
pub const EXPONENT_BITS: u64 = 8;
pub const MAX_MANTISSA_BITS: u8 = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BfpBlock {
    pub exponent: i8,
    /// `(re, im)` mantissas, each within `±(2^(b−1) − 1)`.
    pub mantissas: Vec<(i16, i16)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressedIQ {
    blocks: Vec<BfpBlock>,
    block_size: usize,
    mantissa_bits: u8,
    numerology: Numerology,
}

impl CompressedIQ {
    /// Assembles a stream from parts, e.g. after transport. Shape is checked
    /// by [`decompress_bfp`].
    pub fn from_parts(blocks: Vec<BfpBlock>, block_size: usize, mantissa_bits: u8, numerology: Numerology) -> Self {
        Self { blocks, block_size, mantissa_bits, numerology }
    }

    pub fn blocks(&self) -> &[BfpBlock] {
        &self.blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn mantissa_bits(&self) -> u8 {
        self.mantissa_bits
    }

    pub fn numerology(&self) -> &Numerology {
        &self.numerology
    }

    /// Wire size, counting the short tail block as a full one.
    pub fn bits(&self) -> u64 {
        compressed_bits(self.blocks.len(), self.block_size, self.mantissa_bits)
    }
}

/// `blocks · (8 + block_size · 2 · mantissa_bits)`.
pub fn compressed_bits(n_blocks: usize, block_size: usize, mantissa_bits: u8) -> u64 {
    n_blocks as u64 * (EXPONENT_BITS + block_size as u64 * 2 * mantissa_bits as u64)
}

pub fn n_blocks(n_res: usize, block_size: usize) -> usize {
    n_res.div_ceil(block_size)
}

fn max_mantissa(mantissa_bits: u8) -> i64 {
    (1i64 << (mantissa_bits - 1)) - 1
}

fn check_params(mantissa_bits: u8, block_size: usize) -> Result<(), FronthaulError> {
    if !(1..=MAX_MANTISSA_BITS).contains(&mantissa_bits) {
        return Err(FronthaulError::InvalidMantissaBits(mantissa_bits));
    }
    if block_size == 0 {
        return Err(FronthaulError::InvalidBlockSize(block_size));
    }
    Ok(())
}

/// Smallest exponent at which `amax` rounds into the mantissa range.
fn block_exponent(amax: f64, limit: i64) -> Result<i32, FronthaulError> {
    let bound = limit as f64 + 0.5;
    let mut e = (amax / bound).log2().floor() as i32 + 1;
    // log2 can be off by one ulp near powers of two.
    while e > i8::MIN as i32 && (amax * 2f64.powi(-(e - 1))).round() <= limit as f64 {
        e -= 1;
    }
    while (amax * 2f64.powi(-e)).round() > limit as f64 {
        e += 1;
    }
    let e = e.max(i8::MIN as i32);
    if e > i8::MAX as i32 {
        return Err(FronthaulError::ExponentOverflow(amax));
    }
    Ok(e)
}

pub fn compress_bfp(grid: &ResourceGrid, mantissa_bits: u8, block_size: usize) -> Result<CompressedIQ, FronthaulError> {
    check_params(mantissa_bits, block_size)?;
    if !grid.is_finite() {
        return Err(FronthaulError::NonFiniteInput);
    }
    let limit = max_mantissa(mantissa_bits);
    let mut blocks = Vec::with_capacity(n_blocks(grid.as_slice().len(), block_size));
    for chunk in grid.as_slice().chunks(block_size) {
        let amax = chunk.iter().map(|z| z.re.abs().max(z.im.abs())).fold(0.0, f64::max);
        if amax == 0.0 {
            blocks.push(BfpBlock { exponent: i8::MIN, mantissas: vec![(0, 0); chunk.len()] });
            continue;
        }
        let e = block_exponent(amax, limit)?;
        let inv = 2f64.powi(-e);
        let mantissas: Vec<(i16, i16)> =
            chunk.iter().map(|z| ((z.re * inv).round() as i16, (z.im * inv).round() as i16)).collect();
        let exponent = if mantissas.iter().all(|&m| m == (0, 0)) { i8::MIN } else { e as i8 };
        blocks.push(BfpBlock { exponent, mantissas });
    }
    Ok(CompressedIQ { blocks, block_size, mantissa_bits, numerology: *grid.numerology() })
}

pub fn decompress_bfp(compressed: &CompressedIQ) -> Result<ResourceGrid, FronthaulError> {
    check_params(compressed.mantissa_bits, compressed.block_size)?;
    let n_res = compressed.numerology.n_res();
    let bs = compressed.block_size;
    let expected = n_blocks(n_res, bs);
    if compressed.blocks.len() != expected {
        return Err(FronthaulError::Malformed(format!(
            "{} blocks, expected {expected}",
            compressed.blocks.len()
        )));
    }
    let limit = max_mantissa(compressed.mantissa_bits);
    let mut data = Vec::with_capacity(n_res);
    for (i, block) in compressed.blocks.iter().enumerate() {
        let want = bs.min(n_res - i * bs);
        if block.mantissas.len() != want {
            return Err(FronthaulError::Malformed(format!(
                "block {i} holds {} REs, expected {want}",
                block.mantissas.len()
            )));
        }
        let scale = 2f64.powi(block.exponent as i32);
        for &(re, im) in &block.mantissas {
            if (re as i64).abs() > limit || (im as i64).abs() > limit {
                return Err(FronthaulError::Malformed(format!("block {i} mantissa exceeds {limit}")));
            }
            data.push(Complex64::new(re as f64 * scale, im as f64 * scale));
        }
    }
    Ok(ResourceGrid::from_vec(compressed.numerology, data))
}

/// ‖a − b‖² / ‖a‖².
pub fn nmse(reference: &[Complex64], estimate: &[Complex64]) -> f64 {
    assert_eq!(reference.len(), estimate.len());
    let err: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b).norm_sqr()).sum();
    let energy: f64 = reference.iter().map(|a| a.norm_sqr()).sum();
    err / energy
}
