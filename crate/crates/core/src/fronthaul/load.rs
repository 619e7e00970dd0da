//! Fronthaul bits per sensing occasion for both processing placements.

use serde::{Deserialize, Serialize};

use super::bfp::{compressed_bits, n_blocks, MAX_MANTISSA_BITS};
use super::seal::{AAD_BYTES, FRAMING_BYTES, NONCE_BYTES, TAG_BYTES};
use super::FronthaulError;
use crate::numerology::Numerology;
use crate::processing::MAP_HEADER_BYTES;

/// Where the range-Doppler map is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Sniffer RU computes and seals the map; only the map crosses the fronthaul.
    RuProcessing,
    /// Sniffer RU forwards compressed IQ; the DU computes the map.
    DuProcessing,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::RuProcessing => "ru_processing",
            Placement::DuProcessing => "du_processing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionConfig {
    pub mantissa_bits: u8,
    /// REs per block; 12 is one PRB.
    pub block_size: usize,
    /// Also charge a forwarded copy of the TX capture in DU placement.
    pub count_tx_capture: bool,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        Self { mantissa_bits: 9, block_size: 12, count_tx_capture: false }
    }
}

impl CompressionConfig {
    pub fn validate(&self) -> Result<(), FronthaulError> {
        if !(1..=MAX_MANTISSA_BITS).contains(&self.mantissa_bits) {
            return Err(FronthaulError::InvalidMantissaBits(self.mantissa_bits));
        }
        if self.block_size == 0 {
            return Err(FronthaulError::InvalidBlockSize(0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadItem {
    pub item: String,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FronthaulLoadReport {
    pub placement: Placement,
    pub bits_per_slot: u64,
    pub breakdown: Vec<LoadItem>,
}

impl FronthaulLoadReport {
    fn from_items(placement: Placement, items: Vec<(&str, u64)>) -> Self {
        let breakdown: Vec<LoadItem> = items.into_iter().map(|(i, b)| LoadItem { item: i.into(), bits: b }).collect();
        Self { placement, bits_per_slot: breakdown.iter().map(|i| i.bits).sum(), breakdown }
    }
}

/// Bits crossing the fronthaul per sensing occasion. `rd_map_dims` is the
/// exported map size (range × Doppler bins) and only matters for RU placement.
pub fn fronthaul_load(
    placement: Placement,
    numerology: &Numerology,
    compression: &CompressionConfig,
    rd_map_dims: (usize, usize),
) -> Result<FronthaulLoadReport, FronthaulError> {
    compression.validate()?;
    Ok(match placement {
        Placement::DuProcessing => {
            let iq = compressed_bits(
                n_blocks(numerology.n_res(), compression.block_size),
                compression.block_size,
                compression.mantissa_bits,
            );
            let mut items = vec![("rx_iq", iq)];
            if compression.count_tx_capture {
                items.push(("tx_capture_iq", iq));
            }
            FronthaulLoadReport::from_items(placement, items)
        }
        Placement::RuProcessing => {
            let (nr, nd) = rd_map_dims;
            FronthaulLoadReport::from_items(
                placement,
                vec![
                    ("rd_map_header", 8 * MAP_HEADER_BYTES as u64),
                    ("rd_map_power", 32 * (nr * nd) as u64),
                    ("auth_tag", 8 * TAG_BYTES as u64),
                    ("nonce", 8 * NONCE_BYTES as u64),
                    ("associated_data", 8 * AAD_BYTES as u64),
                    ("framing", 8 * FRAMING_BYTES as u64),
                ],
            )
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fronthaul::seal::wire_len;
    use crate::processing::RangeDopplerMap;

    #[test]
    fn du_example() {
        let num = Numerology::nr_30khz(3276, 14);
        let r = fronthaul_load(Placement::DuProcessing, &num, &CompressionConfig::default(), (256, 64)).unwrap();
        // 45864 REs / 12 = 3822 blocks of 8 + 12·2·9 bits
        assert_eq!(r.bits_per_slot, 3822 * 224);
        assert_eq!(r.bits_per_slot, 856_128);
    }

    #[test]
    fn tx_capture_doubles_du_load() {
        let num = Numerology::nr_30khz(3276, 14);
        let c = CompressionConfig { count_tx_capture: true, ..Default::default() };
        let r = fronthaul_load(Placement::DuProcessing, &num, &c, (256, 64)).unwrap();
        assert_eq!(r.bits_per_slot, 2 * 856_128);
        assert_eq!(r.breakdown.len(), 2);
    }

    #[test]
    fn ru_example_matches_wire_size() {
        let num = Numerology::nr_30khz(3276, 14);
        let r = fronthaul_load(Placement::RuProcessing, &num, &CompressionConfig::default(), (256, 64)).unwrap();
        let power = r.breakdown.iter().find(|i| i.item == "rd_map_power").unwrap().bits;
        assert_eq!(power, 524_288);
        let crypto: u64 = r
            .breakdown
            .iter()
            .filter(|i| ["auth_tag", "nonce", "associated_data"].contains(&i.item.as_str()))
            .map(|i| i.bits)
            .sum();
        assert_eq!(crypto, 352);
        let frame = wire_len(RangeDopplerMap::serialized_len(256, 64));
        assert_eq!(r.bits_per_slot, 8 * frame as u64);
        assert_eq!(r.bits_per_slot, r.breakdown.iter().map(|i| i.bits).sum::<u64>());
        assert!((r.bits_per_slot as f64 / 1e6 - 0.525).abs() < 0.001);
    }

    #[test]
    fn ru_below_du_from_six_bits() {
        // DU load 3822·(8 + 24·b) crosses the 525,120-bit sealed map between 5 and 6 bits.
        let num = Numerology::nr_30khz(3276, 14);
        let ru = fronthaul_load(Placement::RuProcessing, &num, &CompressionConfig::default(), (256, 64)).unwrap();
        for bits in 1..=16 {
            let c = CompressionConfig { mantissa_bits: bits, ..Default::default() };
            let du = fronthaul_load(Placement::DuProcessing, &num, &c, (256, 64)).unwrap();
            assert_eq!(ru.bits_per_slot < du.bits_per_slot, bits >= 6, "{bits}");
        }
    }

    #[test]
    fn zero_mantissa_rejected() {
        let num = Numerology::nr_30khz(12, 2);
        let c = CompressionConfig { mantissa_bits: 0, ..Default::default() };
        assert_eq!(
            fronthaul_load(Placement::DuProcessing, &num, &c, (1, 1)),
            Err(FronthaulError::InvalidMantissaBits(0))
        );
    }
}
