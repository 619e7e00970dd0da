//! Sniffer RU ↔ DU fronthaul: IQ compression, sealed map transport and
//! load accounting.

pub mod bfp;
pub mod load;
pub mod seal;

use thiserror::Error;

pub use bfp::{compress_bfp, decompress_bfp, BfpBlock, CompressedIQ};
pub use load::{fronthaul_load, CompressionConfig, FronthaulLoadReport, LoadItem, Placement};
pub use seal::{
    open_rd_map, open_wire, seal_rd_map, AeadCipher, AssociatedData, ChaChaCipher, NonceSequence, SealedRDMap, Sealer,
};

#[derive(Debug, Error, PartialEq)]
pub enum FronthaulError {
    #[error("mantissa_bits must be in 1..=16, got {0}")]
    InvalidMantissaBits(u8),
    #[error("block_size must be positive, got {0}")]
    InvalidBlockSize(usize),
    #[error("IQ grid contains non-finite values")]
    NonFiniteInput,
    #[error("block magnitude {0} needs an exponent above 127")]
    ExponentOverflow(f64),
    #[error("malformed fronthaul data: {0}")]
    Malformed(String),
    #[error("nonce reused for slot {slot}")]
    NonceReuse { slot: u64 },
    #[error("integrity check failed for slot {slot}")]
    Integrity { slot: u64 },
}
