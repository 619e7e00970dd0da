//! Authenticated encryption of serialized range-Doppler maps.
//!
//! Wire frame, all lengths little-endian u32:
//! `[aad_len][aad][nonce_len][nonce][ct_len][ciphertext][16-byte tag]`.
//! The associated data travels in clear and is covered by the tag.

use std::collections::HashSet;

use chacha20poly1305::aead::AeadInPlace;
use chacha20poly1305::{ChaCha20Poly1305, KeyInit};
use rand::RngCore;

use super::FronthaulError;

pub const TAG_BYTES: usize = 16;
pub const NONCE_BYTES: usize = 12;
pub const AAD_BYTES: usize = 16;
pub const KEY_BYTES: usize = 32;
/// Three u32 length prefixes.
pub const FRAMING_BYTES: usize = 12;

pub type Nonce = [u8; NONCE_BYTES];
pub type Tag = [u8; TAG_BYTES];

/// Authenticated encryption with associated data. Implementations must give
/// confidentiality of the plaintext and integrity of plaintext and AAD.
pub trait AeadCipher {
    fn name(&self) -> &'static str;
    /// Encrypts `buffer` in place and returns the tag.
    fn seal_in_place(&self, nonce: &Nonce, aad: &[u8], buffer: &mut [u8]) -> Tag;
    /// Decrypts `buffer` in place; `false` if authentication fails.
    fn open_in_place(&self, nonce: &Nonce, aad: &[u8], buffer: &mut [u8], tag: &Tag) -> bool;
}

/// ChaCha20-Poly1305 (RFC 8439).
#[derive(Clone)]
pub struct ChaChaCipher(ChaCha20Poly1305);

impl ChaChaCipher {
    pub fn new(key: &[u8; KEY_BYTES]) -> Self {
        Self(ChaCha20Poly1305::new(key.into()))
    }

    /// Key drawn from a seeded generator, for reproducible runs.
    pub fn from_seed(seed: u64) -> Self {
        let mut key = [0u8; KEY_BYTES];
        crate::rng::rng_from(seed).fill_bytes(&mut key);
        Self::new(&key)
    }
}

impl AeadCipher for ChaChaCipher {
    fn name(&self) -> &'static str {
        "chacha20-poly1305"
    }

    fn seal_in_place(&self, nonce: &Nonce, aad: &[u8], buffer: &mut [u8]) -> Tag {
        let tag = self
            .0
            .encrypt_in_place_detached(nonce.into(), aad, buffer)
            .expect("plaintext within the cipher's length limit");
        tag.into()
    }

    fn open_in_place(&self, nonce: &Nonce, aad: &[u8], buffer: &mut [u8], tag: &Tag) -> bool {
        self.0.decrypt_in_place_detached(nonce.into(), aad, buffer, tag.into()).is_ok()
    }
}

/// Cleartext context bound to every sealed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AssociatedData {
    pub cell_id: u32,
    pub slot_counter: u64,
    pub beam_index: u32,
}

impl AssociatedData {
    pub fn to_bytes(&self) -> [u8; AAD_BYTES] {
        let mut out = [0u8; AAD_BYTES];
        out[..4].copy_from_slice(&self.cell_id.to_le_bytes());
        out[4..12].copy_from_slice(&self.slot_counter.to_le_bytes());
        out[12..].copy_from_slice(&self.beam_index.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != AAD_BYTES {
            return None;
        }
        Some(Self {
            cell_id: u32::from_le_bytes(bytes[..4].try_into().ok()?),
            slot_counter: u64::from_le_bytes(bytes[4..12].try_into().ok()?),
            beam_index: u32::from_le_bytes(bytes[12..].try_into().ok()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedRDMap {
    pub associated_data: AssociatedData,
    pub nonce: Nonce,
    pub ciphertext: Vec<u8>,
    pub auth_tag: Tag,
}

impl SealedRDMap {
    pub fn to_wire(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(wire_len(self.ciphertext.len()));
        out.extend_from_slice(&(AAD_BYTES as u32).to_le_bytes());
        out.extend_from_slice(&self.associated_data.to_bytes());
        out.extend_from_slice(&(NONCE_BYTES as u32).to_le_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<Self, FronthaulError> {
        let mut rest = bytes;
        let aad = take_field(&mut rest, "associated data")?;
        let nonce = take_field(&mut rest, "nonce")?;
        let ciphertext = take_field(&mut rest, "ciphertext")?;
        if rest.len() != TAG_BYTES {
            return Err(FronthaulError::Malformed(format!("{} trailing bytes, expected a {TAG_BYTES}-byte tag", rest.len())));
        }
        Ok(Self {
            associated_data: AssociatedData::from_bytes(aad)
                .ok_or_else(|| FronthaulError::Malformed(format!("associated data of {} bytes", aad.len())))?,
            nonce: nonce
                .try_into()
                .map_err(|_| FronthaulError::Malformed(format!("nonce of {} bytes", nonce.len())))?,
            ciphertext: ciphertext.to_vec(),
            auth_tag: rest.try_into().unwrap(),
        })
    }
}

fn take_field<'a>(rest: &mut &'a [u8], what: &str) -> Result<&'a [u8], FronthaulError> {
    let truncated = || FronthaulError::Malformed(format!("truncated {what}"));
    let len_bytes = rest.get(..4).ok_or_else(truncated)?;
    let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
    let field = rest.get(4..4usize.checked_add(len).ok_or_else(truncated)?).ok_or_else(truncated)?;
    *rest = &rest[4 + len..];
    Ok(field)
}

/// Frame size for a plaintext of `plaintext_len` bytes.
pub fn wire_len(plaintext_len: usize) -> usize {
    FRAMING_BYTES + AAD_BYTES + NONCE_BYTES + plaintext_len + TAG_BYTES
}

/// Salted counter nonces: 4-byte salt then the little-endian counter.
#[derive(Debug, Clone)]
pub struct NonceSequence {
    salt: [u8; 4],
    counter: u64,
}

impl NonceSequence {
    pub fn new(salt: [u8; 4]) -> Self {
        Self { salt, counter: 0 }
    }

    pub fn next_nonce(&mut self) -> Nonce {
        let mut n = [0u8; NONCE_BYTES];
        n[..4].copy_from_slice(&self.salt);
        n[4..].copy_from_slice(&self.counter.to_le_bytes());
        self.counter += 1;
        n
    }
}

/// Sealing side of one key. Owns the record of nonces already used with it,
/// so it must have a single owner; sealing takes `&mut self`.
pub struct Sealer<C: AeadCipher> {
    cipher: C,
    used: HashSet<Nonce>,
}

impl<C: AeadCipher> Sealer<C> {
    pub fn new(cipher: C) -> Self {
        Self { cipher, used: HashSet::new() }
    }

    pub fn cipher(&self) -> &C {
        &self.cipher
    }

    /// Seals under `nonce`; a nonce already used with this key is refused.
    pub fn seal(
        &mut self,
        rd_map_bytes: &[u8],
        associated_data: AssociatedData,
        nonce: Nonce,
    ) -> Result<SealedRDMap, FronthaulError> {
        if !self.used.insert(nonce) {
            return Err(FronthaulError::NonceReuse { slot: associated_data.slot_counter });
        }
        let mut ciphertext = rd_map_bytes.to_vec();
        let auth_tag = self.cipher.seal_in_place(&nonce, &associated_data.to_bytes(), &mut ciphertext);
        Ok(SealedRDMap { associated_data, nonce, ciphertext, auth_tag })
    }
}

pub fn seal_rd_map<C: AeadCipher>(
    sealer: &mut Sealer<C>,
    rd_map_bytes: &[u8],
    associated_data: AssociatedData,
    nonce: Nonce,
) -> Result<SealedRDMap, FronthaulError> {
    sealer.seal(rd_map_bytes, associated_data, nonce)
}

/// Opens a sealed map against the associated data the receiver expects.
/// Any tamper, key mismatch or context mismatch is an integrity error for
/// the expected slot.
pub fn open_rd_map<C: AeadCipher>(
    sealed: &SealedRDMap,
    cipher: &C,
    associated_data: &AssociatedData,
) -> Result<Vec<u8>, FronthaulError> {
    let fail = FronthaulError::Integrity { slot: associated_data.slot_counter };
    if sealed.associated_data != *associated_data {
        return Err(fail);
    }
    let mut buf = sealed.ciphertext.clone();
    if !cipher.open_in_place(&sealed.nonce, &associated_data.to_bytes(), &mut buf, &sealed.auth_tag) {
        return Err(fail);
    }
    Ok(buf)
}

/// Parses and opens a wire frame; framing damage is an integrity error too.
pub fn open_wire<C: AeadCipher>(
    wire: &[u8],
    cipher: &C,
    associated_data: &AssociatedData,
) -> Result<Vec<u8>, FronthaulError> {
    let sealed = SealedRDMap::from_wire(wire).map_err(|_| FronthaulError::Integrity { slot: associated_data.slot_counter })?;
    open_rd_map(&sealed, cipher, associated_data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aad(slot: u64) -> AssociatedData {
        AssociatedData { cell_id: 7, slot_counter: slot, beam_index: 3 }
    }

    fn plaintext() -> Vec<u8> {
        (0..200u32).map(|i| (i * 7 % 13) as u8).collect()
    }

    #[test]
    fn round_trip() {
        let mut s = Sealer::new(ChaChaCipher::from_seed(1));
        let mut nonces = NonceSequence::new([1, 2, 3, 4]);
        let sealed = s.seal(&plaintext(), aad(5), nonces.next_nonce()).unwrap();
        assert_eq!(open_rd_map(&sealed, s.cipher(), &aad(5)).unwrap(), plaintext());
        let wire = sealed.to_wire();
        assert_eq!(wire.len(), wire_len(200));
        assert_eq!(SealedRDMap::from_wire(&wire).unwrap(), sealed);
        assert_eq!(open_wire(&wire, s.cipher(), &aad(5)).unwrap(), plaintext());
    }

    #[test]
    fn nonce_reuse_refused() {
        let mut s = Sealer::new(ChaChaCipher::from_seed(1));
        let n = [9u8; NONCE_BYTES];
        s.seal(b"a", aad(0), n).unwrap();
        assert_eq!(s.seal(b"b", aad(1), n), Err(FronthaulError::NonceReuse { slot: 1 }));
    }

    #[test]
    fn nonce_sequence_is_unique() {
        let mut seq = NonceSequence::new([0; 4]);
        let set: HashSet<Nonce> = (0..1000).map(|_| seq.next_nonce()).collect();
        assert_eq!(set.len(), 1000);
    }

    #[test]
    fn tampering_rejected() {
        let mut s = Sealer::new(ChaChaCipher::from_seed(2));
        let sealed = s.seal(&plaintext(), aad(5), [0; 12]).unwrap();

        let mut ct = sealed.clone();
        ct.ciphertext[17] ^= 0x10;
        assert_eq!(open_rd_map(&ct, s.cipher(), &aad(5)), Err(FronthaulError::Integrity { slot: 5 }));

        let mut moved = sealed.clone();
        moved.associated_data.slot_counter = 6;
        assert!(open_rd_map(&moved, s.cipher(), &aad(6)).is_err());
        assert!(open_rd_map(&sealed, s.cipher(), &aad(6)).is_err());

        assert!(open_rd_map(&sealed, &ChaChaCipher::from_seed(3), &aad(5)).is_err());

        let wire = sealed.to_wire();
        assert!(open_wire(&wire[..wire.len() - 1], s.cipher(), &aad(5)).is_err());
        let mut short = sealed.clone();
        short.ciphertext.pop();
        assert!(open_rd_map(&short, s.cipher(), &aad(5)).is_err());
    }

    #[test]
    fn ciphertext_bytes_look_uniform() {
        let mut s = Sealer::new(ChaChaCipher::from_seed(4));
        let zeros = vec![0u8; 1 << 16];
        let sealed = s.seal(&zeros, aad(0), [0; 12]).unwrap();
        let mut hist = [0usize; 256];
        for &b in &sealed.ciphertext {
            hist[b as usize] += 1;
        }
        let expect = zeros.len() as f64 / 256.0;
        let chi2: f64 = hist.iter().map(|&h| (h as f64 - expect).powi(2) / expect).sum();
        // 255 degrees of freedom; 400 is far in the tail.
        assert!(chi2 < 400.0, "{chi2}");
    }
}
