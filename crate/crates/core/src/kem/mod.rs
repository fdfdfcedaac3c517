//! Identity-based key encapsulation.
//!
//! The interface is the four-algorithm identity KEM (setup, extract,
//! encapsulate, decapsulate) plus an unauthenticated one-shot KEM used for the
//! ephemeral key share. The reference instantiation is a gadget-trapdoor
//! dual-Regev scheme at desk parameters: exact, Gaussian-free and **not
//! secure**.

mod ephemeral;
mod idkem;
mod identity;
mod lwe;
mod params;
mod trapdoor;

use std::fmt;

use hkdf::Hkdf;
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub use ephemeral::{
    eph_decaps, eph_encaps, eph_generate, EphemeralCiphertext, EphemeralKeyPair, EphemeralPublicKey,
    EphemeralSecretKey,
};
pub use idkem::{decaps, derive_public, encaps, encaps_to, IdKemCiphertext, IdentityPublicKey};
pub use identity::{Epoch, IdentityString, SEPARATOR};
pub use params::KemParams;
pub use trapdoor::{extract, setup, IdentityPrivateKey, MasterPublicKey, MasterSecretKey};

/// Reserved for the standardized ID-ML-KEM construction. Accepted by codecs,
/// not implemented here.
pub const SCHEME_ID_ML_KEM: u16 = 0x0001;
/// The desk-scale gadget-trapdoor reference instantiation (experimental range).
pub const SCHEME_ID_DESK_LATTICE: u16 = 0x7001;
/// Named group of the lattice ephemeral KEM used in `key_share`.
pub const EPHEMERAL_GROUP_ID: u16 = 0x7101;

/// Whether a scheme id is known to the codec registry.
pub fn scheme_is_known(id: u16) -> bool {
    matches!(id, SCHEME_ID_ML_KEM | SCHEME_ID_DESK_LATTICE)
}

/// Whether a scheme id is backed by an implementation in this crate.
pub fn scheme_is_implemented(id: u16) -> bool {
    id == SCHEME_ID_DESK_LATTICE
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KemError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed identity: {0}")]
    MalformedIdentity(String),
    #[error("master secret does not match master public key")]
    KeyMismatch,
    #[error("encoding bound to different parameters")]
    ParamsMismatch,
    #[error("unknown or unimplemented scheme id 0x{0:04x}")]
    UnsupportedScheme(u16),
    #[error("truncated encoding")]
    Truncated,
    #[error("malformed encoding: {0}")]
    Malformed(String),
    #[error("preimage computation failed verification")]
    ExtractionFailed,
}

/// A 32-byte KEM shared secret.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct SharedSecret([u8; 32]);

impl SharedSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SharedSecret(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl PartialEq for SharedSecret {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for SharedSecret {}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

/// HKDF-SHA256 over the recovered bit string and a length-prefixed context.
pub(crate) fn kdf(kbits: &[u8], context: &[&[u8]]) -> SharedSecret {
    let mut ikm = Vec::with_capacity(kbits.len() + 64);
    ikm.extend_from_slice(kbits);
    for part in context {
        ikm.extend_from_slice(&(part.len() as u16).to_be_bytes());
        ikm.extend_from_slice(part);
    }
    let hk = Hkdf::<Sha256>::new(Some(b"ibetls/kem/v1"), &ikm);
    let mut out = [0u8; 32];
    hk.expand(b"shared secret", &mut out).expect("32 bytes is a valid HKDF length");
    ikm.zeroize();
    SharedSecret(out)
}

/// Sequential little-endian reader used by the key and ciphertext codecs.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8], KemError> {
        let end = self.pos.checked_add(n).ok_or(KemError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(KemError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn array32(&mut self) -> Result<[u8; 32], KemError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    pub(crate) fn u16_be(&mut self) -> Result<u16, KemError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub(crate) fn finish(&self) -> Result<(), KemError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(KemError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }

    /// Reads `count` little-endian u32 values, each required to be below `q`.
    pub(crate) fn zq_vec(&mut self, count: usize, q: u32) -> Result<Vec<u32>, KemError> {
        let raw = self.take(count.checked_mul(4).ok_or(KemError::Truncated)?)?;
        raw.chunks_exact(4)
            .map(|c| {
                let v = u32::from_le_bytes(c.try_into().unwrap());
                if v < q {
                    Ok(v)
                } else {
                    Err(KemError::Malformed(format!("coefficient {v} out of range")))
                }
            })
            .collect()
    }
}

pub(crate) fn put_zq(out: &mut Vec<u8>, values: &[u32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}
