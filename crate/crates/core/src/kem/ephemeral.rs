//! One-shot unauthenticated KEM for the handshake key share.
//!
//! Same dual-Regev machinery as the identity KEM, but the public matrix is
//! expanded from a fresh per-keypair seed and the short secret `X` is sampled
//! directly, publishing `U = A*X`.

use std::fmt;

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::lwe::{self, LweCiphertext};
use super::{kdf, put_zq, ByteReader, KemError, KemParams, SharedSecret, EPHEMERAL_GROUP_ID};

fn params_digest(params: &KemParams) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ibetls/eph/v1");
    h.update(params.to_bytes());
    h.finalize().into()
}

#[derive(Clone, PartialEq, Eq)]
pub struct EphemeralPublicKey {
    matrix_seed: [u8; 32],
    /// `ell` columns of `n` entries.
    u: Vec<u32>,
}

impl fmt::Debug for EphemeralPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EphemeralPublicKey").field("fingerprint", &hex::encode(self.fingerprint())).finish()
    }
}

impl EphemeralPublicKey {
    pub fn encoded_len(params: &KemParams) -> usize {
        34 + 32 + 4 * params.n * params.ell
    }

    /// SHA-256 of the encoding; binds the shared secret to this share.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.matrix_seed);
        for v in &self.u {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn to_bytes(&self, params: &KemParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(params));
        out.extend_from_slice(&params_digest(params));
        out.extend_from_slice(&EPHEMERAL_GROUP_ID.to_be_bytes());
        out.extend_from_slice(&self.matrix_seed);
        put_zq(&mut out, &self.u);
        out
    }

    pub fn from_bytes(params: &KemParams, buf: &[u8]) -> Result<Self, KemError> {
        let mut r = ByteReader::new(buf);
        let digest = r.array32()?;
        let group = r.u16_be()?;
        if group != EPHEMERAL_GROUP_ID {
            return Err(KemError::UnsupportedScheme(group));
        }
        let matrix_seed = r.array32()?;
        let u = r.zq_vec(params.n * params.ell, params.q)?;
        r.finish()?;
        if digest != params_digest(params) {
            return Err(KemError::ParamsMismatch);
        }
        Ok(EphemeralPublicKey { matrix_seed, u })
    }
}

/// Secret half of an ephemeral key pair. Consumed by [`eph_decaps`].
#[derive(Zeroize, ZeroizeOnDrop)]
pub struct EphemeralSecretKey {
    x: Vec<i8>,
    public_fingerprint: [u8; 32],
}

impl fmt::Debug for EphemeralSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("EphemeralSecretKey(..)")
    }
}

#[derive(Debug)]
pub struct EphemeralKeyPair {
    pub public: EphemeralPublicKey,
    pub secret: EphemeralSecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EphemeralCiphertext {
    body: LweCiphertext,
}

impl EphemeralCiphertext {
    pub fn encoded_len(params: &KemParams) -> usize {
        34 + 4 * (params.m + params.ell)
    }

    pub fn to_bytes(&self, params: &KemParams) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::encoded_len(params));
        out.extend_from_slice(&params_digest(params));
        out.extend_from_slice(&EPHEMERAL_GROUP_ID.to_be_bytes());
        put_zq(&mut out, &self.body.c0);
        put_zq(&mut out, &self.body.c1);
        out
    }

    pub fn from_bytes(params: &KemParams, buf: &[u8]) -> Result<Self, KemError> {
        let mut r = ByteReader::new(buf);
        let digest = r.array32()?;
        let group = r.u16_be()?;
        if group != EPHEMERAL_GROUP_ID {
            return Err(KemError::UnsupportedScheme(group));
        }
        let c0 = r.zq_vec(params.m, params.q)?;
        let c1 = r.zq_vec(params.ell, params.q)?;
        r.finish()?;
        if digest != params_digest(params) {
            return Err(KemError::ParamsMismatch);
        }
        Ok(EphemeralCiphertext { body: LweCiphertext { c0, c1 } })
    }
}

pub fn eph_generate<R: RngCore + CryptoRng>(params: &KemParams, rng: &mut R) -> EphemeralKeyPair {
    let mut matrix_seed = [0u8; 32];
    rng.fill_bytes(&mut matrix_seed);
    let a = lwe::expand_matrix(params, matrix_seed);
    let (m, n) = (params.m, params.n);
    let x: Vec<i8> = (0..m * params.ell).map(|_| rng.gen_range(-1i8..=1)).collect();
    let mut u = Vec::with_capacity(n * params.ell);
    for l in 0..params.ell {
        u.extend(lwe::mul_column(params, &a, &x[l * m..(l + 1) * m]));
    }
    let public = EphemeralPublicKey { matrix_seed, u };
    let public_fingerprint = public.fingerprint();
    EphemeralKeyPair { public, secret: EphemeralSecretKey { x, public_fingerprint } }
}

pub fn eph_encaps(params: &KemParams, public: &EphemeralPublicKey, rng_seed: [u8; 32]) -> (EphemeralCiphertext, SharedSecret) {
    let a = lwe::expand_matrix(params, public.matrix_seed);
    let mut rng = ChaCha20Rng::from_seed(rng_seed);
    let (body, kbits) = lwe::encrypt(params, &a, &public.u, &mut rng);
    let ss = kdf(&kbits, &[b"eph", &public.fingerprint()]);
    (EphemeralCiphertext { body }, ss)
}

pub fn eph_decaps(params: &KemParams, secret: EphemeralSecretKey, ct: &EphemeralCiphertext) -> Result<SharedSecret, KemError> {
    if ct.body.c0.len() != params.m || ct.body.c1.len() != params.ell || secret.x.len() != params.m * params.ell {
        return Err(KemError::Malformed("ephemeral ciphertext dimensions".into()));
    }
    let kbits = lwe::decrypt(params, &secret.x, &ct.body);
    Ok(kdf(&kbits, &[b"eph", &secret.public_fingerprint]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_fixed_width() {
        let params = KemParams::compact();
        let mut rng = ChaCha20Rng::from_seed([1; 32]);
        for i in 0..20u8 {
            let kp = eph_generate(&params, &mut rng);
            let bytes = kp.public.to_bytes(&params);
            assert_eq!(bytes.len(), EphemeralPublicKey::encoded_len(&params));
            let public = EphemeralPublicKey::from_bytes(&params, &bytes).unwrap();
            let (ct, ss) = eph_encaps(&params, &public, [i; 32]);
            let ct = EphemeralCiphertext::from_bytes(&params, &ct.to_bytes(&params)).unwrap();
            assert_eq!(eph_decaps(&params, kp.secret, &ct).unwrap(), ss);
        }
    }

    #[test]
    fn ciphertext_size_matches_identity_ciphertext() {
        let params = KemParams::desk();
        assert_eq!(EphemeralCiphertext::encoded_len(&params), crate::kem::IdKemCiphertext::encoded_len(&params));
    }
}
