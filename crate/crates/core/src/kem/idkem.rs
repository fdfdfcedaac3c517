use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::lwe::{self, LweCiphertext};
use super::{
    kdf, put_zq, ByteReader, IdentityPrivateKey, IdentityString, KemError, KemParams, MasterPublicKey,
    SharedSecret, SCHEME_ID_DESK_LATTICE,
};

/// Syndrome matrix `U` of one identity, `ell` columns of `n` entries.
///
/// Depends only on the parameters and the identity, never on `A`, so anyone
/// holding the parameters derives it without interaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityPublicKey {
    identity: IdentityString,
    cols: Vec<u32>,
}

impl IdentityPublicKey {
    pub fn identity(&self) -> &IdentityString {
        &self.identity
    }

    pub fn column(&self, l: usize, n: usize) -> &[u32] {
        &self.cols[l * n..(l + 1) * n]
    }

    pub(crate) fn columns(&self) -> &[u32] {
        &self.cols
    }
}

/// Hash-to-syndrome: SHA-256 in counter mode per column, 32-bit words masked
/// to `k` bits and rejection-sampled below `q`.
fn hash_to_syndrome(params: &KemParams, identity: &str) -> Vec<u32> {
    let mask = if params.k >= 32 { u32::MAX } else { (1u32 << params.k) - 1 };
    let mut cols = Vec::with_capacity(params.n * params.ell);
    for col in 0..params.ell as u32 {
        let mut filled = 0;
        let mut counter = 0u32;
        while filled < params.n {
            let mut h = Sha256::new();
            h.update(b"ibetls/h2s/v1");
            h.update([params.domain_sep.len() as u8]);
            h.update(&params.domain_sep);
            h.update((identity.len() as u16).to_be_bytes());
            h.update(identity.as_bytes());
            h.update(col.to_le_bytes());
            h.update(counter.to_le_bytes());
            let block = h.finalize();
            for word in block.chunks_exact(4) {
                let v = u32::from_le_bytes(word.try_into().unwrap()) & mask;
                if v < params.q && filled < params.n {
                    cols.push(v);
                    filled += 1;
                }
            }
            counter += 1;
        }
    }
    cols
}

/// Derives the public key of `id` from the master public key alone.
pub fn derive_public(mpk: &MasterPublicKey, id: &IdentityString) -> IdentityPublicKey {
    let canonical = id.to_string();
    IdentityPublicKey { identity: id.clone(), cols: hash_to_syndrome(mpk.params(), &canonical) }
}

/// Identity KEM ciphertext `(c0, c1)` with `c0` of length `m`, `c1` of length `ell`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdKemCiphertext {
    params_hash: [u8; 32],
    pub(crate) body: LweCiphertext,
}

impl IdKemCiphertext {
    pub fn params_hash(&self) -> &[u8; 32] {
        &self.params_hash
    }

    pub fn c0(&self) -> &[u32] {
        &self.body.c0
    }

    pub fn c1(&self) -> &[u32] {
        &self.body.c1
    }

    /// Mutable access for fault-injection tests.
    pub fn c1_mut(&mut self) -> &mut [u32] {
        &mut self.body.c1
    }

    /// Serialized size for `params`: 32-byte hash, 2-byte scheme id, 4 bytes per coefficient.
    pub fn encoded_len(params: &KemParams) -> usize {
        34 + 4 * (params.m + params.ell)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(34 + 4 * (self.body.c0.len() + self.body.c1.len()));
        out.extend_from_slice(&self.params_hash);
        out.extend_from_slice(&SCHEME_ID_DESK_LATTICE.to_be_bytes());
        put_zq(&mut out, &self.body.c0);
        put_zq(&mut out, &self.body.c1);
        out
    }

    /// Decodes a ciphertext produced under `mpk`.
    pub fn from_bytes(mpk: &MasterPublicKey, buf: &[u8]) -> Result<Self, KemError> {
        let params = mpk.params();
        let mut r = ByteReader::new(buf);
        let params_hash = r.array32()?;
        let scheme = r.u16_be()?;
        if scheme != SCHEME_ID_DESK_LATTICE {
            return Err(KemError::UnsupportedScheme(scheme));
        }
        let c0 = r.zq_vec(params.m, params.q)?;
        let c1 = r.zq_vec(params.ell, params.q)?;
        r.finish()?;
        if &params_hash != mpk.params_hash() {
            return Err(KemError::ParamsMismatch);
        }
        Ok(IdKemCiphertext { params_hash, body: LweCiphertext { c0, c1 } })
    }
}

fn id_context(identity: &IdentityString, params_hash: &[u8; 32], kbits: &[u8]) -> SharedSecret {
    let id = identity.to_string();
    kdf(kbits, &[b"id", id.as_bytes(), params_hash])
}

/// Encapsulates a fresh secret to `id`. Deterministic in `rng_seed`.
pub fn encaps(mpk: &MasterPublicKey, id: &IdentityString, rng_seed: [u8; 32]) -> (IdKemCiphertext, SharedSecret) {
    encaps_to(mpk, &derive_public(mpk, id), rng_seed)
}

/// Encapsulates to an already derived identity public key.
pub fn encaps_to(mpk: &MasterPublicKey, pk: &IdentityPublicKey, rng_seed: [u8; 32]) -> (IdKemCiphertext, SharedSecret) {
    let mut rng = ChaCha20Rng::from_seed(rng_seed);
    let (body, kbits) = lwe::encrypt(mpk.params(), mpk.matrix(), pk.columns(), &mut rng);
    let ss = id_context(pk.identity(), mpk.params_hash(), &kbits);
    (IdKemCiphertext { params_hash: *mpk.params_hash(), body }, ss)
}

/// Decapsulates with implicit rejection: a wrong key yields an unrelated
/// secret, never an error. Only structural mismatches are reported.
pub fn decaps(sk: &IdentityPrivateKey, ct: &IdKemCiphertext) -> Result<SharedSecret, KemError> {
    let params = sk.params();
    if ct.body.c0.len() != params.m || ct.body.c1.len() != params.ell {
        return Err(KemError::Malformed("ciphertext dimensions do not match key".into()));
    }
    if ct.body.c0.iter().chain(&ct.body.c1).any(|&v| v >= params.q) {
        return Err(KemError::Malformed("coefficient out of range".into()));
    }
    let kbits = lwe::decrypt(params, sk.columns(), &ct.body);
    Ok(id_context(sk.identity(), sk.params_hash(), &kbits))
}
