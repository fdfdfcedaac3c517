//! Gadget-trapdoor master keys and identity key extraction.
//!
//! `A = [a_bar | G - a_bar*R] mod q` where `G = I_n (x) (1, 2, ..., 2^(k-1))`.
//! For a syndrome `u`, the bit decomposition `z = G^-1(u)` gives the exact
//! preimage `x = [R*z ; z]`, since `A*x = a_bar*R*z + G*z - a_bar*R*z = u`.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::idkem::derive_public;
use super::lwe::mul_column;
use super::params::print_banner;
use super::{put_zq, ByteReader, IdentityString, KemError, KemParams, SCHEME_ID_DESK_LATTICE};

/// Master public key: the trust anchor of one domain.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterPublicKey {
    params: KemParams,
    a: Vec<u32>,
    params_hash: [u8; 32],
}

impl fmt::Debug for MasterPublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterPublicKey")
            .field("n", &self.params.n)
            .field("m", &self.params.m)
            .field("params_hash", &hex::encode(self.params_hash))
            .finish()
    }
}

fn hash_mpk(params: &KemParams, a: &[u32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"ibetls/mpk/v1");
    h.update(params.to_bytes());
    for v in a {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

impl MasterPublicKey {
    pub fn params(&self) -> &KemParams {
        &self.params
    }

    /// Row-major `n x m` public matrix.
    pub fn matrix(&self) -> &[u32] {
        &self.a
    }

    pub fn params_hash(&self) -> &[u8; 32] {
        &self.params_hash
    }

    /// Recomputes the digest over `(params, A)`.
    pub fn verify_hash(&self) -> bool {
        hash_mpk(&self.params, &self.a) == self.params_hash
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(34 + 64 + self.a.len() * 4);
        out.extend_from_slice(&self.params_hash);
        out.extend_from_slice(&SCHEME_ID_DESK_LATTICE.to_be_bytes());
        out.extend_from_slice(&self.params.to_bytes());
        put_zq(&mut out, &self.a);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, KemError> {
        let mut r = ByteReader::new(buf);
        let params_hash = r.array32()?;
        let scheme = r.u16_be()?;
        if scheme != SCHEME_ID_DESK_LATTICE {
            return Err(KemError::UnsupportedScheme(scheme));
        }
        let (params, used) = KemParams::from_bytes(r.rest())?;
        params.validate()?;
        let mut r = ByteReader::new(&buf[34 + used..]);
        let a = r.zq_vec(params.n * params.m, params.q)?;
        r.finish()?;
        let mpk = MasterPublicKey { params, a, params_hash };
        if !mpk.verify_hash() {
            return Err(KemError::ParamsMismatch);
        }
        Ok(mpk)
    }
}

/// Master secret: the trapdoor `R` (sparse, entries in {-1, 0, 1}) and the
/// random left block `a_bar`. Wiped on drop.
#[derive(Zeroize, ZeroizeOnDrop)]
pub struct MasterSecretKey {
    /// Row `r` of `R` has non-zeros at `r_cols[r*w..(r+1)*w]` with signs
    /// `r_signs[..]` in {-1, 1}, where `w = beta - 1`.
    row_weight: usize,
    r_cols: Vec<u32>,
    r_signs: Vec<i8>,
    a_bar: Vec<u32>,
    params_hash: [u8; 32],
}

impl fmt::Debug for MasterSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MasterSecretKey").field("params_hash", &hex::encode(self.params_hash)).finish()
    }
}

impl MasterSecretKey {
    pub fn params_hash(&self) -> &[u8; 32] {
        &self.params_hash
    }

    /// Largest number of non-zero entries in any row of `R`.
    pub fn max_row_weight(&self) -> usize {
        self.rows().map(|row| row.filter(|&(_, s)| s != 0).count()).max().unwrap_or(0)
    }

    fn rows(&self) -> impl Iterator<Item = impl Iterator<Item = (usize, i8)> + '_> + '_ {
        let w = self.row_weight.max(1);
        let count = if self.row_weight == 0 { 0 } else { self.r_cols.len() / w };
        (0..count).map(move |r| {
            self.r_cols[r * w..(r + 1) * w]
                .iter()
                .zip(&self.r_signs[r * w..(r + 1) * w])
                .map(|(&c, &s)| (c as usize, s))
        })
    }

    /// Dense `R`, row-major `m_bar x n*k`.
    pub fn trapdoor_dense(&self, params: &KemParams) -> Vec<i8> {
        let cols = params.gadget_cols();
        let mut dense = vec![0i8; params.m_bar * cols];
        for (r, row) in self.rows().enumerate() {
            for (c, s) in row {
                dense[r * cols + c] = s;
            }
        }
        dense
    }

    /// Recomputes `[a_bar | G - a_bar*R] mod q` from the secret.
    pub fn public_matrix(&self, params: &KemParams) -> Vec<u32> {
        let (n, m, m_bar, cols, q) = (params.n, params.m, params.m_bar, params.gadget_cols(), params.q as i64);
        let mut prod = vec![0i64; n * cols];
        for (r, row) in self.rows().enumerate() {
            let row: Vec<(usize, i8)> = row.collect();
            for i in 0..n {
                let a = self.a_bar[i * m_bar + r] as i64;
                let out = &mut prod[i * cols..(i + 1) * cols];
                for &(c, s) in &row {
                    out[c] += s as i64 * a;
                }
            }
        }
        let mut a = vec![0u32; n * m];
        for i in 0..n {
            a[i * m..i * m + m_bar].copy_from_slice(&self.a_bar[i * m_bar..(i + 1) * m_bar]);
            for c in 0..cols {
                let g = if c / params.k == i { 1i64 << (c % params.k) } else { 0 };
                a[i * m + m_bar + c] = (g - prod[i * cols + c]).rem_euclid(q) as u32;
            }
        }
        a
    }
}

/// Generates the master key pair. Every random choice is drawn from a ChaCha20
/// stream keyed by `seed`, so equal seeds give bit-identical keys.
pub fn setup(params: &KemParams, seed: [u8; 32]) -> Result<(MasterPublicKey, MasterSecretKey), KemError> {
    print_banner();
    params.validate()?;
    let mut rng = ChaCha20Rng::from_seed(seed);
    let a_bar: Vec<u32> = (0..params.n * params.m_bar).map(|_| rng.gen_range(0..params.q)).collect();
    let weight = (params.beta - 1) as usize;
    let cols = params.gadget_cols();
    let mut r_cols = Vec::with_capacity(params.m_bar * weight);
    let mut r_signs = Vec::with_capacity(params.m_bar * weight);
    for _ in 0..params.m_bar {
        let mut picked = index::sample(&mut rng, cols, weight).into_vec();
        picked.sort_unstable();
        for c in picked {
            r_cols.push(c as u32);
            r_signs.push(if rng.gen::<bool>() { 1 } else { -1 });
        }
    }
    let mut msk = MasterSecretKey { row_weight: weight, r_cols, r_signs, a_bar, params_hash: [0; 32] };
    let a = msk.public_matrix(params);
    let params_hash = hash_mpk(params, &a);
    msk.params_hash = params_hash;
    Ok((MasterPublicKey { params: params.clone(), a, params_hash }, msk))
}

/// The decapsulation credential of one identity: an exact short preimage
/// `X` with `A*X = U (mod q)` column-wise.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct IdentityPrivateKey {
    #[zeroize(skip)]
    identity: IdentityString,
    #[zeroize(skip)]
    params: KemParams,
    params_hash: [u8; 32],
    /// `ell` columns of length `m`.
    x: Vec<i16>,
}

impl fmt::Debug for IdentityPrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IdentityPrivateKey")
            .field("identity", &self.identity.to_string())
            .field("params_hash", &hex::encode(self.params_hash))
            .finish_non_exhaustive()
    }
}

impl IdentityPrivateKey {
    pub fn identity(&self) -> &IdentityString {
        &self.identity
    }

    pub fn params(&self) -> &KemParams {
        &self.params
    }

    pub fn params_hash(&self) -> &[u8; 32] {
        &self.params_hash
    }

    pub(crate) fn columns(&self) -> &[i16] {
        &self.x
    }

    /// Column `i` of the preimage matrix.
    pub fn column(&self, i: usize) -> &[i16] {
        &self.x[i * self.params.m..(i + 1) * self.params.m]
    }

    pub fn inf_norm(&self) -> u32 {
        self.x.iter().map(|v| v.unsigned_abs() as u32).max().unwrap_or(0)
    }

    /// Checks `A*X = U (mod q)` exactly and `|X|_inf <= beta` against `mpk`.
    pub fn verify(&self, mpk: &MasterPublicKey) -> bool {
        if &self.params_hash != mpk.params_hash() || self.inf_norm() > mpk.params().beta {
            return false;
        }
        let pk = derive_public(mpk, &self.identity);
        let n = self.params.n;
        (0..self.params.ell).all(|l| mul_column(&self.params, mpk.matrix(), self.column(l)) == pk.column(l, n))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.identity.to_string();
        let mut out = Vec::with_capacity(34 + 64 + id.len() + self.x.len() * 2);
        out.extend_from_slice(&self.params_hash);
        out.extend_from_slice(&SCHEME_ID_DESK_LATTICE.to_be_bytes());
        out.extend_from_slice(&self.params.to_bytes());
        out.extend_from_slice(&(id.len() as u16).to_be_bytes());
        out.extend_from_slice(id.as_bytes());
        for v in &self.x {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, KemError> {
        let mut r = ByteReader::new(buf);
        let params_hash = r.array32()?;
        let scheme = r.u16_be()?;
        if scheme != SCHEME_ID_DESK_LATTICE {
            return Err(KemError::UnsupportedScheme(scheme));
        }
        let (params, used) = KemParams::from_bytes(r.rest())?;
        params.validate()?;
        let mut r = ByteReader::new(&buf[34 + used..]);
        let id_len = r.u16_be()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?).map_err(|e| KemError::Malformed(e.to_string()))?;
        let identity = IdentityString::parse(id)?;
        let raw = r.take(params.m * params.ell * 2)?;
        r.finish()?;
        let x: Vec<i16> = raw.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
        if x.iter().any(|v| v.unsigned_abs() as u32 > params.beta) {
            return Err(KemError::Malformed("preimage exceeds norm bound".into()));
        }
        Ok(IdentityPrivateKey { identity, params, params_hash, x })
    }
}

/// Extracts the private key of `id`.
///
/// Preimages are deterministic; the result is checked against `A*X = U`
/// before it is returned.
pub fn extract(
    msk: &MasterSecretKey,
    mpk: &MasterPublicKey,
    id: &IdentityString,
) -> Result<IdentityPrivateKey, KemError> {
    if msk.params_hash != mpk.params_hash {
        return Err(KemError::KeyMismatch);
    }
    let params = mpk.params();
    let (n, k, m, ell, cols) = (params.n, params.k, params.m, params.ell, params.gadget_cols());
    let pk = derive_public(mpk, id);
    let mut x = vec![0i16; m * ell];
    let mut z = vec![0i16; cols];
    for l in 0..ell {
        let u = pk.column(l, n);
        for (i, &ui) in u.iter().enumerate() {
            for b in 0..k {
                z[i * k + b] = ((ui >> b) & 1) as i16;
            }
        }
        let out = &mut x[l * m..(l + 1) * m];
        for (r, row) in msk.rows().enumerate() {
            out[r] = row.map(|(c, s)| s as i16 * z[c]).sum();
        }
        out[params.m_bar..].copy_from_slice(&z);
        if mul_column(params, mpk.matrix(), out) != u {
            return Err(KemError::ExtractionFailed);
        }
    }
    z.zeroize();
    Ok(IdentityPrivateKey { identity: id.clone(), params: params.clone(), params_hash: mpk.params_hash, x })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> IdentityString {
        IdentityString::parse(s).unwrap()
    }

    #[test]
    fn secret_reconstructs_public_matrix() {
        let params = KemParams::compact();
        let (mpk, msk) = setup(&params, [0; 32]).unwrap();
        assert_eq!(msk.public_matrix(&params), mpk.matrix());
        assert!(mpk.verify_hash());
        assert_eq!(msk.max_row_weight(), (params.beta - 1) as usize);
    }

    #[test]
    fn dense_formula_matches() {
        // Recompute A = [a_bar | G - a_bar R] with plain dense loops.
        let params = KemParams::compact();
        let (mpk, msk) = setup(&params, [5; 32]).unwrap();
        let r = msk.trapdoor_dense(&params);
        let (n, m_bar, cols, q) = (params.n, params.m_bar, params.gadget_cols(), params.q as i64);
        for i in 0..n {
            for c in 0..cols {
                let mut acc = 0i64;
                for j in 0..m_bar {
                    acc += msk.a_bar[i * m_bar + j] as i64 * r[j * cols + c] as i64;
                }
                let g = if c >= i * params.k && c < (i + 1) * params.k { 1i64 << (c - i * params.k) } else { 0 };
                assert_eq!(mpk.matrix()[i * params.m + m_bar + c] as i64, (g - acc).rem_euclid(q));
            }
        }
    }

    #[test]
    fn setup_is_deterministic() {
        let params = KemParams::desk();
        let (a, _) = setup(&params, [9; 32]).unwrap();
        let (b, _) = setup(&params, [9; 32]).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let (c, _) = setup(&params, [10; 32]).unwrap();
        assert_ne!(a.params_hash(), c.params_hash());
    }

    #[test]
    fn composite_modulus_rejected() {
        let mut params = KemParams::desk();
        params.q = 15;
        assert!(matches!(setup(&params, [0; 32]), Err(KemError::InvalidParams(_))));
    }

    #[test]
    fn extracted_key_verifies() {
        let params = KemParams::compact();
        let (mpk, msk) = setup(&params, [1; 32]).unwrap();
        let sk = extract(&msk, &mpk, &id("kubelet:node-01.1")).unwrap();
        assert!(sk.verify(&mpk));
        assert!(sk.inf_norm() <= params.beta);
    }

    #[test]
    fn mismatched_master_keys_rejected() {
        let params = KemParams::compact();
        let (mpk, _) = setup(&params, [1; 32]).unwrap();
        let (_, other) = setup(&params, [2; 32]).unwrap();
        assert_eq!(extract(&other, &mpk, &id("a.1")).unwrap_err(), KemError::KeyMismatch);
    }

    #[test]
    fn key_and_mpk_encodings_round_trip() {
        let params = KemParams::compact();
        let (mpk, msk) = setup(&params, [3; 32]).unwrap();
        let back = MasterPublicKey::from_bytes(&mpk.to_bytes()).unwrap();
        assert_eq!(back, mpk);
        let sk = extract(&msk, &mpk, &id("etcd:node-1.1")).unwrap();
        let sk2 = IdentityPrivateKey::from_bytes(&sk.to_bytes()).unwrap();
        assert_eq!(sk2, sk);

        let mut bytes = mpk.to_bytes();
        let last = bytes.len() - 5;
        bytes[last] ^= 1;
        assert!(MasterPublicKey::from_bytes(&bytes).is_err());
    }
}
