use std::sync::Mutex;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use zeroize::{Zeroize, ZeroizeOnDrop, Zeroizing};

use super::registry::{Registry, RegistryEvent, RegistryRecord};
use super::shamir::{combine, split, PrimeField, ShamirShare};
use super::{hex32, TpkgError};
use crate::kem::{setup, KemParams, MasterPublicKey, MasterSecretKey};

/// One node's Shamir share of a domain's setup seed.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize, Zeroize, ZeroizeOnDrop)]
pub struct Share {
    #[zeroize(skip)]
    pub domain: String,
    pub share_id: u32,
    pub threshold: usize,
    pub n_nodes: usize,
    /// Binds the share to the published master public key.
    #[serde(with = "hex32")]
    pub mpk_hash: [u8; 32],
    #[serde(with = "hex32")]
    value: [u8; 32],
}

impl std::fmt::Debug for Share {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Share")
            .field("domain", &self.domain)
            .field("share_id", &self.share_id)
            .field("threshold", &self.threshold)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub struct ShareSet {
    pub domain: String,
    pub n_nodes: usize,
    pub threshold: usize,
    pub shares: Vec<Share>,
}

fn to_32(v: &BigUint) -> [u8; 32] {
    let b = v.to_bytes_be();
    let mut out = [0u8; 32];
    out[32 - b.len()..].copy_from_slice(&b);
    out
}

/// Derives the domain's master keys from `seed`, splits the seed among
/// `n_nodes` holders and wipes it. Returns the genesis registry record.
pub fn tpkg_setup<R: RngCore + ?Sized>(
    domain: &str,
    params: &KemParams,
    n_nodes: usize,
    t: usize,
    seed: [u8; 32],
    rng: &mut R,
    now: i64,
) -> Result<(MasterPublicKey, ShareSet, RegistryRecord), TpkgError> {
    let mut seed = Zeroizing::new(seed);
    if t == 0 || t > n_nodes {
        return Err(TpkgError::InvalidThreshold { t, n: n_nodes });
    }
    let field = PrimeField::p256();
    let secret = BigUint::from_bytes_be(&seed[..]);
    if !field.contains(&secret) {
        return Err(TpkgError::InvalidSeed("seed is not below the field modulus".into()));
    }
    let (mpk, _msk) = setup(params, *seed)?;
    let parts = split(&field, &secret, t, n_nodes, rng)?;
    seed.zeroize();
    let shares = parts
        .iter()
        .map(|s| Share {
            domain: domain.to_owned(),
            share_id: s.x,
            threshold: t,
            n_nodes,
            mpk_hash: *mpk.params_hash(),
            value: to_32(&s.y),
        })
        .collect();
    let genesis = Registry::new().append(
        RegistryRecord::new(RegistryEvent::Genesis, domain, "", "tpkg-setup", now, "")
            .with_detail(format!("mpk={} n={n_nodes} t={t}", hex::encode(mpk.params_hash()))),
    );
    Ok((mpk, ShareSet { domain: domain.to_owned(), n_nodes, threshold: t, shares }, genesis))
}

static RECONSTRUCTION: Mutex<()> = Mutex::new(());

/// Rebuilds the master secret from a quorum and runs `f` with it.
///
/// The seed and secret key exist only for the duration of `f` and are wiped
/// afterwards. Scopes are serialized process-wide.
pub fn quorum_reconstruct<T>(
    shares: &[Share],
    mpk: &MasterPublicKey,
    f: impl FnOnce(&MasterSecretKey) -> T,
) -> Result<T, TpkgError> {
    let first = shares.first().ok_or(TpkgError::ThresholdNotMet { have: 0, need: 1 })?;
    for s in shares {
        if s.domain != first.domain {
            return Err(TpkgError::ShareMismatch(format!("shares from {} and {}", first.domain, s.domain)));
        }
        if s.threshold != first.threshold || s.n_nodes != first.n_nodes || s.mpk_hash != first.mpk_hash {
            return Err(TpkgError::ShareMismatch("shares disagree on threshold or master key".into()));
        }
        if s.share_id == 0 || s.share_id as usize > s.n_nodes {
            return Err(TpkgError::ShareMismatch(format!("share id {} out of range", s.share_id)));
        }
    }
    if &first.mpk_hash != mpk.params_hash() {
        return Err(TpkgError::ShareMismatch("shares belong to a different master public key".into()));
    }
    if shares.len() < first.threshold {
        return Err(TpkgError::ThresholdNotMet { have: shares.len(), need: first.threshold });
    }
    let field = PrimeField::p256();
    let points: Vec<ShamirShare> =
        shares.iter().map(|s| ShamirShare { x: s.share_id, y: BigUint::from_bytes_be(&s.value) }).collect();

    let _guard = RECONSTRUCTION.lock().unwrap_or_else(|p| p.into_inner());
    let secret = combine(&field, &points)?;
    let seed = Zeroizing::new(to_32(&secret));
    drop(secret);
    let (rebuilt, msk) = setup(mpk.params(), *seed)?;
    if rebuilt.params_hash() != mpk.params_hash() {
        return Err(TpkgError::ShareMismatch("reconstructed seed does not regenerate the master public key".into()));
    }
    let out = f(&msk);
    drop(msk);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::{extract, IdentityString};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn domain(name: &str, seed: u8) -> (MasterPublicKey, ShareSet) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed as u64);
        let (mpk, set, genesis) = tpkg_setup(name, &KemParams::compact(), 3, 2, [seed; 32], &mut rng, 0).unwrap();
        assert_eq!(genesis.event, RegistryEvent::Genesis);
        (mpk, set)
    }

    #[test]
    fn every_subset_of_two_of_three() {
        let (mpk, set) = domain("d", 1);
        let id = IdentityString::parse("svc.1").unwrap();
        for mask in 1u8..8 {
            let picked: Vec<Share> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| set.shares[i].clone()).collect();
            let res = quorum_reconstruct(&picked, &mpk, |msk| extract(msk, &mpk, &id).unwrap());
            if picked.len() >= 2 {
                assert!(res.unwrap().verify(&mpk));
            } else {
                assert_eq!(res.unwrap_err(), TpkgError::ThresholdNotMet { have: 1, need: 2 });
            }
        }
    }

    #[test]
    fn bad_thresholds() {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let p = KemParams::compact();
        assert!(matches!(tpkg_setup("d", &p, 3, 4, [1; 32], &mut rng, 0), Err(TpkgError::InvalidThreshold { .. })));
        assert!(matches!(tpkg_setup("d", &p, 3, 0, [1; 32], &mut rng, 0), Err(TpkgError::InvalidThreshold { .. })));
        assert!(matches!(tpkg_setup("d", &p, 3, 2, [0xff; 32], &mut rng, 0), Err(TpkgError::InvalidSeed(_))));
    }

    #[test]
    fn mixed_domains_rejected() {
        let (mpk_a, a) = domain("a", 1);
        let (_, b) = domain("b", 2);
        let mixed = vec![a.shares[0].clone(), b.shares[1].clone()];
        assert!(matches!(quorum_reconstruct(&mixed, &mpk_a, |_| ()), Err(TpkgError::ShareMismatch(_))));
        assert!(matches!(quorum_reconstruct(&b.shares, &mpk_a, |_| ()), Err(TpkgError::ShareMismatch(_))));
    }

    #[test]
    fn corrupted_share_value_detected() {
        let (mpk, set) = domain("a", 3);
        let mut bad = set.shares[..2].to_vec();
        bad[1].value[31] ^= 1;
        assert!(matches!(quorum_reconstruct(&bad, &mpk, |_| ()), Err(TpkgError::ShareMismatch(_))));
    }

    #[test]
    fn share_json_round_trip() {
        let (_, set) = domain("a", 4);
        let s = serde_json::to_string(&set.shares[0]).unwrap();
        let back: Share = serde_json::from_str(&s).unwrap();
        assert_eq!(back, set.shares[0]);
    }
}
