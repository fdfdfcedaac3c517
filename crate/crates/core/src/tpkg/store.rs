//! Per-domain persistence: append-only JSON-lines for policies, requests and
//! the registry, one file per share holder, and the raw master public key.
//! Identity private keys are never written here.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::issuer::IdentityRequest;
use super::policy::IssuerPolicy;
use super::registry::{verify_jsonl, RegistryRecord};
use super::shares::{Share, ShareSet};
use super::TpkgError;
use crate::kem::MasterPublicKey;

const MPK: &str = "mpk.bin";
const POLICIES: &str = "policies.jsonl";
const REGISTRY: &str = "registry.jsonl";
const REQUESTS: &str = "requests.jsonl";
const SHARES: &str = "shares";

#[derive(Clone, Debug)]
pub struct DomainStore {
    dir: PathBuf,
}

/// Directory name for a trust domain, e.g. `ibe.kubernetes.io_apiserver`.
pub fn dir_name(domain: &str) -> String {
    domain.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn append_line<T: Serialize>(path: &Path, v: &T) -> Result<(), TpkgError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(v).map_err(|e| TpkgError::Storage(e.to_string()))?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, TpkgError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TpkgError::Storage(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

impl DomainStore {
    /// Lays out a fresh domain directory. Fails if one already exists.
    pub fn create(
        dir: impl Into<PathBuf>,
        mpk: &MasterPublicKey,
        policy: &IssuerPolicy,
        genesis: &RegistryRecord,
        shares: &ShareSet,
    ) -> Result<Self, TpkgError> {
        let dir = dir.into();
        if dir.join(REGISTRY).exists() {
            return Err(TpkgError::Storage(format!("{} already holds a domain", dir.display())));
        }
        fs::create_dir_all(dir.join(SHARES))?;
        fs::write(dir.join(MPK), mpk.to_bytes())?;
        let store = DomainStore { dir };
        store.append_policy(policy)?;
        store.append_registry(genesis)?;
        fs::write(store.dir.join(REQUESTS), b"")?;
        for s in &shares.shares {
            store.write_share(s)?;
        }
        Ok(store)
    }

    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, TpkgError> {
        let dir = dir.into();
        if !dir.join(REGISTRY).is_file() {
            return Err(TpkgError::Storage(format!("{} is not a domain directory", dir.display())));
        }
        Ok(DomainStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn registry_path(&self) -> PathBuf {
        self.dir.join(REGISTRY)
    }

    pub fn share_path(&self, share_id: u32) -> PathBuf {
        self.dir.join(SHARES).join(format!("node-{share_id}.json"))
    }

    pub fn write_share(&self, s: &Share) -> Result<(), TpkgError> {
        let json = serde_json::to_vec_pretty(s).map_err(|e| TpkgError::Storage(e.to_string()))?;
        fs::write(self.share_path(s.share_id), json)?;
        Ok(())
    }

    pub fn load_mpk(&self) -> Result<MasterPublicKey, TpkgError> {
        Ok(MasterPublicKey::from_bytes(&fs::read(self.dir.join(MPK))?)?)
    }

    /// The most recent policy snapshot.
    pub fn load_policy(&self) -> Result<IssuerPolicy, TpkgError> {
        read_lines::<IssuerPolicy>(&self.dir.join(POLICIES))?
            .pop()
            .ok_or_else(|| TpkgError::Storage("no policy recorded".into()))
    }

    pub fn load_registry(&self) -> Result<Vec<RegistryRecord>, TpkgError> {
        verify_jsonl(&fs::read_to_string(self.registry_path())?)
    }

    /// Latest state of every request.
    pub fn load_requests(&self) -> Result<Vec<IdentityRequest>, TpkgError> {
        let mut latest = BTreeMap::new();
        for r in read_lines::<IdentityRequest>(&self.dir.join(REQUESTS))? {
            latest.insert(r.name.clone(), r);
        }
        Ok(latest.into_values().collect())
    }

    /// Readable share files and the errors for the unreadable ones.
    pub fn load_shares(&self) -> (Vec<Share>, Vec<String>) {
        let mut ok = Vec::new();
        let mut bad = Vec::new();
        let entries = match fs::read_dir(self.dir.join(SHARES)) {
            Ok(e) => e,
            Err(e) => return (ok, vec![e.to_string()]),
        };
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            match fs::read(&p).map_err(|e| e.to_string()).and_then(|b| serde_json::from_slice::<Share>(&b).map_err(|e| e.to_string())) {
                Ok(s) => ok.push(s),
                Err(e) => bad.push(format!("{}: {e}", p.display())),
            }
        }
        (ok, bad)
    }

    pub fn append_policy(&self, p: &IssuerPolicy) -> Result<(), TpkgError> {
        append_line(&self.dir.join(POLICIES), p)
    }

    pub fn append_registry(&self, r: &RegistryRecord) -> Result<(), TpkgError> {
        append_line(&self.registry_path(), r)
    }

    pub fn append_request(&self, r: &IdentityRequest) -> Result<(), TpkgError> {
        append_line(&self.dir.join(REQUESTS), r)
    }

    /// Every file under the domain directory.
    pub fn files(&self) -> Vec<PathBuf> {
        fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
            if let Ok(entries) = fs::read_dir(dir) {
                for e in entries.flatten() {
                    let p = e.path();
                    if p.is_dir() {
                        walk(&p, out);
                    } else {
                        out.push(p);
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.dir, &mut out);
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::{Epoch, KemParams};
    use crate::tpkg::{tpkg_setup, Issuer, ManualClock, Principal, PrincipalKind, Usage};
    use base64::Engine;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::Arc;

    #[test]
    fn dir_names_are_flat() {
        assert_eq!(dir_name("ibe.kubernetes.io/apiserver"), "ibe.kubernetes.io_apiserver");
    }

    #[test]
    fn persisted_state_survives_reopen_and_holds_no_keys() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let clock = Arc::new(ManualClock::new(1_000));
        let (mpk, set, genesis) = tpkg_setup("ibe.test/a", &KemParams::compact(), 3, 2, [3; 32], &mut rng, 1_000).unwrap();
        let policy = IssuerPolicy::operator_only("ibe.test/a", &["*"], Epoch::Counter(1));
        let store = DomainStore::create(tmp.path().join("a"), &mpk, &policy, &genesis, &set).unwrap();
        let mut issuer = Issuer::open(store.clone(), clock.clone()).unwrap();
        let admin = Principal::new(PrincipalKind::Admin, "root", &["system:masters"]);
        let d = issuer.provision("svc-a", &[Usage::Server], 3600, &admin, &set.shares).unwrap();
        issuer.epoch_increment(&admin).unwrap();
        let pending = issuer.submit_request("svc-b", [Usage::Client].into(), 60, &admin).unwrap();

        let reopened = Issuer::open(DomainStore::open(tmp.path().join("a")).unwrap(), clock).unwrap();
        assert_eq!(reopened.registry().records(), issuer.registry().records());
        assert_eq!(reopened.policy().current_epoch, Epoch::Counter(2));
        assert_eq!(reopened.request(&pending.name).unwrap(), &pending);

        let key = d.private_key.to_bytes();
        let needles = [
            key[key.len() - 64..].to_vec(),
            base64::engine::general_purpose::STANDARD.encode(&key).into_bytes()[1000..1064].to_vec(),
            hex::encode(&key[key.len() - 64..]).into_bytes(),
        ];
        for f in store.files() {
            let bytes = fs::read(&f).unwrap();
            for n in &needles {
                assert!(!bytes.windows(n.len()).any(|w| w == &n[..]), "key material in {}", f.display());
            }
        }
        let (shares, bad) = store.load_shares();
        assert_eq!((shares.len(), bad.len()), (3, 0));
    }

    #[test]
    fn refuses_to_overwrite() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (mpk, set, genesis) = tpkg_setup("d", &KemParams::compact(), 1, 1, [3; 32], &mut rng, 0).unwrap();
        let policy = IssuerPolicy::operator_only("d", &["*"], Epoch::Counter(1));
        DomainStore::create(tmp.path(), &mpk, &policy, &genesis, &set).unwrap();
        assert!(DomainStore::create(tmp.path(), &mpk, &policy, &genesis, &set).is_err());
    }
}
