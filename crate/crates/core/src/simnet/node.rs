use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::lifecycle::LifecycleResolver;
use super::SimError;
use crate::handshake::{ClientAuth, ClientConfig, ReplayCache, ServerConfig};
use crate::kem::{IdentityPrivateKey, IdentityString, MasterPublicKey};
use crate::tpkg::{dir_name, KeyDelivery};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NfType {
    AMF,
    SMF,
    UPF,
    NRF,
    UDM,
    AUSF,
    PCF,
    NSSF,
}

impl NfType {
    pub const ALL: [NfType; 8] =
        [NfType::AMF, NfType::SMF, NfType::UPF, NfType::NRF, NfType::UDM, NfType::AUSF, NfType::PCF, NfType::NSSF];

    pub fn as_str(self) -> &'static str {
        match self {
            NfType::AMF => "AMF",
            NfType::SMF => "SMF",
            NfType::UPF => "UPF",
            NfType::NRF => "NRF",
            NfType::UDM => "UDM",
            NfType::AUSF => "AUSF",
            NfType::PCF => "PCF",
            NfType::NSSF => "NSSF",
        }
    }

    /// SBA services this function produces.
    pub fn services(self) -> &'static [&'static str] {
        match self {
            NfType::AMF => &["namf-comm"],
            NfType::SMF => &["nsmf-pdusession"],
            NfType::UPF => &[],
            NfType::NRF => &["nnrf-nfm", "nnrf-disc"],
            NfType::UDM => &["nudm-sdm", "nudm-uecm"],
            NfType::AUSF => &["nausf-auth"],
            NfType::PCF => &["npcf-smpolicycontrol"],
            NfType::NSSF => &["nnssf-nsselection"],
        }
    }
}

impl std::str::FromStr for NfType {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        NfType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| SimError::Script(format!("unknown NF type {s}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    KubeApiserver,
    Kubelet,
    Scheduler,
    ControllerManager,
    Etcd,
    FrontProxy,
    /// A human operator's client, e.g. kubectl.
    Operator,
    Nf(NfType),
}

/// The data keys of a Kubernetes Secret holding an identity key, each value
/// base64 encoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSecret {
    pub id: String,
    #[serde(rename = "secret-key")]
    pub secret_key: String,
    #[serde(rename = "master-public-key")]
    pub master_public_key: String,
}

impl NodeSecret {
    pub fn new(key: &IdentityPrivateKey, mpk: &MasterPublicKey) -> Self {
        NodeSecret {
            id: B64.encode(key.identity().to_string()),
            secret_key: B64.encode(key.to_bytes()),
            master_public_key: B64.encode(mpk.to_bytes()),
        }
    }

    /// Decodes and checks that the key belongs to the identity and mpk.
    pub fn decode(&self) -> Result<(IdentityPrivateKey, MasterPublicKey), SimError> {
        let bad = |e: String| SimError::Secret(e);
        let id = String::from_utf8(B64.decode(&self.id).map_err(|e| bad(e.to_string()))?).map_err(|e| bad(e.to_string()))?;
        let id = IdentityString::parse(&id)?;
        let key = IdentityPrivateKey::from_bytes(&B64.decode(&self.secret_key).map_err(|e| bad(e.to_string()))?)?;
        let mpk = MasterPublicKey::from_bytes(&B64.decode(&self.master_public_key).map_err(|e| bad(e.to_string()))?)?;
        if key.identity() != &id || !key.verify(&mpk) {
            return Err(bad(format!("secret for {id} does not match its key")));
        }
        Ok((key, mpk))
    }
}

struct Entry {
    secret: NodeSecret,
    key: Arc<IdentityPrivateKey>,
}

/// A node's identity keys, one per (domain, epoch-less name). Optionally
/// mirrored to `dir/<domain>/identity-key-<name>.json`.
#[derive(Default)]
pub struct SecretStore {
    entries: BTreeMap<(String, String), Entry>,
    dir: Option<PathBuf>,
}

pub fn secret_name(identity_name: &str) -> String {
    let clean: String = identity_name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '-' }).collect();
    format!("identity-key-{clean}")
}

impl SecretStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        SecretStore { entries: BTreeMap::new(), dir: Some(dir.into()) }
    }

    /// Reads every secret file under `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, SimError> {
        let mut store = SecretStore::with_dir(dir);
        for domain_dir in fs::read_dir(dir)? {
            let domain_dir = domain_dir?.path();
            if !domain_dir.is_dir() {
                continue;
            }
            let domain = domain_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().replace('_', "/");
            for f in fs::read_dir(&domain_dir)? {
                let raw = fs::read(f?.path())?;
                let secret: NodeSecret = serde_json::from_slice(&raw).map_err(|e| SimError::Secret(e.to_string()))?;
                let (key, _) = secret.decode()?;
                let k = (domain.clone(), key.identity().name());
                store.entries.insert(k, Entry { secret, key: Arc::new(key) });
            }
        }
        Ok(store)
    }

    pub fn put(&mut self, domain: &str, key: IdentityPrivateKey, mpk: &MasterPublicKey) -> Result<(), SimError> {
        let secret = NodeSecret::new(&key, mpk);
        let name = key.identity().name();
        if let Some(dir) = &self.dir {
            let d = dir.join(dir_name(domain));
            fs::create_dir_all(&d)?;
            let body = serde_json::to_vec_pretty(&secret).map_err(|e| SimError::Secret(e.to_string()))?;
            fs::write(d.join(format!("{}.json", secret_name(&name))), body)?;
        }
        self.entries.insert((domain.to_owned(), name), Entry { secret, key: Arc::new(key) });
        Ok(())
    }

    pub fn key(&self, domain: &str, name: &str) -> Option<Arc<IdentityPrivateKey>> {
        self.entries.get(&(domain.to_owned(), name.to_owned())).map(|e| e.key.clone())
    }

    pub fn secret(&self, domain: &str, name: &str) -> Option<&NodeSecret> {
        self.entries.get(&(domain.to_owned(), name.to_owned())).map(|e| &e.secret)
    }

    pub fn remove(&mut self, domain: &str, name: &str) -> bool {
        self.entries.remove(&(domain.to_owned(), name.to_owned())).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A simulated machine: trusted master public keys per domain plus whatever
/// identity keys it has been issued.
pub struct SimNode {
    pub name: String,
    pub role: Role,
    pub trust: BTreeMap<String, Arc<MasterPublicKey>>,
    pub secrets: SecretStore,
    pub replay_cache: Arc<ReplayCache>,
}

impl SimNode {
    pub fn new(name: &str, role: Role) -> Self {
        SimNode {
            name: name.to_owned(),
            role,
            trust: BTreeMap::new(),
            secrets: SecretStore::in_memory(),
            replay_cache: Arc::new(ReplayCache::new()),
        }
    }

    pub fn trusting(mut self, domain: &str, mpk: Arc<MasterPublicKey>) -> Self {
        self.trust.insert(domain.to_owned(), mpk);
        self
    }

    pub fn mpk(&self, domain: &str) -> Result<Arc<MasterPublicKey>, SimError> {
        self.trust.get(domain).cloned().ok_or_else(|| SimError::Untrusted { node: self.name.clone(), domain: domain.into() })
    }

    /// Stores a delivered key after checking it against the trusted mpk.
    pub fn install(&mut self, domain: &str, delivery: KeyDelivery) -> Result<IdentityString, SimError> {
        let mpk = self.mpk(domain)?;
        if delivery.mpk.params_hash() != mpk.params_hash() || !delivery.private_key.verify(&mpk) {
            return Err(SimError::Secret(format!("{} delivered under a foreign master key", delivery.identity)));
        }
        let id = delivery.identity.clone();
        self.secrets.put(domain, delivery.private_key, &mpk)?;
        Ok(id)
    }

    pub fn key(&self, domain: &str, name: &str) -> Result<Arc<IdentityPrivateKey>, SimError> {
        self.secrets.key(domain, name).ok_or_else(|| SimError::NoKey {
            node: self.name.clone(),
            domain: domain.into(),
            identity: name.into(),
        })
    }

    pub fn identity(&self, domain: &str, name: &str) -> Result<IdentityString, SimError> {
        Ok(self.key(domain, name)?.identity().clone())
    }

    /// Client side towards `server`; mutual when `own` names a held key.
    pub fn client_config(
        &self,
        domain: &str,
        server: IdentityString,
        own: Option<&str>,
        resolver: Option<Arc<LifecycleResolver>>,
    ) -> Result<ClientConfig, SimError> {
        let mut cfg = ClientConfig::new(self.mpk(domain)?, server);
        if let Some(name) = own {
            cfg = cfg.with_key(self.key(domain, name)?);
        }
        cfg.resolver = resolver.map(|r| r as _);
        Ok(cfg)
    }

    /// Server side for one of the node's identities. Fails before any key
    /// has been issued.
    pub fn server_config(
        &self,
        domain: &str,
        name: &str,
        client_auth: ClientAuth,
        resolver: Option<Arc<LifecycleResolver>>,
    ) -> Result<ServerConfig, SimError> {
        let mut cfg = ServerConfig::new(self.mpk(domain)?, self.key(domain, name)?);
        cfg.client_auth = client_auth;
        cfg.resolver = resolver.map(|r| r as _);
        cfg.replay_cache = Some(self.replay_cache.clone());
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::{extract, setup, KemParams};

    fn key(name: &str) -> (MasterPublicKey, IdentityPrivateKey) {
        let (mpk, msk) = setup(&KemParams::compact(), [5; 32]).unwrap();
        let k = extract(&msk, &mpk, &IdentityString::parse(name).unwrap()).unwrap();
        (mpk, k)
    }

    #[test]
    fn no_server_before_issuance() {
        let (mpk, _) = key("kube-apiserver.1");
        let node = SimNode::new("kube-apiserver", Role::KubeApiserver).trusting("d", Arc::new(mpk));
        let r = node.server_config("d", "kube-apiserver", ClientAuth::Optional, None);
        assert!(matches!(r, Err(SimError::NoKey { .. })));
    }

    #[test]
    fn secret_fields_and_file_round_trip() {
        let (mpk, k) = key("kubelet:node-01.1");
        let tmp = tempfile::tempdir().unwrap();
        let mut store = SecretStore::with_dir(tmp.path());
        store.put("ibe.kubernetes.io/apiserver", k, &mpk).unwrap();
        let path = tmp.path().join("ibe.kubernetes.io_apiserver").join("identity-key-kubelet-node-01.json");
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, ["id", "master-public-key", "secret-key"]);
        assert_eq!(B64.decode(v["id"].as_str().unwrap()).unwrap(), b"kubelet:node-01.1");

        let back = SecretStore::load_dir(tmp.path()).unwrap();
        let k = back.key("ibe.kubernetes.io/apiserver", "kubelet:node-01").unwrap();
        assert!(k.verify(&mpk));
    }

    #[test]
    fn tampered_secret_rejected() {
        let (mpk, k) = key("a.1");
        let mut s = NodeSecret::new(&k, &mpk);
        s.id = B64.encode("b.1");
        assert!(s.decode().is_err());
    }

    #[test]
    fn nf_type_parse() {
        assert_eq!("amf".parse::<NfType>().unwrap(), NfType::AMF);
        assert!("XYZ".parse::<NfType>().is_err());
    }
}
