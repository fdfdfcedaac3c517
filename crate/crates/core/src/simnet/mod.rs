//! Simulated deployments: a Kubernetes control plane and a 5G core whose
//! components obtain identity keys from T-PKG domains and talk IBE-TLS over
//! in-process channels or loopback TCP.

mod channel;
mod fiveg;
mod k8s;
mod lifecycle;
mod log;
mod node;
mod scenario;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::handshake::{ClientAuth, ClientConfig, HandshakeError, ServerConfig};
use crate::kem::{Epoch, IdentityString, KemError, KemParams, MasterPublicKey};
use crate::tpkg::{
    tpkg_setup, verify_chain, Clock, Issuer, IssuerPolicy, ManualClock, Principal, TokenAuthority, TpkgError, TpkgService,
    Usage,
};

pub use channel::{Channel, ConnectFailure, SentMessage};
pub use fiveg::{DeliveryPath, FiveGCore, NfProfile, ServiceRegistry, FIVEG_EPOCH, PLMN};
pub use k8s::{ControlPlanePair, K8sCluster, APISERVER_DOMAIN, CONTROL_PLANE_PAIRS, ETCD_DOMAIN, FRONT_PROXY_DOMAIN};
pub use lifecycle::LifecycleResolver;
pub use log::{LogEntry, StepOutcome, TranscriptLog};
pub use node::{secret_name, NfType, NodeSecret, Role, SecretStore, SimNode};
pub use scenario::{execute, rotate_epoch_scenario, run_scenario, ScenarioRun, Deployment, Expect, RotationCheck, RotationReport, Scenario, Step, Via};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Kem(#[from] KemError),
    #[error(transparent)]
    Tpkg(#[from] TpkgError),
    #[error("handshake aborted: {0}")]
    Handshake(#[from] HandshakeError),
    #[error("api {status} {kind}: {message}")]
    Api { status: u16, kind: String, message: String },
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{node} holds no key for {identity} in {domain}")]
    NoKey { node: String, domain: String, identity: String },
    #[error("{node} does not trust domain {domain}")]
    Untrusted { node: String, domain: String },
    #[error("secret: {0}")]
    Secret(String),
    #[error("scenario: {0}")]
    Script(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// The handshake error behind an aborted connection, if that is what this is.
    pub fn handshake(&self) -> Option<&HandshakeError> {
        match self {
            SimError::Handshake(e) => Some(e),
            _ => None,
        }
    }
}

/// `cluster.namespace.service.epoch`
pub fn k8s_identity(cluster: &str, namespace: &str, service: &str, epoch: &str) -> Result<IdentityString, KemError> {
    IdentityString::new(&[cluster, namespace, service], epoch.parse()?)
}

/// `PLMN.TYPE.INSTANCE.epoch`
pub fn nf_identity(plmn: &str, nf_type: &str, instance: &str, epoch: &str) -> Result<IdentityString, KemError> {
    IdentityString::new(&[plmn, nf_type, instance], epoch.parse()?)
}

/// Deterministic per-use seeds derived from one scenario seed.
#[derive(Clone, Debug)]
pub struct SeedStream {
    base: u64,
    counter: u64,
}

impl SeedStream {
    pub fn new(base: u64) -> Self {
        SeedStream { base, counter: 0 }
    }

    pub fn next(&mut self) -> [u8; 32] {
        self.counter += 1;
        Sha256::new()
            .chain_update(b"ibe-simnet")
            .chain_update(self.base.to_be_bytes())
            .chain_update(self.counter.to_be_bytes())
            .finalize()
            .into()
    }
}

/// A connection with both ends configured, ready to run on any thread.
pub struct PendingConnect {
    label: [String; 4],
    client: ClientConfig,
    server: ServerConfig,
    seeds: ([u8; 32], [u8; 32]),
}

pub type ConnectResult = ([String; 4], Result<Channel, Box<ConnectFailure>>);

impl PendingConnect {
    pub fn run(self) -> ConnectResult {
        (self.label, Channel::open(self.client, self.server, self.seeds.0, self.seeds.1))
    }
}

/// Start of simulated time: 2025-12-31T00:00:00Z.
pub const SIM_START: i64 = 1_767_139_200;

/// Everything one simulated deployment shares: T-PKG domains behind one
/// service, the nodes, simulated time and the transcript.
pub struct World {
    pub service: Arc<TpkgService>,
    pub clock: Arc<ManualClock>,
    pub params: KemParams,
    pub log: TranscriptLog,
    pub operator: Principal,
    nodes: BTreeMap<String, SimNode>,
    seeds: SeedStream,
}

impl World {
    pub fn new(seed: u64, params: KemParams, operator: Principal) -> Self {
        let mut seeds = SeedStream::new(seed);
        let tokens = TokenAuthority::new(seeds.next());
        World {
            service: Arc::new(TpkgService::new(tokens)),
            clock: Arc::new(ManualClock::new(SIM_START)),
            params,
            log: TranscriptLog::new(),
            operator,
            nodes: BTreeMap::new(),
            seeds,
        }
    }

    pub fn seed(&mut self) -> [u8; 32] {
        self.seeds.next()
    }

    /// Runs T-PKG setup for a domain with three share holders and threshold two.
    pub fn add_domain(&mut self, policy: IssuerPolicy) -> Result<Arc<MasterPublicKey>, SimError> {
        let mut master = self.seed();
        master[0] &= 0x7f;
        let mut rng = ChaCha20Rng::from_seed(self.seed());
        let domain = policy.trust_domain.clone();
        let (mpk, set, genesis) = tpkg_setup(&domain, &self.params, 3, 2, master, &mut rng, self.clock.now())?;
        let mpk = Arc::new(mpk);
        let issuer = Issuer::new(mpk.clone(), policy, genesis, self.clock.clone())?;
        Arc::get_mut(&mut self.service)
            .expect("domains are added before the service is shared")
            .add_domain(issuer, set.shares.clone());
        Ok(mpk)
    }

    pub fn add_node(&mut self, node: SimNode) {
        self.nodes.insert(node.name.clone(), node);
    }

    pub fn node(&self, name: &str) -> Result<&SimNode, SimError> {
        self.nodes.get(name).ok_or_else(|| SimError::UnknownNode(name.to_owned()))
    }

    pub fn node_mut(&mut self, name: &str) -> Result<&mut SimNode, SimError> {
        self.nodes.get_mut(name).ok_or_else(|| SimError::UnknownNode(name.to_owned()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &SimNode> {
        self.nodes.values()
    }

    pub fn policy(&self, domain: &str) -> Result<IssuerPolicy, SimError> {
        Ok(self.service.with_issuer(domain, |i| i.policy().clone())?)
    }

    pub fn current_epoch(&self, domain: &str) -> Result<Epoch, SimError> {
        Ok(self.policy(domain)?.current_epoch)
    }

    pub fn resolver(&self, domain: &str) -> Result<Arc<LifecycleResolver>, SimError> {
        Ok(Arc::new(LifecycleResolver::new(&self.policy(domain)?)))
    }

    /// Operator-provisioned key for infrastructure that does not bootstrap.
    pub fn provision(&mut self, node: &str, domain: &str, identity: &str, usage: &[Usage]) -> Result<IdentityString, SimError> {
        let operator = self.operator.clone();
        let res = self.service.provision(domain, identity, usage, 86_400 * 365, &operator);
        let delivery = match res {
            Ok(d) => d,
            Err(e) => {
                self.log.push("provision", domain, &operator.subject, node, StepOutcome::Denied, e.to_string(), None);
                return Err(e.into());
            }
        };
        let id = self.node_mut(node)?.install(domain, delivery)?;
        self.log.push("provision", domain, &operator.subject, node, StepOutcome::Ok, id.to_string(), None);
        Ok(id)
    }

    /// Identity the responder advertises: the one it holds, or the current
    /// epoch's if it holds none.
    pub fn advertised(&self, domain: &str, node: &str, name: &str) -> Result<IdentityString, SimError> {
        match self.node(node)?.identity(domain, name) {
            Ok(id) => Ok(id),
            Err(_) => Ok(IdentityString::parse(&format!("{name}.{}", self.current_epoch(domain)?))?),
        }
    }

    /// Opens a mutual IBE-TLS connection (or server-only when `own` is None)
    /// and logs the outcome.
    pub fn connect(
        &mut self,
        domain: &str,
        initiator: &str,
        own: Option<&str>,
        responder: &str,
        responder_name: &str,
        expected: Option<IdentityString>,
    ) -> Result<Channel, SimError> {
        let pending = self.prepare_connect(domain, initiator, own, responder, responder_name, expected)?;
        let result = pending.run();
        self.finish_connect(result)
    }

    /// Configures both ends and draws the seeds, without running anything.
    pub fn prepare_connect(
        &mut self,
        domain: &str,
        initiator: &str,
        own: Option<&str>,
        responder: &str,
        responder_name: &str,
        expected: Option<IdentityString>,
    ) -> Result<PendingConnect, SimError> {
        let expected = match expected {
            Some(e) => e,
            None => self.advertised(domain, responder, responder_name)?,
        };
        let resolver = self.resolver(domain)?;
        let client = self.node(initiator)?.client_config(domain, expected.clone(), own, Some(resolver.clone()))?;
        let auth = if own.is_some() { ClientAuth::Required } else { ClientAuth::Optional };
        let server = match self.node(responder)?.server_config(domain, responder_name, auth, Some(resolver)) {
            Ok(c) => c,
            Err(e) => {
                self.log.push("connect", domain, initiator, responder, StepOutcome::Error, e.to_string(), None);
                return Err(e);
            }
        };
        let claimed = client.claimed().map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        Ok(PendingConnect {
            label: [domain.to_owned(), initiator.to_owned(), responder.to_owned(), format!("{claimed} -> {expected}")],
            client,
            server,
            seeds: (self.seed(), self.seed()),
        })
    }

    pub fn finish_connect(&mut self, (label, result): ConnectResult) -> Result<Channel, SimError> {
        let [domain, initiator, responder, detail] = label;
        match result {
            Ok(ch) => {
                let m = ch.metrics().ok();
                self.log.push("connect", &domain, &initiator, &responder, StepOutcome::Ok, detail, m);
                Ok(ch)
            }
            Err(f) => {
                let detail = format!("{detail}: {} ({:?})", f.error, f.error.alert());
                self.log.push("connect", &domain, &initiator, &responder, StepOutcome::Aborted, detail, None);
                Err(f.error.into())
            }
        }
    }

    pub fn revoke(&mut self, domain: &str, identity: &str) -> Result<(), SimError> {
        let operator = self.operator.clone();
        let res = self.service.with_issuer(domain, |i| i.revoke_identity(identity, &operator))?;
        let outcome = if res.is_ok() { StepOutcome::Ok } else { StepOutcome::Denied };
        let detail = res.as_ref().map(|r| format!("record {}", r.index)).unwrap_or_else(|e| e.to_string());
        self.log.push("revoke", domain, &operator.subject, identity, outcome, detail, None);
        res.map(|_| ()).map_err(Into::into)
    }

    pub fn bump_epoch(&mut self, domain: &str) -> Result<Epoch, SimError> {
        let operator = self.operator.clone();
        let e = self.service.with_issuer(domain, |i| i.epoch_increment(&operator))??;
        self.log.push("rotate", domain, &operator.subject, "", StepOutcome::Ok, format!("current epoch {e}"), None);
        Ok(e)
    }

    /// Verifies every domain's hash chain and logs one entry per domain.
    pub fn verify_registries(&mut self) -> Result<(), SimError> {
        let domains: Vec<String> = self.service.domains().map(str::to_owned).collect();
        let mut first_err = None;
        for d in domains {
            let snap = self.service.registry_snapshot(&d)?;
            match verify_chain(&snap) {
                Ok(()) => {
                    self.log.push("registry-verify", &d, "", "", StepOutcome::Ok, format!("{} records", snap.len()), None);
                }
                Err(e) => {
                    self.log.push("registry-verify", &d, "", "", StepOutcome::Error, e.to_string(), None);
                    first_err.get_or_insert(e);
                }
            }
        }
        first_err.map_or(Ok(()), |e| Err(e.into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_builders() {
        assert_eq!(
            k8s_identity("prod-us-west", "payments", "checkout-api", "20250101").unwrap().to_string(),
            "prod-us-west.payments.checkout-api.20250101"
        );
        assert_eq!(nf_identity("00101", "AMF", "amf-001", "20250101").unwrap().to_string(), "00101.AMF.amf-001.20250101");
        assert!(matches!(k8s_identity("prod", "", "svc", "1"), Err(KemError::MalformedIdentity(_))));
        assert!(matches!(nf_identity("00101", "AMF", "amf.001", "1"), Err(KemError::MalformedIdentity(_))));
    }

    #[test]
    fn seed_stream_is_deterministic() {
        let (mut a, mut b) = (SeedStream::new(7), SeedStream::new(7));
        assert_eq!(a.next(), b.next());
        assert_ne!(a.next(), SeedStream::new(8).next());
    }
}
