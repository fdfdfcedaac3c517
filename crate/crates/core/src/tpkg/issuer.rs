use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::auth::Principal;
use super::policy::{IssuerPolicy, Usage};
use super::registry::{RecordStatus, Registry, RegistryEvent, RegistryRecord};
use super::shares::{quorum_reconstruct, Share};
use super::store::DomainStore;
use super::{iso8601, Clock, TpkgError};
use crate::kem::{extract, Epoch, IdentityPrivateKey, IdentityString, MasterPublicKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestStatus {
    Pending,
    Approved,
    Denied,
    Issued,
}

pub type IdentityStatus = RecordStatus;

/// The IBE analogue of a certificate signing request.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityRequest {
    /// `req-N`, unique within the issuer.
    pub name: String,
    pub issuer: String,
    pub identity: IdentityString,
    pub usage: BTreeSet<Usage>,
    pub expiration_seconds: u64,
    pub principal: String,
    pub status: RequestStatus,
    pub created: i64,
}

/// An extracted key on its way to the requester. Never persisted.
#[derive(Clone, Debug)]
pub struct KeyDelivery {
    pub identity: IdentityString,
    pub private_key: IdentityPrivateKey,
    pub mpk: Arc<MasterPublicKey>,
    /// Unix seconds.
    pub expiration: i64,
}

/// One trust domain's issuer: policy, request queue and registry.
pub struct Issuer {
    mpk: Arc<MasterPublicKey>,
    policy: IssuerPolicy,
    registry: Registry,
    requests: BTreeMap<u64, IdentityRequest>,
    clock: Arc<dyn Clock>,
    store: Option<DomainStore>,
}

fn request_number(name: &str) -> Option<u64> {
    name.strip_prefix("req-")?.parse().ok()
}

impl Issuer {
    pub fn new(
        mpk: Arc<MasterPublicKey>,
        policy: IssuerPolicy,
        genesis: RegistryRecord,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, TpkgError> {
        policy.validate()?;
        let registry = Registry::from_records(vec![genesis])?;
        Ok(Issuer { mpk, policy, registry, requests: BTreeMap::new(), clock, store: None })
    }

    /// Loads an issuer from disk, verifying the registry chain.
    pub fn open(store: DomainStore, clock: Arc<dyn Clock>) -> Result<Self, TpkgError> {
        let mpk = Arc::new(store.load_mpk()?);
        let policy = store.load_policy()?;
        policy.validate()?;
        let registry = Registry::from_records(store.load_registry()?)?;
        let requests = store
            .load_requests()?
            .into_iter()
            .filter_map(|r| request_number(&r.name).map(|n| (n, r)))
            .collect();
        Ok(Issuer { mpk, policy, registry, requests, clock, store: Some(store) })
    }

    pub fn store(&self) -> Option<&DomainStore> {
        self.store.as_ref()
    }

    pub fn domain(&self) -> &str {
        &self.policy.trust_domain
    }

    pub fn mpk(&self) -> &Arc<MasterPublicKey> {
        &self.mpk
    }

    pub fn policy(&self) -> &IssuerPolicy {
        &self.policy
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn requests(&self) -> impl Iterator<Item = &IdentityRequest> {
        self.requests.values()
    }

    pub fn request(&self, name: &str) -> Result<&IdentityRequest, TpkgError> {
        request_number(name)
            .and_then(|n| self.requests.get(&n))
            .ok_or_else(|| TpkgError::UnknownRequest(name.to_owned()))
    }

    pub fn now(&self) -> i64 {
        self.clock.now()
    }

    fn append(&mut self, rec: RegistryRecord) -> Result<RegistryRecord, TpkgError> {
        let rec = self.registry.append(rec);
        if let Some(s) = &self.store {
            s.append_registry(&rec)?;
        }
        Ok(rec)
    }

    fn save_request(&self, n: u64) -> Result<(), TpkgError> {
        if let Some(s) = &self.store {
            s.append_request(&self.requests[&n])?;
        }
        Ok(())
    }

    fn save_policy(&self) -> Result<(), TpkgError> {
        if let Some(s) = &self.store {
            s.append_policy(&self.policy)?;
        }
        Ok(())
    }

    /// Reads `raw` as a canonical identity; a bare name gets the current epoch.
    pub fn resolve_identity(&self, raw: &str) -> Result<IdentityString, TpkgError> {
        if let Ok(id) = IdentityString::parse(raw) {
            return Ok(id);
        }
        Ok(IdentityString::parse(&format!("{raw}.{}", self.policy.current_epoch))?)
    }

    fn record(&self, event: RegistryEvent, identity: &str, principal: &str, epoch: &str) -> RegistryRecord {
        RegistryRecord::new(event, self.domain(), identity, principal, self.now(), epoch)
    }

    pub fn submit_request(
        &mut self,
        identity: &str,
        usage: BTreeSet<Usage>,
        expiration_seconds: u64,
        principal: &Principal,
    ) -> Result<IdentityRequest, TpkgError> {
        let id = self.resolve_identity(identity)?;
        let auto = self.policy.evaluate(principal, &id.name(), &usage, expiration_seconds)?;
        if !self.policy.epoch_valid(id.epoch()) {
            return Err(TpkgError::EpochInvalid(format!(
                "{} is outside the window ending at {}",
                id.epoch(),
                self.policy.current_epoch
            )));
        }
        let n = self.requests.keys().next_back().map_or(1, |k| k + 1);
        let req = IdentityRequest {
            name: format!("req-{n}"),
            issuer: self.domain().to_owned(),
            identity: id.clone(),
            usage,
            expiration_seconds,
            principal: principal.subject.clone(),
            status: if auto { RequestStatus::Approved } else { RequestStatus::Pending },
            created: self.now(),
        };
        self.requests.insert(n, req.clone());
        self.save_request(n)?;
        if auto {
            let rec = self
                .record(RegistryEvent::RequestApproved, &id.to_string(), &principal.subject, &id.epoch().to_string())
                .with_request(&req.name)
                .with_detail("auto-approved");
            self.append(rec)?;
        }
        log::info!("{}: {} requested {} -> {:?}", self.domain(), principal.subject, id, req.status);
        Ok(req)
    }

    fn decide(&mut self, name: &str, approver: &Principal, to: RequestStatus) -> Result<RequestStatus, TpkgError> {
        if !self.policy.can_approve(approver) {
            return Err(TpkgError::Forbidden(format!("{} may not approve for {}", approver.subject, self.domain())));
        }
        let n = request_number(name).filter(|n| self.requests.contains_key(n));
        let n = n.ok_or_else(|| TpkgError::UnknownRequest(name.to_owned()))?;
        let req = self.requests.get_mut(&n).expect("checked");
        if req.status != RequestStatus::Pending {
            return Err(TpkgError::InvalidTransition { from: format!("{:?}", req.status), to: format!("{to:?}") });
        }
        req.status = to;
        let req = req.clone();
        self.save_request(n)?;
        let event = if to == RequestStatus::Approved { RegistryEvent::RequestApproved } else { RegistryEvent::RequestDenied };
        let rec = self
            .record(event, &req.identity.to_string(), &req.principal, &req.identity.epoch().to_string())
            .with_request(&req.name)
            .with_detail(format!("by {}", approver.subject));
        self.append(rec)?;
        Ok(to)
    }

    pub fn approve_request(&mut self, name: &str, approver: &Principal) -> Result<RequestStatus, TpkgError> {
        self.decide(name, approver, RequestStatus::Approved)
    }

    pub fn deny_request(&mut self, name: &str, approver: &Principal) -> Result<RequestStatus, TpkgError> {
        self.decide(name, approver, RequestStatus::Denied)
    }

    /// Extracts the key for an approved request from a share quorum. Each
    /// request yields at most one delivery.
    pub fn extract_and_deliver(&mut self, name: &str, shares: &[Share]) -> Result<KeyDelivery, TpkgError> {
        let req = self.request(name)?.clone();
        match req.status {
            RequestStatus::Approved => {}
            RequestStatus::Issued => return Err(TpkgError::AlreadyIssued(name.to_owned())),
            _ => return Err(TpkgError::NotApproved(name.to_owned())),
        }
        let id = req.identity.clone();
        if self.policy.blocklist.contains(&id.name()) {
            return Err(TpkgError::Blocklisted(id.name()));
        }
        if !self.policy.epoch_valid(id.epoch()) {
            return Err(TpkgError::EpochExpired(id.to_string()));
        }
        let mpk = self.mpk.clone();
        let key = quorum_reconstruct(shares, &mpk, |msk| extract(msk, &mpk, &id))??;
        let n = request_number(name).expect("request exists");
        self.requests.get_mut(&n).expect("request exists").status = RequestStatus::Issued;
        self.save_request(n)?;
        let now = self.now();
        let expiration = now + req.expiration_seconds as i64;
        let usage: Vec<String> = req.usage.iter().map(|u| format!("{u:?}").to_lowercase()).collect();
        let rec = self
            .record(RegistryEvent::Issued, &id.to_string(), &req.principal, &id.epoch().to_string())
            .with_status(RecordStatus::Active)
            .with_request(name)
            .with_detail(format!("usage={} expires={}", usage.join(","), iso8601(expiration)));
        self.append(rec)?;
        Ok(KeyDelivery { identity: id, private_key: key, mpk, expiration })
    }

    /// Request, approve and extract in one step for operator-provisioned
    /// infrastructure identities.
    pub fn provision(
        &mut self,
        identity: &str,
        usage: &[Usage],
        expiration_seconds: u64,
        operator: &Principal,
        shares: &[Share],
    ) -> Result<KeyDelivery, TpkgError> {
        let req = self.submit_request(identity, usage.iter().copied().collect(), expiration_seconds, operator)?;
        if req.status == RequestStatus::Pending {
            self.approve_request(&req.name, operator)?;
        }
        self.extract_and_deliver(&req.name, shares)
    }

    fn was_issued(&self, name: &str) -> bool {
        self.registry
            .records()
            .iter()
            .any(|r| r.event == RegistryEvent::Issued && IdentityString::parse(&r.identity).is_ok_and(|i| i.name() == name))
    }

    /// Blocklists an identity name in every epoch.
    pub fn revoke_identity(&mut self, identity: &str, by: &Principal) -> Result<RegistryRecord, TpkgError> {
        if !self.policy.can_approve(by) {
            return Err(TpkgError::Forbidden(format!("{} may not revoke in {}", by.subject, self.domain())));
        }
        let name = IdentityString::parse(identity).map(|i| i.name()).unwrap_or_else(|_| identity.to_owned());
        if !self.was_issued(&name) {
            return Err(TpkgError::UnknownIdentity(identity.to_owned()));
        }
        self.policy.blocklist.insert(name.clone());
        self.save_policy()?;
        let rec = self
            .record(RegistryEvent::Revoked, &name, &by.subject, "*")
            .with_status(RecordStatus::Revoked)
            .with_detail("blocklisted");
        self.append(rec)
    }

    pub fn epoch_increment(&mut self, by: &Principal) -> Result<Epoch, TpkgError> {
        if !self.policy.can_approve(by) {
            return Err(TpkgError::Forbidden(format!("{} may not rotate {}", by.subject, self.domain())));
        }
        let old = self.policy.current_epoch;
        self.policy.current_epoch = old.next();
        self.save_policy()?;
        let rec = self
            .record(RegistryEvent::EpochIncremented, "", &by.subject, &self.policy.current_epoch.to_string())
            .with_detail(format!("from {old} window {}", self.policy.rotation_window));
        self.append(rec)?;
        Ok(self.policy.current_epoch)
    }

    pub fn check_validity(&self, identity: &IdentityString, now: i64) -> Result<IdentityStatus, TpkgError> {
        let canonical = identity.to_string();
        let issued = self
            .registry
            .records()
            .iter()
            .rev()
            .find(|r| r.event == RegistryEvent::Issued && r.identity == canonical)
            .ok_or_else(|| TpkgError::UnknownIdentity(canonical.clone()))?;
        if self.policy.blocklist.contains(&identity.name()) {
            return Ok(RecordStatus::Revoked);
        }
        if !self.policy.epoch_valid(identity.epoch()) {
            return Ok(RecordStatus::Expired);
        }
        let lifetime = issued
            .request_id
            .as_deref()
            .and_then(|n| self.request(n).ok())
            .map_or(0, |r| r.expiration_seconds as i64);
        if now > issued.issuance_time + lifetime {
            return Ok(RecordStatus::Expired);
        }
        Ok(RecordStatus::Active)
    }

    /// Appends an `Expired` status record for an identity that has lapsed.
    pub fn mark_expired(&mut self, identity: &IdentityString) -> Result<Option<RegistryRecord>, TpkgError> {
        if self.check_validity(identity, self.now())? != RecordStatus::Expired {
            return Ok(None);
        }
        let rec = self
            .record(RegistryEvent::Issued, &identity.to_string(), "tpkg", &identity.epoch().to_string())
            .with_status(RecordStatus::Expired)
            .with_detail("superseded: expired");
        self.append(rec).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::{derive_public, KemParams};
    use crate::tpkg::{tpkg_setup, ManualClock, PrincipalKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        issuer: Issuer,
        shares: Vec<Share>,
        clock: Arc<ManualClock>,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let clock = Arc::new(ManualClock::new(1_750_000_000));
        let (mpk, set, genesis) =
            tpkg_setup("ibe.kubernetes.io/apiserver", &KemParams::compact(), 3, 2, [5; 32], &mut rng, clock.now()).unwrap();
        let policy = IssuerPolicy::kubernetes_apiserver("prod", Epoch::Counter(1));
        let issuer = Issuer::new(Arc::new(mpk), policy, genesis, clock.clone()).unwrap();
        Fixture { issuer, shares: set.shares.clone(), clock }
    }

    fn kubelet(node: &str) -> Principal {
        Principal::new(PrincipalKind::BootstrapToken, &format!("system:bootstrap:{node}"), &["system:bootstrappers"])
    }

    fn admin() -> Principal {
        Principal::new(PrincipalKind::Admin, "kubernetes-admin", &["system:masters"])
    }

    fn cs() -> BTreeSet<Usage> {
        [Usage::Client, Usage::Server].into()
    }

    #[test]
    fn kubelet_request_is_auto_approved_and_delivered_once() {
        let mut f = fixture();
        let req = f.issuer.submit_request("kubelet:node-01", cs(), 86_400, &kubelet("node-01")).unwrap();
        assert_eq!(req.status, RequestStatus::Approved);
        assert_eq!(req.identity.to_string(), "kubelet:node-01.1");
        assert_eq!(req.expiration_seconds, 86_400);
        let d = f.issuer.extract_and_deliver(&req.name, &f.shares[1..]).unwrap();
        assert!(d.private_key.verify(&d.mpk));
        let pk = derive_public(&d.mpk, &d.identity);
        assert_eq!(pk.identity(), d.private_key.identity());
        assert_eq!(
            f.issuer.extract_and_deliver(&req.name, &f.shares).unwrap_err(),
            TpkgError::AlreadyIssued(req.name.clone())
        );
        let issued = f.issuer.registry().records().iter().filter(|r| r.event == RegistryEvent::Issued).count();
        assert_eq!(issued, 1);
        f.issuer.registry().verify().unwrap();
    }

    #[test]
    fn bootstrap_principal_cannot_take_apiserver_name() {
        let mut f = fixture();
        let err = f.issuer.submit_request("kube-apiserver", cs(), 3600, &kubelet("node-01")).unwrap_err();
        assert!(matches!(err, TpkgError::PolicyViolation(_)));
        let err = f.issuer.submit_request("controller-manager", cs(), 3600, &kubelet("node-01")).unwrap_err();
        assert!(matches!(err, TpkgError::PolicyViolation(_)));
    }

    #[test]
    fn manual_approval_workflow() {
        let mut f = fixture();
        let req = f.issuer.submit_request("kube-apiserver", cs(), 3600, &admin()).unwrap();
        assert_eq!(req.status, RequestStatus::Pending);
        assert_eq!(f.issuer.extract_and_deliver(&req.name, &f.shares).unwrap_err(), TpkgError::NotApproved(req.name.clone()));
        assert!(matches!(f.issuer.approve_request(&req.name, &kubelet("x")), Err(TpkgError::Forbidden(_))));
        let before = f.issuer.registry().len();
        assert_eq!(f.issuer.approve_request(&req.name, &admin()).unwrap(), RequestStatus::Approved);
        assert_eq!(f.issuer.registry().len(), before + 1);
        assert!(matches!(f.issuer.approve_request(&req.name, &admin()), Err(TpkgError::InvalidTransition { .. })));
        assert!(matches!(f.issuer.approve_request("req-99", &admin()), Err(TpkgError::UnknownRequest(_))));
    }

    #[test]
    fn denied_request_never_extracts() {
        let mut f = fixture();
        let req = f.issuer.submit_request("scheduler", cs(), 3600, &admin()).unwrap();
        f.issuer.deny_request(&req.name, &admin()).unwrap();
        assert!(matches!(f.issuer.approve_request(&req.name, &admin()), Err(TpkgError::InvalidTransition { .. })));
        assert_eq!(f.issuer.extract_and_deliver(&req.name, &f.shares).unwrap_err(), TpkgError::NotApproved(req.name));
    }

    #[test]
    fn threshold_enforced_at_extraction() {
        let mut f = fixture();
        let req = f.issuer.submit_request("kubelet:node-02", cs(), 60, &kubelet("node-02")).unwrap();
        assert_eq!(
            f.issuer.extract_and_deliver(&req.name, &f.shares[..1]).unwrap_err(),
            TpkgError::ThresholdNotMet { have: 1, need: 2 }
        );
        assert_eq!(f.issuer.request(&req.name).unwrap().status, RequestStatus::Approved);
    }

    #[test]
    fn epoch_window_and_expiry() {
        let mut f = fixture();
        let d = f.issuer.provision("kube-apiserver", &[Usage::Server], 86_400 * 10, &admin(), &f.shares).unwrap();
        let now = f.clock.now();
        assert_eq!(f.issuer.check_validity(&d.identity, now).unwrap(), RecordStatus::Active);
        f.issuer.epoch_increment(&admin()).unwrap();
        assert_eq!(f.issuer.check_validity(&d.identity, now).unwrap(), RecordStatus::Active);
        let pending = f.issuer.submit_request("kubelet:node-03.2", cs(), 60, &kubelet("node-03")).unwrap();
        let stale = f.issuer.submit_request("kubelet:node-04.1", cs(), 60, &kubelet("node-04")).unwrap();
        f.issuer.epoch_increment(&admin()).unwrap();
        assert_eq!(f.issuer.check_validity(&d.identity, now).unwrap(), RecordStatus::Expired);
        assert!(f.issuer.extract_and_deliver(&pending.name, &f.shares).is_ok());
        assert_eq!(
            f.issuer.extract_and_deliver(&stale.name, &f.shares).unwrap_err(),
            TpkgError::EpochExpired("kubelet:node-04.1".into())
        );
        assert!(matches!(
            f.issuer.submit_request("kubelet:node-05.1", cs(), 60, &kubelet("node-05")),
            Err(TpkgError::EpochInvalid(_))
        ));
        assert!(f.issuer.mark_expired(&d.identity).unwrap().is_some());
    }

    #[test]
    fn lifetime_expiry() {
        let mut f = fixture();
        let d = f.issuer.provision("scheduler", &[Usage::Client], 100, &admin(), &f.shares).unwrap();
        assert_eq!(f.issuer.check_validity(&d.identity, f.clock.now() + 100).unwrap(), RecordStatus::Active);
        assert_eq!(f.issuer.check_validity(&d.identity, f.clock.now() + 101).unwrap(), RecordStatus::Expired);
    }

    #[test]
    fn revocation_dominates_every_epoch() {
        let mut f = fixture();
        let d = f.issuer.provision("kubelet:node-01", &[Usage::Client], 3600, &admin(), &f.shares).unwrap();
        f.issuer.revoke_identity(&d.identity.to_string(), &admin()).unwrap();
        assert_eq!(f.issuer.check_validity(&d.identity, f.clock.now()).unwrap(), RecordStatus::Revoked);
        assert!(matches!(
            f.issuer.submit_request("kubelet:node-01", cs(), 60, &kubelet("node-01")),
            Err(TpkgError::Blocklisted(_))
        ));
        f.issuer.epoch_increment(&admin()).unwrap();
        assert!(matches!(
            f.issuer.submit_request("kubelet:node-01.2", cs(), 60, &kubelet("node-01")),
            Err(TpkgError::Blocklisted(_))
        ));
    }

    #[test]
    fn revoke_between_approval_and_extraction() {
        let mut f = fixture();
        f.issuer.provision("etcd-peer-1", &[Usage::Peer], 3600, &admin(), &f.shares).unwrap();
        let req = f.issuer.submit_request("etcd-peer-1", [Usage::Peer].into(), 3600, &admin()).unwrap();
        f.issuer.approve_request(&req.name, &admin()).unwrap();
        f.issuer.revoke_identity("etcd-peer-1", &admin()).unwrap();
        assert!(matches!(f.issuer.extract_and_deliver(&req.name, &f.shares), Err(TpkgError::Blocklisted(_))));
    }

    #[test]
    fn unknown_identity_errors() {
        let mut f = fixture();
        let id = IdentityString::parse("ghost.1").unwrap();
        assert_eq!(f.issuer.check_validity(&id, 0).unwrap_err(), TpkgError::UnknownIdentity("ghost.1".into()));
        assert!(matches!(f.issuer.revoke_identity("ghost", &admin()), Err(TpkgError::UnknownIdentity(_))));
    }
}
