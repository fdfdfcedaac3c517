//! Multi-domain T-PKG service and its JSON request/response surface.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::auth::{Principal, TokenAuthority};
use super::issuer::{IdentityRequest, Issuer, KeyDelivery};
use super::policy::Usage;
use super::registry::RegistryRecord;
use super::shares::Share;
use super::{iso8601, parse_iso8601, TpkgError};
use crate::kem::{IdentityPrivateKey, IdentityString, MasterPublicKey};

pub const API_PREFIX: &str = "/apis/security.k8s.io/v1alpha1";

/// Body of `POST /identityrequests`, under `"spec"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestSpec {
    pub issuer: String,
    pub identity: String,
    pub usage: Vec<Usage>,
    pub expiration_seconds: u64,
}

/// Key delivery as it travels over the wire.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct KeyDeliveryJson {
    pub identity: String,
    pub private_key: String,
    pub mpk: String,
    pub expiration: String,
}

impl KeyDeliveryJson {
    pub fn from_delivery(d: &KeyDelivery) -> Self {
        KeyDeliveryJson {
            identity: d.identity.to_string(),
            private_key: B64.encode(d.private_key.to_bytes()),
            mpk: B64.encode(d.mpk.to_bytes()),
            expiration: iso8601(d.expiration),
        }
    }

    /// Decodes the delivery and checks the key against the carried mpk.
    pub fn into_delivery(self) -> Result<KeyDelivery, TpkgError> {
        let bad = |e: String| TpkgError::Malformed(e);
        let identity = IdentityString::parse(&self.identity)?;
        let private_key = IdentityPrivateKey::from_bytes(&B64.decode(&self.private_key).map_err(|e| bad(e.to_string()))?)?;
        let mpk = MasterPublicKey::from_bytes(&B64.decode(&self.mpk).map_err(|e| bad(e.to_string()))?)?;
        let expiration = parse_iso8601(&self.expiration).ok_or_else(|| bad("expiration is not ISO-8601".into()))?;
        if private_key.identity() != &identity || !private_key.verify(&mpk) {
            return Err(bad("delivered key does not match identity and mpk".into()));
        }
        Ok(KeyDelivery { identity, private_key, mpk: Arc::new(mpk), expiration })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiRequest {
    pub method: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authorization: Option<String>,
    #[serde(default)]
    pub body: Value,
}

impl ApiRequest {
    pub fn new(method: &str, path: &str, token: &str, body: Value) -> Self {
        ApiRequest {
            method: method.to_owned(),
            path: format!("{API_PREFIX}{path}"),
            authorization: Some(format!("Bearer {token}")),
            body,
        }
    }

    pub fn create(token: &str, spec: &RequestSpec) -> Self {
        Self::new("POST", "/identityrequests", token, json!({ "spec": spec }))
    }

    pub fn fetch_key(token: &str, issuer: &str, name: &str) -> Self {
        Self::new("GET", &format!("/identityrequests/{name}/key"), token, json!({ "issuer": issuer }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: u16,
    pub body: Value,
}

impl ApiResponse {
    fn ok(status: u16, body: Value) -> Self {
        ApiResponse { status, body }
    }

    fn error(e: &TpkgError) -> Self {
        let status = match e {
            TpkgError::Unauthenticated => 401,
            TpkgError::Forbidden(_)
            | TpkgError::PolicyViolation(_)
            | TpkgError::Blocklisted(_)
            | TpkgError::EpochInvalid(_) => 403,
            TpkgError::UnknownRequest(_) | TpkgError::UnknownIdentity(_) | TpkgError::UnknownIssuer(_) => 404,
            TpkgError::InvalidTransition { .. } | TpkgError::AlreadyIssued(_) | TpkgError::NotApproved(_) => 409,
            TpkgError::EpochExpired(_) => 410,
            TpkgError::Malformed(_) => 400,
            TpkgError::ThresholdNotMet { .. } => 503,
            _ => 500,
        };
        let kind = format!("{e:?}");
        let kind = kind.split(['(', ' ', '{']).next().unwrap_or("Error").to_owned();
        ApiResponse { status, body: json!({ "error": kind, "message": e.to_string() }) }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn error_kind(&self) -> Option<&str> {
        self.body.get("error").and_then(Value::as_str)
    }
}

struct DomainSlot {
    issuer: Mutex<Issuer>,
    snapshot: RwLock<Arc<Vec<RegistryRecord>>>,
    /// Share holders and whether each is reachable.
    nodes: Mutex<Vec<(Share, bool)>>,
}

/// Serves several trust domains. Writes to one domain are serialized by its
/// issuer lock; registry reads go to a snapshot refreshed after each write.
pub struct TpkgService {
    domains: BTreeMap<String, DomainSlot>,
    tokens: TokenAuthority,
}

fn malformed(e: impl std::fmt::Display) -> TpkgError {
    TpkgError::Malformed(e.to_string())
}

impl TpkgService {
    pub fn new(tokens: TokenAuthority) -> Self {
        TpkgService { domains: BTreeMap::new(), tokens }
    }

    pub fn add_domain(&mut self, issuer: Issuer, shares: Vec<Share>) {
        let name = issuer.domain().to_owned();
        let snapshot = RwLock::new(Arc::new(issuer.registry().records().to_vec()));
        let nodes = Mutex::new(shares.into_iter().map(|s| (s, true)).collect());
        self.domains.insert(name, DomainSlot { issuer: Mutex::new(issuer), snapshot, nodes });
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.keys().map(String::as_str)
    }

    pub fn tokens(&self) -> &TokenAuthority {
        &self.tokens
    }

    fn slot(&self, domain: &str) -> Result<&DomainSlot, TpkgError> {
        self.domains.get(domain).ok_or_else(|| TpkgError::UnknownIssuer(domain.to_owned()))
    }

    /// Runs `f` with exclusive access to a domain's issuer and refreshes the
    /// registry snapshot afterwards.
    pub fn with_issuer<T>(&self, domain: &str, f: impl FnOnce(&mut Issuer) -> T) -> Result<T, TpkgError> {
        let slot = self.slot(domain)?;
        let mut guard: MutexGuard<'_, Issuer> = slot.issuer.lock().unwrap_or_else(|p| p.into_inner());
        let out = f(&mut guard);
        let records = Arc::new(guard.registry().records().to_vec());
        *slot.snapshot.write().unwrap_or_else(|p| p.into_inner()) = records;
        Ok(out)
    }

    pub fn registry_snapshot(&self, domain: &str) -> Result<Arc<Vec<RegistryRecord>>, TpkgError> {
        Ok(self.slot(domain)?.snapshot.read().unwrap_or_else(|p| p.into_inner()).clone())
    }

    pub fn mpk(&self, domain: &str) -> Result<Arc<MasterPublicKey>, TpkgError> {
        self.with_issuer(domain, |i| i.mpk().clone())
    }

    /// Marks a share holder reachable or not.
    pub fn set_node_available(&self, domain: &str, share_id: u32, up: bool) -> Result<(), TpkgError> {
        let mut nodes = self.slot(domain)?.nodes.lock().unwrap_or_else(|p| p.into_inner());
        for (s, avail) in nodes.iter_mut() {
            if s.share_id == share_id {
                *avail = up;
            }
        }
        Ok(())
    }

    fn collect_shares(&self, domain: &str) -> Result<Vec<Share>, TpkgError> {
        let nodes = self.slot(domain)?.nodes.lock().unwrap_or_else(|p| p.into_inner());
        Ok(nodes.iter().filter(|(_, up)| *up).map(|(s, _)| s.clone()).collect())
    }

    fn authenticate(&self, req: &ApiRequest) -> Result<Principal, TpkgError> {
        self.tokens.validate(req.authorization.as_deref().ok_or(TpkgError::Unauthenticated)?)
    }

    pub fn submit(&self, spec: &RequestSpec, principal: &Principal) -> Result<IdentityRequest, TpkgError> {
        let usage = spec.usage.iter().copied().collect();
        self.with_issuer(&spec.issuer, |i| i.submit_request(&spec.identity, usage, spec.expiration_seconds, principal))?
    }

    /// Extracts and hands over the key for an approved request. Only the
    /// principal that filed the request may collect it.
    pub fn deliver(&self, domain: &str, name: &str, principal: &Principal) -> Result<KeyDelivery, TpkgError> {
        let shares = self.collect_shares(domain)?;
        self.with_issuer(domain, |i| {
            let owner = i.request(name)?.principal.clone();
            if owner != principal.subject {
                return Err(TpkgError::Forbidden(format!("{} did not file {name}", principal.subject)));
            }
            i.extract_and_deliver(name, &shares)
        })?
    }

    /// Operator shortcut used when provisioning infrastructure identities.
    pub fn provision(&self, domain: &str, identity: &str, usage: &[Usage], expiration: u64, operator: &Principal) -> Result<KeyDelivery, TpkgError> {
        let shares = self.collect_shares(domain)?;
        self.with_issuer(domain, |i| i.provision(identity, usage, expiration, operator, &shares))?
    }

    pub fn handle_bytes(&self, raw: &[u8]) -> Vec<u8> {
        let resp = match serde_json::from_slice::<ApiRequest>(raw) {
            Ok(req) => self.handle(&req),
            Err(e) => ApiResponse::error(&malformed(e)),
        };
        serde_json::to_vec(&resp).expect("response serializes")
    }

    pub fn handle(&self, req: &ApiRequest) -> ApiResponse {
        match self.route(req) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("{} {} -> {e}", req.method, req.path);
                ApiResponse::error(&e)
            }
        }
    }

    fn route(&self, req: &ApiRequest) -> Result<ApiResponse, TpkgError> {
        let principal = self.authenticate(req)?;
        let path = req.path.strip_prefix(API_PREFIX).ok_or_else(|| TpkgError::UnknownRequest(req.path.clone()))?;
        let segs: Vec<&str> = path.trim_matches('/').split('/').collect();
        let issuer = || -> Result<String, TpkgError> {
            req.body.get("issuer").and_then(Value::as_str).map(str::to_owned).ok_or_else(|| malformed("missing issuer"))
        };
        let field = |k: &str| -> Result<String, TpkgError> {
            req.body.get(k).and_then(Value::as_str).map(str::to_owned).ok_or_else(|| malformed(format!("missing {k}")))
        };
        let restricted = || -> Result<(), TpkgError> {
            if principal.may_only_create() {
                return Err(TpkgError::Forbidden("bootstrap principals may only create identity requests".into()));
            }
            Ok(())
        };
        match (req.method.as_str(), segs.as_slice()) {
            ("POST", ["identityrequests"]) => {
                let spec: RequestSpec = serde_json::from_value(req.body.get("spec").cloned().unwrap_or(Value::Null))
                    .map_err(malformed)?;
                let r = self.submit(&spec, &principal)?;
                Ok(ApiResponse::ok(201, request_json(&r)))
            }
            ("GET", ["identityrequests", name, "key"]) => {
                let d = self.deliver(&issuer()?, name, &principal)?;
                Ok(ApiResponse::ok(200, serde_json::to_value(KeyDeliveryJson::from_delivery(&d)).map_err(malformed)?))
            }
            ("GET", ["identityrequests", name]) => {
                let r = self.with_issuer(&issuer()?, |i| i.request(name).cloned())??;
                if principal.may_only_create() && r.principal != principal.subject {
                    return Err(TpkgError::Forbidden("not your request".into()));
                }
                Ok(ApiResponse::ok(200, request_json(&r)))
            }
            ("GET", ["identityrequests"]) => {
                restricted()?;
                let items: Vec<Value> =
                    self.with_issuer(&issuer()?, |i| i.requests().map(request_json).collect())?;
                Ok(ApiResponse::ok(200, json!({ "items": items })))
            }
            ("POST", ["identityrequests", name, verb @ ("approve" | "deny")]) => {
                restricted()?;
                let st = self.with_issuer(&issuer()?, |i| {
                    if *verb == "approve" {
                        i.approve_request(name, &principal)
                    } else {
                        i.deny_request(name, &principal)
                    }
                })??;
                Ok(ApiResponse::ok(200, json!({ "name": name, "phase": st })))
            }
            ("POST", ["identities", "revoke"]) => {
                restricted()?;
                let id = field("identity")?;
                let rec = self.with_issuer(&issuer()?, |i| i.revoke_identity(&id, &principal))??;
                Ok(ApiResponse::ok(200, serde_json::to_value(rec).map_err(malformed)?))
            }
            ("GET", ["identities", "status"]) => {
                restricted()?;
                let id = IdentityString::parse(&field("identity")?)?;
                let st = self.with_issuer(&issuer()?, |i| i.check_validity(&id, i.now()))??;
                Ok(ApiResponse::ok(200, json!({ "identity": id.to_string(), "status": st })))
            }
            ("POST", ["epochs", "increment"]) => {
                restricted()?;
                let e = self.with_issuer(&issuer()?, |i| i.epoch_increment(&principal))??;
                Ok(ApiResponse::ok(200, json!({ "currentEpoch": e.to_string() })))
            }
            ("GET", ["registry"]) => {
                restricted()?;
                let snap = self.registry_snapshot(&issuer()?)?;
                Ok(ApiResponse::ok(200, json!({ "records": *snap })))
            }
            ("GET", ["mpk"]) => {
                let mpk = self.mpk(&issuer()?)?;
                Ok(ApiResponse::ok(200, json!({ "mpk": B64.encode(mpk.to_bytes()) })))
            }
            _ => Err(TpkgError::UnknownRequest(format!("{} {}", req.method, req.path))),
        }
    }
}

fn request_json(r: &IdentityRequest) -> Value {
    json!({
        "metadata": { "name": r.name },
        "spec": {
            "issuer": r.issuer,
            "identity": r.identity.to_string(),
            "usage": r.usage,
            "expirationSeconds": r.expiration_seconds,
        },
        "status": { "phase": r.status, "principal": r.principal },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kem::{Epoch, KemParams};
    use crate::tpkg::{tpkg_setup, IssuerPolicy, ManualClock, PrincipalKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const DOMAIN: &str = "ibe.kubernetes.io/apiserver";

    fn service() -> TpkgService {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let clock = Arc::new(ManualClock::new(1_767_139_200));
        let (mpk, set, genesis) = tpkg_setup(DOMAIN, &KemParams::compact(), 3, 2, [8; 32], &mut rng, 0).unwrap();
        let policy = IssuerPolicy::kubernetes_apiserver("prod", Epoch::Counter(1));
        let issuer = Issuer::new(Arc::new(mpk), policy, genesis, clock).unwrap();
        let mut svc = TpkgService::new(TokenAuthority::new([1; 32]));
        svc.add_domain(issuer, set.shares.clone());
        svc
    }

    fn token(svc: &TpkgService, p: &Principal) -> String {
        svc.tokens().issue(p)
    }

    fn spec(identity: &str) -> RequestSpec {
        RequestSpec {
            issuer: DOMAIN.into(),
            identity: identity.into(),
            usage: vec![Usage::Client, Usage::Server],
            expiration_seconds: 86_400,
        }
    }

    fn call(svc: &TpkgService, req: &ApiRequest) -> ApiResponse {
        let raw = svc.handle_bytes(&serde_json::to_vec(req).unwrap());
        serde_json::from_slice(&raw).unwrap()
    }

    #[test]
    fn request_body_matches_wire_names() {
        let v = serde_json::to_value(spec("kubelet:node-01")).unwrap();
        assert_eq!(
            v,
            json!({"issuer": DOMAIN, "identity": "kubelet:node-01", "usage": ["client", "server"], "expirationSeconds": 86400})
        );
    }

    #[test]
    fn kubelet_flow_over_json() {
        let svc = service();
        let p = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);
        let t = token(&svc, &p);
        let r = call(&svc, &ApiRequest::create(&t, &spec("kubelet:node-01")));
        assert_eq!(r.status, 201, "{:?}", r.body);
        assert_eq!(r.body["status"]["phase"], "Approved");
        let name = r.body["metadata"]["name"].as_str().unwrap().to_owned();
        let r = call(&svc, &ApiRequest::fetch_key(&t, DOMAIN, &name));
        assert_eq!(r.status, 200);
        let keys: Vec<&str> = r.body.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["expiration", "identity", "mpk", "privateKey"]);
        assert_eq!(r.body["expiration"], "2026-01-01T00:00:00Z");
        let d: KeyDeliveryJson = serde_json::from_value(r.body).unwrap();
        let d = d.into_delivery().unwrap();
        assert_eq!(d.identity.to_string(), "kubelet:node-01.1");
        let again = call(&svc, &ApiRequest::fetch_key(&t, DOMAIN, &name));
        assert_eq!((again.status, again.error_kind()), (409, Some("AlreadyIssued")));
    }

    #[test]
    fn bootstrap_principals_only_create() {
        let svc = service();
        let p = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);
        let t = token(&svc, &p);
        for req in [
            ApiRequest::new("GET", "/identityrequests", &t, json!({"issuer": DOMAIN})),
            ApiRequest::new("POST", "/identityrequests/req-1/approve", &t, json!({"issuer": DOMAIN})),
            ApiRequest::new("POST", "/epochs/increment", &t, json!({"issuer": DOMAIN})),
        ] {
            assert_eq!(call(&svc, &req).status, 403);
        }
        let r = call(&svc, &ApiRequest::create(&t, &spec("controller-manager")));
        assert_eq!((r.status, r.error_kind()), (403, Some("PolicyViolation")));
    }

    #[test]
    fn unauthenticated_and_unknown() {
        let svc = service();
        let r = call(&svc, &ApiRequest::create("forged.token", &spec("kubelet:node-01")));
        assert_eq!(r.status, 401);
        let admin = token(&svc, &Principal::new(PrincipalKind::Admin, "root", &["system:masters"]));
        let mut s = spec("x");
        s.issuer = "ibe.kubernetes.io/nope".into();
        assert_eq!(call(&svc, &ApiRequest::create(&admin, &s)).status, 404);
        assert_eq!(call(&svc, &ApiRequest::new("GET", "/nothing", &admin, Value::Null)).status, 404);
        let raw = svc.handle_bytes(b"not json");
        let r: ApiResponse = serde_json::from_slice(&raw).unwrap();
        assert_eq!(r.status, 400);
    }

    #[test]
    fn another_principal_cannot_collect_a_key() {
        let svc = service();
        let p1 = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);
        let p2 = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-02", &["system:bootstrappers"]);
        let r = call(&svc, &ApiRequest::create(&token(&svc, &p1), &spec("kubelet:node-01")));
        let name = r.body["metadata"]["name"].as_str().unwrap().to_owned();
        assert_eq!(call(&svc, &ApiRequest::fetch_key(&token(&svc, &p2), DOMAIN, &name)).status, 403);
    }

    #[test]
    fn unavailable_nodes_block_extraction() {
        let svc = service();
        svc.set_node_available(DOMAIN, 1, false).unwrap();
        svc.set_node_available(DOMAIN, 2, false).unwrap();
        let p = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);
        let t = token(&svc, &p);
        call(&svc, &ApiRequest::create(&t, &spec("kubelet:node-01")));
        let r = call(&svc, &ApiRequest::fetch_key(&t, DOMAIN, "req-1"));
        assert_eq!((r.status, r.error_kind()), (503, Some("ThresholdNotMet")));
        svc.set_node_available(DOMAIN, 2, true).unwrap();
        assert_eq!(call(&svc, &ApiRequest::fetch_key(&t, DOMAIN, "req-1")).status, 200);
    }

    #[test]
    fn snapshots_follow_writes() {
        let svc = service();
        let before = svc.registry_snapshot(DOMAIN).unwrap();
        let admin = Principal::new(PrincipalKind::Admin, "root", &["system:masters"]);
        svc.provision(DOMAIN, "kube-apiserver", &[Usage::Server], 3600, &admin).unwrap();
        let after = svc.registry_snapshot(DOMAIN).unwrap();
        assert_eq!(before.len(), 1);
        assert_eq!(after.len(), 3);
    }
}
