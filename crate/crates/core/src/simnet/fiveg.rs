use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::channel::Channel;
use super::log::StepOutcome;
use super::node::{NfType, Role, SimNode};
use super::{SimError, World};
use crate::handshake::ClientAuth;
use crate::kem::{Epoch, IdentityString, KemParams};
use crate::tpkg::{
    ApiRequest, ApiResponse, IssuerPolicy, KeyDeliveryJson, Principal, PrincipalKind, RequestSpec, TpkgService, Usage,
};

pub const PLMN: &str = "00101";
pub const FIVEG_EPOCH: Epoch = Epoch::Counter(20250101);

/// What the NRF hands out on discovery.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NfProfile {
    pub nf_type: NfType,
    pub nf_instance_id: String,
    pub endpoint: String,
    pub capabilities: Vec<String>,
    pub identity: String,
}

/// The NRF's table of service name to producer profiles.
#[derive(Clone, Debug, Default)]
pub struct ServiceRegistry {
    profiles: BTreeMap<String, Vec<NfProfile>>,
}

impl ServiceRegistry {
    pub fn register(&mut self, profile: NfProfile) {
        for svc in &profile.capabilities {
            let list = self.profiles.entry(svc.clone()).or_default();
            list.retain(|p| p.nf_instance_id != profile.nf_instance_id);
            list.push(profile.clone());
        }
    }

    pub fn discover(&self, service: &str) -> Result<&[NfProfile], SimError> {
        match self.profiles.get(service) {
            Some(l) if !l.is_empty() => Ok(l),
            _ => Err(SimError::UnknownService(service.to_owned())),
        }
    }

    /// Rewrites the identity string of every profile of `instance`.
    pub fn set_identity(&mut self, instance: &str, identity: &str) {
        for p in self.profiles.values_mut().flatten().filter(|p| p.nf_instance_id == instance) {
            p.identity = identity.to_owned();
        }
    }

    pub fn services(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

/// How a network function obtains its identity key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeliveryPath {
    /// The NRF forwards the registration to the T-PKG and relays the key
    /// back on the registration channel.
    NrfMediated,
    /// The function fetches its key from the T-PKG endpoint, then registers
    /// over mutual IBE-TLS.
    Direct,
}

pub const NRF_INSTANCE: &str = "nrf-001";
pub const TPKG_INSTANCE: &str = "tpkg-001";

/// One operator's 5G core: a T-PKG domain, the NRF and the functions.
pub struct FiveGCore {
    pub world: World,
    pub plmn: String,
    pub domain: String,
    pub registry: ServiceRegistry,
}

impl FiveGCore {
    /// Sets up the domain and provisions the NRF and the T-PKG endpoint, the
    /// only identities that exist before functions join.
    pub fn new(seed: u64, params: KemParams) -> Result<Self, SimError> {
        let operator = Principal::new(PrincipalKind::Admin, "5gc-operator", &["5gc:operators"]);
        let mut world = World::new(seed, params, operator);
        let policy = IssuerPolicy::fiveg_core(PLMN, FIVEG_EPOCH);
        let domain = policy.trust_domain.clone();
        let mpk = world.add_domain(policy)?;
        world.add_node(SimNode::new(NRF_INSTANCE, Role::Nf(NfType::NRF)).trusting(&domain, mpk.clone()));
        world.add_node(SimNode::new(TPKG_INSTANCE, Role::Operator).trusting(&domain, mpk));
        world.provision(NRF_INSTANCE, &domain, &format!("{PLMN}.NRF.{NRF_INSTANCE}"), &[Usage::Server, Usage::Client])?;
        world.provision(TPKG_INSTANCE, &domain, &format!("{PLMN}.TPKG.{TPKG_INSTANCE}"), &[Usage::Server])?;
        Ok(FiveGCore { world, plmn: PLMN.to_owned(), domain, registry: ServiceRegistry::default() })
    }

    fn nrf_name(&self) -> String {
        format!("{}.NRF.{NRF_INSTANCE}", self.plmn)
    }

    /// Epoch-less identity name of an instance.
    pub fn nf_name(&self, nf_type: NfType, instance: &str) -> String {
        format!("{}.{}.{instance}", self.plmn, nf_type.as_str())
    }

    /// A new function knows the domain mpk and the NRF identity, nothing else.
    pub fn add_nf(&mut self, nf_type: NfType, instance: &str) -> Result<(), SimError> {
        let mpk = self.world.node(NRF_INSTANCE)?.mpk(&self.domain)?;
        self.world.add_node(SimNode::new(instance, Role::Nf(nf_type)).trusting(&self.domain, mpk));
        Ok(())
    }

    pub fn nf_principal(&self, nf_type: NfType, instance: &str) -> Principal {
        Principal::new(
            PrincipalKind::OperatorNF,
            &format!("nf:{}", self.nf_name(nf_type, instance)),
            &["5gc:network-functions"],
        )
    }

    fn nf_type(&self, instance: &str) -> Result<NfType, SimError> {
        match self.world.node(instance)?.role {
            Role::Nf(t) => Ok(t),
            _ => Err(SimError::UnknownNode(instance.to_owned())),
        }
    }

    fn current(&self, name: &str) -> Result<IdentityString, SimError> {
        Ok(IdentityString::parse(&format!("{name}.{}", self.world.current_epoch(&self.domain)?))?)
    }

    fn profile(&self, nf_type: NfType, instance: &str, identity: &str) -> NfProfile {
        NfProfile {
            nf_type,
            nf_instance_id: instance.to_owned(),
            endpoint: format!("https://{instance}.5gc.mnc001.mcc001.3gppnetwork.org"),
            capabilities: nf_type.services().iter().map(|s| s.to_string()).collect(),
            identity: identity.to_owned(),
        }
    }

    /// Registers `instance` with the NRF, obtaining its key on `path`.
    pub fn nf_register(&mut self, instance: &str, path: DeliveryPath) -> Result<IdentityString, SimError> {
        let nf_type = self.nf_type(instance)?;
        let name = self.nf_name(nf_type, instance);
        let principal = self.nf_principal(nf_type, instance);
        let id = match path {
            DeliveryPath::NrfMediated => self.register_via_nrf(instance, nf_type, &name, &principal)?,
            DeliveryPath::Direct => self.register_direct(instance, nf_type, &name, &principal)?,
        };
        Ok(id)
    }

    fn open_to(&mut self, instance: &str, server: &str, server_name: &str, own: Option<&str>) -> Result<Channel, SimError> {
        let w = &mut self.world;
        let domain = self.domain.clone();
        let expected = IdentityString::parse(&format!("{server_name}.{}", w.current_epoch(&domain)?))?;
        let resolver = w.resolver(&domain)?;
        let client = w.node(instance)?.client_config(&domain, expected, own, Some(resolver.clone()))?;
        let auth = if own.is_some() { ClientAuth::Required } else { ClientAuth::Optional };
        let server_cfg = w.node(server)?.server_config(&domain, server_name, auth, Some(resolver))?;
        let (cs, ss) = (w.seed(), w.seed());
        match Channel::open(client, server_cfg, cs, ss) {
            Ok(ch) => Ok(ch),
            Err(f) => {
                let detail = format!("{} ({:?})", f.error, f.error.alert());
                w.log.push("register", &domain, instance, server, StepOutcome::Aborted, detail, None);
                Err(f.error.into())
            }
        }
    }

    fn register_via_nrf(&mut self, instance: &str, nf_type: NfType, name: &str, principal: &Principal) -> Result<IdentityString, SimError> {
        let nrf = self.nrf_name();
        let mut ch = self.open_to(instance, NRF_INSTANCE, &nrf, None)?;
        let token = self.world.service.tokens().issue(principal);
        let body = json!({
            "nfInstanceId": instance,
            "nfType": nf_type,
            "services": nf_type.services(),
            "identity": name,
        });
        let req = ApiRequest::new("PUT", &format!("/nnrf-nfm/nf-instances/{instance}"), &token, body);
        let raw = serde_json::to_vec(&req).expect("requests serialize");
        let svc = self.world.service.clone();
        let domain = self.domain.clone();
        let resp = ch.request("NFRegister", true, &raw, |m| nrf_register_handler(&svc, &domain, m))?;
        if !ch.credentials_after_server_finished() {
            return Err(SimError::Script("bearer token left before the NRF Finished verified".into()));
        }
        let resp: ApiResponse = serde_json::from_slice(&resp).map_err(|e| SimError::Script(e.to_string()))?;
        let delivery = self.check(instance, NRF_INSTANCE, resp)?;
        let delivery: KeyDeliveryJson =
            serde_json::from_value(delivery["key"].clone()).map_err(|e| SimError::Script(e.to_string()))?;
        let id = self.world.node_mut(instance)?.install(&self.domain.clone(), delivery.into_delivery()?)?;
        self.registry.register(self.profile(nf_type, instance, &id.to_string()));
        let m = ch.metrics().ok();
        self.world.log.push("register", &self.domain, instance, NRF_INSTANCE, StepOutcome::Ok, format!("nrf-mediated {id}"), m);
        Ok(id)
    }

    fn register_direct(&mut self, instance: &str, nf_type: NfType, name: &str, principal: &Principal) -> Result<IdentityString, SimError> {
        let tpkg = format!("{}.TPKG.{TPKG_INSTANCE}", self.plmn);
        let mut ch = self.open_to(instance, TPKG_INSTANCE, &tpkg, None)?;
        let token = self.world.service.tokens().issue(principal);
        let spec = RequestSpec {
            issuer: self.domain.clone(),
            identity: name.to_owned(),
            usage: vec![Usage::Client, Usage::Server],
            expiration_seconds: 86_400,
        };
        let svc = self.world.service.clone();
        let mut call = |label: &str, req: ApiRequest| -> Result<ApiResponse, SimError> {
            let raw = serde_json::to_vec(&req).expect("requests serialize");
            let resp = ch.request(label, true, &raw, |m| svc.handle_bytes(m))?;
            serde_json::from_slice(&resp).map_err(|e| SimError::Script(e.to_string()))
        };
        let created = call("IdentityRequest", ApiRequest::create(&token, &spec))?;
        let created = self.check(instance, TPKG_INSTANCE, created)?;
        let req_name = created["metadata"]["name"].as_str().unwrap_or_default().to_owned();
        let fetched = call("KeyDelivery", ApiRequest::fetch_key(&token, &self.domain, &req_name))?;
        let fetched = self.check(instance, TPKG_INSTANCE, fetched)?;
        let delivery: KeyDeliveryJson = serde_json::from_value(fetched).map_err(|e| SimError::Script(e.to_string()))?;
        let id = self.world.node_mut(instance)?.install(&self.domain.clone(), delivery.into_delivery()?)?;

        // Registration proper, now over mutual IBE-TLS and without a token.
        let nrf = self.nrf_name();
        let mut reg = self.open_to(instance, NRF_INSTANCE, &nrf, Some(name))?;
        let profile = self.profile(nf_type, instance, &id.to_string());
        let raw = serde_json::to_vec(&profile).expect("profiles serialize");
        reg.request("NFRegister", false, &raw, |m| m.to_vec())?;
        let peer = reg.server().peer_identity().cloned();
        if peer.as_ref() != Some(&id) {
            return Err(SimError::Script(format!("NRF saw {peer:?}, profile says {id}")));
        }
        self.registry.register(profile);
        let m = reg.metrics().ok();
        self.world.log.push("register", &self.domain, instance, NRF_INSTANCE, StepOutcome::Ok, format!("direct {id}"), m);
        Ok(id)
    }

    fn check(&mut self, from: &str, to: &str, r: ApiResponse) -> Result<Value, SimError> {
        if r.is_success() {
            return Ok(r.body);
        }
        let kind = r.error_kind().unwrap_or("Error").to_owned();
        let message = r.body.get("message").and_then(Value::as_str).unwrap_or_default().to_owned();
        self.world.log.push("register", &self.domain, from, to, StepOutcome::Denied, format!("{} {kind}: {message}", r.status), None);
        Err(SimError::Api { status: r.status, kind, message })
    }

    /// Queries the NRF over mutual IBE-TLS. Returns producers other than the
    /// caller itself.
    pub fn nf_discover(&mut self, instance: &str, service: &str) -> Result<Vec<NfProfile>, SimError> {
        let nf_type = self.nf_type(instance)?;
        let own = self.nf_name(nf_type, instance);
        let nrf = self.nrf_name();
        let mut ch = self.open_to(instance, NRF_INSTANCE, &nrf, Some(&own))?;
        let registry = &self.registry;
        let query = json!({ "targetServiceName": service });
        let raw = serde_json::to_vec(&query).expect("json");
        let resp = ch.request("NFDiscover", false, &raw, |_| {
            let v = match registry.discover(service) {
                Ok(list) => json!({ "nfInstances": list }),
                Err(e) => json!({ "error": "UnknownService", "message": e.to_string() }),
            };
            serde_json::to_vec(&v).expect("json")
        })?;
        let v: Value = serde_json::from_slice(&resp).map_err(|e| SimError::Script(e.to_string()))?;
        let m = ch.metrics().ok();
        if v.get("error").is_some() {
            self.world.log.push("discover", &self.domain, instance, NRF_INSTANCE, StepOutcome::Denied, format!("unknown service {service}"), m);
            return Err(SimError::UnknownService(service.to_owned()));
        }
        let list: Vec<NfProfile> =
            serde_json::from_value(v["nfInstances"].clone()).map_err(|e| SimError::Script(e.to_string()))?;
        let list: Vec<NfProfile> = list.into_iter().filter(|p| p.nf_instance_id != instance).collect();
        for p in &list {
            IdentityString::parse(&p.identity)?;
        }
        let detail = format!("{service} -> {}", list.iter().map(|p| p.identity.as_str()).collect::<Vec<_>>().join(","));
        self.world.log.push("discover", &self.domain, instance, NRF_INSTANCE, StepOutcome::Ok, detail, m);
        if list.is_empty() {
            return Err(SimError::UnknownService(service.to_owned()));
        }
        Ok(list)
    }

    /// Discovers `service` and opens mutual IBE-TLS to the first producer,
    /// encapsulating to the identity string from its profile.
    pub fn connect_service(&mut self, instance: &str, service: &str) -> Result<Channel, SimError> {
        let profile = self.nf_discover(instance, service)?.remove(0);
        let nf_type = self.nf_type(instance)?;
        let own = self.nf_name(nf_type, instance);
        let expected = IdentityString::parse(&profile.identity)?;
        let peer_name = self.nf_name(profile.nf_type, &profile.nf_instance_id);
        self.world.connect(&self.domain.clone(), instance, Some(&own), &profile.nf_instance_id, &peer_name, Some(expected))
    }

    /// One SBA interaction: connect, then `calls` request/response exchanges.
    pub fn interaction(&mut self, label: &str, instance: &str, service: &str, calls: usize) -> Result<Channel, SimError> {
        let mut ch = match self.connect_service(instance, service) {
            Ok(ch) => ch,
            Err(e) => {
                self.world.log.push("sba", &self.domain, instance, service, StepOutcome::Aborted, format!("{label}: {e}"), None);
                return Err(e);
            }
        };
        for i in 0..calls {
            let body = serde_json::to_vec(&json!({ "service": service, "call": i })).expect("json");
            ch.request(service, false, &body, |m| m.to_vec())?;
        }
        let m = ch.metrics().ok();
        self.world.log.push("sba", &self.domain, instance, service, StepOutcome::Ok, format!("{label}: {calls} calls"), m);
        Ok(ch)
    }

    /// The current-epoch identity of an instance, as a profile should carry it.
    pub fn expected_identity(&self, instance: &str) -> Result<IdentityString, SimError> {
        let t = self.nf_type(instance)?;
        self.current(&self.nf_name(t, instance))
    }

    pub fn nrf_identity(&self) -> Result<IdentityString, SimError> {
        self.current(&self.nrf_name())
    }

    pub fn service(&self) -> &Arc<TpkgService> {
        &self.world.service
    }
}

/// The NRF side of NFRegister on the mediated path: authenticate the
/// principal, forward the identity to the T-PKG and return the key.
fn nrf_register_handler(svc: &TpkgService, domain: &str, raw: &[u8]) -> Vec<u8> {
    let resp = (|| -> Result<Value, ApiResponse> {
        let err = |status: u16, kind: &str, msg: String| ApiResponse { status, body: json!({"error": kind, "message": msg}) };
        let req: ApiRequest = serde_json::from_slice(raw).map_err(|e| err(400, "Malformed", e.to_string()))?;
        let forward = |r: ApiRequest| -> Result<Value, ApiResponse> {
            let out = svc.handle(&r);
            if out.is_success() {
                Ok(out.body)
            } else {
                Err(out)
            }
        };
        let token = req.authorization.as_deref().unwrap_or_default().trim_start_matches("Bearer ").to_owned();
        let identity = req.body["identity"].as_str().unwrap_or_default().to_owned();
        let spec = RequestSpec {
            issuer: domain.to_owned(),
            identity,
            usage: vec![Usage::Client, Usage::Server],
            expiration_seconds: 86_400,
        };
        let created = forward(ApiRequest::create(&token, &spec))?;
        let name = created["metadata"]["name"].as_str().unwrap_or_default().to_owned();
        let key = forward(ApiRequest::fetch_key(&token, domain, &name))?;
        Ok(json!({ "nfInstanceId": req.body["nfInstanceId"], "key": key }))
    })();
    let resp = match resp {
        Ok(body) => ApiResponse { status: 201, body },
        Err(e) => e,
    };
    serde_json::to_vec(&resp).expect("responses serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handshake::{AlertDescription, HandshakeError};

    fn core() -> FiveGCore {
        FiveGCore::new(21, KemParams::compact()).unwrap()
    }

    #[test]
    fn nrf_identity_format() {
        let c = core();
        assert_eq!(c.nrf_identity().unwrap().to_string(), "00101.NRF.nrf-001.20250101");
        assert_eq!(c.world.node(NRF_INSTANCE).unwrap().identity(&c.domain, "00101.NRF.nrf-001").unwrap(), c.nrf_identity().unwrap());
    }

    #[test]
    fn register_discover_connect() {
        let mut c = core();
        for (t, i, path) in [
            (NfType::AMF, "amf-001", DeliveryPath::NrfMediated),
            (NfType::SMF, "smf-001", DeliveryPath::Direct),
            (NfType::UDM, "udm-001", DeliveryPath::NrfMediated),
        ] {
            c.add_nf(t, i).unwrap();
            let id = c.nf_register(i, path).unwrap();
            assert_eq!(id, c.expected_identity(i).unwrap());
        }
        assert_eq!(c.world.node("amf-001").unwrap().identity(&c.domain, "00101.AMF.amf-001").unwrap().to_string(), "00101.AMF.amf-001.20250101");
        let found = c.nf_discover("smf-001", "nudm-sdm").unwrap();
        assert_eq!(found[0].identity, "00101.UDM.udm-001.20250101");
        let ch = c.connect_service("smf-001", "nudm-sdm").unwrap();
        assert!(ch.client().is_complete() && ch.server().is_complete());
        assert_eq!(ch.server().peer_identity().unwrap().to_string(), "00101.SMF.smf-001.20250101");
    }

    #[test]
    fn unknown_service() {
        let mut c = core();
        c.add_nf(NfType::SMF, "smf-001").unwrap();
        c.nf_register("smf-001", DeliveryPath::NrfMediated).unwrap();
        assert!(matches!(c.nf_discover("smf-001", "nfoo-bar"), Err(SimError::UnknownService(_))));
    }

    #[test]
    fn revoked_profile_fails_at_finished() {
        let mut c = core();
        for (t, i) in [(NfType::SMF, "smf-001"), (NfType::UDM, "udm-001")] {
            c.add_nf(t, i).unwrap();
            c.nf_register(i, DeliveryPath::NrfMediated).unwrap();
        }
        let domain = c.domain.clone();
        c.world.revoke(&domain, "00101.UDM.udm-001").unwrap();
        let err = c.connect_service("smf-001", "nudm-sdm").unwrap_err();
        assert_eq!(err.handshake().map(HandshakeError::alert), Some(AlertDescription::IbeAuthFailure), "{err}");
    }

    #[test]
    fn stale_epoch_in_profile_aborts() {
        let mut c = core();
        for (t, i) in [(NfType::SMF, "smf-001"), (NfType::UDM, "udm-001")] {
            c.add_nf(t, i).unwrap();
            c.nf_register(i, DeliveryPath::NrfMediated).unwrap();
        }
        c.registry.set_identity("udm-001", "00101.UDM.udm-001.20240101");
        let err = c.connect_service("smf-001", "nudm-sdm").unwrap_err();
        assert!(err.handshake().is_some(), "{err}");
    }

    #[test]
    fn nf_cannot_register_another_name() {
        let mut c = core();
        c.add_nf(NfType::AMF, "amf-001").unwrap();
        let p = c.nf_principal(NfType::AMF, "amf-001");
        let svc = c.world.service.clone();
        let spec = RequestSpec {
            issuer: c.domain.clone(),
            identity: "00101.UDM.udm-001".into(),
            usage: vec![Usage::Client],
            expiration_seconds: 60,
        };
        assert!(svc.submit(&spec, &p).is_err());
    }
}
