use std::net::{SocketAddr, TcpListener};

use serde_json::Value;

use super::channel::Channel;
use super::log::StepOutcome;
use super::node::{Role, SimNode};
use super::{ConnectResult, SimError, World};
use crate::handshake::ClientAuth;
use crate::kem::{Epoch, IdentityString, KemParams};
use crate::tpkg::{
    spawn_server, ApiRequest, ApiResponse, IssuerPolicy, KeyDeliveryJson, Principal, PrincipalKind, RequestSpec,
    TpkgClient, Usage,
};

pub const APISERVER_DOMAIN: &str = "ibe.kubernetes.io/apiserver";
pub const ETCD_DOMAIN: &str = "ibe.kubernetes.io/etcd";
pub const FRONT_PROXY_DOMAIN: &str = "ibe.kubernetes.io/front-proxy";

/// One control-plane connection: who dials whom, with which identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlPlanePair {
    pub initiator: &'static str,
    pub initiator_identity: &'static str,
    pub responder: &'static str,
    pub responder_identity: &'static str,
    pub domain: &'static str,
}

const fn pair(
    initiator: &'static str,
    initiator_identity: &'static str,
    responder: &'static str,
    responder_identity: &'static str,
    domain: &'static str,
) -> ControlPlanePair {
    ControlPlanePair { initiator, initiator_identity, responder, responder_identity, domain }
}

pub const CONTROL_PLANE_PAIRS: [ControlPlanePair; 8] = [
    pair("kubectl", "kubectl:admin", "kube-apiserver", "kube-apiserver", APISERVER_DOMAIN),
    pair("kube-scheduler", "kube-scheduler", "kube-apiserver", "kube-apiserver", APISERVER_DOMAIN),
    pair("kube-controller-manager", "kube-controller-manager", "kube-apiserver", "kube-apiserver", APISERVER_DOMAIN),
    pair("node-01", "kubelet:node-01", "kube-apiserver", "kube-apiserver", APISERVER_DOMAIN),
    pair("kube-apiserver", "kube-apiserver-client", "node-01", "kubelet:node-01", APISERVER_DOMAIN),
    pair("kube-apiserver", "kube-apiserver-client", "etcd-1", "etcd-server", ETCD_DOMAIN),
    pair("etcd-1", "etcd-peer-1", "etcd-2", "etcd-peer-2", ETCD_DOMAIN),
    pair("kube-apiserver", "kube-apiserver-client", "front-proxy", "front-proxy", FRONT_PROXY_DOMAIN),
];

pub const DOMAINS: [&str; 3] = [APISERVER_DOMAIN, ETCD_DOMAIN, FRONT_PROXY_DOMAIN];

/// A server identity each domain issues, used for isolation probes.
fn domain_server(domain: &str) -> (&'static str, &'static str) {
    match domain {
        APISERVER_DOMAIN => ("kube-apiserver", "kube-apiserver"),
        ETCD_DOMAIN => ("etcd-1", "etcd-server"),
        _ => ("front-proxy", "front-proxy"),
    }
}

/// A control plane with three trust domains, each backed by its own T-PKG.
pub struct K8sCluster {
    pub world: World,
    pub cluster: String,
    tcp: Option<SocketAddr>,
}

impl K8sCluster {
    /// Sets up the domains and provisions the static control-plane
    /// components. Kubelets join later through bootstrap.
    pub fn new(cluster: &str, seed: u64, params: KemParams) -> Result<Self, SimError> {
        let operator = Principal::new(PrincipalKind::Admin, "kubernetes-admin", &["system:masters"]);
        let mut world = World::new(seed, params, operator);
        let e1 = Epoch::Counter(1);
        let api = world.add_domain(IssuerPolicy::kubernetes_apiserver(cluster, e1))?;
        let etcd = world.add_domain(IssuerPolicy::operator_only(
            ETCD_DOMAIN,
            &["etcd-*", "etcd:*", "kube-apiserver-client"],
            e1,
        ))?;
        let fp = world.add_domain(IssuerPolicy::operator_only(
            FRONT_PROXY_DOMAIN,
            &["front-proxy", "front-proxy-client", "kube-apiserver-client"],
            e1,
        ))?;
        let nodes = [
            ("kube-apiserver", Role::KubeApiserver),
            ("kube-scheduler", Role::Scheduler),
            ("kube-controller-manager", Role::ControllerManager),
            ("kubectl", Role::Operator),
            ("etcd-1", Role::Etcd),
            ("etcd-2", Role::Etcd),
            ("front-proxy", Role::FrontProxy),
        ];
        for (name, role) in nodes {
            world.add_node(
                SimNode::new(name, role)
                    .trusting(APISERVER_DOMAIN, api.clone())
                    .trusting(ETCD_DOMAIN, etcd.clone())
                    .trusting(FRONT_PROXY_DOMAIN, fp.clone()),
            );
        }
        let (c, s, p) = (Usage::Client, Usage::Server, Usage::Peer);
        let static_keys: [(&str, &str, &str, &[Usage]); 11] = [
            ("kube-apiserver", APISERVER_DOMAIN, "kube-apiserver", &[s]),
            ("kube-apiserver", APISERVER_DOMAIN, "kube-apiserver-client", &[c]),
            ("kube-apiserver", ETCD_DOMAIN, "kube-apiserver-client", &[c]),
            ("kube-apiserver", FRONT_PROXY_DOMAIN, "kube-apiserver-client", &[c]),
            ("kube-scheduler", APISERVER_DOMAIN, "kube-scheduler", &[c]),
            ("kube-controller-manager", APISERVER_DOMAIN, "kube-controller-manager", &[c]),
            ("kubectl", APISERVER_DOMAIN, "kubectl:admin", &[c]),
            ("etcd-1", ETCD_DOMAIN, "etcd-server", &[s]),
            ("etcd-1", ETCD_DOMAIN, "etcd-peer-1", &[p, c]),
            ("etcd-2", ETCD_DOMAIN, "etcd-peer-2", &[p, s]),
            ("front-proxy", FRONT_PROXY_DOMAIN, "front-proxy", &[s]),
        ];
        for (node, domain, id, usage) in static_keys {
            world.provision(node, domain, id, usage)?;
        }
        Ok(K8sCluster { world, cluster: cluster.to_owned(), tcp: None })
    }

    /// A joining node knows only the control-plane mpk and the API server identity.
    pub fn add_kubelet(&mut self, node: &str) -> Result<(), SimError> {
        let mpk = self.world.node("kube-apiserver")?.mpk(APISERVER_DOMAIN)?;
        self.world.add_node(SimNode::new(node, Role::Kubelet).trusting(APISERVER_DOMAIN, mpk));
        Ok(())
    }

    /// A node that holds a legitimately issued key for `stolen` and will try
    /// to answer as the API server.
    pub fn add_impostor(&mut self, node: &str, stolen: &str) -> Result<(), SimError> {
        self.add_kubelet(node)?;
        self.world.provision(node, APISERVER_DOMAIN, stolen, &[Usage::Client, Usage::Server])?;
        Ok(())
    }

    pub fn bootstrap_principal(node: &str) -> Principal {
        Principal::new(PrincipalKind::BootstrapToken, &format!("system:bootstrap:{node}"), &["system:bootstrappers"])
    }

    pub fn service_account(namespace: &str, name: &str) -> Principal {
        Principal::new(
            PrincipalKind::ServiceAccount,
            &format!("system:serviceaccount:{namespace}:{name}"),
            &["system:serviceaccounts"],
        )
    }

    /// Serves the T-PKG API on loopback TCP behind the API server's identity;
    /// later bootstraps go over the socket instead of the in-process pipe.
    pub fn enable_tcp(&mut self) -> Result<SocketAddr, SimError> {
        let cfg = self.world.node("kube-apiserver")?.server_config(APISERVER_DOMAIN, "kube-apiserver", ClientAuth::Optional, None)?;
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        spawn_server(listener, self.world.service.clone(), cfg, self.world.seed());
        self.tcp = Some(addr);
        Ok(addr)
    }

    /// Joins `node` through the real API server.
    pub fn bootstrap_component(
        &mut self,
        node: &str,
        principal: &Principal,
        identity: &str,
        usage: &[Usage],
    ) -> Result<IdentityString, SimError> {
        self.bootstrap_via(node, "kube-apiserver", "kube-apiserver", principal, identity, usage)
    }

    /// Server-authenticated channel to `endpoint` (which answers with its key
    /// for `endpoint_key`), then IdentityRequest and key collection over it.
    /// The bearer token is serialized only once the channel is up.
    pub fn bootstrap_via(
        &mut self,
        node: &str,
        endpoint: &str,
        endpoint_key: &str,
        principal: &Principal,
        identity: &str,
        usage: &[Usage],
    ) -> Result<IdentityString, SimError> {
        let w = &mut self.world;
        let expected = IdentityString::parse(&format!("kube-apiserver.{}", w.current_epoch(APISERVER_DOMAIN)?))?;
        let client_cfg = w.node(node)?.client_config(APISERVER_DOMAIN, expected, None, None)?;
        let spec = RequestSpec {
            issuer: APISERVER_DOMAIN.into(),
            identity: identity.into(),
            usage: usage.to_vec(),
            expiration_seconds: 86_400,
        };
        let (delivery, metrics) = if let (Some(addr), "kube-apiserver") = (self.tcp, endpoint) {
            let mut c = match TpkgClient::connect(addr, client_cfg, w.seed()) {
                Ok(c) => c,
                Err(e) => {
                    w.log.push("bootstrap", APISERVER_DOMAIN, node, endpoint, StepOutcome::Aborted, e.to_string(), None);
                    return Err(e.into());
                }
            };
            let token = w.service.tokens().issue(principal);
            let mut call = |req: ApiRequest| c.call(&req).map_err(SimError::from);
            let created = call(ApiRequest::create(&token, &spec))?;
            let created = expect_success(w, node, endpoint, created)?;
            let fetched = call(ApiRequest::fetch_key(&token, APISERVER_DOMAIN, &request_name(&created)?))?;
            let m = c.session().metrics().clone();
            (expect_success(w, node, endpoint, fetched)?, Some(m))
        } else {
            let server_cfg = w.node(endpoint)?.server_config(APISERVER_DOMAIN, endpoint_key, ClientAuth::Optional, None)?;
            let (cs, ss) = (w.seed(), w.seed());
            let mut ch = match Channel::open(client_cfg, server_cfg, cs, ss) {
                Ok(ch) => ch,
                Err(f) => {
                    let detail = format!("{} ({:?}); no credential sent", f.error, f.error.alert());
                    w.log.push("bootstrap", APISERVER_DOMAIN, node, endpoint, StepOutcome::Aborted, detail, None);
                    return Err(f.error.into());
                }
            };
            let token = w.service.tokens().issue(principal);
            let svc = w.service.clone();
            let mut call = |label: &str, req: ApiRequest| -> Result<ApiResponse, SimError> {
                let raw = serde_json::to_vec(&req).expect("requests serialize");
                let resp = ch.request(label, true, &raw, |m| svc.handle_bytes(m))?;
                serde_json::from_slice(&resp).map_err(|e| SimError::Script(e.to_string()))
            };
            let created = call("IdentityRequest", ApiRequest::create(&token, &spec))?;
            let created = expect_success(w, node, endpoint, created)?;
            let fetched = call("KeyDelivery", ApiRequest::fetch_key(&token, APISERVER_DOMAIN, &request_name(&created)?))?;
            let fetched = expect_success(w, node, endpoint, fetched)?;
            if !ch.credentials_after_server_finished() {
                return Err(SimError::Script("bearer token left before the server Finished verified".into()));
            }
            (fetched, ch.metrics().ok())
        };
        let delivery: KeyDeliveryJson = serde_json::from_value(delivery).map_err(|e| SimError::Script(e.to_string()))?;
        let id = w.node_mut(node)?.install(APISERVER_DOMAIN, delivery.into_delivery()?)?;
        w.log.push("bootstrap", APISERVER_DOMAIN, node, endpoint, StepOutcome::Ok, id.to_string(), metrics);
        Ok(id)
    }

    pub fn connect_pair(&mut self, p: &ControlPlanePair) -> Result<Channel, SimError> {
        self.world.connect(p.domain, p.initiator, Some(p.initiator_identity), p.responder, p.responder_identity, None)
    }

    /// Every pair in order; the first error is returned after all were tried.
    pub fn connect_all_pairs(&mut self) -> Result<usize, SimError> {
        let mut ok = 0;
        let mut first = None;
        for p in CONTROL_PLANE_PAIRS {
            match self.connect_pair(&p) {
                Ok(_) => ok += 1,
                Err(e) => {
                    first.get_or_insert(e);
                }
            }
        }
        first.map_or(Ok(ok), Err)
    }

    /// Same as [`Self::connect_all_pairs`] with every handshake on its own
    /// thread. Seeds are drawn and results logged in table order, so the
    /// transcript is identical to a sequential run.
    pub fn connect_all_pairs_parallel(&mut self) -> Result<usize, SimError> {
        let pending = CONTROL_PLANE_PAIRS
            .iter()
            .map(|p| {
                self.world.prepare_connect(p.domain, p.initiator, Some(p.initiator_identity), p.responder, p.responder_identity, None)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let results: Vec<ConnectResult> = std::thread::scope(|s| {
            let handles: Vec<_> = pending.into_iter().map(|p| s.spawn(move || p.run())).collect();
            handles.into_iter().map(|h| h.join().expect("connection thread panicked")).collect()
        });
        let mut ok = 0;
        let mut first = None;
        for r in results {
            match self.world.finish_connect(r) {
                Ok(_) => ok += 1,
                Err(e) => {
                    first.get_or_insert(e);
                }
            }
        }
        first.map_or(Ok(ok), Err)
    }

    /// A client trusting `peer_domain` expects a server identity from that
    /// domain, while the server answers with a key `key_domain` issued for
    /// the same name. Returns whether any handshake completed.
    pub fn cross_domain_probe(&mut self, key_domain: &str, peer_domain: &str) -> Result<bool, SimError> {
        let (server, name) = domain_server(key_domain);
        let w = &mut self.world;
        let key = w.node(server)?.key(key_domain, name)?;
        let expected = key.identity().clone();
        let mut completed = false;
        // The impostor runs once with its own domain's mpk and once claiming the peer domain's.
        for server_domain in [key_domain, peer_domain] {
            let client_cfg = w.node("kubectl")?.client_config(peer_domain, expected.clone(), None, None)?;
            let mut server_cfg = w.node(server)?.server_config(key_domain, name, ClientAuth::Optional, None)?;
            server_cfg.mpk = w.node(server)?.mpk(server_domain)?;
            let (cs, ss) = (w.seed(), w.seed());
            let detail = format!("key from {key_domain}, client trusts {peer_domain}, server mpk {server_domain}");
            match Channel::open(client_cfg, server_cfg, cs, ss) {
                Ok(_) => {
                    completed = true;
                    w.log.push("cross-domain", peer_domain, "kubectl", server, StepOutcome::Ok, detail, None);
                }
                Err(f) => {
                    let detail = format!("{detail}: {}", f.error);
                    w.log.push("cross-domain", peer_domain, "kubectl", server, StepOutcome::Aborted, detail, None);
                }
            }
        }
        Ok(completed)
    }

    /// All ordered pairs of distinct domains; true if every probe failed.
    pub fn domains_isolated(&mut self) -> Result<bool, SimError> {
        let mut isolated = true;
        for a in DOMAINS {
            for b in DOMAINS {
                if a != b && self.cross_domain_probe(a, b)? {
                    isolated = false;
                }
            }
        }
        Ok(isolated)
    }
}

fn expect_success(w: &mut World, node: &str, endpoint: &str, r: ApiResponse) -> Result<Value, SimError> {
    if r.is_success() {
        return Ok(r.body);
    }
    let kind = r.error_kind().unwrap_or("Error").to_owned();
    let message = r.body.get("message").and_then(Value::as_str).unwrap_or_default().to_owned();
    w.log.push("bootstrap", APISERVER_DOMAIN, node, endpoint, StepOutcome::Denied, format!("{} {kind}: {message}", r.status), None);
    Err(SimError::Api { status: r.status, kind, message })
}

fn request_name(body: &Value) -> Result<String, SimError> {
    body["metadata"]["name"].as_str().map(str::to_owned).ok_or_else(|| SimError::Script("response without metadata.name".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handshake::{AlertDescription, HandshakeError};
    use crate::tpkg::{verify_chain, RegistryEvent};

    fn cluster() -> K8sCluster {
        K8sCluster::new("prod", 11, KemParams::compact()).unwrap()
    }

    #[test]
    fn kubelet_bootstrap_then_every_pair() {
        let mut k = cluster();
        k.add_kubelet("node-01").unwrap();
        let p = K8sCluster::bootstrap_principal("node-01");
        let id = k.bootstrap_component("node-01", &p, "kubelet:node-01", &[Usage::Client, Usage::Server]).unwrap();
        assert_eq!(id.to_string(), "kubelet:node-01.1");
        assert_eq!(k.connect_all_pairs().unwrap(), 8);
        for e in k.world.log.by_action("connect") {
            let m = e.metrics.as_ref().unwrap();
            assert_eq!((m.ops.encaps, m.ops.decaps, m.ops.sign, m.ops.verify), (3, 3, 0, 0), "{e:?}");
        }
        let snap = k.world.service.registry_snapshot(APISERVER_DOMAIN).unwrap();
        verify_chain(&snap).unwrap();
        assert!(snap.iter().any(|r| r.event == RegistryEvent::Issued && r.identity == "kubelet:node-01.1"));
    }

    #[test]
    fn parallel_pairs_log_like_sequential() {
        let run = |parallel: bool| {
            let mut k = cluster();
            k.add_kubelet("node-01").unwrap();
            let p = K8sCluster::bootstrap_principal("node-01");
            k.bootstrap_component("node-01", &p, "kubelet:node-01", &[Usage::Client, Usage::Server]).unwrap();
            let n = if parallel { k.connect_all_pairs_parallel() } else { k.connect_all_pairs() };
            assert_eq!(n.unwrap(), 8);
            k.world.log.to_jsonl()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn bootstrap_principal_cannot_take_controller_manager() {
        let mut k = cluster();
        k.add_kubelet("node-02").unwrap();
        let p = K8sCluster::bootstrap_principal("node-02");
        let err = k.bootstrap_component("node-02", &p, "controller-manager", &[Usage::Client]).unwrap_err();
        assert!(matches!(err, SimError::Api { status: 403, .. }), "{err}");
        assert!(k.world.node("node-02").unwrap().secrets.is_empty());
    }

    #[test]
    fn fake_apiserver_never_sees_the_token() {
        let mut k = cluster();
        k.add_impostor("rogue", "kubelet:rogue").unwrap();
        k.add_kubelet("node-03").unwrap();
        let p = K8sCluster::bootstrap_principal("node-03");
        let err = k.bootstrap_via("node-03", "rogue", "kubelet:rogue", &p, "kubelet:node-03", &[Usage::Client]).unwrap_err();
        let alert = err.handshake().map(HandshakeError::alert);
        assert_eq!(alert, Some(AlertDescription::IbeAuthFailure), "{err}");
        let last = k.world.log.entries.last().unwrap();
        assert_eq!(last.outcome, StepOutcome::Aborted);
        // No request was ever filed for node-03.
        let filed = k.world.service.with_issuer(APISERVER_DOMAIN, |i| i.requests().any(|r| r.principal == p.subject)).unwrap();
        assert!(!filed);
    }

    #[test]
    fn server_without_key_cannot_listen() {
        let mut k = cluster();
        k.add_kubelet("node-04").unwrap();
        let r = k.world.connect(APISERVER_DOMAIN, "kubectl", Some("kubectl:admin"), "node-04", "kubelet:node-04", None);
        assert!(matches!(r, Err(SimError::NoKey { .. })));
    }

    #[test]
    fn trust_domains_are_isolated() {
        let mut k = cluster();
        assert!(k.domains_isolated().unwrap());
        let probes: Vec<_> = k.world.log.by_action("cross-domain").collect();
        assert_eq!(probes.len(), 12);
        assert!(probes.iter().all(|e| e.outcome == StepOutcome::Aborted));
    }

    #[test]
    fn bootstrap_over_tcp() {
        let mut k = cluster();
        k.enable_tcp().unwrap();
        k.add_kubelet("node-05").unwrap();
        let p = K8sCluster::bootstrap_principal("node-05");
        let id = k.bootstrap_component("node-05", &p, "kubelet:node-05", &[Usage::Client, Usage::Server]).unwrap();
        assert_eq!(id.to_string(), "kubelet:node-05.1");
        k.world.connect(APISERVER_DOMAIN, "node-05", Some("kubelet:node-05"), "kube-apiserver", "kube-apiserver", None).unwrap();
    }

    #[test]
    fn workload_identity_from_service_account() {
        let mut k = cluster();
        k.add_kubelet("checkout").unwrap();
        let sa = K8sCluster::service_account("payments", "checkout-api");
        let id = k.bootstrap_component("checkout", &sa, "prod.payments.checkout-api", &[Usage::Server]).unwrap();
        assert_eq!(id.to_string(), "prod.payments.checkout-api.1");
    }
}
