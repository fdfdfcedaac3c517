use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::fiveg::{DeliveryPath, FiveGCore};
use super::k8s::{K8sCluster, APISERVER_DOMAIN};
use super::log::{StepOutcome, TranscriptLog};
use super::node::{NfType, Role, SimNode};
use super::{SimError, World};
use crate::kem::{Epoch, IdentityString, KemParams};
use crate::tpkg::{IssuerPolicy, Principal, PrincipalKind, RegistryRecord, Usage};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expect {
    #[default]
    Ok,
    Denied,
    Aborted,
    Error,
    Any,
}

impl Expect {
    fn matches(self, o: StepOutcome) -> bool {
        matches!(
            (self, o),
            (Expect::Any, _)
                | (Expect::Ok, StepOutcome::Ok)
                | (Expect::Denied, StepOutcome::Denied)
                | (Expect::Aborted, StepOutcome::Aborted)
                | (Expect::Error, StepOutcome::Error)
        )
    }
}

fn default_usage() -> Vec<Usage> {
    vec![Usage::Client, Usage::Server]
}

fn default_calls() -> usize {
    1
}

/// Endpoint a bootstrap dials instead of the API server, and the key it
/// answers with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Via {
    pub node: String,
    pub key: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Deployment {
    Kubernetes { cluster: String },
    #[serde(rename = "5g")]
    FiveG,
}

/// One scenario step. `expect` is checked against the last log entry the
/// step produced; with `ok`, every entry of the step must be ok.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Step {
    AddKubelet {
        node: String,
    },
    AddImpostor {
        node: String,
        stolen: String,
    },
    /// `principal` is `bootstrap` (default) or `serviceaccount:NS:NAME`.
    Bootstrap {
        node: String,
        identity: String,
        #[serde(default)]
        principal: Option<String>,
        #[serde(default)]
        via: Option<Via>,
        #[serde(default = "default_usage")]
        usage: Vec<Usage>,
        #[serde(default)]
        expect: Expect,
    },
    /// Every control-plane initiator/responder pair.
    ControlPlane {
        #[serde(default)]
        parallel: bool,
        #[serde(default)]
        expect: Expect,
    },
    /// Cross-domain probes for every ordered pair of trust domains.
    Isolation,
    Connect {
        #[serde(default)]
        domain: Option<String>,
        initiator: String,
        #[serde(default)]
        own: Option<String>,
        responder: String,
        identity: String,
        #[serde(default)]
        expected: Option<String>,
        #[serde(default)]
        expect: Expect,
    },
    Provision {
        node: String,
        #[serde(default)]
        domain: Option<String>,
        identity: String,
        #[serde(default = "default_usage")]
        usage: Vec<Usage>,
    },
    Rotate {
        #[serde(default)]
        domain: Option<String>,
    },
    Revoke {
        #[serde(default)]
        domain: Option<String>,
        identity: String,
        #[serde(default)]
        expect: Expect,
    },
    AddNf {
        nf_type: NfType,
        instance: String,
    },
    Register {
        instance: String,
        path: DeliveryPath,
        #[serde(default)]
        expect: Expect,
    },
    Discover {
        instance: String,
        service: String,
        #[serde(default)]
        expect: Expect,
    },
    Sba {
        label: String,
        instance: String,
        service: String,
        #[serde(default = "default_calls")]
        calls: usize,
        #[serde(default)]
        expect: Expect,
    },
    /// Overwrites the identity string the NRF hands out for `instance`.
    SetProfileIdentity {
        instance: String,
        identity: String,
    },
    VerifyRegistry,
}

impl Step {
    fn expect(&self) -> Expect {
        match self {
            Step::Bootstrap { expect, .. }
            | Step::ControlPlane { expect, .. }
            | Step::Connect { expect, .. }
            | Step::Revoke { expect, .. }
            | Step::Register { expect, .. }
            | Step::Discover { expect, .. }
            | Step::Sba { expect, .. } => *expect,
            Step::Isolation => Expect::Aborted,
            _ => Expect::Ok,
        }
    }
}

fn default_params() -> String {
    "compact".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub deployment: Deployment,
    #[serde(default = "default_params")]
    pub params: String,
    pub steps: Vec<Step>,
}

enum Env {
    K8s(Box<K8sCluster>),
    FiveG(Box<FiveGCore>),
}

impl Env {
    fn world(&mut self) -> &mut World {
        match self {
            Env::K8s(k) => &mut k.world,
            Env::FiveG(f) => &mut f.world,
        }
    }

    fn default_domain(&self) -> String {
        match self {
            Env::K8s(_) => APISERVER_DOMAIN.to_owned(),
            Env::FiveG(f) => f.domain.clone(),
        }
    }

    fn k8s(&mut self, op: &str) -> Result<&mut K8sCluster, SimError> {
        match self {
            Env::K8s(k) => Ok(k),
            Env::FiveG(_) => Err(SimError::Script(format!("{op} needs a kubernetes deployment"))),
        }
    }

    fn fiveg(&mut self, op: &str) -> Result<&mut FiveGCore, SimError> {
        match self {
            Env::FiveG(f) => Ok(f),
            Env::K8s(_) => Err(SimError::Script(format!("{op} needs a 5g deployment"))),
        }
    }
}

fn principal(spec: Option<&str>, node: &str) -> Result<Principal, SimError> {
    match spec.unwrap_or("bootstrap") {
        "bootstrap" => Ok(K8sCluster::bootstrap_principal(node)),
        s => match s.split(':').collect::<Vec<_>>().as_slice() {
            ["serviceaccount", ns, name] => Ok(K8sCluster::service_account(ns, name)),
            _ => Err(SimError::Script(format!("unknown principal {s}"))),
        },
    }
}

fn exec(env: &mut Env, step: &Step) -> Result<(), SimError> {
    let dflt = env.default_domain();
    let dom = |d: &Option<String>| d.clone().unwrap_or_else(|| dflt.clone());
    match step {
        Step::AddKubelet { node } => env.k8s("add-kubelet")?.add_kubelet(node),
        Step::AddImpostor { node, stolen } => env.k8s("add-impostor")?.add_impostor(node, stolen),
        Step::Bootstrap { node, identity, principal: p, via, usage, .. } => {
            let p = principal(p.as_deref(), node)?;
            let k = env.k8s("bootstrap")?;
            match via {
                None => k.bootstrap_component(node, &p, identity, usage).map(|_| ()),
                Some(v) => k.bootstrap_via(node, &v.node, &v.key, &p, identity, usage).map(|_| ()),
            }
        }
        Step::ControlPlane { parallel, .. } => {
            let k = env.k8s("control-plane")?;
            if *parallel {
                k.connect_all_pairs_parallel().map(|_| ())
            } else {
                k.connect_all_pairs().map(|_| ())
            }
        }
        Step::Isolation => env.k8s("isolation")?.domains_isolated().map(|_| ()),
        Step::Connect { domain, initiator, own, responder, identity, expected, .. } => {
            let expected = expected.as_deref().map(IdentityString::parse).transpose()?;
            let d = dom(domain);
            env.world().connect(&d, initiator, own.as_deref(), responder, identity, expected).map(|_| ())
        }
        Step::Provision { node, domain, identity, usage } => {
            let d = dom(domain);
            env.world().provision(node, &d, identity, usage).map(|_| ())
        }
        Step::Rotate { domain } => {
            let d = dom(domain);
            env.world().bump_epoch(&d).map(|_| ())
        }
        Step::Revoke { domain, identity, .. } => {
            let d = dom(domain);
            env.world().revoke(&d, identity)
        }
        Step::AddNf { nf_type, instance } => env.fiveg("add-nf")?.add_nf(*nf_type, instance),
        Step::Register { instance, path, .. } => env.fiveg("register")?.nf_register(instance, *path).map(|_| ()),
        Step::Discover { instance, service, .. } => env.fiveg("discover")?.nf_discover(instance, service).map(|_| ()),
        Step::Sba { label, instance, service, calls, .. } => {
            env.fiveg("sba")?.interaction(label, instance, service, *calls).map(|_| ())
        }
        Step::SetProfileIdentity { instance, identity } => {
            env.fiveg("set-profile-identity")?.registry.set_identity(instance, identity);
            Ok(())
        }
        Step::VerifyRegistry => env.world().verify_registries(),
    }
}

/// A finished run: the transcript and every domain's registry.
#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub log: TranscriptLog,
    pub registries: BTreeMap<String, Vec<RegistryRecord>>,
}

/// Runs a script from a fresh deployment. The transcript depends only on the
/// script and `seed`. Fails on the first step whose outcome differs from its
/// expectation.
pub fn run_scenario(script: &Scenario, seed: u64) -> Result<TranscriptLog, SimError> {
    execute(script, seed).map(|r| r.log)
}

pub fn execute(script: &Scenario, seed: u64) -> Result<ScenarioRun, SimError> {
    let params = KemParams::by_name(&script.params)
        .ok_or_else(|| SimError::Script(format!("unknown parameter set {}", script.params)))?;
    let mut env = match &script.deployment {
        Deployment::Kubernetes { cluster } => Env::K8s(Box::new(K8sCluster::new(cluster, seed, params)?)),
        Deployment::FiveG => Env::FiveG(Box::new(FiveGCore::new(seed, params)?)),
    };
    for (i, step) in script.steps.iter().enumerate() {
        let before = env.world().log.entries.len();
        let res = exec(&mut env, step);
        let log = &env.world().log;
        let produced = &log.entries[before..];
        let expect = step.expect();
        let Some(last) = produced.last() else {
            match res {
                Ok(()) => continue,
                Err(e) => return Err(SimError::Script(format!("step {i} ({}): {e}", op_name(step)))),
            }
        };
        let all_ok = expect != Expect::Ok || produced.iter().all(|e| e.outcome == StepOutcome::Ok);
        let uniform = step != &Step::Isolation || produced.iter().all(|e| e.outcome == StepOutcome::Aborted);
        if !expect.matches(last.outcome) || !all_ok || !uniform {
            let why = res.err().map(|e| e.to_string()).unwrap_or_else(|| last.detail.clone());
            return Err(SimError::Script(format!(
                "step {i} ({}): expected {expect:?}, got {:?}: {why}",
                op_name(step),
                last.outcome
            )));
        }
    }
    let w = env.world();
    let mut log = std::mem::take(&mut w.log);
    log.entries.iter_mut().enumerate().for_each(|(i, e)| e.step = i);
    let mut registries = BTreeMap::new();
    for d in w.service.domains() {
        registries.insert(d.to_owned(), w.service.registry_snapshot(d)?.to_vec());
    }
    Ok(ScenarioRun { log, registries })
}

fn op_name(step: &Step) -> String {
    serde_json::to_value(step).ok().and_then(|v| v["op"].as_str().map(str::to_owned)).unwrap_or_default()
}

impl Scenario {
    pub fn from_json(s: &str) -> Result<Self, SimError> {
        serde_json::from_str(s).map_err(|e| SimError::Script(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenarios serialize")
    }

    /// Control plane: kubelet and workload bootstrap, the negative bootstrap
    /// cases, every component pair, domain isolation and an audit.
    pub fn demo_k8s() -> Self {
        let json = serde_json::json!({
            "name": "demo-k8s",
            "deployment": { "kind": "kubernetes", "cluster": "prod-us-west" },
            "steps": [
                { "op": "add-kubelet", "node": "node-01" },
                { "op": "bootstrap", "node": "node-01", "identity": "kubelet:node-01" },
                { "op": "add-kubelet", "node": "node-02" },
                { "op": "bootstrap", "node": "node-02", "identity": "controller-manager", "usage": ["client"], "expect": "denied" },
                { "op": "add-impostor", "node": "rogue", "stolen": "kubelet:rogue" },
                { "op": "add-kubelet", "node": "node-03" },
                { "op": "bootstrap", "node": "node-03", "identity": "kubelet:node-03", "via": { "node": "rogue", "key": "kubelet:rogue" }, "expect": "aborted" },
                { "op": "control-plane" },
                { "op": "isolation" },
                { "op": "add-kubelet", "node": "checkout-api" },
                { "op": "bootstrap", "node": "checkout-api", "identity": "prod-us-west.payments.checkout-api",
                  "principal": "serviceaccount:payments:checkout-api", "usage": ["server"] },
                { "op": "verify-registry" }
            ]
        });
        serde_json::from_value(json).expect("built-in scenario parses")
    }

    /// 5G core: every function registers (both key delivery paths), then
    /// discovery and the representative SBA interactions, an unknown service
    /// and a revoked producer.
    pub fn demo_5g() -> Self {
        let nfs = [
            ("AMF", "amf-001", "nrf-mediated"),
            ("AMF", "amf-002", "direct"),
            ("SMF", "smf-001", "direct"),
            ("UPF", "upf-001", "nrf-mediated"),
            ("UDM", "udm-001", "nrf-mediated"),
            ("AUSF", "ausf-001", "direct"),
            ("PCF", "pcf-001", "nrf-mediated"),
            ("NSSF", "nssf-001", "direct"),
        ];
        let mut steps = Vec::new();
        for (t, i, path) in nfs {
            steps.push(serde_json::json!({ "op": "add-nf", "nf_type": t, "instance": i }));
            steps.push(serde_json::json!({ "op": "register", "instance": i, "path": path }));
        }
        steps.extend([
            serde_json::json!({ "op": "discover", "instance": "smf-001", "service": "npcf-smpolicycontrol" }),
            serde_json::json!({ "op": "sba", "label": "UE Registration", "instance": "amf-001", "service": "nudm-uecm", "calls": 2 }),
            serde_json::json!({ "op": "sba", "label": "UE Authentication", "instance": "amf-001", "service": "nausf-auth" }),
            serde_json::json!({ "op": "sba", "label": "Session Establishment", "instance": "amf-001", "service": "nsmf-pdusession", "calls": 3 }),
            serde_json::json!({ "op": "sba", "label": "Policy Control", "instance": "smf-001", "service": "npcf-smpolicycontrol", "calls": 3 }),
            serde_json::json!({ "op": "sba", "label": "Mobility Handling", "instance": "amf-001", "service": "namf-comm" }),
            serde_json::json!({ "op": "sba", "label": "Slice Selection", "instance": "amf-001", "service": "nnssf-nsselection" }),
            serde_json::json!({ "op": "sba", "label": "Subscriber Data", "instance": "smf-001", "service": "nudm-sdm" }),
            serde_json::json!({ "op": "discover", "instance": "smf-001", "service": "nfoo-bar", "expect": "denied" }),
            serde_json::json!({ "op": "revoke", "identity": "00101.UDM.udm-001" }),
            serde_json::json!({ "op": "sba", "label": "Subscriber Data", "instance": "smf-001", "service": "nudm-sdm", "expect": "aborted" }),
            serde_json::json!({ "op": "verify-registry" }),
        ]);
        let json = serde_json::json!({ "name": "demo-5g", "deployment": { "kind": "5g" }, "steps": steps });
        serde_json::from_value(json).expect("built-in scenario parses")
    }
}

/// Outcome of one rotation check against what the window arithmetic predicts.
#[derive(Clone, Debug, Serialize)]
pub struct RotationCheck {
    pub name: String,
    pub expected_ok: bool,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RotationReport {
    pub domain: String,
    pub checks: Vec<RotationCheck>,
    pub log: TranscriptLog,
}

impl RotationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok == c.expected_ok)
    }
}

/// Epoch rotation with a window of one: old and new epochs interoperate,
/// a revoked identity fails immediately, and after a second increment the
/// oldest epoch no longer completes.
pub fn rotate_epoch_scenario(domain: &str, seed: u64, params: KemParams) -> Result<RotationReport, SimError> {
    let operator = Principal::new(PrincipalKind::Admin, "rotation-operator", &["system:masters"]);
    let mut w = World::new(seed, params, operator);
    let mpk = w.add_domain(IssuerPolicy::operator_only(domain, &["svc-*"], Epoch::Counter(1)))?;
    for n in ["a", "b", "c", "d"] {
        w.add_node(SimNode::new(&format!("node-{n}"), Role::Operator).trusting(domain, mpk.clone()));
    }
    let cs = [Usage::Client, Usage::Server];
    let mut checks = Vec::new();
    let mut check = |w: &mut World, name: &str, expected_ok: bool, ini: &str, own: &str, resp: &str, id: &str, expected: Option<String>| {
        let expected = expected.map(|e| IdentityString::parse(&e).expect("well-formed"));
        let ok = w.connect(domain, ini, Some(own), resp, id, expected).is_ok();
        checks.push(RotationCheck { name: name.to_owned(), expected_ok, ok });
    };

    w.provision("node-a", domain, "svc-a", &cs)?;
    w.provision("node-b", domain, "svc-b", &cs)?;
    w.provision("node-c", domain, "svc-c", &cs)?;
    check(&mut w, "epoch 1 baseline", true, "node-b", "svc-b", "node-a", "svc-a", None);

    w.bump_epoch(domain)?;
    w.provision("node-b", domain, "svc-b", &cs)?;
    w.provision("node-d", domain, "svc-d", &cs)?;
    check(&mut w, "new-epoch client to old-epoch server", true, "node-b", "svc-b", "node-a", "svc-a", None);
    check(&mut w, "old-epoch client to new-epoch server", true, "node-c", "svc-c", "node-d", "svc-d", None);

    w.revoke(domain, "svc-c")?;
    check(&mut w, "revoked client mid-window", false, "node-c", "svc-c", "node-d", "svc-d", None);
    check(&mut w, "revoked server mid-window", false, "node-d", "svc-d", "node-c", "svc-c", None);

    let e3 = w.bump_epoch(domain)?;
    check(&mut w, "old-epoch server after window", false, "node-b", "svc-b", "node-a", "svc-a", None);
    check(&mut w, "client expecting current epoch", false, "node-b", "svc-b", "node-a", "svc-a", Some(format!("svc-a.{e3}")));
    w.provision("node-a", domain, "svc-a", &cs)?;
    check(&mut w, "re-issued server", true, "node-b", "svc-b", "node-a", "svc-a", None);
    w.verify_registries()?;

    Ok(RotationReport { domain: domain.to_owned(), checks, log: w.log })
}
