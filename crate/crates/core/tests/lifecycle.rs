mod common;

use ibetls::kem::KemParams;
use ibetls::simnet::{execute, rotate_epoch_scenario, Expect, K8sCluster, Scenario, StepOutcome, APISERVER_DOMAIN};
use ibetls::tpkg::{verify_jsonl, RegistryEvent, Usage};

#[test]
fn demo_scripts_run_as_written() {
    for script in [Scenario::demo_k8s(), Scenario::demo_5g()] {
        let run = execute(&script, 3).unwrap();
        assert!(!run.log.entries.is_empty());
        for (domain, records) in &run.registries {
            let text: String = records.iter().map(|r| r.to_json_line() + "\n").collect();
            assert_eq!(verify_jsonl(&text).unwrap().len(), records.len(), "{domain}");
        }
    }
}

#[test]
fn scripts_survive_json() {
    let s = Scenario::demo_k8s();
    let again = Scenario::from_json(&s.to_json()).unwrap();
    assert_eq!(execute(&s, 9).unwrap().log.to_jsonl(), execute(&again, 9).unwrap().log.to_jsonl());
}

#[test]
fn rotation_window_and_revocation() {
    let r = rotate_epoch_scenario("ibe.test/rot", 2, KemParams::compact()).unwrap();
    assert!(r.passed(), "{:?}", r.checks);
    let names: Vec<_> = r.checks.iter().map(|c| c.name.as_str()).collect();
    assert!(names.iter().any(|n| n.contains("revoked")));
    assert!(names.iter().any(|n| n.contains("after window")));
}

#[test]
fn bootstrap_token_waits_for_server_finished() {
    let mut k = K8sCluster::new("prod", 4, KemParams::compact()).unwrap();
    k.add_kubelet("node-07").unwrap();
    let p = K8sCluster::bootstrap_principal("node-07");
    k.bootstrap_component("node-07", &p, "kubelet:node-07", &[Usage::Client]).unwrap();
    let e = k.world.log.entries.last().unwrap();
    assert_eq!((e.action.as_str(), e.outcome), ("bootstrap", StepOutcome::Ok));
    let issued = k
        .world
        .service
        .with_issuer(APISERVER_DOMAIN, |i| {
            i.registry().records().iter().filter(|r| r.identity == "kubelet:node-07.1" && r.event == RegistryEvent::Issued).count()
        })
        .unwrap();
    assert_eq!(issued, 1);
}

#[test]
fn unexpected_outcome_fails_the_script() {
    let mut s = Scenario::demo_k8s();
    let i = s.steps.iter().rposition(|st| serde_json::to_value(st).unwrap()["expect"] == "ok").unwrap();
    let mut j = serde_json::to_value(&s.steps[i]).unwrap();
    j["expect"] = serde_json::to_value(Expect::Denied).unwrap();
    s.steps[i] = serde_json::from_value(j).unwrap();
    assert!(execute(&s, 1).is_err());
}
