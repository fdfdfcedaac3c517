//! A kubelet joins the control plane with a bootstrap token, every
//! control-plane pair connects, and the three trust domains stay apart.
//!
//! ```bash
//! cargo run --example k8s_bootstrap
//! ```

use ibetls::kem::KemParams;
use ibetls::simnet::{K8sCluster, StepOutcome, CONTROL_PLANE_PAIRS};
use ibetls::tpkg::Usage;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut k = K8sCluster::new("prod-us-west", 1, KemParams::compact())?;
    k.add_kubelet("node-01")?;
    let bootstrap = K8sCluster::bootstrap_principal("node-01");
    let id = k.bootstrap_component("node-01", &bootstrap, "kubelet:node-01", &[Usage::Client, Usage::Server])?;
    println!("node-01 holds {id}");

    // The token only goes out once the server's Finished has verified.
    k.add_kubelet("node-02")?;
    k.add_impostor("rogue", "kubelet:rogue")?;
    let stolen = k.bootstrap_via("node-02", "rogue", "kubelet:rogue", &K8sCluster::bootstrap_principal("node-02"), "kubelet:node-02", &[Usage::Client]);
    println!("bootstrap against an impostor: {}", stolen.unwrap_err());

    let n = k.connect_all_pairs()?;
    println!("{n} of {} control-plane pairs connected", CONTROL_PLANE_PAIRS.len());
    println!("trust domains isolated: {}", k.domains_isolated()?);

    for e in k.world.log.entries.iter().filter(|e| e.action == "connect" && e.outcome == StepOutcome::Ok) {
        let m = e.metrics.as_ref().unwrap();
        println!("  {:<24} -> {:<15} encaps={} decaps={} sign={}", e.initiator, e.responder, m.ops.encaps, m.ops.decaps, m.ops.sign);
    }
    k.world.verify_registries()?;
    Ok(())
}
