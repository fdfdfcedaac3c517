//! Splitting a domain's master seed among three T-PKG nodes (threshold two),
//! then issuing keys through the request/approve flow.
//!
//! ```bash
//! cargo run --example threshold_issuance
//! ```

use std::sync::Arc;

use ibetls::kem::{extract, Epoch, KemParams};
use ibetls::tpkg::{
    quorum_reconstruct, tpkg_setup, Issuer, IssuerPolicy, ManualClock, Principal, PrincipalKind, Usage,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = "ibe.kubernetes.io/apiserver";
    let params = KemParams::compact();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut seed = [9u8; 32];
    seed[0] &= 0x7f;
    let (mpk, set, genesis) = tpkg_setup(domain, &params, 3, 2, seed, &mut rng, 0)?;
    println!("{} shares, any {} reconstruct", set.n_nodes, set.threshold);

    for pick in [&[0usize][..], &[0, 1], &[1, 2], &[0, 1, 2]] {
        let shares: Vec<_> = pick.iter().map(|&i| set.shares[i].clone()).collect();
        let ok = quorum_reconstruct(&shares, &mpk, |msk| extract(msk, &mpk, &"probe.1".parse().unwrap()).is_ok());
        println!("nodes {pick:?}: {}", if ok.is_ok() { "reconstructed" } else { "refused" });
    }

    let clock = Arc::new(ManualClock::new(1_767_139_200));
    let policy = IssuerPolicy::kubernetes_apiserver("prod", Epoch::Counter(1));
    let mut issuer = Issuer::new(Arc::new(mpk), policy, genesis, clock)?;
    let admin = Principal::new(PrincipalKind::Admin, "kubernetes-admin", &["system:masters"]);
    let kubelet = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);

    // Kubelets are auto-approved; operator requests wait for an approver.
    let r = issuer.submit_request("kubelet:node-01", [Usage::Client, Usage::Server].into(), 3600, &kubelet)?;
    println!("{} {} {:?}", r.name, r.identity, r.status);
    let r2 = issuer.submit_request("kube-scheduler", [Usage::Client].into(), 3600, &admin)?;
    println!("{} {} {:?}", r2.name, r2.identity, r2.status);
    println!("{} -> {:?}", r2.name, issuer.approve_request(&r2.name, &admin)?);

    let key = issuer.extract_and_deliver(&r.name, &set.shares[1..])?;
    println!("delivered {}", key.identity);
    match issuer.extract_and_deliver(&r.name, &set.shares[1..]) {
        Err(e) => println!("second collection: {e}"),
        Ok(_) => unreachable!("keys are issued once"),
    }

    issuer.registry().verify()?;
    for rec in issuer.registry().records() {
        println!("  #{} {:?} {}", rec.index, rec.event, rec.identity);
    }
    Ok(())
}
