//! Auditing an identity registry: the chain verifies, and flipping any bit
//! of any record is caught.
//!
//! ```bash
//! cargo run --example registry_audit
//! ```

use ibetls::tpkg::{verify_jsonl, Registry, RegistryEvent, RegistryRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = "ibe.kubernetes.io/etcd";
    let mut reg = Registry::new();
    reg.append(RegistryRecord::new(RegistryEvent::Genesis, domain, "", "tpkg-setup", 0, ""));
    for i in 1..=20 {
        let id = format!("etcd-peer-{i}.1");
        reg.append(RegistryRecord::new(RegistryEvent::Issued, domain, &id, "kubernetes-admin", i, "1"));
    }
    reg.append(RegistryRecord::new(RegistryEvent::Revoked, domain, "etcd-peer-3", "kubernetes-admin", 30, "1"));
    let text = reg.to_jsonl();
    println!("{} records, head {}", verify_jsonl(&text)?.len(), hex::encode(reg.head().unwrap()));

    let mut caught = 0;
    let mut tried = 0;
    let bytes = text.as_bytes();
    for pos in (0..bytes.len()).step_by(97) {
        if bytes[pos] == b'\n' {
            continue;
        }
        let mut m = bytes.to_vec();
        m[pos] ^= 0x01;
        tried += 1;
        if verify_jsonl(&String::from_utf8_lossy(&m)).is_err() {
            caught += 1;
        }
    }
    println!("single-bit flips detected: {caught}/{tried}");
    Ok(())
}
