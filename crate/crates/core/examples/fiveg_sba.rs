//! 5G core: network functions register with the NRF (both key delivery
//! paths), discover each other and talk over the service-based interface.
//! A revoked UDM is then unreachable.
//!
//! ```bash
//! cargo run --example fiveg_sba
//! ```

use ibetls::kem::KemParams;
use ibetls::simnet::{DeliveryPath, FiveGCore, NfType};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut core = FiveGCore::new(2, KemParams::compact())?;
    println!("NRF is {}", core.nrf_identity()?);
    for (t, inst, path) in [
        (NfType::AMF, "amf-001", DeliveryPath::NrfMediated),
        (NfType::SMF, "smf-001", DeliveryPath::Direct),
        (NfType::UDM, "udm-001", DeliveryPath::NrfMediated),
    ] {
        core.add_nf(t, inst)?;
        println!("{inst} registered as {}", core.nf_register(inst, path)?);
    }

    let found = core.nf_discover("smf-001", "nudm-sdm")?;
    println!("smf-001 found nudm-sdm at {}", found[0].identity);
    core.interaction("UE Registration", "amf-001", "nudm-uecm", 2)?;
    core.interaction("Session Establishment", "amf-001", "nsmf-pdusession", 1)?;

    match core.nf_discover("smf-001", "nfoo-bar") {
        Err(e) => println!("discover nfoo-bar: {e}"),
        Ok(_) => unreachable!(),
    }

    let udm = core.expected_identity("udm-001")?;
    let domain = core.domain.clone();
    core.world.revoke(&domain, &udm.name())?;
    let err = core.connect_service("smf-001", "nudm-sdm").unwrap_err();
    println!("after revoking {}: {err}", udm.name());

    core.world.verify_registries()?;
    print!("{}", core.world.log.to_jsonl());
    Ok(())
}
