mod common;

use common::*;
use ibetls::handshake::{connect_in_memory, ClientConfig, ClientHandshake, ServerConfig, ServerHandshake, WireCapture};
use ibetls::kem::KemParams;
use ibetls::simnet::{nf_identity, DeliveryPath, FiveGCore, NfType};

const AMF: &str = "00101.AMF.amf-001.20250101";
const UDM: &str = "00101.UDM.udm-001.20250101";

fn nf_pair(d: &Domain, seed: u8) -> (ClientHandshake, ServerHandshake) {
    let cc = ClientConfig::new(d.mpk.clone(), id(UDM)).with_key(d.key(AMF));
    let sc = ServerConfig::new(d.mpk.clone(), d.key(UDM));
    (ClientHandshake::new(cc, [seed; 32]), ServerHandshake::new(sc, [seed ^ 0xff; 32]))
}

#[test]
fn both_directions_encapsulate() {
    let d = Domain::new(&KemParams::compact(), 5);
    let (mut c, mut s) = nf_pair(&d, 1);
    connect_in_memory(&mut c, &mut s, &mut WireCapture::new(), None).unwrap();
    let (co, so) = (c.metrics().ops, s.metrics().ops);
    assert!(co.encaps >= 1 && so.encaps >= 1, "client {co:?} server {so:?}");
    assert!(co.decaps >= 1 && so.decaps >= 1);
    assert_eq!(s.peer_identity().unwrap().to_string(), AMF);
}

#[test]
fn sba_payload_is_aead_protected() {
    let d = Domain::new(&KemParams::compact(), 6);
    let (mut c, mut s) = nf_pair(&d, 2);
    connect_in_memory(&mut c, &mut s, &mut WireCapture::new(), None).unwrap();
    let body = b"GET /nudm-sdm/v2/imsi-001010000000001/am-data";
    let rec = c.send_application_data(body).unwrap();
    assert!(!rec.fragment.windows(body.len()).any(|w| w == body));
    let mut bad = rec.clone();
    let last = bad.fragment.len() - 1;
    bad.fragment[last] ^= 1;
    assert!(s.receive_application_data(&bad).is_err());
}

#[test]
fn sessions_use_fresh_randoms() {
    let d = Domain::new(&KemParams::compact(), 7);
    let (mut c1, mut s1) = nf_pair(&d, 3);
    let (mut c2, mut s2) = nf_pair(&d, 4);
    connect_in_memory(&mut c1, &mut s1, &mut WireCapture::new(), None).unwrap();
    connect_in_memory(&mut c2, &mut s2, &mut WireCapture::new(), None).unwrap();
    assert_ne!(c1.transcript_messages()[0], c2.transcript_messages()[0]);
    assert_ne!(c1.schedule().client_app_traffic_secret_0(), c2.schedule().client_app_traffic_secret_0());
}

#[test]
fn nf_without_its_key_cannot_answer() {
    let d = Domain::new(&KemParams::compact(), 8);
    let cc = ClientConfig::new(d.mpk.clone(), id(UDM)).with_key(d.key(AMF));
    // a SMF key answering for the UDM name
    let sc = ServerConfig::new(d.mpk.clone(), d.key("00101.SMF.smf-001.20250101"));
    let (mut c, mut s) = (ClientHandshake::new(cc, [1; 32]), ServerHandshake::new(sc, [2; 32]));
    assert!(connect_in_memory(&mut c, &mut s, &mut WireCapture::new(), None).is_err());
    assert!(!c.is_complete());
}

#[test]
fn both_delivery_paths_register() {
    let mut core = FiveGCore::new(3, KemParams::compact()).unwrap();
    core.add_nf(NfType::AMF, "amf-001").unwrap();
    core.add_nf(NfType::SMF, "smf-001").unwrap();
    let a = core.nf_register("amf-001", DeliveryPath::NrfMediated).unwrap();
    let b = core.nf_register("smf-001", DeliveryPath::Direct).unwrap();
    assert_eq!(a, nf_identity("00101", "AMF", "amf-001", "20250101").unwrap());
    assert_eq!(b.to_string(), "00101.SMF.smf-001.20250101");
    core.interaction("PDU session", "amf-001", "nsmf-pdusession", 2).unwrap();
    core.world.verify_registries().unwrap();
}
