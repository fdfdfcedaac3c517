//! A mutual IBE-TLS handshake in memory: no certificates on the wire, three
//! encapsulations, zero signatures.
//!
//! ```bash
//! cargo run --example handshake_mutual
//! ```

use std::sync::Arc;

use ibetls::handshake::{connect_in_memory, ClientConfig, ClientHandshake, ServerConfig, ServerHandshake, WireCapture};
use ibetls::kem::{extract, setup, KemParams};
use ibetls::metrics::{assert_invariants, HandshakeMetrics};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (mpk, msk) = setup(&KemParams::compact(), [3; 32])?;
    let mpk = Arc::new(mpk);
    let server_id = "kube-apiserver.1".parse()?;
    let server_key = Arc::new(extract(&msk, &mpk, &server_id)?);
    let client_key = Arc::new(extract(&msk, &mpk, &"kubelet:node-01.1".parse()?)?);

    let cc = ClientConfig::new(mpk.clone(), server_id).with_key(client_key);
    let sc = ServerConfig::new(mpk, server_key);
    let mut client = ClientHandshake::new(cc, [1; 32]);
    let mut server = ServerHandshake::new(sc, [2; 32]);
    let mut wire = WireCapture::new();
    connect_in_memory(&mut client, &mut server, &mut wire, None)?;

    println!("server sees client as {}", server.peer_identity().unwrap());
    println!(
        "application secrets equal: {}",
        client.schedule().client_app_traffic_secret_0() == server.schedule().client_app_traffic_secret_0()
    );
    println!("{} records, {} bytes, {} certificate bytes", wire.records.len(), wire.total_bytes(), wire.certificate_bytes());

    let rec = client.send_application_data(b"GET /healthz")?;
    println!("server got {:?}", String::from_utf8(server.receive_application_data(&rec)?)?);

    let m = HandshakeMetrics::combine(client.metrics(), server.metrics())?;
    println!("ops {:?}", m.ops);
    for c in assert_invariants(&m) {
        println!("  {:<28} {}", c.name, if c.passed { "ok" } else { "FAILED" });
    }
    Ok(())
}
