//! A server that requires client authentication meets a client that holds
//! back its identity: HelloRetryRequest, then a mutual handshake. A client
//! with no key at all is refused.
//!
//! ```bash
//! cargo run --example hello_retry
//! ```

use std::sync::Arc;

use ibetls::handshake::{
    connect_in_memory, ClientAuth, ClientConfig, ClientHandshake, IdentityDisclosure, ServerConfig, ServerHandshake,
    WireCapture,
};
use ibetls::kem::{extract, setup, KemParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (mpk, msk) = setup(&KemParams::compact(), [4; 32])?;
    let mpk = Arc::new(mpk);
    let etcd = "etcd-server.1".parse()?;
    let mut sc = ServerConfig::new(mpk.clone(), Arc::new(extract(&msk, &mpk, &etcd)?));
    sc.client_auth = ClientAuth::Required;

    let mut cc = ClientConfig::new(mpk.clone(), etcd.clone())
        .with_key(Arc::new(extract(&msk, &mpk, &"kube-apiserver-client.1".parse()?)?));
    cc.disclosure = IdentityDisclosure::OnRequest;
    let (mut c, mut s) = (ClientHandshake::new(cc, [5; 32]), ServerHandshake::new(sc.clone(), [6; 32]));
    let mut wire = WireCapture::new();
    connect_in_memory(&mut c, &mut s, &mut wire, None)?;
    // 1 ClientHello, 6 HelloRetryRequest, 2 ServerHello
    println!("plaintext handshake types on the wire: {:?}", wire.plaintext_handshake_types());
    println!("mutual: {}, peer {}", s.is_mutual(), s.peer_identity().unwrap());

    let anon = ClientConfig::new(mpk, etcd);
    let (mut c, mut s) = (ClientHandshake::new(anon, [7; 32]), ServerHandshake::new(sc, [8; 32]));
    let err = connect_in_memory(&mut c, &mut s, &mut WireCapture::new(), None).unwrap_err();
    println!("keyless client: {err} (alert {:?})", err.alert());
    Ok(())
}
