//! The service over TCP: one IBE-TLS session per connection, one JSON
//! request per framed application message.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;

use sha2::{Digest, Sha256};

use super::api::{ApiRequest, ApiResponse, TpkgService};
use super::TpkgError;
use crate::handshake::{ClientConfig, ClientHandshake, HandshakeError, ServerConfig, ServerHandshake, TlsStream};

/// Serves one accepted connection until the peer hangs up.
pub fn serve_connection(
    service: &TpkgService,
    config: ServerConfig,
    tcp: TcpStream,
    rng_seed: [u8; 32],
) -> Result<usize, HandshakeError> {
    let mut tls = TlsStream::accept(ServerHandshake::new(config, rng_seed), tcp)?;
    let mut served = 0;
    loop {
        let msg = match tls.recv() {
            Ok(m) => m,
            Err(HandshakeError::Decode(e)) if e.starts_with("transport") => return Ok(served),
            Err(e) => return Err(e),
        };
        let resp = service.handle_bytes(&msg);
        tls.send(&resp)?;
        served += 1;
    }
}

/// Accepts connections forever, one thread each. Per-connection handshake
/// randomness is derived from `seed` and the connection counter.
pub fn spawn_server(
    listener: TcpListener,
    service: Arc<TpkgService>,
    config: ServerConfig,
    seed: [u8; 32],
) -> JoinHandle<()> {
    std::thread::spawn(move || {
        for (i, conn) in listener.incoming().enumerate() {
            let tcp = match conn {
                Ok(t) => t,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let peer = tcp.peer_addr().ok();
            let svc = service.clone();
            let cfg = config.clone();
            let conn_seed: [u8; 32] = Sha256::new().chain_update(seed).chain_update((i as u64).to_be_bytes()).finalize().into();
            std::thread::spawn(move || match serve_connection(&svc, cfg, tcp, conn_seed) {
                Ok(n) => log::info!("{peer:?}: served {n} requests"),
                Err(e) => log::warn!("{peer:?}: {e}"),
            });
        }
    })
}

pub struct TpkgClient {
    tls: TlsStream<ClientHandshake, TcpStream>,
}

impl TpkgClient {
    /// Connects and completes the handshake. Nothing is sent on the
    /// application channel until the server's Finished has verified.
    pub fn connect(addr: SocketAddr, config: ClientConfig, rng_seed: [u8; 32]) -> Result<Self, HandshakeError> {
        let tcp = TcpStream::connect(addr).map_err(|e| HandshakeError::Decode(format!("transport: {e}")))?;
        Ok(TpkgClient { tls: TlsStream::connect(ClientHandshake::new(config, rng_seed), tcp)? })
    }

    pub fn call(&mut self, req: &ApiRequest) -> Result<ApiResponse, TpkgError> {
        let raw = serde_json::to_vec(req).map_err(|e| TpkgError::Malformed(e.to_string()))?;
        self.tls.send(&raw).map_err(|e| TpkgError::Storage(e.to_string()))?;
        let resp = self.tls.recv().map_err(|e| TpkgError::Storage(e.to_string()))?;
        serde_json::from_slice(&resp).map_err(|e| TpkgError::Malformed(e.to_string()))
    }

    pub fn session(&self) -> &ClientHandshake {
        self.tls.session()
    }
}
