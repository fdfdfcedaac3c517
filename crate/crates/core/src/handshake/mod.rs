//! IBE-TLS 1.3: extension codecs, key schedule, record protection and the
//! sans-IO client and server state machines.
//!
//! Certificates, CertificateRequest and CertificateVerify do not exist here.
//! The server proves possession of its identity key by decapsulating `ct_s`
//! from the ClientHello; in mutual mode the client does the same for `ct_c`
//! from the ServerHello. Both facts are confirmed by the Finished MACs.

pub mod codec;
mod driver;
pub mod record;
pub mod schedule;
mod session;
pub mod stream;

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::kem::{IdentityPrivateKey, IdentityString, KemError, MasterPublicKey};

pub use driver::{connect_in_memory, Direction, Tamper, WireCapture, WireRecord};
pub use session::{ClientHandshake, KeyLog, Role, ServerHandshake, SessionState};
pub use stream::{Endpoint, TlsStream};

/// Abort alerts. Every fatal error maps to exactly one of these.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[repr(u8)]
pub enum AlertDescription {
    DecodeError = 50,
    /// Finished or record authentication failed: somebody lacks the identity key.
    IbeAuthFailure = 224,
    UnsupportedScheme = 225,
}

impl AlertDescription {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            50 => Some(Self::DecodeError),
            224 => Some(Self::IbeAuthFailure),
            225 => Some(Self::UnsupportedScheme),
            _ => None,
        }
    }

    pub fn to_record(self) -> codec::Record {
        codec::Record { content_type: codec::ContentType::Alert as u8, fragment: vec![2, self as u8] }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("truncated message")]
    Truncated,
    #[error("decode error: {0}")]
    Decode(String),
    #[error("encode error: {0}")]
    Encode(String),
    #[error("unsupported scheme or group 0x{0:04x}")]
    UnsupportedScheme(u16),
    #[error("invalid state: {0}")]
    InvalidState(&'static str),
    #[error("key schedule out of order: {0}")]
    OutOfOrder(&'static str),
    #[error("authentication failed: {0}")]
    AuthFailure(&'static str),
    #[error("record authentication failed")]
    RecordAuth,
    #[error("replayed ClientHello or key share")]
    Replay,
    #[error("peer sent alert {0:?}")]
    PeerAlert(AlertDescription),
    #[error("kem: {0}")]
    Kem(KemError),
    #[error("configuration: {0}")]
    Config(String),
}

impl HandshakeError {
    /// The alert this error produces on the wire.
    pub fn alert(&self) -> AlertDescription {
        match self {
            HandshakeError::UnsupportedScheme(_) => AlertDescription::UnsupportedScheme,
            HandshakeError::Kem(KemError::UnsupportedScheme(_)) => AlertDescription::UnsupportedScheme,
            HandshakeError::AuthFailure(_)
            | HandshakeError::RecordAuth
            | HandshakeError::Replay
            | HandshakeError::Kem(KemError::ParamsMismatch) => AlertDescription::IbeAuthFailure,
            HandshakeError::PeerAlert(a) => *a,
            _ => AlertDescription::DecodeError,
        }
    }
}

impl From<KemError> for HandshakeError {
    fn from(e: KemError) -> Self {
        HandshakeError::Kem(e)
    }
}

/// When the client reveals its identity in cleartext.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IdentityDisclosure {
    /// In the first ClientHello.
    Eager,
    /// Only after a HelloRetryRequest asks for it.
    OnRequest,
    /// Never; the session stays unilateral.
    Never,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClientAuth {
    /// Mutual if the client offers an identity, unilateral otherwise.
    Optional,
    /// A HelloRetryRequest is sent when the first ClientHello has no identity.
    Required,
}

/// Maps a peer identity to the identity actually used for encapsulation.
///
/// Lifecycle policy plugs in here: a resolver may map a stale or revoked
/// identity to one nobody holds, so the peer fails at Finished instead of
/// being rejected by an explicit check.
pub trait PeerResolver: Send + Sync {
    fn resolve(&self, claimed: &IdentityString) -> IdentityString;
}

/// Server-side memory of ClientHello randoms and ephemeral shares.
#[derive(Debug, Default)]
pub struct ReplayCache {
    seen: Mutex<HashSet<[u8; 32]>>,
}

impl ReplayCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records all keys; false if any was already present.
    pub fn check_and_insert(&self, keys: &[[u8; 32]]) -> bool {
        let mut seen = self.seen.lock().expect("replay cache poisoned");
        let fresh = keys.iter().all(|k| !seen.contains(k));
        if fresh {
            seen.extend(keys.iter().copied());
        }
        fresh
    }

    pub fn len(&self) -> usize {
        self.seen.lock().expect("replay cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone)]
pub struct ClientConfig {
    pub mpk: Arc<MasterPublicKey>,
    /// Identity the server must prove possession of.
    pub server_identity: IdentityString,
    /// Client key for mutual authentication.
    pub key: Option<Arc<IdentityPrivateKey>>,
    /// Identity claimed in `ibe_identity`; defaults to the key's identity.
    pub claimed_identity: Option<IdentityString>,
    pub disclosure: IdentityDisclosure,
    pub resolver: Option<Arc<dyn PeerResolver>>,
    /// Record session secrets in the key log (debugging and audits only).
    pub key_log: bool,
}

impl ClientConfig {
    pub fn new(mpk: Arc<MasterPublicKey>, server_identity: IdentityString) -> Self {
        ClientConfig {
            mpk,
            server_identity,
            key: None,
            claimed_identity: None,
            disclosure: IdentityDisclosure::Eager,
            resolver: None,
            key_log: false,
        }
    }

    pub fn with_key(mut self, key: Arc<IdentityPrivateKey>) -> Self {
        self.key = Some(key);
        self
    }

    pub fn claimed(&self) -> Option<IdentityString> {
        self.claimed_identity.clone().or_else(|| self.key.as_ref().map(|k| k.identity().clone()))
    }
}

#[derive(Clone)]
pub struct ServerConfig {
    pub mpk: Arc<MasterPublicKey>,
    pub key: Arc<IdentityPrivateKey>,
    pub client_auth: ClientAuth,
    pub resolver: Option<Arc<dyn PeerResolver>>,
    pub replay_cache: Option<Arc<ReplayCache>>,
    pub key_log: bool,
}

impl ServerConfig {
    pub fn new(mpk: Arc<MasterPublicKey>, key: Arc<IdentityPrivateKey>) -> Self {
        ServerConfig { mpk, key, client_auth: ClientAuth::Optional, resolver: None, replay_cache: None, key_log: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alert_mapping() {
        assert_eq!(HandshakeError::Truncated.alert(), AlertDescription::DecodeError);
        assert_eq!(HandshakeError::RecordAuth.alert(), AlertDescription::IbeAuthFailure);
        assert_eq!(HandshakeError::UnsupportedScheme(1).alert(), AlertDescription::UnsupportedScheme);
        assert_eq!(HandshakeError::Kem(KemError::ParamsMismatch).alert(), AlertDescription::IbeAuthFailure);
        for a in [AlertDescription::DecodeError, AlertDescription::IbeAuthFailure, AlertDescription::UnsupportedScheme] {
            assert_eq!(AlertDescription::from_u8(a as u8), Some(a));
        }
    }

    #[test]
    fn replay_cache() {
        let c = ReplayCache::new();
        assert!(c.check_and_insert(&[[1; 32], [2; 32]]));
        assert!(!c.check_and_insert(&[[3; 32], [2; 32]]));
        assert!(c.check_and_insert(&[[3; 32]]));
        assert_eq!(c.len(), 3);
    }
}
