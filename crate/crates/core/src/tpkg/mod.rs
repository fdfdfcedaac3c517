//! Threshold private key generator: a Shamir-shared master seed, policy-driven
//! identity issuance, an append-only hash-chained registry, epochs and a
//! revocation blocklist.

mod api;
mod auth;
mod issuer;
mod net;
mod policy;
mod registry;
pub mod shamir;
mod shares;
mod store;

use std::sync::atomic::{AtomicI64, Ordering};

use thiserror::Error;

use crate::kem::KemError;

pub use api::{ApiRequest, ApiResponse, KeyDeliveryJson, RequestSpec, TpkgService, API_PREFIX};
pub use auth::{Principal, PrincipalKind, TokenAuthority};
pub use issuer::{IdentityRequest, IdentityStatus, Issuer, KeyDelivery, RequestStatus};
pub use net::{serve_connection, spawn_server, TpkgClient};
pub use policy::{IssuerPolicy, PolicyRule, Usage, RESERVED_MARK};
pub use registry::{verify_chain, verify_jsonl, RecordStatus, Registry, RegistryEvent, RegistryRecord};
pub use shares::{quorum_reconstruct, tpkg_setup, Share, ShareSet};
pub use store::{dir_name, DomainStore};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpkgError {
    #[error("invalid threshold t={t} for n={n}")]
    InvalidThreshold { t: usize, n: usize },
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
    #[error("threshold not met: have {have} shares, need {need}")]
    ThresholdNotMet { have: usize, need: usize },
    #[error("share mismatch: {0}")]
    ShareMismatch(String),
    #[error("principal not authenticated")]
    Unauthenticated,
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("identity {0} is blocklisted")]
    Blocklisted(String),
    #[error("epoch not acceptable: {0}")]
    EpochInvalid(String),
    #[error("epoch expired: {0}")]
    EpochExpired(String),
    #[error("unknown request {0}")]
    UnknownRequest(String),
    #[error("invalid transition from {from} to {to}")]
    InvalidTransition { from: String, to: String },
    #[error("request {0} has not been approved; extraction refused")]
    NotApproved(String),
    #[error("request {0} already issued")]
    AlreadyIssued(String),
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("unknown issuer {0}")]
    UnknownIssuer(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("registry broken at record {index}: {reason}")]
    RegistryCorrupted { index: usize, reason: String },
    #[error("storage: {0}")]
    Storage(String),
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("kem: {0}")]
    Kem(#[from] KemError),
}

impl From<std::io::Error> for TpkgError {
    fn from(e: std::io::Error) -> Self {
        TpkgError::Storage(e.to_string())
    }
}

/// Seconds since the Unix epoch, injectable for tests and reproducible demos.
pub trait Clock: Send + Sync {
    fn now(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> i64 {
        chrono::Utc::now().timestamp()
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(t: i64) -> Self {
        ManualClock(AtomicI64::new(t))
    }

    pub fn set(&self, t: i64) {
        self.0.store(t, Ordering::SeqCst);
    }

    pub fn advance(&self, secs: i64) {
        self.0.fetch_add(secs, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// `2026-01-01T00:00:00Z` style rendering of a Unix timestamp.
pub fn iso8601(ts: i64) -> String {
    chrono::DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

pub fn parse_iso8601(s: &str) -> Option<i64> {
    chrono::DateTime::parse_from_rfc3339(s).ok().map(|d| d.timestamp())
}

/// Serde helper for 32-byte values as lowercase hex; uppercase is rejected so
/// that every value has exactly one encoding.
pub(crate) mod hex32 {
    pub fn serialize<S: serde::Serializer>(b: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        use serde::de::Error;
        let s: String = serde::Deserialize::deserialize(d)?;
        let v = hex::decode(&s).map_err(D::Error::custom)?;
        if hex::encode(&v) != s {
            return Err(D::Error::custom("non-canonical hex"));
        }
        v.try_into().map_err(|_| D::Error::custom("expected 32 bytes"))
    }
}
