//! Per-handshake byte and operation accounting plus a static cost model of
//! certificate-based post-quantum TLS for side-by-side reports.

mod model;
mod report;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use model::{CertCostModel, SignatureSizes, PQ_SIGNATURE_SIZES};
pub use report::{assert_invariants, compare_report, CheckResult, ComparisonReport, ReportFormat};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("metrics incomplete: session did not complete")]
    MetricsIncomplete,
    #[error("metrics from client and server disagree: {0}")]
    Inconsistent(String),
}

/// Handshake message kinds as they appear in the comparison table. The two
/// Finished directions are kept apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    ClientHello,
    ServerHello,
    HelloRetryRequest,
    EncryptedExtensions,
    Certificate,
    CertificateRequest,
    CertificateVerify,
    ServerFinished,
    ClientFinished,
    Other,
}

impl MessageKind {
    pub const ALL: [MessageKind; 10] = [
        MessageKind::ClientHello,
        MessageKind::ServerHello,
        MessageKind::HelloRetryRequest,
        MessageKind::EncryptedExtensions,
        MessageKind::Certificate,
        MessageKind::CertificateRequest,
        MessageKind::CertificateVerify,
        MessageKind::ServerFinished,
        MessageKind::ClientFinished,
        MessageKind::Other,
    ];

    pub fn is_certificate_related(self) -> bool {
        matches!(self, MessageKind::Certificate | MessageKind::CertificateRequest | MessageKind::CertificateVerify)
    }

    pub fn label(self) -> &'static str {
        match self {
            MessageKind::ClientHello => "ClientHello",
            MessageKind::ServerHello => "ServerHello",
            MessageKind::HelloRetryRequest => "HelloRetryRequest",
            MessageKind::EncryptedExtensions => "EncryptedExtensions",
            MessageKind::Certificate => "Certificate",
            MessageKind::CertificateRequest => "CertificateRequest",
            MessageKind::CertificateVerify => "CertificateVerify",
            MessageKind::ServerFinished => "Finished (Server)",
            MessageKind::ClientFinished => "Finished (Client)",
            MessageKind::Other => "Other",
        }
    }
}

/// Asymmetric operation counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub encaps: u32,
    pub decaps: u32,
    pub sign: u32,
    pub verify: u32,
    pub pubkey_derive: u32,
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            encaps: self.encaps + o.encaps,
            decaps: self.decaps + o.decaps,
            sign: self.sign + o.sign,
            verify: self.verify + o.verify,
            pubkey_derive: self.pubkey_derive + o.pubkey_derive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Complete,
    Aborted,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HandshakeMetrics {
    pub bytes_per_message: BTreeMap<MessageKind, u64>,
    /// Every handshake message seen, in wire order.
    pub messages: Vec<MessageKind>,
    /// Sum over `ibe_identity_auth` extensions of their full encoded size.
    pub auth_bytes: u64,
    /// Serialized KEM ciphertexts carried in the handshake (ephemeral and identity).
    pub kem_ciphertext_bytes: u64,
    pub identity_ct_lens: Vec<usize>,
    /// Identity ciphertexts resent verbatim in a retried ClientHello.
    pub identity_ct_retransmissions: u32,
    pub ops: OpCounts,
    /// Wall-clock per phase; never serialized so logs stay reproducible.
    #[serde(skip)]
    pub phase_times: Vec<(String, Duration)>,
    pub outcome: Option<Outcome>,
    #[serde(skip)]
    phase_start: Option<(String, Instant)>,
}

impl HandshakeMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_frozen(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn record_message(&mut self, kind: MessageKind, wire_len: usize) {
        if self.is_frozen() {
            return;
        }
        *self.bytes_per_message.entry(kind).or_default() += wire_len as u64;
        self.messages.push(kind);
    }

    /// One `ibe_identity_auth` extension carrying a ciphertext of `ct_len` bytes.
    pub fn record_identity_auth(&mut self, ct_len: usize) {
        if self.is_frozen() {
            return;
        }
        // type(2) + length(2) + scheme id(2) + ct length(2) + ct
        self.auth_bytes += 8 + ct_len as u64;
        self.kem_ciphertext_bytes += ct_len as u64;
        self.identity_ct_lens.push(ct_len);
    }

    /// Same as [`record_identity_auth`](Self::record_identity_auth) for a ciphertext sent a second time.
    pub fn record_identity_auth_retransmit(&mut self, ct_len: usize) {
        if !self.is_frozen() {
            self.record_identity_auth(ct_len);
            self.identity_ct_retransmissions += 1;
        }
    }

    pub fn record_ephemeral_ct(&mut self, ct_len: usize) {
        if !self.is_frozen() {
            self.kem_ciphertext_bytes += ct_len as u64;
        }
    }

    pub fn count(&mut self, f: impl FnOnce(&mut OpCounts)) {
        if !self.is_frozen() {
            f(&mut self.ops);
        }
    }

    pub fn begin_phase(&mut self, name: &str) {
        self.end_phase();
        if !self.is_frozen() {
            self.phase_start = Some((name.to_owned(), Instant::now()));
        }
    }

    pub fn end_phase(&mut self) {
        if let Some((name, t0)) = self.phase_start.take() {
            self.phase_times.push((name, t0.elapsed()));
        }
    }

    pub fn freeze(&mut self, outcome: Outcome) {
        if self.is_frozen() {
            return;
        }
        self.end_phase();
        self.outcome = Some(outcome);
    }

    pub fn total_handshake_bytes(&self) -> u64 {
        self.bytes_per_message.values().sum()
    }

    /// Merges the two endpoints' views of one handshake: operations are summed,
    /// wire accounting is taken from the client and cross-checked against the server.
    pub fn combine(client: &HandshakeMetrics, server: &HandshakeMetrics) -> Result<HandshakeMetrics, MetricsError> {
        if client.messages != server.messages {
            return Err(MetricsError::Inconsistent(format!(
                "message sequences differ: {:?} vs {:?}",
                client.messages, server.messages
            )));
        }
        if client.bytes_per_message != server.bytes_per_message {
            return Err(MetricsError::Inconsistent("byte counts differ".into()));
        }
        let outcome = match (client.outcome, server.outcome) {
            (Some(Outcome::Complete), Some(Outcome::Complete)) => Some(Outcome::Complete),
            (None, None) => None,
            _ => Some(Outcome::Aborted),
        };
        let mut phase_times = client.phase_times.clone();
        phase_times.extend(server.phase_times.iter().cloned());
        Ok(HandshakeMetrics {
            bytes_per_message: client.bytes_per_message.clone(),
            messages: client.messages.clone(),
            auth_bytes: client.auth_bytes,
            kem_ciphertext_bytes: client.kem_ciphertext_bytes,
            identity_ct_lens: client.identity_ct_lens.clone(),
            identity_ct_retransmissions: client.identity_ct_retransmissions,
            ops: client.ops + server.ops,
            phase_times,
            outcome,
            phase_start: None,
        })
    }
}
