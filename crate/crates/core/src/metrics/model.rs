use serde::Serialize;

use super::{MessageKind, OpCounts};

/// Key plus signature size estimate for one signature family, in KB.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SignatureSizes {
    pub scheme: &'static str,
    pub key_plus_signature_kb: f64,
}

pub const PQ_SIGNATURE_SIZES: [SignatureSizes; 9] = [
    SignatureSizes { scheme: "ECDSA", key_plus_signature_kb: 0.1 },
    SignatureSizes { scheme: "RSA", key_plus_signature_kb: 0.5 },
    SignatureSizes { scheme: "Lattice-based", key_plus_signature_kb: 11.0 },
    SignatureSizes { scheme: "Stateful HBS", key_plus_signature_kb: 15.0 },
    SignatureSizes { scheme: "Stateless HBS", key_plus_signature_kb: 42.0 },
    SignatureSizes { scheme: "ZK Proofs (ex: Picnic L1FS)", key_plus_signature_kb: 66.0 },
    SignatureSizes { scheme: "Multivariate", key_plus_signature_kb: 100.0 },
    SignatureSizes { scheme: "Supersingular Isogenies", key_plus_signature_kb: 122.0 },
    SignatureSizes { scheme: "Code-based", key_plus_signature_kb: 190.0 },
];

/// Static accounting model of certificate-based post-quantum TLS. Nothing
/// here is measured; the baseline is table-level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertCostModel {
    /// Certificate chain bytes, single-side authentication.
    pub chain_bytes_range: (u64, u64),
    pub cert_verify_bytes_range: (u64, u64),
    pub signature_sizes: Vec<SignatureSizes>,
    /// Mutual handshake, ephemeral key exchange included in the KEM counts.
    pub ops: OpCounts,
    /// Messages of a mutual certificate-based handshake.
    pub message_set: Vec<MessageKind>,
}

impl Default for CertCostModel {
    fn default() -> Self {
        CertCostModel {
            chain_bytes_range: (8 * 1024, 15 * 1024),
            cert_verify_bytes_range: (3 * 1024, 6 * 1024),
            signature_sizes: PQ_SIGNATURE_SIZES.to_vec(),
            ops: OpCounts { encaps: 1, decaps: 1, sign: 2, verify: 4, pubkey_derive: 0 },
            message_set: vec![
                MessageKind::ClientHello,
                MessageKind::ServerHello,
                MessageKind::EncryptedExtensions,
                MessageKind::Certificate,
                MessageKind::CertificateRequest,
                MessageKind::CertificateVerify,
                MessageKind::ServerFinished,
                MessageKind::ClientFinished,
            ],
        }
    }
}

impl CertCostModel {
    pub fn total_bytes_range(&self) -> (u64, u64) {
        (
            self.chain_bytes_range.0 + self.cert_verify_bytes_range.0,
            self.chain_bytes_range.1 + self.cert_verify_bytes_range.1,
        )
    }

    /// Message kinds an IBE-TLS handshake must contain.
    pub fn ibe_required_messages() -> [MessageKind; 5] {
        [
            MessageKind::ClientHello,
            MessageKind::ServerHello,
            MessageKind::EncryptedExtensions,
            MessageKind::ServerFinished,
            MessageKind::ClientFinished,
        ]
    }
}
