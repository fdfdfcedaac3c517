use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::Serialize;

use super::{CertCostModel, HandshakeMetrics, MessageKind, MetricsError, OpCounts, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "table" => Ok(ReportFormat::Table),
            other => Err(format!("unknown format {other:?}, expected json or table")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Checks a finished handshake against the message-set and op-count rows.
pub fn assert_invariants(m: &HandshakeMetrics) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let seen: BTreeSet<MessageKind> = m.messages.iter().copied().collect();
    let required: BTreeSet<MessageKind> = CertCostModel::ibe_required_messages().into_iter().collect();
    let mut allowed = required.clone();
    allowed.insert(MessageKind::HelloRetryRequest);

    out.push(CheckResult {
        name: "message set",
        passed: seen.is_superset(&required) && seen.is_subset(&allowed),
        detail: format!("{:?}", seen),
    });
    let cert_bytes: u64 = m
        .bytes_per_message
        .iter()
        .filter(|(k, _)| k.is_certificate_related())
        .map(|(_, v)| *v)
        .sum();
    out.push(CheckResult {
        name: "no certificate bytes",
        passed: cert_bytes == 0,
        detail: format!("{cert_bytes} bytes"),
    });
    out.push(CheckResult {
        name: "no signatures",
        passed: m.ops.sign == 0 && m.ops.verify == 0,
        detail: format!("sign={} verify={}", m.ops.sign, m.ops.verify),
    });
    let identity_cts = m.identity_ct_lens.len() as u32 - m.identity_ct_retransmissions;
    out.push(CheckResult {
        name: "kem op count",
        passed: m.ops.encaps == 1 + identity_cts && m.ops.decaps == 1 + identity_cts,
        detail: format!("encaps={} decaps={} identity cts={identity_cts}", m.ops.encaps, m.ops.decaps),
    });
    let formula: u64 = m.identity_ct_lens.iter().map(|&l| 8 + l as u64).sum();
    out.push(CheckResult {
        name: "auth byte formula",
        passed: formula == m.auth_bytes,
        detail: format!("{} == {}", m.auth_bytes, formula),
    });
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub ibe_auth_bytes: u64,
    pub ibe_kem_ciphertext_bytes: u64,
    pub ibe_ciphertext_len: usize,
    pub ibe_ops: OpCounts,
    pub ibe_messages: Vec<MessageKind>,
    pub ibe_total_handshake_bytes: u64,
    pub cert_chain_bytes: (u64, u64),
    pub cert_verify_bytes: (u64, u64),
    pub cert_total_bytes: (u64, u64),
    pub cert_ops: OpCounts,
    pub cert_messages: Vec<MessageKind>,
    pub note: String,
    pub checks: Vec<CheckResult>,
}

const NOTE: &str = "IBE-TLS figures are measured at toy lattice parameters and do not reflect \
ID-ML-KEM-768 ciphertexts (cited as ~5 KB for one side). Certificate-based figures are a static model.";

impl ComparisonReport {
    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => serde_json::to_string_pretty(self).expect("report serializes"),
            ReportFormat::Table => self.table(),
        }
    }

    fn table(&self) -> String {
        let mut s = String::new();
        let kb = |b: u64| b as f64 / 1024.0;
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "Handshake message", "Cert-based PQ-TLS", "IBE-TLS (measured)");
        for kind in MessageKind::ALL {
            if kind == MessageKind::Other {
                continue;
            }
            let cert = if self.cert_messages.contains(&kind) { "yes" } else { "no" };
            let ibe = if self.ibe_messages.contains(&kind) { "yes" } else { "no" };
            let _ = writeln!(s, "{:<34} {:>20} {:>20}", kind.label(), cert, ibe);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "Operation", "Cert-based PQ-TLS", "IBE-TLS (measured)");
        let rows = [
            ("KEM encapsulation", self.cert_ops.encaps, self.ibe_ops.encaps),
            ("KEM decapsulation", self.cert_ops.decaps, self.ibe_ops.decaps),
            ("Signature generation", self.cert_ops.sign, self.ibe_ops.sign),
            ("Signature verification", self.cert_ops.verify, self.ibe_ops.verify),
            ("Identity public key derivation", self.cert_ops.pubkey_derive, self.ibe_ops.pubkey_derive),
        ];
        for (name, c, i) in rows {
            let _ = writeln!(s, "{:<34} {:>20} {:>20}", name, c, i);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "Authentication bytes", "Cert-based PQ-TLS", "IBE-TLS (measured)");
        let range = |r: (u64, u64)| format!("{:.0}-{:.0} KB", kb(r.0), kb(r.1));
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "Certificate chain(s)", range(self.cert_chain_bytes), "0");
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "CertificateVerify signatures", range(self.cert_verify_bytes), "0");
        let _ = writeln!(
            s,
            "{:<34} {:>20} {:>20}",
            "ibe_identity_auth extensions",
            "0",
            format!("{} B", self.ibe_auth_bytes)
        );
        let _ = writeln!(
            s,
            "{:<34} {:>20} {:>20}",
            "All KEM ciphertexts",
            "-",
            format!("{} B", self.ibe_kem_ciphertext_bytes)
        );
        let _ = writeln!(s, "{:<34} {:>20} {:>20}", "Total authentication data", range(self.cert_total_bytes), format!("{} B", self.ibe_auth_bytes));
        let _ = writeln!(s);
        let _ = writeln!(s, "ciphertext size: {} B", self.ibe_ciphertext_len);
        for c in &self.checks {
            let _ = writeln!(s, "check {:<32} {}  {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        let _ = writeln!(s, "note: {}", self.note);
        s
    }
}

/// Builds the side-by-side comparison for one completed, combined handshake.
pub fn compare_report(m: &HandshakeMetrics, model: &CertCostModel) -> Result<ComparisonReport, MetricsError> {
    if m.outcome != Some(Outcome::Complete) {
        return Err(MetricsError::MetricsIncomplete);
    }
    let mut messages: Vec<MessageKind> = m.messages.clone();
    messages.sort();
    messages.dedup();
    Ok(ComparisonReport {
        ibe_auth_bytes: m.auth_bytes,
        ibe_kem_ciphertext_bytes: m.kem_ciphertext_bytes,
        ibe_ciphertext_len: m.identity_ct_lens.first().copied().unwrap_or(0),
        ibe_ops: m.ops,
        ibe_messages: messages,
        ibe_total_handshake_bytes: m.total_handshake_bytes(),
        cert_chain_bytes: model.chain_bytes_range,
        cert_verify_bytes: model.cert_verify_bytes_range,
        cert_total_bytes: model.total_bytes_range(),
        cert_ops: model.ops,
        cert_messages: model.message_set.clone(),
        note: NOTE.to_owned(),
        checks: assert_invariants(m),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn honest(with_hrr: bool) -> HandshakeMetrics {
        let mut m = HandshakeMetrics::new();
        let mut kinds = vec![MessageKind::ClientHello];
        if with_hrr {
            kinds.extend([MessageKind::HelloRetryRequest, MessageKind::ClientHello]);
        }
        kinds.extend([
            MessageKind::ServerHello,
            MessageKind::EncryptedExtensions,
            MessageKind::ServerFinished,
            MessageKind::ClientFinished,
        ]);
        for k in kinds {
            m.record_message(k, 50);
        }
        m.record_ephemeral_ct(100);
        m.record_identity_auth(100);
        m.record_identity_auth(100);
        m.ops = OpCounts { encaps: 3, decaps: 3, sign: 0, verify: 0, pubkey_derive: 2 };
        m.freeze(Outcome::Complete);
        m
    }

    #[test]
    fn honest_runs_pass() {
        for hrr in [false, true] {
            assert!(assert_invariants(&honest(hrr)).iter().all(|c| c.passed));
        }
    }

    #[test]
    fn injected_certificate_fails_message_set() {
        let mut m = honest(false);
        m.messages.push(MessageKind::Certificate);
        m.bytes_per_message.insert(MessageKind::Certificate, 9000);
        let checks = assert_invariants(&m);
        assert!(!checks.iter().find(|c| c.name == "message set").unwrap().passed);
        assert!(!checks.iter().find(|c| c.name == "no certificate bytes").unwrap().passed);
    }

    #[test]
    fn aborted_session_has_no_report() {
        let mut m = HandshakeMetrics::new();
        m.freeze(Outcome::Aborted);
        assert_eq!(compare_report(&m, &CertCostModel::default()).unwrap_err(), MetricsError::MetricsIncomplete);
        assert_eq!(compare_report(&HandshakeMetrics::new(), &CertCostModel::default()).unwrap_err(), MetricsError::MetricsIncomplete);
    }

    #[test]
    fn report_renders_both_formats() {
        let r = compare_report(&honest(false), &CertCostModel::default()).unwrap();
        assert_eq!(r.ibe_kem_ciphertext_bytes, 300);
        assert_eq!(r.ibe_auth_bytes, 216);
        let table = r.render(ReportFormat::Table);
        assert!(table.contains("11-21 KB"));
        let v: serde_json::Value = serde_json::from_str(&r.render(ReportFormat::Json)).unwrap();
        assert_eq!(v["cert_total_bytes"], serde_json::json!([11264, 21504]));
    }
}
