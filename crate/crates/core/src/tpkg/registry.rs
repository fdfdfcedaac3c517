//! Append-only identity registry. Each record commits to its predecessor, so
//! any mutation, deletion or reordering breaks the chain at that point.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{hex32, TpkgError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegistryEvent {
    Genesis,
    RequestApproved,
    RequestDenied,
    Issued,
    Revoked,
    EpochIncremented,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordStatus {
    Active,
    Expired,
    Revoked,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryRecord {
    pub index: u64,
    pub event: RegistryEvent,
    /// Canonical identity, or the bare name for blocklist entries.
    pub identity: String,
    pub issuer: String,
    pub authorized_principal: String,
    /// Unix seconds.
    pub issuance_time: i64,
    pub validity_epoch: String,
    pub status: Option<RecordStatus>,
    pub request_id: Option<String>,
    pub detail: String,
    #[serde(with = "hex32")]
    pub prev_hash: [u8; 32],
    #[serde(with = "hex32")]
    pub record_hash: [u8; 32],
}

fn put(h: &mut Sha256, field: &[u8]) {
    h.update((field.len() as u32).to_be_bytes());
    h.update(field);
}

impl RegistryRecord {
    pub fn new(event: RegistryEvent, issuer: &str, identity: &str, principal: &str, time: i64, epoch: &str) -> Self {
        RegistryRecord {
            index: 0,
            event,
            identity: identity.to_owned(),
            issuer: issuer.to_owned(),
            authorized_principal: principal.to_owned(),
            issuance_time: time,
            validity_epoch: epoch.to_owned(),
            status: None,
            request_id: None,
            detail: String::new(),
            prev_hash: [0; 32],
            record_hash: [0; 32],
        }
    }

    pub fn with_status(mut self, s: RecordStatus) -> Self {
        self.status = Some(s);
        self
    }

    pub fn with_request(mut self, id: &str) -> Self {
        self.request_id = Some(id.to_owned());
        self
    }

    pub fn with_detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }

    /// H(fields || prev_hash), each field length-prefixed.
    pub fn compute_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ibetls/registry/v1");
        put(&mut h, &self.index.to_be_bytes());
        put(&mut h, format!("{:?}", self.event).as_bytes());
        put(&mut h, self.identity.as_bytes());
        put(&mut h, self.issuer.as_bytes());
        put(&mut h, self.authorized_principal.as_bytes());
        put(&mut h, &self.issuance_time.to_be_bytes());
        put(&mut h, self.validity_epoch.as_bytes());
        match self.status {
            Some(s) => put(&mut h, format!("{s:?}").as_bytes()),
            None => put(&mut h, b"-"),
        }
        match &self.request_id {
            Some(r) => {
                h.update([1]);
                put(&mut h, r.as_bytes());
            }
            None => h.update([0]),
        }
        put(&mut h, self.detail.as_bytes());
        h.update(self.prev_hash);
        h.finalize().into()
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Checks linkage and hashes from genesis. Returns the first broken index.
pub fn verify_chain(records: &[RegistryRecord]) -> Result<(), TpkgError> {
    let broken = |index: usize, reason: &str| TpkgError::RegistryCorrupted { index, reason: reason.to_owned() };
    if records.is_empty() {
        return Err(broken(0, "empty chain"));
    }
    if records[0].event != RegistryEvent::Genesis {
        return Err(broken(0, "first record is not genesis"));
    }
    let mut prev = [0u8; 32];
    for (i, r) in records.iter().enumerate() {
        if r.index != i as u64 {
            return Err(broken(i, "index out of sequence"));
        }
        if r.prev_hash != prev {
            return Err(broken(i, "prev_hash does not link"));
        }
        if r.compute_hash() != r.record_hash {
            return Err(broken(i, "record_hash mismatch"));
        }
        prev = r.record_hash;
    }
    Ok(())
}

/// Parses and verifies a JSON-lines registry file.
pub fn verify_jsonl(text: &str) -> Result<Vec<RegistryRecord>, TpkgError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let rec: RegistryRecord = serde_json::from_str(line)
            .map_err(|e| TpkgError::RegistryCorrupted { index: i, reason: format!("unparseable: {e}") })?;
        records.push(rec);
    }
    verify_chain(&records)?;
    Ok(records)
}

#[derive(Clone, Debug, Default)]
pub struct Registry {
    records: Vec<RegistryRecord>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<RegistryRecord>) -> Result<Self, TpkgError> {
        verify_chain(&records)?;
        Ok(Registry { records })
    }

    /// Links and hashes `rec` onto the chain and returns the stored copy.
    pub fn append(&mut self, mut rec: RegistryRecord) -> RegistryRecord {
        rec.index = self.records.len() as u64;
        rec.prev_hash = self.records.last().map(|r| r.record_hash).unwrap_or([0; 32]);
        rec.record_hash = rec.compute_hash();
        self.records.push(rec.clone());
        rec
    }

    pub fn records(&self) -> &[RegistryRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head(&self) -> Option<[u8; 32]> {
        self.records.last().map(|r| r.record_hash)
    }

    pub fn verify(&self) -> Result<(), TpkgError> {
        verify_chain(&self.records)
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| r.to_json_line() + "\n").collect()
    }
}
