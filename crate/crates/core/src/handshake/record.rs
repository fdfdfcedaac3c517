//! AEAD record protection. Inner plaintext is `content || content_type`, the
//! nonce is the static IV XOR the 64-bit sequence number, and the AAD is the
//! outer record header.

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

use super::codec::{ContentType, Record};
use super::schedule::{Secret, TrafficKeys};
use super::HandshakeError;

const TAG_LEN: usize = 16;

pub struct RecordProtector {
    keys: TrafficKeys,
    seq: u64,
}

impl RecordProtector {
    pub fn new(secret: &Secret) -> Self {
        RecordProtector { keys: TrafficKeys::from_secret(secret), seq: 0 }
    }

    pub fn sequence(&self) -> u64 {
        self.seq
    }

    fn nonce(&self) -> [u8; 12] {
        let mut n = self.keys.iv;
        for (b, s) in n[4..].iter_mut().zip(self.seq.to_be_bytes()) {
            *b ^= s;
        }
        n
    }

    pub fn seal(&mut self, content_type: ContentType, plaintext: &[u8]) -> Result<Record, HandshakeError> {
        let mut inner = Vec::with_capacity(plaintext.len() + 1);
        inner.extend_from_slice(plaintext);
        inner.push(content_type as u8);
        let len = inner.len() + TAG_LEN;
        if len > u16::MAX as usize {
            return Err(HandshakeError::Encode("record too large".into()));
        }
        let aad = Record::header(ContentType::ApplicationData as u8, len);
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.keys.key));
        let fragment = cipher
            .encrypt(Nonce::from_slice(&self.nonce()), Payload { msg: &inner, aad: &aad })
            .map_err(|_| HandshakeError::Encode("AEAD seal failed".into()))?;
        self.seq += 1;
        Ok(Record { content_type: ContentType::ApplicationData as u8, fragment })
    }

    /// Opens one protected record. The sequence number only advances on success.
    pub fn open(&mut self, record: &Record) -> Result<(ContentType, Vec<u8>), HandshakeError> {
        if record.content_type != ContentType::ApplicationData as u8 {
            return Err(HandshakeError::Decode(format!("expected protected record, got type {}", record.content_type)));
        }
        let aad = Record::header(record.content_type, record.fragment.len());
        let cipher = ChaCha20Poly1305::new(Key::from_slice(&self.keys.key));
        let mut inner = cipher
            .decrypt(Nonce::from_slice(&self.nonce()), Payload { msg: &record.fragment, aad: &aad })
            .map_err(|_| HandshakeError::RecordAuth)?;
        self.seq += 1;
        let ty = inner.pop().ok_or_else(|| HandshakeError::Decode("empty inner plaintext".into()))?;
        let ty = ContentType::from_u8(ty).ok_or_else(|| HandshakeError::Decode(format!("inner content type {ty}")))?;
        Ok((ty, inner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(b: u8) -> (RecordProtector, RecordProtector) {
        let s = Secret::from_bytes([b; 32]);
        (RecordProtector::new(&s), RecordProtector::new(&s))
    }

    #[test]
    fn round_trip_and_sequence() {
        let (mut tx, mut rx) = pair(1);
        for msg in [&b"hello"[..], b"", b"again"] {
            let rec = tx.seal(ContentType::ApplicationData, msg).unwrap();
            assert_eq!(rx.open(&rec).unwrap(), (ContentType::ApplicationData, msg.to_vec()));
        }
        assert_eq!(tx.sequence(), 3);
    }

    #[test]
    fn replayed_record_fails() {
        let (mut tx, mut rx) = pair(1);
        let rec = tx.seal(ContentType::ApplicationData, b"hello").unwrap();
        rx.open(&rec).unwrap();
        assert_eq!(rx.open(&rec), Err(HandshakeError::RecordAuth));
    }

    #[test]
    fn wrong_direction_key_fails() {
        let (mut c2s, _) = pair(1);
        let (_, mut s2c_reader) = pair(2);
        let rec = c2s.seal(ContentType::ApplicationData, b"hello").unwrap();
        assert_eq!(s2c_reader.open(&rec), Err(HandshakeError::RecordAuth));
    }

    #[test]
    fn tampered_header_or_body_fails() {
        let (mut tx, _) = pair(3);
        let rec = tx.seal(ContentType::Handshake, b"payload").unwrap();
        for i in 0..rec.fragment.len() {
            let mut bad = rec.clone();
            bad.fragment[i] ^= 0x01;
            let (_, mut rx) = pair(3);
            assert_eq!(rx.open(&bad), Err(HandshakeError::RecordAuth));
        }
        let mut truncated = rec.clone();
        truncated.fragment.pop();
        let (_, mut rx) = pair(3);
        assert!(rx.open(&truncated).is_err());
    }
}
