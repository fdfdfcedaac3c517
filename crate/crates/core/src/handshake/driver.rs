use std::collections::VecDeque;

use serde::Serialize;

use super::codec::{ContentType, HandshakeMessage, HandshakeType, Record};
use super::{ClientHandshake, HandshakeError, ServerHandshake};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    ClientToServer,
    ServerToClient,
}

#[derive(Clone, Debug, Serialize)]
pub struct WireRecord {
    pub direction: Direction,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
}

mod hex_bytes {
    pub fn serialize<S: serde::Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }
}

/// Every record exactly as it crossed the wire.
#[derive(Clone, Debug, Default, Serialize)]
pub struct WireCapture {
    pub records: Vec<WireRecord>,
}

impl WireCapture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, direction: Direction, bytes: Vec<u8>) {
        self.records.push(WireRecord { direction, bytes });
    }

    pub fn total_bytes(&self) -> usize {
        self.records.iter().map(|r| r.bytes.len()).sum()
    }

    /// Handshake message types visible in cleartext records.
    pub fn plaintext_handshake_types(&self) -> Vec<u8> {
        self.records
            .iter()
            .filter_map(|r| Record::from_bytes(&r.bytes).ok())
            .filter(|r| r.content_type == ContentType::Handshake as u8)
            .filter_map(|r| HandshakeMessage::decode(&r.fragment).ok())
            .map(|m| m.type_code())
            .collect()
    }

    /// Count of cleartext bytes belonging to Certificate, CertificateRequest
    /// or CertificateVerify messages.
    pub fn certificate_bytes(&self) -> usize {
        let cert = [
            HandshakeType::Certificate as u8,
            HandshakeType::CertificateRequest as u8,
            HandshakeType::CertificateVerify as u8,
        ];
        self.records
            .iter()
            .filter_map(|r| Record::from_bytes(&r.bytes).ok())
            .filter(|r| r.content_type == ContentType::Handshake as u8 && r.fragment.first().is_some_and(|t| cert.contains(t)))
            .map(|r| r.fragment.len())
            .sum()
    }

    /// Index of the first record in `direction` carrying protected application data
    /// after the handshake flights, if any.
    pub fn position_of(&self, pred: impl Fn(&WireRecord) -> bool) -> Option<usize> {
        self.records.iter().position(pred)
    }
}

/// Hook that may rewrite a record's bytes before delivery: `(direction, record index, bytes)`.
pub type Tamper<'a> = &'a mut dyn FnMut(Direction, usize, &mut Vec<u8>);

/// Runs a handshake between two sessions over an in-memory pipe.
///
/// Records are delivered one at a time in order. On a fatal error the failing
/// side's alert is delivered to the peer, so both end up aborted.
pub fn connect_in_memory(
    client: &mut ClientHandshake,
    server: &mut ServerHandshake,
    capture: &mut WireCapture,
    mut tamper: Option<Tamper<'_>>,
) -> Result<(), HandshakeError> {
    let mut queue: VecDeque<(Direction, Record)> = VecDeque::new();
    let mut first_error: Option<HandshakeError> = None;
    match client.start() {
        Ok(recs) => queue.extend(recs.into_iter().map(|r| (Direction::ClientToServer, r))),
        Err(e) => return Err(e),
    }
    let mut index = 0usize;
    while let Some((dir, rec)) = queue.pop_front() {
        let mut bytes = rec.to_bytes()?;
        if let Some(t) = tamper.as_mut() {
            t(dir, index, &mut bytes);
        }
        index += 1;
        capture.push(dir, bytes.clone());
        let result = match dir {
            Direction::ClientToServer => server.handle_bytes(&bytes),
            Direction::ServerToClient => client.handle_bytes(&bytes),
        };
        let back = match dir {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        };
        match result {
            Ok(out) => queue.extend(out.into_iter().map(|r| (back, r))),
            Err(e) => {
                if !matches!(e, HandshakeError::PeerAlert(_) | HandshakeError::InvalidState(_)) {
                    queue.push_back((back, e.alert().to_record()));
                }
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None if client.is_complete() && server.is_complete() => Ok(()),
        None => Err(HandshakeError::InvalidState("handshake stalled")),
    }
}
