//! Blocking IBE-TLS over any byte stream, with length-framed application
//! messages that may span many records.

use std::io::{Read, Write};

use super::codec::{ContentType, Record};
use super::driver::{Direction, WireCapture};
use super::{ClientHandshake, HandshakeError, ServerHandshake};

/// Largest plaintext carried in one application record.
pub const MAX_FRAGMENT: usize = 1 << 14;
/// Upper bound on one framed message.
pub const MAX_MESSAGE: usize = 1 << 24;

/// The operations a stream needs from either side of a session.
pub trait Endpoint {
    fn handle(&mut self, rec: &Record) -> Result<Vec<Record>, HandshakeError>;
    fn is_complete(&self) -> bool;
    fn send_application_data(&mut self, data: &[u8]) -> Result<Record, HandshakeError>;
    fn receive_application_data(&mut self, rec: &Record) -> Result<Vec<u8>, HandshakeError>;
}

macro_rules! endpoint_impl {
    ($t:ty) => {
        impl Endpoint for $t {
            fn handle(&mut self, rec: &Record) -> Result<Vec<Record>, HandshakeError> {
                <$t>::handle(self, rec)
            }
            fn is_complete(&self) -> bool {
                <$t>::is_complete(self)
            }
            fn send_application_data(&mut self, data: &[u8]) -> Result<Record, HandshakeError> {
                <$t>::send_application_data(self, data)
            }
            fn receive_application_data(&mut self, rec: &Record) -> Result<Vec<u8>, HandshakeError> {
                <$t>::receive_application_data(self, rec)
            }
        }
    };
}

endpoint_impl!(ClientHandshake);
endpoint_impl!(ServerHandshake);

/// Seals one message as `len(4) || payload`, split into records.
pub fn seal_message<E: Endpoint + ?Sized>(e: &mut E, msg: &[u8]) -> Result<Vec<Record>, HandshakeError> {
    if msg.len() > MAX_MESSAGE {
        return Err(HandshakeError::Encode("message too large".into()));
    }
    let mut framed = Vec::with_capacity(4 + msg.len());
    framed.extend_from_slice(&(msg.len() as u32).to_be_bytes());
    framed.extend_from_slice(msg);
    framed.chunks(MAX_FRAGMENT).map(|c| e.send_application_data(c)).collect()
}

/// Reassembles framed messages from decrypted record payloads.
#[derive(Default)]
pub struct MessageAssembler {
    buf: Vec<u8>,
}

impl MessageAssembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, data: &[u8]) -> Result<Option<Vec<u8>>, HandshakeError> {
        self.buf.extend_from_slice(data);
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_be_bytes(self.buf[..4].try_into().unwrap()) as usize;
        if len > MAX_MESSAGE {
            return Err(HandshakeError::Decode("framed message too large".into()));
        }
        if self.buf.len() < 4 + len {
            return Ok(None);
        }
        let msg = self.buf[4..4 + len].to_vec();
        self.buf.drain(..4 + len);
        Ok(Some(msg))
    }
}

fn io_err(e: std::io::Error) -> HandshakeError {
    HandshakeError::Decode(format!("transport: {e}"))
}

fn read_record<S: Read>(io: &mut S) -> Result<(Record, Vec<u8>), HandshakeError> {
    let mut header = [0u8; 3];
    io.read_exact(&mut header).map_err(io_err)?;
    let len = u16::from_be_bytes([header[1], header[2]]) as usize;
    let mut fragment = vec![0u8; len];
    io.read_exact(&mut fragment).map_err(io_err)?;
    let mut raw = header.to_vec();
    raw.extend_from_slice(&fragment);
    Ok((Record { content_type: header[0], fragment }, raw))
}

/// A completed session bound to its transport.
pub struct TlsStream<E, S> {
    session: E,
    io: S,
    assembler: MessageAssembler,
    capture: WireCapture,
    outgoing: Direction,
}

impl<S: Read + Write> TlsStream<ClientHandshake, S> {
    /// Runs the client handshake to completion.
    pub fn connect(mut session: ClientHandshake, mut io: S) -> Result<Self, HandshakeError> {
        let mut capture = WireCapture::new();
        let first = session.start()?;
        write_records(&mut io, &first, &mut capture, Direction::ClientToServer)?;
        drive(&mut session, &mut io, &mut capture, Direction::ClientToServer)?;
        Ok(TlsStream { session, io, assembler: MessageAssembler::new(), capture, outgoing: Direction::ClientToServer })
    }
}

impl<S: Read + Write> TlsStream<ServerHandshake, S> {
    /// Runs the server handshake to completion.
    pub fn accept(mut session: ServerHandshake, mut io: S) -> Result<Self, HandshakeError> {
        let mut capture = WireCapture::new();
        drive(&mut session, &mut io, &mut capture, Direction::ServerToClient)?;
        Ok(TlsStream { session, io, assembler: MessageAssembler::new(), capture, outgoing: Direction::ServerToClient })
    }
}

fn write_records<S: Write>(
    io: &mut S,
    recs: &[Record],
    capture: &mut WireCapture,
    dir: Direction,
) -> Result<(), HandshakeError> {
    for r in recs {
        let bytes = r.to_bytes()?;
        io.write_all(&bytes).map_err(io_err)?;
        capture.push(dir, bytes);
    }
    io.flush().map_err(io_err)
}

fn incoming(dir: Direction) -> Direction {
    match dir {
        Direction::ClientToServer => Direction::ServerToClient,
        Direction::ServerToClient => Direction::ClientToServer,
    }
}

fn drive<E: Endpoint, S: Read + Write>(
    session: &mut E,
    io: &mut S,
    capture: &mut WireCapture,
    out_dir: Direction,
) -> Result<(), HandshakeError> {
    while !session.is_complete() {
        let (rec, raw) = read_record(io)?;
        capture.push(incoming(out_dir), raw);
        match session.handle(&rec) {
            Ok(out) => write_records(io, &out, capture, out_dir)?,
            Err(e) => {
                if !matches!(e, HandshakeError::PeerAlert(_)) {
                    let _ = write_records(io, &[e.alert().to_record()], capture, out_dir);
                }
                return Err(e);
            }
        }
    }
    Ok(())
}

impl<E: Endpoint, S: Read + Write> TlsStream<E, S> {
    pub fn session(&self) -> &E {
        &self.session
    }

    /// Every record sent or received on this stream so far.
    pub fn capture(&self) -> &WireCapture {
        &self.capture
    }

    pub fn send(&mut self, msg: &[u8]) -> Result<(), HandshakeError> {
        let recs = seal_message(&mut self.session, msg)?;
        write_records(&mut self.io, &recs, &mut self.capture, self.outgoing)
    }

    /// Blocks until one whole message has arrived.
    pub fn recv(&mut self) -> Result<Vec<u8>, HandshakeError> {
        loop {
            let (rec, raw) = read_record(&mut self.io)?;
            self.capture.push(incoming(self.outgoing), raw);
            if rec.content_type == ContentType::Alert as u8 {
                return Err(HandshakeError::Decode("peer closed with alert".into()));
            }
            let data = self.session.receive_application_data(&rec)?;
            if let Some(msg) = self.assembler.push(&data)? {
                return Ok(msg);
            }
        }
    }

    pub fn into_inner(self) -> (E, S) {
        (self.session, self.io)
    }
}
