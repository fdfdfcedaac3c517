//! Wire encodings: extensions, handshake messages and records.
//!
//! Everything here is big-endian TLS presentation language. Handshake
//! messages are `type(1) || length(3) || body`; records are
//! `type(1) || length(2) || fragment`.

use super::HandshakeError;
use crate::kem::scheme_is_known;

pub const EXT_KEY_SHARE: u16 = 51;
/// `ibe_identity_auth` (private-use codepoint).
pub const EXT_IBE_IDENTITY_AUTH: u16 = 65280;
/// `ibe_identity` (private-use codepoint).
pub const EXT_IBE_IDENTITY: u16 = 65281;

/// The single cipher suite: SHA-256 schedule, ChaCha20-Poly1305 records.
pub const CIPHER_SUITE: u16 = 0x1303;

/// Bounds-checked reader over a byte slice.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], HandshakeError> {
        let end = self.pos.checked_add(n).ok_or(HandshakeError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(HandshakeError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, HandshakeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, HandshakeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u24(&mut self) -> Result<usize, HandshakeError> {
        let b = self.take(3)?;
        Ok(((b[0] as usize) << 16) | ((b[1] as usize) << 8) | b[2] as usize)
    }

    /// Opaque vector with a 16-bit length prefix.
    pub fn vec16(&mut self) -> Result<&'a [u8], HandshakeError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn expect_end(&self) -> Result<(), HandshakeError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(HandshakeError::Decode(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

pub(crate) fn put_vec16(out: &mut Vec<u8>, data: &[u8]) -> Result<(), HandshakeError> {
    let len = u16::try_from(data.len()).map_err(|_| HandshakeError::Encode("vector exceeds 2^16-1 bytes".into()))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(data);
    Ok(())
}

/// `struct { ExtensionType extension_type; opaque extension_data<0..2^16-1>; }`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Extension {
    pub extension_type: u16,
    pub extension_data: Vec<u8>,
}

impl Extension {
    pub fn new(extension_type: u16, extension_data: Vec<u8>) -> Self {
        Extension { extension_type, extension_data }
    }

    pub fn encode(&self, out: &mut Vec<u8>) -> Result<(), HandshakeError> {
        out.extend_from_slice(&self.extension_type.to_be_bytes());
        put_vec16(out, &self.extension_data)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, HandshakeError> {
        let mut out = Vec::with_capacity(4 + self.extension_data.len());
        self.encode(&mut out)?;
        Ok(out)
    }

    pub fn decode(r: &mut Reader<'_>) -> Result<Self, HandshakeError> {
        let extension_type = r.u16()?;
        let extension_data = r.vec16()?.to_vec();
        Ok(Extension { extension_type, extension_data })
    }

    /// Decodes exactly one extension from `buf`.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = Reader::new(buf);
        let ext = Extension::decode(&mut r)?;
        r.expect_end()?;
        Ok(ext)
    }

    /// Wire size including the 4-byte header.
    pub fn wire_len(&self) -> usize {
        4 + self.extension_data.len()
    }
}

/// `struct { uint16 ibe_scheme_id; opaque encapsulated_identity<1..2^16-1>; }`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IbeIdentityAuth {
    pub ibe_scheme_id: u16,
    pub encapsulated_identity: Vec<u8>,
}

impl IbeIdentityAuth {
    pub fn to_extension(&self) -> Result<Extension, HandshakeError> {
        if self.encapsulated_identity.is_empty() {
            return Err(HandshakeError::Encode("empty encapsulated_identity".into()));
        }
        let mut data = Vec::with_capacity(4 + self.encapsulated_identity.len());
        data.extend_from_slice(&self.ibe_scheme_id.to_be_bytes());
        put_vec16(&mut data, &self.encapsulated_identity)?;
        Ok(Extension::new(EXT_IBE_IDENTITY_AUTH, data))
    }

    pub fn from_extension(ext: &Extension) -> Result<Self, HandshakeError> {
        if ext.extension_type != EXT_IBE_IDENTITY_AUTH {
            return Err(HandshakeError::Decode("not an ibe_identity_auth extension".into()));
        }
        let mut r = Reader::new(&ext.extension_data);
        let ibe_scheme_id = r.u16()?;
        let encapsulated_identity = r.vec16()?.to_vec();
        r.expect_end()?;
        if encapsulated_identity.is_empty() {
            return Err(HandshakeError::Decode("empty encapsulated_identity".into()));
        }
        if !scheme_is_known(ibe_scheme_id) {
            return Err(HandshakeError::UnsupportedScheme(ibe_scheme_id));
        }
        Ok(IbeIdentityAuth { ibe_scheme_id, encapsulated_identity })
    }
}

/// `struct { opaque identity<1..2^16-1>; }`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IbeIdentity {
    pub identity: String,
}

impl IbeIdentity {
    pub fn to_extension(&self) -> Result<Extension, HandshakeError> {
        if self.identity.is_empty() {
            return Err(HandshakeError::Encode("empty identity".into()));
        }
        let mut data = Vec::with_capacity(2 + self.identity.len());
        put_vec16(&mut data, self.identity.as_bytes())?;
        Ok(Extension::new(EXT_IBE_IDENTITY, data))
    }

    pub fn from_extension(ext: &Extension) -> Result<Self, HandshakeError> {
        if ext.extension_type != EXT_IBE_IDENTITY {
            return Err(HandshakeError::Decode("not an ibe_identity extension".into()));
        }
        let mut r = Reader::new(&ext.extension_data);
        let raw = r.vec16()?;
        r.expect_end()?;
        if raw.is_empty() {
            return Err(HandshakeError::Decode("zero-length identity".into()));
        }
        let identity = std::str::from_utf8(raw).map_err(|_| HandshakeError::Decode("identity is not UTF-8".into()))?;
        Ok(IbeIdentity { identity: identity.to_owned() })
    }
}

/// Single-entry `key_share`: `NamedGroup group; opaque key_exchange<1..2^16-1>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyShare {
    pub group: u16,
    pub key_exchange: Vec<u8>,
}

impl KeyShare {
    pub fn to_extension(&self) -> Result<Extension, HandshakeError> {
        let mut data = Vec::with_capacity(4 + self.key_exchange.len());
        data.extend_from_slice(&self.group.to_be_bytes());
        put_vec16(&mut data, &self.key_exchange)?;
        Ok(Extension::new(EXT_KEY_SHARE, data))
    }

    pub fn from_extension(ext: &Extension) -> Result<Self, HandshakeError> {
        let mut r = Reader::new(&ext.extension_data);
        let group = r.u16()?;
        let key_exchange = r.vec16()?.to_vec();
        r.expect_end()?;
        if key_exchange.is_empty() {
            return Err(HandshakeError::Decode("empty key_exchange".into()));
        }
        Ok(KeyShare { group, key_exchange })
    }
}

pub(crate) fn encode_extensions(exts: &[Extension]) -> Result<Vec<u8>, HandshakeError> {
    let mut inner = Vec::new();
    for e in exts {
        e.encode(&mut inner)?;
    }
    let mut out = Vec::with_capacity(inner.len() + 2);
    put_vec16(&mut out, &inner)?;
    Ok(out)
}

pub(crate) fn decode_extensions(r: &mut Reader<'_>) -> Result<Vec<Extension>, HandshakeError> {
    let block = r.vec16()?;
    let mut inner = Reader::new(block);
    let mut exts: Vec<Extension> = Vec::new();
    while !inner.is_empty() {
        let e = Extension::decode(&mut inner)?;
        if exts.iter().any(|x| x.extension_type == e.extension_type) {
            return Err(HandshakeError::Decode(format!("duplicate extension {}", e.extension_type)));
        }
        exts.push(e);
    }
    Ok(exts)
}

pub(crate) fn find_ext(exts: &[Extension], ty: u16) -> Option<&Extension> {
    exts.iter().find(|e| e.extension_type == ty)
}

/// Handshake message type codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum HandshakeType {
    ClientHello = 1,
    ServerHello = 2,
    HelloRetryRequest = 6,
    EncryptedExtensions = 8,
    Certificate = 11,
    CertificateRequest = 13,
    CertificateVerify = 15,
    Finished = 20,
}

impl HandshakeType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::ClientHello,
            2 => Self::ServerHello,
            6 => Self::HelloRetryRequest,
            8 => Self::EncryptedExtensions,
            11 => Self::Certificate,
            13 => Self::CertificateRequest,
            15 => Self::CertificateVerify,
            20 => Self::Finished,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Hello {
    pub random: [u8; 32],
    pub cipher_suite: u16,
    pub extensions: Vec<Extension>,
}

impl Hello {
    fn encode_body(&self) -> Result<Vec<u8>, HandshakeError> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.random);
        out.extend_from_slice(&self.cipher_suite.to_be_bytes());
        out.extend(encode_extensions(&self.extensions)?);
        Ok(out)
    }

    fn decode_body(body: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = Reader::new(body);
        let random = r.take(32)?.try_into().unwrap();
        let cipher_suite = r.u16()?;
        let extensions = decode_extensions(&mut r)?;
        r.expect_end()?;
        Ok(Hello { random, cipher_suite, extensions })
    }

    pub fn extension(&self, ty: u16) -> Option<&Extension> {
        find_ext(&self.extensions, ty)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HandshakeMessage {
    ClientHello(Hello),
    ServerHello(Hello),
    /// Cipher suite plus the extension types the server wants in the retried hello.
    HelloRetryRequest { cipher_suite: u16, extensions: Vec<Extension> },
    EncryptedExtensions(Vec<Extension>),
    Finished([u8; 32]),
    /// Any other type, kept opaque (never produced by this stack).
    Other(u8, Vec<u8>),
}

impl HandshakeMessage {
    pub fn type_code(&self) -> u8 {
        match self {
            HandshakeMessage::ClientHello(_) => HandshakeType::ClientHello as u8,
            HandshakeMessage::ServerHello(_) => HandshakeType::ServerHello as u8,
            HandshakeMessage::HelloRetryRequest { .. } => HandshakeType::HelloRetryRequest as u8,
            HandshakeMessage::EncryptedExtensions(_) => HandshakeType::EncryptedExtensions as u8,
            HandshakeMessage::Finished(_) => HandshakeType::Finished as u8,
            HandshakeMessage::Other(t, _) => *t,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, HandshakeError> {
        let body = match self {
            HandshakeMessage::ClientHello(h) | HandshakeMessage::ServerHello(h) => h.encode_body()?,
            HandshakeMessage::HelloRetryRequest { cipher_suite, extensions } => {
                let mut b = cipher_suite.to_be_bytes().to_vec();
                b.extend(encode_extensions(extensions)?);
                b
            }
            HandshakeMessage::EncryptedExtensions(exts) => encode_extensions(exts)?,
            HandshakeMessage::Finished(v) => v.to_vec(),
            HandshakeMessage::Other(_, b) => b.clone(),
        };
        if body.len() >= 1 << 24 {
            return Err(HandshakeError::Encode("handshake body exceeds 2^24-1 bytes".into()));
        }
        let mut out = Vec::with_capacity(4 + body.len());
        out.push(self.type_code());
        out.extend_from_slice(&(body.len() as u32).to_be_bytes()[1..]);
        out.extend(body);
        Ok(out)
    }

    /// Decodes exactly one message from `buf`.
    pub fn decode(buf: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = Reader::new(buf);
        let ty = r.u8()?;
        let len = r.u24()?;
        let body = r.take(len)?;
        r.expect_end()?;
        Ok(match HandshakeType::from_u8(ty) {
            Some(HandshakeType::ClientHello) => HandshakeMessage::ClientHello(Hello::decode_body(body)?),
            Some(HandshakeType::ServerHello) => HandshakeMessage::ServerHello(Hello::decode_body(body)?),
            Some(HandshakeType::HelloRetryRequest) => {
                let mut r = Reader::new(body);
                let cipher_suite = r.u16()?;
                let extensions = decode_extensions(&mut r)?;
                r.expect_end()?;
                HandshakeMessage::HelloRetryRequest { cipher_suite, extensions }
            }
            Some(HandshakeType::EncryptedExtensions) => {
                let mut r = Reader::new(body);
                let exts = decode_extensions(&mut r)?;
                r.expect_end()?;
                HandshakeMessage::EncryptedExtensions(exts)
            }
            Some(HandshakeType::Finished) => HandshakeMessage::Finished(
                body.try_into().map_err(|_| HandshakeError::Decode("Finished must be 32 bytes".into()))?,
            ),
            _ => HandshakeMessage::Other(ty, body.to_vec()),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ContentType {
    Alert = 21,
    Handshake = 22,
    ApplicationData = 23,
}

impl ContentType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            21 => Some(Self::Alert),
            22 => Some(Self::Handshake),
            23 => Some(Self::ApplicationData),
            _ => None,
        }
    }
}

/// One record as carried on the byte stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub content_type: u8,
    pub fragment: Vec<u8>,
}

impl Record {
    pub fn header(content_type: u8, len: usize) -> [u8; 3] {
        let l = (len as u16).to_be_bytes();
        [content_type, l[0], l[1]]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, HandshakeError> {
        if self.fragment.len() > u16::MAX as usize {
            return Err(HandshakeError::Encode("record exceeds 2^16-1 bytes".into()));
        }
        let mut out = Vec::with_capacity(3 + self.fragment.len());
        out.extend_from_slice(&Record::header(self.content_type, self.fragment.len()));
        out.extend_from_slice(&self.fragment);
        Ok(out)
    }

    /// Decodes exactly one record.
    pub fn from_bytes(buf: &[u8]) -> Result<Self, HandshakeError> {
        let mut r = Reader::new(buf);
        let content_type = r.u8()?;
        let fragment = r.vec16()?.to_vec();
        r.expect_end()?;
        Ok(Record { content_type, fragment })
    }

    /// Splits a complete record off the front of a stream buffer, if one is there.
    pub fn split_from(buf: &[u8]) -> Option<(Record, usize)> {
        if buf.len() < 3 {
            return None;
        }
        let len = u16::from_be_bytes([buf[1], buf[2]]) as usize;
        if buf.len() < 3 + len {
            return None;
        }
        Some((Record { content_type: buf[0], fragment: buf[3..3 + len].to_vec() }, 3 + len))
    }

    pub fn wire_len(&self) -> usize {
        3 + self.fragment.len()
    }
}
