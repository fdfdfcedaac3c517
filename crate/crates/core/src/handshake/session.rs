use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::codec::{
    ContentType, Extension, HandshakeMessage, Hello, IbeIdentity, IbeIdentityAuth, KeyShare, Record, CIPHER_SUITE,
    EXT_IBE_IDENTITY, EXT_IBE_IDENTITY_AUTH, EXT_KEY_SHARE,
};
use super::record::RecordProtector;
use super::schedule::{finished_mac, verify_finished, KeySchedule};
use super::{AlertDescription, ClientAuth, ClientConfig, HandshakeError, IdentityDisclosure, ServerConfig};
use crate::kem::{
    decaps, derive_public, eph_decaps, eph_encaps, eph_generate, encaps_to, scheme_is_implemented,
    EphemeralCiphertext, EphemeralKeyPair, EphemeralPublicKey, IdKemCiphertext, IdentityString, SharedSecret,
    EPHEMERAL_GROUP_ID, SCHEME_ID_DESK_LATTICE,
};
use crate::metrics::{HandshakeMetrics, MessageKind, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionState {
    Start,
    WaitServerHello,
    WaitEncryptedExtensions,
    WaitServerFinished,
    WaitClientHello,
    WaitRetriedClientHello,
    WaitClientFinished,
    Complete,
    Aborted(AlertDescription),
}

/// Session secrets recorded when `key_log` is enabled, in the spirit of an
/// SSLKEYLOGFILE. Never enabled in production configurations.
#[derive(Clone, Default, Zeroize, ZeroizeOnDrop)]
pub struct KeyLog {
    pub eph: Option<[u8; 32]>,
    pub ss_s: Option<[u8; 32]>,
    pub ss_c: Option<[u8; 32]>,
    pub handshake_secret: Option<[u8; 32]>,
}

impl fmt::Debug for KeyLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyLog")
            .field("eph", &self.eph.is_some())
            .field("ss_s", &self.ss_s.is_some())
            .field("ss_c", &self.ss_c.is_some())
            .finish()
    }
}

#[derive(Clone, Default)]
struct Transcript {
    hasher: Sha256,
    messages: Vec<Vec<u8>>,
}

impl Transcript {
    fn add(&mut self, msg: &[u8]) {
        self.hasher.update(msg);
        self.messages.push(msg.to_vec());
    }

    fn hash(&self) -> [u8; 32] {
        self.hasher.clone().finalize().into()
    }
}

/// State shared by both roles.
struct Core {
    role: Role,
    state: SessionState,
    transcript: Transcript,
    schedule: KeySchedule,
    metrics: HandshakeMetrics,
    read: Option<RecordProtector>,
    write: Option<RecordProtector>,
    key_log: Option<KeyLog>,
    peer_identity: Option<IdentityString>,
    mutual: bool,
}

impl Core {
    fn new(role: Role, state: SessionState, key_log: bool) -> Self {
        Core {
            role,
            state,
            transcript: Transcript::default(),
            schedule: KeySchedule::new(),
            metrics: HandshakeMetrics::new(),
            read: None,
            write: None,
            key_log: key_log.then(KeyLog::default),
            peer_identity: None,
            mutual: false,
        }
    }

    fn kind(&self, msg: &HandshakeMessage, sent: bool) -> MessageKind {
        match msg {
            HandshakeMessage::ClientHello(_) => MessageKind::ClientHello,
            HandshakeMessage::ServerHello(_) => MessageKind::ServerHello,
            HandshakeMessage::HelloRetryRequest { .. } => MessageKind::HelloRetryRequest,
            HandshakeMessage::EncryptedExtensions(_) => MessageKind::EncryptedExtensions,
            HandshakeMessage::Finished(_) => {
                let from_server = (self.role == Role::Server) == sent;
                if from_server {
                    MessageKind::ServerFinished
                } else {
                    MessageKind::ClientFinished
                }
            }
            HandshakeMessage::Other(11, _) => MessageKind::Certificate,
            HandshakeMessage::Other(13, _) => MessageKind::CertificateRequest,
            HandshakeMessage::Other(15, _) => MessageKind::CertificateVerify,
            HandshakeMessage::Other(..) => MessageKind::Other,
        }
    }

    /// Adds a message to the transcript and the metrics.
    fn absorb(&mut self, msg: &HandshakeMessage, bytes: &[u8], sent: bool, retransmit: bool) {
        self.transcript.add(bytes);
        let kind = self.kind(msg, sent);
        self.metrics.record_message(kind, bytes.len());
        let exts: &[Extension] = match msg {
            HandshakeMessage::ClientHello(h) | HandshakeMessage::ServerHello(h) => &h.extensions,
            _ => &[],
        };
        for e in exts {
            match e.extension_type {
                EXT_IBE_IDENTITY_AUTH if e.extension_data.len() >= 4 => {
                    let ct_len = e.extension_data.len() - 4;
                    if retransmit {
                        self.metrics.record_identity_auth_retransmit(ct_len);
                    } else {
                        self.metrics.record_identity_auth(ct_len);
                    }
                }
                EXT_KEY_SHARE if kind == MessageKind::ServerHello && e.extension_data.len() >= 4 => {
                    self.metrics.record_ephemeral_ct(e.extension_data.len() - 4);
                }
                _ => {}
            }
        }
    }

    fn fail(&mut self, e: HandshakeError) -> HandshakeError {
        if !matches!(self.state, SessionState::Aborted(_)) {
            log::debug!("{:?} aborting: {e}", self.role);
            self.state = SessionState::Aborted(e.alert());
            self.metrics.freeze(Outcome::Aborted);
            self.read = None;
            self.write = None;
        }
        e
    }

    fn peer_alert(&self, rec: &Record) -> HandshakeError {
        match rec.fragment.as_slice() {
            [_, d] => match AlertDescription::from_u8(*d) {
                Some(a) => HandshakeError::PeerAlert(a),
                None => HandshakeError::Decode(format!("unknown alert {d}")),
            },
            _ => HandshakeError::Decode("malformed alert".into()),
        }
    }

    fn seal_handshake(&mut self, bytes: &[u8]) -> Result<Record, HandshakeError> {
        self.write
            .as_mut()
            .ok_or(HandshakeError::InvalidState("no write keys"))?
            .seal(ContentType::Handshake, bytes)
    }

    fn open_handshake(&mut self, rec: &Record) -> Result<(HandshakeMessage, Vec<u8>), HandshakeError> {
        let (ty, body) = self.read.as_mut().ok_or(HandshakeError::InvalidState("no read keys"))?.open(rec)?;
        if ty != ContentType::Handshake {
            return Err(HandshakeError::Decode("expected handshake content".into()));
        }
        Ok((HandshakeMessage::decode(&body)?, body))
    }

    fn complete(&mut self) {
        let c = self.schedule.client_app_traffic_secret_0().expect("master derived").clone();
        let s = self.schedule.server_app_traffic_secret_0().expect("master derived").clone();
        let (r, w) = match self.role {
            Role::Client => (s, c),
            Role::Server => (c, s),
        };
        self.read = Some(RecordProtector::new(&r));
        self.write = Some(RecordProtector::new(&w));
        self.state = SessionState::Complete;
        self.metrics.freeze(Outcome::Complete);
    }

    fn log_secrets(&mut self, eph: &SharedSecret, ss_s: &SharedSecret, ss_c: Option<&SharedSecret>) {
        if let Some(log) = self.key_log.as_mut() {
            log.eph = Some(*eph.as_bytes());
            log.ss_s = Some(*ss_s.as_bytes());
            log.ss_c = ss_c.map(|s| *s.as_bytes());
            log.handshake_secret = self.schedule.handshake_secret().map(|s| *s.as_bytes());
        }
    }

    fn derive_handshake(
        &mut self,
        eph: &SharedSecret,
        ss_s: &SharedSecret,
        ss_c: Option<&SharedSecret>,
    ) -> Result<(), HandshakeError> {
        self.schedule.derive_handshake_secret(eph.as_bytes(), ss_s.as_bytes(), ss_c.map(|s| s.as_bytes()))?;
        self.schedule.derive_handshake_traffic(self.transcript.hash())?;
        self.log_secrets(eph, ss_s, ss_c);
        let c = self.schedule.client_hs_traffic_secret().unwrap().clone();
        let s = self.schedule.server_hs_traffic_secret().unwrap().clone();
        let (r, w) = match self.role {
            Role::Client => (s, c),
            Role::Server => (c, s),
        };
        self.read = Some(RecordProtector::new(&r));
        self.write = Some(RecordProtector::new(&w));
        Ok(())
    }

    fn send_app(&mut self, data: &[u8]) -> Result<Record, HandshakeError> {
        if self.state != SessionState::Complete {
            return Err(HandshakeError::InvalidState("application data before Complete"));
        }
        let w = self.write.as_mut().expect("complete sessions have keys");
        w.seal(ContentType::ApplicationData, data)
    }

    fn receive_app(&mut self, rec: &Record) -> Result<Vec<u8>, HandshakeError> {
        if rec.content_type == ContentType::Alert as u8 {
            let e = self.peer_alert(rec);
            return Err(self.fail(e));
        }
        if self.state != SessionState::Complete {
            return Err(HandshakeError::InvalidState("application data before Complete"));
        }
        let r = self.read.as_mut().expect("complete sessions have keys");
        match r.open(rec) {
            Ok((ContentType::ApplicationData, data)) => Ok(data),
            Ok(_) => Err(self.fail(HandshakeError::Decode("unexpected inner content type".into()))),
            Err(e) => Err(self.fail(e)),
        }
    }
}

fn plain(bytes: Vec<u8>) -> Record {
    Record { content_type: ContentType::Handshake as u8, fragment: bytes }
}

fn check_suite(suite: u16) -> Result<(), HandshakeError> {
    if suite == CIPHER_SUITE {
        Ok(())
    } else {
        Err(HandshakeError::Decode(format!("unknown cipher suite 0x{suite:04x}")))
    }
}

fn key_share(hello: &Hello) -> Result<KeyShare, HandshakeError> {
    let ks = KeyShare::from_extension(hello.extension(EXT_KEY_SHARE).ok_or_else(|| HandshakeError::Decode("missing key_share".into()))?)?;
    if ks.group != EPHEMERAL_GROUP_ID {
        return Err(HandshakeError::UnsupportedScheme(ks.group));
    }
    Ok(ks)
}

fn identity_auth(ext: &Extension) -> Result<IbeIdentityAuth, HandshakeError> {
    let auth = IbeIdentityAuth::from_extension(ext)?;
    if !scheme_is_implemented(auth.ibe_scheme_id) {
        return Err(HandshakeError::UnsupportedScheme(auth.ibe_scheme_id));
    }
    Ok(auth)
}

macro_rules! session_accessors {
    ($t:ty) => {
        impl $t {
            pub fn state(&self) -> SessionState {
                self.core.state
            }
            pub fn is_complete(&self) -> bool {
                self.core.state == SessionState::Complete
            }
            pub fn is_aborted(&self) -> bool {
                matches!(self.core.state, SessionState::Aborted(_))
            }
            pub fn metrics(&self) -> &HandshakeMetrics {
                &self.core.metrics
            }
            pub fn schedule(&self) -> &KeySchedule {
                &self.core.schedule
            }
            /// Hash over every handshake message so far, in order.
            pub fn transcript_hash(&self) -> [u8; 32] {
                self.core.transcript.hash()
            }
            /// Raw handshake messages, as hashed into the transcript.
            pub fn transcript_messages(&self) -> &[Vec<u8>] {
                &self.core.transcript.messages
            }
            pub fn peer_identity(&self) -> Option<&IdentityString> {
                self.core.peer_identity.as_ref()
            }
            /// True when both sides authenticated with identity keys.
            pub fn is_mutual(&self) -> bool {
                self.core.mutual
            }
            pub fn key_log(&self) -> Option<&KeyLog> {
                self.core.key_log.as_ref()
            }
            pub fn send_application_data(&mut self, data: &[u8]) -> Result<Record, HandshakeError> {
                self.core.send_app(data)
            }
            pub fn receive_application_data(&mut self, rec: &Record) -> Result<Vec<u8>, HandshakeError> {
                self.core.receive_app(rec)
            }
            /// Parses one record from the stream and processes it.
            pub fn handle_bytes(&mut self, bytes: &[u8]) -> Result<Vec<Record>, HandshakeError> {
                match Record::from_bytes(bytes) {
                    Ok(rec) => self.handle(&rec),
                    Err(e) => Err(self.core.fail(e)),
                }
            }
            /// Processes one incoming handshake-phase record and returns the records to send.
            pub fn handle(&mut self, rec: &Record) -> Result<Vec<Record>, HandshakeError> {
                if matches!(self.core.state, SessionState::Aborted(_)) {
                    return Err(HandshakeError::InvalidState("session aborted"));
                }
                if rec.content_type == ContentType::Alert as u8 {
                    let e = self.core.peer_alert(rec);
                    return Err(self.core.fail(e));
                }
                match self.step(rec) {
                    Ok(out) => Ok(out),
                    Err(e) => Err(self.core.fail(e)),
                }
            }
        }
    };
}

pub struct ClientHandshake {
    config: ClientConfig,
    core: Core,
    rng: ChaCha20Rng,
    random: [u8; 32],
    eph: Option<EphemeralKeyPair>,
    ss_s: Option<SharedSecret>,
    first_extensions: Vec<Extension>,
    sent_identity: bool,
    retried: bool,
}

session_accessors!(ClientHandshake);

impl ClientHandshake {
    pub fn new(config: ClientConfig, rng_seed: [u8; 32]) -> Self {
        let key_log = config.key_log;
        ClientHandshake {
            config,
            core: Core::new(Role::Client, SessionState::Start, key_log),
            rng: ChaCha20Rng::from_seed(rng_seed),
            random: [0; 32],
            eph: None,
            ss_s: None,
            first_extensions: Vec::new(),
            sent_identity: false,
            retried: false,
        }
    }

    /// Produces the first ClientHello.
    pub fn start(&mut self) -> Result<Vec<Record>, HandshakeError> {
        if self.core.state != SessionState::Start {
            return Err(HandshakeError::InvalidState("client_start called twice"));
        }
        match self.start_inner() {
            Ok(r) => Ok(r),
            Err(e) => Err(self.core.fail(e)),
        }
    }

    fn start_inner(&mut self) -> Result<Vec<Record>, HandshakeError> {
        let mpk = self.config.mpk.clone();
        let params = mpk.params();
        self.core.metrics.begin_phase("client_hello");
        self.rng.fill_bytes(&mut self.random);
        let kp = eph_generate(params, &mut self.rng);

        let target = match &self.config.resolver {
            Some(r) => r.resolve(&self.config.server_identity),
            None => self.config.server_identity.clone(),
        };
        let pk = derive_public(&mpk, &target);
        self.core.metrics.count(|o| o.pubkey_derive += 1);
        let mut seed = [0u8; 32];
        self.rng.fill_bytes(&mut seed);
        let (ct_s, ss_s) = encaps_to(&mpk, &pk, seed);
        self.core.metrics.count(|o| o.encaps += 1);
        self.core.peer_identity = Some(target);

        self.first_extensions = vec![
            KeyShare { group: EPHEMERAL_GROUP_ID, key_exchange: kp.public.to_bytes(params) }.to_extension()?,
            IbeIdentityAuth { ibe_scheme_id: SCHEME_ID_DESK_LATTICE, encapsulated_identity: ct_s.to_bytes() }
                .to_extension()?,
        ];
        let mut exts = self.first_extensions.clone();
        if self.config.disclosure == IdentityDisclosure::Eager {
            if let Some(id) = self.config.claimed() {
                exts.push(IbeIdentity { identity: id.to_string() }.to_extension()?);
                self.sent_identity = true;
            }
        }
        self.eph = Some(kp);
        self.ss_s = Some(ss_s);
        let msg = HandshakeMessage::ClientHello(Hello { random: self.random, cipher_suite: CIPHER_SUITE, extensions: exts });
        let bytes = msg.encode()?;
        self.core.absorb(&msg, &bytes, true, false);
        self.core.state = SessionState::WaitServerHello;
        Ok(vec![plain(bytes)])
    }

    fn step(&mut self, rec: &Record) -> Result<Vec<Record>, HandshakeError> {
        match (self.core.state, ContentType::from_u8(rec.content_type)) {
            (SessionState::WaitServerHello, Some(ContentType::Handshake)) => {
                let msg = HandshakeMessage::decode(&rec.fragment)?;
                match &msg {
                    HandshakeMessage::HelloRetryRequest { cipher_suite, extensions } => {
                        let (suite, exts) = (*cipher_suite, extensions.clone());
                        self.on_retry(&msg, &rec.fragment, suite, &exts)
                    }
                    HandshakeMessage::ServerHello(h) => {
                        let h = h.clone();
                        self.on_server_hello(&msg, &rec.fragment, &h)
                    }
                    _ => Err(HandshakeError::Decode("expected ServerHello".into())),
                }
            }
            (SessionState::WaitEncryptedExtensions, Some(ContentType::ApplicationData)) => {
                let (msg, bytes) = self.core.open_handshake(rec)?;
                if !matches!(msg, HandshakeMessage::EncryptedExtensions(_)) {
                    return Err(HandshakeError::Decode("expected EncryptedExtensions".into()));
                }
                self.core.absorb(&msg, &bytes, false, false);
                self.core.state = SessionState::WaitServerFinished;
                Ok(vec![])
            }
            (SessionState::WaitServerFinished, Some(ContentType::ApplicationData)) => {
                let (msg, bytes) = self.core.open_handshake(rec)?;
                let HandshakeMessage::Finished(tag) = msg else {
                    return Err(HandshakeError::Decode("expected Finished".into()));
                };
                self.on_server_finished(&msg, &bytes, &tag)
            }
            (SessionState::Complete, _) => Err(HandshakeError::InvalidState("handshake already complete")),
            (_, None) => Err(HandshakeError::Decode(format!("unknown content type {}", rec.content_type))),
            _ => Err(HandshakeError::Decode("unexpected record".into())),
        }
    }

    fn on_retry(&mut self, msg: &HandshakeMessage, bytes: &[u8], suite: u16, exts: &[Extension]) -> Result<Vec<Record>, HandshakeError> {
        check_suite(suite)?;
        if self.retried || self.sent_identity {
            return Err(HandshakeError::Decode("unexpected HelloRetryRequest".into()));
        }
        if !exts.iter().any(|e| e.extension_type == EXT_IBE_IDENTITY) {
            return Err(HandshakeError::Decode("HelloRetryRequest requests nothing".into()));
        }
        self.core.absorb(msg, bytes, false, false);
        let id = match (self.config.disclosure, self.config.claimed()) {
            (IdentityDisclosure::Never, _) | (_, None) => {
                return Err(HandshakeError::AuthFailure("server requires client authentication"))
            }
            (_, Some(id)) => id,
        };
        let mut exts = self.first_extensions.clone();
        exts.push(IbeIdentity { identity: id.to_string() }.to_extension()?);
        let msg = HandshakeMessage::ClientHello(Hello { random: self.random, cipher_suite: CIPHER_SUITE, extensions: exts });
        let bytes = msg.encode()?;
        self.core.absorb(&msg, &bytes, true, true);
        self.sent_identity = true;
        self.retried = true;
        Ok(vec![plain(bytes)])
    }

    fn on_server_hello(&mut self, msg: &HandshakeMessage, bytes: &[u8], hello: &Hello) -> Result<Vec<Record>, HandshakeError> {
        check_suite(hello.cipher_suite)?;
        let mpk = self.config.mpk.clone();
        let params = mpk.params();
        let ks = key_share(hello)?;
        let eph_ct = EphemeralCiphertext::from_bytes(params, &ks.key_exchange)?;
        let ct_c = match (self.sent_identity, hello.extension(EXT_IBE_IDENTITY_AUTH)) {
            (true, None) => return Err(HandshakeError::AuthFailure("server did not encapsulate to the client identity")),
            (false, Some(_)) => return Err(HandshakeError::Decode("unsolicited ibe_identity_auth".into())),
            (false, None) => None,
            (true, Some(ext)) => Some(IdKemCiphertext::from_bytes(&mpk, &identity_auth(ext)?.encapsulated_identity)?),
        };
        self.core.absorb(msg, bytes, false, false);
        self.core.metrics.begin_phase("key_schedule");

        let kp = self.eph.take().ok_or(HandshakeError::InvalidState("ephemeral key already used"))?;
        let eph = eph_decaps(params, kp.secret, &eph_ct)?;
        self.core.metrics.count(|o| o.decaps += 1);
        let ss_c = match ct_c {
            Some(ct) => {
                let key = self.config.key.as_ref().ok_or(HandshakeError::Config("mutual mode without a client key".into()))?;
                let ss = decaps(key, &ct)?;
                self.core.metrics.count(|o| o.decaps += 1);
                Some(ss)
            }
            None => None,
        };
        let ss_s = self.ss_s.take().ok_or(HandshakeError::InvalidState("missing ss_s"))?;
        self.core.derive_handshake(&eph, &ss_s, ss_c.as_ref())?;
        self.core.mutual = ss_c.is_some();
        self.core.state = SessionState::WaitEncryptedExtensions;
        Ok(vec![])
    }

    fn on_server_finished(&mut self, msg: &HandshakeMessage, bytes: &[u8], tag: &[u8; 32]) -> Result<Vec<Record>, HandshakeError> {
        let key = self.core.schedule.server_finished_key().ok_or(HandshakeError::OutOfOrder("no finished key"))?;
        if !verify_finished(key, &self.core.transcript.hash(), tag) {
            return Err(HandshakeError::AuthFailure("server Finished"));
        }
        self.core.absorb(msg, bytes, false, false);
        let th2 = self.core.transcript.hash();
        self.core.schedule.derive_master(th2)?;
        let cf = finished_mac(self.core.schedule.client_finished_key().unwrap(), &th2);
        let msg = HandshakeMessage::Finished(cf);
        let bytes = msg.encode()?;
        self.core.absorb(&msg, &bytes, true, false);
        let rec = self.core.seal_handshake(&bytes)?;
        self.core.complete();
        Ok(vec![rec])
    }
}

pub struct ServerHandshake {
    config: ServerConfig,
    core: Core,
    rng: ChaCha20Rng,
    first_hello: Option<Hello>,
}

session_accessors!(ServerHandshake);

impl ServerHandshake {
    pub fn new(config: ServerConfig, rng_seed: [u8; 32]) -> Self {
        let key_log = config.key_log;
        ServerHandshake {
            config,
            core: Core::new(Role::Server, SessionState::WaitClientHello, key_log),
            rng: ChaCha20Rng::from_seed(rng_seed),
            first_hello: None,
        }
    }

    fn step(&mut self, rec: &Record) -> Result<Vec<Record>, HandshakeError> {
        match (self.core.state, ContentType::from_u8(rec.content_type)) {
            (SessionState::WaitClientHello | SessionState::WaitRetriedClientHello, Some(ContentType::Handshake)) => {
                let msg = HandshakeMessage::decode(&rec.fragment)?;
                let HandshakeMessage::ClientHello(hello) = &msg else {
                    return Err(HandshakeError::Decode("expected ClientHello".into()));
                };
                let hello = hello.clone();
                self.on_client_hello(&msg, &rec.fragment, hello)
            }
            (SessionState::WaitClientFinished, Some(ContentType::ApplicationData)) => {
                let (msg, bytes) = self.core.open_handshake(rec)?;
                let HandshakeMessage::Finished(tag) = msg else {
                    return Err(HandshakeError::Decode("expected Finished".into()));
                };
                let key = self.core.schedule.client_finished_key().ok_or(HandshakeError::OutOfOrder("no finished key"))?;
                if !verify_finished(key, &self.core.transcript.hash(), &tag) {
                    return Err(HandshakeError::AuthFailure("client Finished"));
                }
                self.core.absorb(&msg, &bytes, false, false);
                self.core.complete();
                Ok(vec![])
            }
            (SessionState::Complete, _) => Err(HandshakeError::InvalidState("handshake already complete")),
            (_, None) => Err(HandshakeError::Decode(format!("unknown content type {}", rec.content_type))),
            _ => Err(HandshakeError::Decode("unexpected record".into())),
        }
    }

    fn on_client_hello(&mut self, msg: &HandshakeMessage, bytes: &[u8], hello: Hello) -> Result<Vec<Record>, HandshakeError> {
        check_suite(hello.cipher_suite)?;
        let mpk = self.config.mpk.clone();
        let params = mpk.params();
        let ks = key_share(&hello)?;
        let auth_ext = hello.extension(EXT_IBE_IDENTITY_AUTH).ok_or_else(|| HandshakeError::Decode("missing ibe_identity_auth".into()))?;
        let auth = identity_auth(auth_ext)?;
        let claimed = match hello.extension(EXT_IBE_IDENTITY) {
            Some(ext) => {
                let raw = IbeIdentity::from_extension(ext)?;
                Some(IdentityString::parse(&raw.identity).map_err(|e| HandshakeError::Decode(e.to_string()))?)
            }
            None => None,
        };

        let retried = self.core.state == SessionState::WaitRetriedClientHello;
        if retried {
            let first = self.first_hello.as_ref().expect("set when the retry was requested");
            let same = first.random == hello.random
                && first.extension(EXT_KEY_SHARE) == hello.extension(EXT_KEY_SHARE)
                && first.extension(EXT_IBE_IDENTITY_AUTH) == hello.extension(EXT_IBE_IDENTITY_AUTH);
            if !same {
                return Err(HandshakeError::Decode("retried ClientHello changed its key material".into()));
            }
            if claimed.is_none() {
                return Err(HandshakeError::AuthFailure("client refused to authenticate"));
            }
        } else if let Some(cache) = &self.config.replay_cache {
            let share_digest: [u8; 32] = Sha256::digest(&ks.key_exchange).into();
            if !cache.check_and_insert(&[hello.random, share_digest]) {
                return Err(HandshakeError::Replay);
            }
        }
        self.core.absorb(msg, bytes, false, retried);

        if claimed.is_none() && self.config.client_auth == ClientAuth::Required {
            let hrr = HandshakeMessage::HelloRetryRequest {
                cipher_suite: CIPHER_SUITE,
                extensions: vec![Extension::new(EXT_IBE_IDENTITY, Vec::new())],
            };
            let hrr_bytes = hrr.encode()?;
            self.core.absorb(&hrr, &hrr_bytes, true, false);
            self.first_hello = Some(hello);
            self.core.state = SessionState::WaitRetriedClientHello;
            return Ok(vec![plain(hrr_bytes)]);
        }

        self.core.metrics.begin_phase("server_flight");
        let eph_pub = EphemeralPublicKey::from_bytes(params, &ks.key_exchange)?;
        let ct_s = IdKemCiphertext::from_bytes(&mpk, &auth.encapsulated_identity)?;
        let ss_s = decaps(&self.config.key, &ct_s)?;
        self.core.metrics.count(|o| o.decaps += 1);

        let mut seed = [0u8; 32];
        self.rng.fill_bytes(&mut seed);
        let (eph_ct, eph) = eph_encaps(params, &eph_pub, seed);
        self.core.metrics.count(|o| o.encaps += 1);

        let mut sh_exts = vec![KeyShare { group: EPHEMERAL_GROUP_ID, key_exchange: eph_ct.to_bytes(params) }.to_extension()?];
        let ss_c = match &claimed {
            Some(id) => {
                let target = match &self.config.resolver {
                    Some(r) => r.resolve(id),
                    None => id.clone(),
                };
                let pk = derive_public(&mpk, &target);
                self.core.metrics.count(|o| o.pubkey_derive += 1);
                self.rng.fill_bytes(&mut seed);
                let (ct_c, ss_c) = encaps_to(&mpk, &pk, seed);
                self.core.metrics.count(|o| o.encaps += 1);
                sh_exts.push(
                    IbeIdentityAuth { ibe_scheme_id: SCHEME_ID_DESK_LATTICE, encapsulated_identity: ct_c.to_bytes() }
                        .to_extension()?,
                );
                self.core.peer_identity = Some(target);
                Some(ss_c)
            }
            None => None,
        };
        self.core.mutual = ss_c.is_some();

        let mut random = [0u8; 32];
        self.rng.fill_bytes(&mut random);
        let sh = HandshakeMessage::ServerHello(Hello { random, cipher_suite: CIPHER_SUITE, extensions: sh_exts });
        let sh_bytes = sh.encode()?;
        self.core.absorb(&sh, &sh_bytes, true, false);
        self.core.derive_handshake(&eph, &ss_s, ss_c.as_ref())?;

        let mut out = vec![plain(sh_bytes)];
        let ee = HandshakeMessage::EncryptedExtensions(Vec::new());
        let ee_bytes = ee.encode()?;
        self.core.absorb(&ee, &ee_bytes, true, false);
        out.push(self.core.seal_handshake(&ee_bytes)?);

        let sf = finished_mac(self.core.schedule.server_finished_key().unwrap(), &self.core.transcript.hash());
        let sf = HandshakeMessage::Finished(sf);
        let sf_bytes = sf.encode()?;
        self.core.absorb(&sf, &sf_bytes, true, false);
        out.push(self.core.seal_handshake(&sf_bytes)?);
        self.core.schedule.derive_master(self.core.transcript.hash())?;
        self.core.state = SessionState::WaitClientFinished;
        Ok(out)
    }
}
