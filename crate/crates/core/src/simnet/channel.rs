use serde::Serialize;

use crate::handshake::stream::{seal_message, MessageAssembler};
use crate::handshake::{
    connect_in_memory, ClientConfig, ClientHandshake, Direction, HandshakeError, ServerConfig,
    ServerHandshake, WireCapture,
};
use crate::metrics::{HandshakeMetrics, MetricsError};

/// An application message as it went over a channel.
#[derive(Clone, Debug, Serialize)]
pub struct SentMessage {
    pub direction: Direction,
    pub label: String,
    /// Capture indices of the records that carried it.
    pub records: std::ops::Range<usize>,
    /// Whether it held a bearer credential.
    pub credential: bool,
}

/// A failed handshake together with what crossed the wire before the abort.
pub struct ConnectFailure {
    pub error: HandshakeError,
    pub capture: WireCapture,
    pub client: Box<ClientHandshake>,
    pub server: Box<ServerHandshake>,
}

impl std::fmt::Debug for ConnectFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectFailure")
            .field("error", &self.error)
            .field("records", &self.capture.records.len())
            .finish_non_exhaustive()
    }
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("records", &self.capture.records.len())
            .field("sent", &self.sent.len())
            .finish_non_exhaustive()
    }
}

/// An established in-process IBE-TLS connection with a full wire capture.
pub struct Channel {
    client: ClientHandshake,
    server: ServerHandshake,
    capture: WireCapture,
    client_rx: MessageAssembler,
    server_rx: MessageAssembler,
    server_finished_at: usize,
    sent: Vec<SentMessage>,
}

impl Channel {
    pub fn open(
        client: ClientConfig,
        server: ServerConfig,
        client_seed: [u8; 32],
        server_seed: [u8; 32],
    ) -> Result<Channel, Box<ConnectFailure>> {
        let mut c = ClientHandshake::new(client, client_seed);
        let mut s = ServerHandshake::new(server, server_seed);
        let mut capture = WireCapture::new();
        if let Err(error) = connect_in_memory(&mut c, &mut s, &mut capture, None) {
            return Err(Box::new(ConnectFailure { error, capture, client: Box::new(c), server: Box::new(s) }));
        }
        // The server's last flight ends with its Finished; the client has
        // verified it by the time the handshake completes.
        let server_finished_at = capture
            .records
            .iter()
            .rposition(|r| r.direction == Direction::ServerToClient)
            .expect("a completed handshake has server records");
        Ok(Channel {
            client: c,
            server: s,
            capture,
            client_rx: MessageAssembler::new(),
            server_rx: MessageAssembler::new(),
            server_finished_at,
            sent: Vec::new(),
        })
    }

    fn transfer(&mut self, direction: Direction, label: &str, credential: bool, msg: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        let recs = match direction {
            Direction::ClientToServer => seal_message(&mut self.client, msg)?,
            Direction::ServerToClient => seal_message(&mut self.server, msg)?,
        };
        let start = self.capture.records.len();
        let mut out = None;
        for r in &recs {
            self.capture.push(direction, r.to_bytes()?);
            let (plain, asm) = match direction {
                Direction::ClientToServer => (self.server.receive_application_data(r)?, &mut self.server_rx),
                Direction::ServerToClient => (self.client.receive_application_data(r)?, &mut self.client_rx),
            };
            if let Some(m) = asm.push(&plain)? {
                out = Some(m);
            }
        }
        self.sent.push(SentMessage {
            direction,
            label: label.to_owned(),
            records: start..self.capture.records.len(),
            credential,
        });
        out.ok_or(HandshakeError::Decode("message incomplete".into()))
    }

    pub fn client_send(&mut self, label: &str, credential: bool, msg: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        self.transfer(Direction::ClientToServer, label, credential, msg)
    }

    pub fn server_send(&mut self, label: &str, msg: &[u8]) -> Result<Vec<u8>, HandshakeError> {
        self.transfer(Direction::ServerToClient, label, false, msg)
    }

    /// Client request, server-side handler, response back to the client.
    pub fn request(
        &mut self,
        label: &str,
        credential: bool,
        msg: &[u8],
        handler: impl FnOnce(&[u8]) -> Vec<u8>,
    ) -> Result<Vec<u8>, HandshakeError> {
        let at_server = self.client_send(label, credential, msg)?;
        let resp = handler(&at_server);
        self.server_send(&format!("{label}-response"), &resp)
    }

    pub fn client(&self) -> &ClientHandshake {
        &self.client
    }

    pub fn server(&self) -> &ServerHandshake {
        &self.server
    }

    pub fn capture(&self) -> &WireCapture {
        &self.capture
    }

    pub fn sent(&self) -> &[SentMessage] {
        &self.sent
    }

    pub fn server_finished_at(&self) -> usize {
        self.server_finished_at
    }

    /// True when every credential-bearing record went out after the server's
    /// Finished had been delivered and verified.
    pub fn credentials_after_server_finished(&self) -> bool {
        self.sent
            .iter()
            .filter(|m| m.credential)
            .all(|m| m.direction == Direction::ClientToServer && m.records.start > self.server_finished_at)
    }

    pub fn metrics(&self) -> Result<HandshakeMetrics, MetricsError> {
        HandshakeMetrics::combine(self.client.metrics(), self.server.metrics())
    }
}
