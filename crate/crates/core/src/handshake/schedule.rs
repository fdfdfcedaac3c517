//! TLS 1.3 key schedule with the KEM secrets in place of the DHE input.
//!
//! ```text
//! early      = Extract(0, PSK=0)
//! derived    = Expand-Label(early, "derived", "")
//! handshake  = Extract(derived, eph || ss_s [|| ss_c])
//! c/s hs     = Expand-Label(handshake, "c hs traffic" / "s hs traffic", th1)
//! finished   = Expand-Label(c/s hs, "finished", "")
//! derived2   = Expand-Label(handshake, "derived", "")
//! master     = Extract(derived2, 0)
//! c/s ap     = Expand-Label(master, "c ap traffic" / "s ap traffic", th2)
//! ```

use std::collections::BTreeSet;
use std::fmt;

use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use sha2::Sha256;
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::HandshakeError;

pub const HASH_LEN: usize = 32;

pub const LABEL_DERIVED: &str = "derived";
pub const LABEL_C_HS_TRAFFIC: &str = "c hs traffic";
pub const LABEL_S_HS_TRAFFIC: &str = "s hs traffic";
pub const LABEL_FINISHED: &str = "finished";
pub const LABEL_C_AP_TRAFFIC: &str = "c ap traffic";
pub const LABEL_S_AP_TRAFFIC: &str = "s ap traffic";

/// A 32-byte schedule value.
#[derive(Clone, PartialEq, Eq, Zeroize, ZeroizeOnDrop)]
pub struct Secret([u8; HASH_LEN]);

impl Secret {
    pub fn from_bytes(b: [u8; HASH_LEN]) -> Self {
        Secret(b)
    }

    pub fn as_bytes(&self) -> &[u8; HASH_LEN] {
        &self.0
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(..)")
    }
}

pub fn hkdf_extract(salt: &[u8], ikm: &[u8]) -> Secret {
    let (prk, _) = Hkdf::<Sha256>::extract(Some(salt), ikm);
    Secret(prk.into())
}

/// `HKDF-Expand-Label(secret, label, context, len)` with the "tls13 " prefix.
pub fn hkdf_expand_label(secret: &[u8], label: &str, context: &[u8], out: &mut [u8]) {
    let full_label_len = 6 + label.len();
    assert!(full_label_len <= 255 && context.len() <= 255 && out.len() <= u16::MAX as usize);
    let mut info = Vec::with_capacity(4 + full_label_len + context.len());
    info.extend_from_slice(&(out.len() as u16).to_be_bytes());
    info.push(full_label_len as u8);
    info.extend_from_slice(b"tls13 ");
    info.extend_from_slice(label.as_bytes());
    info.push(context.len() as u8);
    info.extend_from_slice(context);
    Hkdf::<Sha256>::from_prk(secret)
        .expect("PRK is one hash length")
        .expand(&info, out)
        .expect("output length within HKDF bounds");
}

fn expand_secret(secret: &Secret, label: &str, context: &[u8]) -> Secret {
    let mut out = [0u8; HASH_LEN];
    hkdf_expand_label(&secret.0, label, context, &mut out);
    Secret(out)
}

pub fn finished_mac(finished_key: &Secret, transcript_hash: &[u8; HASH_LEN]) -> [u8; HASH_LEN] {
    let mut mac = Hmac::<Sha256>::new_from_slice(&finished_key.0).expect("HMAC takes any key length");
    mac.update(transcript_hash);
    mac.finalize().into_bytes().into()
}

pub fn verify_finished(finished_key: &Secret, transcript_hash: &[u8; HASH_LEN], tag: &[u8]) -> bool {
    let mut mac = Hmac::<Sha256>::new_from_slice(&finished_key.0).expect("HMAC takes any key length");
    mac.update(transcript_hash);
    mac.verify_slice(tag).is_ok()
}

/// Per-direction record protection material.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct TrafficKeys {
    pub key: [u8; 32],
    pub iv: [u8; 12],
}

impl TrafficKeys {
    pub fn from_secret(secret: &Secret) -> Self {
        let mut key = [0u8; 32];
        let mut iv = [0u8; 12];
        hkdf_expand_label(&secret.0, "key", b"", &mut key);
        hkdf_expand_label(&secret.0, "iv", b"", &mut iv);
        TrafficKeys { key, iv }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Early,
    Handshake,
    Traffic,
    Master,
}

/// The ten schedule values plus the two transcript checkpoints, derivable
/// only in ladder order.
#[derive(Clone)]
pub struct KeySchedule {
    stage: Stage,
    early_secret: Secret,
    derived_secret: Secret,
    handshake_secret: Option<Secret>,
    client_hs_traffic_secret: Option<Secret>,
    server_hs_traffic_secret: Option<Secret>,
    client_finished_key: Option<Secret>,
    server_finished_key: Option<Secret>,
    master_secret: Option<Secret>,
    client_app_traffic_secret_0: Option<Secret>,
    server_app_traffic_secret_0: Option<Secret>,
    th1: Option<[u8; HASH_LEN]>,
    th2: Option<[u8; HASH_LEN]>,
    labels: BTreeSet<&'static str>,
}

impl fmt::Debug for KeySchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeySchedule").field("stage", &self.stage).finish_non_exhaustive()
    }
}

impl Default for KeySchedule {
    fn default() -> Self {
        Self::new()
    }
}

impl KeySchedule {
    /// Starts the ladder with the fixed all-zero PSK input.
    pub fn new() -> Self {
        let zeros = [0u8; HASH_LEN];
        let early_secret = hkdf_extract(&zeros, &zeros);
        let derived_secret = expand_secret(&early_secret, LABEL_DERIVED, b"");
        let mut labels = BTreeSet::new();
        labels.insert(LABEL_DERIVED);
        KeySchedule {
            stage: Stage::Early,
            early_secret,
            derived_secret,
            handshake_secret: None,
            client_hs_traffic_secret: None,
            server_hs_traffic_secret: None,
            client_finished_key: None,
            server_finished_key: None,
            master_secret: None,
            client_app_traffic_secret_0: None,
            server_app_traffic_secret_0: None,
            th1: None,
            th2: None,
            labels,
        }
    }

    fn expand(&mut self, secret: &Secret, label: &'static str, context: &[u8]) -> Secret {
        self.labels.insert(label);
        expand_secret(secret, label, context)
    }

    /// `handshake_secret = Extract(derived, eph || ss_s [|| ss_c])`.
    pub fn derive_handshake_secret(
        &mut self,
        eph: &[u8; 32],
        ss_s: &[u8; 32],
        ss_c: Option<&[u8; 32]>,
    ) -> Result<&Secret, HandshakeError> {
        if self.stage != Stage::Early {
            return Err(HandshakeError::OutOfOrder("handshake secret already derived"));
        }
        let mut ikm = Vec::with_capacity(96);
        ikm.extend_from_slice(eph);
        ikm.extend_from_slice(ss_s);
        if let Some(c) = ss_c {
            ikm.extend_from_slice(c);
        }
        self.handshake_secret = Some(hkdf_extract(&self.derived_secret.0, &ikm));
        ikm.zeroize();
        self.stage = Stage::Handshake;
        Ok(self.handshake_secret.as_ref().unwrap())
    }

    /// Handshake traffic secrets and finished keys at checkpoint `th1`.
    pub fn derive_handshake_traffic(&mut self, th1: [u8; HASH_LEN]) -> Result<(), HandshakeError> {
        if self.stage != Stage::Handshake {
            return Err(HandshakeError::OutOfOrder("handshake traffic needs the handshake secret"));
        }
        let hs = self.handshake_secret.clone().unwrap();
        let c = self.expand(&hs, LABEL_C_HS_TRAFFIC, &th1);
        let s = self.expand(&hs, LABEL_S_HS_TRAFFIC, &th1);
        self.client_finished_key = Some(self.expand(&c, LABEL_FINISHED, b""));
        self.server_finished_key = Some(self.expand(&s, LABEL_FINISHED, b""));
        self.client_hs_traffic_secret = Some(c);
        self.server_hs_traffic_secret = Some(s);
        self.th1 = Some(th1);
        self.stage = Stage::Traffic;
        Ok(())
    }

    /// Master and application traffic secrets at checkpoint `th2`.
    pub fn derive_master(&mut self, th2: [u8; HASH_LEN]) -> Result<(), HandshakeError> {
        if self.stage != Stage::Traffic {
            return Err(HandshakeError::OutOfOrder("master secret needs handshake traffic secrets"));
        }
        let hs = self.handshake_secret.clone().unwrap();
        let derived2 = self.expand(&hs, LABEL_DERIVED, b"");
        let master = hkdf_extract(&derived2.0, &[0u8; HASH_LEN]);
        self.client_app_traffic_secret_0 = Some(self.expand(&master, LABEL_C_AP_TRAFFIC, &th2));
        self.server_app_traffic_secret_0 = Some(self.expand(&master, LABEL_S_AP_TRAFFIC, &th2));
        self.master_secret = Some(master);
        self.th2 = Some(th2);
        self.stage = Stage::Master;
        Ok(())
    }

    pub fn early_secret(&self) -> &Secret {
        &self.early_secret
    }
    pub fn derived_secret(&self) -> &Secret {
        &self.derived_secret
    }
    pub fn handshake_secret(&self) -> Option<&Secret> {
        self.handshake_secret.as_ref()
    }
    pub fn client_hs_traffic_secret(&self) -> Option<&Secret> {
        self.client_hs_traffic_secret.as_ref()
    }
    pub fn server_hs_traffic_secret(&self) -> Option<&Secret> {
        self.server_hs_traffic_secret.as_ref()
    }
    pub fn client_finished_key(&self) -> Option<&Secret> {
        self.client_finished_key.as_ref()
    }
    pub fn server_finished_key(&self) -> Option<&Secret> {
        self.server_finished_key.as_ref()
    }
    pub fn master_secret(&self) -> Option<&Secret> {
        self.master_secret.as_ref()
    }
    pub fn client_app_traffic_secret_0(&self) -> Option<&Secret> {
        self.client_app_traffic_secret_0.as_ref()
    }
    pub fn server_app_traffic_secret_0(&self) -> Option<&Secret> {
        self.server_app_traffic_secret_0.as_ref()
    }
    pub fn th1(&self) -> Option<&[u8; HASH_LEN]> {
        self.th1.as_ref()
    }
    pub fn th2(&self) -> Option<&[u8; HASH_LEN]> {
        self.th2.as_ref()
    }

    /// Labels passed to Expand-Label so far.
    pub fn labels_used(&self) -> &BTreeSet<&'static str> {
        &self.labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full(eph: u8, ss_s: u8, ss_c: Option<u8>) -> KeySchedule {
        let mut ks = KeySchedule::new();
        ks.derive_handshake_secret(&[eph; 32], &[ss_s; 32], ss_c.map(|c| [c; 32]).as_ref()).unwrap();
        ks.derive_handshake_traffic([1; 32]).unwrap();
        ks.derive_master([2; 32]).unwrap();
        ks
    }

    #[test]
    fn order_is_enforced() {
        let mut ks = KeySchedule::new();
        assert!(ks.derive_handshake_traffic([0; 32]).is_err());
        assert!(ks.derive_master([0; 32]).is_err());
        ks.derive_handshake_secret(&[0; 32], &[0; 32], None).unwrap();
        assert!(ks.derive_handshake_secret(&[0; 32], &[0; 32], None).is_err());
        assert!(ks.derive_master([0; 32]).is_err());
    }

    #[test]
    fn labels_are_exactly_the_ladder_labels() {
        let ks = full(0, 0, Some(0));
        let expected: BTreeSet<_> = [
            LABEL_DERIVED,
            LABEL_C_HS_TRAFFIC,
            LABEL_S_HS_TRAFFIC,
            LABEL_FINISHED,
            LABEL_C_AP_TRAFFIC,
            LABEL_S_AP_TRAFFIC,
        ]
        .into_iter()
        .collect();
        assert_eq!(ks.labels_used(), &expected);
    }

    #[test]
    fn mutual_and_unilateral_differ() {
        let a = full(1, 2, None);
        let b = full(1, 2, Some(3));
        assert_ne!(a.handshake_secret(), b.handshake_secret());
    }

    #[test]
    fn one_byte_of_ss_s_moves_everything_downstream() {
        let a = full(1, 2, Some(3));
        let mut b = KeySchedule::new();
        let mut ss_s = [2u8; 32];
        ss_s[17] ^= 1;
        b.derive_handshake_secret(&[1; 32], &ss_s, Some(&[3; 32])).unwrap();
        b.derive_handshake_traffic([1; 32]).unwrap();
        b.derive_master([2; 32]).unwrap();
        assert_ne!(a.handshake_secret(), b.handshake_secret());
        assert_ne!(a.client_hs_traffic_secret(), b.client_hs_traffic_secret());
        assert_ne!(a.server_hs_traffic_secret(), b.server_hs_traffic_secret());
        assert_ne!(a.client_finished_key(), b.client_finished_key());
        assert_ne!(a.server_finished_key(), b.server_finished_key());
        assert_ne!(a.master_secret(), b.master_secret());
        assert_ne!(a.client_app_traffic_secret_0(), b.client_app_traffic_secret_0());
        assert_ne!(a.server_app_traffic_secret_0(), b.server_app_traffic_secret_0());
        assert_eq!(a.early_secret(), b.early_secret());
    }

    #[test]
    fn finished_verification() {
        let ks = full(1, 2, Some(3));
        let key = ks.server_finished_key().unwrap();
        let tag = finished_mac(key, &[9; 32]);
        assert!(verify_finished(key, &[9; 32], &tag));
        assert!(!verify_finished(key, &[8; 32], &tag));
        assert!(!verify_finished(ks.client_finished_key().unwrap(), &[9; 32], &tag));
    }
}
