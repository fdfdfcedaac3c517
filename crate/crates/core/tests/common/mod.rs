#![allow(dead_code)]

use std::sync::Arc;

use ibetls::handshake::{ClientConfig, ClientHandshake, ServerConfig, ServerHandshake};
use ibetls::kem::{extract, setup, IdentityPrivateKey, IdentityString, KemParams, MasterPublicKey, MasterSecretKey};
use sha2::{Digest, Sha256};

pub struct Domain {
    pub mpk: Arc<MasterPublicKey>,
    pub msk: MasterSecretKey,
}

impl Domain {
    pub fn new(params: &KemParams, seed: u8) -> Self {
        let (mpk, msk) = setup(params, [seed; 32]).unwrap();
        Domain { mpk: Arc::new(mpk), msk }
    }

    pub fn key(&self, id: &str) -> Arc<IdentityPrivateKey> {
        Arc::new(extract(&self.msk, &self.mpk, &id.parse().unwrap()).unwrap())
    }
}

pub fn id(s: &str) -> IdentityString {
    s.parse().unwrap()
}

pub const SERVER: &str = "kube-apiserver.1";
pub const CLIENT: &str = "kubelet:node-01.1";

pub fn mutual_pair(d: &Domain, seed: u8, key_log: bool) -> (ClientHandshake, ServerHandshake) {
    let mut cc = ClientConfig::new(d.mpk.clone(), id(SERVER)).with_key(d.key(CLIENT));
    cc.key_log = key_log;
    let mut sc = ServerConfig::new(d.mpk.clone(), d.key(SERVER));
    sc.key_log = key_log;
    (ClientHandshake::new(cc, [seed; 32]), ServerHandshake::new(sc, [seed.wrapping_add(1); 32]))
}

// HMAC-SHA256 and HKDF from the hash alone, sharing no code with the crate.

pub fn hmac(key: &[u8], msg: &[u8]) -> [u8; 32] {
    let mut k = [0u8; 64];
    if key.len() > 64 {
        k[..32].copy_from_slice(&Sha256::digest(key));
    } else {
        k[..key.len()].copy_from_slice(key);
    }
    let ipad: Vec<u8> = k.iter().map(|b| b ^ 0x36).collect();
    let opad: Vec<u8> = k.iter().map(|b| b ^ 0x5c).collect();
    let inner = Sha256::new().chain_update(&ipad).chain_update(msg).finalize();
    Sha256::new().chain_update(&opad).chain_update(inner).finalize().into()
}

pub fn extract_oracle(salt: &[u8], ikm: &[u8]) -> [u8; 32] {
    hmac(salt, ikm)
}

pub fn expand_oracle(prk: &[u8], info: &[u8], len: usize) -> Vec<u8> {
    let mut out = Vec::new();
    let mut t = Vec::new();
    let mut i = 1u8;
    while out.len() < len {
        let mut m = t.clone();
        m.extend_from_slice(info);
        m.push(i);
        t = hmac(prk, &m).to_vec();
        out.extend_from_slice(&t);
        i += 1;
    }
    out.truncate(len);
    out
}

pub fn expand_label_oracle(secret: &[u8], label: &str, ctx: &[u8], len: usize) -> Vec<u8> {
    let full = format!("tls13 {label}");
    let mut info = (len as u16).to_be_bytes().to_vec();
    info.push(full.len() as u8);
    info.extend_from_slice(full.as_bytes());
    info.push(ctx.len() as u8);
    info.extend_from_slice(ctx);
    expand_oracle(secret, &info, len)
}

fn s32(v: Vec<u8>) -> [u8; 32] {
    v.try_into().unwrap()
}

#[derive(Debug, PartialEq, Eq)]
pub struct Ladder {
    pub early: [u8; 32],
    pub derived: [u8; 32],
    pub handshake: [u8; 32],
    pub c_hs: [u8; 32],
    pub s_hs: [u8; 32],
    pub c_finished: [u8; 32],
    pub s_finished: [u8; 32],
    pub master: [u8; 32],
    pub c_ap: [u8; 32],
    pub s_ap: [u8; 32],
}

/// Whole ladder; `ikm` is whatever goes into the handshake extract.
pub fn ladder_oracle(ikm: &[u8], th1: &[u8; 32], th2: &[u8; 32]) -> Ladder {
    let zero = [0u8; 32];
    let early = extract_oracle(&zero, &zero);
    let derived = s32(expand_label_oracle(&early, "derived", b"", 32));
    let handshake = extract_oracle(&derived, ikm);
    let c_hs = s32(expand_label_oracle(&handshake, "c hs traffic", th1, 32));
    let s_hs = s32(expand_label_oracle(&handshake, "s hs traffic", th1, 32));
    let c_finished = s32(expand_label_oracle(&c_hs, "finished", b"", 32));
    let s_finished = s32(expand_label_oracle(&s_hs, "finished", b"", 32));
    let derived2 = expand_label_oracle(&handshake, "derived", b"", 32);
    let master = extract_oracle(&derived2, &zero);
    let c_ap = s32(expand_label_oracle(&master, "c ap traffic", th2, 32));
    let s_ap = s32(expand_label_oracle(&master, "s ap traffic", th2, 32));
    Ladder { early, derived, handshake, c_hs, s_hs, c_finished, s_finished, master, c_ap, s_ap }
}

pub fn sha256_concat(msgs: &[Vec<u8>]) -> [u8; 32] {
    let mut h = Sha256::new();
    for m in msgs {
        h.update(m);
    }
    h.finalize().into()
}

/// `A*X mod q` for column `l`, in i128 with no shared code.
pub fn ax_column(mpk: &MasterPublicKey, x: &[i16]) -> Vec<u32> {
    let p = mpk.params();
    let a = mpk.matrix();
    (0..p.n)
        .map(|r| {
            let row = &a[r * p.m..(r + 1) * p.m];
            let acc: i128 = row.iter().zip(x).map(|(&a, &x)| a as i128 * x as i128).sum();
            acc.rem_euclid(p.q as i128) as u32
        })
        .collect()
}
