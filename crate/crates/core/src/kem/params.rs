use std::sync::Once;

use serde::{Deserialize, Serialize};

use super::KemError;

static BANNER: Once = Once::new();

/// Prints the non-security warning once per process.
pub(crate) fn print_banner() {
    BANNER.call_once(|| {
        let msg = "ibetls: lattice parameters are desk-scale and NOT cryptographically secure; \
                   use for experimentation only";
        log::warn!("{msg}");
        eprintln!("WARNING: {msg}");
    });
}

/// Public system parameters of the lattice ID-KEM.
///
/// `A` is `n x m` with `m = m_bar + n*k`; the trapdoor block `R` is
/// `m_bar x n*k` with exactly `beta - 1` non-zero entries per row, so every
/// preimage coefficient is bounded by `beta`. Decapsulation is exact as long as
/// `m*beta*eta + eta < q/4`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KemParams {
    pub n: usize,
    pub k: usize,
    pub m_bar: usize,
    pub m: usize,
    pub q: u32,
    pub ell: usize,
    pub beta: u32,
    pub eta: u32,
    pub domain_sep: Vec<u8>,
}

impl KemParams {
    /// The reference desk profile: n=32, q=2^20-3, m=1280, ell=256.
    pub fn desk() -> Self {
        print_banner();
        KemParams {
            n: 32,
            k: 20,
            m_bar: 640,
            m: 1280,
            q: 1_048_573,
            ell: 256,
            beta: 129,
            eta: 1,
            domain_sep: b"ibetls/desk/v1".to_vec(),
        }
    }

    /// A smaller profile (n=8) for quick demos. Same modulus and secret length.
    pub fn compact() -> Self {
        print_banner();
        KemParams {
            n: 8,
            k: 20,
            m_bar: 160,
            m: 320,
            q: 1_048_573,
            ell: 256,
            beta: 33,
            eta: 1,
            domain_sep: b"ibetls/compact/v1".to_vec(),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "compact" => Some(Self::compact()),
            _ => None,
        }
    }

    /// Columns of the gadget block, `n*k`.
    pub fn gadget_cols(&self) -> usize {
        self.n * self.k
    }

    /// Worst-case decryption noise `m*beta*eta + eta`.
    pub fn noise_bound(&self) -> u64 {
        self.m as u64 * self.beta as u64 * self.eta as u64 + self.eta as u64
    }

    pub fn validate(&self) -> Result<(), KemError> {
        let bad = |why: String| Err(KemError::InvalidParams(why));
        if self.n == 0 || self.ell == 0 {
            return bad("n and ell must be positive".into());
        }
        if self.ell % 8 != 0 {
            return bad(format!("ell={} must be a multiple of 8", self.ell));
        }
        if self.q < 3 || !is_prime(self.q) {
            return bad(format!("q={} is not an odd prime", self.q));
        }
        let k = 32 - (self.q - 1).leading_zeros() as usize;
        if self.k != k {
            return bad(format!("k={} but ceil(log2 q)={k}", self.k));
        }
        if self.m_bar != self.gadget_cols() {
            return bad(format!("m_bar={} must equal n*k={}", self.m_bar, self.gadget_cols()));
        }
        if self.m != self.m_bar + self.gadget_cols() {
            return bad(format!("m={} must equal m_bar + n*k", self.m));
        }
        if self.beta == 0 || self.eta == 0 {
            return bad("beta and eta must be positive".into());
        }
        if (self.beta - 1) as usize > self.gadget_cols() {
            return bad(format!("trapdoor row weight {} exceeds n*k", self.beta - 1));
        }
        if self.beta > i16::MAX as u32 {
            return bad("beta too large for key encoding".into());
        }
        if 4 * self.noise_bound() >= self.q as u64 {
            return bad(format!(
                "correctness margin violated: m*beta*eta + eta = {} >= q/4",
                self.noise_bound()
            ));
        }
        if self.domain_sep.len() > u8::MAX as usize {
            return bad("domain separator longer than 255 bytes".into());
        }
        Ok(())
    }

    /// Fixed-width little-endian encoding used for hashing and serialization.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(33 + self.domain_sep.len());
        for v in [self.n, self.k, self.m_bar, self.m] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.q.to_le_bytes());
        out.extend_from_slice(&(self.ell as u32).to_le_bytes());
        out.extend_from_slice(&self.beta.to_le_bytes());
        out.extend_from_slice(&self.eta.to_le_bytes());
        out.push(self.domain_sep.len() as u8);
        out.extend_from_slice(&self.domain_sep);
        out
    }

    /// Inverse of [`KemParams::to_bytes`]; returns the params and bytes consumed.
    pub fn from_bytes(buf: &[u8]) -> Result<(Self, usize), KemError> {
        if buf.len() < 33 {
            return Err(KemError::Truncated);
        }
        let word = |i: usize| u32::from_le_bytes(buf[4 * i..4 * i + 4].try_into().unwrap());
        let sep_len = buf[32] as usize;
        if buf.len() < 33 + sep_len {
            return Err(KemError::Truncated);
        }
        let params = KemParams {
            n: word(0) as usize,
            k: word(1) as usize,
            m_bar: word(2) as usize,
            m: word(3) as usize,
            q: word(4),
            ell: word(5) as usize,
            beta: word(6),
            eta: word(7),
            domain_sep: buf[33..33 + sep_len].to_vec(),
        };
        Ok((params, 33 + sep_len))
    }
}

fn is_prime(q: u32) -> bool {
    if q < 2 {
        return false;
    }
    if q % 2 == 0 {
        return q == 2;
    }
    let q = q as u64;
    let mut d = 3u64;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}
