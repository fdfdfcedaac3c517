//! Bearer tokens for simulated principals: JSON claims plus an HMAC tag under
//! a per-cluster secret, standing in for JWT validation by the API server.

use std::collections::BTreeSet;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use zeroize::{Zeroize, ZeroizeOnDrop};

use super::TpkgError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrincipalKind {
    BootstrapToken,
    ServiceAccount,
    OperatorNF,
    /// Human operator or controller with approval rights.
    Admin,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub kind: PrincipalKind,
    pub subject: String,
    pub groups: BTreeSet<String>,
}

impl Principal {
    pub fn new(kind: PrincipalKind, subject: &str, groups: &[&str]) -> Self {
        Principal { kind, subject: subject.to_owned(), groups: groups.iter().map(|g| g.to_string()).collect() }
    }

    /// Bootstrap tokens may create identity requests and nothing else.
    pub fn may_only_create(&self) -> bool {
        self.kind == PrincipalKind::BootstrapToken
    }
}

#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct TokenAuthority {
    key: [u8; 32],
}

impl std::fmt::Debug for TokenAuthority {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("TokenAuthority(..)")
    }
}

type HmacSha256 = Hmac<Sha256>;

impl TokenAuthority {
    pub fn new(key: [u8; 32]) -> Self {
        TokenAuthority { key }
    }

    fn mac(&self) -> HmacSha256 {
        <HmacSha256 as Mac>::new_from_slice(&self.key).expect("any key length works")
    }

    pub fn issue(&self, p: &Principal) -> String {
        let claims = serde_json::to_vec(p).expect("principal serializes");
        let mut mac = self.mac();
        mac.update(&claims);
        let tag = mac.finalize().into_bytes();
        format!("{}.{}", B64.encode(&claims), B64.encode(tag))
    }

    pub fn validate(&self, token: &str) -> Result<Principal, TpkgError> {
        let token = token.strip_prefix("Bearer ").unwrap_or(token);
        let (claims, tag) = token.split_once('.').ok_or(TpkgError::Unauthenticated)?;
        let claims = B64.decode(claims).map_err(|_| TpkgError::Unauthenticated)?;
        let tag = B64.decode(tag).map_err(|_| TpkgError::Unauthenticated)?;
        let mut mac = self.mac();
        mac.update(&claims);
        mac.verify_slice(&tag).map_err(|_| TpkgError::Unauthenticated)?;
        serde_json::from_slice(&claims).map_err(|_| TpkgError::Unauthenticated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issue_and_validate() {
        let a = TokenAuthority::new([7; 32]);
        let p = Principal::new(PrincipalKind::BootstrapToken, "system:bootstrap:node-01", &["system:bootstrappers"]);
        let t = a.issue(&p);
        assert_eq!(a.validate(&t).unwrap(), p);
        assert_eq!(a.validate(&format!("Bearer {t}")).unwrap(), p);
        assert!(p.may_only_create());
    }

    #[test]
    fn forged_or_foreign_tokens_rejected() {
        let a = TokenAuthority::new([7; 32]);
        let b = TokenAuthority::new([8; 32]);
        let p = Principal::new(PrincipalKind::Admin, "alice", &["system:masters"]);
        assert_eq!(b.validate(&a.issue(&p)), Err(TpkgError::Unauthenticated));
        let t = a.issue(&p);
        let (_, tag) = t.split_once('.').unwrap();
        let forged = Principal::new(PrincipalKind::Admin, "mallory", &["system:masters"]);
        let claims = B64.encode(serde_json::to_vec(&forged).unwrap());
        assert_eq!(a.validate(&format!("{claims}.{tag}")), Err(TpkgError::Unauthenticated));
        assert_eq!(a.validate("garbage"), Err(TpkgError::Unauthenticated));
    }
}
