use crate::handshake::PeerResolver;
use crate::kem::IdentityString;
use crate::tpkg::{IssuerPolicy, RESERVED_MARK};

/// Applies a domain's epoch window and blocklist to peer identities.
///
/// An identity inside the window maps to itself. Stale, future and
/// blocklisted ones map to names no issuer ever extracts, so a peer holding an
/// out-of-policy key fails at Finished.
#[derive(Clone, Debug)]
pub struct LifecycleResolver {
    policy: IssuerPolicy,
}

impl LifecycleResolver {
    pub fn new(policy: &IssuerPolicy) -> Self {
        LifecycleResolver { policy: policy.clone() }
    }

    pub fn poisoned(&self, id: &IdentityString, why: &str) -> IdentityString {
        let mut segs = vec![format!("{RESERVED_MARK}{why}")];
        segs.extend(id.segments().iter().cloned());
        IdentityString::new(&segs, self.policy.current_epoch).expect("segments came from a valid identity")
    }
}

impl PeerResolver for LifecycleResolver {
    fn resolve(&self, claimed: &IdentityString) -> IdentityString {
        if self.policy.blocklist.contains(&claimed.name()) {
            self.poisoned(claimed, "revoked")
        } else if !self.policy.epoch_valid(claimed.epoch()) {
            self.poisoned(claimed, "expired")
        } else {
            claimed.clone()
        }
    }
}
