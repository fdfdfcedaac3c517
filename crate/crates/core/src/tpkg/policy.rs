use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::auth::Principal;
use super::TpkgError;
use crate::kem::Epoch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Usage {
    Client,
    Server,
    Peer,
}

/// One approval rule of an issuer, in the manner of a Kubernetes signer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub name: String,
    /// The requesting principal must be in one of these groups.
    pub groups: BTreeSet<String>,
    /// Globs over the epoch-less identity name; `*` matches any run of characters.
    pub identity_patterns: Vec<String>,
    pub usages: BTreeSet<Usage>,
    pub max_expiration_seconds: u64,
    pub auto_approve: bool,
    /// Pins the identity a principal may ask for, e.g. `kubelet:{suffix}`.
    /// `{suffix}` is the last `:`-separated segment of the principal subject
    /// and `{namespace}` the one before it.
    pub identity_template: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerPolicy {
    pub trust_domain: String,
    pub rules: Vec<PolicyRule>,
    /// Groups allowed to approve, deny, revoke and bump epochs.
    pub approver_groups: BTreeSet<String>,
    pub current_epoch: Epoch,
    /// How many epochs before the current one are still accepted.
    pub rotation_window: u32,
    /// Revoked identity names, independent of epoch.
    pub blocklist: BTreeSet<String>,
}

/// Never issued; resolvers use it to build identities nobody can hold.
pub const RESERVED_MARK: char = '!';

/// Minimal glob: `*` matches any (possibly empty) substring.
pub fn glob_match(pattern: &str, s: &str) -> bool {
    let (p, t) = (pattern.as_bytes(), s.as_bytes());
    let (mut pi, mut ti) = (0, 0);
    let (mut star, mut mark) = (None, 0);
    while ti < t.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some(pi);
            pi += 1;
            mark = ti;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some(sp) = star {
            pi = sp + 1;
            mark += 1;
            ti = mark;
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

fn render_template(template: &str, principal: &Principal) -> String {
    let parts: Vec<&str> = principal.subject.split(':').collect();
    let suffix = parts.last().copied().unwrap_or("");
    let namespace = if parts.len() >= 2 { parts[parts.len() - 2] } else { "" };
    template.replace("{suffix}", suffix).replace("{namespace}", namespace)
}

impl PolicyRule {
    fn check(&self, principal: &Principal, name: &str, usages: &BTreeSet<Usage>, expiration: u64) -> Result<(), String> {
        if !self.identity_patterns.iter().any(|p| glob_match(p, name)) {
            return Err(format!("identity {name:?} not permitted"));
        }
        if let Some(t) = &self.identity_template {
            let pinned = render_template(t, principal);
            if pinned != name {
                return Err(format!("principal {} may only request {pinned:?}", principal.subject));
            }
        }
        if usages.is_empty() || !usages.is_subset(&self.usages) {
            return Err(format!("usage {usages:?} not permitted"));
        }
        if expiration == 0 || expiration > self.max_expiration_seconds {
            return Err(format!("expiration {expiration}s exceeds {}s", self.max_expiration_seconds));
        }
        Ok(())
    }
}

impl IssuerPolicy {
    pub fn new(trust_domain: &str, current_epoch: Epoch) -> Self {
        IssuerPolicy {
            trust_domain: trust_domain.to_owned(),
            rules: Vec::new(),
            approver_groups: BTreeSet::from(["system:masters".to_owned()]),
            current_epoch,
            rotation_window: 1,
            blocklist: BTreeSet::new(),
        }
    }

    pub fn with_rule(mut self, rule: PolicyRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn validate(&self) -> Result<(), TpkgError> {
        for r in &self.rules {
            if r.auto_approve && r.identity_template.is_none() {
                return Err(TpkgError::InvalidPolicy(format!(
                    "rule {} auto-approves without a pinned identity template",
                    r.name
                )));
            }
            if r.identity_patterns.is_empty() || r.groups.is_empty() {
                return Err(TpkgError::InvalidPolicy(format!("rule {} matches nothing", r.name)));
            }
        }
        Ok(())
    }

    /// Returns whether the request is auto-approved, or why it is refused.
    pub fn evaluate(
        &self,
        principal: &Principal,
        name: &str,
        usages: &BTreeSet<Usage>,
        expiration: u64,
    ) -> Result<bool, TpkgError> {
        if self.blocklist.contains(name) {
            return Err(TpkgError::Blocklisted(name.to_owned()));
        }
        if name.contains(RESERVED_MARK) {
            return Err(TpkgError::PolicyViolation(format!("{name:?} uses the reserved character {RESERVED_MARK:?}")));
        }
        let candidates: Vec<&PolicyRule> =
            self.rules.iter().filter(|r| r.groups.iter().any(|g| principal.groups.contains(g))).collect();
        if candidates.is_empty() {
            return Err(TpkgError::PolicyViolation(format!(
                "principal {} is not allowed to request identities from {}",
                principal.subject, self.trust_domain
            )));
        }
        let mut reasons = Vec::new();
        for r in candidates {
            match r.check(principal, name, usages, expiration) {
                Ok(()) => return Ok(r.auto_approve),
                Err(why) => reasons.push(format!("{}: {why}", r.name)),
            }
        }
        Err(TpkgError::PolicyViolation(reasons.join("; ")))
    }

    pub fn can_approve(&self, principal: &Principal) -> bool {
        principal.groups.iter().any(|g| self.approver_groups.contains(g))
    }

    /// True for the current epoch and the `rotation_window` epochs before it.
    pub fn epoch_valid(&self, e: Epoch) -> bool {
        let mut probe = e;
        for _ in 0..=self.rotation_window {
            if probe == self.current_epoch {
                return true;
            }
            let next = probe.next();
            if next == probe {
                return false;
            }
            probe = next;
        }
        false
    }

    /// Control-plane issuer: kubelets bootstrap themselves, workloads get
    /// `cluster.namespace.service` names, operators request the rest.
    pub fn kubernetes_apiserver(cluster: &str, epoch: Epoch) -> Self {
        let all: BTreeSet<Usage> = [Usage::Client, Usage::Server, Usage::Peer].into();
        IssuerPolicy::new("ibe.kubernetes.io/apiserver", epoch)
            .with_rule(PolicyRule {
                name: "kubelet-bootstrap".into(),
                groups: ["system:bootstrappers".to_owned()].into(),
                identity_patterns: vec!["kubelet:*".into()],
                usages: [Usage::Client, Usage::Server].into(),
                max_expiration_seconds: 86_400 * 30,
                auto_approve: true,
                identity_template: Some("kubelet:{suffix}".into()),
            })
            .with_rule(PolicyRule {
                name: "workloads".into(),
                groups: ["system:serviceaccounts".to_owned()].into(),
                identity_patterns: vec![format!("{cluster}.*")],
                usages: [Usage::Client, Usage::Server].into(),
                max_expiration_seconds: 86_400 * 7,
                auto_approve: true,
                identity_template: Some(format!("{cluster}.{{namespace}}.{{suffix}}")),
            })
            .with_rule(PolicyRule {
                name: "operators".into(),
                groups: ["system:masters".to_owned()].into(),
                identity_patterns: vec!["*".into()],
                usages: all,
                max_expiration_seconds: 86_400 * 365,
                auto_approve: false,
                identity_template: None,
            })
    }

    /// An issuer where only operators may request names matching `patterns`.
    pub fn operator_only(domain: &str, patterns: &[&str], epoch: Epoch) -> Self {
        IssuerPolicy::new(domain, epoch).with_rule(PolicyRule {
            name: "operators".into(),
            groups: ["system:masters".to_owned()].into(),
            identity_patterns: patterns.iter().map(|p| p.to_string()).collect(),
            usages: [Usage::Client, Usage::Server, Usage::Peer].into(),
            max_expiration_seconds: 86_400 * 365,
            auto_approve: false,
            identity_template: None,
        })
    }

    /// 5G core issuer for one PLMN: network functions request their own
    /// `PLMN.TYPE.INSTANCE` name, operators provision the rest.
    pub fn fiveg_core(plmn: &str, epoch: Epoch) -> Self {
        let mut p = IssuerPolicy::new(&format!("ibe.5gc.local/plmn-{plmn}"), epoch).with_rule(PolicyRule {
            name: "network-functions".into(),
            groups: ["5gc:network-functions".to_owned()].into(),
            identity_patterns: vec![format!("{plmn}.*")],
            usages: [Usage::Client, Usage::Server].into(),
            max_expiration_seconds: 86_400 * 30,
            auto_approve: true,
            identity_template: Some("{suffix}".into()),
        })
        .with_rule(PolicyRule {
            name: "operators".into(),
            groups: ["5gc:operators".to_owned()].into(),
            identity_patterns: vec![format!("{plmn}.*")],
            usages: [Usage::Client, Usage::Server, Usage::Peer].into(),
            max_expiration_seconds: 86_400 * 365,
            auto_approve: false,
            identity_template: None,
        });
        p.approver_groups = ["5gc:operators".to_owned()].into();
        p
    }
}
