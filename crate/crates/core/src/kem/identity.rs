//! Canonical identity strings.
//!
//! An identity is an ordered list of non-empty segments joined by `.`, whose
//! final segment is an epoch. The epoch is either an unsigned counter
//! (`20250101`, `7`) or an ISO-8601 calendar date (`2025-01-01`). Segments may
//! contain `:` as a role qualifier, e.g. `kubelet:node-01`.

use std::fmt;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::KemError;

/// Separator between identity segments.
pub const SEPARATOR: char = '.';

/// Validity epoch carried as the final identity segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Epoch {
    Counter(u64),
    Date(NaiveDate),
}

impl Epoch {
    /// The epoch that follows this one (counter + 1, or the next calendar day).
    pub fn next(self) -> Epoch {
        match self {
            Epoch::Counter(c) => Epoch::Counter(c.saturating_add(1)),
            Epoch::Date(d) => Epoch::Date(d.checked_add_days(Days::new(1)).unwrap_or(d)),
        }
    }

    pub fn parse(s: &str) -> Option<Epoch> {
        if !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) {
            return s.parse().ok().map(Epoch::Counter);
        }
        if s.len() == 10 {
            return NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(Epoch::Date);
        }
        None
    }
}

impl fmt::Display for Epoch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epoch::Counter(c) => write!(f, "{c}"),
            Epoch::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
        }
    }
}

impl FromStr for Epoch {
    type Err = KemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Epoch::parse(s).ok_or_else(|| KemError::MalformedIdentity(format!("bad epoch {s:?}")))
    }
}

impl Serialize for Epoch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Epoch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A validated identity: name segments plus a trailing epoch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct IdentityString {
    segments: Vec<String>,
    epoch: Epoch,
}

fn check_segment(seg: &str) -> Result<(), KemError> {
    if seg.is_empty() {
        return Err(KemError::MalformedIdentity("empty segment".into()));
    }
    if seg.contains(SEPARATOR) {
        return Err(KemError::MalformedIdentity(format!("segment {seg:?} contains separator")));
    }
    if seg.chars().any(|c| c.is_control() || c.is_whitespace()) {
        return Err(KemError::MalformedIdentity(format!("segment {seg:?} contains whitespace")));
    }
    Ok(())
}

impl IdentityString {
    /// Builds an identity from name segments and an epoch.
    pub fn new<S: AsRef<str>>(segments: &[S], epoch: Epoch) -> Result<Self, KemError> {
        if segments.is_empty() {
            return Err(KemError::MalformedIdentity("identity needs at least one name segment".into()));
        }
        let segments = segments
            .iter()
            .map(|s| {
                let s = s.as_ref();
                check_segment(s).map(|_| s.to_owned())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(IdentityString { segments, epoch })
    }

    /// Parses a canonical identity string.
    pub fn parse(s: &str) -> Result<Self, KemError> {
        let parts: Vec<&str> = s.split(SEPARATOR).collect();
        if parts.len() < 2 {
            return Err(KemError::MalformedIdentity(format!("{s:?} has fewer than two segments")));
        }
        for p in &parts {
            check_segment(p)?;
        }
        let (epoch, name) = parts.split_last().expect("len >= 2");
        let epoch = Epoch::parse(epoch)
            .ok_or_else(|| KemError::MalformedIdentity(format!("{s:?}: final segment is not an epoch")))?;
        IdentityString::new(name, epoch)
    }

    /// Name segments, excluding the epoch.
    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn epoch(&self) -> Epoch {
        self.epoch
    }

    /// The identity without its epoch, e.g. `00101.AMF.amf-001`.
    pub fn name(&self) -> String {
        self.segments.join(".")
    }

    /// Same name, different epoch.
    pub fn with_epoch(&self, epoch: Epoch) -> IdentityString {
        IdentityString { segments: self.segments.clone(), epoch }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for IdentityString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for seg in &self.segments {
            write!(f, "{seg}{SEPARATOR}")?;
        }
        write!(f, "{}", self.epoch)
    }
}

impl FromStr for IdentityString {
    type Err = KemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        IdentityString::parse(s)
    }
}

impl Serialize for IdentityString {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IdentityString {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
