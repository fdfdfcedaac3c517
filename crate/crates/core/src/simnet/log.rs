use serde::{Deserialize, Serialize};

use crate::metrics::HandshakeMetrics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepOutcome {
    Ok,
    /// Refused by policy or the API before any key moved.
    Denied,
    /// The handshake did not complete.
    Aborted,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub action: String,
    pub domain: String,
    pub initiator: String,
    pub responder: String,
    pub outcome: StepOutcome,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<HandshakeMetrics>,
}

/// Ordered scenario outcomes. Contains no wall-clock data, so two runs from
/// the same seed serialize identically.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TranscriptLog {
    pub entries: Vec<LogEntry>,
}

impl TranscriptLog {
    pub fn new() -> Self {
        Self::default()
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        action: &str,
        domain: &str,
        initiator: &str,
        responder: &str,
        outcome: StepOutcome,
        detail: impl Into<String>,
        metrics: Option<HandshakeMetrics>,
    ) -> &LogEntry {
        let step = self.entries.len();
        self.entries.push(LogEntry {
            step,
            action: action.to_owned(),
            domain: domain.to_owned(),
            initiator: initiator.to_owned(),
            responder: responder.to_owned(),
            outcome,
            detail: detail.into(),
            metrics,
        });
        self.entries.last().expect("just pushed")
    }

    pub fn extend(&mut self, other: TranscriptLog) {
        for mut e in other.entries {
            e.step = self.entries.len();
            self.entries.push(e);
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("log entries serialize") + "\n")
            .collect()
    }

    pub fn from_jsonl(s: &str) -> Result<Self, serde_json::Error> {
        let entries = s.lines().filter(|l| !l.trim().is_empty()).map(serde_json::from_str).collect::<Result<_, _>>()?;
        Ok(TranscriptLog { entries })
    }

    pub fn by_action<'a>(&'a self, action: &'a str) -> impl Iterator<Item = &'a LogEntry> + 'a {
        self.entries.iter().filter(move |e| e.action == action)
    }

    /// Metrics of every handshake that completed.
    pub fn completed_handshakes(&self) -> impl Iterator<Item = &HandshakeMetrics> {
        self.entries.iter().filter(|e| e.outcome == StepOutcome::Ok).filter_map(|e| e.metrics.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut log = TranscriptLog::new();
        log.push("connect", "d", "a", "b", StepOutcome::Ok, "", Some(HandshakeMetrics::new()));
        log.push("revoke", "d", "admin", "a", StepOutcome::Denied, "why", None);
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        let back = TranscriptLog::from_jsonl(&text).unwrap();
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(back.entries[1].outcome, StepOutcome::Denied);
    }
}
