//! The active adversary: knowledge tracking plus the seven attack
//! strategies run against the authorization frameworks.

pub mod attacks;
pub mod knowledge;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use knowledge::Knowledge;

/// The attack playbook, one entry per strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Loop a captured trigger to flood the base station with bogus
    /// authentication cycles.
    WaterTorture,
    /// Trigger flooding against a bounded base station while legitimate
    /// subscribers try to join.
    Dos,
    /// Re-inject the messages of a recorded session into fresh contexts.
    MessageReplay,
    /// Lift a hardware identity off the air and join with it.
    IdentityTheft,
    /// Answer a subscriber's request as a rogue base station.
    Impersonation,
    /// Sit between both principals and relay a live session through
    /// adversary-controlled hops.
    Interleaving,
    /// Suppress a timestamped message and deliver it late, betting on
    /// receiver clock skew to mask the staleness.
    SuppressReplay,
}

impl AttackKind {
    pub const ALL: [AttackKind; 7] = [
        AttackKind::WaterTorture,
        AttackKind::Dos,
        AttackKind::MessageReplay,
        AttackKind::IdentityTheft,
        AttackKind::Impersonation,
        AttackKind::Interleaving,
        AttackKind::SuppressReplay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::WaterTorture => "water_torture",
            AttackKind::Dos => "dos",
            AttackKind::MessageReplay => "message_replay",
            AttackKind::IdentityTheft => "identity_theft",
            AttackKind::Impersonation => "impersonation",
            AttackKind::Interleaving => "interleaving",
            AttackKind::SuppressReplay => "suppress_replay",
        }
    }

    pub fn parse(s: &str) -> Option<AttackKind> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "water_torture" | "watertorture" => Some(AttackKind::WaterTorture),
            "dos" | "denial_of_service" => Some(AttackKind::Dos),
            "message_replay" | "replay" => Some(AttackKind::MessageReplay),
            "identity_theft" => Some(AttackKind::IdentityTheft),
            "impersonation" => Some(AttackKind::Impersonation),
            "interleaving" => Some(AttackKind::Interleaving),
            "suppress_replay" | "suppressreplay" => Some(AttackKind::SuppressReplay),
            _ => None,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How an attack run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "detail", rename_all = "snake_case")]
pub enum Verdict {
    Success,
    /// The defense held where it exists but the attack still gained ground
    /// (typically the unprotectable trigger).
    PartialSuccess,
    Failed(String),
    /// The attack does not apply to this protocol.
    NotApplicable,
    /// The simulation itself faulted; never conflated with a defended
    /// attack.
    Error(String),
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::PartialSuccess => "partial_success",
            Verdict::Failed(_) => "failed",
            Verdict::NotApplicable => "not_applicable",
            Verdict::Error(_) => "error",
        }
    }

    /// Verdicts compare by class; the free-text detail is commentary.
    pub fn same_class(&self, other: &Verdict) -> bool {
        self.label() == other.label()
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Failed(why) => write!(f, "failed ({why})"),
            Verdict::Error(why) => write!(f, "error ({why})"),
            v => f.write_str(v.label()),
        }
    }
}

/// A named attack measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Count(u64),
    Rate(f64),
    Text(String),
}

impl MetricValue {
    /// Does this metric substantiate a success verdict?
    pub fn is_supporting(&self) -> bool {
        match self {
            MetricValue::Count(n) => *n > 0,
            MetricValue::Rate(r) => *r > 0.0,
            MetricValue::Text(s) => !s.is_empty(),
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Count(n) => write!(f, "{n}"),
            MetricValue::Rate(r) => write!(f, "{r:.6}"),
            MetricValue::Text(s) => f.write_str(s),
        }
    }
}

/// Result of one attack strategy against one protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub attack: AttackKind,
    pub protocol: crate::protocol::ProtocolId,
    pub verdict: Verdict,
    pub metrics: BTreeMap<String, MetricValue>,
}

impl AttackOutcome {
    pub fn metric(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.get(name)
    }

    /// A success must be backed by evidence: at least one positive or
    /// non-empty metric.
    pub fn well_formed(&self) -> bool {
        match self.verdict {
            Verdict::Success | Verdict::PartialSuccess => {
                self.metrics.values().any(MetricValue::is_supporting)
            }
            _ => true,
        }
    }

    /// The single headline number for flat tabular output.
    pub fn primary_metric(&self) -> (&'static str, MetricValue) {
        let name = match self.attack {
            AttackKind::WaterTorture => "triggered_cycles",
            AttackKind::Dos => "legit_success_rate",
            AttackKind::MessageReplay => "replayed_accepted",
            AttackKind::IdentityTheft => "extracted_mac",
            AttackKind::Impersonation => "sessions_hijacked",
            AttackKind::Interleaving => "sessions_hijacked",
            AttackKind::SuppressReplay => "stale_accepted",
        };
        let value = self
            .metrics
            .get(name)
            .cloned()
            .unwrap_or(MetricValue::Count(0));
        (name, value)
    }
}
