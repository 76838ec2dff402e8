//! Append-only event trace of a simulation world.
//!
//! One line per event, `time | event | from | to | summary | result`,
//! deterministic and diff-friendly. The structured form stays available
//! for post-run analysis; the text form is what lands in `trace.log`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::protocol::{Outcome, RejectReason};
use crate::term::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropCause {
    Adversary,
    Budget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IgnoreCause {
    NoSession,
    SessionClosed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceKind {
    JoinStart {
        session: u64,
    },
    MsgSent {
        bytes: u64,
    },
    MsgDelivered {
        injected: bool,
    },
    MsgDropped {
        cause: DropCause,
    },
    MsgDelayed {
        until: f64,
    },
    MsgIgnored {
        cause: IgnoreCause,
    },
    MsgQueued,
    Injected {
        deliver_at: f64,
    },
    CycleStart {
        session: u64,
        tainted: bool,
    },
    CycleEnd {
        session: u64,
        outcome: Outcome,
    },
    CycleExpired {
        session: u64,
    },
    StepAccepted {
        session: u64,
        injected: bool,
        authorized: bool,
    },
    StepRejected {
        session: u64,
        injected: bool,
        reason: RejectReason,
    },
    Resync {
        residual: f64,
    },
}

impl TraceKind {
    fn label(&self) -> &'static str {
        match self {
            TraceKind::JoinStart { .. } => "join_start",
            TraceKind::MsgSent { .. } => "msg_sent",
            TraceKind::MsgDelivered { .. } => "msg_delivered",
            TraceKind::MsgDropped { .. } => "msg_dropped",
            TraceKind::MsgDelayed { .. } => "msg_delayed",
            TraceKind::MsgIgnored { .. } => "msg_ignored",
            TraceKind::MsgQueued => "msg_queued",
            TraceKind::Injected { .. } => "injected",
            TraceKind::CycleStart { .. } => "cycle_start",
            TraceKind::CycleEnd { .. } => "cycle_end",
            TraceKind::CycleExpired { .. } => "cycle_expired",
            TraceKind::StepAccepted { .. } => "step_accepted",
            TraceKind::StepRejected { .. } => "step_rejected",
            TraceKind::Resync { .. } => "resync",
        }
    }

    fn result(&self) -> String {
        match self {
            TraceKind::JoinStart { session } => format!("session={session}"),
            TraceKind::MsgSent { bytes } => format!("bytes={bytes}"),
            TraceKind::MsgDelivered { injected: true } => "injected".into(),
            TraceKind::MsgDelivered { injected: false } => "ok".into(),
            TraceKind::MsgDropped {
                cause: DropCause::Adversary,
            } => "by_adversary".into(),
            TraceKind::MsgDropped {
                cause: DropCause::Budget,
            } => "budget_exhausted".into(),
            TraceKind::MsgDelayed { until } => format!("until={until:.3}"),
            TraceKind::MsgIgnored {
                cause: IgnoreCause::NoSession,
            } => "no_session".into(),
            TraceKind::MsgIgnored {
                cause: IgnoreCause::SessionClosed,
            } => "session_closed".into(),
            TraceKind::MsgQueued => "awaiting_capacity".into(),
            TraceKind::Injected { deliver_at } => format!("deliver_at={deliver_at:.3}"),
            TraceKind::CycleStart { session, tainted } => {
                format!("session={session} tainted={tainted}")
            }
            TraceKind::CycleEnd { session, outcome } => {
                let o = match outcome {
                    Outcome::Authorized { .. } => "authorized".to_string(),
                    Outcome::Rejected(r) => format!("rejected:{r}"),
                    Outcome::InProgress => "in_progress".to_string(),
                };
                format!("session={session} {o}")
            }
            TraceKind::CycleExpired { session } => format!("session={session} timeout"),
            TraceKind::StepAccepted {
                session,
                injected,
                authorized,
            } => {
                format!("session={session} injected={injected} authorized={authorized}")
            }
            TraceKind::StepRejected {
                session,
                injected,
                reason,
            } => {
                format!("session={session} injected={injected} reason={reason}")
            }
            TraceKind::Resync { residual } => format!("residual={residual:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: TraceKind,
    pub from: Option<NodeId>,
    pub to: Option<NodeId>,
    /// Canonical one-line rendering of the message, when one is involved.
    pub summary: Option<String>,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dash = String::from("-");
        write!(
            f,
            "{:>10.3} | {:<14} | {:<8} | {:<8} | {} | {}",
            self.time,
            self.kind.label(),
            self.from.as_ref().map(|n| n.0.as_str()).unwrap_or("-"),
            self.to.as_ref().map(|n| n.0.as_str()).unwrap_or("-"),
            self.summary.as_ref().unwrap_or(&dash),
            self.kind.result(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    events: Vec<TraceEvent>,
}

impl TraceLog {
    pub fn push(&mut self, ev: TraceEvent) {
        self.events.push(ev);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&ev.to_string());
            out.push('\n');
        }
        out
    }

    pub fn count<F: Fn(&TraceKind) -> bool>(&self, pred: F) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    /// Message conservation: every transmission ends up delivered or
    /// dropped; anything else is still in flight and must be accounted to
    /// the caller.
    pub fn sent(&self) -> usize {
        self.count(|k| matches!(k, TraceKind::MsgSent { .. } | TraceKind::Injected { .. }))
    }

    pub fn delivered(&self) -> usize {
        self.count(|k| matches!(k, TraceKind::MsgDelivered { .. }))
    }

    pub fn dropped(&self) -> usize {
        self.count(|k| matches!(k, TraceKind::MsgDropped { .. }))
    }

    /// Highest number of simultaneously open authentication cycles seen
    /// anywhere in the run.
    pub fn max_concurrent_cycles(&self) -> usize {
        let mut open = 0usize;
        let mut peak = 0usize;
        let mut live: std::collections::BTreeSet<u64> = std::collections::BTreeSet::new();
        for ev in &self.events {
            match &ev.kind {
                TraceKind::CycleStart { session, .. } => {
                    if live.insert(*session) {
                        open += 1;
                        peak = peak.max(open);
                    }
                }
                TraceKind::CycleEnd { session, .. } | TraceKind::CycleExpired { session }
                    if live.remove(session) =>
                {
                    open -= 1;
                }
                _ => {}
            }
        }
        peak
    }
}
