//! The five authorization handshakes as explicit state machines.
//!
//! Two standardized frameworks and three hardened variants share one
//! session type:
//!
//! * `Pkmv1` — 3 messages, one-way: the base station authenticates the
//!   subscriber, never the reverse.
//! * `Pkmv2` — 4 messages, mutual, linked by nonces.
//! * `Tsa`   — `Pkmv1` with a timestamp on every message and per-node
//!   timestamp tables at the receivers.
//! * `Ha`    — `Pkmv2` with timestamps on messages 2..4 in addition to the
//!   nonces; signatures cover nonce and timestamp together.
//! * `Isnap` — 3 messages, mutual, every message (trigger included)
//!   timestamped and validated against a bounded window instead of tables.
//!
//! A session is a value; `step` consumes one incoming message and yields
//! the messages to transmit. Freshness state (tables, windows) is owned by
//! the node and passed in, because replay detection has to survive across
//! sessions.

pub mod freshness;
pub mod messages;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::term::{KeyRef, NodeId, Term};

use freshness::{Freshness, TimestampTable, ValidationWindow, WindowCheck};
use messages::{AckFields, ReplyFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolId {
    Pkmv1,
    Pkmv2,
    Tsa,
    Ha,
    Isnap,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 5] = [
        ProtocolId::Pkmv1,
        ProtocolId::Pkmv2,
        ProtocolId::Tsa,
        ProtocolId::Ha,
        ProtocolId::Isnap,
    ];

    /// Does the subscriber verify the base station at all?
    pub fn mutual_auth(self) -> bool {
        matches!(self, ProtocolId::Pkmv2 | ProtocolId::Ha | ProtocolId::Isnap)
    }

    /// Handshake ends with an acknowledgement from the subscriber.
    pub fn has_ack(self) -> bool {
        matches!(self, ProtocolId::Pkmv2 | ProtocolId::Ha | ProtocolId::Isnap)
    }

    /// Nonce echoes link the messages.
    pub fn uses_nonce_link(self) -> bool {
        matches!(self, ProtocolId::Pkmv2 | ProtocolId::Ha)
    }

    pub fn uses_table(self) -> bool {
        matches!(self, ProtocolId::Tsa | ProtocolId::Ha)
    }

    pub fn uses_window(self) -> bool {
        matches!(self, ProtocolId::Isnap)
    }

    /// Number of messages in one honest handshake.
    pub fn message_count(self) -> usize {
        match self {
            ProtocolId::Pkmv1 | ProtocolId::Tsa | ProtocolId::Isnap => 3,
            ProtocolId::Pkmv2 | ProtocolId::Ha => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProtocolId::Pkmv1 => "pkmv1",
            ProtocolId::Pkmv2 => "pkmv2",
            ProtocolId::Tsa => "tsa",
            ProtocolId::Ha => "ha",
            ProtocolId::Isnap => "isnap",
        }
    }

    pub fn parse(s: &str) -> Option<ProtocolId> {
        match s.to_ascii_lowercase().as_str() {
            "pkmv1" | "pkm-v1" | "pkm1" => Some(ProtocolId::Pkmv1),
            "pkmv2" | "pkm-v2" | "pkm2" => Some(ProtocolId::Pkmv2),
            "tsa" => Some(ProtocolId::Tsa),
            "ha" => Some(ProtocolId::Ha),
            "isnap" => Some(ProtocolId::Isnap),
            _ => None,
        }
    }

    /// Fresh per-node freshness state appropriate for this protocol.
    pub fn fresh_state(self, params: &FreshnessParams) -> Freshness {
        if self.uses_table() {
            Freshness::Table(TimestampTable::new(
                params.retention_days,
                params.bytes_per_timestamp,
                params.window_secs,
            ))
        } else if self.uses_window() {
            Freshness::Window(ValidationWindow::new(params.window_secs))
        } else {
            Freshness::None
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sizing of the per-node freshness state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreshnessParams {
    /// Table retention in days.
    pub retention_days: u32,
    /// Bytes per stored timestamp record.
    pub bytes_per_timestamp: u32,
    /// Validation window width and receiver-local staleness tolerance,
    /// seconds.
    pub window_secs: i64,
}

impl Default for FreshnessParams {
    fn default() -> Self {
        // window must cover one link transit plus the station's processing
        // delay or honest replies go stale in flight
        FreshnessParams {
            retention_days: 15,
            bytes_per_timestamp: 4,
            window_secs: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ss,
    Bs,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Ss => "ss",
            Role::Bs => "bs",
        })
    }
}

/// Why a session was rejected. These names are part of the stable trace
/// vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    BadSignature,
    NonceMismatch,
    ReplayDetectedTable,
    StaleTimestamp,
    DuplicateInWindow,
    Malformed,
    WrongPhase,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadSignature => "BadSignature",
            RejectReason::NonceMismatch => "NonceMismatch",
            RejectReason::ReplayDetectedTable => "ReplayDetectedTable",
            RejectReason::StaleTimestamp => "StaleTimestamp",
            RejectReason::DuplicateInWindow => "DuplicateInWindow",
            RejectReason::Malformed => "Malformed",
            RejectReason::WrongPhase => "WrongPhase",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    InProgress,
    Authorized { ak: u64, lifetime: u32 },
    Rejected(RejectReason),
}

impl Outcome {
    pub fn is_authorized(&self) -> bool {
        matches!(self, Outcome::Authorized { .. })
    }

    pub fn ak(&self) -> Option<u64> {
        match self {
            Outcome::Authorized { ak, .. } => Some(*ak),
            _ => None,
        }
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self {
            Outcome::Rejected(r) => Some(*r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InitError {
    #[error("{0} session requires the peer identity in its configuration")]
    MissingPeer(Role),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("session already reached a terminal outcome")]
    SessionClosed,
}

/// Everything a session needs at creation. Fresh random material is drawn
/// by the caller (the simulation owns the seeded generator) and handed in,
/// which keeps sessions deterministic values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub identity: NodeId,
    /// The station this session talks to. Required for the subscriber
    /// role; the base station learns its peer from the incoming request.
    pub peer: Option<NodeId>,
    pub mac: [u8; 6],
    pub bcid: u16,
    pub capabilities: u32,
    pub lifetime: u32,
    pub saids: Vec<u16>,
    /// Nonce this side will emit, if its protocol role calls for one.
    pub fresh_nonce: u64,
    /// Authorization key a base-station session will issue.
    pub fresh_auth_key: u64,
}

impl SessionConfig {
    pub fn new(identity: impl Into<NodeId>) -> Self {
        SessionConfig {
            identity: identity.into(),
            peer: None,
            mac: [0; 6],
            bcid: 0,
            capabilities: 0x0000_000f,
            lifetime: 86_400,
            saids: vec![1, 2],
            fresh_nonce: 0,
            fresh_auth_key: 0,
        }
    }

    pub fn peer(mut self, peer: impl Into<NodeId>) -> Self {
        self.peer = Some(peer.into());
        self
    }

    pub fn mac(mut self, mac: [u8; 6]) -> Self {
        self.mac = mac;
        self
    }

    pub fn bcid(mut self, bcid: u16) -> Self {
        self.bcid = bcid;
        self
    }

    pub fn nonce(mut self, n: u64) -> Self {
        self.fresh_nonce = n;
        self
    }

    pub fn auth_key(mut self, ak: u64) -> Self {
        self.fresh_auth_key = ak;
        self
    }
}

/// One protocol run at one endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub protocol: ProtocolId,
    pub role: Role,
    /// Step counter; only ever advances.
    pub phase: u8,
    pub identity: NodeId,
    pub peer: Option<NodeId>,
    pub mac: [u8; 6],
    pub bcid: u16,
    pub my_nonce: Option<u64>,
    pub peer_nonce: Option<u64>,
    /// Authorization key: pre-drawn on the base station, learned from the
    /// reply on the subscriber.
    pub ak: Option<u64>,
    pub outcome: Outcome,
    capabilities: u32,
    lifetime: u32,
    saids: Vec<u16>,
    /// Subscriber hardware identity learned by the base station.
    pub learned_mac: Option<[u8; 6]>,
    pending: Vec<Term>,
}

/// Create a session and, for the subscriber role, queue the trigger (and
/// the authorization request where the protocol sends it unprompted).
/// Drain the queue with [`SessionState::take_pending`].
pub fn init_session(
    protocol: ProtocolId,
    role: Role,
    cfg: SessionConfig,
    local_now: i64,
) -> Result<SessionState, InitError> {
    if role == Role::Ss && cfg.peer.is_none() {
        return Err(InitError::MissingPeer(role));
    }
    let mut s = SessionState {
        protocol,
        role,
        phase: 0,
        identity: cfg.identity.clone(),
        peer: cfg.peer,
        mac: cfg.mac,
        bcid: cfg.bcid,
        my_nonce: Some(cfg.fresh_nonce),
        peer_nonce: None,
        ak: match role {
            Role::Bs => Some(cfg.fresh_auth_key),
            Role::Ss => None,
        },
        outcome: Outcome::InProgress,
        capabilities: cfg.capabilities,
        lifetime: cfg.lifetime,
        saids: cfg.saids,
        learned_mac: None,
        pending: Vec::new(),
    };
    if role == Role::Ss {
        s.pending.push(messages::build_trigger(
            protocol,
            &s.identity,
            local_now,
            s.bcid,
        ));
        if let Some(req) = messages::build_request(
            protocol,
            &s.identity,
            s.capabilities,
            s.bcid,
            cfg.fresh_nonce,
            local_now,
        ) {
            s.pending.push(req);
        }
    }
    Ok(s)
}

impl SessionState {
    /// Messages queued at initialization, in transmission order.
    pub fn take_pending(&mut self) -> Vec<Term> {
        std::mem::take(&mut self.pending)
    }

    pub fn pending_outgoing(&self) -> &[Term] {
        &self.pending
    }

    /// Consume one incoming message and produce the messages to send.
    /// `local_now` is this node's clock reading; `fresh` is this node's
    /// freshness state. With no incoming message the session is left
    /// untouched.
    pub fn step(
        &mut self,
        incoming: Option<&Term>,
        local_now: i64,
        fresh: &mut Freshness,
    ) -> Result<Vec<Term>, StepError> {
        if self.outcome != Outcome::InProgress {
            return Err(StepError::SessionClosed);
        }
        let Some(msg) = incoming else {
            return Ok(Vec::new());
        };
        let out = match (self.role, self.phase) {
            (Role::Ss, 0) => self.ss_on_reply(msg, local_now, fresh),
            (Role::Bs, 0) => self.bs_on_trigger(msg, local_now, fresh),
            (Role::Bs, 1) => self.bs_on_request(msg, local_now, fresh),
            (Role::Bs, 2) if self.protocol.has_ack() => self.bs_on_ack(msg, local_now, fresh),
            _ => {
                self.reject(RejectReason::WrongPhase);
                Vec::new()
            }
        };
        Ok(out)
    }

    fn reject(&mut self, reason: RejectReason) {
        self.outcome = Outcome::Rejected(reason);
    }

    /// Receiver-local freshness gate for one timestamped message: replay
    /// table or validation window, depending on protocol. Returns the
    /// rejection to apply, if any, and records accepted stamps.
    fn gate_timestamp(
        &self,
        fresh: &mut Freshness,
        sender: &NodeId,
        ts: i64,
        local_now: i64,
        tolerance: i64,
    ) -> Option<RejectReason> {
        match fresh {
            Freshness::Table(table) => {
                if table.contains(sender, ts) {
                    return Some(RejectReason::ReplayDetectedTable);
                }
                if (local_now - ts).abs() > tolerance {
                    return Some(RejectReason::StaleTimestamp);
                }
                table.record(sender.clone(), ts);
                table.prune(local_now);
                None
            }
            Freshness::Window(window) => match window.validate(sender, ts, local_now) {
                WindowCheck::Accept => None,
                WindowCheck::StaleTimestamp => Some(RejectReason::StaleTimestamp),
                WindowCheck::DuplicateInWindow => Some(RejectReason::DuplicateInWindow),
            },
            Freshness::None => None,
        }
    }

    fn freshness_tolerance(fresh: &Freshness) -> i64 {
        match fresh {
            Freshness::Window(w) => w.width_secs,
            Freshness::Table(t) => t.tolerance_secs,
            Freshness::None => 0,
        }
    }

    fn ss_on_reply(&mut self, msg: &Term, local_now: i64, fresh: &mut Freshness) -> Vec<Term> {
        let p = self.protocol;
        let peer = self
            .peer
            .clone()
            .expect("subscriber sessions know their peer");
        let Some(view) = messages::parse_reply(p, msg) else {
            self.reject(self.classify_unexpected(msg, MsgKind::Reply));
            return Vec::new();
        };
        if let Some(ts) = view.ts {
            let tol = Self::freshness_tolerance(fresh);
            if let Some(reason) = self.gate_timestamp(fresh, &peer, ts, local_now, tol) {
                self.reject(reason);
                return Vec::new();
            }
        }
        if p.mutual_auth() {
            // the certificate must name the station this subscriber joined,
            // and the signature must be that station's over every field in
            // front of it
            if view.bs_cert_subject.as_ref() != Some(&peer) {
                self.reject(RejectReason::BadSignature);
                return Vec::new();
            }
            let authentic = view
                .signed_body(p)
                .zip(view.sig.as_ref())
                .is_some_and(|(body, sig)| sig.verify_sig_over(&peer, &body));
            if !authentic {
                self.reject(RejectReason::BadSignature);
                return Vec::new();
            }
            if p.uses_nonce_link() && view.nonce_echo != self.my_nonce {
                self.reject(RejectReason::NonceMismatch);
                return Vec::new();
            }
        }
        let my_priv = KeyRef::private(self.identity.clone());
        let ak = match view.enc_ak.decrypt(&my_priv) {
            Some(Term::AuthKey(ak)) => *ak,
            _ => {
                self.reject(RejectReason::Malformed);
                return Vec::new();
            }
        };
        self.peer_nonce = view.bs_nonce;
        self.ak = Some(ak);
        self.outcome = Outcome::Authorized {
            ak,
            lifetime: view.lifetime,
        };
        self.phase += 1;
        if p.has_ack() {
            let ack = messages::build_ack(
                p,
                &AckFields {
                    ss: self.identity.clone(),
                    bs: peer,
                    mac: self.mac,
                    nonce_echo: view.bs_nonce,
                    ts: Some(local_now),
                },
            )
            .expect("ack layout exists for acknowledged protocols");
            vec![ack]
        } else {
            Vec::new()
        }
    }

    fn bs_on_trigger(&mut self, msg: &Term, local_now: i64, fresh: &mut Freshness) -> Vec<Term> {
        let p = self.protocol;
        let Some(view) = messages::parse_trigger(p, msg) else {
            self.reject(self.classify_unexpected(msg, MsgKind::Trigger));
            return Vec::new();
        };
        // Only the window protocol can vet its trigger; the others accept
        // any presence announcement, which is exactly what trigger-replay
        // attacks lean on. The table protocols carry a stamp here but have
        // no session context to hold it against.
        if p.uses_window() {
            let ts = view.ts.expect("window trigger parses with a timestamp");
            let tol = Self::freshness_tolerance(fresh);
            if let Some(reason) = self.gate_timestamp(fresh, &view.subject, ts, local_now, tol) {
                self.reject(reason);
                return Vec::new();
            }
        }
        self.peer = Some(view.subject.clone());
        if p == ProtocolId::Isnap {
            // trigger doubles as the request: answer immediately
            self.phase = 2;
            let reply = messages::build_reply(
                p,
                &ReplyFields {
                    bs: self.identity.clone(),
                    ss: view.subject,
                    ak: self.ak.expect("base station sessions pre-draw their key"),
                    lifetime: self.lifetime,
                    seq_no: 0,
                    saids: self.saids.clone(),
                    nonce_echo: None,
                    bs_nonce: None,
                    ts: Some(local_now),
                },
            );
            vec![reply]
        } else {
            self.phase = 1;
            Vec::new()
        }
    }

    fn bs_on_request(&mut self, msg: &Term, local_now: i64, fresh: &mut Freshness) -> Vec<Term> {
        let p = self.protocol;
        let Some(view) = messages::parse_request(p, msg) else {
            self.reject(self.classify_unexpected(msg, MsgKind::Request));
            return Vec::new();
        };
        if let Some(ts) = view.ts {
            let tol = Self::freshness_tolerance(fresh);
            if let Some(reason) = self.gate_timestamp(fresh, &view.subject, ts, local_now, tol) {
                self.reject(reason);
                return Vec::new();
            }
        }
        self.peer = Some(view.subject.clone());
        self.peer_nonce = Some(view.nonce);
        let reply = messages::build_reply(
            p,
            &ReplyFields {
                bs: self.identity.clone(),
                ss: view.subject,
                ak: self.ak.expect("base station sessions pre-draw their key"),
                lifetime: self.lifetime,
                seq_no: 0,
                saids: self.saids.clone(),
                nonce_echo: Some(view.nonce),
                bs_nonce: self.my_nonce,
                ts: Some(local_now),
            },
        );
        if p.has_ack() {
            self.phase = 2;
        } else {
            // one-way protocols: issuing the reply authorizes the peer
            self.phase = 3;
            self.outcome = Outcome::Authorized {
                ak: self.ak.expect("pre-drawn"),
                lifetime: self.lifetime,
            };
        }
        vec![reply]
    }

    fn bs_on_ack(&mut self, msg: &Term, local_now: i64, fresh: &mut Freshness) -> Vec<Term> {
        let p = self.protocol;
        let peer = self.peer.clone().expect("request already named the peer");
        let Some(view) = messages::parse_ack(p, msg) else {
            self.reject(self.classify_unexpected(msg, MsgKind::Ack));
            return Vec::new();
        };
        if let Some(ts) = view.ts {
            let tol = Self::freshness_tolerance(fresh);
            if let Some(reason) = self.gate_timestamp(fresh, &peer, ts, local_now, tol) {
                self.reject(reason);
                return Vec::new();
            }
        }
        if p.uses_nonce_link() && view.nonce_echo != self.my_nonce {
            self.reject(RejectReason::NonceMismatch);
            return Vec::new();
        }
        let authentic = view
            .signed_body(p)
            .is_some_and(|body| view.sig.verify_sig_over(&peer, &body));
        if !authentic {
            self.reject(RejectReason::BadSignature);
            return Vec::new();
        }
        let my_priv = KeyRef::private(self.identity.clone());
        let mac = match view.enc_mac.decrypt(&my_priv) {
            Some(Term::MacId(mac)) => *mac,
            _ => {
                self.reject(RejectReason::Malformed);
                return Vec::new();
            }
        };
        if let Some(plain) = view.plain_mac {
            if plain != mac {
                self.reject(RejectReason::Malformed);
                return Vec::new();
            }
        }
        self.learned_mac = Some(mac);
        self.phase = 3;
        self.outcome = Outcome::Authorized {
            ak: self.ak.expect("pre-drawn"),
            lifetime: self.lifetime,
        };
        Vec::new()
    }

    /// Distinguish a message that belongs to another phase from one that is
    /// no message of this protocol at all.
    fn classify_unexpected(&self, msg: &Term, expected: MsgKind) -> RejectReason {
        let p = self.protocol;
        let kinds = [
            (MsgKind::Trigger, messages::parse_trigger(p, msg).is_some()),
            (MsgKind::Request, messages::parse_request(p, msg).is_some()),
            (MsgKind::Reply, messages::parse_reply(p, msg).is_some()),
            (MsgKind::Ack, messages::parse_ack(p, msg).is_some()),
        ];
        if kinds.iter().any(|(k, parses)| *parses && *k != expected) {
            RejectReason::WrongPhase
        } else {
            RejectReason::Malformed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MsgKind {
    Trigger,
    Request,
    Reply,
    Ack,
}

/// Run one honest handshake entirely in memory, with both clocks reading
/// `base_ts` and per-node freshness state sized by `params`. Used for
/// analytical byte accounting and as a test harness.
pub struct Exchange {
    pub ss: SessionState,
    pub bs: SessionState,
    /// Every message in transmission order.
    pub messages: Vec<Term>,
}

pub fn honest_exchange(p: ProtocolId, base_ts: i64, params: &FreshnessParams) -> Exchange {
    let ss_id = NodeId::from("ss1");
    let bs_id = NodeId::from("bs1");
    let mut ss_fresh = p.fresh_state(params);
    let mut bs_fresh = p.fresh_state(params);
    let mut ss = init_session(
        p,
        Role::Ss,
        SessionConfig::new(ss_id.clone())
            .peer(bs_id.clone())
            .mac([0x02, 0, 0, 0, 0, 1])
            .bcid(101)
            .nonce(0x5151_0001),
        base_ts,
    )
    .expect("subscriber config is complete");
    let mut bs = init_session(
        p,
        Role::Bs,
        SessionConfig::new(bs_id)
            .mac([0x02, 0, 0, 0, 0, 0xbb])
            .bcid(1)
            .nonce(0xb5b5_0002)
            .auth_key(0xac11_0003),
        base_ts,
    )
    .expect("base-station config is complete");

    let mut messages = Vec::new();
    let mut to_bs: Vec<Term> = ss.take_pending();
    let mut to_ss: Vec<Term> = Vec::new();
    // alternate directions until both sides go quiet, one second of
    // transit per round as on a live link
    let mut now = base_ts;
    while !to_bs.is_empty() || !to_ss.is_empty() {
        now += 1;
        for msg in std::mem::take(&mut to_bs) {
            messages.push(msg.clone());
            if bs.outcome == Outcome::InProgress {
                to_ss.extend(
                    bs.step(Some(&msg), now, &mut bs_fresh)
                        .expect("bs in progress"),
                );
            }
        }
        now += 1;
        for msg in std::mem::take(&mut to_ss) {
            messages.push(msg.clone());
            if ss.outcome == Outcome::InProgress {
                to_bs.extend(
                    ss.step(Some(&msg), now, &mut ss_fresh)
                        .expect("ss in progress"),
                );
            }
        }
    }
    Exchange { ss, bs, messages }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{KeyKind, Term};

    fn params() -> FreshnessParams {
        FreshnessParams::default()
    }

    #[test]
    fn honest_run_completes_on_every_protocol() {
        for p in ProtocolId::ALL {
            let ex = honest_exchange(p, 1_000, &params());
            assert!(ex.ss.outcome.is_authorized(), "{p}: subscriber authorized");
            assert!(
                ex.bs.outcome.is_authorized(),
                "{p}: base station authorized"
            );
            assert_eq!(
                ex.ss.outcome.ak(),
                ex.bs.outcome.ak(),
                "{p}: both hold the same key"
            );
            assert_eq!(ex.messages.len(), p.message_count(), "{p}: message count");
        }
    }

    #[test]
    fn subscriber_sessions_queue_the_trigger() {
        let s = init_session(
            ProtocolId::Pkmv1,
            Role::Ss,
            SessionConfig::new("ss1").peer("bs1").nonce(7),
            0,
        )
        .unwrap();
        assert_eq!(s.phase, 0);
        assert_eq!(s.outcome, Outcome::InProgress);
        assert_eq!(s.pending_outgoing().len(), 2); // presence announcement + request
        assert_eq!(s.pending_outgoing()[0], Term::cert(NodeId::from("ss1")));
    }

    #[test]
    fn freshness_state_matches_the_protocol() {
        let fp = params();
        assert!(matches!(
            ProtocolId::Pkmv1.fresh_state(&fp),
            Freshness::None
        ));
        assert!(matches!(
            ProtocolId::Pkmv2.fresh_state(&fp),
            Freshness::None
        ));
        let tsa = ProtocolId::Tsa.fresh_state(&fp);
        let table = tsa
            .table()
            .expect("table protocol starts with an empty table");
        assert_eq!(table.live_records(), 0);
        assert_eq!(table.retention_days, 15);
        assert_eq!(table.bytes_per_record, 4);
        assert!(matches!(
            ProtocolId::Ha.fresh_state(&fp),
            Freshness::Table(_)
        ));
        let isnap = ProtocolId::Isnap.fresh_state(&fp);
        assert!(
            isnap.table().is_none(),
            "no record tables for the window protocol"
        );
        assert_eq!(isnap.window().expect("window present").cached_entries(), 0);
    }

    #[test]
    fn subscriber_without_peer_is_a_config_error() {
        let err = init_session(ProtocolId::Pkmv1, Role::Ss, SessionConfig::new("ss1"), 0);
        assert!(matches!(err, Err(InitError::MissingPeer(Role::Ss))));
    }

    #[test]
    fn silence_is_a_no_op() {
        let mut s =
            init_session(ProtocolId::Pkmv2, Role::Bs, SessionConfig::new("bs1"), 0).unwrap();
        let before = s.clone();
        let out = s.step(None, 0, &mut Freshness::None).unwrap();
        assert!(out.is_empty());
        assert_eq!(s, before);
    }

    fn bs_at_request_phase(p: ProtocolId, fresh: &mut Freshness) -> SessionState {
        let mut bs = init_session(
            p,
            Role::Bs,
            SessionConfig::new("bs1").nonce(0xb5).auth_key(0xa1),
            0,
        )
        .unwrap();
        let trig = messages::build_trigger(p, &NodeId::from("ss1"), 0, 101);
        let out = bs.step(Some(&trig), 0, fresh).unwrap();
        assert!(out.is_empty());
        bs
    }

    #[test]
    fn pkmv1_base_station_authorizes_on_the_request() {
        let mut fresh = Freshness::None;
        let mut bs = bs_at_request_phase(ProtocolId::Pkmv1, &mut fresh);
        let req =
            messages::build_request(ProtocolId::Pkmv1, &NodeId::from("ss1"), 0xf, 101, 0x51, 0)
                .unwrap();
        let out = bs.step(Some(&req), 0, &mut fresh).unwrap();
        assert_eq!(out.len(), 1, "authorization reply emitted");
        assert!(bs.outcome.is_authorized());
        assert_eq!(bs.peer_nonce, Some(0x51));
    }

    #[test]
    fn table_protocol_rejects_a_recorded_timestamp() {
        let p = ProtocolId::Tsa;
        let mut fresh = p.fresh_state(&params());
        let mut bs = bs_at_request_phase(p, &mut fresh);
        let req = messages::build_request(p, &NodeId::from("ss1"), 0xf, 101, 0x51, 100).unwrap();
        bs.step(Some(&req), 100, &mut fresh).unwrap();
        assert!(bs.outcome.is_authorized());

        // same request again, fresh session at the same node
        let mut bs2 = bs_at_request_phase(p, &mut fresh);
        bs2.step(Some(&req), 100, &mut fresh).unwrap();
        assert_eq!(
            bs2.outcome,
            Outcome::Rejected(RejectReason::ReplayDetectedTable)
        );
    }

    #[test]
    fn table_protocol_rejects_a_stale_timestamp() {
        let p = ProtocolId::Tsa;
        let mut fresh = p.fresh_state(&params());
        let mut bs = bs_at_request_phase(p, &mut fresh);
        let old = messages::build_request(p, &NodeId::from("ss1"), 0xf, 101, 0x51, 100).unwrap();
        bs.step(Some(&old), 500, &mut fresh).unwrap();
        assert_eq!(bs.outcome, Outcome::Rejected(RejectReason::StaleTimestamp));
    }

    #[test]
    fn one_way_replies_carry_no_signature_and_are_taken_on_faith() {
        for p in [ProtocolId::Pkmv1, ProtocolId::Tsa] {
            let ex = honest_exchange(p, 1_000, &params());
            let reply = &ex.messages[2];
            assert!(
                !reply
                    .visible_subterms()
                    .iter()
                    .any(|t| matches!(t, Term::Sig(_, _) | Term::Cert { .. })),
                "{p}: reply is unauthenticated"
            );
        }
        // a self-made reply with an attacker-chosen key is accepted verbatim
        let mut ss = init_session(
            ProtocolId::Pkmv1,
            Role::Ss,
            SessionConfig::new("ss1").peer("bs1").nonce(0x51),
            0,
        )
        .unwrap();
        ss.take_pending();
        let forged = messages::build_reply(
            ProtocolId::Pkmv1,
            &ReplyFields {
                bs: NodeId::from("adv"),
                ss: NodeId::from("ss1"),
                ak: 0xbad,
                lifetime: 86_400,
                seq_no: 0,
                saids: vec![1, 2],
                nonce_echo: None,
                bs_nonce: None,
                ts: None,
            },
        );
        ss.step(Some(&forged), 0, &mut Freshness::None).unwrap();
        assert_eq!(ss.outcome.ak(), Some(0xbad));
    }

    #[test]
    fn mutual_protocols_reject_a_reply_not_signed_by_their_station() {
        for p in [ProtocolId::Pkmv2, ProtocolId::Ha, ProtocolId::Isnap] {
            let mut ss = init_session(
                p,
                Role::Ss,
                SessionConfig::new("ss1").peer("bs1").nonce(0x51),
                1_000,
            )
            .unwrap();
            ss.take_pending();
            // rogue responder: own certificate, own signature, echoes the
            // right nonce and a fresh stamp
            let forged = messages::build_reply(
                p,
                &ReplyFields {
                    bs: NodeId::from("adv"),
                    ss: NodeId::from("ss1"),
                    ak: 0xbad,
                    lifetime: 86_400,
                    seq_no: 0,
                    saids: vec![1, 2],
                    nonce_echo: Some(0x51),
                    bs_nonce: Some(0xdead),
                    ts: Some(1_000),
                },
            );
            let mut fresh = p.fresh_state(&params());
            ss.step(Some(&forged), 1_000, &mut fresh).unwrap();
            assert_eq!(
                ss.outcome,
                Outcome::Rejected(RejectReason::BadSignature),
                "{p}: forged reply rejected"
            );
        }
    }

    #[test]
    fn swapped_signature_fails_even_with_the_right_certificate() {
        let p = ProtocolId::Pkmv2;
        let ex = honest_exchange(p, 1_000, &params());
        let Term::Tuple(mut parts) = ex.messages[2].clone() else {
            panic!("reply is a tuple")
        };
        // replace the signature with one by another key over the same body
        let body = match parts.last().unwrap() {
            Term::Sig(_, body) => (**body).clone(),
            _ => panic!("last element is the signature"),
        };
        *parts.last_mut().unwrap() = Term::sig(crate::term::KeyRef::private("adv"), body).unwrap();
        let tampered = Term::Tuple(parts);

        let mut ss = init_session(
            p,
            Role::Ss,
            SessionConfig::new("ss1").peer("bs1").nonce(0x5151_0001),
            1_000,
        )
        .unwrap();
        ss.take_pending();
        ss.step(Some(&tampered), 1_000, &mut Freshness::None)
            .unwrap();
        assert_eq!(ss.outcome, Outcome::Rejected(RejectReason::BadSignature));
    }

    #[test]
    fn nonce_echo_mismatch_rejects_on_both_sides() {
        let p = ProtocolId::Pkmv2;
        // subscriber side: reply echoing a foreign nonce
        let mut ss = init_session(
            p,
            Role::Ss,
            SessionConfig::new("ss1").peer("bs1").nonce(0x51),
            0,
        )
        .unwrap();
        ss.take_pending();
        let reply = messages::build_reply(
            p,
            &ReplyFields {
                bs: NodeId::from("bs1"),
                ss: NodeId::from("ss1"),
                ak: 0xa1,
                lifetime: 86_400,
                seq_no: 0,
                saids: vec![1, 2],
                nonce_echo: Some(0x99), // not 0x51
                bs_nonce: Some(0xb5),
                ts: None,
            },
        );
        ss.step(Some(&reply), 0, &mut Freshness::None).unwrap();
        assert_eq!(ss.outcome, Outcome::Rejected(RejectReason::NonceMismatch));

        // base-station side: acknowledgement echoing a foreign nonce
        let mut fresh = Freshness::None;
        let mut bs = bs_at_request_phase(p, &mut fresh);
        let req = messages::build_request(p, &NodeId::from("ss1"), 0xf, 101, 0x51, 0).unwrap();
        bs.step(Some(&req), 0, &mut fresh).unwrap();
        let ack = messages::build_ack(
            p,
            &AckFields {
                ss: NodeId::from("ss1"),
                bs: NodeId::from("bs1"),
                mac: [2, 0, 0, 0, 0, 1],
                nonce_echo: Some(0x77), // not the station's nonce
                ts: None,
            },
        )
        .unwrap();
        bs.step(Some(&ack), 0, &mut fresh).unwrap();
        assert_eq!(bs.outcome, Outcome::Rejected(RejectReason::NonceMismatch));
    }

    #[test]
    fn hardware_identity_exposure_differs_by_protocol() {
        let mac_of = |ex: &Exchange| Term::MacId(ex.ss.mac);
        for p in [ProtocolId::Pkmv2, ProtocolId::Ha] {
            let ex = honest_exchange(p, 1_000, &params());
            let ack = ex.messages.last().unwrap();
            assert!(
                ack.exposes(&mac_of(&ex)),
                "{p}: final message leaks the hardware identity"
            );
        }
        let ex = honest_exchange(ProtocolId::Isnap, 1_000, &params());
        let ack = ex.messages.last().unwrap();
        assert!(
            !ack.exposes(&mac_of(&ex)),
            "isnap: hardware identity only ever ciphertext"
        );
        // it is present, just encrypted
        assert!(ack
            .visible_subterms()
            .iter()
            .any(|t| matches!(t, Term::Enc(k, _) if k.kind == KeyKind::Public)));
    }

    #[test]
    fn base_station_binds_no_identity_to_the_certificate() {
        // A registered but hostile subscriber can complete a handshake
        // quoting someone else's hardware address: nothing ties the MAC
        // field to the certificate. This is the identity-theft surface.
        let p = ProtocolId::Pkmv2;
        let victim_mac = [2, 0, 0, 0, 0, 0x51];
        let mut fresh = Freshness::None;
        let mut bs = init_session(
            p,
            Role::Bs,
            SessionConfig::new("bs1").nonce(0xb5).auth_key(0xa1),
            0,
        )
        .unwrap();
        let trig = messages::build_trigger(p, &NodeId::from("adv"), 0, 900);
        bs.step(Some(&trig), 0, &mut fresh).unwrap();
        let req = messages::build_request(p, &NodeId::from("adv"), 0xf, 900, 0x77, 0).unwrap();
        bs.step(Some(&req), 0, &mut fresh).unwrap();
        let ack = messages::build_ack(
            p,
            &AckFields {
                ss: NodeId::from("adv"),
                bs: NodeId::from("bs1"),
                mac: victim_mac,
                nonce_echo: Some(0xb5),
                ts: None,
            },
        )
        .unwrap();
        bs.step(Some(&ack), 0, &mut fresh).unwrap();
        assert!(bs.outcome.is_authorized());
        assert_eq!(bs.learned_mac, Some(victim_mac));
    }

    #[test]
    fn phases_only_advance_and_terminal_states_refuse_steps() {
        for p in ProtocolId::ALL {
            let ex = honest_exchange(p, 1_000, &params());
            let mut ss = ex.ss;
            let err = ss.step(Some(&Term::Nonce(1)), 1_000, &mut Freshness::None);
            assert_eq!(
                err,
                Err(StepError::SessionClosed),
                "{p}: authorized is terminal"
            );
        }
        let p = ProtocolId::Tsa;
        let mut fresh = p.fresh_state(&params());
        let mut bs = bs_at_request_phase(p, &mut fresh);
        let old = messages::build_request(p, &NodeId::from("ss1"), 0xf, 101, 0x51, 5).unwrap();
        bs.step(Some(&old), 5_000, &mut fresh).unwrap();
        assert!(matches!(bs.outcome, Outcome::Rejected(_)));
        let err = bs.step(Some(&old), 5_000, &mut fresh);
        assert_eq!(err, Err(StepError::SessionClosed), "rejected is terminal");
    }

    #[test]
    fn out_of_phase_message_is_flagged_as_wrong_phase() {
        let p = ProtocolId::Pkmv1;
        let mut bs =
            init_session(p, Role::Bs, SessionConfig::new("bs1").auth_key(0xa1), 0).unwrap();
        // a perfectly valid reply is no trigger
        let reply = messages::build_reply(
            p,
            &ReplyFields {
                bs: NodeId::from("bs1"),
                ss: NodeId::from("ss1"),
                ak: 0xa1,
                lifetime: 86_400,
                seq_no: 0,
                saids: vec![1, 2],
                nonce_echo: None,
                bs_nonce: None,
                ts: None,
            },
        );
        bs.step(Some(&reply), 0, &mut Freshness::None).unwrap();
        assert_eq!(bs.outcome, Outcome::Rejected(RejectReason::WrongPhase));

        let mut bs2 =
            init_session(p, Role::Bs, SessionConfig::new("bs1").auth_key(0xa1), 0).unwrap();
        bs2.step(Some(&Term::Nonce(9)), 0, &mut Freshness::None)
            .unwrap();
        assert_eq!(bs2.outcome, Outcome::Rejected(RejectReason::Malformed));
    }

    #[test]
    fn window_state_stays_bounded_across_many_handshakes() {
        let p = ProtocolId::Isnap;
        let mut bs_fresh = p.fresh_state(&params());
        for i in 0..200 {
            let base = i * 50; // far apart compared to the window
            let mut ss = init_session(
                p,
                Role::Ss,
                SessionConfig::new("ss1").peer("bs1").nonce(1000 + i as u64),
                base,
            )
            .unwrap();
            let mut bs = init_session(
                p,
                Role::Bs,
                SessionConfig::new("bs1")
                    .nonce(2000 + i as u64)
                    .auth_key(3000 + i as u64),
                base,
            )
            .unwrap();
            let mut ss_fresh = p.fresh_state(&params());
            let trig = ss.take_pending().remove(0);
            let reply = bs
                .step(Some(&trig), base + 1, &mut bs_fresh)
                .unwrap()
                .remove(0);
            let ack = ss
                .step(Some(&reply), base + 2, &mut ss_fresh)
                .unwrap()
                .remove(0);
            bs.step(Some(&ack), base + 3, &mut bs_fresh).unwrap();
            assert!(bs.outcome.is_authorized(), "run {i} authorized");
            let cached = bs_fresh.window().unwrap().cached_entries();
            assert!(
                cached <= 2,
                "cache holds only the in-window stamps, got {cached}"
            );
        }
    }

    #[test]
    fn table_protocols_never_false_reject_distinct_fresh_stamps() {
        // many sequential handshakes, each at a new second: all pass, and
        // the table grows by exactly the validated messages
        let p = ProtocolId::Tsa;
        let mut bs_fresh = p.fresh_state(&params());
        for i in 0..50i64 {
            let base = i * 10;
            let mut fresh_none = p.fresh_state(&params());
            let mut ss = init_session(
                p,
                Role::Ss,
                SessionConfig::new("ss1").peer("bs1").nonce(100 + i as u64),
                base,
            )
            .unwrap();
            let mut bs = init_session(
                p,
                Role::Bs,
                SessionConfig::new("bs1").auth_key(200 + i as u64),
                base,
            )
            .unwrap();
            let mut msgs = ss.take_pending();
            let req = msgs.remove(1);
            let trig = msgs.remove(0);
            bs.step(Some(&trig), base, &mut bs_fresh).unwrap();
            let reply = bs.step(Some(&req), base, &mut bs_fresh).unwrap().remove(0);
            ss.step(Some(&reply), base, &mut fresh_none).unwrap();
            assert!(bs.outcome.is_authorized());
            assert!(ss.outcome.is_authorized());
            assert_eq!(bs_fresh.table().unwrap().live_records(), (i + 1) as usize);
        }
    }
}
