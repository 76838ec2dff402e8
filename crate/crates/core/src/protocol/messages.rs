//! Wire layouts of the five authorization handshakes.
//!
//! Builders produce the exact term shape each protocol puts on the air;
//! parsers are strict about arity and field kinds and give back typed
//! views. Anything that does not parse is treated as malformed by the
//! state machines.

use crate::term::{KeyRef, NodeId, Term};

use super::ProtocolId;

/// Authorization-information trigger (message 1).
///
/// The bare certificate for the nonce-based protocols, certificate plus
/// timestamp for the table protocol, and certificate, timestamp and
/// connection code for the window protocol.
pub fn build_trigger(p: ProtocolId, subject: &NodeId, ts: i64, bcid: u16) -> Term {
    match p {
        ProtocolId::Pkmv1 | ProtocolId::Pkmv2 | ProtocolId::Ha => Term::cert(subject.clone()),
        ProtocolId::Tsa => Term::tuple(vec![Term::cert(subject.clone()), Term::Timestamp(ts)]),
        ProtocolId::Isnap => Term::tuple(vec![
            Term::cert(subject.clone()),
            Term::Timestamp(ts),
            Term::Bcid(bcid),
        ]),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerView {
    pub subject: NodeId,
    pub ts: Option<i64>,
    pub bcid: Option<u16>,
}

pub fn parse_trigger(p: ProtocolId, t: &Term) -> Option<TriggerView> {
    match p {
        ProtocolId::Pkmv1 | ProtocolId::Pkmv2 | ProtocolId::Ha => match t {
            Term::Cert { subject, .. } => Some(TriggerView {
                subject: subject.clone(),
                ts: None,
                bcid: None,
            }),
            _ => None,
        },
        ProtocolId::Tsa => match t.as_tuple()? {
            [Term::Cert { subject, .. }, Term::Timestamp(ts)] => Some(TriggerView {
                subject: subject.clone(),
                ts: Some(*ts),
                bcid: None,
            }),
            _ => None,
        },
        ProtocolId::Isnap => match t.as_tuple()? {
            [Term::Cert { subject, .. }, Term::Timestamp(ts), Term::Bcid(bcid)] => {
                Some(TriggerView {
                    subject: subject.clone(),
                    ts: Some(*ts),
                    bcid: Some(*bcid),
                })
            }
            _ => None,
        },
    }
}

/// Authorization request (message 2). ISNAP folds this into its trigger.
pub fn build_request(
    p: ProtocolId,
    subject: &NodeId,
    caps: u32,
    bcid: u16,
    nonce: u64,
    ts: i64,
) -> Option<Term> {
    let mut parts = vec![
        Term::cert(subject.clone()),
        Term::Capabilities(caps),
        Term::Bcid(bcid),
        Term::Nonce(nonce),
    ];
    match p {
        ProtocolId::Pkmv1 | ProtocolId::Pkmv2 => {}
        ProtocolId::Tsa | ProtocolId::Ha => parts.push(Term::Timestamp(ts)),
        ProtocolId::Isnap => return None,
    }
    Some(Term::Tuple(parts))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestView {
    pub subject: NodeId,
    pub caps: u32,
    pub bcid: u16,
    pub nonce: u64,
    pub ts: Option<i64>,
}

pub fn parse_request(p: ProtocolId, t: &Term) -> Option<RequestView> {
    let parts = t.as_tuple()?;
    match (p, parts) {
        (
            ProtocolId::Pkmv1 | ProtocolId::Pkmv2,
            [Term::Cert { subject, .. }, Term::Capabilities(caps), Term::Bcid(bcid), Term::Nonce(nonce)],
        ) => Some(RequestView {
            subject: subject.clone(),
            caps: *caps,
            bcid: *bcid,
            nonce: *nonce,
            ts: None,
        }),
        (
            ProtocolId::Tsa | ProtocolId::Ha,
            [Term::Cert { subject, .. }, Term::Capabilities(caps), Term::Bcid(bcid), Term::Nonce(nonce), Term::Timestamp(ts)],
        ) => Some(RequestView {
            subject: subject.clone(),
            caps: *caps,
            bcid: *bcid,
            nonce: *nonce,
            ts: Some(*ts),
        }),
        _ => None,
    }
}

/// Everything the base station needs to assemble an authorization reply.
#[derive(Debug, Clone)]
pub struct ReplyFields {
    pub bs: NodeId,
    pub ss: NodeId,
    pub ak: u64,
    pub lifetime: u32,
    pub seq_no: u8,
    pub saids: Vec<u16>,
    /// Requester nonce echoed back (mutual-auth protocols).
    pub nonce_echo: Option<u64>,
    /// Fresh responder nonce (mutual-auth protocols with an acknowledgement).
    pub bs_nonce: Option<u64>,
    pub ts: Option<i64>,
}

/// Authorization reply (message 3; ISNAP message 2).
pub fn build_reply(p: ProtocolId, f: &ReplyFields) -> Term {
    let enc_ak =
        Term::enc(KeyRef::public(f.ss.clone()), Term::AuthKey(f.ak)).expect("public key encrypts");
    let mut parts = vec![
        enc_ak,
        Term::Lifetime(f.lifetime),
        Term::SeqNo(f.seq_no),
        Term::SaidList(f.saids.clone()),
    ];
    match p {
        ProtocolId::Pkmv1 => {}
        ProtocolId::Tsa => parts.push(Term::Timestamp(f.ts.expect("tsa reply timestamp"))),
        ProtocolId::Pkmv2 => {
            parts.push(Term::cert(f.bs.clone()));
            parts.push(Term::Nonce(f.nonce_echo.expect("echoed nonce")));
            parts.push(Term::Nonce(f.bs_nonce.expect("bs nonce")));
        }
        ProtocolId::Ha => {
            parts.push(Term::cert(f.bs.clone()));
            parts.push(Term::Nonce(f.nonce_echo.expect("echoed nonce")));
            parts.push(Term::Nonce(f.bs_nonce.expect("bs nonce")));
            parts.push(Term::Timestamp(f.ts.expect("ha reply timestamp")));
        }
        ProtocolId::Isnap => {
            parts.push(Term::cert(f.bs.clone()));
            parts.push(Term::Timestamp(f.ts.expect("isnap reply timestamp")));
        }
    }
    if p.mutual_auth() {
        let body = Term::Tuple(parts.clone());
        let sig = Term::sig(KeyRef::private(f.bs.clone()), body).expect("private key signs");
        parts.push(sig);
    }
    Term::Tuple(parts)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplyView {
    pub enc_ak: Term,
    pub lifetime: u32,
    pub seq_no: u8,
    pub saids: Vec<u16>,
    pub bs_cert_subject: Option<NodeId>,
    pub nonce_echo: Option<u64>,
    pub bs_nonce: Option<u64>,
    pub ts: Option<i64>,
    pub sig: Option<Term>,
}

impl ReplyView {
    /// The term the reply signature must cover: every field before it.
    pub fn signed_body(&self, p: ProtocolId) -> Option<Term> {
        let mut parts = vec![
            self.enc_ak.clone(),
            Term::Lifetime(self.lifetime),
            Term::SeqNo(self.seq_no),
            Term::SaidList(self.saids.clone()),
        ];
        match p {
            ProtocolId::Pkmv1 | ProtocolId::Tsa => return None,
            ProtocolId::Pkmv2 => {
                parts.push(Term::cert(self.bs_cert_subject.clone()?));
                parts.push(Term::Nonce(self.nonce_echo?));
                parts.push(Term::Nonce(self.bs_nonce?));
            }
            ProtocolId::Ha => {
                parts.push(Term::cert(self.bs_cert_subject.clone()?));
                parts.push(Term::Nonce(self.nonce_echo?));
                parts.push(Term::Nonce(self.bs_nonce?));
                parts.push(Term::Timestamp(self.ts?));
            }
            ProtocolId::Isnap => {
                parts.push(Term::cert(self.bs_cert_subject.clone()?));
                parts.push(Term::Timestamp(self.ts?));
            }
        }
        Some(Term::Tuple(parts))
    }
}

pub fn parse_reply(p: ProtocolId, t: &Term) -> Option<ReplyView> {
    let parts = t.as_tuple()?;
    let common = |parts: &[Term]| -> Option<(Term, u32, u8, Vec<u16>)> {
        match parts {
            [enc @ Term::Enc(_, _), Term::Lifetime(l), Term::SeqNo(s), Term::SaidList(said), ..] => {
                Some((enc.clone(), *l, *s, said.clone()))
            }
            _ => None,
        }
    };
    match p {
        ProtocolId::Pkmv1 => {
            if parts.len() != 4 {
                return None;
            }
            let (enc_ak, lifetime, seq_no, saids) = common(parts)?;
            Some(ReplyView {
                enc_ak,
                lifetime,
                seq_no,
                saids,
                bs_cert_subject: None,
                nonce_echo: None,
                bs_nonce: None,
                ts: None,
                sig: None,
            })
        }
        ProtocolId::Tsa => {
            if parts.len() != 5 {
                return None;
            }
            let (enc_ak, lifetime, seq_no, saids) = common(parts)?;
            let ts = match &parts[4] {
                Term::Timestamp(ts) => *ts,
                _ => return None,
            };
            Some(ReplyView {
                enc_ak,
                lifetime,
                seq_no,
                saids,
                bs_cert_subject: None,
                nonce_echo: None,
                bs_nonce: None,
                ts: Some(ts),
                sig: None,
            })
        }
        ProtocolId::Pkmv2 => {
            if parts.len() != 8 {
                return None;
            }
            let (enc_ak, lifetime, seq_no, saids) = common(parts)?;
            match (&parts[4], &parts[5], &parts[6], &parts[7]) {
                (
                    Term::Cert { subject, .. },
                    Term::Nonce(echo),
                    Term::Nonce(nb),
                    sig @ Term::Sig(_, _),
                ) => Some(ReplyView {
                    enc_ak,
                    lifetime,
                    seq_no,
                    saids,
                    bs_cert_subject: Some(subject.clone()),
                    nonce_echo: Some(*echo),
                    bs_nonce: Some(*nb),
                    ts: None,
                    sig: Some(sig.clone()),
                }),
                _ => None,
            }
        }
        ProtocolId::Ha => {
            if parts.len() != 9 {
                return None;
            }
            let (enc_ak, lifetime, seq_no, saids) = common(parts)?;
            match (&parts[4], &parts[5], &parts[6], &parts[7], &parts[8]) {
                (
                    Term::Cert { subject, .. },
                    Term::Nonce(echo),
                    Term::Nonce(nb),
                    Term::Timestamp(ts),
                    sig @ Term::Sig(_, _),
                ) => Some(ReplyView {
                    enc_ak,
                    lifetime,
                    seq_no,
                    saids,
                    bs_cert_subject: Some(subject.clone()),
                    nonce_echo: Some(*echo),
                    bs_nonce: Some(*nb),
                    ts: Some(*ts),
                    sig: Some(sig.clone()),
                }),
                _ => None,
            }
        }
        ProtocolId::Isnap => {
            if parts.len() != 7 {
                return None;
            }
            let (enc_ak, lifetime, seq_no, saids) = common(parts)?;
            match (&parts[4], &parts[5], &parts[6]) {
                (Term::Cert { subject, .. }, Term::Timestamp(ts), sig @ Term::Sig(_, _)) => {
                    Some(ReplyView {
                        enc_ak,
                        lifetime,
                        seq_no,
                        saids,
                        bs_cert_subject: Some(subject.clone()),
                        nonce_echo: None,
                        bs_nonce: None,
                        ts: Some(*ts),
                        sig: Some(sig.clone()),
                    })
                }
                _ => None,
            }
        }
    }
}

/// Fields of the authorization acknowledgement (message 4; ISNAP message 3).
#[derive(Debug, Clone)]
pub struct AckFields {
    pub ss: NodeId,
    pub bs: NodeId,
    pub mac: [u8; 6],
    /// Responder nonce echoed back (nonce protocols only).
    pub nonce_echo: Option<u64>,
    pub ts: Option<i64>,
}

pub fn build_ack(p: ProtocolId, f: &AckFields) -> Option<Term> {
    let enc_mac =
        Term::enc(KeyRef::public(f.bs.clone()), Term::MacId(f.mac)).expect("public key encrypts");
    let mut parts = match p {
        ProtocolId::Pkmv1 | ProtocolId::Tsa => return None,
        // the hardware identity rides in clear text next to its ciphertext
        ProtocolId::Pkmv2 => {
            vec![Term::Nonce(f.nonce_echo?), Term::MacId(f.mac), enc_mac]
        }
        ProtocolId::Ha => {
            vec![
                Term::Nonce(f.nonce_echo?),
                Term::MacId(f.mac),
                enc_mac,
                Term::Timestamp(f.ts?),
            ]
        }
        ProtocolId::Isnap => vec![enc_mac, Term::Timestamp(f.ts?)],
    };
    let body = Term::Tuple(parts.clone());
    let sig = Term::sig(KeyRef::private(f.ss.clone()), body).expect("private key signs");
    parts.push(sig);
    Some(Term::Tuple(parts))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckView {
    pub nonce_echo: Option<u64>,
    pub plain_mac: Option<[u8; 6]>,
    pub enc_mac: Term,
    pub ts: Option<i64>,
    pub sig: Term,
}

impl AckView {
    pub fn signed_body(&self, p: ProtocolId) -> Option<Term> {
        let parts = match p {
            ProtocolId::Pkmv1 | ProtocolId::Tsa => return None,
            ProtocolId::Pkmv2 => vec![
                Term::Nonce(self.nonce_echo?),
                Term::MacId(self.plain_mac?),
                self.enc_mac.clone(),
            ],
            ProtocolId::Ha => vec![
                Term::Nonce(self.nonce_echo?),
                Term::MacId(self.plain_mac?),
                self.enc_mac.clone(),
                Term::Timestamp(self.ts?),
            ],
            ProtocolId::Isnap => vec![self.enc_mac.clone(), Term::Timestamp(self.ts?)],
        };
        Some(Term::Tuple(parts))
    }
}

pub fn parse_ack(p: ProtocolId, t: &Term) -> Option<AckView> {
    let parts = t.as_tuple()?;
    match (p, parts) {
        (
            ProtocolId::Pkmv2,
            [Term::Nonce(echo), Term::MacId(mac), enc @ Term::Enc(_, _), sig @ Term::Sig(_, _)],
        ) => Some(AckView {
            nonce_echo: Some(*echo),
            plain_mac: Some(*mac),
            enc_mac: enc.clone(),
            ts: None,
            sig: sig.clone(),
        }),
        (
            ProtocolId::Ha,
            [Term::Nonce(echo), Term::MacId(mac), enc @ Term::Enc(_, _), Term::Timestamp(ts), sig @ Term::Sig(_, _)],
        ) => Some(AckView {
            nonce_echo: Some(*echo),
            plain_mac: Some(*mac),
            enc_mac: enc.clone(),
            ts: Some(*ts),
            sig: sig.clone(),
        }),
        (
            ProtocolId::Isnap,
            [enc @ Term::Enc(_, _), Term::Timestamp(ts), sig @ Term::Sig(_, _)],
        ) => Some(AckView {
            nonce_echo: None,
            plain_mac: None,
            enc_mac: enc.clone(),
            ts: Some(*ts),
            sig: sig.clone(),
        }),
        _ => None,
    }
}
