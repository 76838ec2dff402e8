//! Symbolic message algebra shared by the protocols and the adversary.
//!
//! Messages are terms, not byte strings: encryption and signatures are
//! perfect and purely structural. A [`SizeModel`] maps each term to the
//! number of bytes it would occupy on the wire, which is what the
//! transmission-overhead accounting runs on.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity of a protocol principal (a subscriber station, base station,
/// or the adversary node).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(name: impl Into<String>) -> Self {
        NodeId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KeyKind {
    Public,
    Private,
    Symmetric,
}

/// Reference to a key by kind and owner. No key material exists; two
/// references are the same key iff they are structurally equal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct KeyRef {
    pub kind: KeyKind,
    pub owner: NodeId,
}

impl KeyRef {
    pub fn public(owner: impl Into<NodeId>) -> Self {
        KeyRef {
            kind: KeyKind::Public,
            owner: owner.into(),
        }
    }

    pub fn private(owner: impl Into<NodeId>) -> Self {
        KeyRef {
            kind: KeyKind::Private,
            owner: owner.into(),
        }
    }

    pub fn symmetric(owner: impl Into<NodeId>) -> Self {
        KeyRef {
            kind: KeyKind::Symmetric,
            owner: owner.into(),
        }
    }

    /// The key that undoes this one: private <-> public of the same owner,
    /// symmetric keys are their own inverse.
    pub fn inverse(&self) -> KeyRef {
        let kind = match self.kind {
            KeyKind::Public => KeyKind::Private,
            KeyKind::Private => KeyKind::Public,
            KeyKind::Symmetric => KeyKind::Symmetric,
        };
        KeyRef {
            kind,
            owner: self.owner.clone(),
        }
    }
}

impl fmt::Display for KeyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            KeyKind::Public => "pub",
            KeyKind::Private => "priv",
            KeyKind::Symmetric => "sym",
        };
        write!(f, "{kind}:{}", self.owner)
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

/// A symbolic protocol message or message component.
///
/// Equality is structural and total; the ordering exists so terms can live
/// in ordered sets, which keeps every trace deterministic.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    /// Named protocol constant (message labels, capability strings).
    Atom(String),
    /// 64-bit random message-linking token.
    Nonce(u64),
    /// Epoch seconds, 4 bytes wide on the wire.
    Timestamp(i64),
    /// Certificate binding a subject to its public key.
    Cert { subject: NodeId, pubkey: KeyRef },
    /// A bare key reference travelling in a message.
    Key(KeyRef),
    /// Authorization key material, identified symbolically.
    AuthKey(u64),
    /// 6-byte hardware address.
    MacId([u8; 6]),
    /// 16-bit basic connection identity code.
    Bcid(u16),
    /// 4-byte capability bitfield.
    Capabilities(u32),
    /// Security association identifiers offered in the authorization reply.
    SaidList(Vec<u16>),
    /// Key lifetime in seconds.
    Lifetime(u32),
    /// Small message sequence number.
    SeqNo(u8),
    /// Encryption of `body` under a public or symmetric key.
    Enc(KeyRef, Box<Term>),
    /// Signature over `body` with a private key. The body is carried for
    /// verification only; on the wire a signature is a fixed-size blob.
    Sig(KeyRef, Box<Term>),
    /// Ordered concatenation of parts.
    Tuple(Vec<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("encryption key must be public or symmetric, got {0}")]
    BadEncKey(KeyRef),
    #[error("signing key must be private, got {0}")]
    BadSigKey(KeyRef),
}

impl Term {
    pub fn atom(name: impl Into<String>) -> Term {
        Term::Atom(name.into())
    }

    pub fn cert(subject: impl Into<NodeId>) -> Term {
        let subject = subject.into();
        let pubkey = KeyRef::public(subject.clone());
        Term::Cert { subject, pubkey }
    }

    /// Encrypt `body` under `key`. Only public and symmetric keys encrypt.
    pub fn enc(key: KeyRef, body: Term) -> Result<Term, TermError> {
        match key.kind {
            KeyKind::Public | KeyKind::Symmetric => Ok(Term::Enc(key, Box::new(body))),
            KeyKind::Private => Err(TermError::BadEncKey(key)),
        }
    }

    /// Sign `body` with `key`. Only private keys sign.
    pub fn sig(key: KeyRef, body: Term) -> Result<Term, TermError> {
        match key.kind {
            KeyKind::Private => Ok(Term::Sig(key, Box::new(body))),
            KeyKind::Public | KeyKind::Symmetric => Err(TermError::BadSigKey(key)),
        }
    }

    pub fn tuple(parts: impl Into<Vec<Term>>) -> Term {
        Term::Tuple(parts.into())
    }

    /// Check the key-kind constraints recursively.
    pub fn validate(&self) -> Result<(), TermError> {
        match self {
            Term::Enc(k, body) => {
                if k.kind == KeyKind::Private {
                    return Err(TermError::BadEncKey(k.clone()));
                }
                body.validate()
            }
            Term::Sig(k, body) => {
                if k.kind != KeyKind::Private {
                    return Err(TermError::BadSigKey(k.clone()));
                }
                body.validate()
            }
            Term::Tuple(parts) => parts.iter().try_for_each(Term::validate),
            _ => Ok(()),
        }
    }

    /// Symbolic decryption: yields the body iff `key` is the inverse of the
    /// encryption key.
    pub fn decrypt(&self, key: &KeyRef) -> Option<&Term> {
        match self {
            Term::Enc(k, body) if k.inverse() == *key => Some(body),
            _ => None,
        }
    }

    /// Symbolic signature check: true iff this term is a signature made
    /// with `signer`'s private key.
    pub fn verify_signed_by(&self, signer: &NodeId) -> bool {
        matches!(self, Term::Sig(k, _) if k.kind == KeyKind::Private && k.owner == *signer)
    }

    /// Signature check that also pins the signed body.
    pub fn verify_sig_over(&self, signer: &NodeId, expected_body: &Term) -> bool {
        match self {
            Term::Sig(k, body) => {
                k.kind == KeyKind::Private && k.owner == *signer && **body == *expected_body
            }
            _ => false,
        }
    }

    pub fn as_tuple(&self) -> Option<&[Term]> {
        match self {
            Term::Tuple(parts) => Some(parts),
            _ => None,
        }
    }

    /// Every subterm a passive observer can read without any key: descends
    /// through tuples and signature bodies, stops at ciphertext boundaries.
    /// Includes the term itself.
    pub fn visible_subterms(&self) -> Vec<&Term> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            out.push(t);
            match t {
                Term::Tuple(parts) => stack.extend(parts.iter()),
                Term::Sig(_, body) => stack.push(body),
                _ => {}
            }
        }
        out
    }

    /// True iff `needle` occurs somewhere in this term outside every
    /// ciphertext.
    pub fn exposes(&self, needle: &Term) -> bool {
        self.visible_subterms().into_iter().any(|t| t == needle)
    }
}

impl fmt::Display for Term {
    /// Canonical one-line text form used in trace logs.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(name) => write!(f, "atom({name})"),
            Term::Nonce(id) => write!(f, "nonce({id:#018x})"),
            Term::Timestamp(t) => write!(f, "ts({t})"),
            Term::Cert { subject, .. } => write!(f, "cert({subject})"),
            Term::Key(k) => write!(f, "key({k})"),
            Term::AuthKey(id) => write!(f, "ak({id:#018x})"),
            Term::MacId(addr) => write!(
                f,
                "mac({:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x})",
                addr[0], addr[1], addr[2], addr[3], addr[4], addr[5]
            ),
            Term::Bcid(code) => write!(f, "bcid({code})"),
            Term::Capabilities(bits) => write!(f, "caps({bits:#010x})"),
            Term::SaidList(entries) => {
                write!(f, "saids[")?;
                for (i, e) in entries.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{e}")?;
                }
                write!(f, "]")
            }
            Term::Lifetime(secs) => write!(f, "life({secs})"),
            Term::SeqNo(n) => write!(f, "seq({n})"),
            Term::Enc(k, body) => write!(f, "enc({k},{body})"),
            Term::Sig(k, body) => write!(f, "sig({k},{body})"),
            Term::Tuple(parts) => {
                write!(f, "tuple[")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "]")
            }
        }
    }
}

/// Wire-size model: bytes per term kind plus block rounding for ciphertext.
///
/// The absolute numbers are fixed constants; only the per-protocol handshake
/// orderings they induce are meaningful, and the report layer recomputes
/// those orderings from whatever model it is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeModel {
    pub atom: u64,
    pub nonce: u64,
    pub timestamp: u64,
    pub cert: u64,
    pub key_ref: u64,
    pub auth_key: u64,
    pub mac_id: u64,
    pub bcid: u64,
    pub capabilities: u64,
    pub said_entry: u64,
    pub lifetime: u64,
    pub seq_no: u64,
    pub sig: u64,
    /// Ciphertext under a public key is padded up to this block size.
    pub enc_public_block: u64,
    /// Ciphertext under a symmetric key is padded up to this block size.
    pub enc_symmetric_block: u64,
}

impl Default for SizeModel {
    fn default() -> Self {
        SizeModel {
            atom: 4,
            nonce: 8,
            timestamp: 4,
            cert: 512,
            key_ref: 4,
            auth_key: 20,
            mac_id: 6,
            bcid: 2,
            capabilities: 4,
            said_entry: 2,
            lifetime: 4,
            seq_no: 1,
            sig: 128,
            enc_public_block: 128,
            enc_symmetric_block: 16,
        }
    }
}

impl SizeModel {
    /// Wire size of `t` in bytes. Deterministic recursive sum; tuples weigh
    /// exactly the sum of their parts, ciphertext rounds up to the block
    /// size of its key kind, and a signature is a fixed-size blob no matter
    /// what it covers.
    pub fn encoded_size(&self, t: &Term) -> Result<u64, TermError> {
        t.validate()?;
        Ok(self.size_unchecked(t))
    }

    fn size_unchecked(&self, t: &Term) -> u64 {
        match t {
            Term::Atom(_) => self.atom,
            Term::Nonce(_) => self.nonce,
            Term::Timestamp(_) => self.timestamp,
            Term::Cert { .. } => self.cert,
            Term::Key(_) => self.key_ref,
            Term::AuthKey(_) => self.auth_key,
            Term::MacId(_) => self.mac_id,
            Term::Bcid(_) => self.bcid,
            Term::Capabilities(_) => self.capabilities,
            Term::SaidList(entries) => self.said_entry * entries.len() as u64,
            Term::Lifetime(_) => self.lifetime,
            Term::SeqNo(_) => self.seq_no,
            Term::Sig(_, _) => self.sig,
            Term::Enc(k, body) => {
                let block = match k.kind {
                    KeyKind::Symmetric => self.enc_symmetric_block,
                    _ => self.enc_public_block,
                };
                let body = self.size_unchecked(body);
                if block <= 1 {
                    body.max(1)
                } else {
                    body.div_ceil(block).max(1) * block
                }
            }
            Term::Tuple(parts) => parts.iter().map(|p| self.size_unchecked(p)).sum(),
        }
    }
}
