//! Deduction-closed knowledge set of a symbolic eavesdropper.
//!
//! Observation analyzes a message to a fixpoint: tuples split, signature
//! bodies are readable, ciphertext opens only when the inverse key is
//! already known. Synthesis (`can_derive`) answers whether a term could be
//! built from what was seen: composites from derivable parts, free fields
//! (timestamps, lifetimes, capability bits) at will, but nonces, hardware
//! identities, keys and certificates only if captured — or explicitly
//! minted through [`Knowledge::learn`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::term::{KeyKind, Term};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knowledge {
    terms: BTreeSet<Term>,
}

impl Knowledge {
    pub fn new() -> Self {
        Self::default()
    }

    /// Observe one message: add it and everything analysis can extract.
    pub fn observe(&mut self, msg: &Term) {
        if !self.terms.insert(msg.clone()) {
            return;
        }
        self.analyze();
    }

    /// Record a term the adversary created itself (a minted key, its own
    /// nonce). Indistinguishable from an observation afterwards.
    pub fn learn(&mut self, term: Term) {
        self.observe(&term);
    }

    /// Re-apply the analysis rules until nothing new appears.
    fn analyze(&mut self) {
        loop {
            let mut fresh: Vec<Term> = Vec::new();
            for t in &self.terms {
                match t {
                    Term::Tuple(parts) => {
                        fresh.extend(parts.iter().filter(|p| !self.terms.contains(p)).cloned());
                    }
                    // a signature does not conceal what it covers
                    Term::Sig(_, body) => {
                        if !self.terms.contains(body) {
                            fresh.push((**body).clone());
                        }
                    }
                    Term::Enc(k, body) => {
                        if self.terms.contains(&Term::Key(k.inverse()))
                            && !self.terms.contains(body)
                        {
                            fresh.push((**body).clone());
                        }
                    }
                    // reading a certificate yields the public key inside
                    Term::Cert { pubkey, .. } => {
                        let k = Term::Key(pubkey.clone());
                        if !self.terms.contains(&k) {
                            fresh.push(k);
                        }
                    }
                    _ => {}
                }
            }
            if fresh.is_empty() {
                return;
            }
            self.terms.extend(fresh);
        }
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.terms.contains(t)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Term> {
        self.terms.iter()
    }

    /// Every private key currently readable.
    pub fn known_private_keys(&self) -> impl Iterator<Item = &Term> {
        self.terms
            .iter()
            .filter(|t| matches!(t, Term::Key(k) if k.kind == KeyKind::Private))
    }

    /// Can the adversary produce `t`? Either it was captured outright, it
    /// is a free field anyone can write, or it can be assembled from
    /// derivable parts and keys.
    pub fn can_derive(&self, t: &Term) -> bool {
        if self.terms.contains(t) {
            return true;
        }
        match t {
            // fields with public, enumerable values: anyone can write them
            Term::Atom(_)
            | Term::Timestamp(_)
            | Term::Bcid(_)
            | Term::Capabilities(_)
            | Term::SaidList(_)
            | Term::Lifetime(_)
            | Term::SeqNo(_) => true,
            // unguessable or issued material: capture it or mint your own
            Term::Nonce(_)
            | Term::AuthKey(_)
            | Term::MacId(_)
            | Term::Key(_)
            | Term::Cert { .. } => false,
            Term::Tuple(parts) => parts.iter().all(|p| self.can_derive(p)),
            Term::Enc(k, body) => {
                self.terms.contains(&Term::Key(k.clone())) && self.can_derive(body)
            }
            Term::Sig(k, body) => {
                self.terms.contains(&Term::Key(k.clone())) && self.can_derive(body)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{KeyRef, NodeId};

    fn ss() -> NodeId {
        NodeId::from("ss1")
    }

    #[test]
    fn tuples_split_on_observation() {
        let mut k = Knowledge::new();
        k.observe(&Term::tuple(vec![Term::cert(ss()), Term::Nonce(0x51)]));
        assert!(k.contains(&Term::cert(ss())));
        assert!(k.contains(&Term::Nonce(0x51)));
    }

    #[test]
    fn ciphertext_stays_opaque_without_the_key() {
        let mut k = Knowledge::new();
        k.observe(&Term::enc(KeyRef::public(ss()), Term::AuthKey(0xa1)).unwrap());
        assert!(!k.can_derive(&Term::AuthKey(0xa1)));
        // the ciphertext itself can still be replayed
        assert!(k.can_derive(&Term::enc(KeyRef::public(ss()), Term::AuthKey(0xa1)).unwrap()));
    }

    #[test]
    fn ciphertext_opens_once_the_inverse_key_is_known() {
        let mut k = Knowledge::new();
        k.learn(Term::Key(KeyRef::private(ss())));
        k.observe(&Term::enc(KeyRef::public(ss()), Term::AuthKey(0xa1)).unwrap());
        assert!(k.can_derive(&Term::AuthKey(0xa1)));
    }

    #[test]
    fn key_learned_after_the_ciphertext_still_opens_it() {
        let mut k = Knowledge::new();
        k.observe(&Term::enc(KeyRef::public(ss()), Term::Nonce(9)).unwrap());
        assert!(!k.can_derive(&Term::Nonce(9)));
        k.learn(Term::Key(KeyRef::private(ss())));
        assert!(k.can_derive(&Term::Nonce(9)));
    }

    #[test]
    fn signature_bodies_are_readable_but_not_forgeable() {
        let mut k = Knowledge::new();
        let body = Term::tuple(vec![Term::Nonce(7), Term::Timestamp(100)]);
        k.observe(&Term::sig(KeyRef::private("bs1"), body.clone()).unwrap());
        assert!(k.contains(&Term::Nonce(7)));
        // replaying the observed signature is fine
        assert!(k.can_derive(&Term::sig(KeyRef::private("bs1"), body).unwrap()));
        // signing something new with that key is not
        let other = Term::tuple(vec![Term::Nonce(8), Term::Timestamp(100)]);
        assert!(!k.can_derive(&Term::sig(KeyRef::private("bs1"), other).unwrap()));
    }

    #[test]
    fn observation_is_monotone_and_closure_is_a_fixpoint() {
        let msg = Term::tuple(vec![
            Term::cert(ss()),
            Term::enc(KeyRef::public(ss()), Term::Nonce(1)).unwrap(),
        ]);
        let mut k = Knowledge::new();
        k.learn(Term::Key(KeyRef::private(ss())));
        let before: Vec<Term> = k.iter().cloned().collect();
        k.observe(&msg);
        for t in &before {
            assert!(k.contains(t), "observe never forgets");
        }
        let after = k.clone();
        k.observe(&msg);
        assert_eq!(k, after, "re-observing adds nothing");
    }

    #[test]
    fn free_fields_are_always_derivable() {
        let k = Knowledge::new();
        assert!(k.can_derive(&Term::Timestamp(123)));
        assert!(k.can_derive(&Term::Lifetime(86_400)));
        assert!(k.can_derive(&Term::SeqNo(0)));
        assert!(k.can_derive(&Term::SaidList(vec![1, 2])));
        assert!(k.can_derive(&Term::Bcid(101)));
        assert!(k.can_derive(&Term::Capabilities(0xf)));
        assert!(!k.can_derive(&Term::Nonce(1)));
        assert!(!k.can_derive(&Term::MacId([2, 0, 0, 0, 0, 1])));
        assert!(!k.can_derive(&Term::cert(ss())));
    }

    #[test]
    fn encrypting_requires_holding_the_key() {
        let mut k = Knowledge::new();
        let ct = Term::enc(KeyRef::public(ss()), Term::Timestamp(5)).unwrap();
        assert!(!k.can_derive(&ct), "no key, no ciphertext");
        k.learn(Term::Key(KeyRef::public(ss())));
        assert!(k.can_derive(&ct));
    }

    #[test]
    fn certificates_surrender_their_public_key() {
        let mut k = Knowledge::new();
        k.observe(&Term::cert(ss()));
        assert!(k.contains(&Term::Key(KeyRef::public(ss()))));
        assert!(k.can_derive(&Term::enc(KeyRef::public(ss()), Term::Timestamp(1)).unwrap()));
    }

    /// Reference closure: saturate derivability over the full subterm
    /// universe of everything observed, with no shortcuts. The production
    /// rules must agree with it on every candidate.
    fn brute_force_closure(observed: &[Term], minted: &[Term]) -> BTreeSet<Term> {
        fn subterms(t: &Term, out: &mut BTreeSet<Term>) {
            out.insert(t.clone());
            match t {
                Term::Tuple(parts) => parts.iter().for_each(|p| subterms(p, out)),
                Term::Enc(k, body) | Term::Sig(k, body) => {
                    out.insert(Term::Key(k.clone()));
                    out.insert(Term::Key(k.inverse()));
                    subterms(body, out);
                }
                Term::Cert { pubkey, .. } => {
                    out.insert(Term::Key(pubkey.clone()));
                }
                _ => {}
            }
        }
        let mut universe = BTreeSet::new();
        for t in observed.iter().chain(minted) {
            subterms(t, &mut universe);
        }
        let mut known: BTreeSet<Term> = observed.iter().chain(minted).cloned().collect();
        loop {
            let mut grew = false;
            let snapshot: Vec<Term> = known.iter().cloned().collect();
            // analysis
            for t in &snapshot {
                let extracted: Vec<Term> = match t {
                    Term::Tuple(parts) => parts.clone(),
                    Term::Sig(_, body) => vec![(**body).clone()],
                    Term::Enc(k, body) if known.contains(&Term::Key(k.inverse())) => {
                        vec![(**body).clone()]
                    }
                    Term::Cert { pubkey, .. } => vec![Term::Key(pubkey.clone())],
                    _ => vec![],
                };
                for e in extracted {
                    grew |= known.insert(e);
                }
            }
            // synthesis over the universe
            for t in &universe {
                if known.contains(t) {
                    continue;
                }
                let buildable = match t {
                    Term::Atom(_)
                    | Term::Timestamp(_)
                    | Term::Bcid(_)
                    | Term::Capabilities(_)
                    | Term::SaidList(_)
                    | Term::Lifetime(_)
                    | Term::SeqNo(_) => true,
                    Term::Tuple(parts) => parts.iter().all(|p| known.contains(p) || free(p)),
                    Term::Enc(k, body) | Term::Sig(k, body) => {
                        known.contains(&Term::Key(k.clone()))
                            && (known.contains(body.as_ref()) || free(body))
                    }
                    _ => false,
                };
                if buildable {
                    known.insert(t.clone());
                    grew = true;
                }
            }
            if !grew {
                return known;
            }
        }
    }

    fn free(t: &Term) -> bool {
        matches!(
            t,
            Term::Atom(_)
                | Term::Timestamp(_)
                | Term::Bcid(_)
                | Term::Capabilities(_)
                | Term::SaidList(_)
                | Term::Lifetime(_)
                | Term::SeqNo(_)
        )
    }

    #[test]
    fn derivability_matches_the_brute_force_closure() {
        // a realistic capture: full mutual handshake plus the adversary's
        // own key pair
        let bs = NodeId::from("bs1");
        let minted = vec![
            Term::Key(KeyRef::private("adv")),
            Term::Key(KeyRef::public("adv")),
            Term::cert(NodeId::from("adv")),
        ];
        let reply_body = Term::tuple(vec![
            Term::enc(KeyRef::public(ss()), Term::AuthKey(0xa1)).unwrap(),
            Term::Lifetime(86_400),
            Term::cert(bs.clone()),
            Term::Nonce(0x51),
            Term::Nonce(0xb5),
        ]);
        let observed = vec![
            Term::cert(ss()),
            Term::tuple(vec![
                Term::cert(ss()),
                Term::Capabilities(0xf),
                Term::Bcid(101),
                Term::Nonce(0x51),
            ]),
            Term::tuple(vec![
                reply_body.clone(),
                Term::sig(KeyRef::private(bs.clone()), reply_body).unwrap(),
            ]),
            Term::tuple(vec![
                Term::Nonce(0xb5),
                Term::MacId([2, 0, 0, 0, 0, 1]),
                Term::enc(KeyRef::public(bs), Term::MacId([2, 0, 0, 0, 0, 1])).unwrap(),
            ]),
        ];
        let mut k = Knowledge::new();
        for t in &minted {
            k.learn(t.clone());
        }
        for t in &observed {
            k.observe(t);
        }
        let oracle = brute_force_closure(&observed, &minted);
        for t in &oracle {
            assert!(
                k.can_derive(t),
                "oracle derives {t}, production rules must too"
            );
        }
        // and the punchline in both directions: the key stays sealed
        assert!(!oracle.contains(&Term::AuthKey(0xa1)));
        assert!(!k.can_derive(&Term::AuthKey(0xa1)));
    }
}
