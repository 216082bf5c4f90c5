//! The authenticated-setting filter on permitted messages.

use std::collections::{BTreeSet, HashSet};

use crate::message::{for_each_signed_pair, Identifier, Message};
use crate::permission::PermissionSet;

/// Every signed pair contained in some received message.
#[derive(Clone, Debug, Default)]
pub struct SignedPairIndex {
    pairs: HashSet<(Identifier, Message)>,
}

impl SignedPairIndex {
    pub fn insert_message(&mut self, m: &Message) {
        for_each_signed_pair(m, &mut |u, inner| {
            self.pairs.insert((u, inner.clone()));
        });
    }

    pub fn contains(&self, signer: Identifier, inner: &Message) -> bool {
        self.pairs.contains(&(signer, inner.clone()))
    }
}

/// Whether `m` may be broadcast by the processor named `own` in the
/// authenticated setting: it must be in a received permission set, and every
/// foreign signed pair inside it must already occur in a received message.
pub fn authenticated_filter(
    own: Identifier,
    m: &Message,
    received: &BTreeSet<Message>,
    permissions: &PermissionSet,
) -> bool {
    let mut index = SignedPairIndex::default();
    for r in received {
        index.insert_message(r);
    }
    permissions.permits(m) && signatures_backed(own, m, &index)
}

/// The signature half of the filter, against a prebuilt index.
pub fn signatures_backed(own: Identifier, m: &Message, index: &SignedPairIndex) -> bool {
    let mut ok = true;
    for_each_signed_pair(m, &mut |u, inner| {
        if ok && u != own && !index.contains(u, inner) {
            ok = false;
        }
    });
    ok
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::sign;

    fn u(n: u32) -> Identifier {
        Identifier::new(n).unwrap()
    }

    #[test]
    fn forgery_is_blocked() {
        let forged = sign(&Message::general(0), u(1));
        let received: BTreeSet<_> = [Message::general(0)].into();
        assert!(!authenticated_filter(u(2), &forged, &received, &PermissionSet::universal()));
    }

    #[test]
    fn relaying_a_received_signature_is_allowed() {
        let relayed = sign(&sign(&Message::general(0), u(1)), u(2));
        let received: BTreeSet<_> = [sign(&Message::general(0), u(1))].into();
        assert!(authenticated_filter(u(2), &relayed, &received, &PermissionSet::universal()));
    }

    #[test]
    fn own_signature_always_allowed() {
        let m = sign(&Message::bit(1), u(3));
        let perms = PermissionSet::exactly(m.clone());
        assert!(authenticated_filter(u(3), &m, &BTreeSet::new(), &perms));
    }

    #[test]
    fn needs_permission_too() {
        let m = sign(&Message::bit(1), u(3));
        assert!(!authenticated_filter(u(3), &m, &BTreeSet::new(), &PermissionSet::empty()));
    }

    #[test]
    fn general_signature_cannot_be_invented() {
        let m = Message::general(1);
        assert!(!authenticated_filter(u(3), &m, &BTreeSet::new(), &PermissionSet::universal()));
    }
}
