//! Claim mode: a WHH offers a finding to a user, sealed under the user's key
//! and stored on a fog node. Only digests reach the chain.

use serde::{Deserialize, Serialize};

use super::{Protocol, WorkflowError};
use crate::codec::Encoder;
use crate::digest::Digest;
use crate::ids::{KeyId, NodeId, OfferId};
use crate::ledger::{TxBody, TxKind};
use crate::oracle::Severity;
use crate::registry::{Outcome, RegistryError, Role};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimFinding {
    pub target_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vuln_id: Option<String>,
    pub pattern: String,
    pub severity: Severity,
}

impl ClaimFinding {
    fn encode_into(&self, e: &mut Encoder) {
        e.str(&self.target_id)
            .str(self.vuln_id.as_deref().unwrap_or(""))
            .str(&self.pattern)
            .str(&self.severity.to_string());
    }
}

/// Stand-in for an encrypted payload: the plaintext is held but only
/// released to the matching key.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedEnvelope {
    pub envelope_id: String,
    pub author: NodeId,
    pub recipient_key_id: KeyId,
    pub ciphertext_digest: Digest,
    pub stored_at: NodeId,
    finding: ClaimFinding,
}

impl SealedEnvelope {
    pub fn seal(envelope_id: String, author: NodeId, key: KeyId, stored_at: NodeId, finding: ClaimFinding) -> Self {
        let ciphertext_digest = Self::ciphertext_digest(&key, &finding);
        Self {
            envelope_id,
            author,
            recipient_key_id: key,
            ciphertext_digest,
            stored_at,
            finding,
        }
    }

    pub fn ciphertext_digest(key: &KeyId, finding: &ClaimFinding) -> Digest {
        let mut e = Encoder::new();
        e.str(key.as_str());
        finding.encode_into(&mut e);
        e.digest_of()
    }

    pub fn open(&self, key: &KeyId) -> Result<&ClaimFinding, WorkflowError> {
        if *key != self.recipient_key_id {
            return Err(WorkflowError::WrongKey(self.envelope_id.clone()));
        }
        Ok(&self.finding)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OfferStatus {
    Offered,
    Claimed,
    Declined,
    Expired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimDecision {
    Claim,
    Decline,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimOffer {
    pub offer_id: OfferId,
    pub envelope_id: String,
    pub price: u64,
    pub status: OfferStatus,
    pub author: NodeId,
    pub buyer: NodeId,
    pub expires_at: u64,
}

impl Protocol {
    pub fn submit_claim(
        &mut self,
        offer_id: OfferId,
        author: &NodeId,
        buyer: &NodeId,
        price: u64,
        finding: ClaimFinding,
    ) -> Result<&ClaimOffer, WorkflowError> {
        if self.offers.contains_key(&offer_id) {
            return Err(WorkflowError::DuplicateOffer(offer_id));
        }
        let profile = self.registry.get(author)?;
        if profile.abandoned {
            return Err(RegistryError::AbandonedNode(author.clone()).into());
        }
        if !profile.has_role(Role::Whh) {
            return Err(WorkflowError::RoleViolation(author.clone(), Role::Whh));
        }
        let key = self
            .registry
            .get(buyer)
            .ok()
            .and_then(|b| b.key_id.clone())
            .ok_or_else(|| WorkflowError::UnknownUser(buyer.clone()))?;
        let fog = self.nearest_fog(buyer)?;
        let envelope_id = format!("env:{offer_id}");
        let envelope = SealedEnvelope::seal(envelope_id.clone(), author.clone(), key, fog.clone(), finding);
        self.journal.record(
            TxBody::event(TxKind::ClaimOffered, author.as_str(), offer_id.as_str())
                .digest(envelope.ciphertext_digest)
                .tag(format!("price:{price}")),
        );
        self.envelopes.insert(envelope_id.clone(), envelope);
        let expires_at = self.tick() + self.params.claim_ttl;
        self.trace(
            format!("claim:{offer_id}"),
            "Offered",
            format!("to {buyer} via {fog} for {price}"),
        );
        Ok(self.offers.entry(offer_id.clone()).or_insert(ClaimOffer {
            offer_id,
            envelope_id,
            price,
            status: OfferStatus::Offered,
            author: author.clone(),
            buyer: buyer.clone(),
            expires_at,
        }))
    }

    fn open_offer(&self, offer_id: &OfferId) -> Result<&ClaimOffer, WorkflowError> {
        let offer = self
            .offers
            .get(offer_id)
            .ok_or_else(|| WorkflowError::UnknownOffer(offer_id.clone()))?;
        if offer.status != OfferStatus::Offered {
            return Err(WorkflowError::OfferClosed {
                id: offer_id.clone(),
                status: offer.status,
            });
        }
        Ok(offer)
    }

    /// The buyer opens the envelope and decides. A claim the buyer cannot
    /// afford fails with `InsufficientFunds` and leaves the offer open.
    pub fn decide_claim(&mut self, offer_id: &OfferId, decision: ClaimDecision) -> Result<OfferStatus, WorkflowError> {
        let offer = self.open_offer(offer_id)?.clone();
        let key = self
            .registry
            .get(&offer.buyer)?
            .key_id
            .clone()
            .ok_or_else(|| WorkflowError::UnknownUser(offer.buyer.clone()))?;
        self.envelopes[&offer.envelope_id].open(&key)?;

        let status = match decision {
            ClaimDecision::Claim => {
                self.accounts
                    .pay_claim(&offer.buyer, &offer.author, offer.price, offer_id.as_str(), &mut self.journal)?;
                self.complete(&offer.author)?;
                OfferStatus::Claimed
            }
            ClaimDecision::Decline => {
                self.punish(&offer.author, Outcome::ClaimFailed, offer_id.as_str())?;
                OfferStatus::Declined
            }
        };
        let tx = self.journal.record(
            TxBody::event(TxKind::ClaimDecided, offer.buyer.as_str(), offer_id.as_str())
                .tag(format!("{status:?}").to_lowercase()),
        );
        self.trigger_sync(tx);
        self.offers.get_mut(offer_id).expect("checked").status = status;
        self.trace(format!("claim:{offer_id}"), format!("{status:?}"), "");
        Ok(status)
    }

    /// Close an undecided offer once its deadline has passed. Returns whether
    /// it expired.
    pub fn expire_claim(&mut self, offer_id: &OfferId) -> Result<bool, WorkflowError> {
        let offer = self.open_offer(offer_id)?;
        if self.tick() < offer.expires_at {
            return Ok(false);
        }
        self.offers.get_mut(offer_id).expect("checked").status = OfferStatus::Expired;
        self.trace(format!("claim:{offer_id}"), "Expired", "");
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use sha2::{Digest as _, Sha256};

    use super::*;
    use crate::incentive::IncentiveError;
    use crate::workflows::testkit::*;
    use crate::workflows::ProtocolParams;

    fn world() -> Protocol {
        let mut p = protocol(ProtocolParams::default());
        add_fog(&mut p, "fog");
        add(&mut p, "user", &[Role::User], 0.0, 50);
        add(&mut p, "h", &[Role::Whh], 0.2, 0);
        p
    }

    fn finding() -> ClaimFinding {
        ClaimFinding {
            target_id: "site".into(),
            vuln_id: Some("v1".into()),
            pattern: "sqli".into(),
            severity: Severity::High,
        }
    }

    /// Independent byte-level recomputation of the envelope digest.
    fn expected_digest(key: &str, f: &ClaimFinding) -> String {
        let mut h = Sha256::new();
        for s in [key, &f.target_id, f.vuln_id.as_deref().unwrap_or(""), &f.pattern, "high"] {
            h.update((s.len() as u32).to_be_bytes());
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }

    #[test]
    fn offer_puts_only_digest_on_chain() {
        let mut p = world();
        let offer = p
            .submit_claim("o1".into(), &"h".into(), &"user".into(), 7, finding())
            .unwrap()
            .clone();
        assert_eq!(offer.status, OfferStatus::Offered);
        let env = &p.envelopes[&offer.envelope_id];
        assert_eq!(env.stored_at, NodeId::new("fog"));
        assert_eq!(env.ciphertext_digest.to_hex(), expected_digest("key-user", &finding()));
        let tx = p.journal.pending().last().unwrap();
        assert_eq!(tx.kind, TxKind::ClaimOffered);
        assert_eq!(tx.payload_digest, env.ciphertext_digest);
        assert!(!tx.tag.contains("sqli"));
    }

    #[test]
    fn claim_pays_author() {
        let mut p = world();
        p.submit_claim("o1".into(), &"h".into(), &"user".into(), 7, finding())
            .unwrap();
        assert_eq!(p.decide_claim(&"o1".into(), ClaimDecision::Claim).unwrap(), OfferStatus::Claimed);
        assert_eq!(p.accounts.balance_of_node(&"user".into()), 43);
        assert_eq!(p.accounts.balance_of_node(&"h".into()), 7);
        assert!(matches!(
            p.decide_claim(&"o1".into(), ClaimDecision::Claim),
            Err(WorkflowError::OfferClosed { .. })
        ));
        p.seal().unwrap();
        assert_eq!(p.views[&NodeId::new("h")].len(), p.ledger.len());
    }

    #[test]
    fn decline_penalizes_author() {
        let mut p = world();
        p.submit_claim("o1".into(), &"h".into(), &"user".into(), 7, finding())
            .unwrap();
        assert_eq!(p.decide_claim(&"o1".into(), ClaimDecision::Decline).unwrap(), OfferStatus::Declined);
        let penalty = p.journal.pending().iter().find(|t| t.kind == TxKind::Penalty).unwrap();
        assert_eq!((penalty.actor.as_str(), penalty.tag.as_str()), ("h", "ClaimFailed"));
        assert_eq!(p.accounts.balance_of_node(&"h".into()), 0);
    }

    #[test]
    fn unaffordable_claim_stays_open() {
        let mut p = world();
        p.submit_claim("o1".into(), &"h".into(), &"user".into(), 500, finding())
            .unwrap();
        assert!(matches!(
            p.decide_claim(&"o1".into(), ClaimDecision::Claim),
            Err(WorkflowError::Incentive(IncentiveError::InsufficientFunds { .. }))
        ));
        assert_eq!(p.offers[&OfferId::new("o1")].status, OfferStatus::Offered);
    }

    #[test]
    fn wrong_key_cannot_open() {
        let mut p = world();
        let offer = p
            .submit_claim("o1".into(), &"h".into(), &"user".into(), 7, finding())
            .unwrap()
            .clone();
        let env = &p.envelopes[&offer.envelope_id];
        assert_eq!(env.open(&KeyId::new("key-user")).unwrap(), &finding());
        assert_eq!(env.open(&KeyId::new("key-h")), Err(WorkflowError::WrongKey(offer.envelope_id)));
    }

    #[test]
    fn submit_checks_roles_and_user() {
        let mut p = world();
        assert!(matches!(
            p.submit_claim("o1".into(), &"user".into(), &"h".into(), 1, finding()),
            Err(WorkflowError::RoleViolation(_, Role::Whh))
        ));
        assert_eq!(
            p.submit_claim("o1".into(), &"h".into(), &"ghost".into(), 1, finding()).err(),
            Some(WorkflowError::UnknownUser("ghost".into()))
        );
    }

    #[test]
    fn offer_expires_after_ttl() {
        let mut p = world();
        p.submit_claim("o1".into(), &"h".into(), &"user".into(), 7, finding())
            .unwrap();
        assert!(!p.expire_claim(&"o1".into()).unwrap());
        p.advance_to(10).unwrap();
        assert!(p.expire_claim(&"o1".into()).unwrap());
        assert_eq!(p.offers[&OfferId::new("o1")].status, OfferStatus::Expired);
    }
}
