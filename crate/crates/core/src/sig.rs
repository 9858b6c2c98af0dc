//! Symbolic (Dolev-Yao style) signatures and the observation ledger.
//!
//! Tokens are pure values: signing is deterministic, verification is exact
//! equality on (signer, payload), and unforgeability is not a cryptographic
//! property but a *rule* enforced by the simulator: a faulty node may only
//! emit a token signed by an honest node if some faulty node already received
//! a message carrying that token. The [`ObservationLedger`] tracks the
//! earliest such reception per token and gates every faulty send.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::TimePoint;
use crate::NodeId;

/// Canonical payload bytes for a signed statement: the UTF-8 of
/// `"tag|round|value"` prefixed with its byte length (8 bytes, big endian).
/// Stable across platforms so traces diff bit-exactly.
pub fn encode_payload(tag: &str, round: u64, value: &str) -> Vec<u8> {
    let body = format!("{tag}|{round}|{value}");
    let mut out = Vec::with_capacity(8 + body.len());
    out.extend_from_slice(&(body.len() as u64).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

/// A signature on a payload. Two tokens are equal iff signer and payload are
/// equal; re-signing the same payload yields the identical token.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SignatureToken {
    pub signer: NodeId,
    #[serde(with = "payload_text")]
    pub payload: Vec<u8>,
    /// Stable 64-bit digest of (signer, payload); identification only.
    pub unique_id: u64,
}

/// Payloads are length-prefixed UTF-8; serialize just the text part.
mod payload_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        let text = std::str::from_utf8(bytes.get(8..).unwrap_or(b""))
            .map_err(serde::ser::Error::custom)?;
        ser.serialize_str(text)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(de)?;
        let mut out = Vec::with_capacity(8 + text.len());
        out.extend_from_slice(&(text.len() as u64).to_be_bytes());
        out.extend_from_slice(text.as_bytes());
        Ok(out)
    }
}

impl std::fmt::Debug for SignatureToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let text = std::str::from_utf8(self.payload.get(8..).unwrap_or(b"")).unwrap_or("<bin>");
        write!(f, "sig({},{})", self.signer, text)
    }
}

/// FNV-1a over signer id and payload bytes; stable across runs and platforms.
fn token_digest(signer: NodeId, payload: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for b in signer.0.to_be_bytes().iter().chain(payload.iter()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

/// Produces `signer`'s token on `payload`. Deterministic and idempotent.
pub fn sign(signer: NodeId, payload: &[u8]) -> SignatureToken {
    SignatureToken {
        signer,
        payload: payload.to_vec(),
        unique_id: token_digest(signer, payload),
    }
}

/// True iff `token` is exactly `sign(claimed_signer, payload)`.
pub fn verify(claimed_signer: NodeId, token: &SignatureToken, payload: &[u8]) -> bool {
    token.signer == claimed_signer && token.payload == payload
}

/// Earliest time any faulty node received a message carrying each token.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ObservationLedger {
    entries: BTreeMap<SignatureToken, TimePoint>,
}

impl ObservationLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records that a faulty node received `token` at `time`; earlier
    /// observations win.
    pub fn observe(&mut self, token: &SignatureToken, time: &TimePoint) {
        match self.entries.get_mut(token) {
            Some(existing) if &*existing <= time => {}
            Some(existing) => *existing = time.clone(),
            None => {
                self.entries.insert(token.clone(), time.clone());
            }
        }
    }

    pub fn observed_at(&self, token: &SignatureToken) -> Option<&TimePoint> {
        self.entries.get(token)
    }

    /// The unforgeability gate: a faulty node may send a message at
    /// `send_time` iff every embedded token with an honest signer was
    /// observed by some faulty node at or before `send_time`. Tokens from
    /// corrupted signers are always permitted.
    pub fn adversary_may_send<'a, I>(
        &self,
        tokens: I,
        send_time: &TimePoint,
        corrupted: &std::collections::BTreeSet<NodeId>,
    ) -> Result<(), SignatureToken>
    where
        I: IntoIterator<Item = &'a SignatureToken>,
    {
        for token in tokens {
            if corrupted.contains(&token.signer) {
                continue;
            }
            match self.entries.get(token) {
                Some(seen) if seen <= send_time => {}
                _ => return Err(token.clone()),
            }
        }
        Ok(())
    }
}
