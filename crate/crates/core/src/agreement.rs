//! Lock-step synchronous rounds: crusader broadcast and iterated approximate
//! agreement over it.
//!
//! One agreement iteration is two synchronous rounds. In the deal round every
//! dealer signs its value and sends it to all nodes; in the echo round every
//! node forwards what the dealer sent it. A receiver outputs the dealer's
//! value unless it saw two valid signatures on different values (or no valid
//! direct message at all), in which case it outputs bottom (`None`).
//!
//! The adversary is rushing: it sees all honest messages of the current round
//! (and the whole history) before choosing the faulty nodes' messages. Every
//! faulty send passes the observation-ledger gate; honest tokens become
//! observable the moment an honest node sends them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::TimePoint;
use crate::params::fault_budget;
use crate::rational::Rat;
use crate::sig::{encode_payload, sign, verify, ObservationLedger, SignatureToken};
use crate::NodeId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbPhase {
    Deal,
    Echo,
}

/// One broadcast message: which instance (iteration, dealer) it belongs to,
/// the claimed value, and the dealer signature backing it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CbMessage {
    pub iteration: u64,
    pub dealer: NodeId,
    pub phase: CbPhase,
    pub value: Rat,
    pub token: SignatureToken,
}

impl CbMessage {
    /// Canonical payload the dealer signs for this instance and value.
    pub fn payload(iteration: u64, value: &Rat) -> Vec<u8> {
        encode_payload("cb", iteration, &value.to_string())
    }

    pub fn token_valid(&self) -> bool {
        verify(
            self.dealer,
            &self.token,
            &Self::payload(self.iteration, &self.value),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SyncSend {
    pub from: NodeId,
    pub to: NodeId,
    pub msg: CbMessage,
}

/// Record of one delivered synchronous round, kept for adversary context and
/// for run logs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub iteration: u64,
    pub phase: CbPhase,
    pub sends: Vec<SyncSend>,
}

/// What the rushing adversary sees when choosing its messages for a round.
pub struct RoundContext<'a> {
    pub n: usize,
    pub iteration: u64,
    pub phase: CbPhase,
    pub corrupted: &'a BTreeSet<NodeId>,
    /// All previously delivered rounds.
    pub history: &'a [RoundRecord],
}

/// A Byzantine strategy for the synchronous engine. Returned sends must come
/// from corrupted nodes; embedded honest tokens must already be observable.
pub trait SyncAdversary {
    fn name(&self) -> &'static str;
    fn on_round(&mut self, ctx: &RoundContext<'_>, honest_sends: &[SyncSend]) -> Vec<SyncSend>;
}

/// Sends nothing; also usable as the fault-free adversary.
pub struct NullAdversary;

impl SyncAdversary for NullAdversary {
    fn name(&self) -> &'static str {
        "null"
    }
    fn on_round(&mut self, _ctx: &RoundContext<'_>, _honest: &[SyncSend]) -> Vec<SyncSend> {
        Vec::new()
    }
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("faulty node {from} sent unobserved honest token {token:?} in round ({iteration},{phase:?})")]
    Unforgeability {
        from: NodeId,
        token: SignatureToken,
        iteration: u64,
        phase: CbPhase,
    },
    #[error("node {node} saw {b} bottom outcomes, above the fault budget {f}")]
    FaultBudgetExceeded { node: NodeId, b: usize, f: usize },
    #[error("adversary produced a send from honest node {0}")]
    SendFromHonest(NodeId),
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

/// Per-node outputs of one crusader broadcast instance, honest nodes only.
/// `None` is the bottom output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrusaderOutcome {
    pub dealer: NodeId,
    pub outputs: BTreeMap<NodeId, Option<Rat>>,
}

/// The two round-trips of the broadcast phase, shared by the single-instance
/// and the all-dealers runs. Returns, per honest node, the per-dealer outcome.
#[allow(clippy::too_many_arguments)]
fn run_round_pair(
    n: usize,
    iteration: u64,
    dealers: &BTreeSet<NodeId>,
    honest_inputs: &BTreeMap<NodeId, Rat>,
    corrupted: &BTreeSet<NodeId>,
    adversary: &mut dyn SyncAdversary,
    ledger: &mut ObservationLedger,
    history: &mut Vec<RoundRecord>,
) -> Result<BTreeMap<NodeId, BTreeMap<NodeId, Option<Rat>>>, SyncError> {
    let all_nodes: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
    let honest: Vec<NodeId> = all_nodes
        .iter()
        .copied()
        .filter(|v| !corrupted.contains(v))
        .collect();

    let deliver_round = |phase: CbPhase,
                         honest_sends: Vec<SyncSend>,
                         adversary: &mut dyn SyncAdversary,
                         ledger: &mut ObservationLedger,
                         history: &mut Vec<RoundRecord>|
     -> Result<BTreeMap<NodeId, Vec<SyncSend>>, SyncError> {
        // Honest tokens become observable the moment they are sent: the
        // rushing adversary sees the whole round before reacting.
        let round_time = TimePoint::new(Rat::from(2 * iteration + (phase == CbPhase::Echo) as u64));
        for s in &honest_sends {
            ledger.observe(&s.msg.token, &round_time);
        }
        let ctx = RoundContext {
            n,
            iteration,
            phase,
            corrupted,
            history,
        };
        let faulty_sends = adversary.on_round(&ctx, &honest_sends);
        for s in &faulty_sends {
            if !corrupted.contains(&s.from) {
                return Err(SyncError::SendFromHonest(s.from));
            }
            ledger
                .adversary_may_send([&s.msg.token], &round_time, corrupted)
                .map_err(|token| SyncError::Unforgeability {
                    from: s.from,
                    token,
                    iteration,
                    phase,
                })?;
        }
        let mut sends = honest_sends;
        sends.extend(faulty_sends);
        sends.sort_by(|a, b| (a.to, a.from).cmp(&(b.to, b.from)));
        let mut inboxes: BTreeMap<NodeId, Vec<SyncSend>> = BTreeMap::new();
        for s in &sends {
            inboxes.entry(s.to).or_default().push(s.clone());
        }
        history.push(RoundRecord {
            iteration,
            phase,
            sends,
        });
        Ok(inboxes)
    };

    // Deal round: honest dealers sign and broadcast their values.
    let mut deal_sends = Vec::new();
    for v in &honest {
        if let Some(value) = honest_inputs.get(v) {
            if dealers.contains(v) {
                let token = sign(*v, &CbMessage::payload(iteration, value));
                for w in &all_nodes {
                    deal_sends.push(SyncSend {
                        from: *v,
                        to: *w,
                        msg: CbMessage {
                            iteration,
                            dealer: *v,
                            phase: CbPhase::Deal,
                            value: value.clone(),
                            token: token.clone(),
                        },
                    });
                }
            }
        }
    }
    let deal_inboxes = deliver_round(CbPhase::Deal, deal_sends, adversary, ledger, history)?;

    // Echo round: every honest node forwards, per dealer, the first message
    // it received directly from that dealer.
    let direct_of = |v: NodeId, x: NodeId| -> Option<&SyncSend> {
        deal_inboxes
            .get(&v)
            .and_then(|msgs| msgs.iter().find(|s| s.from == x && s.msg.dealer == x))
    };
    let mut echo_sends = Vec::new();
    for v in &honest {
        for x in dealers {
            if let Some(direct) = direct_of(*v, *x) {
                for w in &all_nodes {
                    echo_sends.push(SyncSend {
                        from: *v,
                        to: *w,
                        msg: CbMessage {
                            phase: CbPhase::Echo,
                            ..direct.msg.clone()
                        },
                    });
                }
            }
        }
    }
    let echo_inboxes = deliver_round(CbPhase::Echo, echo_sends, adversary, ledger, history)?;

    // Outcome per honest node per dealer.
    let mut outcomes: BTreeMap<NodeId, BTreeMap<NodeId, Option<Rat>>> = BTreeMap::new();
    for v in &honest {
        let mut per_dealer = BTreeMap::new();
        for x in dealers {
            let direct = direct_of(*v, *x).map(|s| &s.msg);
            let direct_ok = direct.is_some_and(|m| m.token_valid());
            // Conflict: two distinct senders echoed valid signatures on
            // different values for this dealer.
            let mut valid_echoes: Vec<(NodeId, &Rat)> = Vec::new();
            if let Some(msgs) = echo_inboxes.get(v) {
                for s in msgs {
                    if s.msg.dealer == *x && s.msg.token_valid() {
                        valid_echoes.push((s.from, &s.msg.value));
                    }
                }
            }
            let conflict = valid_echoes.iter().any(|(s1, v1)| {
                valid_echoes
                    .iter()
                    .any(|(s2, v2)| s1 != s2 && v1 != v2)
            });
            let output = if direct_ok && !conflict {
                Some(direct.expect("direct_ok").value.clone())
            } else {
                None
            };
            per_dealer.insert(*x, output);
        }
        outcomes.insert(*v, per_dealer);
    }
    Ok(outcomes)
}

/// Runs a single two-round crusader broadcast with the given dealer. If the
/// dealer is honest it deals `input`; a faulty dealer is driven entirely by
/// the adversary.
pub fn run_cb(
    n: usize,
    dealer: NodeId,
    input: &Rat,
    corrupted: &BTreeSet<NodeId>,
    adversary: &mut dyn SyncAdversary,
) -> Result<CrusaderOutcome, SyncError> {
    if n < 2 {
        return Err(SyncError::BadConfig(format!("n = {n} must be >= 2")));
    }
    if corrupted.len() > fault_budget(n) {
        return Err(SyncError::BadConfig(format!(
            "{} corrupted nodes exceeds the fault budget {}",
            corrupted.len(),
            fault_budget(n)
        )));
    }
    let dealers: BTreeSet<NodeId> = [dealer].into_iter().collect();
    let mut inputs = BTreeMap::new();
    inputs.insert(dealer, input.clone());
    let mut ledger = ObservationLedger::new();
    let mut history = Vec::new();
    let outcomes = run_round_pair(
        n,
        0,
        &dealers,
        &inputs,
        corrupted,
        adversary,
        &mut ledger,
        &mut history,
    )?;
    Ok(CrusaderOutcome {
        dealer,
        outputs: outcomes
            .into_iter()
            .map(|(v, mut per_dealer)| (v, per_dealer.remove(&dealer).flatten()))
            .collect(),
    })
}

/// The retained interval after discarding `f - b` lowest and highest of the
/// non-bottom values (ties broken by dealer id). `values` must be non-empty
/// after discarding, which the fault budget guarantees.
pub fn retained_interval(values: &[(Rat, NodeId)], b: usize, f: usize) -> (Rat, Rat) {
    assert!(b <= f, "bottom count {b} exceeds fault budget {f}");
    let mut sorted = values.to_vec();
    sorted.sort();
    let k = f - b;
    let kept = &sorted[k..sorted.len() - k];
    assert!(!kept.is_empty(), "discard rule emptied the value list");
    (kept[0].0.clone(), kept[kept.len() - 1].0.clone())
}

/// Diagnostics for one honest node in one agreement iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApaNodeRecord {
    pub iteration: u64,
    pub node: NodeId,
    pub input: Rat,
    /// Per-dealer broadcast outcome, indexed by dealer id.
    pub received: Vec<Option<Rat>>,
    pub bottom_count: usize,
    pub interval: (Rat, Rat),
    pub output: Rat,
}

/// One iteration: every node deals its value via crusader broadcast, then
/// discards and takes the midpoint of the spanned interval.
pub fn run_apa_iteration(
    n: usize,
    inputs: &BTreeMap<NodeId, Rat>,
    corrupted: &BTreeSet<NodeId>,
    adversary: &mut dyn SyncAdversary,
    iteration: u64,
    ledger: &mut ObservationLedger,
    history: &mut Vec<RoundRecord>,
) -> Result<(BTreeMap<NodeId, Rat>, Vec<ApaNodeRecord>), SyncError> {
    let f = fault_budget(n);
    if corrupted.len() > f {
        return Err(SyncError::BadConfig(format!(
            "{} corrupted nodes exceeds the fault budget {f}",
            corrupted.len()
        )));
    }
    let dealers: BTreeSet<NodeId> = (0..n as u32).map(NodeId).collect();
    let outcomes = run_round_pair(
        n, iteration, &dealers, inputs, corrupted, adversary, ledger, history,
    )?;

    let mut outputs = BTreeMap::new();
    let mut records = Vec::new();
    for (v, per_dealer) in &outcomes {
        let mut values: Vec<(Rat, NodeId)> = Vec::new();
        let mut received = vec![None; n];
        let mut b = 0usize;
        for (x, outcome) in per_dealer {
            received[x.0 as usize] = outcome.clone();
            match outcome {
                Some(val) => values.push((val.clone(), *x)),
                None => b += 1,
            }
        }
        if b > f {
            return Err(SyncError::FaultBudgetExceeded { node: *v, b, f });
        }
        let (lo, hi) = retained_interval(&values, b, f);
        let output = &(&lo + &hi) / &Rat::from_int(2);
        records.push(ApaNodeRecord {
            iteration,
            node: *v,
            input: inputs[v].clone(),
            received,
            bottom_count: b,
            interval: (lo, hi),
            output: output.clone(),
        });
        outputs.insert(*v, output);
    }
    Ok((outputs, records))
}

/// Iterations needed to shrink a spread of `ell` below `eps`: the smallest
/// `k >= 0` with `2^k >= ell/eps`.
pub fn iterations_for(ell: &Rat, eps: &Rat) -> u64 {
    assert!(eps.is_positive(), "target spread must be positive");
    assert!(!ell.is_negative(), "initial spread must be nonnegative");
    let mut k = 0u64;
    let mut power = Rat::one();
    let ratio = ell / eps;
    while power < ratio {
        power = &power * &Rat::from_int(2);
        k += 1;
    }
    k
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ApaRunResult {
    pub outputs: BTreeMap<NodeId, Rat>,
    pub iterations: u64,
    pub records: Vec<ApaNodeRecord>,
}

/// Full agreement run: `ceil(log2(ell/eps))` iterations, outputs feeding the
/// next iteration's inputs.
pub fn run_apa(
    n: usize,
    inputs: &BTreeMap<NodeId, Rat>,
    ell: &Rat,
    eps: &Rat,
    corrupted: &BTreeSet<NodeId>,
    adversary: &mut dyn SyncAdversary,
) -> Result<ApaRunResult, SyncError> {
    let iterations = iterations_for(ell, eps);
    let mut ledger = ObservationLedger::new();
    let mut history = Vec::new();
    let mut current = inputs.clone();
    let mut records = Vec::new();
    for iteration in 0..iterations {
        let (next, mut recs) = run_apa_iteration(
            n,
            &current,
            corrupted,
            adversary,
            iteration,
            &mut ledger,
            &mut history,
        )?;
        records.append(&mut recs);
        current = next;
    }
    Ok(ApaRunResult {
        outputs: current,
        iterations,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{r, spread};

    fn ids(list: &[u32]) -> BTreeSet<NodeId> {
        list.iter().copied().map(NodeId).collect()
    }

    /// Dealer splits the nodes: valid signature on one value to the first
    /// half, on another to the rest.
    struct SplitDealer {
        dealer: NodeId,
        low: Rat,
        high: Rat,
    }

    impl SyncAdversary for SplitDealer {
        fn name(&self) -> &'static str {
            "split_dealer"
        }
        fn on_round(&mut self, ctx: &RoundContext<'_>, _honest: &[SyncSend]) -> Vec<SyncSend> {
            if ctx.phase != CbPhase::Deal {
                return Vec::new();
            }
            let mut sends = Vec::new();
            for w in 0..ctx.n as u32 {
                let value = if (w as usize) < ctx.n / 2 {
                    self.low.clone()
                } else {
                    self.high.clone()
                };
                let token = sign(self.dealer, &CbMessage::payload(ctx.iteration, &value));
                sends.push(SyncSend {
                    from: self.dealer,
                    to: NodeId(w),
                    msg: CbMessage {
                        iteration: ctx.iteration,
                        dealer: self.dealer,
                        phase: CbPhase::Deal,
                        value,
                        token,
                    },
                });
            }
            sends
        }
    }

    /// Faulty dealer that deals one value consistently to everyone.
    struct ConsistentDealer {
        dealer: NodeId,
        value: Rat,
    }

    impl SyncAdversary for ConsistentDealer {
        fn name(&self) -> &'static str {
            "consistent_dealer"
        }
        fn on_round(&mut self, ctx: &RoundContext<'_>, _honest: &[SyncSend]) -> Vec<SyncSend> {
            if ctx.phase != CbPhase::Deal {
                return Vec::new();
            }
            let token = sign(self.dealer, &CbMessage::payload(ctx.iteration, &self.value));
            (0..ctx.n as u32)
                .map(|w| SyncSend {
                    from: self.dealer,
                    to: NodeId(w),
                    msg: CbMessage {
                        iteration: ctx.iteration,
                        dealer: self.dealer,
                        phase: CbPhase::Deal,
                        value: self.value.clone(),
                        token: token.clone(),
                    },
                })
                .collect()
        }
    }

    #[test]
    fn honest_dealer_outputs_input_everywhere() {
        let outcome = run_cb(4, NodeId(0), &r(1, 1), &ids(&[3]), &mut NullAdversary).unwrap();
        assert_eq!(outcome.outputs.len(), 3);
        for (_, out) in outcome.outputs {
            assert_eq!(out, Some(r(1, 1)));
        }
    }

    #[test]
    fn equivocating_dealer_forces_bottom_everywhere() {
        let mut adv = SplitDealer {
            dealer: NodeId(3),
            low: r(0, 1),
            high: r(1, 1),
        };
        let outcome = run_cb(4, NodeId(3), &r(0, 1), &ids(&[3]), &mut adv).unwrap();
        for (_, out) in outcome.outputs {
            assert_eq!(out, None);
        }
    }

    #[test]
    fn consistent_faulty_dealer_is_accepted() {
        let mut adv = ConsistentDealer {
            dealer: NodeId(3),
            value: r(1, 1),
        };
        let outcome = run_cb(4, NodeId(3), &r(0, 1), &ids(&[3]), &mut adv).unwrap();
        for (_, out) in outcome.outputs {
            assert_eq!(out, Some(r(1, 1)));
        }
    }

    #[test]
    fn forged_token_is_fatal() {
        struct Forger;
        impl SyncAdversary for Forger {
            fn name(&self) -> &'static str {
                "forger"
            }
            fn on_round(&mut self, ctx: &RoundContext<'_>, _h: &[SyncSend]) -> Vec<SyncSend> {
                if ctx.phase != CbPhase::Deal {
                    return Vec::new();
                }
                // Claims a signature by honest node 0 that node 0 never made.
                let value = r(7, 1);
                let forged = SignatureToken {
                    signer: NodeId(0),
                    payload: CbMessage::payload(ctx.iteration, &value),
                    unique_id: 0,
                };
                vec![SyncSend {
                    from: NodeId(3),
                    to: NodeId(1),
                    msg: CbMessage {
                        iteration: ctx.iteration,
                        dealer: NodeId(0),
                        phase: CbPhase::Deal,
                        value,
                        token: forged,
                    },
                }]
            }
        }
        let err = run_cb(4, NodeId(0), &r(1, 1), &ids(&[3]), &mut Forger).unwrap_err();
        assert!(matches!(err, SyncError::Unforgeability { .. }), "{err}");
    }

    fn apa_once(
        n: usize,
        inputs: &[(u32, i64, i64)],
        corrupted: &BTreeSet<NodeId>,
        adversary: &mut dyn SyncAdversary,
    ) -> BTreeMap<NodeId, Rat> {
        let map: BTreeMap<NodeId, Rat> = inputs
            .iter()
            .map(|(v, num, den)| (NodeId(*v), r(*num, *den)))
            .collect();
        let mut ledger = ObservationLedger::new();
        let mut history = Vec::new();
        run_apa_iteration(n, &map, corrupted, adversary, 0, &mut ledger, &mut history)
            .unwrap()
            .0
    }

    #[test]
    fn consistent_half_valued_faulty_node_pins_midpoint() {
        // n = 3, f = 1, honest inputs {0, 1}, faulty deals 1/2 consistently:
        // each honest node keeps the median, which is exactly 1/2.
        let mut adv = ConsistentDealer {
            dealer: NodeId(2),
            value: r(1, 2),
        };
        let out = apa_once(3, &[(0, 0, 1), (1, 1, 1)], &ids(&[2]), &mut adv);
        assert_eq!(out[&NodeId(0)], r(1, 2));
        assert_eq!(out[&NodeId(1)], r(1, 2));
    }

    #[test]
    fn bottom_from_faulty_dealer_widens_interval_to_inputs() {
        // Faulty dealer forces bottom at both honest nodes: b = 1, nothing
        // discarded, interval [0, 1], both output 1/2.
        let mut adv = SplitDealer {
            dealer: NodeId(2),
            low: r(-1, 1),
            high: r(2, 1),
        };
        let out = apa_once(3, &[(0, 0, 1), (1, 1, 1)], &ids(&[2]), &mut adv);
        assert_eq!(out[&NodeId(0)], r(1, 2));
        assert_eq!(out[&NodeId(1)], r(1, 2));
    }

    #[test]
    fn equal_inputs_are_a_fixed_point() {
        let mut adv = SplitDealer {
            dealer: NodeId(2),
            low: r(-5, 1),
            high: r(5, 1),
        };
        let out = apa_once(3, &[(0, 3, 7), (1, 3, 7)], &ids(&[2]), &mut adv);
        assert_eq!(out[&NodeId(0)], r(3, 7));
        assert_eq!(out[&NodeId(1)], r(3, 7));
    }

    #[test]
    fn iteration_counts() {
        assert_eq!(iterations_for(&r(1, 1), &r(1, 8)), 3);
        assert_eq!(iterations_for(&r(1, 1), &r(2, 1)), 0);
        assert_eq!(iterations_for(&r(1, 1), &r(1, 1024)), 10);
        assert_eq!(iterations_for(&r(1, 1), &r(1, 1)), 0);
        assert_eq!(iterations_for(&r(1, 1), &r(1, 3)), 2);
    }

    #[test]
    fn zero_iterations_returns_inputs() {
        let inputs: BTreeMap<NodeId, Rat> =
            [(NodeId(0), r(0, 1)), (NodeId(1), r(1, 1)), (NodeId(2), r(1, 2))]
                .into_iter()
                .collect();
        let result = run_apa(
            3,
            &inputs,
            &r(1, 1),
            &r(2, 1),
            &BTreeSet::new(),
            &mut NullAdversary,
        )
        .unwrap();
        assert_eq!(result.iterations, 0);
        assert_eq!(result.outputs, inputs);
    }

    #[test]
    fn contraction_and_containment_fault_free() {
        let inputs: BTreeMap<NodeId, Rat> = [
            (NodeId(0), r(0, 1)),
            (NodeId(1), r(1, 1)),
            (NodeId(2), r(1, 4)),
            (NodeId(3), r(3, 4)),
            (NodeId(4), r(1, 2)),
        ]
        .into_iter()
        .collect();
        let result = run_apa(
            5,
            &inputs,
            &r(1, 1),
            &r(1, 64),
            &BTreeSet::new(),
            &mut NullAdversary,
        )
        .unwrap();
        assert_eq!(result.iterations, 6);
        let outs: Vec<Rat> = result.outputs.values().cloned().collect();
        assert!(spread(&outs) <= r(1, 64));
        for o in &outs {
            assert!(*o >= r(0, 1) && *o <= r(1, 1));
        }
    }

    #[test]
    fn retained_interval_discards_sorted_extremes() {
        let values = vec![
            (r(-1, 10), NodeId(0)),
            (r(0, 1), NodeId(1)),
            (r(0, 1), NodeId(2)),
            (r(1, 10), NodeId(3)),
        ];
        // b = 0, f = 1: drop one from each side.
        assert_eq!(retained_interval(&values, 0, 1), (r(0, 1), r(0, 1)));
        // b = 1, f = 1: keep everything.
        let three = &values[..3];
        assert_eq!(retained_interval(three, 1, 1), (r(-1, 10), r(0, 1)));
    }

    /// Adding one extra value in place of a bottom never widens the retained
    /// interval.
    #[test]
    fn extra_value_shrinks_interval() {
        let base = vec![
            (r(1, 3), NodeId(0)),
            (r(2, 3), NodeId(1)),
            (r(1, 2), NodeId(2)),
        ];
        let (lo, hi) = retained_interval(&base, 1, 1);
        for x in [r(-10, 1), r(0, 1), r(1, 2), r(5, 7), r(10, 1)] {
            let mut extended = base.clone();
            extended.push((x, NodeId(3)));
            let (lo2, hi2) = retained_interval(&extended, 0, 1);
            assert!(lo2 >= lo && hi2 <= hi, "interval grew");
        }
    }
}
