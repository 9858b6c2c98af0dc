//! Pulse synchronization over timed crusader broadcast.
//!
//! Each round r, a node emits its pulse, runs one broadcast instance per
//! dealer, converts accepted reception times into offset estimates, discards
//! extremes, and schedules the next pulse at the midpoint correction plus the
//! nominal round length.
//!
//! Timing (all local, relative to the node's own pulse local time `P`):
//!   - as dealer, broadcast `sig(r)` at `P + theta*s`;
//!   - accept the dealer's signature only at `h` strictly inside
//!     `(P, P + theta*(d + (theta+1)s))`, then forward it immediately;
//!   - reject (output bottom) if a valid copy arrives from a third party at
//!     a local time strictly inside `(P, h + d - 2u)`;
//!   - finalize at `h + d - 2u`, or at window end plus `d - 2u` if nothing
//!     was accepted.
//!
//! A duplicated early token from the dealer itself does not force rejection;
//! only third-party copies do (see `tcb_on_message_rules` below).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::LocalTime;
use crate::params::SystemParams;
use crate::rational::Rat;
use crate::sig::{encode_payload, sign, verify};
use crate::sim::{Action, Annotation, BehaviorError, MsgPayload, NodeBehavior};
use crate::NodeId;

/// Canonical payload a dealer signs for round `round`.
pub fn tcb_payload(round: u64) -> Vec<u8> {
    encode_payload("tcb", round, "pulse")
}

/// Receiver-side state of one broadcast instance (round, dealer) at one node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcbInstanceState {
    pub round: u64,
    pub dealer: NodeId,
    /// The owner's pulse local time for this round.
    pub pulse_local: LocalTime,
    /// First accepted local reception time of the dealer's signature.
    pub h: Option<LocalTime>,
    /// Earliest local time a valid third-party copy arrived after the pulse.
    pub earliest_conflict: Option<LocalTime>,
    /// Finalized output; `Some(None)` is the bottom output.
    pub output: Option<Option<LocalTime>>,
}

impl TcbInstanceState {
    fn new(round: u64, dealer: NodeId, pulse_local: LocalTime) -> Self {
        TcbInstanceState {
            round,
            dealer,
            pulse_local,
            h: None,
            earliest_conflict: None,
            output: None,
        }
    }
}

/// Result of one correction computation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionResult {
    pub delta: Rat,
    pub bottom_count: usize,
    pub interval: (Rat, Rat),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorrectionError {
    #[error("{b} bottom estimates exceed the fault budget {f}")]
    BottomAboveBudget { b: usize, f: usize },
    #[error("no estimates to select from")]
    Empty,
}

/// Sorts the non-bottom estimates by (value, dealer id), discards the
/// `f - b` lowest and highest, and returns the midpoint of the spanned
/// interval. `b` above `f` is a model violation, not a recoverable state.
pub fn compute_correction(
    estimates: &[Option<Rat>],
    f: usize,
) -> Result<CorrectionResult, CorrectionError> {
    let bottom_count = estimates.iter().filter(|e| e.is_none()).count();
    if bottom_count > f {
        return Err(CorrectionError::BottomAboveBudget {
            b: bottom_count,
            f,
        });
    }
    let mut values: Vec<(Rat, usize)> = estimates
        .iter()
        .enumerate()
        .filter_map(|(dealer, e)| e.as_ref().map(|v| (v.clone(), dealer)))
        .collect();
    values.sort();
    let discard = f - bottom_count;
    if values.len() < 2 * discard + 1 {
        return Err(CorrectionError::Empty);
    }
    let kept = &values[discard..values.len() - discard];
    let lo = kept[0].0.clone();
    let hi = kept[kept.len() - 1].0.clone();
    let delta = &(&lo + &hi) / &Rat::from_int(2);
    Ok(CorrectionResult {
        delta,
        bottom_count,
        interval: (lo, hi),
    })
}

/// `h - P - d + u - s`: the offset estimate a receiver derives from an
/// accepted reception time.
pub fn offset_estimate(h: &LocalTime, pulse_local: &LocalTime, params: &SystemParams) -> Rat {
    &(&(h - pulse_local) - &params.d) + &(&params.u - &params.s)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum TimerPurpose {
    FirstPulse,
    DealerSend { round: u64 },
    Finalize { round: u64, dealer: NodeId },
    Wakeup { round: u64 },
}

/// Per-node protocol state machine. Requires `H_v(0)` in `[0, s]`; emits
/// pulse 1 at local time `s` and loops from there.
pub struct CpsNodeBehavior {
    node: NodeId,
    params: SystemParams,
    round: u64,
    pulse_local: Option<LocalTime>,
    instances: BTreeMap<NodeId, TcbInstanceState>,
    finalized: usize,
    timers: BTreeMap<u64, TimerPurpose>,
    next_timer: u64,
}

impl CpsNodeBehavior {
    pub fn new(node: NodeId, params: SystemParams) -> Self {
        assert!((node.0 as usize) < params.n, "node id out of range");
        CpsNodeBehavior {
            node,
            params,
            round: 0,
            pulse_local: None,
            instances: BTreeMap::new(),
            finalized: 0,
            timers: BTreeMap::new(),
            next_timer: 0,
        }
    }

    pub fn current_round(&self) -> u64 {
        self.round
    }

    pub fn instance(&self, dealer: NodeId) -> Option<&TcbInstanceState> {
        self.instances.get(&dealer)
    }

    fn all_nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.params.n as u32).map(NodeId)
    }

    fn set_timer(&mut self, at: LocalTime, purpose: TimerPurpose, actions: &mut Vec<Action>) {
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(id, purpose);
        actions.push(Action::SetTimer { at, id });
    }

    fn start_round(&mut self, round: u64, local: &LocalTime) -> Vec<Action> {
        let mut actions = vec![Action::EmitPulse { index: round }];
        self.round = round;
        self.pulse_local = Some(local.clone());
        self.finalized = 0;
        self.instances = self
            .all_nodes()
            .map(|w| (w, TcbInstanceState::new(round, w, local.clone())))
            .collect();
        self.set_timer(
            local + &self.params.dealer_send_offset(),
            TimerPurpose::DealerSend { round },
            &mut actions,
        );
        let default_deadline =
            local + &(&self.params.acceptance_window() + &self.params.quiet_window());
        for w in self.all_nodes() {
            self.set_timer(
                default_deadline.clone(),
                TimerPurpose::Finalize { round, dealer: w },
                &mut actions,
            );
        }
        actions
    }

    fn finalize_instance(
        &mut self,
        dealer: NodeId,
        local: &LocalTime,
    ) -> Result<Vec<Action>, BehaviorError> {
        let quiet = self.params.quiet_window();
        let inst = self
            .instances
            .get_mut(&dealer)
            .expect("instance exists for current round");
        if inst.output.is_some() {
            return Ok(vec![]);
        }
        let output = match &inst.h {
            Some(h) => {
                let conflict_deadline = h + &quiet;
                let conflicted = inst
                    .earliest_conflict
                    .as_ref()
                    .is_some_and(|c| c < &conflict_deadline);
                if conflicted {
                    None
                } else {
                    Some(h.clone())
                }
            }
            None => None,
        };
        inst.output = Some(output.clone());
        self.finalized += 1;
        let mut actions = vec![Action::Annotate(Annotation::TcbOutput {
            round: self.round,
            dealer,
            output,
        })];

        if self.finalized == self.params.n {
            let pulse_local = self.pulse_local.clone().expect("in a round");
            let estimates: Vec<Option<Rat>> = self
                .all_nodes()
                .map(|w| {
                    self.instances[&w]
                        .output
                        .clone()
                        .expect("all instances finalized")
                        .map(|h| offset_estimate(&h, &pulse_local, &self.params))
                })
                .collect();
            let correction = compute_correction(&estimates, self.params.f)
                .map_err(|e| BehaviorError(e.to_string()))?;
            actions.push(Action::Annotate(Annotation::Correction {
                round: self.round,
                estimates,
                bottom_count: correction.bottom_count,
                delta: correction.delta.clone(),
            }));
            let wakeup = &(&pulse_local + &correction.delta) + &self.params.t;
            if &wakeup < local {
                return Err(BehaviorError(format!(
                    "wakeup local time {wakeup} precedes current local time {local}"
                )));
            }
            self.set_timer(
                wakeup,
                TimerPurpose::Wakeup { round: self.round },
                &mut actions,
            );
        }
        Ok(actions)
    }
}

impl NodeBehavior for CpsNodeBehavior {
    fn on_init(&mut self, local: &LocalTime) -> Result<Vec<Action>, BehaviorError> {
        let zero = LocalTime::zero();
        let start = LocalTime::new(self.params.s.clone());
        if local < &zero || local > &start {
            return Err(BehaviorError(format!(
                "initial local time {local} outside [0, {}]",
                self.params.s
            )));
        }
        if local == &start {
            Ok(self.start_round(1, local))
        } else {
            let mut actions = Vec::new();
            self.set_timer(start, TimerPurpose::FirstPulse, &mut actions);
            Ok(actions)
        }
    }

    fn on_message(
        &mut self,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Result<Vec<Action>, BehaviorError> {
        let (round, dealer, token) = match payload {
            MsgPayload::TcbDealer {
                round,
                dealer,
                token,
            }
            | MsgPayload::TcbEcho {
                round,
                dealer,
                token,
            } => (*round, *dealer, token),
            MsgPayload::Raw { .. } => return Ok(vec![]),
        };
        if round != self.round || self.round == 0 {
            return Ok(vec![]);
        }
        if !verify(dealer, token, &tcb_payload(round)) {
            return Ok(vec![]);
        }
        let acceptance = self.params.acceptance_window();
        let inst = self
            .instances
            .get_mut(&dealer)
            .expect("instances exist while in a round");
        if inst.output.is_some() {
            return Ok(vec![]);
        }
        if from == dealer {
            // Only the first in-window signature from the dealer counts;
            // duplicates and out-of-window arrivals are dropped.
            let window_end = &inst.pulse_local + &acceptance;
            if inst.h.is_none() && local > &inst.pulse_local && local < &window_end {
                inst.h = Some(local.clone());
                let token = token.clone();
                let finalize_at = local + &self.params.quiet_window();
                let mut actions: Vec<Action> = self
                    .all_nodes()
                    .map(|w| Action::Send {
                        to: w,
                        payload: MsgPayload::TcbEcho {
                            round,
                            dealer,
                            token: token.clone(),
                        },
                    })
                    .collect();
                self.set_timer(
                    finalize_at,
                    TimerPurpose::Finalize { round, dealer },
                    &mut actions,
                );
                return Ok(actions);
            }
        } else if local > &inst.pulse_local {
            let earlier = inst
                .earliest_conflict
                .as_ref()
                .is_none_or(|c| local < c);
            if earlier {
                inst.earliest_conflict = Some(local.clone());
            }
        }
        Ok(vec![])
    }

    fn on_timer(&mut self, local: &LocalTime, id: u64) -> Result<Vec<Action>, BehaviorError> {
        let purpose = match self.timers.remove(&id) {
            Some(p) => p,
            None => return Ok(vec![]),
        };
        match purpose {
            TimerPurpose::FirstPulse => Ok(self.start_round(1, local)),
            TimerPurpose::DealerSend { round } => {
                if round != self.round {
                    return Ok(vec![]);
                }
                let token = sign(self.node, &tcb_payload(round));
                let dealer = self.node;
                Ok(self
                    .all_nodes()
                    .map(|w| Action::Send {
                        to: w,
                        payload: MsgPayload::TcbDealer {
                            round,
                            dealer,
                            token: token.clone(),
                        },
                    })
                    .collect())
            }
            TimerPurpose::Finalize { round, dealer } => {
                if round != self.round {
                    return Ok(vec![]);
                }
                self.finalize_instance(dealer, local)
            }
            TimerPurpose::Wakeup { round } => {
                if round != self.round {
                    return Ok(vec![]);
                }
                Ok(self.start_round(round + 1, local))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;

    fn params_for(n: usize, theta: Rat, s: Rat, t: Rat) -> SystemParams {
        SystemParams::new(n, r(1, 1), Rat::zero(), Rat::zero(), theta, s, t)
    }

    fn lt(num: i64, den: i64) -> LocalTime {
        LocalTime::new(r(num, den))
    }

    fn dealer_send_time(actions: &[Action], behavior: &CpsNodeBehavior) -> LocalTime {
        for a in actions {
            if let Action::SetTimer { at, id } = a {
                if matches!(
                    behavior.timers.get(id),
                    Some(TimerPurpose::DealerSend { .. })
                ) {
                    return at.clone();
                }
            }
        }
        panic!("no dealer send timer");
    }

    #[test]
    fn dealer_broadcast_time_is_pulse_plus_theta_s() {
        // H_v(p) = 100, theta = 21/20, s = 1/2 -> send at 100 + 21/40.
        let params = params_for(3, r(21, 20), r(1, 2), r(100, 1));
        let mut b = CpsNodeBehavior::new(NodeId(0), params);
        let actions = b.start_round(1, &lt(100, 1));
        assert_eq!(dealer_send_time(&actions, &b), lt(4021, 40));
    }

    #[test]
    fn zero_s_sends_exactly_at_pulse() {
        let params = params_for(3, r(21, 20), Rat::zero(), r(100, 1));
        let mut b = CpsNodeBehavior::new(NodeId(0), params);
        let actions = b.start_round(1, &lt(50, 1));
        assert_eq!(dealer_send_time(&actions, &b), lt(50, 1));
    }

    #[test]
    fn correction_examples() {
        // b = 0, f = 1: discard one from each side of 4 sorted estimates.
        let estimates = vec![
            Some(r(-1, 10)),
            Some(r(0, 1)),
            Some(r(0, 1)),
            Some(r(1, 10)),
        ];
        let c = compute_correction(&estimates, 1).unwrap();
        assert_eq!(c.delta, Rat::zero());
        assert_eq!(c.interval, (Rat::zero(), Rat::zero()));

        // b = 1, f = 1: discard nothing.
        let estimates = vec![Some(r(-1, 10)), Some(r(0, 1)), None, Some(r(1, 10))];
        let c = compute_correction(&estimates, 1).unwrap();
        assert_eq!(c.delta, Rat::zero());
        assert_eq!(c.interval, (r(-1, 10), r(1, 10)));
        assert_eq!(c.bottom_count, 1);
    }

    #[test]
    fn bottom_above_budget_is_fatal() {
        let estimates = vec![None, None, Some(r(0, 1))];
        assert_eq!(
            compute_correction(&estimates, 1),
            Err(CorrectionError::BottomAboveBudget { b: 2, f: 1 })
        );
    }

    #[test]
    fn calibration_point_yields_zero_estimate() {
        // h - H(p) = d - u + s exactly -> estimate 0.
        let params = SystemParams::new(
            3,
            r(1, 1),
            r(1, 10),
            r(1, 10),
            r(101, 100),
            r(1, 2),
            r(100, 1),
        );
        let pulse = lt(10, 1);
        let h = &pulse + &(&(&params.d - &params.u) + &params.s);
        assert_eq!(offset_estimate(&h, &pulse, &params), Rat::zero());
    }

    #[test]
    fn tcb_on_message_rules() {
        let params = params_for(3, r(101, 100), r(1, 2), r(100, 1));
        let dealer = NodeId(1);
        let token = sign(dealer, &tcb_payload(1));
        let mut b = CpsNodeBehavior::new(NodeId(0), params.clone());
        b.start_round(1, &lt(10, 1));
        let deal = MsgPayload::TcbDealer {
            round: 1,
            dealer,
            token: token.clone(),
        };

        // Arrival exactly at the pulse local time is outside the open window.
        let actions = b.on_message(&lt(10, 1), dealer, &deal).unwrap();
        assert!(actions.is_empty());
        assert_eq!(b.instance(dealer).unwrap().h, None);

        // In-window arrival is accepted and echoed to all three nodes.
        let h = lt(11, 1);
        let actions = b.on_message(&h, dealer, &deal).unwrap();
        let echoes = actions
            .iter()
            .filter(|a| matches!(a, Action::Send { .. }))
            .count();
        assert_eq!(echoes, 3);
        assert_eq!(b.instance(dealer).unwrap().h, Some(h.clone()));

        // A duplicate from the dealer itself is ignored and does not count
        // as a conflict.
        let actions = b.on_message(&lt(23, 2), dealer, &deal).unwrap();
        assert!(actions.is_empty());
        assert_eq!(b.instance(dealer).unwrap().earliest_conflict, None);

        // A third-party copy after the pulse is recorded as a conflict.
        let echo = MsgPayload::TcbEcho {
            round: 1,
            dealer,
            token: token.clone(),
        };
        b.on_message(&lt(12, 1), NodeId(2), &echo).unwrap();
        assert_eq!(
            b.instance(dealer).unwrap().earliest_conflict,
            Some(lt(12, 1))
        );

        // Inside the quiet window (quiet = d - 2u = 1): 12 < 11 + 1 is false,
        // so exactly-at-boundary does not reject; move the conflict earlier.
        let mut b2 = CpsNodeBehavior::new(NodeId(0), params.clone());
        b2.start_round(1, &lt(10, 1));
        b2.on_message(&h, dealer, &deal).unwrap();
        b2.on_message(&lt(45, 4), NodeId(2), &echo).unwrap(); // 11.25 < 12
        let actions = b2.finalize_instance(dealer, &lt(12, 1)).unwrap();
        let output = actions.iter().find_map(|a| match a {
            Action::Annotate(Annotation::TcbOutput { output, .. }) => Some(output.clone()),
            _ => None,
        });
        assert_eq!(output, Some(None), "conflict inside quiet window rejects");

        // Boundary conflict (exactly h + quiet) does not reject.
        let actions = b.finalize_instance(dealer, &lt(12, 1)).unwrap();
        let output = actions.iter().find_map(|a| match a {
            Action::Annotate(Annotation::TcbOutput { output, .. }) => Some(output.clone()),
            _ => None,
        });
        assert_eq!(output, Some(Some(h)));
    }

    #[test]
    fn wrong_round_and_invalid_tokens_are_dropped() {
        let params = params_for(3, r(101, 100), r(1, 2), r(100, 1));
        let dealer = NodeId(1);
        let mut b = CpsNodeBehavior::new(NodeId(0), params);
        b.start_round(1, &lt(10, 1));

        // Round mismatch.
        let stale = MsgPayload::TcbDealer {
            round: 2,
            dealer,
            token: sign(dealer, &tcb_payload(2)),
        };
        b.on_message(&lt(11, 1), dealer, &stale).unwrap();
        assert_eq!(b.instance(dealer).unwrap().h, None);

        // Token signed by the wrong node fails verification.
        let forged = MsgPayload::TcbDealer {
            round: 1,
            dealer,
            token: sign(NodeId(2), &tcb_payload(1)),
        };
        b.on_message(&lt(11, 1), dealer, &forged).unwrap();
        assert_eq!(b.instance(dealer).unwrap().h, None);
    }
}
