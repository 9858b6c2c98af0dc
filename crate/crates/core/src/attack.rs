//! The three-execution shifting construction against deterministic
//! pulse-synchronization behaviors at n = 3, and the skew accounting that
//! witnesses the `2*u_tilde/3` lower bound.
//!
//! Three executions are co-simulated. In execution i node i is faulty, the
//! two honest nodes run the behavior under test, one on the rate-1 clock and
//! one on the clock that runs at rate theta until `2*u_tilde/(3(theta-1))`
//! and then trails real time by exactly `2*u_tilde/3`. Honest-to-honest
//! messages take exactly `d`; every link with a faulty endpoint takes exactly
//! `d - u_tilde`.
//!
//! The faulty node of execution i replays, toward node i+1, exactly the
//! messages node i sends to i+1 in execution i+2, and toward node i+2 those
//! from execution i+1, each timed so the recipient's *local* reception time
//! matches the source execution. Replays are generated on demand as the
//! source sends appear, so the construction never materializes more than the
//! three executions; every replayed send passes the observation-ledger gate,
//! which is exactly the availability condition the construction needs.
//!
//! On success, node i's local view in execution i+1 equals its local view in
//! execution i+2 — asserted by exact value comparison — and the six pulse
//! time differences at a late enough round telescope to exactly `2*u_tilde`,
//! forcing skew at least `2*u_tilde/3` in some execution.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockSchedule, LocalTime, TimePoint};
use crate::params::SystemParams;
use crate::rational::Rat;
use crate::sim::{
    Action, BehaviorError, DelayPolicy, ExecutionTrace, MsgPayload, NodeBehavior, SimError,
    Simulation, TraceEvent,
};
use crate::NodeId;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("construction requires n = 3, got {0}")]
    WrongSize(usize),
    #[error("construction requires u_tilde <= d")]
    UTildeTooLarge,
    #[error("simulation failed in execution {exec}: {source}")]
    Sim { exec: usize, source: SimError },
    #[error(
        "two messages reach node {node} in execution {exec} at the same local time {local_time}"
    )]
    ReceptionTie {
        exec: usize,
        node: NodeId,
        local_time: LocalTime,
    },
    #[error("node {node} distinguishes its two executions: {detail}")]
    ViewMismatch { node: NodeId, detail: String },
    #[error("execution {exec}: node {node} never emitted pulse {round} before the horizon")]
    MissingPulse {
        exec: usize,
        node: NodeId,
        round: u64,
    },
    #[error("delay audit failed: {0}")]
    DelayAudit(String),
    #[error("construction still ties after {0} retries")]
    RetriesExhausted(u32),
}

/// The three co-simulated executions plus the construction constants.
pub struct ExecutionTriple {
    pub traces: [ExecutionTrace; 3],
    /// Faulty-link uncertainty actually used (may differ from the requested
    /// one by a tie-breaking nudge).
    pub u_tilde: Rat,
    /// `2 u_tilde / 3`: the hardware-clock shift built up.
    pub shift: Rat,
    /// `2 u_tilde / (3 (theta - 1))`: when the fast clock stops drifting.
    pub breakpoint: Rat,
    /// Total number of faulty (replayed) sends across the three executions.
    pub faulty_sends: u64,
}

fn wrap(i: usize) -> NodeId {
    NodeId((i % 3) as u32)
}

/// Builds the triple by event-driven co-simulation up to `horizon`.
/// `make_behavior` must be deterministic: identical local views must produce
/// identical actions.
pub fn build_execution_triple(
    params: &SystemParams,
    make_behavior: &dyn Fn(NodeId) -> Box<dyn NodeBehavior>,
    horizon: &TimePoint,
) -> Result<ExecutionTriple, AttackError> {
    if params.n != 3 {
        return Err(AttackError::WrongSize(params.n));
    }
    if params.u_tilde > params.d {
        return Err(AttackError::UTildeTooLarge);
    }
    let u_tilde = params.u_tilde.clone();
    let theta = params.theta.clone();
    let shift = &(&Rat::from_int(2) * &u_tilde) / &Rat::from_int(3);
    let breakpoint = if u_tilde.is_zero() {
        Rat::zero()
    } else {
        &shift / &(&theta - &Rat::one())
    };
    let breakpoint_tp = TimePoint::new(breakpoint.clone());

    // In execution i: node i faulty, node i+1 on the rate-1 clock, node i+2
    // on the fast-then-shifted clock.
    let mut sims: Vec<Simulation> = Vec::with_capacity(3);
    for i in 0..3usize {
        let mut schedules = vec![ClockSchedule::identity(); 3];
        schedules[wrap(i + 2).0 as usize] =
            ClockSchedule::fast_then_nominal(&theta, &breakpoint_tp);
        let corrupted: BTreeSet<NodeId> = [wrap(i)].into_iter().collect();
        let mut sim = Simulation::new(
            params.clone(),
            schedules,
            corrupted,
            DelayPolicy::LowerBound,
        )
        .map_err(|source| AttackError::Sim { exec: i, source })?;
        sim = sim
            .with_behavior(wrap(i + 1), make_behavior(wrap(i + 1)))
            .with_behavior(wrap(i + 2), make_behavior(wrap(i + 2)));
        sims.push(sim);
    }

    let faulty_delay = &params.d - &u_tilde;
    let mut cursors = [0usize; 3];
    let mut faulty_sends = 0u64;

    loop {
        // Globally earliest pending event across the three executions.
        let next = (0..3usize)
            .filter_map(|e| sims[e].peek_time().cloned().map(|t| (t, e)))
            .min();
        let Some((t, e)) = next else { break };
        if &t > horizon {
            break;
        }
        sims[e]
            .step(horizon)
            .map_err(|source| AttackError::Sim { exec: e, source })?;

        // Replay any new honest-to-honest sends into the execution where the
        // sender is faulty.
        let mut injections = Vec::new();
        {
            let sim = &sims[e];
            let events = sim.events();
            let faulty_here = wrap(e);
            while cursors[e] < events.len() {
                let ev = &events[cursors[e]];
                cursors[e] += 1;
                let TraceEvent::Send {
                    t: send_time,
                    from,
                    to,
                    payload,
                    delay,
                    ..
                } = ev
                else {
                    continue;
                };
                if *from == faulty_here || *to == faulty_here || from == to {
                    continue;
                }
                // Local reception time in this (source) execution.
                let arrival = send_time + delay;
                let local = sim.schedule_of(*to).local_time_at(&arrival);
                // Matching real arrival in the target execution, where the
                // sender is the faulty node.
                let target = from.0 as usize;
                let target_arrival = sims[target]
                    .schedule_of(*to)
                    .time_at(&local)
                    .expect("offsets are zero, local times are reachable");
                let send_at =
                    TimePoint::new(target_arrival.as_rat() - &faulty_delay);
                injections.push((target, send_at, *from, *to, payload.clone()));
            }
        }
        for (target, send_at, from, to, payload) in injections {
            faulty_sends += 1;
            sims[target]
                .inject_faulty_send(send_at, from, to, payload, faulty_delay.clone())
                .map_err(|source| AttackError::Sim {
                    exec: target,
                    source,
                })?;
        }
    }

    let traces: [ExecutionTrace; 3] = {
        let mut it = sims.into_iter().map(Simulation::into_trace);
        [
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        ]
    };

    audit_ties(&traces)?;
    audit_delays(&traces, params, &u_tilde)?;
    audit_views(&traces, horizon)?;

    Ok(ExecutionTriple {
        traces,
        u_tilde,
        shift,
        breakpoint,
        faulty_sends,
    })
}

/// The constructions assume no honest node receives two messages at the same
/// local time; a tie aborts the attempt.
fn audit_ties(traces: &[ExecutionTrace; 3]) -> Result<(), AttackError> {
    for (e, trace) in traces.iter().enumerate() {
        let mut seen: BTreeSet<(NodeId, LocalTime)> = BTreeSet::new();
        for ev in &trace.events {
            if let TraceEvent::Receive { to, local_time, .. } = ev {
                if trace.corrupted.contains(to) {
                    continue;
                }
                if !seen.insert((*to, local_time.clone())) {
                    return Err(AttackError::ReceptionTie {
                        exec: e,
                        node: *to,
                        local_time: local_time.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Every honest-to-honest delivery took exactly `d`; every delivery touching
/// the faulty node took exactly `d - u_tilde`.
fn audit_delays(
    traces: &[ExecutionTrace; 3],
    params: &SystemParams,
    u_tilde: &Rat,
) -> Result<(), AttackError> {
    let faulty_delay = &params.d - u_tilde;
    for (e, trace) in traces.iter().enumerate() {
        for ev in &trace.events {
            if let TraceEvent::Send {
                from, to, delay, ..
            } = ev
            {
                let faulty_link =
                    trace.corrupted.contains(from) || trace.corrupted.contains(to);
                let expected = if faulty_link { &faulty_delay } else { &params.d };
                if delay != expected {
                    return Err(AttackError::DelayAudit(format!(
                        "execution {e}: link {from}->{to} used delay {delay}, expected {expected}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Exact local-view equality at each node between its two honest executions,
/// truncated to the local horizon both executions completely cover.
fn audit_views(traces: &[ExecutionTrace; 3], horizon: &TimePoint) -> Result<(), AttackError> {
    for i in 0..3usize {
        let node = wrap(i);
        let in_a = &traces[(i + 1) % 3];
        let in_b = &traces[(i + 2) % 3];
        let cut_a = in_a.schedules[node.0 as usize].local_time_at(horizon);
        let cut_b = in_b.schedules[node.0 as usize].local_time_at(horizon);
        let cut = if cut_a <= cut_b { cut_a } else { cut_b };
        let view = |trace: &ExecutionTrace| {
            trace
                .local_view(node)
                .into_iter()
                .filter(|ev| ev.local_time <= cut)
                .collect::<Vec<_>>()
        };
        let va = view(in_a);
        let vb = view(in_b);
        if va != vb {
            let detail = va
                .iter()
                .zip(vb.iter())
                .enumerate()
                .find(|(_, (a, b))| a != b)
                .map(|(k, (a, b))| format!("event {k}: {a:?} vs {b:?}"))
                .unwrap_or_else(|| format!("view lengths {} vs {}", va.len(), vb.len()));
            return Err(AttackError::ViewMismatch { node, detail });
        }
    }
    Ok(())
}

/// Skew accounting at pulse `round`, per the telescoping identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub round: u64,
    pub u_tilde: Rat,
    /// `2 u_tilde / 3`.
    pub bound: Rat,
    /// Real pulse times `[execution][honest node]` at `round`, keyed as
    /// (node, time).
    pub pulse_times: Vec<Vec<(NodeId, Rat)>>,
    /// Per-execution signed difference `p_{i+1} - p_{i+2}` at `round`.
    pub skews: Vec<Rat>,
    /// Sum of the three signed differences; equals `2 u_tilde` exactly.
    pub telescoping_sum: Rat,
    pub sum_identity_ok: bool,
    /// Max `|skew|` over the three executions; at least `bound`.
    pub max_skew: Rat,
    pub bound_met: bool,
    /// Per-node check that its pulse in execution i+1 leads execution i+2 by
    /// exactly the clock shift (meaningful once pulses pass the breakpoint).
    pub shift_identity_ok: bool,
    pub faulty_sends: u64,
    pub indistinguishability_ok: bool,
}

/// Computes the six pulse times at `round`, the telescoping sum, and the
/// per-execution skews. Fails if any honest node has not reached `round`.
pub fn verify_lower_bound(
    triple: &ExecutionTriple,
    round: u64,
) -> Result<LowerBoundReport, AttackError> {
    let pulse = |e: usize, v: NodeId| -> Result<Rat, AttackError> {
        triple.traces[e]
            .pulses_of(v)
            .get(&round)
            .map(|(t, _)| t.as_rat().clone())
            .ok_or(AttackError::MissingPulse {
                exec: e,
                node: v,
                round,
            })
    };

    let mut pulse_times = Vec::new();
    let mut skews = Vec::new();
    let mut sum = Rat::zero();
    for e in 0..3usize {
        let a = wrap(e + 1);
        let b = wrap(e + 2);
        let pa = pulse(e, a)?;
        let pb = pulse(e, b)?;
        let diff = &pa - &pb;
        sum = &sum + &diff;
        pulse_times.push(vec![(a, pa), (b, pb)]);
        skews.push(diff);
    }
    let two_u_tilde = &Rat::from_int(2) * &triple.u_tilde;
    let bound = &two_u_tilde / &Rat::from_int(3);
    let max_skew = skews
        .iter()
        .map(|s| s.abs())
        .max()
        .expect("three executions");

    // Same node, two executions: the fast-clock copy leads by the shift.
    let mut shift_ok = true;
    for i in 0..3usize {
        let node = wrap(i);
        let in_fast = pulse((i + 1) % 3, node)?; // node i is on the fast clock in Ex i+1
        let in_nominal = pulse((i + 2) % 3, node)?;
        if &in_nominal - &in_fast != triple.shift {
            shift_ok = false;
        }
    }

    Ok(LowerBoundReport {
        round,
        u_tilde: triple.u_tilde.clone(),
        bound: bound.clone(),
        pulse_times,
        sum_identity_ok: sum == two_u_tilde,
        telescoping_sum: sum,
        bound_met: max_skew >= bound,
        max_skew,
        skews,
        shift_identity_ok: shift_ok,
        faulty_sends: triple.faulty_sends,
        indistinguishability_ok: true,
    })
}

/// The pulse index by which the clock shift is fully built up:
/// `ceil(u_tilde / (p_min (theta - 1))) + 1`.
pub fn attack_round(u_tilde: &Rat, p_min: &Rat, theta: &Rat) -> u64 {
    use num_traits::ToPrimitive;
    if u_tilde.is_zero() {
        return 1;
    }
    let ratio = u_tilde / &(p_min * &(theta - &Rat::one()));
    let k = ratio.ceil_int().to_u64().expect("round index fits in u64");
    k + 1
}

/// A real-time horizon that safely covers `round` pulses of a behavior whose
/// periods never exceed `p_max` and whose first pulse is within `s`.
pub fn attack_horizon(params: &SystemParams, p_max: &Rat, round: u64) -> TimePoint {
    TimePoint::new(&params.s + &(p_max * &Rat::from(round + 1)))
}

/// Builds the triple and verifies the bound, retrying with a nudged
/// `u_tilde` when a reception tie aborts an attempt.
pub fn run_attack(
    params: &SystemParams,
    make_behavior: &dyn Fn(NodeId) -> Box<dyn NodeBehavior>,
    round: u64,
    horizon: &TimePoint,
    max_retries: u32,
) -> Result<(ExecutionTriple, LowerBoundReport), AttackError> {
    let mut params = params.clone();
    let nudge = &params.d / &Rat::new(1_000_000_000, 1);
    for _attempt in 0..=max_retries {
        match build_execution_triple(&params, make_behavior, horizon) {
            Ok(triple) => {
                let report = verify_lower_bound(&triple, round)?;
                return Ok((triple, report));
            }
            Err(AttackError::ReceptionTie { .. }) => {
                params.u_tilde = &params.u_tilde + &nudge;
                if params.u_tilde > params.d {
                    return Err(AttackError::UTildeTooLarge);
                }
            }
            Err(other) => return Err(other),
        }
    }
    Err(AttackError::RetriesExhausted(max_retries))
}

// ---------------------------------------------------------------------------
// Simple deterministic behaviors for exercising the construction
// ---------------------------------------------------------------------------

/// Sends nothing, pulses nothing. The triple is trivially indistinguishable
/// with zero faulty messages.
pub struct Mute;

impl NodeBehavior for Mute {
    fn on_init(&mut self, _local: &LocalTime) -> Result<Vec<Action>, BehaviorError> {
        Ok(vec![])
    }
    fn on_message(
        &mut self,
        _local: &LocalTime,
        _from: NodeId,
        _payload: &MsgPayload,
    ) -> Result<Vec<Action>, BehaviorError> {
        Ok(vec![])
    }
    fn on_timer(&mut self, _local: &LocalTime, _id: u64) -> Result<Vec<Action>, BehaviorError> {
        Ok(vec![])
    }
}

/// Ignores the network entirely and pulses at local times `period, 2*period,
/// ...`. Skews under the construction are exactly the clock offsets.
pub struct FreeRunner {
    period: Rat,
}

impl FreeRunner {
    pub fn new(period: Rat) -> Self {
        assert!(period.is_positive(), "period must be positive");
        FreeRunner { period }
    }
}

impl NodeBehavior for FreeRunner {
    fn on_init(&mut self, _local: &LocalTime) -> Result<Vec<Action>, BehaviorError> {
        Ok(vec![Action::SetTimer {
            at: LocalTime::new(self.period.clone()),
            id: 1,
        }])
    }
    fn on_message(
        &mut self,
        _local: &LocalTime,
        _from: NodeId,
        _payload: &MsgPayload,
    ) -> Result<Vec<Action>, BehaviorError> {
        Ok(vec![])
    }
    fn on_timer(&mut self, _local: &LocalTime, id: u64) -> Result<Vec<Action>, BehaviorError> {
        let next = &self.period * &Rat::from(id + 1);
        Ok(vec![
            Action::EmitPulse { index: id },
            Action::SetTimer {
                at: LocalTime::new(next),
                id: id + 1,
            },
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;

    fn attack_params(u_tilde: Rat) -> SystemParams {
        // theta = 3/2 exaggerates the clock bend; the behaviors under test
        // here do not depend on the protocol constants.
        SystemParams::new(
            3,
            r(1, 1),
            Rat::zero(),
            u_tilde,
            r(3, 2),
            r(1, 1),
            r(10, 1),
        )
    }

    #[test]
    fn mute_behavior_gives_trivial_triple() {
        let params = attack_params(r(3, 10));
        let triple = build_execution_triple(
            &params,
            &|_| Box::new(Mute),
            &TimePoint::new(r(20, 1)),
        )
        .unwrap();
        assert_eq!(triple.faulty_sends, 0);
        for trace in &triple.traces {
            assert!(trace.events.is_empty());
        }
    }

    #[test]
    fn free_runner_skews_are_exactly_the_clock_offsets() {
        let u_tilde = r(3, 10);
        let params = attack_params(u_tilde.clone());
        let horizon = TimePoint::new(r(40, 1));
        let triple =
            build_execution_triple(&params, &|_| Box::new(FreeRunner::new(r(2, 1))), &horizon)
                .unwrap();
        assert_eq!(triple.faulty_sends, 0);

        // Pick a round safely past the breakpoint 2u/(3(theta-1)) = 2/5.
        let round = attack_round(&u_tilde, &r(2, 1), &params.theta);
        assert_eq!(round, 2);
        let report = verify_lower_bound(&triple, 10).unwrap();
        assert!(report.sum_identity_ok, "{report:?}");
        assert_eq!(report.telescoping_sum, r(3, 5)); // 2 * 3/10
        assert!(report.shift_identity_ok);
        assert!(report.bound_met);
        assert_eq!(report.max_skew, r(1, 5)); // exactly 2*u_tilde/3
    }

    #[test]
    fn zero_u_tilde_degenerates_to_identical_executions() {
        let params = attack_params(Rat::zero());
        let horizon = TimePoint::new(r(20, 1));
        let triple =
            build_execution_triple(&params, &|_| Box::new(FreeRunner::new(r(2, 1))), &horizon)
                .unwrap();
        let report = verify_lower_bound(&triple, 5).unwrap();
        assert!(report.sum_identity_ok);
        assert_eq!(report.telescoping_sum, Rat::zero());
        assert_eq!(report.max_skew, Rat::zero());
        assert!(report.bound_met); // bound is zero
    }

    #[test]
    fn attack_round_formula() {
        // u_tilde = 3/10, p_min = 10, theta = 101/100 -> ceil(3) + 1 = 4.
        assert_eq!(attack_round(&r(3, 10), &r(10, 1), &r(101, 100)), 4);
        assert_eq!(attack_round(&Rat::zero(), &r(10, 1), &r(101, 100)), 1);
        assert_eq!(attack_round(&r(3, 10), &r(2, 1), &r(101, 100)), 16);
        // Fractional ratio rounds up: 0.3 / (7 * 0.01) = 30/7 -> 5 -> 6.
        assert_eq!(attack_round(&r(3, 10), &r(7, 1), &r(101, 100)), 6);
    }

    #[test]
    fn missing_pulse_is_reported() {
        let params = attack_params(r(3, 10));
        let triple = build_execution_triple(
            &params,
            &|_| Box::new(Mute),
            &TimePoint::new(r(5, 1)),
        )
        .unwrap();
        assert!(matches!(
            verify_lower_bound(&triple, 1),
            Err(AttackError::MissingPulse { .. })
        ));
    }
}
