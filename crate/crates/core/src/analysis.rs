//! Parameter feasibility solving and exact trace conformance checking.
//!
//! The solver turns `(d, u, theta)` into the protocol constants `(s, t,
//! delta)` plus period bounds. Two inequalities govern the choice:
//!
//! - skew budget: `s(2 - theta) >= 2(2 theta - 1) delta(s) + 2(theta - 1) t`,
//!   with `delta(s) = 2u + (theta^2-1)d + 2(theta^3-theta^2)s` expanded, so
//!   the bound is linear in `s`;
//! - round length: `t >= (theta^2+theta+1)s + (theta+1)d - 2u`.
//!
//! With both tight the system is linear and solved exactly; it has a positive
//! solution iff `4 - theta - 4 theta^2 + 10 theta^3 - 8 theta^4 > 0` (theta
//! below roughly 1.0795). The headline feasibility *flag*, however, is keyed
//! to the cubic `4 - theta + theta^2 - 3 theta^3`, whose sign flips between
//! 1.11 and 1.12; in the narrow band where the cubic is positive but the
//! coupled system diverges, the solver reports the skew-budget solution for
//! the floor round length and lists `round_length` as unresolved.
//!
//! The checkers evaluate every protocol inequality on recorded traces with
//! exact arithmetic; failures carry concrete witnesses.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{LocalTime, TimePoint};
use crate::params::{delta_formula, SystemParams};
use crate::rational::{spread, Rat};
use crate::sim::{Annotation, ExecutionTrace, MsgPayload, TraceEvent};
use crate::NodeId;

// ---------------------------------------------------------------------------
// Parameter solver
// ---------------------------------------------------------------------------

/// Solved protocol constants and diagnostics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterSolution {
    pub d: Rat,
    pub u: Rat,
    pub theta: Rat,
    /// `4 - theta + theta^2 - 3 theta^3`; feasibility flag is its sign.
    pub polynomial: Rat,
    pub feasible: bool,
    /// Constraints that could not be satisfied (empty when fully solved).
    pub binding_constraints: Vec<String>,
    /// Round-length inflation knob used (1 = minimal round length).
    pub t_scale: Rat,
    pub solved: Option<SolvedValues>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolvedValues {
    pub s: Rat,
    pub t: Rat,
    pub delta: Rat,
    /// `(t - (theta+1)s) / theta`.
    pub p_min: Rat,
    /// `t + 3s`.
    pub p_max: Rat,
    /// True when both governing inequalities hold (tight at scale 1).
    pub coupled: bool,
    /// Alternative closed forms for `s` kept for reference: the same linear
    /// system written with denominator `4 - 2 theta - theta^2`, resp.
    /// `2 - theta + theta^2 - theta^3`. Neither is what the checker
    /// inequalities consume; they are recorded for comparison only.
    pub s_alt_quadratic: Rat,
    pub s_alt_cubic: Rat,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SolverError {
    #[error("invalid solver input: {0}")]
    BadInput(String),
}

/// `4 - theta + theta^2 - 3 theta^3`.
pub fn feasibility_polynomial(theta: &Rat) -> Rat {
    let t2 = theta * theta;
    let t3 = &t2 * theta;
    &(&(&Rat::from_int(4) - theta) + &t2) - &(&Rat::from_int(3) * &t3)
}

/// Solves for the minimal `(s, t)` at the given drift, delay, and
/// uncertainty. `t_scale >= 1` inflates the round length; the skew bound is
/// re-solved for the inflated value.
pub fn solve_parameters(
    d: &Rat,
    u: &Rat,
    theta: &Rat,
    t_scale: &Rat,
) -> Result<ParameterSolution, SolverError> {
    if !d.is_positive() {
        return Err(SolverError::BadInput(format!("d = {d} must be > 0")));
    }
    if u.is_negative() || u > d {
        return Err(SolverError::BadInput(format!(
            "u = {u} must lie in [0, d = {d}]"
        )));
    }
    if theta <= &Rat::one() {
        return Err(SolverError::BadInput(format!(
            "theta = {theta} must be > 1"
        )));
    }
    if t_scale < &Rat::one() {
        return Err(SolverError::BadInput(format!(
            "t_scale = {t_scale} must be >= 1"
        )));
    }

    let polynomial = feasibility_polynomial(theta);
    let feasible = polynomial.is_positive();
    let mut binding = Vec::new();
    if !feasible {
        binding.push("polynomial".to_string());
        return Ok(ParameterSolution {
            d: d.clone(),
            u: u.clone(),
            theta: theta.clone(),
            polynomial,
            feasible,
            binding_constraints: binding,
            t_scale: t_scale.clone(),
            solved: None,
        });
    }

    let one = Rat::one();
    let two = Rat::from_int(2);
    let theta2 = theta * theta;
    let theta3 = &theta2 * theta;
    // a = 2u + (theta^2 - 1) d, the s-free part of delta.
    let a = &(&two * u) + &(&(&theta2 - &one) * d);
    // c = 2(2 theta - 1), the delta coefficient in the skew budget.
    let c = &two * &(&(&two * theta) - &one);
    // c0 = (theta + 1) d - 2u, the s-free part of the round-length bound.
    let c0 = &(&(theta + &one) * d) - &(&two * u);
    // Skew budget solved for s given t:
    //   s * d1 = c*a + 2(theta-1) t,  d1 = (2-theta) - 2 c theta^2 (theta-1).
    let d1 = &(&two - theta) - &(&(&(&two * &c) * &theta2) * &(theta - &one));
    // Both inequalities tight:
    //   s * d2 = c*a + 2(theta-1) c0,  d2 = d1 - 2(theta^3 - 1).
    let d2 = &d1 - &(&two * &(&theta3 - &one));

    let round_poly = &(&theta2 + theta) + &one; // theta^2 + theta + 1
    let two_theta_minus = &two * &(theta - &one); // 2(theta - 1)

    let (s, t, coupled) = if d2.is_positive() {
        let s_min = &(&(&c * &a) + &(&two_theta_minus * &c0)) / &d2;
        let t_min = &(&round_poly * &s_min) + &c0;
        if t_scale == &one {
            (s_min, t_min, true)
        } else {
            // Inflate t, then re-solve the skew budget for the larger t.
            let t = t_scale * &t_min;
            let s = &(&(&c * &a) + &(&two_theta_minus * &t)) / &d1;
            (s, t, true)
        }
    } else {
        // The coupled system diverges: fall back to the floor round length
        // and solve only the skew budget. The round-length bound is then
        // unsatisfiable for any finite t, which the report records.
        binding.push("round_length".to_string());
        let t_floor = &(&(&(&round_poly * &c) * &a) / &polynomial) + &c0;
        let t = t_scale * &t_floor;
        let s = &(&(&c * &a) + &(&two_theta_minus * &t)) / &d1;
        (s, t, false)
    };

    let delta = delta_formula(d, u, theta, &s);
    let p_min = &(&t - &(&(theta + &one) * &s)) / theta;
    let p_max = &t + &(&Rat::from_int(3) * &s);

    // Reference closed forms with the two alternative denominators.
    let alt_quad_den = &(&Rat::from_int(4) - &(&two * theta)) - &theta2;
    let alt_quad_num = &(&c * &(u + &(&(theta - &one) * d))) + &(&two_theta_minus * &t);
    let s_alt_quadratic = if alt_quad_den.is_zero() {
        Rat::zero()
    } else {
        &alt_quad_num / &alt_quad_den
    };
    let alt_cubic_den = &(&(&two - theta) + &theta2) - &theta3;
    let alt_cubic_num = &(&c * &a) + &(&two_theta_minus * &t);
    let s_alt_cubic = if alt_cubic_den.is_zero() {
        Rat::zero()
    } else {
        &alt_cubic_num / &alt_cubic_den
    };

    Ok(ParameterSolution {
        d: d.clone(),
        u: u.clone(),
        theta: theta.clone(),
        polynomial,
        feasible,
        binding_constraints: binding,
        t_scale: t_scale.clone(),
        solved: Some(SolvedValues {
            s,
            t,
            delta,
            p_min,
            p_max,
            coupled,
            s_alt_quadratic,
            s_alt_cubic,
        }),
    })
}

impl ParameterSolution {
    /// Builds the parameter record for a system of `n` nodes. `u_tilde`
    /// defaults to `u` when `None`.
    pub fn to_system_params(&self, n: usize, u_tilde: Option<Rat>) -> Option<SystemParams> {
        let solved = self.solved.as_ref()?;
        Some(SystemParams::new(
            n,
            self.d.clone(),
            self.u.clone(),
            u_tilde.unwrap_or_else(|| self.u.clone()),
            self.theta.clone(),
            solved.s.clone(),
            solved.t.clone(),
        ))
    }
}

// ---------------------------------------------------------------------------
// Conformance checking
// ---------------------------------------------------------------------------

/// One named check with an optional failure witness.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ConformanceReport {
    pub checks: Vec<CheckResult>,
    pub rounds_checked: u64,
    pub max_skew: Option<Rat>,
    pub min_period: Option<Rat>,
    pub max_period: Option<Rat>,
}

impl ConformanceReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &str, witness: Option<String>) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            pass: witness.is_none(),
            witness,
        });
    }
}

/// Everything one honest node committed to in one round, extracted from the
/// trace.
#[derive(Clone, Debug)]
pub struct NodeRound {
    pub pulse_time: TimePoint,
    pub pulse_local: LocalTime,
    /// Per-dealer broadcast output; a `None` value is the bottom output.
    pub outputs: BTreeMap<NodeId, Option<LocalTime>>,
    /// Per-dealer offset estimates as recorded by the node.
    pub estimates: Vec<Option<Rat>>,
    pub bottom_count: usize,
    pub correction: Rat,
    /// Local time at which the correction was finalized.
    pub correction_local: LocalTime,
}

/// Per-node, per-round protocol data pulled out of a trace. Only rounds with
/// a finalized correction appear.
pub fn extract_rounds(trace: &ExecutionTrace) -> BTreeMap<NodeId, BTreeMap<u64, NodeRound>> {
    let mut pulses: BTreeMap<NodeId, BTreeMap<u64, (TimePoint, LocalTime)>> = BTreeMap::new();
    let mut outputs: BTreeMap<(NodeId, u64), BTreeMap<NodeId, Option<LocalTime>>> =
        BTreeMap::new();
    let mut corrections: BTreeMap<(NodeId, u64), (Vec<Option<Rat>>, usize, Rat, LocalTime)> =
        BTreeMap::new();
    for ev in &trace.events {
        match ev {
            TraceEvent::Pulse {
                t,
                node,
                local_time,
                pulse_index,
            } => {
                pulses
                    .entry(*node)
                    .or_default()
                    .insert(*pulse_index, (t.clone(), local_time.clone()));
            }
            TraceEvent::Note {
                node,
                local_time,
                annotation,
                ..
            } => match annotation {
                Annotation::TcbOutput {
                    round,
                    dealer,
                    output,
                } => {
                    outputs
                        .entry((*node, *round))
                        .or_default()
                        .insert(*dealer, output.clone());
                }
                Annotation::Correction {
                    round,
                    estimates,
                    bottom_count,
                    delta,
                } => {
                    corrections.insert(
                        (*node, *round),
                        (
                            estimates.clone(),
                            *bottom_count,
                            delta.clone(),
                            local_time.clone(),
                        ),
                    );
                }
            },
            _ => {}
        }
    }
    let mut result: BTreeMap<NodeId, BTreeMap<u64, NodeRound>> = BTreeMap::new();
    for v in trace.honest_nodes() {
        let mut rounds = BTreeMap::new();
        if let Some(pmap) = pulses.get(&v) {
            for (r, (t, local)) in pmap {
                let Some((estimates, bottom_count, correction, correction_local)) =
                    corrections.get(&(v, *r)).cloned()
                else {
                    continue;
                };
                let outs = outputs.get(&(v, *r)).cloned().unwrap_or_default();
                rounds.insert(
                    *r,
                    NodeRound {
                        pulse_time: t.clone(),
                        pulse_local: local.clone(),
                        outputs: outs,
                        estimates,
                        bottom_count,
                        correction,
                        correction_local,
                    },
                );
            }
        }
        result.insert(v, rounds);
    }
    result
}

/// Real time at which `node` received the message it accepted at local time
/// `h` from `dealer` in `round`.
fn accepted_reception_time(
    trace: &ExecutionTrace,
    node: NodeId,
    dealer: NodeId,
    round: u64,
    h: &LocalTime,
) -> Option<TimePoint> {
    for ev in &trace.events {
        if let TraceEvent::Receive {
            t,
            from,
            to,
            local_time,
            payload,
            ..
        } = ev
        {
            if *to == node && *from == dealer && local_time == h {
                let matches_round = match payload {
                    MsgPayload::TcbDealer {
                        round: r,
                        dealer: x,
                        ..
                    }
                    | MsgPayload::TcbEcho {
                        round: r,
                        dealer: x,
                        ..
                    } => *r == round && *x == dealer,
                    MsgPayload::Raw { .. } => false,
                };
                if matches_round {
                    return Some(t.clone());
                }
            }
        }
    }
    None
}

/// Liveness, per-index skew, and period bounds over pulses `1..=horizon`.
pub fn check_pulse_sync(
    trace: &ExecutionTrace,
    s: &Rat,
    p_min: &Rat,
    p_max: &Rat,
    horizon: u64,
) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let honest = trace.honest_nodes();

    // Liveness: every honest node pulses 1..=horizon exactly once.
    let mut liveness_witness = None;
    let mut counts: BTreeMap<(NodeId, u64), u64> = BTreeMap::new();
    for ev in &trace.events {
        if let TraceEvent::Pulse {
            node, pulse_index, ..
        } = ev
        {
            *counts.entry((*node, *pulse_index)).or_default() += 1;
        }
    }
    'live: for v in &honest {
        for r in 1..=horizon {
            match counts.get(&(*v, r)).copied().unwrap_or(0) {
                1 => {}
                c => {
                    liveness_witness = Some(format!("node {v} emitted pulse {r} {c} times"));
                    break 'live;
                }
            }
        }
    }
    report.push("liveness", liveness_witness);

    let pulses: BTreeMap<NodeId, BTreeMap<u64, (TimePoint, LocalTime)>> = honest
        .iter()
        .map(|v| (*v, trace.pulses_of(*v)))
        .collect();
    let times_at = |r: u64| -> Option<Vec<Rat>> {
        honest
            .iter()
            .map(|v| pulses[v].get(&r).map(|(t, _)| t.as_rat().clone()))
            .collect()
    };

    // Per-index skew.
    let mut skew_witness = None;
    let mut max_skew: Option<Rat> = None;
    for r in 1..=horizon {
        let Some(times) = times_at(r) else { continue };
        let sp = spread(&times);
        if skew_witness.is_none() && &sp > s {
            skew_witness = Some(format!("pulse {r}: skew {sp} exceeds bound {s}"));
        }
        max_skew = Some(match max_skew.take() {
            Some(m) => m.max(sp),
            None => sp,
        });
    }
    report.push("skew", skew_witness);

    // Period bounds between consecutive indices.
    let mut min_witness = None;
    let mut max_witness = None;
    let mut min_period: Option<Rat> = None;
    let mut max_period: Option<Rat> = None;
    for r in 1..horizon {
        let (Some(now), Some(next)) = (times_at(r), times_at(r + 1)) else {
            continue;
        };
        let lo = next.iter().min().unwrap() - now.iter().max().unwrap();
        let hi = next.iter().max().unwrap() - now.iter().min().unwrap();
        if min_witness.is_none() && &lo < p_min {
            min_witness = Some(format!(
                "pulse {r}->{}: separation {lo} below minimum period {p_min}",
                r + 1
            ));
        }
        if max_witness.is_none() && &hi > p_max {
            max_witness = Some(format!(
                "pulse {r}->{}: span {hi} above maximum period {p_max}",
                r + 1
            ));
        }
        min_period = Some(match min_period.take() {
            Some(m) => m.min(lo),
            None => lo,
        });
        max_period = Some(match max_period.take() {
            Some(m) => m.max(hi),
            None => hi,
        });
    }
    report.push("min_period", min_witness);
    report.push("max_period", max_witness);

    report.rounds_checked = horizon;
    report.max_skew = max_skew;
    report.min_period = min_period;
    report.max_period = max_period;
    report
}

/// Evaluates every per-round protocol inequality on the trace, exactly:
///
/// - `estimate_formula`: recorded estimates equal the defining formula;
/// - `honest_acceptance`: honest dealers' broadcasts are never rejected;
/// - `acceptance_time_agreement`: two honest acceptors of the same dealer
///   received it within `(1 - 1/theta) d + 2u/theta` real time;
/// - `estimate_validity`: honest-pair estimates lie in
///   `[p_w - p_v, p_w - p_v + delta)`;
/// - `estimate_consistency`: non-bottom estimates of a common dealer agree
///   up to `delta` after removing the pulse offset;
/// - `correction_bounds`: corrections lie in `[-||p||, ||p|| + delta]` and
///   corrected pulse targets are within `||p||/2 + delta` of each other;
/// - `wakeup_feasible`: the next pulse's local target is never in the past;
/// - `skew_preserved`: the next round's pulse spread stays within `s`.
pub fn check_lemma_suite(trace: &ExecutionTrace, params: &SystemParams) -> ConformanceReport {
    let mut report = ConformanceReport::default();
    let honest = trace.honest_nodes();
    let rounds = extract_rounds(trace);
    let complete = honest
        .iter()
        .map(|v| rounds[v].keys().max().copied().unwrap_or(0))
        .min()
        .unwrap_or(0);

    let one = Rat::one();
    let two = Rat::from_int(2);
    let reception_gap_bound = &(&(&one - &(&one / &params.theta)) * &params.d)
        + &(&(&two * &params.u) / &params.theta);

    let mut w_formula = None;
    let mut w_accept = None;
    let mut w_rt = None;
    let mut w_validity = None;
    let mut w_consistency = None;
    let mut w_corr_bounds = None;
    let mut w_wakeup = None;
    let mut w_skew_next = None;

    for r in 1..=complete {
        let pulse_of = |v: &NodeId| rounds[v][&r].pulse_time.as_rat().clone();
        let pulse_vec: Vec<Rat> = honest.iter().map(|v| pulse_of(v)).collect();
        let pulse_spread = spread(&pulse_vec);

        for v in &honest {
            let data = &rounds[v][&r];

            // estimate_formula: the node derived its estimates from its own
            // recorded outputs by the defining formula.
            for w in 0..params.n as u32 {
                let dealer = NodeId(w);
                let from_output = data
                    .outputs
                    .get(&dealer)
                    .cloned()
                    .flatten()
                    .map(|h| crate::cps::offset_estimate(&h, &data.pulse_local, params));
                let recorded = data.estimates.get(w as usize).cloned().flatten();
                if w_formula.is_none() && from_output != recorded {
                    w_formula = Some(format!(
                        "round {r}, node {v}, dealer {dealer}: recorded estimate {recorded:?} \
                         differs from formula value {from_output:?}"
                    ));
                }
            }

            // honest_acceptance.
            for w in &honest {
                let out = data.outputs.get(w).cloned().flatten();
                if w_accept.is_none() && out.is_none() {
                    w_accept = Some(format!("round {r}, node {v}: rejected honest dealer {w}"));
                }
            }

            // estimate_validity for honest pairs, half-open interval.
            for w in &honest {
                let Some(est) = data.estimates.get(w.0 as usize).cloned().flatten() else {
                    continue;
                };
                let lo = &pulse_of(w) - &pulse_of(v);
                let hi = &lo + &params.delta;
                if w_validity.is_none() && (est < lo || est >= hi) {
                    w_validity = Some(format!(
                        "round {r}, node {v}, dealer {w}: estimate {est} outside [{lo}, {hi})"
                    ));
                }
            }
        }

        // acceptance_time_agreement and estimate_consistency over pairs.
        for x in 0..params.n as u32 {
            let dealer = NodeId(x);
            for v in &honest {
                for w in &honest {
                    if v >= w {
                        continue;
                    }
                    let hv = rounds[v][&r].outputs.get(&dealer).cloned().flatten();
                    let hw = rounds[w][&r].outputs.get(&dealer).cloned().flatten();
                    let (Some(hv), Some(hw)) = (hv, hw) else {
                        continue;
                    };
                    let tv = accepted_reception_time(trace, *v, dealer, r, &hv);
                    let tw = accepted_reception_time(trace, *w, dealer, r, &hw);
                    match (tv, tw) {
                        (Some(tv), Some(tw)) => {
                            let gap = (&tv - &tw).abs();
                            if w_rt.is_none() && gap > reception_gap_bound {
                                w_rt = Some(format!(
                                    "round {r}, dealer {dealer}, nodes {v},{w}: reception gap \
                                     {gap} exceeds {reception_gap_bound}"
                                ));
                            }
                        }
                        _ => {
                            if w_rt.is_none() {
                                w_rt = Some(format!(
                                    "round {r}, dealer {dealer}: accepted reception not found \
                                     in trace"
                                ));
                            }
                        }
                    }
                    let ev = rounds[v][&r].estimates[x as usize].clone();
                    let ew = rounds[w][&r].estimates[x as usize].clone();
                    let (Some(ev), Some(ew)) = (ev, ew) else {
                        continue;
                    };
                    let diff = (&(&ev - &ew) - &(&pulse_of(w) - &pulse_of(v))).abs();
                    if w_consistency.is_none() && diff >= params.delta {
                        w_consistency = Some(format!(
                            "round {r}, dealer {dealer}, nodes {v},{w}: estimate disagreement \
                             {diff} not below delta {}",
                            params.delta
                        ));
                    }
                }
            }
        }

        // correction_bounds.
        let corrected: Vec<Rat> = honest
            .iter()
            .map(|v| &rounds[v][&r].correction + &pulse_of(v))
            .collect();
        for v in &honest {
            let c = &rounds[v][&r].correction;
            let lo = -&pulse_spread;
            let hi = &pulse_spread + &params.delta;
            if w_corr_bounds.is_none() && (c < &lo || c > &hi) {
                w_corr_bounds = Some(format!(
                    "round {r}, node {v}: correction {c} outside [{lo}, {hi}]"
                ));
            }
        }
        let corrected_spread = spread(&corrected);
        let corrected_bound = &(&pulse_spread / &two) + &params.delta;
        if w_corr_bounds.is_none() && corrected_spread > corrected_bound {
            w_corr_bounds = Some(format!(
                "round {r}: corrected pulse spread {corrected_spread} exceeds {corrected_bound}"
            ));
        }

        // wakeup_feasible: pulse_local + correction + t >= finalization local.
        for v in &honest {
            let data = &rounds[v][&r];
            let target = &(&data.pulse_local + &data.correction) + &params.t;
            if w_wakeup.is_none() && target < data.correction_local {
                w_wakeup = Some(format!(
                    "round {r}, node {v}: wakeup target {target} precedes finalization local \
                     time {}",
                    data.correction_local
                ));
            }
        }

        // skew_preserved for the next pulse index, when present everywhere.
        let next: Option<Vec<Rat>> = honest
            .iter()
            .map(|v| {
                trace
                    .pulses_of(*v)
                    .get(&(r + 1))
                    .map(|(t, _)| t.as_rat().clone())
            })
            .collect();
        if let Some(next) = next {
            let sp = spread(&next);
            if w_skew_next.is_none() && sp > params.s {
                w_skew_next = Some(format!(
                    "round {}: pulse spread {sp} exceeds s = {}",
                    r + 1,
                    params.s
                ));
            }
        }
    }

    report.push("estimate_formula", w_formula);
    report.push("honest_acceptance", w_accept);
    report.push("acceptance_time_agreement", w_rt);
    report.push("estimate_validity", w_validity);
    report.push("estimate_consistency", w_consistency);
    report.push("correction_bounds", w_corr_bounds);
    report.push("wakeup_feasible", w_wakeup);
    report.push("skew_preserved", w_skew_next);
    report.rounds_checked = complete;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::min_round_length;
    use crate::rational::r;

    #[test]
    fn polynomial_values_at_the_boundary() {
        assert_eq!(
            feasibility_polynomial(&r(111, 100)),
            Rat::new(19207, 1_000_000)
        );
        assert_eq!(
            feasibility_polynomial(&r(112, 100)),
            Rat::new(-80384, 1_000_000)
        );
        assert_eq!(feasibility_polynomial(&r(9, 8)), Rat::new(-67, 512));
    }

    #[test]
    fn solver_feasible_at_111_infeasible_at_112() {
        let one = Rat::one();
        let yes = solve_parameters(&r(1, 1), &Rat::zero(), &r(111, 100), &one).unwrap();
        assert!(yes.feasible);
        let no = solve_parameters(&r(1, 1), &Rat::zero(), &r(112, 100), &one).unwrap();
        assert!(!no.feasible);
        assert_eq!(no.binding_constraints, vec!["polynomial".to_string()]);
        assert!(no.solved.is_none());
    }

    #[test]
    fn solver_rejects_bad_inputs() {
        let one = Rat::one();
        assert!(solve_parameters(&r(1, 1), &Rat::zero(), &Rat::one(), &one).is_err());
        assert!(solve_parameters(&Rat::zero(), &Rat::zero(), &r(11, 10), &one).is_err());
        assert!(solve_parameters(&r(1, 1), &r(2, 1), &r(11, 10), &one).is_err());
    }

    #[test]
    fn coupled_solution_is_tight_and_valid() {
        let sol = solve_parameters(&r(1, 1), &r(1, 1000), &r(101, 100), &Rat::one()).unwrap();
        assert!(sol.feasible);
        assert!(sol.binding_constraints.is_empty());
        let v = sol.solved.as_ref().unwrap();
        assert!(v.coupled);

        // Round length tight: t == (theta^2+theta+1)s + (theta+1)d - 2u.
        let t_min = min_round_length(&sol.d, &sol.u, &sol.theta, &v.s);
        assert_eq!(v.t, t_min);

        // Skew budget tight: s(2-theta) == 2(2theta-1)delta + 2(theta-1)t.
        let lhs = &v.s * &(&Rat::from_int(2) - &sol.theta);
        let rhs = &(&(&Rat::from_int(2) * &(&(&Rat::from_int(2) * &sol.theta) - &Rat::one()))
            * &v.delta)
            + &(&(&Rat::from_int(2) * &(&sol.theta - &Rat::one())) * &v.t);
        assert_eq!(lhs, rhs);

        // The full record validates; p_min positive; s dominates delta.
        let params = sol.to_system_params(4, None).unwrap();
        assert!(params.validate().is_ok(), "{:?}", params.validate());
        assert!(v.p_min.is_positive());
        assert!(v.s > v.delta);
        assert_eq!(v.p_max, &v.t + &(&Rat::from_int(3) * &v.s));
    }

    #[test]
    fn inflated_round_length_still_validates() {
        let sol = solve_parameters(&r(1, 1), &r(1, 1000), &r(101, 100), &r(3, 2)).unwrap();
        let params = sol.to_system_params(4, None).unwrap();
        assert!(params.validate().is_ok(), "{:?}", params.validate());
    }

    #[test]
    fn divergent_band_reports_round_length() {
        // At theta = 1.11 the cubic is positive but the coupled system
        // diverges.
        let sol = solve_parameters(&r(1, 1), &Rat::zero(), &r(111, 100), &Rat::one()).unwrap();
        assert!(sol.feasible);
        assert_eq!(sol.binding_constraints, vec!["round_length".to_string()]);
        let v = sol.solved.as_ref().unwrap();
        assert!(!v.coupled);
        // The skew budget itself still holds (tight) for the emitted pair.
        let lhs = &v.s * &(&Rat::from_int(2) - &sol.theta);
        let rhs = &(&(&Rat::from_int(2) * &(&(&Rat::from_int(2) * &sol.theta) - &Rat::one()))
            * &v.delta)
            + &(&(&Rat::from_int(2) * &(&sol.theta - &Rat::one())) * &v.t);
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn s_scales_with_uncertainty_plus_drift() {
        // s / (u + (theta-1)d) stays bounded over a drift grid. Measured
        // ratios: ~8.1 at 1.001, ~9.1 at 1.01, ~20.1 at 1.05 (the ratio grows
        // toward the coupled-system divergence near 1.08); 24 is the frozen
        // regression ceiling.
        for (theta, u) in [
            (r(1001, 1000), Rat::zero()),
            (r(101, 100), r(1, 1000)),
            (r(21, 20), r(1, 100)),
        ] {
            let sol = solve_parameters(&r(1, 1), &u, &theta, &Rat::one()).unwrap();
            let v = sol.solved.unwrap();
            let scale = &u + &(&theta - &Rat::one());
            let ratio = &v.s / &scale;
            assert!(
                ratio <= Rat::from_int(24),
                "ratio {ratio} too large at theta {theta}"
            );
        }
    }

    #[test]
    fn solver_is_reproducible() {
        let a = solve_parameters(&r(2, 1), &r(1, 50), &r(21, 20), &Rat::one()).unwrap();
        let b = solve_parameters(&r(2, 1), &r(1, 50), &r(21, 20), &Rat::one()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
