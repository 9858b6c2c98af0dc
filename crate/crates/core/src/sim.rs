//! Deterministic discrete-event simulation over continuous (exact rational)
//! time.
//!
//! One engine instance is strictly single-threaded: events are processed in
//! total order `(time, target node, sequence)`, honest nodes run
//! [`NodeBehavior`] state machines that see only local times and message
//! contents, and every faulty send passes the observation-ledger gate.
//! Replaying a simulation with identical inputs yields a bit-identical trace.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockSchedule, LocalTime, TimePoint};
use crate::params::SystemParams;
use crate::rational::Rat;
use crate::sig::{ObservationLedger, SignatureToken};
use crate::NodeId;

/// Wire payloads. The engine needs to enumerate embedded signature tokens to
/// gate faulty sends, so payload framing lives here.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "msg", rename_all = "snake_case")]
pub enum MsgPayload {
    /// A dealer's own broadcast for round `round`.
    TcbDealer {
        round: u64,
        dealer: NodeId,
        token: SignatureToken,
    },
    /// A forwarded copy of the dealer's signature.
    TcbEcho {
        round: u64,
        dealer: NodeId,
        token: SignatureToken,
    },
    /// Free-form payload for test behaviors.
    Raw {
        tag: String,
        data: String,
        tokens: Vec<SignatureToken>,
    },
}

impl MsgPayload {
    pub fn tokens(&self) -> Vec<&SignatureToken> {
        match self {
            MsgPayload::TcbDealer { token, .. } | MsgPayload::TcbEcho { token, .. } => {
                vec![token]
            }
            MsgPayload::Raw { tokens, .. } => tokens.iter().collect(),
        }
    }
}

/// What a behavior may do in response to an event.
#[derive(Clone, Debug)]
pub enum Action {
    Send { to: NodeId, payload: MsgPayload },
    /// Fire `on_timer(id)` when the node's hardware clock shows `at`.
    SetTimer { at: LocalTime, id: u64 },
    EmitPulse { index: u64 },
    Annotate(Annotation),
}

/// Protocol-state evidence written into the trace for the conformance
/// checkers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum Annotation {
    /// Broadcast instance (round, dealer) finalized at this node with
    /// `output` (`None` is the bottom output).
    TcbOutput {
        round: u64,
        dealer: NodeId,
        output: Option<LocalTime>,
    },
    /// Round correction computed: per-dealer offset estimates (indexed by
    /// dealer id) and the midpoint correction applied to the next pulse.
    Correction {
        round: u64,
        estimates: Vec<Option<Rat>>,
        bottom_count: usize,
        delta: Rat,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorError(pub String);

impl std::fmt::Display for BehaviorError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A deterministic per-node protocol state machine. Implementations see only
/// local times and message contents, never real time, which makes a node's
/// actions a function of its local view prefix.
pub trait NodeBehavior {
    fn on_init(&mut self, local: &LocalTime) -> Result<Vec<Action>, BehaviorError>;
    fn on_message(
        &mut self,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Result<Vec<Action>, BehaviorError>;
    fn on_timer(&mut self, local: &LocalTime, id: u64) -> Result<Vec<Action>, BehaviorError>;
}

/// What a Byzantine strategy may do. Sends may override the delay within the
/// faulty-link band; timers use the corrupted node's clock schedule.
#[derive(Clone, Debug)]
pub enum AdvAction {
    Send {
        to: NodeId,
        payload: MsgPayload,
        delay: Option<Rat>,
    },
    SetTimer {
        at: LocalTime,
        id: u64,
    },
}

/// A Byzantine strategy driving all corrupted nodes. Callbacks fire on the
/// corrupted nodes' events; every send is gated by the observation ledger.
pub trait Adversary {
    fn name(&self) -> &'static str;
    fn on_init(&mut self, node: NodeId, local: &LocalTime) -> Vec<AdvAction>;
    fn on_receive(
        &mut self,
        node: NodeId,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Vec<AdvAction>;
    fn on_timer(&mut self, node: NodeId, local: &LocalTime, id: u64) -> Vec<AdvAction>;
}

/// Delay assignment for honest sends (faulty sends may override within their
/// band). Honest-to-honest links draw from `[d-u, d]`; links with a faulty
/// endpoint from `[d-u_tilde, d]`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DelayPolicy {
    /// Every message takes exactly `d`.
    Max,
    /// Every link takes its band minimum.
    MinBand,
    /// Every message takes exactly this delay (must lie in each link's band).
    Fixed { delay: Rat },
    /// Stateless per-send pseudorandom delay on an even grid across the
    /// band: `d - width * k / steps` with `k = splitmix64(seed, send#) mod
    /// (steps+1)`. Generator recorded in reports as `splitmix64-grid`.
    SeededGrid { seed: u64, steps: u64 },
    /// Honest-to-honest exactly `d`; any faulty endpoint exactly
    /// `d - u_tilde`. Used by the shifting construction.
    LowerBound,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DelayPolicy {
    /// The inclusive delay band for a link.
    pub fn band(params: &SystemParams, from: NodeId, to: NodeId, corrupted: &BTreeSet<NodeId>) -> (Rat, Rat) {
        let width = if corrupted.contains(&from) || corrupted.contains(&to) {
            &params.u_tilde
        } else {
            &params.u
        };
        (&params.d - width, params.d.clone())
    }

    fn delay(
        &self,
        params: &SystemParams,
        from: NodeId,
        to: NodeId,
        corrupted: &BTreeSet<NodeId>,
        send_index: u64,
    ) -> Rat {
        let (lo, hi) = Self::band(params, from, to, corrupted);
        match self {
            DelayPolicy::Max => hi,
            DelayPolicy::MinBand => lo,
            DelayPolicy::Fixed { delay } => delay.clone(),
            DelayPolicy::SeededGrid { seed, steps } => {
                let steps = (*steps).max(1);
                let k = splitmix64(seed ^ send_index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
                    % (steps + 1);
                let width = &hi - &lo;
                &hi - &(&width * &(&Rat::from(k) / &Rat::from(steps)))
            }
            DelayPolicy::LowerBound => {
                if corrupted.contains(&from) || corrupted.contains(&to) {
                    &params.d - &params.u_tilde
                } else {
                    params.d.clone()
                }
            }
        }
    }
}

/// One trace record. `t` is real time; `local_time` is the acting node's
/// hardware clock at that moment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Meta {
        n: usize,
        corrupted: Vec<NodeId>,
        params: SystemParams,
        schedules: Vec<ClockSchedule>,
        policy: DelayPolicy,
    },
    Send {
        t: TimePoint,
        from: NodeId,
        to: NodeId,
        local_time: LocalTime,
        payload: MsgPayload,
        seq: u64,
        delay: Rat,
    },
    Receive {
        t: TimePoint,
        from: NodeId,
        to: NodeId,
        local_time: LocalTime,
        payload: MsgPayload,
        seq: u64,
    },
    Pulse {
        t: TimePoint,
        node: NodeId,
        local_time: LocalTime,
        pulse_index: u64,
    },
    Note {
        t: TimePoint,
        node: NodeId,
        local_time: LocalTime,
        #[serde(flatten)]
        annotation: Annotation,
    },
}

/// Full record of one execution: the configuration plus the ordered event
/// log. Local views are projections of this log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub n: usize,
    pub corrupted: BTreeSet<NodeId>,
    pub params: SystemParams,
    pub schedules: Vec<ClockSchedule>,
    pub policy: DelayPolicy,
    pub events: Vec<TraceEvent>,
}

/// One element of a node's local view: what the node itself can observe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEvent {
    pub local_time: LocalTime,
    #[serde(flatten)]
    pub kind: ViewKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum ViewKind {
    Received { from: NodeId, payload: MsgPayload },
    Sent { to: NodeId, payload: MsgPayload },
    Pulse { index: u64 },
}

impl ExecutionTrace {
    /// The deterministic projection of the trace onto one node: everything
    /// the node observed, in order, tagged with local times. Two executions
    /// are indistinguishable to a node iff these projections are equal.
    pub fn local_view(&self, node: NodeId) -> Vec<ViewEvent> {
        let mut view = Vec::new();
        for ev in &self.events {
            match ev {
                TraceEvent::Receive {
                    from,
                    to,
                    local_time,
                    payload,
                    ..
                } if *to == node => view.push(ViewEvent {
                    local_time: local_time.clone(),
                    kind: ViewKind::Received {
                        from: *from,
                        payload: payload.clone(),
                    },
                }),
                TraceEvent::Send {
                    from,
                    to,
                    local_time,
                    payload,
                    ..
                } if *from == node => view.push(ViewEvent {
                    local_time: local_time.clone(),
                    kind: ViewKind::Sent {
                        to: *to,
                        payload: payload.clone(),
                    },
                }),
                TraceEvent::Pulse {
                    node: n,
                    local_time,
                    pulse_index,
                    ..
                } if *n == node => view.push(ViewEvent {
                    local_time: local_time.clone(),
                    kind: ViewKind::Pulse {
                        index: *pulse_index,
                    },
                }),
                _ => {}
            }
        }
        view
    }

    /// Real pulse times of a node, indexed by pulse number.
    pub fn pulses_of(&self, node: NodeId) -> BTreeMap<u64, (TimePoint, LocalTime)> {
        let mut out = BTreeMap::new();
        for ev in &self.events {
            if let TraceEvent::Pulse {
                t,
                node: n,
                local_time,
                pulse_index,
            } = ev
            {
                if *n == node {
                    out.insert(*pulse_index, (t.clone(), local_time.clone()));
                }
            }
        }
        out
    }

    pub fn honest_nodes(&self) -> Vec<NodeId> {
        (0..self.n as u32)
            .map(NodeId)
            .filter(|v| !self.corrupted.contains(v))
            .collect()
    }

    /// One JSON object per line: a meta record, then every event.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let meta = TraceEvent::Meta {
            n: self.n,
            corrupted: self.corrupted.iter().copied().collect(),
            params: self.params.clone(),
            schedules: self.schedules.clone(),
            policy: self.policy.clone(),
        };
        out.push_str(&serde_json::to_string(&meta).expect("trace serializes"));
        out.push('\n');
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("trace serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let meta: TraceEvent = serde_json::from_str(lines.next().unwrap_or("null"))?;
        let (n, corrupted, params, schedules, policy) = match meta {
            TraceEvent::Meta {
                n,
                corrupted,
                params,
                schedules,
                policy,
            } => (n, corrupted, params, schedules, policy),
            _ => {
                return Err(serde::de::Error::custom("first line is not a meta record"));
            }
        };
        let mut events = Vec::new();
        for line in lines {
            events.push(serde_json::from_str(line)?);
        }
        Ok(ExecutionTrace {
            n,
            corrupted: corrupted.into_iter().collect(),
            params,
            schedules,
            policy,
            events,
        })
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("faulty node {from} sent unobserved honest token {token:?} at time {at}")]
    Unforgeability {
        from: NodeId,
        token: SignatureToken,
        at: TimePoint,
    },
    #[error("delay {delay} outside band [{lo}, {hi}] on link {from}->{to}")]
    DelayOutOfBand {
        from: NodeId,
        to: NodeId,
        delay: Rat,
        lo: Rat,
        hi: Rat,
    },
    #[error("node {node} requested a timer at local time {at} before current local time {now}")]
    TimerInPast {
        node: NodeId,
        at: LocalTime,
        now: LocalTime,
    },
    #[error("node {node} behavior error: {message}")]
    Behavior { node: NodeId, message: String },
    #[error("event budget of {0} exceeded")]
    EventStorm(u64),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("injected send at {at} is in the past (now {now})")]
    InjectionInPast { at: TimePoint, now: TimePoint },
}

type EventKey = (TimePoint, NodeId, u64);

#[derive(Debug)]
enum EventBody {
    Init,
    Deliver {
        from: NodeId,
        payload: MsgPayload,
        send_seq: u64,
    },
    Timer {
        id: u64,
    },
    FaultySend {
        to: NodeId,
        payload: MsgPayload,
        delay: Rat,
    },
}

/// One single-threaded simulation instance.
pub struct Simulation {
    params: SystemParams,
    schedules: Vec<ClockSchedule>,
    corrupted: BTreeSet<NodeId>,
    policy: DelayPolicy,
    queue: BTreeMap<EventKey, EventBody>,
    next_seq: u64,
    send_count: u64,
    now: TimePoint,
    events: Vec<TraceEvent>,
    ledger: ObservationLedger,
    behaviors: BTreeMap<NodeId, Box<dyn NodeBehavior>>,
    adversary: Option<Box<dyn Adversary>>,
    max_events: u64,
    processed: u64,
}

impl Simulation {
    pub fn new(
        params: SystemParams,
        schedules: Vec<ClockSchedule>,
        corrupted: BTreeSet<NodeId>,
        policy: DelayPolicy,
    ) -> Result<Self, SimError> {
        if schedules.len() != params.n {
            return Err(SimError::BadConfig(format!(
                "{} schedules for {} nodes",
                schedules.len(),
                params.n
            )));
        }
        if corrupted.len() > params.f {
            return Err(SimError::BadConfig(format!(
                "{} corrupted nodes exceeds the fault budget {}",
                corrupted.len(),
                params.f
            )));
        }
        if let Some(v) = corrupted.iter().find(|v| v.0 as usize >= params.n) {
            return Err(SimError::BadConfig(format!("corrupted node {v} out of range")));
        }
        for (i, schedule) in schedules.iter().enumerate() {
            if !corrupted.contains(&NodeId(i as u32)) && schedule.max_rate() > &params.theta {
                return Err(SimError::BadConfig(format!(
                    "honest node {i} clock rate {} above theta {}",
                    schedule.max_rate(),
                    params.theta
                )));
            }
        }
        let mut sim = Simulation {
            queue: BTreeMap::new(),
            next_seq: 0,
            send_count: 0,
            now: TimePoint::zero(),
            events: Vec::new(),
            ledger: ObservationLedger::new(),
            behaviors: BTreeMap::new(),
            adversary: None,
            max_events: 5_000_000,
            processed: 0,
            params,
            schedules,
            corrupted,
            policy,
        };
        for v in 0..sim.params.n as u32 {
            let seq = sim.next_seq;
            sim.next_seq += 1;
            sim.queue
                .insert((TimePoint::zero(), NodeId(v), seq), EventBody::Init);
        }
        Ok(sim)
    }

    pub fn with_behavior(mut self, node: NodeId, behavior: Box<dyn NodeBehavior>) -> Self {
        assert!(
            !self.corrupted.contains(&node),
            "behaviors drive honest nodes; {node} is corrupted"
        );
        self.behaviors.insert(node, behavior);
        self
    }

    pub fn with_adversary(mut self, adversary: Box<dyn Adversary>) -> Self {
        self.adversary = Some(adversary);
        self
    }

    pub fn with_max_events(mut self, max_events: u64) -> Self {
        self.max_events = max_events;
        self
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn corrupted(&self) -> &BTreeSet<NodeId> {
        &self.corrupted
    }

    pub fn schedule_of(&self, node: NodeId) -> &ClockSchedule {
        &self.schedules[node.0 as usize]
    }

    pub fn now(&self) -> &TimePoint {
        &self.now
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Earliest pending event time.
    pub fn peek_time(&self) -> Option<&TimePoint> {
        self.queue.keys().next().map(|(t, _, _)| t)
    }

    fn local_of(&self, node: NodeId) -> LocalTime {
        self.schedules[node.0 as usize].local_time_at(&self.now)
    }

    /// Schedules a faulty send to be emitted at a future time; the ledger
    /// gate is evaluated when the send event fires.
    pub fn inject_faulty_send(
        &mut self,
        at: TimePoint,
        from: NodeId,
        to: NodeId,
        payload: MsgPayload,
        delay: Rat,
    ) -> Result<(), SimError> {
        if !self.corrupted.contains(&from) {
            return Err(SimError::BadConfig(format!(
                "injection from honest node {from}"
            )));
        }
        if at < self.now {
            return Err(SimError::InjectionInPast {
                at,
                now: self.now.clone(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue
            .insert((at, from, seq), EventBody::FaultySend { to, payload, delay });
        Ok(())
    }

    fn emit_send(
        &mut self,
        from: NodeId,
        to: NodeId,
        payload: MsgPayload,
        delay: Rat,
    ) -> Result<(), SimError> {
        let (lo, hi) = DelayPolicy::band(&self.params, from, to, &self.corrupted);
        if delay < lo || delay > hi {
            return Err(SimError::DelayOutOfBand {
                from,
                to,
                delay,
                lo,
                hi,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.send_count += 1;
        let local = self.local_of(from);
        self.events.push(TraceEvent::Send {
            t: self.now.clone(),
            from,
            to,
            local_time: local,
            payload: payload.clone(),
            seq,
            delay: delay.clone(),
        });
        let deliver_at = &self.now + &delay;
        self.queue.insert(
            (deliver_at, to, seq),
            EventBody::Deliver {
                from,
                payload,
                send_seq: seq,
            },
        );
        Ok(())
    }

    fn apply_actions(&mut self, node: NodeId, actions: Vec<Action>) -> Result<(), SimError> {
        let local = self.local_of(node);
        for action in actions {
            match action {
                Action::Send { to, payload } => {
                    let delay = self.policy.delay(
                        &self.params,
                        node,
                        to,
                        &self.corrupted,
                        self.send_count,
                    );
                    self.emit_send(node, to, payload, delay)?;
                }
                Action::SetTimer { at, id } => {
                    let real = self.schedules[node.0 as usize]
                        .time_at(&at)
                        .map_err(|e| SimError::Behavior {
                            node,
                            message: e.to_string(),
                        })?;
                    if real < self.now {
                        return Err(SimError::TimerInPast {
                            node,
                            at,
                            now: local.clone(),
                        });
                    }
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    self.queue.insert((real, node, seq), EventBody::Timer { id });
                }
                Action::EmitPulse { index } => {
                    self.events.push(TraceEvent::Pulse {
                        t: self.now.clone(),
                        node,
                        local_time: local.clone(),
                        pulse_index: index,
                    });
                }
                Action::Annotate(annotation) => {
                    self.events.push(TraceEvent::Note {
                        t: self.now.clone(),
                        node,
                        local_time: local.clone(),
                        annotation,
                    });
                }
            }
        }
        Ok(())
    }

    fn apply_adv_actions(
        &mut self,
        node: NodeId,
        actions: Vec<AdvAction>,
    ) -> Result<(), SimError> {
        for action in actions {
            match action {
                AdvAction::Send { to, payload, delay } => {
                    // Gate at emission time: every embedded honest token must
                    // already have been observed by some faulty node.
                    let tokens = payload.tokens();
                    self.ledger
                        .adversary_may_send(tokens, &self.now, &self.corrupted)
                        .map_err(|token| SimError::Unforgeability {
                            from: node,
                            token,
                            at: self.now.clone(),
                        })?;
                    let delay = delay.unwrap_or_else(|| {
                        self.policy.delay(
                            &self.params,
                            node,
                            to,
                            &self.corrupted,
                            self.send_count,
                        )
                    });
                    self.emit_send(node, to, payload, delay)?;
                }
                AdvAction::SetTimer { at, id } => {
                    let real = self.schedules[node.0 as usize]
                        .time_at(&at)
                        .map_err(|e| SimError::Behavior {
                            node,
                            message: e.to_string(),
                        })?;
                    if real < self.now {
                        return Err(SimError::TimerInPast {
                            node,
                            at,
                            now: self.local_of(node),
                        });
                    }
                    let seq = self.next_seq;
                    self.next_seq += 1;
                    self.queue.insert((real, node, seq), EventBody::Timer { id });
                }
            }
        }
        Ok(())
    }

    /// Processes the single earliest event. Returns `false` when the queue is
    /// empty or the next event lies beyond `horizon`.
    pub fn step(&mut self, horizon: &TimePoint) -> Result<bool, SimError> {
        let key = match self.queue.keys().next() {
            Some(k) if &k.0 <= horizon => k.clone(),
            _ => return Ok(false),
        };
        let body = self.queue.remove(&key).expect("peeked key exists");
        let (time, node, _) = key;
        self.now = time;
        self.processed += 1;
        if self.processed > self.max_events {
            return Err(SimError::EventStorm(self.max_events));
        }
        let local = self.local_of(node);
        match body {
            EventBody::Init => {
                if let Some(behavior) = self.behaviors.get_mut(&node) {
                    let actions = behavior.on_init(&local).map_err(|e| SimError::Behavior {
                        node,
                        message: e.to_string(),
                    })?;
                    self.apply_actions(node, actions)?;
                } else if self.corrupted.contains(&node) {
                    if let Some(mut adversary) = self.adversary.take() {
                        let actions = adversary.on_init(node, &local);
                        self.adversary = Some(adversary);
                        self.apply_adv_actions(node, actions)?;
                    }
                }
            }
            EventBody::Deliver {
                from,
                payload,
                send_seq,
            } => {
                self.events.push(TraceEvent::Receive {
                    t: self.now.clone(),
                    from,
                    to: node,
                    local_time: local.clone(),
                    payload: payload.clone(),
                    seq: send_seq,
                });
                if self.corrupted.contains(&node) {
                    // The adversary's knowledge grows: record when a faulty
                    // node first sees each honest token.
                    for token in payload.tokens() {
                        self.ledger.observe(token, &self.now);
                    }
                    if let Some(mut adversary) = self.adversary.take() {
                        let actions = adversary.on_receive(node, &local, from, &payload);
                        self.adversary = Some(adversary);
                        self.apply_adv_actions(node, actions)?;
                    }
                } else if let Some(behavior) = self.behaviors.get_mut(&node) {
                    let actions = behavior
                        .on_message(&local, from, &payload)
                        .map_err(|e| SimError::Behavior {
                            node,
                            message: e.to_string(),
                        })?;
                    self.apply_actions(node, actions)?;
                }
            }
            EventBody::Timer { id } => {
                if self.corrupted.contains(&node) {
                    if let Some(mut adversary) = self.adversary.take() {
                        let actions = adversary.on_timer(node, &local, id);
                        self.adversary = Some(adversary);
                        self.apply_adv_actions(node, actions)?;
                    }
                } else if let Some(behavior) = self.behaviors.get_mut(&node) {
                    let actions =
                        behavior
                            .on_timer(&local, id)
                            .map_err(|e| SimError::Behavior {
                                node,
                                message: e.to_string(),
                            })?;
                    self.apply_actions(node, actions)?;
                }
            }
            EventBody::FaultySend { to, payload, delay } => {
                let tokens = payload.tokens();
                self.ledger
                    .adversary_may_send(tokens, &self.now, &self.corrupted)
                    .map_err(|token| SimError::Unforgeability {
                        from: node,
                        token,
                        at: self.now.clone(),
                    })?;
                self.emit_send(node, to, payload, delay)?;
            }
        }
        Ok(true)
    }

    /// Runs until the queue drains past `horizon`.
    pub fn run(&mut self, horizon: &TimePoint) -> Result<(), SimError> {
        while self.step(horizon)? {}
        Ok(())
    }

    pub fn into_trace(self) -> ExecutionTrace {
        ExecutionTrace {
            n: self.params.n,
            corrupted: self.corrupted,
            params: self.params,
            schedules: self.schedules,
            policy: self.policy,
            events: self.events,
        }
    }
}

/// Convenience wrapper: build, attach behaviors and adversary, run to the
/// horizon, return the trace.
#[allow(clippy::too_many_arguments)]
pub fn run_simulation(
    params: SystemParams,
    schedules: Vec<ClockSchedule>,
    behaviors: Vec<(NodeId, Box<dyn NodeBehavior>)>,
    corrupted: BTreeSet<NodeId>,
    policy: DelayPolicy,
    adversary: Option<Box<dyn Adversary>>,
    horizon: &TimePoint,
) -> Result<ExecutionTrace, SimError> {
    let mut sim = Simulation::new(params, schedules, corrupted, policy)?;
    for (node, behavior) in behaviors {
        sim = sim.with_behavior(node, behavior);
    }
    if let Some(adv) = adversary {
        sim = sim.with_adversary(adv);
    }
    sim.run(horizon)?;
    Ok(sim.into_trace())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::r;
    use crate::sig::{encode_payload, sign};

    fn test_params() -> SystemParams {
        SystemParams::new(3, r(1, 1), r(1, 10), r(1, 10), r(101, 100), r(1, 1), r(6, 1))
    }

    fn identity_schedules(n: usize) -> Vec<ClockSchedule> {
        (0..n).map(|_| ClockSchedule::identity()).collect()
    }

    /// Sends one raw message to a fixed peer at init, then goes quiet.
    struct OneShot {
        to: NodeId,
    }

    impl NodeBehavior for OneShot {
        fn on_init(&mut self, _local: &LocalTime) -> Result<Vec<Action>, BehaviorError> {
            Ok(vec![Action::Send {
                to: self.to,
                payload: MsgPayload::Raw {
                    tag: "ping".into(),
                    data: String::new(),
                    tokens: vec![],
                },
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
        fn on_timer(&mut self, _local: &LocalTime, _id: u64) -> Result<Vec<Action>, BehaviorError> {
            Ok(vec![])
        }
    }

    #[test]
    fn empty_system_has_no_message_events() {
        let trace = run_simulation(
            test_params(),
            identity_schedules(3),
            vec![],
            BTreeSet::new(),
            DelayPolicy::Max,
            None,
            &TimePoint::new(r(10, 1)),
        )
        .unwrap();
        assert!(trace.events.is_empty());
    }

    #[test]
    fn max_delay_policy_delivers_at_exactly_d() {
        let trace = run_simulation(
            test_params(),
            identity_schedules(3),
            vec![(NodeId(0), Box::new(OneShot { to: NodeId(1) }))],
            BTreeSet::new(),
            DelayPolicy::Max,
            None,
            &TimePoint::new(r(10, 1)),
        )
        .unwrap();
        let receive = trace
            .events
            .iter()
            .find_map(|e| match e {
                TraceEvent::Receive { t, .. } => Some(t.clone()),
                _ => None,
            })
            .expect("one delivery");
        assert_eq!(receive, TimePoint::new(r(1, 1)));
    }

    #[test]
    fn replay_is_bit_identical() {
        let run = || {
            run_simulation(
                test_params(),
                identity_schedules(3),
                vec![
                    (NodeId(0), Box::new(OneShot { to: NodeId(1) }) as Box<dyn NodeBehavior>),
                    (NodeId(1), Box::new(OneShot { to: NodeId(2) }) as Box<dyn NodeBehavior>),
                ],
                BTreeSet::new(),
                DelayPolicy::SeededGrid { seed: 7, steps: 64 },
                None,
                &TimePoint::new(r(10, 1)),
            )
            .unwrap()
            .to_jsonl()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn seeded_grid_stays_in_band() {
        let params = test_params();
        let corrupted = BTreeSet::new();
        let policy = DelayPolicy::SeededGrid { seed: 3, steps: 10 };
        for i in 0..200 {
            let delay = policy.delay(&params, NodeId(0), NodeId(1), &corrupted, i);
            assert!(delay >= r(9, 10) && delay <= r(1, 1), "delay {delay}");
        }
    }

    #[test]
    fn local_views_differ_on_delivery_time() {
        let make = |policy| {
            run_simulation(
                test_params(),
                identity_schedules(3),
                vec![(NodeId(0), Box::new(OneShot { to: NodeId(1) }))],
                BTreeSet::new(),
                policy,
                None,
                &TimePoint::new(r(10, 1)),
            )
            .unwrap()
        };
        let a = make(DelayPolicy::Max);
        let b = make(DelayPolicy::MinBand);
        assert_eq!(a.local_view(NodeId(1)).len(), 1);
        assert_ne!(a.local_view(NodeId(1)), b.local_view(NodeId(1)));
        // Sender views are identical: the send happens at the same local time.
        assert_eq!(a.local_view(NodeId(0)), b.local_view(NodeId(0)));
        // Identical traces project to identical views.
        assert_eq!(a.local_view(NodeId(1)), a.local_view(NodeId(1)));
    }

    #[test]
    fn unforgeable_injection_is_fatal() {
        let params = test_params();
        let corrupted: BTreeSet<NodeId> = [NodeId(2)].into_iter().collect();
        let mut sim = Simulation::new(
            params,
            identity_schedules(3),
            corrupted,
            DelayPolicy::Max,
        )
        .unwrap();
        let honest_token = sign(NodeId(0), &encode_payload("tcb", 1, "p"));
        sim.inject_faulty_send(
            TimePoint::new(r(1, 2)),
            NodeId(2),
            NodeId(1),
            MsgPayload::TcbEcho {
                round: 1,
                dealer: NodeId(0),
                token: honest_token,
            },
            r(9, 10),
        )
        .unwrap();
        let err = sim.run(&TimePoint::new(r(10, 1))).unwrap_err();
        assert!(matches!(err, SimError::Unforgeability { .. }), "{err}");
    }

    #[test]
    fn out_of_band_delay_is_fatal() {
        struct TooFast;
        impl NodeBehavior for TooFast {
            fn on_init(&mut self, _l: &LocalTime) -> Result<Vec<Action>, BehaviorError> {
                Ok(vec![Action::Send {
                    to: NodeId(1),
                    payload: MsgPayload::Raw {
                        tag: "x".into(),
                        data: String::new(),
                        tokens: vec![],
                    },
                }])
            }
            fn on_message(
                &mut self,
                _l: &LocalTime,
                _f: NodeId,
                _p: &MsgPayload,
            ) -> Result<Vec<Action>, BehaviorError> {
                Ok(vec![])
            }
            fn on_timer(&mut self, _l: &LocalTime, _id: u64) -> Result<Vec<Action>, BehaviorError> {
                Ok(vec![])
            }
        }
        let err = run_simulation(
            test_params(),
            identity_schedules(3),
            vec![(NodeId(0), Box::new(TooFast))],
            BTreeSet::new(),
            // Below d - u on an honest link.
            DelayPolicy::Fixed { delay: r(1, 2) },
            None,
            &TimePoint::new(r(10, 1)),
        )
        .unwrap_err();
        assert!(matches!(err, SimError::DelayOutOfBand { .. }), "{err}");
    }

    #[test]
    fn trace_round_trips_through_jsonl() {
        let trace = run_simulation(
            test_params(),
            identity_schedules(3),
            vec![(NodeId(0), Box::new(OneShot { to: NodeId(1) }))],
            BTreeSet::new(),
            DelayPolicy::Max,
            None,
            &TimePoint::new(r(10, 1)),
        )
        .unwrap();
        let text = trace.to_jsonl();
        let back = ExecutionTrace::from_jsonl(&text).unwrap();
        assert_eq!(back.to_jsonl(), text);
    }
}
