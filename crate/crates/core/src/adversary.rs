//! Built-in Byzantine strategies.
//!
//! Two families: strategies for the synchronous agreement engine (driving
//! faulty dealers and echoers round by round) and strategies for the
//! continuous-time simulator (driving corrupted nodes' sends, timers, and
//! delays). Every strategy is constructed so that its sends pass the
//! observation-ledger gate; the engines abort otherwise, and the test suites
//! treat such an abort as a bug in the strategy.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::agreement::{CbMessage, CbPhase, RoundContext, SyncAdversary, SyncSend};
use crate::clock::LocalTime;
use crate::cps::CpsNodeBehavior;
use crate::params::SystemParams;
use crate::rational::Rat;
use crate::sig::sign;
use crate::sim::{Action, AdvAction, Adversary, MsgPayload, NodeBehavior};
use crate::NodeId;

/// Name of the deterministic generator used by all randomized strategies;
/// recorded in reports next to the seed.
pub const RNG_NAME: &str = "chacha12";

// ---------------------------------------------------------------------------
// Synchronous-engine strategies
// ---------------------------------------------------------------------------

/// Faulty nodes never send anything.
pub struct SyncSilent;

impl SyncAdversary for SyncSilent {
    fn name(&self) -> &'static str {
        "silent"
    }
    fn on_round(&mut self, _ctx: &RoundContext<'_>, _honest: &[SyncSend]) -> Vec<SyncSend> {
        Vec::new()
    }
}

fn grid_value(rng: &mut ChaCha12Rng) -> Rat {
    // Values on a 1/64 grid in [-1/4, 5/4]: inside and outside the usual
    // honest input range, so the discard logic actually works.
    Rat::new(rng.random_range(-16..=80), 64)
}

/// Faulty dealers deal one consistent (random) value each and echo honestly:
/// behaviorally an honest node with a lied input.
pub struct SyncConsistentLiar {
    rng: ChaCha12Rng,
    lies: BTreeMap<(u64, NodeId), Rat>,
}

impl SyncConsistentLiar {
    pub fn new(seed: u64) -> Self {
        SyncConsistentLiar {
            rng: ChaCha12Rng::seed_from_u64(seed),
            lies: BTreeMap::new(),
        }
    }
}

impl SyncAdversary for SyncConsistentLiar {
    fn name(&self) -> &'static str {
        "consistent_liar"
    }

    fn on_round(&mut self, ctx: &RoundContext<'_>, honest: &[SyncSend]) -> Vec<SyncSend> {
        let mut sends = Vec::new();
        match ctx.phase {
            CbPhase::Deal => {
                for x in ctx.corrupted {
                    let value = self
                        .lies
                        .entry((ctx.iteration, *x))
                        .or_insert_with(|| grid_value(&mut self.rng))
                        .clone();
                    let token = sign(*x, &CbMessage::payload(ctx.iteration, &value));
                    for w in 0..ctx.n as u32 {
                        sends.push(SyncSend {
                            from: *x,
                            to: NodeId(w),
                            msg: CbMessage {
                                iteration: ctx.iteration,
                                dealer: *x,
                                phase: CbPhase::Deal,
                                value: value.clone(),
                                token: token.clone(),
                            },
                        });
                    }
                }
            }
            CbPhase::Echo => {
                // Echo exactly what each corrupted node received from every
                // dealer in the deal round, like an honest node would.
                for x in ctx.corrupted {
                    for s in honest_deals_to(ctx, honest, *x) {
                        for w in 0..ctx.n as u32 {
                            sends.push(SyncSend {
                                from: *x,
                                to: NodeId(w),
                                msg: CbMessage {
                                    phase: CbPhase::Echo,
                                    ..s.msg.clone()
                                },
                            });
                        }
                    }
                }
            }
        }
        sends
    }
}

/// Deal-round messages addressed to `x` from each dealer, reconstructed from
/// the history (the rushing adversary saw them all).
fn honest_deals_to<'a>(
    ctx: &'a RoundContext<'_>,
    _honest_now: &'a [SyncSend],
    x: NodeId,
) -> Vec<&'a SyncSend> {
    let mut per_dealer: BTreeMap<NodeId, &SyncSend> = BTreeMap::new();
    if let Some(deal_round) = ctx
        .history
        .iter()
        .rev()
        .find(|rec| rec.iteration == ctx.iteration && rec.phase == CbPhase::Deal)
    {
        for s in &deal_round.sends {
            if s.to == x && s.from == s.msg.dealer {
                per_dealer.entry(s.msg.dealer).or_insert(s);
            }
        }
    }
    per_dealer.into_values().collect()
}

/// Faulty dealers randomly equivocate: split valid signatures on two values
/// between the nodes, invalidate the signature toward a subset, or deal
/// consistently. Echoes are honest.
pub struct SyncEquivocator {
    rng: ChaCha12Rng,
}

impl SyncEquivocator {
    pub fn new(seed: u64) -> Self {
        SyncEquivocator {
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }
}

impl SyncAdversary for SyncEquivocator {
    fn name(&self) -> &'static str {
        "equivocator"
    }

    fn on_round(&mut self, ctx: &RoundContext<'_>, honest: &[SyncSend]) -> Vec<SyncSend> {
        let mut sends = Vec::new();
        match ctx.phase {
            CbPhase::Deal => {
                for x in ctx.corrupted {
                    let mode = self.rng.random_range(0..3u8);
                    let value = grid_value(&mut self.rng);
                    let other = grid_value(&mut self.rng);
                    let token = sign(*x, &CbMessage::payload(ctx.iteration, &value));
                    let bad_token = sign(*x, &CbMessage::payload(ctx.iteration, &other));
                    for w in 0..ctx.n as u32 {
                        let (v, tok) = match mode {
                            // Split: valid signatures on two different values.
                            0 if (w as usize) < ctx.n / 2 => (value.clone(), token.clone()),
                            0 => (
                                other.clone(),
                                sign(*x, &CbMessage::payload(ctx.iteration, &other)),
                            ),
                            // Invalid signature toward a random subset.
                            1 if self.rng.random_range(0..2u8) == 0 => {
                                (value.clone(), bad_token.clone())
                            }
                            _ => (value.clone(), token.clone()),
                        };
                        sends.push(SyncSend {
                            from: *x,
                            to: NodeId(w),
                            msg: CbMessage {
                                iteration: ctx.iteration,
                                dealer: *x,
                                phase: CbPhase::Deal,
                                value: v,
                                token: tok,
                            },
                        });
                    }
                }
            }
            CbPhase::Echo => {
                for x in ctx.corrupted {
                    for s in honest_deals_to(ctx, honest, *x) {
                        for w in 0..ctx.n as u32 {
                            sends.push(SyncSend {
                                from: *x,
                                to: NodeId(w),
                                msg: CbMessage {
                                    phase: CbPhase::Echo,
                                    ..s.msg.clone()
                                },
                            });
                        }
                    }
                }
            }
        }
        sends
    }
}

/// Factory keyed by strategy name, for configs and the command line.
pub fn sync_adversary(name: &str, seed: u64) -> Option<Box<dyn SyncAdversary>> {
    match name {
        "silent" => Some(Box::new(SyncSilent)),
        "consistent_liar" => Some(Box::new(SyncConsistentLiar::new(seed))),
        "equivocator" => Some(Box::new(SyncEquivocator::new(seed))),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Simulator strategies
// ---------------------------------------------------------------------------

/// Corrupted nodes never send anything.
pub struct Silent;

impl Adversary for Silent {
    fn name(&self) -> &'static str {
        "silent"
    }
    fn on_init(&mut self, _node: NodeId, _local: &LocalTime) -> Vec<AdvAction> {
        Vec::new()
    }
    fn on_receive(
        &mut self,
        _node: NodeId,
        _local: &LocalTime,
        _from: NodeId,
        _payload: &MsgPayload,
    ) -> Vec<AdvAction> {
        Vec::new()
    }
    fn on_timer(&mut self, _node: NodeId, _local: &LocalTime, _id: u64) -> Vec<AdvAction> {
        Vec::new()
    }
}

/// Translates honest-behavior actions into adversary actions, dropping pulses
/// and annotations (a faulty node's pulses are meaningless to the checkers).
fn translate(actions: Vec<Action>) -> Vec<AdvAction> {
    actions
        .into_iter()
        .filter_map(|a| match a {
            Action::Send { to, payload } => Some(AdvAction::Send {
                to,
                payload,
                delay: None,
            }),
            Action::SetTimer { at, id } => Some(AdvAction::SetTimer { at, id }),
            Action::EmitPulse { .. } | Action::Annotate(_) => None,
        })
        .collect()
}

/// Runs the real protocol state machine on every corrupted node, under
/// whatever (valid-looking) clock schedule the node was assigned: a liar that
/// is behaviorally indistinguishable from an honest node. On an internal
/// protocol error the node falls silent.
pub struct ConsistentLiar {
    nodes: BTreeMap<NodeId, CpsNodeBehavior>,
    broken: Vec<NodeId>,
}

impl ConsistentLiar {
    pub fn new(params: &SystemParams, corrupted: &[NodeId]) -> Self {
        ConsistentLiar {
            nodes: corrupted
                .iter()
                .map(|x| (*x, CpsNodeBehavior::new(*x, params.clone())))
                .collect(),
            broken: Vec::new(),
        }
    }

    fn drive<F>(&mut self, node: NodeId, f: F) -> Vec<AdvAction>
    where
        F: FnOnce(&mut CpsNodeBehavior) -> Result<Vec<Action>, crate::sim::BehaviorError>,
    {
        if self.broken.contains(&node) {
            return Vec::new();
        }
        match self.nodes.get_mut(&node).map(f) {
            Some(Ok(actions)) => translate(actions),
            Some(Err(_)) => {
                self.broken.push(node);
                Vec::new()
            }
            None => Vec::new(),
        }
    }
}

impl Adversary for ConsistentLiar {
    fn name(&self) -> &'static str {
        "consistent_liar"
    }
    fn on_init(&mut self, node: NodeId, local: &LocalTime) -> Vec<AdvAction> {
        let local = local.clone();
        self.drive(node, move |b| b.on_init(&local))
    }
    fn on_receive(
        &mut self,
        node: NodeId,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Vec<AdvAction> {
        let local = local.clone();
        let payload = payload.clone();
        self.drive(node, move |b| b.on_message(&local, from, &payload))
    }
    fn on_timer(&mut self, node: NodeId, local: &LocalTime, id: u64) -> Vec<AdvAction> {
        let local = local.clone();
        self.drive(node, move |b| b.on_timer(&local, id))
    }
}

/// Timer ids above this range are reserved for wrapper-scheduled sends.
const STAGGER_TIMER_BASE: u64 = 1 << 32;

/// Follows the protocol, except that its own dealer broadcasts are staggered:
/// recipient k gets the signature `k * step` local time later. Receivers then
/// accept at different local times, and early acceptors' forwarded copies can
/// land inside late acceptors' conflict windows.
pub struct Equivocator {
    inner: ConsistentLiar,
    step: Rat,
    next_stagger: u64,
    pending: BTreeMap<u64, (NodeId, NodeId, MsgPayload)>,
}

impl Equivocator {
    pub fn new(params: &SystemParams, corrupted: &[NodeId], step: Rat) -> Self {
        Equivocator {
            inner: ConsistentLiar::new(params, corrupted),
            step,
            next_stagger: STAGGER_TIMER_BASE,
            pending: BTreeMap::new(),
        }
    }

    /// Default stagger: an eighth of the conflict window.
    pub fn default_step(params: &SystemParams) -> Rat {
        &params.quiet_window() / &Rat::from_int(8)
    }

    fn stagger(&mut self, node: NodeId, local: &LocalTime, actions: Vec<AdvAction>) -> Vec<AdvAction> {
        let mut out = Vec::new();
        let mut burst = 0u32;
        for a in actions {
            match a {
                AdvAction::Send {
                    to,
                    payload: payload @ MsgPayload::TcbDealer { .. },
                    delay,
                } => {
                    if matches!(&payload, MsgPayload::TcbDealer { dealer, .. } if *dealer == node)
                    {
                        if burst == 0 {
                            out.push(AdvAction::Send { to, payload, delay });
                        } else {
                            let id = self.next_stagger;
                            self.next_stagger += 1;
                            let at = local + &(&self.step * &Rat::from(u64::from(burst)));
                            self.pending.insert(id, (node, to, payload));
                            out.push(AdvAction::SetTimer { at, id });
                        }
                        burst += 1;
                    } else {
                        out.push(AdvAction::Send { to, payload, delay });
                    }
                }
                other => out.push(other),
            }
        }
        out
    }
}

impl Adversary for Equivocator {
    fn name(&self) -> &'static str {
        "equivocator"
    }
    fn on_init(&mut self, node: NodeId, local: &LocalTime) -> Vec<AdvAction> {
        let actions = self.inner.on_init(node, local);
        self.stagger(node, local, actions)
    }
    fn on_receive(
        &mut self,
        node: NodeId,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Vec<AdvAction> {
        let actions = self.inner.on_receive(node, local, from, payload);
        self.stagger(node, local, actions)
    }
    fn on_timer(&mut self, node: NodeId, local: &LocalTime, id: u64) -> Vec<AdvAction> {
        if id >= STAGGER_TIMER_BASE {
            return match self.pending.remove(&id) {
                Some((owner, to, payload)) if owner == node => vec![AdvAction::Send {
                    to,
                    payload,
                    delay: None,
                }],
                _ => Vec::new(),
            };
        }
        let actions = self.inner.on_timer(node, local, id);
        self.stagger(node, local, actions)
    }
}

/// Follows the protocol, and additionally relays every dealer signature it
/// receives to all nodes immediately at the minimum faulty-link delay. With
/// `u_tilde > u` the relayed copy can arrive inside an honest receiver's
/// conflict window, forcing rejection of an honest dealer's broadcast; with
/// `u_tilde == u` it never can.
pub struct EchoRusher {
    inner: ConsistentLiar,
    n: u32,
    min_faulty_delay: Rat,
}

impl EchoRusher {
    pub fn new(params: &SystemParams, corrupted: &[NodeId]) -> Self {
        EchoRusher {
            inner: ConsistentLiar::new(params, corrupted),
            n: params.n as u32,
            min_faulty_delay: &params.d - &params.u_tilde,
        }
    }
}

impl Adversary for EchoRusher {
    fn name(&self) -> &'static str {
        "echo_rusher"
    }
    fn on_init(&mut self, node: NodeId, local: &LocalTime) -> Vec<AdvAction> {
        self.inner.on_init(node, local)
    }
    fn on_receive(
        &mut self,
        node: NodeId,
        local: &LocalTime,
        from: NodeId,
        payload: &MsgPayload,
    ) -> Vec<AdvAction> {
        let mut actions = self.inner.on_receive(node, local, from, payload);
        if let MsgPayload::TcbDealer {
            round,
            dealer,
            token,
        } = payload
        {
            if *dealer != node {
                for w in 0..self.n {
                    actions.push(AdvAction::Send {
                        to: NodeId(w),
                        payload: MsgPayload::TcbEcho {
                            round: *round,
                            dealer: *dealer,
                            token: token.clone(),
                        },
                        delay: Some(self.min_faulty_delay.clone()),
                    });
                }
            }
        }
        actions
    }
    fn on_timer(&mut self, node: NodeId, local: &LocalTime, id: u64) -> Vec<AdvAction> {
        self.inner.on_timer(node, local, id)
    }
}

/// Factory keyed by strategy name. `None` (or `"none"`) means no adversary.
pub fn des_adversary(
    name: &str,
    params: &SystemParams,
    corrupted: &[NodeId],
) -> Option<Box<dyn Adversary>> {
    match name {
        "silent" => Some(Box::new(Silent)),
        "consistent_liar" => Some(Box::new(ConsistentLiar::new(params, corrupted))),
        "equivocator" => Some(Box::new(Equivocator::new(
            params,
            corrupted,
            Equivocator::default_step(params),
        ))),
        "echo_rusher" => Some(Box::new(EchoRusher::new(params, corrupted))),
        _ => None,
    }
}

pub const DES_ADVERSARIES: [&str; 4] = ["silent", "consistent_liar", "equivocator", "echo_rusher"];
pub const SYNC_ADVERSARIES: [&str; 3] = ["silent", "consistent_liar", "equivocator"];
