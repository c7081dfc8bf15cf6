//! Discrete-event engine for the asynchronous protocol.
//!
//! Events are ordered by `(time, kind, recipient, sender, per-sender counter)`.
//! Nothing in the key depends on a global insertion counter, and every random
//! draw comes from a stream keyed by the participants it concerns, so
//! correct-node behaviour is independent of nodes no correct node follows.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, TrustGraph};
use crate::metrics;
use crate::opinion::Opinion;
use crate::protocol::{Firing, Message, NodeRuntime, NodeState, ProtocolConfig, Receipt};
use crate::rng::{self, tag, SimRng};

use super::adversary::{adversary_emit, AdversaryKind, AdversaryStrategy};
use super::latency::{sample_latency, LatencyModel};
use super::{InitialConfiguration, NodeOutcome, RunMode, RunResult, SimError};

pub const DEFAULT_HORIZON_MS: f64 = 300_000.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncConfig {
    pub protocol: ProtocolConfig,
    pub adversary: AdversaryStrategy,
    pub latency: LatencyModel,
    pub init: InitialConfiguration,
    pub horizon_ms: f64,
    /// Period of the signed-convergence series; `None` disables it.
    pub sample_ms: Option<f64>,
    pub trace: bool,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        AsyncConfig {
            protocol: ProtocolConfig::default(),
            adversary: AdversaryStrategy::none(),
            latency: LatencyModel::default(),
            init: InitialConfiguration::target(0.0),
            horizon_ms: DEFAULT_HORIZON_MS,
            sample_ms: Some(1000.0),
            trace: false,
        }
    }
}

impl AsyncConfig {
    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        self.protocol.validate().map_err(SimError::InvalidConfig)?;
        self.latency.validate().map_err(SimError::InvalidConfig)?;
        self.init.validate(n)?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::InvalidConfig(format!("{name} must be positive (got {v})")))
            }
        };
        positive("horizon_ms", self.horizon_ms)?;
        positive("tick_ms", self.adversary.tick_ms)?;
        if let Some(s) = self.sample_ms {
            positive("sample_ms", s)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Deliver { to: NodeId, from: NodeId, seq: u64, msg: Message },
    Timeout { node: NodeId, generation: u32 },
    Tick { tick: u32 },
    Sample { index: u32 },
}

impl Kind {
    fn key(&self) -> (u8, u32, u32, u64) {
        match *self {
            Kind::Deliver { to, from, seq, .. } => (0, to.0, from.0, seq),
            Kind::Timeout { node, generation } => (1, node.0, 0, generation as u64),
            Kind::Tick { tick } => (2, 0, 0, tick as u64),
            Kind::Sample { index } => (3, 0, 0, index as u64),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: Kind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then_with(|| self.kind.key().cmp(&other.kind.key()))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

#[derive(Debug, Clone, Copy)]
enum Role {
    Correct(usize),
    Faulty(usize),
}

struct Sim<'a> {
    g: &'a TrustGraph,
    cfg: &'a AsyncConfig,
    seed: u64,
    roles: Vec<Role>,
    runtimes: Vec<NodeRuntime>,
    rule_rngs: Vec<SimRng>,
    generation: Vec<u32>,
    decided_at: Vec<Option<f64>>,
    broadcasts: Vec<u64>,
    faulty: Vec<NodeId>,
    shadow: Vec<Opinion>,
    queue: BinaryHeap<Reverse<Event>>,
    remaining: usize,
    degenerate: u64,
    trace: Vec<String>,
}

impl Sim<'_> {
    fn push(&mut self, time: f64, kind: Kind) {
        self.queue.push(Reverse(Event { time, kind }));
    }

    fn is_faulty(&self, n: NodeId) -> bool {
        matches!(self.roles[n.index()], Role::Faulty(_))
    }

    fn log(&mut self, now: f64, idx: usize, what: &str) {
        if self.cfg.trace {
            let r = &self.runtimes[idx];
            self.trace.push(format!(
                "{now:.6} {} {what} {} {} {}",
                r.id(),
                r.round(),
                r.opinion().bit(),
                r.state()
            ));
        }
    }

    fn send(&mut self, now: f64, from: NodeId, seq: u64, to: NodeId, msg: Message) {
        if self.is_faulty(to) {
            return;
        }
        let mut r = rng::stream(self.seed, &[tag::LATENCY, from.0 as u64, to.0 as u64, seq]);
        let delay = sample_latency(&self.cfg.latency, &mut r);
        self.push(now + delay, Kind::Deliver { to, from, seq, msg });
    }

    fn broadcast(&mut self, now: f64, idx: usize, msg: Message) {
        let from = msg.sender;
        let seq = self.broadcasts[idx];
        self.broadcasts[idx] += 1;
        for &to in self.g.followers(from) {
            self.send(now, from, seq, to, msg);
        }
    }

    fn schedule_timeout(&mut self, now: f64, idx: usize) {
        let node = self.runtimes[idx].id();
        let generation = self.generation[idx];
        self.push(now + self.cfg.protocol.timeout_ms, Kind::Timeout { node, generation });
    }

    fn fired(&mut self, now: f64, idx: usize, f: Firing) {
        if f.degenerate {
            self.degenerate += 1;
        }
        self.log(now, idx, if f.degenerate { "fire-degenerate" } else { "fire" });
        if f.message.state.is_final() {
            self.decided_at[idx] = Some(now);
            self.remaining -= 1;
        } else {
            self.generation[idx] += 1;
            self.schedule_timeout(now, idx);
        }
        self.broadcast(now, idx, f.message);
    }

    fn deliver(&mut self, now: f64, to: NodeId, msg: Message) -> Result<(), SimError> {
        let Role::Correct(idx) = self.roles[to.index()] else {
            return Ok(());
        };
        let out = self.runtimes[idx]
            .handle_message(msg, now, &self.cfg.protocol, &mut self.rule_rngs[idx])
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if out.receipt == Receipt::Closed {
            return Ok(());
        }
        if self.cfg.trace {
            let what = format!("recv:{}:{:?}", msg.sender, out.receipt);
            self.log(now, idx, &what);
            if out.restored {
                self.log(now, idx, &format!("restore:{}", msg.sender));
            }
        }
        if let Some(f) = out.fired {
            self.fired(now, idx, f);
        }
        Ok(())
    }

    fn timeout(&mut self, now: f64, node: NodeId, generation: u32) {
        let Role::Correct(idx) = self.roles[node.index()] else {
            return;
        };
        if generation != self.generation[idx] || self.runtimes[idx].state().is_final() {
            return;
        }
        let out = self.runtimes[idx].on_timeout(now, &self.cfg.protocol, &mut self.rule_rngs[idx]);
        if self.cfg.trace {
            for s in &out.suspected {
                self.log(now, idx, &format!("suspect:{s}"));
            }
        }
        match out.fired {
            Some(f) => self.fired(now, idx, f),
            None => self.schedule_timeout(now, idx),
        }
    }

    fn current_opinion(&self, n: NodeId) -> Opinion {
        match self.roles[n.index()] {
            Role::Correct(i) => self.runtimes[i].opinion(),
            Role::Faulty(i) => self.shadow[i],
        }
    }

    fn tick(&mut self, now: f64, tick: u32) {
        let kind = self.cfg.adversary.kind;
        for fi in 0..self.faulty.len() {
            let node = self.faulty[fi];
            let mut r = rng::stream(self.seed, &[tag::ADVERSARY, node.0 as u64, tick as u64]);
            if kind == AdversaryKind::Inverted {
                let view: Vec<Opinion> = self
                    .g
                    .followees(node)
                    .iter()
                    .map(|&f| self.current_opinion(f))
                    .collect();
                let own = self.shadow[fi];
                self.shadow[fi] = self.cfg.protocol.rule.apply(own, &view, &mut r).unwrap_or(own);
            }
            let out = adversary_emit(kind, node, tick, self.g.followers(node), self.shadow[fi], &mut r);
            for (to, msg) in out {
                self.send(now, node, tick as u64, to, msg);
            }
        }
        let next = now + self.cfg.adversary.tick_ms;
        if next <= self.cfg.horizon_ms {
            self.push(next, Kind::Tick { tick: tick + 1 });
        }
    }

    fn sample(&self) -> f64 {
        let c0 = self
            .runtimes
            .iter()
            .filter(|r| r.opinion() == Opinion::Zero)
            .count();
        metrics::signed_convergence(c0, self.runtimes.len() - c0).unwrap_or(0.0)
    }
}

/// Runs the asynchronous protocol until every correct node has decided or
/// simulated time passes the horizon.
pub fn run_async(g: &TrustGraph, cfg: &AsyncConfig, seed: u64) -> Result<RunResult, SimError> {
    let n = g.node_count();
    cfg.validate(n)?;
    let faulty = cfg.adversary.faulty_set(g, seed);
    let mut roles = vec![Role::Correct(0); n];
    for (i, f) in faulty.iter().enumerate() {
        roles[f.index()] = Role::Faulty(i);
    }
    let correct: Vec<NodeId> = g.nodes().filter(|v| matches!(roles[v.index()], Role::Correct(_))).collect();
    if correct.is_empty() {
        return Err(SimError::NoCorrectNodes);
    }
    for (i, c) in correct.iter().enumerate() {
        roles[c.index()] = Role::Correct(i);
    }
    let initial = cfg.init.assign(&correct, seed);
    let initial_c0 = initial.iter().filter(|&&o| o == Opinion::Zero).count();
    let runtimes: Vec<NodeRuntime> = correct
        .iter()
        .zip(&initial)
        .map(|(&id, &o)| NodeRuntime::new(id, o, g.followees(id), 0.0))
        .collect();
    let rule_rngs = correct
        .iter()
        .map(|c| rng::stream(seed, &[tag::RULE, c.0 as u64]))
        .collect();
    let shadow = faulty
        .iter()
        .map(|f| {
            let mut r = rng::stream(seed, &[tag::ADVERSARY, f.0 as u64]);
            if rand::Rng::random_bool(&mut r, 0.5) {
                Opinion::One
            } else {
                Opinion::Zero
            }
        })
        .collect();

    let m = correct.len();
    let mut sim = Sim {
        g,
        cfg,
        seed,
        roles,
        runtimes,
        rule_rngs,
        generation: vec![0; m],
        decided_at: vec![None; m],
        broadcasts: vec![0; m],
        faulty,
        shadow,
        queue: BinaryHeap::new(),
        remaining: m,
        degenerate: 0,
        trace: Vec::new(),
    };

    for idx in 0..m {
        let msg = sim.runtimes[idx].announcement();
        sim.broadcast(0.0, idx, msg);
        sim.schedule_timeout(0.0, idx);
    }
    if !sim.faulty.is_empty() && cfg.adversary.kind != AdversaryKind::None {
        sim.push(0.0, Kind::Tick { tick: 1 });
    }
    let mut series = Vec::new();
    if cfg.sample_ms.is_some() {
        sim.push(0.0, Kind::Sample { index: 0 });
    }

    let mut end_time = 0.0;
    let mut events = 0u64;
    while sim.remaining > 0 {
        let Some(Reverse(ev)) = sim.queue.pop() else {
            break;
        };
        if ev.time > cfg.horizon_ms {
            break;
        }
        end_time = ev.time;
        events += 1;
        match ev.kind {
            Kind::Deliver { to, msg, .. } => sim.deliver(ev.time, to, msg)?,
            Kind::Timeout { node, generation } => sim.timeout(ev.time, node, generation),
            Kind::Tick { tick } => sim.tick(ev.time, tick),
            Kind::Sample { index } => {
                series.push((ev.time, sim.sample()));
                if let Some(step) = cfg.sample_ms {
                    let next = (index + 1) as f64 * step;
                    if next <= cfg.horizon_ms {
                        sim.push(next, Kind::Sample { index: index + 1 });
                    }
                }
            }
        }
    }
    if cfg.sample_ms.is_some() {
        series.push((end_time, sim.sample()));
    }

    let complete = sim.remaining == 0;
    let nodes: Vec<NodeOutcome> = sim
        .runtimes
        .iter()
        .zip(&sim.decided_at)
        .map(|(r, &t)| NodeOutcome {
            node: r.id(),
            opinion: r.opinion(),
            state: r.state(),
            decision: r.decision(),
            round: r.round(),
            decided_at_ms: t,
        })
        .collect();
    let max_rounds = cfg.protocol.max_rounds;
    let consensus_round = if complete {
        nodes.iter().map(|n| n.round).max().unwrap_or(max_rounds)
    } else {
        max_rounds + 1
    };
    debug_assert!(nodes
        .iter()
        .all(|n| (n.state == NodeState::Deciding) == n.decision.is_none()));
    Ok(RunResult {
        mode: RunMode::Async,
        seed,
        max_rounds,
        nodes,
        faulty: sim.faulty,
        initial_c0,
        initial_c1: m - initial_c0,
        consensus_round,
        end_time_ms: end_time,
        complete,
        degenerate_firings: sim.degenerate,
        events,
        series,
        trace: sim.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generate_uniform;
    use crate::sim::FaultySelection;

    fn small_cfg() -> AsyncConfig {
        AsyncConfig {
            init: InitialConfiguration::target(0.5),
            ..AsyncConfig::default()
        }
    }

    #[test]
    fn no_faults_every_node_decides() {
        let g = generate_uniform(150, 10, 2).unwrap();
        let r = run_async(&g, &small_cfg(), 7).unwrap();
        let t = r.tally();
        assert!(r.complete);
        assert_eq!(t.d0 + t.d1 + t.confused, 150);
        assert_eq!(t.deciding, 0);
        assert!(r.nodes.iter().all(|n| n.decided_at_ms.is_some()));
    }

    #[test]
    fn deterministic_per_seed() {
        let g = generate_uniform(120, 8, 4).unwrap();
        let mut cfg = small_cfg();
        cfg.trace = true;
        cfg.adversary = AdversaryStrategy::new(
            AdversaryKind::RandomOpinion,
            FaultySelection::Random { fraction: 0.1, seed: None },
        );
        let a = run_async(&g, &cfg, 3).unwrap();
        let b = run_async(&g, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace, b.trace);
        let c = run_async(&g, &cfg, 4).unwrap();
        assert_ne!(a.trace, c.trace);
    }

    #[test]
    fn conservation_under_faults() {
        let g = generate_uniform(200, 10, 8).unwrap();
        for kind in AdversaryKind::ALL {
            let mut cfg = small_cfg();
            cfg.adversary = AdversaryStrategy::new(kind, FaultySelection::Random { fraction: 0.1, seed: None });
            let r = run_async(&g, &cfg, 1).unwrap();
            let expected = if kind == AdversaryKind::None { 200 } else { 180 };
            assert_eq!(r.correct_count(), expected, "{kind}");
            let t = r.tally();
            assert_eq!(t.d0 + t.d1 + t.confused + t.deciding, expected);
            assert!(r.faulty.iter().all(|f| r.nodes.iter().all(|n| n.node != *f)));
        }
    }

    #[test]
    fn silent_faulty_get_suspected_and_run_finishes() {
        let g = generate_uniform(100, 6, 1).unwrap();
        let mut cfg = small_cfg();
        cfg.adversary = AdversaryStrategy::new(AdversaryKind::Silent, FaultySelection::Random { fraction: 0.2, seed: None });
        let r = run_async(&g, &cfg, 2).unwrap();
        assert!(r.complete);
    }

    #[test]
    fn horizon_marks_incomplete() {
        let g = generate_uniform(50, 5, 1).unwrap();
        let mut cfg = small_cfg();
        cfg.horizon_ms = 3000.0;
        let r = run_async(&g, &cfg, 2).unwrap();
        assert!(!r.complete);
        assert_eq!(r.consensus_round, cfg.protocol.max_rounds + 1);
        assert!(r.end_time_ms <= 3000.0);
        assert!(r.tally().deciding > 0);
    }

    #[test]
    fn event_order_is_total() {
        let m = Message {
            sender: NodeId(1),
            round: 1,
            opinion: Opinion::Zero,
            state: NodeState::Deciding,
        };
        let a = Event { time: 5.0, kind: Kind::Deliver { to: NodeId(2), from: NodeId(1), seq: 0, msg: m } };
        let b = Event { time: 5.0, kind: Kind::Timeout { node: NodeId(0), generation: 0 } };
        let c = Event { time: 4.0, kind: Kind::Sample { index: 9 } };
        assert!(c < a && a < b);
    }

    #[test]
    fn rejects_bad_config() {
        let g = generate_uniform(20, 3, 1).unwrap();
        let mut cfg = small_cfg();
        cfg.horizon_ms = 0.0;
        assert!(run_async(&g, &cfg, 0).is_err());
        let mut cfg = small_cfg();
        cfg.adversary = AdversaryStrategy::new(AdversaryKind::AlwaysOne, FaultySelection::Random { fraction: 1.0, seed: None });
        assert_eq!(run_async(&g, &cfg, 0), Err(SimError::NoCorrectNodes));
    }
}
