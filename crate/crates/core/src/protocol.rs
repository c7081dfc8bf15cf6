//! Per-node asynchronous consensus state machine.
//!
//! A node keeps at most one message per followee (the one with the largest
//! round), a failure detector that moves silent followees to a suspect list,
//! and applies its update rule once every active followee has a message in
//! the buffer. After `max_rounds` rule applications it makes a final decision
//! and stops accepting messages.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;
use crate::opinion::{final_decision, Decision, Opinion, OpinionCounts, RuleConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeState {
    Deciding,
    Decided,
    Confused,
}

impl NodeState {
    pub fn is_final(self) -> bool {
        self != NodeState::Deciding
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeState::Deciding => "deciding",
            NodeState::Decided => "decided",
            NodeState::Confused => "confused",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub sender: NodeId,
    pub round: u32,
    pub opinion: Opinion,
    pub state: NodeState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub max_rounds: u32,
    /// Final-decision threshold T.
    pub threshold: f64,
    pub timeout_ms: f64,
    pub rule: RuleConfig,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            max_rounds: 40,
            threshold: 2.0 / 3.0,
            timeout_ms: 2000.0,
            rule: RuleConfig::default(),
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_rounds < 1 {
            return Err("max_rounds must be at least 1".into());
        }
        if !(self.threshold > 0.5 && self.threshold <= 1.0) {
            return Err(format!("threshold must be in (0.5, 1] (got {})", self.threshold));
        }
        if !(self.timeout_ms > 0.0) {
            return Err(format!("timeout_ms must be positive (got {})", self.timeout_ms));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("node {node} received a message from {sender}, which it does not follow")]
    UnknownSender { node: NodeId, sender: NodeId },
}

/// What happened to an incoming message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Receipt {
    /// Stored in the buffer.
    Buffered,
    /// Valid, but the buffer already holds an equal or newer message from the sender.
    Superseded,
    /// Deciding message from a round the node has already left.
    Stale,
    /// The node has made its final decision.
    Closed,
}

/// A rule application: the message to broadcast and whether the node counted
/// only its own opinion because every followee was suspected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Firing {
    pub message: Message,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageOutcome {
    pub receipt: Receipt,
    /// The sender moved from the suspect list back to the followee list.
    pub restored: bool,
    pub fired: Option<Firing>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeoutOutcome {
    pub suspected: Vec<NodeId>,
    pub fired: Option<Firing>,
}

/// Protocol state of one correct node.
#[derive(Debug, Clone)]
pub struct NodeRuntime {
    id: NodeId,
    round: u32,
    opinion: Opinion,
    state: NodeState,
    decision: Option<Decision>,
    /// Static followee set from the graph, ascending; the per-slot vectors below
    /// are indexed in the same order.
    followees: Vec<NodeId>,
    suspected: Vec<bool>,
    buffer: Vec<Option<Message>>,
    last_valid: Vec<f64>,
}

impl NodeRuntime {
    pub fn new(id: NodeId, opinion: Opinion, followees: &[NodeId], start_ms: f64) -> Self {
        let mut followees = followees.to_vec();
        followees.sort_unstable();
        followees.dedup();
        let k = followees.len();
        NodeRuntime {
            id,
            round: 1,
            opinion,
            state: NodeState::Deciding,
            decision: None,
            followees,
            suspected: vec![false; k],
            buffer: vec![None; k],
            last_valid: vec![start_ms; k],
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn opinion(&self) -> Opinion {
        self.opinion
    }

    pub fn state(&self) -> NodeState {
        self.state
    }

    pub fn decision(&self) -> Option<Decision> {
        self.decision
    }

    /// Message announcing the node's current round, opinion and state.
    pub fn announcement(&self) -> Message {
        Message {
            sender: self.id,
            round: self.round,
            opinion: self.opinion,
            state: self.state,
        }
    }

    pub fn static_followees(&self) -> &[NodeId] {
        &self.followees
    }

    /// Followees not currently suspected.
    pub fn followee_list(&self) -> Vec<NodeId> {
        self.slots().filter(|&i| !self.suspected[i]).map(|i| self.followees[i]).collect()
    }

    pub fn suspect_list(&self) -> Vec<NodeId> {
        self.slots().filter(|&i| self.suspected[i]).map(|i| self.followees[i]).collect()
    }

    pub fn buffered(&self, followee: NodeId) -> Option<&Message> {
        self.slot(followee).and_then(|i| self.buffer[i].as_ref())
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.iter().filter(|m| m.is_some()).count()
    }

    pub fn last_valid_time(&self, followee: NodeId) -> Option<f64> {
        self.slot(followee).map(|i| self.last_valid[i])
    }

    fn slots(&self) -> std::ops::Range<usize> {
        0..self.followees.len()
    }

    fn slot(&self, followee: NodeId) -> Option<usize> {
        self.followees.binary_search(&followee).ok()
    }

    /// A message is valid if it is not from an earlier round, or carries a final state.
    pub fn is_valid(&self, msg: &Message) -> bool {
        msg.round >= self.round || msg.state.is_final()
    }

    pub fn handle_message<R: Rng + ?Sized>(
        &mut self,
        msg: Message,
        now: f64,
        cfg: &ProtocolConfig,
        rng: &mut R,
    ) -> Result<MessageOutcome, ProtocolError> {
        let slot = self.slot(msg.sender).ok_or(ProtocolError::UnknownSender {
            node: self.id,
            sender: msg.sender,
        })?;
        if self.state.is_final() {
            return Ok(MessageOutcome {
                receipt: Receipt::Closed,
                restored: false,
                fired: None,
            });
        }
        if !self.is_valid(&msg) {
            return Ok(MessageOutcome {
                receipt: Receipt::Stale,
                restored: false,
                fired: None,
            });
        }
        let replace = match &self.buffer[slot] {
            None => true,
            // final messages persist
            Some(old) if old.state.is_final() => false,
            Some(old) => msg.state.is_final() || msg.round > old.round,
        };
        if replace {
            self.buffer[slot] = Some(msg);
        }
        self.last_valid[slot] = now;
        let restored = std::mem::replace(&mut self.suspected[slot], false);
        let fired = self.try_apply_rule(cfg, rng);
        Ok(MessageOutcome {
            receipt: if replace { Receipt::Buffered } else { Receipt::Superseded },
            restored,
            fired,
        })
    }

    /// Suspects every active followee that has been silent for longer than the
    /// timeout and has nothing in the buffer, then re-checks the trigger.
    pub fn on_timeout<R: Rng + ?Sized>(
        &mut self,
        now: f64,
        cfg: &ProtocolConfig,
        rng: &mut R,
    ) -> TimeoutOutcome {
        if self.state.is_final() {
            return TimeoutOutcome {
                suspected: Vec::new(),
                fired: None,
            };
        }
        let mut suspected = Vec::new();
        for i in self.slots() {
            if !self.suspected[i] && self.buffer[i].is_none() && now - self.last_valid[i] > cfg.timeout_ms {
                self.suspected[i] = true;
                suspected.push(self.followees[i]);
            }
        }
        let fired = self.try_apply_rule(cfg, rng);
        TimeoutOutcome { suspected, fired }
    }

    /// Applies the rule if every active followee has a buffered message.
    pub fn try_apply_rule<R: Rng + ?Sized>(&mut self, cfg: &ProtocolConfig, rng: &mut R) -> Option<Firing> {
        if self.state.is_final() {
            return None;
        }
        let mut seen = Vec::with_capacity(self.followees.len());
        for i in self.slots().filter(|&i| !self.suspected[i]) {
            seen.push(self.buffer[i].as_ref()?.opinion);
        }
        let degenerate = seen.is_empty();
        if self.round >= cfg.max_rounds {
            let mut counts = OpinionCounts::tally(seen.iter().copied());
            counts.add(self.opinion);
            let decision = final_decision(counts, cfg.threshold);
            self.decision = Some(decision);
            match decision.opinion() {
                Some(o) => {
                    self.opinion = o;
                    self.state = NodeState::Decided;
                }
                None => self.state = NodeState::Confused,
            }
        } else {
            // voter/sznajd with too few active followees keep the current opinion
            self.opinion = cfg.rule.apply(self.opinion, &seen, rng).unwrap_or(self.opinion);
            self.round += 1;
            let round = self.round;
            for slot in &mut self.buffer {
                if matches!(slot, Some(m) if m.state == NodeState::Deciding && m.round < round) {
                    *slot = None;
                }
            }
        }
        Some(Firing {
            message: self.announcement(),
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opinion::Model;
    use crate::rng;
    use Opinion::*;

    const A: NodeId = NodeId(10);
    const B: NodeId = NodeId(11);

    fn msg(sender: NodeId, round: u32, opinion: Opinion, state: NodeState) -> Message {
        Message {
            sender,
            round,
            opinion,
            state,
        }
    }

    fn node() -> NodeRuntime {
        NodeRuntime::new(NodeId(0), Zero, &[B, A], 0.0)
    }

    fn cfg() -> ProtocolConfig {
        ProtocolConfig {
            rule: RuleConfig::new(Model::Mr),
            ..ProtocolConfig::default()
        }
    }

    fn at_round(round: u32) -> NodeRuntime {
        let mut n = node();
        n.round = round;
        n
    }

    #[test]
    fn validity() {
        let n = at_round(5);
        assert!(n.is_valid(&msg(A, 5, Zero, NodeState::Deciding)));
        assert!(!n.is_valid(&msg(A, 3, Zero, NodeState::Deciding)));
        assert!(n.is_valid(&msg(A, 1, Zero, NodeState::Confused)));
        assert!(n.is_valid(&msg(A, 1, One, NodeState::Decided)));
    }

    #[test]
    fn keeps_largest_round() {
        let mut n = NodeRuntime::new(NodeId(0), Zero, &[A, B], 0.0);
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        n.handle_message(msg(A, 4, One, NodeState::Deciding), 1.0, &c, &mut r).unwrap();
        let out = n.handle_message(msg(A, 6, Zero, NodeState::Deciding), 2.0, &c, &mut r).unwrap();
        assert_eq!(out.receipt, Receipt::Buffered);
        assert_eq!(n.buffered(A).unwrap().round, 6);
        let out = n.handle_message(msg(A, 5, One, NodeState::Deciding), 3.0, &c, &mut r).unwrap();
        assert_eq!(out.receipt, Receipt::Superseded);
        assert_eq!(n.buffered(A).unwrap().round, 6);
        assert_eq!(n.last_valid_time(A), Some(3.0));
    }

    #[test]
    fn decided_node_ignores_messages() {
        let mut n = at_round(40);
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        n.handle_message(msg(A, 40, Zero, NodeState::Deciding), 1.0, &c, &mut r).unwrap();
        let out = n.handle_message(msg(B, 40, Zero, NodeState::Deciding), 1.0, &c, &mut r).unwrap();
        assert!(out.fired.is_some());
        assert_eq!(n.state(), NodeState::Decided);
        let before = (n.opinion(), n.state(), n.round(), n.buffer_len());
        let out = n.handle_message(msg(A, 41, One, NodeState::Deciding), 2.0, &c, &mut r).unwrap();
        assert_eq!(out.receipt, Receipt::Closed);
        assert_eq!(before, (n.opinion(), n.state(), n.round(), n.buffer_len()));
    }

    #[test]
    fn unknown_sender_is_rejected() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let err = n.handle_message(msg(NodeId(99), 1, One, NodeState::Deciding), 0.0, &cfg(), &mut r);
        assert_eq!(err, Err(ProtocolError::UnknownSender { node: NodeId(0), sender: NodeId(99) }));
        assert_eq!(n.buffer_len(), 0);
    }

    #[test]
    fn suspect_returns_on_valid_message() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        n.handle_message(msg(A, 1, Zero, NodeState::Deciding), 100.0, &c, &mut r).unwrap();
        let t = n.on_timeout(2500.0, &c, &mut r);
        assert_eq!(t.suspected, vec![B]);
        // A is buffered, B suspected: the rule fires over A alone
        assert!(t.fired.is_some());
        assert_eq!(n.round(), 2);
        assert_eq!(n.suspect_list(), vec![B]);
        let out = n.handle_message(msg(B, 2, One, NodeState::Deciding), 2600.0, &c, &mut r).unwrap();
        assert!(out.restored);
        assert_eq!(n.followee_list(), vec![A, B]);
        assert!(n.suspect_list().is_empty());
    }

    #[test]
    fn stale_message_does_not_restore() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        n.on_timeout(2001.0, &c, &mut r);
        assert_eq!(n.round(), 2);
        assert_eq!(n.suspect_list(), vec![A, B]);
        let out = n.handle_message(msg(A, 1, One, NodeState::Deciding), 2100.0, &c, &mut r).unwrap();
        assert_eq!(out.receipt, Receipt::Stale);
        assert!(!out.restored);
        assert_eq!(n.suspect_list(), vec![A, B]);
    }

    #[test]
    fn timeout_is_strict_and_spares_recent_followees() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        let t = n.on_timeout(2000.0, &c, &mut r);
        assert!(t.suspected.is_empty() && t.fired.is_none());
        assert_eq!(n.round(), 1);
    }

    #[test]
    fn all_followees_silent() {
        let mut n = NodeRuntime::new(NodeId(0), One, &[A, B], 0.0);
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        let t = n.on_timeout(2000.5, &c, &mut r);
        assert_eq!(t.suspected, vec![A, B]);
        let fired = t.fired.unwrap();
        assert!(fired.degenerate);
        // only the node's own opinion is counted (n0 + n1 = 1), so MR keeps it
        assert_eq!(fired.message, msg(NodeId(0), 2, One, NodeState::Deciding));
    }

    #[test]
    fn rule_waits_for_all_active_followees() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        let out = n.handle_message(msg(A, 1, One, NodeState::Deciding), 5.0, &c, &mut r).unwrap();
        assert!(out.fired.is_none());
        assert_eq!(n.round(), 1);
        assert!(n.try_apply_rule(&c, &mut r).is_none());
        let out = n.handle_message(msg(B, 1, One, NodeState::Deciding), 6.0, &c, &mut r).unwrap();
        let fired = out.fired.unwrap();
        assert_eq!(n.round(), 2);
        assert_eq!(fired.message, msg(NodeId(0), 2, One, NodeState::Deciding));
        assert!(!fired.degenerate);
        // round-1 messages are purged on entering round 2
        assert_eq!(n.buffer_len(), 0);
    }

    #[test]
    fn final_round_decides() {
        // followees: 9 voting 0, self 0... counts (n0=9, n1=1)
        let ids: Vec<NodeId> = (1..=9).map(NodeId).collect();
        let mut n = NodeRuntime::new(NodeId(0), One, &ids, 0.0);
        n.round = 40;
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        let mut last = None;
        for &id in &ids {
            last = n.handle_message(msg(id, 40, Zero, NodeState::Deciding), 1.0, &c, &mut r).unwrap().fired;
        }
        let fired = last.unwrap();
        assert_eq!(n.state(), NodeState::Decided);
        assert_eq!(n.decision(), Some(Decision::Decided0));
        assert_eq!(fired.message, msg(NodeId(0), 40, Zero, NodeState::Decided));
        assert!(n.try_apply_rule(&c, &mut r).is_none());
    }

    #[test]
    fn final_round_confused() {
        let mut n = NodeRuntime::new(NodeId(0), Zero, &[A, B], 0.0);
        n.round = 3;
        let mut r = rng::stream(1, &[]);
        let c = ProtocolConfig { max_rounds: 3, ..cfg() };
        n.handle_message(msg(A, 3, One, NodeState::Deciding), 1.0, &c, &mut r).unwrap();
        n.handle_message(msg(B, 3, Zero, NodeState::Deciding), 1.0, &c, &mut r).unwrap();
        assert_eq!(n.state(), NodeState::Confused);
        assert_eq!(n.decision(), Some(Decision::Confused));
        assert_eq!(n.opinion(), Zero);
    }

    #[test]
    fn final_messages_persist_across_rounds() {
        let mut n = node();
        let mut r = rng::stream(1, &[]);
        let c = cfg();
        n.handle_message(msg(A, 40, One, NodeState::Decided), 1.0, &c, &mut r).unwrap();
        // a later deciding message cannot displace it
        n.handle_message(msg(A, 41, Zero, NodeState::Deciding), 1.5, &c, &mut r).unwrap();
        assert_eq!(n.buffered(A).unwrap().state, NodeState::Decided);
        for round in 1..5 {
            let out = n.handle_message(msg(B, round, One, NodeState::Deciding), 2.0, &c, &mut r).unwrap();
            assert!(out.fired.is_some(), "A counts as present in round {round}");
            assert_eq!(n.buffered(A).unwrap().state, NodeState::Decided);
        }
        assert_eq!(n.round(), 5);
    }

    #[test]
    fn invariants_under_random_traffic() {
        let ids: Vec<NodeId> = (1..=6).map(NodeId).collect();
        for seed in 0..20u64 {
            let mut r = rng::stream(seed, &[7]);
            let c = ProtocolConfig { max_rounds: 8, rule: RuleConfig::new(Model::Sky), ..ProtocolConfig::default() };
            let mut n = NodeRuntime::new(NodeId(0), Zero, &ids, 0.0);
            let mut now = 0.0;
            let mut last_round = n.round();
            for _ in 0..400 {
                now += r.random_range(0.0..900.0);
                if r.random_bool(0.1) {
                    n.on_timeout(now, &c, &mut r);
                } else {
                    let m = msg(
                        ids[r.random_range(0..ids.len())],
                        r.random_range(1..12),
                        if r.random_bool(0.5) { Zero } else { One },
                        if r.random_bool(0.05) { NodeState::Decided } else { NodeState::Deciding },
                    );
                    n.handle_message(m, now, &c, &mut r).unwrap();
                }
                assert!(n.round() == last_round || n.round() == last_round + 1);
                last_round = n.round();
                assert!(n.buffer_len() <= ids.len());
                let (fl, sl) = (n.followee_list(), n.suspect_list());
                assert_eq!(fl.len() + sl.len(), ids.len());
                assert!(fl.iter().all(|f| !sl.contains(f)));
                for id in &ids {
                    if let Some(m) = n.buffered(*id) {
                        assert!(m.state.is_final() || m.round >= n.round());
                    }
                }
            }
        }
    }
}
