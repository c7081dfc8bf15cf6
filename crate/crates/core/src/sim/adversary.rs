//! Scripted Byzantine behaviour.
//!
//! Faulty nodes ignore the round protocol and emit on a fixed tick. Their
//! messages carry the tick index as the round number so they always pass the
//! receivers' round filter.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{self, NodeId, TrustGraph};
use crate::opinion::Opinion;
use crate::protocol::{Message, NodeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    None,
    AlwaysOne,
    AlwaysZero,
    Silent,
    RandomOpinion,
    SplitHalf,
    Inverted,
}

impl AdversaryKind {
    pub const ALL: [AdversaryKind; 7] = [
        AdversaryKind::None,
        AdversaryKind::AlwaysOne,
        AdversaryKind::AlwaysZero,
        AdversaryKind::Silent,
        AdversaryKind::RandomOpinion,
        AdversaryKind::SplitHalf,
        AdversaryKind::Inverted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdversaryKind::None => "none",
            AdversaryKind::AlwaysOne => "always-one",
            AdversaryKind::AlwaysZero => "always-zero",
            AdversaryKind::Silent => "silent",
            AdversaryKind::RandomOpinion => "random-opinion",
            AdversaryKind::SplitHalf => "split-half",
            AdversaryKind::Inverted => "inverted",
        }
    }
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversaryKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        AdversaryKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown adversary {s:?}"))
    }
}

/// Which nodes are faulty. Fixed for the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "by")]
pub enum FaultySelection {
    /// `round(fraction * n)` uniformly random nodes; the run seed picks them
    /// unless `seed` is given.
    Random { fraction: f64, seed: Option<u64> },
    /// The most-followed `ceil(fraction * n)` nodes.
    TopInfluential { fraction: f64 },
    Explicit { nodes: Vec<NodeId> },
}

impl FaultySelection {
    pub fn fraction(&self) -> Option<f64> {
        match self {
            FaultySelection::Random { fraction, .. } | FaultySelection::TopInfluential { fraction } => {
                Some(*fraction)
            }
            FaultySelection::Explicit { .. } => None,
        }
    }

    /// Faulty nodes, ascending.
    pub fn select(&self, g: &TrustGraph, run_seed: u64) -> Vec<NodeId> {
        let mut set = match self {
            FaultySelection::Random { fraction, seed } => {
                graph::random_selection(g, *fraction, seed.unwrap_or(run_seed))
            }
            FaultySelection::TopInfluential { fraction } => graph::top_influential(g, *fraction),
            FaultySelection::Explicit { nodes } => nodes
                .iter()
                .copied()
                .filter(|n| n.index() < g.node_count())
                .collect(),
        };
        set.sort_unstable();
        set.dedup();
        set
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryStrategy {
    pub kind: AdversaryKind,
    pub selection: FaultySelection,
    /// Emission period of faulty nodes.
    pub tick_ms: f64,
}

impl AdversaryStrategy {
    pub fn none() -> Self {
        AdversaryStrategy {
            kind: AdversaryKind::None,
            selection: FaultySelection::Explicit { nodes: Vec::new() },
            tick_ms: 1000.0,
        }
    }

    pub fn new(kind: AdversaryKind, selection: FaultySelection) -> Self {
        AdversaryStrategy {
            kind,
            selection,
            tick_ms: 1000.0,
        }
    }

    pub fn faulty_set(&self, g: &TrustGraph, run_seed: u64) -> Vec<NodeId> {
        if self.kind == AdversaryKind::None {
            Vec::new()
        } else {
            self.selection.select(g, run_seed)
        }
    }
}

fn opinion_message(node: NodeId, tick: u32, opinion: Opinion) -> Message {
    Message {
        sender: node,
        round: tick,
        opinion,
        state: NodeState::Deciding,
    }
}

/// Messages faulty `node` sends at `tick`. `honest` is what the correct rule
/// would output for this node right now; only `Inverted` uses it.
pub fn adversary_emit<R: Rng + ?Sized>(
    kind: AdversaryKind,
    node: NodeId,
    tick: u32,
    followers: &[NodeId],
    honest: Opinion,
    rng: &mut R,
) -> Vec<(NodeId, Message)> {
    let constant = |o: Opinion| {
        followers
            .iter()
            .map(|&to| (to, opinion_message(node, tick, o)))
            .collect()
    };
    match kind {
        AdversaryKind::None | AdversaryKind::Silent => Vec::new(),
        AdversaryKind::AlwaysOne => constant(Opinion::One),
        AdversaryKind::AlwaysZero => constant(Opinion::Zero),
        AdversaryKind::RandomOpinion => {
            let o = if rng.random_bool(0.5) { Opinion::One } else { Opinion::Zero };
            constant(o)
        }
        AdversaryKind::SplitHalf => followers
            .iter()
            .enumerate()
            .map(|(i, &to)| {
                let o = if i % 2 == 0 { Opinion::One } else { Opinion::Zero };
                (to, opinion_message(node, tick, o))
            })
            .collect(),
        AdversaryKind::Inverted => constant(honest.flipped()),
    }
}
