//! Execution engines.
//!
//! [`run_sync`] is the round-based model study: every node updates at once
//! from the previous round's opinions and there is no protocol layer.
//! [`run_async`] is the discrete-event network: correct nodes run
//! [`NodeRuntime`](crate::protocol::NodeRuntime), messages are delayed by
//! [`LatencyModel`], and faulty nodes follow an [`AdversaryStrategy`].

mod adversary;
mod engine;
mod latency;
mod sync;

pub use adversary::{adversary_emit, AdversaryKind, AdversaryStrategy, FaultySelection};
pub use engine::{run_async, AsyncConfig, DEFAULT_HORIZON_MS};
pub use latency::{sample_latency, LatencyModel};
pub use sync::run_sync;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NodeId;
use crate::metrics::{self, MetricError};
use crate::opinion::{Decision, Opinion};
use crate::protocol::NodeState;
use crate::rng::{self, tag};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no correct nodes left after removing the faulty set")]
    NoCorrectNodes,
}

/// How correct nodes start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "by")]
pub enum InitialConfiguration {
    /// `ceil(m(1+cvg)/2)` of the `m` correct nodes start at 0, chosen per seed.
    TargetConvergence { cvg: f64 },
    /// Opinion per graph node; entries for faulty nodes are ignored.
    Explicit { opinions: Vec<Opinion> },
}

impl InitialConfiguration {
    pub fn target(cvg: f64) -> Self {
        InitialConfiguration::TargetConvergence { cvg }
    }

    pub fn validate(&self, n: usize) -> Result<(), SimError> {
        match self {
            InitialConfiguration::TargetConvergence { cvg } if !(-1.0..=1.0).contains(cvg) => {
                Err(SimError::InvalidConfig(format!("initial cvg {cvg} outside [-1, 1]")))
            }
            InitialConfiguration::Explicit { opinions } if opinions.len() != n => Err(SimError::InvalidConfig(
                format!("{} initial opinions for {n} nodes", opinions.len()),
            )),
            _ => Ok(()),
        }
    }

    /// Opinions for `correct` (ascending ids), in the same order.
    pub fn assign(&self, correct: &[NodeId], seed: u64) -> Vec<Opinion> {
        match self {
            InitialConfiguration::TargetConvergence { cvg } => {
                let m = correct.len();
                let zeros = ((m as f64 * (1.0 + cvg) / 2.0 - 1e-9).ceil().max(0.0) as usize).min(m);
                let mut out = vec![Opinion::One; m];
                let mut r = rng::stream(seed, &[tag::OPINIONS]);
                for i in index::sample(&mut r, m, zeros) {
                    out[i] = Opinion::Zero;
                }
                out
            }
            InitialConfiguration::Explicit { opinions } => correct.iter().map(|n| opinions[n.index()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Sync,
    Async,
}

/// Final state of one correct node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeOutcome {
    pub node: NodeId,
    pub opinion: Opinion,
    pub state: NodeState,
    pub decision: Option<Decision>,
    pub round: u32,
    pub decided_at_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub c0: usize,
    pub c1: usize,
    pub d0: usize,
    pub d1: usize,
    pub confused: usize,
    pub deciding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub mode: RunMode,
    pub seed: u64,
    pub max_rounds: u32,
    /// Correct nodes, ascending id.
    pub nodes: Vec<NodeOutcome>,
    pub faulty: Vec<NodeId>,
    pub initial_c0: usize,
    pub initial_c1: usize,
    /// Sync: first round ending in unanimity, or `max_rounds + 1` if none did.
    /// Async: `max_rounds` when every correct node finished, else `max_rounds + 1`.
    pub consensus_round: u32,
    /// Simulated time of the last processed event (sync: rounds executed).
    pub end_time_ms: f64,
    pub complete: bool,
    /// Rule firings where every followee was suspected.
    pub degenerate_firings: u64,
    pub events: u64,
    /// `(time, signed cvg)` samples over correct nodes; sync uses the round as time.
    pub series: Vec<(f64, f64)>,
    #[serde(skip)]
    pub trace: Vec<String>,
}

impl RunResult {
    pub fn tally(&self) -> Tally {
        let mut t = Tally::default();
        for n in &self.nodes {
            match n.opinion {
                Opinion::Zero => t.c0 += 1,
                Opinion::One => t.c1 += 1,
            }
            match n.decision {
                Some(Decision::Decided0) => t.d0 += 1,
                Some(Decision::Decided1) => t.d1 += 1,
                Some(Decision::Confused) => t.confused += 1,
                None => t.deciding += 1,
            }
        }
        t
    }

    pub fn correct_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn initial_cvg(&self) -> Result<f64, MetricError> {
        metrics::signed_convergence(self.initial_c0, self.initial_c1)
    }

    pub fn final_cvg(&self) -> Result<f64, MetricError> {
        let t = self.tally();
        metrics::signed_convergence(t.c0, t.c1)
    }

    pub fn decision_metric(&self) -> Result<f64, MetricError> {
        let t = self.tally();
        metrics::decision_metric(t.d0, t.d1)
    }

    /// Share of decided correct nodes that decided 0.
    pub fn decided_zero_fraction(&self) -> Option<f64> {
        let t = self.tally();
        let decided = t.d0 + t.d1;
        (decided > 0).then(|| t.d0 as f64 / decided as f64)
    }

    /// Share of correct nodes that reached a final state by `t_ms`.
    pub fn finished_by(&self, t_ms: f64) -> f64 {
        if self.nodes.is_empty() {
            return 0.0;
        }
        let k = self
            .nodes
            .iter()
            .filter(|n| n.decided_at_ms.is_some_and(|t| t <= t_ms))
            .count();
        k as f64 / self.nodes.len() as f64
    }

    pub fn rounds_p50(&self) -> u32 {
        let mut r: Vec<u32> = self.nodes.iter().map(|n| n.round).collect();
        if r.is_empty() {
            return 0;
        }
        r.sort_unstable();
        r[(r.len() - 1) / 2]
    }

    pub fn rounds_max(&self) -> u32 {
        self.nodes.iter().map(|n| n.round).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(m: u32) -> Vec<NodeId> {
        (0..m).map(NodeId).collect()
    }

    #[test]
    fn target_assignment_counts() {
        for (m, cvg) in [(1000, 0.5), (870, 0.5), (999, 0.0), (10, -1.0), (10, 1.0), (7, 0.3)] {
            let ops = InitialConfiguration::target(cvg).assign(&ids(m), 42);
            let c0 = ops.iter().filter(|&&o| o == Opinion::Zero).count();
            let c1 = m as usize - c0;
            let got = metrics::signed_convergence(c0, c1).unwrap();
            assert!(got >= cvg - 1e-12 && got - cvg <= 2.0 / m as f64, "m={m} cvg={cvg} got={got}");
        }
        let a = InitialConfiguration::target(0.5).assign(&ids(100), 1);
        assert_eq!(a, InitialConfiguration::target(0.5).assign(&ids(100), 1));
        assert_ne!(a, InitialConfiguration::target(0.5).assign(&ids(100), 2));
    }

    #[test]
    fn explicit_assignment_skips_faulty() {
        let init = InitialConfiguration::Explicit {
            opinions: vec![Opinion::Zero, Opinion::One, Opinion::One, Opinion::Zero],
        };
        assert!(init.validate(4).is_ok());
        assert!(init.validate(5).is_err());
        assert_eq!(init.assign(&[NodeId(0), NodeId(3)], 0), vec![Opinion::Zero, Opinion::Zero]);
        assert!(InitialConfiguration::target(1.5).validate(3).is_err());
    }
}
