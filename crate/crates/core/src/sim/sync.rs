use crate::graph::TrustGraph;
use crate::metrics;
use crate::opinion::{Opinion, RuleConfig};
use crate::protocol::NodeState;
use crate::rng::{self, tag};

use super::{InitialConfiguration, NodeOutcome, RunMode, RunResult, SimError};

fn signed(ops: &[Opinion]) -> f64 {
    let c0 = ops.iter().filter(|&&o| o == Opinion::Zero).count();
    metrics::signed_convergence(c0, ops.len() - c0).unwrap_or(0.0)
}

/// Round-based model run: every node updates simultaneously from the previous
/// round's opinions of itself and all its followees.
pub fn run_sync(
    g: &TrustGraph,
    rule: RuleConfig,
    init: &InitialConfiguration,
    max_rounds: u32,
    seed: u64,
) -> Result<RunResult, SimError> {
    let n = g.node_count();
    if n == 0 {
        return Err(SimError::NoCorrectNodes);
    }
    init.validate(n)?;
    let ids: Vec<_> = g.nodes().collect();
    let mut current = init.assign(&ids, seed);
    let initial_c0 = current.iter().filter(|&&o| o == Opinion::Zero).count();
    let mut rng = rng::stream(seed, &[tag::SYNC]);
    let mut next = current.clone();
    let mut view = Vec::new();
    let mut series = vec![(0.0, signed(&current))];
    let mut consensus_round = max_rounds + 1;
    let mut executed = 0;

    for round in 1..=max_rounds {
        for (i, id) in ids.iter().enumerate() {
            view.clear();
            view.extend(g.followees(*id).iter().map(|f| current[f.index()]));
            next[i] = rule.apply(current[i], &view, &mut rng).unwrap_or(current[i]);
        }
        std::mem::swap(&mut current, &mut next);
        executed = round;
        series.push((round as f64, signed(&current)));
        if current.iter().all(|&o| o == current[0]) {
            consensus_round = round;
            break;
        }
    }

    let nodes = ids
        .iter()
        .zip(&current)
        .map(|(&node, &opinion)| NodeOutcome {
            node,
            opinion,
            state: NodeState::Deciding,
            decision: None,
            round: consensus_round,
            decided_at_ms: None,
        })
        .collect();
    Ok(RunResult {
        mode: RunMode::Sync,
        seed,
        max_rounds,
        nodes,
        faulty: Vec::new(),
        initial_c0,
        initial_c1: n - initial_c0,
        consensus_round,
        end_time_ms: executed as f64,
        complete: consensus_round <= max_rounds,
        degenerate_firings: 0,
        events: executed as u64 * n as u64,
        series,
        trace: Vec::new(),
    })
}
