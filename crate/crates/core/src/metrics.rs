//! Scalar run metrics and associative batch aggregation.

use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::sim::RunResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("metric undefined: both counts are zero")]
    Undefined,
    #[error("cannot summarize an empty batch")]
    EmptyBatch,
    #[error("summaries disagree on max_rounds ({0} vs {1})")]
    Incompatible(u32, u32),
}

/// `|c0 - c1| / (c0 + c1)`.
pub fn convergence(c0: usize, c1: usize) -> Result<f64, MetricError> {
    signed_convergence(c0, c1).map(f64::abs)
}

/// `(c0 - c1) / (c0 + c1)`.
pub fn signed_convergence(c0: usize, c1: usize) -> Result<f64, MetricError> {
    let total = c0 + c1;
    if total == 0 {
        return Err(MetricError::Undefined);
    }
    Ok((c0 as f64 - c1 as f64) / total as f64)
}

/// `|d0 - d1| / (d0 + d1)`; confused nodes are not part of either count.
pub fn decision_metric(d0: usize, d1: usize) -> Result<f64, MetricError> {
    convergence(d0, d1)
}

/// Almost-everywhere agreement on 0: at most `epsilon` of the decided correct
/// nodes decided 1. False when nobody decided.
pub fn meets_epsilon(d0: usize, d1: usize, epsilon: f64) -> bool {
    let decided = d0 + d1;
    decided > 0 && d1 as f64 <= epsilon * decided as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    #[default]
    Normal,
    /// Clopper-Pearson, for proportions in small batches.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

const Z95: f64 = 1.959_963_984_540_054;

/// Running sums for a mean with a normal-approximation interval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }

    /// Sample standard deviation.
    pub fn std_dev(&self) -> Option<f64> {
        if self.n < 2 {
            return None;
        }
        let n = self.n as f64;
        let var = (self.sum_sq - self.sum * self.sum / n) / (n - 1.0);
        Some(var.max(0.0).sqrt())
    }

    pub fn ci95(&self) -> Option<Interval> {
        let mean = self.mean()?;
        let half = self.std_dev().map_or(0.0, |s| Z95 * s / (self.n as f64).sqrt());
        Some(Interval {
            lo: mean - half,
            hi: mean + half,
        })
    }
}

/// 95% interval for `k` successes out of `n`.
pub fn proportion_ci(k: u64, n: u64, method: CiMethod) -> Option<Interval> {
    if n == 0 || k > n {
        return None;
    }
    let p = k as f64 / n as f64;
    Some(match method {
        CiMethod::Normal => {
            let half = Z95 * (p * (1.0 - p) / n as f64).sqrt();
            Interval {
                lo: (p - half).max(0.0),
                hi: (p + half).min(1.0),
            }
        }
        CiMethod::Exact => {
            let (kf, nf) = (k as f64, n as f64);
            let lo = if k == 0 {
                0.0
            } else {
                Beta::new(kf, nf - kf + 1.0).map_or(0.0, |b| b.inverse_cdf(0.025))
            };
            let hi = if k == n {
                1.0
            } else {
                Beta::new(kf + 1.0, nf - kf).map_or(1.0, |b| b.inverse_cdf(0.975))
            };
            Interval { lo, hi }
        }
    })
}

/// Rounds-to-consensus histogram: bins `[1,3), [3,5), ...` up to `max_rounds`
/// plus a separate sentinel bin for failed runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundHistogram {
    pub max_rounds: u32,
    pub bins: Vec<u64>,
    pub sentinel: u64,
}

impl RoundHistogram {
    pub const BIN_WIDTH: u32 = 2;

    pub fn new(max_rounds: u32) -> Self {
        RoundHistogram {
            max_rounds,
            bins: vec![0; max_rounds.div_ceil(Self::BIN_WIDTH) as usize],
            sentinel: 0,
        }
    }

    /// Lower edge of bin `i`.
    pub fn bin_start(i: usize) -> u32 {
        1 + i as u32 * Self::BIN_WIDTH
    }

    pub fn add(&mut self, rounds: u32) {
        if rounds == 0 || rounds > self.max_rounds {
            self.sentinel += 1;
        } else {
            self.bins[((rounds - 1) / Self::BIN_WIDTH) as usize] += 1;
        }
    }

    pub fn mass(&self) -> u64 {
        self.bins.iter().sum::<u64>() + self.sentinel
    }

    fn merge(&mut self, o: &RoundHistogram) {
        for (a, b) in self.bins.iter_mut().zip(&o.bins) {
            *a += b;
        }
        self.sentinel += o.sentinel;
    }
}

/// Number of bins for the signed-convergence distribution over `[-1, 1]`.
pub const CVG_BINS: usize = 20;

fn cvg_bin(x: f64) -> usize {
    (((x + 1.0) / 2.0 * CVG_BINS as f64).floor().max(0.0) as usize).min(CVG_BINS - 1)
}

/// Partial aggregate over runs; merging is associative and commutative up to
/// floating-point summation order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchSummary {
    pub runs: u64,
    pub incomplete: u64,
    pub histogram: RoundHistogram,
    pub final_cvg_bins: Vec<u64>,
    pub final_cvg: Moments,
    /// Decision metric over complete runs with at least one decided node.
    pub decision: Moments,
    pub decided_zero: Moments,
    pub confused_fraction: Moments,
    /// Correct nodes finished by the reference time, for time-bounded criteria.
    pub finished_by: Moments,
    pub finished_by_ms: f64,
    pub degenerate_firings: u64,
}

impl BatchSummary {
    pub fn empty(max_rounds: u32, finished_by_ms: f64) -> Self {
        BatchSummary {
            runs: 0,
            incomplete: 0,
            histogram: RoundHistogram::new(max_rounds),
            final_cvg_bins: vec![0; CVG_BINS],
            final_cvg: Moments::default(),
            decision: Moments::default(),
            decided_zero: Moments::default(),
            confused_fraction: Moments::default(),
            finished_by: Moments::default(),
            finished_by_ms,
            degenerate_firings: 0,
        }
    }

    pub fn push(&mut self, r: &RunResult) {
        self.runs += 1;
        self.histogram.add(r.consensus_round);
        self.degenerate_firings += r.degenerate_firings;
        if let Ok(c) = r.final_cvg() {
            self.final_cvg.push(c);
            self.final_cvg_bins[cvg_bin(c)] += 1;
        }
        if r.mode == crate::sim::RunMode::Async {
            self.finished_by.push(r.finished_by(self.finished_by_ms));
            if !r.complete {
                self.incomplete += 1;
                return;
            }
            let t = r.tally();
            if let Ok(d) = decision_metric(t.d0, t.d1) {
                self.decision.push(d);
            }
            if let Some(z) = r.decided_zero_fraction() {
                self.decided_zero.push(z);
            }
            if !r.nodes.is_empty() {
                self.confused_fraction.push(t.confused as f64 / r.nodes.len() as f64);
            }
        }
    }

    pub fn merge(&mut self, o: &BatchSummary) -> Result<(), MetricError> {
        if self.histogram.max_rounds != o.histogram.max_rounds {
            return Err(MetricError::Incompatible(self.histogram.max_rounds, o.histogram.max_rounds));
        }
        self.runs += o.runs;
        self.incomplete += o.incomplete;
        self.histogram.merge(&o.histogram);
        for (a, b) in self.final_cvg_bins.iter_mut().zip(&o.final_cvg_bins) {
            *a += b;
        }
        self.final_cvg.merge(&o.final_cvg);
        self.decision.merge(&o.decision);
        self.decided_zero.merge(&o.decided_zero);
        self.confused_fraction.merge(&o.confused_fraction);
        self.finished_by.merge(&o.finished_by);
        self.degenerate_firings += o.degenerate_firings;
        Ok(())
    }

    pub fn incomplete_fraction(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.incomplete as f64 / self.runs as f64
        }
    }

    /// Runs that ended in the sentinel bin.
    pub fn failure_ci(&self, method: CiMethod) -> Option<Interval> {
        proportion_ci(self.histogram.sentinel, self.runs, method)
    }
}

/// Summary over a non-empty batch, with `finished_by` measured at 70 s.
pub fn summarize(results: &[RunResult]) -> Result<BatchSummary, MetricError> {
    summarize_at(results, 70_000.0)
}

pub fn summarize_at(results: &[RunResult], finished_by_ms: f64) -> Result<BatchSummary, MetricError> {
    let first = results.first().ok_or(MetricError::EmptyBatch)?;
    let mut s = BatchSummary::empty(first.max_rounds, finished_by_ms);
    for r in results {
        if r.max_rounds != first.max_rounds {
            return Err(MetricError::Incompatible(first.max_rounds, r.max_rounds));
        }
        s.push(r);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;
    use crate::opinion::{Decision, Opinion};
    use crate::protocol::NodeState;
    use crate::sim::{NodeOutcome, RunMode};
    use proptest::prelude::*;

    #[test]
    fn convergence_examples() {
        assert_eq!(convergence(500, 500), Ok(0.0));
        assert_eq!(convergence(1000, 0), Ok(1.0));
        assert_eq!(convergence(750, 250), Ok(0.5));
        assert_eq!(convergence(0, 0), Err(MetricError::Undefined));
        assert_eq!(signed_convergence(250, 750), Ok(-0.5));
        assert_eq!(signed_convergence(998, 0), Ok(1.0));
        assert_eq!(signed_convergence(0, 0), Err(MetricError::Undefined));
    }

    #[test]
    fn decision_examples() {
        assert!((decision_metric(96, 4).unwrap() - 0.92).abs() < 1e-15);
        assert_eq!(decision_metric(50, 50), Ok(0.0));
        assert_eq!(decision_metric(100, 0), Ok(1.0));
        assert_eq!(decision_metric(0, 0), Err(MetricError::Undefined));
    }

    #[test]
    fn epsilon_rule() {
        assert!(meets_epsilon(95, 5, 0.05));
        assert!(!meets_epsilon(94, 6, 0.05));
        assert!(!meets_epsilon(0, 0, 0.05));
        assert!(!meets_epsilon(5, 95, 0.05));
    }

    proptest! {
        #[test]
        fn signed_and_unsigned_agree(c0 in 0usize..10_000, c1 in 0usize..10_000) {
            prop_assume!(c0 + c1 > 0);
            let s = signed_convergence(c0, c1).unwrap();
            prop_assert_eq!(s.abs(), convergence(c0, c1).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s));
            if c0 >= c1 {
                prop_assert_eq!(s, convergence(c0, c1).unwrap());
            }
        }

        #[test]
        fn decision_symmetric(d0 in 0usize..10_000, d1 in 0usize..10_000) {
            prop_assume!(d0 + d1 > 0);
            prop_assert_eq!(decision_metric(d0, d1), decision_metric(d1, d0));
        }

        #[test]
        fn histogram_mass(rounds in proptest::collection::vec(0u32..60, 0..200)) {
            let mut h = RoundHistogram::new(40);
            for &r in &rounds {
                h.add(r);
            }
            prop_assert_eq!(h.mass(), rounds.len() as u64);
            prop_assert_eq!(h.sentinel, rounds.iter().filter(|&&r| r == 0 || r > 40).count() as u64);
        }
    }

    #[test]
    fn histogram_edges() {
        let mut h = RoundHistogram::new(40);
        for r in [1, 2, 3, 40, 41] {
            h.add(r);
        }
        assert_eq!(h.bins.len(), 20);
        assert_eq!(h.bins[0], 2);
        assert_eq!(h.bins[1], 1);
        assert_eq!(h.bins[19], 1);
        assert_eq!(h.sentinel, 1);
        assert_eq!(RoundHistogram::bin_start(1), 3);
    }

    fn run(complete: bool, decisions: &[Option<Decision>], rounds: u32) -> RunResult {
        let nodes = decisions
            .iter()
            .enumerate()
            .map(|(i, &d)| NodeOutcome {
                node: NodeId(i as u32),
                opinion: if d == Some(Decision::Decided1) { Opinion::One } else { Opinion::Zero },
                state: match d {
                    None => NodeState::Deciding,
                    Some(Decision::Confused) => NodeState::Confused,
                    Some(_) => NodeState::Decided,
                },
                decision: d,
                round: rounds,
                decided_at_ms: d.map(|_| 1000.0),
            })
            .collect();
        RunResult {
            mode: RunMode::Async,
            seed: 0,
            max_rounds: 40,
            nodes,
            faulty: vec![],
            initial_c0: 1,
            initial_c1: 1,
            consensus_round: rounds,
            end_time_ms: 1000.0,
            complete,
            degenerate_firings: 0,
            events: 0,
            series: vec![],
            trace: vec![],
        }
    }

    #[test]
    fn incomplete_runs_are_excluded_from_decision_mean() {
        use Decision::*;
        let a = run(true, &[Some(Decided0), Some(Decided0), Some(Decided1), Some(Confused)], 40);
        let b = run(false, &[Some(Decided1), None], 41);
        let s = summarize(&[a.clone(), b]).unwrap();
        assert_eq!(s.runs, 2);
        assert_eq!(s.incomplete, 1);
        assert_eq!(s.incomplete_fraction(), 0.5);
        assert_eq!(s.decision.n, 1);
        assert!((s.decision.mean().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.confused_fraction.mean(), Some(0.25));
        assert_eq!(s.histogram.sentinel, 1);

        let single = summarize(&[a]).unwrap();
        assert_eq!(single.histogram.bins.iter().filter(|&&b| b > 0).count(), 1);
        assert_eq!(summarize(&[]), Err(MetricError::EmptyBatch));
    }

    #[test]
    fn merge_matches_one_pass() {
        use Decision::*;
        let runs: Vec<RunResult> = (0..9)
            .map(|i| {
                let d = if i % 3 == 0 { Decided1 } else { Decided0 };
                run(i != 4, &[Some(Decided0), Some(d)], 30 + i)
            })
            .collect();
        let whole = summarize(&runs).unwrap();
        let mut left = summarize(&runs[..4]).unwrap();
        let mut mid = summarize(&runs[4..7]).unwrap();
        mid.merge(&summarize(&runs[7..]).unwrap()).unwrap();
        left.merge(&mid).unwrap();
        assert_eq!(left.runs, whole.runs);
        assert_eq!(left.histogram, whole.histogram);
        assert_eq!(left.final_cvg_bins, whole.final_cvg_bins);
        assert!((left.decision.sum - whole.decision.sum).abs() < 1e-12);
        let mut other = BatchSummary::empty(20, 0.0);
        assert!(other.merge(&whole).is_err());
    }

    #[test]
    fn intervals() {
        let mut m = Moments::default();
        for x in [1.0, 2.0, 3.0, 4.0] {
            m.push(x);
        }
        let ci = m.ci95().unwrap();
        assert!((ci.lo - (2.5 - Z95 * 1.2909944487358056 / 2.0)).abs() < 1e-12);
        // Clopper-Pearson for 0/10: upper bound 1 - 0.025^(1/10)
        let e = proportion_ci(0, 10, CiMethod::Exact).unwrap();
        assert_eq!(e.lo, 0.0);
        assert!((e.hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9, "{e:?}");
        let e = proportion_ci(10, 10, CiMethod::Exact).unwrap();
        assert!((e.lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        let n = proportion_ci(5, 10, CiMethod::Normal).unwrap();
        assert!((n.hi - (0.5 + Z95 * 0.025f64.sqrt())).abs() < 1e-12);
        assert!(proportion_ci(3, 2, CiMethod::Normal).is_none());
    }
}
