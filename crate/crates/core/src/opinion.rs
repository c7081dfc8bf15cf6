//! Local update rules and the final-decision threshold.
//!
//! Count-based rules (MR, SA, Sky) see the node's own opinion plus the buffered
//! opinions of its active followees. Voter and Sznajd only look at followees.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Opinion {
    Zero,
    One,
}

impl Opinion {
    pub fn flipped(self) -> Opinion {
        match self {
            Opinion::Zero => Opinion::One,
            Opinion::One => Opinion::Zero,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Opinion::Zero => 0,
            Opinion::One => 1,
        }
    }
}

impl fmt::Display for Opinion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.bit())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpinionCounts {
    pub n0: u32,
    pub n1: u32,
}

impl OpinionCounts {
    pub fn new(n0: u32, n1: u32) -> Self {
        OpinionCounts { n0, n1 }
    }

    pub fn tally<I: IntoIterator<Item = Opinion>>(opinions: I) -> Self {
        let mut c = OpinionCounts::default();
        for o in opinions {
            c.add(o);
        }
        c
    }

    pub fn add(&mut self, o: Opinion) {
        match o {
            Opinion::Zero => self.n0 += 1,
            Opinion::One => self.n1 += 1,
        }
    }

    pub fn total(&self) -> u32 {
        self.n0 + self.n1
    }

    pub fn swapped(&self) -> Self {
        OpinionCounts::new(self.n1, self.n0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Decided0,
    Decided1,
    Confused,
}

impl Decision {
    pub fn opinion(self) -> Option<Opinion> {
        match self {
            Decision::Decided0 => Some(Opinion::Zero),
            Decision::Decided1 => Some(Opinion::One),
            Decision::Confused => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Sky,
    Mr,
    Sa,
    Voter,
    Sznajd,
}

impl Model {
    pub const ALL: [Model; 5] = [Model::Sky, Model::Mr, Model::Sa, Model::Voter, Model::Sznajd];

    pub fn name(self) -> &'static str {
        match self {
            Model::Sky => "sky",
            Model::Mr => "mr",
            Model::Sa => "sa",
            Model::Voter => "voter",
            Model::Sznajd => "sznajd",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown model {0:?} (expected sky, mr, sa, voter or sznajd)")]
pub struct UnknownModel(pub String);

impl FromStr for Model {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Model::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownModel(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("{model} rule needs at least {needed} followee opinions, got {got}")]
    TooFewFollowees {
        model: Model,
        needed: usize,
        got: usize,
    },
}

fn coin<R: Rng + ?Sized>(rng: &mut R) -> Opinion {
    if rng.random_bool(0.5) {
        Opinion::Zero
    } else {
        Opinion::One
    }
}

/// Adapted majority rule: strict majority wins, ties are a fair coin.
pub fn mr_rule<R: Rng + ?Sized>(c: OpinionCounts, rng: &mut R) -> Opinion {
    debug_assert!(c.total() >= 1);
    match c.n0.cmp(&c.n1) {
        std::cmp::Ordering::Greater => Opinion::Zero,
        std::cmp::Ordering::Less => Opinion::One,
        std::cmp::Ordering::Equal => coin(rng),
    }
}

/// Annealing rule: deterministic beyond a 4:1 ratio, otherwise opinion 0 with
/// probability n0 / (n0 + n1).
pub fn sa_rule<R: Rng + ?Sized>(c: OpinionCounts, rng: &mut R) -> Opinion {
    debug_assert!(c.total() >= 1);
    let (n0, n1) = (c.n0 as u64, c.n1 as u64);
    if n0 > 4 * n1 {
        Opinion::Zero
    } else if n1 > 4 * n0 {
        Opinion::One
    } else if rng.random_range(0..n0 + n1) < n0 {
        Opinion::Zero
    } else {
        Opinion::One
    }
}

/// Picks MR with probability `mr_ratio`, SA otherwise.
pub fn sky_rule_with_ratio<R: Rng + ?Sized>(c: OpinionCounts, mr_ratio: f64, rng: &mut R) -> Opinion {
    if rng.random_bool(mr_ratio.clamp(0.0, 1.0)) {
        mr_rule(c, rng)
    } else {
        sa_rule(c, rng)
    }
}

pub fn sky_rule<R: Rng + ?Sized>(c: OpinionCounts, rng: &mut R) -> Opinion {
    sky_rule_with_ratio(c, 0.5, rng)
}

/// Copies a uniformly chosen followee.
pub fn voter_rule<R: Rng + ?Sized>(followees: &[Opinion], rng: &mut R) -> Result<Opinion, RuleError> {
    if followees.is_empty() {
        return Err(RuleError::TooFewFollowees {
            model: Model::Voter,
            needed: 1,
            got: 0,
        });
    }
    Ok(followees[rng.random_range(0..followees.len())])
}

/// Two distinct followees drawn without replacement; adopt their opinion if they agree.
pub fn sznajd_rule<R: Rng + ?Sized>(
    current: Opinion,
    followees: &[Opinion],
    rng: &mut R,
) -> Result<Opinion, RuleError> {
    let len = followees.len();
    if len < 2 {
        return Err(RuleError::TooFewFollowees {
            model: Model::Sznajd,
            needed: 2,
            got: len,
        });
    }
    let i = rng.random_range(0..len);
    let mut j = rng.random_range(0..len - 1);
    if j >= i {
        j += 1;
    }
    Ok(if followees[i] == followees[j] {
        followees[i]
    } else {
        current
    })
}

/// Strict threshold test: agree at x when n_x > (n0 + n1) * threshold.
pub fn final_decision(c: OpinionCounts, threshold: f64) -> Decision {
    let bar = c.total() as f64 * threshold;
    if c.n0 as f64 > bar {
        Decision::Decided0
    } else if c.n1 as f64 > bar {
        Decision::Decided1
    } else {
        Decision::Confused
    }
}

/// A model plus its tunables, applied to one node's view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub model: Model,
    /// Probability that the Sky model applies MR rather than SA.
    pub sky_mr_ratio: f64,
}

impl RuleConfig {
    pub fn new(model: Model) -> Self {
        RuleConfig {
            model,
            sky_mr_ratio: 0.5,
        }
    }

    /// New opinion for a node holding `current` whose active followees hold `followees`.
    pub fn apply<R: Rng + ?Sized>(
        &self,
        current: Opinion,
        followees: &[Opinion],
        rng: &mut R,
    ) -> Result<Opinion, RuleError> {
        let counts = || {
            let mut c = OpinionCounts::tally(followees.iter().copied());
            c.add(current);
            c
        };
        match self.model {
            Model::Mr => Ok(mr_rule(counts(), rng)),
            Model::Sa => Ok(sa_rule(counts(), rng)),
            Model::Sky => Ok(sky_rule_with_ratio(counts(), self.sky_mr_ratio, rng)),
            Model::Voter => voter_rule(followees, rng),
            Model::Sznajd => sznajd_rule(current, followees, rng),
        }
    }
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig::new(Model::Sky)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    const DRAWS: usize = 10_000;

    fn freq_zero(mut f: impl FnMut(&mut rng::SimRng) -> Opinion, seed: u64) -> f64 {
        let mut r = rng::stream(seed, &[]);
        (0..DRAWS).filter(|_| f(&mut r) == Opinion::Zero).count() as f64 / DRAWS as f64
    }

    #[test]
    fn mr_majorities() {
        let mut r = rng::stream(1, &[]);
        assert_eq!(mr_rule(OpinionCounts::new(5, 3), &mut r), Opinion::Zero);
        assert_eq!(mr_rule(OpinionCounts::new(2, 7), &mut r), Opinion::One);
        let p = freq_zero(|r| mr_rule(OpinionCounts::new(4, 4), r), 2);
        assert!((p - 0.5).abs() <= 0.02, "{p}");
    }

    #[test]
    fn sa_thresholds() {
        let mut r = rng::stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(sa_rule(OpinionCounts::new(9, 2), &mut r), Opinion::Zero);
            assert_eq!(sa_rule(OpinionCounts::new(0, 5), &mut r), Opinion::One);
        }
        let p = freq_zero(|r| sa_rule(OpinionCounts::new(3, 2), r), 3);
        assert!((p - 0.6).abs() <= 0.02, "{p}");
        // exactly 4:1 is not beyond the threshold
        let p = freq_zero(|r| sa_rule(OpinionCounts::new(8, 2), r), 4);
        assert!((p - 0.8).abs() <= 0.02, "{p}");
    }

    #[test]
    fn sky_mixture() {
        let mut r = rng::stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(sky_rule(OpinionCounts::new(10, 0), &mut r), Opinion::Zero);
            assert_eq!(sky_rule(OpinionCounts::new(9, 2), &mut r), Opinion::Zero);
        }
        let p = freq_zero(|r| sky_rule(OpinionCounts::new(3, 2), r), 5);
        assert!((p - 0.8).abs() <= 0.02, "{p}");
    }

    #[test]
    fn voter_choices() {
        use Opinion::*;
        let mut r = rng::stream(1, &[]);
        assert_eq!(voter_rule(&[One, One, One], &mut r), Ok(One));
        assert_eq!(voter_rule(&[Zero], &mut r), Ok(Zero));
        assert!(voter_rule(&[], &mut r).is_err());
        let p = freq_zero(|r| voter_rule(&[Zero, Zero, One], r).unwrap(), 6);
        assert!((p - 2.0 / 3.0).abs() <= 0.02, "{p}");
    }

    #[test]
    fn sznajd_pairs() {
        use Opinion::*;
        let mut r = rng::stream(1, &[]);
        assert_eq!(sznajd_rule(One, &[Zero, Zero], &mut r), Ok(Zero));
        for _ in 0..100 {
            assert_eq!(sznajd_rule(Zero, &[Zero, One], &mut r), Ok(Zero));
        }
        assert!(sznajd_rule(Zero, &[One], &mut r).is_err());
        // pairs of {0,0,1} without replacement: 1 of 3 unordered pairs is (0,0)
        let p = freq_zero(|r| sznajd_rule(One, &[Zero, Zero, One], r).unwrap(), 7);
        assert!((p - 1.0 / 3.0).abs() <= 0.02, "{p}");
    }

    #[test]
    fn decisions() {
        let t = 2.0 / 3.0;
        assert_eq!(final_decision(OpinionCounts::new(7, 3), t), Decision::Decided0);
        assert_eq!(final_decision(OpinionCounts::new(6, 4), t), Decision::Confused);
        assert_eq!(final_decision(OpinionCounts::new(0, 10), t), Decision::Decided1);
    }

    #[test]
    fn decision_thresholds_exclusive() {
        for t in [0.51, 2.0 / 3.0, 0.75, 1.0] {
            for total in 1..=200u32 {
                for n0 in 0..=total {
                    let c = OpinionCounts::new(n0, total - n0);
                    let bar = total as f64 * t;
                    let both = (n0 as f64 > bar) && ((total - n0) as f64 > bar);
                    assert!(!both);
                    let d = final_decision(c, t);
                    let mirrored = final_decision(c.swapped(), t);
                    let expected = match d {
                        Decision::Decided0 => Decision::Decided1,
                        Decision::Decided1 => Decision::Decided0,
                        Decision::Confused => Decision::Confused,
                    };
                    assert_eq!(mirrored, expected);
                }
            }
        }
    }

    #[test]
    fn model_names() {
        for m in Model::ALL {
            assert_eq!(m.name().parse::<Model>(), Ok(m));
        }
        assert_eq!("SKY".parse::<Model>(), Ok(Model::Sky));
        assert!("deffuant".parse::<Model>().is_err());
    }

    #[test]
    fn apply_counts_self() {
        use Opinion::*;
        let mut r = rng::stream(1, &[]);
        let mr = RuleConfig::new(Model::Mr);
        // self breaks the 1:1 tie among followees
        for _ in 0..50 {
            assert_eq!(mr.apply(One, &[Zero, One], &mut r), Ok(One));
        }
        // all followees suspected: only the node's own opinion counts
        assert_eq!(mr.apply(Zero, &[], &mut r), Ok(Zero));
        assert!(RuleConfig::new(Model::Voter).apply(Zero, &[], &mut r).is_err());
    }

    proptest! {
        #[test]
        fn deterministic_branches(n0 in 0u32..60, n1 in 0u32..60, seed in any::<u64>()) {
            prop_assume!(n0 + n1 >= 1);
            let c = OpinionCounts::new(n0, n1);
            let mut r = rng::stream(seed, &[]);
            if n0 != n1 {
                let expect = if n0 > n1 { Opinion::Zero } else { Opinion::One };
                prop_assert_eq!(mr_rule(c, &mut r), expect);
            }
            let (hi, lo) = (n0.max(n1), n0.min(n1));
            if hi > 4 * lo {
                let expect = if n0 > n1 { Opinion::Zero } else { Opinion::One };
                prop_assert_eq!(sa_rule(c, &mut r), expect);
            }
        }

        #[test]
        fn label_swap_symmetry(n0 in 0u32..40, n1 in 0u32..40, seed in any::<u64>()) {
            prop_assume!(n0 + n1 >= 1);
            // Under identical draws, swapping counts swaps the outcome whenever the rule
            // is deterministic; for stochastic branches compare distributions instead.
            let c = OpinionCounts::new(n0, n1);
            let rules: [fn(OpinionCounts, &mut rng::SimRng) -> Opinion; 3] =
                [mr_rule::<rng::SimRng>, sa_rule::<rng::SimRng>, sky_rule::<rng::SimRng>];
            for rule in rules {
                let draws = 2000;
                let mut r = rng::stream(seed, &[1]);
                let a = (0..draws).filter(|_| rule(c, &mut r) == Opinion::Zero).count();
                let mut r = rng::stream(seed, &[2]);
                let b = (0..draws).filter(|_| rule(c.swapped(), &mut r) == Opinion::One).count();
                let (pa, pb) = (a as f64 / draws as f64, b as f64 / draws as f64);
                prop_assert!((pa - pb).abs() < 0.08, "{} vs {}", pa, pb);
            }
        }

        #[test]
        fn seeded_rules_repeat(n0 in 0u32..30, n1 in 0u32..30, seed in any::<u64>()) {
            prop_assume!(n0 + n1 >= 1);
            let c = OpinionCounts::new(n0, n1);
            let run = |seed| {
                let mut r = rng::stream(seed, &[]);
                (0..32).map(|_| (mr_rule(c, &mut r), sa_rule(c, &mut r), sky_rule(c, &mut r))).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(seed), run(seed));
        }
    }
}
