//! Mean-field dynamics of the correct-node opinion density.
//!
//! The population is described by densities `c0, c1` (correct nodes holding
//! 0/1) and `f0, f1, fs` (faulty nodes broadcasting 0, 1, or nothing). A node
//! sees `D` followees whose broadcast opinions are drawn from the effective
//! densities `a0, a1`, and the rate of change of `c0` is `c1*s1 - c0*s0`
//! where `s_x` is the probability that a node holding `x` flips.

mod binomial;

pub use binomial::{binom, BinomError, BinomialTable, BinomialTerms};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::opinion::Model;

const DENSITY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MeanFieldError {
    #[error("densities must be non-negative and sum to 1 (got sum {0})")]
    BadDensities(f64),
    #[error("degree must be positive (got {0})")]
    BadDegree(f64),
    #[error("no broadcasting nodes left (silent or departed faulty density is 1)")]
    Degenerate,
    #[error("model {0} has no mean-field form")]
    UnsupportedModel(Model),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Models with a closed-form flip probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeanFieldModel {
    Mr,
    Sa,
    Sky,
}

impl TryFrom<Model> for MeanFieldModel {
    type Error = MeanFieldError;

    fn try_from(m: Model) -> Result<Self, Self::Error> {
        match m {
            Model::Mr => Ok(MeanFieldModel::Mr),
            Model::Sa => Ok(MeanFieldModel::Sa),
            Model::Sky => Ok(MeanFieldModel::Sky),
            other => Err(MeanFieldError::UnsupportedModel(other)),
        }
    }
}

/// How a real-valued mean degree becomes a binomial trial count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegreeRounding {
    #[default]
    Nearest,
    Floor,
}

impl DegreeRounding {
    pub fn trials(self, degree: f64) -> u32 {
        let n = match self {
            DegreeRounding::Nearest => degree.round(),
            DegreeRounding::Floor => degree.floor(),
        };
        n.max(1.0) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub c0: f64,
    pub c1: f64,
    pub f0: f64,
    pub f1: f64,
    pub fs: f64,
    pub degree: f64,
    #[serde(default)]
    pub rounding: DegreeRounding,
}

impl MeanFieldState {
    pub fn new(c0: f64, c1: f64, f0: f64, f1: f64, fs: f64, degree: f64) -> Result<Self, MeanFieldError> {
        let s = MeanFieldState {
            c0,
            c1,
            f0,
            f1,
            fs,
            degree,
            rounding: DegreeRounding::Nearest,
        };
        s.validate()?;
        Ok(s)
    }

    /// Fault-free population with correct-0 density `c0`.
    pub fn fault_free(c0: f64, degree: f64) -> Result<Self, MeanFieldError> {
        Self::new(c0, 1.0 - c0, 0.0, 0.0, 0.0, degree)
    }

    pub fn validate(&self) -> Result<(), MeanFieldError> {
        let parts = [self.c0, self.c1, self.f0, self.f1, self.fs];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|&x| !(x >= -DENSITY_TOL)) || (sum - 1.0).abs() > DENSITY_TOL {
            return Err(MeanFieldError::BadDensities(sum));
        }
        if !(self.degree > 0.0) {
            return Err(MeanFieldError::BadDegree(self.degree));
        }
        Ok(())
    }

    pub fn correct(&self) -> f64 {
        self.c0 + self.c1
    }

    pub fn faulty(&self) -> f64 {
        self.f0 + self.f1 + self.fs
    }

    pub fn trials(&self) -> u32 {
        self.rounding.trials(self.degree)
    }

    pub fn sum(&self) -> f64 {
        self.c0 + self.c1 + self.f0 + self.f1 + self.fs
    }
}

/// Broadcast-opinion densities among nodes that broadcast at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveDensities {
    pub a0: f64,
    pub a1: f64,
}

pub fn effective_densities(state: &MeanFieldState) -> Result<EffectiveDensities, MeanFieldError> {
    let live = 1.0 - state.fs;
    if live <= 0.0 {
        return Err(MeanFieldError::Degenerate);
    }
    Ok(EffectiveDensities {
        a0: (state.c0 + state.f0) / live,
        a1: (state.c1 + state.f1) / live,
    })
}

/// Flip probabilities: `s0` for a node holding 0, `s1` for a node holding 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipProbabilities {
    pub s0: f64,
    pub s1: f64,
}

/// MR flip probability for a node whose own opinion has followee density `same`.
/// The node flips when fewer than n/2 of its n followees agree with it, and with
/// probability 1/2 on an exact tie (even n only).
pub fn mr_flip(n: u32, same: f64) -> f64 {
    let t = BinomialTable::new(n, same.clamp(0.0, 1.0)).expect("clamped probability");
    // largest count strictly below n/2
    let below = (n as i64 - 1) / 2;
    let mut s = t.cdf(below);
    if n.is_multiple_of(2) {
        s += 0.5 * t.pmf(n as i64 / 2);
    }
    s
}

/// SA flip probability: certain flip when at most n/5 followees agree, then a
/// proportional term over the band from ceil(n/5) to floor(4n/5).
pub fn sa_flip(n: u32, same: f64) -> f64 {
    let t = BinomialTable::new(n, same.clamp(0.0, 1.0)).expect("clamped probability");
    let n = n as i64;
    let nf = n as f64;
    let lower_floor = n / 5;
    let lower_ceil = (n + 4) / 5;
    let upper_floor = 4 * n / 5;
    let band: f64 = (lower_ceil..=upper_floor)
        .map(|i| t.pmf(i) * ((nf - i as f64) / nf + 1.0 / (2.0 * nf)))
        .sum();
    t.cdf(lower_floor) + band
}

pub fn flip_mr(degree: f64, a0: f64, a1: f64) -> FlipProbabilities {
    let n = DegreeRounding::Nearest.trials(degree);
    FlipProbabilities {
        s0: mr_flip(n, a0),
        s1: mr_flip(n, a1),
    }
}

pub fn flip_sa(degree: f64, a0: f64, a1: f64) -> FlipProbabilities {
    let n = DegreeRounding::Nearest.trials(degree);
    FlipProbabilities {
        s0: sa_flip(n, a0),
        s1: sa_flip(n, a1),
    }
}

fn rate_for(n: u32, c0: f64, c1: f64, eff: EffectiveDensities, flip: fn(u32, f64) -> f64) -> f64 {
    c1 * flip(n, eff.a1) - c0 * flip(n, eff.a0)
}

/// `dc0/dt = c1*s1 - c0*s0`; Sky averages the MR and SA rates.
pub fn dc0_dt(state: &MeanFieldState, model: MeanFieldModel, eff: EffectiveDensities) -> f64 {
    let n = state.trials();
    let (c0, c1) = (state.c0, state.c1);
    match model {
        MeanFieldModel::Mr => rate_for(n, c0, c1, eff, mr_flip),
        MeanFieldModel::Sa => rate_for(n, c0, c1, eff, sa_flip),
        MeanFieldModel::Sky => {
            0.5 * (rate_for(n, c0, c1, eff, mr_flip) + rate_for(n, c0, c1, eff, sa_flip))
        }
    }
}

/// How the faulty density `f` splits into broadcast-0, broadcast-1 and silent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryMapping {
    /// Keep whatever split the state carries.
    Fixed,
    AlwaysOne,
    AlwaysZero,
    Split,
    Random,
    Silent,
}

impl AdversaryMapping {
    /// `(f0, f1, fs)` for total faulty density `f`.
    pub fn split(self, f: f64) -> Option<(f64, f64, f64)> {
        match self {
            AdversaryMapping::Fixed => None,
            AdversaryMapping::AlwaysOne => Some((0.0, f, 0.0)),
            AdversaryMapping::AlwaysZero => Some((f, 0.0, 0.0)),
            AdversaryMapping::Split | AdversaryMapping::Random => Some((f / 2.0, f / 2.0, 0.0)),
            AdversaryMapping::Silent => Some((0.0, 0.0, f)),
        }
    }

    /// `state` with its faulty density redistributed by this mapping.
    pub fn apply(self, state: &MeanFieldState) -> MeanFieldState {
        match self.split(state.faulty()) {
            None => *state,
            Some((f0, f1, fs)) => MeanFieldState { f0, f1, fs, ..*state },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PopulationEvent {
    /// Every faulty node leaves; the correct densities are renormalized.
    FaultyLeave,
    /// As many new correct nodes holding 0 join as there were correct-0 nodes.
    CorrectJoinZero,
}

pub fn apply_population_event(
    state: &MeanFieldState,
    event: PopulationEvent,
) -> Result<MeanFieldState, MeanFieldError> {
    match event {
        PopulationEvent::FaultyLeave => {
            let f = state.faulty();
            if f == 0.0 {
                return Ok(*state);
            }
            let live = 1.0 - f;
            if live <= 0.0 {
                return Err(MeanFieldError::Degenerate);
            }
            Ok(MeanFieldState {
                c0: state.c0 / live,
                c1: state.c1 / live,
                f0: 0.0,
                f1: 0.0,
                fs: 0.0,
                ..*state
            })
        }
        PopulationEvent::CorrectJoinZero => {
            let scale = 1.0 + state.c0;
            Ok(MeanFieldState {
                c0: 2.0 * state.c0 / scale,
                c1: state.c1 / scale,
                f0: state.f0 / scale,
                f1: state.f1 / scale,
                fs: state.fs / scale,
                ..*state
            })
        }
    }
}

/// Sampled `(t, c0)` path of an integration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub dt: f64,
    /// Total faulty density, constant along the path.
    pub faulty: f64,
    pub samples: Vec<(f64, f64)>,
    /// True when the run stopped because the rate vanished rather than at the horizon.
    pub settled: bool,
}

impl Trajectory {
    pub fn final_c0(&self) -> f64 {
        self.samples.last().map(|s| s.1).unwrap_or(0.0)
    }

    /// Limiting fraction of correct nodes holding 0.
    pub fn final_ratio(&self) -> f64 {
        self.final_c0() / (1.0 - self.faulty)
    }

    /// Number of steps until `c0 >= target`, if it ever gets there.
    pub fn steps_to_reach(&self, target: f64) -> Option<usize> {
        self.samples.iter().position(|&(_, c0)| c0 >= target)
    }
}

pub const SETTLE_RATE: f64 = 1e-9;
pub const DEFAULT_HORIZON: f64 = 200.0;

/// Forward-Euler integration of `c0`, re-deriving `c1 = 1 - f - c0` and the
/// adversary's effective densities at every step.
pub fn integrate(
    state0: &MeanFieldState,
    model: MeanFieldModel,
    adversary: AdversaryMapping,
    dt: f64,
    t_max: f64,
) -> Result<Trajectory, MeanFieldError> {
    if !(dt > 0.0) {
        return Err(MeanFieldError::InvalidParameter(format!("dt must be positive (got {dt})")));
    }
    state0.validate()?;
    let mut state = adversary.apply(state0);
    let f = state.faulty();
    let ceiling = 1.0 - f;
    let mut t = 0.0;
    let mut samples = vec![(t, state.c0)];
    let mut settled = false;
    while t < t_max - 1e-12 {
        let eff = effective_densities(&state)?;
        let rate = dc0_dt(&state, model, eff);
        if rate.abs() < SETTLE_RATE {
            settled = true;
            break;
        }
        let c0 = (state.c0 + rate * dt).clamp(0.0, ceiling);
        state.c0 = c0;
        state.c1 = (ceiling - c0).max(0.0);
        t += dt;
        samples.push((t, c0));
    }
    Ok(Trajectory {
        dt,
        faulty: f,
        samples,
        settled,
    })
}

/// Tunables for the critical-point search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalSearch {
    pub model: MeanFieldModel,
    pub dt: f64,
    pub t_max: f64,
    pub resolution: f64,
}

impl Default for CriticalSearch {
    fn default() -> Self {
        CriticalSearch {
            model: MeanFieldModel::Sky,
            dt: 1.0,
            t_max: DEFAULT_HORIZON,
            resolution: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub p: f64,
    pub degree: f64,
    pub f_critical: f64,
    pub epsilon: f64,
}

impl CriticalSearch {
    /// Whether a population with correct-majority fraction `p` and faulty density
    /// `f` under the always-1 adversary keeps at least `1 - epsilon` of its correct
    /// nodes at 0.
    pub fn tolerates(&self, p: f64, degree: f64, f: f64, epsilon: f64) -> Result<bool, MeanFieldError> {
        if f >= 1.0 {
            return Ok(false);
        }
        let state = MeanFieldState::new(p * (1.0 - f), (1.0 - p) * (1.0 - f), 0.0, f, 0.0, degree)?;
        let traj = integrate(&state, self.model, AdversaryMapping::AlwaysOne, self.dt, self.t_max)?;
        Ok(traj.final_ratio() >= 1.0 - epsilon)
    }

    pub fn run(&self, p: f64, degree: f64, epsilon: f64) -> Result<CriticalPoint, MeanFieldError> {
        if !(0.5..=1.0).contains(&p) {
            return Err(MeanFieldError::InvalidParameter(format!("p must be in [0.5, 1] (got {p})")));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(MeanFieldError::InvalidParameter(format!(
                "epsilon must be in (0, 0.5) (got {epsilon})"
            )));
        }
        let mut lo = 0.0;
        if self.tolerates(p, degree, lo, epsilon)? {
            let mut hi = 1.0;
            while hi - lo > self.resolution {
                let mid = 0.5 * (lo + hi);
                if self.tolerates(p, degree, mid, epsilon)? {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        Ok(CriticalPoint {
            p,
            degree,
            f_critical: lo,
            epsilon,
        })
    }
}

/// Largest tolerable faulty density for the Sky model under the worst-case adversary.
pub fn critical_point(p: f64, degree: f64, epsilon: f64) -> Result<CriticalPoint, MeanFieldError> {
    CriticalSearch::default().run(p, degree, epsilon)
}

/// `dc0/dt` along `c0 in [0, 1-f]` under the always-1 adversary.
pub fn rate_under_always_one(c0: f64, f: f64, degree: f64, model: MeanFieldModel) -> f64 {
    let c1 = (1.0 - f - c0).max(0.0);
    let state = MeanFieldState {
        c0,
        c1,
        f0: 0.0,
        f1: f,
        fs: 0.0,
        degree,
        rounding: DegreeRounding::Nearest,
    };
    let eff = EffectiveDensities { a0: c0, a1: c1 + f };
    dc0_dt(&state, model, eff)
}

const ROOT_GRID: f64 = 1e-3;
const ROOT_TOL: f64 = 1e-8;
const ZERO_RATE: f64 = 1e-14;

/// Zeros of `dc0/dt` on `[0, 1-f]` under the always-1 adversary: exact zeros on
/// a 1e-3 grid plus sign changes between grid points, refined by bisection.
pub fn fixed_points(f: f64, degree: f64, model: MeanFieldModel) -> Result<Vec<f64>, MeanFieldError> {
    if !(0.0..1.0).contains(&f) {
        return Err(MeanFieldError::InvalidParameter(format!("f must be in [0, 1) (got {f})")));
    }
    let top = 1.0 - f;
    let rate = |c0: f64| rate_under_always_one(c0, f, degree, model);
    let steps = (top / ROOT_GRID).floor() as usize;
    let mut grid: Vec<f64> = (0..=steps).map(|i| i as f64 / 1000.0).collect();
    if top - grid[grid.len() - 1] > 1e-12 {
        grid.push(top);
    }
    let values: Vec<f64> = grid.iter().map(|&c| rate(c)).collect();
    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&last| r - last > 1e-6) {
            roots.push(r);
        }
    };
    for i in 0..grid.len() {
        if values[i].abs() <= ZERO_RATE {
            push(grid[i], &mut roots);
            continue;
        }
        if i + 1 < grid.len() && values[i + 1].abs() > ZERO_RATE && values[i].signum() != values[i + 1].signum() {
            let (mut lo, mut hi) = (grid[i], grid[i + 1]);
            let lo_sign = values[i].signum();
            while hi - lo > ROOT_TOL {
                let mid = 0.5 * (lo + hi);
                if rate(mid).signum() == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            push(0.5 * (lo + hi), &mut roots);
        }
    }
    Ok(roots)
}
