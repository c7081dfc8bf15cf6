use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use sky_core::mean_field::{
    fixed_points, integrate, AdversaryMapping, CriticalSearch, MeanFieldModel, MeanFieldState,
};

use crate::output::{csv_with_header, num};
use crate::spec::spec_hash;

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryParams {
    pub model: MeanFieldModel,
    pub degrees: Vec<f64>,
    pub c0: f64,
    pub f: f64,
    pub adversary: AdversaryMapping,
    pub dt: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalParams {
    pub model: MeanFieldModel,
    pub ps: Vec<f64>,
    pub degrees: Vec<f64>,
    pub epsilon: f64,
    pub dt: f64,
    pub t_max: f64,
    pub resolution: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointParams {
    pub model: MeanFieldModel,
    pub fs: Vec<f64>,
    pub degrees: Vec<f64>,
}

/// `c0` over time per degree. The faulty density `f` is taken out of the 1s:
/// `c1 = 1 - f - c0`, and the adversary mapping decides how `f` broadcasts.
pub fn trajectory(p: &TrajectoryParams, out: Option<&Path>) -> Result<()> {
    let hash = spec_hash("meanfield-trajectory", p, None)?;
    let mut w = csv_with_header(out, &[("spec_sha256", hash)])?;
    w.write_record(["degree", "step", "t", "c0", "ratio", "settled"])?;
    for &d in &p.degrees {
        let state = MeanFieldState::new(p.c0, 1.0 - p.f - p.c0, 0.0, p.f, 0.0, d)?;
        let traj = integrate(&state, p.model, p.adversary, p.dt, p.t_max)?;
        for (i, &(t, c0)) in traj.samples.iter().enumerate() {
            w.write_record([
                num(d, 1),
                i.to_string(),
                num(t, 3),
                num(c0, 12),
                num(c0 / (1.0 - traj.faulty), 12),
                traj.settled.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn critical(p: &CriticalParams, out: Option<&Path>) -> Result<()> {
    let hash = spec_hash("meanfield-critical", p, None)?;
    let search = CriticalSearch {
        model: p.model,
        dt: p.dt,
        t_max: p.t_max,
        resolution: p.resolution,
    };
    let mut w = csv_with_header(out, &[("spec_sha256", hash)])?;
    w.write_record(["p", "degree", "epsilon", "f_critical"])?;
    for &prob in &p.ps {
        for &d in &p.degrees {
            let cp = search.run(prob, d, p.epsilon)?;
            w.write_record([num(prob, 4), num(d, 1), num(p.epsilon, 4), num(cp.f_critical, 6)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn roots(p: &FixedPointParams, out: Option<&Path>) -> Result<()> {
    let hash = spec_hash("meanfield-fixed-points", p, None)?;
    let mut w = csv_with_header(out, &[("spec_sha256", hash)])?;
    w.write_record(["f", "degree", "c0", "ratio"])?;
    for &f in &p.fs {
        for &d in &p.degrees {
            for r in fixed_points(f, d, p.model)? {
                w.write_record([num(f, 4), num(d, 1), num(r, 8), num(r / (1.0 - f), 8)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
