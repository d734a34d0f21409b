//! Total-variation mixing profiles and hitting-time tails.

use serde::{Deserialize, Serialize};

use super::generator::GeneratorMatrix;
use super::measure::MeasureVector;
use super::semigroup::{evolve_distribution, expm_transpose_apply};
use crate::error::{Error, Result};

/// Largest state count for mixing profiles.
pub const MIXING_STATE_CAP: usize = 1 << 14;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixingProfile {
    pub times: Vec<f64>,
    /// `d(t) = TV(delta_eta0 e^{tL}, mu)`.
    pub distance: Vec<f64>,
    /// `(eps, t_mix(eps))`, `None` when the grid never reaches `eps`.
    pub t_mix: Vec<(f64, Option<f64>)>,
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// First grid time with `d(t) <= eps`, linearly interpolated between the
/// bracketing grid points.
pub fn t_mix_from(times: &[f64], distance: &[f64], eps: f64) -> Option<f64> {
    let k = distance.iter().position(|&d| d <= eps)?;
    if k == 0 {
        return Some(times[0]);
    }
    let (t0, t1, d0, d1) = (times[k - 1], times[k], distance[k - 1], distance[k]);
    if d0 == d1 {
        return Some(t1);
    }
    Some(t0 + (d0 - eps) / (d0 - d1) * (t1 - t0))
}

fn check(g: &GeneratorMatrix, mu: &MeasureVector, times: &[f64]) -> Result<()> {
    if g.dim() > MIXING_STATE_CAP {
        return Err(Error::CapExceeded { states: g.dim() as u128, cap: MIXING_STATE_CAP as u64 });
    }
    if g.dim() != mu.weights().len() {
        return Err(Error::InvalidParameter("measure and generator dimensions differ".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("time grid must be nonnegative and sorted".into()));
    }
    Ok(())
}

pub fn mixing_profile(
    g: &GeneratorMatrix,
    mu: &MeasureVector,
    eta0: usize,
    times: &[f64],
    eps: &[f64],
) -> Result<MixingProfile> {
    check(g, mu, times)?;
    if eta0 >= g.dim() {
        return Err(Error::InvalidParameter(format!("initial state index {eta0} out of range")));
    }
    let mut v = vec![0.0; g.dim()];
    v[eta0] = 1.0;
    let distance: Vec<f64> =
        evolve_distribution(g, &v, times).iter().map(|d| total_variation(d, mu.weights())).collect();
    let t_mix = eps.iter().map(|&e| (e, t_mix_from(times, &distance, e))).collect();
    Ok(MixingProfile { times: times.to_vec(), distance, t_mix })
}

/// `max` over the given initial states of `d_eta(t)`, pointwise in `t`.
pub fn worst_case_profile(
    g: &GeneratorMatrix,
    mu: &MeasureVector,
    starts: &[usize],
    times: &[f64],
    eps: &[f64],
) -> Result<MixingProfile> {
    use rayon::prelude::*;
    if starts.is_empty() {
        return Err(Error::InvalidParameter("no initial states".into()));
    }
    let profiles: Vec<MixingProfile> =
        starts.par_iter().map(|&s| mixing_profile(g, mu, s, times, &[])).collect::<Result<_>>()?;
    let distance: Vec<f64> =
        (0..times.len()).map(|k| profiles.iter().map(|p| p.distance[k]).fold(0.0, f64::max)).collect();
    let t_mix = eps.iter().map(|&e| (e, t_mix_from(times, &distance, e))).collect();
    Ok(MixingProfile { times: times.to_vec(), distance, t_mix })
}

/// `P(tau_target > t)` for the chain started from `start` (a distribution).
pub fn hitting_time_tail(g: &GeneratorMatrix, start: &[f64], target: &[bool], t: f64) -> Result<f64> {
    Ok(hitting_time_tails(g, start, target, &[t])?[0])
}

/// Tails on a sorted time grid.
pub fn hitting_time_tails(g: &GeneratorMatrix, start: &[f64], target: &[bool], times: &[f64]) -> Result<Vec<f64>> {
    let n = g.dim();
    if start.len() != n || target.len() != n {
        return Err(Error::InvalidParameter("start/target length differs from the state count".into()));
    }
    if !target.iter().any(|&b| b) {
        return Err(Error::InvalidParameter("empty target".into()));
    }
    let killed = g.killed(target);
    let v: Vec<f64> = start.iter().zip(target).map(|(&m, &tg)| if tg { 0.0 } else { m }).collect();
    let mut out = Vec::with_capacity(times.len());
    let mut cur = v;
    let mut t0 = 0.0;
    for &t in times {
        if t > t0 {
            cur = expm_transpose_apply(&killed, &cur, t - t0);
            t0 = t;
        }
        let mass: f64 = cur.iter().zip(target).filter(|(_, tg)| !**tg).map(|(m, _)| m).sum();
        // at t = 0 the start mass already inside the target has tau = 0
        out.push(mass.max(0.0));
    }
    Ok(out)
}
