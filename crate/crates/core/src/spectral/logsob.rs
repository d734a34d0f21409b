//! Log-Sobolev constants `c = sup_f Ent(f^2) / D(f, f)` by optimization.
//!
//! `f = exp(u)` with `u` unconstrained; L-BFGS minimizes
//! `ln D(f) - ln Ent(f^2)` from many starts. Near constants the ratio tends
//! to `2 Var / D <= 2 / gap`, so the result is never below `2 / gap`.

use std::sync::Arc;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eigen::{gap_eigenfunction, spectral_gap};
use super::generator::{GeneratorMatrix, build_generator};
use super::measure::{MeasureVector, ensure_reversible, stationary_vector};
use super::state_space::{Restriction, build_state_space};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, SiteState, Window};
use crate::models::ModelSpec;
use crate::rng;

pub const DEFAULT_RESTARTS: usize = 24;
/// Largest state count accepted by the optimizer.
pub const LOGSOB_STATE_CAP: usize = 1 << 14;
/// Optimizer outputs with `min f / max f > 1 - NEAR_CONSTANT` count as the
/// constant limit.
const NEAR_CONSTANT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AchievedBy {
    /// A non-constant maximizer found by the optimizer.
    Optimizer,
    /// The spectral bound `2 / gap`, approached by near-constant `f`.
    GapLimit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogSobolevReport {
    pub c_sob: f64,
    pub gap: f64,
    /// Best ratio found by the optimizer.
    pub optimizer_ratio: f64,
    pub achieved_by: AchievedBy,
    /// Maximizing `f` (normalized to `mu(f^2) = 1`).
    pub f: Vec<f64>,
    /// Certificate: `Ent(f^2)` and `D(f, f)` at the reported `f`.
    pub entropy: f64,
    pub dirichlet: f64,
    pub restarts: usize,
    pub failed_restarts: usize,
}

/// `Ent_mu(f^2) = mu(f^2 log f^2) - mu(f^2) log mu(f^2)`, evaluated as
/// `E mu(phi(f^2 / E - 1))` with `phi(h) = (1 + h) log(1 + h) - h` so that
/// near-constant `f` keeps full relative precision.
pub fn entropy_of_square(mu: &[f64], f: &[f64]) -> f64 {
    let e: f64 = mu.iter().zip(f).map(|(m, x)| m * x * x).sum();
    if e <= 0.0 {
        return 0.0;
    }
    let s: f64 = mu.iter().zip(f).map(|(m, x)| m * phi(x * x / e - 1.0)).sum();
    (e * s).max(0.0)
}

fn phi(h: f64) -> f64 {
    if h.abs() < 0.05 {
        // sum_{k>=2} (-1)^k h^k / (k (k - 1))
        let mut term = h * h;
        let mut acc = 0.0;
        for k in 2..16 {
            let kf = k as f64;
            acc += term / (kf * (kf - 1.0));
            term *= -h;
        }
        acc
    } else if h <= -1.0 {
        1.0
    } else {
        (1.0 + h) * h.ln_1p() - h
    }
}

/// Half-sum form of the Dirichlet form; no cancellation for near-constant
/// `f`.
fn dirichlet_stable(g: &GeneratorMatrix, mu: &[f64], f: &[f64]) -> f64 {
    0.5 * (0..g.dim())
        .map(|a| mu[a] * g.row(a).map(|(b, r)| r * (f[b] - f[a]).powi(2)).sum::<f64>())
        .sum::<f64>()
}

pub fn variance(mu: &[f64], f: &[f64]) -> f64 {
    let m: f64 = mu.iter().zip(f).map(|(w, x)| w * x).sum();
    mu.iter().zip(f).map(|(w, x)| w * (x - m).powi(2)).sum()
}

/// Upper bound `2 (4 + 2 |log mu_min|) Var(f)` on `Ent(f^2)`.
pub fn entropy_variance_bound(mu: &[f64], f: &[f64]) -> f64 {
    let mu_min = mu.iter().cloned().filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
    2.0 * (4.0 + 2.0 * mu_min.ln().abs()) * variance(mu, f)
}

/// Log-Sobolev constant of the two-point space with `mu = (theta, 1 - theta)`
/// and `D(f) = theta (1 - theta) (f_1 - f_0)^2`.
pub fn two_point_log_sobolev(theta: f64) -> f64 {
    if (theta - 0.5).abs() < 1e-9 {
        2.0
    } else {
        ((1.0 - theta) / theta).ln() / (1.0 - 2.0 * theta)
    }
}

struct Problem<'a> {
    g: &'a GeneratorMatrix,
    mu: &'a [f64],
}

impl Problem<'_> {
    fn f_of(&self, u: &[f64]) -> Vec<f64> {
        let m = u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        u.iter().map(|x| (x - m).exp()).collect()
    }

    fn parts(&self, u: &[f64]) -> (Vec<f64>, f64, f64) {
        let f = self.f_of(u);
        let ent = entropy_of_square(self.mu, &f);
        let d = dirichlet_stable(self.g, self.mu, &f);
        (f, ent, d)
    }
}

impl CostFunction for Problem<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let (_, ent, d) = self.parts(u);
        if ent <= 0.0 || d <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(d.ln() - ent.ln())
    }
}

impl Gradient for Problem<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, u: &Self::Param) -> std::result::Result<Vec<f64>, argmin::core::Error> {
        let (f, ent, d) = self.parts(u);
        if ent <= 0.0 || d <= 0.0 {
            return Ok(vec![0.0; u.len()]);
        }
        let e: f64 = self.mu.iter().zip(&f).map(|(m, x)| m * x * x).sum();
        let lf = self.g.apply(&f);
        // dEnt/df_a = 2 mu_a f_a log(f_a^2 / E);  dD/df_a = -2 mu_a (Lf)_a
        Ok((0..u.len())
            .map(|a| {
                let fa = f[a];
                let dent = 2.0 * self.mu[a] * fa * ((fa * fa / e).ln());
                let dd = -2.0 * self.mu[a] * lf[a];
                fa * (dd / d - dent / ent)
            })
            .collect())
    }
}

fn starts(g: &GeneratorMatrix, mu: &[f64], restarts: usize, seed: u64, eig: Option<&[f64]>) -> Vec<Vec<f64>> {
    let n = mu.len();
    let mut out = Vec::new();
    if let Some(phi) = eig {
        let s = phi.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        for amp in [0.5, 2.0, 6.0, -2.0, -6.0] {
            out.push(phi.iter().map(|x| amp * x / s).collect());
        }
    }
    // indicator-like starts at the least likely states
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]));
    for &a in order.iter().take(4) {
        let mut u = vec![0.0; n];
        u[a] = 4.0;
        out.push(u);
    }
    let _ = g;
    let mut k = 0u64;
    while out.len() < restarts.max(20) {
        let mut r = rng::stream(seed, k as i64, rng::tag::RESTART);
        let scale = [0.3, 1.0, 3.0][(k % 3) as usize];
        out.push((0..n).map(|_| scale * rng::normal(&mut r)).collect());
        k += 1;
    }
    out
}

/// Best constant in `Ent_mu(f^2) <= c D(f, f)`.
pub fn log_sobolev_constant(g: &GeneratorMatrix, mu: &MeasureVector) -> Result<LogSobolevReport> {
    log_sobolev_with(g, mu, DEFAULT_RESTARTS, 0x1057)
}

pub fn log_sobolev_with(g: &GeneratorMatrix, mu: &MeasureVector, restarts: usize, seed: u64) -> Result<LogSobolevReport> {
    if g.dim() > LOGSOB_STATE_CAP {
        return Err(Error::CapExceeded { states: g.dim() as u128, cap: LOGSOB_STATE_CAP as u64 });
    }
    ensure_reversible(g, mu)?;
    let gap = spectral_gap(g, mu)?;
    let w = mu.weights();
    let phi = gap_eigenfunction(g, mu).ok().map(|(_, f)| f);
    let inits = starts(g, w, restarts, seed, phi.as_deref());
    let n_starts = inits.len();
    // None: the run failed; Some(None): it collapsed onto the constants,
    // where the ratio is at most 2 / gap and only rounding noise is left
    let results: Vec<Option<Option<(f64, Vec<f64>)>>> = inits
        .into_par_iter()
        .map(|u0| {
            let prob = Problem { g, mu: w };
            let solver = LBFGS::new(MoreThuenteLineSearch::new(), 7);
            let res = Executor::new(prob, solver).configure(|s| s.param(u0).max_iters(300)).run().ok()?;
            let u = res.state().get_best_param()?.clone();
            let prob = Problem { g, mu: w };
            let (f, ent, d) = prob.parts(&u);
            let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
            if 1.0 - lo < NEAR_CONSTANT {
                return Some(None);
            }
            (ent > 0.0 && d > 0.0 && (ent / d).is_finite()).then(|| Some((ent / d, f)))
        })
        .collect();
    let failed = results.iter().filter(|r| r.is_none()).count();
    let best = results.into_iter().flatten().flatten().max_by(|a, b| a.0.total_cmp(&b.0));
    let limit = 2.0 / gap;
    let (optimizer_ratio, f_opt) = match best {
        Some(b) => b,
        None if phi.is_some() => (0.0, Vec::new()),
        None => return Err(Error::Optimization(format!("all {n_starts} restarts failed"))),
    };
    let (c_sob, achieved_by, f) = if optimizer_ratio >= limit || phi.is_none() {
        (optimizer_ratio, AchievedBy::Optimizer, f_opt)
    } else {
        // f = 1 + eps * phi realizes the limit
        let phi = phi.unwrap_or_default();
        let s = phi.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
        (limit, AchievedBy::GapLimit, phi.iter().map(|x| 1.0 + 1e-4 * x / s).collect())
    };
    let e: f64 = w.iter().zip(&f).map(|(m, x)| m * x * x).sum();
    let f: Vec<f64> = f.iter().map(|x| x / e.sqrt()).collect();
    let entropy = entropy_of_square(w, &f);
    let dirichlet = dirichlet_stable(g, w, &f);
    Ok(LogSobolevReport {
        c_sob,
        gap,
        optimizer_ratio,
        achieved_by,
        f,
        entropy,
        dirichlet,
        restarts: n_starts,
        failed_restarts: failed,
    })
}

/// Chain, state space and stationary measure for the delta-West process on
/// `N` blocks of `l + 1` sites, infected boundary, at least one infection
/// per block.
pub fn restricted_block_chain(q: f64, ell: usize, blocks: usize, delta: f64) -> Result<(GeneratorMatrix, MeasureVector)> {
    if ell == 0 || blocks == 0 {
        return Err(Error::InvalidParameter("block length and count must be positive".into()));
    }
    let model = ModelSpec::delta_west(q, delta)?;
    let n = blocks * (ell + 1);
    let window = Window::line(1, n as i64)?;
    let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Infected);
    let space = Arc::new(build_state_space(&model, window, bc, Restriction::OneInfectionPerBlock { block_len: ell + 1 })?);
    let g = build_generator(&model, &space, &bc)?;
    let mu = MeasureVector::equilibrium(space)?;
    Ok((g, mu))
}

pub fn restricted_block_log_sobolev(q: f64, ell: usize, blocks: usize, delta: f64) -> Result<LogSobolevReport> {
    let (g, mu) = restricted_block_chain(q, ell, blocks, delta)?;
    log_sobolev_constant(&g, &mu)
}

/// Log-Sobolev constant of the chain's own stationary measure.
pub fn log_sobolev_of_chain(g: &GeneratorMatrix) -> Result<LogSobolevReport> {
    let mu = stationary_vector(g)?;
    log_sobolev_constant(g, &mu)
}
