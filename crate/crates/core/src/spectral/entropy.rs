//! Entropy-production quantities of a measure on a finite window.
//!
//! For `x` in a sub-window `Lam` and `zeta` a configuration on `Lam`:
//!
//! ```text
//! Gamma(x, zeta) = mu(c_x(eta) (q eta_x + p (1 - eta_x)); eta_Lam = zeta)
//! alpha(x)       = sum_zeta (Gamma(x, zeta) - Gamma(x, zeta^x)) log(Gamma(x, zeta) / Gamma(x, zeta^x))
//! beta(x)        = sum_zeta |Gamma(x, zeta) - Gamma(x, zeta^x)|
//! h_bulk         = -1/2 sum_{x interior} alpha(x)
//! h_boundary     = sum_{x boundary} sum_zeta (Gamma(x, zeta) - Gamma(x, zeta^x)) log(mu(zeta) / pi(zeta))
//! ```
//!
//! `mu` lives on a window `W` containing `Lam`; constraints read `W` and the
//! boundary condition of its state space. `0 log(0/0)` counts as 0.

use serde::{Deserialize, Serialize};

use super::measure::MeasureVector;
use crate::error::{Error, Result};
use crate::lattice::Window;
use crate::models::ModelSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntropyReport {
    pub window: Window,
    /// `gamma[i][zeta]` for the `i`-th site of the window; `zeta` is a state
    /// code on the window.
    pub gamma: Vec<Vec<f64>>,
    /// `None` at boundary sites.
    pub alpha: Vec<Option<f64>>,
    pub beta: Vec<f64>,
    pub h_bulk: f64,
    pub h_boundary: f64,
    pub lambda0: f64,
    /// `(lambda0 / 2) sum_boundary beta + C 2 lambda0 e^{-lambda0}` with
    /// `C = p^2 / q` (or `q^2 / p` when `q > p`).
    pub boundary_bound: f64,
}

impl EntropyReport {
    pub fn sites(&self) -> impl Iterator<Item = i64> + '_ {
        self.window.iter()
    }

    pub fn alpha_at(&self, x: i64) -> Option<f64> {
        self.window.index(x).ok().and_then(|i| self.alpha[i])
    }

    pub fn beta_at(&self, x: i64) -> Option<f64> {
        self.window.index(x).ok().map(|i| self.beta[i])
    }
}

/// `diff * log(num / den)`, extended to vanishing `num` or `den`.
fn xlogy_ratio(diff: f64, num: f64, den: f64) -> f64 {
    if diff == 0.0 {
        return 0.0;
    }
    if num <= 0.0 {
        return if diff < 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    if den <= 0.0 {
        return if diff > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    diff * (num / den).ln()
}

pub fn entropy_production(mu: &MeasureVector, model: &ModelSpec, lam: Window, lambda0: f64) -> Result<EntropyReport> {
    let space = mu.space();
    if model.is_edge_model() {
        return Err(Error::UnsupportedModel(model.kind.to_string()));
    }
    let sm = space.model();
    if sm.kind != model.kind || sm.q != model.q || sm.delta != model.delta {
        return Err(Error::InvalidParameter("measure lives on a state space of another model".into()));
    }
    let w = space.window();
    if w.is_circle() || lam.is_circle() || !w.contains_window(&lam) {
        return Err(Error::WindowMismatch(format!("{lam} must be a line sub-window of {w}")));
    }
    if !(lambda0 > 1.0) {
        return Err(Error::InvalidParameter("lambda0 must exceed 1".into()));
    }
    let i0 = w.index(lam.lo())?;
    let k = lam.len();
    if k > 20 {
        return Err(Error::CapExceeded { states: 1u128 << k, cap: 1 << 20 });
    }
    let mask = (1u64 << k) - 1;
    let (p, q) = (model.p(), model.q);
    let nz = 1usize << k;
    let mut gamma = vec![vec![0.0; nz]; k];
    let mut marginal = vec![0.0; nz];
    for (a, &m) in mu.weights().iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let code = space.code(a);
        let zeta = ((code >> i0) & mask) as usize;
        marginal[zeta] += m;
        for (j, row) in gamma.iter_mut().enumerate() {
            let i = i0 + j;
            let c = space.constraint(code, i);
            if c > 0.0 {
                let healthy = (code >> i) & 1 == 1;
                row[zeta] += m * c * if healthy { q } else { p };
            }
        }
    }
    let pi_dens = vec![p; k];
    let interior = |j: usize| j > 0 && j + 1 < k;
    let mut alpha = vec![None; k];
    let mut beta = vec![0.0; k];
    let mut h_boundary = 0.0;
    for j in 0..k {
        let g = &gamma[j];
        let mut a = 0.0;
        let mut b = 0.0;
        let mut h = 0.0;
        for z in 0..nz {
            let zx = z ^ (1 << j);
            let d = g[z] - g[zx];
            b += d.abs();
            if d != 0.0 {
                a += xlogy_ratio(d, g[z], g[zx]);
            }
            if !interior(j) && d != 0.0 {
                let pi = super::measure::product_weight(z as u64, &pi_dens);
                h += xlogy_ratio(d, marginal[z], pi);
            }
        }
        beta[j] = b;
        if interior(j) {
            alpha[j] = Some(a);
        } else {
            h_boundary += h;
        }
    }
    let h_bulk = -0.5 * alpha.iter().flatten().sum::<f64>();
    let c = if q <= p { p * p / q } else { q * q / p };
    let boundary_beta: f64 = (0..k).filter(|&j| !interior(j)).map(|j| beta[j]).sum();
    let boundary_bound = 0.5 * lambda0 * boundary_beta + c * 2.0 * lambda0 * (-lambda0).exp();
    Ok(EntropyReport { window: lam, gamma, alpha, beta, h_bulk, h_boundary, lambda0, boundary_bound })
}
