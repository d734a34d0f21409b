//! Matrix exponentials by uniformization: `e^{tL} = sum_k Pois(Lt; k) P^k`
//! with `P = I + L / Lambda`. Long times are split into chunks with
//! `Lambda h <= CHUNK` so the Poisson weights never underflow.

use super::generator::GeneratorMatrix;

const CHUNK: f64 = 20.0;
const TAIL: f64 = 1e-15;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    /// Acts on functions: `e^{tL} f`.
    Function,
    /// Acts on row vectors: `v e^{tL}`.
    Measure,
}

fn step(g: &GeneratorMatrix, lam: f64, side: Side, v: &[f64], out: &mut [f64]) {
    match side {
        Side::Function => g.apply_into(v, out),
        Side::Measure => g.apply_transpose_into(v, out),
    }
    for (o, x) in out.iter_mut().zip(v) {
        *o = x + *o / lam;
    }
}

fn propagate(g: &GeneratorMatrix, side: Side, v: &[f64], t: f64) -> Vec<f64> {
    let lam = g.max_exit_rate() * 1.02;
    if t <= 0.0 || lam == 0.0 {
        return v.to_vec();
    }
    let chunks = (lam * t / CHUNK).ceil().max(1.0) as usize;
    let a = lam * t / chunks as f64;
    let mut cur = v.to_vec();
    let mut term = vec![0.0; v.len()];
    let mut next = vec![0.0; v.len()];
    for _ in 0..chunks {
        let mut w = (-a).exp();
        let mut acc: Vec<f64> = cur.iter().map(|x| w * x).collect();
        let mut mass = w;
        term.copy_from_slice(&cur);
        let mut k = 0usize;
        while 1.0 - mass > TAIL && k < 10_000 {
            k += 1;
            step(g, lam, side, &term, &mut next);
            std::mem::swap(&mut term, &mut next);
            w *= a / k as f64;
            mass += w;
            for (s, x) in acc.iter_mut().zip(&term) {
                *s += w * x;
            }
            if k as f64 > a && w < TAIL * 1e-3 {
                break;
            }
        }
        cur = acc;
    }
    cur
}

/// `e^{tL} f`.
pub fn expm_apply(g: &GeneratorMatrix, f: &[f64], t: f64) -> Vec<f64> {
    propagate(g, Side::Function, f, t)
}

/// `v e^{tL}`.
pub fn expm_transpose_apply(g: &GeneratorMatrix, v: &[f64], t: f64) -> Vec<f64> {
    propagate(g, Side::Measure, v, t)
}

/// Distributions `v e^{tL}` at each (sorted) time.
pub fn evolve_distribution(g: &GeneratorMatrix, v: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    evolve_many(g, Side::Measure, v, times)
}

/// Functions `e^{tL} f` at each (sorted) time.
pub fn evolve_function(g: &GeneratorMatrix, f: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    evolve_many(g, Side::Function, f, times)
}

fn evolve_many(g: &GeneratorMatrix, side: Side, v: &[f64], times: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = v.to_vec();
    let mut t0 = 0.0;
    for &t in times {
        let dt = t - t0;
        if dt > 0.0 {
            cur = propagate(g, side, &cur, dt);
            t0 = t;
        }
        out.push(cur.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BoundaryCondition, SiteState, Window};
    use crate::models::ModelSpec;
    use crate::spectral::{Restriction, chain};
    use nalgebra::DMatrix;

    fn dense(g: &GeneratorMatrix) -> DMatrix<f64> {
        let n = g.dim();
        let mut m = DMatrix::zeros(n, n);
        for (a, b, r) in g.triplets() {
            m[(a, b)] = r;
        }
        for a in 0..n {
            m[(a, a)] = -g.exit_rate(a);
        }
        m
    }

    #[test]
    fn two_state_closed_form() {
        let m = ModelSpec::east(0.3).unwrap();
        let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Healthy);
        let g = chain(&m, Window::sites(1).unwrap(), bc, Restriction::None).unwrap();
        for t in [0.0, 0.1, 1.0, 7.5, 300.0] {
            let v = expm_transpose_apply(&g, &[1.0, 0.0], t);
            // P(healthy at t | infected at 0) = p (1 - e^{-t})
            let exact = 0.7 * (1.0 - (-t as f64).exp());
            assert!((v[1] - exact).abs() < 1e-13, "t={t}");
            assert!((v[0] + v[1] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn matches_dense_exponential() {
        let m = ModelSpec::delta_west(0.4, 0.3).unwrap();
        let g = chain(&m, Window::sites(4).unwrap(), BoundaryCondition::INFECTED, Restriction::None).unwrap();
        let l = dense(&g);
        // Pade-free reference: exp via eigen-decomposition is unavailable for a
        // non-symmetric matrix, so use a fine Taylor series with scaling and squaring
        let t = 1.3;
        let s = 10;
        let a = &l * (t / (1u32 << s) as f64);
        let mut e = DMatrix::<f64>::identity(16, 16);
        let mut term = DMatrix::<f64>::identity(16, 16);
        for k in 1..30 {
            term = &term * &a / k as f64;
            e += &term;
        }
        for _ in 0..s {
            e = &e * &e;
        }
        let f: Vec<f64> = (0..16).map(|i| (i as f64).sin()).collect();
        let got = expm_apply(&g, &f, t);
        for i in 0..16 {
            let want: f64 = (0..16).map(|j| e[(i, j)] * f[j]).sum();
            assert!((got[i] - want).abs() < 1e-11);
        }
        let rows = expm_transpose_apply(&g, &[1.0; 16], t);
        let total: f64 = rows.iter().sum();
        assert!((total - 16.0).abs() < 1e-10);
    }

    #[test]
    fn sequential_times() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let g = chain(&m, Window::sites(4).unwrap(), BoundaryCondition::INFECTED, Restriction::None).unwrap();
        let mut v = vec![0.0; 16];
        v[15] = 1.0;
        let seq = evolve_distribution(&g, &v, &[0.5, 1.0, 3.0]);
        let direct = expm_transpose_apply(&g, &v, 3.0);
        for (a, b) in seq[2].iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
