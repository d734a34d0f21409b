//! Spectral gap of a reversible chain.
//!
//! Work happens on `S = D^{1/2} L D^{-1/2}` with `D = diag(mu)`, which is
//! symmetric when `mu` is reversible. Its top eigenvector is `sqrt(mu)` with
//! eigenvalue 0; the gap is the smallest eigenvalue of `-S` on the
//! orthogonal complement.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use super::generator::GeneratorMatrix;
use super::measure::{MeasureVector, ensure_reversible};
use crate::error::{Error, Result};
use crate::rng;

/// Largest state count handled by the dense eigensolver.
pub const DENSE_EIGEN_CAP: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GapMethod {
    Dense,
    Lanczos,
    /// Block-free LOBPCG minimization of the Rayleigh quotient.
    Rayleigh,
}

/// `-S` applied to `x`, in the symmetrized coordinates.
struct SymOp<'a> {
    g: &'a GeneratorMatrix,
    sqrt_mu: Vec<f64>,
}

impl SymOp<'_> {
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        // (S x)_a = sqrt(mu_a) * sum_b L(a,b) x_b / sqrt(mu_b)
        for (a, o) in out.iter_mut().enumerate() {
            let sa = self.sqrt_mu[a];
            let mut acc = 0.0;
            for (b, r) in self.g.row(a) {
                acc += r * x[b] / self.sqrt_mu[b];
            }
            *o = self.g.exit_rate(a) * x[a] - sa * acc;
        }
    }

    fn deflate(&self, x: &mut [f64]) {
        let d = dot(x, &self.sqrt_mu);
        for (xi, s) in x.iter_mut().zip(&self.sqrt_mu) {
            *xi -= d * s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn prepare<'a>(g: &'a GeneratorMatrix, mu: &MeasureVector) -> Result<SymOp<'a>> {
    if g.dim() != mu.weights().len() {
        return Err(Error::InvalidParameter("measure and generator dimensions differ".into()));
    }
    g.ensure_irreducible()?;
    ensure_reversible(g, mu)?;
    if mu.weights().iter().any(|&w| w <= 0.0) {
        return Err(Error::Numerical("reversible measure has a zero weight".into()));
    }
    Ok(SymOp { g, sqrt_mu: mu.weights().iter().map(|w| w.sqrt()).collect() })
}

/// Smallest nonzero eigenvalue of `-L` in `L^2(mu)`. Dense up to
/// [`DENSE_EIGEN_CAP`] states, Lanczos beyond.
pub fn spectral_gap(g: &GeneratorMatrix, mu: &MeasureVector) -> Result<f64> {
    let method = if g.dim() <= DENSE_EIGEN_CAP { GapMethod::Dense } else { GapMethod::Lanczos };
    spectral_gap_with(g, mu, method)
}

pub fn spectral_gap_with(g: &GeneratorMatrix, mu: &MeasureVector, method: GapMethod) -> Result<f64> {
    let op = prepare(g, mu)?;
    if g.dim() == 1 {
        return Err(Error::InvalidParameter("a one-state chain has no gap".into()));
    }
    match method {
        GapMethod::Dense => dense_gap(&op),
        GapMethod::Lanczos => lanczos_gap(&op, 1e-12),
        GapMethod::Rayleigh => rayleigh_gap(&op, 1e-11).map(|(l, _)| l),
    }
}

/// Gap together with the minimizing function `f` (normalized, mean zero
/// under `mu`), from Rayleigh-quotient minimization.
pub fn gap_eigenfunction(g: &GeneratorMatrix, mu: &MeasureVector) -> Result<(f64, Vec<f64>)> {
    let op = prepare(g, mu)?;
    let (l, x) = rayleigh_gap(&op, 1e-11)?;
    Ok((l, x.iter().zip(&op.sqrt_mu).map(|(xi, s)| xi / s).collect()))
}

fn dense_gap(op: &SymOp) -> Result<f64> {
    let n = op.g.dim();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        m[(a, a)] = op.g.exit_rate(a);
        for (b, r) in op.g.row(a) {
            let v = -r * op.sqrt_mu[a] / op.sqrt_mu[b];
            m[(a, b)] = v;
        }
    }
    // exact symmetry is guaranteed only up to the reversibility tolerance
    let m = (&m + m.transpose()) * 0.5;
    // lift the zero mode above the spectrum
    let shift = 4.0 * op.g.max_exit_rate() + 1.0;
    let v = DVector::from_column_slice(&op.sqrt_mu);
    let m = m + (&v * v.transpose()) * shift;
    let eig = SymmetricEigen::new(m);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::Numerical(format!("non-positive gap {min}")));
    }
    Ok(min)
}

fn start_vector(op: &SymOp, salt: u64) -> Vec<f64> {
    let mut r = rng::stream(0x5eed ^ salt, op.g.dim() as i64, rng::tag::LANCZOS);
    let mut x: Vec<f64> = (0..op.g.dim()).map(|_| rng::uniform(&mut r) - 0.5 + 1e-3 * (r.next_u64() & 1) as f64).collect();
    op.deflate(&mut x);
    let nx = norm(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    x
}

/// Explicitly restarted Lanczos with full reorthogonalization on the
/// complement of `sqrt(mu)`.
fn lanczos_gap(op: &SymOp, tol: f64) -> Result<f64> {
    let n = op.g.dim();
    let m = (n - 1).min(80);
    let mut x = start_vector(op, 1);
    let mut best = f64::INFINITY;
    for _cycle in 0..200 {
        let mut basis: Vec<Vec<f64>> = vec![x.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut w = vec![0.0; n];
        for j in 0..m {
            op.apply(&basis[j], &mut w);
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            // full reorthogonalization, twice
            for _ in 0..2 {
                op.deflate(&mut w);
                for v in &basis {
                    let c = dot(&w, v);
                    w.iter_mut().zip(v).for_each(|(wi, vi)| *wi -= c * vi);
                }
            }
            let b = norm(&w);
            if j + 1 == m || b < 1e-14 {
                break;
            }
            beta.push(b);
            basis.push(w.iter().map(|v| v / b).collect());
        }
        let k = alpha.len();
        let mut t = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            t[(i, i)] = alpha[i];
            if i + 1 < k {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or_else(|| Error::Numerical("empty Lanczos basis".into()))?;
        let s = eig.eigenvectors.column(imin);
        let mut y = vec![0.0; n];
        for (i, v) in basis.iter().enumerate().take(k) {
            y.iter_mut().zip(v).for_each(|(yi, vi)| *yi += s[i] * vi);
        }
        op.deflate(&mut y);
        let ny = norm(&y);
        y.iter_mut().for_each(|v| *v /= ny);
        op.apply(&y, &mut w);
        let rq = dot(&w, &y);
        let res: f64 = w.iter().zip(&y).map(|(wi, yi)| (wi - rq * yi).powi(2)).sum::<f64>().sqrt();
        best = rq;
        if res <= tol * op.g.max_exit_rate().max(1.0) || k < m {
            return Ok(best);
        }
        x = y;
    }
    if best.is_finite() && best > 0.0 {
        Ok(best)
    } else {
        Err(Error::Numerical("Lanczos did not converge".into()))
    }
}

/// LOBPCG with block size one: Rayleigh-Ritz on span{x, r, p} each step.
fn rayleigh_gap(op: &SymOp, tol: f64) -> Result<(f64, Vec<f64>)> {
    let n = op.g.dim();
    let mut x = start_vector(op, 2);
    let mut ax = vec![0.0; n];
    let mut p: Option<Vec<f64>> = None;
    let scale = op.g.max_exit_rate().max(1.0);
    let mut theta = f64::INFINITY;
    for _ in 0..20_000 {
        op.apply(&x, &mut ax);
        theta = dot(&x, &ax);
        let mut r: Vec<f64> = ax.iter().zip(&x).map(|(a, xi)| a - theta * xi).collect();
        op.deflate(&mut r);
        if norm(&r) <= tol * scale {
            return Ok((theta, x));
        }
        let mut span = vec![x.clone()];
        for cand in std::iter::once(r).chain(p.take()) {
            let mut c = cand;
            for _ in 0..2 {
                for v in &span {
                    let d = dot(&c, v);
                    c.iter_mut().zip(v).for_each(|(ci, vi)| *ci -= d * vi);
                }
            }
            let nc = norm(&c);
            if nc > 1e-13 {
                span.push(c.iter().map(|v| v / nc).collect());
            }
        }
        let k = span.len();
        let images: Vec<Vec<f64>> = span
            .iter()
            .map(|v| {
                let mut o = vec![0.0; n];
                op.apply(v, &mut o);
                o
            })
            .collect();
        let mut h = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                h[(i, j)] = 0.5 * (dot(&span[i], &images[j]) + dot(&span[j], &images[i]));
            }
        }
        let eig = SymmetricEigen::new(h);
        let imin = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|e| e.0).unwrap_or(0);
        let c = eig.eigenvectors.column(imin);
        let mut nx = vec![0.0; n];
        let mut np = vec![0.0; n];
        for i in 0..k {
            nx.iter_mut().zip(&span[i]).for_each(|(a, v)| *a += c[i] * v);
            if i > 0 {
                np.iter_mut().zip(&span[i]).for_each(|(a, v)| *a += c[i] * v);
            }
        }
        op.deflate(&mut nx);
        let nn = norm(&nx);
        nx.iter_mut().for_each(|v| *v /= nn);
        x = nx;
        p = Some(np);
    }
    Err(Error::Numerical(format!("Rayleigh minimization did not converge (last {theta})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BoundaryCondition, SiteState, Window};
    use crate::models::ModelSpec;
    use crate::spectral::{Restriction, build_state_space, build_generator};
    use std::sync::Arc;

    fn setup(m: &ModelSpec, n: usize, bc: BoundaryCondition, r: Restriction) -> (GeneratorMatrix, MeasureVector) {
        let s = Arc::new(build_state_space(m, Window::sites(n).unwrap(), bc, r).unwrap());
        let g = build_generator(m, &s, &bc).unwrap();
        let mu = MeasureVector::equilibrium(s).unwrap();
        (g, mu)
    }

    #[test]
    fn two_state_gap_is_one() {
        for q in [0.1, 0.5, 0.83] {
            let m = ModelSpec::east(q).unwrap();
            let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Healthy);
            let (g, mu) = setup(&m, 1, bc, Restriction::None);
            for method in [GapMethod::Dense, GapMethod::Lanczos, GapMethod::Rayleigh] {
                let gap = spectral_gap_with(&g, &mu, method).unwrap();
                assert!((gap - 1.0).abs() < 1e-10, "{method:?} {gap}");
            }
        }
    }

    #[test]
    fn methods_agree() {
        let cases = [
            (ModelSpec::east(0.5).unwrap(), BoundaryCondition::INFECTED, Restriction::None, 6),
            (ModelSpec::fa1f(0.3).unwrap(), BoundaryCondition::HEALTHY, Restriction::AtLeastOneInfection, 6),
            (ModelSpec::delta_west(0.4, 0.2).unwrap(), BoundaryCondition::INFECTED, Restriction::None, 5),
        ];
        for (m, bc, r, n) in cases {
            let (g, mu) = setup(&m, n, bc, r);
            let d = spectral_gap_with(&g, &mu, GapMethod::Dense).unwrap();
            let l = spectral_gap_with(&g, &mu, GapMethod::Lanczos).unwrap();
            let q = spectral_gap_with(&g, &mu, GapMethod::Rayleigh).unwrap();
            assert!((d - l).abs() < 1e-8, "{d} {l}");
            assert!((d - q).abs() < 1e-8, "{d} {q}");
        }
    }

    #[test]
    fn east_gap_sweep_nonincreasing() {
        let m = ModelSpec::east(0.5).unwrap();
        let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Healthy);
        let mut prev = f64::INFINITY;
        for n in 1..=10 {
            let (g, mu) = setup(&m, n, bc, Restriction::None);
            let gap = spectral_gap(&g, &mu).unwrap();
            assert!(gap > 0.0 && gap <= prev + 1e-10, "n={n} gap={gap} prev={prev}");
            prev = gap;
        }
    }

    #[test]
    fn eigenfunction_attains_gap() {
        let m = ModelSpec::fa1f(0.4).unwrap();
        let (g, mu) = setup(&m, 5, BoundaryCondition::INFECTED, Restriction::None);
        let (gap, f) = gap_eigenfunction(&g, &mu).unwrap();
        let mean = mu.expectation(&f);
        let var: f64 = mu.weights().iter().zip(&f).map(|(w, x)| w * (x - mean).powi(2)).sum();
        let d = crate::spectral::dirichlet_form(&g, &mu, &f).unwrap();
        assert!((d / var - gap).abs() < 1e-9);
    }

    #[test]
    fn reducible_is_rejected() {
        let m = ModelSpec::fa1f(0.4).unwrap();
        let (g, mu) = setup(&m, 3, BoundaryCondition::HEALTHY, Restriction::None);
        assert!(matches!(spectral_gap(&g, &mu), Err(Error::Reducible { .. })));
    }
}
