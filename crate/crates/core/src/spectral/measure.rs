use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::generator::GeneratorMatrix;
use super::state_space::StateSpace;
use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::models::ModelSpec;

/// Probability vector on a state space.
#[derive(Clone, Debug)]
pub struct MeasureVector {
    space: Arc<StateSpace>,
    weights: Vec<f64>,
}

impl MeasureVector {
    /// Normalizes nonnegative weights.
    pub fn new(space: Arc<StateSpace>, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} states",
                weights.len(),
                space.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
        }
        let z: f64 = weights.iter().sum();
        if !(z > 0.0) {
            return Err(Error::InvalidParameter("weights sum to zero".into()));
        }
        Ok(MeasureVector { space, weights: weights.into_iter().map(|w| w / z).collect() })
    }

    /// Independent sites, site `i` healthy with probability `densities[i]`,
    /// conditioned on the state space.
    pub fn product(space: Arc<StateSpace>, densities: &[f64]) -> Result<Self> {
        if densities.len() != space.n_sites() {
            return Err(Error::InvalidParameter("one density per site required".into()));
        }
        let w = (0..space.len())
            .map(|a| product_weight(space.code(a), densities))
            .collect();
        Self::new(space, w)
    }

    /// The reversible product measure of the space's model, conditioned on
    /// the restriction (pi, the conditioned DFP measure, or the product of
    /// conditioned block measures).
    pub fn equilibrium(space: Arc<StateSpace>) -> Result<Self> {
        let d = space.model().equilibrium_healthy_density();
        let dens = vec![d; space.n_sites()];
        Self::product(space, &dens)
    }

    pub fn uniform(space: Arc<StateSpace>) -> Result<Self> {
        let n = space.len();
        Self::new(space, vec![1.0; n])
    }

    pub fn point_mass(space: Arc<StateSpace>, index: usize) -> Result<Self> {
        let mut w = vec![0.0; space.len()];
        *w.get_mut(index).ok_or_else(|| Error::InvalidParameter(format!("state {index} out of range")))? = 1.0;
        Self::new(space, w)
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(m, x)| m * x).sum()
    }

    /// Largest entrywise difference with another measure on the same space.
    pub fn max_abs_diff(&self, other: &MeasureVector) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Marginal probability that site `x` is healthy.
    pub fn healthy_marginal(&self, x: Site) -> Result<f64> {
        let i = self.space.window().index(x)?;
        Ok((0..self.space.len())
            .filter(|&a| (self.space.code(a) >> i) & 1 == 1)
            .map(|a| self.weights[a])
            .sum())
    }
}

pub(crate) fn product_weight(code: u64, densities: &[f64]) -> f64 {
    densities
        .iter()
        .enumerate()
        .map(|(i, &d)| if (code >> i) & 1 == 1 { d } else { 1.0 - d })
        .product()
}

/// Unique stationary distribution of an irreducible generator. Tries the
/// detailed-balance construction along a spanning tree first and falls back
/// to a linear solve when the result is not stationary.
pub fn stationary_vector(g: &GeneratorMatrix) -> Result<MeasureVector> {
    g.ensure_irreducible()?;
    let n = g.dim();
    let scale = g.max_exit_rate().max(1e-300);
    if let Some(w) = tree_solution(g) {
        let r = g.apply_transpose(&w);
        if r.iter().all(|x| x.abs() <= 1e-13 * scale) {
            return MeasureVector::new(g.space().clone(), w);
        }
    }
    if n <= 4096 {
        // replace the last balance equation by normalization
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, j, r) in g.triplets() {
            a[(j, i)] += r;
        }
        for i in 0..n {
            a[(i, i)] -= g.exit_rate(i);
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::<f64>::zeros(n);
        rhs[n - 1] = 1.0;
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular stationary system".into()))?;
        let w: Vec<f64> = sol.iter().map(|&x| x.max(0.0)).collect();
        return MeasureVector::new(g.space().clone(), w);
    }
    power_iteration(g)
}

fn tree_solution(g: &GeneratorMatrix) -> Option<Vec<f64>> {
    let n = g.dim();
    let mut logw = vec![f64::NAN; n];
    logw[0] = 0.0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(a) = queue.pop_front() {
        for (b, r) in g.row(a) {
            if logw[b].is_nan() {
                let back = g.rate(b, a);
                if back <= 0.0 {
                    return None;
                }
                logw[b] = logw[a] + r.ln() - back.ln();
                queue.push_back(b);
            }
        }
    }
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Some(logw.iter().map(|l| (l - m).exp()).collect())
}

fn power_iteration(g: &GeneratorMatrix) -> Result<MeasureVector> {
    let n = g.dim();
    let lam = g.max_exit_rate() * 1.05;
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..1_000_000 {
        let lv = g.apply_transpose(&v);
        let next: Vec<f64> = v.iter().zip(&lv).map(|(a, b)| a + b / lam).collect();
        let diff: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        if diff < 1e-15 {
            return MeasureVector::new(g.space().clone(), v);
        }
    }
    Err(Error::Numerical("power iteration did not converge".into()))
}

/// `max |c_x(z) (pi(z^x) mu(z) - pi(z) mu(z^x))|` over sites and
/// configurations of the space, with `pi` the unnormalized product measure
/// of `model` and the space's boundary condition. For the DFP the same
/// expression is evaluated per edge move with the edge rate in place of the
/// constraint.
pub fn check_detailed_balance(mu: &MeasureVector, model: &ModelSpec) -> Result<f64> {
    let space = mu.space();
    let n = space.n_sites();
    let d = model.equilibrium_healthy_density();
    let dens = vec![d; n];
    let w = mu.weights();
    let mut worst: f64 = 0.0;
    if space.model().kind != model.kind || space.model().delta != model.delta {
        return Err(Error::InvalidParameter("state space built for another model".into()));
    }
    if model.is_edge_model() {
        for a in 0..space.len() {
            let ca = space.code(a);
            let pa = product_weight(ca, &dens);
            space.for_each_move(ca, |cb, rate| {
                if let Some(b) = space.index_of(cb) {
                    let pb = product_weight(cb, &dens);
                    worst = worst.max((rate * (pb * w[a] - pa * w[b])).abs());
                }
            });
        }
        return Ok(worst);
    }
    for a in 0..space.len() {
        let ca = space.code(a);
        let pa = product_weight(ca, &dens);
        for x in 0..n {
            let cb = ca ^ (1 << x);
            let Some(b) = space.index_of(cb) else { continue };
            let c = space.constraint(ca, x);
            if c > 0.0 {
                let pb = product_weight(cb, &dens);
                worst = worst.max((c * (pb * w[a] - pa * w[b])).abs());
            }
        }
    }
    Ok(worst)
}

/// `max |mu(a) L(a,b) - mu(b) L(b,a)|` over all pairs.
pub fn flux_imbalance(g: &GeneratorMatrix, mu: &MeasureVector) -> f64 {
    let w = mu.weights();
    g.triplets()
        .into_iter()
        .map(|(a, b, r)| (w[a] * r - w[b] * g.rate(b, a)).abs())
        .fold(0.0, f64::max)
}

pub(crate) fn ensure_reversible(g: &GeneratorMatrix, mu: &MeasureVector) -> Result<()> {
    let scale = g
        .triplets()
        .into_iter()
        .map(|(a, _, r)| mu.weights()[a] * r)
        .fold(0.0, f64::max)
        .max(1e-300);
    let imb = flux_imbalance(g, mu);
    if imb > 1e-9 * scale {
        return Err(Error::NotReversible(imb));
    }
    Ok(())
}

/// `-<f, L f>_mu`.
pub fn dirichlet_form(g: &GeneratorMatrix, mu: &MeasureVector, f: &[f64]) -> Result<f64> {
    ensure_reversible(g, mu)?;
    Ok(dirichlet_unchecked(g, mu.weights(), f))
}

pub(crate) fn dirichlet_unchecked(g: &GeneratorMatrix, mu: &[f64], f: &[f64]) -> f64 {
    let lf = g.apply(f);
    -mu.iter().zip(f).zip(&lf).map(|((m, a), b)| m * a * b).sum::<f64>()
}

/// `1/2 sum_{a,b} mu(a) L(a,b) (f(b) - f(a))^2`.
pub fn dirichlet_half_sum(g: &GeneratorMatrix, mu: &MeasureVector, f: &[f64]) -> f64 {
    let w = mu.weights();
    0.5 * g.triplets().into_iter().map(|(a, b, r)| w[a] * r * (f[b] - f[a]).powi(2)).sum::<f64>()
}

/// `sum_x mu(c_x Var_x(f))` for vertex models: each site contributes
/// `c_x p q (f(z^x) - f(z))^2` weighted by `mu`, with `Var_x` the variance
/// of the single-site Bernoulli(p).
pub fn dirichlet_site_variance(mu: &MeasureVector, f: &[f64]) -> Result<f64> {
    let space = mu.space();
    let model = space.model();
    if model.is_edge_model() {
        return Err(Error::UnsupportedModel(model.kind.to_string()));
    }
    let (p, q) = (model.p(), model.q);
    let w = mu.weights();
    let mut total = 0.0;
    for a in 0..space.len() {
        let ca = space.code(a);
        for x in 0..space.n_sites() {
            let c = space.constraint(ca, x);
            if c == 0.0 {
                continue;
            }
            let Some(b) = space.index_of(ca ^ (1 << x)) else { continue };
            // Var_x(f) = p q (f(z^x) - f(z))^2 for both z and z^x
            total += w[a] * c * p * q * (f[b] - f[a]).powi(2);
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{BoundaryCondition, Parity, SiteState, Window};
    use crate::spectral::{Restriction, build_generator, build_state_space, chain};

    #[test]
    fn fa1f_stationary_is_product() {
        let m = ModelSpec::fa1f(0.3).unwrap();
        let g = chain(&m, Window::sites(4).unwrap(), BoundaryCondition::INFECTED, Restriction::None).unwrap();
        let mu = stationary_vector(&g).unwrap();
        let pi = MeasureVector::equilibrium(g.space().clone()).unwrap();
        assert!(mu.max_abs_diff(&pi) < 1e-12);
        assert!(check_detailed_balance(&pi, &m).unwrap() < 1e-15);
    }

    #[test]
    fn dfp_sector_stationary() {
        let m = ModelSpec::dfp(3.0).unwrap();
        let g = chain(
            &m,
            Window::sites(4).unwrap(),
            BoundaryCondition::HEALTHY,
            Restriction::ParitySector { parity: Parity::Even },
        )
        .unwrap();
        let mu = stationary_vector(&g).unwrap();
        let pi = MeasureVector::equilibrium(g.space().clone()).unwrap();
        assert!(mu.max_abs_diff(&pi) < 1e-12);
    }

    #[test]
    fn two_state_chain() {
        let m = ModelSpec::east(0.3).unwrap();
        let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Healthy);
        let g = chain(&m, Window::sites(1).unwrap(), bc, Restriction::None).unwrap();
        let mu = stationary_vector(&g).unwrap();
        assert!((mu.weights()[0] - 0.3).abs() < 1e-15 && (mu.weights()[1] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn uniform_violates_balance() {
        let m = ModelSpec::fa1f(0.3).unwrap();
        let space = Arc::new(
            build_state_space(&m, Window::sites(3).unwrap(), BoundaryCondition::INFECTED, Restriction::None).unwrap(),
        );
        let u = MeasureVector::uniform(space.clone()).unwrap();
        assert!(check_detailed_balance(&u, &m).unwrap() > 1e-3);
        let g = build_generator(&m, &space, &BoundaryCondition::INFECTED).unwrap();
        assert!(matches!(dirichlet_form(&g, &u, &vec![1.0; 8]), Err(Error::NotReversible(_))));
    }

    #[test]
    fn dirichlet_forms_agree() {
        let m = ModelSpec::babp(0.35).unwrap();
        let g = chain(&m, Window::sites(4).unwrap(), BoundaryCondition::INFECTED, Restriction::None).unwrap();
        let pi = MeasureVector::equilibrium(g.space().clone()).unwrap();
        let f: Vec<f64> = (0..g.dim()).map(|i| ((i * 7 % 5) as f64).sqrt()).collect();
        let a = dirichlet_form(&g, &pi, &f).unwrap();
        let b = dirichlet_half_sum(&g, &pi, &f);
        assert!((a - b).abs() < 1e-12);
        assert!(dirichlet_form(&g, &pi, &vec![2.5; g.dim()]).unwrap().abs() < 1e-14);
    }

    #[test]
    fn reducible_stationary_errors() {
        let m = ModelSpec::fa1f(0.3).unwrap();
        let g = chain(&m, Window::sites(3).unwrap(), BoundaryCondition::HEALTHY, Restriction::None).unwrap();
        assert!(matches!(stationary_vector(&g), Err(Error::Reducible { .. })));
    }
}
