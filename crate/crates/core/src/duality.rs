//! BABP self-duality, BABP/DFP quasi-duality and DFP relaxation traces.
//!
//! With `y = sqrt(1 + lambda)` the two identities compare
//!
//! ```text
//! E (-1/lambda)^{|B'(t) ∩ B|}                       = E (-1/lambda)^{|B(t) ∩ B'|}
//! E w_in^{|D ∩ B(t)|} w_out^{|D^c ∩ B(t)|}          = E w_in^{|B ∩ D(t)|} w_out^{|B ∩ D(t)^c|}
//! ```
//!
//! with `w_in = 1/(y+1)`, `w_out = -1/(y-1)`. `B(t)`, `B'(t)` are BABP
//! infection sets. `D(t)` is the set of DFP sites in state 1, and the DFP runs
//! for time `p t` against BABP time `t` (the BABP flips at `c p` / `c q`).
//!
//! Exact evaluation applies `e^{tL}` to weight vectors on a finite window
//! (sites outside healthy, DFP edges inside the window only); both
//! identities hold exactly on such a window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, SiteState, Window};
use crate::models::{ModelSpec, dfp_edge_rates};
use crate::rng;
use crate::sim::{Record, build_timeline, evolve, evolve_final, run_replicas};
use crate::spectral::{GeneratorMatrix, Restriction, chain, expm_apply};
use crate::stats::{LinearFit, linear_fit, mean_stderr};

/// Largest window for exact evaluation.
pub const EXACT_SITE_CAP: usize = 16;
/// Largest DFP window for the exact relaxation probe.
pub const PROBE_SITE_CAP: usize = 14;
/// Propagation speed used to pad default windows.
pub const PAD_SPEED: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityParams {
    pub lambda: f64,
    pub y: f64,
    pub w_in: f64,
    pub w_out: f64,
    pub self_weight: f64,
}

impl DualityParams {
    pub fn new(lambda: f64) -> Result<Self> {
        let r = dfp_edge_rates(lambda)?;
        let y = r.y;
        Ok(DualityParams { lambda, y, w_in: 1.0 / (y + 1.0), w_out: -1.0 / (y - 1.0), self_weight: -1.0 / lambda })
    }

    /// BABP infection density `q = lambda / (1 + lambda)`.
    pub fn q(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }

    pub fn p(&self) -> f64 {
        1.0 / (1.0 + self.lambda)
    }

    /// Per-site weight `alpha - (1 - alpha)/lambda` obtained by averaging
    /// `(-1/lambda)^{|A ∩ B'|}` over `B'` with infection probability
    /// `1 - alpha`.
    pub fn bernoulli_self_weight(&self, alpha: f64) -> f64 {
        alpha - (1.0 - alpha) / self.lambda
    }

    /// `beta = (1 + alpha y)/2`, for which a `Bernoulli(beta)` set `D` gives
    /// `beta w_in + (1 - beta) w_out = alpha - (1 - alpha)/lambda`.
    pub fn beta_from_alpha(&self, alpha: f64) -> f64 {
        0.5 * (1.0 + alpha * self.y)
    }

    /// `1 - alpha >= 2 lambda / (lambda + 1)`: the branch where the
    /// self-duality weight has modulus at least one.
    pub fn large_weight_branch(&self, alpha: f64) -> bool {
        self.bernoulli_self_weight(alpha).abs() >= 1.0
    }
}

/// A (possibly random) subset of the window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetDescriptor {
    Explicit { sites: Vec<Site> },
    /// Every site of the window.
    Full,
    /// Each site independently with probability `prob`.
    Bernoulli { prob: f64 },
}

impl SetDescriptor {
    pub fn explicit(sites: &[Site]) -> Self {
        let mut v = sites.to_vec();
        v.sort_unstable();
        v.dedup();
        SetDescriptor::Explicit { sites: v }
    }

    /// `P(x in set)` for every site of the window.
    fn membership(&self, window: &Window) -> Result<Vec<f64>> {
        match self {
            SetDescriptor::Explicit { sites } => {
                let mut m = vec![0.0; window.len()];
                for &x in sites {
                    m[window.index(x)?] = 1.0;
                }
                Ok(m)
            }
            SetDescriptor::Full => Ok(vec![1.0; window.len()]),
            SetDescriptor::Bernoulli { prob } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::InvalidParameter(format!("Bernoulli probability {prob} not in [0,1]")));
                }
                Ok(vec![*prob; window.len()])
            }
        }
    }

    fn sites(&self) -> &[Site] {
        match self {
            SetDescriptor::Explicit { sites } => sites,
            _ => &[],
        }
    }

    fn sample<R: rand::Rng>(&self, window: &Window, r: &mut R) -> Result<Vec<bool>> {
        Ok(self.membership(window)?.into_iter().map(|m| m >= 1.0 || (m > 0.0 && rng::bernoulli(r, m))).collect())
    }
}

impl std::fmt::Display for SetDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SetDescriptor::Explicit { sites } => {
                let s: Vec<String> = sites.iter().map(|x| x.to_string()).collect();
                write!(f, "{{{}}}", s.join(","))
            }
            SetDescriptor::Full => f.write_str("full"),
            SetDescriptor::Bernoulli { prob } => write!(f, "bernoulli({prob})"),
        }
    }
}

impl std::str::FromStr for SetDescriptor {
    type Err = Error;

    /// `full`, `window`, `bernoulli(0.3)`, `empty`, or a comma list such as
    /// `-1,0,2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "full" | "window" => return Ok(SetDescriptor::Full),
            "" | "empty" | "{}" => return Ok(SetDescriptor::explicit(&[])),
            _ => {}
        }
        if let Some(arg) = s.strip_prefix("bernoulli(").and_then(|r| r.strip_suffix(')')) {
            let prob = arg.trim().parse().map_err(|_| Error::InvalidParameter(format!("bad probability '{arg}'")))?;
            return Ok(SetDescriptor::Bernoulli { prob });
        }
        parse_sites(s).map(|v| SetDescriptor::explicit(&v))
    }
}

/// Parses `-1,0,2` (braces optional).
pub fn parse_sites(s: &str) -> Result<Vec<Site>> {
    let s = s.trim().trim_start_matches('{').trim_end_matches('}');
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| t.trim().parse::<Site>().map_err(|_| Error::InvalidParameter(format!("bad site '{t}'"))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    SelfDuality,
    QuasiDuality,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Exact,
    MonteCarlo { replicas: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// `None` for exact values.
    pub stderr: Option<f64>,
}

impl Estimate {
    fn exact(value: f64) -> Self {
        Estimate { value, stderr: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub identity: Identity,
    pub lambda: f64,
    pub t: f64,
    /// Time the DFP ran for (quasi-duality only).
    pub dfp_time: Option<f64>,
    pub window: Window,
    pub b: Vec<Site>,
    /// `B'` for self-duality, `D` for quasi-duality.
    pub dual: SetDescriptor,
    #[serde(flatten)]
    pub method: Method,
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub abs_diff: f64,
    /// `(1/(y-1)) ((2y/(y+1)) P(b in D(t)) - 1)` when `D` is the window and
    /// `B = {b}`.
    pub rhs_alt: Option<f64>,
    /// Per-site self-duality weight of a Bernoulli `B'` has modulus >= 1.
    pub weight_flag: bool,
}

impl DualityReport {
    /// Combined standard error of `lhs - rhs` (0 for exact).
    pub fn stderr(&self) -> f64 {
        let a = self.lhs.stderr.unwrap_or(0.0);
        let b = self.rhs.stderr.unwrap_or(0.0);
        (a * a + b * b).sqrt()
    }
}

/// Hull of the listed sites padded by `ceil(PAD_SPEED t) + 4` on each side.
pub fn padded_window(sites: &[Site], t: f64) -> Result<Window> {
    let lo = sites.iter().copied().min().unwrap_or(0);
    let hi = sites.iter().copied().max().unwrap_or(0);
    let pad = (PAD_SPEED * t).ceil() as Site + 4;
    Window::line(lo - pad, hi + pad)
}

fn check_inputs(t: f64, window: &Window, sets: &[&[Site]]) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("t={t} must be nonnegative")));
    }
    if window.is_circle() {
        return Err(Error::WindowMismatch("duality windows are lines".into()));
    }
    for s in sets {
        for &x in *s {
            if !window.contains(x) {
                return Err(Error::OutOfRange { site: x, lo: window.lo(), hi: window.hi() });
            }
        }
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() { Ok(v) } else { Err(Error::Numerical(format!("{what} overflowed"))) }
}

/// Exact generators of BABP and DFP on one window.
pub struct ExactDuality {
    pub params: DualityParams,
    pub window: Window,
    babp: GeneratorMatrix,
    dfp: GeneratorMatrix,
}

impl ExactDuality {
    pub fn new(lambda: f64, window: Window) -> Result<Self> {
        let params = DualityParams::new(lambda)?;
        if window.is_circle() {
            return Err(Error::WindowMismatch("duality windows are lines".into()));
        }
        if window.len() > EXACT_SITE_CAP {
            return Err(Error::CapExceeded { states: 1u128 << window.len(), cap: 1 << EXACT_SITE_CAP });
        }
        let h = BoundaryCondition::HEALTHY;
        let babp = chain(&ModelSpec::babp_lambda(lambda)?, window, h, Restriction::None)?;
        let dfp = chain(&ModelSpec::dfp(lambda)?, window, h, Restriction::None)?;
        Ok(ExactDuality { params, window, babp, dfp })
    }

    fn codes(&self) -> impl Iterator<Item = u64> + '_ {
        let s = self.babp.space();
        (0..s.len()).map(|i| s.code(i))
    }

    /// `phi(eta) = prod_{x infected in eta} factor[x]`.
    fn infected_product(&self, factor: &[f64]) -> Vec<f64> {
        self.codes()
            .map(|c| factor.iter().enumerate().filter(|(i, _)| (c >> i) & 1 == 0).map(|(_, f)| f).product())
            .collect()
    }

    /// `phi(zeta) = prod_i (on[i] if zeta_i = 1 else off[i])`.
    fn healthy_product(&self, on: &[f64], off: &[f64]) -> Vec<f64> {
        self.codes()
            .map(|c| (0..on.len()).map(|i| if (c >> i) & 1 == 1 { on[i] } else { off[i] }).product())
            .collect()
    }

    /// Index of the configuration infected exactly on `sites`.
    fn index_infected(&self, sites: &[Site]) -> Result<usize> {
        let mut c = Configuration::all_healthy(self.window);
        for &x in sites {
            c = c.with_state(x, SiteState::Infected)?;
        }
        self.babp.space().index_of_config(&c)
    }

    /// Probability weights of the initial configuration whose infected set
    /// (`infected = true`) or healthy set is distributed as `set`.
    fn initial_law(&self, set: &SetDescriptor, infected: bool) -> Result<Vec<f64>> {
        let m = set.membership(&self.window)?;
        let inv: Vec<f64> = m.iter().map(|x| 1.0 - x).collect();
        Ok(if infected { self.healthy_product(&inv, &m) } else { self.healthy_product(&m, &inv) })
    }

    /// `eta -> E_{B'} (-1/lambda)^{|inf(eta) ∩ B'|}`.
    fn self_weight_fn(&self, set: &SetDescriptor) -> Result<Vec<f64>> {
        let w = self.params.self_weight;
        let f: Vec<f64> = set.membership(&self.window)?.iter().map(|m| 1.0 - m + m * w).collect();
        Ok(self.infected_product(&f))
    }

    pub fn self_duality(&self, b: &[Site], b_prime: &SetDescriptor, t: f64) -> Result<DualityReport> {
        check_inputs(t, &self.window, &[b, b_prime.sites()])?;
        let bset = SetDescriptor::explicit(b);
        let lhs_fn = expm_apply(&self.babp, &self.self_weight_fn(&bset)?, t);
        let law = self.initial_law(b_prime, true)?;
        let lhs = finite(law.iter().zip(&lhs_fn).map(|(a, b)| a * b).sum(), "lhs")?;
        let rhs_fn = expm_apply(&self.babp, &self.self_weight_fn(b_prime)?, t);
        let rhs = finite(rhs_fn[self.index_infected(b)?], "rhs")?;
        Ok(self.report(Identity::SelfDuality, t, None, b, b_prime, Method::Exact, Estimate::exact(lhs), Estimate::exact(rhs), None))
    }

    /// `eta -> prod_{x in inf(eta)} (P(x in D) w_in + P(x notin D) w_out)`.
    fn quasi_lhs_fn(&self, d: &SetDescriptor) -> Result<Vec<f64>> {
        let DualityParams { w_in, w_out, .. } = self.params;
        let f: Vec<f64> = d.membership(&self.window)?.iter().map(|m| m * w_in + (1.0 - m) * w_out).collect();
        Ok(self.infected_product(&f))
    }

    /// `zeta -> prod_{x in B} (w_in if zeta_x = 1 else w_out)`.
    fn quasi_rhs_fn(&self, b: &[Site]) -> Result<Vec<f64>> {
        let n = self.window.len();
        let (mut on, mut off) = (vec![1.0; n], vec![1.0; n]);
        for &x in b {
            let i = self.window.index(x)?;
            on[i] = self.params.w_in;
            off[i] = self.params.w_out;
        }
        Ok(self.healthy_product(&on, &off))
    }

    pub fn quasi_duality(&self, b: &[Site], d: &SetDescriptor, t: f64) -> Result<DualityReport> {
        check_inputs(t, &self.window, &[b, d.sites()])?;
        let lhs_fn = expm_apply(&self.babp, &self.quasi_lhs_fn(d)?, t);
        let lhs = finite(lhs_fn[self.index_infected(b)?], "lhs")?;
        let tau = self.params.p() * t;
        let law = self.initial_law(d, false)?;
        let rhs_fn = expm_apply(&self.dfp, &self.quasi_rhs_fn(b)?, tau);
        let rhs = finite(law.iter().zip(&rhs_fn).map(|(a, b)| a * b).sum(), "rhs")?;
        let alt = match (d, b) {
            (SetDescriptor::Full, &[x]) => {
                let i = self.window.index(x)?;
                let ind: Vec<f64> = self.codes().map(|c| ((c >> i) & 1) as f64).collect();
                let prob: f64 = law.iter().zip(expm_apply(&self.dfp, &ind, tau)).map(|(a, b)| a * b).sum();
                let y = self.params.y;
                Some((2.0 * y / (y + 1.0) * prob - 1.0) / (y - 1.0))
            }
            _ => None,
        };
        Ok(self.report(Identity::QuasiDuality, t, Some(tau), b, d, Method::Exact, Estimate::exact(lhs), Estimate::exact(rhs), alt))
    }

    /// Every pair `(B, B')` of `sets` at once: one semigroup application per set.
    pub fn self_duality_grid(&self, sets: &[Vec<Site>], t: f64) -> Result<Vec<DualityReport>> {
        let mut evolved = Vec::with_capacity(sets.len());
        let mut index = Vec::with_capacity(sets.len());
        for s in sets {
            check_inputs(t, &self.window, &[s])?;
            evolved.push(expm_apply(&self.babp, &self.self_weight_fn(&SetDescriptor::explicit(s))?, t));
            index.push(self.index_infected(s)?);
        }
        let mut out = Vec::with_capacity(sets.len() * sets.len());
        for (i, b) in sets.iter().enumerate() {
            for (j, bp) in sets.iter().enumerate() {
                let lhs = finite(evolved[i][index[j]], "lhs")?;
                let rhs = finite(evolved[j][index[i]], "rhs")?;
                let d = SetDescriptor::explicit(bp);
                out.push(self.report(Identity::SelfDuality, t, None, b, &d, Method::Exact, Estimate::exact(lhs), Estimate::exact(rhs), None));
            }
        }
        Ok(out)
    }

    /// Every pair `(B, D)` with `B` in `bs`, `D` in `ds`.
    pub fn quasi_duality_grid(&self, bs: &[Vec<Site>], ds: &[SetDescriptor], t: f64) -> Result<Vec<DualityReport>> {
        let tau = self.params.p() * t;
        let b_index: Vec<usize> = bs.iter().map(|b| self.index_infected(b)).collect::<Result<_>>()?;
        let mut rhs_fns = Vec::with_capacity(bs.len());
        for b in bs {
            check_inputs(t, &self.window, &[b])?;
            rhs_fns.push(expm_apply(&self.dfp, &self.quasi_rhs_fn(b)?, tau));
        }
        let mut out = Vec::with_capacity(bs.len() * ds.len());
        for d in ds {
            check_inputs(t, &self.window, &[d.sites()])?;
            let lhs_fn = expm_apply(&self.babp, &self.quasi_lhs_fn(d)?, t);
            let law = self.initial_law(d, false)?;
            for (k, b) in bs.iter().enumerate() {
                let lhs = finite(lhs_fn[b_index[k]], "lhs")?;
                let rhs = finite(law.iter().zip(&rhs_fns[k]).map(|(a, b)| a * b).sum(), "rhs")?;
                out.push(self.report(Identity::QuasiDuality, t, Some(tau), b, d, Method::Exact, Estimate::exact(lhs), Estimate::exact(rhs), None));
            }
        }
        Ok(out)
    }

    #[allow(clippy::too_many_arguments)]
    fn report(
        &self,
        identity: Identity,
        t: f64,
        dfp_time: Option<f64>,
        b: &[Site],
        dual: &SetDescriptor,
        method: Method,
        lhs: Estimate,
        rhs: Estimate,
        rhs_alt: Option<f64>,
    ) -> DualityReport {
        make_report(&self.params, self.window, identity, t, dfp_time, b, dual, method, lhs, rhs, rhs_alt)
    }
}

#[allow(clippy::too_many_arguments)]
fn make_report(
    params: &DualityParams,
    window: Window,
    identity: Identity,
    t: f64,
    dfp_time: Option<f64>,
    b: &[Site],
    dual: &SetDescriptor,
    method: Method,
    lhs: Estimate,
    rhs: Estimate,
    rhs_alt: Option<f64>,
) -> DualityReport {
    let weight_flag = match (identity, dual) {
        (Identity::SelfDuality, SetDescriptor::Bernoulli { prob }) => params.large_weight_branch(1.0 - prob),
        _ => false,
    };
    DualityReport {
        identity,
        lambda: params.lambda,
        t,
        dfp_time,
        window,
        b: b.to_vec(),
        dual: dual.clone(),
        method,
        abs_diff: (lhs.value - rhs.value).abs(),
        lhs,
        rhs,
        rhs_alt,
        weight_flag,
    }
}

fn resolve_window(window: Option<Window>, sites: &[Site], t: f64) -> Result<Window> {
    match window {
        Some(w) => Ok(w),
        None => padded_window(sites, t),
    }
}

/// Both sides of the BABP self-duality. Without a window, the hull of `B`
/// and `B'` is padded by `ceil(2t) + 4` sites.
pub fn self_duality_sides(
    b: &[Site],
    b_prime: &SetDescriptor,
    t: f64,
    lambda: f64,
    window: Option<Window>,
    method: Method,
) -> Result<DualityReport> {
    let all: Vec<Site> = b.iter().chain(b_prime.sites()).copied().collect();
    let window = resolve_window(window, &all, t)?;
    match method {
        Method::Exact => ExactDuality::new(lambda, window)?.self_duality(b, b_prime, t),
        Method::MonteCarlo { replicas, seed } => {
            check_inputs(t, &window, &[b, b_prime.sites()])?;
            let params = DualityParams::new(lambda)?;
            let model = ModelSpec::babp_lambda(lambda)?;
            let w = params.self_weight;
            let b_idx: Vec<usize> = b.iter().map(|&x| window.index(x)).collect::<Result<_>>()?;
            // lhs: sample B', evolve it, count infections landing on B
            let lhs = mc_mean(replicas, rng::derive_seed(seed, 0), |s| {
                let mut r = rng::stream(s, 0, rng::tag::SET);
                let start = b_prime.sample(&window, &mut r)?;
                let fin = run_babp(&model, &window, &start, t, s)?;
                Ok(w.powi(b_idx.iter().filter(|&&i| fin[i]).count() as i32))
            })?;
            // rhs: evolve B, average over B' analytically
            let mb = b_prime.membership(&window)?;
            let start: Vec<bool> = (0..window.len()).map(|i| b_idx.contains(&i)).collect();
            let rhs = mc_mean(replicas, rng::derive_seed(seed, 1), |s| {
                let fin = run_babp(&model, &window, &start, t, s)?;
                Ok(fin.iter().zip(&mb).filter(|(f, _)| **f).map(|(_, m)| 1.0 - m + m * w).product())
            })?;
            Ok(make_report(&params, window, Identity::SelfDuality, t, None, b, b_prime, method, lhs, rhs, None))
        }
    }
}

/// Both sides of the BABP/DFP quasi-duality; `D` is the set of DFP sites in
/// state 1, `D = full` means the whole window.
pub fn quasi_duality_sides(
    b: &[Site],
    d: &SetDescriptor,
    t: f64,
    lambda: f64,
    window: Option<Window>,
    method: Method,
) -> Result<DualityReport> {
    let all: Vec<Site> = b.iter().chain(d.sites()).copied().collect();
    let window = resolve_window(window, &all, t)?;
    match method {
        Method::Exact => ExactDuality::new(lambda, window)?.quasi_duality(b, d, t),
        Method::MonteCarlo { replicas, seed } => {
            check_inputs(t, &window, &[b, d.sites()])?;
            let params = DualityParams::new(lambda)?;
            let DualityParams { w_in, w_out, .. } = params;
            let babp = ModelSpec::babp_lambda(lambda)?;
            let dfp = ModelSpec::dfp(lambda)?;
            let tau = params.p() * t;
            let b_idx: Vec<usize> = b.iter().map(|&x| window.index(x)).collect::<Result<_>>()?;
            let md = d.membership(&window)?;
            let start: Vec<bool> = (0..window.len()).map(|i| b_idx.contains(&i)).collect();
            let lhs = mc_mean(replicas, rng::derive_seed(seed, 0), |s| {
                let fin = run_babp(&babp, &window, &start, t, s)?;
                Ok(fin.iter().zip(&md).filter(|(f, _)| **f).map(|(_, m)| m * w_in + (1.0 - m) * w_out).product())
            })?;
            let rhs = mc_mean(replicas, rng::derive_seed(seed, 1), |s| {
                let mut r = rng::stream(s, 0, rng::tag::SET);
                let ones = d.sample(&window, &mut r)?;
                let bits: Vec<u8> = ones.iter().map(|&o| u8::from(o)).collect();
                let eta0 = Configuration::from_bits(window, &bits)?;
                let fin = if tau > 0.0 {
                    let tl = build_timeline(&dfp, window, tau, s)?;
                    evolve_final(&dfp, &eta0, &BoundaryCondition::HEALTHY, &tl)?
                } else {
                    eta0
                };
                Ok(b.iter().map(|&x| if fin.get(x).unwrap_or(0) == 1 { w_in } else { w_out }).product())
            })?;
            Ok(make_report(&params, window, Identity::QuasiDuality, t, Some(tau), b, d, method, lhs, rhs, None))
        }
    }
}

/// BABP from the infected set `start` for time `t`; returns the infected set.
fn run_babp(model: &ModelSpec, window: &Window, start: &[bool], t: f64, seed: u64) -> Result<Vec<bool>> {
    let bits: Vec<u8> = start.iter().map(|&inf| u8::from(!inf)).collect();
    let eta0 = Configuration::from_bits(*window, &bits)?;
    if t == 0.0 {
        return Ok(start.to_vec());
    }
    let tl = build_timeline(model, *window, t, seed)?;
    let fin = evolve_final(model, &eta0, &BoundaryCondition::HEALTHY, &tl)?;
    Ok(fin.bits().iter().map(|&b| b == 0).collect())
}

fn mc_mean<F>(replicas: usize, seed: u64, f: F) -> Result<Estimate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if replicas < 2 {
        return Err(Error::InvalidParameter("Monte Carlo needs at least 2 replicas".into()));
    }
    let xs: Vec<f64> = run_replicas(replicas, seed, |_, s| f(s)).into_iter().collect::<Result<_>>()?;
    let (value, se) = mean_stderr(&xs);
    Ok(Estimate { value, stderr: Some(se) })
}

// --- DFP relaxation probe ---

/// Initial condition of the relaxation probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "start", rename_all = "snake_case")]
pub enum ProbeStart {
    /// Supremum over all configurations (both parity sectors).
    Worst,
    /// The stationary product measure.
    Stationary,
    Config { config: Configuration },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    /// Fitted decay rate `m` in `trace ~ C e^{-m t}`.
    pub rate: f64,
    pub prefactor: f64,
    pub r2: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErgodicityTrace {
    pub lambda: f64,
    pub n: usize,
    /// Site whose state is the observable.
    pub site: Site,
    #[serde(flatten)]
    pub start: ProbeStart,
    pub times: Vec<f64>,
    /// `|E(eta_site(t)) - pi_hat^parity(eta_site)|`.
    pub trace: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
    pub fit: Option<ExpFit>,
}

/// Traces below this are treated as numerically zero by the fit.
pub const TRACE_FLOOR: f64 = 1e-12;

/// Least-squares fit of `ln trace` against `t` on `[t_lo, t_hi]`.
pub fn fit_exponential(times: &[f64], trace: &[f64], t_lo: f64, t_hi: f64) -> Option<ExpFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(trace)
        .filter(|(t, v)| **t >= t_lo && **t <= t_hi && **v > TRACE_FLOOR)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    if x.len() < 3 {
        return None;
    }
    let LinearFit { slope, intercept, r2, .. } = linear_fit(&x, &y);
    Some(ExpFit { rate: -slope, prefactor: intercept.exp(), r2, t_lo, t_hi, points: x.len() })
}

/// `pi_hat(zeta_x = 1 | parity of infections)` on `n` sites.
pub fn conditioned_healthy_density(lambda: f64, n: usize, even: bool) -> Result<f64> {
    let r = dfp_edge_rates(lambda)?;
    let s = r.p_hat - r.q_hat();
    let sign = if even { 1.0 } else { -1.0 };
    let num = 1.0 + sign * s.powi(n as i32 - 1);
    let den = 1.0 + sign * s.powi(n as i32);
    if den <= 0.0 {
        return Err(Error::InvalidParameter(format!("parity sector empty for n={n}")));
    }
    Ok(r.p_hat * num / den)
}

/// Relaxation of `E(eta_x(t))` for the DFP on `[0, n-1]` towards its
/// parity-conditioned mean, `x` the middle site. Exact for `n <= 14`;
/// `mc = Some((replicas, seed))` samples trajectories from a fixed
/// configuration instead. The exponential fit uses `fit_window`.
pub fn dfp_ergodicity_probe(
    lambda: f64,
    n: usize,
    start: &ProbeStart,
    times: &[f64],
    fit_window: (f64, f64),
    mc: Option<(usize, u64)>,
) -> Result<ErgodicityTrace> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::InvalidParameter("time grid must be nonnegative and sorted".into()));
    }
    let window = Window::sites(n)?;
    let site = window.site(n / 2);
    let xi = n / 2;
    let model = ModelSpec::dfp(lambda)?;
    let dens = |even: bool| conditioned_healthy_density(lambda, n, even);
    let (trace, stderr) = match mc {
        None => {
            if n > PROBE_SITE_CAP {
                return Err(Error::CapExceeded { states: 1u128 << n, cap: 1 << PROBE_SITE_CAP });
            }
            let g = chain(&model, window, BoundaryCondition::HEALTHY, Restriction::None)?;
            let sp = g.space().clone();
            let f: Vec<f64> = (0..sp.len()).map(|i| ((sp.code(i) >> xi) & 1) as f64).collect();
            let target: Vec<f64> = (0..sp.len())
                .map(|i| dens((n - sp.code(i).count_ones() as usize) % 2 == 0))
                .collect::<Result<_>>()?;
            let ph = dfp_edge_rates(lambda)?.p_hat;
            let pi: Vec<f64> = (0..sp.len())
                .map(|i| {
                    let ones = sp.code(i).count_ones() as i32;
                    ph.powi(ones) * (1.0 - ph).powi(n as i32 - ones)
                })
                .collect();
            let start_idx = match start {
                ProbeStart::Config { config } => Some(sp.index_of_config(config)?),
                _ => None,
            };
            let mut out = Vec::with_capacity(times.len());
            let mut cur = f;
            let mut t0 = 0.0;
            for &t in times {
                if t > t0 {
                    cur = expm_apply(&g, &cur, t - t0);
                    t0 = t;
                }
                let v = match (start, start_idx) {
                    (_, Some(i)) => (cur[i] - target[i]).abs(),
                    (ProbeStart::Worst, _) => cur.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
                    _ => {
                        let e: f64 = pi.iter().zip(&cur).map(|(w, v)| w * v).sum();
                        let m: f64 = pi.iter().zip(&target).map(|(w, v)| w * v).sum();
                        (e - m).abs()
                    }
                };
                out.push(v);
            }
            (out, None)
        }
        Some((replicas, seed)) => {
            let ProbeStart::Config { config } = start else {
                return Err(Error::InvalidParameter("Monte Carlo probe needs an explicit initial configuration".into()));
            };
            if config.window() != window {
                return Err(Error::WindowMismatch(format!("initial configuration must live on {window}")));
            }
            let target = dens(config.parity() == crate::lattice::Parity::Even)?;
            let horizon = times.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
            let samples: Vec<Vec<f64>> = run_replicas(replicas, seed, |_, s| -> Result<Vec<f64>> {
                let tl = build_timeline(&model, window, horizon, s)?;
                let traj = evolve(&model, config, &BoundaryCondition::HEALTHY, &tl, Record::Events)?;
                let mut state = config.get(site)?;
                let mut ev = traj.events.iter().filter(|e| e.legal).peekable();
                let mut vals = Vec::with_capacity(times.len());
                for &t in times {
                    while let Some(e) = ev.next_if(|e| e.time <= t) {
                        if e.site == site {
                            state = e.new_state;
                        } else if let Some((x, st)) = e.partner {
                            if x == site {
                                state = st;
                            }
                        }
                    }
                    vals.push(state as f64);
                }
                Ok(vals)
            })
            .into_iter()
            .collect::<Result<_>>()?;
            let mut tr = Vec::with_capacity(times.len());
            let mut se = Vec::with_capacity(times.len());
            for k in 0..times.len() {
                let col: Vec<f64> = samples.iter().map(|v| v[k]).collect();
                let (m, s) = mean_stderr(&col);
                tr.push((m - target).abs());
                se.push(s);
            }
            (tr, Some(se))
        }
    };
    let fit = fit_exponential(times, &trace, fit_window.0, fit_window.1);
    Ok(ErgodicityTrace { lambda, n, site, start: start.clone(), times: times.to_vec(), trace, stderr, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sets_upto2(w: &Window) -> Vec<Vec<Site>> {
        let sites: Vec<Site> = w.iter().collect();
        let mut v = vec![vec![]];
        for (i, &a) in sites.iter().enumerate() {
            v.push(vec![a]);
            for &b in &sites[i + 1..] {
                v.push(vec![a, b]);
            }
        }
        v
    }

    #[test]
    fn params() {
        let p = DualityParams::new(3.0).unwrap();
        assert_eq!(p.y, 2.0);
        assert!((p.w_in - 1.0 / 3.0).abs() < 1e-15 && p.w_out == -1.0);
        for alpha in [0.0, 0.1, 0.3, 0.5] {
            let beta = p.beta_from_alpha(alpha);
            let lhs = p.bernoulli_self_weight(alpha);
            assert!((beta * p.w_in + (1.0 - beta) * p.w_out - lhs).abs() < 1e-14);
        }
        assert!(DualityParams::new(0.0).is_err());
    }

    #[test]
    fn time_zero() {
        let lam = 2.0;
        let r = self_duality_sides(&[0, 1], &SetDescriptor::explicit(&[1, 2]), 0.0, lam, None, Method::Exact).unwrap();
        assert!((r.lhs.value + 0.5).abs() < 1e-15 && (r.rhs.value + 0.5).abs() < 1e-15);
        let q = quasi_duality_sides(&[0], &SetDescriptor::explicit(&[0]), 0.0, lam, None, Method::Exact).unwrap();
        let y = (1.0 + lam).sqrt();
        assert!((q.lhs.value - 1.0 / (y + 1.0)).abs() < 1e-15);
        assert!((q.rhs.value - 1.0 / (y + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn self_duality_example() {
        let w = Window::line(-6, 6).unwrap();
        let r = self_duality_sides(&[0], &SetDescriptor::explicit(&[0, 1]), 0.5, 1.0, Some(w), Method::Exact).unwrap();
        assert!(r.abs_diff <= 1e-8, "{r:?}");
        assert!(r.lhs.value != 1.0);
    }

    #[test]
    fn quasi_duality_full_lattice_example() {
        let w = Window::line(-6, 6).unwrap();
        let r = quasi_duality_sides(&[0], &SetDescriptor::Full, 0.4, 3.0, Some(w), Method::Exact).unwrap();
        assert!(r.abs_diff <= 1e-8, "{r:?}");
        assert!((r.rhs_alt.unwrap() - r.lhs.value).abs() <= 1e-8);
    }

    #[test]
    fn grids_hold_exactly() {
        let w = Window::line(-3, 3).unwrap();
        let sets = sets_upto2(&w);
        for lam in [0.5, 3.0] {
            let ex = ExactDuality::new(lam, w).unwrap();
            for r in ex.self_duality_grid(&sets, 0.7).unwrap() {
                assert!(r.abs_diff <= 1e-8, "{r:?}");
            }
            let mut ds: Vec<SetDescriptor> = sets.iter().map(|s| SetDescriptor::explicit(s)).collect();
            ds.push(SetDescriptor::Full);
            for r in ex.quasi_duality_grid(&sets, &ds, 0.7).unwrap() {
                assert!(r.abs_diff <= 1e-8, "{r:?}");
            }
        }
    }

    #[test]
    fn grid_agrees_with_single_evaluation() {
        let w = Window::line(-2, 2).unwrap();
        let ex = ExactDuality::new(1.5, w).unwrap();
        let sets = vec![vec![0], vec![-1, 2]];
        let grid = ex.self_duality_grid(&sets, 0.3).unwrap();
        let one = ex.self_duality(&[0], &SetDescriptor::explicit(&[-1, 2]), 0.3).unwrap();
        assert!((grid[1].lhs.value - one.lhs.value).abs() < 1e-14);
        assert!((grid[1].rhs.value - one.rhs.value).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_descriptors() {
        let lam = 1.0;
        let p = DualityParams::new(lam).unwrap();
        let w = Window::line(-3, 3).unwrap();
        let ex = ExactDuality::new(lam, w).unwrap();
        // weight-zero case: alpha - (1 - alpha)/lambda = 0 at alpha = 1/2
        let r = ex.self_duality(&[0], &SetDescriptor::Bernoulli { prob: 0.5 }, 0.6).unwrap();
        assert!(r.abs_diff <= 1e-10);
        // rhs is P(B(t) empty)
        let babp = chain(&ModelSpec::babp_lambda(lam).unwrap(), w, BoundaryCondition::HEALTHY, Restriction::None).unwrap();
        let empty: Vec<f64> = (0..babp.dim()).map(|i| f64::from(u8::from(babp.space().code(i) == 0x7f))).collect();
        let p_empty = expm_apply(&babp, &empty, 0.6)[ex.index_infected(&[0]).unwrap()];
        assert!((r.rhs.value - p_empty).abs() < 1e-12);
        // beta mapping: self-duality rhs with B' ~ Bernoulli(1 - alpha) equals quasi lhs with D ~ Bernoulli(beta)
        let alpha = 0.2;
        let s = ex.self_duality(&[0, 1], &SetDescriptor::Bernoulli { prob: 1.0 - alpha }, 0.5).unwrap();
        let qd = ex.quasi_duality(&[0, 1], &SetDescriptor::Bernoulli { prob: p.beta_from_alpha(alpha) }, 0.5).unwrap();
        assert!((s.rhs.value - qd.lhs.value).abs() < 1e-12);
        assert!(qd.abs_diff < 1e-8);
        assert!(!s.weight_flag);
        let big = ex.self_duality(&[0], &SetDescriptor::Bernoulli { prob: 1.0 }, 0.5).unwrap();
        assert!(big.weight_flag);
    }

    #[test]
    fn window_stability() {
        let small = Window::line(-5, 5).unwrap();
        let big = Window::line(-7, 7).unwrap();
        let a = self_duality_sides(&[0], &SetDescriptor::explicit(&[0, 1]), 0.2, 1.0, Some(small), Method::Exact).unwrap();
        let b = self_duality_sides(&[0], &SetDescriptor::explicit(&[0, 1]), 0.2, 1.0, Some(big), Method::Exact).unwrap();
        assert!((a.lhs.value - b.lhs.value).abs() <= 1e-8, "{} vs {}", a.lhs.value, b.lhs.value);
    }

    #[test]
    fn monte_carlo_brackets_exact() {
        let w = Window::line(-3, 3).unwrap();
        let mc = Method::MonteCarlo { replicas: 20_000, seed: 11 };
        let e = self_duality_sides(&[0], &SetDescriptor::explicit(&[0, 1]), 0.5, 2.0, Some(w), Method::Exact).unwrap();
        let m = self_duality_sides(&[0], &SetDescriptor::explicit(&[0, 1]), 0.5, 2.0, Some(w), mc).unwrap();
        assert!((m.lhs.value - e.lhs.value).abs() <= 3.0 * m.lhs.stderr.unwrap());
        assert!((m.rhs.value - e.rhs.value).abs() <= 3.0 * m.rhs.stderr.unwrap());
        let e = quasi_duality_sides(&[0], &SetDescriptor::Full, 0.5, 3.0, Some(w), Method::Exact).unwrap();
        let m = quasi_duality_sides(&[0], &SetDescriptor::Full, 0.5, 3.0, Some(w), mc).unwrap();
        assert!((m.lhs.value - e.lhs.value).abs() <= 3.0 * m.lhs.stderr.unwrap());
        assert!((m.rhs.value - e.rhs.value).abs() <= 3.0 * m.rhs.stderr.unwrap());
    }

    #[test]
    fn exact_cap() {
        let w = Window::line(0, 16).unwrap();
        assert!(matches!(ExactDuality::new(1.0, w), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn descriptor_parsing() {
        assert_eq!("full".parse::<SetDescriptor>().unwrap(), SetDescriptor::Full);
        assert_eq!("2,-1".parse::<SetDescriptor>().unwrap(), SetDescriptor::explicit(&[-1, 2]));
        assert_eq!("bernoulli(0.25)".parse::<SetDescriptor>().unwrap(), SetDescriptor::Bernoulli { prob: 0.25 });
        assert!("x".parse::<SetDescriptor>().is_err());
    }

    #[test]
    fn conditioned_density_matches_enumeration() {
        let lam = 3.0;
        let n = 5;
        let ph = dfp_edge_rates(lam).unwrap().p_hat;
        for even in [true, false] {
            let (mut num, mut den) = (0.0, 0.0);
            for c in 0u64..(1 << n) {
                let inf = n - c.count_ones() as usize;
                if (inf % 2 == 0) != even {
                    continue;
                }
                let w = ph.powi(c.count_ones() as i32) * (1.0 - ph).powi(inf as i32);
                den += w;
                if (c >> 2) & 1 == 1 {
                    num += w;
                }
            }
            assert!((conditioned_healthy_density(lam, n, even).unwrap() - num / den).abs() < 1e-14);
        }
    }

    #[test]
    fn probe_stationary_start_is_flat() {
        let times: Vec<f64> = (0..10).map(|k| k as f64 * 0.5).collect();
        let tr = dfp_ergodicity_probe(3.0, 6, &ProbeStart::Stationary, &times, (1.0, 4.0), None).unwrap();
        assert!(tr.trace.iter().all(|&v| v < 1e-12), "{:?}", tr.trace);
        assert!(tr.fit.is_none());
    }

    #[test]
    fn probe_worst_decays() {
        let times: Vec<f64> = (0..=40).map(|k| k as f64 * 0.2).collect();
        let tr = dfp_ergodicity_probe(3.0, 8, &ProbeStart::Worst, &times, (2.0, 6.0), None).unwrap();
        let fit = tr.fit.unwrap();
        assert!(fit.rate > 0.0 && fit.r2 >= 0.99, "{fit:?}");
    }

    #[test]
    fn probe_mc_matches_exact() {
        let cfg = Configuration::parse_at("110000", 0).unwrap();
        let start = ProbeStart::Config { config: cfg };
        let times = [0.0, 0.5, 1.0];
        let ex = dfp_ergodicity_probe(1.0, 6, &start, &times, (0.0, 1.0), None).unwrap();
        let mc = dfp_ergodicity_probe(1.0, 6, &start, &times, (0.0, 1.0), Some((20_000, 5))).unwrap();
        let se = mc.stderr.unwrap();
        for k in 0..3 {
            assert!((ex.trace[k] - mc.trace[k]).abs() <= 3.0 * se[k] + 1e-12, "{k}: {} vs {}", ex.trace[k], mc.trace[k]);
        }
    }
}
