//! The acceptance suite: sixteen numerical criteria, each with an observed
//! value, a tolerance and a verdict.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{EastIndex, east_stationary_marginals, ergodic_component_mismatches};
use crate::duality::{ExactDuality, ProbeStart, SetDescriptor, dfp_ergodicity_probe};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Parity, Site, SiteState, Window};
use crate::models::{ModelSpec, TypeMap};
use crate::rng;
use crate::sim::{
    InitialCondition, PersistenceQuery, PersistenceVariant, Region, build_timeline, evolve_final, front_trace,
    good_point_grid, persistence_profile, run_replicas,
};
use crate::spectral::{
    MeasureVector, Restriction, build_generator, build_state_space, chain, check_detailed_balance,
    entropy_production, expm_transpose_apply, flux_imbalance, hitting_time_tails, log_sobolev_of_chain,
    restricted_block_log_sobolev, spectral_gap, stationary_vector, worst_case_profile,
};
use crate::stats::{linear_fit, percentile};

pub const CRITERIA: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// Reduced replica counts for the Monte Carlo criteria.
    Quick,
    Full,
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "quick" => Ok(Suite::Quick),
            "full" => Ok(Suite::Full),
            o => Err(Error::InvalidParameter(format!("unknown suite '{o}' (quick|full)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub suite: Suite,
    pub seed: u64,
    /// Multiplies one generator rate by `1 + tamper` inside the reversibility
    /// criterion; a mutation check that must make it fail.
    pub tamper: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { suite: Suite::Full, seed: 2024, tamper: None }
    }
}

impl VerifyOptions {
    fn replicas(&self, full: usize, quick: usize) -> usize {
        match self.suite {
            Suite::Full => full,
            Suite::Quick => quick,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: usize,
    pub name: String,
    pub observed: f64,
    pub tolerance: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl std::fmt::Display for CriterionOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<28} observed={:<12.6e} tolerance: {:<28} ({:.1} s) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.observed,
            self.tolerance,
            self.seconds,
            self.detail
        )
    }
}

struct Verdict {
    observed: f64,
    tolerance: String,
    pass: bool,
    detail: String,
}

pub fn criterion_name(id: usize) -> &'static str {
    match id {
        1 => "reversibility",
        2 => "east-stationary-family",
        3 => "ergodic-components",
        4 => "simulator-vs-generator",
        5 => "self-duality",
        6 => "quasi-duality",
        7 => "persistence-bound",
        8 => "good-point-density",
        9 => "dfp-parity",
        10 => "dfp-ergodicity",
        11 => "logsob-boundedness",
        12 => "restricted-chain-scaling",
        13 => "mixing-linearity",
        14 => "front-growth",
        15 => "entropy-production",
        16 => "hitting-tail-bound",
        _ => "unknown",
    }
}

/// Runs one criterion. Errors inside the criterion become a failing outcome.
pub fn run_criterion(id: usize, opts: &VerifyOptions) -> CriterionOutcome {
    let start = Instant::now();
    let res = match id {
        1 => c01_reversibility(opts),
        2 => c02_east_family(),
        3 => c03_components(),
        4 => c04_simulator(opts),
        5 => c05_self_duality(),
        6 => c06_quasi_duality(),
        7 => c07_persistence(opts),
        8 => c08_good_points(opts),
        9 => c09_parity(opts),
        10 => c10_dfp_ergodicity(),
        11 => c11_logsob(),
        12 => c12_restricted(),
        13 => c13_mixing(),
        14 => c14_fronts(opts),
        15 => c15_entropy(opts),
        16 => c16_hitting(),
        _ => Err(Error::InvalidParameter(format!("no criterion {id}"))),
    };
    let v = res.unwrap_or_else(|e| Verdict {
        observed: f64::NAN,
        tolerance: "-".into(),
        pass: false,
        detail: format!("error: {e}"),
    });
    CriterionOutcome {
        id,
        name: criterion_name(id).to_string(),
        observed: v.observed,
        tolerance: v.tolerance,
        pass: v.pass,
        detail: v.detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_suite(opts: &VerifyOptions) -> Vec<CriterionOutcome> {
    (1..=CRITERIA).map(|id| run_criterion(id, opts)).collect()
}

/// One JSON object per line, each tagged with the suite.
pub fn ledger_jsonl(opts: &VerifyOptions, outcomes: &[CriterionOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let mut v = serde_json::to_value(o).expect("outcome serializes");
        v["suite"] = serde_json::to_value(opts.suite).expect("suite serializes");
        v["seed"] = opts.seed.into();
        s.push_str(&v.to_string());
        s.push('\n');
    }
    s
}

fn at_most(observed: f64, tol: f64, detail: String) -> Result<Verdict> {
    Ok(Verdict { observed, tolerance: format!("<= {tol:e}"), pass: observed <= tol, detail })
}

fn reversibility_models(q: f64) -> Result<Vec<ModelSpec>> {
    Ok(vec![
        ModelSpec::fa1f(q)?,
        ModelSpec::east(q)?,
        ModelSpec::east_polluted(q, TypeMap::periodic("EEF", 0)?)?,
        ModelSpec::delta_west(q, 0.1)?,
        ModelSpec::delta_west(q, 1.0)?,
        ModelSpec::babp(q)?,
        ModelSpec::dfp(q / (1.0 - q))?,
    ])
}

fn c01_reversibility(opts: &VerifyOptions) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for q in [0.2, 0.5, 0.8] {
        for m in reversibility_models(q)? {
            let lo = if m.is_edge_model() { 2 } else { 1 };
            for n in lo..=8 {
                for bc in [BoundaryCondition::HEALTHY, BoundaryCondition::INFECTED] {
                    let space = std::sync::Arc::new(build_state_space(&m, Window::sites(n)?, bc, Restriction::None)?);
                    let pi = MeasureVector::equilibrium(space.clone())?;
                    let mut g = build_generator(&m, &space, &bc)?;
                    if let (Some(eps), Some(&(a, b, _))) = (opts.tamper, g.triplets().first()) {
                        g = g.with_scaled_rate(a, b, 1.0 + eps)?;
                    }
                    worst = worst.max(check_detailed_balance(&pi, &m)?).max(flux_imbalance(&g, &pi));
                    count += 1;
                }
            }
        }
    }
    at_most(worst, 1e-12, format!("{count} chains"))
}

fn c02_east_family() -> Result<Verdict> {
    let w = Window::line(-5, 5)?;
    let mut worst: f64 = 0.0;
    for q in [0.2, 0.5, 0.8] {
        let m = ModelSpec::east(q)?;
        let space = std::sync::Arc::new(build_state_space(&m, w, BoundaryCondition::HEALTHY, Restriction::None)?);
        for i in [EastIndex::NegInf, EastIndex::Site(-2), EastIndex::Site(0), EastIndex::Site(3), EastIndex::PosInf] {
            let mu = MeasureVector::product(space.clone(), &east_stationary_marginals(i, q, w)?)?;
            worst = worst.max(check_detailed_balance(&mu, &m)?);
        }
    }
    at_most(worst, 1e-12, "i in {-inf,-2,0,3,+inf}, q in {0.2,0.5,0.8}".into())
}

fn c03_components() -> Result<Verdict> {
    let w = Window::sites(8)?;
    let mut bad = 0;
    for m in [ModelSpec::fa1f(0.5)?, ModelSpec::east(0.5)?] {
        for bc in [BoundaryCondition::HEALTHY, BoundaryCondition::INFECTED] {
            bad += ergodic_component_mismatches(&m, w, &bc)?;
        }
    }
    Ok(Verdict {
        observed: bad as f64,
        tolerance: "== 0 mismatched pairs".into(),
        pass: bad == 0,
        detail: "FA1f, East; healthy and infected boundary".into(),
    })
}

fn c04_simulator(opts: &VerifyOptions) -> Result<Verdict> {
    let reps = opts.replicas(100_000, 20_000);
    let q = 0.5;
    let t = 2.0;
    let w = Window::sites(6)?;
    let bc = BoundaryCondition::HEALTHY;
    let eta0 = Configuration::parse_at("101101", 0)?;
    let models = [
        ModelSpec::fa1f(q)?,
        ModelSpec::east(q)?,
        ModelSpec::east_polluted(q, TypeMap::periodic("EEF", 0)?)?,
        ModelSpec::delta_west(q, 0.5)?,
        ModelSpec::babp(q)?,
        ModelSpec::dfp(q / (1.0 - q))?,
    ];
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (k, m) in models.iter().enumerate() {
        let g = chain(m, w, bc, Restriction::None)?;
        let sp = g.space().clone();
        let mut v = vec![0.0; sp.len()];
        v[sp.index_of_config(&eta0)?] = 1.0;
        let exact = expm_transpose_apply(&g, &v, t);
        let finals = run_replicas(reps, rng::derive_seed(opts.seed, 400 + k as u64), |_, s| -> Result<u64> {
            let tl = build_timeline(m, w, t, s)?;
            evolve_final(m, &eta0, &bc, &tl)?.code()
        });
        let mut counts = vec![0u64; sp.len()];
        for c in finals {
            let i = sp.index_of(c?).ok_or_else(|| Error::Numerical("simulated state outside the space".into()))?;
            counts[i] += 1;
        }
        let r = reps as f64;
        let tv = 0.5 * counts.iter().zip(&exact).map(|(&c, &p)| (c as f64 / r - p).abs()).sum::<f64>();
        let se = 0.5 * exact.iter().map(|&p| (p.max(0.0) * (1.0 - p).max(0.0) / r).sqrt()).sum::<f64>();
        let ratio = tv / se;
        worst = worst.max(ratio);
        detail.push(format!("{}:{ratio:.2}", m.kind));
    }
    Ok(Verdict {
        observed: worst,
        tolerance: "TV <= 3 x aggregate stderr".into(),
        pass: worst <= 3.0,
        detail: format!("{reps} replicas; TV/stderr {}", detail.join(" ")),
    })
}

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

fn c05_self_duality() -> Result<Verdict> {
    let w = Window::line(-5, 5)?;
    let sets = sets_upto2(&w);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for lam in [0.5, 1.0, 3.0] {
        let ex = ExactDuality::new(lam, w)?;
        for t in [0.2, 0.7] {
            for r in ex.self_duality_grid(&sets, t)? {
                worst = worst.max(r.abs_diff);
                pairs += 1;
            }
        }
    }
    at_most(worst, 1e-8, format!("{pairs} (B, B') pairs"))
}

fn c06_quasi_duality() -> Result<Verdict> {
    let w = Window::line(-5, 5)?;
    let sets = sets_upto2(&w);
    let mut ds: Vec<SetDescriptor> = sets.iter().map(|s| SetDescriptor::explicit(s)).collect();
    ds.push(SetDescriptor::Full);
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for lam in [0.5, 1.0, 3.0] {
        let ex = ExactDuality::new(lam, w)?;
        for t in [0.2, 0.7] {
            for r in ex.quasi_duality_grid(&sets, &ds, t)? {
                worst = worst.max(r.abs_diff);
                pairs += 1;
            }
        }
    }
    at_most(worst, 1e-8, format!("{pairs} (B, D) pairs"))
}

fn c07_persistence(opts: &VerifyOptions) -> Result<Verdict> {
    let reps = opts.replicas(10_000, 2_000);
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    for (k, q) in [0.3, 0.5].into_iter().enumerate() {
        let p = 1.0 - q;
        let query = PersistenceQuery {
            model: ModelSpec::east(q)?,
            initial: InitialCondition::Background { healthy_density: p, vacancies: vec![0] },
            regions: (1..=5).map(|n| Region::EastSites { n }).collect(),
            variant: PersistenceVariant::AtTime,
            horizon: 50.0,
            replicas: reps,
            seed: rng::derive_seed(opts.seed, 700 + k as u64),
            m: 2.0,
        };
        for (n, e) in (1..=5).zip(persistence_profile(&query)?) {
            let bound = p.powi(n);
            pass &= e.estimate <= bound + 3.0 * e.stderr;
            worst = worst.max(e.estimate - bound - 3.0 * e.stderr);
        }
    }
    Ok(Verdict {
        observed: worst,
        tolerance: "estimate - p^n - 3 stderr <= 0".into(),
        pass,
        detail: format!("{reps} replicas, q in {{0.3, 0.5}}, n = 1..5, T = 50"),
    })
}

fn c08_good_points(opts: &VerifyOptions) -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (k, (delta, ell)) in [(0.1, 10.0), (0.05, 20.0)].into_iter().enumerate() {
        let m = ModelSpec::delta_west(0.5, delta)?;
        let tl = build_timeline(&m, Window::sites(2000)?, 50.0 * ell, rng::derive_seed(opts.seed, 800 + k as u64))?;
        let grid = good_point_grid(&tl, ell)?;
        let cells = (grid.cols() * grid.rows) as f64;
        let expect = (-delta * ell).exp();
        let sigma = (expect * (1.0 - expect) / cells).sqrt();
        let z = (grid.good_fraction() - expect).abs() / sigma;
        worst = worst.max(z);
        detail.push(format!("delta={delta} ell={ell}: {:.5} vs {expect:.5} over {cells} cells", grid.good_fraction()));
    }
    Ok(Verdict { observed: worst, tolerance: "|z| <= 3".into(), pass: worst <= 3.0, detail: detail.join("; ") })
}

fn c09_parity(opts: &VerifyOptions) -> Result<Verdict> {
    let reps = opts.replicas(100_000, 10_000);
    let m = ModelSpec::dfp(1.0)?;
    let w = Window::sites(20)?;
    let ph = m.equilibrium_healthy_density();
    let bad: usize = run_replicas(reps, rng::derive_seed(opts.seed, 900), |_, s| -> Result<usize> {
        let mut r = rng::stream(s, 0, rng::tag::INITIAL);
        let bits: Vec<u8> = (0..20).map(|_| u8::from(rng::bernoulli(&mut r, ph))).collect();
        let eta0 = Configuration::from_bits(w, &bits)?;
        let tl = build_timeline(&m, w, 5.0, s)?;
        let fin = evolve_final(&m, &eta0, &BoundaryCondition::HEALTHY, &tl)?;
        Ok(usize::from(fin.parity() != eta0.parity()))
    })
    .into_iter()
    .sum::<Result<usize>>()?;
    Ok(Verdict {
        observed: bad as f64,
        tolerance: "== 0 violations".into(),
        pass: bad == 0,
        detail: format!("{reps} trajectories, n = 20, T = 5"),
    })
}

/// Time grid and fit window of the DFP relaxation criterion.
pub const PROBE_TIMES: (f64, usize) = (0.25, 60);
pub const PROBE_FIT_WINDOW: (f64, f64) = (4.0, 12.0);

fn c10_dfp_ergodicity() -> Result<Verdict> {
    let times: Vec<f64> = (0..=PROBE_TIMES.1).map(|k| k as f64 * PROBE_TIMES.0).collect();
    let mut rates = Vec::new();
    let mut pass = true;
    let mut detail = Vec::new();
    for n in [8, 12] {
        let tr = dfp_ergodicity_probe(3.0, n, &ProbeStart::Worst, &times, PROBE_FIT_WINDOW, None)?;
        let fit = tr.fit.ok_or_else(|| Error::Numerical(format!("no fit for n={n}")))?;
        pass &= fit.rate > 0.0 && fit.r2 >= 0.99;
        rates.push(fit.rate);
        detail.push(format!("n={n}: m={:.4} R2={:.5}", fit.rate, fit.r2));
    }
    let spread = (rates[0] - rates[1]).abs() / rates[0].min(rates[1]);
    pass &= spread <= 0.2;
    Ok(Verdict {
        observed: spread,
        tolerance: "m>0, R2>=0.99, |dm|/min m <= 0.2".into(),
        pass,
        detail: detail.join("; "),
    })
}

fn c11_logsob() -> Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for lam in [1.0, 3.0] {
        let m = ModelSpec::dfp(lam)?;
        let mut small: f64 = 0.0;
        let mut large: f64 = 0.0;
        for n in 2..=10 {
            for parity in [Parity::Even, Parity::Odd] {
                let g = chain(&m, Window::sites(n)?, BoundaryCondition::HEALTHY, Restriction::ParitySector { parity })?;
                let c = log_sobolev_of_chain(&g)?.c_sob;
                if n <= 6 {
                    small = small.max(c);
                } else {
                    large = large.max(c);
                }
            }
        }
        let ratio = large / small;
        worst = worst.max(ratio);
        detail.push(format!("lambda={lam}: max n<=6 {small:.4}, max n in 7..10 {large:.4}"));
    }
    Ok(Verdict { observed: worst, tolerance: "ratio <= 1.2".into(), pass: worst <= 1.2, detail: detail.join("; ") })
}

fn c12_restricted() -> Result<Verdict> {
    let mut per_ell = Vec::new();
    for ell in [2, 3, 4] {
        let r = restricted_block_log_sobolev(0.5, ell, 2, 0.1)?;
        per_ell.push(r.c_sob / ell as f64);
    }
    let hi = per_ell.iter().copied().fold(f64::MIN, f64::max);
    let lo = per_ell.iter().copied().fold(f64::MAX, f64::min);
    Ok(Verdict {
        observed: hi / lo,
        tolerance: "max/min of c/ell < 2".into(),
        pass: hi / lo < 2.0,
        detail: format!("c/ell = {per_ell:.4?}"),
    })
}

/// Initial states with a single infection, the worst starts of the
/// at-least-one-infection FA-1f chain.
pub fn single_infection_starts(space: &crate::spectral::StateSpace) -> Result<Vec<usize>> {
    let w = space.window();
    w.iter()
        .map(|x| space.index_of_config(&Configuration::all_healthy(w).with_state(x, SiteState::Infected)?))
        .collect()
}

fn c13_mixing() -> Result<Verdict> {
    let m = ModelSpec::fa1f(0.8)?;
    let times: Vec<f64> = (0..=400).map(|k| k as f64 * 0.25).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for n in 4..=12 {
        let g = chain(&m, Window::sites(n)?, BoundaryCondition::HEALTHY, Restriction::AtLeastOneInfection)?;
        let mu = stationary_vector(&g)?;
        let starts = single_infection_starts(g.space())?;
        let prof = worst_case_profile(&g, &mu, &starts, &times, &[0.25])?;
        let t = prof.t_mix[0].1.ok_or_else(|| Error::Numerical(format!("t_mix(1/4) beyond the grid at n={n}")))?;
        xs.push(n as f64);
        ys.push(t);
    }
    let fit = linear_fit(&xs, &ys);
    Ok(Verdict {
        observed: fit.relative_residual,
        tolerance: "slope > 0, rel. residual <= 0.1".into(),
        pass: fit.slope > 0.0 && fit.relative_residual <= 0.1,
        detail: format!("slope {:.4}, intercept {:.4}", fit.slope, fit.intercept),
    })
}

fn c14_fronts(opts: &VerifyOptions) -> Result<Verdict> {
    let runs = opts.replicas(200, 50);
    let horizon = 200.0;
    let eta0 = Configuration::parse_at("0", 0)?;
    let mut pass = true;
    let mut lowest = f64::INFINITY;
    let mut detail = Vec::new();
    for (k, m) in [ModelSpec::fa1f(0.5)?, ModelSpec::babp_lambda(1.0)?].iter().enumerate() {
        let finals = run_replicas(runs, rng::derive_seed(opts.seed, 1400 + k as u64), |_, s| {
            front_trace(m, &eta0, horizon, horizon, s, 2.0).map(|tr| *tr.last())
        });
        let (mut y, mut d) = (Vec::new(), Vec::new());
        for f in finals {
            let f = f?;
            y.push(f.fronts.y.unwrap_or(0) as f64 / horizon);
            d.push(f.fronts.d.unwrap_or(0) as f64 / horizon);
        }
        for (name, v) in [("Y", &y), ("D", &d)] {
            let (p5, p95) = (percentile(v, 5.0), percentile(v, 95.0));
            pass &= p5 > 0.02 && p95 < 2.0;
            lowest = lowest.min(p5);
            detail.push(format!("{} {name}/T p5={p5:.4} p95={p95:.4}", m.kind));
        }
    }
    Ok(Verdict {
        observed: lowest,
        tolerance: "p5 > 0.02 and p95 < 2".into(),
        pass,
        detail: format!("{runs} runs; {}", detail.join("; ")),
    })
}

fn c15_entropy(opts: &VerifyOptions) -> Result<Verdict> {
    let m = ModelSpec::fa1f(0.4)?;
    let space = std::sync::Arc::new(build_state_space(&m, Window::sites(5)?, BoundaryCondition::HEALTHY, Restriction::None)?);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..100 {
        let mut r = rng::stream(rng::derive_seed(opts.seed, 1500), k, rng::tag::SET);
        let w: Vec<f64> = (0..space.len()).map(|_| rng::exponential(&mut r, 1.0)).collect();
        let mu = MeasureVector::new(space.clone(), w)?;
        let small = entropy_production(&mu, &m, Window::line(1, 3)?, 2.0)?;
        let big = entropy_production(&mu, &m, Window::line(0, 4)?, 2.0)?;
        for rep in [&small, &big] {
            for x in rep.sites() {
                if let Some(a) = rep.alpha_at(x) {
                    let b = rep.beta_at(x).unwrap_or(0.0);
                    worst = worst.max(b * b - 2.0 * a);
                }
            }
        }
        for x in small.sites() {
            if let (Some(a), Some(b)) = (small.alpha_at(x), big.alpha_at(x)) {
                worst = worst.max(a - b);
            }
        }
    }
    at_most(worst, 1e-10, "max of beta^2 - 2 alpha and alpha_small - alpha_large".into())
}

fn c16_hitting() -> Result<Verdict> {
    let q = 0.5;
    let p = 1.0 - q;
    let m = ModelSpec::fa1f(q)?;
    let ts = [1.0, 5.0, 10.0];
    let mut worst = f64::NEG_INFINITY;
    for n in 3..=6i64 {
        let w = Window::line(-n, n)?;
        let g = chain(&m, w, BoundaryCondition::HEALTHY, Restriction::AtLeastOneInfection)?;
        let mu = stationary_vector(&g)?;
        let gap = spectral_gap(&g, &mu)?;
        let sp = g.space().clone();
        let target: Vec<bool> = (0..sp.len())
            .map(|i| {
                let c = sp.code(i);
                (c & 1) == 0 || (c >> (2 * n)) & 1 == 0
            })
            .collect();
        let mut start = vec![0.0; sp.len()];
        start[sp.index_of_config(&Configuration::all_healthy(w).with_state(0, SiteState::Infected)?)?] = 1.0;
        let tails = hitting_time_tails(&g, &start, &target, &ts)?;
        for (t, tail) in ts.iter().zip(tails) {
            let bound = (-q * gap * t).exp() / (p.powi(2 * n as i32) * q);
            worst = worst.max(tail / bound);
        }
    }
    Ok(Verdict {
        observed: worst,
        tolerance: "tail / bound <= 1".into(),
        pass: worst <= 1.0,
        detail: "FA1f q=0.5, n = 3..6, t in {1,5,10}".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tamper_breaks_reversibility() {
        let opts = VerifyOptions { tamper: Some(1e-3), ..VerifyOptions::default() };
        let o = run_criterion(1, &opts);
        assert!(!o.pass, "{o}");
    }

    #[test]
    fn unknown_criterion_fails() {
        assert!(!run_criterion(17, &VerifyOptions::default()).pass);
    }

    #[test]
    fn ledger_lines() {
        let opts = VerifyOptions { suite: Suite::Quick, ..VerifyOptions::default() };
        let o = run_criterion(3, &opts);
        let l = ledger_jsonl(&opts, std::slice::from_ref(&o));
        let v: serde_json::Value = serde_json::from_str(l.trim()).unwrap();
        assert_eq!(v["id"], 3);
        assert_eq!(v["suite"], "quick");
        assert_eq!(v["pass"], true);
    }
}
