use serde::{Deserialize, Serialize};

use super::{Engine, build_timeline, run_replicas};
use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Window};
use crate::models::{ModelKind, ModelSpec, SiteType};
use crate::rng;
use crate::stats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    /// A fixed configuration, healthy outside its window.
    Fixed { config: Configuration },
    /// Independent sites healthy with probability `healthy_density`, except
    /// the listed sites which start infected. Resampled for every replica.
    Background { healthy_density: f64, vacancies: Vec<Site> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// `[x^(n), 0]` with `x^(n)` the n-th East site left of the origin.
    EastSites { n: usize },
    Interval { lo: Site, hi: Site },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersistenceVariant {
    /// Region healthy at time T.
    AtTime,
    /// Region healthy at some time s <= T.
    ByTime,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceQuery {
    pub model: ModelSpec,
    pub initial: InitialCondition,
    pub regions: Vec<Region>,
    pub variant: PersistenceVariant,
    pub horizon: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Truncation speed: the window extends `ceil(m T)` beyond the regions.
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersistenceEstimate {
    pub region: Region,
    pub lo: Site,
    pub hi: Site,
    pub variant: PersistenceVariant,
    pub horizon: f64,
    pub successes: u64,
    pub replicas: u64,
    pub estimate: f64,
    pub stderr: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub low_replica_warning: bool,
}

fn resolve(model: &ModelSpec, region: &Region) -> Result<(Site, Site)> {
    match *region {
        Region::Interval { lo, hi } => {
            if lo > hi {
                return Err(Error::InvalidParameter(format!("empty region [{lo}, {hi}]")));
            }
            Ok((lo, hi))
        }
        Region::EastSites { n } => {
            if n == 0 {
                return Err(Error::InvalidParameter("region needs n >= 1".into()));
            }
            let is_east = |x: Site| -> Result<bool> {
                Ok(match model.kind {
                    ModelKind::East => true,
                    ModelKind::EastPolluted => model.site_type(x)? == SiteType::East,
                    _ => false,
                })
            };
            if !matches!(model.kind, ModelKind::East | ModelKind::EastPolluted) {
                return Err(Error::UnsupportedModel(format!("{} has no East sites", model.kind)));
            }
            let mut found = 0;
            let mut x = 0;
            while found < n {
                x -= 1;
                if x < -1_000_000 {
                    return Err(Error::InvalidParameter("type map has too few East sites left of 0".into()));
                }
                if is_east(x)? {
                    found += 1;
                }
            }
            Ok((x, 0))
        }
    }
}

/// Estimates for several regions from the same replicas.
pub fn persistence_profile(query: &PersistenceQuery) -> Result<Vec<PersistenceEstimate>> {
    let model = &query.model;
    if !matches!(
        model.kind,
        ModelKind::East | ModelKind::EastPolluted | ModelKind::DeltaWest | ModelKind::Fa1f
    ) {
        return Err(Error::UnsupportedModel(format!("persistence for {}", model.kind)));
    }
    if query.regions.is_empty() {
        return Err(Error::InvalidParameter("no region requested".into()));
    }
    if !(query.horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("horizon {} must be >= 0", query.horizon)));
    }
    let bounds = query.regions.iter().map(|r| resolve(model, r)).collect::<Result<Vec<_>>>()?;
    let pad = (query.m * query.horizon).ceil() as Site;
    let mut lo = bounds.iter().map(|b| b.0).min().unwrap().min(0) - pad;
    let mut hi = bounds.iter().map(|b| b.1).max().unwrap().max(0) + pad;
    match &query.initial {
        InitialCondition::Fixed { config } => {
            lo = lo.min(config.window().lo());
            hi = hi.max(config.window().hi());
        }
        InitialCondition::Background { healthy_density, vacancies } => {
            if !(0.0..=1.0).contains(healthy_density) {
                return Err(Error::InvalidParameter(format!("density {healthy_density} not in [0,1]")));
            }
            for &v in vacancies {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let window = Window::line(lo, hi)?;
    model.validate_window(&window)?;
    let idx: Vec<(usize, usize)> =
        bounds.iter().map(|&(a, b)| ((a - lo) as usize, (b - lo) as usize)).collect();

    let outcomes: Vec<Result<Vec<bool>>> = run_replicas(query.replicas, query.seed, |_, seed| {
        let start = match &query.initial {
            InitialCondition::Fixed { config } => config.pad_healthy(window)?.bits(),
            InitialCondition::Background { healthy_density, vacancies } => {
                let mut r = rng::stream(seed, 0, rng::tag::INITIAL);
                let mut bits: Vec<u8> =
                    (0..window.len()).map(|_| rng::bernoulli(&mut r, *healthy_density) as u8).collect();
                for &v in vacancies {
                    bits[(v - lo) as usize] = 0;
                }
                bits
            }
        };
        let count = |state: &[u8], (a, b): (usize, usize)| state[a..=b].iter().filter(|&&s| s == 0).count();
        let mut infected: Vec<usize> = idx.iter().map(|&r| count(&start, r)).collect();
        let mut hit: Vec<bool> = infected.iter().map(|&c| c == 0).collect();
        if query.horizon == 0.0 {
            return Ok(hit);
        }
        let timeline = build_timeline(model, window, query.horizon, seed)?;
        let mut eng = Engine::new(model, &window, &BoundaryCondition::HEALTHY, start)?;
        for ring in timeline.rings() {
            let before = eng.state[ring.unit];
            let out = eng.apply(ring.unit, ring.clock, ring.coin);
            if out.changed {
                let i = out.i;
                for (k, &(a, b)) in idx.iter().enumerate() {
                    if a <= i && i <= b {
                        if before == 0 {
                            infected[k] -= 1;
                        } else {
                            infected[k] += 1;
                        }
                        if infected[k] == 0 {
                            hit[k] = true;
                        }
                    }
                }
            }
        }
        Ok(match query.variant {
            PersistenceVariant::ByTime => hit,
            PersistenceVariant::AtTime => infected.iter().map(|&c| c == 0).collect(),
        })
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let r = query.replicas as u64;
    Ok(query
        .regions
        .iter()
        .enumerate()
        .map(|(k, region)| {
            let successes = outcomes.iter().filter(|o| o[k]).count() as u64;
            let (estimate, stderr) = stats::binomial_mean_stderr(successes, r);
            let (wilson_lo, wilson_hi) = stats::wilson_interval(successes, r, 1.96);
            PersistenceEstimate {
                region: *region,
                lo: bounds[k].0,
                hi: bounds[k].1,
                variant: query.variant,
                horizon: query.horizon,
                successes,
                replicas: r,
                estimate,
                stderr,
                wilson_lo,
                wilson_hi,
                low_replica_warning: r < 100,
            }
        })
        .collect())
}

pub fn persistence_estimate(
    model: &ModelSpec,
    initial: &InitialCondition,
    region: Region,
    variant: PersistenceVariant,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<PersistenceEstimate> {
    let q = PersistenceQuery {
        model: model.clone(),
        initial: initial.clone(),
        regions: vec![region],
        variant,
        horizon,
        replicas,
        seed,
        m: 2.0,
    };
    Ok(persistence_profile(&q)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn east_background(q: f64) -> (ModelSpec, InitialCondition) {
        (
            ModelSpec::east(q).unwrap(),
            InitialCondition::Background { healthy_density: 1.0 - q, vacancies: vec![0] },
        )
    }

    #[test]
    fn zero_horizon_gives_zero() {
        let (m, init) = east_background(0.5);
        let e = persistence_estimate(&m, &init, Region::EastSites { n: 2 }, PersistenceVariant::AtTime, 0.0, 200, 1)
            .unwrap();
        assert_eq!(e.estimate, 0.0);
        assert_eq!(e.lo, -2);
        assert!(!e.low_replica_warning);
    }

    #[test]
    fn single_east_site_bound() {
        let (m, init) = east_background(0.5);
        let e = persistence_estimate(&m, &init, Region::EastSites { n: 1 }, PersistenceVariant::AtTime, 10.0, 2000, 5)
            .unwrap();
        assert!(e.estimate <= 0.5 + 3.0 * e.stderr, "{e:?}");
        assert!(e.wilson_lo <= e.estimate && e.estimate <= e.wilson_hi);
    }

    #[test]
    fn by_time_dominates_at_time() {
        let (m, init) = east_background(0.4);
        let q = |variant| PersistenceQuery {
            model: m.clone(),
            initial: init.clone(),
            regions: vec![Region::EastSites { n: 1 }, Region::EastSites { n: 3 }],
            variant,
            horizon: 8.0,
            replicas: 300,
            seed: 2,
            m: 2.0,
        };
        let at = persistence_profile(&q(PersistenceVariant::AtTime)).unwrap();
        let by = persistence_profile(&q(PersistenceVariant::ByTime)).unwrap();
        for (a, b) in at.iter().zip(&by) {
            assert!(a.successes <= b.successes);
        }
    }

    #[test]
    fn small_replica_count_is_flagged() {
        let (m, init) = east_background(0.5);
        let e = persistence_estimate(&m, &init, Region::EastSites { n: 1 }, PersistenceVariant::AtTime, 1.0, 10, 5)
            .unwrap();
        assert!(e.low_replica_warning);
    }

    #[test]
    fn babp_is_rejected() {
        let m = ModelSpec::babp(0.5).unwrap();
        let init = InitialCondition::Background { healthy_density: 0.5, vacancies: vec![0] };
        assert!(
            persistence_estimate(&m, &init, Region::Interval { lo: -1, hi: 1 }, PersistenceVariant::AtTime, 1.0, 10, 5)
                .is_err()
        );
    }
}
