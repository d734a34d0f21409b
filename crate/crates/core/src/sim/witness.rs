use serde::{Deserialize, Serialize};

use super::{Engine, build_timeline};
use crate::error::Result;
use crate::lattice::{BoundaryCondition, Configuration, Window};
use crate::models::ModelSpec;
use crate::rng;

/// Two ordered initial configurations whose coupled evolutions (same
/// timeline) stop being ordered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonMonotoneWitness {
    pub timeline_seed: u64,
    pub horizon: f64,
    pub bc: BoundaryCondition,
    /// `lower <= upper` pointwise at time 0.
    pub lower: Configuration,
    pub upper: Configuration,
    /// First ring time after which the order fails.
    pub time: f64,
    pub lower_then: Configuration,
    pub upper_then: Configuration,
}

/// Searches windows of 2..=`max_sites` sites and `attempts` timelines per
/// size, over every ordered pair of initial configurations.
pub fn find_non_monotone_witness(
    model: &ModelSpec,
    max_sites: usize,
    horizon: f64,
    seed: u64,
    attempts: usize,
) -> Result<Option<NonMonotoneWitness>> {
    let bc = BoundaryCondition::HEALTHY;
    for n in 2..=max_sites.min(10) {
        let window = Window::sites(n)?;
        for a in 0..attempts {
            let tseed = rng::derive_seed(seed, (n * attempts + a) as u64);
            let timeline = build_timeline(model, window, horizon, tseed)?;
            let rings: Vec<_> = timeline.rings().collect();
            let full = (1u64 << n) - 1;
            for lo in 0..=full {
                // every superset of the healthy set of `lo`
                let free = full & !lo;
                let mut sub = free;
                loop {
                    let hi = lo | sub;
                    if hi != lo {
                        let lower = Configuration::from_code(window, lo);
                        let upper = Configuration::from_code(window, hi);
                        let mut e1 = Engine::new(model, &window, &bc, lower.bits())?;
                        let mut e2 = Engine::new(model, &window, &bc, upper.bits())?;
                        for r in &rings {
                            e1.apply(r.unit, r.clock, r.coin);
                            e2.apply(r.unit, r.clock, r.coin);
                            if e1.state.iter().zip(&e2.state).any(|(a, b)| a > b) {
                                return Ok(Some(NonMonotoneWitness {
                                    timeline_seed: tseed,
                                    horizon,
                                    bc,
                                    lower,
                                    upper,
                                    time: r.time,
                                    lower_then: Configuration::from_bits(window, &e1.state)?,
                                    upper_then: Configuration::from_bits(window, &e2.state)?,
                                }));
                            }
                        }
                    }
                    if sub == 0 {
                        break;
                    }
                    sub = (sub - 1) & free;
                }
            }
        }
    }
    Ok(None)
}
