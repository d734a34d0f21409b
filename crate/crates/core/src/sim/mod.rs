//! Event-driven simulation through the graphical construction.

mod barrier;
mod farm;
mod front;
mod persistence;
mod timeline;
mod witness;

pub use barrier::{
    BarrierKind, BarrierPath, GoodPointGrid, default_ell, find_barrier, good_point_grid, locality_holds,
    prune_right_of_gate, KAPPA,
};
pub use farm::{run_replicas, worker_count};
pub use front::{FrontSample, FrontTrace, front_trace, front_window};
pub use persistence::{
    InitialCondition, PersistenceEstimate, PersistenceQuery, PersistenceVariant, Region, persistence_estimate,
    persistence_profile,
};
pub use timeline::{ClockKind, Ring, RingStream, Timeline, build_timeline, clocks_for};
pub use witness::{NonMonotoneWitness, find_non_monotone_witness};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Window};
use crate::models::{DfpEdgeRates, ModelKind, ModelSpec, SiteType};

/// One processed clock ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub site: Site,
    pub clock: ClockKind,
    pub legal: bool,
    /// State of `site` after the ring.
    pub new_state: u8,
    /// Second site of a DFP edge and its state after the ring.
    pub partner: Option<(Site, u8)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Record {
    Events,
    Snapshots(f64),
    FinalOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub config: Configuration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: Configuration,
    pub events: Vec<Event>,
    pub snapshots: Vec<Snapshot>,
    #[serde(rename = "final")]
    pub final_config: Configuration,
}

impl Trajectory {
    /// Applies the recorded events to the initial configuration.
    pub fn replay(&self) -> Result<Configuration> {
        let mut c = self.initial.clone();
        for e in self.events.iter().filter(|e| e.legal) {
            c = c.with_state(e.site, crate::lattice::SiteState::from_bit(e.new_state))?;
            if let Some((x, s)) = e.partner {
                c = c.with_state(x, crate::lattice::SiteState::from_bit(s))?;
            }
        }
        Ok(c)
    }
}

/// Mutable state of one run: the occupancy of every window site plus what is
/// needed to decide legality of a ring.
pub(crate) struct Engine<'a> {
    model: &'a ModelSpec,
    circle: bool,
    bc_left: u8,
    bc_right: u8,
    types: Vec<SiteType>,
    pub(crate) state: Vec<u8>,
}

pub(crate) struct Outcome {
    pub legal: bool,
    pub changed: bool,
    pub i: usize,
    pub j: Option<usize>,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(model: &'a ModelSpec, window: &Window, bc: &BoundaryCondition, state: Vec<u8>) -> Result<Self> {
        if model.kind == ModelKind::Dfp && window.is_circle() && window.len() < 3 {
            return Err(Error::InvalidWindow("DFP on a circle needs at least 3 sites".into()));
        }
        Ok(Engine {
            model,
            circle: window.is_circle(),
            bc_left: bc.left.bit(),
            bc_right: bc.right.bit(),
            types: model.types_on(window)?,
            state,
        })
    }

    #[inline]
    fn left(&self, i: usize) -> u8 {
        if i > 0 {
            self.state[i - 1]
        } else if self.circle {
            self.state[self.state.len() - 1]
        } else {
            self.bc_left
        }
    }

    #[inline]
    fn right(&self, i: usize) -> u8 {
        let n = self.state.len();
        if i + 1 < n {
            self.state[i + 1]
        } else if self.circle {
            self.state[0]
        } else {
            self.bc_right
        }
    }

    /// Applies a ring of `clock` at unit `i` (site, or left end of an edge)
    /// with coin `coin`.
    #[inline]
    pub(crate) fn apply(&mut self, i: usize, clock: ClockKind, coin: u8) -> Outcome {
        let n = self.state.len();
        let legal = match clock {
            ClockKind::Main => self.model.constraint_local(self.types[i], self.left(i), self.right(i)) > 0.0,
            ClockKind::LeftNeighbor | ClockKind::East => self.left(i) == 0,
            ClockKind::RightNeighbor | ClockKind::West => self.right(i) == 0,
            ClockKind::Create | ClockKind::Annihilate | ClockKind::Swap => {
                let j = (i + 1) % n;
                let (a, b) = (self.state[i], self.state[j]);
                let next = match (clock, a, b) {
                    (ClockKind::Create, 0, 0) => Some((1, 1)),
                    (ClockKind::Annihilate, 1, 1) => Some((0, 0)),
                    (ClockKind::Swap, 1, 0) => Some((0, 1)),
                    (ClockKind::Swap, 0, 1) => Some((1, 0)),
                    _ => None,
                };
                return match next {
                    Some((na, nb)) => {
                        self.state[i] = na;
                        self.state[j] = nb;
                        Outcome { legal: true, changed: true, i, j: Some(j) }
                    }
                    None => Outcome { legal: false, changed: false, i, j: Some(j) },
                };
            }
        };
        let mut changed = false;
        if legal && self.state[i] != coin {
            self.state[i] = coin;
            changed = true;
        }
        Outcome { legal, changed, i, j: None }
    }
}

pub(crate) fn check_compatible(model: &ModelSpec, window: &Window, timeline: &Timeline) -> Result<()> {
    if *window != timeline.window {
        return Err(Error::WindowMismatch(format!(
            "configuration window {window} vs timeline window {}",
            timeline.window
        )));
    }
    if model.kind != timeline.model.kind {
        return Err(Error::InvalidParameter(format!(
            "timeline built for {} used with {}",
            timeline.model.kind, model.kind
        )));
    }
    Ok(())
}

/// Runs the graphical construction from `eta0` through every ring of
/// `timeline` in global time order.
pub fn evolve(
    model: &ModelSpec,
    eta0: &Configuration,
    bc: &BoundaryCondition,
    timeline: &Timeline,
    record: Record,
) -> Result<Trajectory> {
    let window = eta0.window();
    check_compatible(model, &window, timeline)?;
    if let Record::Snapshots(dt) = record {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("snapshot interval {dt} must be positive")));
        }
    }
    let mut eng = Engine::new(model, &window, bc, eta0.bits())?;
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_snap = 0usize;
    let snap = |eng: &Engine, t: f64| Snapshot { time: t, config: Configuration::from_bits(window, &eng.state).unwrap() };
    for ring in timeline.rings() {
        if let Record::Snapshots(dt) = record {
            while (next_snap as f64) * dt < ring.time && (next_snap as f64) * dt <= timeline.horizon {
                snapshots.push(snap(&eng, next_snap as f64 * dt));
                next_snap += 1;
            }
        }
        let out = eng.apply(ring.unit, ring.clock, ring.coin);
        if record == Record::Events {
            events.push(Event {
                time: ring.time,
                site: window.site(out.i),
                clock: ring.clock,
                legal: out.legal,
                new_state: eng.state[out.i],
                partner: out.j.map(|j| (window.site(j), eng.state[j])),
            });
        }
    }
    if let Record::Snapshots(dt) = record {
        while (next_snap as f64) * dt <= timeline.horizon * (1.0 + 1e-12) {
            snapshots.push(snap(&eng, next_snap as f64 * dt));
            next_snap += 1;
        }
    }
    Ok(Trajectory {
        initial: eta0.clone(),
        events,
        snapshots,
        final_config: Configuration::from_bits(window, &eng.state)?,
    })
}

/// Final configuration only, without allocating a trajectory.
pub fn evolve_final(
    model: &ModelSpec,
    eta0: &Configuration,
    bc: &BoundaryCondition,
    timeline: &Timeline,
) -> Result<Configuration> {
    Ok(evolve(model, eta0, bc, timeline, Record::FinalOnly)?.final_config)
}

/// Helper for edge models: the edge rates, or an error for vertex models.
pub fn dfp_rates(model: &ModelSpec) -> Result<DfpEdgeRates> {
    model.dfp_rates()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TypeMap;

    #[test]
    fn all_healthy_is_invariant_for_fa1f() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let w = Window::line(-5, 5).unwrap();
        for seed in 0..20 {
            let tl = build_timeline(&m, w, 10.0, seed).unwrap();
            let eta0 = Configuration::all_healthy(w);
            let f = evolve_final(&m, &eta0, &BoundaryCondition::HEALTHY, &tl).unwrap();
            assert_eq!(f, eta0);
        }
    }

    #[test]
    fn replay_and_legality() {
        let models = [
            ModelSpec::fa1f(0.4).unwrap(),
            ModelSpec::east(0.4).unwrap(),
            ModelSpec::babp(0.4).unwrap(),
            ModelSpec::delta_west(0.4, 0.3).unwrap(),
            ModelSpec::east_polluted(0.4, TypeMap::periodic("EFF", 0).unwrap()).unwrap(),
            ModelSpec::dfp(2.0).unwrap(),
        ];
        let w = Window::line(0, 7).unwrap();
        let eta0 = Configuration::parse_at("10110101", 0).unwrap();
        let bc = BoundaryCondition::INFECTED;
        for m in &models {
            let tl = build_timeline(m, w, 5.0, 3).unwrap();
            let tr = evolve(m, &eta0, &bc, &tl, Record::Events).unwrap();
            assert_eq!(tr.replay().unwrap(), tr.final_config, "{}", m.kind);
            assert!(tr.events.iter().any(|e| e.legal));
            if m.kind != ModelKind::Dfp {
                // legality: re-run event by event and check the constraint before each legal ring
                let mut c = eta0.clone();
                for e in &tr.events {
                    let rate = crate::models::constraint_rate(m, &c, &bc, e.site).unwrap();
                    if e.legal {
                        assert!(rate > 0.0);
                        c = c.with_state(e.site, crate::lattice::SiteState::from_bit(e.new_state)).unwrap();
                    }
                }
                assert_eq!(c, tr.final_config);
            } else {
                assert_eq!(tr.final_config.parity(), eta0.parity());
            }
        }
    }

    #[test]
    fn snapshots_cover_grid() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let w = Window::line(0, 4).unwrap();
        let tl = build_timeline(&m, w, 2.0, 1).unwrap();
        let eta0 = Configuration::parse_at("11011", 0).unwrap();
        let tr = evolve(&m, &eta0, &BoundaryCondition::HEALTHY, &tl, Record::Snapshots(0.5)).unwrap();
        let times: Vec<f64> = tr.snapshots.iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
        assert_eq!(tr.snapshots[0].config, eta0);
        assert_eq!(tr.snapshots.last().unwrap().config, tr.final_config);
    }

    #[test]
    fn window_mismatch_is_rejected() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let tl = build_timeline(&m, Window::line(0, 4).unwrap(), 1.0, 1).unwrap();
        let eta0 = Configuration::parse_at("111", 0).unwrap();
        assert!(matches!(
            evolve(&m, &eta0, &BoundaryCondition::HEALTHY, &tl, Record::FinalOnly),
            Err(Error::WindowMismatch(_))
        ));
    }

    #[test]
    fn illegal_coins_are_ignored() {
        let m = ModelSpec::fa1f(0.5).unwrap();
        let w = Window::line(0, 7).unwrap();
        let eta0 = Configuration::parse_at("11101111", 0).unwrap();
        let bc = BoundaryCondition::HEALTHY;
        let tl = build_timeline(&m, w, 4.0, 11).unwrap();
        let base = evolve(&m, &eta0, &bc, &tl, Record::Events).unwrap();
        let illegal: Vec<usize> = base.events.iter().enumerate().filter(|(_, e)| !e.legal).map(|(k, _)| k).collect();
        assert!(!illegal.is_empty());
        for &k in illegal.iter().take(10) {
            let e = &base.events[k];
            let tl2 = tl.with_coin_flipped_at(e.site, e.clock, e.time).unwrap();
            let again = evolve(&m, &eta0, &bc, &tl2, Record::Events).unwrap();
            assert_eq!(again, base);
        }
    }
}
