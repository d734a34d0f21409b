//! Bootstrap percolation: the closure that empties every site whose
//! constraint is satisfied, stable configurations, and spanning events.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Window};
use crate::models::{ModelKind, ModelSpec, SiteType};

fn require_vertex(model: &ModelSpec) -> Result<()> {
    if model.is_edge_model() {
        Err(Error::UnsupportedModel(model.kind.to_string()))
    } else {
        Ok(())
    }
}

/// Least fixed point of "a healthy site with a satisfied constraint becomes
/// infected", with neighbours outside the window read from `bc`.
///
/// Only whether the constraint is positive matters, so BABP and delta-West
/// with `delta > 0` share the FA-1f closure.
pub fn bp_closure(model: &ModelSpec, eta: &Configuration, bc: &BoundaryCondition) -> Result<Configuration> {
    require_vertex(model)?;
    let w = eta.window();
    let n = w.len();
    let types = model.types_on(&w)?;
    let mut s = eta.bits();
    let circle = w.is_circle();
    let nb = |s: &[u8], i: usize, left: bool| -> u8 {
        match (left, i) {
            (true, 0) if circle => s[n - 1],
            (true, 0) => bc.left.bit(),
            (true, _) => s[i - 1],
            (false, _) if i + 1 < n => s[i + 1],
            (false, _) if circle => s[0],
            (false, _) => bc.right.bit(),
        }
    };
    let emptiable = |s: &[u8], i: usize| s[i] == 1 && model.constraint_local(types[i], nb(s, i, true), nb(s, i, false)) > 0.0;
    let mut work: VecDeque<usize> = (0..n).filter(|&i| emptiable(&s, i)).collect();
    while let Some(i) = work.pop_front() {
        if !emptiable(&s, i) {
            continue;
        }
        s[i] = 0;
        let mut push = |j: usize| {
            if emptiable(&s, j) {
                work.push_back(j);
            }
        };
        if i > 0 {
            push(i - 1);
        } else if circle {
            push(n - 1);
        }
        if i + 1 < n {
            push(i + 1);
        } else if circle {
            push(0);
        }
    }
    Configuration::from_bits(w, &s)
}

/// Shape of a stable configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum StableClass {
    AllHealthy,
    AllInfected,
    /// Healthy on `x < i`, infected on `x >= i`.
    EastStep { i: Site },
    /// `i` an East site preceded by a maximal run of `k` FA sites; infected
    /// on `x >= i - k`, healthy left of it.
    EastPollutedStep { i: Site, k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StableDescriptor {
    pub model: ModelKind,
    #[serde(flatten)]
    pub class: StableClass,
}

impl StableDescriptor {
    pub fn new(model: ModelKind, class: StableClass) -> Self {
        StableDescriptor { model, class }
    }

    /// Leftmost infected site of the step, if the class is a step.
    fn cut(&self) -> Option<Site> {
        match self.class {
            StableClass::EastStep { i } => Some(i),
            StableClass::EastPollutedStep { i, k } => Some(i - k as Site),
            _ => None,
        }
    }

    pub fn state_at(&self, x: Site) -> u8 {
        match self.class {
            StableClass::AllHealthy => 1,
            StableClass::AllInfected => 0,
            _ => u8::from(x < self.cut().unwrap_or(Site::MAX)),
        }
    }

    /// The stable configuration restricted to `window`.
    pub fn on(&self, window: Window) -> Result<Configuration> {
        let bits: Vec<u8> = window.iter().map(|x| self.state_at(x)).collect();
        Configuration::from_bits(window, &bits)
    }
}

/// `Some(descriptor)` when `eta` is a fixed point of [`bp_closure`].
pub fn classify_stable(model: &ModelSpec, eta: &Configuration, bc: &BoundaryCondition) -> Result<Option<StableDescriptor>> {
    if bp_closure(model, eta, bc)? != *eta {
        return Ok(None);
    }
    let d = |class| Ok(Some(StableDescriptor::new(model.kind, class)));
    let w = eta.window();
    if eta.count_infections() == 0 {
        return d(StableClass::AllHealthy);
    }
    if eta.count_healthy() == 0 {
        return d(StableClass::AllInfected);
    }
    // a stable line configuration with both states is a step at its leftmost
    // infection (circles have no such step)
    let j = eta.infected_sites()[0];
    match model.kind {
        ModelKind::East | ModelKind::DeltaWest => d(StableClass::EastStep { i: j }),
        ModelKind::EastPolluted => {
            let mut i = j;
            while model.site_type(i)? == SiteType::Fa {
                i += 1;
                if i > w.hi() + 4096 {
                    return Err(Error::InvalidParameter("no East site right of the step".into()));
                }
            }
            d(StableClass::EastPollutedStep { i, k: (i - j) as usize })
        }
        _ => Err(Error::InvalidConfiguration(format!("unexpected stable configuration {eta} for {}", model.kind))),
    }
}

/// `eta` beta-spans `window` internally: the closure of `eta` restricted to
/// the window, with healthy boundary, equals beta there.
pub fn internally_spans(model: &ModelSpec, eta: &Configuration, window: Window, beta: &StableDescriptor) -> Result<bool> {
    let inner = eta.restrict(window)?;
    let closed = bp_closure(model, &inner, &BoundaryCondition::HEALTHY)?;
    Ok(closed == beta.on(window)?)
}

/// `eta` beta-spans `inner` externally from `outer`: fill `inner` with
/// healthy sites, close on `outer` with healthy boundary, compare on `inner`.
pub fn externally_spans(
    model: &ModelSpec,
    eta: &Configuration,
    outer: Window,
    inner: Window,
    beta: &StableDescriptor,
) -> Result<bool> {
    if !outer.contains_window(&inner) {
        return Err(Error::WindowMismatch(format!("{inner} is not inside {outer}")));
    }
    let mut c = eta.restrict(outer)?;
    for x in inner.iter() {
        c = c.with_state(x, crate::lattice::SiteState::Healthy)?;
    }
    let closed = bp_closure(model, &c, &BoundaryCondition::HEALTHY)?;
    Ok(closed.restrict(inner)? == beta.on(inner)?)
}

/// Position of the forced infection of an East stationary measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EastIndex {
    NegInf,
    Site(Site),
    PosInf,
}

impl std::str::FromStr for EastIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-inf" | "-∞" => Ok(EastIndex::NegInf),
            "inf" | "+inf" | "∞" | "+∞" => Ok(EastIndex::PosInf),
            t => t
                .parse()
                .map(EastIndex::Site)
                .map_err(|_| Error::InvalidParameter(format!("bad East index '{t}'"))),
        }
    }
}

/// Healthy-site marginals of the East stationary measure indexed by `i`:
/// healthy left of `i`, infected at `i`, density `p` right of `i`.
/// `NegInf` gives the product measure, `PosInf` the all-healthy point mass.
pub fn east_stationary_marginals(i: EastIndex, q: f64, window: Window) -> Result<Vec<f64>> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("q={q} not in (0,1)")));
    }
    let p = 1.0 - q;
    Ok(window
        .iter()
        .map(|x| match i {
            EastIndex::NegInf => p,
            EastIndex::PosInf => 1.0,
            EastIndex::Site(i) if x < i => 1.0,
            EastIndex::Site(i) if x == i => 0.0,
            EastIndex::Site(_) => p,
        })
        .collect())
}

/// Connected components of the legal-flip graph on all configurations of
/// `window` (component id per state code), by breadth-first search.
pub fn legal_flip_components(model: &ModelSpec, window: Window, bc: &BoundaryCondition) -> Result<Vec<usize>> {
    require_vertex(model)?;
    let n = window.len();
    if n > 20 {
        return Err(Error::CapExceeded { states: 1u128 << n, cap: 1 << 20 });
    }
    let types = model.types_on(&window)?;
    let circle = window.is_circle();
    let bit = |c: u64, i: usize| ((c >> i) & 1) as u8;
    let left = |c: u64, i: usize| if i > 0 { bit(c, i - 1) } else if circle { bit(c, n - 1) } else { bc.left.bit() };
    let right = |c: u64, i: usize| if i + 1 < n { bit(c, i + 1) } else if circle { bit(c, 0) } else { bc.right.bit() };
    let total = 1usize << n;
    let mut comp = vec![usize::MAX; total];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for s in 0..total {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        queue.push_back(s as u64);
        while let Some(c) = queue.pop_front() {
            for i in 0..n {
                if model.constraint_local(types[i], left(c, i), right(c, i)) > 0.0 {
                    let t = (c ^ (1 << i)) as usize;
                    if comp[t] == usize::MAX {
                        comp[t] = next;
                        queue.push_back(t as u64);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(comp)
}

/// Compares legal-flip connectivity with equality of closures over every
/// pair of configurations; returns the number of disagreeing pairs.
pub fn ergodic_component_mismatches(model: &ModelSpec, window: Window, bc: &BoundaryCondition) -> Result<u64> {
    let comp = legal_flip_components(model, window, bc)?;
    let closures: Vec<u64> = (0..comp.len() as u64)
        .map(|c| bp_closure(model, &Configuration::from_code(window, c), bc).and_then(|x| x.code()))
        .collect::<Result<_>>()?;
    let mut bad = 0u64;
    for a in 0..comp.len() {
        for b in a + 1..comp.len() {
            if (comp[a] == comp[b]) != (closures[a] == closures[b]) {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TypeMap;

    fn cfg(s: &str, lo: Site) -> Configuration {
        Configuration::parse_at(s, lo).unwrap()
    }

    #[test]
    fn closure_examples() {
        let east = ModelSpec::east(0.3).unwrap();
        let h = BoundaryCondition::HEALTHY;
        assert_eq!(bp_closure(&east, &cfg("11011", 1), &h).unwrap(), cfg("11000", 1));
        let fa = ModelSpec::fa1f(0.3).unwrap();
        assert_eq!(bp_closure(&fa, &cfg("11011", 0), &h).unwrap(), cfg("00000", 0));
        for m in [east, fa, ModelSpec::babp(0.4).unwrap(), ModelSpec::delta_west(0.4, 0.2).unwrap()] {
            assert_eq!(bp_closure(&m, &cfg("1111", 0), &h).unwrap(), cfg("1111", 0));
        }
        assert!(bp_closure(&ModelSpec::dfp(1.0).unwrap(), &cfg("11", 0), &h).is_err());
    }

    #[test]
    fn infected_boundary_and_circle() {
        let east = ModelSpec::east(0.3).unwrap();
        let c = bp_closure(&east, &cfg("1111", 0), &BoundaryCondition::INFECTED).unwrap();
        assert_eq!(c, cfg("0000", 0));
        let circ = Configuration::parse_in("1101", 0, crate::lattice::Topology::Circle).unwrap();
        let c = bp_closure(&east, &circ, &BoundaryCondition::HEALTHY).unwrap();
        assert_eq!(c.count_infections(), 4);
    }

    #[test]
    fn classification() {
        let east = ModelSpec::east(0.3).unwrap();
        let h = BoundaryCondition::HEALTHY;
        let d = classify_stable(&east, &cfg("1110000", 0), &h).unwrap().unwrap();
        assert_eq!(d.class, StableClass::EastStep { i: 3 });
        let fa = ModelSpec::fa1f(0.3).unwrap();
        assert_eq!(classify_stable(&fa, &cfg("11011", 0), &h).unwrap(), None);
        assert_eq!(classify_stable(&fa, &cfg("000", 0), &h).unwrap().unwrap().class, StableClass::AllInfected);
        // E E F F E E E, F run of length 2 left of site 4
        let ep = ModelSpec::east_polluted(0.3, TypeMap::explicit("EEFFEEE", 0).unwrap()).unwrap();
        let d = classify_stable(&ep, &cfg("1100000", 0), &h).unwrap().unwrap();
        assert_eq!(d.class, StableClass::EastPollutedStep { i: 4, k: 2 });
        assert_eq!(d.on(Window::line(0, 6).unwrap()).unwrap(), cfg("1100000", 0));
        // an infection inside the F run is not stable: its left F neighbour empties
        assert_eq!(classify_stable(&ep, &cfg("1110000", 0), &h).unwrap(), None);
    }

    #[test]
    fn spanning() {
        let fa = ModelSpec::fa1f(0.5).unwrap();
        let all0 = StableDescriptor::new(ModelKind::Fa1f, StableClass::AllInfected);
        let w = Window::line(0, 4).unwrap();
        assert!(internally_spans(&fa, &cfg("11011", 0), w, &all0).unwrap());
        assert!(!internally_spans(&fa, &cfg("11111", 0), w, &all0).unwrap());
        let east = ModelSpec::east(0.5).unwrap();
        let step = StableDescriptor::new(ModelKind::East, StableClass::EastStep { i: 2 });
        assert!(internally_spans(&east, &cfg("11011", 0), w, &step).unwrap());

        let outer = Window::line(0, 8).unwrap();
        let inner = Window::line(3, 5).unwrap();
        let east0 = StableDescriptor::new(ModelKind::East, StableClass::AllInfected);
        assert!(externally_spans(&east, &cfg("101111111", 0), outer, inner, &east0).unwrap());
        assert!(!externally_spans(&east, &cfg("111111101", 0), outer, inner, &east0).unwrap());
        assert!(!externally_spans(&east, &cfg("111000111", 0), outer, inner, &east0).unwrap());
        assert!(externally_spans(&fa, &cfg("111111101", 0), outer, inner, &all0).unwrap());
        assert!(externally_spans(&fa, &cfg("1", 0), outer, inner, &all0).is_err());
        assert!(externally_spans(&fa, &cfg("111111111", 0), inner, outer, &all0).is_err());
    }

    #[test]
    fn marginals() {
        let w = Window::line(-2, 2).unwrap();
        assert_eq!(east_stationary_marginals(EastIndex::Site(0), 0.3, w).unwrap(), vec![1.0, 1.0, 0.0, 0.7, 0.7]);
        assert_eq!(east_stationary_marginals(EastIndex::PosInf, 0.3, w).unwrap(), vec![1.0; 5]);
        assert_eq!(east_stationary_marginals(EastIndex::NegInf, 0.3, w).unwrap(), vec![0.7; 5]);
        assert_eq!("-inf".parse::<EastIndex>().unwrap(), EastIndex::NegInf);
        assert_eq!("3".parse::<EastIndex>().unwrap(), EastIndex::Site(3));
    }

    #[test]
    fn ergodic_components_small() {
        let w = Window::sites(6).unwrap();
        for m in [ModelSpec::fa1f(0.5).unwrap(), ModelSpec::east(0.5).unwrap()] {
            for bc in [BoundaryCondition::HEALTHY, BoundaryCondition::INFECTED] {
                assert_eq!(ergodic_component_mismatches(&m, w, &bc).unwrap(), 0);
            }
        }
    }
}
