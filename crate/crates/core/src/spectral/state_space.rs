use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Parity, Window};
use crate::models::{DfpEdgeRates, ModelSpec, SiteType};

pub const DEFAULT_STATE_CAP: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Restriction {
    None,
    AtLeastOneInfection,
    /// Consecutive blocks of `block_len` sites starting at the window's left
    /// end, each holding at least one infection. Transitions that would
    /// empty a block of infections are suppressed (the restricted chain).
    OneInfectionPerBlock { block_len: usize },
    ParitySector { parity: Parity },
}

impl std::fmt::Display for Restriction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Restriction::None => f.write_str("none"),
            Restriction::AtLeastOneInfection => f.write_str("at_least_one_infection"),
            Restriction::OneInfectionPerBlock { block_len } => write!(f, "one_infection_per_block({block_len})"),
            Restriction::ParitySector { parity } => write!(f, "parity_sector({})", parity.symbol()),
        }
    }
}

impl std::str::FromStr for Restriction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("one_infection_per_block") {
            let len = rest.trim_matches(|c| c == '(' || c == ')' || c == ':' || c == '=');
            let block_len = len
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad block length in '{s}'")))?;
            return Ok(Restriction::OneInfectionPerBlock { block_len });
        }
        if let Some(rest) = s.strip_prefix("parity") {
            let p = rest.trim_start_matches("_sector").trim_matches(|c| c == '(' || c == ')' || c == ':' || c == '=');
            return Ok(Restriction::ParitySector { parity: p.parse()? });
        }
        match s {
            "none" => Ok(Restriction::None),
            "at_least_one_infection" | "nonempty" => Ok(Restriction::AtLeastOneInfection),
            other => Err(Error::InvalidParameter(format!("unknown restriction '{other}'"))),
        }
    }
}

/// Enumeration of the configurations of a finite chain. Bit `i` of a state
/// code is the state of site `window.lo + i` (1 = healthy).
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    model: ModelSpec,
    window: Window,
    bc: BoundaryCondition,
    restriction: Restriction,
    /// Sorted codes; `None` means every code `0..2^n`.
    codes: Option<Vec<u64>>,
    types: Vec<SiteType>,
    dfp: Option<DfpEdgeRates>,
}

impl StateSpace {
    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn restriction(&self) -> Restriction {
        self.restriction
    }

    pub fn n_sites(&self) -> usize {
        self.window.len()
    }

    pub fn len(&self) -> usize {
        match &self.codes {
            None => 1 << self.window.len(),
            Some(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn code(&self, i: usize) -> u64 {
        match &self.codes {
            None => i as u64,
            Some(c) => c[i],
        }
    }

    pub fn index_of(&self, code: u64) -> Option<usize> {
        match &self.codes {
            None => ((code >> self.window.len()) == 0).then_some(code as usize),
            Some(c) => c.binary_search(&code).ok(),
        }
    }

    pub fn configuration(&self, i: usize) -> Configuration {
        Configuration::from_code(self.window, self.code(i))
    }

    pub fn index_of_config(&self, eta: &Configuration) -> Result<usize> {
        if eta.window() != self.window {
            return Err(Error::WindowMismatch(format!("{} vs {}", eta.window(), self.window)));
        }
        self.index_of(eta.code()?)
            .ok_or_else(|| Error::InvalidConfiguration(format!("{eta} is not in the state space")))
    }

    pub fn contains_code(&self, code: u64) -> bool {
        self.index_of(code).is_some()
    }

    fn mask(&self) -> u64 {
        let n = self.window.len();
        if n == 64 { u64::MAX } else { (1u64 << n) - 1 }
    }

    #[inline]
    fn bit(&self, code: u64, i: usize) -> u8 {
        ((code >> i) & 1) as u8
    }

    #[inline]
    fn left(&self, code: u64, i: usize) -> u8 {
        if i > 0 {
            self.bit(code, i - 1)
        } else if self.window.is_circle() {
            self.bit(code, self.window.len() - 1)
        } else {
            self.bc.left.bit()
        }
    }

    #[inline]
    fn right(&self, code: u64, i: usize) -> u8 {
        let n = self.window.len();
        if i + 1 < n {
            self.bit(code, i + 1)
        } else if self.window.is_circle() {
            self.bit(code, 0)
        } else {
            self.bc.right.bit()
        }
    }

    /// Constraint of a vertex model at window index `i` in state `code`.
    #[inline]
    pub fn constraint(&self, code: u64, i: usize) -> f64 {
        self.model.constraint_local(self.types[i], self.left(code, i), self.right(code, i))
    }

    /// Calls `f(target, rate)` for every positive-rate move of the
    /// unrestricted dynamics out of `code`.
    pub fn for_each_move<F: FnMut(u64, f64)>(&self, code: u64, mut f: F) {
        let n = self.window.len();
        match &self.dfp {
            None => {
                for i in 0..n {
                    let c = self.constraint(code, i);
                    if c > 0.0 {
                        let rate = self.model.rate_from_constraint(c, self.bit(code, i));
                        if rate > 0.0 {
                            f(code ^ (1 << i), rate);
                        }
                    }
                }
            }
            Some(r) => {
                let edges = if self.window.is_circle() { n } else { n - 1 };
                for e in 0..edges {
                    let j = (e + 1) % n;
                    let pair = (self.bit(code, e), self.bit(code, j));
                    let rate = match pair {
                        (0, 0) => r.r_create,
                        (1, 1) => r.r_annihilate,
                        _ => r.r_swap,
                    };
                    if rate > 0.0 {
                        f(code ^ (1 << e) ^ (1 << j), rate);
                    }
                }
            }
        }
    }

    fn admissible(&self, code: u64) -> bool {
        let n = self.window.len();
        let infections = n - code.count_ones() as usize;
        match self.restriction {
            Restriction::None => true,
            Restriction::AtLeastOneInfection => infections >= 1,
            Restriction::ParitySector { parity } => Parity::of_count(infections) == parity,
            Restriction::OneInfectionPerBlock { block_len } => (0..n / block_len).all(|b| {
                let m = ((1u64 << block_len) - 1) << (b * block_len);
                code & m != m
            }),
        }
    }
}

/// Enumerates a chain's configurations and checks the restriction is closed
/// under the model's moves (the block restriction is a restricted chain and
/// suppresses exiting moves instead).
pub fn build_state_space(
    model: &ModelSpec,
    window: Window,
    bc: BoundaryCondition,
    restriction: Restriction,
) -> Result<StateSpace> {
    build_state_space_with_cap(model, window, bc, restriction, DEFAULT_STATE_CAP)
}

pub fn build_state_space_with_cap(
    model: &ModelSpec,
    window: Window,
    bc: BoundaryCondition,
    restriction: Restriction,
    cap: u64,
) -> Result<StateSpace> {
    let n = window.len();
    let total = 1u128 << n.min(127);
    if n >= 63 || total > cap as u128 {
        return Err(Error::CapExceeded { states: total, cap });
    }
    if model.is_edge_model() && window.is_circle() && n < 3 {
        return Err(Error::InvalidWindow("DFP on a circle needs at least 3 sites".into()));
    }
    if model.is_edge_model() && n < 2 {
        return Err(Error::InvalidWindow("DFP needs at least 2 sites".into()));
    }
    if let Restriction::OneInfectionPerBlock { block_len } = restriction {
        if block_len == 0 || n % block_len != 0 {
            return Err(Error::InvalidParameter(format!(
                "block length {block_len} does not divide the window size {n}"
            )));
        }
    }
    let types = model.types_on(&window)?;
    let dfp = if model.is_edge_model() { Some(model.dfp_rates()?) } else { None };
    let mut space = StateSpace { model: model.clone(), window, bc, restriction, codes: None, types, dfp };
    if restriction != Restriction::None {
        let codes: Vec<u64> = (0..total as u64).filter(|&c| space.admissible(c)).collect();
        if codes.is_empty() {
            return Err(Error::InvalidParameter("restriction leaves no configuration".into()));
        }
        space.codes = Some(codes);
    }
    if !matches!(restriction, Restriction::None | Restriction::OneInfectionPerBlock { .. }) {
        for i in 0..space.len() {
            let code = space.code(i);
            let mut bad = None;
            space.for_each_move(code, |to, _| {
                if bad.is_none() && !space.admissible(to) {
                    bad = Some(to);
                }
            });
            if let Some(to) = bad {
                return Err(Error::NotClosed {
                    from: Configuration::from_code(window, code).to_string(),
                    to: Configuration::from_code(window, to & space.mask()).to_string(),
                });
            }
        }
    }
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fa() -> ModelSpec {
        ModelSpec::fa1f(0.5).unwrap()
    }

    #[test]
    fn sizes() {
        let w3 = Window::sites(3).unwrap();
        let bc = BoundaryCondition::HEALTHY;
        assert_eq!(build_state_space(&fa(), w3, bc, Restriction::None).unwrap().len(), 8);
        assert_eq!(build_state_space(&fa(), w3, bc, Restriction::AtLeastOneInfection).unwrap().len(), 7);
        let dfp = ModelSpec::dfp(1.0).unwrap();
        let w4 = Window::sites(4).unwrap();
        let s = build_state_space(&dfp, w4, bc, Restriction::ParitySector { parity: Parity::Even }).unwrap();
        assert_eq!(s.len(), 8);
    }

    #[test]
    fn closure_is_enforced() {
        let w = Window::sites(3).unwrap();
        // infected boundary lets the last infection heal
        let err = build_state_space(&fa(), w, BoundaryCondition::INFECTED, Restriction::AtLeastOneInfection);
        assert!(matches!(err, Err(Error::NotClosed { .. })));
        let err = build_state_space(&fa(), w, BoundaryCondition::HEALTHY, Restriction::ParitySector { parity: Parity::Even });
        assert!(matches!(err, Err(Error::NotClosed { .. })));
    }

    #[test]
    fn cap_is_enforced() {
        let w = Window::sites(21).unwrap();
        assert!(matches!(
            build_state_space(&fa(), w, BoundaryCondition::HEALTHY, Restriction::None),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn block_restriction() {
        let w = Window::sites(6).unwrap();
        let dw = ModelSpec::delta_west(0.5, 0.1).unwrap();
        let s = build_state_space(&dw, w, BoundaryCondition::INFECTED, Restriction::OneInfectionPerBlock { block_len: 3 })
            .unwrap();
        assert_eq!(s.len(), 7 * 7);
        assert!(build_state_space(&dw, w, BoundaryCondition::INFECTED, Restriction::OneInfectionPerBlock { block_len: 4 })
            .is_err());
    }

    #[test]
    fn restriction_parse() {
        assert_eq!("none".parse::<Restriction>().unwrap(), Restriction::None);
        assert_eq!(
            "one_infection_per_block(3)".parse::<Restriction>().unwrap(),
            Restriction::OneInfectionPerBlock { block_len: 3 }
        );
        assert_eq!(
            "parity_sector(-)".parse::<Restriction>().unwrap(),
            Restriction::ParitySector { parity: Parity::Odd }
        );
    }
}
