//! Configurations on finite windows of Z, boundary conditions and the
//! elementary configuration algebra.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Site = i64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Line,
    Circle,
}

/// Inclusive interval `[lo, hi]` of sites, on a line or closed into a circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    lo: Site,
    hi: Site,
    topology: Topology,
}

impl Window {
    pub fn new(lo: Site, hi: Site, topology: Topology) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidWindow(format!("lo {lo} > hi {hi}")));
        }
        Ok(Window { lo, hi, topology })
    }

    pub fn line(lo: Site, hi: Site) -> Result<Self> {
        Self::new(lo, hi, Topology::Line)
    }

    pub fn circle(lo: Site, hi: Site) -> Result<Self> {
        Self::new(lo, hi, Topology::Circle)
    }

    /// Window `[0, n-1]` on a line.
    pub fn sites(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidWindow("empty window".into()));
        }
        Self::line(0, n as Site - 1)
    }

    pub fn lo(&self) -> Site {
        self.lo
    }

    pub fn hi(&self) -> Site {
        self.hi
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_circle(&self) -> bool {
        self.topology == Topology::Circle
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: Site) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_window(&self, other: &Window) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn index(&self, x: Site) -> Result<usize> {
        if self.contains(x) {
            Ok((x - self.lo) as usize)
        } else {
            Err(Error::OutOfRange { site: x, lo: self.lo, hi: self.hi })
        }
    }

    pub fn site(&self, i: usize) -> Site {
        self.lo + i as Site
    }

    pub fn iter(&self) -> impl Iterator<Item = Site> + use<> {
        self.lo..=self.hi
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.topology {
            Topology::Line => write!(f, "[{}, {}]", self.lo, self.hi),
            Topology::Circle => write!(f, "circle[{}, {}]", self.lo, self.hi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteState {
    Infected,
    Healthy,
}

impl SiteState {
    pub fn bit(self) -> u8 {
        match self {
            SiteState::Infected => 0,
            SiteState::Healthy => 1,
        }
    }

    pub fn from_bit(b: u8) -> Self {
        if b == 0 { SiteState::Infected } else { SiteState::Healthy }
    }
}

impl std::str::FromStr for SiteState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "infected" | "0" | "empty" => Ok(SiteState::Infected),
            "healthy" | "1" | "filled" => Ok(SiteState::Healthy),
            other => Err(Error::InvalidParameter(format!("unknown site state '{other}'"))),
        }
    }
}

/// States frozen outside a line window. Ignored on a circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub left: SiteState,
    pub right: SiteState,
}

impl BoundaryCondition {
    pub const HEALTHY: BoundaryCondition =
        BoundaryCondition { left: SiteState::Healthy, right: SiteState::Healthy };
    pub const INFECTED: BoundaryCondition =
        BoundaryCondition { left: SiteState::Infected, right: SiteState::Infected };

    pub fn new(left: SiteState, right: SiteState) -> Self {
        BoundaryCondition { left, right }
    }
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;

    /// Parses `left,right`, or a single state used on both sides.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        match parts.as_slice() {
            [both] => {
                let st: SiteState = both.parse()?;
                Ok(BoundaryCondition::new(st, st))
            }
            [l, r] => Ok(BoundaryCondition::new(l.parse()?, r.parse()?)),
            _ => Err(Error::InvalidParameter(format!("bad boundary condition '{s}'"))),
        }
    }
}

impl fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |s: SiteState| match s {
            SiteState::Infected => "infected",
            SiteState::Healthy => "healthy",
        };
        write!(f, "{},{}", name(self.left), name(self.right))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Parity {
    #[serde(rename = "+")]
    Even,
    #[serde(rename = "-")]
    Odd,
}

impl Parity {
    pub fn of_count(k: usize) -> Self {
        if k % 2 == 0 { Parity::Even } else { Parity::Odd }
    }

    pub fn symbol(self) -> char {
        match self {
            Parity::Even => '+',
            Parity::Odd => '-',
        }
    }
}

impl std::str::FromStr for Parity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "even" | "plus" => Ok(Parity::Even),
            "-" | "odd" | "minus" => Ok(Parity::Odd),
            other => Err(Error::InvalidParameter(format!("unknown parity '{other}'"))),
        }
    }
}

/// Occupancy word on a window: bit 1 = healthy, bit 0 = infected.
/// Bit `i` of the packed word holds site `window.lo + i`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Configuration {
    window: Window,
    words: Vec<u64>,
}

fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

impl Configuration {
    pub fn all_healthy(window: Window) -> Self {
        let n = window.len();
        let mut words = vec![u64::MAX; words_for(n)];
        if n % 64 != 0 {
            let last = words.len() - 1;
            words[last] = (1u64 << (n % 64)) - 1;
        }
        Configuration { window, words }
    }

    pub fn all_infected(window: Window) -> Self {
        Configuration { window, words: vec![0; words_for(window.len())] }
    }

    /// Builds from per-site bits (0 or 1), one per window site.
    pub fn from_bits(window: Window, bits: &[u8]) -> Result<Self> {
        if bits.len() != window.len() {
            return Err(Error::InvalidConfiguration(format!(
                "{} bits for a window of {} sites",
                bits.len(),
                window.len()
            )));
        }
        let mut c = Configuration::all_infected(window);
        for (i, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => c.words[i / 64] |= 1 << (i % 64),
                _ => return Err(Error::InvalidConfiguration(format!("bit value {b}"))),
            }
        }
        Ok(c)
    }

    /// Parses a '0'/'1' string whose first character is site `lo`.
    pub fn parse_at(s: &str, lo: Site) -> Result<Self> {
        Self::parse_in(s, lo, Topology::Line)
    }

    pub fn parse_in(s: &str, lo: Site, topology: Topology) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidConfiguration("empty configuration string".into()));
        }
        let bits = s
            .chars()
            .map(|ch| match ch {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidConfiguration(format!("unexpected character '{other}'"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        let window = Window::new(lo, lo + bits.len() as Site - 1, topology)?;
        Self::from_bits(window, &bits)
    }

    /// Configuration whose bit `i` is bit `i` of `code`; requires at most 64 sites.
    pub fn from_code(window: Window, code: u64) -> Self {
        debug_assert!(window.len() <= 64);
        let n = window.len();
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Configuration { window, words: vec![code & mask] }
    }

    pub fn code(&self) -> Result<u64> {
        if self.window.len() > 64 {
            return Err(Error::InvalidConfiguration("more than 64 sites".into()));
        }
        Ok(self.words[0])
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bit_at_index(&self, i: usize) -> u8 {
        ((self.words[i / 64] >> (i % 64)) & 1) as u8
    }

    pub fn get(&self, x: Site) -> Result<u8> {
        Ok(self.bit_at_index(self.window.index(x)?))
    }

    pub fn is_healthy(&self, x: Site) -> Result<bool> {
        Ok(self.get(x)? == 1)
    }

    /// State of a site, with sites outside the window read from `bc` (line)
    /// or wrapped (circle).
    pub fn state_with_bc(&self, x: Site, bc: &BoundaryCondition) -> u8 {
        let w = self.window;
        if w.contains(x) {
            return self.bit_at_index((x - w.lo) as usize);
        }
        match w.topology {
            Topology::Circle => {
                let n = w.len() as Site;
                let i = (x - w.lo).rem_euclid(n) as usize;
                self.bit_at_index(i)
            }
            Topology::Line => {
                if x < w.lo {
                    bc.left.bit()
                } else {
                    bc.right.bit()
                }
            }
        }
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.len()).map(|i| self.bit_at_index(i)).collect()
    }

    pub fn flip(&self, x: Site) -> Result<Self> {
        let i = self.window.index(x)?;
        let mut c = self.clone();
        c.words[i / 64] ^= 1 << (i % 64);
        Ok(c)
    }

    pub fn with_state(&self, x: Site, state: SiteState) -> Result<Self> {
        let i = self.window.index(x)?;
        let mut c = self.clone();
        match state {
            SiteState::Healthy => c.words[i / 64] |= 1 << (i % 64),
            SiteState::Infected => c.words[i / 64] &= !(1 << (i % 64)),
        }
        Ok(c)
    }

    /// `eta1 . eta2` on the union of two adjacent line windows.
    pub fn concat(&self, other: &Configuration) -> Result<Self> {
        let (a, b) = (self.window, other.window);
        if a.is_circle() || b.is_circle() {
            return Err(Error::InvalidWindow("cannot concatenate circle windows".into()));
        }
        let (left, right) = if a.hi + 1 == b.lo {
            (self, other)
        } else if b.hi + 1 == a.lo {
            (other, self)
        } else {
            return Err(Error::InvalidWindow(format!(
                "windows {a} and {b} are overlapping or not adjacent"
            )));
        };
        let mut bits = left.bits();
        bits.extend(right.bits());
        Configuration::from_bits(Window::line(left.window.lo, right.window.hi)?, &bits)
    }

    /// Restriction to a sub-window.
    pub fn restrict(&self, sub: Window) -> Result<Self> {
        if !self.window.contains_window(&sub) {
            return Err(Error::WindowMismatch(format!("{sub} not inside {}", self.window)));
        }
        let off = (sub.lo - self.window.lo) as usize;
        let bits: Vec<u8> = (0..sub.len()).map(|i| self.bit_at_index(off + i)).collect();
        Configuration::from_bits(sub, &bits)
    }

    /// Extension to a larger line window with healthy sites outside.
    pub fn pad_healthy(&self, outer: Window) -> Result<Self> {
        if !outer.contains_window(&self.window) {
            return Err(Error::WindowMismatch(format!("{} not inside {outer}", self.window)));
        }
        let mut bits = vec![1u8; outer.len()];
        let off = (self.window.lo - outer.lo) as usize;
        for i in 0..self.len() {
            bits[off + i] = self.bit_at_index(i);
        }
        Configuration::from_bits(outer, &bits)
    }

    pub fn count_healthy(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn count_infections(&self) -> usize {
        self.len() - self.count_healthy()
    }

    pub fn parity(&self) -> Parity {
        Parity::of_count(self.count_infections())
    }

    pub fn infected_sites(&self) -> Vec<Site> {
        (0..self.len())
            .filter(|&i| self.bit_at_index(i) == 0)
            .map(|i| self.window.site(i))
            .collect()
    }

    pub fn fronts(&self) -> FrontSummary {
        let inf = self.infected_sites();
        FrontSummary::from_infections(inf.first().copied(), inf.last().copied())
    }

    /// Pointwise order: every site healthy in `self` is healthy in `other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.window == other.window && self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len() {
            f.write_str(if self.bit_at_index(i) == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration({self} @ {})", self.window)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigurationRepr {
    bits: String,
    lo: Site,
    #[serde(default = "default_topology")]
    topology: Topology,
}

fn default_topology() -> Topology {
    Topology::Line
}

impl Serialize for Configuration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigurationRepr { bits: self.to_string(), lo: self.window.lo, topology: self.window.topology }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Configuration {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ConfigurationRepr::deserialize(d)?;
        Configuration::parse_in(&r.bits, r.lo, r.topology).map_err(serde::de::Error::custom)
    }
}

/// Leftmost and rightmost infection, their maximal modulus and distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontSummary {
    pub x_minus: Option<Site>,
    pub x_plus: Option<Site>,
    pub y: Option<u64>,
    pub d: Option<u64>,
}

impl FrontSummary {
    pub const EMPTY: FrontSummary = FrontSummary { x_minus: None, x_plus: None, y: None, d: None };

    pub fn from_infections(x_minus: Option<Site>, x_plus: Option<Site>) -> Self {
        match (x_minus, x_plus) {
            (Some(a), Some(b)) => FrontSummary {
                x_minus: Some(a),
                x_plus: Some(b),
                y: Some(a.unsigned_abs().max(b.unsigned_abs())),
                d: Some((b - a) as u64),
            },
            _ => FrontSummary::EMPTY,
        }
    }
}
