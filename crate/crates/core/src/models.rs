//! Rate functions of the vertex models and the edge rates of the double flip
//! process.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{BoundaryCondition, Configuration, Site, Window};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "fa1f")]
    Fa1f,
    #[serde(rename = "east")]
    East,
    #[serde(rename = "east-polluted")]
    EastPolluted,
    #[serde(rename = "delta-west")]
    DeltaWest,
    #[serde(rename = "babp")]
    Babp,
    #[serde(rename = "dfp")]
    Dfp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Fa1f => "fa1f",
            ModelKind::East => "east",
            ModelKind::EastPolluted => "east-polluted",
            ModelKind::DeltaWest => "delta-west",
            ModelKind::Babp => "babp",
            ModelKind::Dfp => "dfp",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "fa1f" | "fa-1f" => Ok(ModelKind::Fa1f),
            "east" => Ok(ModelKind::East),
            "east-polluted" | "eastpolluted" => Ok(ModelKind::EastPolluted),
            "delta-west" | "deltawest" | "west" => Ok(ModelKind::DeltaWest),
            "babp" => Ok(ModelKind::Babp),
            "dfp" => Ok(ModelKind::Dfp),
            other => Err(Error::InvalidParameter(format!("unknown model '{other}'"))),
        }
    }
}

/// Site type in the East-polluted model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteType {
    #[serde(rename = "E")]
    East,
    #[serde(rename = "F")]
    Fa,
}

impl SiteType {
    fn from_char(c: char) -> Result<Self> {
        match c {
            'E' | 'e' => Ok(SiteType::East),
            'F' | 'f' => Ok(SiteType::Fa),
            other => Err(Error::InvalidParameter(format!("unknown site type '{other}'"))),
        }
    }
}

fn parse_types(s: &str) -> Result<Vec<SiteType>> {
    let v = s.trim().chars().map(SiteType::from_char).collect::<Result<Vec<_>>>()?;
    if v.is_empty() {
        return Err(Error::InvalidParameter("empty type pattern".into()));
    }
    Ok(v)
}

/// Assignment of East/FA types to sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TypeMap {
    /// `pattern[(x - anchor) mod len]`.
    Periodic { pattern: Vec<SiteType>, anchor: Site },
    /// Types of sites `lo, lo+1, ...`; other sites are undefined.
    Explicit { lo: Site, types: Vec<SiteType> },
    /// Each site is East with probability `rho`, independently, from `seed`.
    Bernoulli { rho: f64, seed: u64 },
}

impl TypeMap {
    pub fn periodic(pattern: &str, anchor: Site) -> Result<Self> {
        Ok(TypeMap::Periodic { pattern: parse_types(pattern)?, anchor })
    }

    pub fn explicit(types: &str, lo: Site) -> Result<Self> {
        Ok(TypeMap::Explicit { lo, types: parse_types(types)? })
    }

    pub fn bernoulli(rho: f64, seed: u64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter(format!("East density rho={rho} not in (0,1]")));
        }
        Ok(TypeMap::Bernoulli { rho, seed })
    }

    pub fn type_of(&self, x: Site) -> Result<SiteType> {
        match self {
            TypeMap::Periodic { pattern, anchor } => {
                Ok(pattern[(x - anchor).rem_euclid(pattern.len() as Site) as usize])
            }
            TypeMap::Explicit { lo, types } => {
                let hi = lo + types.len() as Site - 1;
                if x < *lo || x > hi {
                    return Err(Error::OutOfRange { site: x, lo: *lo, hi });
                }
                Ok(types[(x - lo) as usize])
            }
            TypeMap::Bernoulli { rho, seed } => {
                let mut r = rng::stream(*seed, x, rng::tag::TYPE_MAP);
                Ok(if rng::bernoulli(&mut r, *rho) { SiteType::East } else { SiteType::Fa })
            }
        }
    }
}

/// Transition rates of one edge of the double flip process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfpEdgeRates {
    /// (0,0) -> (1,1)
    pub r_create: f64,
    /// (1,1) -> (0,0)
    pub r_annihilate: f64,
    /// (1,0) <-> (0,1)
    pub r_swap: f64,
    pub lambda: f64,
    /// sqrt(1 + lambda)
    pub y: f64,
    /// Equilibrium density of state 1.
    pub p_hat: f64,
}

impl DfpEdgeRates {
    pub fn q_hat(&self) -> f64 {
        (self.y - 1.0) / (2.0 * self.y)
    }
}

pub fn dfp_edge_rates(lambda: f64) -> Result<DfpEdgeRates> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("lambda={lambda} must be positive")));
    }
    let y = (1.0 + lambda).sqrt();
    Ok(DfpEdgeRates {
        r_create: (y + 1.0).powi(2) / 2.0,
        r_annihilate: (y - 1.0).powi(2) / 2.0,
        r_swap: lambda / 2.0,
        lambda,
        y,
        p_hat: (y + 1.0) / (2.0 * y),
    })
}

/// Which dynamics, with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Equilibrium density of infected sites; for the DFP, `lambda / (1 + lambda)`.
    pub q: f64,
    /// Weight of the right-neighbour term (delta-West only).
    pub delta: f64,
    /// Site types (East-polluted only).
    pub type_map: Option<TypeMap>,
}

fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("q={q} not in (0,1)")))
    }
}

impl ModelSpec {
    fn vertex(kind: ModelKind, q: f64) -> Result<Self> {
        check_q(q)?;
        Ok(ModelSpec { kind, q, delta: 0.0, type_map: None })
    }

    pub fn fa1f(q: f64) -> Result<Self> {
        Self::vertex(ModelKind::Fa1f, q)
    }

    pub fn east(q: f64) -> Result<Self> {
        Self::vertex(ModelKind::East, q)
    }

    pub fn babp(q: f64) -> Result<Self> {
        Self::vertex(ModelKind::Babp, q)
    }

    /// BABP parameterized by `lambda = q/p`.
    pub fn babp_lambda(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda={lambda} must be positive")));
        }
        Self::babp(lambda / (1.0 + lambda))
    }

    pub fn delta_west(q: f64, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta={delta} not in [0,1]")));
        }
        let mut m = Self::vertex(ModelKind::DeltaWest, q)?;
        m.delta = delta;
        Ok(m)
    }

    pub fn east_polluted(q: f64, type_map: TypeMap) -> Result<Self> {
        let mut m = Self::vertex(ModelKind::EastPolluted, q)?;
        m.type_map = Some(type_map);
        Ok(m)
    }

    pub fn dfp(lambda: f64) -> Result<Self> {
        dfp_edge_rates(lambda)?;
        Ok(ModelSpec { kind: ModelKind::Dfp, q: lambda / (1.0 + lambda), delta: 0.0, type_map: None })
    }

    /// Builds a spec from a kind and the usual parameter tuple; `lambda`
    /// overrides `q` for the DFP and BABP when given.
    pub fn from_parts(
        kind: ModelKind,
        q: Option<f64>,
        lambda: Option<f64>,
        delta: Option<f64>,
        type_map: Option<TypeMap>,
    ) -> Result<Self> {
        let need_q = || q.ok_or_else(|| Error::InvalidParameter(format!("model {kind} needs q")));
        match kind {
            ModelKind::Fa1f => Self::fa1f(need_q()?),
            ModelKind::East => Self::east(need_q()?),
            ModelKind::Babp => match lambda {
                Some(l) => Self::babp_lambda(l),
                None => Self::babp(need_q()?),
            },
            ModelKind::DeltaWest => Self::delta_west(
                need_q()?,
                delta.ok_or_else(|| Error::InvalidParameter("delta-west needs delta".into()))?,
            ),
            ModelKind::EastPolluted => Self::east_polluted(
                need_q()?,
                type_map.ok_or_else(|| Error::InvalidParameter("east-polluted needs a type map".into()))?,
            ),
            ModelKind::Dfp => match (lambda, q) {
                (Some(l), _) => Self::dfp(l),
                (None, Some(q)) => {
                    check_q(q)?;
                    Self::dfp(q / (1.0 - q))
                }
                (None, None) => Err(Error::InvalidParameter("dfp needs lambda".into())),
            },
        }
    }

    pub fn p(&self) -> f64 {
        1.0 - self.q
    }

    pub fn lambda(&self) -> f64 {
        self.q / (1.0 - self.q)
    }

    pub fn is_edge_model(&self) -> bool {
        self.kind == ModelKind::Dfp
    }

    pub fn dfp_rates(&self) -> Result<DfpEdgeRates> {
        if self.kind != ModelKind::Dfp {
            return Err(Error::UnsupportedModel(self.kind.to_string()));
        }
        dfp_edge_rates(self.lambda())
    }

    /// Density of healthy sites under the reversible product measure.
    pub fn equilibrium_healthy_density(&self) -> f64 {
        match self.kind {
            ModelKind::Dfp => dfp_edge_rates(self.lambda()).map(|r| r.p_hat).unwrap_or(1.0),
            _ => self.p(),
        }
    }

    pub fn site_type(&self, x: Site) -> Result<SiteType> {
        match (&self.type_map, self.kind) {
            (Some(tm), ModelKind::EastPolluted) => tm.type_of(x),
            _ => Ok(SiteType::Fa),
        }
    }

    /// Site types on a window (all `Fa` outside the East-polluted model).
    pub fn types_on(&self, window: &Window) -> Result<Vec<SiteType>> {
        window.iter().map(|x| self.site_type(x)).collect()
    }

    /// Checks the model can run on `window`. For the East-polluted model
    /// every site must have a type, and there must be East sites on both
    /// sides of the origin when the window contains it (at least one East
    /// site otherwise).
    pub fn validate_window(&self, window: &Window) -> Result<()> {
        if self.kind != ModelKind::EastPolluted {
            return Ok(());
        }
        let types = self.types_on(window)?;
        let is_e = |x: Site| types[(x - window.lo()) as usize] == SiteType::East;
        let ok = if window.contains(0) {
            (window.lo()..=0).any(is_e) && (0..=window.hi()).any(is_e)
        } else {
            window.iter().any(is_e)
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "type map has no East site on some side of the origin in {window}"
            )))
        }
    }

    /// Constraint from the two neighbour states; never depends on the site
    /// itself.
    #[inline]
    pub fn constraint_local(&self, ty: SiteType, left: u8, right: u8) -> f64 {
        let (l, r) = (1 - left, 1 - right);
        match self.kind {
            ModelKind::Fa1f => (l | r) as f64,
            ModelKind::East => l as f64,
            ModelKind::EastPolluted => match ty {
                SiteType::East => l as f64,
                SiteType::Fa => (l | r) as f64,
            },
            ModelKind::DeltaWest => l as f64 + self.delta * r as f64,
            ModelKind::Babp => (l + r) as f64,
            ModelKind::Dfp => 0.0,
        }
    }

    /// Flip rate given the constraint and the current state of the site.
    #[inline]
    pub fn rate_from_constraint(&self, c: f64, state: u8) -> f64 {
        if state == 0 { c * self.p() } else { c * self.q }
    }
}

fn neighbours(eta: &Configuration, bc: &BoundaryCondition, x: Site) -> Result<(u8, u8)> {
    eta.window().index(x)?;
    Ok((eta.state_with_bc(x - 1, bc), eta.state_with_bc(x + 1, bc)))
}

/// `c_x(eta . sigma)`.
pub fn constraint_rate(model: &ModelSpec, eta: &Configuration, bc: &BoundaryCondition, x: Site) -> Result<f64> {
    if model.is_edge_model() {
        return Err(Error::UnsupportedModel(model.kind.to_string()));
    }
    let (l, r) = neighbours(eta, bc, x)?;
    Ok(model.constraint_local(model.site_type(x)?, l, r))
}

/// Rate at which the state at `x` flips.
pub fn flip_rate(model: &ModelSpec, eta: &Configuration, bc: &BoundaryCondition, x: Site) -> Result<f64> {
    let c = constraint_rate(model, eta, bc, x)?;
    Ok(model.rate_from_constraint(c, eta.get(x)?))
}

pub fn equilibrium_measure_params(model: &ModelSpec) -> f64 {
    model.equilibrium_healthy_density()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SiteState;

    fn c(s: &str) -> Configuration {
        Configuration::parse_at(s, 0).unwrap()
    }

    const HB: BoundaryCondition = BoundaryCondition::HEALTHY;

    #[test]
    fn constraint_examples() {
        let fa = ModelSpec::fa1f(0.5).unwrap();
        assert_eq!(constraint_rate(&fa, &c("111"), &HB, 1).unwrap(), 0.0);
        let babp = ModelSpec::babp(0.5).unwrap();
        assert_eq!(constraint_rate(&babp, &c("010"), &HB, 1).unwrap(), 2.0);
        let dw = ModelSpec::delta_west(0.5, 0.3).unwrap();
        assert_eq!(constraint_rate(&dw, &c("110"), &HB, 1).unwrap(), 0.3);
        let ep = ModelSpec::east_polluted(0.5, TypeMap::periodic("E", 0).unwrap()).unwrap();
        assert_eq!(constraint_rate(&ep, &c("110"), &HB, 1).unwrap(), 0.0);
        let dfp = ModelSpec::dfp(1.0).unwrap();
        assert!(matches!(constraint_rate(&dfp, &c("110"), &HB, 1), Err(Error::UnsupportedModel(_))));
    }

    #[test]
    fn flip_rate_examples() {
        let fa = ModelSpec::fa1f(0.5).unwrap();
        assert_eq!(flip_rate(&fa, &c("011"), &HB, 1).unwrap(), 0.5);
        assert_eq!(flip_rate(&fa, &c("111"), &HB, 1).unwrap(), 0.0);
        let babp = ModelSpec::babp(0.25).unwrap();
        assert_eq!(flip_rate(&babp, &c("000"), &HB, 1).unwrap(), 1.5);
    }

    #[test]
    fn boundary_is_read_outside_window() {
        let east = ModelSpec::east(0.3).unwrap();
        let bc = BoundaryCondition::new(SiteState::Infected, SiteState::Healthy);
        assert_eq!(flip_rate(&east, &c("1"), &bc, 0).unwrap(), 0.3);
        assert_eq!(flip_rate(&east, &c("0"), &bc, 0).unwrap(), 0.7);
        assert_eq!(flip_rate(&east, &c("1"), &HB, 0).unwrap(), 0.0);
    }

    #[test]
    fn dfp_rate_examples() {
        let r = dfp_edge_rates(3.0).unwrap();
        assert!((r.r_create - 4.5).abs() < 1e-15);
        assert!((r.r_annihilate - 0.5).abs() < 1e-15);
        assert!((r.r_swap - 1.5).abs() < 1e-15);
        assert!((r.y - 2.0).abs() < 1e-15 && (r.p_hat - 0.75).abs() < 1e-15);
        // (1/4)^2 * 4.5 = (3/4)^2 * 0.5 = 0.28125
        assert!((r.q_hat().powi(2) * r.r_create - 0.28125).abs() < 1e-15);
        assert!((r.p_hat.powi(2) * r.r_annihilate - 0.28125).abs() < 1e-15);
        let q = 0.01;
        let small = dfp_edge_rates(q / (1.0 - q)).unwrap();
        let ratio = small.q_hat() / q;
        // (sqrt(1 + 1/99) - 1) / (2 sqrt(1 + 1/99)) / 0.01
        assert!((ratio - 0.250_628_144_669).abs() < 1e-9, "{ratio}");
        assert!(dfp_edge_rates(0.0).is_err());
        assert!(dfp_edge_rates(-1.0).is_err());
    }

    #[test]
    fn dfp_detailed_balance_identity() {
        for lambda in [0.1, 1.0, 3.0, 10.0] {
            let r = dfp_edge_rates(lambda).unwrap();
            let lhs = r.q_hat().powi(2) * r.r_create;
            let rhs = r.p_hat.powi(2) * r.r_annihilate;
            assert!((lhs - rhs).abs() < 1e-12, "lambda {lambda}");
            assert!(r.p_hat > 0.5 && r.p_hat < 1.0);
        }
    }

    #[test]
    fn equilibrium_examples() {
        assert!((equilibrium_measure_params(&ModelSpec::fa1f(0.3).unwrap()) - 0.7).abs() < 1e-15);
        assert!((equilibrium_measure_params(&ModelSpec::dfp(3.0).unwrap()) - 0.75).abs() < 1e-15);
        let tiny = equilibrium_measure_params(&ModelSpec::dfp(1e-12).unwrap());
        assert!((tiny - 1.0).abs() < 1e-6);
    }

    #[test]
    fn type_map_validation() {
        let w = Window::line(-3, 3).unwrap();
        let ok = ModelSpec::east_polluted(0.5, TypeMap::periodic("EF", 0).unwrap()).unwrap();
        assert!(ok.validate_window(&w).is_ok());
        let bad = ModelSpec::east_polluted(0.5, TypeMap::explicit("EFFFFFF", -3).unwrap()).unwrap();
        assert!(bad.validate_window(&w).is_err());
        let short = ModelSpec::east_polluted(0.5, TypeMap::explicit("EFE", -1).unwrap()).unwrap();
        assert!(short.validate_window(&w).is_err());
        let tm = TypeMap::bernoulli(0.5, 7).unwrap();
        assert_eq!(tm.type_of(12).unwrap(), tm.type_of(12).unwrap());
        let east_count = (0..10_000).filter(|&x| tm.type_of(x).unwrap() == SiteType::East).count();
        assert!((east_count as f64 - 5000.0).abs() < 200.0);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("FA1f".parse::<ModelKind>().unwrap(), ModelKind::Fa1f);
        assert_eq!("delta_west".parse::<ModelKind>().unwrap(), ModelKind::DeltaWest);
        assert!("fa2f".parse::<ModelKind>().is_err());
    }
}
