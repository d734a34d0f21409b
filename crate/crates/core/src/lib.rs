//! Simulation and exact analysis of one-dimensional kinetically constrained
//! models (FA-1f, East, East-polluted FA-1f, delta-West, BABP) and the double
//! flip process.

pub mod bootstrap;
pub mod duality;
pub mod error;
pub mod experiment;
pub mod lattice;
pub mod models;
pub mod rng;
pub mod sim;
pub mod spectral;
pub mod stats;
pub mod verify;

pub use error::{Error, Result};
pub use lattice::{BoundaryCondition, Configuration, FrontSummary, Parity, Site, SiteState, Topology, Window};
pub use models::{DfpEdgeRates, ModelKind, ModelSpec, SiteType, TypeMap};
