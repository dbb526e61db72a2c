//! Computable objects of two-weight fractional singular integral theory on
//! finite atomic measure pairs: dyadic quasigrids, weighted Haar bases,
//! Poisson integrals, Muckenhoupt and energy constants, truncated Riesz
//! transforms, stopping-time coronas and upper half-space testing integrals.

pub mod corona;
pub mod corpus;
pub mod energy;
pub mod error;
pub mod funcenergy;
pub mod haar;
pub mod measure;
pub mod pair;
pub mod poisson;
pub mod quasigeom;
pub mod riesz;

pub use error::{Error, Result};
pub use measure::{Atom, CommonPointSet, DiscreteMeasure, Point};
pub use pair::WeightPair;
pub use poisson::FracParams;
pub use quasigeom::{BiLipschitzMap, Cube, CubeId, DyadicQuasigrid, GoodnessParams, QuasiCube};
