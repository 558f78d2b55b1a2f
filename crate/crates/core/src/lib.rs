//! Multi-period liability valuation.
//!
//! Values a discounted cashflow `X = (X_1, ..., X_T)` by backward composition
//! of one-step valuation mappings, either exactly on a finite scenario tree
//! (nested Monte Carlo) or in closed form when `(X, Y)` is Gaussian. The
//! [`portfolio`] module supplies a compound claims model whose centred and
//! scaled cashflows converge to such a Gaussian limit, and [`ordering`]
//! checks how the closed-form value responds to a richer information flow.

pub mod dist;
pub mod error;
pub mod gaussian;
pub mod mappings;
pub mod normal;
pub mod ordering;
pub mod portfolio;
pub mod rng;
pub mod tree;

pub use dist::{SpectralMeasure, WeightedSample};
pub use error::{Error, Result};
pub use gaussian::{GaussianModel, VarianceSchedule};
pub use mappings::{OneStepMapping, ValuationSchedule};
pub use ordering::DeltaProfile;
pub use portfolio::{PortfolioModel, ScalingPair};
pub use tree::{NodeId, ScenarioTree, ValuationResult};
