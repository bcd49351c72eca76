//! Robust portfolio choice under two-factor stochastic volatility.

pub mod cli;
pub mod correlated;
pub mod detection;
pub mod error;
pub mod hjb;
pub mod model;
pub mod ode;
pub mod quad;
pub mod riccati;
pub mod sim;
pub mod special;
pub mod strategy;
pub mod welfare;

pub use error::{Error, Result};
pub use model::{AmbiguityPrefs, CorrelationSpec, FactorParams, JumpParams, MarketParams, ScenarioConfig, ValidationReport};
